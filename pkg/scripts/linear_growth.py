"""Propagate the growing mode and compare the fitted rate with the dispersion root."""
import argparse

import numpy as np

from meanfield import equilibria, potentials
from meanfield.harness import fit_exponential
from meanfield.linvlasov import SpectralState, propagate
from meanfield.spectral import growing_mode


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-v", type=int, default=1024)
    ap.add_argument("--dt", type=float, default=0.01)
    args = ap.parse_args()
    eq, pot = equilibria.two_stream(0.05, 0.5), potentials.cosine(1.0)
    mode = growing_mode(eq, pot)
    lam0 = mode.lam.real
    st = SpectralState.from_eigenmode(mode, 1, eq.velocity_grid(args.n_v))
    traj = propagate(st, eq, pot, 5 / lam0, args.dt, save_every=5)
    rate, _, r2 = fit_exponential(traj.times, np.abs(traj.rho_hat(1)))
    print(f"lambda0 = {lam0:.10f}  fitted = {rate:.10f}  rel.err = {abs(rate - lam0) / lam0:.2e}  R2 = {r2:.6f}")


if __name__ == "__main__":
    main()
