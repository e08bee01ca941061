"""Growth exponents of the hierarchy levels g_k and of the residual R_app."""
import argparse

import numpy as np

from meanfield import equilibria, potentials
from meanfield.harness import fit_exponential
from meanfield.linvlasov import build_hierarchy, fit_window, residual_Rapp
from meanfield.spectral import growing_mode


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--K", type=int, default=3)
    ap.add_argument("--epsilon", type=float, default=1e-3)
    ap.add_argument("--dt", type=float, default=0.01)
    args = ap.parse_args()
    eq, pot = equilibria.two_stream(0.05, 0.5), potentials.cosine(1.0)
    mode = growing_mode(eq, pot).normalized("envelope")
    lam0 = mode.lam.real
    lo, hi = fit_window(lam0, args.epsilon)
    h = build_hierarchy(mode, eq, pot, args.K, hi, args.dt, args.epsilon, save_every=5)
    norms = h.level_norms()
    for k in range(1, args.K + 1):
        rate = fit_exponential(h.times, norms[:, k - 1], (lo, hi))[0]
        print(f"g_{k}: slope/lambda0 = {rate / lam0:.4f} (expected {k})")
    sel = h.times[(h.times >= lo) & (h.times <= hi)]
    r = [residual_Rapp(h, eq, pot, t)[1] for t in sel]
    rate = fit_exponential(sel, r)[0]
    print(f"R_app: slope/lambda0 = {rate / lam0:.4f} (expected {args.K + 1})")


if __name__ == "__main__":
    main()
