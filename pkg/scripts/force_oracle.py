"""Fast sorted-rank Coulomb force and HMF mean-field force against the O(N^2) pair sum."""
import numpy as np

from meanfield import potentials
from meanfield.nbody import forces_coulomb_fast, forces_direct, forces_meanfield


def main():
    rng = np.random.default_rng(0)
    coul, hmf = potentials.coulomb1d(), potentials.cosine(1.0)
    worst_c = worst_h = 0.0
    for _ in range(200):
        x = rng.uniform(-0.5, 0.5, rng.integers(2, 400))
        worst_c = max(worst_c, np.max(np.abs(forces_coulomb_fast(x) - forces_direct(x, coul))))
        worst_h = max(worst_h, np.max(np.abs(forces_meanfield(x, hmf) - forces_direct(x, hmf))))
    print(f"max |fast - direct|: coulomb {worst_c:.2e}, hmf {worst_h:.2e}")


if __name__ == "__main__":
    main()
