"""Mean-field instability laboratory: Penrose spectra, high-order approximate solutions,
N-body runs and Wasserstein-1 measurements on the torus-cylinder T x R."""

__version__ = "0.1.0"
