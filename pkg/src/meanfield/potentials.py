"""Interaction potentials on the unit torus [-1/2, 1/2).

Fourier convention: Phi_hat_k = int Phi(x) exp(-2 pi i k x) dx, so that
Phi(x) = sum_k Phi_hat_k exp(2 pi i k x).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("cosine", "coulomb1d", "fourier_series")


class UnsupportedPotential(ValueError):
    pass


def wrap(x):
    """Map positions or displacements onto [-1/2, 1/2)."""
    x = np.asarray(x, dtype=float)
    y = np.mod(x + 0.5, 1.0) - 0.5
    # np.mod can round up to exactly 1.0 for tiny negative inputs
    y = np.where(y >= 0.5, y - 1.0, y)
    # in-range values pass through untouched so that wrap(-x) == -wrap(x) bitwise
    return np.where((x >= -0.5) & (x < 0.5), x, y)


@dataclass(frozen=True)
class Potential:
    """Even interaction potential.

    cosine:          Phi(x) = a cos(2 pi x)
    coulomb1d:       Phi(x) = (1/2 - |x|)^2 / 2 on [-1/2, 1/2)  (repulsive, Phi_hat_k = 1/(4 pi^2 k^2))
    fourier_series:  Phi(x) = sum_k Phi_hat_k exp(2 pi i k x), coefficients
                     given for k >= 0 and mirrored to -k.
    """

    kind: str
    amplitude: float = 1.0
    coefficients: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "fourier_series":
            coeffs = {}
            for k, c in self.coefficients:
                k = abs(int(k))
                if k in coeffs and coeffs[k] != float(c):
                    raise ValueError(f"conflicting coefficients for |k| = {k}")
                coeffs[k] = float(c)
            object.__setattr__(self, "coefficients", tuple(sorted(coeffs.items())))

    @property
    def k_cut(self) -> int | None:
        """Largest |k| with a nonzero coefficient (None: infinitely many)."""
        if self.kind == "cosine":
            return 1
        if self.kind == "coulomb1d":
            return None
        ks = [k for k, c in self.coefficients if c != 0.0]
        return max(ks) if ks else 0

    def fourier_coefficient(self, k):
        k = np.abs(np.asarray(k, dtype=int))
        if self.kind == "cosine":
            return np.where(k == 1, 0.5 * self.amplitude, 0.0)
        if self.kind == "coulomb1d":
            safe = np.where(k == 0, 1, k)
            return np.where(k == 0, 1.0 / 24.0, 1.0 / (4.0 * np.pi ** 2 * safe ** 2))
        table = dict(self.coefficients)
        return np.vectorize(lambda kk: table.get(int(kk), 0.0), otypes=[float])(k)

    def value(self, x):
        x = wrap(x)
        if self.kind == "cosine":
            return self.amplitude * np.cos(2 * np.pi * x)
        if self.kind == "coulomb1d":
            return 0.5 * (0.5 - np.abs(x)) ** 2
        out = np.zeros_like(x)
        for k, c in self.coefficients:
            out = out + (c if k == 0 else 2.0 * c * np.cos(2 * np.pi * k * x))
        return out

    def force(self, x):
        """-Phi'(x) at the wrapped displacement x (sign(0) := 0)."""
        x = wrap(x)
        if self.kind == "cosine":
            return 2 * np.pi * self.amplitude * np.sin(2 * np.pi * x)
        if self.kind == "coulomb1d":
            return 0.5 * np.sign(x) - x
        out = np.zeros_like(x)
        for k, c in self.coefficients:
            if k:
                out = out + 4 * np.pi * k * c * np.sin(2 * np.pi * k * x)
        return out

    def second_derivative(self, x):
        x = wrap(x)
        if self.kind == "cosine":
            return -4 * np.pi ** 2 * self.amplitude * np.cos(2 * np.pi * x)
        if self.kind == "coulomb1d":
            raise UnsupportedPotential("Phi'' of the 1-D Coulomb potential is a measure")
        out = np.zeros_like(x)
        for k, c in self.coefficients:
            if k:
                out = out - 2 * (2 * np.pi * k) ** 2 * c * np.cos(2 * np.pi * k * x)
        return out

    def hessian_sup(self, n_grid: int = 100001) -> float:
        """sup |Phi''| on a dense grid (the stability constant is twice this)."""
        if self.kind == "coulomb1d":
            raise UnsupportedPotential("hessian_sup is undefined for coulomb1d")
        x = np.linspace(-0.5, 0.5, n_grid)
        return float(np.max(np.abs(self.second_derivative(x))))

    def field_from_density(self, rho_hat, k):
        """E_hat_k = -2 pi i k Phi_hat_k rho_hat_k."""
        k = np.asarray(k)
        return -2j * np.pi * k * self.fourier_coefficient(k) * np.asarray(rho_hat)

    def positive_modes(self, k_max: int) -> list[int]:
        ks = np.arange(1, k_max + 1)
        return [int(k) for k in ks[self.fourier_coefficient(ks) > 0]]

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "cosine":
            d["amplitude"] = self.amplitude
        if self.kind == "fourier_series":
            d["coefficients"] = [list(kc) for kc in self.coefficients]
        return d


def cosine(a: float = 1.0) -> Potential:
    return Potential("cosine", amplitude=a)


def coulomb1d() -> Potential:
    return Potential("coulomb1d")


def fourier_series(coefficients) -> Potential:
    return Potential("fourier_series", coefficients=tuple((int(k), float(c)) for k, c in coefficients))


def from_config(cfg: dict) -> Potential:
    kind = cfg.get("kind", "cosine")
    return Potential(kind, amplitude=float(cfg.get("amplitude", 1.0)),
                     coefficients=tuple(tuple(kc) for kc in cfg.get("coefficients", ())))
