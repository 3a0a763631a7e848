"""Discrete probability measures and divergences between them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corefn import as_rho, f_rho, sigma_rho

__all__ = [
    "DiscreteMeasure",
    "check_potential",
    "kl_divergence",
    "safe_kl_divergence",
    "optimal_tilt",
]

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted atom set ``sum_i w_i delta_{x_i}``.

    Atoms are stored as a numpy array (scalars or row vectors); weights are
    nonnegative and sum to one.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms)
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size == 0 or len(atoms) != w.size:
            raise ValueError("atoms and weights must have equal nonzero length")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        atoms = atoms.copy()
        atoms.setflags(write=False)
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, atoms) -> "DiscreteMeasure":
        atoms = np.asarray(atoms)
        n = len(atoms)
        return cls(atoms, np.full(n, 1.0 / n))

    @classmethod
    def from_unnormalized(cls, atoms, masses) -> "DiscreteMeasure":
        m = np.asarray(masses, dtype=float)
        return cls(atoms, m / m.sum())

    def __len__(self) -> int:
        return self.weights.size

    def same_support(self, other: "DiscreteMeasure") -> bool:
        return self.atoms.shape == other.atoms.shape and np.array_equal(
            self.atoms, other.atoms
        )


def check_potential(phi, mu: DiscreteMeasure) -> np.ndarray:
    """Validate potential values ``phi(x_i)`` against the atoms of ``mu``."""
    phi = np.asarray(phi, dtype=float).ravel()
    if phi.size != len(mu):
        raise ValueError(
            f"potential has {phi.size} values but the measure has {len(mu)} atoms"
        )
    if not np.all(np.isfinite(phi)):
        raise ValueError("potential values must be finite")
    return phi


def _ratios(nu: DiscreteMeasure, mu: DiscreteMeasure):
    if not nu.same_support(mu):
        raise ValueError("incompatible supports")
    p, q = nu.weights, mu.weights
    if np.any((p > 0) & (q == 0)):
        return None
    support = q > 0
    return p[support] / q[support], q[support]


def kl_divergence(nu: DiscreteMeasure, mu: DiscreteMeasure) -> float:
    """``KL(nu || mu)``; ``+inf`` when ``nu`` is not absolutely continuous."""
    r = _ratios(nu, mu)
    if r is None:
        return np.inf
    ratio, q = r
    pos = ratio > 0
    return float(np.sum(q[pos] * ratio[pos] * np.log(ratio[pos])))


def safe_kl_divergence(nu: DiscreteMeasure, mu: DiscreteMeasure, rho) -> float:
    """Safe KL divergence ``sum_i mu_i f_rho(nu_i / mu_i)``.

    Infinite whenever a density ratio exceeds ``1/rho`` or absolute
    continuity fails.  Note that ``D_rho(mu, mu) = f_rho(1) > 0``.
    """
    r = _ratios(nu, mu)
    if r is None:
        return np.inf
    ratio, q = r
    return float(np.sum(q * f_rho(ratio, rho)))


def optimal_tilt(phi, mu: DiscreteMeasure, rho, alpha_star: float) -> np.ndarray:
    """Density ratio ``d nu*_rho / d mu`` of the maximising measure.

    Returns ``sigma_rho(phi_i - alpha*)``, which lies in ``(0, 1/rho)``.
    Raises if ``alpha_star`` leaves the normalisation off by more than 1e-6.
    """
    phi = check_potential(phi, mu)
    ratios = np.asarray(sigma_rho(phi - alpha_star, as_rho(rho)), dtype=float)
    mass = float(np.dot(ratios, mu.weights))
    if abs(mass - 1.0) > 1e-6:
        raise ValueError(f"alpha not optimal (normalisation error {mass - 1.0:.3g})")
    return ratios
