"""Finite Galerkin model of a diagonal positive self-adjoint operator.

Holds the ascending eigenvalue sequence, the low/intermediate/high spectral
band projectors, semigroups and resolvents of diagonal generators, and the
fractional-power weighted inner products.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IndexOutOfRange,
    NegativeBeta,
    NegativeTime,
    NonPositiveEigenvalue,
    NotSorted,
    SingularShift,
)

PROJECTOR_TOL = 1e-12
RESOLVENT_SV_TOL = 1e-12


@dataclass(frozen=True)
class SpectralModel:
    """Ascending positive eigenvalues of the reference operator, truncated at n."""

    eigenvalues: np.ndarray
    n: int

    def operator(self) -> np.ndarray:
        """Dense diagonal matrix of the modeled operator."""
        return np.diag(self.eigenvalues)


@dataclass(frozen=True)
class ModeProjectors:
    """Orthogonal projectors onto the essentially-lower / intermediate /
    essentially-higher spectral bands for a (k, N) split."""

    P_low: np.ndarray
    Q_high: np.ndarray
    I_mid: np.ndarray
    k: int
    N: int
    low_mask: np.ndarray = field(repr=False, default=None)
    mid_mask: np.ndarray = field(repr=False, default=None)
    high_mask: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True)
class FractionalScale:
    """Weights lambda_j^beta of the fractional-power inner product."""

    beta: float
    weights: np.ndarray


def make_spectral_model(eigenvalues) -> SpectralModel:
    lam = np.asarray(eigenvalues, dtype=float).ravel()
    if lam.size == 0:
        raise NotSorted("eigenvalue sequence is empty")
    if np.any(lam <= 0.0):
        raise NonPositiveEigenvalue("eigenvalues must be strictly positive")
    if np.any(np.diff(lam) < 0.0):
        raise NotSorted("eigenvalues must be nondecreasing")
    return SpectralModel(eigenvalues=lam, n=lam.size)


def eigenvalue_generator(kind: str, n: int, **params) -> np.ndarray:
    """Built-in eigenvalue sequences: "power" (j^p) and "sum-of-squares-2d"."""
    if n < 1:
        raise IndexOutOfRange("need at least one mode")
    if kind == "power":
        p = float(params.get("p", 2.0))
        return np.arange(1, n + 1, dtype=float) ** p
    if kind == "sum-of-squares-2d":
        # sorted values m^2 + l^2 over m, l >= 0 not both zero, with multiplicity
        side = int(np.ceil(np.sqrt(4.0 * n))) + 2
        vals = [
            float(m * m + l * l)
            for m in range(side)
            for l in range(side)
            if m or l
        ]
        vals.sort()
        if len(vals) < n:
            raise IndexOutOfRange("internal generator range too small")
        return np.array(vals[:n])
    raise IndexOutOfRange(f"unknown eigenvalue generator {kind!r}")


def mode_projectors(model: SpectralModel, k: int, N: int) -> ModeProjectors:
    """Spectral band projectors around the gap (lambda_N, lambda_{N+1}).

    Lower band: lambda_j < lambda_N - k; higher band: lambda_j >
    lambda_{N+1} + k; intermediate the rest (ties go to the intermediate
    band, the inequalities are strict).  The symmetric cuts keep the outer
    bands at distance at least mu_bar + k from the gap midpoint, which is
    what the averaged-problem solvability estimates use.
    """
    if not (1 <= N < model.n):
        raise IndexOutOfRange(f"N must satisfy 1 <= N < n, got N={N}, n={model.n}")
    if k < 1:
        raise IndexOutOfRange(f"k must be >= 1, got {k}")
    lam = model.eigenvalues
    low = lam < lam[N - 1] - k
    high = lam > lam[N] + k
    mid = ~(low | high)
    return ModeProjectors(
        P_low=np.diag(low.astype(float)),
        Q_high=np.diag(high.astype(float)),
        I_mid=np.diag(mid.astype(float)),
        k=k,
        N=N,
        low_mask=low,
        mid_mask=mid,
        high_mask=high,
    )


def semigroup_apply(generator, t: float, v) -> np.ndarray:
    """exp(t * diag) applied componentwise; exact for diagonal generators."""
    if t < 0:
        raise NegativeTime(f"semigroup time must be >= 0, got {t}")
    gen = np.asarray(generator, dtype=float)
    if gen.ndim == 2:
        off = gen - np.diag(np.diag(gen))
        if np.any(np.abs(off) > PROJECTOR_TOL * max(1.0, np.abs(gen).max())):
            raise SingularShift("semigroup_apply expects a diagonal generator")
        gen = np.diag(gen)
    return np.exp(t * gen) * np.asarray(v)


def resolvent_apply(a, z: complex, v, sv_tol: float = RESOLVENT_SV_TOL) -> np.ndarray:
    """(A - z I)^{-1} v with an explicit smallest-singular-value guard."""
    a = np.atleast_2d(np.asarray(a))
    shifted = a - z * np.eye(a.shape[0])
    smin = np.linalg.svd(shifted, compute_uv=False)[-1]
    if smin <= sv_tol:
        raise SingularShift(f"shift {z} is within {sv_tol} of the spectrum")
    return np.linalg.solve(shifted, np.asarray(v, dtype=complex))


def fractional_scale(model: SpectralModel, beta: float) -> FractionalScale:
    if beta < 0:
        raise NegativeBeta(f"beta must be >= 0, got {beta}")
    return FractionalScale(beta=beta, weights=model.eigenvalues**beta)


def fractional_inner_product(model: SpectralModel, beta: float, v, w) -> float:
    """Weighted inner product sum_j lambda_j^{2 beta} v_j w_j."""
    scale = fractional_scale(model, beta)
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    return float(np.sum(scale.weights**2 * v * w))
