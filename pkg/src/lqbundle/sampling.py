"""Seeded random instances and controls for sweeps and acceptance tests.

Instances are generated with bounded stiffness (spectral radius / gap ratio)
so the time-grid solves stay sharp, and rejection-sampled until the frequency
condition holds with a workable margin.
"""

from __future__ import annotations

import numpy as np

from .dichotomy import GridFunction
from .frequency import QuadraticFormTriple, frequency_condition_margin
from .stationary import assemble_hamiltonian, l2_controllability


def random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def random_dichotomy_generator(
    rng: np.random.Generator,
    n: int,
    j: int = 0,
    stable_band: tuple[float, float] = (-2.2, -0.5),
    unstable_band: tuple[float, float] = (0.4, 1.2),
    imag_max: float = 1.2,
    coupling: float = 0.25,
) -> np.ndarray:
    """Matrix with j eigenvalues in the right half-plane, bounded stiffness.

    Built as Q (blocks + strictly upper coupling) Q^T so the placed spectrum
    is exact while the matrix is non-normal.
    """
    blocks: list[np.ndarray] = []
    remaining = {"s": n - j, "u": j}
    for kind, band in (("u", unstable_band), ("s", stable_band)):
        while remaining[kind] > 0:
            if remaining[kind] >= 2 and rng.uniform() < 0.4:
                re = rng.uniform(*band)
                im = rng.uniform(0.2, imag_max)
                blocks.append(np.array([[re, im], [-im, re]]))
                remaining[kind] -= 2
            else:
                blocks.append(np.array([[rng.uniform(*band)]]))
                remaining[kind] -= 1
    t = np.zeros((n, n))
    pos = 0
    for blk in blocks:
        w = blk.shape[0]
        t[pos : pos + w, pos : pos + w] = blk
        pos += w
    # strictly upper coupling above the blocks keeps the spectrum intact
    pos = 0
    for blk in blocks:
        w = blk.shape[0]
        if pos + w < n:
            t[pos : pos + w, pos + w :] = coupling * rng.standard_normal(
                (w, n - pos - w)
            )
        pos += w
    q = random_orthogonal(rng, n)
    return q @ t @ q.T


def random_form(
    rng: np.random.Generator, n: int, m: int, f1_scale: float = 0.25
) -> QuadraticFormTriple:
    g = rng.standard_normal((n, n))
    f1 = -f1_scale * (g @ g.T) / n + 0.05 * f1_scale * _sym(rng.standard_normal((n, n)))
    f2 = 0.15 * rng.standard_normal((m, n))
    g3 = rng.standard_normal((m, m))
    f3 = g3 @ g3.T / m + np.eye(m)
    return QuadraticFormTriple(f1=f1, f2=f2, f3=f3)


def _sym(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.T)


def random_passing_instance(
    rng: np.random.Generator,
    n: int,
    j: int = 0,
    m: int = 1,
    min_margin: float = 0.05,
    require_controllable: bool = False,
    max_tries: int = 60,
):
    """(A, B, form, margin) rejection-sampled to satisfy the frequency
    condition with margin >= min_margin and a workable Hamiltonian gap."""
    for _ in range(max_tries):
        a = random_dichotomy_generator(rng, n, j=j)
        b = rng.standard_normal((n, m))
        b /= max(1.0, np.linalg.norm(b, 2))
        form = random_form(rng, n, m)
        if require_controllable and not l2_controllability(a, b):
            continue
        try:
            margin = frequency_condition_margin(a, b, form)
        except Exception:
            continue
        if margin < min_margin:
            continue
        ham = assemble_hamiltonian(a, b, form)
        eig_h = np.linalg.eigvals(ham.matrix)
        eps_h = np.min(np.abs(eig_h.real))
        rho_h = np.max(np.abs(eig_h))
        # keep the stiffness bounded so the default time grids stay sharp
        if eps_h < 0.35 or rho_h > 6.0 or rho_h / eps_h > 5.0:
            continue
        return a, b, form, margin
    raise RuntimeError("could not sample a passing instance")


def bump_control(
    rng: np.random.Generator,
    times: np.ndarray,
    m: int,
    n_bumps: int = 3,
    support: float = 0.4,
) -> GridFunction:
    """Smooth random control supported in the early part of the window."""
    t = np.asarray(times, dtype=float)
    span = t[-1] - t[0]
    vals = np.zeros((t.size, m))
    for c in range(m):
        for _ in range(n_bumps):
            center = t[0] + span * support * rng.uniform(0.1, 0.9)
            width = span * support * rng.uniform(0.05, 0.2)
            vals[:, c] += rng.normal() * np.exp(-(((t - center) / width) ** 2))
    return GridFunction(times=t, values=vals)


def m0_sample(
    rng: np.random.Generator,
    a,
    b,
    times: np.ndarray,
    n_bumps: int = 4,
) -> tuple[GridFunction, GridFunction]:
    """A decaying process (v, xi) with v(0) = 0 (an M_0 element).

    For generators with unstable modes the bump coefficients are corrected by
    a least-squares steering step so the unstable component is annihilated
    and the state decays by the horizon.
    """
    from .dichotomy import dichotomy_split
    from .stationary import integrate_control_trajectory

    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    n, m_u = b.shape
    split = dichotomy_split(a)
    bumps = [bump_control(rng, times, m_u, n_bumps=1) for _ in range(n_bumps)]
    if split.rank_j:
        # unstable-subspace responses at a matching time
        t_probe = times[int(0.7 * times.size)]
        idx = int(0.7 * times.size)
        proj_u = split.projector_unstable()
        resp = []
        for g in bumps:
            v = integrate_control_trajectory(a, b, g, np.zeros(n))
            resp.append(proj_u @ v.values[idx])
        resp = np.array(resp).T  # (n, n_bumps)
        coef = np.ones(n_bumps)
        # minimal correction with resp @ coef = 0
        corr = np.linalg.lstsq(resp, resp @ coef, rcond=None)[0]
        coef = coef - corr
    else:
        coef = np.ones(n_bumps)
    xi_vals = sum(c * g.values for c, g in zip(coef, bumps))
    xi = GridFunction(times=times, values=xi_vals)
    v = integrate_control_trajectory(a, b, xi, np.zeros(n))
    return v, xi
