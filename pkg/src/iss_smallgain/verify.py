"""Deciding the mixed small-gain condition ``Gamma o D_alpha`` not >= ``id``.

Positive evidence comes from the cycle check on a grid, negative evidence from
:func:`falsify`, which searches for ``s != 0`` with ``Gamma o D_alpha(s) >= s``.
For linear gains :func:`verify_linear` gives the spectral radius of the slope
matrix, which decides the all-sum case exactly.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import networkx as nx
import numpy as np

from .kfun import (
    DEFAULT_GRID,
    GridSpec,
    Linear,
    ScalarFn,
    exact_slope,
    format_fn,
    inverse,
    linear_slope,
)
from .network import (
    SUM,
    GainNetwork,
    apply_D_inv,
    apply_gamma,
    apply_mu,
    cycle_gain,
    dominates,
    gamma_after_D,
    simple_cycles,
)
from . import kernels

log = logging.getLogger(__name__)

VERIFIED = "verified"
FALSIFIED = "falsified"
INCONCLUSIVE = "inconclusive"

ALPHA_SWEEP = (1.0, 0.5, 0.2, 0.1, 0.05, 0.01)


def default_seed() -> int:
    return int(os.environ.get("ISS_SG_SEED", "0"))


@dataclass
class Certificate:
    status: str
    alpha: Optional[ScalarFn] = None
    witness: Optional[np.ndarray] = None
    evidence: dict = field(default_factory=dict)

    @property
    def verified(self) -> bool:
        return self.status == VERIFIED

    def recheck(self, net: GainNetwork) -> bool:
        """Re-check a falsifying witness against the operator."""
        if self.witness is None or self.alpha is None:
            return False
        return bool(dominates(gamma_after_D(net, self.alpha, self.witness), self.witness))

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "alpha": None if self.alpha is None else format_fn(self.alpha),
            "witness": None if self.witness is None else [float(x) for x in self.witness],
            "evidence": self.evidence,
        }


@dataclass(frozen=True)
class SearchSpec:
    """Budget for :func:`falsify`."""

    rays: int = 512
    scales: GridSpec = GridSpec(1e-3, 1e3, 61)
    seeds: int = 16
    iterations: int = 200
    seed: int | None = None


# --------------------------------------------------------------------------


def verify_cycles(net: GainNetwork, alpha: ScalarFn, grid: GridSpec = DEFAULT_GRID, cap: int = 10_000) -> Certificate:
    """Grid check of every simple cycle gain, D-augmented on sum rows.

    For all-max networks the cycle condition is exactly the small-gain
    condition; with sum rows it is a necessary condition and the result is
    labelled ``grid-verified``.  A failing cycle yields a witness vector.
    """
    cycles, complete = simple_cycles(net, cap)
    r = grid.values()
    entries = []
    failing = None
    for c in cycles:
        f = cycle_gain(net, c, alpha)
        vals = f._eval(r)
        ratio = vals / r
        exact = exact_slope(f)
        ok = bool(np.all(vals < r))
        entry = {
            "cycle": [i + 1 for i in c],
            "margin": float(exact) if exact is not None else float(ratio.max()),
            "exact": exact is not None,
            "holds": ok,
        }
        entries.append(entry)
        if not ok and failing is None:
            failing = (c, float(r[np.argmax(~(vals < r))]))
    evidence = {
        "check": "cycles",
        "grid": [grid.r_min, grid.r_max, grid.points],
        "cycles": entries,
        "complete": complete,
        "exact": all(a == "max" for a in net.agg) and net.is_linear(),
    }
    if not complete:
        evidence["diagnostic"] = f"cycle enumeration stopped at cap {cap}"
        return Certificate(INCONCLUSIVE, alpha, None, evidence)
    if failing is not None:
        w = cycle_witness(net, alpha, *failing)
        return Certificate(FALSIFIED, alpha, w, evidence)
    if net.sum_rows and net.max_rows:
        evidence["label"] = "grid-verified"
    return Certificate(VERIFIED, alpha, None, evidence)


def cycle_witness(net: GainNetwork, alpha: ScalarFn, cycle, r: float) -> np.ndarray:
    """Witness for ``Gamma o D >= id`` built along a failing cycle.

    Values are propagated through ``D o Gamma`` along the cycle starting at
    ``r``; the result dominates itself under ``D o Gamma`` and is mapped back
    by ``D^-1``.
    """
    s = np.zeros(net.n)
    t = r
    k = len(cycle)
    s[cycle[0]] = r
    for m in range(k - 1):
        src, dst = cycle[m], cycle[m + 1]
        t = net.gamma[dst][src](t)
        if net.agg[dst] == SUM:
            t = t + alpha(t)
        s[dst] = t
    w = apply_D_inv(net, alpha, s)
    m = w.max()
    if net.is_linear() and linear_slope(alpha) is not None and m > 0:
        w = w / m
    return w


def _block_radius(A: np.ndarray, tol: float, max_iter: int, rng) -> float:
    """Power iteration on ``A + I`` for an irreducible block (primitive after
    the shift), stopped when the Collatz-Wielandt bounds agree to ``tol``."""
    n = A.shape[0]
    B = A + np.eye(n)
    x = np.ones(n)
    lo, hi = 0.0, np.inf
    for attempt in range(4):
        for _ in range(max_iter):
            y = B @ x
            ratio = y / x
            lo, hi = ratio.min() - 1.0, ratio.max() - 1.0
            if hi - lo <= tol * max(1.0, hi):
                return max(0.5 * (lo + hi), 0.0)
            x = np.maximum(y / y.max(), 1e-300)
        x = np.ones(n) + 0.1 * rng.random(n)
    log.warning("power iteration did not converge; bracket [%g, %g]", lo, hi)
    return max(0.5 * (lo + hi), 0.0)


def spectral_radius(A: np.ndarray, tol: float = 1e-10, max_iter: int = 100_000, seed: int = 0):
    """Perron root and a nonnegative eigenvector of a nonnegative matrix.

    The root is the largest root over the strongly connected blocks; each
    irreducible block runs power iteration on ``block + I`` until the
    Collatz-Wielandt bounds ``min (Bx)_i/x_i <= rho + 1 <= max (Bx)_i/x_i``
    agree to ``tol`` (restarting from a perturbed vector on stagnation).
    Single nodes without a self-loop contribute 0.  The vector is
    ``(s I - A)^-1 1`` normalised, with ``s`` just above the root; this
    resolvent is nonnegative and its direction tends to a Perron vector.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if not np.any(A):
        return 0.0, np.ones(n) / n
    rng = np.random.default_rng(seed)
    g = nx.DiGraph()
    g.add_nodes_from(range(n))
    g.add_edges_from(zip(*np.nonzero(A)))
    rho = 0.0
    for comp in nx.strongly_connected_components(g):
        idx = sorted(comp)
        sub = A[np.ix_(idx, idx)]
        if len(idx) == 1:
            rho = max(rho, float(sub[0, 0]))
        else:
            rho = max(rho, _block_radius(sub, tol, max_iter, rng))
    s = rho + 1e-9 * max(rho, 1.0)
    v = np.linalg.solve(s * np.eye(n) - A, np.ones(n))
    v = np.maximum(v, 0.0)
    return rho, v / v.sum()


@dataclass
class LinearResult:
    rho: float
    sum_condition: bool
    perron: np.ndarray

    def to_json(self):
        return {"rho": self.rho, "sum_condition": self.sum_condition}


def verify_linear(net: GainNetwork) -> LinearResult:
    """Spectral radius of the slope matrix; ``rho < 1`` decides the all-sum case."""
    A = net.slope_matrix()
    rho, v = spectral_radius(A)
    return LinearResult(rho, rho < 1.0, v)


def falsify(net: GainNetwork, alpha: ScalarFn, search: SearchSpec = SearchSpec()) -> Optional[np.ndarray]:
    """Search for ``s != 0`` with ``Gamma o D_alpha(s) >= s``.

    Two strategies: (a) random rays (some with restricted support) scanned
    over a geometric range of scales; (b) normalized fixed-point iteration of
    ``Gamma o D_alpha`` from grid seeds.  Returning None is evidence, not proof.
    """
    n = net.n
    seed = default_seed() if search.seed is None else search.seed
    rng = np.random.default_rng(seed)
    scales = search.scales.values()
    homogeneous = net.is_linear() and linear_slope(alpha) is not None
    op = _operator(net, alpha)

    # (b) normalized fixed-point iteration, all seeds and radii batched;
    # catches Perron-type directions that random rays rarely hit exactly.
    d0 = np.vstack([np.ones(n), rng.exponential(size=(search.seeds, n))])
    d0 /= d0.max(axis=1, keepdims=True)
    radii = scales[:: max(1, len(scales) // 7)] if not homogeneous else scales[-1:]
    rad = np.repeat(radii, len(d0))[:, None]
    S = rad * np.tile(d0, (len(radii), 1))
    for _ in range(search.iterations):
        Y = op(S)
        hit = dominates(Y, S)
        if np.any(hit):
            return _canonical(S[np.argmax(hit)], homogeneous)
        m = Y.max(axis=1, keepdims=True)
        live = m[:, 0] > 0
        if not np.any(live):
            break
        S = np.where(live[:, None], rad * Y / np.where(m > 0, m, 1.0), S)

    # (a) random rays
    dirs = rng.exponential(size=(search.rays, n))
    half = search.rays // 2
    mask = rng.random((half, n)) < 0.5
    mask[np.arange(half), rng.integers(0, n, half)] = True
    dirs[:half] *= mask
    dirs /= dirs.max(axis=1, keepdims=True)
    S = (dirs[:, None, :] * scales[None, :, None]).reshape(-1, n)
    hit = dominates(op(S), S)
    if np.any(hit):
        return _canonical(S[np.argmax(hit)], homogeneous)
    return None


def _operator(net: GainNetwork, alpha: ScalarFn):
    """Batched ``Gamma o D_alpha``; compiled path for linear gains."""
    c = linear_slope(alpha)
    if net.is_linear() and c is not None:
        A = net.slope_matrix()
        is_max = np.array([a != SUM for a in net.agg], dtype=np.int32)
        pre = np.where(is_max, 1.0, 1.0 + c)

        def op(S):
            return kernels.mixed_linear_apply(A, is_max, np.ones(net.n), S * pre)

        return op
    return lambda S: gamma_after_D(net, alpha, S)


def _canonical(s: np.ndarray, homogeneous: bool) -> np.ndarray:
    s = np.array(s, dtype=float)
    if homogeneous and s.max() > 0:
        s = s / s.max()
    return s


# --------------------------------------------------------------------------


class PhiOverflowError(ArithmeticError):
    def __init__(self, iterate: int):
        self.iterate = iterate
        super().__init__(f"phi bound iterate {iterate} exceeded the overflow guard")


def phi_bound(net: GainNetwork, alpha: ScalarFn, r, return_iterates: bool = False, guard: float = 1e150):
    """``max_i ([D~ o mu(Gamma, id)]^n (r, ..., r))_i``.

    ``D~`` adds ``alpha^-1`` on sum rows.  Vectorized over ``r``.  With
    ``return_iterates`` the list of the ``n + 1`` iterates is returned too.
    """
    r = np.asarray(r, dtype=float)
    v = np.repeat(r[..., None], net.n, axis=-1)
    iterates = [v]
    ainv = inverse(alpha) if net.sum_rows else None
    for k in range(net.n):
        v = apply_mu(net, apply_gamma(net, v), v)
        for i in net.sum_rows:
            v[..., i] = v[..., i] + ainv._eval(v[..., i])
        if not np.all(np.isfinite(v)) or np.any(v > guard):
            raise PhiOverflowError(k + 1)
        iterates.append(v)
    phi = v.max(axis=-1)
    if phi.ndim == 0:
        phi = float(phi)
    return (phi, iterates) if return_iterates else phi


class PhiFunction(ScalarFn):
    """The bound of :func:`phi_bound` as a scalar function of ``r``."""

    def __init__(self, net: GainNetwork, alpha: ScalarFn):
        self.net = net
        self.alpha = alpha

    def _eval(self, r):
        return np.asarray(phi_bound(self.net, self.alpha, r), dtype=float)

    @property
    def tag(self):
        from .kfun import FnClass

        return FnClass.KINF

    def __repr__(self):
        return f"PhiFunction(alpha={format_fn(self.alpha)})"


def least_bound_point(net: GainNetwork, v, tol: float = 1e-13, max_iter: int = 100_000):
    """Least ``w`` with ``w = mu(Gamma(w), v)`` by upward iteration from 0.

    Any ``w`` satisfying ``w <= mu(Gamma(w), v)`` is bounded by the limit when
    the small-gain condition holds.  Returns None if the iteration diverges.
    """
    v = np.asarray(v, dtype=float)
    w = np.zeros_like(v)
    for _ in range(max_iter):
        w_new = apply_mu(net, apply_gamma(net, w), v)
        if not np.all(np.isfinite(w_new)) or w_new.max() > 1e150:
            return None
        if np.all(np.abs(w_new - w) <= tol * np.maximum(1.0, np.abs(w_new))):
            return w_new
        w = w_new
    return w


# --------------------------------------------------------------------------


def find_alpha(net: GainNetwork, sweep=ALPHA_SWEEP, grid: GridSpec = DEFAULT_GRID,
               search: SearchSpec = SearchSpec(), cap: int = 10_000):
    """First ``alpha = c*id`` in ``sweep`` passing the cycle check and
    surviving :func:`falsify`.  Returns ``(certificate, attempts)``."""
    attempts = []
    last = None
    for c in sweep:
        alpha = Linear(c)
        cert = decide(net, alpha, grid, search, cap)
        attempts.append({"alpha": format_fn(alpha), "status": cert.status})
        last = cert
        if cert.verified:
            break
    return last, attempts


def decide(net: GainNetwork, alpha: ScalarFn, grid: GridSpec = DEFAULT_GRID,
           search: SearchSpec = SearchSpec(), cap: int = 10_000) -> Certificate:
    """Two-sided check: cycles on the grid plus a falsification search."""
    cert = verify_cycles(net, alpha, grid, cap)
    if cert.status == FALSIFIED:
        cert.evidence["source"] = "cycle"
        return cert
    w = falsify(net, alpha, search)
    cert.evidence["falsify"] = {"rays": search.rays, "seeds": search.seeds, "found": w is not None}
    if net.is_linear() and all(a == SUM for a in net.agg):
        lin = verify_linear(net)
        cert.evidence["rho"] = lin.rho
        cert.evidence["exact"] = True
    if w is not None:
        return Certificate(FALSIFIED, alpha, w, dict(cert.evidence, source="search"))
    return cert
