"""Passing from sum rows to max rows.

A sum row ``beta + sum_l gamma_{j_l}(s_{j_l}) + gamma_u(r)`` has ``k + 2``
terms: the transient slot (term 0), the ``k`` nonzero gains (terms
``1..k``) and the external gain (term ``k + 1``).  Repeated use of the weak
triangle inequality bounds the sum by the maximum of ``chi_{pi(t)} o term_t``
where

    chi_0     = id + eta_0
    chi_l     = (id + 1/eta_0) o ... o (id + 1/eta_{l-1}) o (id + eta_l),  1 <= l <= k
    chi_{k+1} = (id + 1/eta_0) o ... o (id + 1/eta_k)

(``1/eta`` denotes the inverse function) and ``pi`` assigns terms to slots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kfun import (
    DEFAULT_GRID,
    GridSpec,
    Identity,
    Linear,
    ScalarFn,
    Zero,
    combine,
    compose,
    format_fn,
    id_plus,
    inverse,
    linear_slope,
    pl_from_samples,
)
from .network import MAX, SUM, GainNetwork

DELTAS = (0.2, 0.1, 0.05, 0.01, 0.001)


class TransformError(ValueError):
    pass


def simplify(f: ScalarFn) -> ScalarFn:
    """Collapse structurally linear expressions to a single ``Linear`` node."""
    s = linear_slope(f)
    if s is None or isinstance(f, (Zero, Linear)):
        return f
    return Linear(s) if s > 0 else Zero()


# --------------------------------------------------------------------------


def weak_triangle(a: ScalarFn, b: ScalarFn, eta: ScalarFn):
    """``((id + eta) o a, (id + eta^-1) o b)``; their max dominates ``a + b``."""
    return (
        simplify(compose(id_plus(eta), a)),
        simplify(compose(id_plus(inverse(eta)), b)),
    )


@dataclass(frozen=True)
class RowPlan:
    """Transformation data of one sum row.

    Attributes
    ----------
    js : tuple of int
        Column indices of the nonzero gains, ascending (0-based).
    eta : tuple of ScalarFn
        ``eta_0 .. eta_k``; shorter tuples are padded with ``id``.
    pi : tuple of int
        ``pi[t]`` is the slot of term ``t`` (0 transient, ``1..k`` gains,
        ``k+1`` external).
    """

    js: tuple
    eta: tuple
    pi: tuple

    def __post_init__(self):
        k = len(self.js)
        if sorted(self.pi) != list(range(k + 2)):
            raise TransformError(f"pi must be a permutation of 0..{k + 1}, got {list(self.pi)}")
        if len(self.eta) > k + 1:
            raise TransformError(f"at most {k + 1} eta functions expected, got {len(self.eta)}")

    @property
    def k(self) -> int:
        return len(self.js)

    def etas(self) -> list:
        return list(self.eta) + [Identity()] * (self.k + 1 - len(self.eta))

    def chi(self, slot: int) -> ScalarFn:
        eta = self.etas()
        f: ScalarFn = Identity()
        for m in range(slot):
            f = compose(f, id_plus(inverse(eta[m])))
        if slot <= self.k:
            f = compose(f, id_plus(eta[slot]))
        return simplify(f)

    def to_json(self) -> dict:
        return {
            "gains": [j + 1 for j in self.js],
            "eta": [format_fn(e) for e in self.eta],
            "pi": list(self.pi),
        }


@dataclass(frozen=True)
class TransformPlan:
    """Row plans keyed by (0-based) sum-row index."""

    rows: dict

    def to_json(self) -> dict:
        return {str(i + 1): p.to_json() for i, p in sorted(self.rows.items())}


def default_pi(k: int) -> tuple:
    """Transient slot first, gains in index order, external last."""
    return tuple(range(k + 2))


def gains_first_pi(k: int) -> tuple:
    """Gains in slots ``0..k-1``, transient in slot ``k``, external last."""
    return (k,) + tuple(range(k)) + (k + 1,)


def sum_to_max(net: GainNetwork, plan: TransformPlan) -> GainNetwork:
    """All-max network with ``chi_{pi(l)} o gamma_{i j_l}`` on every sum row."""
    gamma = [list(row) for row in net.gamma]
    ext = list(net.external)
    for i in net.sum_rows:
        if i not in plan.rows:
            raise TransformError(f"plan does not cover sum row {i + 1}")
        rp = plan.rows[i]
        if tuple(rp.js) != tuple(net.nonzero(i)):
            raise TransformError(
                f"row {i + 1}: plan gains {[j + 1 for j in rp.js]} do not match "
                f"network gains {[j + 1 for j in net.nonzero(i)]}"
            )
        for l, j in enumerate(rp.js, start=1):
            gamma[i][j] = simplify(compose(rp.chi(rp.pi[l]), net.gamma[i][j]))
        if not isinstance(ext[i], Zero):
            ext[i] = simplify(compose(rp.chi(rp.pi[rp.k + 1]), ext[i]))
    return GainNetwork((MAX,) * net.n, tuple(map(tuple, gamma)), tuple(ext), net.role)


def row_terms(rp: RowPlan, net: GainNetwork, i: int, s, u_level, beta_level):
    """Sum of the original row terms and their transformed maximum, batched.

    Used to check ``beta + sum gamma + gamma_u <= max chi o term``.
    """
    s = np.asarray(s, dtype=float)
    b = np.asarray(beta_level, dtype=float)
    u = np.asarray(u_level, dtype=float)
    raw = [b] + [net.gamma[i][j]._eval(s[..., j]) for j in rp.js] + [net.external[i]._eval(u)]
    total = sum(raw)
    bound = np.max(
        np.stack(np.broadcast_arrays(*[rp.chi(rp.pi[t])._eval(x) for t, x in enumerate(raw)])), axis=0
    )
    return total, bound


# --------------------------------------------------------------------------


def _scaled_gain(net: GainNetwork, path, i: int, j: int) -> ScalarFn:
    return simplify(compose(net.gamma[i][j], compose(path.sigma[j], inverse(path.sigma[i]))))


def etas_from_path(net: GainNetwork, path, grid: GridSpec = DEFAULT_GRID, deltas=DELTAS) -> TransformPlan:
    """Eta functions making every transformed entry ``< id`` along ``path``.

    With ``g_j = gamma_ij o sigma_j o sigma_i^-1`` and ``h_j = (1 + delta) g_j``
    (``delta`` chosen by :func:`_pick_delta` on the image of the grid under
    ``sigma_i``), gain slot ``s`` gets ``eta_s = (id - sum_{m <= s} h_m) o
    h_s^-1``, which gives ``chi_s o g_s = h_s^-1 o g_s < id``.  Gains occupy
    the first slots, the transient and external terms the last two.
    """
    rows = {}
    for i in net.sum_rows:
        js = tuple(net.nonzero(i))
        k = len(js)
        if k == 0:
            rows[i] = RowPlan(js, (), gains_first_pi(0))
            continue
        # the path guarantees decrease at t = sigma_i(r) for r on the grid
        r = path.sigma[i]._eval(grid.values())
        g = [_scaled_gain(net, path, i, j) for j in js]
        gsum = sum(f._eval(r) for f in g)
        chosen = _pick_delta(r, gsum, deltas)
        if chosen is None:
            raise TransformError(f"row {i + 1}: path margin too small for the sum-to-max transform")
        h = [simplify(compose(Linear(1 + chosen), f)) for f in g]
        eta = []
        for s in range(k):
            eta.append(_eta_slot(h, s, r))
        eta.append(Identity())
        rows[i] = RowPlan(js, tuple(eta), gains_first_pi(k))
    return TransformPlan(rows)


def _pick_delta(r, gsum, deltas):
    """Largest ``delta`` whose leftover ``id - (1+delta) sum g`` is at least the
    inflation ``delta (1+delta) sum g``; if none qualifies, the largest keeping
    the leftover positive and increasing, and last the largest keeping it
    positive (the eta functions then follow an increasing minorant)."""
    for level in range(3):
        for delta in deltas:
            hsum = (1 + delta) * gsum
            rest = r - hsum
            need = delta * hsum if level == 0 else 0.0
            if np.all(rest > need) and (level == 2 or np.all(np.diff(rest) > 0)):
                return delta
    return None


def _eta_slot(h, s: int, r: np.ndarray) -> ScalarFn:
    slopes = [linear_slope(f) for f in h]
    if all(c is not None for c in slopes):
        return Linear((1.0 - sum(slopes[: s + 1])) / slopes[s])
    # eta_s(h_s(t)) = t - sum_{m<=s} h_m(t), sampled where the path is valid
    t = np.geomspace(r[0], r[-1], 4 * len(r) + 1)
    x = h[s]._eval(t)
    y = t - sum(f._eval(t) for f in h[: s + 1])
    # increasing minorant: a smaller eta keeps the weak triangle bound valid
    y = np.minimum.accumulate(y[::-1])[::-1]
    keep = np.concatenate([[True], np.diff(x) > 0])
    return pl_from_samples(x[keep], y[keep])


# --------------------------------------------------------------------------


def row_alpha_formula(net: GainNetwork, i: int, rp: RowPlan) -> ScalarFn:
    """The two-case robustness function of a sum row, built from the plan.

    With ``p = min(pi(0), pi(k+1))``: if some gain sits above ``p`` the result
    is ``eta_p^-1 o (sum_{pi(l) > p} gamma_l) o (sum gamma)^-1``; otherwise
    ``eta_{p-1} o gamma_{pi^-1(p-1)} o (sum gamma)^-1``.
    """
    k = rp.k
    if k == 0:
        raise TransformError(f"row {i + 1} has no gains")
    eta = rp.etas()
    gains = [net.gamma[i][j] for j in rp.js]
    total_inv = inverse(combine(SUM, gains))
    p = min(rp.pi[0], rp.pi[k + 1])
    above = [gains[l - 1] for l in range(1, k + 1) if rp.pi[l] > p]
    if above:
        f = compose(inverse(eta[p]), compose(combine(SUM, above), total_inv))
    else:
        l = rp.pi.index(p - 1)
        f = compose(eta[p - 1], compose(gains[l - 1], total_inv))
    return simplify(f)


def row_alpha_cap(net: GainNetwork, i: int, rp: RowPlan) -> ScalarFn:
    """``h^-1 - id`` with ``h = sum over gain terms of chi_{pi(l)}^-1``.

    Any ``alpha <= h^-1 - id`` gives ``(id + alpha)(sum gamma) <= max chi o
    gamma`` for all arguments, and the bound is attained, so it is the largest
    admissible robustness function for the row.
    """
    chis = [rp.chi(rp.pi[l]) for l in range(1, rp.k + 1)]
    invs = [inverse(c) for c in chis]
    slopes = [linear_slope(f) for f in invs]
    if all(c is not None for c in slopes):
        hs = sum(slopes)
        return Linear(1.0 / hs - 1.0) if hs < 1.0 else Zero()
    h = combine(SUM, invs)
    t = np.geomspace(1e-6, 1e6, 4801)
    ht = h._eval(t)
    rest = t - ht
    if np.any(rest <= 0):
        return Zero()
    # (h^-1 - id)(h(t)) = t - h(t)
    return pl_from_samples(ht, rest)


def alpha_from_etas(net: GainNetwork, plan: TransformPlan, grid: GridSpec = DEFAULT_GRID) -> ScalarFn:
    """Single robustness function with ``Gamma~ >= D_alpha o Gamma``.

    Each sum row contributes the pointwise minimum of its two-case function and
    its tightness cap; the minimum over rows is sampled on a refinement of
    ``grid`` and returned as ``c*r`` when the ratio is constant, else as a
    piecewise-linear lower envelope.  Rows without gains impose nothing; with
    no constraining row the default ``0.1*r`` is returned.
    """
    r = np.geomspace(grid.r_min, grid.r_max, 8 * (grid.points - 1) + 1)
    lows = []
    for i in net.sum_rows:
        rp = plan.rows[i]
        if rp.k == 0:
            continue
        a = row_alpha_formula(net, i, rp)._eval(r)
        cap = row_alpha_cap(net, i, rp)._eval(r)
        lows.append(np.minimum(a, cap))
    if not lows:
        return Linear(0.1)
    v = np.min(lows, axis=0)
    if np.any(v <= 0):
        raise TransformError("transformed gains admit no positive robustness function")
    ratio = v / r
    if ratio.max() - ratio.min() <= 1e-9 * ratio.min():
        return Linear(float(ratio.min()))
    # v is nondecreasing, so the samples shifted one step to the right give
    # a piecewise-linear function below v between the sample points
    return pl_from_samples(r[1:], v[:-1])
