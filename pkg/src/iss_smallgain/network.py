"""Gain networks with mixed sum/max row aggregation.

Edge convention: ``j -> i`` is an edge iff ``gamma[i][j]`` is nonzero, i.e.
influence flows from subsystem ``j`` into subsystem ``i``.  Indices are
0-based in the API and 1-based in files and reports.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import networkx as nx
import numpy as np

from .kfun import (
    FnClass,
    Identity,
    Linear,
    ScalarFn,
    Zero,
    format_fn,
    id_plus,
    inverse,
    linear_slope,
)

SUM = "sum"
MAX = "max"


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class GainNetwork:
    """``n x n`` gain matrix with per-row aggregation and an external column.

    Parameters
    ----------
    agg : tuple of {'sum', 'max'}
        Row aggregation; sum rows form the index set of additive ISS estimates.
    gamma : tuple of tuples of ScalarFn
        ``gamma[i][j]`` is the gain from subsystem ``j`` into ``i``; the
        diagonal must be zero.
    external : tuple of ScalarFn
        Gains of the external input, one per row (K or zero).
    role : str
        Free label ("iss", "gs", "ag", "lyapunov", ...).
    """

    agg: tuple
    gamma: tuple
    external: tuple = None
    role: str = "iss"

    def __post_init__(self):
        agg = tuple(str(a).lower() for a in self.agg)
        n = len(agg)
        gamma = tuple(tuple(row) for row in self.gamma)
        ext = tuple(self.external) if self.external is not None else (Zero(),) * n
        if len(gamma) != n or any(len(row) != n for row in gamma) or len(ext) != n:
            raise NetworkError("dimension mismatch between agg, gamma and external")
        for i, a in enumerate(agg):
            if a not in (SUM, MAX):
                raise NetworkError(f"row {i + 1}: aggregation must be 'sum' or 'max', got {a!r}")
            if not isinstance(gamma[i][i], Zero):
                raise NetworkError(f"row {i + 1}: diagonal gain must be absent (zero)")
            for j, g in enumerate(gamma[i]):
                if not isinstance(g, Zero) and g.tag != FnClass.KINF:
                    raise NetworkError(
                        f"gain ({i + 1},{j + 1}) = {format_fn(g)} is not of class K-infinity"
                    )
            if ext[i].tag == FnClass.ZERO and not isinstance(ext[i], Zero):
                raise NetworkError(f"row {i + 1}: external gain must be of class K or zero")
        object.__setattr__(self, "agg", agg)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "external", ext)

    @property
    def n(self) -> int:
        return len(self.agg)

    @property
    def sum_rows(self) -> list:
        return [i for i, a in enumerate(self.agg) if a == SUM]

    @property
    def max_rows(self) -> list:
        return [i for i, a in enumerate(self.agg) if a == MAX]

    def nonzero(self, i: int) -> list:
        """Column indices ``j`` with ``gamma[i][j] != 0``, ascending."""
        return [j for j, g in enumerate(self.gamma[i]) if not isinstance(g, Zero)]

    @property
    def has_external(self) -> bool:
        return any(not isinstance(e, Zero) for e in self.external)

    def is_linear(self) -> bool:
        return all(linear_slope(g) is not None for row in self.gamma for g in row)

    def slope_matrix(self) -> np.ndarray:
        """Slopes of an all-linear network; raises if a gain is not linear."""
        A = np.zeros((self.n, self.n))
        for i, row in enumerate(self.gamma):
            for j, g in enumerate(row):
                s = linear_slope(g)
                if s is None:
                    raise NetworkError(f"gain ({i + 1},{j + 1}) = {format_fn(g)} is not linear")
                A[i, j] = s
        return A

    def restrict(self, idx: Sequence[int]) -> "GainNetwork":
        """Sub-network on the index list ``idx`` (in that order)."""
        idx = list(idx)
        return GainNetwork(
            tuple(self.agg[i] for i in idx),
            tuple(tuple(self.gamma[i][j] for j in idx) for i in idx),
            tuple(self.external[i] for i in idx),
            self.role,
        )

    def with_agg(self, agg) -> "GainNetwork":
        return GainNetwork(tuple(agg), self.gamma, self.external, self.role)

    def map_gains(self, fn) -> "GainNetwork":
        """Apply ``fn(i, j, g)`` to every nonzero gain."""
        gamma = tuple(
            tuple(g if isinstance(g, Zero) else fn(i, j, g) for j, g in enumerate(row))
            for i, row in enumerate(self.gamma)
        )
        return GainNetwork(self.agg, gamma, self.external, self.role)

    def graph(self) -> nx.DiGraph:
        G = nx.DiGraph()
        G.add_nodes_from(range(self.n))
        for i in range(self.n):
            for j in self.nonzero(i):
                G.add_edge(j, i)
        return G

    @classmethod
    def from_slopes(cls, agg, A, external=None, role="iss") -> "GainNetwork":
        A = np.asarray(A, dtype=float)
        gamma = tuple(
            tuple(Linear(A[i, j]) if A[i, j] > 0 and i != j else Zero() for j in range(A.shape[1]))
            for i in range(A.shape[0])
        )
        if external is not None:
            external = tuple(Linear(e) if e > 0 else Zero() for e in external)
        return cls(tuple(agg), gamma, external, role)


# --------------------------------------------------------------------------
# operators


def _check(net: GainNetwork, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != net.n:
        raise NetworkError(f"vector of length {s.shape[-1]} does not match network size {net.n}")
    if np.any(s < 0):
        raise NetworkError("vectors must be nonnegative")
    return s


def apply_gamma(net: GainNetwork, s, u_level=None) -> np.ndarray:
    """Evaluate the gain operator; with ``u_level`` also the external column.

    ``s`` may carry leading batch dimensions, ``s.shape[-1] == n``;
    ``u_level`` broadcasts against those batch dimensions.
    """
    s = _check(net, s)
    out = np.zeros_like(s)
    u = None if u_level is None else np.asarray(u_level, dtype=float)
    for i in range(net.n):
        terms = [net.gamma[i][j]._eval(s[..., j]) for j in net.nonzero(i)]
        if u is not None and not isinstance(net.external[i], Zero):
            terms.append(np.broadcast_to(net.external[i]._eval(u), s.shape[:-1]))
        if not terms:
            continue
        if net.agg[i] == SUM:
            acc = terms[0]
            for t in terms[1:]:
                acc = acc + t
        else:
            acc = terms[0]
            for t in terms[1:]:
                acc = np.maximum(acc, t)
        out[..., i] = acc
    return out


def apply_D(net: GainNetwork, alpha: ScalarFn, s) -> np.ndarray:
    """``(id + alpha)`` on sum rows, identity on max rows."""
    s = _check(net, s)
    out = np.array(s, dtype=float)
    for i in net.sum_rows:
        out[..., i] = s[..., i] + alpha._eval(s[..., i])
    return out


def apply_D_inv(net: GainNetwork, alpha: ScalarFn, s) -> np.ndarray:
    """Inverse of :func:`apply_D`."""
    s = _check(net, s)
    out = np.array(s, dtype=float)
    if net.sum_rows:
        inv = inverse(id_plus(alpha))
        for i in net.sum_rows:
            out[..., i] = inv._eval(s[..., i])
    return out


def apply_mu(net: GainNetwork, w, v) -> np.ndarray:
    """Componentwise ``w + v`` on sum rows and ``max(w, v)`` on max rows."""
    w = _check(net, w)
    v = _check(net, v)
    if w.shape != v.shape:
        w, v = np.broadcast_arrays(w, v)
    is_sum = np.array([a == SUM for a in net.agg])
    return np.where(is_sum, w + v, np.maximum(w, v))


def gamma_after_D(net, alpha, s):
    """``Gamma o D_alpha``."""
    return apply_gamma(net, apply_D(net, alpha, s))


def D_after_gamma(net, alpha, s):
    """``D_alpha o Gamma``."""
    return apply_D(net, alpha, apply_gamma(net, s))


def dominates(y, s, rtol: float = 1e-12) -> np.ndarray:
    """``y >= s`` componentwise (with relative slack) and ``s != 0``; batched."""
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)
    ok = np.all(y >= s * (1 - rtol), axis=-1)
    return ok & np.any(s > 0, axis=-1)


# --------------------------------------------------------------------------
# graph structure


@dataclass(frozen=True)
class NetworkGraph:
    """Strongly connected components in block-triangular order.

    ``scc[0]`` is a sink block (receives influence only from later blocks);
    concatenating the blocks gives ``permutation``, under which the permuted
    gain matrix is upper block triangular.
    """

    n: int
    edges: tuple
    scc: tuple
    permutation: tuple = field(default=())

    @property
    def irreducible(self) -> bool:
        return len(self.scc) == 1 and len(self.scc[0]) == self.n

    def block_of(self) -> dict:
        return {v: b for b, comp in enumerate(self.scc) for v in comp}


def condensation(net: GainNetwork) -> NetworkGraph:
    G = net.graph()
    comps = [tuple(sorted(c)) for c in nx.strongly_connected_components(G)]
    where = {v: k for k, c in enumerate(comps) for v in c}
    # successors at block level
    succ = {k: set() for k in range(len(comps))}
    for a, b in G.edges:
        if where[a] != where[b]:
            succ[where[a]].add(where[b])
    order = []
    placed = set()
    while len(order) < len(comps):
        ready = [k for k in range(len(comps)) if k not in placed and succ[k] <= placed]
        k = min(ready, key=lambda c: comps[c][0])
        order.append(k)
        placed.add(k)
    scc = tuple(comps[k] for k in order)
    perm = tuple(v for c in scc for v in c)
    return NetworkGraph(net.n, tuple(sorted(G.edges)), scc, perm)


def simple_cycles(net: GainNetwork, cap: int = 10_000):
    """Simple cycles as node tuples ``(i1, i2, ..., ik)`` meaning
    ``i1 -> i2 -> ... -> ik -> i1``, rotated to start at their smallest node
    and sorted.  Returns ``(cycles, complete)``; ``complete`` is False when the
    enumeration hit ``cap``.
    """
    out = []
    complete = True
    for c in nx.simple_cycles(net.graph()):
        if len(out) >= cap:
            complete = False
            break
        k = c.index(min(c))
        out.append(tuple(c[k:] + c[:k]))
    return sorted(out), complete


def cycle_gain(net: GainNetwork, cycle: Sequence[int], alpha: ScalarFn | None = None) -> ScalarFn:
    """Composed gain around ``cycle`` with ``id + alpha`` after each gain
    entering a sum row (``alpha=None`` skips the augmentation)."""
    from .kfun import compose

    f: ScalarFn = Identity()
    k = len(cycle)
    for m in range(k):
        src, dst = cycle[m], cycle[(m + 1) % k]
        g = net.gamma[dst][src]
        f = compose(g, f)
        if alpha is not None and net.agg[dst] == SUM:
            f = compose(id_plus(alpha), f)
    return f


def example_network(eta: float | None = None, external: bool = True) -> GainNetwork:
    """The three-subsystem example network with all coupling gains ``0.9*r``.

    Row 1 aggregates by sum, rows 2 and 3 by max.  With ``eta`` the max-row
    gains become ``(id + eta*id) o 0.9*r`` as in the subsystem estimates
    obtained by the weak triangle inequality.
    """
    from .kfun import compose as _c

    g = Linear(0.9)
    gm = g if eta is None else _c(id_plus(Linear(eta)), g)
    z = Zero()
    gamma = ((z, z, g), (gm, z, gm), (z, gm, z))
    ext = (Identity(), z, Identity()) if external else None
    if external and eta is not None:
        ext = (Identity(), z, id_plus(Linear(eta)))
    return GainNetwork((SUM, MAX, MAX), gamma, ext)
