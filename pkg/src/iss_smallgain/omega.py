"""Omega-paths: vectors of K-infinity functions strictly decreased by ``D o Gamma``.

A path ``sigma`` satisfies ``D_alpha o Gamma(sigma(r)) < sigma(r)`` for all
``r > 0`` and has inverses with two-sided difference-quotient bounds.  Both
properties are certified on finite grids (see :func:`validate_path`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kfun import (
    DEFAULT_GRID,
    FnClass,
    GridSpec,
    Identity,
    Linear,
    PiecewiseLinear,
    ScalarFn,
    ValidationError,
    Add,
    compose,
    format_fn,
    inverse,
    linear_slope,
    parse_fn,
    pl_from_samples,
    validate,
)
from .network import SUM, GainNetwork, apply_gamma, condensation, D_after_gamma
from . import kernels


class PathError(RuntimeError):
    pass


@dataclass
class ValidationReport:
    """Outcome of :func:`validate_path`.

    ``windows`` holds one entry per component and decade window:
    ``(component, r_lo, r_hi, c, C)`` with ``c <= d sigma_i^-1 <= C`` as
    difference quotients on that window.
    """

    grid: GridSpec
    min_margin: float
    worst_r: float
    worst_component: int
    domination: bool
    windows: list = field(default_factory=list)
    lipschitz: bool = True
    tags: bool = True
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.domination and self.lipschitz and self.tags

    def to_json(self) -> dict:
        return {
            "grid": [self.grid.r_min, self.grid.r_max, self.grid.points],
            "min_margin": self.min_margin,
            "worst_r": self.worst_r,
            "worst_component": self.worst_component + 1,
            "domination": self.domination,
            "lipschitz": self.lipschitz,
            "tags": self.tags,
            "windows": [
                {"component": i + 1, "r": [lo, hi], "c": c, "C": C}
                for i, lo, hi, c, C in self.windows
            ],
            "failures": self.failures,
        }


@dataclass
class OmegaPath:
    sigma: tuple
    validation: Optional[ValidationReport] = None
    recipe: Optional[list] = None
    method: str = ""

    @property
    def n(self) -> int:
        return len(self.sigma)

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return np.stack([s._eval(r) for s in self.sigma], axis=-1)

    def inverse_components(self) -> list:
        return [inverse(s) for s in self.sigma]

    def to_json(self) -> dict:
        out = {"method": self.method, "sigma": [format_fn(s) for s in self.sigma]}
        if self.validation is not None:
            out["validation"] = self.validation.to_json()
        if self.recipe is not None:
            out["recipe"] = self.recipe
        return out

    @classmethod
    def from_json(cls, data: dict) -> "OmegaPath":
        return cls(tuple(parse_fn(s) for s in data["sigma"]), None, data.get("recipe"), data.get("method", ""))


@dataclass(frozen=True)
class PathConfig:
    """Anchor layout and budgets of :func:`path_numeric`."""

    r_min: float = 1e-4
    r_max: float = 1e4
    per_decade: int = 24
    deltas: tuple = (0.05, 0.01, 0.001)
    max_iter: int = 20_000
    separation: float = 0.01
    refinements: int = 3


# --------------------------------------------------------------------------
# operator helpers


def _operator(net: GainNetwork, alpha: ScalarFn):
    """Batched ``D_alpha o Gamma``; compiled kernel when everything is linear."""
    c = linear_slope(alpha)
    if net.is_linear() and c is not None:
        A = net.slope_matrix()
        is_max = np.array([a != SUM for a in net.agg], dtype=np.int32)
        dscale = np.where(is_max, 1.0, 1.0 + c)
        return lambda S: kernels.mixed_linear_apply(A, is_max, dscale, S)
    return lambda S: D_after_gamma(net, alpha, S)


def _least_point(op, S0: np.ndarray, factor: float, max_iter: int, tol: float = 1e-15):
    """Least fixed point of ``s = max(S0, factor * op(s))`` by upward iteration.

    Works on a batch of rows; returns None when some row does not settle.
    """
    S = np.array(S0, dtype=float)
    for _ in range(max_iter):
        nxt = np.maximum(S0, factor * op(S))
        if not np.all(np.isfinite(nxt)) or nxt.max() > 1e150:
            return None
        if np.all(nxt - S <= tol * np.abs(nxt)):
            return nxt
        S = nxt
    return None


# --------------------------------------------------------------------------


def path_linear(net: GainNetwork, alpha: ScalarFn) -> OmegaPath:
    """Linear path ``sigma(r) = v r`` for linear gains and ``alpha = c*id``.

    ``v`` is the least solution of ``v = max(1, (1 + delta) D o Gamma(v))``
    for the first ``delta`` in ``(0.05, 0.01, 0.001)`` where the upward
    iteration settles; then ``D o Gamma(v) <= v / (1 + delta)``.  Raises
    :class:`PathError` when no such ``v`` exists, which happens exactly when
    the homogeneous operator has growth rate at least one.
    """
    if not net.is_linear() or linear_slope(alpha) is None:
        raise PathError("path_linear needs linear gains and a linear alpha")
    n = net.n
    if not np.any(net.slope_matrix()):
        return OmegaPath((Identity(),) * n, method="linear")
    op = _operator(net, alpha)
    e = np.ones((1, n))
    for delta in (0.05, 0.01, 0.001):
        v = _least_point(op, e, 1.0 + delta, 200_000)
        if v is None:
            continue
        v = v[0] / v[0].max()
        if np.all(op(v[None, :])[0] < v):
            return OmegaPath(tuple(Linear(float(x)) for x in v), method="linear")
    raise PathError("no strictly decreased positive vector: the small-gain condition fails")


def path_numeric(net: GainNetwork, alpha: ScalarFn, cfg: PathConfig = PathConfig(),
                 grid: GridSpec = DEFAULT_GRID) -> OmegaPath:
    """Piecewise-linear path from per-radius anchors.

    At every anchor radius ``rho`` the anchor is the least ``s`` with
    ``s = max(rho * 1, (1 + delta) D o Gamma(s))``, all radii iterated as one
    batch.  Anchors are made strictly increasing by a componentwise max with
    a ``1 + separation`` step and re-iterated; the components are then
    interpolated piecewise-linearly.  The anchor density doubles (up to
    ``cfg.refinements`` times) until :func:`validate_path` passes on ``grid``.
    """
    n = net.n
    if all(not net.nonzero(i) for i in range(n)):
        return OmegaPath((Identity(),) * n, method="numeric")
    op = _operator(net, alpha)
    per_decade = cfg.per_decade
    last_err = "anchor search failed"
    for _ in range(cfg.refinements + 1):
        decades = math.log10(cfg.r_max / cfg.r_min)
        rho = np.geomspace(cfg.r_min, cfg.r_max, int(round(decades * per_decade)) + 1)
        S0 = rho[:, None] * np.ones((1, n))
        for delta in cfg.deltas:
            anchors = _anchors(op, S0, 1.0 + delta, cfg)
            if anchors is None:
                continue
            sigma = tuple(_pl_through(rho, anchors[:, i]) for i in range(n))
            path = OmegaPath(sigma, method="numeric")
            rep = validate_path(net, alpha, path, grid)
            path.validation = rep
            if rep.ok:
                return path
            last_err = "; ".join(rep.failures) or "validation failed"
        per_decade *= 2
    raise PathError(f"numeric path construction failed: {last_err}")


def _anchors(op, S0, factor, cfg: PathConfig):
    S = _least_point(op, S0, factor, cfg.max_iter)
    if S is None:
        return None
    step = 1.0 + cfg.separation
    for _ in range(50):
        rep = S.copy()
        for k in range(1, len(rep)):
            rep[k] = np.maximum(rep[k], step * rep[k - 1])
        if np.array_equal(rep, S):
            return S
        S = _least_point(op, rep, factor, cfg.max_iter)
        if S is None:
            return None
    return None


def _pl_through(r: np.ndarray, v: np.ndarray) -> ScalarFn:
    ratio = v / r
    if ratio.max() - ratio.min() <= 1e-12 * ratio.max():
        return Linear(float(ratio[0]))
    return PiecewiseLinear(tuple(zip(r.tolist(), v.tolist())), float((v[-1] - v[-2]) / (r[-1] - r[-2])))


# --------------------------------------------------------------------------


def validate_path(net: GainNetwork, alpha: ScalarFn, path: OmegaPath,
                  grid: GridSpec = DEFAULT_GRID) -> ValidationReport:
    """Grid certificate for ``path``.

    Checks (1) ``D o Gamma(sigma(r)) < sigma(r)`` at every grid radius,
    recording the smallest relative margin ``(sigma_i - (D o Gamma)_i) /
    sigma_i``; (2) difference quotients of ``sigma_i^-1`` on each decade
    window lie in ``[c, C]`` with ``0 < c <= C < inf``; (3) each component
    passes the K-infinity grid validation.
    """
    r = grid.values()
    S = path(r)
    Y = D_after_gamma(net, alpha, S)
    with np.errstate(divide="ignore", invalid="ignore"):
        margin = np.where(S > 0, (S - Y) / S, -np.inf)
    k, i = np.unravel_index(np.argmin(margin), margin.shape)
    failures = []
    dom = bool(np.all(Y < S))
    if not dom:
        bad = np.argwhere(~(Y < S))[0]
        failures.append(f"domination fails at r={r[bad[0]]:.6g} in component {bad[1] + 1}")

    windows = []
    lip = True
    edges = np.unique(np.concatenate([[r[0]], 10.0 ** np.arange(math.ceil(math.log10(r[0])), math.floor(math.log10(r[-1])) + 1), [r[-1]]]))
    for comp, s in enumerate(path.sigma):
        for lo, hi in zip(edges[:-1], edges[1:]):
            rr = np.geomspace(lo, hi, 17)
            ss = s._eval(rr)
            ds = np.diff(ss)
            with np.errstate(divide="ignore"):
                q = np.diff(rr) / ds
            c, C = float(q.min()), float(q.max())
            good = bool(np.all(ds > 0) and np.isfinite(C) and c > 0)
            if not good:
                lip = False
                failures.append(f"component {comp + 1}: inverse not Lipschitz on [{lo:.3g}, {hi:.3g}]")
            windows.append((comp, float(lo), float(hi), c, C))

    tags = True
    for comp, s in enumerate(path.sigma):
        try:
            validate(s, grid, FnClass.KINF)
        except ValidationError as exc:
            tags = False
            failures.append(f"component {comp + 1}: {exc}")
    return ValidationReport(grid, float(margin[k, i]), float(r[k]), int(i), dom, windows, lip, tags, failures)


# --------------------------------------------------------------------------


def external_margin(net: GainNetwork, alpha: ScalarFn, path: OmegaPath,
                    grid: GridSpec = DEFAULT_GRID) -> ScalarFn:
    """Input level ``phi`` with ``Gamma_bar(sigma(r), phi(r)) < sigma(r)``.

    ``phi(r)`` is half the minimum over rows with an external gain of
    ``gt_i^-1(alpha(Gamma_i(sigma(r))))`` on sum rows and
    ``gt_i^-1(Gamma_i(sigma(r)))`` on max rows, where ``gt_i`` is the external
    gain (plus ``1e-6*r`` if it is only of class K).  The sampled minimum is
    returned as ``c*r`` when its ratio is constant, otherwise as a
    piecewise-linear envelope; the defining inequality is re-checked on the
    grid.
    """
    rows = [i for i in range(net.n) if not net.external[i].tag == FnClass.ZERO]
    if not rows:
        return Identity()
    r = grid.values()
    G = apply_gamma(net, path(r))
    cands = []
    for i in rows:
        gi = net.external[i]
        gt = gi if gi.tag == FnClass.KINF else Add((gi, Linear(1e-6)))
        level = G[:, i]
        if np.any(level <= 0):
            raise PathError(
                f"row {i + 1}: internal gains vanish along the path, external margin undefined"
            )
        if net.agg[i] == SUM:
            level = alpha._eval(level)
        cands.append(inverse(gt)._eval(level))
    v = 0.5 * np.min(cands, axis=0)
    ratio = v / r
    if ratio.max() - ratio.min() <= 1e-9 * ratio.min():
        phi: ScalarFn = Linear(float(ratio.min()))
    else:
        phi = pl_from_samples(r, v)
    S = path(r)
    Y = apply_gamma(net, S, u_level=phi._eval(r))
    if not np.all(Y < S):
        raise PathError("external margin fails the domination re-check")
    return phi


# --------------------------------------------------------------------------


def block_path(net: GainNetwork, alpha: ScalarFn, grid: GridSpec = DEFAULT_GRID) -> OmegaPath:
    """Path for an irreducible (or zero) network, linear construction when possible."""
    if net.is_linear() and linear_slope(alpha) is not None:
        p = path_linear(net, alpha)
    else:
        p = path_numeric(net, alpha, grid=grid)
    if p.validation is None:
        p.validation = validate_path(net, alpha, p, grid)
    return p


def assemble_reducible(net: GainNetwork, alpha: ScalarFn, grid: GridSpec = DEFAULT_GRID,
                       max_doublings: int = 60) -> OmegaPath:
    """Path for a general network from per-block paths.

    Blocks are handled from sources to sinks.  Each block's own path is
    reparametrized as ``sigma_B(K r)``, doubling ``K`` from 1 until the rows of
    the block are strictly decreased on the grid given the already-fixed
    upstream components.  Rows of upstream blocks never see downstream
    components, so earlier checks stay valid.  The recipe lists the blocks
    (1-based), the construction used and the scale ``K``.
    """
    from .verify import decide

    g = condensation(net)
    n = net.n
    sigma: list = [None] * n
    recipe = []
    r = grid.values()
    for block in reversed(g.scc):
        idx = list(block)
        sub = net.restrict(idx)
        if any(sub.nonzero(k) for k in range(len(idx))):
            cert = decide(sub, alpha, grid)
            if cert.status == "falsified":
                raise PathError(f"block {[i + 1 for i in idx]} fails its small-gain test")
            try:
                bp = block_path(sub, alpha, grid)
            except PathError as exc:
                raise PathError(f"block {[i + 1 for i in idx]}: {exc}") from exc
            method = bp.method
        else:
            bp = OmegaPath((Identity(),) * len(idx), method="identity")
            method = "identity"
        fixed = [i for i in range(n) if sigma[i] is not None]
        K = 1.0
        for _ in range(max_doublings + 1):
            trial = [compose(s, Linear(K)) if K != 1.0 else s for s in bp.sigma]
            ok = _block_rows_ok(net, alpha, sigma, idx, trial, fixed, r)
            if ok:
                break
            K *= 2.0
        else:
            raise PathError(f"block {[i + 1 for i in idx]}: no scaling joins it to upstream blocks")
        for i, s in zip(idx, trial):
            sigma[i] = _simplify(s)
        recipe.append({"block": [i + 1 for i in idx], "method": method, "scale": K})
    path = OmegaPath(tuple(sigma), recipe=list(reversed(recipe)), method="assembled")
    path.validation = validate_path(net, alpha, path, grid)
    if not path.validation.ok:
        raise PathError("assembled path fails validation: " + "; ".join(path.validation.failures))
    return path


def _simplify(f: ScalarFn) -> ScalarFn:
    s = linear_slope(f)
    return Linear(s) if s is not None and s > 0 and not isinstance(f, Linear) else f


def _block_rows_ok(net, alpha, sigma, idx, trial, fixed, r) -> bool:
    comps = {i: s for i, s in zip(idx, trial)}
    comps.update({i: sigma[i] for i in fixed})
    S = np.zeros((len(r), net.n))
    for i, s in comps.items():
        S[:, i] = s._eval(r)
    Y = D_after_gamma(net, alpha, S)
    return bool(np.all(Y[:, idx] < S[:, idx]))
