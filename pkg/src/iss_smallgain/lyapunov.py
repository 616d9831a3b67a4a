"""Composite ISS Lyapunov functions ``V(x) = max_i sigma_i^-1(V_i(x_i))``.

Subsystem states are scalar here (one state per subsystem, matching the
simulated networks).  The decrease check samples states and inputs, keeps
those above the gate ``V(x) >= (1 + margin) * gamma(|u|)`` and differentiates
the active component along the flow.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kfun import (
    DEFAULT_GRID,
    GridSpec,
    Identity,
    Linear,
    Power,
    ScalarFn,
    Zero,
    derivative,
    format_fn,
    inverse,
)
from .network import GainNetwork, SUM
from .omega import OmegaPath, external_margin
from .verify import default_seed

ABS = "abs"
SCALED = "scaled"
QUADRATIC = "quadratic"


class LyapunovError(ValueError):
    pass


@dataclass(frozen=True)
class LyapunovFn:
    """Lyapunov function of one scalar subsystem.

    Attributes
    ----------
    index : int
        Subsystem index (0-based).
    shape : str
        ``abs`` (``|x|``), ``scaled`` (``c |x|``) or ``quadratic`` (``w x^2``).
    param : float
        ``c`` or ``w``; ignored for ``abs``.
    rate : ScalarFn
        Dissipation rate ``alpha_i`` in ``dV_i/dt <= -alpha_i(|x_i|)``.
    agg : str
        Aggregation of the gate inequality.
    gains : tuple of ScalarFn
        Lyapunov gains ``gamma_ij`` (row of the Lyapunov gain network).
    external : ScalarFn
        Gain of the input norm.
    """

    index: int
    shape: str = ABS
    param: float = 1.0
    rate: ScalarFn = Linear(1.0)
    agg: str = SUM
    gains: tuple = ()
    external: ScalarFn = Zero()

    def __post_init__(self):
        if self.shape not in (ABS, SCALED, QUADRATIC):
            raise LyapunovError(f"unknown Lyapunov shape {self.shape!r}")
        if self.shape != ABS and not self.param > 0:
            raise LyapunovError("shape parameter must be positive")

    def value(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        if self.shape == ABS:
            return ax
        if self.shape == SCALED:
            return self.param * ax
        return self.param * ax * ax

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if self.shape == ABS:
            return np.sign(x)
        if self.shape == SCALED:
            return self.param * np.sign(x)
        return 2.0 * self.param * x

    def bound(self) -> ScalarFn:
        """``psi`` with ``V_i(x) = psi(|x|)`` (lower and upper bound coincide)."""
        if self.shape == ABS:
            return Identity()
        if self.shape == SCALED:
            return Linear(self.param)
        return Power(self.param, 2.0)

    def shape_text(self) -> str:
        return ABS if self.shape == ABS else f"{self.shape}:{self.param!r}"


def lyapunov_network(parts: Sequence[LyapunovFn]) -> GainNetwork:
    """Gain network (role ``lyapunov``) assembled from the parts' gain rows."""
    n = len(parts)
    parts = sorted(parts, key=lambda p: p.index)
    if [p.index for p in parts] != list(range(n)):
        raise LyapunovError("Lyapunov parts must cover subsystems 1..n exactly once")
    gamma = []
    for p in parts:
        row = tuple(p.gains) if p.gains else (Zero(),) * n
        if len(row) != n:
            raise LyapunovError(f"subsystem {p.index + 1}: gain row has length {len(row)}, expected {n}")
        gamma.append(row)
    return GainNetwork(tuple(p.agg for p in parts), tuple(gamma), tuple(p.external for p in parts), "lyapunov")


@dataclass
class CompositeV:
    """``V(x) = max_i sigma_i^-1(V_i(x_i))`` with lowest-index tie rule."""

    path: OmegaPath
    parts: tuple
    tie_tol: float = 1e-12
    inv: tuple = field(init=False)

    def __post_init__(self):
        if len(self.parts) != self.path.n:
            raise LyapunovError(f"{len(self.parts)} Lyapunov parts for a path of dimension {self.path.n}")
        self.parts = tuple(sorted(self.parts, key=lambda p: p.index))
        self.inv = tuple(inverse(s) for s in self.path.sigma)

    @property
    def n(self) -> int:
        return len(self.parts)

    def components(self, x) -> np.ndarray:
        """``sigma_i^-1(V_i(x_i))`` for states ``x`` of shape ``(..., n)``."""
        x = np.asarray(x, dtype=float)
        return np.stack([self.inv[i]._eval(p.value(x[..., i])) for i, p in enumerate(self.parts)], axis=-1)

    def __call__(self, x):
        v = self.components(x).max(axis=-1)
        return float(v) if np.ndim(v) == 0 else v

    def active_index(self, x) -> np.ndarray:
        """Lowest index whose component is within ``tie_tol`` (relative) of the max."""
        w = self.components(x)
        top = w.max(axis=-1, keepdims=True)
        near = w >= top - self.tie_tol * np.maximum(top, 1e-300)
        return np.argmax(near, axis=-1)

    def is_tie(self, x) -> np.ndarray:
        w = self.components(x)
        top = w.max(axis=-1, keepdims=True)
        near = w >= top - self.tie_tol * np.maximum(top, 1e-300)
        return near.sum(axis=-1) > 1

    def proper_bounds(self, r):
        """``(lo, hi)`` with ``lo(|x|_inf) <= V(x) <= hi(|x|_inf)``."""
        r = np.asarray(r, dtype=float)
        vals = np.stack([self.inv[i]._eval(p.bound()._eval(r)) for i, p in enumerate(self.parts)], axis=-1)
        return vals.min(axis=-1), vals.max(axis=-1)


def compose_V(path: OmegaPath, parts: Sequence[LyapunovFn]) -> CompositeV:
    return CompositeV(path, tuple(parts))


def gate_function(net: GainNetwork, alpha: ScalarFn, path: OmegaPath, grid: GridSpec = DEFAULT_GRID):
    """``(phi, gamma)``: the external margin of the Lyapunov gain network and
    the input gate ``gamma = phi^-1`` of the composite function."""
    phi = external_margin(net, alpha, path, grid)
    return phi, inverse(phi)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleSpec:
    samples: int = 10_000
    box: float = 10.0
    exclude: float = 0.1
    inputs: tuple = (0.0, 0.5, 1.0)
    h: float = 1e-6
    gate_margin: float = 0.05
    rate_factor: float = 0.9
    seed: Optional[int] = None
    max_draws: int = 2_000_000


@dataclass
class DecreaseReport:
    gated: int
    excluded: int
    ties: int
    passed: int
    worst_ratio: float
    worst_state: list
    gradient_rel_err: float
    gate: str
    gradient_checked: int
    by_input: dict = field(default_factory=dict)

    @property
    def pass_rate(self) -> float:
        checked = self.gated - self.ties
        return self.passed / checked if checked else 1.0

    def to_json(self) -> dict:
        return {
            "gated": self.gated,
            "excluded_by_gate": self.excluded,
            "skipped_ties": self.ties,
            "passed": self.passed,
            "pass_rate": self.pass_rate,
            "worst_ratio": self.worst_ratio,
            "worst_state": self.worst_state,
            "gradient_rel_err": self.gradient_rel_err,
            "gradient_checked": self.gradient_checked,
            "gate": self.gate,
            "by_input": self.by_input,
        }


def check_decrease(V: CompositeV, dynamics, samples: SampleSpec = SampleSpec(),
                   gate: ScalarFn = Zero()) -> DecreaseReport:
    """Sampled check of ``dV/dt <= -rate`` above the gate.

    States are drawn uniformly from ``[-box, box]^n`` minus the ball
    ``|x|_inf < exclude``; each sample takes an input level from
    ``samples.inputs`` on every channel.  For a kept sample with active index
    ``a`` the derivative of ``t -> sigma_a^-1(V_a(x_a(t)))`` is estimated by a
    Richardson-extrapolated forward difference along ``x + h f(x, u)`` and
    must not exceed ``-rate_factor * (sigma_a^-1)'(V_a) * alpha_a(|x_a|)``.
    The same quantity computed by the chain rule is compared with the
    difference estimate.  Samples at ties are skipped and counted.
    """
    seed = default_seed() if samples.seed is None else samples.seed
    rng = np.random.default_rng(seed)
    n = V.n
    if dynamics.n != n:
        raise LyapunovError(f"dynamics has {dynamics.n} states, composite function {n}")
    levels = np.asarray(samples.inputs, dtype=float)
    xs, us = [], []
    drawn_by = {float(u): 0 for u in levels}
    excluded = 0
    kept = 0
    drawn = 0
    batch = max(1024, samples.samples)
    while kept < samples.samples and drawn < samples.max_draws:
        x = rng.uniform(-samples.box, samples.box, (batch, n))
        x = x[np.abs(x).max(axis=1) >= samples.exclude]
        ul = levels[rng.integers(0, len(levels), len(x))]
        drawn += batch
        ok = V(x) >= (1.0 + samples.gate_margin) * gate._eval(ul)
        excluded += int(np.sum(~ok))
        for u in drawn_by:
            drawn_by[u] += int(np.sum(ul == u))
        take = np.flatnonzero(ok)[: samples.samples - kept]
        xs.append(x[take])
        us.append(ul[take])
        kept += len(take)
    X = np.concatenate(xs)
    UL = np.concatenate(us)
    U = np.repeat(UL[:, None], dynamics.m, axis=1)

    ties = V.is_tie(X)
    a = V.active_index(X)
    rows = np.arange(len(X))
    F = dynamics.rhs(X, U)
    xa = X[rows, a]
    fa = F[rows, a]

    def comp(y):
        out = np.empty(len(y))
        for i in range(n):
            sel = a == i
            if np.any(sel):
                out[sel] = V.inv[i]._eval(V.parts[i].value(y[sel]))
        return out

    h = samples.h
    w0 = comp(xa)
    d1 = (comp(xa + h * fa) - w0) / h
    d2 = (comp(xa + 0.5 * h * fa) - w0) / (0.5 * h)
    fd = 2.0 * d2 - d1

    va = np.empty(len(X))
    dinv = np.empty(len(X))
    rate = np.empty(len(X))
    grad = np.empty(len(X))
    for i in range(n):
        sel = a == i
        if not np.any(sel):
            continue
        p = V.parts[i]
        va[sel] = p.value(xa[sel])
        dinv[sel] = derivative(V.inv[i], va[sel])
        rate[sel] = p.rate._eval(np.abs(xa[sel]))
        grad[sel] = p.grad(xa[sel])
    analytic = dinv * grad * fa
    expected = dinv * rate

    check = ~ties
    ratio = np.where(expected > 0, -fd / np.where(expected > 0, expected, 1.0), np.inf)
    passed = check & (fd <= -samples.rate_factor * expected)
    # smooth samples: the sign of x_a does not change within the step
    smooth = check & (np.abs(xa) > 4 * h * np.abs(fa))
    scale = np.maximum(np.abs(analytic), 1e-300)
    rel = np.abs(fd - analytic) / scale
    grad_err = float(rel[smooth].max()) if np.any(smooth) else 0.0
    if np.any(check):
        k = int(np.flatnonzero(check)[np.argmin(ratio[check])])
        worst, worst_x = float(ratio[k]), [float(v) for v in X[k]] + [float(UL[k])]
    else:
        worst, worst_x = float("inf"), []
    return DecreaseReport(
        gated=len(X),
        excluded=excluded,
        ties=int(ties.sum()),
        passed=int(passed.sum()),
        worst_ratio=worst,
        worst_state=worst_x,
        gradient_rel_err=grad_err,
        gate=f"V(x) >= {1.0 + samples.gate_margin!r} * ({format_fn(gate)})(|u|)",
        gradient_checked=int(smooth.sum()),
        by_input={
            repr(u): {"drawn": drawn_by[u], "gated": int(np.sum(UL == u))} for u in drawn_by
        },
    )
