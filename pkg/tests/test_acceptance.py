"""Acceptance criteria 1-9.

Each criterion is a function returning a list of ``(check, ok, detail)``
tuples.  The pytest wrappers time it against its runtime limit, record one
``criterion N: PASS|FAIL`` line (printed in the terminal summary) and assert.
Run ``python tests/test_acceptance.py`` to print the lines without pytest.
"""
import os
import sys
import time

import numpy as np
import pytest

from iss_smallgain.dynamics import (
    NOT_APPLICABLE,
    InputSignal,
    check_estimates,
    example_dynamics,
    gs_network_from_dynamics,
    integrate,
    rk4_order_ratio,
    step_halving_error,
)
from iss_smallgain.kfun import GridSpec, Linear, Power, Zero
from iss_smallgain.lyapunov import SampleSpec, check_decrease, compose_V, gate_function, lyapunov_network
from iss_smallgain.network import (
    MAX,
    SUM,
    D_after_gamma,
    GainNetwork,
    apply_D,
    apply_D_inv,
    apply_gamma,
    apply_mu,
    dominates,
    example_network,
    gamma_after_D,
)
from iss_smallgain.omega import PathError, path_linear, validate_path
from iss_smallgain.report import Options, build_report
from iss_smallgain.specfile import SpecError, format_spec, model_equal, parse_spec, read_spec
from iss_smallgain.transform import alpha_from_etas, etas_from_path, sum_to_max
from iss_smallgain.verify import VERIFIED, falsify, phi_bound, verify_cycles, verify_linear

HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(os.path.dirname(HERE), "src", "iss_smallgain", "data")
ALPHA = Linear(0.1)
A_SUM = [[0, 0, 0.9], [0.9, 0, 0.9], [0, 0.9, 0]]
SEED = int(os.environ.get("ISS_SG_SEED", "0"))


def _data(name):
    from importlib import resources

    path = os.path.join(DATA, name)
    if os.path.exists(path):
        return path
    return str(resources.files("iss_smallgain") / "data" / name)


def _random_linear(rng, n, scale):
    A = rng.uniform(0.05, 1.0, (n, n)) * (rng.uniform(size=(n, n)) < 0.7)
    np.fill_diagonal(A, 0)
    rho = max(abs(np.linalg.eigvals(A)))
    if rho > 0:
        A = A * scale / rho
    agg = tuple(rng.choice([SUM, MAX], n))
    return GainNetwork.from_slopes(agg, A)


# ------------------------------------------------------------------ criteria


def criterion_1():
    model = read_spec(_data("example_mixed.ganet"))
    rep = build_report("analyze", model, Options(alpha=ALPHA))
    res = rep["results"]["analyze"]
    m = sorted(res["cycle_margins"])
    return [
        ("status verified", res["status"] == VERIFIED, res["status"]),
        ("margin 0.970299", abs(m[0] - 0.970299) <= 1e-9, f"{m[0]!r}"),
        ("margin 0.9801", abs(m[1] - 0.9801) <= 1e-9, f"{m[1]!r}"),
    ]


def criterion_2():
    net = GainNetwork.from_slopes((SUM,) * 3, A_SUM)
    lin = verify_linear(net)
    w = falsify(net, ALPHA)
    recheck = w is not None and bool(np.all(apply_gamma(net, apply_D(net, ALPHA, w)) >= w))
    return [
        ("rho 1.1922", abs(lin.rho - 1.1922) <= 1e-3 and lin.rho > 1.19, f"{lin.rho:.6f}"),
        ("condition fails", not lin.sum_condition, str(lin.sum_condition)),
        ("witness re-verified", recheck, "none" if w is None else np.array2string(w, precision=4)),
    ]


def _upward_fixed_point(net, v, iters=10_000):
    w = np.array(v, dtype=float)
    for _ in range(iters):
        nxt = apply_mu(net, apply_gamma(net, w), v)
        if np.all(np.abs(nxt - w) <= 1e-14 * np.maximum(nxt, 1e-300)):
            return nxt
        w = nxt
    return w


def criterion_3():
    net = example_network()
    phi1 = phi_bound(net, ALPHA, 1.0)
    rng = np.random.default_rng(SEED)
    instances = bad = 0
    worst = 0.0
    while instances < 1000:
        n = int(rng.integers(2, 6))
        cand = _random_linear(rng, n, rng.uniform(0.3, 0.95))
        if rng.uniform() < 0.3:
            cand = cand.map_gains(lambda i, j, g: Power(g.slope, 1.0 + rng.uniform(-0.2, 0.2)) if g.slope else g)
        if verify_cycles(cand, ALPHA).status != VERIFIED:
            continue
        for _ in range(10):
            v = rng.uniform(0, 10, n) * (rng.uniform(size=n) < 0.8)
            w = _upward_fixed_point(cand, v)
            assert np.all(w <= apply_mu(cand, apply_gamma(cand, w), v) * (1 + 1e-12))
            bound = phi_bound(cand, ALPHA, v.max())
            ratio = w.max() / bound if bound > 0 else 0.0
            worst = max(worst, ratio)
            bad += int(w.max() > bound * (1 + 1e-12))
            instances += 1
    return [
        ("phi(1) = 2647.7", abs(phi1 - 2647.7) <= 0.1, f"{phi1!r}"),
        ("1000 bounded instances", bad == 0, f"{bad} violations, worst |w|/phi = {worst:.4f}"),
    ]


def criterion_4():
    rng = np.random.default_rng(SEED + 1)
    checked_dg = checked_gd = mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(2, 5))
        net = _random_linear(rng, n, rng.uniform(0.7, 1.6))
        if rng.uniform() < 0.5:
            net = net.map_gains(lambda i, j, g: Power(g.slope, rng.uniform(0.8, 1.25)) if g.slope else g)
        alpha = Linear(rng.uniform(0.01, 0.5))
        s = rng.uniform(0.01, 10, n)
        if np.all(D_after_gamma(net, alpha, s) >= s):
            checked_dg += 1
            w = apply_D_inv(net, alpha, s)
            mismatches += int(not dominates(gamma_after_D(net, alpha, w) * (1 + 1e-12), w))
        if np.all(gamma_after_D(net, alpha, s) >= s):
            checked_gd += 1
            t = apply_D(net, alpha, s)
            mismatches += int(not dominates(D_after_gamma(net, alpha, t) * (1 + 1e-12), t))
        # Perron direction of the linear part gives violations on unstable nets
        if net.is_linear():
            lin = verify_linear(net)
            if lin.rho >= 1.0 and lin.perron is not None and np.all(lin.perron > 0):
                p = lin.perron
                if np.all(D_after_gamma(net, alpha, p) >= p):
                    checked_dg += 1
                    w = apply_D_inv(net, alpha, p)
                    mismatches += int(not dominates(gamma_after_D(net, alpha, w) * (1 + 1e-12), w))
    return [
        ("violations sampled", checked_dg >= 50 and checked_gd >= 50, f"{checked_dg} D.G, {checked_gd} G.D"),
        ("all mapped", mismatches == 0, f"{mismatches} mismatches"),
    ]


def criterion_5():
    rng = np.random.default_rng(SEED + 2)
    grid = GridSpec().values()
    nets = cyc_fail = dom_fail = err = 0
    worst = np.inf
    while nets < 100:
        n = int(rng.integers(2, 6))
        net = _random_linear(rng, n, rng.uniform(0.3, 0.9))
        if SUM not in net.agg or verify_cycles(net, ALPHA).status != VERIFIED:
            continue
        nets += 1
        try:
            plan = etas_from_path(net, path_linear(net, ALPHA))
            t = sum_to_max(net, plan)
            a = alpha_from_etas(net, plan)
        except Exception:
            err += 1
            continue
        cyc_fail += int(verify_cycles(t, Zero()).status != VERIFIED)
        idx = rng.integers(0, len(grid), 1000)
        S = grid[idx, None] * rng.uniform(0, 1, (1000, n))
        lhs, rhs = apply_gamma(t, S), D_after_gamma(net, a, S)
        ok = lhs >= rhs * (1 - 1e-12)
        dom_fail += int(not np.all(ok))
        pos = rhs > 0
        if np.any(pos):
            worst = min(worst, float(np.min(lhs[pos] / rhs[pos])))
    return [
        ("pipeline ran", err == 0, f"{err} errors of 100"),
        ("all-max cycles < id", cyc_fail == 0, f"{cyc_fail} failures"),
        ("alpha dominated", dom_fail == 0, f"{dom_fail} failures, min ratio {worst:.12f}"),
    ]


def criterion_6():
    out = []
    for label, net in (("raw", example_network()), ("folded", example_network(eta=0.1))):
        v = validate_path(net, ALPHA, path_linear(net, ALPHA))
        out.append((f"{label} margin >= 0.005", v.ok and v.min_margin >= 0.005, f"{v.min_margin:.6f}"))
    try:
        path_linear(GainNetwork.from_slopes((SUM,) * 3, A_SUM), ALPHA)
        out.append(("all-sum errors", False, "no error"))
    except PathError as exc:
        out.append(("all-sum errors", True, str(exc)))
    return out


def criterion_7():
    model = read_spec(_data("example_mixed.ganet"))
    lnet = lyapunov_network(model.lyapunov)
    path = path_linear(lnet, ALPHA)
    phi, gate = gate_function(lnet, ALPHA, path)
    V = compose_V(path, model.lyapunov)
    rep = check_decrease(V, example_dynamics(), SampleSpec(samples=10_000, inputs=(0.0, 0.5, 1.0), seed=SEED),
                         gate=gate)
    return [
        ("10^4 gated samples", rep.gated == 10_000, f"{rep.gated} gated, {rep.excluded} excluded, {rep.ties} ties"),
        ("pass rate 100%", rep.pass_rate == 1.0, f"{rep.pass_rate:.4f}, worst ratio {rep.worst_ratio:.4f}"),
        ("gradient check", rep.gradient_rel_err <= 1e-6, f"{rep.gradient_rel_err:.2e} on {rep.gradient_checked}"),
    ]


def criterion_8():
    spec = example_dynamics()
    gs_net = gs_network_from_dynamics(spec)
    x0 = np.ones(3)
    target = np.array([3.690, 3.321, 2.989])
    one = integrate(spec, x0, InputSignal("const", 1.0), T=60.0, dt=1e-3)
    zero = integrate(spec, x0, InputSignal("const", 0.0), T=60.0, dt=1e-3)
    rel = np.abs(one.x[-1] - target) / target
    decay = np.abs(zero.x[-1]).max() / np.abs(x0).max()
    gs = [check_estimates(tr, gs_net, ALPHA) for tr in (one, zero)]
    bad_spec = example_dynamics(1.2)
    bad = integrate(bad_spec, x0, InputSignal("const", 0.0), T=60.0, dt=1e-3)
    flagged = check_estimates(bad, gs_network_from_dynamics(bad_spec), ALPHA).status == NOT_APPLICABLE
    ratio = rk4_order_ratio()
    halving = step_halving_error(spec, x0, InputSignal("const", 1.0), T=60.0, dt=1e-3)
    return [
        ("u=1 endpoint within 2%", bool(np.all(rel <= 0.02)), np.array2string(one.x[-1], precision=4)),
        ("u=0 |x(60)| <= 1e-3 |x(0)|", decay <= 1e-3, f"ratio {decay:.3e}"),
        ("GS bound holds", all(r.gs_holds for r in gs), ", ".join(f"{r.gs_margin:.4f}" for r in gs)),
        ("1.2 variant flagged", bad.diverging() and flagged, f"aborted={bad.aborted}"),
        ("RK4 order ~16", 15.0 <= ratio <= 17.0, f"{ratio:.3f}"),
        ("step halving <= 1e-6", halving <= 1e-6, f"{halving:.2e}"),
    ]


MALFORMED = [("truncated.ganet", 16, 1), ("bad_expr.ganet", 12, 15), ("unknown_key.ganet", 17, 1)]


def criterion_9():
    out = []
    for name in ("example_mixed", "example_sum_only", "example_unstable", "example_cascade", "example_power"):
        with open(_data(name + ".ganet"), encoding="utf-8") as fh:
            text = fh.read()
        m = parse_spec(text)
        printed = format_spec(m)
        out.append((f"{name} round trip", printed == text and model_equal(parse_spec(printed), m), ""))
    for fname, line, col in MALFORMED:
        try:
            read_spec(os.path.join(HERE, "data", fname))
            out.append((fname, False, "parsed"))
        except SpecError as exc:
            out.append((fname, (exc.line, exc.col) == (line, col), f"line {exc.line}, col {exc.col}"))
    return out


LIMITS = {1: 1.0, 2: 1.0, 3: 30.0, 4: 30.0, 5: 60.0, 6: 5.0, 7: 60.0, 8: 60.0, 9: 1.0}
CRITERIA = {k: globals()[f"criterion_{k}"] for k in LIMITS}


def evaluate(k):
    t0 = time.perf_counter()
    checks = CRITERIA[k]()
    elapsed = time.perf_counter() - t0
    checks.append((f"runtime < {LIMITS[k]:g} s", elapsed < LIMITS[k], f"{elapsed:.2f} s"))
    ok = all(c[1] for c in checks)
    failed = [f"{name} ({detail})" for name, good, detail in checks if not good]
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} [{elapsed:.2f} s]"
    if failed:
        line += " failed: " + "; ".join(failed)
    return ok, line, checks


@pytest.mark.parametrize("k", sorted(LIMITS))
def test_criterion(k, acceptance_lines):
    ok, line, checks = evaluate(k)
    acceptance_lines.append(line)
    print(line)
    for name, good, detail in checks:
        print(f"    {'ok  ' if good else 'FAIL'} {name}: {detail}")
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(k) for k in sorted(LIMITS)]
    for _, line, _ in results:
        print(line)
    sys.exit(0 if all(r[0] for r in results) else 1)
