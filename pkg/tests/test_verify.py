import numpy as np
import pytest

from iss_smallgain.kfun import Linear, Zero
from iss_smallgain.network import MAX, SUM, GainNetwork, apply_gamma, apply_mu, dominates, gamma_after_D
from iss_smallgain.verify import (
    FALSIFIED,
    INCONCLUSIVE,
    VERIFIED,
    SearchSpec,
    decide,
    falsify,
    find_alpha,
    least_bound_point,
    phi_bound,
    spectral_radius,
    verify_cycles,
    verify_linear,
)

A_SUM = [[0, 0, 0.9], [0.9, 0, 0.9], [0, 0.9, 0]]


def _rho_oracle():
    # characteristic polynomial of A_SUM: l^3 - 0.81 l - 0.729
    roots = np.roots([1.0, 0.0, -0.81, -0.729])
    return max(r.real for r in roots if abs(r.imag) < 1e-12)


def test_verify_cycles_example(net_folded):
    cert = verify_cycles(net_folded, Linear(0.1))
    assert cert.status == VERIFIED
    margins = sorted(c["margin"] for c in cert.evidence["cycles"])
    assert margins[0] == pytest.approx(0.970299, abs=1e-9)
    assert margins[1] == pytest.approx(0.9801, abs=1e-9)
    assert cert.evidence["label"] == "grid-verified"


def test_verify_cycles_identity_cycle():
    net = GainNetwork.from_slopes((MAX, MAX), [[0, 1.0], [1.0, 0]])
    cert = verify_cycles(net, Linear(0.1))
    assert cert.status == FALSIFIED
    assert cert.witness is not None
    assert dominates(gamma_after_D(net, Linear(0.1), cert.witness), cert.witness)


def test_verify_cycles_acyclic():
    net = GainNetwork.from_slopes((SUM, SUM, MAX), [[0, 0, 0], [5.0, 0, 0], [0, 3.0, 0]])
    cert = verify_cycles(net, Linear(0.1))
    assert cert.status == VERIFIED
    assert cert.evidence["cycles"] == []


def test_cycle_cap_inconclusive():
    n = 6
    A = np.full((n, n), 0.1)
    np.fill_diagonal(A, 0)
    cert = verify_cycles(GainNetwork.from_slopes((MAX,) * n, A), Linear(0.1), cap=5)
    assert cert.status == INCONCLUSIVE
    assert "cap" in cert.evidence["diagnostic"]


def test_verify_linear_examples():
    lin = verify_linear(GainNetwork.from_slopes((SUM,) * 3, A_SUM))
    assert lin.rho == pytest.approx(_rho_oracle(), abs=1e-9)
    assert lin.rho == pytest.approx(1.1922, abs=1e-3)
    assert lin.rho > 1.19 and not lin.sum_condition
    zero = verify_linear(GainNetwork.from_slopes((SUM,) * 2, np.zeros((2, 2))))
    assert zero.rho == 0.0 and zero.sum_condition
    two = verify_linear(GainNetwork.from_slopes((SUM,) * 2, [[0, 0.9], [0.9, 0]]))
    assert two.rho == pytest.approx(0.9, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_spectral_radius_against_eig(seed):
    A = np.random.default_rng(seed).uniform(0, 1, (5, 5))
    rho, v = spectral_radius(A)
    assert rho == pytest.approx(max(abs(np.linalg.eigvals(A))), rel=1e-8)
    assert np.allclose(A @ v, rho * v, rtol=1e-6, atol=1e-9)


def test_falsify_examples(net):
    all_sum = GainNetwork.from_slopes((SUM,) * 3, A_SUM)
    w = falsify(all_sum, Linear(0.1))
    assert w is not None
    assert np.all(apply_gamma(all_sum, w * 1.1) >= w)
    assert falsify(net, Linear(0.1)) is None
    zero = GainNetwork.from_slopes((SUM, MAX), np.zeros((2, 2)))
    assert falsify(zero, Linear(0.1)) is None


def test_falsify_agrees_with_log_grid(net):
    # exhaustive 21^3 log grid on [1e-3, 1e3]^3 finds no violation either
    g = np.geomspace(1e-3, 1e3, 21)
    S = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    assert not np.any(dominates(gamma_after_D(net, Linear(0.1), S), S))


def test_falsify_seed_reproducible(monkeypatch):
    all_sum = GainNetwork.from_slopes((SUM,) * 3, A_SUM)
    monkeypatch.setenv("ISS_SG_SEED", "7")
    a = falsify(all_sum, Linear(0.1))
    b = falsify(all_sum, Linear(0.1))
    assert np.array_equal(a, b)


def test_phi_bound_hand_oracle(net):
    phi, its = phi_bound(net, Linear(0.1), 1.0, return_iterates=True)
    expected = [[1, 1, 1], [20.9, 1, 1], [239.8, 18.81, 1], [2647.7, 215.82, 16.929]]
    for got, want in zip(its, expected):
        assert np.allclose(got, want, rtol=1e-12)
    assert phi == pytest.approx(2647.7, abs=1e-9)


def test_phi_bound_trivial_cases():
    zero = GainNetwork.from_slopes((MAX, MAX), np.zeros((2, 2)))
    assert phi_bound(zero, Linear(0.5), 3.0) == pytest.approx(3.0)
    cyc = GainNetwork.from_slopes((MAX, MAX), [[0, 0.9], [0.9, 0]])
    assert phi_bound(cyc, Linear(0.5), 1.0) == pytest.approx(1.0)


def test_phi_bound_monotone_and_above_identity(net):
    r = np.geomspace(1e-3, 1e3, 50)
    phi = phi_bound(net, Linear(0.1), r)
    assert np.all(np.diff(phi) > 0)
    assert np.all(phi >= r)


def test_bound_point_below_phi(net, rng):
    for _ in range(50):
        v = rng.uniform(0, 5, 3)
        w = least_bound_point(net, v)
        assert np.all(w <= apply_mu(net, apply_gamma(net, w), v) * (1 + 1e-12))
        assert w.max() <= phi_bound(net, Linear(0.1), v.max())


@pytest.mark.parametrize("seed", range(10))
def test_linear_sum_consistency(seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0, 1, (4, 4))
    np.fill_diagonal(A, 0)
    rho = max(abs(np.linalg.eigvals(A)))
    for target in (0.8, 1.25):
        B = A * target / rho
        net = GainNetwork.from_slopes((SUM,) * 4, B)
        lin = verify_linear(net)
        # alpha small enough not to matter for rho = 0.8: (1 + 0.01) * 0.8 < 1
        w = falsify(net, Linear(0.01))
        assert lin.sum_condition == (w is None)


def test_find_alpha_and_decide(net_folded):
    cert, attempts = find_alpha(net_folded, (1.0, 0.5, 0.1))
    assert cert.status == VERIFIED
    assert attempts[-1] == {"alpha": "0.1*r", "status": VERIFIED}
    assert attempts[0]["status"] == FALSIFIED
    all_sum = GainNetwork.from_slopes((SUM,) * 3, A_SUM)
    c = decide(all_sum, Linear(0.1), search=SearchSpec(rays=64))
    assert c.status == FALSIFIED and c.recheck(all_sum)
    assert c.evidence["rho"] == pytest.approx(1.1922, abs=1e-3)


def test_certificate_json(net_folded):
    js = verify_cycles(net_folded, Linear(0.1)).to_json()
    assert js["status"] == "verified" and js["alpha"] == "0.1*r" and js["witness"] is None


def test_zero_alpha_rejected_structure():
    # a zero robustness function is allowed for all-max networks
    net = GainNetwork.from_slopes((MAX, MAX), [[0, 0.5], [0.5, 0]])
    assert verify_cycles(net, Zero()).status == VERIFIED


@pytest.mark.parametrize("A,rho", [
    ([[0, 0.96], [0, 0]], 0.0),                                  # acyclic
    ([[0, 1.0], [1.0, 0]], 1.0),                                 # period two
    ([[0, 2.0, 0, 0], [0.5, 0, 0, 0], [1.0, 0, 0, 3.0], [0, 0, 3.0, 0]], 3.0),  # two blocks
    ([[0, 0, 1.0], [1.0, 0, 0], [0, 1.0, 0]], 1.0),              # period three
])
def test_spectral_radius_reducible_and_periodic(A, rho):
    A = np.array(A, dtype=float)
    r, v = spectral_radius(A)
    assert r == pytest.approx(rho, abs=1e-9)
    assert np.all(v >= 0) and v.sum() == pytest.approx(1.0)
    assert np.allclose(A @ v, r * v, atol=1e-8)
