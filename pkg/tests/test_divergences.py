import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

import oracles
from keycost import tensor_core as tc
from keycost.divergences import (
    devetak_winter_rate,
    dual_certificate_value,
    hypothesis_testing_divergence,
    kf_ensemble_value,
    max_relative_entropy,
    min_relative_entropy,
    neyman_pearson,
    relative_entropy,
    sandwiched_renyi,
    yield_cost_bounds,
)
from keycost.states import (
    Ensemble,
    SchmidtState,
    TwistingUnitary,
    make_max_entangled,
    make_private_state,
    random_gsir,
)
from keycost.tensor_core import RegisterState


def pair(rng, d, rank=None):
    return tc.random_density(d, rng, rank=rank), tc.random_density(d, rng)


def test_relative_entropy_matches_oracle(rng):
    for _ in range(30):
        d = int(rng.integers(2, 6))
        r, s = pair(rng, d, rank=int(rng.integers(1, d + 1)))
        assert relative_entropy(r, s).value == pytest.approx(oracles.relative_entropy(r, s), abs=1e-10)


def test_relative_entropy_support():
    r = np.diag([0.5, 0.5])
    s = np.diag([1.0, 0.0])
    assert relative_entropy(r, s).infinite
    assert relative_entropy(s, r).value == pytest.approx(1.0)
    assert relative_entropy(r, r).value == pytest.approx(0.0, abs=1e-12)


def test_commuting_closed_forms(rng):
    for _ in range(30):
        p = rng.dirichlet(np.ones(4))
        q = rng.dirichlet(np.ones(4))
        r, s = np.diag(p), np.diag(q)
        assert relative_entropy(r, s).value == pytest.approx(float(np.sum(p * np.log2(p / q))), abs=1e-10)
        assert max_relative_entropy(r, s).value == pytest.approx(float(np.log2(np.max(p / q))), abs=1e-10)
        for a in (0.5, 2.0):
            want = math.log2(np.sum(p**a * q ** (1 - a))) / (a - 1)
            assert sandwiched_renyi(r, s, a).value == pytest.approx(want, abs=1e-10)


def test_divergence_ordering(rng):
    for _ in range(30):
        d = int(rng.integers(2, 5))
        r, s = pair(rng, d)
        d_min = min_relative_entropy(r, s).value
        d_rel = relative_entropy(r, s).value
        d_max = max_relative_entropy(r, s).value
        assert d_min <= d_rel + 1e-10
        assert d_rel <= d_max + 1e-10
        # sandwiched Renyi tends to D as alpha -> 1 and grows with alpha
        assert sandwiched_renyi(r, s, 1 + 1e-6).value == pytest.approx(d_rel, abs=1e-4)
        assert sandwiched_renyi(r, s, 1.5).value <= sandwiched_renyi(r, s, 3.0).value + 1e-10
        assert sandwiched_renyi(r, s, 3.0).value <= d_max + 1e-10


def test_sandwiched_rejects_alpha_one():
    with pytest.raises(ValueError):
        sandwiched_renyi(np.eye(2) / 2, np.eye(2) / 2, 1.0)


def test_neyman_pearson_matches_sdp(rng):
    for _ in range(6):
        d = int(rng.integers(2, 5))
        r, s = pair(rng, d, rank=int(rng.integers(1, d + 1)))
        for eps in (0.0, 0.05, 0.3):
            lam, primal, _, dual = neyman_pearson(r, s, eps)
            # eps = 0 is ill-conditioned for the SDP; the support projector is optimal there
            want = 2.0 ** -oracles.d_min(r, s) if eps == 0 else oracles.neyman_pearson_sdp(r, s, eps)
            assert primal == pytest.approx(want, abs=1e-6)
            # the returned test is feasible
            w = np.linalg.eigvalsh(lam)
            assert w[0] >= -1e-10 and w[-1] <= 1 + 1e-10
            assert np.trace(lam @ r).real >= 1 - eps - 1e-9
            if dual is not None:
                assert dual <= primal + 1e-9


def test_neyman_pearson_commuting_lp(rng):
    for _ in range(30):
        p = rng.dirichlet(np.ones(4))
        q = rng.dirichlet(np.ones(4))
        eps = float(rng.uniform(0, 0.5))
        _, primal, _, _ = neyman_pearson(np.diag(p), np.diag(q), eps)
        assert primal == pytest.approx(oracles.neyman_pearson_lp(p, q, eps), abs=1e-7)
        assert primal == pytest.approx(oracles.neyman_pearson_greedy(p, q, eps), abs=1e-10)


def test_hypothesis_testing_monotone_in_eps(rng):
    r, s = pair(rng, 3)
    values = [hypothesis_testing_divergence(r, s, e).value for e in (0.0, 0.1, 0.2, 0.5)]
    assert values == sorted(values)


def test_hypothesis_testing_disjoint_support():
    r = np.diag([1.0, 0.0])
    s = np.diag([0.0, 1.0])
    assert hypothesis_testing_divergence(r, s, 0.0).infinite
    with pytest.raises(ValueError):
        neyman_pearson(r, s, 1.0)


def test_max_entangled_vs_dephased():
    for d in (2, 3):
        for eps in (0.0, 0.1, 0.3):
            v = hypothesis_testing_divergence(oracles.max_entangled(d), oracles.dephased_max_entangled(d), eps).value
            assert v == pytest.approx(math.log2(d) - math.log2(1 - eps), abs=1e-9)


def test_dual_certificate_default_and_infeasible(rng):
    g = random_gsir(2, 2, rng, "local")
    cert = dual_certificate_value(2, g.shield, 0.1)
    assert cert.feasible
    assert cert.value == pytest.approx(0.45)
    assert not dual_certificate_value(2, g.shield, 0.1, y=1.0).feasible
    with pytest.raises(ValueError):
        dual_certificate_value(2, g.shield, 1.5)
    with pytest.raises(ValueError):
        dual_certificate_value(2, g.shield, 0.1, y=-1)


def test_yield_cost_bracket():
    r = yield_cost_bounds(4, 0.2, 0.1)
    assert r.satisfied
    assert r.lhs == pytest.approx(2 - math.log2(1 / 0.8))
    assert r.rhs == pytest.approx(2)
    assert r.parameters["correction"] == pytest.approx(math.log2(1 / 0.7))
    with pytest.raises(ValueError):
        yield_cost_bounds(2, 0.6, 0.5)


def test_devetak_winter_on_pure_and_private_states(rng):
    key = SchmidtState.computational((0.3, 0.7))
    g = make_private_state(2, RegisterState.density(np.eye(1), (1, 1)), TwistingUnitary.trivial(2, 1))
    assert devetak_winter_rate(g) == pytest.approx(1.0, abs=1e-10)
    g2 = type(g)(key, g.shield, g.twist, g.shield_split)
    assert devetak_winter_rate(g2) == pytest.approx(oracles.shannon((0.3, 0.7)), abs=1e-10)


def test_kf_ensemble_value(rng):
    a = random_gsir(2, 2, rng, "local")
    b = random_gsir(2, 2, rng, "phase")
    e = Ensemble(((0.4, a), (0.6, b)))
    want = 0.4 * oracles.shannon(a.key.coeffs) + 0.6 * oracles.shannon(b.key.coeffs)
    assert kf_ensemble_value(e, e.mixture()) == pytest.approx(want)
    with pytest.raises(ValueError):
        kf_ensemble_value(e, a.matrix)


def test_kf_rejects_entangled_member():
    bell = make_max_entangled(2).as_density().relabel(["A'", "B'"])
    g = make_private_state(2, bell, TwistingUnitary.trivial(2, 4))
    with pytest.raises(ValueError):
        kf_ensemble_value(Ensemble(((1.0, g),)))


def test_result_json():
    r = relative_entropy(np.diag([0.5, 0.5]), np.diag([1.0, 0.0]))
    assert r.to_json()["value"] == "inf"
    assert_allclose(relative_entropy(np.eye(2) / 2, np.eye(2) / 2).to_json()["value"], 0.0, atol=1e-12)
