"""Acceptance criteria, one test each, every one checked against an independent route.

Each test records a PASS/FAIL line that is printed in the pytest terminal
summary. Running this file directly prints the same lines.
"""

import functools
import math
from fractions import Fraction

import numpy as np
import pytest

import oracles
from conftest import CRITERIA
from keycost import cli
from keycost.dilution import ProtocolConfig, dense_oracle_run, run_protocol
from keycost.divergences import (
    devetak_winter_rate,
    dual_certificate_value,
    hypothesis_testing_divergence,
    kf_ensemble_value,
    min_relative_entropy,
    neyman_pearson,
    relative_entropy,
    yield_cost_bounds,
)
from keycost.states import (
    Ensemble,
    GeneralizedPrivateState,
    Irreducibility,
    SchmidtState,
    TwistingUnitary,
    check_strict_irreducibility,
    make_flower_state,
    random_gsir,
    sigma_ansatz,
)
from keycost.tensor_core import RegisterState, random_density
from keycost.typicality import (
    BetaMap,
    Codec,
    SourceSpec,
    build_permutation_plan,
    check_size_bounds,
    digits_of,
    enumerate_typical_set,
    typical_mass,
)

SEED = 7


def record(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2} {title}: {detail}"
    CRITERIA.append(line)
    print(line)
    assert ok, line


def gsir_set(seed, count, max_dk=4, max_ds=3):
    rng = np.random.default_rng(seed)
    return [random_gsir(int(rng.integers(2, max_dk + 1)), int(rng.integers(1, max_ds + 1)), rng) for _ in range(count)]


def trivial_shield(key):
    shield = RegisterState.density(np.eye(1), (1, 1))
    return GeneralizedPrivateState(key, shield, TwistingUnitary.trivial(key.rank, 1), (1, 1))


def uniform_key(g):
    k = SchmidtState.uniform(g.d_k)
    return GeneralizedPrivateState(k, g.shield, g.twist, g.shield_split)


def test_criterion_01_entropy_identity():
    worst = 0.0
    states = gsir_set(SEED, 200)
    for g in states:
        s_gamma = oracles.entropy(oracles.ptrace(g.matrix, g.dims, [0]))
        s_psi = oracles.shannon(g.key.coeffs)
        worst = max(worst, abs(s_gamma - s_psi), abs(g.key_entropy() - s_psi))
    record(1, "entropy identity", worst <= 1e-9, f"{len(states)} instances, max error {worst:.2e}")


def test_criterion_02_er_ansatz():
    worst = 0.0
    for g in gsir_set(SEED, 200):
        sigma = sigma_ansatz(g).data
        want = oracles.shannon(g.key.coeffs)
        lib = relative_entropy(g.expanded(), sigma_ansatz(g)).value
        ref = oracles.relative_entropy(g.matrix, sigma)
        worst = max(worst, abs(lib - want), abs(ref - want))
    hadamard = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
    flower = make_flower_state(2, hadamard)
    fv = oracles.relative_entropy(flower.matrix, sigma_ansatz(flower).data)
    fl = relative_entropy(flower.expanded(), sigma_ansatz(flower)).value
    ok = worst <= 1e-9 and abs(fv - 1) <= 1e-9 and abs(fl - 1) <= 1e-9
    record(2, "relative entropy ansatz", ok, f"max error {worst:.2e}, flower value {fl:.12f}")


def test_criterion_03_devetak_winter():
    worst = 0.0
    states = gsir_set(SEED + 1, 100)
    for g in states:
        worst = max(worst, abs(devetak_winter_rate(g) - oracles.shannon(g.key.coeffs)))
    record(3, "Devetak-Winter rate", worst <= 1e-8, f"{len(states)} instances, max error {worst:.2e}")


@functools.lru_cache(maxsize=None)
def exactness_runs():
    rng = np.random.default_rng(SEED)
    runs = []
    for d_s in (1, 2):
        for n in range(1, 11):
            if d_s == 1:
                g = trivial_shield(SchmidtState.uniform(2))
            else:
                g = uniform_key(random_gsir(2, 2, rng, "local"))
            runs.append((d_s, n, run_protocol(ProtocolConfig.from_state(g, n, 1))))
    return runs


@functools.lru_cache(maxsize=None)
def dense_run():
    g = trivial_shield(SchmidtState.uniform(2))
    cfg = ProtocolConfig.from_state(g, 2, 1, backend="dense")
    return g, dense_oracle_run(cfg, "end_to_end")


def test_criterion_04_dilution_exactness():
    g, dense = dense_run()
    target = oracles.gamma_power(g.matrix, g.dims, 2)
    d_dense = 0.5 * np.abs(np.linalg.eigvalsh(dense.output - target)).sum()
    worst, not_exact = 0.0, []
    for d_s, n, r in exactness_runs():
        if not r.label_exact or r.trace_distance_to_target is None:
            not_exact.append((d_s, n))
        else:
            worst = max(worst, r.trace_distance_to_target)
    ok = d_dense <= 1e-8 and dense.d_exact <= 1e-8 and not not_exact and worst <= 1e-9
    detail = f"dense n=2 distance {d_dense:.2e}, symbolic max {worst:.2e} over 20 runs, not label-exact {not_exact}"
    record(4, "dilution exactness", ok, detail)


def test_criterion_05_ancilla_and_x_independence():
    _, dense = dense_run()
    runs = exactness_runs()
    bad = [(d_s, n) for d_s, n, r in runs if not (r.ancilla_restored and r.x_independent)]
    ok = not bad and dense.ancilla_restored and dense.x_independent
    record(5, "ancilla restoration and x-independence", ok, f"{len(runs)} symbolic runs and 1 dense run, failing {bad}")


def test_criterion_06_rate_accounting():
    h = -(0.25 * math.log2(0.25) + 0.75 * math.log2(0.75))
    eta = 0.1
    g = trivial_shield(SchmidtState.computational((0.25, 0.75)))
    bad = []
    for n in range(4, 13):
        delta = Fraction(1, 3)
        r = run_protocol(ProtocolConfig.from_state(g, n, delta, eta=eta, seed=n))
        rate = r.key_bits_consumed / n
        if not h - 1e-12 <= rate <= h + eta + 2 / n + 1e-12:
            bad.append(("rate", n, rate))
        if r.ebit_cells != 2 * math.ceil(2 * delta * n) or r.ebits_nominal != math.ceil(4 * delta * n):
            bad.append(("ebits", n, r.ebit_cells, r.ebits_nominal))
    record(6, "rate accounting", not bad, f"h(1/4)={h:.6f}, n=4..12, violations {bad}")


def test_criterion_07_beta_and_permutations():
    # beta_x bijective: full codecs, so every x is a codeword
    non_bijective = 0
    checked = 0
    for probs, delta in ((("1/2", "1/2"), 1), (("1/4", "3/4"), 3)):
        for n in range(1, 9):
            codec = Codec.build(enumerate_typical_set(SourceSpec(("0", "1"), probs, n, delta)))
            for x in range(codec.size):
                b = BetaMap(codec, digits_of(x, 2, codec.code_length))
                image = {b.apply(s) for s in codec.typical.members}
                non_bijective += image != set(codec.typical.members)
                checked += 1
    # f(s, s_hat) from brute-force enumeration; f depends on the two types only
    f_excess = []
    for probs, delta in ((("1/2", "1/2"), "1/4"), (("1/2", "1/2"), "1/2"), (("1/4", "3/4"), "1/3"), (("1/3", "1/3", "1/3"), "1/2")):
        k = len(probs)
        for n in range(1, 11):
            members, _ = oracles.typical_by_brute_force(probs, n, delta)
            if not members:
                continue
            c = np.unique(np.array([[s.count(a) for a in range(k)] for s in members]), axis=0)
            f = int(np.abs(c[:, None, :] - c[None, :, :]).sum(axis=2).max())
            bound = math.ceil(2 * Fraction(delta) * n)
            if f > bound:
                f_excess.append((probs, delta, n, f, bound))
    spec = SourceSpec(tuple("abcd"), ("1/4",) * 4, 9, "7/9")
    plan = build_permutation_plan(spec.parse("bccbdbaac"), spec.parse("cbbccdadc"), spec)
    ok = non_bijective == 0 and not f_excess and plan.f == 4 and spec.l_max == 14
    detail = f"{checked} maps checked, {non_bijective} not bijective; f excess {f_excess}; example f={plan.f}, L_max={spec.l_max}"
    record(7, "beta and permutation combinatorics", ok, detail)


def test_criterion_08_hypothesis_testing():
    rng = np.random.default_rng(SEED)
    err0 = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 5))
        r = random_density(d, rng, rank=int(rng.integers(1, d + 1)))
        s = random_density(d, rng)
        dh = hypothesis_testing_divergence(r, s, 0.0).value
        err0 = max(err0, abs(dh - oracles.d_min(r, s)), abs(min_relative_entropy(r, s).value - oracles.d_min(r, s)))
    err_lp = 0.0
    for _ in range(100):
        p = rng.dirichlet(np.ones(4))
        q = rng.dirichlet(np.ones(4))
        eps = float(rng.uniform(0, 0.5))
        _, primal, _, _ = neyman_pearson(np.diag(p), np.diag(q), eps)
        err_lp = max(err_lp, abs(primal - oracles.neyman_pearson_greedy(p, q, eps)))
    v = hypothesis_testing_divergence(oracles.max_entangled(2), oracles.dephased_max_entangled(2), 0.1).value
    err_phi = abs(v - (1 - math.log2(0.9)))
    ok = err0 <= 1e-9 and err_lp <= 1e-9 and err_phi <= 1e-7
    record(8, "hypothesis testing", ok, f"D_h^0 vs D_min {err0:.2e}, NP vs LP {err_lp:.2e}, maximally entangled {err_phi:.2e}")


def test_criterion_09_dual_certificate_and_yield_cost():
    rng = np.random.default_rng(SEED)
    bad = []
    sdp_gap = 0.0
    for d_k in (2, 3):
        for d_s in (1, 2):
            if d_s == 1:
                g = trivial_shield(SchmidtState.uniform(d_k))
            else:
                g = uniform_key(random_gsir(d_k, d_s, rng, "local"))
            sigma = sigma_ansatz(g)
            for eps in (0.0, 0.1, 0.3):
                dh = hypothesis_testing_divergence(g.expanded(), sigma, eps)
                beta = 0.0 if dh.infinite else 2.0 ** (-dh.value)
                sdp = oracles.neyman_pearson_sdp(g.matrix, sigma.data, eps)
                sdp_gap = max(sdp_gap, abs(beta - sdp))
                cert = dual_certificate_value(d_k, g.shield, eps)
                if not (cert.feasible and beta >= (1 - eps) / d_k - 1e-9 and beta >= cert.value - 1e-9):
                    bad.append(("certificate", d_k, d_s, eps, beta))
                yc = yield_cost_bounds(d_k, eps)
                want = math.log2(d_k) - math.log2(1 / (1 - eps))
                if not (yc.satisfied and abs(yc.lhs - want) <= 1e-12 and abs(yc.slack - (math.log2(d_k) - want)) <= 1e-12):
                    bad.append(("bracket", d_k, d_s, eps))
    ok = not bad and sdp_gap <= 1e-5
    record(9, "dual certificate and yield cost", ok, f"12 settings, violations {bad}, SDP cross-check gap {sdp_gap:.1e}")


def test_criterion_10_subadditivity():
    rng = np.random.default_rng(SEED)
    err, not_sir = 0.0, 0
    for _ in range(50):
        ens = []
        for _ in range(2):
            d_s = int(rng.integers(1, 3))
            m = int(rng.integers(1, 3))
            w = rng.dirichlet(np.ones(m))
            w[0] = 1 - w[1:].sum()
            ens.append(Ensemble(tuple((float(w[i]), random_gsir(2, d_s, rng, "local")) for i in range(m))))
        prod = ens[0].product(ens[1])
        direct = sum(p * oracles.entropy(oracles.ptrace(g.matrix, g.dims, [0])) for p, g in prod.members)
        parts = sum(p * oracles.shannon(g.key.coeffs) for e in ens for p, g in e.members)
        err = max(err, abs(kf_ensemble_value(prod) - parts), abs(direct - parts))
        not_sir += sum(check_strict_irreducibility(g) is Irreducibility.ENTANGLED_CONDITIONAL for _, g in prod.members)
    ok = err <= 1e-10 and not_sir == 0
    record(10, "K_F subadditivity", ok, f"50 pairs, max error {err:.2e}, non-irreducible products {not_sir}")


# [DERIVED] exact mass at (uniform binary, delta=1/5, n=14), frozen from
# oracles.typical_by_brute_force: counts 6, 7, 8 of a symbol are typical.
TYPICAL_MASS_N14 = Fraction(4719, 8192)


def binary_typical_size(probs, n, delta):
    p, d = Fraction(probs[0]), Fraction(delta)
    return sum(math.comb(n, c) for c in range(n + 1) if abs(Fraction(c, n) - p) <= d * p and abs(Fraction(n - c, n) - (1 - p)) <= d * (1 - p))


def test_criterion_11_typicality():
    size_bad = []
    for probs, delta in ((("1/2", "1/2"), "1/5"), (("1/4", "3/4"), "1/3"), (("1/3", "1/3", "1/3"), "1/2")):
        h = oracles.shannon([float(Fraction(p)) for p in probs])
        for n in range(1, 15):
            spec = SourceSpec(tuple(str(i) for i in range(len(probs))), probs, n, delta)
            r = check_size_bounds(spec)
            size = binary_typical_size(probs, n, delta) if len(probs) == 2 else r.parameters["size"]
            if size != r.parameters["size"]:
                size_bad.append(("count", probs, n))
            elif size and math.log2(size) > n * h * (1 + float(Fraction(delta))) + 1e-12:
                size_bad.append(("bound", probs, n))
    mass = typical_mass(SourceSpec(("0", "1"), ("1/2", "1/2"), 14, "1/5"))
    ok = not size_bad and mass == TYPICAL_MASS_N14 and mass >= Fraction(99, 100)
    record(11, "typicality bounds", ok, f"size bound violations {size_bad}; mass at n=14 is {mass} = {float(mass):.4f}, required >= 0.99")


def test_criterion_11_mass_oracle_agrees():
    _, mass = oracles.typical_by_brute_force(("1/2", "1/2"), 14, "1/5")
    assert mass == TYPICAL_MASS_N14


def test_criterion_12_determinism(tmp_path):
    paths = [tmp_path / f"verify{i}.json" for i in range(2)]
    codes = [cli.main(["verify", "--seed", "3", "--out", str(p)]) for p in paths]
    same = paths[0].read_bytes() == paths[1].read_bytes()
    record(12, "determinism", same and codes[0] == codes[1], f"exit codes {codes}, reports byte-identical {same}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
