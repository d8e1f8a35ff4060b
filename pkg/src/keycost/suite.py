"""Named invariant checks driven by ``keycost verify``.

Each check takes a seeded generator and returns BoundReport records whose
``satisfied`` flags decide the suite outcome. Check seeds come from
SeedSequence(root, spawn_key=(index,)), so the order of execution does not
matter and serial and parallel runs agree.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from . import tensor_core as tc
from .dilution import ProtocolConfig, dense_oracle_run, run_protocol
from .divergences import (
    BoundReport,
    devetak_winter_rate,
    dual_certificate_value,
    hypothesis_testing_divergence,
    kf_ensemble_value,
    min_relative_entropy,
    neyman_pearson,
    relative_entropy,
    yield_cost_bounds,
)
from .states import (
    Ensemble,
    GeneralizedPrivateState,
    Irreducibility,
    SchmidtState,
    TwistingUnitary,
    check_strict_irreducibility,
    dephased_max_entangled,
    make_flower_state,
    make_max_entangled,
    random_gsir,
    sigma_ansatz,
    tensor_sir,
)
from .tensor_core import RegisterState
from .typicality import (
    BetaMap,
    Codec,
    SourceSpec,
    build_permutation_plan,
    check_size_bounds,
    counts,
    digits_of,
    enumerate_typical_set,
    typical_mass,
    typical_size,
)

WORKED_S = "bccbdbaac"
WORKED_S_HAT = "cbbccdadc"


def child_rng(root: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(root, spawn_key=(index,)))


def binary_entropy(p: float) -> float:
    return -(p * math.log2(p) + (1 - p) * math.log2(1 - p))


def with_key(g: GeneralizedPrivateState, key: SchmidtState) -> GeneralizedPrivateState:
    return GeneralizedPrivateState(key, g.shield, g.twist, g.shield_split)


def gsir_instances(rng: np.random.Generator, count: int, max_dk: int = 4, max_ds: int = 3) -> list:
    out = []
    for _ in range(count):
        out.append(random_gsir(int(rng.integers(2, max_dk + 1)), int(rng.integers(1, max_ds + 1)), rng))
    return out


# --- checks -------------------------------------------------------------------


def check_entropy_identity(rng, fault=None):
    errs = [abs(g.key_entropy() - g.key.entropy) for g in gsir_instances(rng, 200)]
    return [BoundReport.check("entropy_identity", max(errs), 1e-9, {"instances": len(errs)})]


def check_er_ansatz(rng, fault=None):
    errs = []
    for g in gsir_instances(rng, 200):
        errs.append(abs(relative_entropy(g.expanded(), sigma_ansatz(g)).value - g.key.entropy))
    fourier = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
    flower = make_flower_state(2, fourier)
    fv = relative_entropy(flower.expanded(), sigma_ansatz(flower)).value
    return [
        BoundReport.check("er_ansatz", max(errs), 1e-9, {"instances": len(errs)}),
        BoundReport.check("er_ansatz_flower", abs(fv - 1.0), 1e-9, {"value": fv}),
    ]


def check_devetak_winter(rng, fault=None):
    errs = [abs(devetak_winter_rate(g) - g.key.entropy) for g in gsir_instances(rng, 100)]
    return [BoundReport.check("devetak_winter", max(errs), 1e-8, {"instances": len(errs)})]


def _exactness_runs(rng, fault):
    runs = []
    for ds in (1, 2):
        for n in range(1, 11):
            g = with_key(random_gsir(2, ds, rng, "local") if ds > 1 else _trivial_shield(2), SchmidtState.uniform(2))
            cfg = ProtocolConfig.from_state(g, n, 1, seed=int(rng.integers(2**31)))
            runs.append((ds, n, run_protocol(cfg, inject_fault=fault)))
    return runs


def _trivial_shield(k: int) -> GeneralizedPrivateState:
    shield = RegisterState.density(np.eye(1), (1, 1))
    return GeneralizedPrivateState(SchmidtState.uniform(k), shield, TwistingUnitary.trivial(k, 1), (1, 1))


def check_dilution(rng, fault=None):
    dense_cfg = ProtocolConfig.from_state(_trivial_shield(2), 2, 1, backend="dense")
    dense = dense_oracle_run(dense_cfg, "end_to_end")
    runs = _exactness_runs(rng, fault)
    worst, broken, bad_anc, bad_x = 0.0, [], 0, 0
    for ds, n, r in runs:
        if not r.label_exact or r.trace_distance_to_target is None:
            broken.append(f"d_s={ds} n={n}: " + "; ".join(r.structural_failures[:1]))
            worst = 1.0
        else:
            worst = max(worst, r.trace_distance_to_target)
        bad_anc += not r.ancilla_restored
        bad_x += not r.x_independent
    return [
        BoundReport.check("dilution_exactness_dense", dense.d_exact, 1e-8, {"n": 2, "d_s": 1}),
        BoundReport.check(
            "dilution_exactness_symbolic",
            worst,
            1e-9,
            {"runs": len(runs), "structural_failures": len(broken), "first_failure": broken[0] if broken else ""},
        ),
        BoundReport.check("ancilla_restored", bad_anc + (not dense.ancilla_restored), 0, {"runs": len(runs) + 1}, tol=0),
        BoundReport.check("x_independent", bad_x + (not dense.x_independent), 0, {"runs": len(runs) + 1}, tol=0),
    ]


def check_rate_accounting(rng, fault=None):
    h = binary_entropy(0.25)
    eta = 0.1
    key = SchmidtState.computational((0.25, 0.75))
    g = with_key(_trivial_shield(2), key)
    worst, ebit_bad, rates = 0.0, 0, {}
    for n in range(4, 13):
        cfg = ProtocolConfig.from_state(g, n, "1/3", eta=eta, seed=n)
        r = run_protocol(cfg)
        rate = r.key_bits_consumed / n
        rates[str(n)] = rate
        worst = max(worst, h - rate, rate - (h + eta + 2 / n))
        ebit_bad += r.ebit_cells != 2 * math.ceil(2 * cfg.delta * n)
    return [
        BoundReport.check("rate_accounting", worst, 0.0, {"h": h, "eta": eta, **{f"rate_n{k}": v for k, v in rates.items()}}, tol=1e-12),
        BoundReport.check("ebit_ledger", ebit_bad, 0, {"cells_per_run": "2*ceil(2 delta n)"}, tol=0),
    ]


def check_beta_combinatorics(rng, fault=None):
    non_bijective = 0
    for probs, delta in ((("1/2", "1/2"), 1), (("1/4", "3/4"), 3)):
        for n in range(1, 9):
            codec = Codec.build(enumerate_typical_set(SourceSpec(("0", "1"), probs, n, delta)))
            for x in range(codec.size):
                non_bijective += not BetaMap(codec, digits_of(x, 2, codec.code_length)).is_bijective()
    f_excess = 0
    for probs, delta in ((("1/2", "1/2"), "1/4"), (("1/2", "1/2"), "1/2"), (("1/4", "3/4"), "1/3"), (("1/3", "1/3", "1/3"), "1/2")):
        for n in range(1, 11):
            spec = SourceSpec(tuple(str(i) for i in range(len(probs))), probs, n, delta)
            t = enumerate_typical_set(spec)
            if not len(t):
                continue
            # f depends on the two types only, so type pairs cover every sequence pair
            c = np.unique(np.array([counts(s, spec.k) for s in t.members]), axis=0)
            f = np.abs(c[:, None, :] - c[None, :, :]).sum(axis=2)
            f_excess = max(f_excess, int(f.max()) - spec.l_max)
    spec = SourceSpec(tuple("abcd"), ("1/4",) * 4, 9, "7/9")
    plan = build_permutation_plan(spec.parse(WORKED_S), spec.parse(WORKED_S_HAT), spec)
    return [
        BoundReport.check("beta_bijective", non_bijective, 0, {"alphabet": 2, "n_max": 8}, tol=0),
        BoundReport.check("mismatch_bound", f_excess, 0, {"n_max": 10}, tol=0),
        BoundReport.check("worked_example", abs(plan.f - 4) + abs(spec.l_max - 14), 0, {"f": plan.f, "l_max": spec.l_max}, tol=0),
    ]


def _classical_np(p: np.ndarray, q: np.ndarray, eps: float) -> float:
    res = linprog(
        q,
        A_ub=-p[None, :],
        b_ub=[-(1 - eps)],
        bounds=[(0, 1)] * len(p),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    return float(res.fun)


def check_hypothesis_testing(rng, fault=None):
    err0 = 0.0
    for k in range(100):
        d = int(rng.integers(2, 5))
        r = tc.random_density(d, rng, rank=int(rng.integers(1, d + 1)))
        s = tc.random_density(d, rng)
        dh = hypothesis_testing_divergence(r, s, 0.0)
        dm = min_relative_entropy(r, s)
        err0 = max(err0, abs(dh.value - dm.value))
    err_lp = 0.0
    for _ in range(100):
        p = rng.dirichlet(np.ones(4))
        q = rng.dirichlet(np.ones(4))
        eps = float(rng.uniform(0, 0.5))
        _, primal, _, _ = neyman_pearson(np.diag(p), np.diag(q), eps)
        err_lp = max(err_lp, abs(primal - _classical_np(p, q, eps)))
    phi = make_max_entangled(2).dm()
    v = hypothesis_testing_divergence(phi, dephased_max_entangled(2), 0.1).value
    want = 1 - math.log2(0.9)
    return [
        BoundReport.check("dh_zero_is_dmin", err0, 1e-9, {"pairs": 100}),
        BoundReport.check("neyman_pearson_vs_lp", err_lp, 1e-9, {"pairs": 100, "dim": 4}),
        BoundReport.check("dh_max_entangled", abs(v - want), 1e-7, {"value": v, "expected": want}),
    ]


def check_dual_certificate(rng, fault=None):
    out = []
    for d_k in (2, 3):
        for d_s in (1, 2):
            g = random_gsir(d_k, d_s, rng, "local") if d_s > 1 else _trivial_shield(d_k)
            g = with_key(g, SchmidtState.uniform(d_k))
            sigma = sigma_ansatz(g)
            for eps in (0.0, 0.1, 0.3):
                dh = hypothesis_testing_divergence(g.expanded(), sigma, eps)
                lhs = 2.0 ** (-dh.value) if not dh.infinite else 0.0
                cert = dual_certificate_value(d_k, g.shield, eps)
                params = {"d_k": d_k, "d_s": d_s, "eps": eps, "value": cert.value, "feasible": cert.feasible}
                out.append(BoundReport.check(f"dual_certificate[d_k={d_k},d_s={d_s},eps={eps}]", cert.value, lhs, params))
                yc = yield_cost_bounds(d_k, eps)
                out.append(BoundReport(f"yield_cost[d_k={d_k},d_s={d_s},eps={eps}]", yc.lhs, yc.rhs, yc.satisfied, yc.slack, yc.parameters))
    return out


def check_subadditivity(rng, fault=None):
    err, not_sir, ppt_only = 0.0, 0, 0
    for _ in range(50):
        ens = []
        for _ in range(2):
            d_k, d_s = int(rng.integers(2, 3)), int(rng.integers(1, 3))
            m = int(rng.integers(1, 3))
            w = rng.dirichlet(np.ones(m))
            members = tuple((float(w[i]), random_gsir(d_k, d_s, rng, "local")) for i in range(m))
            members = ((1 - sum(p for p, _ in members[1:]), members[0][1]),) + members[1:]
            ens.append(Ensemble(members))
        prod = ens[0].product(ens[1])
        direct = sum(p * g.key_entropy() for p, g in prod.members)
        total = kf_ensemble_value(ens[0]) + kf_ensemble_value(ens[1])
        err = max(err, abs(kf_ensemble_value(prod) - total), abs(direct - total))
        for _, g in prod.members:
            status = check_strict_irreducibility(g)
            not_sir += status is Irreducibility.ENTANGLED_CONDITIONAL
            ppt_only += status is Irreducibility.PPT_ONLY
    return [
        BoundReport.check("kf_subadditive", err, 1e-10, {"pairs": 50}),
        BoundReport.check("tensor_sir_irreducible", not_sir, 0, {"pairs": 50, "ppt_only": ppt_only}, tol=0),
    ]


def check_typicality(rng, fault=None):
    worst = -math.inf
    for probs, delta in ((("1/2", "1/2"), "1/5"), (("1/4", "3/4"), "1/3"), (("1/3", "1/3", "1/3"), "1/2")):
        for n in range(1, 15):
            spec = SourceSpec(tuple(str(i) for i in range(len(probs))), probs, n, delta)
            if typical_size(spec):
                r = check_size_bounds(spec)
                worst = max(worst, r.lhs - r.rhs)
    mass = typical_mass(SourceSpec(("0", "1"), ("1/2", "1/2"), 14, "1/5"))
    return [
        BoundReport.check("typical_size_upper", worst, 0.0, {"n_max": 14}, tol=1e-12),
        BoundReport.check("typical_mass", 0.99, float(mass), {"n": 14, "delta": "1/5", "mass": str(mass)}, tol=0),
    ]


CHECKS: dict[str, Callable] = {
    "entropy_identity": check_entropy_identity,
    "er_ansatz": check_er_ansatz,
    "devetak_winter": check_devetak_winter,
    "dilution": check_dilution,
    "rate_accounting": check_rate_accounting,
    "beta_combinatorics": check_beta_combinatorics,
    "hypothesis_testing": check_hypothesis_testing,
    "dual_certificate": check_dual_certificate,
    "subadditivity": check_subadditivity,
    "typicality": check_typicality,
}


@dataclass
class VerifySuite:
    seed: int
    checks: list[str]
    results: dict[str, list[BoundReport]] = field(default_factory=dict)

    @property
    def failed(self) -> list[str]:
        return [r.name for name in self.checks for r in self.results[name] if not r.satisfied]

    @property
    def passed(self) -> bool:
        return not self.failed

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "passed": self.passed,
            "failed": self.failed,
            "checks": [
                {"name": name, "results": [r.to_json() for r in self.results[name]]} for name in self.checks
            ],
        }


def run_suite(seed: int = 0, only: list[str] | None = None, skip: list[str] | None = None, fault: str | None = None, jobs: int = 1) -> VerifySuite:
    names = [n for n in CHECKS if (not only or n in only) and n not in (skip or [])]
    unknown = set(only or []) | set(skip or [])
    unknown -= set(CHECKS)
    if unknown:
        raise KeyError(f"unknown checks: {sorted(unknown)}")
    index = {name: i for i, name in enumerate(CHECKS)}

    def run(name):
        return name, CHECKS[name](child_rng(seed, index[name]), fault)

    suite = VerifySuite(seed, names)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(run, names))
    else:
        done = [run(n) for n in names]
    for name, res in done:
        suite.results[name] = res
    return suite
