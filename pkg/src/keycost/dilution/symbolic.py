"""Symbolic branch-record engine for the dilution protocol.

Every operation in the protocol is a controlled permutation or a controlled
twist, so a branch of the superposition is fully described by classical
register contents plus, for each shield copy, the cells holding its two halves
and the word of twisting unitaries applied to it. Records are kept per key
value ``s`` (after the measurement, per announced ``x`` as well).

Cells hold a copy index or ``BOT``. Twist words are tuples of (symbol, sign)
in application order, with adjacent U_a U_a^dagger pairs cancelled.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from ..tensor_core import trace_norm_hermitian
from ..typicality import (
    BOT,
    BetaMap,
    PermutationPlan,
    all_sequences,
    build_permutation_plan,
    digit_add,
    digit_sub,
    digits_of,
    is_typical,
    value_of,
)
from .config import CapacityError, DilutionReport, ProtocolConfig

STEPWISE_RECORD_LIMIT = 1 << 16


class Step(str, enum.Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    S4 = "S4"
    S5 = "S5"
    S6 = "S6"
    PA = "PA"
    PEC = "PEC"
    IPA = "IPA"
    S8 = "S8"


ORDER = ("init",) + tuple(s.value for s in Step)


class StructuralError(RuntimeError):
    """A controlled operation found register contents it is not defined on."""


@dataclass(frozen=True)
class Record:
    amp: float
    regs: Mapping[str, object]

    def get(self, name: str):
        return self.regs[name]

    def with_regs(self, **updates) -> "Record":
        regs = dict(self.regs)
        regs.update(updates)
        return Record(self.amp, regs)


@dataclass(frozen=True)
class BranchState:
    stage: str
    records: tuple[Record, ...]
    weight: Fraction
    abort_mass: Fraction
    measured: bool = False
    outcomes: tuple[tuple[int, ...], ...] = ()
    teleported_cells: int = 0

    def norm(self) -> float:
        return float(sum(r.amp**2 for r in self.records))

    def by_outcome(self) -> dict[tuple[int, ...], list[Record]]:
        out: dict[tuple[int, ...], list[Record]] = {}
        for r in self.records:
            out.setdefault(r.get("A"), []).append(r)
        return out


def _push(word: tuple, sym: int, sign: int) -> tuple:
    if word and word[-1] == (sym, -sign):
        return word[:-1]
    return word + ((sym, sign),)


class SymbolicEngine:
    def __init__(self, cfg: ProtocolConfig, inject_fault: str | None = None):
        self.cfg = cfg
        self.n = cfg.n
        self.k = cfg.k
        self.L = cfg.l_max
        self.codec = cfg.codec
        self.inject_fault = inject_fault
        self.events: list[tuple] | None = None
        self._plans: dict[tuple, PermutationPlan] = {}
        self._betas: dict[tuple, BetaMap] = {}

    # --- helpers ---------------------------------------------------------

    def plan(self, s: tuple, s_hat: tuple) -> PermutationPlan:
        key = (s, s_hat)
        p = self._plans.get(key)
        if p is None:
            p = build_permutation_plan(s, s_hat, self.cfg.source)
            self._plans[key] = p
        return p

    def beta(self, x: tuple) -> BetaMap:
        b = self._betas.get(x)
        if b is None:
            b = BetaMap(self.codec, x)
            self._betas[x] = b
        return b

    def _blank(self) -> dict:
        n, L = self.n, self.L
        regs = {
            "Ap": tuple(range(n)),
            "Bp": tuple(range(n)),
            "At": (BOT,) * n,
            "Bt": (BOT,) * n,
            "TA": (BOT,) * L,
            "TB": (BOT,) * L,
            "loc": "alice",
        }
        for side in "AB":
            regs[f"SH_{side}"] = (0,) * n
            regs[f"SH1_{side}"] = (0,) * n
            regs[f"SOUT_{side}"] = (BOT,) * (n + L)
            regs[f"C_{side}"] = 1
        return regs

    def _event(self, *item):
        if self.events is not None:
            self.events.append(item)

    def initial_ancillas(self) -> dict:
        blank = self._blank()
        return {k: v for k, v in blank.items() if k not in ("Ap", "Bp")}

    # --- states ------------------------------------------------------------

    def initial_state(self) -> BranchState:
        """phi^{(x)n} on A'' next to the purified resource state, before step 1."""
        cfg = self.cfg
        count = cfg.d_n * self.k**self.n
        if count > STEPWISE_RECORD_LIMIT:
            raise CapacityError(f"stepwise run needs {count} records (limit {STEPWISE_RECORD_LIMIT})")
        probs = cfg.source.probs
        records = []
        for r in range(cfg.d_n):
            label = self.codec.label(r)
            words = tuple(((a, 1),) for a in label)
            rd = digits_of(r, self.k, cfg.code_length)
            for s in all_sequences(self.k, self.n):
                lam = math.prod(float(probs[a]) for a in s)
                regs = self._blank()
                regs.update({"A2": s, "A": rd, "B": rd, "W": words})
                records.append(Record(math.sqrt(lam / cfg.d_n), regs))
        return BranchState("init", tuple(records), Fraction(1), Fraction(0))

    def measured_state(self, outcomes: Sequence[tuple[int, ...]]) -> BranchState:
        """State right after step 4 restricted to the given announced codewords."""
        cfg = self.cfg
        mass = cfg.mass
        probs = cfg.source.probs
        records = []
        for x in outcomes:
            for s in cfg.typical.members:
                c = self.codec.encode(s)
                r = digit_sub(x, c, self.k)
                label = self.codec.label(value_of(r, self.k))
                lam = math.prod(float(probs[a]) for a in s)
                regs = self._blank()
                regs.update({"A2": c, "A": tuple(x), "B": r, "W": tuple(((a, 1),) for a in label)})
                records.append(Record(math.sqrt(lam / float(mass) / cfg.d_n), regs))
        return BranchState("S4", tuple(records), mass, 1 - mass, True, tuple(tuple(x) for x in outcomes))

    def branch_for(self, s: Sequence[int], s_hat: Sequence[int]) -> BranchState:
        """A one-record state after step 6 whose announced x makes beta_x(s) = s_hat."""
        s, s_hat = tuple(s), tuple(s_hat)
        x = digit_add(self.codec.encode(s_hat), self.codec.encode(s), self.k)
        if self.beta(x).apply(s) != s_hat:
            raise StructuralError("no announced outcome maps s to s_hat")
        regs = self._blank()
        regs.update({"A2": s, "A": x, "B": s, "W": tuple(((a, 1),) for a in s_hat)})
        return BranchState("S6", (Record(1.0, regs),), Fraction(1), Fraction(0), True, (x,))

    # --- steps -------------------------------------------------------------

    def run_step(self, state: BranchState, step: Step | str) -> BranchState:
        step = Step(step)
        expected = ORDER[ORDER.index(step.value) - 1]
        if state.stage != expected:
            raise StructuralError(f"step {step.value} needs stage {expected}, state is at {state.stage}")
        return getattr(self, f"_step_{step.value.lower()}")(state)

    def _step_s1(self, st: BranchState) -> BranchState:
        mass = self.cfg.mass
        keep = [r for r in st.records if is_typical(r.get("A2"), self.cfg.source)]
        scale = 1 / math.sqrt(float(mass))
        recs = tuple(Record(r.amp * scale, r.regs) for r in keep)
        return replace(st, stage="S1", records=recs, weight=mass, abort_mass=1 - mass)

    def _step_s2(self, st: BranchState) -> BranchState:
        recs = tuple(r.with_regs(A2=self.codec.encode(r.get("A2"))) for r in st.records)
        return replace(st, stage="S2", records=recs)

    def _step_s3(self, st: BranchState) -> BranchState:
        # the empty-set POVM outcome is the abort component carried in abort_mass
        recs = tuple(r.with_regs(A=digit_add(r.get("A"), r.get("A2"), self.k)) for r in st.records)
        return replace(st, stage="S3", records=recs)

    def _step_s4(self, st: BranchState) -> BranchState:
        groups = {}
        for r in st.records:
            groups.setdefault(r.get("A"), 0.0)
            groups[r.get("A")] += r.amp**2
        expected = 1.0 / self.cfg.d_n
        for x, p in groups.items():
            if abs(p - expected) > 1e-10:
                raise StructuralError(f"outcome {x} has probability {p}, expected {expected}")
        return replace(st, stage="S4", measured=True, outcomes=tuple(sorted(groups)))

    def _step_s5(self, st: BranchState) -> BranchState:
        recs = tuple(r.with_regs(B=digit_sub(r.get("A"), r.get("B"), self.k)) for r in st.records)
        return replace(st, stage="S5", records=recs)

    def _step_s6(self, st: BranchState) -> BranchState:
        recs = []
        for r in st.records:
            s_a = self.codec.decode(r.get("A2"))
            s_b = self.codec.decode(r.get("B"))
            if not isinstance(s_a, tuple) or not isinstance(s_b, tuple):
                raise StructuralError("decompression met a codeword outside the typical set")
            recs.append(r.with_regs(A2=s_a, B=s_b))
        return replace(st, stage="S6", records=tuple(recs))

    # PA ------------------------------------------------------------------

    def _pa_side(self, regs: dict, side: str):
        s = regs["A2"] if side == "A" else regs["B"]
        x = regs["A"]
        s_hat = self.beta(x).apply(s)
        sh = digit_add(regs[f"SH_{side}"], s_hat, self.k)
        sh1 = digit_add(regs[f"SH1_{side}"], s_hat, self.k)
        regs[f"SH_{side}"], regs[f"SH1_{side}"] = sh, sh1
        plan = self.plan(s, sh)
        joint = sh1 + regs[f"SOUT_{side}"]
        perm = plan.key_permutation()
        out = tuple(joint[p] for p in perm)
        regs[f"SH1_{side}"], regs[f"SOUT_{side}"] = out[: self.n], out[self.n:]
        prime, tilde, tel = ("Ap", "At", "TA") if side == "A" else ("Bp", "Bt", "TB")
        if any(c != BOT for c in regs[tilde]) or any(c != BOT for c in regs[tel]):
            raise StructuralError("PA targets must start empty")
        src = regs[prime]
        new_tilde = [BOT] * self.n
        new_tel = [BOT] * self.L
        for j, dest in plan.shield_moves():
            if dest < self.n:
                new_tilde[dest] = src[j]
            else:
                new_tel[dest - self.n] = src[j]
        regs[prime] = (BOT,) * self.n
        regs[tilde] = tuple(new_tilde)
        regs[tel] = tuple(new_tel)

    def _step_pa(self, st: BranchState) -> BranchState:
        recs = []
        for r in st.records:
            regs = dict(r.regs)
            self._pa_side(regs, "A")
            self._pa_side(regs, "B")
            recs.append(Record(r.amp, regs))
        return replace(st, stage="PA", records=tuple(recs))

    # PEC -----------------------------------------------------------------

    def _twist(self, regs: dict, k: int, sym: int, sign: int):
        if regs["loc"] != "bob":
            raise StructuralError("twist on T needs both halves with Bob")
        a, b = regs["TA"][k], regs["TB"][k]
        if a == BOT or a != b:
            raise StructuralError(f"T[{k}] halves hold copies {a} and {b}")
        words = list(regs["W"])
        words[a] = _push(words[a], sym, sign)
        regs["W"] = tuple(words)

    def _shift(self, c: int, sign: int = 1) -> int:
        return (c - 1 + sign) % self.L + 1

    def _step_pec(self, st: BranchState) -> BranchState:
        n, L = self.n, self.L
        recs = []
        for r in st.records:
            regs = dict(r.regs)
            regs["loc"] = "bob"  # Alice teleports T_A' to Bob
            if regs["C_B"] != 1:
                raise StructuralError("Bob's counter must start at 1")
            s = regs["B"]
            s_cor = regs["SOUT_B"][:n]
            s_err = regs["SOUT_B"][n:]
            for k in range(L):
                if s_err[k] != BOT:
                    self._twist(regs, k, s_err[k], -1)
            c = 1
            for i in range(n):
                if s_cor[i] == BOT:
                    sym = s[i]
                    if self.inject_fault == "pec_label":
                        sym = (sym + 1) % self.k if self.k > 1 else sym
                    self._twist(regs, c - 1, sym, 1)
                    c = self._shift(c)
                    self._event("PEC_shift", i + 1, c)
            regs["C_B"] = c
            regs["loc"] = "alice"  # Bob teleports it back
            for i in range(n):
                if s_cor[i] == BOT:
                    regs["C_B"] = self._shift(regs["C_B"], -1)
            recs.append(Record(r.amp, regs))
        return replace(st, stage="PEC", records=tuple(recs), teleported_cells=st.teleported_cells + 2 * L)

    # IPA -----------------------------------------------------------------

    def _ipa_side(self, regs: dict, side: str):
        n = self.n
        prime, tilde, tel = ("Ap", "At", "TA") if side == "A" else ("Bp", "Bt", "TB")
        if side == "A" and regs["loc"] != "alice":
            raise StructuralError("IPA needs T_A' back with Alice")
        s_cor = regs[f"SOUT_{side}"][:n]
        til = list(regs[tilde])
        t = list(regs[tel])
        c = regs[f"C_{side}"]
        if c != 1:
            raise StructuralError(f"counter C_{side} must start at 1")
        for i in range(n):
            if s_cor[i] == BOT:
                til[i], t[c - 1] = t[c - 1], til[i]
                self._event("IPA_swap", side, i + 1, c)
                c = self._shift(c)
        regs[prime], regs[tilde] = tuple(til), regs[prime]
        regs[tel] = tuple(t)
        for i in range(n):
            if s_cor[i] == BOT:
                c = self._shift(c, -1)
        regs[f"C_{side}"] = c
        s = regs["A2"] if side == "A" else regs["B"]
        plan = self.plan(s, regs[f"SH_{side}"])
        perm = plan.key_permutation()
        joint = regs[f"SH1_{side}"] + regs[f"SOUT_{side}"]
        back = [None] * len(joint)
        for p, q in enumerate(perm):
            back[q] = joint[p]
        regs[f"SH1_{side}"], regs[f"SOUT_{side}"] = tuple(back[:n]), tuple(back[n:])
        s_hat = self.beta(regs["A"]).apply(s)
        regs[f"SH1_{side}"] = digit_sub(regs[f"SH1_{side}"], s_hat, self.k)
        regs[f"SH_{side}"] = digit_sub(regs[f"SH_{side}"], s_hat, self.k)

    def _step_ipa(self, st: BranchState) -> BranchState:
        recs = []
        for r in st.records:
            regs = dict(r.regs)
            self._ipa_side(regs, "A")
            self._ipa_side(regs, "B")
            recs.append(Record(r.amp, regs))
        return replace(st, stage="IPA", records=tuple(recs))

    def _step_s8(self, st: BranchState) -> BranchState:
        # the rotation |s> -> |e_s>, |s> -> |f_s> is a fixed local unitary on the key labels
        recs = st.records
        if self.inject_fault == "label" and recs:
            r0 = recs[0]
            regs = dict(r0.regs)
            words = list(regs["W"])
            m = regs["Ap"][0]
            words[m] = words[m] + ((regs["A2"][0], 1),)
            regs["W"] = tuple(words)
            recs = (Record(r0.amp, regs),) + recs[1:]
        if self.inject_fault == "ancilla" and recs:
            recs = (recs[0].with_regs(C_A=self._shift(1)),) + recs[1:]
        return replace(st, stage="S8", records=recs)

    def run(self, state: BranchState, steps: Iterable[Step], trace: Callable | None = None) -> BranchState:
        for step in steps:
            state = self.run_step(state, step)
            if trace is not None:
                trace(step.value, state)
        return state


# --- inspection ------------------------------------------------------------------


@dataclass
class RecordCheck:
    ancilla_ok: bool
    label_exact: bool
    copy_exact: bool
    problems: list[str] = field(default_factory=list)


def check_record(engine: SymbolicEngine, rec: Record) -> RecordCheck:
    regs = rec.regs
    problems = []
    init = engine.initial_ancillas()
    for name, value in init.items():
        if regs[name] != value:
            problems.append(f"ancilla {name}={regs[name]!r} (initial {value!r})")
    ancilla_ok = not problems
    s, s_b = regs["A2"], regs["B"]
    label_exact = s == s_b
    if not label_exact:
        problems.append("key registers disagree")
    copy_exact = True
    for i in range(engine.n):
        a, b = regs["Ap"][i], regs["Bp"][i]
        if a == BOT or a != b:
            label_exact = False
            problems.append(f"position {i} holds copies {a}/{b}")
            continue
        if regs["W"][a] != ((s[i], 1),):
            label_exact = False
            problems.append(f"position {i} twisted by {regs['W'][a]!r}, key symbol {s[i]}")
        if a != i:
            copy_exact = False
    return RecordCheck(ancilla_ok, label_exact, copy_exact, problems)


def label_signature(rec: Record) -> tuple:
    regs = rec.regs
    labels = tuple(regs["W"][m] if m != BOT else None for m in regs["Ap"])
    anc = tuple((k, regs[k]) for k in sorted(regs) if k not in ("A", "A2", "B", "W", "Ap", "Bp"))
    return (regs["A2"], regs["B"], labels, anc)


def copy_signature(rec: Record) -> tuple:
    return label_signature(rec) + (rec.regs["Ap"], rec.regs["Bp"])


@dataclass
class Comparison:
    d_exact: float | None
    d_typical: float | None
    label_exact: bool
    copy_exact: bool
    ancilla_restored: bool
    x_independent: bool
    x_independent_copy: bool
    structural_failures: list[str]
    bound_ok: bool | None = None


def exact_distance_closed_form(mass: float) -> float:
    """Trace distance between N|t><t| + (1-N)|0><0| and |psi><psi| with <t|psi> = sqrt(N)."""
    e = 1.0 - mass
    return 0.5 * (e + math.sqrt(e * (1 + 3 * mass)))


def _outcome_vectors(engine: SymbolicEngine, st: BranchState):
    index = engine.cfg.typical.rank
    vecs = {}
    for x, recs in st.by_outcome().items():
        v = np.zeros(len(index))
        for r in recs:
            v[index[r.get("A2")]] += r.amp
        norm = np.linalg.norm(v)
        vecs[x] = v / norm if norm > 0 else v
    return vecs


def compare_to_target(engine: SymbolicEngine, st: BranchState) -> Comparison:
    """Distances to the typical target and to gamma(psi)^{(x)n}.

    Only meaningful when every record is label-exact with restored ancillas;
    otherwise the structural failures are returned and no distance is given.
    """
    cfg = engine.cfg
    failures: list[str] = []
    label_exact = copy_exact = ancilla_ok = True
    for r in st.records:
        chk = check_record(engine, r)
        label_exact &= chk.label_exact
        copy_exact &= chk.copy_exact
        ancilla_ok &= chk.ancilla_ok
        if chk.problems:
            failures.append(f"s={r.get('A2')} x={r.get('A')}: " + "; ".join(chk.problems[:3]))
    groups = st.by_outcome()
    sigs = {x: sorted((label_signature(r), round(r.amp, 12)) for r in recs) for x, recs in groups.items()}
    csigs = {x: sorted((copy_signature(r), round(r.amp, 12)) for r in recs) for x, recs in groups.items()}
    first = next(iter(sigs.values()))
    x_ind = all(v == first for v in sigs.values())
    cfirst = next(iter(csigs.values()))
    x_ind_copy = all(v == cfirst for v in csigs.values())
    if not (label_exact and ancilla_ok):
        return Comparison(None, None, label_exact, copy_exact, ancilla_ok, x_ind, x_ind_copy, failures)
    mass = float(cfg.mass)
    probs = cfg.source.probs
    t = np.array([math.sqrt(math.prod(float(probs[a]) for a in s) / mass) for s in cfg.typical.members])
    vecs = list(_outcome_vectors(engine, st).values())
    # work in span{v_x, t}
    q, _ = np.linalg.qr(np.stack(vecs + [t], axis=1))
    m = sum(np.outer(q.T @ v, q.T @ v) for v in vecs) / len(vecs)
    tt = q.T @ t
    d_typical = mass * 0.5 * trace_norm_hermitian(m - np.outer(tt, tt))
    dim = q.shape[1] + 2
    out = np.zeros((dim, dim))
    out[: q.shape[1], : q.shape[1]] = mass * m
    out[-1, -1] = 1 - mass
    w = np.zeros(dim)
    w[: q.shape[1]] = math.sqrt(mass) * tt
    w[-2] = math.sqrt(max(1 - mass, 0.0))
    d_exact = 0.5 * trace_norm_hermitian(out - np.outer(w, w))
    bound_ok = d_exact <= d_typical + 3 * math.sqrt(max(1 - mass, 0.0)) + 1e-9
    return Comparison(d_exact, d_typical, label_exact, copy_exact, ancilla_ok, x_ind, x_ind_copy, failures, bound_ok)


PROTOCOL_STEPS = (Step.PA, Step.PEC, Step.IPA, Step.S8)
ALL_STEPS = tuple(Step)


def run_symbolic(
    cfg: ProtocolConfig,
    stepwise: bool = False,
    inject_fault: str | None = None,
    trace: Callable | None = None,
) -> tuple[BranchState, Comparison]:
    engine = SymbolicEngine(cfg, inject_fault)
    if stepwise:
        state = engine.run(engine.initial_state(), ALL_STEPS, trace)
    else:
        state = engine.measured_state(cfg.outcomes())
        if trace is not None:
            trace("S4", state)
        state = engine.run(state, (Step.S5, Step.S6) + PROTOCOL_STEPS, trace)
    return state, compare_to_target(engine, state)


def report_from(cfg: ProtocolConfig, state: BranchState, cmp: Comparison, backend: str = "symbolic") -> DilutionReport:
    da = cfg.shield_dims[0]
    notes = []
    if cmp.label_exact and not cmp.copy_exact and not cfg.shield_is_pure:
        notes.append("mixed shield with copies permuted: label-level exactness only")
    return DilutionReport(
        backend=backend,
        n=cfg.n,
        delta=str(cfg.delta),
        d_n=cfg.d_n,
        code_length=cfg.code_length,
        key_bits_consumed=cfg.codec.key_bits,
        eta=cfg.codec.eta,
        l_max=cfg.l_max,
        ebit_cells=state.teleported_cells,
        ebit_cell_dim=da + 1,
        ebits_qubit_equivalent=state.teleported_cells * math.log2(da + 1),
        ebits_nominal=cfg.nominal_ebits,
        typical_mass=str(cfg.mass),
        failure_probability=float(state.abort_mass),
        outcomes_checked=len(state.outcomes),
        outcomes_total=cfg.d_n,
        label_exact=cmp.label_exact,
        copy_exact=cmp.copy_exact,
        ancilla_restored=cmp.ancilla_restored,
        x_independent=cmp.x_independent,
        x_independent_copy=cmp.x_independent_copy,
        trace_distance_to_target=cmp.d_exact,
        trace_distance_typical=cmp.d_typical,
        structural_failures=cmp.structural_failures[:20],
        notes=notes,
    )
