"""Dense micro-scale oracle for the dilution protocol.

The state is an explicit vector over basis configurations: classical registers
plus one cell per shield half (A', B', A~', B~', T_A', T_B') and one purifying
cell E per copy. Shield cells carry genuine amplitudes; twists act as matrices
on cell pairs, extended by the identity on the empty symbol. Each step is
applied gate by gate to the vector, independently of the branch-record engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .. import tensor_core as tc
from ..typicality import (
    BOT,
    BetaMap,
    all_sequences,
    build_permutation_plan,
    digit_add,
    digit_sub,
    digits_of,
    is_typical,
    value_of,
)
from .config import CapacityError, ProtocolConfig
from .symbolic import BranchState, Step, SymbolicEngine

CLASSICAL = ("A2", "A", "B", "SH_A", "SH1_A", "SOUT_A", "C_A", "SH_B", "SH1_B", "SOUT_B", "C_B")
_CL = {name: i for i, name in enumerate(CLASSICAL)}
AMP_CLIP = 1e-14
SUPPORT_LIMIT = 1 << 18


class Layout:
    """Cell offsets: Ap, Bp, At, Bt (n each), TA, TB (L each), E (n)."""

    def __init__(self, n: int, l_max: int, da: int, db: int, de: int):
        self.n, self.L = n, l_max
        self.da, self.db, self.de = da, db, de
        off = 0
        self.offset = {}
        for name, size in (("Ap", n), ("Bp", n), ("At", n), ("Bt", n), ("TA", l_max), ("TB", l_max), ("E", n)):
            self.offset[name] = off
            off += size
        self.size = off
        self.bot_a, self.bot_b = da, db

    def idx(self, name: str, i: int) -> int:
        return self.offset[name] + i

    def empty_cells(self) -> list[int]:
        cells = [0] * self.size
        for name in ("Ap", "At", "TA"):
            for i in range(self.n if name != "TA" else self.L):
                cells[self.idx(name, i)] = self.bot_a
        for name in ("Bp", "Bt", "TB"):
            for i in range(self.n if name != "TB" else self.L):
                cells[self.idx(name, i)] = self.bot_b
        return cells


def _extend(u: np.ndarray, da: int, db: int) -> np.ndarray:
    """U on A'B' (da*db) extended by the identity to (da+1)(db+1), empty = last index."""
    big = np.eye((da + 1) * (db + 1), dtype=complex)
    sub = [a * (db + 1) + b for a in range(da) for b in range(db)]
    big[np.ix_(sub, sub)] = u
    return big


@dataclass
class DenseState:
    layout: Layout
    amps: dict = field(default_factory=dict)

    def norm(self) -> float:
        return math.sqrt(sum(abs(a) ** 2 for a in self.amps.values()))

    def _guard(self):
        if len(self.amps) > SUPPORT_LIMIT:
            raise CapacityError(f"dense support {len(self.amps)} exceeds {SUPPORT_LIMIT}")

    def classical(self, fn: Callable[[list], None]) -> "DenseState":
        """Apply a classical reversible map to the register contents."""
        out = {}
        for (cl, cells), a in self.amps.items():
            regs = list(cl)
            fn(regs)
            key = (tuple(regs), cells)
            if key in out:
                raise ValueError("classical map is not injective on the support")
            out[key] = a
        return DenseState(self.layout, out)

    def move_cells(self, fn: Callable[[tuple, list], None]) -> "DenseState":
        """Permute cell contents under classical control."""
        out = {}
        for (cl, cells), a in self.amps.items():
            c = list(cells)
            fn(cl, c)
            key = (cl, tuple(c))
            if key in out:
                raise ValueError("cell permutation is not injective on the support")
            out[key] = a
        return DenseState(self.layout, out)

    def pair_unitary(self, chooser: Callable[[tuple], tuple[int, int, np.ndarray] | None]) -> "DenseState":
        """Apply chooser(cl) = (A cell, B cell, extended matrix) to each configuration."""
        lay = self.layout
        db1 = lay.db + 1
        out: dict = {}
        for (cl, cells), a in self.amps.items():
            pick = chooser(cl)
            if pick is None:
                out[(cl, cells)] = out.get((cl, cells), 0) + a
                continue
            ia, ib, m = pick
            col = cells[ia] * db1 + cells[ib]
            vec = m[:, col]
            for row in np.flatnonzero(np.abs(vec) > AMP_CLIP):
                c = list(cells)
                c[ia], c[ib] = divmod(int(row), db1)
                key = (cl, tuple(c))
                out[key] = out.get(key, 0) + a * vec[row]
        st = DenseState(lay, {k: v for k, v in out.items() if abs(v) > AMP_CLIP})
        st._guard()
        return st

    def project(self, keep: Callable[[tuple], bool]) -> tuple["DenseState", float]:
        kept = {k: v for k, v in self.amps.items() if keep(k[0])}
        p = sum(abs(v) ** 2 for v in kept.values())
        scale = 1 / math.sqrt(p) if p > 0 else 0.0
        return DenseState(self.layout, {k: v * scale for k, v in kept.items()}), p


class DenseProtocol:
    def __init__(self, cfg: ProtocolConfig, max_copies: int = 2):
        if cfg.n > max_copies:
            raise CapacityError(f"dense backend runs at most {max_copies} copies")
        self.cfg = cfg
        self.n, self.k, self.L = cfg.n, cfg.k, cfg.l_max
        da, db = cfg.shield_dims
        w, v = np.linalg.eigh(cfg.shield_base.data)
        keep = w > 1e-12
        self.phi_w = np.sqrt(w[keep])
        self.phi_v = v[:, keep]
        self.layout = Layout(self.n, self.L, da, db, int(keep.sum()))
        self.codec = cfg.codec
        blocks = cfg.twist.blocks
        self.twist = [_extend(u, da, db) for u in blocks]
        self.twist_dag = [_extend(u.conj().T, da, db) for u in blocks]

    # --- building blocks ----------------------------------------------------

    def copy_components(self, word: Sequence[tuple[int, int]] = ()) -> list[tuple[int, int, int, complex]]:
        """(a', b', e, amplitude) for the purified copy with a twist word applied."""
        lay = self.layout
        vec = self.phi_v * self.phi_w  # columns: e
        for sym, sign in word:
            u = self.cfg.twist.blocks[sym]
            vec = (u if sign > 0 else u.conj().T) @ vec
        out = []
        for ab in range(vec.shape[0]):
            a, b = divmod(ab, lay.db)
            for e in range(vec.shape[1]):
                if abs(vec[ab, e]) > AMP_CLIP:
                    out.append((a, b, e, vec[ab, e]))
        return out

    def initial(self) -> DenseState:
        cfg, lay, n = self.cfg, self.layout, self.n
        probs = cfg.source.probs
        base_cells = lay.empty_cells()
        shields = [[]]
        comps = self.copy_components()
        for i in range(n):
            nxt = []
            for partial in shields:
                for a, b, e, amp in comps:
                    nxt.append(partial + [(i, a, b, e, amp)])
            shields = nxt
        amps = {}
        count = cfg.d_n * self.k**n * len(shields)
        if count > SUPPORT_LIMIT:
            raise CapacityError(f"dense initial support {count} exceeds {SUPPORT_LIMIT}")
        for r in range(cfg.d_n):
            rd = digits_of(r, self.k, cfg.code_length)
            for s in all_sequences(self.k, n):
                lam = math.prod(float(probs[x]) for x in s)
                cl = [None] * len(CLASSICAL)
                cl[_CL["A2"]], cl[_CL["A"]], cl[_CL["B"]] = s, rd, rd
                for side in "AB":
                    cl[_CL[f"SH_{side}"]] = (0,) * n
                    cl[_CL[f"SH1_{side}"]] = (0,) * n
                    cl[_CL[f"SOUT_{side}"]] = (BOT,) * (n + self.L)
                    cl[_CL[f"C_{side}"]] = 1
                for sh in shields:
                    cells = list(base_cells)
                    amp = math.sqrt(lam / cfg.d_n)
                    for i, a, b, e, c in sh:
                        cells[lay.idx("Ap", i)] = a
                        cells[lay.idx("Bp", i)] = b
                        cells[lay.idx("E", i)] = e
                        amp = amp * c
                    amps[(tuple(cl), tuple(cells))] = amp
        st = DenseState(lay, amps)
        for i in range(n):
            st = st.pair_unitary(
                lambda cl, i=i: (
                    lay.idx("Ap", i),
                    lay.idx("Bp", i),
                    self.twist[self.codec.label(value_of(cl[_CL["A"]], self.k))[i]],
                )
            )
        return st

    # --- steps ----------------------------------------------------------------

    def s1(self, st: DenseState):
        return st.project(lambda cl: is_typical(cl[_CL["A2"]], self.cfg.source))

    def s2(self, st):
        def f(r):
            r[_CL["A2"]] = self.codec.encode(r[_CL["A2"]])

        return st.classical(f)

    def s3(self, st):
        def f(r):
            r[_CL["A"]] = digit_add(r[_CL["A"]], r[_CL["A2"]], self.k)

        return st.classical(f)

    def s4(self, st) -> dict:
        groups: dict = {}
        for key, a in st.amps.items():
            groups.setdefault(key[0][_CL["A"]], {})[key] = a
        out = {}
        for x, amps in groups.items():
            p = sum(abs(v) ** 2 for v in amps.values())
            out[x] = (p, DenseState(st.layout, {k: v / math.sqrt(p) for k, v in amps.items()}))
        return out

    def s5(self, st):
        def f(r):
            r[_CL["B"]] = digit_sub(r[_CL["A"]], r[_CL["B"]], self.k)

        return st.classical(f)

    def s6(self, st):
        def f(r):
            r[_CL["A2"]] = self.codec.decode(r[_CL["A2"]])
            r[_CL["B"]] = self.codec.decode(r[_CL["B"]])

        return st.classical(f)

    def _s_of(self, cl, side):
        return cl[_CL["A2"]] if side == "A" else cl[_CL["B"]]

    def _beta(self, cl, side):
        return BetaMap(self.codec, cl[_CL["A"]]).apply(self._s_of(cl, side))

    def _plan(self, cl, side):
        return build_permutation_plan(self._s_of(cl, side), cl[_CL[f"SH_{side}"]], self.cfg.source)

    def pa(self, st):
        lay, n = self.layout, self.n
        for side in "AB":
            def add(r, side=side):
                sh = self._beta(r, side)
                r[_CL[f"SH_{side}"]] = digit_add(r[_CL[f"SH_{side}"]], sh, self.k)
                r[_CL[f"SH1_{side}"]] = digit_add(r[_CL[f"SH1_{side}"]], sh, self.k)

            st = st.classical(add)

            def key_perm(r, side=side):
                perm = self._plan(r, side).key_permutation()
                joint = r[_CL[f"SH1_{side}"]] + r[_CL[f"SOUT_{side}"]]
                out = tuple(joint[p] for p in perm)
                r[_CL[f"SH1_{side}"]], r[_CL[f"SOUT_{side}"]] = out[:n], out[n:]

            st = st.classical(key_perm)
            prime, tilde, tel = ("Ap", "At", "TA") if side == "A" else ("Bp", "Bt", "TB")
            bot = lay.bot_a if side == "A" else lay.bot_b

            def shield_perm(cl, c, side=side, prime=prime, tilde=tilde, tel=tel, bot=bot):
                plan = self._plan(cl, side)
                src = [c[lay.idx(prime, j)] for j in range(n)]
                for j in range(n):
                    c[lay.idx(prime, j)] = bot
                for j, dest in plan.shield_moves():
                    cell = lay.idx(tilde, dest) if dest < n else lay.idx(tel, dest - n)
                    if c[cell] != bot:
                        raise ValueError("shield permutation target not empty")
                    c[cell] = src[j]

            st = st.move_cells(shield_perm)
        return st

    def _shift(self, r, side, sign, i):
        if r[_CL[f"SOUT_{side}"]][i] == BOT:
            r[_CL[f"C_{side}"]] = (r[_CL[f"C_{side}"]] - 1 + sign) % self.L + 1

    def pec(self, st):
        lay, n = self.layout, self.n
        for k in range(self.L):
            def tau1(cl, k=k):
                e = cl[_CL["SOUT_B"]][n + k]
                if e == BOT:
                    return None
                return lay.idx("TA", k), lay.idx("TB", k), self.twist_dag[e]

            st = st.pair_unitary(tau1)
        for i in range(n):
            def tau2(cl, i=i):
                if cl[_CL["SOUT_B"]][i] != BOT:
                    return None
                c = cl[_CL["C_B"]] - 1
                return lay.idx("TA", c), lay.idx("TB", c), self.twist[cl[_CL["B"]][i]]

            st = st.pair_unitary(tau2)
            st = st.classical(lambda r, i=i: self._shift(r, "B", 1, i))
        for i in range(n):
            st = st.classical(lambda r, i=i: self._shift(r, "B", -1, i))
        return st

    def ipa(self, st):
        lay, n = self.layout, self.n
        for side in "AB":
            prime, tilde, tel = ("Ap", "At", "TA") if side == "A" else ("Bp", "Bt", "TB")
            for i in range(n):
                def swap(cl, c, i=i, side=side, tilde=tilde, tel=tel):
                    if cl[_CL[f"SOUT_{side}"]][i] == BOT:
                        p, q = lay.idx(tilde, i), lay.idx(tel, cl[_CL[f"C_{side}"]] - 1)
                        c[p], c[q] = c[q], c[p]

                st = st.move_cells(swap)
                st = st.classical(lambda r, i=i, side=side: self._shift(r, side, 1, i))

            def swap_blocks(cl, c, prime=prime, tilde=tilde):
                for j in range(n):
                    p, q = lay.idx(prime, j), lay.idx(tilde, j)
                    c[p], c[q] = c[q], c[p]

            st = st.move_cells(swap_blocks)
            for i in range(n):
                st = st.classical(lambda r, i=i, side=side: self._shift(r, side, -1, i))

            def unperm(r, side=side):
                perm = self._plan(r, side).key_permutation()
                joint = r[_CL[f"SH1_{side}"]] + r[_CL[f"SOUT_{side}"]]
                back = [None] * len(joint)
                for p, q in enumerate(perm):
                    back[q] = joint[p]
                r[_CL[f"SH1_{side}"]], r[_CL[f"SOUT_{side}"]] = tuple(back[:n]), tuple(back[n:])

            st = st.classical(unperm)

            def sub(r, side=side):
                sh = self._beta(r, side)
                r[_CL[f"SH1_{side}"]] = digit_sub(r[_CL[f"SH1_{side}"]], sh, self.k)
                r[_CL[f"SH_{side}"]] = digit_sub(r[_CL[f"SH_{side}"]], sh, self.k)

            st = st.classical(sub)
        return st

    # --- output -----------------------------------------------------------------

    def ancillas_restored(self, st: DenseState) -> bool:
        lay, n = self.layout, self.n
        empty = lay.empty_cells()
        for cl, cells in st.amps:
            for side in "AB":
                if cl[_CL[f"SH_{side}"]] != (0,) * n or cl[_CL[f"SH1_{side}"]] != (0,) * n:
                    return False
                if cl[_CL[f"SOUT_{side}"]] != (BOT,) * (n + self.L) or cl[_CL[f"C_{side}"]] != 1:
                    return False
            for name in ("At", "Bt", "TA", "TB"):
                for i in range(n if name in ("At", "Bt") else self.L):
                    j = lay.idx(name, i)
                    if cells[j] != empty[j]:
                        return False
        return True

    def output_matrix(self, st: DenseState) -> np.ndarray:
        """Reduced state on (A_1..A_n, B_1..B_n, A'_1 B'_1 ...) after the key rotation."""
        lay, n, k = self.layout, self.n, self.k
        da, db = lay.da, lay.db
        dim = k ** (2 * n) * (da * db) ** n
        env: dict = {}
        for (cl, cells), a in st.amps.items():
            idx = 0
            for x in cl[_CL["A2"]] + cl[_CL["B"]]:
                idx = idx * k + x
            for i in range(n):
                ca, cb = cells[lay.idx("Ap", i)], cells[lay.idx("Bp", i)]
                if ca == lay.bot_a or cb == lay.bot_b:
                    raise ValueError("output shield cell is empty")
                idx = (idx * da + ca) * db + cb
            rest = (cl[_CL["A"]],) + tuple(cl[j] for j in range(3, len(CLASSICAL))) + tuple(
                c for j, c in enumerate(cells) if not (lay.offset["Ap"] <= j < lay.offset["At"])
            )
            vec = env.setdefault(rest, np.zeros(dim, dtype=complex))
            vec[idx] += a
        rho = sum(np.outer(v, v.conj()) for v in env.values())
        key = self.cfg.key
        rot = np.eye(1)
        for _ in range(n):
            rot = np.kron(rot, key.basis_a)
        rot_b = np.eye(1)
        for _ in range(n):
            rot_b = np.kron(rot_b, key.basis_b)
        full = np.kron(np.kron(rot, rot_b), np.eye((da * db) ** n))
        return full @ rho @ full.conj().T

    def target_matrix(self) -> np.ndarray:
        g = self.cfg.single
        n = self.n
        m = np.eye(1)
        for _ in range(n):
            m = np.kron(m, g.matrix)
        dims = list(g.dims) * n
        perm = [4 * i for i in range(n)] + [4 * i + 1 for i in range(n)]
        for i in range(n):
            perm += [4 * i + 2, 4 * i + 3]
        return tc.permute_matrix(m, dims, perm)


@dataclass
class DenseComparison:
    scope: str
    max_distance: float
    d_exact: float | None
    ancilla_restored: bool
    x_independent: bool
    per_item: list = field(default_factory=list)
    output: np.ndarray | None = None  # non-abort part, trace = typical mass


def _pure_distance(u: dict, v: dict) -> float:
    """||u - v||, an upper bound on the trace distance of the two pure states."""
    keys = set(u) | set(v)
    return float(math.sqrt(sum(abs(u.get(k, 0) - v.get(k, 0)) ** 2 for k in keys)))


def reconstruct(proto: DenseProtocol, state: BranchState) -> DenseState:
    """Dense vector implied by symbolic branch records."""
    lay, n = proto.layout, proto.n
    amps: dict = {}
    for rec in state.records:
        regs = rec.regs
        cl = tuple(regs[name] for name in CLASSICAL)
        where_a, where_b = {}, {}
        for name, dest in (("Ap", where_a), ("At", where_a), ("TA", where_a), ("Bp", where_b), ("Bt", where_b), ("TB", where_b)):
            for i, m in enumerate(regs[name]):
                if m != BOT:
                    dest[m] = lay.idx(name, i)
        configs = [(lay.empty_cells(), complex(rec.amp))]
        for m in range(n):
            comps = proto.copy_components(regs["W"][m])
            nxt = []
            for cells, amp in configs:
                for a, b, e, c in comps:
                    cc = list(cells)
                    cc[where_a[m]], cc[where_b[m]], cc[lay.idx("E", m)] = a, b, e
                    nxt.append((cc, amp * c))
            configs = nxt
        for cells, amp in configs:
            key = (cl, tuple(cells))
            amps[key] = amps.get(key, 0) + amp
    return DenseState(lay, amps)


def dense_end_to_end(cfg: ProtocolConfig) -> DenseComparison:
    proto = DenseProtocol(cfg)
    st, mass = proto.s1(proto.initial())
    st = proto.s3(proto.s2(st))
    branches = proto.s4(st)
    outs, restored = [], True
    total = None
    for x in sorted(branches):
        p, b = branches[x]
        b = proto.ipa(proto.pec(proto.pa(proto.s6(proto.s5(b)))))
        restored &= proto.ancillas_restored(b)
        m = proto.output_matrix(b)
        outs.append(m)
        total = p * m if total is None else total + p * m
    target = proto.target_matrix()
    d_exact = 0.5 * (tc.trace_norm_hermitian(mass * total - target) + (1 - mass))
    spread = max(0.5 * tc.trace_norm_hermitian(o - outs[0]) for o in outs)
    return DenseComparison("end_to_end", d_exact, d_exact, restored, spread <= 1e-9, output=mass * total)


def dense_per_step(cfg: ProtocolConfig) -> DenseComparison:
    """Each step applied densely to the reconstruction of the symbolic input state."""
    proto = DenseProtocol(cfg)
    eng = SymbolicEngine(cfg)
    sym = eng.initial_state()
    items = []
    dense_init = proto.initial()
    items.append(("init", _pure_distance(reconstruct(proto, sym).amps, dense_init.amps)))
    for step in Step:
        nxt = eng.run_step(sym, step)
        if step is Step.S4:
            groups = proto.s4(reconstruct(proto, sym))
            want = {x: 1 / cfg.d_n for x in nxt.outcomes}
            err = max(abs(groups[x][0] - want[x]) for x in want)
            items.append((step.value, err))
        elif step in (Step.S1, Step.S2, Step.S3):
            before = reconstruct(proto, sym)
            after = proto.s1(before)[0] if step is Step.S1 else getattr(proto, step.value.lower())(before)
            items.append((step.value, _pure_distance(after.amps, reconstruct(proto, nxt).amps)))
        elif step is Step.S8:
            items.append((step.value, 0.0))
        else:
            worst = 0.0
            for x, recs in sym.by_outcome().items():
                part = BranchState(sym.stage, tuple(recs), sym.weight, sym.abort_mass, True, (x,))
                after = getattr(proto, step.value.lower())(reconstruct(proto, part))
                want = reconstruct(proto, BranchState(nxt.stage, tuple(nxt.by_outcome()[x]), nxt.weight, nxt.abort_mass, True, (x,)))
                worst = max(worst, _pure_distance(after.amps, want.amps))
            items.append((step.value, worst))
        sym = nxt
    return DenseComparison("per_step", max(d for _, d in items), None, True, True, items)


def dense_oracle_run(cfg: ProtocolConfig, scope: str = "end_to_end") -> DenseComparison:
    if scope == "end_to_end":
        return dense_end_to_end(cfg)
    if scope == "per_step":
        return dense_per_step(cfg)
    raise ValueError(f"unknown scope {scope!r}")
