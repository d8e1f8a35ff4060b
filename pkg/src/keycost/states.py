"""Private states, generalized private states and device behaviors.

Expanded states use subsystem order (A, B, A', B'): key part of Alice, key
part of Bob, then the two halves of the shield.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import tensor_core as tc
from .tensor_core import RegisterShape, RegisterState, UnitaryOperator

PPT_TOL = 1e-10
LABELS = ("A", "B", "A'", "B'")


class Irreducibility(str, enum.Enum):
    SEPARABLE_CERTIFIED = "separable_certified"
    PPT_ONLY = "ppt_only"
    ENTANGLED_CONDITIONAL = "entangled_conditional"


def _orthonormal_columns(m: np.ndarray, tol: float = 1e-10) -> bool:
    k = m.shape[1]
    return bool(np.max(np.abs(m.conj().T @ m - np.eye(k)), initial=0.0) <= tol)


@dataclass(frozen=True)
class SchmidtState:
    """|psi> = sum_a sqrt(lambda_a) |e_a>|f_a>; ``coeffs`` are the lambda_a."""

    coeffs: tuple[float, ...]
    basis_a: np.ndarray
    basis_b: np.ndarray

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if not coeffs or any(c <= 0 for c in coeffs):
            raise ValueError("Schmidt coefficients must be positive")
        if abs(sum(coeffs) - 1) > 1e-12:
            raise ValueError(f"Schmidt coefficients sum to {sum(coeffs)}, not 1")
        object.__setattr__(self, "coeffs", coeffs)
        for name in ("basis_a", "basis_b"):
            m = np.array(getattr(self, name), dtype=complex)
            if m.ndim != 2 or m.shape[1] != len(coeffs):
                raise ValueError(f"{name} needs one column per coefficient")
            if not _orthonormal_columns(m):
                raise ValueError(f"{name} is not orthonormal")
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @classmethod
    def computational(cls, coeffs: Sequence[float]) -> "SchmidtState":
        k = len(coeffs)
        return cls(tuple(coeffs), np.eye(k), np.eye(k))

    @classmethod
    def uniform(cls, d: int) -> "SchmidtState":
        return cls.computational([1.0 / d] * d)

    @property
    def rank(self) -> int:
        return len(self.coeffs)

    @property
    def dims(self) -> tuple[int, int]:
        return self.basis_a.shape[0], self.basis_b.shape[0]

    @property
    def entropy(self) -> float:
        return tc.spectrum_entropy(np.array(self.coeffs))

    def key_vectors(self) -> np.ndarray:
        """Columns e_a (x) f_a."""
        return np.stack([np.kron(self.basis_a[:, a], self.basis_b[:, a]) for a in range(self.rank)], axis=1)

    def vector(self) -> np.ndarray:
        return self.key_vectors() @ np.sqrt(np.array(self.coeffs))

    def state(self) -> RegisterState:
        return RegisterState.pure(self.vector(), self.dims, ("A", "B"))

    def to_json(self) -> dict:
        def enc(m):
            return {"re": m.real.tolist(), "im": m.imag.tolist()}

        return {"coeffs": list(self.coeffs), "basisA": enc(self.basis_a), "basisB": enc(self.basis_b)}

    @classmethod
    def from_json(cls, obj: dict) -> "SchmidtState":
        coeffs = obj["coeffs"]
        k = len(coeffs)

        def dec(m):
            if m is None:
                return np.eye(k)
            if isinstance(m, dict):
                return np.asarray(m["re"], dtype=float) + 1j * np.asarray(m.get("im", np.zeros_like(m["re"])), dtype=float)
            return np.asarray(m, dtype=complex)

        return cls(tuple(coeffs), dec(obj.get("basisA")), dec(obj.get("basisB")))


@dataclass(frozen=True)
class TwistingUnitary:
    """Controlled unitary sum_i |ii><ii| (x) U_i; ``blocks`` are the U_i on A'B'."""

    blocks: tuple[np.ndarray, ...]

    def __post_init__(self):
        blocks = []
        for u in self.blocks:
            op = u.data if isinstance(u, UnitaryOperator) else u
            op = np.array(op, dtype=complex)
            UnitaryOperator.of(op)  # validates
            op.setflags(write=False)
            blocks.append(op)
        if not blocks:
            raise ValueError("at least one twisting block required")
        d = blocks[0].shape[0]
        if any(b.shape != (d, d) for b in blocks):
            raise ValueError("twisting blocks must share one dimension")
        object.__setattr__(self, "blocks", tuple(blocks))

    @classmethod
    def trivial(cls, d_k: int, shield_dim: int) -> "TwistingUnitary":
        return cls(tuple(np.eye(shield_dim) for _ in range(d_k)))

    @property
    def control_dim(self) -> int:
        return len(self.blocks)

    @property
    def shield_dim(self) -> int:
        return self.blocks[0].shape[0]


def _shield_with_split(shield: RegisterState, split) -> tuple[RegisterState, tuple[int, int] | None]:
    if split is None:
        if len(shield.dims) == 2:
            split = shield.dims
        elif shield.dim == 1:
            split = (1, 1)
    if split is not None:
        split = (int(split[0]), int(split[1]))
        if split[0] * split[1] != shield.dim:
            raise ValueError(f"shield split {split} does not match shield dimension {shield.dim}")
        shield = RegisterState(RegisterShape(split, ("A'", "B'")), shield.data, shield.kind, shield.tol)
    return shield.as_density(), split


@dataclass(frozen=True)
class GeneralizedPrivateState:
    key: SchmidtState
    shield: RegisterState
    twist: TwistingUnitary
    shield_split: tuple[int, int] | None = None

    def __post_init__(self):
        shield, split = _shield_with_split(self.shield, self.shield_split)
        object.__setattr__(self, "shield", shield)
        object.__setattr__(self, "shield_split", split)
        if self.twist.control_dim != self.key.rank:
            raise ValueError(f"twist has {self.twist.control_dim} blocks for {self.key.rank} Schmidt coefficients")
        if self.twist.shield_dim != shield.dim:
            raise ValueError(f"twist blocks act on dim {self.twist.shield_dim}, shield has dim {shield.dim}")

    @property
    def d_k(self) -> int:
        return self.key.rank

    @property
    def shield_dims(self) -> tuple[int, ...]:
        return self.shield_split if self.shield_split is not None else (self.shield.dim,)

    @property
    def dims(self) -> tuple[int, ...]:
        da, db = self.key.dims
        sa, sb = self.shield_split if self.shield_split is not None else (self.shield.dim, 1)
        return (da, db, sa, sb)

    @property
    def local_dims(self) -> tuple[int, int]:
        d = self.dims
        return d[0] * d[2], d[1] * d[3]

    def conditional(self, i: int) -> np.ndarray:
        u = self.twist.blocks[i]
        return u @ self.shield.data @ u.conj().T

    @cached_property
    def _isometry(self) -> np.ndarray:
        kv = self.key.key_vectors()
        amp = np.sqrt(np.array(self.key.coeffs))
        return sum(amp[i] * np.kron(kv[:, [i]], self.twist.blocks[i]) for i in range(self.d_k))

    @cached_property
    def matrix(self) -> np.ndarray:
        w = self._isometry
        m = tc.hermitize(w @ self.shield.data @ w.conj().T)
        m.setflags(write=False)
        return m

    def expanded(self) -> RegisterState:
        return RegisterState(RegisterShape(self.dims, LABELS), self.matrix, "density")

    def key_entropy(self) -> float:
        """S_A of the expanded state (A = Alice's key part)."""
        return tc.spectrum_entropy(np.linalg.eigvalsh(tc.ptrace_matrix(self.matrix, self.dims, [0])))

    def to_json(self) -> dict:
        return {
            "schmidt": self.key.to_json(),
            "shield": self.shield.to_json(),
            "twist": [UnitaryOperator.of(b).to_json() for b in self.twist.blocks],
            "shield_split": list(self.shield_split) if self.shield_split is not None else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GeneralizedPrivateState":
        key = SchmidtState.from_json(obj["schmidt"])
        shield = RegisterState.from_json(obj["shield"])
        twist = TwistingUnitary(tuple(UnitaryOperator.from_json(u).data for u in obj["twist"]))
        split = obj.get("shield_split")
        return cls(key, shield, twist, tuple(split) if split else None)


def make_max_entangled(d: int) -> RegisterState:
    if d < 2:
        raise ValueError("maximally entangled state needs d >= 2")
    vec = np.zeros(d * d, dtype=complex)
    vec[[i * d + i for i in range(d)]] = 1 / math.sqrt(d)
    return RegisterState.pure(vec, (d, d), ("A", "B"))


def dephased_max_entangled(d: int) -> np.ndarray:
    """sigma_k = (1/d) sum_i |ii><ii|."""
    m = np.zeros((d * d, d * d))
    for i in range(d):
        m[i * d + i, i * d + i] = 1 / d
    return m


def make_private_state(d_k: int, shield: RegisterState, twist: TwistingUnitary, shield_split=None) -> GeneralizedPrivateState:
    return GeneralizedPrivateState(SchmidtState.uniform(d_k), shield, twist, shield_split)


def make_generalized_private_state(key: SchmidtState, shield: RegisterState, twist: TwistingUnitary, shield_split=None) -> GeneralizedPrivateState:
    return GeneralizedPrivateState(key, shield, twist, shield_split)


def diagonal_subspace_unitary(w: np.ndarray) -> np.ndarray:
    """Unitary on C^d (x) C^d acting as ``w`` on span{|ii>} and identity elsewhere."""
    d = w.shape[0]
    out = np.eye(d * d, dtype=complex)
    diag = [i * d + i for i in range(d)]
    out[np.ix_(diag, diag)] = w
    return out


def make_flower_state(d_s: int, u: np.ndarray) -> GeneralizedPrivateState:
    """Private bit whose off-diagonal key blocks are (1/d_s)U^T and (1/d_s)U^*.

    Realized with shield sigma = (1/d_s) sum_i |ii><ii|, U_0 = 1 and U_1 acting
    as conj(u) on the diagonal subspace.
    """
    u = np.asarray(u, dtype=complex)
    if u.shape != (d_s, d_s):
        raise ValueError(f"u must be {d_s}x{d_s}")
    UnitaryOperator.of(u)
    sigma = dephased_max_entangled(d_s)
    shield = RegisterState.density(sigma, (d_s, d_s), ("A'", "B'"))
    twist = TwistingUnitary((np.eye(d_s * d_s), diagonal_subspace_unitary(u.conj())))
    return GeneralizedPrivateState(SchmidtState.uniform(2), shield, twist, (d_s, d_s))


def flower_x_form(d_s: int, u: np.ndarray) -> np.ndarray:
    """The 4-block X-form written directly from its block description."""
    u = np.asarray(u, dtype=complex)
    ds2 = d_s * d_s
    sigma = dephased_max_entangled(d_s)
    big_u = np.zeros((ds2, ds2), dtype=complex)
    for i in range(d_s):
        for j in range(d_s):
            big_u[i * d_s + i, j * d_s + j] = u[i, j]
    out = np.zeros((4 * ds2, 4 * ds2), dtype=complex)
    blk = lambda k: slice(k * ds2, (k + 1) * ds2)  # noqa: E731
    out[blk(0), blk(0)] = sigma
    out[blk(3), blk(3)] = sigma
    out[blk(0), blk(3)] = big_u.T / d_s
    out[blk(3), blk(0)] = big_u.conj() / d_s
    return out / 2


def is_ppt(m: np.ndarray, split: tuple[int, int], tol: float = PPT_TOL) -> bool:
    return bool(np.linalg.eigvalsh(tc.hermitize(tc.partial_transpose(m, split, [1])))[0] >= -tol)


def check_strict_irreducibility(g: GeneralizedPrivateState, tol: float = PPT_TOL) -> Irreducibility:
    """PPT test on every conditional shield state U_i rho U_i^dagger.

    PPT is exact for separability when the shield cut is 2x2 or 2x3 (or trivial).
    Blocks diagonal in the product basis are certified separable at any size.
    """
    if g.shield_split is None:
        raise ValueError("shield split is required to decide separability")
    da, db = g.shield_split
    small = min(da, db) == 1 or da * db <= 6
    certified = True
    for i in range(g.d_k):
        block = g.conditional(i)
        if not is_ppt(block, (da, db), tol):
            return Irreducibility.ENTANGLED_CONDITIONAL
        # diagonal in the product basis means a mixture of product states
        off = block - np.diag(np.diag(block))
        certified &= small or float(np.max(np.abs(off), initial=0.0)) <= tol
    return Irreducibility.SEPARABLE_CERTIFIED if certified else Irreducibility.PPT_ONLY


def sigma_ansatz(g: GeneralizedPrivateState) -> RegisterState:
    """Key-attacked state sum_i mu_i |e_i f_i><e_i f_i| (x) U_i rho U_i^dagger."""
    if check_strict_irreducibility(g) is Irreducibility.ENTANGLED_CONDITIONAL:
        warnings.warn("state is not strictly irreducible; ansatz is not separable", stacklevel=2)
    kv = g.key.key_vectors()
    m = sum(
        g.key.coeffs[i] * np.kron(np.outer(kv[:, i], kv[:, i].conj()), g.conditional(i))
        for i in range(g.d_k)
    )
    return RegisterState(RegisterShape(g.dims, LABELS), tc.hermitize(m), "density")


def tensor_sir(g1: GeneralizedPrivateState, g2: GeneralizedPrivateState) -> GeneralizedPrivateState:
    """Combine two GSIR states into one with key d_k1*d_k2 and blocks U_i (x) U_j."""
    s1 = g1.shield_split or (g1.shield.dim, 1)
    s2 = g2.shield_split or (g2.shield.dim, 1)
    perm = [0, 2, 1, 3]  # (A1', B1', A2', B2') -> (A1', A2', B1', B2')
    pdims = (s1[0], s1[1], s2[0], s2[1])
    shield = tc.permute_matrix(np.kron(g1.shield.data, g2.shield.data), pdims, perm)
    blocks = []
    for u in g1.twist.blocks:
        for v in g2.twist.blocks:
            blocks.append(tc.permute_matrix(np.kron(u, v), pdims, perm))
    coeffs = tuple(a * b for a in g1.key.coeffs for b in g2.key.coeffs)
    basis_a = np.stack([np.kron(g1.key.basis_a[:, i], g2.key.basis_a[:, j]) for i in range(g1.d_k) for j in range(g2.d_k)], axis=1)
    basis_b = np.stack([np.kron(g1.key.basis_b[:, i], g2.key.basis_b[:, j]) for i in range(g1.d_k) for j in range(g2.d_k)], axis=1)
    split = (s1[0] * s2[0], s1[1] * s2[1])
    total = sum(coeffs)
    key = SchmidtState(tuple(c / total for c in coeffs), basis_a, basis_b)
    shield_state = RegisterState.density(shield, split, ("A'", "B'"))
    return GeneralizedPrivateState(key, shield_state, TwistingUnitary(tuple(blocks)), split)


def tensor_sir_reshuffle(g1: GeneralizedPrivateState, g2: GeneralizedPrivateState) -> np.ndarray:
    """g1 (x) g2 with subsystems locally reordered to match ``tensor_sir`` output."""
    d1, d2 = g1.dims, g2.dims
    full = np.kron(g1.matrix, g2.matrix)
    # (A1 B1 A1' B1' A2 B2 A2' B2') -> (A1 A2, B1 B2, A1' A2', B1' B2')
    return tc.permute_matrix(full, d1 + d2, [0, 4, 1, 5, 2, 6, 3, 7])


@dataclass(frozen=True)
class Ensemble:
    members: tuple[tuple[float, GeneralizedPrivateState], ...]

    def __post_init__(self):
        members = tuple((float(p), g) for p, g in self.members)
        if not members:
            raise ValueError("empty ensemble")
        if any(p < 0 for p, _ in members):
            raise ValueError("negative ensemble weight")
        if abs(sum(p for p, _ in members) - 1) > 1e-12:
            raise ValueError("ensemble weights must sum to 1")
        dims = {g.local_dims for _, g in members}
        full = {g.dims for _, g in members}
        if len(dims) != 1 or len(full) != 1:
            raise ValueError("ensemble members must share their subsystem dimensions")
        object.__setattr__(self, "members", members)
        cap = self.caratheodory_cap
        if len(members) > cap:
            raise ValueError(f"{len(members)} members exceed the cap (|A||B|)^2+1 = {cap}")

    @property
    def local_dims(self) -> tuple[int, int]:
        return self.members[0][1].local_dims

    @property
    def caratheodory_cap(self) -> int:
        a, b = self.local_dims
        return (a * b) ** 2 + 1

    def mixture(self) -> RegisterState:
        g0 = self.members[0][1]
        m = sum(p * g.matrix for p, g in self.members)
        return RegisterState(RegisterShape(g0.dims, LABELS), tc.hermitize(m), "density")

    def product(self, other: "Ensemble") -> "Ensemble":
        return Ensemble(tuple((p * q, tensor_sir(g, h)) for p, g in self.members for q, h in other.members))


# --- device behaviors --------------------------------------------------------


@dataclass(frozen=True)
class Behavior:
    """P(ab|xy) stored as table[a, b, x, y]."""

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim != 4:
            raise ValueError("behavior table must have 4 indices (a, b, x, y)")
        if np.min(t, initial=0.0) < -1e-12:
            raise ValueError("negative probability in behavior")
        sums = t.sum(axis=(0, 1))
        if np.max(np.abs(sums - 1), initial=0.0) > 1e-10:
            raise ValueError("behavior not normalized for some (x, y)")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    def correlator(self, x: int, y: int) -> float:
        sa = np.array([1, -1])[: self.table.shape[0]]
        sb = np.array([1, -1])[: self.table.shape[1]]
        return float(sa @ self.table[:, :, x, y] @ sb)

    def chsh(self) -> float:
        e = self.correlator
        return e(0, 0) + e(0, 1) + e(1, 0) - e(1, 1)

    def signaling(self) -> float:
        """Largest dependence of a marginal on the remote input."""
        pa = self.table.sum(axis=1)  # a, x, y
        pb = self.table.sum(axis=0)  # b, x, y
        da = np.max(np.abs(pa - pa[:, :, :1]), initial=0.0)
        db = np.max(np.abs(pb - pb[:, :1, :]), initial=0.0)
        return float(max(da, db))


def _check_povm(povm: Sequence[np.ndarray], d: int, tol: float = 1e-10):
    total = np.zeros((d, d), dtype=complex)
    for e in povm:
        e = np.asarray(e, dtype=complex)
        if e.shape != (d, d):
            raise ValueError(f"POVM element of shape {e.shape} on a {d}-dim system")
        if np.linalg.eigvalsh(tc.hermitize(e))[0] < -tol:
            raise ValueError("POVM element is not PSD")
        total = total + e
    if np.max(np.abs(total - np.eye(d))) > tol:
        raise ValueError("POVM elements do not sum to identity")


def behavior_from_realization(
    rho: RegisterState,
    meas_a: Sequence[Sequence[np.ndarray]],
    meas_b: Sequence[Sequence[np.ndarray]],
    alice: Sequence[int] = (0,),
) -> Behavior:
    """P(ab|xy) = Tr(rho M^a_x (x) N^b_y); ``alice`` lists Alice's subsystems."""
    n = rho.shape.n_sub
    alice = list(alice)
    bob = [i for i in range(n) if i not in alice]
    da = int(np.prod([rho.dims[i] for i in alice]))
    db = int(np.prod([rho.dims[i] for i in bob]))
    m = tc.permute_matrix(rho.dm(), rho.dims, alice + bob) if alice + bob != list(range(n)) else rho.dm()
    for povm in meas_a:
        _check_povm(povm, da)
    for povm in meas_b:
        _check_povm(povm, db)
    oa = {len(p) for p in meas_a}
    ob = {len(p) for p in meas_b}
    if len(oa) != 1 or len(ob) != 1:
        raise ValueError("every setting of a party must have the same number of outcomes")
    t = np.zeros((oa.pop(), ob.pop(), len(meas_a), len(meas_b)))
    for x, pa in enumerate(meas_a):
        for y, pb in enumerate(meas_b):
            for a, ea in enumerate(pa):
                for b, eb in enumerate(pb):
                    t[a, b, x, y] = np.trace(m @ np.kron(ea, eb)).real
    t = np.clip(t, 0.0, None)
    return Behavior(t)


def projective_povm(observable: np.ndarray) -> list[np.ndarray]:
    """Projectors onto the +1 and -1 eigenspaces of a dichotomic observable."""
    d = observable.shape[0]
    return [(np.eye(d) + observable) / 2, (np.eye(d) - observable) / 2]


def chsh_settings() -> tuple[list[list[np.ndarray]], list[list[np.ndarray]]]:
    z = np.diag([1.0, -1.0])
    x = np.array([[0.0, 1.0], [1.0, 0.0]])
    meas_a = [projective_povm(z), projective_povm(x)]
    meas_b = [projective_povm((z + x) / math.sqrt(2)), projective_povm((z - x) / math.sqrt(2))]
    return meas_a, meas_b


def ppt_realization_behavior(rho: RegisterState, meas_a, meas_b) -> Behavior:
    """Behavior of rho^{T_B} measured with transposed Bob POVMs.

    Equals the behavior of (rho, M) whenever rho^{T_B} >= 0, by
    Tr(XY) = Tr(X^T_B Y^T_B).
    """
    if rho.shape.n_sub != 2:
        raise ValueError("expects a bipartite (A, B) state")
    pt = tc.hermitize(tc.partial_transpose(rho.dm(), rho.dims, [1]))
    if np.linalg.eigvalsh(pt)[0] < -PPT_TOL:
        raise ValueError("state is not PPT")
    pt_state = RegisterState.density(pt / np.trace(pt).real, rho.dims)
    mb_t = [[np.asarray(e).T for e in p] for p in meas_b]
    return behavior_from_realization(pt_state, meas_a, mb_t)


# --- random instances --------------------------------------------------------


def random_schmidt(d_k: int, rng: np.random.Generator, random_bases: bool = True) -> SchmidtState:
    coeffs = rng.dirichlet(np.ones(d_k))
    coeffs = np.maximum(coeffs, 1e-3)
    coeffs = coeffs / coeffs.sum()
    if random_bases:
        return SchmidtState(tuple(coeffs), tc.random_unitary(d_k, rng), tc.random_unitary(d_k, rng))
    return SchmidtState.computational(tuple(coeffs))


def random_separable(da: int, db: int, rng: np.random.Generator, terms: int | None = None) -> np.ndarray:
    terms = terms if terms is not None else int(rng.integers(1, da * db + 1))
    w = rng.dirichlet(np.ones(terms))
    m = np.zeros((da * db, da * db), dtype=complex)
    for k in range(terms):
        a = tc.random_pure(da, rng)
        b = tc.random_pure(db, rng)
        v = np.kron(a, b)
        m += w[k] * np.outer(v, v.conj())
    return tc.hermitize(m)


def random_gsir(d_k: int, d_s: int, rng: np.random.Generator, family: str | None = None) -> GeneralizedPrivateState:
    """Random strictly irreducible generalized private state.

    ``family`` "local": separable shield, product twisting blocks.
    ``family`` "phase": classically correlated shield, blocks mixing local
    unitaries with a non-local diagonal phase (still separable conditionals).
    """
    family = family or ("local" if rng.random() < 0.5 else "phase")
    key = random_schmidt(d_k, rng)
    ds2 = d_s * d_s
    if family == "local":
        rho = random_separable(d_s, d_s, rng)
        blocks = [np.kron(tc.random_unitary(d_s, rng), tc.random_unitary(d_s, rng)) for _ in range(d_k)]
    elif family == "phase":
        p = rng.dirichlet(np.ones(ds2))
        rho = np.diag(p).astype(complex)
        blocks = []
        for _ in range(d_k):
            phases = np.exp(2j * np.pi * rng.random(ds2))
            loc = np.kron(tc.random_unitary(d_s, rng), tc.random_unitary(d_s, rng))
            blocks.append(loc @ np.diag(phases))
    else:
        raise ValueError(f"unknown family {family!r}")
    shield = RegisterState.density(rho, (d_s, d_s), ("A'", "B'"))
    return GeneralizedPrivateState(key, shield, TwistingUnitary(tuple(blocks)), (d_s, d_s))
