"""Protocol configuration, the resource private state and the run report."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np

from .. import tensor_core as tc
from ..states import (
    GeneralizedPrivateState,
    SchmidtState,
    TwistingUnitary,
    make_generalized_private_state,
)
from ..tensor_core import RegisterState
from ..typicality import Codec, SourceSpec, TypicalSet, enumerate_typical_set, to_fraction

ENUMERATE_OUTCOMES_UP_TO = 64
DENSE_RESOURCE_LIMIT = 4096


class CapacityError(RuntimeError):
    """A backend was asked for more than its guard allows."""


@dataclass(frozen=True)
class ProtocolConfig:
    key: SchmidtState
    shield_base: RegisterState
    twist: TwistingUnitary
    n: int
    delta: Fraction
    eta: float | None = None
    epsilon_budget: float = 0.0
    seed: int = 0
    backend: str = "symbolic"
    x_samples: int = 8

    def __post_init__(self):
        object.__setattr__(self, "delta", to_fraction(self.delta))
        shield = self.shield_base.as_density()
        if len(shield.dims) != 2:
            if shield.dim == 1:
                shield = RegisterState.density(shield.data, (1, 1))
            else:
                raise ValueError("shield needs an explicit (A', B') split")
        object.__setattr__(self, "shield_base", shield)
        if self.backend not in ("symbolic", "dense"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.twist.control_dim != self.key.rank:
            raise ValueError("one twisting block per Schmidt coefficient required")
        if self.twist.shield_dim != shield.dim:
            raise ValueError("twisting blocks do not match the shield dimension")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")

    @classmethod
    def from_state(cls, g: GeneralizedPrivateState, n: int, delta, **kw) -> "ProtocolConfig":
        return cls(g.key, g.shield, g.twist, n, delta, **kw)

    @cached_property
    def single(self) -> GeneralizedPrivateState:
        return make_generalized_private_state(self.key, self.shield_base, self.twist, self.shield_base.dims)

    @cached_property
    def source(self) -> SourceSpec:
        k = self.key.rank
        return SourceSpec(tuple(str(a) for a in range(k)), tuple(to_fraction(c) for c in self.key.coeffs), self.n, self.delta)

    @cached_property
    def typical(self) -> TypicalSet:
        return enumerate_typical_set(self.source)

    @cached_property
    def codec(self) -> Codec:
        return Codec.build(self.typical, self.eta)

    @property
    def k(self) -> int:
        return self.key.rank

    @property
    def code_length(self) -> int:
        return self.codec.code_length

    @property
    def d_n(self) -> int:
        return self.codec.size

    @property
    def l_max(self) -> int:
        return self.source.l_max

    @property
    def nominal_ebits(self) -> int:
        return math.ceil(4 * self.delta * self.n)

    @property
    def shield_dims(self) -> tuple[int, int]:
        return tuple(self.shield_base.dims)

    @property
    def mass(self) -> Fraction:
        return self.typical.mass

    @property
    def shield_is_pure(self) -> bool:
        w = np.linalg.eigvalsh(self.shield_base.data)
        return bool(np.sum(w > 1e-10) == 1)

    def outcomes(self) -> list[tuple[int, ...]]:
        """Announced codewords to follow: all when d_n <= 64, else a seeded sample."""
        from ..typicality import digits_of

        d_n = self.d_n
        if d_n <= ENUMERATE_OUTCOMES_UP_TO:
            values = range(d_n)
        else:
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(0,)))
            values = sorted(int(v) for v in rng.choice(d_n, size=min(self.x_samples, d_n), replace=False))
        return [digits_of(v, self.k, self.code_length) for v in values]


@dataclass(frozen=True)
class ResourcePrivateState:
    """(1/d_n) sum_{r,r'} |rr><r'r'| (x) U_{s(r)} rho^{(x)n} U_{s(r')}^dagger."""

    cfg: ProtocolConfig

    @property
    def d_n(self) -> int:
        return self.cfg.d_n

    def label(self, r: int) -> tuple[int, ...]:
        return self.cfg.codec.label(r)

    def block(self, r: int) -> np.ndarray:
        """U_{s(r)} on copies ordered (A'_1 B'_1 ... A'_n B'_n)."""
        out = np.eye(1, dtype=complex)
        for a in self.label(r):
            out = np.kron(out, self.cfg.twist.blocks[a])
        return out

    def _check_dense(self):
        dim = self.d_n**2 * self.cfg.shield_base.dim**self.cfg.n
        if dim > DENSE_RESOURCE_LIMIT:
            raise CapacityError(f"dense resource state of dimension {dim} exceeds {DENSE_RESOURCE_LIMIT}")

    def shield(self) -> np.ndarray:
        out = np.eye(1, dtype=complex)
        for _ in range(self.cfg.n):
            out = np.kron(out, self.cfg.shield_base.data)
        return out

    def as_private_state(self) -> GeneralizedPrivateState:
        """The resource with the shield regrouped as (A'_1..A'_n, B'_1..B'_n)."""
        self._check_dense()
        n = self.cfg.n
        da, db = self.cfg.shield_dims
        dims = (da, db) * n
        perm = [2 * i for i in range(n)] + [2 * i + 1 for i in range(n)]
        shield = tc.permute_matrix(self.shield(), dims, perm)
        blocks = tuple(tc.permute_matrix(self.block(r), dims, perm) for r in range(self.d_n))
        split = (da**n, db**n)
        key = SchmidtState.uniform(self.d_n)
        state = RegisterState.density(shield, split, ("A'", "B'"))
        return GeneralizedPrivateState(key, state, TwistingUnitary(blocks), split)

    def matrix(self) -> np.ndarray:
        """Dense expanded form, key (A, B) then copies (A'_1 B'_1 ...)."""
        self._check_dense()
        d = self.d_n
        rho = self.shield()
        blocks = [self.block(r) for r in range(d)]
        ds = rho.shape[0]
        out = np.zeros((d * d * ds, d * d * ds), dtype=complex)
        for r in range(d):
            for q in range(d):
                i, j = r * d + r, q * d + q
                out[i * ds:(i + 1) * ds, j * ds:(j + 1) * ds] = blocks[r] @ rho @ blocks[q].conj().T / d
        return out


def build_resource_state(cfg: ProtocolConfig) -> ResourcePrivateState:
    cfg.codec  # raises if the codec cannot be lossless
    return ResourcePrivateState(cfg)


@dataclass
class DilutionReport:
    backend: str
    n: int
    delta: str
    d_n: int
    code_length: int
    key_bits_consumed: float
    eta: float
    l_max: int
    ebit_cells: int
    ebit_cell_dim: int
    ebits_qubit_equivalent: float
    ebits_nominal: int
    typical_mass: str
    failure_probability: float
    outcomes_checked: int
    outcomes_total: int
    label_exact: bool
    copy_exact: bool
    ancilla_restored: bool
    x_independent: bool
    x_independent_copy: bool
    trace_distance_to_target: float | None
    trace_distance_typical: float | None
    structural_failures: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def key_rate(self) -> float:
        return self.key_bits_consumed / self.n

    def to_json(self) -> dict:
        return asdict(self)
