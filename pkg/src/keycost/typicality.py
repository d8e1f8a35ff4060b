"""Strongly typical sets, the lexicographic codec, beta_x and permutation plans.

Sequences are tuples of symbol indices 0..|A|-1. ``BOT`` marks an empty
register cell and ``EMPTY`` the error outcome of the codec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

from .divergences import BoundReport

BOT = -1
EMPTY = -2
ENUMERATION_GUARD = 2**24


def to_fraction(x) -> Fraction:
    """Exact rational from a Fraction, int, string ("7/9", "0.25") or float (via its repr)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(str(x).strip())


@dataclass(frozen=True)
class SourceSpec:
    alphabet: tuple[str, ...]
    probs: tuple[Fraction, ...]
    n: int
    delta: Fraction

    def __post_init__(self):
        alphabet = tuple(str(a) for a in self.alphabet)
        probs = tuple(to_fraction(p) for p in self.probs)
        delta = to_fraction(self.delta)
        if len(set(alphabet)) != len(alphabet) or not alphabet:
            raise ValueError("alphabet symbols must be distinct and non-empty")
        if len(probs) != len(alphabet):
            raise ValueError("one probability per symbol required")
        if any(p <= 0 for p in probs):
            raise ValueError("probabilities must be positive")
        if abs(float(sum(probs)) - 1) > 1e-12:
            raise ValueError(f"probabilities sum to {float(sum(probs))}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        if delta <= 0:
            raise ValueError("delta must be positive")
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def uniform(cls, k: int, n: int, delta, alphabet: Sequence[str] | None = None) -> "SourceSpec":
        alphabet = alphabet or [chr(ord("a") + i) for i in range(k)]
        return cls(tuple(alphabet), tuple(Fraction(1, k) for _ in range(k)), n, delta)

    @property
    def k(self) -> int:
        return len(self.alphabet)

    @property
    def entropy(self) -> float:
        return -sum(float(p) * math.log2(float(p)) for p in self.probs)

    @property
    def l_max(self) -> int:
        return math.ceil(2 * self.delta * self.n)

    @cached_property
    def count_windows(self) -> tuple[tuple[int, int], ...]:
        """Integer count range per symbol: n lambda (1-delta) <= count <= n lambda (1+delta)."""
        out = []
        for p in self.probs:
            lo = max(0, math.ceil(self.n * p * (1 - self.delta)))
            hi = min(self.n, math.floor(self.n * p * (1 + self.delta)))
            out.append((lo, hi))
        return tuple(out)

    @property
    def exact_regime(self) -> bool:
        """True when every sequence is typical."""
        return all(lo == 0 and hi == self.n for lo, hi in self.count_windows)

    def with_n(self, n: int) -> "SourceSpec":
        return SourceSpec(self.alphabet, self.probs, n, self.delta)

    def parse(self, s) -> tuple[int, ...]:
        """Symbol string or sequence to index tuple."""
        index = {a: i for i, a in enumerate(self.alphabet)}
        items = list(s) if isinstance(s, str) and all(len(a) == 1 for a in self.alphabet) else s
        if isinstance(items, str):
            items = items.split(",")
        out = []
        for sym in items:
            if isinstance(sym, int) and not isinstance(sym, bool) and 0 <= sym < self.k and str(sym) not in index:
                out.append(sym)
            elif str(sym) in index:
                out.append(index[str(sym)])
            else:
                raise ValueError(f"foreign symbol {sym!r}")
        return tuple(out)

    def render(self, seq: Sequence[int], sep: str = "") -> str:
        names = {BOT: "⊥", EMPTY: "∅"}
        return sep.join(names.get(i, self.alphabet[i] if 0 <= i < self.k else "?") for i in seq)

    def sequence_probability(self, seq: Sequence[int]) -> Fraction:
        out = Fraction(1)
        for i in seq:
            out *= self.probs[i]
        return out


def counts(seq: Sequence[int], k: int) -> tuple[int, ...]:
    c = [0] * k
    for i in seq:
        c[i] += 1
    return tuple(c)


def sequence_type(s, spec: SourceSpec) -> tuple[Fraction, ...]:
    seq = spec.parse(s)
    if not seq:
        raise ValueError("empty sequence")
    return tuple(Fraction(c, len(seq)) for c in counts(seq, spec.k))


def is_typical(seq: Sequence[int], spec: SourceSpec) -> bool:
    if len(seq) != spec.n:
        return False
    c = counts(seq, spec.k)
    return all(lo <= ci <= hi for ci, (lo, hi) in zip(c, spec.count_windows))


@dataclass(frozen=True)
class TypicalSet:
    spec: SourceSpec
    members: tuple[tuple[int, ...], ...]
    mass: Fraction

    @cached_property
    def rank(self) -> dict[tuple[int, ...], int]:
        return {s: i for i, s in enumerate(self.members)}

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, seq) -> bool:
        return tuple(seq) in self.rank


def _check_guard(spec: SourceSpec):
    if spec.k**spec.n > ENUMERATION_GUARD:
        raise ValueError(f"|A|^n = {spec.k}^{spec.n} exceeds the enumeration guard 2^24")


def enumerate_typical_set(spec: SourceSpec) -> TypicalSet:
    """Depth-first lexicographic enumeration with count-window pruning."""
    _check_guard(spec)
    n, k = spec.n, spec.k
    windows = spec.count_windows
    members: list[tuple[int, ...]] = []
    c = [0] * k
    prefix: list[int] = []

    def feasible(remaining: int) -> bool:
        need = sum(max(0, lo - ci) for ci, (lo, _) in zip(c, windows))
        room = sum(hi - ci for ci, (_, hi) in zip(c, windows))
        return need <= remaining <= room

    def dfs(remaining: int):
        if remaining == 0:
            members.append(tuple(prefix))
            return
        for a in range(k):
            if c[a] >= windows[a][1]:
                continue
            c[a] += 1
            prefix.append(a)
            if feasible(remaining - 1):
                dfs(remaining - 1)
            prefix.pop()
            c[a] -= 1

    if feasible(n):
        dfs(n)
    return TypicalSet(spec, tuple(members), typical_mass(spec))


def _compositions(n: int, windows):
    k = len(windows)

    def rec(i: int, left: int):
        if i == k - 1:
            lo, hi = windows[i]
            if lo <= left <= hi:
                yield (left,)
            return
        lo, hi = windows[i]
        for ci in range(lo, min(hi, left) + 1):
            for rest in rec(i + 1, left - ci):
                yield (ci,) + rest

    yield from rec(0, n)


def type_classes(spec: SourceSpec):
    """(counts, class size, class probability, typical) for every type of length n."""
    windows = spec.count_windows
    for comp in _compositions(spec.n, [(0, spec.n)] * spec.k):
        size = math.factorial(spec.n)
        prob = Fraction(1)
        for ci, p in zip(comp, spec.probs):
            size //= math.factorial(ci)
            prob *= p**ci
        typical = all(lo <= c <= hi for c, (lo, hi) in zip(comp, windows))
        yield comp, size, size * prob, typical


def typical_mass(spec: SourceSpec) -> Fraction:
    """N = sum over typical types of multinomial * prod lambda^count (exact)."""
    total = Fraction(0)
    for comp in _compositions(spec.n, spec.count_windows):
        mult = math.factorial(spec.n)
        term = Fraction(1)
        for ci, p in zip(comp, spec.probs):
            mult //= math.factorial(ci)
            term *= p**ci
        total += mult * term
    return total


def typical_size(spec: SourceSpec) -> int:
    total = 0
    for comp in _compositions(spec.n, spec.count_windows):
        mult = math.factorial(spec.n)
        for ci in comp:
            mult //= math.factorial(ci)
        total += mult
    return total


def check_size_bounds(t: "TypicalSet | SourceSpec") -> BoundReport:
    """Upper bound log2|T| <= n H (1+delta); the lower bound is recorded alongside.

    The lower bound (1-delta) 2^{n H (1-delta)} <= |T| only holds for large n.
    A SourceSpec is counted by types without listing the members.
    """
    if isinstance(t, SourceSpec):
        spec, size, mass = t, typical_size(t), typical_mass(t)
    else:
        spec, size, mass = t.spec, len(t), t.mass
    h = spec.entropy
    d = float(spec.delta)
    log_size = math.log2(size) if size else -math.inf
    upper = spec.n * h * (1 + d)
    lower = (math.log2(1 - d) if d < 1 else -math.inf) + spec.n * h * (1 - d)
    return BoundReport.check(
        "typical_size_upper",
        log_size,
        upper,
        {
            "n": spec.n,
            "delta": d,
            "size": size,
            "log2_lower": lower,
            "lower_holds": bool(log_size >= lower - 1e-12),
            "mass": float(mass),
        },
        tol=1e-12,
    )


def f_mismatch(s: Sequence[int], s_hat: Sequence[int], k: int | None = None) -> int:
    if len(s) != len(s_hat):
        raise ValueError("sequences must have equal length")
    k = k if k is not None else max(list(s) + list(s_hat) + [-1]) + 1
    a, b = counts(s, k), counts(s_hat, k)
    return sum(abs(x - y) for x, y in zip(a, b))


# --- codec -------------------------------------------------------------------


def digits_of(value: int, base: int, length: int) -> tuple[int, ...]:
    out = [0] * length
    for i in range(length - 1, -1, -1):
        value, out[i] = divmod(value, base)
    if value:
        raise OverflowError("value does not fit in the codeword length")
    return tuple(out)


def value_of(digits: Sequence[int], base: int) -> int:
    v = 0
    for d in digits:
        v = v * base + d
    return v


@dataclass(frozen=True)
class Codec:
    """Lexicographic ranking of T into fixed-length |A|-ary codewords.

    ``code_length`` is L = ceil(n (S + eta)) with S and eta in |A|-ary digits
    per symbol; ``eta`` reports the overhead in bits per symbol.
    """

    typical: TypicalSet
    code_length: int

    def __post_init__(self):
        if len(self.typical) == 0:
            raise ValueError("empty typical set, no codec exists")
        if self.base**self.code_length < len(self.typical):
            raise ValueError("code length too short for a lossless codec")

    @classmethod
    def build(cls, typical: TypicalSet, eta: float | None = None) -> "Codec":
        spec = typical.spec
        base = spec.k
        if base == 1:
            return cls(typical, 0)
        s_dig = spec.entropy / math.log2(base)
        if eta is None:
            need = 0
            while base**need < len(typical):
                need += 1
            length = max(need, math.ceil(spec.n * s_dig - 1e-12))
        else:
            if eta < 0:
                raise ValueError("eta must be non-negative")
            length = math.ceil(spec.n * (s_dig + eta / math.log2(base)) - 1e-12)
        return cls(typical, length)

    @property
    def base(self) -> int:
        return self.typical.spec.k

    @property
    def size(self) -> int:
        return self.base**self.code_length

    @property
    def key_bits(self) -> float:
        return self.code_length * math.log2(self.base)

    @property
    def eta(self) -> float:
        spec = self.typical.spec
        return self.key_bits / spec.n - spec.entropy

    @property
    def full(self) -> bool:
        return self.size == len(self.typical)

    def encode(self, seq) -> tuple[int, ...] | int:
        r = self.typical.rank.get(tuple(seq))
        if r is None:
            return EMPTY
        return digits_of(r, self.base, self.code_length)

    def decode(self, codeword) -> tuple[int, ...] | int:
        if codeword == EMPTY:
            return EMPTY
        v = value_of(codeword, self.base)
        if len(codeword) != self.code_length or v >= len(self.typical):
            return EMPTY
        return self.typical.members[v]

    def label(self, r: int) -> tuple[int, ...]:
        """s(r) for the resource state; ranks past |T| wrap around."""
        return self.typical.members[r % len(self.typical)]


def encode(s, c: Codec):
    return c.encode(s)


def decode(cw, c: Codec):
    return c.decode(cw)


def digit_sub(x: Sequence[int], c: Sequence[int], base: int) -> tuple[int, ...]:
    return tuple((a - b) % base for a, b in zip(x, c))


def digit_add(x: Sequence[int], c: Sequence[int], base: int) -> tuple[int, ...]:
    return tuple((a + b) % base for a, b in zip(x, c))


@dataclass(frozen=True)
class BetaMap:
    """beta_x(s) = s(x - c(s)) with digit-wise subtraction modulo |A|."""

    codec: Codec
    x: tuple[int, ...]

    def __post_init__(self):
        x = tuple(int(d) for d in self.x)
        if len(x) != self.codec.code_length or any(not 0 <= d < self.codec.base for d in x):
            raise ValueError("x must be a codeword")
        object.__setattr__(self, "x", x)

    def apply(self, seq) -> tuple[int, ...]:
        cw = self.codec.encode(seq)
        if cw == EMPTY:
            raise ValueError("beta_x is defined on typical sequences only")
        r_hat = digit_sub(self.x, cw, self.codec.base)
        return self.codec.label(value_of(r_hat, self.codec.base))

    def inverse(self, seq) -> tuple[int, ...]:
        if not self.codec.full:
            raise ValueError("beta_x is invertible only for a full codec")
        cw = self.codec.encode(seq)
        if cw == EMPTY:
            raise ValueError("beta_x is defined on typical sequences only")
        c = digit_sub(self.x, cw, self.codec.base)
        return self.codec.decode(c)

    def is_bijective(self) -> bool:
        image = {self.apply(s) for s in self.codec.typical.members}
        return len(image) == len(self.codec.typical)


def beta_x(s, b: BetaMap):
    return b.apply(s)


def beta_x_inverse(s, b: BetaMap):
    return b.inverse(s)


# --- permutation plans --------------------------------------------------------


@dataclass(frozen=True)
class PermutationPlan:
    """Greedy occurrence matching of s against s_hat.

    The k-th occurrence of a symbol in s is matched with its k-th occurrence in
    s_hat. Unmatched positions of s (``insert_idx``) carry BOT in ``s_cor``; the
    unmatched s_hat positions (``leftover_idx``, increasing) fill ``s_err``.
    Indices are 0-based.
    """

    s: tuple[int, ...]
    s_hat: tuple[int, ...]
    f: int
    l_max: int
    match: tuple[int, ...]
    insert_idx: tuple[int, ...]
    leftover_idx: tuple[int, ...]
    s_cor: tuple[int, ...]
    s_err: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.s)

    @property
    def blocks(self) -> tuple[tuple[int, ...], ...]:
        out, start = [], 0
        for i in self.insert_idx:
            out.append(self.s[start:i])
            start = i + 1
        out.append(self.s[start:])
        return tuple(out)

    def reassemble(self) -> tuple[int, ...]:
        out: list[int] = []
        blocks = self.blocks
        for k, i in enumerate(self.insert_idx):
            out.extend(blocks[k])
            out.append(self.s[i])
        out.extend(blocks[-1])
        return tuple(out)

    def key_permutation(self) -> tuple[int, ...]:
        """perm with out[p] = in[perm[p]] mapping s_hat || BOT^{n+L} to BOT^n || s_cor || s_err."""
        n, L = self.n, self.l_max
        perm = [-1] * (2 * n + L)
        for i, j in enumerate(self.match):
            if j >= 0:
                perm[n + i] = j
        for k, j in enumerate(self.leftover_idx):
            perm[2 * n + k] = j
        free = iter(range(n, 2 * n + L))
        for p in range(2 * n + L):
            if perm[p] < 0:
                perm[p] = next(free)
        return tuple(perm)

    def shield_moves(self) -> tuple[tuple[int, int], ...]:
        """(source A' index, destination) pairs; destinations >= n address T[dest - n]."""
        moves = [(j, i) for i, j in enumerate(self.match) if j >= 0]
        moves += [(j, self.n + k) for k, j in enumerate(self.leftover_idx)]
        return tuple(moves)


def build_permutation_plan(s, s_hat, spec: SourceSpec) -> PermutationPlan:
    s = spec.parse(s) if not (isinstance(s, tuple) and all(isinstance(i, int) for i in s)) else s
    s_hat = spec.parse(s_hat) if not (isinstance(s_hat, tuple) and all(isinstance(i, int) for i in s_hat)) else s_hat
    if not (is_typical(s, spec) and is_typical(s_hat, spec)):
        raise ValueError("permutation plans need typical s and s_hat")
    n, k = spec.n, spec.k
    positions: list[list[int]] = [[] for _ in range(k)]
    for j, a in enumerate(s_hat):
        positions[a].append(j)
    seen = [0] * k
    match = []
    used = set()
    for a in s:
        if seen[a] < len(positions[a]):
            j = positions[a][seen[a]]
            match.append(j)
            used.add(j)
        else:
            match.append(-1)
        seen[a] += 1
    insert_idx = tuple(i for i, j in enumerate(match) if j < 0)
    leftover_idx = tuple(j for j in range(n) if j not in used)
    l_max = spec.l_max
    f = f_mismatch(s, s_hat, k)
    if len(leftover_idx) > l_max:
        raise ValueError("mismatch exceeds L_max")
    s_cor = tuple(BOT if j < 0 else a for a, j in zip(s, match))
    s_err = tuple(s_hat[j] for j in leftover_idx) + (BOT,) * (l_max - len(leftover_idx))
    return PermutationPlan(tuple(s), tuple(s_hat), f, l_max, tuple(match), insert_idx, leftover_idx, s_cor, s_err)


def all_sequences(k: int, n: int) -> Iterable[tuple[int, ...]]:
    if k**n > ENUMERATION_GUARD:
        raise ValueError("enumeration guard exceeded")
    for v in range(k**n):
        yield digits_of(v, k, n)
