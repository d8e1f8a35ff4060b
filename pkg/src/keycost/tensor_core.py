"""Dense linear algebra over multipartite registers.

States are stored row-major with subsystem dimensions ``dims``; subsystem 0
is the most significant tensor factor. All entropies are in bits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PSD_CLIP = 1e-12
DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class RegisterShape:
    dims: tuple[int, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"dims must be positive, got {self.dims}")
        object.__setattr__(self, "dims", dims)
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != len(dims):
                raise ValueError("one label per subsystem required")
            object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_sub(self) -> int:
        return len(self.dims)

    def index(self, key: int | str) -> int:
        if isinstance(key, str):
            if self.labels is None or key not in self.labels:
                raise KeyError(f"unknown subsystem label {key!r}")
            return self.labels.index(key)
        if not 0 <= key < self.n_sub:
            raise IndexError(f"subsystem {key} out of range for {self.n_sub} subsystems")
        return int(key)

    def indices(self, keys: Iterable[int | str]) -> tuple[int, ...]:
        return tuple(self.index(k) for k in keys)

    def select(self, idx: Sequence[int]) -> "RegisterShape":
        labels = None if self.labels is None else tuple(self.labels[i] for i in idx)
        return RegisterShape(tuple(self.dims[i] for i in idx), labels)

    def concat(self, other: "RegisterShape") -> "RegisterShape":
        if self.labels is not None and other.labels is not None:
            labels = self.labels + other.labels
        else:
            labels = None
        return RegisterShape(self.dims + other.dims, labels)


def _as_shape(dims) -> RegisterShape:
    return dims if isinstance(dims, RegisterShape) else RegisterShape(tuple(dims))


def hermitize(m: np.ndarray) -> np.ndarray:
    return (m + m.conj().T) / 2


@dataclass(frozen=True)
class RegisterState:
    """A pure (vector) or mixed (density matrix) state on a register."""

    shape: RegisterShape
    data: np.ndarray
    kind: str = "density"
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        shape = _as_shape(self.shape)
        object.__setattr__(self, "shape", shape)
        data = np.array(self.data, dtype=complex)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        d = shape.size
        if self.kind == "pure":
            if data.shape != (d,):
                raise ValueError(f"pure payload must have shape ({d},), got {data.shape}")
            norm = np.linalg.norm(data)
            if abs(norm - 1) > self.tol:
                raise ValueError(f"pure state not normalized (norm {norm})")
        elif self.kind == "density":
            if data.shape != (d, d):
                raise ValueError(f"density payload must have shape ({d},{d}), got {data.shape}")
            if np.max(np.abs(data - data.conj().T), initial=0.0) > self.tol:
                raise ValueError("density matrix not Hermitian")
            if abs(np.trace(data).real - 1) > self.tol:
                raise ValueError(f"density matrix trace {np.trace(data).real} != 1")
            lo = np.linalg.eigvalsh(hermitize(data))[0]
            if lo < -self.tol:
                raise ValueError(f"density matrix not PSD (min eigenvalue {lo})")
        else:
            raise ValueError(f"unknown state kind {self.kind!r}")

    @classmethod
    def pure(cls, vec, dims, labels=None, tol: float = DEFAULT_TOL) -> "RegisterState":
        return cls(RegisterShape(tuple(dims), labels), np.asarray(vec), "pure", tol)

    @classmethod
    def density(cls, mat, dims, labels=None, tol: float = DEFAULT_TOL) -> "RegisterState":
        return cls(RegisterShape(tuple(dims), labels), np.asarray(mat), "density", tol)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.shape.dims

    @property
    def dim(self) -> int:
        return self.shape.size

    @property
    def is_pure(self) -> bool:
        return self.kind == "pure"

    def dm(self) -> np.ndarray:
        """Density matrix form (a fresh array)."""
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return np.array(self.data)

    def as_density(self) -> "RegisterState":
        if not self.is_pure:
            return self
        return RegisterState(self.shape, self.dm(), "density", self.tol)

    def relabel(self, labels: Sequence[str]) -> "RegisterState":
        return RegisterState(RegisterShape(self.dims, tuple(labels)), self.data, self.kind, self.tol)

    def to_json(self) -> dict:
        flat = self.data.reshape(-1)
        return {
            "dims": list(self.dims),
            "kind": self.kind,
            "re": [float(v) for v in flat.real],
            "im": [float(v) for v in flat.imag],
        }

    @classmethod
    def from_json(cls, obj: dict | str, tol: float = DEFAULT_TOL) -> "RegisterState":
        if isinstance(obj, str):
            obj = json.loads(obj)
        dims = tuple(int(d) for d in obj["dims"])
        kind = obj["kind"]
        flat = np.asarray(obj["re"], dtype=float) + 1j * np.asarray(obj.get("im", [0.0] * len(obj["re"])), dtype=float)
        d = int(np.prod(dims))
        data = flat if kind == "pure" else flat.reshape(d, d)
        return cls(RegisterShape(dims), data, kind, tol)


@dataclass(frozen=True)
class UnitaryOperator:
    shape: RegisterShape
    data: np.ndarray
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        shape = _as_shape(self.shape)
        object.__setattr__(self, "shape", shape)
        data = np.array(self.data, dtype=complex)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        d = shape.size
        if data.shape != (d, d):
            raise ValueError(f"operator must be {d}x{d}, got {data.shape}")
        err = np.max(np.abs(data.conj().T @ data - np.eye(d)), initial=0.0)
        if err > self.tol:
            raise ValueError(f"operator not unitary (deviation {err:.2e})")

    @classmethod
    def of(cls, mat, dims=None, tol: float = DEFAULT_TOL) -> "UnitaryOperator":
        mat = np.asarray(mat)
        if dims is None:
            dims = (mat.shape[0],)
        return cls(RegisterShape(tuple(dims)), mat, tol)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.shape.dims

    def dagger(self) -> "UnitaryOperator":
        return UnitaryOperator(self.shape, self.data.conj().T, self.tol)

    def to_json(self) -> dict:
        flat = self.data.reshape(-1)
        return {"dims": list(self.dims), "re": [float(v) for v in flat.real], "im": [float(v) for v in flat.imag]}

    @classmethod
    def from_json(cls, obj: dict, tol: float = DEFAULT_TOL) -> "UnitaryOperator":
        dims = tuple(int(d) for d in obj["dims"])
        d = int(np.prod(dims))
        flat = np.asarray(obj["re"], dtype=float) + 1j * np.asarray(obj.get("im", [0.0] * d * d), dtype=float)
        return cls(RegisterShape(dims), flat.reshape(d, d), tol)


# --- array-level helpers -----------------------------------------------------


def ptrace_matrix(mat: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Partial trace of a density matrix, keeping ``keep`` in the given order."""
    dims = tuple(dims)
    n = len(dims)
    keep = list(keep)
    drop = [i for i in range(n) if i not in keep]
    t = mat.reshape(dims + dims)
    # move kept row axes then kept column axes to the front, traced axes last
    perm = keep + [k + n for k in keep] + drop + [k + n for k in drop]
    t = t.transpose(perm)
    dk = int(np.prod([dims[i] for i in keep])) if keep else 1
    dd = int(np.prod([dims[i] for i in drop])) if drop else 1
    t = t.reshape(dk, dk, dd, dd)
    return np.einsum("abii->ab", t)


def permute_matrix(mat: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder subsystems: new subsystem k is old subsystem ``perm[k]``."""
    dims = tuple(dims)
    n = len(dims)
    d = int(np.prod(dims))
    t = mat.reshape(dims + dims).transpose(list(perm) + [p + n for p in perm])
    return t.reshape(d, d)


def permute_vector(vec: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    return vec.reshape(tuple(dims)).transpose(list(perm)).reshape(-1)


def partial_transpose(mat: np.ndarray, dims: Sequence[int], sub: Sequence[int]) -> np.ndarray:
    dims = tuple(dims)
    n = len(dims)
    axes = list(range(2 * n))
    for k in sub:
        axes[k], axes[k + n] = axes[k + n], axes[k]
    d = int(np.prod(dims))
    return mat.reshape(dims + dims).transpose(axes).reshape(d, d)


def embed_operator(op: np.ndarray, dims: Sequence[int], target: Sequence[int]) -> np.ndarray:
    """Full-space matrix of ``op`` acting on subsystems ``target`` (in that order)."""
    dims = tuple(dims)
    target = list(target)
    rest = [i for i in range(len(dims)) if i not in target]
    d_rest = int(np.prod([dims[i] for i in rest])) if rest else 1
    full = np.kron(op, np.eye(d_rest))
    order = target + rest
    inv = np.argsort(order)
    sub_dims = [dims[i] for i in order]
    return permute_matrix(full, sub_dims, inv)


def spectrum_entropy(eigs: np.ndarray, clip: float = PSD_CLIP) -> float:
    p = np.asarray(eigs, dtype=float)
    p = p[p > clip]
    return float(-np.sum(p * np.log2(p)))


def matrix_function(m: np.ndarray, fn, clip: float | None = None) -> np.ndarray:
    """Apply ``fn`` to the eigenvalues of Hermitian ``m``.

    With ``clip`` set, eigenvalues at or below it are dropped (support-restricted).
    """
    w, v = np.linalg.eigh(hermitize(m))
    if clip is not None:
        mask = w > clip
        w, v = w[mask], v[:, mask]
    return (v * fn(w)) @ v.conj().T


def support_projector(m: np.ndarray, clip: float) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(m))
    v = v[:, w > clip]
    return v @ v.conj().T


# --- operations on RegisterState ---------------------------------------------


def kron(a, b):
    """Tensor product of two states or two unitaries."""
    if isinstance(a, RegisterState) and isinstance(b, RegisterState):
        shape = a.shape.concat(b.shape)
        if a.is_pure and b.is_pure:
            return RegisterState(shape, np.kron(a.data, b.data), "pure", max(a.tol, b.tol))
        return RegisterState(shape, np.kron(a.dm(), b.dm()), "density", max(a.tol, b.tol))
    if isinstance(a, UnitaryOperator) and isinstance(b, UnitaryOperator):
        return UnitaryOperator(a.shape.concat(b.shape), np.kron(a.data, b.data), max(a.tol, b.tol))
    raise TypeError(f"kron kind mismatch: {type(a).__name__} vs {type(b).__name__}")


def _check_perm(perm: Sequence[int], n: int) -> list[int]:
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(n)):
        raise ValueError(f"{perm} is not a permutation of {n} subsystems")
    return perm


def permute_subsystems(s: RegisterState, perm: Sequence[int]) -> RegisterState:
    """New subsystem k is old subsystem ``perm[k]``."""
    perm = _check_perm(perm, s.shape.n_sub)
    shape = s.shape.select(perm)
    if s.is_pure:
        return RegisterState(shape, permute_vector(s.data, s.dims, perm), "pure", s.tol)
    return RegisterState(shape, permute_matrix(s.data, s.dims, perm), "density", s.tol)


def partial_trace(s: RegisterState, keep: Iterable[int | str]) -> RegisterState:
    idx = s.shape.indices(keep)
    if not idx:
        raise ValueError("keep set must be non-empty")
    if len(set(idx)) != len(idx):
        raise ValueError("duplicate subsystem in keep set")
    if s.is_pure:
        n = s.shape.n_sub
        drop = [i for i in range(n) if i not in idx]
        t = s.data.reshape(s.dims).transpose(list(idx) + drop)
        dk = int(np.prod([s.dims[i] for i in idx]))
        m = t.reshape(dk, -1)
        red = m @ m.conj().T
    else:
        red = ptrace_matrix(s.data, s.dims, idx)
    return RegisterState(s.shape.select(idx), hermitize(red), "density", s.tol)


def apply_unitary(s: RegisterState, u: UnitaryOperator | np.ndarray, target: Sequence[int | str]) -> RegisterState:
    idx = s.shape.indices(target)
    mat = u.data if isinstance(u, UnitaryOperator) else np.asarray(u, dtype=complex)
    tdims = [s.dims[i] for i in idx]
    if mat.shape != (int(np.prod(tdims)),) * 2:
        raise ValueError(f"unitary of shape {mat.shape} does not match target dims {tdims}")
    full = embed_operator(mat, s.dims, idx)
    if s.is_pure:
        return RegisterState(s.shape, full @ s.data, "pure", s.tol)
    return RegisterState(s.shape, full @ s.data @ full.conj().T, "density", s.tol)


def hermitian_eig(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order with matching orthonormal eigenvector columns."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    w, v = np.linalg.eigh(hermitize(m))
    return w[::-1], v[:, ::-1]


def _same_shape(a: RegisterState, b: RegisterState):
    if a.dims != b.dims:
        raise ValueError(f"shape mismatch: {a.dims} vs {b.dims}")


def trace_norm_hermitian(m: np.ndarray) -> float:
    return float(np.sum(np.abs(np.linalg.eigvalsh(hermitize(m)))))


def trace_distance(a: RegisterState, b: RegisterState) -> float:
    _same_shape(a, b)
    if a.is_pure and b.is_pure:
        ov = abs(np.vdot(a.data, b.data)) ** 2
        return float(math.sqrt(max(0.0, 1.0 - ov)))
    return min(1.0, 0.5 * trace_norm_hermitian(a.dm() - b.dm()))


def fidelity(a: RegisterState, b: RegisterState) -> float:
    """Squared fidelity ||sqrt(a) sqrt(b)||_1^2."""
    _same_shape(a, b)
    if a.is_pure:
        f = np.vdot(a.data, b.dm() @ a.data).real
    elif b.is_pure:
        f = np.vdot(b.data, a.dm() @ b.data).real
    else:
        sa = matrix_function(a.data, lambda w: np.sqrt(np.clip(w, 0, None)))
        sb = matrix_function(b.data, lambda w: np.sqrt(np.clip(w, 0, None)))
        f = np.sum(np.linalg.svd(sa @ sb, compute_uv=False)) ** 2
    return float(min(1.0, max(0.0, f)))


def von_neumann_entropy(s: RegisterState, subsystem: Iterable[int | str] | None = None) -> float:
    if subsystem is not None:
        s = partial_trace(s, subsystem)
    if s.is_pure:
        return 0.0
    return spectrum_entropy(np.linalg.eigvalsh(hermitize(s.data)))


def purify(rho: RegisterState, clip: float = PSD_CLIP) -> RegisterState:
    """Purification on (system, E) with dim E = rank(rho)."""
    if rho.is_pure:
        return RegisterState(rho.shape.concat(RegisterShape((1,), ("E",) if rho.shape.labels else None)), rho.data, "pure", rho.tol)
    w, v = hermitian_eig(rho.data)
    keep = w > clip
    w, v = w[keep], v[:, keep]
    w = w / w.sum()
    vec = (v * np.sqrt(w)).reshape(-1)
    shape = rho.shape.concat(RegisterShape((len(w),), ("E",) if rho.shape.labels else None))
    return RegisterState(shape, vec / np.linalg.norm(vec), "pure", rho.tol)


def projective_measure(
    s: RegisterState,
    basis: np.ndarray,
    target: Sequence[int | str],
    labels: Sequence | None = None,
    tol: float = 1e-10,
) -> list[tuple[object, float, RegisterState]]:
    """Measure ``target`` in the orthonormal columns of ``basis``.

    Returns (label, probability, normalized post-state) for every outcome with
    probability above ``tol``; post-states keep the full register.
    """
    idx = s.shape.indices(target)
    basis = np.asarray(basis, dtype=complex)
    dt = int(np.prod([s.dims[i] for i in idx]))
    if basis.shape != (dt, dt) or np.max(np.abs(basis.conj().T @ basis - np.eye(dt))) > tol:
        raise ValueError("measurement basis must be a complete orthonormal family on the target")
    labels = list(range(dt)) if labels is None else list(labels)
    rho = s.dm()
    out = []
    for k in range(dt):
        proj = np.outer(basis[:, k], basis[:, k].conj())
        full = embed_operator(proj, s.dims, idx)
        post = full @ rho @ full
        p = float(np.trace(post).real)
        if p > tol:
            out.append((labels[k], p, RegisterState(s.shape, hermitize(post / p), "density", s.tol)))
    total = sum(p for _, p, _ in out)
    if abs(total - 1) > max(tol * dt, 1e-9):
        raise ValueError(f"outcome probabilities sum to {total}")
    return out


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a Ginibre matrix."""
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diag(r) / np.abs(np.diag(r))
    return q * ph


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = d if rank is None else rank
    g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    m = g @ g.conj().T
    return m / np.trace(m).real


def random_pure(d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)
