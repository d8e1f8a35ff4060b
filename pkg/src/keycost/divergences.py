"""Divergences, the Neyman-Pearson hypothesis-testing engine and key bounds.

All logarithms are base 2. Support decisions use ``SUPPORT_CLIP`` throughout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import tensor_core as tc
from .states import (
    Ensemble,
    GeneralizedPrivateState,
    Irreducibility,
    check_strict_irreducibility,
    dephased_max_entangled,
    make_max_entangled,
)
from .tensor_core import RegisterState

SUPPORT_CLIP = 1e-10
MIXTURE_TOL = 1e-9
DUAL_MIN_THRESHOLD = 1e-9


class Method(str, enum.Enum):
    CLOSED_FORM = "closed_form"
    EIGENDECOMPOSITION = "eigendecomposition"
    NEYMAN_PEARSON = "neyman_pearson"
    CERTIFICATE = "certificate"


@dataclass(frozen=True)
class DivergenceResult:
    value: float
    method: Method
    infinite: bool = False
    details: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def inf(cls, method: Method) -> "DivergenceResult":
        return cls(math.inf, method, True)

    def to_json(self) -> dict:
        return {
            "value": "inf" if self.infinite else self.value,
            "method": self.method.value,
            "details": dict(self.details),
        }


@dataclass(frozen=True)
class DualCertificate:
    y: float
    Y: np.ndarray
    value: float
    feasible: bool
    min_eigenvalue: float


@dataclass(frozen=True)
class BoundReport:
    name: str
    lhs: float
    rhs: float
    satisfied: bool
    slack: float
    parameters: Mapping[str, float]

    @classmethod
    def check(cls, name: str, lhs: float, rhs: float, parameters: Mapping, tol: float = 1e-9) -> "BoundReport":
        return cls(name, float(lhs), float(rhs), bool(lhs <= rhs + tol), float(rhs - lhs), dict(parameters))

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "satisfied": self.satisfied,
            "slack": self.slack,
            "params": dict(self.parameters),
        }


def _pair(rho, sigma) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(rho, RegisterState) and isinstance(sigma, RegisterState):
        if rho.dims != sigma.dims:
            raise ValueError(f"shape mismatch: {rho.dims} vs {sigma.dims}")
        return tc.hermitize(rho.dm()), tc.hermitize(sigma.dm())
    r = tc.hermitize(np.asarray(rho.dm() if isinstance(rho, RegisterState) else rho, dtype=complex))
    s = tc.hermitize(np.asarray(sigma.dm() if isinstance(sigma, RegisterState) else sigma, dtype=complex))
    if r.shape != s.shape:
        raise ValueError(f"shape mismatch: {r.shape} vs {s.shape}")
    return r, s


def _kernel_weight(r: np.ndarray, s: np.ndarray) -> float:
    """Tr[rho Pi_ker(sigma)]."""
    w, v = np.linalg.eigh(s)
    k = v[:, w <= SUPPORT_CLIP]
    return float(np.trace(k.conj().T @ r @ k).real) if k.size else 0.0


def relative_entropy(rho, sigma) -> DivergenceResult:
    r, s = _pair(rho, sigma)
    if _kernel_weight(r, s) > SUPPORT_CLIP:
        return DivergenceResult.inf(Method.EIGENDECOMPOSITION)
    wr, vr = np.linalg.eigh(r)
    keep = wr > tc.PSD_CLIP
    wr, vr = wr[keep], vr[:, keep]
    log_s = tc.matrix_function(s, np.log2, clip=SUPPORT_CLIP)
    cross = float(np.einsum("i,ji,jk,ki->", wr, vr.conj(), log_s, vr).real)
    val = float(np.sum(wr * np.log2(wr))) - cross
    return DivergenceResult(max(val, 0.0) if val > -1e-12 else val, Method.EIGENDECOMPOSITION)


def sandwiched_renyi(rho, sigma, alpha: float) -> DivergenceResult:
    if alpha <= 0 or alpha == 1:
        raise ValueError("alpha must lie in (0,1) or (1,inf)")
    r, s = _pair(rho, sigma)
    if alpha > 1 and _kernel_weight(r, s) > SUPPORT_CLIP:
        return DivergenceResult.inf(Method.EIGENDECOMPOSITION)
    p = (1 - alpha) / (2 * alpha)
    sp = tc.matrix_function(s, lambda w: w**p, clip=SUPPORT_CLIP)
    inner = tc.hermitize(sp @ r @ sp)
    w = np.linalg.eigvalsh(inner)
    q = float(np.sum(np.clip(w, 0.0, None) ** alpha))
    if q <= 0:
        return DivergenceResult.inf(Method.EIGENDECOMPOSITION)
    return DivergenceResult(math.log2(q) / (alpha - 1), Method.EIGENDECOMPOSITION)


def max_relative_entropy(rho, sigma) -> DivergenceResult:
    r, s = _pair(rho, sigma)
    if _kernel_weight(r, s) > SUPPORT_CLIP:
        return DivergenceResult.inf(Method.EIGENDECOMPOSITION)
    s_inv_half = tc.matrix_function(s, lambda w: w**-0.5, clip=SUPPORT_CLIP)
    top = float(np.linalg.eigvalsh(tc.hermitize(s_inv_half @ r @ s_inv_half))[-1])
    return DivergenceResult(math.log2(top), Method.EIGENDECOMPOSITION)


def min_relative_entropy(rho, sigma) -> DivergenceResult:
    r, s = _pair(rho, sigma)
    proj = tc.support_projector(r, SUPPORT_CLIP)
    overlap = float(np.trace(proj @ s).real)
    if overlap <= 0:
        return DivergenceResult.inf(Method.CLOSED_FORM)
    return DivergenceResult(-math.log2(overlap), Method.CLOSED_FORM)


def _np_split(r: np.ndarray, s: np.ndarray, t: float, window: float):
    """Eigenvectors of rho - t sigma: above ``window``, within it, and below."""
    w, v = np.linalg.eigh(r - t * s)
    return v[:, w > window], v[:, np.abs(w) <= window], v[:, w < -window]


def _weight(m: np.ndarray, cols: np.ndarray) -> float:
    return float(np.trace(cols.conj().T @ m @ cols).real) if cols.size else 0.0


class _Spectral:
    """rho kept as eigenpairs above the support clip; weights as sums of squared overlaps."""

    def __init__(self, r: np.ndarray):
        w, v = np.linalg.eigh(r)
        keep = w > SUPPORT_CLIP
        self.vals, self.vecs = w[keep], v[:, keep]
        self.matrix = (self.vecs * self.vals) @ self.vecs.conj().T

    def weight(self, cols: np.ndarray) -> float:
        if not cols.size:
            return 0.0
        return float(self.vals @ np.sum(np.abs(self.vecs.conj().T @ cols) ** 2, axis=1))


def neyman_pearson(rho, sigma, epsilon: float, iterations: int = 200):
    """Optimal test for min Tr[L sigma] s.t. Tr[L rho] >= 1-eps, 0 <= L <= 1.

    Rejected weights Tr[rho P_<=] are compared against eps directly so that
    small deficits keep their relative precision.
    Returns (Lambda, primal value, threshold t, dual lower bound or None).
    """
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must lie in [0, 1)")
    r, s = _pair(rho, sigma)
    target = 1.0 - epsilon
    spec = _Spectral(r)
    r = spec.matrix
    w_s, v_s = np.linalg.eigh(s)
    ker = v_s[:, w_s <= SUPPORT_CLIP]
    if ker.size and spec.weight(ker) >= target - 1e-14:
        return ker @ ker.conj().T, 0.0, math.inf, 0.0

    def accepted(t: float) -> bool:
        _, zero, neg = _np_split(r, s, t, 0.0)
        return spec.weight(np.hstack([zero, neg])) <= epsilon

    norm_s = float(max(w_s[-1], 0.0))
    lo, hi = 0.0, 1.0
    while accepted(hi):
        lo, hi = hi, hi * 2
        if hi > 2.0**80:
            raise ArithmeticError("threshold search diverged")
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if accepted(mid):
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    window = (hi - lo) * norm_s + 1e-14
    pos, zero, neg = _np_split(r, s, lo, window)
    deficit = spec.weight(np.hstack([zero, neg])) - epsilon
    z = spec.weight(zero)
    q = 0.0 if deficit <= 1e-15 or z <= 0 else min(deficit / z, 1.0)
    lam = pos @ pos.conj().T + q * (zero @ zero.conj().T)
    primal = float(np.trace(lam @ s).real)
    dual = None
    if lo > DUAL_MIN_THRESHOLD:  # the bound divides by lo
        ev = np.linalg.eigvalsh(r - lo * s)
        dual = (target - float(np.sum(ev[ev > 0]))) / lo
    return lam, primal, lo, dual


def hypothesis_testing_divergence(rho, sigma, epsilon: float) -> DivergenceResult:
    lam, primal, t, dual = neyman_pearson(rho, sigma, epsilon)
    if primal <= 0:
        return DivergenceResult.inf(Method.NEYMAN_PEARSON)
    details = {"threshold": t, "primal": primal}
    if dual is not None:
        details["dual"] = dual
    return DivergenceResult(-math.log2(primal), Method.NEYMAN_PEARSON, False, details)


def key_rate_from_pure(vec: np.ndarray, dims, alice: int, basis: np.ndarray, bob, eve) -> float:
    """I(X;B) - I(X;E) after measuring subsystem ``alice`` of a pure state in ``basis``."""
    dims = tuple(dims)
    n = len(dims)
    rest = [i for i in range(n) if i != alice]
    t = np.moveaxis(vec.reshape(dims), alice, 0).reshape(dims[alice], -1)
    rest_dims = [dims[i] for i in rest]
    b_pos = [rest.index(i) for i in bob]
    e_pos = [rest.index(i) for i in eve]
    probs, rb, re = [], [], []
    for k in range(basis.shape[1]):
        phi = basis[:, k].conj() @ t
        p = float(np.vdot(phi, phi).real)
        if p <= tc.PSD_CLIP:
            continue
        m = np.outer(phi, phi.conj()) / p
        probs.append(p)
        rb.append(tc.ptrace_matrix(m, rest_dims, b_pos))
        re.append(tc.ptrace_matrix(m, rest_dims, e_pos))
    probs = np.array(probs)

    def holevo(blocks):
        avg = sum(p * b for p, b in zip(probs, blocks))
        h = tc.spectrum_entropy(np.linalg.eigvalsh(tc.hermitize(avg)))
        return h - sum(p * tc.spectrum_entropy(np.linalg.eigvalsh(tc.hermitize(b))) for p, b in zip(probs, blocks))

    return holevo(rb) - holevo(re)


def devetak_winter_rate(g: GeneralizedPrivateState) -> float:
    """Measure Alice's key part in {e_i}; Eve holds the purification of the whole state."""
    purified = tc.purify(g.expanded())
    dims = purified.dims  # (A, B, A', B', E)
    basis = g.key.basis_a
    if basis.shape[1] < basis.shape[0]:
        # complete the measurement; the completion has zero weight
        q, _ = np.linalg.qr(np.hstack([basis, np.eye(basis.shape[0])]))
        basis = np.hstack([basis, q[:, basis.shape[1]:basis.shape[0]]])
    return key_rate_from_pure(purified.data, dims, 0, basis, bob=[1, 3], eve=[4])


def kf_ensemble_value(e: Ensemble, target: RegisterState | np.ndarray | None = None) -> float:
    """sum_k p_k S_A(gamma(psi_k)), an upper bound on K_F of the mixture."""
    for _, g in e.members:
        if check_strict_irreducibility(g) is Irreducibility.ENTANGLED_CONDITIONAL:
            raise ValueError("ensemble member is not strictly irreducible")
    if target is not None:
        t = target.dm() if isinstance(target, RegisterState) else np.asarray(target)
        gap = 0.5 * tc.trace_norm_hermitian(e.mixture().data - t)
        if gap > MIXTURE_TOL:
            raise ValueError(f"ensemble mixture differs from target (trace distance {gap:.3e})")
    return float(sum(p * g.key.entropy for p, g in e.members))


def dual_certificate_value(
    d_k: int,
    shield: RegisterState | np.ndarray,
    epsilon: float,
    y: float | None = None,
    Y: np.ndarray | None = None,
    tol: float = 1e-10,
) -> DualCertificate:
    """Weak-duality certificate; defaults to y = 1/d_k, Y = 0."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    rho = shield.dm() if isinstance(shield, RegisterState) else np.asarray(shield, dtype=complex)
    y = 1.0 / d_k if y is None else float(y)
    if y < 0:
        raise ValueError("y must be non-negative")
    phi = make_max_entangled(d_k).dm()
    big = np.kron(y * phi - dephased_max_entangled(d_k), rho)
    Y = np.zeros_like(big) if Y is None else np.asarray(Y, dtype=complex)
    if np.linalg.eigvalsh(tc.hermitize(Y))[0] < -tol:
        raise ValueError("Y must be PSD")
    lo = float(np.linalg.eigvalsh(tc.hermitize(Y - big))[0])
    value = y * (1 - epsilon) - float(np.trace(Y).real)
    return DualCertificate(y, Y, value, lo >= -tol, lo)


def yield_cost_bounds(d_k: int, eps1: float, eps2: float = 0.0) -> BoundReport:
    """Key-cost bracket for SIR private states with the yield-cost correction term.

    lhs is the lower bound log d_k - log(1/(1-eps1)) on K_C^{eps1}, rhs the upper
    bound log d_k.
    """
    if not (0 <= eps1 <= 1 and 0 <= eps2 <= 1) or eps1 + eps2 >= 1:
        raise ValueError("need eps1, eps2 in [0,1] with eps1 + eps2 < 1")
    log_d = math.log2(d_k)
    correction = math.log2(1 / (1 - (eps1 + eps2)))
    lower = log_d - math.log2(1 / (1 - eps1))
    return BoundReport.check(
        "key_cost_bracket",
        lower,
        log_d,
        {"d_k": d_k, "eps1": eps1, "eps2": eps2, "correction": correction, "kd_upper": log_d + correction},
    )
