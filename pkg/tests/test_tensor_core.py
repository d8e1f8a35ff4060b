import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

import oracles
from keycost import tensor_core as tc
from keycost.tensor_core import RegisterShape, RegisterState, UnitaryOperator


def random_state(dims, rng, pure=False):
    d = int(np.prod(dims))
    if pure:
        return RegisterState.pure(tc.random_pure(d, rng), dims)
    return RegisterState.density(tc.random_density(d, rng), dims)


def test_ptrace_matches_einsum(rng):
    for _ in range(20):
        dims = tuple(int(x) for x in rng.integers(1, 4, size=int(rng.integers(2, 5))))
        s = random_state(dims, rng)
        keep = sorted(rng.choice(len(dims), size=int(rng.integers(1, len(dims) + 1)), replace=False).tolist())
        assert_allclose(tc.partial_trace(s, keep).data, oracles.ptrace(s.data, dims, keep), atol=1e-12)


def test_ptrace_of_pure_uses_vector_route(rng):
    for _ in range(20):
        dims = (2, 3, 2)
        s = random_state(dims, rng, pure=True)
        for keep in ([0], [1, 2], [2, 0]):
            got = tc.partial_trace(s, keep).data
            want = tc.partial_trace(s.as_density(), keep).data
            assert_allclose(got, want, atol=1e-12)


def test_ptrace_by_label():
    s = RegisterState.density(np.eye(6) / 6, (2, 3), ("A", "B"))
    r = tc.partial_trace(s, ["B"])
    assert r.shape.labels == ("B",)
    assert_allclose(r.data, np.eye(3) / 3)


def test_ptrace_rejects_bad_keep():
    s = RegisterState.density(np.eye(4) / 4, (2, 2))
    with pytest.raises(ValueError):
        tc.partial_trace(s, [])
    with pytest.raises(ValueError):
        tc.partial_trace(s, [0, 0])
    with pytest.raises(IndexError):
        tc.partial_trace(s, [2])
    with pytest.raises(KeyError):
        tc.partial_trace(s, ["A"])


def test_permute_matches_kron_order(rng):
    a = tc.random_density(2, rng)
    b = tc.random_density(3, rng)
    c = tc.random_density(2, rng)
    s = RegisterState.density(np.kron(np.kron(a, b), c), (2, 3, 2))
    p = tc.permute_subsystems(s, [2, 0, 1])
    assert p.dims == (2, 2, 3)
    assert_allclose(p.data, np.kron(np.kron(c, a), b), atol=1e-12)


def test_permute_round_trip(rng):
    dims = (2, 3, 4)
    s = random_state(dims, rng, pure=True)
    perm = [1, 2, 0]
    inv = list(np.argsort(perm))
    back = tc.permute_subsystems(tc.permute_subsystems(s, perm), inv)
    assert_allclose(back.data, s.data)
    with pytest.raises(ValueError):
        tc.permute_subsystems(s, [0, 0, 1])


def test_kron_of_pure_and_mixed(rng):
    a = random_state((2,), rng, pure=True)
    b = random_state((3,), rng)
    k = tc.kron(a, b)
    assert k.kind == "density"
    assert_allclose(k.data, np.kron(a.dm(), b.data))
    assert tc.kron(a, a).kind == "pure"
    with pytest.raises(TypeError):
        tc.kron(a, UnitaryOperator.of(np.eye(2)))


def test_partial_transpose_of_bell_state():
    phi = oracles.max_entangled(2)
    pt = tc.partial_transpose(phi, (2, 2), [1])
    assert np.linalg.eigvalsh(pt)[0] == pytest.approx(-0.5)
    # transposing both sides is the full transpose
    assert_allclose(tc.partial_transpose(phi, (2, 2), [0, 1]), phi.T)


def test_apply_unitary_on_subsystem(rng):
    s = random_state((2, 3), rng)
    u = tc.random_unitary(3, rng)
    full = np.kron(np.eye(2), u)
    assert_allclose(tc.apply_unitary(s, u, [1]).data, full @ s.data @ full.conj().T, atol=1e-12)
    with pytest.raises(ValueError):
        tc.apply_unitary(s, u, [0])


def test_unitary_validation():
    with pytest.raises(ValueError):
        UnitaryOperator.of(np.array([[1, 1], [0, 1]]))
    u = UnitaryOperator.of(np.array([[0, 1], [1, 0]]))
    assert_allclose(u.dagger().data, u.data)


def test_state_validation():
    with pytest.raises(ValueError):
        RegisterState.pure(np.array([1, 1]), (2,))
    with pytest.raises(ValueError):
        RegisterState.density(np.diag([0.5, 0.6]), (2,))
    with pytest.raises(ValueError):
        RegisterState.density(np.array([[0.5, 1], [1, 0.5]]), (2,))
    with pytest.raises(ValueError):
        RegisterState.density(np.array([[0.5, 0.1], [0.2, 0.5]]), (2,))
    with pytest.raises(ValueError):
        RegisterShape((2, 0))
    with pytest.raises(ValueError):
        RegisterShape((2, 2), ("A",))


def test_trace_distance_routes_agree(rng):
    for _ in range(20):
        a = random_state((2, 2), rng, pure=True)
        b = random_state((2, 2), rng, pure=True)
        mixed = tc.trace_distance(a.as_density(), b.as_density())
        assert tc.trace_distance(a, b) == pytest.approx(mixed, abs=1e-10)


def test_fidelity_routes_agree(rng):
    for _ in range(20):
        a = random_state((3,), rng)
        b = random_state((3,), rng, pure=True)
        assert tc.fidelity(a, b) == pytest.approx(np.vdot(b.data, a.data @ b.data).real, abs=1e-10)
        c = random_state((3,), rng)
        f = tc.fidelity(a, c)
        td = tc.trace_distance(a, c)
        # Fuchs-van de Graaf
        assert 1 - math.sqrt(f) <= td + 1e-10 <= math.sqrt(1 - f) + 2e-10


def test_entropy_and_purification(rng):
    for _ in range(20):
        s = random_state((2, 3), rng)
        p = tc.purify(s)
        assert p.is_pure
        assert_allclose(tc.partial_trace(p, [0, 1]).data, s.data, atol=1e-10)
        assert tc.von_neumann_entropy(s) == pytest.approx(oracles.entropy(s.data), abs=1e-10)
        assert tc.von_neumann_entropy(p, [0, 1]) == pytest.approx(tc.von_neumann_entropy(p, [2]), abs=1e-9)
    assert tc.von_neumann_entropy(RegisterState.density(np.eye(4) / 4, (4,))) == pytest.approx(2.0)


def test_projective_measure_probabilities(rng):
    s = random_state((2, 2), rng)
    basis = tc.random_unitary(2, rng)
    out = tc.projective_measure(s, basis, [0])
    assert sum(p for _, p, _ in out) == pytest.approx(1)
    red = tc.partial_trace(s, [0]).data
    for k, p, post in out:
        assert p == pytest.approx(np.vdot(basis[:, k], red @ basis[:, k]).real)
        assert np.trace(post.data).real == pytest.approx(1)
    with pytest.raises(ValueError):
        tc.projective_measure(s, np.ones((2, 2)), [0])


def test_random_unitary_is_unitary(rng):
    for d in (1, 2, 5):
        u = tc.random_unitary(d, rng)
        assert_allclose(u.conj().T @ u, np.eye(d), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**32 - 1), st.booleans())
def test_json_round_trip(da, db, seed, pure):
    s = random_state((da, db), np.random.default_rng(seed), pure=pure)
    back = RegisterState.from_json(s.to_json())
    assert back.kind == s.kind
    assert back.dims == s.dims
    assert_allclose(back.data, s.data)
