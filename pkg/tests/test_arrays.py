import numpy as np
import pytest

from ha_array.arrays import (
    MAX_DENSE_KRON_ORDER,
    check_symmetric,
    kron_all,
    matricize,
    mode_product,
    mode_quadratic,
    multi_mode_product,
    unmatricize,
    unvectorize,
    vectorize,
)

from _oracles import kron_reversed


def rand_pd(m, rng):
    a = rng.standard_normal((m, m))
    return a @ a.T + m * np.eye(m)


def test_vectorize_first_index_fastest():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])  # row index first
    assert vectorize(a).tolist() == [1.0, 3.0, 2.0, 4.0]


def test_vectorize_2x2x2_enumeration():
    # A[i,j,k] = 1 + i + 2j + 4k (0-based) lists 1..8 in first-index-fastest order.
    a = np.empty((2, 2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                a[i, j, k] = 1 + i + 2 * j + 4 * k
    assert vectorize(a).tolist() == [1, 2, 3, 4, 5, 6, 7, 8]


def test_vec_roundtrip_random_dims():
    rng = np.random.default_rng(0)
    for _ in range(25):
        k = rng.integers(1, 5)
        dims = tuple(int(d) for d in rng.integers(1, 8, size=k))
        while np.prod(dims) > 10_000:
            dims = dims[:-1]
        a = rng.standard_normal(dims)
        assert np.array_equal(unvectorize(vectorize(a), dims), a)


def test_matricize_mode0_rows():
    a = np.empty((2, 2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                a[i, j, k] = 1 + i + 2 * j + 4 * k
    m = matricize(a, 0)
    assert m.tolist() == [[1, 3, 5, 7], [2, 4, 6, 8]]


def test_matricize_brute_force_enumeration():
    # Row i holds all entries with the chosen index equal to i; columns ordered
    # with lower-numbered remaining modes varying fastest.
    rng = np.random.default_rng(1)
    dims = (3, 4, 2, 3)
    a = rng.standard_normal(dims)
    for mode in range(4):
        m = matricize(a, mode)
        other = [d for d in range(4) if d != mode]
        for idx in np.ndindex(*dims):
            col = 0
            stride = 1
            for d in other:
                col += idx[d] * stride
                stride *= dims[d]
            assert m[idx[mode], col] == a[idx]


def test_matricize_degenerate_one_way():
    a = np.array([1.0, 2.0, 3.0])
    m = matricize(a, 0)
    assert m.shape == (3, 1)
    assert np.array_equal(m[:, 0], a)


def test_vectorize_consistent_with_mode0_matricize():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((4, 3, 2))
    assert np.array_equal(vectorize(a), vectorize(matricize(a, 0)))


def test_matricize_roundtrip_and_errors():
    rng = np.random.default_rng(3)
    for dims in [(5,), (2, 3), (3, 4, 2), (2, 2, 2, 3)]:
        a = rng.standard_normal(dims)
        for mode in range(len(dims)):
            assert np.array_equal(unmatricize(matricize(a, mode), mode, dims), a)
    with pytest.raises(ValueError):
        matricize(a, 4)
    with pytest.raises(ValueError):
        matricize(a, -1)


def test_kron_identities():
    assert np.array_equal(kron_all([np.eye(2), np.eye(3)]), np.eye(6))
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    assert np.array_equal(kron_all([a]), a)
    assert kron_all([np.array([[2.0]]), np.array([[3.0]])]) == pytest.approx(6.0)


def test_kron_guard():
    with pytest.raises(ValueError):
        kron_all([np.eye(MAX_DENSE_KRON_ORDER // 2), np.eye(3)])


def test_mode_product_against_matricize():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((3, 4, 2))
    for mode in range(3):
        b = rng.standard_normal((5, a.shape[mode]))
        out = mode_product(a, b, mode)
        assert np.allclose(matricize(out, mode), b @ matricize(a, mode))


def test_mode_quadratic_identity_factors():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((3, 4, 2))
    for mode in range(3):
        eyes = [np.eye(a.shape[d]) for d in range(3) if d != mode]
        expected = matricize(a, mode) @ matricize(a, mode).T
        assert np.allclose(mode_quadratic(a, mode, eyes), expected, rtol=1e-12)


def test_mode_quadratic_k2_diagonal_oracle():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((2, 2))
    s2_inv = np.diag([1.0, 0.25])  # pre-inverted diag(1, 4)
    expected = matricize(a, 0) @ s2_inv @ matricize(a, 0).T
    got = mode_quadratic(a, 0, [s2_inv])
    assert np.allclose(got, expected, rtol=1e-12)


def test_mode_quadratic_k3_dense_oracle():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((3, 2, 2))
    invs = {d: np.linalg.inv(rand_pd(a.shape[d], rng)) for d in range(3)}
    for mode in range(3):
        others = [d for d in range(3) if d != mode]
        dense = kron_reversed([invs[d] for d in others])
        expected = matricize(a, mode) @ dense @ matricize(a, mode).T
        got = mode_quadratic(a, mode, [invs[d] for d in others])
        scale = np.max(np.abs(expected))
        assert np.max(np.abs(got - expected)) <= 1e-10 * scale


def test_mode_quadratic_psd_property():
    rng = np.random.default_rng(8)
    for _ in range(20):
        dims = tuple(int(d) for d in rng.integers(2, 5, size=3))
        a = rng.standard_normal(dims)
        mode = int(rng.integers(0, 3))
        invs = [np.linalg.inv(rand_pd(dims[d], rng)) for d in range(3) if d != mode]
        s = mode_quadratic(a, mode, invs)
        assert np.allclose(s, s.T)
        w = np.linalg.eigvalsh(s)
        assert w.min() >= -1e-10 * np.trace(s)


def test_kron_ordering_consistency():
    # vec(A)^T kron(S_K..S_1)^{-1} vec(A) == trace(S_0^{-1} modequad(A, 0, rest)).
    rng = np.random.default_rng(9)
    for _ in range(10):
        dims = tuple(int(d) for d in rng.integers(2, 4, size=3))
        a = rng.standard_normal(dims)
        sigmas = [rand_pd(m, rng) for m in dims]
        big = kron_reversed(sigmas)
        v = vectorize(a)
        lhs = v @ np.linalg.solve(big, v)
        invs = [np.linalg.inv(s) for s in sigmas]
        rhs = np.trace(invs[0] @ mode_quadratic(a, 0, invs[1:]))
        assert lhs == pytest.approx(rhs, rel=1e-9)


def test_multi_mode_product_matches_dense_kron_on_vec():
    rng = np.random.default_rng(10)
    dims = (3, 2, 4)
    a = rng.standard_normal(dims)
    mats = [rng.standard_normal((m, m)) for m in dims]
    out = multi_mode_product(a, mats)
    assert np.allclose(vectorize(out), kron_reversed(mats) @ vectorize(a))


def test_check_symmetric():
    s = np.array([[1.0, 0.5], [0.5, 2.0]])
    assert np.array_equal(check_symmetric(s), s)
    with pytest.raises(ValueError):
        check_symmetric(np.array([[1.0, 0.5], [0.4, 2.0]]))
    with pytest.raises(ValueError):
        check_symmetric(np.ones((2, 3)))
