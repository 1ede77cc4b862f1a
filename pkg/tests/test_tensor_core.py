import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xorsep.tensor_core import (
    KronTermSum,
    all_bipartitions,
    apply_map_from_tensor,
    as_hermitian,
    clip_psd,
    haar_unitary,
    hermitian_spectral,
    kron_matvec,
    matricize,
    operator_norm,
    pairing,
    partial_trace,
    polar_unitary,
    trace_norm,
    unmatricize,
)

from conftest import dense_kron, rand_complex, rand_hermitian


def random_kts(rng, k, d, terms):
    return KronTermSum.from_terms(
        [(complex(*rng.standard_normal(2)), [rand_complex(rng, d, d) for _ in range(k)]) for _ in range(terms)]
    )


def explicit_dense(op):
    return sum(c * dense_kron(fs) for c, fs in op.terms)


def test_pairing_is_transpose_trace(rng):
    a, b = rand_complex(rng, 3, 3), rand_complex(rng, 3, 3)
    assert abs(pairing(a, b) - np.trace(a.T @ b)) < 1e-12


def test_kron_matvec_identity_term(rng):
    op = KronTermSum.from_terms([(1.0, [np.eye(2)] * 3)])
    v = rand_complex(rng, 8)
    assert np.allclose(kron_matvec(op, v), v, atol=1e-14)


def test_kron_matvec_matrix_units():
    e12 = np.zeros((2, 2))
    e12[0, 1] = 1
    op = KronTermSum.from_terms([(1.0, [e12, e12])])
    v = np.kron([0, 1], [0, 1])
    assert np.allclose(kron_matvec(op, v), np.kron([1, 0], [1, 0]))


def test_kron_matvec_rejects_bad_length(rng):
    op = random_kts(rng, 2, 2, 1)
    with pytest.raises(ValueError):
        kron_matvec(op, np.ones(3))


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 3), d=st.integers(1, 4), terms=st.integers(1, 4), seed=st.integers(0, 2**31))
def test_kron_matvec_matches_dense(k, d, terms, seed):
    rng = np.random.default_rng(seed)
    op = random_kts(rng, k, d, terms)
    v = rand_complex(rng, d ** k)
    dense = explicit_dense(op)
    assert np.abs(kron_matvec(op, v) - dense @ v).max() < 1e-12 * max(1, np.abs(dense).max() * d ** k)
    assert np.abs(op.to_dense() - dense).max() < 1e-12 * max(1, np.abs(dense).max())


@settings(max_examples=30, deadline=None)
@given(k=st.integers(2, 3), d=st.integers(1, 3), seed=st.integers(0, 2**31))
def test_from_dense_round_trip(k, d, seed):
    rng = np.random.default_rng(seed)
    m = rand_complex(rng, d ** k, d ** k)
    assert np.abs(KronTermSum.from_dense(m, [d] * k).to_dense() - m).max() < 1e-12


def test_kron_term_sum_rejects_ragged():
    with pytest.raises(ValueError):
        KronTermSum.from_terms([(1.0, [np.eye(2), np.eye(2)]), (1.0, [np.eye(2)])])
    with pytest.raises(ValueError):
        KronTermSum.from_terms([(1.0, [np.eye(2), np.eye(2)]), (1.0, [np.eye(3), np.eye(2)])])
    with pytest.raises(ValueError):
        KronTermSum.from_terms([])


def test_operator_norm_examples(rng):
    assert abs(operator_norm(np.eye(4)) - 1) < 1e-14
    assert abs(operator_norm(np.diag([3.0, -1.0])) - 3) < 1e-14
    g = rng.standard_normal((200, 200)) / np.sqrt(200)
    assert abs(operator_norm(g) - 2.0) < 0.2


def test_operator_norm_iterative_matches_dense(rng):
    op = random_kts(rng, 3, 3, 4)
    dense = np.linalg.svd(op.to_dense(), compute_uv=False)[0]
    val, conv, method = operator_norm(op, tol=1e-12, dense_limit=8, return_info=True)
    assert method == "lanczos" and conv
    assert abs(val - dense) < 1e-8 * dense
    assert operator_norm(op, return_info=True)[2] == "svd"


def test_trace_norm_examples(rng):
    assert abs(trace_norm(np.eye(5)) - 5) < 1e-12
    u = rand_complex(rng, 4)
    v = rand_complex(rng, 4)
    assert abs(trace_norm(np.outer(u / np.linalg.norm(u), (v / np.linalg.norm(v)).conj())) - 1) < 1e-12


def test_trace_norm_vs_sqrt_gram(rng):
    m = rand_complex(rng, 8, 8)
    w = np.linalg.eigvalsh(m.conj().T @ m)
    assert abs(trace_norm(m) - np.sqrt(np.clip(w, 0, None)).sum()) < 1e-10


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 6), seed=st.integers(0, 2**31))
def test_norm_sandwich(n, seed):
    rng = np.random.default_rng(seed)
    m = rand_complex(rng, n, n)
    op, tr = operator_norm(m), trace_norm(m)
    assert op <= tr * (1 + 1e-12)
    assert tr <= np.linalg.matrix_rank(m) * op * (1 + 1e-12)


def test_hermitian_spectral_examples(rng):
    pairs = hermitian_spectral(np.diag([1.0, -2.0]))
    assert [p[0] for p in pairs] == [1.0, -2.0]
    assert np.allclose(np.abs(pairs[0][1]), [1, 0]) and np.allclose(np.abs(pairs[1][1]), [0, 1])
    vals = sorted(p[0] for p in hermitian_spectral(np.array([[0, 1], [1, 0]])))
    assert np.allclose(vals, [-1, 1])
    h = rand_hermitian(rng, 6)
    pairs = hermitian_spectral(h)
    rec = sum(w * np.outer(v, v.conj()) for w, v in pairs)
    assert np.abs(rec - h).max() < 1e-10
    vecs = np.stack([v for _, v in pairs], axis=1)
    assert np.abs(vecs.conj().T @ vecs - np.eye(6)).max() < 1e-10
    with pytest.raises(ValueError):
        hermitian_spectral(rand_complex(rng, 3, 3))


def test_clip_psd():
    rho = np.diag([0.5, 0.5, -5e-11])
    assert np.linalg.eigvalsh(clip_psd(rho)).min() >= 0
    with pytest.raises(ValueError):
        clip_psd(np.diag([1.0, -1e-6]))


def test_apply_map_examples(rng):
    e11 = np.zeros((2, 2))
    e11[0, 0] = 1
    assert np.allclose(apply_map_from_tensor(np.kron(e11, e11), e11), e11)
    b = rand_complex(rng, 3, 3)
    x = rand_complex(rng, 2, 2)
    x = x / np.trace(x)
    assert np.abs(apply_map_from_tensor(np.kron(np.eye(2), b), x) - b).max() < 1e-12


def test_apply_map_index_oracle(rng):
    t_hat = rand_complex(rng, 6, 6)
    x = rand_complex(rng, 2, 2)
    out = np.zeros((3, 3), dtype=complex)
    for i in range(3):
        for j in range(3):
            for a in range(2):
                for b in range(2):
                    # tr_H(T (x^T (x) 1)) entry (i, j)
                    out[i, j] += t_hat[a * 3 + i, b * 3 + j] * x[a, b]
    assert np.abs(apply_map_from_tensor(t_hat, x, (2, 3)) - out).max() < 1e-12
    y = rand_complex(rng, 2, 2)
    lin = apply_map_from_tensor(t_hat, 2 * x - 1j * y) - (2 * apply_map_from_tensor(t_hat, x) - 1j * apply_map_from_tensor(t_hat, y))
    assert np.abs(lin).max() < 1e-12
    with pytest.raises(ValueError):
        apply_map_from_tensor(rand_complex(rng, 5, 5), x)


def test_partial_trace_oracle(rng):
    rho = rand_complex(rng, 12, 12)
    t = rho.reshape(2, 3, 2, 2, 3, 2)
    expect = np.einsum("aibajb->ij", t)
    assert np.abs(partial_trace(rho, [2, 3, 2], [1]) - expect).max() < 1e-12
    assert abs(partial_trace(rho, [2, 3, 2], [])[0, 0] - np.trace(rho)) < 1e-12


def test_bipartitions_and_matricize(rng):
    assert len(all_bipartitions(3)) == 3
    assert len(all_bipartitions(4)) == 7
    a, b, c = rand_complex(rng, 2), rand_complex(rng, 3), rand_complex(rng, 4)
    t = np.einsum("i,j,k->ijk", a, b, c)
    m = matricize(t, all_bipartitions(3)[0])
    assert np.abs(m - np.outer(a, np.kron(b, c))).max() < 1e-12
    for cut in all_bipartitions(3):
        mm = matricize(t, cut)
        assert np.array_equal(unmatricize(mm, cut, t.shape), t)
        assert abs(np.linalg.norm(mm) - np.linalg.norm(t)) < 1e-12
    from xorsep.tensor_core import Bipartition

    with pytest.raises(ValueError):
        Bipartition((0,), ())
    with pytest.raises(ValueError):
        matricize(t, Bipartition((0,), (1,)))


def test_polar_unitary_maximises(rng):
    m = rand_complex(rng, 5, 5)
    u = polar_unitary(m)
    assert np.abs(u.conj().T @ u - np.eye(5)).max() < 1e-12
    best = np.trace(u @ m).real
    assert abs(best - np.linalg.svd(m, compute_uv=False).sum()) < 1e-10
    for _ in range(20):
        assert np.trace(haar_unitary(rng, 5) @ m).real <= best + 1e-10


def test_as_hermitian_rejects():
    with pytest.raises(ValueError):
        as_hermitian(np.array([[0, 1], [0, 0]]))
