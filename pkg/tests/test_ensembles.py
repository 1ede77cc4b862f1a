import itertools

import numpy as np
import pytest
from scipy import stats

from xorsep.ensembles import (
    DimensionCapError,
    GaussianSeed,
    InstanceParams,
    TauSearchFailed,
    TauThresholds,
    build_explicit_game_element,
    build_phi_matrix,
    build_state_phi,
    build_u_map,
    build_z,
    fit_tau_constants,
    hermitize,
    hermitized_trace_norm,
    j_map,
    manifest,
    read_dense_binary,
    resample_good_tau,
    sample_f_blocks,
    sample_gaussians,
    sample_tau,
    write_dense_binary,
)
from xorsep.norms import eps_Sinfty_lb, l2_injective_lb
from xorsep.tensor_core import apply_map_from_tensor, operator_norm, partial_trace, trace_norm

from conftest import dense_kron, rand_complex


def test_gaussians_deterministic():
    s = GaussianSeed(7, "x")
    assert np.array_equal(sample_gaussians(s, 4), sample_gaussians(s, 4))
    assert not np.array_equal(sample_gaussians(s, 4), sample_gaussians(GaussianSeed(7, "y"), 4))
    with pytest.raises(ValueError):
        sample_gaussians(s, 0)
    with pytest.raises(ValueError):
        GaussianSeed(-1)


def test_gaussians_moments_and_ks():
    x = sample_gaussians(GaussianSeed(1, "moments"), 10**6)
    assert abs(x.mean()) < 0.01
    assert abs(x.var() - 1) < 0.01
    y = sample_gaussians(GaussianSeed(2, "ks"), 5000)
    d = stats.kstest(y, "norm").statistic
    assert d < 1.63 / np.sqrt(len(y))  # 1% critical value


def test_instance_determinism():
    p = InstanceParams(3, 2, 4, seed=11)
    a, b = sample_f_blocks(p), sample_f_blocks(p)
    assert np.array_equal(a.g, b.g) and np.array_equal(a.g_tau, b.g_tau)
    assert np.array_equal(a.f_blocks, b.f_blocks)


def test_instance_params_validation():
    with pytest.raises(ValueError):
        InstanceParams(1, 2, 2)
    with pytest.raises(ValueError):
        InstanceParams(3, 0, 2)
    assert InstanceParams(3, 2, 200, c_fit=1.0).admissible
    assert not InstanceParams(3, 3, 16, c_fit=1.0).admissible


def test_f_blocks_scalar_case():
    inst = sample_f_blocks(InstanceParams(2, 1, 1, seed=3))
    assert inst.f_blocks[0, 0, 0, 0] == inst.g[0, 0, 0, 0]


def test_f_blocks_bookkeeping():
    inst = sample_f_blocks(InstanceParams(2, 2, 3, seed=5))
    d = 3
    for t, v in itertools.product(range(2), repeat=2):
        assert np.allclose(inst.f_blocks[t, v] * d ** 1.5, inst.g[:, :, t, v], rtol=0, atol=1e-14)


def test_f_blocks_frobenius_mean():
    d = 8
    vals = [np.linalg.norm(sample_f_blocks(InstanceParams(2, 1, d, seed=s)).f_blocks[0, 0]) ** 2 for s in range(100)]
    assert abs(np.mean(vals) - 1 / d) < 0.1 / d


def test_u_map_basics():
    inst = sample_f_blocks(InstanceParams(2, 1, 4, seed=2))
    u = build_u_map(inst)
    assert abs(u.norm().value - operator_norm(inst.f_blocks[0, 0])) < 1e-12
    inst = sample_f_blocks(InstanceParams(2, 2, 3, seed=2))
    u = build_u_map(inst)
    for j in range(4):
        e = np.zeros(4)
        e[j] = 1
        assert np.array_equal(u(e), inst.f_blocks[j // 2, j % 2].astype(complex))
    with pytest.raises(ValueError):
        u(np.ones(3))


def test_u_norm_scaling_bounded():
    d = 8
    vals = [d * build_u_map(sample_f_blocks(InstanceParams(2, 2, d, seed=s))).norm(restarts=4).value for s in range(50)]
    # D ||u|| ~ D^{-1/2} (E||G_D|| + E||g_4||) ~ 2.7; the upper bound is the same Chevet-type scale
    assert max(vals) < 6.0
    assert min(vals) > 0.5


def test_phi_scalar_and_bookkeeping():
    inst = sample_f_blocks(InstanceParams(2, 1, 1, seed=4))
    phi = build_phi_matrix(inst)
    assert abs(operator_norm(phi) - abs(inst.g[0, 0, 0, 0])) < 1e-14
    inst = sample_f_blocks(InstanceParams(2, 2, 3, seed=4))
    phi = build_phi_matrix(inst)
    for r, s in itertools.product(range(3), repeat=2):
        e = np.zeros((3, 3))
        e[r, s] = 1
        assert np.abs(apply_map_from_tensor(phi, e, (3, 2)) - inst.g[r, s] / np.sqrt(3)).max() < 1e-14


def test_phi_norm_over_sqrt_m_bounded():
    ratios = []
    for m in (2, 3):
        for s in range(50):
            inst = sample_f_blocks(InstanceParams(2, m, 16, seed=s))
            ratios.append(operator_norm(build_phi_matrix(inst)) / np.sqrt(m))
    # Dm x Dm Gaussian with entry variance 1/D: norm ~ 2 sqrt(m)
    assert 1.0 < min(ratios) and max(ratios) < 3.5


def test_tau_scalar_and_rank_one():
    tau = sample_tau(1, 3, GaussianSeed(0, "t"))
    assert tau.tensor().shape == (1, 1, 1)
    assert abs(tau.tensor().ravel()[0] - tau.g.ravel()[0] * tau.gp.ravel()[0]) < 1e-15
    for s in range(10):
        tau = sample_tau(3, 3, GaussianSeed(s, "t"))
        op = np.linalg.svd(tau.matrix(), compute_uv=False)[0]
        assert abs(op - np.linalg.norm(tau.g) * np.linalg.norm(tau.gp)) < 1e-10
        assert l2_injective_lb(tau.tensor(), restarts=4).value <= op * (1 + 1e-12)


def test_tau_tensor_layout():
    tau = sample_tau(2, 2, GaussianSeed(3, "t"))
    t = tau.tensor()
    for i1, i2, j1, j2 in itertools.product(range(2), repeat=4):
        assert t[i1 * 2 + j1, i2 * 2 + j2] == tau.g[i1, i2] * tau.gp[j1, j2]


def test_resample_trivial_thresholds():
    res = resample_good_tau(2, 3, GaussianSeed(1, "tau"), max_tries=1, thresholds=TauThresholds(np.inf, 0.0))
    assert res.tries == 1
    first = sample_tau(2, 3, GaussianSeed(1, "tau"))
    assert np.array_equal(res.tau.g, first.g)


def test_resample_failure_carries_best():
    with pytest.raises(TauSearchFailed) as exc:
        resample_good_tau(2, 3, GaussianSeed(1, "tau"), max_tries=2, thresholds=TauThresholds(0.0, np.inf))
    assert exc.value.best is not None and exc.value.tries == 2
    with pytest.raises(ValueError):
        resample_good_tau(2, 3, GaussianSeed(1, "tau"), max_tries=0)


def test_resample_acceptance_rate():
    # thresholds: fitted medians with the 1.5 safety factor, fitted on an independent family
    c_eps, c_op = fit_tau_constants(2, 3, samples=100, seed=999, safety=1.5)
    th = TauThresholds.from_constants(2, 3, c_eps, c_op)
    ok = 0
    for s in range(100):
        try:
            res = resample_good_tau(2, 3, GaussianSeed(s, "tau"), max_tries=4, thresholds=th)
        except TauSearchFailed:
            continue
        ok += 1
        assert res.eps <= th.eps_max and res.op >= th.op_min
    assert ok >= 90


def _z_oracle(inst, tau):
    m, k = tau.n, tau.k
    f = inst.f_blocks
    out = 0
    for t in itertools.product(range(m), repeat=k):
        for v in itertools.product(range(m), repeat=k):
            out = out + tau.g[t] * tau.gp[v] * dense_kron([f[t[i], v[i]] for i in range(k)])
    return out


def test_build_z_matches_oracle():
    p = InstanceParams(3, 2, 2, seed=9)
    inst = sample_f_blocks(p)
    tau = sample_tau(2, 3, p.stream("tau"))
    z = build_z(build_u_map(inst), tau)
    assert z.n_terms == 2 ** 6
    assert np.abs(z.to_dense() - _z_oracle(inst, tau)).max() < 1e-10


def test_build_z_scalar_and_linearity():
    p = InstanceParams(3, 1, 2, seed=1)
    inst = sample_f_blocks(p)
    tau = sample_tau(1, 3, p.stream("tau"))
    z = build_z(build_u_map(inst), tau)
    f = inst.f_blocks[0, 0]
    assert np.abs(z.to_dense() - tau.g.ravel()[0] * tau.gp.ravel()[0] * dense_kron([f] * 3)).max() < 1e-14
    p = InstanceParams(3, 2, 2, seed=1)
    inst = sample_f_blocks(p)
    u = build_u_map(inst)
    tau = sample_tau(2, 3, p.stream("tau"))
    a = 0.3 - 1.2j
    assert np.abs(build_z(u, tau.scale(a)).to_dense() - a * build_z(u, tau).to_dense()).max() < 1e-12
    with pytest.raises(ValueError):
        build_z(u, sample_tau(3, 3, p.stream("tau")))


def test_build_z_dense_equivalence_grid():
    for k, m, d in [(2, 2, 4), (3, 2, 3), (2, 3, 5), (3, 3, 2)]:
        p = InstanceParams(k, m, d, seed=k + m + d)
        inst = sample_f_blocks(p)
        tau = sample_tau(m, k, p.stream("tau"))
        z = build_z(build_u_map(inst), tau)
        assert z.n_terms == m ** (2 * k)
        oracle = _z_oracle(inst, tau)
        assert np.abs(z.to_dense() - oracle).max() < 1e-10 * max(1, np.abs(oracle).max())


def test_j_map_norm(rng):
    x = rand_complex(rng, 4, 4)
    jx = j_map(x)
    sv = np.linalg.svd(x, compute_uv=False)
    assert np.allclose(np.sort(np.linalg.eigvalsh(jx)), np.sort(np.concatenate([sv, -sv])), atol=1e-12)
    assert abs(operator_norm(jx) - operator_norm(x)) < 1e-12


def test_hermitize_hermitian_and_block_trace_norm():
    p = InstanceParams(3, 2, 2, seed=3)
    inst = sample_f_blocks(p)
    z = build_z(build_u_map(inst), sample_tau(2, 3, p.stream("tau")))
    zt = hermitize(z).to_dense()
    assert np.abs(zt - zt.conj().T).max() < 1e-12
    assert abs(hermitized_trace_norm(z) - trace_norm(zt)) < 1e-10 * trace_norm(zt)


def test_hermitize_complex_coefficients(rng):
    from xorsep.tensor_core import KronTermSum

    z = KronTermSum.from_terms([(1 + 2j, [rand_complex(rng, 2, 2) for _ in range(3)]),
                                (-0.5j, [rand_complex(rng, 2, 2) for _ in range(3)])])
    zt = hermitize(z).to_dense()
    assert np.abs(zt - zt.conj().T).max() < 1e-12
    assert abs(hermitized_trace_norm(z) - trace_norm(zt)) < 1e-10 * trace_norm(zt)


def test_hermitize_eps_agreement():
    p = InstanceParams(3, 2, 2, seed=8)
    inst = sample_f_blocks(p)
    z = build_z(build_u_map(inst), sample_tau(2, 3, p.stream("tau")))
    a = eps_Sinfty_lb(z, restarts=16, seed=1)
    b = eps_Sinfty_lb(hermitize(z), restarts=16, seed=1)
    assert abs(a.value - b.value) < 1e-3 * max(a.value, b.value)


def test_state_phi():
    g = np.zeros((2, 2, 2))
    g[1, 1, 1] = 1
    phi, nrm = build_state_phi(g, np.zeros((2, 2, 2)))
    expect = np.kron(np.eye(8)[7], np.eye(8)[0])
    assert np.abs(phi - expect).max() < 1e-15 and nrm == 1
    rng = np.random.default_rng(0)
    g, gp = rng.standard_normal((2, 2, 2)), rng.standard_normal((2, 2, 2))
    phi, nrm = build_state_phi(g, gp)
    assert abs(nrm - np.sqrt(np.sum(g ** 2) + np.sum(gp ** 2))) < 1e-12
    # sector overlap
    a = np.kron(g.ravel(), np.eye(8)[0])
    b = np.kron(gp.ravel(), np.eye(8)[7])
    assert np.dot(a, b) == 0
    rho = np.outer(phi, phi.conj())
    red = partial_trace(rho, [8, 8], [1])
    w = np.sort(np.linalg.eigvalsh(red))[::-1]
    assert np.all(np.abs(w[2:]) < 1e-12)
    assert abs(w[:2].sum() - 1) < 1e-12
    # diagonal weights are the sector norms; eigenvalues are those of their Gram matrix
    assert abs(red[0, 0].real - np.sum(g ** 2) / nrm ** 2) < 1e-12
    assert abs(red[7, 7].real - np.sum(gp ** 2) / nrm ** 2) < 1e-12
    gram = np.array([[g.ravel() @ g.ravel(), g.ravel() @ gp.ravel()],
                     [gp.ravel() @ g.ravel(), gp.ravel() @ gp.ravel()]]) / nrm ** 2
    assert np.allclose(w[:2], np.sort(np.linalg.eigvalsh(gram))[::-1], atol=1e-12)
    with pytest.raises(ValueError):
        build_state_phi(np.zeros(8), np.zeros(8))


def test_state_phi_orthogonal_sectors_eigenvalues():
    g = np.zeros((2, 2))
    gp = np.zeros((2, 2))
    g[0, 0], gp[1, 1] = 2.0, 1.0
    phi, nrm = build_state_phi(g, gp)
    red = partial_trace(np.outer(phi, phi.conj()), [4, 4], [1])
    w = np.sort(np.linalg.eigvalsh(red))[::-1]
    assert np.allclose(w[:2], [4 / 5, 1 / 5], atol=1e-12)


@pytest.mark.parametrize("k,m,d", [(3, 2, 2), (2, 3, 3), (3, 2, 4)])
def test_explicit_game_element_equivalence(k, m, d):
    p = InstanceParams(k, m, d, seed=21)
    dense = build_explicit_game_element(p)
    inst = sample_f_blocks(p)
    z = build_z(build_u_map(inst), sample_tau(m, k, p.stream("tau")))
    pipe = hermitize(z).to_dense() / hermitized_trace_norm(z)
    assert np.abs(dense - pipe).max() < 1e-10
    assert abs(trace_norm(dense) - 1) < 1e-10
    assert np.abs(dense - dense.conj().T).max() < 1e-12


def test_explicit_game_element_cap():
    with pytest.raises(DimensionCapError) as exc:
        build_explicit_game_element(InstanceParams(3, 2, 16))
    assert exc.value.report()["required_bytes"] == 16 * 32768 ** 2


def test_manifest_and_binary(tmp_path, rng):
    p = InstanceParams(3, 2, 4, seed=7)
    assert manifest(p) == manifest(InstanceParams(3, 2, 4, seed=7))
    m = rand_complex(rng, 3, 4)
    path = tmp_path / "m.bin"
    write_dense_binary(path, m)
    raw = np.fromfile(path, dtype="<f8")
    assert raw[0] == m[0, 0].real and raw[1] == m[0, 0].imag
    assert np.array_equal(read_dense_binary(path, (3, 4)), m)
