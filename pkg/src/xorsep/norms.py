"""Norm estimators with explicit certification levels.

Every estimator returns a :class:`NormEstimate`.  ``certified_lower``
values come with a certificate that can be replayed to reproduce the
value; ``certified_upper`` values come from relaxations or explicit
decompositions; ``heuristic`` values carry no guarantee.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor_core import (
    KronTermSum,
    all_bipartitions,
    as_kron_term_sum,
    as_matrix,
    haar_unitary,
    matricize,
    operator_norm,
    polar_unitary,
    random_unit,
    trace_norm,
)

CERTIFIED_LOWER = "certified_lower"
CERTIFIED_UPPER = "certified_upper"
HEURISTIC = "heuristic"
BOUND_KINDS = (CERTIFIED_LOWER, HEURISTIC, CERTIFIED_UPPER)

DEFAULT_RESTARTS = 32
DEFAULT_MAX_ITER = 500
DEFAULT_TOL = 1e-8
MONOTONE_TOL = 1e-12
GRAM_TERM_LIMIT = 3000


@dataclass
class NormEstimate:
    value: float
    bound_kind: str
    meta: dict = field(default_factory=dict)
    certificate: object = None

    def __post_init__(self):
        if self.bound_kind not in BOUND_KINDS:
            raise ValueError(f"unknown bound kind {self.bound_kind!r}")
        if not self.value >= 0:
            raise ValueError(f"norm estimate must be nonnegative, got {self.value}")
        self.value = float(self.value)

    def to_json(self) -> dict:
        meta = {k: v for k, v in self.meta.items() if k != "trace"}
        out = {"value": self.value, "bound_kind": self.bound_kind, "meta": meta}
        if self.certificate is not None and hasattr(self.certificate, "to_json"):
            out["certificate"] = self.certificate.to_json()
        return out


def is_monotone(trace: Sequence[float], tol: float = MONOTONE_TOL) -> bool:
    """Nondecreasing up to ``tol`` relative to ``max(1, |value|)``."""
    t = np.asarray(trace, dtype=float)
    if t.size < 2:
        return True
    slack = tol * np.maximum(1.0, np.abs(t[:-1]))
    return bool(np.all(t[1:] >= t[:-1] - slack))


def _cplx_to_json(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=complex)
    return {"shape": list(a.shape), "real": a.real.ravel().tolist(), "imag": a.imag.ravel().tolist()}


def _cplx_from_json(d: dict) -> np.ndarray:
    return (np.asarray(d["real"]) + 1j * np.asarray(d["imag"])).reshape(d["shape"])


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------


@dataclass
class EpsCertificate:
    """Rank-one functionals ``|a_i><b_i|`` for each player."""

    a: list
    b: list

    def __post_init__(self):
        self.a = [np.asarray(v, dtype=complex) for v in self.a]
        self.b = [np.asarray(v, dtype=complex) for v in self.b]
        for v in (*self.a, *self.b):
            if abs(np.linalg.norm(v) - 1) > 1e-12:
                raise ValueError("certificate vectors must be unit within 1e-12")

    def functionals(self) -> list[np.ndarray]:
        return [np.outer(a, b.conj()) for a, b in zip(self.a, self.b)]

    def to_json(self) -> dict:
        return {"a": [_cplx_to_json(v) for v in self.a], "b": [_cplx_to_json(v) for v in self.b]}

    @classmethod
    def from_json(cls, d: dict) -> "EpsCertificate":
        return cls([_cplx_from_json(v) for v in d["a"]], [_cplx_from_json(v) for v in d["b"]])


@dataclass
class MinNormCertificate:
    """Unitaries ``U_i`` on ``H_i (x) H'_i`` and unit vectors ``psi, eta`` on the ancillas."""

    ancilla_dims: tuple
    unitaries: list
    psi: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        self.ancilla_dims = tuple(int(d) for d in self.ancilla_dims)
        self.unitaries = [np.asarray(u, dtype=complex) for u in self.unitaries]
        self.psi = np.asarray(self.psi, dtype=complex).reshape(-1)
        self.eta = np.asarray(self.eta, dtype=complex).reshape(-1)

    def validate(self, local_dims: Sequence[int] | None = None) -> None:
        if len(self.unitaries) != len(self.ancilla_dims):
            raise ValueError("one unitary per player required")
        n_anc = int(np.prod(self.ancilla_dims))
        for i, u in enumerate(self.unitaries):
            n = u.shape[0]
            if u.ndim != 2 or u.shape[1] != n:
                raise ValueError(f"unitary {i} is not square")
            if local_dims is not None and n != local_dims[i] * self.ancilla_dims[i]:
                raise ValueError(f"unitary {i} has dimension {n}, expected {local_dims[i] * self.ancilla_dims[i]}")
            if np.abs(u.conj().T @ u - np.eye(n)).max() > 1e-10:
                raise ValueError(f"U_{i} is not unitary within 1e-10")
        for name, v in (("psi", self.psi), ("eta", self.eta)):
            if v.size != n_anc:
                raise ValueError(f"{name} has length {v.size}, expected {n_anc}")
            if abs(np.linalg.norm(v) - 1) > 1e-12:
                raise ValueError(f"{name} is not a unit vector within 1e-12")

    def to_json(self) -> dict:
        return {
            "ancilla_dims": list(self.ancilla_dims),
            "unitaries": [_cplx_to_json(u) for u in self.unitaries],
            "psi": _cplx_to_json(self.psi),
            "eta": _cplx_to_json(self.eta),
        }

    @classmethod
    def from_json(cls, d: dict) -> "MinNormCertificate":
        return cls(d["ancilla_dims"], [_cplx_from_json(u) for u in d["unitaries"]],
                   _cplx_from_json(d["psi"]), _cplx_from_json(d["eta"]))


# ---------------------------------------------------------------------------
# l2 injective norm of dense tensors
# ---------------------------------------------------------------------------


def _contract_except(t: np.ndarray, ws: Sequence[np.ndarray], skip: int) -> np.ndarray:
    x = t
    for j in range(t.ndim - 1, -1, -1):
        if j != skip:
            x = np.tensordot(x, ws[j], axes=([j], [0]))
    return x


def _full_contract(t: np.ndarray, ws: Sequence[np.ndarray]) -> complex:
    x = t
    for j in range(t.ndim - 1, -1, -1):
        x = np.tensordot(x, ws[j], axes=([j], [0]))
    return complex(x)


def l2_injective_value(t: np.ndarray, ws: Sequence[np.ndarray]) -> float:
    return abs(_full_contract(np.asarray(t, dtype=complex), ws))


def l2_injective_lb(t, restarts: int = DEFAULT_RESTARTS, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER, seed: int = 0) -> NormEstimate:
    """Alternating maximisation of ``|T(w_1, ..., w_k)|`` over unit vectors.

    Restart 0 starts from the leading singular vectors of each unfolding;
    the rest start at random.  The certificate is the list of vectors.
    """
    t = np.asarray(t, dtype=complex)
    k = t.ndim
    if k < 2:
        raise ValueError("need a tensor with at least two modes")
    rng = np.random.default_rng(seed)
    best = None
    total_iters = 0
    all_converged = True
    for r in range(max(1, restarts)):
        if r == 0:
            ws = []
            for i in range(k):
                unf = np.moveaxis(t, i, 0).reshape(t.shape[i], -1)
                u, _, _ = np.linalg.svd(unf, full_matrices=False)
                ws.append(u[:, 0].conj())
        else:
            ws = [random_unit(rng, n) for n in t.shape]
        trace = [l2_injective_value(t, ws)]
        converged = False
        it = 0
        for it in range(1, max_iter + 1):
            start = trace[-1]
            for i in range(k):
                v = _contract_except(t, ws, i)
                nv = np.linalg.norm(v)
                if nv > 0:
                    ws[i] = v.conj() / nv
                trace.append(float(nv) if nv > 0 else trace[-1])
            if trace[-1] - start <= tol * max(trace[-1], 1e-300):
                converged = True
                break
        total_iters += it
        all_converged &= converged
        value = l2_injective_value(t, ws)
        if best is None or value > best[0]:
            best = (value, [w.copy() for w in ws], trace)
    value, ws, trace = best
    return NormEstimate(value, CERTIFIED_LOWER,
                        {"restarts": restarts, "iterations": total_iters, "tol": tol,
                         "converged": all_converged, "trace": trace,
                         "monotone": is_monotone(trace)},
                        certificate=ws)


def l2_injective_ub_unfolding(t) -> NormEstimate:
    """Smallest operator norm over all matricisations (exact for two modes)."""
    t = np.asarray(t, dtype=complex)
    values = []
    for cut in all_bipartitions(t.ndim):
        values.append((operator_norm(matricize(t, cut)), cut))
    value, cut = min(values, key=lambda p: p[0])
    return NormEstimate(value, CERTIFIED_UPPER, {"cut": [list(cut.left), list(cut.right)],
                                                 "exact": t.ndim == 2})


# ---------------------------------------------------------------------------
# Injective norm on S_inf factors
# ---------------------------------------------------------------------------


def _pool_scalars(z: KronTermSum, a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> np.ndarray:
    """``s[t, i] = a_i^T x_{t,i} conj(b_i)``."""
    cols = []
    for i in range(z.k):
        s_pool = np.einsum("r,prs,s->p", a[i], z.pools[i], b[i].conj())
        cols.append(s_pool[z.index[:, i]])
    return np.stack(cols, axis=1)


def _accumulate(weights: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(idx, weights=weights.real, minlength=n) + 1j * np.bincount(idx, weights=weights.imag, minlength=n)


def _others_product(s: np.ndarray, i: int) -> np.ndarray:
    if s.shape[1] == 1:
        return np.ones(s.shape[0], dtype=complex)
    return np.prod(np.delete(s, i, axis=1), axis=1)


def eps_value(z, cert: EpsCertificate, local_dims: Sequence[int] | None = None) -> float:
    """Replay ``|<z, B_1 (x) ... (x) B_k>|`` for a certificate's rank-one functionals."""
    z = as_kron_term_sum(z, local_dims)
    s = _pool_scalars(z, cert.a, cert.b)
    return float(abs(np.sum(z.coeffs * np.prod(s, axis=1))))


def eps_Sinfty_lb(z, restarts: int = DEFAULT_RESTARTS, tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER, seed: int = 0,
                  local_dims: Sequence[int] | None = None,
                  warm_starts: Sequence[EpsCertificate] = ()) -> NormEstimate:
    """Lower bound on the injective norm of ``z`` in ``S_inf^D (x)_eps ... (x)_eps S_inf^D``.

    Searches over rank-one trace-class functionals ``|a_i><b_i|`` (the
    extreme points of the trace-norm ball).  With all but one player fixed
    the best pair is the leading singular pair of an effective ``D x D``
    matrix, so each update is exact and the objective never decreases.
    """
    z = as_kron_term_sum(z, local_dims)
    k = z.k
    dims = z.local_dims
    rng = np.random.default_rng(seed)
    starts = [(list(c.a), list(c.b)) for c in warm_starts]
    n_random = max(1, restarts)
    best = None
    total_iters = 0
    all_converged = True
    for r in range(len(starts) + n_random):
        if r < len(starts):
            a, b = [v.copy() for v in starts[r][0]], [v.copy() for v in starts[r][1]]
        else:
            a = [random_unit(rng, d) for d in dims]
            b = [random_unit(rng, d) for d in dims]
        s = _pool_scalars(z, a, b)
        trace = [float(abs(np.sum(z.coeffs * np.prod(s, axis=1))))]
        converged = False
        it = 0
        for it in range(1, max_iter + 1):
            start = trace[-1]
            for i in range(k):
                w = z.coeffs * _others_product(s, i)
                wp = _accumulate(w, z.index[:, i], z.pools[i].shape[0])
                m = np.tensordot(wp, z.pools[i], axes=(0, 0))
                u, sv, vh = np.linalg.svd(m)
                if sv[0] > 0:
                    a[i] = u[:, 0].conj()
                    b[i] = vh[0].copy()  # conj(v_1) where m = u s v^H
                    a[i] /= np.linalg.norm(a[i])
                    b[i] /= np.linalg.norm(b[i])
                s[:, i] = np.einsum("r,prs,s->p", a[i], z.pools[i], b[i].conj())[z.index[:, i]]
                trace.append(float(abs(np.sum(z.coeffs * np.prod(s, axis=1)))))
            if trace[-1] - start <= tol * max(trace[-1], 1e-300):
                converged = True
                break
        total_iters += it
        all_converged &= converged
        if best is None or trace[-1] > best[0]:
            best = (trace[-1], a, b, trace)
    _, a, b, trace = best
    cert = EpsCertificate(a, b)
    value = eps_value(z, cert)
    return NormEstimate(value, CERTIFIED_LOWER,
                        {"restarts": restarts, "iterations": total_iters, "tol": tol,
                         "converged": all_converged, "trace": trace, "monotone": is_monotone(trace)},
                        certificate=cert)


def _factor_grams(z: KronTermSum) -> list[np.ndarray]:
    grams = []
    for i in range(z.k):
        flat = z.pools[i].reshape(z.pools[i].shape[0], -1)
        pg = flat.conj() @ flat.T
        idx = z.index[:, i]
        grams.append(pg[np.ix_(idx, idx)])
    return grams


def _cut_norm_from_grams(coeffs, grams, cut) -> float:
    ga = np.ones_like(grams[0])
    for i in cut.left:
        ga = ga * grams[i]
    gb = np.ones_like(grams[0])
    for i in cut.right:
        gb = gb * grams[i]
    p = coeffs.conj()[:, None] * ga * coeffs[None, :]
    q = gb.conj()
    q = 0.5 * (q + q.conj().T)
    w, v = np.linalg.eigh(q)
    q_half = (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T
    h = q_half @ p @ q_half
    h = 0.5 * (h + h.conj().T)
    lam = np.linalg.eigvalsh(h)[-1]
    return float(np.sqrt(max(lam, 0.0)))


def kron_as_l2_tensor(z) -> np.ndarray:
    """``z`` as a dense k-way tensor over ``l2^{D^2}`` factors (row-major vec)."""
    z = as_kron_term_sum(z)
    shape = [d * d for d in z.local_dims]
    out = np.zeros(shape, dtype=complex)
    vecs = [z.factor(i).reshape(z.n_terms, -1) for i in range(z.k)]
    letters = "abcdefghij"[: z.k]
    spec = "t," + ",".join("t" + c for c in letters) + "->" + letters
    out += np.einsum(spec, z.coeffs, *vecs)
    return out


def dense_to_l2_tensor(m: np.ndarray, local_dims) -> np.ndarray:
    """Dense operator as a k-way tensor over ``l2^{D_i^2}`` (local index ``r D + s``)."""
    dims = tuple(local_dims)
    k = len(dims)
    t = np.asarray(m).reshape(dims + dims)
    perm = [p for i in range(k) for p in (i, k + i)]
    return np.transpose(t, perm).reshape([d * d for d in dims])


def eps_Sinfty_ub_chain(z, local_dims: Sequence[int] | None = None) -> NormEstimate:
    """Certified upper bound on the injective norm on ``S_inf`` factors.

    Chain: trace-norm ball inside the Hilbert-Schmidt ball, so the norm is
    at most the l2-injective norm over ``l2^{D^2}`` factors, which is at most
    the operator norm of any matricisation.  Matricisation norms are
    computed from term Gram matrices, never forming the matricised tensor.
    """
    if isinstance(z, np.ndarray) or (z.n_terms > GRAM_TERM_LIMIT and z.dim <= 4096):
        dense = z.to_dense() if isinstance(z, KronTermSum) else np.asarray(z, dtype=complex)
        dims = z.local_dims if isinstance(z, KronTermSum) else tuple(local_dims)
        est = l2_injective_ub_unfolding(dense_to_l2_tensor(dense, dims))
        est.meta["route"] = "dense"
        return est
    z = as_kron_term_sum(z, local_dims)
    grams = _factor_grams(z)
    values = [(_cut_norm_from_grams(z.coeffs, grams, cut), cut) for cut in all_bipartitions(z.k)]
    value, cut = min(values, key=lambda p: p[0])
    return NormEstimate(value, CERTIFIED_UPPER, {"cut": [list(cut.left), list(cut.right)],
                                                 "cut_values": [v for v, _ in values], "route": "gram"})


# ---------------------------------------------------------------------------
# l2 (x)_eps S_inf  (norm of a map l2^n -> S_inf^D)
# ---------------------------------------------------------------------------


def eps_l2_Sinfty_lb(blocks, restarts: int = 8, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER, seed: int = 0) -> NormEstimate:
    """Lower bound on ``sup_{|w|=1} ||sum_j w_j X_j||_inf`` for blocks ``X_j``."""
    blocks = np.asarray(blocks, dtype=complex)
    n, d, _ = blocks.shape
    rng = np.random.default_rng(seed)
    best = None
    total = 0
    conv_all = True
    for r in range(max(1, restarts)):
        if r == 0:
            flat = blocks.reshape(n, -1)
            u, _, _ = np.linalg.svd(flat, full_matrices=False)
            w = u[:, 0].conj()
        else:
            w = random_unit(rng, n)
        trace = []
        converged = False
        it = 0
        for it in range(1, max_iter + 1):
            m = np.tensordot(w, blocks, axes=(0, 0))
            u, sv, vh = np.linalg.svd(m)
            a, b = u[:, 0].conj(), vh[0]
            trace.append(float(sv[0]))
            s = np.einsum("r,jrs,s->j", a, blocks, b.conj())
            ns = np.linalg.norm(s)
            if ns > 0:
                w = s.conj() / ns
            trace.append(float(ns))
            if len(trace) > 2 and trace[-1] - trace[-3] <= tol * max(trace[-1], 1e-300):
                converged = True
                break
        total += it
        conv_all &= converged
        value = float(np.linalg.svd(np.tensordot(w, blocks, axes=(0, 0)), compute_uv=False)[0])
        if best is None or value > best[0]:
            best = (value, w, trace)
    value, w, trace = best
    return NormEstimate(value, CERTIFIED_LOWER,
                        {"restarts": restarts, "iterations": total, "converged": conv_all,
                         "trace": trace, "monotone": is_monotone(trace)}, certificate=w)


# ---------------------------------------------------------------------------
# Min norm on S_1 factors
# ---------------------------------------------------------------------------


def _ancilla_pools(z: KronTermSum, unitaries, anc_dims) -> list[np.ndarray]:
    """``K_i[p] = tr_H(U_i (x_p (x) 1))`` for every pool entry, shape ``(P, d', d')``."""
    out = []
    for i, u in enumerate(unitaries):
        d = z.local_dims[i]
        a = anc_dims[i]
        u4 = u.reshape(d, a, d, a)
        out.append(np.einsum("cgbe,pbc->pge", u4, z.pools[i]))
    return out


def _batched_apply(ks: Sequence[np.ndarray | None], v: np.ndarray) -> np.ndarray:
    """``(K_{t,1} (x) ... (x) K_{t,k}) v`` for all ``t``; ``None`` means identity."""
    t_count = next(k.shape[0] for k in ks if k is not None)
    dims = v.shape
    x = np.broadcast_to(v, (t_count,) + dims)
    for i, kmat in enumerate(ks):
        if kmat is None:
            continue
        y = np.moveaxis(x, i + 1, -1)
        shp = y.shape
        y = y.reshape(t_count, -1, shp[-1]) @ kmat.transpose(0, 2, 1)
        x = np.moveaxis(y.reshape(shp), -1, i + 1)
    return x


def ancilla_operator(z, unitaries, anc_dims) -> np.ndarray:
    """Dense ``tr_H((U_1 (x) ... (x) U_k)(z (x) 1))`` on the ancilla space."""
    z = as_kron_term_sum(z)
    kp = _ancilla_pools(z, unitaries, anc_dims)
    return KronTermSum(z.coeffs, z.index, tuple(kp)).to_dense()


def _seesaw_value(z, kp, psi_t, eta_t) -> complex:
    ks = [kp[i][z.index[:, i]] for i in range(z.k)]
    x = _batched_apply(ks, eta_t).reshape(z.n_terms, -1)
    return complex(np.einsum("t,tj,j->", z.coeffs, x, psi_t.reshape(-1).conj()))


def min_norm_certificate_value(z, cert: MinNormCertificate, local_dims: Sequence[int] | None = None) -> float:
    """``|<psi| tr_H((U_1 (x) ... (x) U_k)(z (x) 1)) |eta>|`` -- a lower bound on the min norm."""
    z = as_kron_term_sum(z, local_dims)
    cert.validate(z.local_dims)
    anc = cert.ancilla_dims
    kp = _ancilla_pools(z, cert.unitaries, anc)
    return float(abs(_seesaw_value(z, kp, cert.psi.reshape(anc), cert.eta.reshape(anc))))


def min_norm_certificate_complex(z, cert: MinNormCertificate, local_dims=None) -> complex:
    z = as_kron_term_sum(z, local_dims)
    anc = cert.ancilla_dims
    kp = _ancilla_pools(z, cert.unitaries, anc)
    return _seesaw_value(z, kp, cert.psi.reshape(anc), cert.eta.reshape(anc))


def min_norm_seesaw(z, ancilla_dim: int = 2, restarts: int = DEFAULT_RESTARTS, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER, seed: int = 0,
                    local_dims: Sequence[int] | None = None,
                    warm_starts: Sequence[MinNormCertificate] = ()) -> NormEstimate:
    """See-saw lower bound on ``||z||`` in ``S_1 (x)_min ... (x)_min S_1``.

    Blocks are the unitaries ``U_i`` (each updated to the polar factor of its
    linear coefficient matrix) and the ancilla pair ``(psi, eta)`` (leading
    singular pair of the ancilla operator).  Both updates are exact block
    maximisations, so the recorded trace is nondecreasing.
    """
    if ancilla_dim < 1:
        raise ValueError("ancilla_dim must be >= 1")
    z = as_kron_term_sum(z, local_dims)
    k = z.k
    dims = z.local_dims
    rng = np.random.default_rng(seed)
    best = None
    total_iters = 0
    all_converged = True
    n_runs = len(warm_starts) + max(1, restarts)
    for r in range(n_runs):
        if r < len(warm_starts):
            ws = warm_starts[r]
            anc = ws.ancilla_dims
            us = [u.copy() for u in ws.unitaries]
            psi, eta = ws.psi.reshape(anc).copy(), ws.eta.reshape(anc).copy()
        else:
            anc = (ancilla_dim,) * k
            us = [haar_unitary(rng, dims[i] * anc[i]) for i in range(k)]
            psi = random_unit(rng, int(np.prod(anc))).reshape(anc)
            eta = random_unit(rng, int(np.prod(anc))).reshape(anc)
        kp = _ancilla_pools(z, us, anc)
        trace = [abs(_seesaw_value(z, kp, psi, eta))]
        converged = False
        it = 0
        for it in range(1, max_iter + 1):
            start = trace[-1]
            # ancilla vectors
            m = KronTermSum(z.coeffs, z.index, tuple(kp)).to_dense()
            uu, sv, vh = np.linalg.svd(m)
            psi = uu[:, 0].reshape(anc)
            eta = vh[0].conj().reshape(anc)
            trace.append(float(sv[0]))
            # unitaries
            for i in range(k):
                ks = [None if j == i else kp[j][z.index[:, j]] for j in range(k)]
                y = _batched_apply(ks, eta)
                ym = np.moveaxis(y, i + 1, -1).reshape(z.n_terms, -1, anc[i])
                pm = np.moveaxis(psi.conj(), i, -1).reshape(-1, anc[i])
                env = np.einsum("rg,tre->tge", pm, ym) * z.coeffs[:, None, None]
                n_pool = z.pools[i].shape[0]
                ebar = np.zeros((n_pool, anc[i], anc[i]), dtype=complex)
                np.add.at(ebar, z.index[:, i], env)
                w = np.einsum("pbc,pge->cgbe", z.pools[i], ebar).reshape(dims[i] * anc[i], -1)
                us[i] = polar_unitary(w.T)
                u4 = us[i].reshape(dims[i], anc[i], dims[i], anc[i])
                kp[i] = np.einsum("cgbe,pbc->pge", u4, z.pools[i])
                trace.append(float(np.linalg.svd(w, compute_uv=False).sum()))
            if trace[-1] - start <= tol * max(trace[-1], 1e-300):
                converged = True
                break
        total_iters += it
        all_converged &= converged
        # rephase so the pairing is real and nonnegative
        val = _seesaw_value(z, kp, psi, eta)
        if abs(val) > 0:
            eta = eta * (abs(val) / val)
        if best is None or abs(val) > best[0]:
            best = (abs(val), us, psi, eta, trace, anc)
    _, us, psi, eta, trace, anc = best
    psi = psi.reshape(-1) / np.linalg.norm(psi)
    eta = eta.reshape(-1) / np.linalg.norm(eta)
    us = [polar_unitary(u.conj().T) for u in us]  # re-orthonormalise, idempotent on exact unitaries
    cert = MinNormCertificate(anc, us, psi, eta)
    value = min_norm_certificate_value(z, cert)
    return NormEstimate(value, CERTIFIED_LOWER,
                        {"restarts": restarts, "warm_starts": len(warm_starts), "ancilla_dim": ancilla_dim,
                         "iterations": total_iters, "tol": tol, "converged": all_converged,
                         "trace": trace, "monotone": is_monotone(trace)},
                        certificate=cert)


# ---------------------------------------------------------------------------
# cb norm and projective bound
# ---------------------------------------------------------------------------


def cb_norm_S1_to_Sinfty(t_hat) -> float:
    """cb norm of the map ``S_1^D -> S_inf^m`` encoded by ``t_hat``: its operator norm."""
    return operator_norm(as_matrix(t_hat, "t_hat"))


def projective_ub(decomposition, target=None, factor_norm=trace_norm, atol: float = 1e-10) -> NormEstimate:
    """``sum_i prod_j ||x_i^j||`` for an explicit decomposition of ``target``.

    If ``target`` is given (dense matrix on the full space) the
    decomposition must reproduce it within ``atol``.
    """
    decomposition = [[np.asarray(x, dtype=complex) for x in term] for term in decomposition]
    if not decomposition:
        raise ValueError("empty decomposition")
    if target is not None:
        total = None
        for term in decomposition:
            kr = term[0]
            for x in term[1:]:
                kr = np.kron(kr, x)
            total = kr if total is None else total + kr
        target = np.asarray(target, dtype=complex)
        if total.shape != target.shape or np.abs(total - target).max() > atol:
            raise ValueError("decomposition does not sum to the target element")
    value = sum(float(np.prod([factor_norm(x) for x in term])) for term in decomposition)
    return NormEstimate(value, CERTIFIED_UPPER, {"terms": len(decomposition)})
