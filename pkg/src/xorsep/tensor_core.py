"""Dense and Kronecker-structured complex linear algebra.

Index conventions used throughout the package:

* Multi-partite indices are lexicographic with the first factor most
  significant, i.e. the ordering produced by ``np.kron``.
* Matrices are vectorised row-major, ``vec(x)[r * D + s] = x[r, s]``.
* The bilinear dual pairing between matrices is ``<A, B> = tr(A^T B)``,
  which equals ``sum(A * B)``.  :func:`pairing` is the only place that
  spells this out.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse.linalg as spla

DENSE_LIMIT = 4096
HERMITIAN_ATOL = 1e-14
HERMITIAN_RTOL = 1e-10
PSD_FLOOR = 1e-10


def pairing(a: np.ndarray, b: np.ndarray) -> complex:
    """Bilinear pairing ``tr(a^T b)``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"pairing shape mismatch {a.shape} vs {b.shape}")
    return complex(np.sum(a * b))


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=complex)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def is_hermitian(m: np.ndarray, rtol: float = HERMITIAN_RTOL) -> bool:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    scale = np.abs(m).max() if m.size else 0.0
    # absolute floor so round-off-sized matrices are not rejected
    return bool(np.abs(m - m.conj().T).max() <= rtol * scale + HERMITIAN_ATOL)


def as_hermitian(m, rtol: float = HERMITIAN_RTOL) -> np.ndarray:
    arr = as_matrix(m, "hermitian matrix")
    if not is_hermitian(arr, rtol):
        raise ValueError("matrix is not hermitian within tolerance")
    return 0.5 * (arr + arr.conj().T)


def clip_psd(rho: np.ndarray, floor: float = PSD_FLOOR) -> np.ndarray:
    """Clip tiny negative eigenvalues of a hermitian matrix to zero.

    Eigenvalues in ``[-floor, 0)`` are set to zero; anything more negative
    raises ``ValueError``.
    """
    w, v = np.linalg.eigh(as_hermitian(rho))
    if w.min() < -floor:
        raise ValueError(f"matrix is not PSD: smallest eigenvalue {w.min():.3e}")
    w = np.where(w < 0, 0.0, w)
    return (v * w) @ v.conj().T


# ---------------------------------------------------------------------------
# Kronecker term sums
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KronTermSum:
    """Operator ``sum_t coeffs[t] * A_t^1 (x) ... (x) A_t^k``.

    Factors are stored in per-player pools and referenced by integer index,
    so a term is ``coeffs[t] * kron(pools[0][index[t, 0]], ..., pools[k-1][index[t, k-1]])``.
    Structured instances share a small pool among many terms; generic
    instances simply have one pool entry per term.
    """

    coeffs: np.ndarray
    index: np.ndarray
    pools: tuple

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=complex).reshape(-1)
        index = np.asarray(self.index, dtype=np.int64)
        pools = tuple(np.asarray(p, dtype=complex) for p in self.pools)
        if coeffs.size < 1:
            raise ValueError("KronTermSum needs at least one term")
        if index.ndim != 2 or index.shape != (coeffs.size, len(pools)):
            raise ValueError("index must have shape (terms, k)")
        for i, p in enumerate(pools):
            if p.ndim != 3 or p.shape[1] != p.shape[2]:
                raise ValueError(f"pool {i} must have shape (P, d, d)")
            if index[:, i].min() < 0 or index[:, i].max() >= p.shape[0]:
                raise ValueError(f"index out of range for pool {i}")
            if not np.all(np.isfinite(p)):
                raise ValueError(f"pool {i} has non-finite entries")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "pools", pools)
        for arr in (coeffs, index, *pools):
            arr.setflags(write=False)

    @classmethod
    def from_terms(cls, terms: Iterable[tuple[complex, Sequence[np.ndarray]]]) -> "KronTermSum":
        terms = list(terms)
        if not terms:
            raise ValueError("KronTermSum needs at least one term")
        k = len(terms[0][1])
        dims = [np.asarray(f).shape for f in terms[0][1]]
        for c, factors in terms:
            if len(factors) != k:
                raise ValueError("every term must have exactly k factors")
            if [np.asarray(f).shape for f in factors] != dims:
                raise ValueError("factor dimensions differ between terms")
        coeffs = np.array([c for c, _ in terms], dtype=complex)
        pools = tuple(np.stack([np.asarray(t[1][i], dtype=complex) for t in terms]) for i in range(k))
        index = np.tile(np.arange(len(terms))[:, None], (1, k))
        return cls(coeffs, index, pools)

    @classmethod
    def from_dense(cls, m: np.ndarray, local_dims: Sequence[int], drop_zeros: bool = True) -> "KronTermSum":
        """Exact expansion of a dense operator.

        Players 2..k are expanded in matrix units (a shared pool of ``d^2``
        units each); player 1 keeps the full ``d_1 x d_1`` block.
        """
        m = as_matrix(m)
        local_dims = [int(d) for d in local_dims]
        n = int(np.prod(local_dims))
        if m.shape != (n, n):
            raise ValueError(f"operator shape {m.shape} does not match local dims {local_dims}")
        k = len(local_dims)
        t = m.reshape(local_dims + local_dims)
        # axes -> (rest rows, rest cols, row0, col0)
        perm = list(range(1, k)) + list(range(k + 1, 2 * k)) + [0, k]
        blocks = t.transpose(perm).reshape(-1, local_dims[0], local_dims[0])
        rest_shape = local_dims[1:] + local_dims[1:]
        multi = np.array(list(np.ndindex(*rest_shape)), dtype=np.int64).reshape(len(blocks), -1)
        keep = np.ones(len(blocks), dtype=bool)
        if drop_zeros:
            keep = np.abs(blocks).reshape(len(blocks), -1).max(axis=1) > 0
            if not keep.any():
                keep[0] = True
        blocks = blocks[keep]
        multi = multi[keep]
        nb = len(blocks)
        pools = [blocks]
        index = [np.arange(nb)]
        for j, d in enumerate(local_dims[1:]):
            units = np.zeros((d * d, d, d), dtype=complex)
            units[np.arange(d * d), np.arange(d * d) // d, np.arange(d * d) % d] = 1.0
            pools.append(units)
            r = multi[:, j]
            c = multi[:, (k - 1) + j]
            index.append(r * d + c)
        return cls(np.ones(nb), np.stack(index, axis=1), tuple(pools))

    @property
    def k(self) -> int:
        return len(self.pools)

    @property
    def local_dims(self) -> tuple[int, ...]:
        return tuple(p.shape[1] for p in self.pools)

    @property
    def dim(self) -> int:
        return int(np.prod(self.local_dims))

    @property
    def n_terms(self) -> int:
        return self.coeffs.size

    @property
    def terms(self):
        for t in range(self.n_terms):
            yield self.coeffs[t], [self.pools[i][self.index[t, i]] for i in range(self.k)]

    def factor(self, player: int) -> np.ndarray:
        """Per-term factors of one player, shape ``(terms, d, d)``."""
        return self.pools[player][self.index[:, player]]

    def scale(self, alpha: complex) -> "KronTermSum":
        return KronTermSum(self.coeffs * alpha, self.index, self.pools)

    def adjoint(self) -> "KronTermSum":
        return KronTermSum(self.coeffs.conj(), self.index, tuple(p.conj().transpose(0, 2, 1) for p in self.pools))

    def map_pools(self, fn) -> "KronTermSum":
        return KronTermSum(self.coeffs, self.index, tuple(fn(i, p) for i, p in enumerate(self.pools)))

    def to_dense(self) -> np.ndarray:
        """Materialise the full ``prod(d) x prod(d)`` matrix (Khatri-Rao + one matmul)."""
        k = self.k
        dims = self.local_dims
        vecs = [self.factor(i).reshape(self.n_terms, -1) for i in range(k)]
        right = vecs[k - 1]
        for i in range(k - 2, 0, -1):
            right = (vecs[i][:, :, None] * right[:, None, :]).reshape(self.n_terms, -1)
        left = vecs[0] * self.coeffs[:, None]
        if k == 1:
            flat = left.sum(axis=0)
        else:
            flat = left.T @ right
        t = flat.reshape([d for d in dims for _ in (0, 1)])
        perm = [2 * i for i in range(k)] + [2 * i + 1 for i in range(k)]
        n = self.dim
        return t.transpose(perm).reshape(n, n)


def as_kron_term_sum(op, local_dims: Sequence[int] | None = None) -> KronTermSum:
    if isinstance(op, KronTermSum):
        return op
    if local_dims is None:
        raise ValueError("local_dims required to expand a dense operator")
    return KronTermSum.from_dense(op, local_dims)


def kron_matvec(op: KronTermSum, v: np.ndarray) -> np.ndarray:
    """Apply a :class:`KronTermSum` to a vector by mode-wise contraction."""
    v = np.asarray(v, dtype=complex).reshape(-1)
    dims = op.local_dims
    if v.size != op.dim:
        raise ValueError(f"vector length {v.size} does not match operator dimension {op.dim}")
    k = op.k
    tens = v.reshape(dims)
    out = np.zeros(dims, dtype=complex)
    for t in range(op.n_terms):
        x = tens
        for i in range(k):
            a = op.pools[i][op.index[t, i]]
            x = np.moveaxis(np.tensordot(a, x, axes=([1], [i])), 0, i)
        out += op.coeffs[t] * x
    return out.reshape(-1)


# ---------------------------------------------------------------------------
# Norms and spectra
# ---------------------------------------------------------------------------


def operator_norm(op, tol: float = 1e-10, *, maxiter: int | None = None, seed: int = 0,
                  return_info: bool = False, dense_limit: int = DENSE_LIMIT):
    """Largest singular value.

    Dense matrices (and structured operators up to ``dense_limit``) use a full
    SVD; larger :class:`KronTermSum` operators run ARPACK on ``op^H op`` with a
    random start.  With ``return_info`` a ``(value, converged, method)``
    tuple is returned; non-convergence yields the best Ritz estimate.
    """
    if isinstance(op, KronTermSum) and op.dim > dense_limit:
        adj = op.adjoint()
        n = op.dim
        lin = spla.LinearOperator((n, n), matvec=lambda x: kron_matvec(adj, kron_matvec(op, x)), dtype=complex)
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        try:
            w = spla.eigsh(lin, k=1, which="LA", v0=v0, tol=tol, maxiter=maxiter, return_eigenvectors=False)
            value, converged = float(np.sqrt(max(w[0].real, 0.0))), True
        except spla.ArpackNoConvergence as exc:
            w = exc.eigenvalues
            value = float(np.sqrt(max(w.real.max(), 0.0))) if len(w) else float("nan")
            converged = False
        return (value, converged, "lanczos") if return_info else value
    m = op.to_dense() if isinstance(op, KronTermSum) else as_matrix(op)
    value = float(np.linalg.svd(m, compute_uv=False)[0]) if m.size else 0.0
    return (value, True, "svd") if return_info else value


def trace_norm(m) -> float:
    m = m.to_dense() if isinstance(m, KronTermSum) else as_matrix(m)
    return float(np.linalg.svd(m, compute_uv=False).sum())


def hermitian_spectral(m) -> list[tuple[float, np.ndarray]]:
    """Eigenpairs of a hermitian matrix, eigenvalues in descending order."""
    h = as_hermitian(m)
    w, v = np.linalg.eigh(h)
    order = np.argsort(-w, kind="stable")
    return [(float(w[i]), v[:, i]) for i in order]


def apply_map_from_tensor(t_hat, x, dims: tuple[int, int] | None = None) -> np.ndarray:
    """Action of the map ``S_1(H) -> S_inf(H')`` encoded by ``t_hat`` on ``H (x) H'``.

    Returns ``tr_H(t_hat (x^T (x) 1))``.  ``dims`` is ``(dim H, dim H')``;
    if omitted ``dim H`` is read from ``x``.
    """
    t_hat = as_matrix(t_hat, "t_hat")
    x = as_matrix(x, "x")
    if x.shape[0] != x.shape[1]:
        raise ValueError("x must be square")
    dh = x.shape[0]
    if dims is not None and dims[0] != dh:
        raise ValueError("x does not match dims")
    n = t_hat.shape[0]
    if t_hat.shape[0] != t_hat.shape[1] or n % dh:
        raise ValueError(f"t_hat of shape {t_hat.shape} does not factor through dim {dh}")
    dp = n // dh
    if dims is not None and dims[1] != dp:
        raise ValueError("t_hat does not match dims")
    t = t_hat.reshape(dh, dp, dh, dp)
    return np.einsum("aibj,ab->ij", t, x)


def partial_trace(rho: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    rho = as_matrix(rho)
    dims = [int(d) for d in dims]
    k = len(dims)
    keep = sorted(int(i) for i in keep)
    t = rho.reshape(dims + dims)
    traced = [i for i in range(k) if i not in keep]
    letters = iter("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ")
    rows = [next(letters) for _ in range(k)]
    cols = [rows[i] if i in traced else next(letters) for i in range(k)]
    out = "".join(rows[i] for i in keep) + "".join(cols[i] for i in keep)
    res = np.einsum("".join(rows) + "".join(cols) + "->" + out, t)
    dk = int(np.prod([dims[i] for i in keep])) if keep else 1
    return res.reshape(dk, dk)


# ---------------------------------------------------------------------------
# Matricisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bipartition:
    left: tuple[int, ...]
    right: tuple[int, ...]

    def __post_init__(self):
        left = tuple(sorted(int(i) for i in self.left))
        right = tuple(sorted(int(i) for i in self.right))
        if not left or not right:
            raise ValueError("both sides of a bipartition must be nonempty")
        if set(left) & set(right):
            raise ValueError("bipartition sides overlap")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def k(self) -> int:
        return len(self.left) + len(self.right)

    def validate(self, k: int) -> None:
        if set(self.left) | set(self.right) != set(range(k)):
            raise ValueError(f"bipartition does not cover modes 0..{k - 1}")


def all_bipartitions(k: int) -> list[Bipartition]:
    """One representative per unordered cut; mode 0 always on the left."""
    cuts = []
    others = list(range(1, k))
    for r in range(0, k - 1):
        for extra in itertools.combinations(others, r):
            left = (0, *extra)
            right = tuple(i for i in range(k) if i not in left)
            cuts.append(Bipartition(left, right))
    return cuts


def matricize(t: np.ndarray, cut: Bipartition) -> np.ndarray:
    t = np.asarray(t)
    cut.validate(t.ndim)
    rows = int(np.prod([t.shape[i] for i in cut.left]))
    return t.transpose(cut.left + cut.right).reshape(rows, -1)


def unmatricize(m: np.ndarray, cut: Bipartition, shape: Sequence[int]) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    cut.validate(len(shape))
    perm = cut.left + cut.right
    t = np.asarray(m).reshape([shape[i] for i in perm])
    return t.transpose(np.argsort(perm))


# ---------------------------------------------------------------------------
# Random helpers shared by estimators
# ---------------------------------------------------------------------------


def random_unit(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def haar_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def polar_unitary(m: np.ndarray) -> np.ndarray:
    """Unitary ``U`` maximising ``Re tr(U m)``."""
    p, _, qh = np.linalg.svd(m)
    return qh.conj().T @ p.conj().T
