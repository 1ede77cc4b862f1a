"""Seeded Gaussian ensembles: blocks ``f_tv``, the maps ``u`` and ``Phi``,
the tensor ``tau``, the game element ``z`` and its hermitization.

Every random family is drawn from its own counter-based stream keyed by
``(seed, label)``, so the families can be regenerated independently.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .tensor_core import KronTermSum, as_kron_term_sum, operator_norm, trace_norm

DENSE_CAP = 16384

STREAM_F = "f"
STREAM_TAU = "tau"


class DimensionCapError(ValueError):
    """Raised when a dense object would exceed the configured dimension cap."""

    def __init__(self, dim: int, cap: int = DENSE_CAP):
        self.dim = int(dim)
        self.cap = int(cap)
        self.required_bytes = 16 * self.dim * self.dim
        super().__init__(
            f"dense dimension {self.dim} exceeds cap {self.cap}; "
            f"a complex matrix would need {self.required_bytes / 2**30:.2f} GiB"
        )

    def report(self) -> dict:
        return {"error": "dimension_cap", "dim": self.dim, "cap": self.cap,
                "required_bytes": self.required_bytes}


# ---------------------------------------------------------------------------
# RNG plumbing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianSeed:
    seed: int
    label: str = ""

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def child(self, suffix: str) -> "GaussianSeed":
        return GaussianSeed(self.seed, f"{self.label}.{suffix}" if self.label else suffix)

    def generator(self) -> np.random.Generator:
        h = hashlib.sha256(self.label.encode()).digest()
        key = [int.from_bytes(h[i:i + 4], "little") for i in range(0, 16, 4)]
        ss = np.random.SeedSequence(int(self.seed), spawn_key=tuple(key))
        return np.random.Generator(np.random.Philox(ss))


def sample_gaussians(seed: GaussianSeed, count: int) -> np.ndarray:
    """``count`` iid standard normal draws from the stream ``seed``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return seed.generator().standard_normal(int(count))


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InstanceParams:
    k: int
    m: int
    D: int
    seed: int = 0
    c_fit: float = 1.0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.m < 1 or self.D < 1:
            raise ValueError("m and D must be positive")
        GaussianSeed(self.seed)

    @property
    def admissible(self) -> bool:
        """``D >= c_fit * m^4 * sqrt(log m)``."""
        return self.D >= self.c_fit * self.m ** 4 * np.sqrt(np.log(self.m))

    def stream(self, label: str) -> GaussianSeed:
        return GaussianSeed(self.seed, label)

    def to_json(self) -> dict:
        return {"k": self.k, "m": self.m, "D": self.D, "seed": self.seed, "c_fit": self.c_fit,
                "admissible": bool(self.admissible),
                "streams": {"f": STREAM_F, "tau_g": f"{STREAM_TAU}.g", "tau_gp": f"{STREAM_TAU}.gp"}}

    @classmethod
    def from_json(cls, d: dict) -> "InstanceParams":
        return cls(int(d["k"]), int(d["m"]), int(d["D"]), int(d.get("seed", 0)), float(d.get("c_fit", 1.0)))


@dataclass
class RawInstance:
    params: InstanceParams
    g: np.ndarray                 # (D, D, m, m), indexed (r, s, t, v)
    g_tau: np.ndarray | None = None
    g_tau_p: np.ndarray | None = None

    @cached_property
    def f_blocks(self) -> np.ndarray:
        """``f[t, v] = D^{-3/2} sum_rs g[r, s, t, v] e_rs``, shape ``(m, m, D, D)``."""
        d = self.params.D
        return np.ascontiguousarray(np.transpose(self.g, (2, 3, 0, 1))) * d ** -1.5


def sample_f_blocks(params: InstanceParams) -> RawInstance:
    d, m = params.D, params.m
    g = sample_gaussians(params.stream(STREAM_F), d * d * m * m).reshape(d, d, m, m)
    tau = sample_tau(m, params.k, params.stream(STREAM_TAU))
    return RawInstance(params, g, tau.g, tau.gp)


# ---------------------------------------------------------------------------
# Maps u and Phi
# ---------------------------------------------------------------------------


@dataclass
class UMap:
    """Linear map ``l2^{m^2} -> M_D`` with ``u(e_{t m + v}) = f_tv``."""

    blocks: np.ndarray  # (m^2, D, D)

    @property
    def n_in(self) -> int:
        return self.blocks.shape[0]

    @property
    def D(self) -> int:
        return self.blocks.shape[1]

    def __call__(self, w) -> np.ndarray:
        w = np.asarray(w)
        if w.shape != (self.n_in,):
            raise ValueError(f"expected a vector of length {self.n_in}")
        return np.tensordot(w, self.blocks, axes=(0, 0))

    def norm(self, restarts: int = 8, seed: int = 0):
        """Lower estimate of ``||u : l2 -> S_inf||`` (a NormEstimate)."""
        from .norms import eps_l2_Sinfty_lb

        if self.n_in == 1:
            from .norms import CERTIFIED_LOWER, NormEstimate

            return NormEstimate(operator_norm(self.blocks[0]), CERTIFIED_LOWER, {"exact": True},
                                certificate=np.ones(1))
        return eps_l2_Sinfty_lb(self.blocks, restarts=restarts, seed=seed)


def build_u_map(inst: RawInstance) -> UMap:
    if inst is None or inst.g is None:
        raise ValueError("instance has no Gaussian blocks")
    m, d = inst.params.m, inst.params.D
    return UMap(inst.f_blocks.reshape(m * m, d, d).astype(complex))


def build_phi_matrix(inst: RawInstance) -> np.ndarray:
    """``Phi_hat[(r, t), (s, v)] = D^{-1/2} g[r, s, t, v]``, size ``Dm x Dm``.

    Read with :func:`apply_map_from_tensor` using ``dims=(D, m)``.
    """
    d, m = inst.params.D, inst.params.m
    return (np.transpose(inst.g, (0, 2, 1, 3)).reshape(d * m, d * m) * d ** -0.5).astype(complex)


# ---------------------------------------------------------------------------
# tau
# ---------------------------------------------------------------------------


@dataclass
class TauSample:
    n: int
    k: int
    g: np.ndarray   # shape (n,)*k
    gp: np.ndarray  # shape (n,)*k

    def matrix(self) -> np.ndarray:
        """``n^k x n^k`` matrix: the outer product of the two Gaussian vectors."""
        return np.outer(self.g.ravel(), self.gp.ravel()).astype(complex)

    def tensor(self) -> np.ndarray:
        """k-way tensor over ``l2^{n^2}`` factors, local index ``i n + i'``."""
        t = np.multiply.outer(self.g, self.gp)
        k = self.k
        perm = [p for i in range(k) for p in (i, k + i)]
        return np.transpose(t, perm).reshape((self.n * self.n,) * k).astype(complex)

    def scale(self, alpha: complex) -> "TauSample":
        return TauSample(self.n, self.k, self.g * alpha, self.gp)


def sample_tau(n: int, k: int, seed: GaussianSeed) -> TauSample:
    if n < 1 or k < 2:
        raise ValueError("need n >= 1 and k >= 2")
    g = sample_gaussians(seed.child("g"), n ** k).reshape((n,) * k)
    gp = sample_gaussians(seed.child("gp"), n ** k).reshape((n,) * k)
    return TauSample(n, k, g, gp)


def tau_scale(n: int, k: int) -> tuple[float, float]:
    """Reference growth ``(n (log n)^{k/2}, n^k)``; ``log`` is floored at ``log 2``."""
    return n * max(np.log(n), np.log(2)) ** (k / 2), float(n) ** k


def tau_statistics(tau: TauSample, restarts: int = 8, seed: int = 0) -> tuple[float, float]:
    """(injective-norm lower estimate, operator norm as a matrix)."""
    from .norms import l2_injective_lb

    eps = l2_injective_lb(tau.tensor(), restarts=restarts, seed=seed).value
    return eps, float(np.linalg.norm(tau.g) * np.linalg.norm(tau.gp))


@dataclass
class TauThresholds:
    eps_max: float
    op_min: float

    @classmethod
    def from_constants(cls, n: int, k: int, c_eps: float, c_op: float) -> "TauThresholds":
        se, so = tau_scale(n, k)
        return cls(c_eps * se, c_op * so)


def fit_tau_constants(n: int, k: int, samples: int = 50, seed: int = 0, safety: float = 1.5,
                      restarts: int = 8) -> tuple[float, float]:
    """Median-based constants ``(c_eps, c_op)`` with a multiplicative safety factor."""
    se, so = tau_scale(n, k)
    stats = np.array([tau_statistics(sample_tau(n, k, GaussianSeed(seed, f"fit.{i}")), restarts)
                      for i in range(samples)])
    return safety * float(np.median(stats[:, 0])) / se, float(np.median(stats[:, 1])) / so / safety


class TauSearchFailed(RuntimeError):
    def __init__(self, best: TauSample, tries: int, stats: tuple[float, float]):
        self.best = best
        self.tries = tries
        self.stats = stats
        super().__init__(f"no admissible tau in {tries} tries; best (eps, op) = {stats}")


@dataclass
class TauSearch:
    tau: TauSample
    tries: int
    eps: float
    op: float
    thresholds: TauThresholds


def resample_good_tau(n: int, k: int, seed: GaussianSeed, max_tries: int = 16,
                      thresholds: TauThresholds | None = None, restarts: int = 8) -> TauSearch:
    """Draw ``tau`` until ``eps <= eps_max`` and ``op >= op_min``.

    The first try uses the stream of :func:`sample_tau`; later tries use
    derived labels.  Default thresholds use constants fitted on an
    independent seed family.
    """
    if max_tries < 1:
        raise ValueError("max_tries must be >= 1")
    if thresholds is None:
        c_eps, c_op = fit_tau_constants(n, k, seed=seed.seed ^ 0x5EED, restarts=restarts)
        thresholds = TauThresholds.from_constants(n, k, c_eps, c_op)
    best = None
    for i in range(max_tries):
        s = seed if i == 0 else seed.child(f"retry{i}")
        tau = sample_tau(n, k, s)
        if thresholds.eps_max == np.inf:
            eps = np.nan
            op = float(np.linalg.norm(tau.g) * np.linalg.norm(tau.gp))
        else:
            eps, op = tau_statistics(tau, restarts)
        if (np.isnan(eps) or eps <= thresholds.eps_max) and op >= thresholds.op_min:
            return TauSearch(tau, i + 1, eps, op, thresholds)
        score = op / eps if eps > 0 else np.inf
        if best is None or score > best[0]:
            best = (score, tau, (eps, op))
    raise TauSearchFailed(best[1], max_tries, best[2])


# ---------------------------------------------------------------------------
# z and hermitization
# ---------------------------------------------------------------------------


def build_z(u: UMap, tau: TauSample) -> KronTermSum:
    """``(u (x) ... (x) u)(tau)`` with ``m^{2k}`` terms over a shared factor pool."""
    if u.n_in != tau.n * tau.n:
        raise ValueError(f"u has {u.n_in} inputs but tau factors have dimension {tau.n ** 2}")
    n, k = tau.n, tau.k
    coeffs = np.outer(tau.g.ravel(), tau.gp.ravel()).ravel().astype(complex)
    t_idx = np.array(list(itertools.product(range(n), repeat=k)), dtype=np.int64)
    tt = np.repeat(t_idx, n ** k, axis=0)
    vv = np.tile(t_idx, (n ** k, 1))
    index = tt * n + vv
    return KronTermSum(coeffs, index, tuple(u.blocks for _ in range(k)))


def j_map(x: np.ndarray) -> np.ndarray:
    """``j(x) = [[0, x], [x^H, 0]]`` (local index ``p D + r``)."""
    x = np.asarray(x)
    d = x.shape[-1]
    out = np.zeros(x.shape[:-2] + (2 * d, 2 * d), dtype=complex)
    out[..., :d, d:] = x
    out[..., d:, :d] = np.conj(np.swapaxes(x, -1, -2))
    return out


def _absorb_phases(z: KronTermSum) -> KronTermSum:
    """Move complex coefficients into player 0's factors (``j`` is only real-linear)."""
    if np.all(z.coeffs.imag == 0):
        return z
    p0 = z.pools[0][z.index[:, 0]] * z.coeffs[:, None, None]
    index = z.index.copy()
    index[:, 0] = np.arange(z.n_terms)
    return KronTermSum(np.ones(z.n_terms, dtype=complex), index, (p0,) + tuple(z.pools[1:]))


def hermitize(z) -> KronTermSum:
    z = _absorb_phases(as_kron_term_sum(z))
    return KronTermSum(z.coeffs.real.astype(complex), z.index, tuple(j_map(p) for p in z.pools))


def _pattern_blocks(z: KronTermSum):
    """Blocks ``Z_p`` of the hermitization with pattern ``p[0] = 0``."""
    z = _absorb_phases(z)
    k = z.k
    for p in itertools.product((0, 1), repeat=k - 1):
        pattern = (0,) + p
        pools = tuple(z.pools[i] if pattern[i] == 0 else np.conj(np.swapaxes(z.pools[i], -1, -2))
                      for i in range(k))
        yield pattern, KronTermSum(z.coeffs.real.astype(complex), z.index, pools)


def hermitized_trace_norm(z) -> float:
    """Trace norm of ``hermitize(z)`` from its ``2^k`` permuted blocks.

    The hermitization is a block permutation of the ``Z_p``; blocks with
    complementary patterns are adjoints, so only half need an SVD.
    """
    z = as_kron_term_sum(z)
    return 2.0 * sum(trace_norm(b.to_dense()) for _, b in _pattern_blocks(z))


# ---------------------------------------------------------------------------
# Explicit entangled state and game element
# ---------------------------------------------------------------------------


def build_state_phi(g, gp, k: int | None = None) -> tuple[np.ndarray, float]:
    """``(|phi>, norm)``: Gaussian sectors tagged by ancillas ``|0..0>`` and ``|1..1>``.

    The register order is ``l2^{m^k} (x) (l2^2)^{(x) k}``.
    """
    g = np.asarray(g)
    gp = np.asarray(gp)
    if k is None:
        k = g.ndim
    a = np.zeros(2 ** k)
    b = np.zeros(2 ** k)
    a[0] = 1.0
    b[-1] = 1.0
    phi = np.kron(g.ravel(), a) + np.kron(gp.ravel(), b)
    nrm = float(np.linalg.norm(phi))
    if nrm == 0:
        raise ValueError("zero state")
    return (phi / nrm).astype(complex), nrm


def build_explicit_game_element(params: InstanceParams, cap: int = DENSE_CAP) -> np.ndarray:
    """Dense hermitized, trace-normalized ``sum g_t g'_v prod_i g~_{r_i s_i}^{t_i v_i}``."""
    k, m, d = params.k, params.m, params.D
    dim = (2 * d) ** k
    if dim > cap:
        raise DimensionCapError(dim, cap)
    gt = sample_gaussians(params.stream(STREAM_F), d * d * m * m).reshape(d, d, m, m)
    tau = sample_tau(m, k, params.stream(STREAM_TAU))
    x = np.multiply.outer(tau.g, tau.gp)  # (t_1..t_k, v_1..v_k)
    for i in range(k):
        # contract the current leading pair (t_i, v_i); (r_i, s_i) append at the end
        x = np.tensordot(x, gt, axes=([0, k - i], [2, 3]))
    # axes now (r_1, s_1, ..., r_k, s_k)
    zt = np.transpose(x, list(range(0, 2 * k, 2)) + list(range(1, 2 * k, 2)))
    out = np.zeros((2,) * k + (d,) * k + (2,) * k + (d,) * k)
    tn = 0.0
    for pattern in itertools.product((0, 1), repeat=k):
        perm = list(range(2 * k))
        for i in range(k):
            if pattern[i]:
                perm[i], perm[k + i] = k + i, i
        block = np.transpose(zt, perm)
        flip = tuple(1 - p for p in pattern)
        out[pattern + (Ellipsis,)][(slice(None),) * k + flip] = block
        if pattern[0] == 0:
            tn += 2.0 * trace_norm(block.reshape(d ** k, d ** k))
    # reorder (p_1..p_k, r_1..r_k) -> (p_1 r_1, ..., p_k r_k)
    rows = [a for i in range(k) for a in (i, k + i)]
    perm = rows + [2 * k + a for a in rows]
    dense = np.transpose(out, perm).reshape(dim, dim)
    return (dense / tn).astype(complex)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def manifest(params: InstanceParams, extra: dict | None = None) -> str:
    d = {"instance": params.to_json()}
    if extra:
        d.update(extra)
    return json.dumps(d, sort_keys=True, indent=2)


def write_dense_binary(path, m: np.ndarray) -> None:
    """Little-endian float64, interleaved real/imaginary, row-major."""
    np.ascontiguousarray(np.asarray(m, dtype=complex)).astype("<c16").tofile(path)


def read_dense_binary(path, shape: Sequence[int]) -> np.ndarray:
    return np.fromfile(path, dtype="<c16").reshape(shape).astype(complex)
