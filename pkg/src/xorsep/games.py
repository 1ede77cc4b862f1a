"""Quantum XOR games: biases, strategies, and separation ratios.

A game operator ``G`` is either a dense hermitian matrix or a
:class:`KronTermSum`.  Structured games may carry an unknown trace norm;
biases are then reported for the unnormalised operator and only ratios
(which are scale invariant) are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .norms import (
    CERTIFIED_LOWER,
    MinNormCertificate,
    NormEstimate,
    _ancilla_pools,
    _batched_apply,
    eps_Sinfty_lb,
    eps_Sinfty_ub_chain,
    min_norm_certificate_complex,
    min_norm_seesaw,
    _cplx_from_json,
    _cplx_to_json,
)
from .tensor_core import (
    KronTermSum,
    as_hermitian,
    as_kron_term_sum,
    clip_psd,
    haar_unitary,
    is_hermitian,
    operator_norm,
    trace_norm,
)

BIAS_TOL = 1e-9


@dataclass
class QuantumXorGame:
    k: int
    local_dims: tuple
    op: object                     # dense ndarray or KronTermSum
    normalized: bool = True
    scale_info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.local_dims = tuple(int(d) for d in self.local_dims)
        if len(self.local_dims) != self.k:
            raise ValueError("need one local dimension per player")

    @property
    def dim(self) -> int:
        return int(np.prod(self.local_dims))

    @property
    def is_dense(self) -> bool:
        return isinstance(self.op, np.ndarray)

    def dense(self) -> np.ndarray:
        return self.op if self.is_dense else self.op.to_dense()

    def terms(self) -> KronTermSum:
        if not self.is_dense:
            return self.op
        cached = self.scale_info.get("_terms")
        if cached is None:
            cached = KronTermSum.from_dense(self.op, self.local_dims)
            self.scale_info["_terms"] = cached
        return cached

    def to_json(self) -> dict:
        g = self.dense()
        return {"k": self.k, "local_dims": list(self.local_dims), "normalized": self.normalized,
                "G": _cplx_to_json(g)}

    @classmethod
    def from_json(cls, d: dict) -> "QuantumXorGame":
        return cls(d["k"], d["local_dims"], _cplx_from_json(d["G"]), d.get("normalized", True))


def game_from_hermitian(h, k: int, local_dims: Sequence[int] | None = None) -> QuantumXorGame:
    h = as_hermitian(h)
    if local_dims is None:
        d = round(h.shape[0] ** (1.0 / k))
        local_dims = (d,) * k
    if int(np.prod(local_dims)) != h.shape[0]:
        raise ValueError("local dimensions do not match the operator")
    tn = trace_norm(h)
    if tn == 0:
        raise ValueError("zero operator is not a game")
    return QuantumXorGame(k, local_dims, h / tn)


def game_from_terms(z: KronTermSum, trace_norm_value: float | None = None) -> QuantumXorGame:
    """Structured game ``z / trace_norm`` (unnormalised when the trace norm is unknown)."""
    if trace_norm_value is None:
        return QuantumXorGame(z.k, z.local_dims, z, normalized=False)
    if trace_norm_value <= 0:
        raise ValueError("zero operator is not a game")
    return QuantumXorGame(z.k, z.local_dims, z.scale(1.0 / trace_norm_value), normalized=True,
                          scale_info={"trace_norm": float(trace_norm_value)})


# ---------------------------------------------------------------------------
# Decomposition and correlation bias
# ---------------------------------------------------------------------------


EIG_CUTOFF = 1e-13


@dataclass
class GameDecomposition:
    p: list
    c: list
    rho: list

    def reconstruct(self) -> np.ndarray:
        return sum(c * p * r for p, c, r in zip(self.p, self.c, self.rho))

    def to_json(self) -> dict:
        return {"entries": [{"p": p, "c": c, "rho": _cplx_to_json(r)} for p, c, r in zip(self.p, self.c, self.rho)]}


def decompose_two_question(game: QuantumXorGame) -> GameDecomposition:
    g = as_hermitian(game.dense())
    w, v = np.linalg.eigh(g)
    w, v = w[::-1], v[:, ::-1]
    # eigenvalues at round-off level belong to neither question
    cut = EIG_CUTOFF * np.abs(w).max()
    w = np.where(np.abs(w) > cut, w, 0.0)
    total = np.abs(w).sum()
    p, c, rho = [], [], []
    for sign, mask in ((1, w > 0), (-1, w < 0)):
        mass = np.abs(w[mask]).sum()
        if mass == 0:
            continue
        r = (v[:, mask] * np.abs(w[mask])) @ v[:, mask].conj().T / mass
        p.append(float(mass / total))
        c.append(sign)
        rho.append(0.5 * (r + r.conj().T))
    return GameDecomposition(p, c, rho)


def bias_of_correlation(game: QuantumXorGame, gamma: Callable[[np.ndarray], float],
                        decomposition: GameDecomposition | None = None) -> float:
    dec = decomposition or decompose_two_question(game)
    total = 0.0
    for p, c, r in zip(dec.p, dec.c, dec.rho):
        val = float(np.real(gamma(r)))
        if abs(val) > 1 + BIAS_TOL:
            raise ValueError(f"correlation {val} outside [-1, 1]")
        total += p * c * val
    return total


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------


@dataclass
class EntangledStrategy:
    observables: list       # A_i on H_i (x) H'_i, local index (a, gamma)
    ancilla_dims: tuple
    state: np.ndarray | None = None          # density on (x) H'_i
    state_vector: np.ndarray | None = None   # pure-state shortcut

    def __post_init__(self):
        self.observables = [np.asarray(a, dtype=complex) for a in self.observables]
        self.ancilla_dims = tuple(int(d) for d in self.ancilla_dims)
        if self.state is None and self.state_vector is None:
            raise ValueError("strategy needs a shared state")

    def validate(self, local_dims: Sequence[int] | None = None) -> None:
        for i, a in enumerate(self.observables):
            if not is_hermitian(a):
                raise ValueError(f"observable {i} is not hermitian")
            if operator_norm(a) > 1 + 1e-10:
                raise ValueError(f"observable {i} has norm > 1")
            if local_dims is not None and a.shape[0] != local_dims[i] * self.ancilla_dims[i]:
                raise ValueError(f"observable {i} has the wrong dimension")
        if self.state is not None:
            rho = as_hermitian(self.state)
            if np.linalg.eigvalsh(rho)[0] < -1e-10 or abs(np.trace(rho).real - 1) > 1e-9:
                raise ValueError("shared state is not a density matrix")

    def pure_components(self) -> list[tuple[float, np.ndarray]]:
        if self.state_vector is not None:
            v = np.asarray(self.state_vector, dtype=complex).ravel()
            return [(1.0, v / np.linalg.norm(v))]
        w, v = np.linalg.eigh(as_hermitian(self.state))
        return [(float(w[j]), v[:, j]) for j in range(len(w)) if w[j] > 0]

    def density(self) -> np.ndarray:
        if self.state is not None:
            return np.asarray(self.state, dtype=complex)
        v = np.asarray(self.state_vector, dtype=complex).ravel()
        v = v / np.linalg.norm(v)
        return np.outer(v, v.conj())

    def to_json(self) -> dict:
        return {"observables": [_cplx_to_json(a) for a in self.observables],
                "ancilla_dims": list(self.ancilla_dims), "state": _cplx_to_json(self.density())}


@dataclass
class SeparableStrategy:
    """Terms of per-player PSD pieces ``pieces[term][player][output]``."""

    pieces: list

    def validate(self, tol: float = 1e-8) -> None:
        for term in self.pieces:
            for player in term:
                for p in player:
                    if np.linalg.eigvalsh(as_hermitian(p))[0] < -1e-10:
                        raise ValueError("separable piece is not PSD")
        total = None
        for term in self.pieces:
            acc = None
            for player in term:
                s = sum(player)
                acc = s if acc is None else np.kron(acc, s)
            total = acc if total is None else total + acc
        if np.abs(total - np.eye(total.shape[0])).max() > tol:
            raise ValueError("separable strategy is not complete")

    def correlation(self, rho: np.ndarray) -> float:
        """``sum_I sum_a (prod a_j) tr(rho (x) P^{j,a_j})`` with outputs ordered ``(+1, -1)``."""
        total = 0.0
        for term in self.pieces:
            obs = None
            for player in term:
                a = player[0] - player[1]
                obs = a if obs is None else np.kron(obs, a)
            total += float(np.real(np.trace(obs @ rho)))
        return total


# ---------------------------------------------------------------------------
# Entangled bias
# ---------------------------------------------------------------------------


def entangled_bias_value(game: QuantumXorGame, strat: EntangledStrategy) -> float:
    """``tr((A_1 (x) ... (x) A_k)(G (x) rho'))``."""
    z = game.terms()
    if len(strat.observables) != game.k:
        raise ValueError("one observable per player required")
    for i, a in enumerate(strat.observables):
        if a.shape[0] != game.local_dims[i] * strat.ancilla_dims[i]:
            raise ValueError(f"observable {i} does not match local x ancilla dimension")
    return float(local_expectation(z, strat.observables, strat).real)


def local_expectation(z: KronTermSum, ops, strat: EntangledStrategy) -> complex:
    """``tr((O_1 (x) ... (x) O_k)(z (x) rho'))`` for local operators on ``H_i (x) H'_i``."""
    kp = _ancilla_pools(z, ops, strat.ancilla_dims)
    ks = [kp[i][z.index[:, i]] for i in range(z.k)]
    total = 0.0 + 0.0j
    for w, v in strat.pure_components():
        vt = v.reshape(strat.ancilla_dims)
        x = _batched_apply(ks, vt).reshape(z.n_terms, -1)
        total += w * np.einsum("t,tj,j->", z.coeffs, x, v.conj())
    return complex(total)


def _dilate(u: np.ndarray, d: int, a: int) -> np.ndarray:
    """``e01 (x) U + e10 (x) U^H`` reordered to act on ``H (x) (C^2 (x) H')``."""
    n = d * a
    big = np.zeros((2, n, 2, n), dtype=complex)
    big[0, :, 1, :] = u
    big[1, :, 0, :] = u.conj().T
    big = big.reshape(2, d, a, 2, d, a)
    return np.transpose(big, (1, 0, 2, 4, 3, 5)).reshape(2 * n, 2 * n)


def certificate_to_strategy(cert: MinNormCertificate, z=None, local_dims: Sequence[int] | None = None) -> EntangledStrategy:
    """Hermitian observables and a shared pure state from a min-norm certificate.

    If ``z`` is given the phase of the certificate pairing is absorbed into
    ``eta`` first, so the strategy reaches the certificate value on
    hermitian games.
    """
    eta = cert.eta.copy()
    if z is not None:
        alpha = min_norm_certificate_complex(as_kron_term_sum(z, local_dims), cert)
        if abs(alpha) > 0:
            eta = eta * (np.conj(alpha) / abs(alpha))
    k = len(cert.unitaries)
    anc = cert.ancilla_dims
    obs = []
    for i, u in enumerate(cert.unitaries):
        d = u.shape[0] // anc[i]
        obs.append(_dilate(u, d, anc[i]))
    new_anc = tuple(2 * a for a in anc)
    psi_t = np.zeros(tuple(x for a in anc for x in (2, a)), dtype=complex)
    zero = (0,) * k
    one = (1,) * k
    idx0 = [slice(None)] * (2 * k)
    idx1 = [slice(None)] * (2 * k)
    for i in range(k):
        idx0[2 * i] = zero[i]
        idx1[2 * i] = one[i]
    psi_t[tuple(idx0)] = cert.psi.reshape(anc)
    psi_t[tuple(idx1)] = eta.reshape(anc)
    vec = psi_t.reshape(-1) / np.sqrt(2)
    return EntangledStrategy(obs, new_anc, state_vector=vec)


def product_strategy_to_certificate(observables, ancilla_dim: int) -> MinNormCertificate:
    """Warm start ``U_i = A_i (x) 1`` with ``psi = eta = |0...0>``."""
    k = len(observables)
    us = [np.kron(a, np.eye(ancilla_dim)) for a in observables]
    v = np.zeros(ancilla_dim ** k, dtype=complex)
    v[0] = 1
    return MinNormCertificate((ancilla_dim,) * k, us, v, v.copy())


def entangled_bias_lb(game: QuantumXorGame, ancilla_dim: int = 2, restarts: int = 32, seed: int = 0,
                      tol: float = 1e-8, max_iter: int = 500, warm_starts: Sequence[MinNormCertificate] = (),
                      product_warm_start: bool = True) -> NormEstimate:
    """Lower bound on the entangled bias via the min-norm see-saw.

    The best product strategy is added as a warm start, so this bound is
    never below :func:`product_bias_lb` with the same seed.
    """
    z = game.terms()
    starts = list(warm_starts)
    prod = None
    if product_warm_start:
        prod = product_bias_lb(game, restarts=max(1, restarts // 4), seed=seed)
        starts.append(product_strategy_to_certificate(prod.meta["observables"], ancilla_dim))
    est = min_norm_seesaw(z, ancilla_dim=ancilla_dim, restarts=restarts, tol=tol, max_iter=max_iter,
                          seed=seed, warm_starts=starts)
    strat = certificate_to_strategy(est.certificate, z)
    value = entangled_bias_value(game, strat)
    meta = dict(est.meta)
    meta.update({"seesaw_value": est.value, "min_norm_certificate": est.certificate})
    if prod is not None:
        meta["product_value"] = prod.value
    return NormEstimate(max(value, 0.0), CERTIFIED_LOWER, meta, certificate=strat)


# ---------------------------------------------------------------------------
# Separable bounds
# ---------------------------------------------------------------------------


@dataclass
class SepBound:
    certified: float
    heuristic: float
    eps_ub: NormEstimate
    eps_lb: NormEstimate


def sep_bias_ub(game: QuantumXorGame, restarts: int = 32, seed: int = 0) -> SepBound:
    """``D^k`` times the chain upper bound and times the best-found injective value."""
    dk = float(game.dim)
    ub = eps_Sinfty_ub_chain(game.op, local_dims=game.local_dims)
    lb = eps_Sinfty_lb(game.terms(), restarts=restarts, seed=seed)
    return SepBound(dk * ub.value, dk * lb.value, ub, lb)


def _sign_unitary(h: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
    s = np.where(w >= 0, 1.0, -1.0)
    return (v * s) @ v.conj().T


def product_bias_lb(game: QuantumXorGame, restarts: int = 8, seed: int = 0, tol: float = 1e-10,
                    max_iter: int = 500) -> NormEstimate:
    """Best product strategy ``tr((A_1 (x) ... (x) A_k) G)`` with hermitian ``A_i = sign(H_i)``.

    Restart 0 starts from identities.  The induced measurement is the
    separable strategy ``E^{+-} = (1 +- A_i)/2``.
    """
    z = game.terms()
    k = z.k
    rng = np.random.default_rng(seed)
    best = None
    for r in range(max(1, restarts)):
        if r == 0:
            obs = [np.eye(d, dtype=complex) for d in z.local_dims]
        else:
            obs = []
            for d in z.local_dims:
                u = haar_unitary(rng, d)
                s = rng.choice([-1.0, 1.0], size=d)
                obs.append((u * s) @ u.conj().T)
        # s[t, i] = tr(A_i x_{t,i})
        s = np.stack([np.einsum("ab,pba->p", obs[i], z.pools[i])[z.index[:, i]] for i in range(k)], axis=1)
        trace = [float(np.real(np.sum(z.coeffs * np.prod(s, axis=1))))]
        for _ in range(max_iter):
            start = trace[-1]
            for i in range(k):
                w = z.coeffs * (np.prod(np.delete(s, i, axis=1), axis=1) if k > 1 else 1)
                wp = np.zeros(z.pools[i].shape[0], dtype=complex)
                np.add.at(wp, z.index[:, i], w)
                h = np.tensordot(wp, z.pools[i], axes=(0, 0))
                obs[i] = _sign_unitary(h)
                s[:, i] = np.einsum("ab,pba->p", obs[i], z.pools[i])[z.index[:, i]]
                trace.append(float(np.real(np.sum(z.coeffs * np.prod(s, axis=1)))))
            if trace[-1] - start <= tol * max(abs(trace[-1]), 1e-300):
                break
        if best is None or trace[-1] > best[0]:
            best = (trace[-1], [a.copy() for a in obs], trace)
    value, obs, trace = best
    sep = SeparableStrategy([[[0.5 * (np.eye(a.shape[0]) + a), 0.5 * (np.eye(a.shape[0]) - a)] for a in obs]])
    return NormEstimate(max(value, 0.0), CERTIFIED_LOWER,
                        {"observables": obs, "trace": trace, "restarts": restarts, "raw_value": value},
                        certificate=sep)


# ---------------------------------------------------------------------------
# Ratios
# ---------------------------------------------------------------------------


def separation_ratio(beta_star_lb: float, sep_ub_certified: float, sep_ub_heuristic: float) -> dict:
    rec = {"beta_star_lb": float(beta_star_lb), "sep_ub_certified": float(sep_ub_certified),
           "sep_ub_heuristic": float(sep_ub_heuristic), "ratio_certified": None, "ratio_heuristic": None,
           "flags": []}
    if sep_ub_certified > 0:
        rec["ratio_certified"] = beta_star_lb / sep_ub_certified
    else:
        rec["flags"].append("zero_certified_denominator")
    if sep_ub_heuristic > 0:
        rec["ratio_heuristic"] = beta_star_lb / sep_ub_heuristic
    else:
        rec["flags"].append("zero_heuristic_denominator")
    return rec


def evaluate_game(game: QuantumXorGame, ancilla_dim: int = 2, restarts: int = 32, seed: int = 0,
                  warm_starts: Sequence[MinNormCertificate] = ()) -> dict:
    """Entangled lower bound, separable upper bounds and both ratios for one game."""
    ent = entangled_bias_lb(game, ancilla_dim=ancilla_dim, restarts=restarts, seed=seed, warm_starts=warm_starts)
    sep = sep_bias_ub(game, restarts=restarts, seed=seed)
    rec = separation_ratio(ent.value, sep.certified, sep.heuristic)
    rec.update({"product_lb": ent.meta.get("product_value"), "eps_lb": sep.eps_lb.value,
                "eps_ub": sep.eps_ub.value, "normalized": game.normalized})
    return rec
