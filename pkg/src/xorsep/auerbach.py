"""Perturbations of the matrix-unit basis of ``S_inf^m`` and the map
``eta = psi^{-1} o Phi`` that sends every Gaussian block ``f_tv`` to ``e_tv``.

Maps on ``M_m`` are stored through their action matrix on row-major
vectorisations: ``vec(T(x)) = T_act @ vec(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensembles import RawInstance, build_phi_matrix
from .norms import CERTIFIED_LOWER, HEURISTIC, NormEstimate
from .tensor_core import KronTermSum, apply_map_from_tensor, haar_unitary, operator_norm, polar_unitary

CERTIFIED_EPS = 0.5


@dataclass
class PerturbationIso:
    """``psi = Id - R`` with ``R = sum_j b*_j (x) (b_j - c_j)`` on the matrix units of ``M_m``."""

    m: int
    R_act: np.ndarray
    psi_act: np.ndarray
    eps_actual: float

    @property
    def d(self) -> int:
        return self.m * self.m

    @property
    def psi_cb_bound(self) -> float:
        return 1.0 + self.eps_actual

    @property
    def psi_inv_cb_bound(self) -> float:
        if self.eps_actual >= 1:
            return np.inf
        return 1.0 / (1.0 - self.eps_actual)

    def psi(self, x: np.ndarray) -> np.ndarray:
        return (self.psi_act @ np.asarray(x).ravel()).reshape(self.m, self.m)

    def psi_inv_act(self) -> np.ndarray:
        return np.linalg.inv(self.psi_act)

    def psi_inv(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.psi_act, np.asarray(x, dtype=complex).ravel()).reshape(self.m, self.m)


def perturbation_iso(targets, strict: bool = True) -> PerturbationIso:
    """Interpolating isomorphism ``psi(e_tv) = c_tv`` for targets ``(m, m, m, m)`` or ``(m^2, m, m)``.

    ``eps_actual = m^2 max_tv ||e_tv - c_tv||_inf``; with ``strict`` the
    value must be below one.
    """
    c = np.asarray(targets, dtype=complex)
    m = c.shape[-1]
    c = c.reshape(m * m, m, m)
    units = np.eye(m * m).reshape(m * m, m, m)
    dev = max(operator_norm(units[j] - c[j]) for j in range(m * m))
    eps = m * m * dev
    if strict and eps >= 1:
        raise ValueError(f"perturbation too large: eps = {eps:.3g} >= 1")
    psi_act = c.reshape(m * m, -1).T
    return PerturbationIso(m, np.eye(m * m) - psi_act, psi_act, float(eps))


def action_norm_lb(act: np.ndarray, m: int, samples: int = 16, iters: int = 50, seed: int = 0) -> float:
    """Lower estimate of ``||T : S_inf^m -> S_inf^m||`` by ascent over unitaries."""
    rng = np.random.default_rng(seed)
    cols = act.T.reshape(m * m, m, m)  # T(e_j)
    best = 0.0
    for s in range(samples):
        x = np.eye(m, dtype=complex) if s == 0 else haar_unitary(rng, m)
        val = 0.0
        for _ in range(iters):
            y = (act @ x.ravel()).reshape(m, m)
            u, sv, vh = np.linalg.svd(y)
            new = float(sv[0])
            if new <= val * (1 + 1e-12):
                val = max(val, new)
                break
            val = new
            w = np.einsum("i,jik,k->j", u[:, 0].conj(), cols, vh[0].conj()).reshape(m, m)
            x = polar_unitary(w.T)
        best = max(best, val)
    return best


@dataclass
class EtaMap:
    eta_hat: np.ndarray     # (D m) x (D m), same layout as Phi_hat
    phi_hat: np.ndarray
    cb_ub: float            # certified bound; inf when the perturbation bound does not apply
    cb_exact: float         # operator norm of eta_hat (exact cb norm)
    deviation: float        # max_tv ||Phi(f_tv) - e_tv||_inf
    certified: bool
    iso: PerturbationIso
    D: int
    m: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        return apply_map_from_tensor(self.eta_hat, x, (self.D, self.m))


def build_eta(inst: RawInstance) -> EtaMap:
    d, m = inst.params.D, inst.params.m
    phi_hat = build_phi_matrix(inst)
    f = inst.f_blocks.reshape(m * m, d, d)
    images = np.stack([apply_map_from_tensor(phi_hat, f[j], (d, m)) for j in range(m * m)])
    iso = perturbation_iso(images, strict=False)
    deviation = iso.eps_actual / (m * m)
    certified = iso.eps_actual <= CERTIFIED_EPS
    # eta(e_rs) = psi^{-1}(Phi(e_rs))
    p4 = phi_hat.reshape(d, m, d, m)
    phi_rs = np.transpose(p4, (0, 2, 1, 3)).reshape(d * d, m * m)  # rows vec Phi(e_rs)
    try:
        eta_rs = np.linalg.solve(iso.psi_act, phi_rs.T).T
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("perturbation map is singular") from exc
    eta_hat = np.transpose(eta_rs.reshape(d, d, m, m), (0, 2, 1, 3)).reshape(d * m, d * m)
    cb_ub = operator_norm(phi_hat) * iso.psi_inv_cb_bound if certified else np.inf
    return EtaMap(eta_hat, phi_hat, float(cb_ub), operator_norm(eta_hat), float(deviation), bool(certified),
                  iso, d, m)


def eta_image(z_raw: KronTermSum, eta: EtaMap) -> KronTermSum:
    """``(eta (x) ... (x) eta)(z)`` as a term sum over ``m x m`` factors."""
    pools = tuple(np.stack([eta.apply(x) for x in pool]) for pool in z_raw.pools)
    return KronTermSum(z_raw.coeffs, z_raw.index, pools)


def eta_certificate_value(z_raw: KronTermSum, inst: RawInstance, eta: EtaMap | None = None) -> NormEstimate:
    """``||(eta (x) ... (x) eta)(z)||_inf / cb(eta)^k``, a lower bound on the min norm of ``z``.

    On the certified branch the denominator uses the perturbation bound.
    Otherwise the value is flagged heuristic and the denominator is the
    exact cb norm; ``meta['value_exact_cb']`` always holds the latter.
    """
    if eta is None:
        eta = build_eta(inst)
    k = z_raw.k
    numerator = operator_norm(eta_image(z_raw, eta).to_dense())
    exact_val = numerator / eta.cb_exact ** k
    meta = {"numerator": numerator, "cb_ub": eta.cb_ub, "cb_exact": eta.cb_exact,
            "deviation": eta.deviation, "eps_actual": eta.iso.eps_actual,
            "certified_branch": eta.certified, "value_exact_cb": exact_val}
    if eta.certified:
        return NormEstimate(numerator / eta.cb_ub ** k, CERTIFIED_LOWER, meta)
    return NormEstimate(exact_val, HEURISTIC, meta)
