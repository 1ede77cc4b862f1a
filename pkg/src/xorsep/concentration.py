"""Monte Carlo checks of the Gaussian estimates used by the construction.

Every frequency carries a Wilson 95% interval and a grid point passes only
when the bound holds at the interval's upper edge.  Fitted constants live
in the reports, never in the source.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm as _normal

from .ensembles import GaussianSeed, sample_tau
from .norms import eps_l2_Sinfty_lb, l2_injective_lb

CHEVET_B_COMPLEX = 4.0
CSV_COLUMNS = ["check", "params", "statistic", "estimate", "ci_lo", "ci_hi", "bound", "pass"]


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("need at least one trial")
    z = _normal.ppf(0.5 + confidence / 2)
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # round-off can push an edge past p when p is 0 or 1
    return max(0.0, min(p, centre - half)), min(1.0, max(p, centre + half))


@dataclass
class TailRow:
    params: dict
    statistic: str
    estimate: float
    ci_lo: float
    ci_hi: float
    bound: float
    passed: bool


@dataclass
class TailReport:
    check: str
    rows: list = field(default_factory=list)
    fitted: dict = field(default_factory=dict)
    passed: bool = False
    flags: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"check": self.check, "passed": self.passed, "fitted": self.fitted, "flags": self.flags,
                "rows": [r.__dict__ for r in self.rows]}


def write_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for rep in reports:
            for r in rep.rows:
                params = ";".join(f"{k}={v}" for k, v in sorted(r.params.items()))
                w.writerow([rep.check, params, r.statistic, repr(r.estimate), repr(r.ci_lo), repr(r.ci_hi),
                            repr(r.bound), int(r.passed)])


# ---------------------------------------------------------------------------
# Bernstein-type deviation of empirical Gram matrices
# ---------------------------------------------------------------------------


def gram_deviation_samples(m: int, n: int, trials: int, seed: int = 0, chunk: int = 256) -> np.ndarray:
    """``max_{j,j'} |N^{-1} sum_l g_j^l g_{j'}^l - delta_{jj'}|`` per trial."""
    rng = GaussianSeed(seed, f"bernstein.m{m}.N{n}").generator()
    out = np.empty(trials)
    eye = np.eye(m)
    for start in range(0, trials, chunk):
        b = min(chunk, trials - start)
        g = rng.standard_normal((b, m, n))
        gram = g @ np.swapaxes(g, 1, 2) / n
        out[start:start + b] = np.abs(gram - eye).max(axis=(1, 2))
    return out


def bernstein_bound(t, m: int, n: int, c: float, C: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    h = np.minimum(t * t / (C * C), t / C)
    return 2.0 * np.exp(2.0 * np.log(m) - c * n * h)


def bernstein_check(m_list, n_list, t_grid, trials: int = 10_000, seed: int = 0,
                    C_grid=None) -> TailReport:
    """Empirical tails against ``2 exp(2 log m - c N min(t^2/C^2, t/C))``.

    For each ``C`` on a grid, ``c*(C)`` is the largest ``c`` for which the
    bound covers every Wilson upper edge; the reported fit is the ``C``
    with the smallest total log-slack.  The check passes when ``c* > 0``
    and the fitted bound is below 1 somewhere on the grid.
    """
    if trials < 1000:
        raise ValueError("need at least 1000 trials")
    m_list = list(np.atleast_1d(m_list))
    n_list = list(np.atleast_1d(n_list))
    t_grid = np.asarray(t_grid, dtype=float)
    if C_grid is None:
        C_grid = np.logspace(-1, 2, 61)
    points = []
    for m in m_list:
        for n in n_list:
            dev = gram_deviation_samples(int(m), int(n), trials, seed)
            for t in t_grid:
                hits = int(np.count_nonzero(dev >= t))
                lo, hi = wilson_interval(hits, trials)
                points.append((int(m), int(n), float(t), hits / trials, lo, hi))
    best = None
    for C in C_grid:
        limits = []
        for m, n, t, _, _, hi in points:
            h = min(t * t / (C * C), t / C)
            if h <= 0:
                if hi > 2.0 * m * m:
                    limits.append(-np.inf)
                continue
            limits.append((2 * np.log(m) - np.log(max(hi, 1e-300) / 2)) / (n * h))
        c_star = min(limits) if limits else np.inf
        if not np.isfinite(c_star) or c_star <= 0:
            continue
        slack = sum(np.log(bernstein_bound(t, m, n, c_star, C) / max(hi, 1e-300)) for m, n, t, _, _, hi in points)
        if best is None or slack < best[0]:
            best = (slack, float(c_star), float(C))
    rep = TailReport("bernstein")
    if best is None:
        rep.flags.append("no positive c covers the grid")
        for m, n, t, f, lo, hi in points:
            rep.rows.append(TailRow({"m": m, "N": n, "t": t}, "tail_freq", f, lo, hi, np.nan, False))
        return rep
    _, c, C = best
    rep.fitted = {"c": c, "C": C}
    nonvacuous = False
    for m, n, t, f, lo, hi in points:
        b = float(bernstein_bound(t, m, n, c, C))
        nonvacuous |= b < 1
        rep.rows.append(TailRow({"m": m, "N": n, "t": t}, "tail_freq", f, lo, hi, b, bool(hi <= b * (1 + 1e-12))))
    rep.passed = all(r.passed for r in rep.rows) and nonvacuous
    if not nonvacuous:
        rep.flags.append("fitted bound is vacuous at every grid point")
    return rep


# ---------------------------------------------------------------------------
# Chevet
# ---------------------------------------------------------------------------


def _mean_ci(x: np.ndarray) -> tuple[float, float, float]:
    mu = float(np.mean(x))
    se = float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0
    return mu, mu - 1.96 * se, mu + 1.96 * se


def chevet_check(m_list, D_list, trials: int = 50, seed: int = 0, restarts: int = 4,
                 b: float = CHEVET_B_COMPLEX) -> TailReport:
    """``E||sum g e_tv (x) e_rs||_eps <= b (E||G_D||_inf + E||g_{m^2}||_2)``.

    The factor-map norms are exactly 1 for orthonormal images.  The left
    side is an ALS lower estimate; the right side is estimated by Monte
    Carlo on the same draws.  A point passes when the left mean's upper
    95% edge is at most the right mean's lower edge.
    """
    if trials < 50:
        raise ValueError("need at least 50 trials")
    rep = TailReport("chevet", fitted={"b": b})
    for m in m_list:
        for d in D_list:
            rng = GaussianSeed(seed, f"chevet.m{m}.D{d}").generator()
            lhs = np.empty(trials)
            op_g = np.empty(trials)
            l2_g = np.empty(trials)
            for i in range(trials):
                g = rng.standard_normal((m * m, d, d))
                lhs[i] = eps_l2_Sinfty_lb(g, restarts=restarts, seed=i).value
                op_g[i] = np.linalg.norm(rng.standard_normal((d, d)), 2)
                l2_g[i] = np.linalg.norm(rng.standard_normal(m * m))
            l_mu, l_lo, l_hi = _mean_ci(lhs)
            rhs = b * (op_g + l2_g)
            r_mu, r_lo, _ = _mean_ci(rhs)
            rep.rows.append(TailRow({"m": int(m), "D": int(d)}, "lhs_mean_vs_rhs", l_mu, l_lo, l_hi, r_lo,
                                    bool(l_hi <= r_lo)))
    rep.passed = all(r.passed for r in rep.rows)
    return rep


# ---------------------------------------------------------------------------
# Gaussian matrix norms
# ---------------------------------------------------------------------------


def gaussian_norm_scaling(shapes, trials: int = 50, seed: int = 0) -> TailReport:
    """Operator and trace norms of ``N x M`` real Gaussian matrices.

    Fits ``E||G||_inf / (sqrt N + sqrt M)`` and ``E||G||_inf / min(sqrt N, sqrt M)``;
    the second is flagged when its spread across shapes exceeds 1.5x while
    the first stays within 1.2x.
    """
    if trials < 50:
        raise ValueError("need at least 50 trials")
    rep = TailReport("gaussian_norms")
    c_sum, c_min, c_tr = [], [], []
    for n, mm in shapes:
        rng = GaussianSeed(seed, f"gauss.{n}x{mm}").generator()
        ops = np.empty(trials)
        trs = np.empty(trials)
        for i in range(trials):
            s = np.linalg.svd(rng.standard_normal((n, mm)), compute_uv=False)
            ops[i] = s[0]
            trs[i] = s.sum()
        o_mu, o_lo, o_hi = _mean_ci(ops)
        t_mu, t_lo, t_hi = _mean_ci(trs)
        ref_sum = np.sqrt(n) + np.sqrt(mm)
        ref_min = min(np.sqrt(n), np.sqrt(mm))
        ref_tr = np.sqrt(n * mm) * ref_min
        c_sum.append(o_mu / ref_sum)
        c_min.append(o_mu / ref_min)
        c_tr.append(t_mu / ref_tr)
        p = {"N": int(n), "M": int(mm)}
        rep.rows.append(TailRow(p, "op_norm_mean", o_mu, o_lo, o_hi, ref_sum, True))
        rep.rows.append(TailRow(p, "op_over_sqrtN", o_mu / np.sqrt(n), o_lo / np.sqrt(n), o_hi / np.sqrt(n), np.nan, True))
        rep.rows.append(TailRow(p, "trace_norm_mean", t_mu, t_lo, t_hi, ref_tr, True))
    spread = lambda v: max(v) / min(v)
    rep.fitted = {"C_sum": float(max(c_sum)), "C_min": float(max(c_min)), "C_trace": float(max(c_tr)),
                  "spread_sum": float(spread(c_sum)), "spread_min": float(spread(c_min))}
    if spread(c_min) > 1.5 and spread(c_sum) <= 1.2:
        rep.flags.append("operator norm tracks sqrt(N)+sqrt(M); a min(sqrt N, sqrt M) bound does not hold uniformly")
    rep.passed = True
    return rep


def trace_norm_reference(n: int) -> float:
    """Large-``N`` mean trace norm of a square real Gaussian matrix, ``8/(3 pi) N^{3/2}``."""
    return 8.0 / (3.0 * np.pi) * n ** 1.5


# ---------------------------------------------------------------------------
# Random tau
# ---------------------------------------------------------------------------


def briet_vidick_scaling(n_list, k: int = 3, trials: int = 20, seed: int = 0, restarts: int = 8) -> TailReport:
    """Exact ``||tau||_op`` against injective lower estimates over ``n``.

    Passes when every sample has ``eps <= op``, the mean gap ``op / eps``
    increases with ``n``, and the ratio ``eps / (n (log n)^{k/2})`` stays
    below its fitted maximum (reported).
    """
    rep = TailReport("briet_vidick")
    gaps = []
    ordering_ok = True
    scaled = []
    for n in n_list:
        ops = np.empty(trials)
        eps = np.empty(trials)
        for i in range(trials):
            tau = sample_tau(int(n), k, GaussianSeed(seed, f"bv.n{n}.{i}"))
            ops[i] = np.linalg.norm(tau.g) * np.linalg.norm(tau.gp)
            eps[i] = l2_injective_lb(tau.tensor(), restarts=restarts, seed=i).value
        ordering_ok &= bool(np.all(eps <= ops * (1 + 1e-9)))
        gaps.append(float(np.mean(ops / eps)))
        ref = n * max(np.log(n), np.log(2)) ** (k / 2)
        s = float(np.mean(eps) / ref)
        scaled.append(s)
        p = {"n": int(n), "k": k}
        o_mu, o_lo, o_hi = _mean_ci(ops / n ** k)
        e_mu, e_lo, e_hi = _mean_ci(eps / ref)
        rep.rows.append(TailRow(p, "op_over_n^k", o_mu, o_lo, o_hi, np.nan, True))
        rep.rows.append(TailRow(p, "eps_over_nlogn", e_mu, e_lo, e_hi, np.nan, True))
        rep.rows.append(TailRow(p, "gap_op_over_eps", gaps[-1], gaps[-1], gaps[-1], np.nan, True))
    rep.fitted = {"C_k": float(max(scaled)), "gaps": gaps}
    increasing = all(b > a for a, b in zip(gaps, gaps[1:]))
    if not increasing:
        rep.flags.append("gap not increasing in n")
    rep.passed = ordering_ok and increasing
    return rep
