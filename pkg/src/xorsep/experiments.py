"""Batch experiments: instance generation, norm and bias pipelines, scans,
concentration suites and simulation, with deterministic reports.
"""

from __future__ import annotations

import csv
import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .auerbach import build_eta, eta_certificate_value
from .concentration import bernstein_check, briet_vidick_scaling, chevet_check, gaussian_norm_scaling, write_csv
from .ensembles import (
    DENSE_CAP,
    DimensionCapError,
    InstanceParams,
    build_explicit_game_element,
    build_phi_matrix,
    build_u_map,
    build_z,
    hermitize,
    hermitized_trace_norm,
    manifest,
    sample_f_blocks,
    sample_tau,
    write_dense_binary,
)
from .games import (
    decompose_two_question,
    entangled_bias_lb,
    entangled_bias_value,
    game_from_hermitian,
    game_from_terms,
    product_bias_lb,
    sep_bias_ub,
    separation_ratio,
)
from .norms import (
    eps_Sinfty_lb,
    eps_Sinfty_ub_chain,
    eps_value,
    is_monotone,
    l2_injective_lb,
    l2_injective_ub_unfolding,
    min_norm_certificate_value,
    min_norm_seesaw,
)
from .simulator import play
from .tensor_core import apply_map_from_tensor, operator_norm

MODES = ("generate", "norms", "bias", "scan", "concentration", "simulate", "control-k2")
SCAN_COLUMNS = ["k", "m", "D", "seed", "beta_star_lb", "sep_ub_cert", "sep_ub_heur", "ratio_cert", "ratio_heur"]
PLOT_COLUMNS = ["k", "D", "seed", "x", "y", "series"]
RATIO_SERIES = {"ratio_cert": "certified", "ratio_heur": "heuristic"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str = "scan"
    k: int = 3
    m_list: tuple = (2, 3)
    D_list: tuple = (8, 16)
    seeds: int = 20
    seed: int = 0
    restarts: int = 32
    ancilla_dim: int = 2
    rounds: int = 100_000
    trials: int = 50
    bernstein_trials: int = 10_000
    tol: float = 1e-8
    max_iter: int = 500
    out: str = "out"
    matrix_free: bool = False
    dump_dense: bool = False
    decomposition_limit: int = 1024

    def __post_init__(self):
        self.m_list = tuple(int(m) for m in np.atleast_1d(self.m_list))
        self.D_list = tuple(int(d) for d in np.atleast_1d(self.D_list))

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        for name in ("k", "seeds", "restarts", "ancilla_dim", "rounds", "trials", "max_iter", "bernstein_trials"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if not self.m_list or min(self.m_list) < 1 or not self.D_list or min(self.D_list) < 1:
            raise ConfigError("m and D lists must be nonempty and positive")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")

    def seed_list(self) -> list[int]:
        return [self.seed + i for i in range(self.seeds)]

    def grid(self, k: int | None = None) -> list[tuple[int, int, int, int]]:
        k = self.k if k is None else k
        return [(k, m, d, s) for m in self.m_list for d in self.D_list for s in self.seed_list()]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> dict:
        d = asdict(self)
        d["m_list"] = list(self.m_list)
        d["D_list"] = list(self.D_list)
        return d


def thread_cap() -> int:
    try:
        n = int(os.environ.get("XORSEP_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, min(n, os.cpu_count() or 1))


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def check_cap(k: int, d: int, matrix_free: bool) -> bool:
    """True when dense objects are allowed; raises unless matrix-free paths are requested."""
    dim = (2 * d) ** k
    if dim <= DENSE_CAP:
        return True
    if not matrix_free:
        raise DimensionCapError(dim)
    return False


def _instance_name(k, m, d, s) -> str:
    return f"k{k}_m{m}_D{d}_s{s}"


# ---------------------------------------------------------------------------
# Per-instance pipelines
# ---------------------------------------------------------------------------


def _build(k, m, d, s):
    params = InstanceParams(k, m, d, seed=s)
    inst = sample_f_blocks(params)
    u = build_u_map(inst)
    tau = sample_tau(m, k, params.stream("tau"))
    z = build_z(u, tau)
    return params, inst, u, tau, z


def bias_record(task) -> dict:
    """Full bias pipeline for one instance; returns a flat record plus certificates."""
    (k, m, d, s), cfg = task
    t0 = time.perf_counter()
    dense_ok = check_cap(k, d, cfg.matrix_free)
    params, inst, u, tau, z = _build(k, m, d, s)
    zt = hermitize(z)
    tn = hermitized_trace_norm(z) if dense_ok else None
    game = game_from_terms(zt, tn)
    ent = entangled_bias_lb(game, ancilla_dim=cfg.ancilla_dim, restarts=cfg.restarts, seed=s,
                            tol=cfg.tol, max_iter=cfg.max_iter)
    sep = sep_bias_ub(game, restarts=cfg.restarts, seed=s)
    rat = separation_ratio(ent.value, sep.certified, sep.heuristic)
    cert = ent.meta["min_norm_certificate"]
    g_terms = game.terms()
    replay_mn = abs(min_norm_certificate_value(g_terms, cert) - ent.meta["seesaw_value"])
    replay_eps = abs(eps_value(g_terms, sep.eps_lb.certificate) - sep.eps_lb.value)
    replay_strat = abs(entangled_bias_value(game, ent.certificate) - ent.value)
    scale = tn if tn is not None else 1.0
    eta = build_eta(inst)
    f = inst.f_blocks.reshape(m * m, d, d)
    units = np.eye(m * m).reshape(m * m, m, m)
    interp = max(operator_norm(eta.apply(f[j]) - units[j]) for j in range(m * m))
    eta_val = eta_certificate_value(z, inst, eta)
    rec = {
        "k": k, "m": m, "D": d, "seed": s,
        "beta_star_lb": rat["beta_star_lb"], "sep_ub_cert": rat["sep_ub_certified"],
        "sep_ub_heur": rat["sep_ub_heuristic"],
        "ratio_cert": rat["ratio_certified"], "ratio_heur": rat["ratio_heuristic"],
        "product_lb": ent.meta["product_value"], "eps_lb": sep.eps_lb.value, "eps_ub": sep.eps_ub.value,
        "trace_norm": tn, "normalized": game.normalized, "admissible": params.admissible,
        "min_norm_ztilde_raw": ent.meta["seesaw_value"] * scale,
        "eta_value": eta_val.value, "eta_kind": eta_val.bound_kind, "eta_value_exact_cb": eta_val.meta["value_exact_cb"],
        "eta_deviation": eta.deviation, "eta_certified": eta.certified, "eta_interp_err": interp,
        "replay_min_norm": replay_mn, "replay_eps": replay_eps, "replay_strategy": replay_strat,
        "monotone_min_norm": bool(ent.meta["monotone"]), "monotone_eps": bool(sep.eps_lb.meta["monotone"]),
        "seesaw_converged": bool(ent.meta["converged"]),
        "flags": rat["flags"],
    }
    if dense_ok and game.dim <= cfg.decomposition_limit:
        gd = game.dense()
        dec = decompose_two_question(game_from_hermitian(gd, k, game.local_dims))
        rec["decomp_recon_err"] = float(np.abs(dec.reconstruct() - gd).max())
        rec["decomp_psum_err"] = float(abs(sum(dec.p) - 1))
        rec["decomp_min_eig"] = float(min(np.linalg.eigvalsh(r)[0] for r in dec.rho))
        rec["decomp_trace_err"] = float(max(abs(np.trace(r).real - 1) for r in dec.rho))
    rec["elapsed_s"] = time.perf_counter() - t0
    certs = {"min_norm": cert.to_json(), "eps": sep.eps_lb.certificate.to_json()}
    return {"record": rec, "certificates": certs}


def norms_record(task) -> dict:
    (k, m, d, s), cfg = task
    params, inst, u, tau, z = _build(k, m, d, s)
    zt = hermitize(z)
    r = cfg.restarts
    out = {"k": k, "m": m, "D": d, "seed": s}
    out["u_norm_lb"] = u.norm(restarts=min(r, 8), seed=s).value
    out["phi_cb"] = operator_norm(build_phi_matrix(inst))
    out["tau_op"] = float(np.linalg.norm(tau.g) * np.linalg.norm(tau.gp))
    tt = tau.tensor()
    out["tau_eps_lb"] = l2_injective_lb(tt, restarts=r, seed=s).value
    out["tau_eps_ub"] = l2_injective_ub_unfolding(tt).value
    for name, el in (("z", z), ("ztilde", zt)):
        lb = eps_Sinfty_lb(el, restarts=r, seed=s, tol=cfg.tol, max_iter=cfg.max_iter)
        out[f"{name}_eps_lb"] = lb.value
        out[f"{name}_eps_ub"] = eps_Sinfty_ub_chain(el).value
    mn = min_norm_seesaw(z, ancilla_dim=cfg.ancilla_dim, restarts=r, seed=s, tol=cfg.tol, max_iter=cfg.max_iter)
    out["z_min_norm_lb"] = mn.value
    eta = build_eta(inst)
    ev = eta_certificate_value(z, inst, eta)
    out.update({"eta_value": ev.value, "eta_kind": ev.bound_kind, "eta_deviation": eta.deviation,
                "eta_cb_ub": eta.cb_ub, "eta_cb_exact": eta.cb_exact})
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _medians(records, key: str, by: str = "m") -> dict:
    groups = {}
    for r in records:
        v = r.get(key)
        if v is not None:
            groups.setdefault(r[by], []).append(v)
    return {str(g): float(np.median(v)) for g, v in sorted(groups.items())}


def _write_scan_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCAN_COLUMNS)
        for r in records:
            w.writerow(["" if r[c] is None else repr(r[c]) if isinstance(r[c], float) else r[c] for c in SCAN_COLUMNS])


def _write_records_csv(records, path) -> None:
    if not records:
        Path(path).write_text("")
        return
    keys = [k for k in records[0] if k != "flags"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in records:
            w.writerow([r.get(k) for k in keys])


def emit_plot_data(report: dict, path) -> Path:
    """Long-format ratio table: ``x = m``, ``y = ratio``, ``series`` = certification level."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PLOT_COLUMNS)
        for r in report.get("records", []):
            for key, series in RATIO_SERIES.items():
                if r.get(key) is not None:
                    w.writerow([r["k"], r["D"], r["seed"], r["m"], repr(float(r[key])), series])
    return path


def read_plot_data(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["x"] = int(r["x"])
        r["y"] = float(r["y"])
    return rows


def _base_report(cfg: ExperimentConfig) -> dict:
    return {"config": cfg.to_json(), "version": __version__, "python": platform.python_version(),
            "numpy": np.__version__}


def _write_report(report: dict, out: Path) -> None:
    with open(out / "report.json", "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Modes
# ---------------------------------------------------------------------------


def _run_generate(cfg, out: Path) -> dict:
    inst_dir = out / "instances"
    inst_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for k, m, d, s in cfg.grid():
        params = InstanceParams(k, m, d, seed=s)
        name = _instance_name(k, m, d, s)
        p = inst_dir / f"{name}.json"
        p.write_text(manifest(params) + "\n")
        files.append(str(p.relative_to(out)))
        if cfg.dump_dense:
            dense = build_explicit_game_element(params)
            write_dense_binary(inst_dir / f"{name}.bin", dense)
    return {"files": files}


def _run_norms(cfg, out: Path) -> dict:
    for k, m, d, s in cfg.grid():
        check_cap(k, d, True)
    records = _map(norms_record, [(g, cfg) for g in cfg.grid()], thread_cap())
    _write_records_csv(records, out / "norms.csv")
    return {"records": records}


def _run_bias_grid(cfg, out: Path, k: int | None = None) -> dict:
    grid = cfg.grid(k)
    for kk, m, d, s in grid:
        check_cap(kk, d, cfg.matrix_free)
    results = _map(bias_record, [(g, cfg) for g in grid], thread_cap())
    results.sort(key=lambda r: (r["record"]["m"], r["record"]["D"], r["record"]["seed"]))
    records = [r["record"] for r in results]
    cert_dir = out / "certificates"
    cert_dir.mkdir(parents=True, exist_ok=True)
    for r in results:
        rec = r["record"]
        name = _instance_name(rec["k"], rec["m"], rec["D"], rec["seed"])
        path = cert_dir / f"{name}.json"
        path.write_text(json.dumps(r["certificates"]))
        rec["certificate_file"] = str(path.relative_to(out))
    _write_scan_csv(records, out / "scan.csv")
    _write_records_csv(records, out / "instances.csv")
    summary = {
        "median_ratio_heur": _medians(records, "ratio_heur"),
        "median_ratio_cert": _medians(records, "ratio_cert"),
        "ratio_levels": {"ratio_cert": "certified_lower / certified_upper",
                         "ratio_heur": "certified_lower / heuristic (heuristic)"},
    }
    return {"records": records, "summary": summary}


def _run_scan(cfg, out: Path) -> dict:
    body = _run_bias_grid(cfg, out)
    med = body["summary"]["median_ratio_heur"]
    ms = sorted(int(m) for m in med)
    body["summary"]["trend_increasing"] = all(med[str(b)] > med[str(a)] for a, b in zip(ms, ms[1:]))
    return body


def _run_control_k2(cfg, out: Path) -> dict:
    body = _run_bias_grid(cfg, out, k=2)
    med = list(body["summary"]["median_ratio_heur"].values())
    body["summary"]["band_factor"] = float(max(med) / min(med)) if med and min(med) > 0 else None
    body["summary"]["within_factor_2"] = bool(med) and min(med) > 0 and max(med) / min(med) <= 2.0
    return body


def _run_concentration(cfg, out: Path) -> dict:
    reps = [
        bernstein_check([2, 4], [1000, 10000], [0.05, 0.1, 0.2], trials=cfg.bernstein_trials, seed=cfg.seed),
        chevet_check([1, 2, 3], [4, 8, 16], trials=cfg.trials, seed=cfg.seed),
        gaussian_norm_scaling([(200, 200), (50, 50), (400, 25)], trials=cfg.trials, seed=cfg.seed),
        briet_vidick_scaling([1, 2, 3, 4], k=3, trials=min(cfg.trials, 20), seed=cfg.seed),
    ]
    write_csv(reps, out / "concentration.csv")
    return {"checks": [r.to_json() for r in reps]}


def _run_simulate(cfg, out: Path) -> dict:
    sims = []
    for k, m, d, s in cfg.grid():
        if not check_cap(k, d, False):
            continue
        params = InstanceParams(k, m, d, seed=s)
        game = game_from_hermitian(build_explicit_game_element(params), k)
        ent = entangled_bias_lb(game, ancilla_dim=cfg.ancilla_dim, restarts=cfg.restarts, seed=s)
        name = _instance_name(k, m, d, s)
        summary = play(game, ent.certificate, cfg.rounds, seed=s, summary_path=out / f"sim_{name}.json")
        summary.update({"k": k, "m": m, "D": d, "instance_seed": s, "strategy_bias_lb": ent.value})
        sims.append(summary)
    return {"records": sims}


RUNNERS = {"generate": _run_generate, "norms": _run_norms, "bias": _run_bias_grid, "scan": _run_scan,
           "control-k2": _run_control_k2, "concentration": _run_concentration, "simulate": _run_simulate}


def run(cfg: ExperimentConfig) -> dict:
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    report = _base_report(cfg)
    report.update(RUNNERS[cfg.mode](cfg, out))
    report["wall_clock_s"] = time.perf_counter() - t0
    _write_report(report, out)
    if "records" in report and cfg.mode in ("scan", "bias", "control-k2"):
        emit_plot_data(report, out / "plot_ratios.csv")
    return report
