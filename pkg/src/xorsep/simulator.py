"""Round-by-round play of a quantum XOR game under a fixed strategy.

Outcome tables are indexed by ``(b_1, ..., b_k)`` with ``b = 0`` for the
answer ``+1`` and ``b = 1`` for ``-1``.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass

import numpy as np

from .games import (
    EntangledStrategy,
    GameDecomposition,
    QuantumXorGame,
    SeparableStrategy,
    decompose_two_question,
    local_expectation,
)
from .tensor_core import KronTermSum

CLIP_TOL = 1e-10
DRIFT_TOL = 1e-8


@dataclass
class RoundLog:
    x: np.ndarray        # question index per round
    outputs: np.ndarray  # (rounds, k) entries in {+1, -1}
    win: np.ndarray

    def write_csv(self, path) -> None:
        k = self.outputs.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x"] + [f"a{i + 1}" for i in range(k)] + ["win"])
            for x, a, win in zip(self.x, self.outputs, self.win):
                w.writerow([int(x)] + [int(v) for v in a] + [int(win)])


def _finalize_table(p: np.ndarray) -> np.ndarray:
    p = np.real_if_close(p).real
    if p.min() < -CLIP_TOL:
        raise ValueError(f"negative outcome probability {p.min():.3g}")
    p = np.clip(p, 0, 1)
    drift = abs(p.sum() - 1)
    if drift > DRIFT_TOL:
        raise ValueError(f"outcome table sums to {p.sum():.12f}; invalid strategy")
    return p / p.sum()


def outcome_distribution(strat, rho: np.ndarray, local_dims) -> np.ndarray:
    """Joint outcome table ``P(a | rho)`` of shape ``(2,) * k``."""
    local_dims = tuple(local_dims)
    k = len(local_dims)
    rho = np.asarray(rho, dtype=complex)
    table = np.zeros((2,) * k)
    if isinstance(strat, EntangledStrategy):
        z = KronTermSum.from_dense(rho, local_dims)
        effects = []
        for a in strat.observables:
            one = np.eye(a.shape[0])
            effects.append((0.5 * (one + a), 0.5 * (one - a)))
        for bits in itertools.product((0, 1), repeat=k):
            ops = [effects[i][b] for i, b in enumerate(bits)]
            table[bits] = local_expectation(z, ops, strat).real
    elif isinstance(strat, SeparableStrategy):
        for bits in itertools.product((0, 1), repeat=k):
            total = 0.0
            for term in strat.pieces:
                op = None
                for i, b in enumerate(bits):
                    op = term[i][b] if op is None else np.kron(op, term[i][b])
                total += np.trace(op @ rho).real
            table[bits] = total
    else:
        raise TypeError("unknown strategy type")
    return _finalize_table(table)


def parity_signs(k: int) -> np.ndarray:
    """``a_1 ... a_k`` for each flat outcome index."""
    bits = np.array(list(itertools.product((0, 1), repeat=k)))
    return np.where(bits.sum(axis=1) % 2 == 0, 1, -1)


def analytic_bias(dec: GameDecomposition, tables) -> float:
    k = tables[0].ndim
    par = parity_signs(k)
    return float(sum(p * c * np.dot(par, t.ravel()) for p, c, t in zip(dec.p, dec.c, tables)))


def play(game: QuantumXorGame, strat, rounds: int, seed: int = 0, log_path=None,
         summary_path=None) -> dict:
    """Referee samples a question, players answer from the exact joint table."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    dec = decompose_two_question(game)
    tables = [outcome_distribution(strat, r, game.local_dims) for r in dec.rho]
    k = game.k
    par = parity_signs(k)
    rng = np.random.default_rng(seed)
    probs = np.asarray(dec.p) / np.sum(dec.p)
    x = rng.choice(len(probs), size=rounds, p=probs)
    outcome = np.empty(rounds, dtype=np.int64)
    for q, t in enumerate(tables):
        sel = np.flatnonzero(x == q)
        if sel.size:
            outcome[sel] = rng.choice(t.size, size=sel.size, p=t.ravel())
    c = np.asarray(dec.c)[x]
    score = c * par[outcome]
    empirical = float(score.mean())
    beta = analytic_bias(dec, tables)
    var = max(1.0 - beta * beta, 0.0)
    if var > 0:
        z = (empirical - beta) / np.sqrt(var / rounds)
    else:
        z = 0.0 if empirical == beta else np.inf
    summary = {"rounds": rounds, "seed": seed, "empirical_bias": empirical, "analytic_bias": beta,
               "z_score": float(z), "win_rate": float(np.mean(score > 0))}
    if log_path is not None:
        bits = np.array(list(itertools.product((0, 1), repeat=k)))[outcome]
        RoundLog(x, 1 - 2 * bits, score > 0).write_csv(log_path)
    if summary_path is not None:
        with open(summary_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    return summary
