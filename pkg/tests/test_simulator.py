import csv
import json

import numpy as np
import pytest

from xorsep.games import (
    EntangledStrategy,
    QuantumXorGame,
    SeparableStrategy,
    decompose_two_question,
    entangled_bias_lb,
    entangled_bias_value,
    game_from_hermitian,
    product_bias_lb,
    sep_bias_ub,
)
from xorsep.simulator import outcome_distribution, parity_signs, play

from conftest import rand_density, rand_hermitian


def const_strategy(signs, d=2, anc=1):
    return EntangledStrategy([s * np.eye(d * anc) for s in signs], (anc,) * len(signs),
                             state=np.eye(anc ** len(signs)) / anc ** len(signs))


def test_identity_tables(rng):
    rho = rand_density(rng, 8)
    t = outcome_distribution(const_strategy([1, 1, 1]), rho, (2, 2, 2))
    assert t[0, 0, 0] == pytest.approx(1, abs=1e-12)
    t = outcome_distribution(const_strategy([-1, -1, -1]), rho, (2, 2, 2))
    assert t[1, 1, 1] == pytest.approx(1, abs=1e-12)


def test_parity_signs():
    assert list(parity_signs(2)) == [1, -1, -1, 1]


def test_table_correlation_identity(rng):
    for _ in range(5):
        rho = rand_density(rng, 8)
        obs = []
        for _ in range(3):
            h = rand_hermitian(rng, 4)
            obs.append(h / np.linalg.norm(h, 2))
        strat = EntangledStrategy(obs, (2, 2, 2), state=rand_density(rng, 8))
        t = outcome_distribution(strat, rho, (2, 2, 2))
        assert abs(t.sum() - 1) < 1e-10 and t.min() >= 0
        corr = float(parity_signs(3) @ t.ravel())
        assert abs(corr - entangled_bias_value(QuantumXorGame(3, (2, 2, 2), rho), strat)) < 1e-10


def test_invalid_strategy_rejected(rng):
    rho = rand_density(rng, 4)
    with pytest.raises(ValueError):
        outcome_distribution(const_strategy([3, 1]), rho, (2, 2))
    half = SeparableStrategy([[[0.5 * np.eye(2), np.zeros((2, 2))], [np.eye(2), np.zeros((2, 2))]]])
    with pytest.raises(ValueError):
        outcome_distribution(half, rho, (2, 2))


def test_deterministic_strategy_exact(rng):
    g = game_from_hermitian(rand_density(rng, 8), 3)
    for signs, expect in [([1, 1, 1], 1.0), ([1, -1, 1], -1.0), ([-1, -1, 1], 1.0)]:
        for rounds in (1, 17, 1000):
            s = play(g, const_strategy(signs), rounds, seed=rounds)
            assert s["empirical_bias"] == expect and s["analytic_bias"] == pytest.approx(expect)


def test_zero_bias_strategy():
    g = game_from_hermitian(np.eye(8) / 8, 3)
    z = np.diag([1.0, -1.0])
    strat = EntangledStrategy([z, np.eye(2), np.eye(2)], (1, 1, 1), state=np.eye(1))
    rounds = 20_000
    for seed in range(5):
        s = play(g, strat, rounds, seed=seed)
        assert abs(s["analytic_bias"]) < 1e-12
        assert abs(s["empirical_bias"]) <= 4 / np.sqrt(rounds)


def test_clt_on_seesaw_strategy(rng):
    g = game_from_hermitian(rand_hermitian(rng, 8), 3)
    ent = entangled_bias_lb(g, restarts=2, seed=0)
    dec = decompose_two_question(g)
    assert len(dec.p) == 2
    zs = [play(g, ent.certificate, 10_000, seed=s)["z_score"] for s in range(20)]
    assert sum(abs(z) < 4 for z in zs) >= 19
    s = play(g, ent.certificate, 10, seed=0)
    assert abs(s["analytic_bias"] - ent.value) < 1e-9


def test_separable_never_exceeds_sep_bound(rng):
    g = game_from_hermitian(rand_hermitian(rng, 8), 3)
    prod = product_bias_lb(g, restarts=2)
    sep = sep_bias_ub(g, restarts=2)
    rounds = 20_000
    s = play(g, prod.certificate, rounds, seed=1)
    assert abs(s["analytic_bias"] - prod.value) < 1e-9
    assert s["empirical_bias"] <= sep.certified + 4 / np.sqrt(rounds)


def test_round_log_and_summary(tmp_path, rng):
    g = game_from_hermitian(rand_hermitian(rng, 4), 2)
    ent = entangled_bias_lb(g, restarts=2)
    s = play(g, ent.certificate, 500, seed=3, log_path=tmp_path / "log.csv", summary_path=tmp_path / "s.json")
    rows = list(csv.DictReader(open(tmp_path / "log.csv")))
    assert len(rows) == 500
    dec = decompose_two_question(g)
    score = []
    for r in rows:
        a1, a2 = int(r["a1"]), int(r["a2"])
        assert a1 in (1, -1) and a2 in (1, -1)
        c = dec.c[int(r["x"])]
        assert int(r["win"]) == int(a1 * a2 == c)
        score.append(c * a1 * a2)
    assert np.mean(score) == pytest.approx(s["empirical_bias"])
    saved = json.load(open(tmp_path / "s.json"))
    assert set(saved) >= {"rounds", "empirical_bias", "analytic_bias", "z_score"}


def test_play_is_seeded(rng):
    g = game_from_hermitian(rand_hermitian(rng, 4), 2)
    ent = entangled_bias_lb(g, restarts=2)
    assert play(g, ent.certificate, 300, seed=9) == play(g, ent.certificate, 300, seed=9)
    with pytest.raises(ValueError):
        play(g, ent.certificate, 0)
