"""Smoke test for the `marl` extension module.

Build and install first:  pip install --no-build-isolation -e crates/py
Then run:                 python python/smoke_test.py
"""

import csv
import math
import pathlib
import tempfile

import marl

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"

SMALL = """
name = "py-smoke"
setting = "coop"

[fixture]
kind = "garnet"
n_states = 3
agents = [2, 2]
gamma = 0.8
r_max = 1.0
reward_noise = 0.2
seed = 7

[data]
length = 2000

[run]
iterations = 10
rounds = 300
alpha_scale = 0.1

[sweep]
seeds = [0, 1]
"""


def check_matrix_game():
    value, row, col = marl.solve_matrix_game([[0, -1, 1], [1, 0, -1], [-1, 1, 0]])
    assert abs(value) < 1e-10
    assert all(abs(p - 1 / 3) < 1e-10 for p in row + col)
    try:
        marl.solve_matrix_game([[float("nan")]])
    except marl.ConfigError:
        pass
    else:
        raise AssertionError("NaN payoff accepted")


def check_schedule():
    sched = marl.Schedule.ring(5, 1, seed=0)
    assert sched.period == 4 and sched.chi < 1
    for row in sched.matrix(0):
        assert abs(sum(row) - 1) < 1e-12
    w = marl.metropolis_weights([(0, 1), (1, 2)], 3)
    assert abs(w[1][1] - 1 / 3) < 1e-15


def check_models():
    mdp = marl.Mmdp.garnet(4, [2, 2], 0.9, reward_noise=0.1, seed=3)
    q = mdp.optimal_q()
    assert len(q) == mdp.n_states * mdp.n_actions
    assert max(abs(v) for v in q) <= mdp.q_max
    assert mdp.violations() == []

    game = marl.ZeroSumGame.random(2, [2], [2], 0.9, reward_noise=0.3, seed=1)
    a, b = game.n_actions
    assert len(game.minimax_q()) == game.n_states * a * b


def check_experiment():
    exp = marl.Experiment.from_toml(SMALL)
    assert exp.n_points == 2
    lines = exp.validate()
    assert any("chi" in line for line in lines)
    with tempfile.TemporaryDirectory() as tmp:
        out = pathlib.Path(tmp) / "run"
        records = exp.run(str(out))
        again = exp.run(str(pathlib.Path(tmp) / "again"))
        assert [r["input_hash"] for r in records] == [r["input_hash"] for r in again]
        assert (out / "results.csv").read_bytes() == (pathlib.Path(tmp) / "again" / "results.csv").read_bytes()
        for r in records:
            assert r["design_full_rank"]
            assert math.isfinite(r["q_error"]) and r["q_error"] <= r["q_max"]
        long_csv, series = marl.emit_plot_data(str(out / "results.csv"), "seed", "q_error", str(out / "plots"))
        rows = list(csv.DictReader(open(long_csv)))
        assert [row["seed"] for row in rows] == ["0", "1"]
        assert len(series) == 1

    try:
        marl.Experiment.from_toml("name = ")
    except marl.ConfigError:
        pass
    else:
        raise AssertionError("malformed TOML accepted")
    assert marl.Experiment.load(str(CONFIGS / "compet_game.toml")).name == "compet-game"


if __name__ == "__main__":
    check_matrix_game()
    check_schedule()
    check_models()
    check_experiment()
    print("python smoke test passed")
