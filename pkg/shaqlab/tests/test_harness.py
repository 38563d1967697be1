"""
Tests for the command line harness
"""
import hashlib
import json
import os

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_raises

from shaqlab.harness import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_VIOLATION,
    FIXTURES,
    THREADS_VARIABLE,
    ConfigError,
    config_hash,
    load_config,
    main,
    n_jobs_from_env,
)
from shaqlab.mcg import MarkovConvexGame, check_convexity, generate_convex_game, save_game


@pytest.fixture(autouse=True)
def single_thread(monkeypatch):
    monkeypatch.setenv(THREADS_VARIABLE, "1")


def write_config(tmp_path, document, name="config.json"):
    path = str(tmp_path / name)
    with open(path, "w") as f:
        json.dump(document, f)
    return path


def read_json(path):
    with open(path) as f:
        return json.load(f)


def test_config_hash_is_canonical():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 64


def test_load_config(tmp_path):
    path = write_config(tmp_path, {"command": "shapley", "M": 50, "mode": "sampled"})
    config = load_config("shapley", path, {"M": 7, "seed": None})
    assert config["M"] == 7
    assert config["mode"] == "sampled"
    assert config["seed"] == 0

    assert_raises(ConfigError, load_config, "iterate", path)
    assert_raises(ConfigError, load_config, "shapley", write_config(tmp_path, {"colour": 1}, "x.json"))
    assert_raises(ConfigError, load_config, "shapley", str(tmp_path / "missing.json"))
    assert_raises(ConfigError, load_config, "shapley", write_config(tmp_path, [1, 2], "list.json"))
    assert_raises(ConfigError, load_config, "dance")


def test_threads_variable(monkeypatch):
    assert n_jobs_from_env() == 1
    monkeypatch.setenv(THREADS_VARIABLE, "lots")
    assert_raises(ConfigError, n_jobs_from_env)
    monkeypatch.setenv(THREADS_VARIABLE, "0")
    assert_raises(ConfigError, n_jobs_from_env)


def test_fixtures():
    assert not check_convexity(FIXTURES["non_convex"]())
    assert check_convexity(FIXTURES["glove"]())


def test_no_command():
    assert main([]) == EXIT_CONFIG


def test_check_convex(tmp_path):
    out = str(tmp_path / "convex")
    assert main(["check-convex", "--out", out]) == EXIT_OK
    report = read_json(os.path.join(out, "convexity_report.json"))
    assert report["passed"]
    assert len(report["config_hash"]) == 64

    assert main(["check-convex", "--fixture", "non_convex", "--out", out]) == EXIT_VIOLATION
    report = read_json(os.path.join(out, "convexity_report.json"))
    assert not report["passed"]
    assert "v_union" in report["details"]


def test_check_convex_game_file(tmp_path):
    path = str(tmp_path / "game.json")
    save_game(generate_convex_game(2, 2, 3, seed=9), path)
    assert main(["check-convex", "--game", path, "--out", str(tmp_path)]) == EXIT_OK
    assert main(["check-convex", "--game", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_check_core(tmp_path):
    out = str(tmp_path)
    assert main(["check-core", "--fixture", "glove", "--out", out]) == EXIT_OK
    assert main(["check-core", "--fixture", "non_convex", "--out", out]) == EXIT_VIOLATION
    report = read_json(os.path.join(out, "core_report.json"))
    assert report["details"]["coalition"] == [0]


def test_shapley_command(tmp_path):
    out = str(tmp_path)
    with pytest.warns(UserWarning):
        code = main(["shapley", "--mode", "both", "--M", "5", "--out", out])
    assert code == EXIT_OK
    exact = read_json(os.path.join(out, "exact_table.json"))
    sampled = read_json(os.path.join(out, "sampled_table.json"))
    report = read_json(os.path.join(out, "shapley_report.json"))
    assert exact["mode"] == "exact"
    assert sampled["M"] == 5
    assert exact["config_hash"] == sampled["config_hash"] == report["config_hash"]
    assert all(check["passed"] for check in report["checks"])


def test_shapley_detects_core_violation(tmp_path):
    # the two agents are symmetric, so only the core check fails
    assert main(["shapley", "--fixture", "non_convex", "--out", str(tmp_path)]) == EXIT_VIOLATION


def test_shapley_bad_mode(tmp_path):
    path = write_config(tmp_path, {"command": "shapley", "mode": "guess", "out": str(tmp_path)})
    assert main(["shapley", "--config", path]) == EXIT_CONFIG


def test_config_for_other_command(tmp_path):
    path = write_config(tmp_path, {"command": "iterate"})
    assert main(["shapley", "--config", path]) == EXIT_CONFIG


def test_iterate_command(tmp_path):
    out = str(tmp_path)
    assert main(["iterate", "--compare-oracle", "--out", out]) == EXIT_OK
    trace = pd.read_csv(os.path.join(out, "trace.csv"))
    assert list(trace.columns) == ["iteration", "residual_l1", "max_state_residual", "config_hash"]
    result = read_json(os.path.join(out, "fixed_point.json"))
    assert result["n_iter"] == len(trace)
    assert result["efficiency_gap"] <= 1e-5
    assert result["contraction_factor"] == pytest.approx(0.9)


def test_iterate_rejects_non_contraction(tmp_path):
    spec = {"w": np.ones((3, 2, 2)).tolist()}
    path = write_config(tmp_path, {"command": "iterate", "spec": spec, "out": str(tmp_path)})
    assert main(["iterate", "--config", path]) == EXIT_CONFIG


def test_iterate_out_of_budget(tmp_path):
    path = write_config(tmp_path, {"command": "iterate", "max_iter": 2, "out": str(tmp_path)})
    assert main(["iterate", "--config", path]) == EXIT_VIOLATION


def test_check_command(tmp_path):
    document = {
        "command": "check",
        "max_agents": 2,
        "n_games": 1,
        "contraction_pairs": 3,
        "alpha_fuzz": 20,
        "out": str(tmp_path),
    }
    path = write_config(tmp_path, document)
    assert main(["check", "--config", path]) == EXIT_OK
    report = read_json(os.path.join(str(tmp_path), "check_report.json"))
    assert report["passed"]
    assert report["checks"]["non_convex_violation_detected"]["passed"]
    assert report["checks"]["fairness"]["cases"] == 1

    assert main(["check", "--config", path, "--inject-fault"]) == EXIT_VIOLATION
    report = read_json(os.path.join(str(tmp_path), "check_report.json"))
    assert not report["checks"]["efficiency"]["passed"]


def test_train_command(tmp_path):
    document = {
        "command": "train",
        "learner": {"t_max": 200, "eval_interval": 100, "batch_size": 4},
        "credit_episodes": 2,
        "out": str(tmp_path),
    }
    path = write_config(tmp_path, document)
    assert main(["train", "--config", path, "--seeds", "0,1", "--algo", "vdn"]) == EXIT_OK

    curve_path = os.path.join(str(tmp_path), "learning_curve.csv")
    curve = pd.read_csv(curve_path)
    assert list(curve.columns) == [
        "eval_point", "step", "return_seed_0", "return_seed_1",
        "median", "q25", "q75", "config_hash",
    ]
    assert len(curve) == 3

    experiment = read_json(os.path.join(str(tmp_path), "experiment.json"))
    with open(curve_path, "rb") as f:
        assert experiment["record_hash"] == hashlib.sha256(f.read()).hexdigest()
    assert experiment["algo"] == "vdn"
    assert experiment["seeds"] == [0, 1]

    credit = pd.read_csv(os.path.join(str(tmp_path), "credit_seed1.csv"))
    assert len(credit) == 4
    assert os.path.exists(os.path.join(str(tmp_path), "checkpoint_seed0.json"))


def test_train_on_markov_game(tmp_path):
    document = {
        "command": "train",
        "env": {"kind": "mcg", "horizon": 5},
        "generate": {"n_agents": 2, "n_states": 2, "n_actions": 2, "seed": 3},
        "learner": {"t_max": 100, "eval_interval": 50},
        "seeds": [4],
        "out": str(tmp_path),
    }
    assert main(["train", "--config", write_config(tmp_path, document)]) == EXIT_OK
    record = pd.read_csv(os.path.join(str(tmp_path), "record_seed4.csv"))
    assert set(record["seed"]) == {4}


@pytest.mark.parametrize(
    "document",
    [
        {"algo": "qmix"},
        {"learner": {"colour": 1}},
        {"learner": {"M": 0}},
        {"seeds": []},
        {"env": {"kind": "tetris"}},
    ],
)
def test_train_config_errors(tmp_path, document):
    document = dict(document, command="train", out=str(tmp_path))
    assert main(["train", "--config", write_config(tmp_path, document)]) == EXIT_CONFIG


def test_seed_reaches_generated_game(tmp_path):
    tables = {}
    for seed in (0, 5):
        out = str(tmp_path / str(seed))
        path = write_config(tmp_path, {"command": "shapley", "out": out}, "seed%d.json" % seed)
        with pytest.warns(UserWarning):
            assert main(["shapley", "--config", path, "--seed", str(seed)]) == EXIT_OK
        tables[seed] = read_json(os.path.join(out, "exact_table.json"))
    assert tables[0]["q_phi"] != tables[5]["q_phi"]
    assert tables[5]["seed"] == 5
    assert tables[5]["game_source"]["generate"]["seed"] == 5

    # an explicit generator seed wins over the command seed
    document = {
        "command": "check-convex",
        "generate": {"n_agents": 2, "n_states": 1, "n_actions": 2, "seed": 9},
    }
    path = write_config(tmp_path, document, "pinned.json")
    assert main(["check-convex", "--config", path, "--seed", "3", "--out", str(tmp_path)]) == EXIT_OK
    report = read_json(os.path.join(str(tmp_path), "convexity_report.json"))
    assert report["game_source"]["generate"]["seed"] == 9


def test_iterate_checks_greedy_weight_at_fixed_point(tmp_path):
    # action 1 of each agent is best; zero tables would pick action 0
    game = MarkovConvexGame(
        (2, 2),
        np.ones((1, 4, 1)),
        {1: [[0.5, 1.0]], 2: [[0.5, 1.0]], 3: [[1.0, 2.0, 2.0, 4.0]]},
        0.5,
    )
    game_path = str(tmp_path / "game.json")
    save_game(game, game_path)
    document = {
        "command": "iterate",
        "game": game_path,
        "spec": {"w": [[[0.25, 0.5]], [[0.25, 0.5]]]},
        "out": str(tmp_path),
    }
    assert main(["iterate", "--config", write_config(tmp_path, document)]) == EXIT_OK
    result = read_json(os.path.join(str(tmp_path), "fixed_point.json"))
    assert result["weight_spec"]["passed"]
    assert result["q"][0][0] == pytest.approx([1.5, 4.0])
    assert result["efficiency_gap"] <= 1e-5

    # zero tables weight 1/2 on action 0, but the fixed point is greedy on action 1
    document["spec"] = {"w": [[[0.5, 0.4]], [[0.5, 0.4]]]}
    assert main(["iterate", "--config", write_config(tmp_path, document)]) == EXIT_VIOLATION
    result = read_json(os.path.join(str(tmp_path), "fixed_point.json"))
    assert not result["weight_spec"]["details"]["greedy_weight"]


def test_check_command_runs_sampled_ordering(tmp_path):
    document = {
        "command": "check",
        "max_agents": 3,
        "n_games": 1,
        "contraction_pairs": 2,
        "sampled_reseeds": 20,
        "alpha_fuzz": 10,
        "out": str(tmp_path),
    }
    assert main(["check", "--config", write_config(tmp_path, document)]) == EXIT_OK
    report = read_json(os.path.join(str(tmp_path), "check_report.json"))
    ordering = report["checks"]["sampled_error_ordering"]
    assert ordering["cases"] == 1
    assert ordering["passed"]
    assert report["checks"]["fairness"]["cases"] == 2


def read_outputs(out):
    contents = {}
    for name in sorted(os.listdir(out)):
        with open(os.path.join(out, name), "rb") as f:
            contents[name] = f.read()
    return contents


@pytest.mark.filterwarnings("ignore::UserWarning")
@pytest.mark.parametrize(
    "argv",
    [
        ["shapley", "--mode", "both", "--M", "4", "--seed", "2"],
        ["iterate", "--seed", "1"],
        ["check-core", "--seed", "4"],
        ["train", "--seeds", "0,1"],
    ],
)
def test_rerun_gives_identical_artifacts(tmp_path, argv):
    out = str(tmp_path / "out")
    if argv[0] == "train":
        document = {
            "command": "train",
            "learner": {"t_max": 100, "eval_interval": 50, "batch_size": 4},
            "out": out,
        }
        argv = argv + ["--config", write_config(tmp_path, document)]
    else:
        argv = argv + ["--out", out]
    assert main(argv) == EXIT_OK
    first = read_outputs(out)
    assert main(argv) == EXIT_OK
    assert read_outputs(out) == first


def test_train_on_predator_prey(tmp_path):
    document = {
        "command": "train",
        "env": {
            "kind": "predator_prey",
            "grid_size": 3,
            "episode_limit": 10,
            "observe_position": True,
        },
        "learner": {
            "t_max": 60,
            "eval_interval": 30,
            "eval_episodes": 2,
            "batch_size": 2,
            "lr_q": 0.1,
            "q_update": "entry",
            "gamma": 0.95,
        },
        "seeds": [0],
        "out": str(tmp_path),
    }
    assert main(["train", "--config", write_config(tmp_path, document)]) == EXIT_OK
    experiment = read_json(os.path.join(str(tmp_path), "experiment.json"))
    assert experiment["env"]["observe_position"]
    assert experiment["game_source"] is None
    credit = pd.read_csv(os.path.join(str(tmp_path), "credit_seed0.csv"))
    assert set(credit["agent"]) == {0, 1}
