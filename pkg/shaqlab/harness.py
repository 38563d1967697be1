# -*- coding: utf-8 -*-
"""
Command line entry point and experiment orchestration.

Every command reads an optional JSON config (``--config``) whose
``command`` key must match the subcommand, applies flag overrides, hashes
the merged config and writes artifacts embedding that hash.

Exit codes: 0 when every check passes, 1 on a property violation, 2 on a
configuration error.
"""
import argparse
import copy
import hashlib
import json
import logging
import os
import sys
from warnings import catch_warnings, simplefilter

import numpy as np
import pandas as pd
from joblib import Parallel, cpu_count, delayed
from sklearn.utils import check_random_state

from .bellman import (
    FactoredQ,
    WeightSpec,
    apply_operator_joint,
    check_weight_spec,
    factored_norm,
    fixed_point_iterate,
    uniform_weight_spec,
    weight_spec_from_alpha,
)
from .environments import make_env
from .mcg import (
    ConvergenceError,
    MarkovConvexGame,
    all_coalition_values,
    append_dummy_agent,
    check_convexity,
    generate_convex_game,
    load_game,
)
from .shaq_ import AlphaModel, ShapleyQLearner, save_checkpoint
from .shapley import (
    markov_shapley_table_exact,
    markov_shapley_table_permutation,
    markov_shapley_table_sampled,
    save_shapley_table,
)
from .validity import (
    check_dummy,
    check_efficiency,
    check_fairness,
    check_marginal_nonnegativity,
    check_markov_core,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2
THREADS_VARIABLE = "SHAQLAB_THREADS"
STRUCTURAL_SPEC_CHECKS = ("positive_w", "nonnegative_b", "balanced_b", "contraction")

# the generator seed defaults to the command's own seed
_GENERATE = {"n_agents": 3, "n_states": 2, "n_actions": 2, "gamma": 0.9}

DEFAULTS = {
    "shapley": {
        "game": None,
        "fixture": None,
        "generate": _GENERATE,
        "mode": "exact",
        "M": 10,
        "seed": 0,
        "tol": 1e-6,
        "dummy_agent": None,
        "cache": None,
        "out": "results",
    },
    "iterate": {
        "game": None,
        "fixture": None,
        "generate": _GENERATE,
        "spec": "uniform",
        "seed": 0,
        "tol": 1e-8,
        "max_iter": 100000,
        "compare_oracle": False,
        "efficiency_tol": 1e-5,
        "out": "results",
    },
    "train": {
        "game": None,
        "fixture": None,
        "generate": _GENERATE,
        "env": {"kind": "matrix", "payoff": [[12.0, 0.0], [0.0, 6.0]]},
        "algo": "shaq",
        "learner": {},
        "seeds": [0, 1, 2, 3, 4],
        "credit_episodes": 1,
        "out": "results",
    },
    "check": {
        "max_agents": 3,
        "n_games": 5,
        "seed": 0,
        "contraction_pairs": 20,
        "sampled_reseeds": 50,
        "alpha_fuzz": 1000,
        "inject_fault": False,
        "out": "results",
    },
    "check-convex": {
        "game": None,
        "fixture": None,
        "generate": _GENERATE,
        "seed": 0,
        "tol": 1e-8,
        "out": "results",
    },
    "check-core": {
        "game": None,
        "fixture": None,
        "generate": _GENERATE,
        "seed": 0,
        "tol": 1e-6,
        "out": "results",
    },
}


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


def _single_state_game(values, gamma=0.5):
    # one action per agent; values maps coalition bitmask to its reward
    n_agents = max(values).bit_length()
    rewards = {mask: [[float(v)]] for mask, v in values.items()}
    return MarkovConvexGame((1,) * n_agents, np.ones((1, 1, 1)), rewards, gamma)


FIXTURES = {
    # r({1}) = r({2}) = 5, r({1, 2}) = 6: superadditivity fails
    "non_convex": lambda: _single_state_game({1: 5.0, 2: 5.0, 3: 6.0}),
    # only the pair earns anything
    "glove": lambda: _single_state_game({1: 0.0, 2: 0.0, 3: 12.0}),
}


def config_hash(config):
    """SHA-256 of the canonical JSON form of a config."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def n_jobs_from_env():
    value = os.environ.get(THREADS_VARIABLE)
    if value is None:
        return cpu_count()
    try:
        n_jobs = int(value)
    except ValueError:
        raise ConfigError("%s must be an integer, got %r" % (THREADS_VARIABLE, value))
    if n_jobs < 1:
        raise ConfigError("%s must be positive, got %d" % (THREADS_VARIABLE, n_jobs))
    return n_jobs


def load_config(command, path=None, overrides=None):
    """Merge defaults, the JSON file at ``path`` and flag overrides.

    Raises
    ------
    ConfigError
        For unreadable files, a mismatching ``command`` key or unknown keys.
    """
    if command not in DEFAULTS:
        raise ConfigError("Unknown command %r" % command)
    config = copy.deepcopy(DEFAULTS[command])
    if path is not None:
        try:
            with open(path) as f:
                document = json.load(f)
        except (OSError, ValueError) as e:
            raise ConfigError("Cannot read config %s: %s" % (path, e))
        if not isinstance(document, dict):
            raise ConfigError("Config %s must hold a JSON object" % path)
        file_command = document.pop("command", command)
        if file_command != command:
            raise ConfigError(
                "Config %s is for command %r, not %r" % (path, file_command, command)
            )
        config.update(document)
    for key, value in (overrides or {}).items():
        if value is not None:
            config[key] = value
    unknown = set(config) - set(DEFAULTS[command])
    if unknown:
        raise ConfigError("Unknown config keys for %s: %s" % (command, sorted(unknown)))
    return config


def _generator_settings(config):
    settings = dict(config["generate"])
    settings.setdefault("seed", config.get("seed", 0))
    return settings


def _game_source(config):
    """Where the game of a command comes from, for provenance."""
    if config.get("fixture") is not None:
        return {"fixture": config["fixture"]}
    if config.get("game") is not None:
        return {"game_file": config["game"]}
    return {"generate": _generator_settings(config)}


def _game_from_config(config):
    if config.get("fixture") is not None:
        if config["fixture"] not in FIXTURES:
            raise ConfigError("Unknown fixture %r" % config["fixture"])
        return FIXTURES[config["fixture"]]()
    if config.get("game") is not None:
        try:
            return load_game(config["game"])
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise ConfigError("Cannot load game %s: %s" % (config["game"], e))
    try:
        return generate_convex_game(**_generator_settings(config))
    except TypeError as e:
        raise ConfigError("Bad generator settings: %s" % e)


def _prepare_out(config):
    out = config["out"]
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path, document):
    with open(path, "w") as f:
        json.dump(document, f, sort_keys=True, indent=1)
    logger.info("wrote %s", path)


def _report_entry(report):
    return {"name": report.name, "passed": bool(report.passed), "details": report.details}


def cmd_shapley(config):
    """Compute Shapley tables of a game and run the property checks on them."""
    digest = config_hash(config)
    out = _prepare_out(config)
    game = _game_from_config(config)
    if config["mode"] not in ("exact", "sampled", "both"):
        raise ConfigError("mode must be exact, sampled or both, got %r" % config["mode"])
    tol = config["tol"]
    values = all_coalition_values(
        game, tol=min(tol, 1e-8), memory=config["cache"], n_jobs=n_jobs_from_env()
    )
    provenance = {
        "config_hash": digest,
        "seed": config["seed"],
        "game_source": _game_source(config),
    }

    table = markov_shapley_table_exact(game, values=values)
    if config["mode"] in ("exact", "both"):
        save_shapley_table(table, os.path.join(out, "exact_table.json"), **provenance)
    if config["mode"] in ("sampled", "both"):
        if config["M"] < 1:
            raise ConfigError("M must be at least 1")
        sampled = markov_shapley_table_sampled(game, config["M"], config["seed"], values=values)
        save_shapley_table(sampled, os.path.join(out, "sampled_table.json"), **provenance)

    reports = [
        check_efficiency(game, table, tol=tol, values=values),
        check_fairness(game, table, tol=tol),
        check_markov_core(game, table, tol=tol, values=values),
    ]
    if config["dummy_agent"] is not None:
        reports.append(check_dummy(game, table, config["dummy_agent"], tol=tol))
    _write_json(
        os.path.join(out, "shapley_report.json"),
        dict(provenance, checks=[_report_entry(r) for r in reports]),
    )
    failed = [r.name for r in reports if not r.passed]
    for name in failed:
        logger.warning("check %s failed", name)
    return EXIT_VIOLATION if failed else EXIT_OK


def _weight_spec_from_config(spec, game):
    if spec == "uniform":
        return uniform_weight_spec(game)
    if isinstance(spec, dict) and "w" in spec:
        b = spec.get("b", np.zeros((game.n_agents, game.n_states)))
        return WeightSpec(spec["w"], b)
    raise ConfigError("spec must be 'uniform' or an object with w (and b)")


def cmd_iterate(config):
    """Iterate the Shapley-Bellman operator to its fixed point."""
    digest = config_hash(config)
    out = _prepare_out(config)
    game = _game_from_config(config)
    try:
        spec = _weight_spec_from_config(config["spec"], game)
        report = check_weight_spec(spec, game, FactoredQ.zeros(game))
    except ValueError as e:
        raise ConfigError("Invalid weight spec: %s" % e)
    # greedy weights are checked once the greedy actions of the result are known
    broken = [name for name in STRUCTURAL_SPEC_CHECKS if not report.details[name]]
    if broken:
        raise ConfigError("Weight spec rejected (%s): %s" % (", ".join(broken), report.details))

    try:
        result = fixed_point_iterate(spec, game, tol=config["tol"], max_iter=config["max_iter"])
    except ConvergenceError as e:
        logger.error("%s", e)
        return EXIT_VIOLATION

    trace = pd.DataFrame(
        {
            "iteration": np.arange(1, result.n_iter + 1),
            "residual_l1": result.trace,
            "max_state_residual": [float(r.max()) for r in result.state_residuals],
        }
    )
    trace["config_hash"] = digest
    trace.to_csv(os.path.join(out, "trace.csv"), index=False)

    optimum = all_coalition_values(game)[game.grand_coalition]
    gap = float(np.max(np.abs(result.q.max_sum() - optimum.v_star)))
    final = check_weight_spec(spec, game, result.q)
    if not final.passed:
        logger.warning("weight spec fails at the greedy actions of the fixed point: %s", final.details)
    _write_json(
        os.path.join(out, "fixed_point.json"),
        {
            "config_hash": digest,
            "seed": config["seed"],
            "game_source": _game_source(config),
            "q": [t.tolist() for t in result.q.tables],
            "n_iter": result.n_iter,
            "contraction_factor": result.contraction_factor,
            "efficiency_gap": gap,
            "weight_spec": _report_entry(final),
        },
    )
    if config["compare_oracle"]:
        print("efficiency gap vs joint oracle: %.3g" % gap)
    if not final.passed or gap > config["efficiency_tol"]:
        return EXIT_VIOLATION
    return EXIT_OK


def _train_one(config, seed):
    game = None
    if config["env"].get("kind") == "mcg":
        game = _game_from_config(config)
    env = make_env(config["env"], game=game, random_state=seed)
    params = dict(config["learner"], algo=config["algo"], random_state=seed)
    learner = ShapleyQLearner(**params).fit(env)
    frame = learner.record_.to_frame()
    credit = learner.credit_report(
        make_env(config["env"], game=game, random_state=seed),
        episodes=config["credit_episodes"],
        seed=seed,
    )
    return learner, frame, credit


def cmd_train(config):
    """Train one learner per seed and aggregate their learning curves."""
    digest = config_hash(config)
    out = _prepare_out(config)
    if config["algo"] not in ("shaq", "vdn"):
        raise ConfigError("algo must be shaq or vdn, got %r" % config["algo"])
    seeds = [int(s) for s in config["seeds"]]
    if not seeds:
        raise ConfigError("At least one seed is needed")
    game = _game_from_config(config) if config["env"].get("kind") == "mcg" else None
    try:
        ShapleyQLearner(**config["learner"])._validate_params()
        make_env(config["env"], game=game)
    except (TypeError, ValueError) as e:
        raise ConfigError("Bad training config: %s" % e)

    results = Parallel(n_jobs=min(n_jobs_from_env(), len(seeds)))(
        delayed(_train_one)(config, seed) for seed in seeds
    )

    curves = {}
    steps = {}
    for seed, (learner, frame, credit) in zip(seeds, results):
        frame = frame.assign(seed=seed, config_hash=digest)
        frame.to_csv(os.path.join(out, "record_seed%d.csv" % seed), index=False)
        credit.assign(seed=seed, config_hash=digest).to_csv(
            os.path.join(out, "credit_seed%d.csv" % seed), index=False
        )
        save_checkpoint(learner, os.path.join(out, "checkpoint_seed%d.json" % seed), digest)
        curves["return_seed_%d" % seed] = frame["eval_median_return"]
        steps[seed] = frame["step"]

    curve = pd.DataFrame(curves)
    per_seed = curve.copy()
    curve.insert(0, "step", pd.DataFrame(steps).median(axis=1).astype(int))
    curve.insert(0, "eval_point", np.arange(len(curve)))
    curve["median"] = per_seed.median(axis=1)
    curve["q25"] = per_seed.quantile(0.25, axis=1)
    curve["q75"] = per_seed.quantile(0.75, axis=1)
    curve["config_hash"] = digest
    curve_path = os.path.join(out, "learning_curve.csv")
    curve.to_csv(curve_path, index=False)

    with open(curve_path, "rb") as f:
        record_hash = hashlib.sha256(f.read()).hexdigest()
    _write_json(
        os.path.join(out, "experiment.json"),
        {
            "config_hash": digest,
            "seeds": seeds,
            "algo": config["algo"],
            "env": config["env"],
            "game_source": _game_source(config) if game is not None else None,
            "final_median_return": float(curve["median"].iloc[-1]),
            "record_hash": record_hash,
        },
    )
    return EXIT_OK


class _Tally(object):
    """Per-check counts of cases and failures."""

    def __init__(self):
        self.results = {}

    def add(self, name, passed, detail=None):
        entry = self.results.setdefault(name, {"cases": 0, "failures": 0, "first_failure": None})
        entry["cases"] += 1
        if not passed:
            entry["failures"] += 1
            if entry["first_failure"] is None:
                entry["first_failure"] = detail

    def passed(self):
        return all(entry["failures"] == 0 for entry in self.results.values())

    def summary(self):
        return {
            name: dict(entry, passed=entry["failures"] == 0)
            for name, entry in sorted(self.results.items())
        }


def _check_game(tally, game, rng, config):
    values = all_coalition_values(game)
    table = markov_shapley_table_exact(game, values=values)
    if config["inject_fault"]:
        greedy = table.q_phi[0].argmax(axis=1)
        table.q_phi[0][np.arange(game.n_states), greedy] += 1.0

    report = check_convexity(game, values=values)
    tally.add("convexity", report.passed, report.details)
    report = check_efficiency(game, table, tol=1e-6, values=values)
    tally.add("efficiency", report.passed, report.details)
    report = check_markov_core(game, table, tol=1e-6, values=values)
    tally.add("markov_core", report.passed, report.details)
    report = check_marginal_nonnegativity(game, values=values)
    tally.add("marginal_nonnegativity", report.passed, report.details)

    dummy_game = append_dummy_agent(game)
    report = check_dummy(dummy_game, markov_shapley_table_exact(dummy_game), game.n_agents)
    tally.add("dummy", report.passed, report.details)

    if game.n_agents <= 5:
        exhaustive = markov_shapley_table_permutation(game, values=values)
        clean = markov_shapley_table_exact(game, values=values)
        gap = max(float(np.max(np.abs(a - b))) for a, b in zip(exhaustive.q_phi, clean.q_phi))
        tally.add("permutation_equivalence", gap <= 1e-9, {"gap": gap})

    spec = uniform_weight_spec(game)
    delta = game.gamma
    for _ in range(config["contraction_pairs"]):
        q1 = FactoredQ.random(game, rng, scale=10.0)
        q2 = FactoredQ.random(game, rng, scale=10.0)
        lhs = factored_norm(apply_operator_joint(q1, spec, game) - apply_operator_joint(q2, spec, game))
        rhs = delta * factored_norm(q1 - q2) + 1e-10
        tally.add("contraction", lhs <= rhs, {"lhs": lhs, "rhs": rhs})

    tol = 1e-8
    low = fixed_point_iterate(spec, game, tol=tol)
    high = fixed_point_iterate(spec, game, tol=tol, q0=FactoredQ.full(game, 100.0))
    gap = max(float(np.max(np.abs(a - b))) for a, b in zip(low.q.tables, high.q.tables))
    tally.add("fixed_point_uniqueness", gap <= 2e-6, {"gap": gap})

    optimum = values[game.grand_coalition].v_star
    states = np.arange(game.n_states)
    credit = np.vstack(
        [t[states, g] for t, g in zip(low.q.tables, low.q.greedy_actions())]
    )
    gap = float(np.max(np.abs(credit - optimum / game.n_agents)))
    tally.add("equal_credit", gap <= 1e-5, {"gap": gap})

    model = AlphaModel(game.n_agents, M=10, random_state=rng)
    for k in range(config["alpha_fuzz"]):
        model.set_params(k, rng.normal(scale=5.0, size=3))
        q_values = rng.normal(scale=20.0, size=game.n_agents)
        agent = int(rng.randint(game.n_agents))
        predecessors = [
            sum(1 << j for j in perm[: list(perm).index(agent)])
            for perm in (rng.permutation(game.n_agents) for _ in range(model.M))
        ]
        value = model.alpha(k, agent, q_values, predecessors)
        tally.add("alpha_lower_bound", value >= 1.0, {"alpha": value})

    alpha = [
        1.0 + np.abs(rng.normal(scale=3.0, size=(game.n_states, a))) for a in game.actions_per_agent
    ]
    greedy_of = FactoredQ.random(game, rng)
    induced = weight_spec_from_alpha(alpha, greedy_of.greedy_actions())
    report = check_weight_spec(induced, game, greedy_of)
    tally.add("induced_weight_spec", report.passed, report.details)


def _check_sampled_ordering(tally, game, config):
    exact = markov_shapley_table_exact(game)
    errors = []
    for M in (1, 10, 100):
        deviations = []
        for seed in range(config["sampled_reseeds"]):
            with catch_warnings():
                simplefilter("ignore")
                sampled = markov_shapley_table_sampled(game, M, seed=seed)
            deviations.append(
                np.mean([np.mean(np.abs(a - b)) for a, b in zip(sampled.q_phi, exact.q_phi)])
            )
        errors.append(float(np.mean(deviations)))
    ordered = errors[0] > errors[1] > errors[2]
    tally.add("sampled_error_ordering", ordered, {"mean_abs_error": errors})


def cmd_check(config):
    """Run the property battery over generated games."""
    digest = config_hash(config)
    out = _prepare_out(config)
    if config["max_agents"] < 1:
        raise ConfigError("max_agents must be at least 1")
    rng = check_random_state(config["seed"])
    tally = _Tally()

    for n_agents in range(1, config["max_agents"] + 1):
        for _ in range(config["n_games"]):
            game = generate_convex_game(
                n_agents,
                int(rng.randint(1, 4)),
                int(rng.randint(2, 4)),
                seed=int(rng.randint(2 ** 31 - 1)),
                gamma=0.9,
            )
            _check_game(tally, game, rng, config)
            if n_agents >= 2:
                symmetric = generate_convex_game(
                    n_agents, 2, 2, seed=int(rng.randint(2 ** 31 - 1)), symmetric_pair=(0, 1)
                )
                report = check_fairness(
                    symmetric, markov_shapley_table_exact(symmetric), pairs=[(0, 1)]
                )
                tally.add("fairness", report.passed, report.details)

    if config["max_agents"] >= 3:
        sampled_game = generate_convex_game(3, 2, 2, seed=int(rng.randint(2 ** 31 - 1)))
        _check_sampled_ordering(tally, sampled_game, config)

    fixture = FIXTURES["non_convex"]()
    report = check_markov_core(fixture, markov_shapley_table_exact(fixture))
    tally.add("non_convex_violation_detected", not report.passed, report.details)

    passed = tally.passed()
    _write_json(
        os.path.join(out, "check_report.json"),
        {"config_hash": digest, "seed": config["seed"], "passed": passed, "checks": tally.summary()},
    )
    return EXIT_OK if passed else EXIT_VIOLATION


def cmd_check_convex(config):
    """Check the convexity condition of one game."""
    digest = config_hash(config)
    out = _prepare_out(config)
    game = _game_from_config(config)
    report = check_convexity(game, tol=config["tol"])
    _write_json(
        os.path.join(out, "convexity_report.json"),
        dict(
            _report_entry(report),
            config_hash=digest,
            seed=config["seed"],
            game_source=_game_source(config),
        ),
    )
    return EXIT_OK if report.passed else EXIT_VIOLATION


def cmd_check_core(config):
    """Check that the exact Shapley payoffs of one game lie in its Markov core."""
    digest = config_hash(config)
    out = _prepare_out(config)
    game = _game_from_config(config)
    values = all_coalition_values(game)
    report = check_markov_core(
        game, markov_shapley_table_exact(game, values=values), tol=config["tol"], values=values
    )
    _write_json(
        os.path.join(out, "core_report.json"),
        dict(
            _report_entry(report),
            config_hash=digest,
            seed=config["seed"],
            game_source=_game_source(config),
        ),
    )
    return EXIT_OK if report.passed else EXIT_VIOLATION


COMMANDS = {
    "shapley": cmd_shapley,
    "iterate": cmd_iterate,
    "train": cmd_train,
    "check": cmd_check,
    "check-convex": cmd_check_convex,
    "check-core": cmd_check_core,
}


def _seed_list(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("seeds must be comma separated integers")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="shaqlab", description="Markov Shapley values and Shapley Q-learning experiments."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    subparsers = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        sub = subparsers.add_parser(name, help=COMMANDS[name].__doc__)
        sub.add_argument("--config", help="JSON config file")
        sub.add_argument("--out", help="output directory")
        if name == "train":
            sub.add_argument("--seeds", type=_seed_list)
            sub.add_argument("--algo", choices=["shaq", "vdn"])
        else:
            sub.add_argument("--seed", type=int)
        if name in ("shapley", "iterate", "check-convex", "check-core"):
            sub.add_argument("--tol", type=float)
            sub.add_argument("--fixture", choices=sorted(FIXTURES))
            sub.add_argument("--game", help="game JSON file")
        if name == "shapley":
            sub.add_argument("--mode", choices=["exact", "sampled", "both"])
            sub.add_argument("--M", type=int)
        if name == "iterate":
            sub.add_argument("--compare-oracle", action="store_true", default=None)
        if name == "check":
            sub.add_argument("--max-agents", type=int)
            sub.add_argument("--inject-fault", action="store_true", default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG

    overrides = {
        key: value
        for key, value in vars(args).items()
        if key not in ("command", "config", "verbose")
    }
    try:
        config = load_config(args.command, args.config, overrides)
        return COMMANDS[args.command](config)
    except ConfigError as e:
        print("configuration error: %s" % e, file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
