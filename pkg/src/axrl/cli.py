"""Command-line front end.

Subcommands: gen-data, train-bonus, eval-bonus, train, sweep, verify-dp,
eval-policy. Every command is deterministic given its flags and seed, and
each artifact directory carries the seed plus a fingerprint of the resolved
options. A JSON file passed via --config supplies option values by flag
name; explicit flags win over the file. Exit codes: 0 success, 1 runtime
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import sys

import numpy as np

from . import mdp as dp
from .agent import TrainConfig, evaluate_policy, train_agent
from .bonus import (
    CvaeConfig,
    RndConfig,
    bonus_score,
    load_bonus_model,
    save_bonus_model,
    train_cvae,
    train_rnd,
)
from .envs import (
    ENV_IDS,
    load_dataset,
    generate_dataset,
    make_env,
    make_ood_actions,
    save_dataset,
    scripted_returns,
)
from .nets import load_mlp, save_mlp
from .reports import (
    SweepCell,
    build_discrimination_report,
    normalized_return,
    report_to_json,
    select_best,
    sweep_to_json,
    write_histogram_csv,
)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

FLAVORS = ("random", "medium", "expert", "medium-expert")
DEFAULT_MODES = "uniform,noise:0.5,noise:0.1,shuffled"


class UsageError(Exception):
    pass


def data_root() -> str:
    return os.environ.get("AXRL_DATA_DIR", ".")


def _fingerprint(options: dict) -> str:
    return hashlib.sha256(
        json.dumps(options, sort_keys=True).encode()).hexdigest()


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in str(text).split(",") if tok != "")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in str(text).split(",") if tok != "")


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """flag > --config file > default, keyed by flag dest names."""
    doc = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file: {exc}")
        unknown = set(doc) - set(defaults)
        if unknown:
            raise UsageError(f"config file has unknown keys: {sorted(unknown)}")
    opts = {}
    for key, fallback in defaults.items():
        value = getattr(args, key, None)
        if value is None:
            value = doc.get(key, fallback)
        opts[key] = value
    return opts


def _out_path(opts: dict, default_name: str) -> str:
    if opts.get("out"):
        return opts["out"]
    return os.path.join(data_root(), default_name)


def _print_json(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# gen-data


GEN_DEFAULTS = {"env": None, "flavor": None, "size": None, "seed": 0,
                "out": None}


def cmd_gen_data(args) -> int:
    opts = _resolve(args, GEN_DEFAULTS)
    if opts["env"] not in ENV_IDS:
        raise UsageError(f"unknown environment {opts['env']!r}; "
                         f"valid ids: {', '.join(ENV_IDS)}")
    if opts["flavor"] not in FLAVORS:
        raise UsageError(f"unknown flavor {opts['flavor']!r}; "
                         f"valid flavors: {', '.join(FLAVORS)}")
    if not opts["size"] or int(opts["size"]) < 1:
        raise UsageError("--size must be a positive transition count")
    opts["size"] = int(opts["size"])
    out = _out_path(opts, f"{opts['env']}-{opts['flavor']}-{opts['size']}"
                          f"-seed{opts['seed']}.bin")
    fingerprint = _fingerprint({**opts, "out": None, "command": "gen-data"})
    env = make_env(opts["env"])
    dataset = generate_dataset(env, opts["flavor"], opts["size"],
                               seed=int(opts["seed"]))
    dataset.metadata["config_fingerprint"] = fingerprint
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    save_dataset(out, dataset)
    _print_json({**dataset.metadata, "path": out})
    return EXIT_OK


# ---------------------------------------------------------------------------
# train-bonus


BONUS_DEFAULTS = {"dataset": None, "kind": "cvae", "steps": 50_000,
                  "hidden": "64,64", "latent": 4, "embed": 8,
                  "lr": 1e-4, "batch": 100, "seed": 0, "out": None}


def _train_bonus_model(dataset, opts, loss_csv_path=None):
    hidden = _ints(opts["hidden"])
    if opts["kind"] == "cvae":
        config = CvaeConfig(hidden_sizes=hidden, latent_dim=int(opts["latent"]),
                            learning_rate=float(opts["lr"]),
                            batch_size=int(opts["batch"]),
                            n_steps=int(opts["steps"]), seed=int(opts["seed"]))
        return train_cvae(dataset, config, loss_csv_path=loss_csv_path)
    if opts["kind"] == "rnd":
        config = RndConfig(hidden_sizes=hidden, embed_dim=int(opts["embed"]),
                           learning_rate=float(opts["lr"]),
                           batch_size=int(opts["batch"]),
                           n_steps=int(opts["steps"]), seed=int(opts["seed"]))
        return train_rnd(dataset, config, loss_csv_path=loss_csv_path)
    raise UsageError(f"unknown bonus kind {opts['kind']!r}; valid: cvae, rnd")


def cmd_train_bonus(args) -> int:
    opts = _resolve(args, BONUS_DEFAULTS)
    if not opts["dataset"]:
        raise UsageError("--dataset is required")
    if opts["kind"] not in ("cvae", "rnd"):
        raise UsageError(f"unknown bonus kind {opts['kind']!r}; valid: cvae, rnd")
    out = _out_path(opts, f"bonus-{opts['kind']}-seed{opts['seed']}")
    fingerprint = _fingerprint({**opts, "out": None, "command": "train-bonus"})
    dataset = load_dataset(opts["dataset"])
    os.makedirs(out, exist_ok=True)
    model = _train_bonus_model(dataset, opts,
                               loss_csv_path=os.path.join(out, "training_loss.csv"))
    save_bonus_model(out, model, dataset_fingerprint=dataset.metadata["fingerprint"],
                     training_steps=int(opts["steps"]))
    manifest = {"command": "train-bonus", "seed": int(opts["seed"]),
                "config_fingerprint": fingerprint, "options": {**opts, "out": out}}
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    _print_json({"kind": opts["kind"], "out": out, "seed": int(opts["seed"]),
                 "dataset_fingerprint": dataset.metadata["fingerprint"],
                 "config_fingerprint": fingerprint})
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval-bonus


EVAL_BONUS_DEFAULTS = {"dataset": None, "model": None, "kind": "cvae",
                       "steps": 50_000, "hidden": "64,64", "latent": 4,
                       "embed": 8, "lr": 1e-4, "batch": 100,
                       "modes": DEFAULT_MODES, "seed": 0, "out": None}


def _parse_mode(token: str) -> tuple[str, str, float | None]:
    token = token.strip()
    if token in ("uniform", "shuffled"):
        return token, token, None
    for prefix, suffix in (("noise:", ""), ("noise(", ")")):
        if token.startswith(prefix) and token.endswith(suffix) and \
                len(token) > len(prefix) + len(suffix):
            body = token[len(prefix):len(token) - len(suffix)]
            try:
                return token, "noise", float(body)
            except ValueError:
                break
    raise UsageError(f"cannot parse OOD mode {token!r}; "
                     "use uniform, shuffled, or noise:<fraction>")


def cmd_eval_bonus(args) -> int:
    opts = _resolve(args, EVAL_BONUS_DEFAULTS)
    if not opts["dataset"]:
        raise UsageError("--dataset is required")
    modes = [_parse_mode(tok) for tok in str(opts["modes"]).split(",") if tok]
    if not modes:
        raise UsageError("--modes must list at least one OOD mode")
    out = _out_path(opts, f"bonus-report-seed{opts['seed']}")
    fingerprint = _fingerprint({**opts, "out": None, "command": "eval-bonus"})
    dataset = load_dataset(opts["dataset"])
    env = make_env(dataset.metadata["env"])
    if opts["model"]:
        model = load_bonus_model(opts["model"])
    else:
        model = _train_bonus_model(dataset, opts)
    states = dataset.states.astype(np.float64)
    data_scores = np.asarray(bonus_score(model, states, dataset.actions))
    mode_seeds = np.random.SeedSequence(int(opts["seed"])).spawn(len(modes))
    mode_scores = {}
    for (label, base, frac), seq in zip(modes, mode_seeds):
        _, ood = make_ood_actions(dataset, env, base,
                                  seed=int(seq.generate_state(1)[0]),
                                  noise_fraction=frac)
        mode_scores[label] = np.asarray(bonus_score(model, states, ood))
    report = build_discrimination_report(
        model.kind, dataset.metadata["fingerprint"], int(opts["seed"]),
        data_scores, mode_scores, config_fingerprint=fingerprint)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report_to_json(report))
    with open(os.path.join(out, "histograms.csv"), "w") as fh:
        write_histogram_csv(report, fh)
    _print_json({"out": out, "model_kind": model.kind,
                 "auc": {m.name: m.auc_vs_dataset for m in report.modes}})
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


TRAIN_DEFAULTS = {"dataset": None, "bonus_model": None, "beta_actor": 1.0,
                  "beta_critic": 1.0, "steps": 50_000, "batch": 128,
                  "eval_every": 5_000, "eval_episodes": 10,
                  "hidden": "256,256", "actor_lr": 3e-4, "critic_lr": 3e-4,
                  "dtype": "float32", "normalize": 1, "seed": 0, "out": None}

CHECKPOINT_PARTS = ("actor", "critic1", "critic2", "target_actor",
                    "target_critic1", "target_critic2")


def cmd_train(args) -> int:
    if getattr(args, "replay", None):
        try:
            with open(args.replay) as fh:
                manifest = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read manifest: {exc}")
        if manifest.get("command") != "train":
            raise UsageError("manifest does not describe a train run")
        opts = dict(manifest["options"])
        if getattr(args, "out", None):
            opts["out"] = args.out
    else:
        opts = _resolve(args, TRAIN_DEFAULTS)
    if not opts["dataset"] or not opts["bonus_model"]:
        raise UsageError("--dataset and --bonus-model are required")
    if opts["dtype"] not in ("float32", "float64"):
        raise UsageError("--dtype must be float32 or float64")
    out = _out_path(opts, f"run-seed{opts['seed']}")
    fingerprint = _fingerprint({**opts, "out": None, "command": "train"})
    dataset = load_dataset(opts["dataset"])
    env = make_env(dataset.metadata["env"])
    model = load_bonus_model(opts["bonus_model"])
    config = TrainConfig(
        gradient_steps=int(opts["steps"]), batch_size=int(opts["batch"]),
        actor_lr=float(opts["actor_lr"]), critic_lr=float(opts["critic_lr"]),
        seed=int(opts["seed"]), eval_every=int(opts["eval_every"]),
        eval_episodes=int(opts["eval_episodes"]), env_id=env.id,
        dataset_path=str(opts["dataset"]),
        beta_actor=float(opts["beta_actor"]),
        beta_critic=float(opts["beta_critic"]),
        hidden_sizes=_ints(opts["hidden"]),
        dtype=np.float32 if opts["dtype"] == "float32" else np.float64,
        normalize=bool(int(opts["normalize"])))
    os.makedirs(out, exist_ok=True)
    metrics_path = os.path.join(out, "metrics.csv")
    td3, metrics = train_agent(dataset, model, env, config,
                               metrics_csv_path=metrics_path)
    for name in CHECKPOINT_PARTS:
        save_mlp(os.path.join(out, f"{name}.axrl"), getattr(td3, name))
    state_doc = {"env": env.id, "step": td3.step,
                 "beta_actor": td3.beta_actor, "beta_critic": td3.beta_critic,
                 "seed": int(opts["seed"]), "config_fingerprint": fingerprint}
    with open(os.path.join(out, "state.json"), "w") as fh:
        json.dump(state_doc, fh, indent=2, sort_keys=True)
    manifest = {"command": "train", "seed": int(opts["seed"]),
                "config_fingerprint": fingerprint,
                "dataset_fingerprint": dataset.metadata["fingerprint"],
                "options": {**opts, "out": out},
                "artifacts": ["metrics.csv", "state.json"]
                + [f"{n}.axrl" for n in CHECKPOINT_PARTS]}
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    _print_json({"out": out, "seed": int(opts["seed"]),
                 "config_fingerprint": fingerprint,
                 "final": metrics[-1] if metrics else None})
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


SWEEP_DEFAULTS = {"datasets": None, "grid": "0.1,0.5,1,5,10", "seeds": "0",
                  "steps": 5_000, "batch": 128, "eval_episodes": 10,
                  "hidden": "256,256", "bonus_steps": 10_000,
                  "reference_episodes": 20, "seed": 0, "out": None}


def cmd_sweep(args) -> int:
    opts = _resolve(args, SWEEP_DEFAULTS)
    paths = [tok for tok in str(opts["datasets"] or "").split(",") if tok]
    if not paths:
        raise UsageError("--datasets must list at least one dataset file")
    grid = _floats(opts["grid"])
    seeds = _ints(opts["seeds"])
    if not grid or not seeds:
        raise UsageError("--grid and --seeds must be non-empty")
    out = _out_path(opts, f"sweep-seed{opts['seed']}.json")
    fingerprint = _fingerprint({**opts, "out": None, "command": "sweep"})
    tasks = []
    for path in paths:
        dataset = load_dataset(path)
        env = make_env(dataset.metadata["env"])
        name = f"{env.id}-{dataset.metadata.get('flavor', 'unknown')}"
        bonus = _train_bonus_model(dataset, {
            "kind": "cvae", "hidden": "64,64", "latent": 4, "lr": 1e-4,
            "batch": 100, "steps": int(opts["bonus_steps"]),
            "seed": int(opts["seed"])})
        random_ref = float(np.mean(scripted_returns(
            env, "random", int(opts["reference_episodes"]), seed=int(opts["seed"]))))
        expert_ref = float(np.mean(scripted_returns(
            env, "expert", int(opts["reference_episodes"]), seed=int(opts["seed"]))))
        tasks.append((name, dataset, env, bonus, random_ref, expert_ref))
    cells = []
    for beta_a, beta_c in itertools.product(grid, grid):
        per_task = []
        per_seed = {s: [] for s in seeds}
        for name, dataset, env, bonus, random_ref, expert_ref in tasks:
            task_scores = []
            for seed in seeds:
                config = TrainConfig(
                    gradient_steps=int(opts["steps"]), batch_size=int(opts["batch"]),
                    seed=int(seed), eval_every=int(opts["steps"]),
                    eval_episodes=int(opts["eval_episodes"]), env_id=env.id,
                    beta_actor=float(beta_a), beta_critic=float(beta_c),
                    hidden_sizes=_ints(opts["hidden"]), dtype=np.float32)
                _, metrics = train_agent(dataset, bonus, env, config)
                score = normalized_return(metrics[-1]["eval_return_mean"],
                                          random_ref, expert_ref)
                task_scores.append(score)
                per_seed[seed].append(score)
            per_task.append((name, float(np.mean(task_scores))))
        seed_means = [float(np.mean(v)) for v in per_seed.values()]
        cells.append(SweepCell(
            beta_actor=float(beta_a), beta_critic=float(beta_c),
            mean_normalized_return=float(np.mean(seed_means)),
            std_normalized_return=float(np.std(seed_means)),
            per_task=tuple(per_task)))
    result = select_best(cells)
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w") as fh:
        fh.write(sweep_to_json(result, int(opts["seed"]), fingerprint))
    _print_json({"out": out,
                 "selected": {"beta_actor": result.selected_beta_actor,
                              "beta_critic": result.selected_beta_critic}})
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify-dp


VERIFY_DEFAULTS = {"n_mdps": 100, "max_states": 6, "max_actions": 4,
                   "taus": "1,0.1,0.01,0.001,1e-6", "iterations": 200,
                   "enumeration_limit": 4096, "seed": 0, "out": None}


def _check_equivalence(mdp, bonus, q0, n_iter):
    rp = dp.vi_reward_penalty(mdp, bonus, q0, n_iter)
    pb = dp.vi_penalized_bootstrap(
        mdp, bonus, dp.QTable(q0.values + bonus.values), n_iter)
    if not np.array_equal(rp.action_sequence(), pb.action_sequence()):
        return False, "policy sequences differ"
    for qa, qb in zip(rp.q_tables, pb.q_tables):
        if np.max(np.abs(qb.values - qa.values - bonus.values)) > 1e-9:
            return False, "Q-table shift exceeds 1e-9"
    return True, ""


def _check_fixed_point(mdp, bonus, q0, limit):
    if mdp.n_actions ** mdp.n_states > limit:
        return True, "skipped (instance too large to enumerate)"
    _, policy, _ = dp.run_to_convergence(mdp, "reward_penalty", q0, bonus)
    effective = mdp.reward - bonus.values
    v_policy, _ = dp.exact_policy_values(mdp, policy, effective)
    _, v_best = dp.enumerate_best_policy(mdp, effective, limit=limit)
    if np.max(np.abs(v_best - v_policy)) > 1e-8:
        return False, f"value gap {np.max(np.abs(v_best - v_policy)):.3e}"
    return True, ""


def _check_rewrite_identity(mdp, bonus, rng, beta=2.0, tau=0.7, n_triples=5):
    for _ in range(n_triples):
        raw = rng.random((mdp.n_states, mdp.n_actions)) + 1e-3
        pi = dp.TabularPolicy(raw / raw.sum(axis=1, keepdims=True))
        q = rng.normal(size=(mdp.n_states, mdp.n_actions)) * 3
        soft = dp.bonus_softmax_policy(bonus, beta, tau)
        gap = dp.soft_bonus_gap(bonus, beta, tau)
        lhs = np.sum(pi.probs * q, axis=1) - tau * dp.policy_kl(pi, soft)
        rhs = np.sum(pi.probs * (q - gap), axis=1) + tau * dp.policy_entropy(pi)
        if np.max(np.abs(lhs - rhs)) > 1e-8:
            return False, "softmax-gap rewrite identity broken"
    return True, ""


def _check_zero_temperature(mdp, bonus, q0, taus):
    report = dp.check_zero_temperature_limit(mdp, bonus, 1.0, taus, q0,
                                             n_iter=30)
    if not report.precondition_ok:
        return False, "bonus minimum not zero"
    if not report.passed():
        return False, f"disagreements {report.disagreements}"
    return True, ""


def _check_zero_bonus_control(mdp, q0, n_iter=50):
    zero = dp.BonusTable(np.zeros((mdp.n_states, mdp.n_actions)))
    plain = dp.vi_plain(mdp, q0, n_iter).action_sequence()
    traces = (dp.vi_exploration_bonus(mdp, zero, q0, n_iter),
              dp.vi_reward_penalty(mdp, zero, q0, n_iter),
              dp.vi_penalized_bootstrap(mdp, zero, q0, n_iter))
    for trace in traces:
        if not np.array_equal(trace.action_sequence(), plain):
            return False, "a zero-bonus scheme departs from plain iteration"
    return True, ""


def cmd_verify_dp(args) -> int:
    opts = _resolve(args, VERIFY_DEFAULTS)
    taus = _floats(opts["taus"])
    n_mdps = int(opts["n_mdps"])
    gammas = (0.5, 0.9, 0.99)
    checks = ("equivalence", "fixed-point", "rewrite-identity",
              "zero-temperature-limit", "zero-bonus-control")
    passed = {name: 0 for name in checks}
    failed = {name: 0 for name in checks}
    first_failure = None
    for index in range(n_mdps):
        rng = np.random.default_rng(np.random.SeedSequence(
            (int(opts["seed"]), index)))
        n_states = int(rng.integers(2, int(opts["max_states"]) + 1))
        n_actions = int(rng.integers(2, int(opts["max_actions"]) + 1))
        mdp = dp.random_mdp(n_states, n_actions, gammas[index % 3], rng)
        bonus = dp.random_bonus(n_states, n_actions, rng, zero_min=True)
        q0 = dp.QTable(rng.normal(size=(n_states, n_actions)))
        results = {
            "equivalence": _check_equivalence(mdp, bonus, q0,
                                              int(opts["iterations"])),
            "fixed-point": _check_fixed_point(mdp, bonus, q0,
                                              int(opts["enumeration_limit"])),
            "rewrite-identity": _check_rewrite_identity(mdp, bonus, rng),
            "zero-temperature-limit": _check_zero_temperature(mdp, bonus, q0,
                                                              taus),
            "zero-bonus-control": _check_zero_bonus_control(mdp, q0),
        }
        for name, (ok, detail) in results.items():
            if ok:
                passed[name] += 1
            else:
                failed[name] += 1
                if first_failure is None:
                    first_failure = (name, index, detail)
    out = opts.get("out") or os.path.join(data_root(),
                                          f"verify-dp-seed{opts['seed']}.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w") as fh:
        fh.write("check,passed,failed\n")
        for name in checks:
            fh.write(f"{name},{passed[name]},{failed[name]}\n")
    doc = {"seed": int(opts["seed"]), "n_mdps": n_mdps,
           "config_fingerprint": _fingerprint({**opts, "out": None,
                                               "command": "verify-dp"}),
           "passed": passed, "failed": failed, "table": out}
    with open(os.path.splitext(out)[0] + ".json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    if first_failure is not None:
        name, index, detail = first_failure
        print(f"FAIL {name} on MDP index {index} "
              f"(seed ({opts['seed']}, {index})): {detail}", file=sys.stderr)
        return EXIT_RUNTIME
    _print_json(doc)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval-policy


EVAL_POLICY_DEFAULTS = {"checkpoint": None, "episodes": 10, "seed": 0,
                        "out": None}


def cmd_eval_policy(args) -> int:
    opts = _resolve(args, EVAL_POLICY_DEFAULTS)
    if not opts["checkpoint"]:
        raise UsageError("--checkpoint is required")
    state_path = os.path.join(opts["checkpoint"], "state.json")
    try:
        with open(state_path) as fh:
            state_doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read checkpoint state: {exc}")
    env = make_env(state_doc["env"])
    actor = load_mlp(os.path.join(opts["checkpoint"], "actor.axrl"))
    returns = evaluate_policy(actor, env, int(opts["episodes"]),
                              int(opts["seed"]))
    doc = {"checkpoint": opts["checkpoint"], "env": env.id,
           "seed": int(opts["seed"]), "episodes": int(opts["episodes"]),
           "returns": [float(r) for r in returns],
           "mean": float(returns.mean()), "std": float(returns.std())}
    if opts.get("out"):
        with open(opts["out"], "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
    _print_json(doc)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(sub):
    sub.add_argument("--seed", type=int)
    sub.add_argument("--config", help="JSON file of option defaults")
    sub.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="axrl",
        description="Offline RL with novelty-penalized training: data, "
                    "bonus models, agents, and verification.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="generate an offline dataset")
    p.add_argument("--env")
    p.add_argument("--flavor")
    p.add_argument("--size", type=int)
    _add_common(p)
    p.set_defaults(handler=cmd_gen_data)

    p = subs.add_parser("train-bonus", help="train a novelty bonus model")
    p.add_argument("--dataset")
    p.add_argument("--kind", choices=("cvae", "rnd"))
    p.add_argument("--steps", type=int)
    p.add_argument("--hidden")
    p.add_argument("--latent", type=int)
    p.add_argument("--embed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    _add_common(p)
    p.set_defaults(handler=cmd_train_bonus)

    p = subs.add_parser("eval-bonus",
                        help="score OOD discrimination of a bonus model")
    p.add_argument("--dataset")
    p.add_argument("--model", help="directory of a saved bonus model")
    p.add_argument("--kind", choices=("cvae", "rnd"))
    p.add_argument("--steps", type=int)
    p.add_argument("--hidden")
    p.add_argument("--latent", type=int)
    p.add_argument("--embed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--modes")
    _add_common(p)
    p.set_defaults(handler=cmd_eval_bonus)

    p = subs.add_parser("train", help="train the penalized TD3 agent")
    p.add_argument("--dataset")
    p.add_argument("--bonus-model", dest="bonus_model")
    p.add_argument("--beta-actor", dest="beta_actor", type=float)
    p.add_argument("--beta-critic", dest="beta_critic", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--eval-episodes", dest="eval_episodes", type=int)
    p.add_argument("--hidden")
    p.add_argument("--actor-lr", dest="actor_lr", type=float)
    p.add_argument("--critic-lr", dest="critic_lr", type=float)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--normalize", type=int, choices=(0, 1))
    p.add_argument("--replay", help="manifest.json of a previous run to repeat")
    _add_common(p)
    p.set_defaults(handler=cmd_train)

    p = subs.add_parser("sweep", help="grid search over bonus scales")
    p.add_argument("--datasets", help="comma-separated dataset files")
    p.add_argument("--grid", help="comma-separated scale values")
    p.add_argument("--seeds", help="comma-separated training seeds")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--eval-episodes", dest="eval_episodes", type=int)
    p.add_argument("--hidden")
    p.add_argument("--bonus-steps", dest="bonus_steps", type=int)
    p.add_argument("--reference-episodes", dest="reference_episodes", type=int)
    _add_common(p)
    p.set_defaults(handler=cmd_sweep)

    p = subs.add_parser("verify-dp",
                        help="run the tabular scheme verification suite")
    p.add_argument("--n-mdps", dest="n_mdps", type=int)
    p.add_argument("--max-states", dest="max_states", type=int)
    p.add_argument("--max-actions", dest="max_actions", type=int)
    p.add_argument("--taus")
    p.add_argument("--iterations", type=int)
    _add_common(p)
    p.set_defaults(handler=cmd_verify_dp)

    p = subs.add_parser("eval-policy", help="evaluate a trained checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--episodes", type=int)
    _add_common(p)
    p.set_defaults(handler=cmd_eval_policy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, FloatingPointError, RuntimeError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
