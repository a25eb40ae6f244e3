"""Config-driven experiment runner.

One stage per invocation; every stage writes its fully resolved config
into the output directory before any compute, appends plain-CSV metrics
(comment char '#', comma-separated, %.17g floats) and emits checkpoints
in the versioned binary format. Exit codes: 0 success, 2 config error,
3 io/format error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import load_critic, load_policy, save_critic, save_policy
from .config import ExperimentConfig, dump_config, load_config
from .critic import CriticConfig, train_critic
from .data import (OfflineDataset, SwissRollTask, assign_value_nearest, load_dataset,
                   make_swiss_roll, make_tilted_gaussian_bandit, save_dataset)
from .errors import ConfigError, DataFormatError, NonFiniteError
from .likelihood import TraceMode
from .matching import MatchingConfig
from .policy import (GenerativePolicy, GmpgConfig, GmpoConfig, PolicyConfig,
                     pretrain_behavior, train_gmpg, train_gmpo)
from .sampler import SolverSpec, generate
from .schedules import PathSchedule


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    return f"{v:.17g}" if isinstance(v, float) else str(v)


class MetricsWriter:
    def __init__(self, path: str, columns: list[str]):
        self.path = path
        self.columns = columns
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# " + ",".join(columns) + "\n")

    def row(self, values: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(",".join(_fmt(values.get(c, "")) for c in self.columns) + "\n")


def _build_dataset(cfg: ExperimentConfig, path_override: str | None) -> OfflineDataset:
    if path_override:
        return load_dataset(path_override)
    task = cfg.task
    if task.kind == "file":
        if not task.path:
            raise ConfigError("task.kind=file needs task.path")
        return load_dataset(task.path)
    if task.kind == "swiss_roll":
        return make_swiss_roll(SwissRollTask(n=task.n, noise=task.noise, seed=task.seed))
    if task.kind == "tilted_bandit":
        ds, _ = make_tilted_gaussian_bandit(task.dims, task.beta_target, task.n, task.seed)
        return ds
    raise ConfigError(f"unknown task kind {task.kind!r}")


def _schedule(cfg: ExperimentConfig) -> PathSchedule:
    m = cfg.model
    return PathSchedule(m.schedule, beta_min=m.beta_min, beta_max=m.beta_max,
                        path_sigma=m.path_sigma)


def _new_policy(cfg: ExperimentConfig, dataset: OfflineDataset, seed: int) -> GenerativePolicy:
    m = cfg.model
    pc = PolicyConfig(state_dim=dataset.state_dim, action_dim=dataset.action_dim,
                      hidden=m.hidden_sizes(), t_emb_width=m.t_emb_width,
                      t_emb_scale=m.t_emb_scale, parameterization=m.parameterization,
                      schedule=_schedule(cfg),
                      eval_solver=SolverSpec(cfg.solver.scheme, cfg.solver.steps))
    policy = GenerativePolicy(pc, np.random.default_rng(seed))
    policy.set_normalizer_from(dataset)
    return policy


def _trace_mode(cfg: ExperimentConfig) -> TraceMode:
    return TraceMode(cfg.policy.trace, cfg.policy.n_probes)


def _gmpo_config(cfg: ExperimentConfig) -> GmpoConfig:
    p = cfg.policy
    return GmpoConfig(beta=p.beta, weight_mode=p.weight_mode, w_max=p.w_max,
                      k_candidates=p.k_candidates,
                      matching=MatchingConfig(objective=p.objective, lambda_mode=p.lambda_mode),
                      steps=p.steps, batch_size=p.batch_size, lr=p.lr)


def _gmpg_config(cfg: ExperimentConfig) -> GmpgConfig:
    p = cfg.policy
    return GmpgConfig(beta=p.beta, t_train=p.t_train, scheme=p.gmpg_scheme,
                      trace=_trace_mode(cfg), steps=p.gmpg_steps,
                      batch_size=p.gmpg_batch_size, lr=p.gmpg_lr, variant=p.variant)


def _prepare_out(cfg: ExperimentConfig) -> str:
    out = cfg.output_dir()
    os.makedirs(out, exist_ok=True)
    dump_config(cfg, os.path.join(out, "resolved.ini"))
    return out


def _eval_value(policy: GenerativePolicy, dataset: OfflineDataset, seed_key, n=256) -> float:
    rng = np.random.default_rng(seed_key)
    states = dataset.s[np.arange(n) % dataset.n]
    actions = policy.sample_actions(states, rng)
    return float(assign_value_nearest(dataset, actions).mean())


def _policy_metrics_cb(writer: MetricsWriter, policy, dataset, cfg: ExperimentConfig):
    every = max(1, cfg.output.metric_every)

    def cb(step, metrics):
        row = {"step": step, **metrics}
        if (step + 1) % every == 0 or step == 0:
            row["eval_value"] = _eval_value(policy, dataset, [cfg.task.seed, step])
        writer.row(row)

    return cb


# -- stages --------------------------------------------------------------------


def cmd_make_data(cfg: ExperimentConfig, args) -> None:
    out = _prepare_out(cfg)
    ds = _build_dataset(cfg, None)
    name = "dataset.csv" if args.format == "csv" else "dataset.gpds"
    save_dataset(ds, os.path.join(out, name))
    print(f"wrote {os.path.join(out, name)} ({ds.n} rows, state_dim={ds.state_dim}, "
          f"action_dim={ds.action_dim})")


def cmd_pretrain(cfg: ExperimentConfig, args) -> None:
    out = _prepare_out(cfg)
    ds = _build_dataset(cfg, args.dataset)
    policy = _new_policy(cfg, ds, seed=cfg.task.seed + 1)
    writer = MetricsWriter(os.path.join(out, "metrics.csv"),
                           ["step", "loss", "mean_weight", "mean_advantage", "eval_value"])
    pretrain_behavior(ds, policy, _gmpo_config(cfg), np.random.default_rng(cfg.task.seed),
                      on_step=_policy_metrics_cb(writer, policy, ds, cfg))
    save_policy(policy, os.path.join(out, "behavior.ckpt"))
    print(f"wrote {os.path.join(out, 'behavior.ckpt')}")


def cmd_train_critic(cfg: ExperimentConfig, args) -> None:
    out = _prepare_out(cfg)
    ds = _build_dataset(cfg, args.dataset)
    c = cfg.critic
    writer = MetricsWriter(os.path.join(out, "metrics.csv"), ["step", "v_loss", "q_loss"])
    critic = train_critic(
        ds, CriticConfig(tau=c.tau, gamma=c.gamma, lr=c.lr, hidden=c.hidden_sizes(),
                         steps=c.steps, batch_size=c.batch_size),
        np.random.default_rng(cfg.task.seed),
        on_step=lambda step, losses: writer.row(
            {"step": step, "v_loss": losses[0], "q_loss": losses[1]}))
    save_critic(critic, os.path.join(out, "critic.ckpt"))
    print(f"wrote {os.path.join(out, 'critic.ckpt')}")


def cmd_train_gmpo(cfg: ExperimentConfig, args) -> None:
    out = _prepare_out(cfg)
    ds = _build_dataset(cfg, args.dataset)
    critic = load_critic(args.critic)
    behavior = load_policy(args.behavior) if args.behavior else None
    if cfg.policy.weight_mode == "softmax" and behavior is None:
        raise ConfigError("policy.weight_mode=softmax needs --behavior")
    policy = _new_policy(cfg, ds, seed=cfg.task.seed + 2)
    writer = MetricsWriter(os.path.join(out, "metrics.csv"),
                           ["step", "loss", "mean_weight", "mean_advantage", "eval_value"])
    train_gmpo(ds, critic, policy, _gmpo_config(cfg), np.random.default_rng(cfg.task.seed),
               behavior=behavior, on_step=_policy_metrics_cb(writer, policy, ds, cfg))
    save_policy(policy, os.path.join(out, "policy.ckpt"))
    print(f"wrote {os.path.join(out, 'policy.ckpt')}")


def cmd_train_gmpg(cfg: ExperimentConfig, args) -> None:
    out = _prepare_out(cfg)
    ds = _build_dataset(cfg, args.dataset)
    critic = load_critic(args.critic)
    behavior = load_policy(args.behavior)
    policy = behavior.clone()  # theta_2 <- theta_1
    writer = MetricsWriter(os.path.join(out, "metrics.csv"),
                           ["step", "loss", "mean_weight", "mean_advantage", "eval_value"])
    train_gmpg(ds, critic, policy, behavior, _gmpg_config(cfg),
               np.random.default_rng(cfg.task.seed),
               on_step=_policy_metrics_cb(writer, policy, ds, cfg))
    save_policy(policy, os.path.join(out, "policy.ckpt"))
    print(f"wrote {os.path.join(out, 'policy.ckpt')}")


def cmd_sample(cfg: ExperimentConfig, args) -> None:
    out = _prepare_out(cfg)
    ds = _build_dataset(cfg, args.dataset)
    policy = load_policy(args.checkpoint)
    states = ds.s[np.arange(args.n) % ds.n]
    actions = policy.sample_actions(states, np.random.default_rng(cfg.task.seed))
    path = os.path.join(out, "samples.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# sample_id," + ",".join(f"a{i}" for i in range(actions.shape[1])) + "\n")
        for i, row in enumerate(actions):
            fh.write(f"{i}," + ",".join(f"{v:.17g}" for v in row) + "\n")
    print(f"wrote {path}; mean={actions.mean(axis=0)}, std={actions.std(axis=0)}")


def cmd_logprob(cfg: ExperimentConfig, args) -> None:
    out = _prepare_out(cfg)
    ds = _build_dataset(cfg, args.dataset)
    policy = load_policy(args.checkpoint)
    solver = SolverSpec(cfg.solver.scheme, cfg.solver.steps)
    n = min(args.n, ds.n) if args.n else ds.n
    logp, stderr = policy.log_prob_actions(ds.s[:n], ds.a[:n], solver, _trace_mode(cfg),
                                           np.random.default_rng(cfg.task.seed))
    path = os.path.join(out, "logprob.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# point_id,logp,stderr\n")
        for i in range(n):
            fh.write(f"{i},{logp[i]:.17g},{stderr[i]:.17g}\n")
    print(f"wrote {path}; mean logp = {logp.mean():.6g} nats")


def cmd_eval(cfg: ExperimentConfig, args) -> None:
    out = _prepare_out(cfg)
    ds = _build_dataset(cfg, args.dataset)
    policy = load_policy(args.checkpoint)
    states = ds.s[np.arange(args.n) % ds.n]
    actions = policy.sample_actions(states, np.random.default_rng(cfg.task.seed))
    mean_value = float(assign_value_nearest(ds, actions).mean())
    path = os.path.join(out, "eval.csv")
    with open(path, "w", encoding="utf-8") as fh:
        cols = [f"mean_a{i}" for i in range(actions.shape[1])] + \
               [f"std_a{i}" for i in range(actions.shape[1])]
        fh.write("# n," + ",".join(cols) + ",mean_value\n")
        stats = list(actions.mean(axis=0)) + list(actions.std(axis=0))
        fh.write(f"{args.n}," + ",".join(f"{v:.17g}" for v in stats) + f",{mean_value:.17g}\n")
    print(f"eval: n={args.n} action_mean={actions.mean(axis=0)} "
          f"action_std={actions.std(axis=0)} mean_value={mean_value:.4f}")


def cmd_export_trajectories(cfg: ExperimentConfig, args) -> None:
    out = _prepare_out(cfg)
    ds = _build_dataset(cfg, args.dataset)
    policy = load_policy(args.checkpoint)
    states = ds.s[np.arange(args.n) % ds.n]
    solver = SolverSpec(cfg.solver.scheme, cfg.solver.steps)
    z, traj = generate(policy.model, args.n, solver, condition=states,
                       rng=np.random.default_rng(cfg.task.seed), record=True)
    path = os.path.join(out, "trajectories.csv")
    d = policy.config.action_dim
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# sample_id,k,t," + ",".join(f"x{i}" for i in range(d)) + "\n")
        for i in range(args.n):
            for k, t in enumerate(traj.times):
                raw = policy.denormalize(traj.states[k, i])
                fh.write(f"{i},{k},{t:.17g}," + ",".join(f"{v:.17g}" for v in raw) + "\n")
    print(f"wrote {path} ({args.n} samples x {len(traj.times)} grid points)")


COMMANDS = {
    "make-data": cmd_make_data,
    "pretrain": cmd_pretrain,
    "train-critic": cmd_train_critic,
    "train-gmpo": cmd_train_gmpo,
    "train-gmpg": cmd_train_gmpg,
    "sample": cmd_sample,
    "logprob": cmd_logprob,
    "eval": cmd_eval,
    "export-trajectories": cmd_export_trajectories,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genpolicy",
                                     description="continuous-time generative policies: "
                                                 "data, critics, and policy extraction")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **extra):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="INI config path")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE")
        for flag, kw in extra.items():
            p.add_argument(flag, **kw)
        return p

    add("make-data", **{"--format": dict(choices=("csv", "binary"), default="binary")})
    add("pretrain", **{"--dataset": dict(default=None)})
    add("train-critic", **{"--dataset": dict(default=None)})
    add("train-gmpo", **{"--dataset": dict(default=None),
                         "--critic": dict(required=True),
                         "--behavior": dict(default=None)})
    add("train-gmpg", **{"--dataset": dict(default=None),
                         "--critic": dict(required=True),
                         "--behavior": dict(required=True)})
    add("sample", **{"--dataset": dict(default=None),
                     "--checkpoint": dict(required=True),
                     "--n": dict(type=int, default=1024)})
    add("logprob", **{"--dataset": dict(default=None),
                      "--checkpoint": dict(required=True),
                      "--n": dict(type=int, default=0)})
    add("eval", **{"--dataset": dict(default=None),
                   "--checkpoint": dict(required=True),
                   "--n": dict(type=int, default=1024)})
    add("export-trajectories", **{"--dataset": dict(default=None),
                                  "--checkpoint": dict(required=True),
                                  "--n": dict(type=int, default=16)})
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except NonFiniteError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
