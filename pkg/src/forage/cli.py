"""Command-line entry point: ``forage {gen,train,rollout,eval,inspect}``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
from pathlib import Path
from typing import Sequence

from .corpus import DEFAULT_TOP_K, CorpusError, build_index, load_documents
from .datagen import (
    GenConfig,
    GenerationError,
    VerificationError,
    export_dataset,
    generate_dataset,
    load_tasks,
)
from .env import DEFAULT_MAX_STEPS, EnvConfig, EnvError, infeasible_tasks
from .evaluate import BaselineKind, EvalError, render_report, rollout_task, run_policy_eval
from .policy import PolicyError, PolicyParams
from .reward import DEFAULT_ALPHA, DEFAULT_BETA, RewardConfig, RewardError
from .train import RewardMode, TrainConfig, TrainError, split_tasks, train_loop
from .trajectory import BlockKind, Origin, TrajectoryError, compute_loss_mask, parse_trajectory, serialize_trajectory
from .wire import ExternalPolicy, ProtocolError

log = logging.getLogger("forage")

EXIT_USAGE = 1
EXIT_RUNTIME = 2
SEED_ENV = "FORAGE_SEED"
DEFAULT_SEED = 42

RUNTIME_ERRORS = (
    OSError,
    json.JSONDecodeError,
    KeyError,
    CorpusError,
    GenerationError,
    VerificationError,
    EnvError,
    EvalError,
    PolicyError,
    ProtocolError,
    RewardError,
    TrainError,
    TrajectoryError,
    ArithmeticError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_world(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tasks", required=True, type=Path, help="tasks.jsonl")
    p.add_argument("--corpus", required=True, type=Path, help="corpus.jsonl")


def _add_policy(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--policy",
        required=True,
        choices=["oracle", "baseline", "rag", "random", "params", "external"],
        help="baseline and rag both mean one-shot retrieval",
    )
    p.add_argument("--params", type=Path, help="params.json for --policy params")
    p.add_argument("--command", help="policy server command line for --policy external")
    p.add_argument("--connect", help="HOST:PORT of a policy server for --policy external")
    p.add_argument("--timeout", type=float, default=30.0, help="external policy timeout in seconds")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # SUPPRESS keeps a subcommand's unset flag from clobbering the global value
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=f"random seed (env {SEED_ENV} wins)")
    common.add_argument("--alpha", type=float, default=argparse.SUPPRESS, help="information-gain weight")
    common.add_argument("--beta", type=float, default=argparse.SUPPRESS, help="per-step efficiency discount")
    common.add_argument("--top-k", type=int, default=argparse.SUPPRESS, help="documents per search")
    common.add_argument("--max-steps", type=int, default=argparse.SUPPRESS, help="search budget per episode")

    parser = _Parser(prog="forage", description="Information-foraging search agent toolkit.", parents=[common])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command_name", metavar="{gen,train,rollout,eval,inspect}")

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic task set and corpus")
    p.add_argument("--tasks", type=int, default=200)
    p.add_argument("--hops", type=int, default=3)
    p.add_argument("--distractors", type=int, default=5)
    p.add_argument("--relations", type=int, default=12)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", parents=[common], help="BC warm start then PPO")
    _add_world(p)
    p.add_argument("--reward-mode", choices=[m.value for m in RewardMode], default=RewardMode.TERMINAL_ONLY.value)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--episodes-per-iter", type=int, default=TrainConfig.episodes_per_iter)
    p.add_argument("--lr-policy", type=float, default=TrainConfig.lr_policy)
    p.add_argument("--lr-value", type=float, default=TrainConfig.lr_value)
    p.add_argument("--lr-bc", type=float, default=TrainConfig.lr_bc)
    p.add_argument("--bc-steps", type=int, default=TrainConfig.bc_steps)
    p.add_argument("--no-warm-start", action="store_true")
    p.add_argument("--heldout", type=int, default=50, help="tasks held out for per-iteration EM")
    p.add_argument("--out", type=Path, required=True, help="params.json")
    p.add_argument("--report", type=Path, help="TrainReport CSV")

    p = sub.add_parser("rollout", parents=[common], help="run a policy and write episode logs")
    _add_world(p)
    _add_policy(p)
    p.add_argument("--out", type=Path, help="directory for <task_id>.txt and <task_id>.json")
    p.add_argument("--limit", type=int, help="only the first N tasks")

    p = sub.add_parser("eval", parents=[common], help="evaluate a policy")
    _add_world(p)
    _add_policy(p)
    p.add_argument("--format", choices=["table", "csv"], default="table")
    p.add_argument("--out", type=Path, help="write the report here instead of stdout")

    p = sub.add_parser("inspect", parents=[common], help="pretty-print a trajectory with mask origins")
    p.add_argument("trajectory", type=Path)
    p.add_argument("--sidecar", type=Path, help="episode JSON (default: trajectory path with .json)")
    p.add_argument("--evidence", action="store_true", help="accept <evidence> as the info tag")
    return parser


def _resolve_seed(args: argparse.Namespace) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return getattr(args, "seed", DEFAULT_SEED)


def _env_config(args: argparse.Namespace) -> EnvConfig:
    reward = RewardConfig(getattr(args, "alpha", DEFAULT_ALPHA), getattr(args, "beta", DEFAULT_BETA))
    return EnvConfig(getattr(args, "max_steps", DEFAULT_MAX_STEPS), getattr(args, "top_k", DEFAULT_TOP_K), reward)


def _echo(cfg: EnvConfig, seed: int) -> None:
    print(
        f"config: alpha={cfg.reward.alpha} beta={cfg.reward.beta} top_k={cfg.top_k} "
        f"max_steps={cfg.max_steps} seed={seed}",
        file=sys.stderr,
    )


def _load_world(args: argparse.Namespace):
    docs = load_documents(args.corpus)
    return load_tasks(args.tasks), build_index(docs)


def _open_policy(args: argparse.Namespace):
    kind = args.policy
    if kind in ("baseline", "rag"):
        return BaselineKind.ONE_SHOT_RAG
    if kind == "oracle":
        return BaselineKind.ORACLE
    if kind == "random":
        return BaselineKind.RANDOM
    if kind == "params":
        if args.params is None:
            raise UsageError("--policy params needs --params FILE")
        return PolicyParams.load(args.params)
    if args.command:
        return ExternalPolicy.spawn(shlex.split(args.command), timeout=args.timeout)
    if args.connect:
        host, _, port = args.connect.rpartition(":")
        if not host or not port.isdigit():
            raise UsageError("--connect expects HOST:PORT")
        return ExternalPolicy.connect(host, int(port), timeout=args.timeout)
    raise UsageError("--policy external needs --command or --connect")


def cmd_gen(args: argparse.Namespace, seed: int) -> int:
    cfg = GenConfig(
        n_tasks=args.tasks, h=args.hops, distractors_per_task=args.distractors, n_relations=args.relations, seed=seed
    )
    ds = generate_dataset(cfg)
    corpus = build_index(ds.documents)
    env = _env_config(args)
    bad = infeasible_tasks(ds.tasks, corpus, env)
    if bad:
        raise VerificationError(f"{len(bad)} tasks are oracle-infeasible, e.g. {bad[:3]}")
    paths = export_dataset(ds.tasks, ds.documents, args.out, corpus)
    print(f"wrote {len(ds.tasks)} tasks to {paths['tasks']} and {len(ds.documents)} documents to {paths['corpus']}")
    return 0


def cmd_train(args: argparse.Namespace, seed: int) -> int:
    tasks, corpus = _load_world(args)
    env = _env_config(args)
    _echo(env, seed)
    cfg = TrainConfig(
        iters=args.iters,
        episodes_per_iter=args.episodes_per_iter,
        lr_policy=args.lr_policy,
        lr_value=args.lr_value,
        lr_bc=args.lr_bc,
        bc_steps=args.bc_steps,
        seed=seed,
        reward=env.reward,
        reward_mode=RewardMode(args.reward_mode),
        env=env,
    )
    train, heldout = split_tasks(tasks, args.heldout, seed) if args.heldout else (list(tasks), [])
    params, report = train_loop(train, corpus, cfg, heldout=heldout, use_warm_start=not args.no_warm_start)
    params.save(args.out)
    if args.report:
        report.save(args.report)
    last = report.rows[-1] if report.rows else None
    summary = f"saved params to {args.out}"
    if last is not None:
        summary += f"; final iter {last['iter']}: mean_reward={last['mean_reward']:.4f} heldout_em={last['heldout_em']:.4f}"
    print(summary)
    return 0


def cmd_rollout(args: argparse.Namespace, seed: int) -> int:
    tasks, corpus = _load_world(args)
    env = _env_config(args)
    _echo(env, seed)
    policy = _open_policy(args)
    if args.limit is not None:
        tasks = tasks[: args.limit]
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
    try:
        for task in tasks:
            ep = rollout_task(policy, task, corpus, env, seed=seed)
            text = serialize_trajectory(ep.trajectory)
            r = ep.reward
            print(f"{task.task_id}\tT={r.steps_T}\toutcome={r.outcome:.4f}\tgain={r.gain:.4f}\ttotal={r.total:.4f}")
            if args.out:
                (args.out / f"{task.task_id}.txt").write_text(text + "\n", encoding="utf-8")
                sidecar = dict(ep.sidecar(), question=task.question)
                (args.out / f"{task.task_id}.json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    finally:
        if isinstance(policy, ExternalPolicy):
            policy.close()
    return 0


def cmd_eval(args: argparse.Namespace, seed: int) -> int:
    tasks, corpus = _load_world(args)
    env = _env_config(args)
    _echo(env, seed)
    policy = _open_policy(args)
    try:
        report = run_policy_eval(policy, tasks, corpus, env, seed=seed, label=args.policy)
    finally:
        if isinstance(policy, ExternalPolicy):
            policy.close()
    text = render_report(report, args.format)
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if report.n_failed:
        print(f"{report.n_failed} episodes failed and were excluded", file=sys.stderr)
    return 0


def cmd_inspect(args: argparse.Namespace, seed: int) -> int:
    text = args.trajectory.read_text(encoding="utf-8").rstrip("\n")
    sidecar_path = args.sidecar or args.trajectory.with_suffix(".json")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8")) if sidecar_path.exists() else {}
    traj = parse_trajectory(text, sidecar.get("question", ""), accept_evidence=args.evidence)
    if traj.question:
        print(f"question: {traj.question}")
    for i, block in enumerate(traj.blocks):
        injected = block.kind is BlockKind.INFO
        origin = Origin.INJECTED if injected else Origin.MODEL_GENERATED
        body = "\n".join(f"[{d}] {p}" for d, p in zip(block.doc_ids, block.passages)) if injected and block.doc_ids else block.text
        print(f"--- block {i} {block.kind.value} ({origin.value})")
        for line in body.splitlines() or [""]:
            print(f"    {line}")
    print("--- mask (offsets into the canonical <info> rendering)")
    for span in compute_loss_mask(traj):
        print(f"    [{span.start}, {span.end}) {span.origin.value}")
    reward = sidecar.get("reward")
    if reward:
        print("--- reward")
        for key in ("outcome", "gain", "efficiency", "total", "steps_T"):
            value = reward[key]
            print(f"    {key:<10} {value:.4f}" if isinstance(value, float) else f"    {key:<10} {value}")
        print("    curve      " + " ".join(f"{c:.4f}" for c in reward.get("curve", [])))
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "rollout": cmd_rollout, "eval": cmd_eval, "inspect": cmd_inspect}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command_name is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        seed = _resolve_seed(args)
        return COMMANDS[args.command_name](args, seed)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"forage: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RUNTIME_ERRORS as exc:
        print(f"forage: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
