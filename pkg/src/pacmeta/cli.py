"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from pacmeta import baselines, envsim
from pacmeta.errors import ConfigError, DataError, InputError, NumericError
from pacmeta.experiment import METHODS, ExperimentConfig, rotation_data, run_experiment
from pacmeta.io import (
    Checkpoint,
    MetricsRow,
    load_checkpoint,
    read_config,
    read_dataset,
    save_checkpoint,
    write_config,
    write_dataset,
    write_metrics,
)
from pacmeta.net import Architecture, Task
from pacmeta.pacoh import bound_terms
from pacmeta.pipeline import (
    EvalReport,
    MetaConfig,
    TaskPool,
    evaluate,
    fine_tune,
    init_particles,
    meta_train,
    point_report,
)
from pacmeta.prob import spawn

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

log = logging.getLogger("pacmeta")


class UsageError(Exception):
    pass


def _hidden(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"hidden widths must be integers, got {text!r}")
    if not dims or min(dims) < 1:
        raise argparse.ArgumentTypeError("hidden widths must be positive")
    return dims


def _shared() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("shared options")
    g.add_argument("--config", help="key=value file; command-line flags override it")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=".", help="output directory")
    g.add_argument("--particles", type=int, default=5, help="hyper-posterior particles K")
    g.add_argument("--mc-samples", type=int, default=5, help="Monte-Carlo samples L per ln Z estimate")
    g.add_argument("--lr", type=float, default=0.002, help="SVGD step size")
    g.add_argument("--lr-decay", type=float, default=1.0, help="multiplicative step-size decay per step")
    g.add_argument("--n-networks", type=int, default=10, help="networks sampled per particle at test time")
    g.add_argument("--beta", type=float, default=None, help="task temperature (default: task size)")
    g.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="meta temperature (default: number of training tasks)")
    g.add_argument("--iters", type=int, default=1000, help="meta-training iterations")
    g.add_argument("--n-tasks", type=int, default=100, help="training tasks in the pool")
    g.add_argument("--tasks-per-iter", type=int, default=10)
    g.add_argument("--sigma-p", type=float, default=0.5, help="hyper-prior standard deviation")
    g.add_argument("--hidden", type=_hidden, default=(32, 32, 32, 32), help="hidden widths, e.g. 32,32,32,32")
    g.add_argument("--steps", type=int, default=200, help="fine-tuning steps")
    g.add_argument("--checkpoint-every", type=int, default=10)
    g.add_argument("--eval-every", type=int, default=50)
    g.add_argument("--timing", action="store_true", help="record wall-clock ms (makes CSVs nondeterministic)")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    shared = _shared()
    parser = argparse.ArgumentParser(prog="pacmeta", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[shared], help="generate a synthetic suite and datasets")
    p.add_argument("--nlos", action="store_true", help="non-line-of-sight environments")
    p.add_argument("--n-envs", type=int, default=5)
    p.add_argument("--holdout", type=int, default=0, help="environment reserved for fine-tune/test data")
    p.add_argument("--task-size", type=int, default=50)
    p.add_argument("--finetune-size", type=int, default=30)
    p.add_argument("--test-size", type=int, default=50)
    p.add_argument("--survey-size", type=int, default=900)

    p = sub.add_parser("meta-train", parents=[shared], help="learn hyper-posterior particles")
    p.add_argument("--data", required=True, help="training tasks (JSON lines)")
    p.add_argument("--test", help="optional held-out tasks scored at each evaluation")

    p = sub.add_parser("fine-tune", parents=[shared], help="adapt particles to a few-shot set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="fine-tuning set (first task of the file)")
    p.add_argument("--test", help="optional test set scored at each checkpoint")

    p = sub.add_parser("evaluate", parents=[shared], help="ensemble localization error and uncertainty")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="test set (all tasks are pooled)")

    p = sub.add_parser("baseline", parents=[shared], help="run a comparison method")
    p.add_argument("--method", choices=("maml", "randinit", "knn"), required=True)
    p.add_argument("--train", help="training tasks (maml)")
    p.add_argument("--finetune", required=True, help="fine-tuning set; reference database for knn")
    p.add_argument("--test", required=True)
    p.add_argument("--k", type=int, default=3, help="neighbours for knn")
    p.add_argument("--inner-lr", type=float, default=0.01)
    p.add_argument("--inner-steps", type=int, default=5)
    p.add_argument("--finetune-lr", type=float, default=None, help="maml fine-tuning rate (default: inner-lr)")

    p = sub.add_parser("experiment", parents=[shared], help="leave-one-environment-out comparison")
    p.add_argument("--nlos", action="store_true")
    p.add_argument("--n-envs", type=int, default=5)
    p.add_argument("--rotations", type=lambda s: tuple(int(v) for v in s.split(",")), default=None)
    p.add_argument("--methods", type=lambda s: tuple(s.split(",")), default=METHODS)
    p.add_argument("--inner-lr", type=float, default=0.01)
    p.add_argument("--inner-steps", type=int, default=5)
    p.add_argument("--finetune-lr", type=float, default=None)
    p.add_argument("--k", type=int, default=3)
    return parser


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    if not known.config or command is None:
        return parser.parse_args(argv)
    values = read_config(known.config)
    sub = parser._subparsers._group_actions[0].choices[command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        dest = "lam" if key == "lambda" else key
        if dest not in actions or dest in ("config", "help"):
            raise UsageError(f"unknown config key {key!r} in {known.config}")
        action = actions[dest]
        action.required = False
        if isinstance(action, argparse._StoreTrueAction):
            if raw.lower() not in _BOOL:
                raise UsageError(f"config key {key!r} expects true/false")
            defaults[dest] = _BOOL[raw.lower()]
        elif raw == "":
            defaults[dest] = None
        else:
            defaults[dest] = raw
    sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    for dest, value in defaults.items():
        # argparse converts string defaults only for typed options it did not see
        action = actions[dest]
        if isinstance(getattr(args, dest), str) and action.type is not None and value == getattr(args, dest):
            setattr(args, dest, action.type(value))
    return args


def _resolved(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("config", "command", "verbose"):
            continue
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        out["lambda" if k == "lam" else k] = v
    return out


def _meta_config(args, **extra) -> MetaConfig:
    return MetaConfig(
        n_tasks_per_iter=args.tasks_per_iter,
        max_iters=args.iters,
        eta=args.lr,
        eta_decay=args.lr_decay,
        K=args.particles,
        L=args.mc_samples,
        beta=args.beta,
        lam=args.lam,
        seed=args.seed,
        sigma_p=args.sigma_p,
        finetune_steps=args.steps,
        checkpoint_every=args.checkpoint_every,
        eval_every=args.eval_every,
        n_networks=args.n_networks,
        **extra,
    )


def _pooled(tasks: list[Task]) -> Task:
    if not tasks:
        raise DataError("dataset holds no samples")
    return Task(np.concatenate([t.X for t in tasks]), np.concatenate([t.Y for t in tasks]), tasks[0].domain_id)


def _first(tasks: list[Task]) -> Task:
    if not tasks:
        raise DataError("dataset holds no samples")
    return tasks[0]


def _report_dict(r: EvalReport) -> dict:
    return {
        "mean_error_m": r.mean_error,
        "std_error_m": r.std_error,
        "mean_uncertainty_m": r.mean_uncertainty,
        "n_networks": r.n_networks,
        "n_points": int(len(r.per_point_error)),
    }


def _nan_report() -> EvalReport:
    return EvalReport(np.array([np.nan]), np.array([np.nan]), 0)


def cmd_gen_data(args, out: Path):
    suite = envsim.make_suite(args.n_envs, range(args.seed, args.seed + args.n_envs), los=not args.nlos)
    if not 0 <= args.holdout < len(suite):
        raise UsageError(f"--holdout must index one of the {len(suite)} environments")
    exp = ExperimentConfig(
        n_train_tasks=args.n_tasks, task_size=args.task_size,
        finetune_size=args.finetune_size, test_size=args.test_size,
    )
    data = rotation_data(suite, args.holdout, MetaConfig(seed=args.seed), exp)
    survey = suite.sample_task(args.holdout, args.survey_size, spawn(args.seed, 102))
    (out / "suite.json").write_text(json.dumps(suite.to_dict(), indent=1) + "\n")
    write_dataset(out / "train.jsonl", data.pool.tasks)
    write_dataset(out / "finetune.jsonl", [data.s0])
    write_dataset(out / "test.jsonl", [data.s_test])
    write_dataset(out / "survey.jsonl", [survey])
    print(f"wrote suite and {len(data.pool)} training tasks to {out}")


def cmd_meta_train(args, out: Path):
    tasks = read_dataset(args.data)
    if not tasks:
        raise ConfigError(f"{args.data} holds no training tasks")
    test = _pooled(read_dataset(args.test)) if args.test else None
    arch = Architecture(tasks[0].X.shape[1], args.hidden)
    cfg = _meta_config(args).resolved(len(tasks))
    args.lam = cfg.lam
    temp = cfg.temperature()
    rows = []

    def on_meta(step, pset, batch):
        bounds = bound_terms(arch, pset.particles, batch, temp, cfg.hyper, spawn(cfg.seed, 5, step))
        report = evaluate(arch, pset, test, cfg.n_networks, cfg.seed) if test is not None else _nan_report()
        rows.append(MetricsRow("boml", 0, "meta", step, report.mean_error, report.std_error,
                               report.mean_uncertainty, bounds.emp_term, bounds.kl_term))
        log.info("iteration %d: bound terms %.4g / %.4g", step, bounds.emp_term, bounds.kl_term)

    pset = meta_train(cfg, TaskPool(tasks), arch, callback=on_meta)
    save_checkpoint(out / "checkpoint.json", Checkpoint(arch, pset, cfg.lam, cfg.beta, cfg.L, cfg.seed))
    write_metrics(out / "metrics.csv", rows)
    print(f"meta-trained {len(pset)} particles for {pset.step_count} steps -> {out / 'checkpoint.json'}")


def _config_from_checkpoint(args, ckpt: Checkpoint) -> MetaConfig:
    cfg = _meta_config(args)
    return replace(
        cfg,
        K=len(ckpt.particles),
        lam=args.lam if args.lam is not None else ckpt.lam,
        beta=args.beta if args.beta is not None else ckpt.beta,
    )


def cmd_fine_tune(args, out: Path):
    ckpt = load_checkpoint(args.checkpoint)
    s0 = _first(read_dataset(args.data))
    test = _pooled(read_dataset(args.test)) if args.test else None
    cfg = _config_from_checkpoint(args, ckpt)
    rows = []

    def on_step(step, pset):
        if test is not None:
            r = evaluate(ckpt.arch, pset, test, cfg.n_networks, cfg.seed)
            rows.append(MetricsRow("boml", 0, "finetune", step, r.mean_error, r.std_error, r.mean_uncertainty))

    tuned = fine_tune(ckpt.particles, s0, cfg, ckpt.arch, callback=on_step)
    save_checkpoint(out / "finetuned.json", replace(ckpt, particles=tuned))
    if rows:
        write_metrics(out / "metrics.csv", rows)
    print(f"fine-tuned for {cfg.finetune_steps} steps -> {out / 'finetuned.json'}")


def cmd_evaluate(args, out: Path):
    ckpt = load_checkpoint(args.checkpoint)
    test = _pooled(read_dataset(args.data))
    report = evaluate(ckpt.arch, ckpt.particles, test, args.n_networks, args.seed)
    doc = _report_dict(report)
    (out / "report.json").write_text(json.dumps(doc, indent=1) + "\n")
    print(json.dumps(doc))


def cmd_baseline(args, out: Path):
    s0 = _first(read_dataset(args.finetune))
    test = _pooled(read_dataset(args.test))
    arch = Architecture(test.X.shape[1], args.hidden)
    rows = []
    if args.method == "knn":
        ref = _pooled(read_dataset(args.finetune))
        preds = baselines.knn_predict(ref, test.X, min(args.k, len(ref)))
        dist = np.linalg.norm(preds - test.Y, axis=1)
        r = EvalReport(dist, np.zeros_like(dist), 1)
        rows.append(MetricsRow("knn", 0, "finetune", 0, r.mean_error, r.std_error, r.mean_uncertainty))
    elif args.method == "randinit":
        cfg = _meta_config(args).resolved(args.n_tasks)

        def on_step(step, pset):
            r = evaluate(arch, pset, test, cfg.n_networks, cfg.seed)
            rows.append(MetricsRow("randinit", 0, "finetune", step, r.mean_error, r.std_error, r.mean_uncertainty))

        fine_tune(init_particles(arch, cfg), s0, cfg, arch, callback=on_step)
    else:
        if not args.train:
            raise UsageError("--train is required for maml")
        tasks = read_dataset(args.train)
        mcfg = baselines.MamlConfig(inner_lr=args.inner_lr, inner_steps=args.inner_steps,
                                    meta_lr=args.lr, meta_iters=args.iters,
                                    n_tasks_per_iter=args.tasks_per_iter, seed=args.seed)
        theta0 = baselines.maml_meta_train(mcfg, TaskPool(tasks), arch)

        def on_point(step, theta):
            r = point_report(arch, theta, test)
            rows.append(MetricsRow("maml", 0, "finetune", step, r.mean_error, r.std_error, r.mean_uncertainty))

        baselines.finetune_point(arch, theta0, s0, args.steps, args.finetune_lr or args.inner_lr,
                                 callback=on_point, every=args.checkpoint_every)
    write_metrics(out / "metrics.csv", rows)
    print(f"{args.method}: final mean error {rows[-1].mean_error_m:.3f} m")


def cmd_experiment(args, out: Path):
    suite = envsim.make_suite(args.n_envs, range(args.seed, args.seed + args.n_envs), los=not args.nlos)
    (out / "suite.json").write_text(json.dumps(suite.to_dict(), indent=1) + "\n")
    exp = ExperimentConfig(
        n_train_tasks=args.n_tasks,
        hidden_dims=args.hidden,
        methods=args.methods,
        rotations=args.rotations,
        knn_k=args.k,
        maml=baselines.MamlConfig(inner_lr=args.inner_lr, inner_steps=args.inner_steps,
                                  meta_lr=args.lr, meta_iters=args.iters,
                                  n_tasks_per_iter=args.tasks_per_iter),
        maml_finetune_lr=args.finetune_lr,
        record_timing=args.timing,
    )
    result = run_experiment(_meta_config(args), suite, out, exp)
    finals = {}
    for row in result.rows:
        if row.phase == "finetune":
            finals[(row.method, row.rotation)] = row.mean_error_m
    for method in exp.methods:
        errs = [v for (m, _), v in finals.items() if m == method]
        if errs:
            print(f"{method:9s} final mean error {np.mean(errs):.3f} m over {len(errs)} rotation(s)")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "meta-train": cmd_meta_train,
    "fine-tune": cmd_fine_tune,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pacmeta: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"pacmeta: error: {exc}", file=sys.stderr)
        return EXIT_DATA

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_config(out / f"{args.command}.config", _resolved(args))
        COMMANDS[args.command](args, out)
        write_config(out / f"{args.command}.config", _resolved(args))
    except (UsageError, ConfigError) as exc:
        print(f"pacmeta: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, InputError, OSError) as exc:
        print(f"pacmeta: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"pacmeta: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
