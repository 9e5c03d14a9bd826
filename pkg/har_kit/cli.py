"""
har-kit command line.

    har-kit gen-data   synthetic hierarchical dataset (HARDATA1 + hierarchy file)
    har-kit train      flat or HAR model with one of the five training methods
    har-kit attack     attack outcomes as JSON lines
    har-kit eval       EvalReport JSON for a checkpoint and a set of attacks
    har-kit report     CSV / Markdown tables and optional SVG plots
    har-kit run        end-to-end experiment from a YAML config
    har-kit sweep-beta TRADES beta selection table

Exit codes: 0 success, 2 usage, 3 data/model integrity, 4 runtime failure.
"""

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import pandas as pd

from har_kit.attacks import attack_batch, read_outcomes_jsonl, write_outcomes_jsonl
from har_kit.checkpoint import load_checkpoint, save_checkpoint
from har_kit.data import Dataset, generate, load_dataset, save_dataset, split
from har_kit.errors import EXIT_OK, SpecError, describe_error, exit_code_for
from har_kit.hierarchy import Hierarchy, load_hierarchy, save_hierarchy
from har_kit.metrics import (
    build_report,
    evaluate,
    spec_of,
    subsample_indices,
    summarize,
)
from har_kit.models import HarModel, build_model
from har_kit.report import to_markdown, write_plots, write_tables
from har_kit.training import train, trades_beta_sweep, write_metrics_log
from har_kit.types import (
    ArchSpec,
    AttackSpec,
    EvalReport,
    ExperimentConfig,
    LrSchedule,
    SynthSpec,
    TrainConfig,
    default_inner_mode,
)
from har_kit.utils import config_hash, parse_number, resolve_seed

logger = logging.getLogger("har_kit")

ATTACK_MODES = {
    "untargeted": "untargeted",
    "fgsm": "fgsm",
    "targeted": "targeted",
    "hier-worst": "worst_case_hierarchical",
    "hier-average": "average_case_hierarchical",
    "hier-best": "best_case_hierarchical",
    "coarse-targeted": "coarse_net_targeted",
}
METHODS = ["standard", "adv", "adv-t", "trades", "adv-hce"]

TRAIN_FILE = "train.hardata"
TEST_FILE = "test.hardata"
HIERARCHY_FILE = "hierarchy.txt"
MANIFEST_FILE = "manifest.json"


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()] if text else []


def _float_list(text: str) -> list[float]:
    return [parse_number(t) for t in text.split(",") if t.strip()]


def _alpha(text: str) -> float | str:
    return "auto" if text == "auto" else parse_number(text)


def _hash_args(args: argparse.Namespace) -> str:
    payload = {
        k: str(v) if isinstance(v, Path) else v
        for k, v in vars(args).items()
        if k not in ("func", "verbose", "out", "outcomes_dir")
    }
    return config_hash(payload)


def _add_attack_args(p: argparse.ArgumentParser, iters: int) -> None:
    p.add_argument("--norm", choices=["linf", "l2"], default="linf")
    p.add_argument("--eps", type=parse_number, default=8 / 255, help="decimal or 8/255")
    p.add_argument(
        "--alpha", type=_alpha, default="auto", help="step size or 'auto' (eps/4)"
    )
    p.add_argument("--iters", type=int, default=iters)
    p.add_argument("--no-random-init", action="store_true")


def _attack_from_args(args: argparse.Namespace, mode: str, seed: int) -> AttackSpec:
    return AttackSpec.model_validate(
        {
            "norm": args.norm,
            "epsilon": args.eps,
            "alpha": args.alpha,
            "iterations": args.iters,
            "mode": mode,
            "target": getattr(args, "target", None),
            "random_init": not args.no_random_init,
            "seed": seed,
        }
    )


def parse_attack(text: str, seed: int) -> AttackSpec:
    """
    "mode=hier-worst,norm=linf,eps=8/255,iters=20,alpha=auto" -> AttackSpec
    """
    fields: dict[str, Any] = {"seed": seed}
    for part in text.split(","):
        if not part.strip():
            continue
        key, sep, value = part.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise SpecError(f"expected key=value in attack '{text}'")
        if key == "mode":
            if value not in ATTACK_MODES:
                raise SpecError(f"unknown attack mode '{value}'")
            fields["mode"] = ATTACK_MODES[value]
        elif key in ("eps", "epsilon"):
            fields["epsilon"] = parse_number(value)
        elif key == "alpha":
            fields["alpha"] = _alpha(value)
        elif key in ("iters", "k", "iterations"):
            fields["iterations"] = int(value)
        elif key == "norm":
            fields["norm"] = value
        elif key == "target":
            fields["target"] = int(value)
        elif key == "init":
            fields["random_init"] = value.lower() in ("1", "true", "yes", "on")
        else:
            raise SpecError(f"unknown attack field '{key}'")
    return AttackSpec.model_validate(fields)


def _load_data(data: Path, hierarchy_path: Path) -> tuple[Dataset, Hierarchy]:
    h = load_hierarchy(hierarchy_path)
    return load_dataset(data, h), h


def cmd_gen_data(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        coarse_count=args.coarse,
        fines_per_coarse=args.fines,
        dim=args.dim,
        per_class=args.per_class,
        coarse_separation=args.coarse_sep,
        fine_separation=args.fine_sep,
        noise_sigma=args.noise,
        seed=args.seed,
    )
    ds, h = generate(spec)
    train_ds, test_ds = split(ds, args.train_fraction, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train_ds, out / TRAIN_FILE)
    save_dataset(test_ds, out / TEST_FILE)
    digest = _hash_args(args)
    save_hierarchy(
        h, out / HIERARCHY_FILE, header=f"config_hash={digest} seed={args.seed}"
    )
    manifest = {
        "config_hash": digest,
        "seed": args.seed,
        "synth": spec.model_dump(),
        "train_fraction": args.train_fraction,
        "hierarchy_hash": h.digest(),
        "n_train": len(train_ds),
        "n_test": len(test_ds),
    }
    (out / MANIFEST_FILE).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote {len(train_ds)} train / {len(test_ds)} test samples to {out}")
    return EXIT_OK


def _train_config(args: argparse.Namespace, seed: int) -> TrainConfig:
    method = args.method.replace("-", "_")
    attack = None
    if method != "standard":
        attack = _attack_from_args(args, default_inner_mode(method), seed)
    return TrainConfig(
        method=method,
        epochs=args.epochs,
        batch_size=args.batch_size,
        schedule=LrSchedule(
            initial=args.lr,
            decay_factor=args.decay_factor,
            decay_epochs=_int_list(args.decay_epochs),
        ),
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        attack=attack,
        beta=args.beta if method == "trades" else None,
        inner_loop=not args.no_inner_loop,
        seed=seed,
    )


def _arch(args: argparse.Namespace, input_dim: int, kind: str) -> ArchSpec:
    return ArchSpec(
        kind=kind,
        input_dim=input_dim,
        hidden=_int_list(args.hidden),
        coarse_hidden=_int_list(args.coarse_hidden) if args.coarse_hidden else None,
        fine_hidden=_int_list(args.fine_hidden) if args.fine_hidden else None,
    )


def cmd_train(args: argparse.Namespace) -> int:
    ds, h = _load_data(args.data, args.hierarchy)
    cfg = _train_config(args, args.seed)
    arch = _arch(args, ds.dim, args.model)
    model = build_model(arch, h, seed=args.seed)
    result = train(model, ds, cfg, hierarchy=h, workers=args.workers)
    digest = _hash_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        result.model, out / "model.ckpt", h, config_hash=digest, seed=args.seed
    )
    write_metrics_log(result, out / "metrics.csv", config_hash=digest, seed=args.seed)
    print(
        f"trained {args.model} model with {args.method}; "
        f"final loss {result.final_loss}"
    )
    return EXIT_OK


def cmd_attack(args: argparse.Namespace) -> int:
    ds, h = _load_data(args.data, args.hierarchy)
    model = load_checkpoint(args.checkpoint, h)
    spec = _attack_from_args(args, ATTACK_MODES[args.mode], args.seed)
    if spec.mode == "coarse_net_targeted" and not isinstance(model, HarModel):
        raise SpecError("coarse-targeted attacks need a HAR checkpoint")
    if spec.is_hierarchical:
        indices = subsample_indices(len(ds), args.subsample, args.subsample_seed)
    else:
        indices = range(len(ds))
    outcomes = attack_batch(
        model,
        h,
        ds.features,
        ds.fine_labels,
        spec,
        indices=indices,
        workers=args.workers,
    )
    write_outcomes_jsonl(
        outcomes, args.out, config_hash=_hash_args(args), seed=args.seed
    )
    print(f"wrote {len(outcomes)} outcomes to {args.out}")
    return EXIT_OK


def _write_report(report: EvalReport, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")


def cmd_eval(args: argparse.Namespace) -> int:
    ds, h = _load_data(args.data, args.hierarchy)
    model = load_checkpoint(args.checkpoint, h)
    specs = [parse_attack(text, args.seed) for text in args.attack]
    report, outcomes = evaluate(
        model,
        ds,
        h,
        specs,
        subsample_size=args.subsample,
        subsample_seed=args.subsample_seed,
        workers=args.workers,
        seed=args.seed,
        config_hash=_hash_args(args),
    )
    _write_report(report, Path(args.out))
    if args.outcomes_dir:
        out_dir = Path(args.outcomes_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for pos, result in outcomes.items():
            write_outcomes_jsonl(
                result, out_dir / f"outcomes_{pos}.jsonl", report.config_hash, args.seed
            )
    print(f"wrote report to {args.out}")
    return EXIT_OK


def _report_from_outcomes(path: Path, h: Hierarchy) -> EvalReport:
    outcomes = read_outcomes_jsonl(path)
    groups: dict[tuple[str, str, float, int], list[Any]] = {}
    for o in outcomes:
        groups.setdefault((o.mode, o.norm, o.eps, o.k), []).append(o)
    summaries = [summarize(group, h, spec_of(group[0])) for group in groups.values()]
    return build_report(summaries, None, None, h)


def cmd_report(args: argparse.Namespace) -> int:
    h = load_hierarchy(args.hierarchy) if args.hierarchy else None
    reports: dict[str, EvalReport] = {}
    for item in args.inputs:
        name, sep, raw_path = item.partition("=")
        path = Path(raw_path if sep else item)
        if not sep:
            name = path.stem
        if path.suffix == ".jsonl":
            if h is None:
                raise SpecError("outcome files need --hierarchy")
            reports[name] = _report_from_outcomes(path, h)
        else:
            text = path.read_text(encoding="utf-8")
            reports[name] = EvalReport.model_validate_json(text)
    digest = _hash_args(args)
    written = write_tables(reports, args.out, config_hash=digest, seed=args.seed)
    if args.plot:
        written.extend(
            write_plots(reports, args.out, config_hash=digest, seed=args.seed)
        )
    print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


def run_experiment(cfg: ExperimentConfig) -> EvalReport:
    """
    Data, model, training, evaluation and tables for one ExperimentConfig.
    """
    digest = config_hash(cfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)

    if cfg.synth is not None:
        ds, h = generate(cfg.synth)
        train_ds, test_ds = split(ds, cfg.train_fraction, seed=cfg.seed)
    else:
        h = load_hierarchy(cfg.hierarchy)  # type: ignore[arg-type]
        train_ds = load_dataset(cfg.train_data, h)  # type: ignore[arg-type]
        test_ds = load_dataset(cfg.test_data, h)  # type: ignore[arg-type]

    arch = cfg.arch.model_copy(update={"input_dim": train_ds.dim})
    model = build_model(arch, h, seed=cfg.seed)
    result = train(model, train_ds, cfg.train, hierarchy=h, workers=cfg.eval.workers)
    save_checkpoint(
        result.model, out / "model.ckpt", h, config_hash=digest, seed=cfg.seed
    )
    write_metrics_log(result, out / "metrics.csv", config_hash=digest, seed=cfg.seed)

    report, outcomes = evaluate(
        result.model,
        test_ds,
        h,
        cfg.attacks,
        subsample_size=cfg.eval.subsample_size,
        subsample_seed=cfg.eval.subsample_seed,
        workers=cfg.eval.workers,
        seed=cfg.seed,
        config_hash=digest,
    )
    _write_report(report, out / "report.json")
    for pos, result_outcomes in outcomes.items():
        write_outcomes_jsonl(
            result_outcomes, out / f"outcomes_{pos}.jsonl", digest, cfg.seed
        )
    write_tables(
        {cfg.train.method: report}, out / "tables", config_hash=digest, seed=cfg.seed
    )
    return report


def cmd_run(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.from_yaml(args.config)
    seed = resolve_seed(args.seed, default=cfg.seed)
    updates: dict[str, Any] = {
        "seed": seed,
        "train": cfg.train.model_copy(update={"seed": seed}),
        "attacks": [a.with_seed(seed) for a in cfg.attacks],
    }
    if args.out:
        updates["output_dir"] = Path(args.out)
    cfg = cfg.model_copy(update=updates)
    report = run_experiment(cfg)
    print(f"report written to {cfg.output_dir / 'report.json'}")
    logger.info("clean fine accuracy %s", report.clean_fine_acc)
    return EXIT_OK


def cmd_sweep_beta(args: argparse.Namespace) -> int:
    h = load_hierarchy(args.hierarchy)
    train_ds = load_dataset(args.data, h)
    test_ds = load_dataset(args.test_data, h)
    args.method = "trades"
    cfg = _train_config(args, args.seed)
    arch = _arch(args, train_ds.dim, "flat")
    result = trades_beta_sweep(
        train_ds,
        test_ds,
        arch,
        h,
        cfg,
        betas=_float_list(args.betas),
        workers=args.workers,
    )
    frame = pd.DataFrame([r.model_dump() for r in result.rows])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / "beta_sweep.csv", index=False)
    (out / "beta_sweep.md").write_text(to_markdown(frame), encoding="utf-8")
    print(f"selected beta {result.best_beta}")
    return EXIT_OK


def _add_training_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden", default="32", help="comma-separated hidden widths")
    p.add_argument("--coarse-hidden", default=None)
    p.add_argument("--fine-hidden", default=None)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--decay-factor", type=float, default=0.1)
    p.add_argument("--decay-epochs", default="30,45")
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=2e-4)
    p.add_argument("--beta", type=float, default=9.0)
    p.add_argument("--no-inner-loop", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    _add_attack_args(p, iters=10)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="har-kit", description="Hierarchical adversarial robustness toolkit."
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument(
        "--seed", type=int, default=None, help="falls back to $HAR_SEED"
    )
    # --seed is accepted after the subcommand too; SUPPRESS keeps the global value
    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "gen-data", parents=[seeded], help="generate a synthetic hierarchical dataset"
    )
    p.add_argument("--coarse", type=int, required=True)
    p.add_argument("--fines", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--coarse-sep", type=float, default=0.6)
    p.add_argument("--fine-sep", type=float, default=0.25)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[seeded], help="train a flat or HAR model")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--hierarchy", type=Path, required=True)
    p.add_argument("--model", choices=["flat", "har"], default="flat")
    p.add_argument("--method", choices=METHODS, default="standard")
    p.add_argument("--out", type=Path, required=True)
    _add_training_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "attack", parents=[seeded], help="attack a checkpoint, write JSON lines"
    )
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--hierarchy", type=Path, required=True)
    p.add_argument("--mode", choices=list(ATTACK_MODES), default="untargeted")
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--subsample", type=int, default=1000)
    p.add_argument("--subsample-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    _add_attack_args(p, iters=20)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser(
        "eval", parents=[seeded], help="evaluate a checkpoint into an EvalReport"
    )
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--hierarchy", type=Path, required=True)
    p.add_argument(
        "--attack",
        action="append",
        default=[],
        help="repeatable, e.g. mode=hier-worst,norm=linf,eps=8/255,iters=20",
    )
    p.add_argument("--subsample", type=int, default=1000)
    p.add_argument("--subsample-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--outcomes-dir", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "report", parents=[seeded], help="render tables from reports or outcome files"
    )
    p.add_argument("inputs", nargs="+", help="[name=]report.json or outcomes.jsonl")
    p.add_argument("--hierarchy", type=Path, default=None)
    p.add_argument("--plot", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser(
        "run", parents=[seeded], help="run an experiment from a YAML config"
    )
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-beta", parents=[seeded], help="TRADES beta selection")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--test-data", type=Path, required=True)
    p.add_argument("--hierarchy", type=Path, required=True)
    p.add_argument("--betas", default="1,5,9,13")
    p.add_argument("--out", type=Path, required=True)
    _add_training_args(p)
    p.set_defaults(func=cmd_sweep_beta)
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    if args.command != "run":
        args.seed = resolve_seed(args.seed)
    try:
        return int(args.func(args))
    except Exception as e:
        code = exit_code_for(e)
        logger.error("%s failed: %s", args.command, e)
        logger.debug("traceback", exc_info=True)
        print(f"error: {describe_error(e)}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
