"""Command-line entry point: ``debias-lab gen|train|pbbl|eval|report``.

Exit codes: 0 success, 2 usage or validation error, 1 runtime failure.
Flags override values from ``--config`` (a flat JSON object keyed by flag
destination names), which override built-in defaults.  ``DEBIAS_LAB_SEED``
supplies the default seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import statistics
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import GROUP_ORDER, GenConfig, generate_biased_dataset, read_dataset_csv, write_dataset_csv
from .model import load_checkpoint, save_checkpoint
from .pbbl import (
    PbblConfig,
    PbblError,
    estimate_priors,
    evaluate_split,
    run_pbbl,
    run_vanilla,
)
from .trainer import Objective, TrainConfig

PRESET_ALIASES = {
    "sbp": "sbp_analog",
    "gbp-tr1": "gbp_analog_tr1",
    "gbp-tr2": "gbp_analog_tr2",
}
TRAIN_METHODS = {"ce": "vanilla", "gce": "gce", "bs-oracle": "oracle"}
REPORT_COLUMNS = ("aligned", "conflicting", "balanced", "overall")


class UsageError(Exception):
    pass


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _dataset_ref(path) -> dict:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return {"path": Path(path).name, "sha256": digest}


def _manifest(args, command: str, seed, inputs, outputs, started: float) -> dict:
    config = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "wall_clock_seconds": round(time.time() - started, 3),
    }


def _default_seed() -> int:
    raw = os.environ.get("DEBIAS_LAB_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"DEBIAS_LAB_SEED must be an integer, got {raw!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _hidden(text: str) -> tuple[int, ...]:
    return tuple(_int_list(text))


# ----------------------------------------------------------------------------- gen


def cmd_gen(args) -> int:
    started = time.time()
    preset = PRESET_ALIASES.get(args.preset, args.preset)
    try:
        config = GenConfig(
            preset=preset,
            bias_ratio_pct=args.ratio,
            majority_group_size=args.n0,
            target_separation=args.target_sep,
            bias_separation=args.bias_sep,
            noise_dims=args.noise_dims,
            noise_sigma=args.noise_sigma,
            val_per_group=args.val_per_group,
            test_per_group=args.test_per_group,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    table = generate_biased_dataset(config)
    out = Path(args.output)
    write_dataset_csv(table, out)
    manifest_path = out.with_name(out.name + ".manifest.json")
    manifest = _manifest(args, "gen", args.seed, [], [out], started)
    manifest["gen_config"] = asdict(config)
    _write_json(manifest_path, manifest)

    print(f"{'split':<6} " + " ".join(f"y={y},b={b}".rjust(9) for y, b in GROUP_ORDER))
    for split in ("train", "val", "test"):
        counts = table.group_counts(split)
        print(f"{split:<6} " + " ".join(str(c).rjust(9) for c in counts))
    return 0


# ----------------------------------------------------------------------------- train / pbbl


def _load_data(path):
    return read_dataset_csv(path)


def _train_config(args, seed: int) -> TrainConfig:
    try:
        return TrainConfig(
            steps=args.steps if hasattr(args, "steps") else args.debiased_steps,
            batch_size=args.batch_size,
            learning_rate=args.lr,
            eval_every=args.eval_every,
            seed=seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _seeds(args) -> list[int]:
    return args.seeds if args.seeds else [args.seed]


def _seed_dir(base: Path, seed: int, sweep: bool) -> Path:
    out = base / f"seed_{seed}" if sweep else base
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    data = _load_data(args.data)
    if args.loss == "bs-oracle" and data.bias is None:
        raise UsageError("--loss bs-oracle needs a dataset with a bias column")
    if args.loss == "gce" and not 0 < args.q <= 1:
        raise UsageError(f"--q must lie in (0, 1], got {args.q}")
    dataset = _dataset_ref(args.data)
    seeds = _seeds(args)
    for seed in seeds:
        started = time.time()
        out = _seed_dir(Path(args.out_dir), seed, len(seeds) > 1 or bool(args.seeds))
        try:
            config = PbblConfig(debiased_steps=args.steps, hidden=args.hidden,
                                train=_train_config(args, seed), seed=seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if args.loss == "ce":
            objective = Objective("ce")
        elif args.loss == "gce":
            objective = Objective("gce", q=args.q)
        else:
            train = data.subset("train")
            priors = estimate_priors(train.target, train.bias, args.alpha)
            objective = Objective("bs", priors=priors, groups=train.bias)
        params, history = run_vanilla(data, config, objective)

        save_checkpoint(params, out / "checkpoint.json")
        history.write_csv(out / "history.csv")
        report = {
            "method": TRAIN_METHODS[args.loss],
            "loss": objective.label,
            "dataset": dataset,
            "seed": seed,
            "selected_step": history.selected_step,
            "val": evaluate_split(params, data, "val").to_dict(),
            "test": evaluate_split(params, data, "test").to_dict(),
            "manifest": "manifest.json",
        }
        if args.loss == "bs-oracle":
            report["priors"] = objective.priors.to_dict()
        _write_json(out / "eval.json", report)
        outputs = [out / n for n in ("checkpoint.json", "history.csv", "eval.json")]
        _write_json(out / "manifest.json", _manifest(args, "train", seed, [args.data], outputs, started))
        _print_line(report)
    return 0


def cmd_pbbl(args) -> int:
    data = _load_data(args.data)
    if args.oracle and data.bias is None:
        raise UsageError("--oracle needs a dataset with a bias column")
    dataset = _dataset_ref(args.data)
    seeds = _seeds(args)
    for seed in seeds:
        started = time.time()
        out = _seed_dir(Path(args.out_dir), seed, len(seeds) > 1 or bool(args.seeds))
        try:
            config = PbblConfig(
                num_capture_iters=args.capture_iters,
                biased_steps=args.biased_steps,
                debiased_steps=args.debiased_steps,
                gce_q=args.q,
                smoothing_alpha=args.alpha,
                hidden=args.hidden,
                train=_train_config(args, seed),
                seed=seed,
                oracle=args.oracle,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        params, report, history = run_pbbl(data, config)
        report["dataset"] = dataset
        report["manifest"] = "manifest.json"
        save_checkpoint(params, out / "checkpoint.json")
        history.write_csv(out / "history.csv")
        _write_json(out / "report.json", report)
        outputs = [out / n for n in ("checkpoint.json", "history.csv", "report.json")]
        _write_json(out / "manifest.json", _manifest(args, "pbbl", seed, [args.data], outputs, started))
        for entry in report["capture"]:
            extra = f" agreement={entry['agreement']:.4f}" if "agreement" in entry else ""
            print(f"capture {entry['iteration']}: threshold={entry['threshold']:.6g} "
                  f"positive_fraction={entry['positive_fraction']:.4f}{extra}")
        if report["bias_capture_degenerate"]:
            print("warning: pseudo-bias labels collapsed to a single class", file=sys.stderr)
        _print_line(report)
    return 0


# ----------------------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    started = time.time()
    params = load_checkpoint(args.checkpoint)
    data = _load_data(args.data)
    if not np.any(data.split == args.split):
        raise UsageError(f"dataset has no rows in split {args.split!r}")
    report = evaluate_split(params, data, args.split).to_dict()
    report["method"] = args.method
    report["split"] = args.split
    report["dataset"] = _dataset_ref(args.data)
    out = Path(args.output)
    manifest_path = out.with_name(out.name + ".manifest.json")
    report["manifest"] = manifest_path.name
    _write_json(out, report)
    _write_json(manifest_path, _manifest(args, "eval", None, [args.checkpoint, args.data], [out], started))
    _print_line({"method": args.method, "test": report})
    return 0


# ----------------------------------------------------------------------------- report


def _report_scores(doc: dict) -> dict:
    return doc["test"] if "test" in doc else doc


def _fmt_cell(values: list) -> str:
    if any(v is None for v in values):
        return "n/a"
    pct = [100 * v for v in values]
    if len(pct) == 1:
        return f"{pct[0]:.2f}"
    return f"{statistics.fmean(pct):.2f} ± {statistics.stdev(pct):.2f}"


def summarize_reports(docs: list[dict]) -> list[dict]:
    """Group report documents by method tag; one row per method, in first-seen order."""
    groups: dict[str, list[dict]] = {}
    for doc in docs:
        groups.setdefault(doc.get("method", "unknown"), []).append(_report_scores(doc))
    rows = []
    for method, scores in groups.items():
        row = {"method": method, "runs": len(scores)}
        for col in REPORT_COLUMNS:
            vals = [s.get(col) for s in scores]
            ok = [v for v in vals if v is not None]
            row[col] = None if len(ok) != len(vals) else statistics.fmean(ok)
            row[f"{col}_std"] = (
                statistics.stdev(ok) if len(ok) == len(vals) and len(ok) > 1 else None
            )
            row[f"{col}_cell"] = _fmt_cell(vals)
        rows.append(row)
    return rows


def cmd_report(args) -> int:
    docs = []
    for path in args.reports:
        with open(path) as fh:
            docs.append(json.load(fh))
    hashes = {d.get("dataset", {}).get("sha256") for d in docs}
    if len(hashes) > 1:
        print("warning: reports come from different datasets", file=sys.stderr)
    rows = summarize_reports(docs)
    header = ["Method", "Aligned", "Conflicting", "Balanced", "Overall"]
    table = [[r["method"]] + [r[f"{c}_cell"] for c in REPORT_COLUMNS] for r in rows]
    widths = [max(len(h), *(len(t[i]) for t in table)) for i, h in enumerate(header)]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
    print("  ".join("-" * w for w in widths))
    for t in table:
        print("  ".join(v.ljust(w) for v, w in zip(t, widths)).rstrip())
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            cols = ["method", "runs"] + [x for c in REPORT_COLUMNS for x in (c, f"{c}_std")]
            w.writerow(cols)
            for r in rows:
                w.writerow(["" if r[c] is None else r[c] for c in cols])
    return 0


def _print_line(report: dict) -> None:
    t = report["test"]

    def f(v):
        return "n/a" if v is None else f"{100 * v:.2f}"

    print(f"{report['method']}: aligned={f(t['aligned'])} conflicting={f(t['conflicting'])} "
          f"balanced={f(t['balanced'])} overall={f(t['overall'])}")


# ----------------------------------------------------------------------------- parser


def _add_training_flags(p, steps_flag: bool = True) -> None:
    if steps_flag:
        p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--eval-every", type=int, default=50)
    p.add_argument("--hidden", type=_hidden, default=(128, 128), help="hidden widths, e.g. 128,128")
    p.add_argument("--alpha", type=float, default=1.0, help="Laplace smoothing for priors")
    p.add_argument("--seeds", type=_int_list, default=None, help="comma-separated seed sweep")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="debias-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file of default flag values")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--preset", default="sbp",
                   choices=sorted(PRESET_ALIASES) + sorted(PRESET_ALIASES.values()))
    g.add_argument("--ratio", type=float, default=10.0, help="bias ratio r in (0, 100]")
    g.add_argument("--n0", type=int, default=1000, help="majority group size")
    g.add_argument("--target-sep", type=float, default=1.0)
    g.add_argument("--bias-sep", type=float, default=3.0)
    g.add_argument("--noise-dims", type=int, default=8)
    g.add_argument("--noise-sigma", type=float, default=1.0)
    g.add_argument("--val-per-group", type=int, default=200)
    g.add_argument("--test-per-group", type=int, default=1000)
    g.add_argument("--seed", type=int)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a single model")
    t.add_argument("--data", required=True)
    t.add_argument("--loss", choices=sorted(TRAIN_METHODS), default="ce")
    t.add_argument("--q", type=float, default=0.7, help="GCE exponent")
    t.add_argument("--seed", type=int)
    t.add_argument("--out-dir", required=True)
    _add_training_flags(t)
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("pbbl", help="run pseudo bias-balanced learning")
    p.add_argument("--data", required=True)
    p.add_argument("--capture-iters", type=int, default=1)
    p.add_argument("--biased-steps", type=int, default=1000)
    p.add_argument("--debiased-steps", type=int, default=1000)
    p.add_argument("--q", type=float, default=0.7)
    p.add_argument("--oracle", action="store_true", help="use ground-truth bias labels")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    _add_training_flags(p, steps_flag=False)
    p.set_defaults(func=cmd_pbbl)

    e = sub.add_parser("eval", help="score a checkpoint on one split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--method", default="eval", help="method tag stored in the report")
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="tabulate eval/run reports")
    r.add_argument("reports", nargs="+")
    r.add_argument("--csv", help="also write the table as CSV")
    r.set_defaults(func=cmd_report)
    return parser


def _apply_config(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config) as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise UsageError("config file must hold a flat JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(overrides) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if "hidden" in overrides and isinstance(overrides["hidden"], list):
            overrides["hidden"] = tuple(overrides["hidden"])
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    if getattr(args, "seed", "absent") is None:
        args.seed = _default_seed()
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except UsageError as exc:
        print(f"debias-lab: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"debias-lab: invalid input: {exc}", file=sys.stderr)
        return 2
    except (PbblError, OSError) as exc:
        print(f"debias-lab: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
