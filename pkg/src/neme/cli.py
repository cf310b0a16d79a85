"""``neme`` command-line entry point.

Exit codes: 0 success, 2 input/config error, 3 numerical failure.
Every command writes a JSON manifest next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .classifier import (
    CheckpointError,
    NumericalError,
    TrainConfig,
    TrainingDivergence,
    evaluate,
    grid_search,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .core import (
    BehaviorLabel,
    DatasetError,
    atomic_write_text,
    dataset_stats,
    load_dataset,
    split_dataset,
    stack_windows,
    window_all,
    write_dataset,
)
from .dtw import DEFAULT_ELIGIBLE, BodyEmbedding, dataset_dtw
from .metaeval import (
    EvalReport,
    SelectionCriterion,
    compare_policies,
    comparison_csv,
    meta_evaluate,
    read_series_csv,
    select_epoch,
    series_csv,
)
from .policysim import DegradationRay, DegradationSpec, SimulatedPolicy, apply, make_epoch_family, save_family_manifest
from .synthgen import ConfigError, GenConfig, generate_dataset, load_config

log = logging.getLogger("neme")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

TRAIN_OPTIONS = {"split_ratios": (0.6, 0.2), "train_stride": 4, "eval_stride": 16}


class InputError(Exception):
    """Bad user input: maps to exit code 2."""


# ------------------------------------------------------------------ helpers


def _read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(d, dict):
        raise InputError(f"{path}: top level must be a JSON object")
    return d


def _train_settings(args) -> tuple[TrainConfig, dict, dict]:
    d = _read_json(args.config) if args.config else {}
    opts = dict(TRAIN_OPTIONS)
    for k in list(d):
        if k in opts:
            opts[k] = d.pop(k)
    extra = {k: d.pop(k) for k in ("grid", "seeds") if k in d}
    try:
        cfg = TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{args.config}: {exc}") from None
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg, opts, extra


def _write_manifest(path, args, started: float, config=None, outputs=(), seeds=None) -> None:
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "tool_version": __version__,
        "config": config,
        "seeds": seeds,
        "inputs": [str(p) for p in _inputs(args)],
        "outputs": [str(p) for p in outputs],
        "duration_s": round(time.perf_counter() - started, 3),
    }
    atomic_write_text(path, json.dumps(manifest, indent=1) + "\n")


def _inputs(args):
    for name in ("dataset", "checkpoint", "reference", "config", "embedding"):
        v = getattr(args, name, None)
        if v:
            yield v
    for name in ("predicted", "reports"):
        yield from getattr(args, name, None) or []


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_trajs(path):
    return load_dataset(path)


def _parse_kv(text: str, what: str) -> dict:
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise InputError(f"{what}: expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            raise InputError(f"{what}: value for {k!r} is not a number") from None
    return out


# ----------------------------------------------------------------- commands


def cmd_gen(args, started):
    if args.config:
        try:
            cfg = load_config(args.config)
        except FileNotFoundError as exc:
            raise InputError(str(exc)) from None
    else:
        cfg = GenConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.episodes is not None:
        cfg = replace(cfg, episodes=args.episodes)
    out = Path(args.out or "dataset.jsonl")
    trajs = generate_dataset(cfg)
    write_dataset(out, trajs)
    stats_path = out.with_suffix(".stats.csv")
    atomic_write_text(stats_path, dataset_stats(trajs).to_csv())
    _write_manifest(out.with_suffix(".manifest.json"), args, started, cfg.to_dict(), [out, stats_path], cfg.seed)
    print(f"wrote {len(trajs)} trajectories to {out}")


def _split_windows(trajs, cfg: TrainConfig, opts: dict):
    split = split_dataset(trajs, tuple(opts["split_ratios"]), seed=cfg.seed)
    parts = {k: split.select(trajs, k) for k in ("train", "val", "test")}
    tr = window_all(parts["train"], cfg.L, int(opts["train_stride"]))
    va = window_all(parts["val"], cfg.L, int(opts["eval_stride"]))
    if not tr or not va:
        raise InputError(f"not enough frames for windows of length {cfg.L} in the train/val split")
    return split, parts, tr, va


def cmd_train(args, started):
    cfg, opts, _ = _train_settings(args)
    trajs = _load_trajs(args.dataset)
    out = _out_dir(args, "train_out")
    split, parts, tr, va = _split_windows(trajs, cfg, opts)
    try:
        res = train(tr, va, cfg)
    except TrainingDivergence as exc:
        raise TrainingDivergence(exc.epoch, f"config {cfg.to_dict()}") from None
    outputs = [out / "checkpoint.json", out / "history.csv", out / "split.json", out / "test.jsonl"]
    save_checkpoint(outputs[0], res.best_model)
    atomic_write_text(outputs[1], res.history_csv())
    atomic_write_text(outputs[2], json.dumps({"train": split.train, "val": split.val, "test": split.test}, indent=1) + "\n")
    write_dataset(outputs[3], parts["test"])
    te = window_all(parts["test"], cfg.L, int(opts["eval_stride"]))
    if te:
        rep = evaluate(res.best_model, te)
        atomic_write_text(out / "test_report.txt", rep.summary() + "\n")
        outputs.append(out / "test_report.txt")
        print(rep.summary())
    _write_manifest(out / "manifest.json", args, started, {"train": cfg.to_dict(), **opts}, outputs, cfg.seed)
    print(f"best epoch {res.best_epoch} of {len(res.history)}; val acc {res.best_val_acc:.4f}")


def cmd_grid(args, started):
    base, opts, extra = _train_settings(args)
    grids = extra.get("grid")
    seeds = tuple(extra.get("seeds", (0, 1, 2)))
    if args.seed is not None:
        seeds = tuple(args.seed + i for i in range(len(seeds)))
    trajs = _load_trajs(args.dataset)
    out = _out_dir(args, "grid_out")
    split = split_dataset(trajs, tuple(opts["split_ratios"]), seed=base.seed)
    result = grid_search(
        split.select(trajs, "train"), split.select(trajs, "val"), grids, seeds,
        base=base, stride=int(opts["train_stride"]), workers=args.threads,
    )
    atomic_write_text(out / "summary.csv", result.summary_csv())
    atomic_write_text(out / "best_config.json", json.dumps(result.best.to_dict(), indent=1) + "\n")
    best = replace(result.best, seed=seeds[0])
    _, _, tr, va = _split_windows(trajs, best, opts)
    res = train(tr, va, best)
    save_checkpoint(out / "checkpoint.json", res.best_model)
    atomic_write_text(out / "history.csv", res.history_csv())
    outputs = [out / n for n in ("summary.csv", "best_config.json", "checkpoint.json", "history.csv")]
    _write_manifest(out / "manifest.json", args, started,
                    {"base": base.to_dict(), "grid": grids, **opts}, outputs, list(seeds))
    failed = [c for c in result.cells if c.failed]
    print(f"{len(result.cells)} cells ({len(failed)} failed); best {result.best.to_dict()}")


def cmd_simulate(args, started):
    trajs = _load_trajs(args.dataset)
    gen = GenConfig(dim=trajs[0].dim) if not args.config else load_config(args.config)
    seed = args.seed if args.seed is not None else 0
    out = _out_dir(args, "simulate_out")
    outputs = []
    if args.spec:
        spec = DegradationSpec(**{**_parse_kv(args.spec, "--spec"), "seed": seed})
        pol = SimulatedPolicy(args.name, spec)
        path = out / f"{args.name}.jsonl"
        write_dataset(path, [apply(spec, tr, gen) for tr in trajs])
        manifest = [pol.manifest()]
        atomic_write_text(out / "family.json", json.dumps(manifest, indent=1) + "\n")
        outputs += [path, out / "family.json"]
    else:
        curve = [float(x) for x in args.curve.split(",")]
        ray = DegradationRay(**_parse_kv(args.ray, "--ray")) if args.ray else None
        fam = make_epoch_family(trajs, curve, seed=seed, ray=ray, primitives=gen, name=args.name)
        for e, preds in enumerate(fam.predictions, start=1):
            path = out / f"epoch_{e:02d}.jsonl"
            write_dataset(path, preds)
            outputs.append(path)
        save_family_manifest(out / "family.json", fam)
        outputs.append(out / "family.json")
        manifest = fam.manifest()
    _write_manifest(out / "manifest.json", args, started, {"policies": manifest}, outputs, seed)
    for m in manifest:
        print(f"{m['policy_name']}: quality {m['quality']:.6f}")


def _embedding(args):
    return BodyEmbedding.load(args.embedding) if getattr(args, "embedding", None) else None


def _eligible(args):
    if not getattr(args, "classes", None):
        return DEFAULT_ELIGIBLE
    try:
        return frozenset(BehaviorLabel(c.strip()) for c in args.classes.split(","))
    except ValueError as exc:
        raise InputError(f"--classes: {exc}") from None


def cmd_eval(args, started):
    try:
        model = load_checkpoint(args.checkpoint)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None
    refs = _load_trajs(args.reference) if args.reference else None
    out = _out_dir(args, "eval_out")
    emb = _embedding(args)
    outputs, mf1, dtwv = [], [], []
    for p in args.predicted:
        preds = _load_trajs(p)
        if preds and preds[0].dim != model.D:
            raise InputError(f"{p}: data has {preds[0].dim} channels, checkpoint expects {model.D} (L={model.L})")
        name = Path(p).stem
        rep = meta_evaluate(model, preds, stride=args.stride, name=name, references=refs,
                            eligible=_eligible(args), embedding=emb)
        rep.save_json(out / f"{name}.report.json")
        atomic_write_text(out / f"{name}.report.csv", rep.to_csv())
        outputs += [out / f"{name}.report.json", out / f"{name}.report.csv"]
        mf1.append(rep.macro_mF1)
        dtwv.append(rep.mean_dtw)
        print(f"{name}: mA {rep.mA:.4f}  macro mF1 {rep.macro_mF1:.4f}  mean DTW {rep.mean_dtw:.4f}")
    atomic_write_text(out / "mf1.csv", series_csv(mf1))
    outputs.append(out / "mf1.csv")
    if refs is not None:
        atomic_write_text(out / "dtw.csv", series_csv(dtwv))
        outputs.append(out / "dtw.csv")
    _write_manifest(out / "manifest.json", args, started, {"stride": args.stride}, outputs)


def cmd_dtw(args, started):
    preds, refs = _load_trajs(args.predicted[0]), _load_trajs(args.reference)
    res = dataset_dtw(preds, refs, _eligible(args), _embedding(args), band=args.band)
    text = res.to_csv()
    out = Path(args.out) if args.out else None
    if out:
        atomic_write_text(out, text)
        _write_manifest(out.with_suffix(".manifest.json"), args, started, {"band": args.band}, [out])
    print(text, end="")
    print(f"grand mean normalized DTW: {res.grand_mean:.6f}")


def cmd_select(args, started):
    criteria = []
    for item in args.series:
        if "=" not in item:
            raise InputError(f"expected name=path, got {item!r}")
        name, path = item.split("=", 1)
        if not Path(path).exists():
            raise InputError(f"series file not found: {path}")
        try:
            criteria.append(SelectionCriterion(name, read_series_csv(path)))
        except ValueError as exc:
            raise InputError(str(exc)) from None
    chosen = {c.name: select_epoch(c) for c in criteria}
    line = ", ".join(f"{k}→{v}" for k, v in chosen.items())
    print(line)
    if args.out:
        out = _out_dir(args, "select_out")
        outputs = [out / "selection.json"]
        atomic_write_text(outputs[0], json.dumps(chosen, indent=1) + "\n")
        if args.plot:
            from .plotting import plot_selection

            for c in criteria:
                atomic_write_text(out / f"{c.name}.csv", series_csv(c.series))
                outputs.append(out / f"{c.name}.csv")
            plot_selection(criteria, chosen, out / "selection.svg")
            outputs.append(out / "selection.svg")
        _write_manifest(out / "manifest.json", args, started, None, outputs)


def cmd_compare(args, started):
    reports = []
    for p in args.reports:
        if not Path(p).exists():
            raise InputError(f"report not found: {p}")
        try:
            reports.append(EvalReport.load_json(p))
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise InputError(f"{p}: malformed report ({exc!r})") from None
    ranked = compare_policies(reports)
    for k, r in enumerate(ranked, start=1):
        print(f"{k}. {r.policy_name}  macro mF1 {r.macro_mF1:.4g}  mean DTW {r.mean_dtw:.4g}")
    if args.out:
        out = Path(args.out)
        atomic_write_text(out, comparison_csv(ranked))
        _write_manifest(out.with_suffix(".manifest.json"), args, started, None, [out])


COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "grid": cmd_grid, "eval": cmd_eval,
    "dtw": cmd_dtw, "simulate": cmd_simulate, "select": cmd_select, "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="single source of randomness for the command")
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--plot", action="store_true", help="also emit plot data and an SVG chart")
    common.add_argument("--threads", type=int, default=1, help="worker processes (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="neme", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic labeled dataset")
    p.add_argument("--episodes", type=int)

    for name, helptext in (("train", "train one evaluator"), ("grid", "grid-search evaluator hyper-parameters")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("dataset")

    p = sub.add_parser("simulate", parents=[common], help="degrade reference trajectories into simulated policies")
    p.add_argument("dataset")
    p.add_argument("--curve", default="1.0,0.9,0.8,0.7,0.6,0.5,0.4,0.3", help="comma-separated quality targets")
    p.add_argument("--ray", help="degradation direction, e.g. confusion_prob=1,jitter_sigma=0.05")
    p.add_argument("--spec", help="single explicit spec instead of a curve, e.g. jitter_sigma=0.05,lag_frames=2")
    p.add_argument("--name", default="policy")

    p = sub.add_parser("eval", parents=[common], help="meta-evaluate predicted trajectories")
    p.add_argument("checkpoint")
    p.add_argument("predicted", nargs="+")
    p.add_argument("--reference", help="reference dataset for per-class DTW")
    p.add_argument("--stride", type=int, help="window stride (default L/2)")
    p.add_argument("--embedding", help="JSON body-point embedding matrix")
    p.add_argument("--classes", help="DTW classes, comma-separated")

    p = sub.add_parser("dtw", parents=[common], help="per-class DTW between predicted and reference data")
    p.add_argument("predicted", nargs=1)
    p.add_argument("reference")
    p.add_argument("--embedding")
    p.add_argument("--classes")
    p.add_argument("--band", type=int)

    p = sub.add_parser("select", parents=[common], help="pick the epoch optimizing each criterion")
    p.add_argument("series", nargs="+", help="criterion=path.csv (val_loss, dtw, mf1, success_rate)")

    p = sub.add_parser("compare", parents=[common], help="rank policies from EvalReport JSON files")
    p.add_argument("reports", nargs="+")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = time.perf_counter()
    try:
        # single-threaded BLAS keeps float results independent of the host
        with threadpool_limits(limits=1):
            COMMANDS[args.command](args, started)
    except (NumericalError, TrainingDivergence) as exc:
        print(f"neme {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, DatasetError, ConfigError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"neme {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
