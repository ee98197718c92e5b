"""Command-line entry point: ``beltwear <command> [options]``.

Exit codes: 0 ok, 2 I/O or file-format failure, 3 quality gate failed, 4 usage error.
Failures also print one JSON line on stderr: {"error": ..., "message": ..., "exit_code": ...}.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from beltwear import __version__
from beltwear._util import write_run_manifest, write_text_atomic
from beltwear.dataset import ManifestError, SynthesisError, WavFormatError, load_manifest, synthesize_corpus
from beltwear.decomposition import COLOR_KEYS, fit_pca, transform, write_scatter_csv, write_scatter_svg
from beltwear.dsp import GRID_NB, GRID_NC, GRID_WL, SHORT_NAMES, SpectralConfig, write_feature_csv
from beltwear.evaluation import (
    TASK_ALIASES,
    TASKS,
    FeatureStore,
    evaluate,
    grid_csv,
    grid_search,
    resolve_task,
    run_report,
    run_task,
    split_sets,
    task_data,
    train_specialized,
)
from beltwear.models import KINDS, ModelFormatError, load_model, save_model, train
from beltwear.segmentation import DetectorConfig, load_segmented, segment_corpus, write_segmented

EXIT_OK, EXIT_IO, EXIT_GATE, EXIT_USAGE = 0, 2, 3, 4
REJECT_LIMIT = 0.01

log = logging.getLogger("beltwear")


class UsageError(Exception):
    pass


class GateError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _fail("UsageError", message, EXIT_USAGE)


def _fail(kind: str, message: str, code: int):
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    sys.exit(code)


def _feature_args(p):
    p.add_argument("--feature", choices=list(SHORT_NAMES), default="mel", help="feature method")
    p.add_argument("--wl", type=int, choices=GRID_WL, default=64, help="window length in ms")
    p.add_argument("--nb", type=int, choices=GRID_NB, default=64, help="filterbank size")
    p.add_argument("--nc", type=int, choices=GRID_NC, default=40, help="cepstral coefficients kept")


def _task_args(p):
    p.add_argument("--task", choices=sorted([*TASKS, *TASK_ALIASES]), default="wear", help="classification task")
    p.add_argument("--model", choices=KINDS, default="tree", help="classifier family")
    p.add_argument("--seed", type=int, default=0, help="seed for model training and machine-state sampling")
    p.add_argument("--with-params", action="store_true", help="append feed, grit and material to the features")
    p.add_argument(
        "--test-reps", type=int, nargs="+", choices=(1, 2, 3), default=[3], help="repetitions held out for testing"
    )


def _config(args, sample_rate=44100) -> SpectralConfig:
    try:
        return SpectralConfig(SHORT_NAMES[args.feature], args.wl, args.nb, args.nc, sample_rate)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config_dict(cfg: SpectralConfig) -> dict:
    return {"method": cfg.method, "w_l": cfg.w_l, "n_b": cfg.n_b, "n_c": cfg.n_c, "sample_rate": cfg.sample_rate}


def _check_out(out: Path, *inputs: Path) -> None:
    """Refuse to write into (or above) an input directory."""
    o = out.resolve()
    for i in inputs:
        i = i.resolve()
        if o == i or i in o.parents or o in i.parents:
            raise UsageError(f"output {out} overlaps input {i}; choose a separate directory")


def _load(data: Path):
    corpus = load_segmented(data)
    return corpus, corpus.analysis[0].sample_rate


# --- commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    records = None
    inputs = {}
    if getattr(args, "manifest", None):
        manifest = Path(args.manifest)
        if out.resolve() in manifest.resolve().parents:
            raise UsageError(f"output {out} contains the input manifest {manifest}")
        records = load_manifest(manifest)
        inputs["manifest"] = manifest
    info = synthesize_corpus(args.seed, out, clip_seconds=args.clip_seconds, records=records)
    write_run_manifest(
        out,
        "synth",
        {"clip_seconds": args.clip_seconds},
        args.seed,
        inputs,
        {"manifest": out / "manifest.csv", "onsets": out / "onsets.csv"},
    )
    print(f"wrote {len(info.records)} clips to {out}; separability margin {info.separability.min_margin:.2f}")
    return EXIT_OK


def cmd_segment(args) -> int:
    data, out = Path(args.data), Path(args.out)
    _check_out(out, data)
    cfg = DetectorConfig(k=args.k, sustain_frames=args.sustain)
    result = segment_corpus(data, cfg)
    write_segmented(result, out)
    write_run_manifest(
        out,
        "segment",
        {"k": args.k, "sustain_frames": args.sustain, "w_l": cfg.w_l, "n_b": cfg.n_b},
        None,
        {"data": data},
        {"markers": out / "markers.csv", "rejects": out / "rejects.csv"},
    )
    frac = result.reject_fraction
    print(f"segmented {len(result.corpus)} clips, rejected {len(result.rejects)} ({100 * frac:.2f}%)")
    if result.detection_error_s:
        err = np.abs(result.detection_error_s)
        print(f"onset error vs sidecar: within 50 ms {100 * np.mean(err <= 0.05):.2f}%, max {1000 * err.max():.1f} ms")
    if frac >= REJECT_LIMIT:
        raise GateError(f"{100 * frac:.2f}% of clips rejected (limit {100 * REJECT_LIMIT:.0f}%)")
    return EXIT_OK


def cmd_features(args) -> int:
    data, out = Path(args.data), Path(args.out)
    _check_out(out.parent, data)
    corpus, sr = _load(data)
    cfg = _config(args, sr)
    store = FeatureStore(corpus)
    X = store.matrix(args.source, cfg)
    rows = [(r.clip_path, r, x) for r, x in zip(corpus.records, X)]
    write_feature_csv(out, rows)
    write_run_manifest(
        out.parent,
        "features",
        {**_config_dict(cfg), "source": args.source},
        None,
        {"data": data},
        {"features": out},
    )
    print(f"wrote {len(rows)} rows of {X.shape[1]} features to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    data, out = Path(args.data), Path(args.out)
    _check_out(out.parent, data)
    corpus, sr = _load(data)
    cfg = _config(args, sr)
    td = task_data(FeatureStore(corpus), args.task, cfg, args.seed, args.with_params)
    train_set, _ = split_sets(td, tuple(args.test_reps))
    model = train(args.model, train_set, seed=args.seed)
    save_model(model, out)
    write_run_manifest(
        out.parent,
        "train",
        {**_config_dict(cfg), "task": args.task, "model": args.model, "with_params": args.with_params,
         "test_reps": args.test_reps},
        args.seed,
        {"data": data},
        {"model": out},
    )
    print(f"trained {args.model} on {len(train_set)} items; saved {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    data, out = Path(args.data), Path(args.out)
    _check_out(out, data)
    corpus, sr = _load(data)
    cfg = _config(args, sr)
    store = FeatureStore(corpus)
    if args.load:
        model = load_model(args.load)
        td = task_data(store, args.task, cfg, args.seed, args.with_params)
        _, test_set = split_sets(td, tuple(args.test_reps))
        acc, cm = evaluate(model, test_set)
        cell = out / resolve_task(args.task) / f"{cfg.short_name}_{model.kind}"
        write_text_atomic(cell / "accuracy.txt", f"accuracy={acc:.17g}\ntotal={len(test_set)}\nmodel={args.load}\n")
        write_text_atomic(cell / "confusion.csv", cm.to_csv())
    else:
        report = run_task(
            store, args.task, args.model, cfg, args.seed, out, args.with_params, tuple(args.test_reps)
        )
        acc, cm = report.accuracy, report.confusion
        cell = out / report.task / report.cell_name
    write_run_manifest(
        out,
        "eval",
        {**_config_dict(cfg), "task": args.task, "model": args.model, "with_params": args.with_params,
         "test_reps": args.test_reps, "load": args.load},
        args.seed,
        {"data": data},
        {"report": cell},
    )
    print(f"accuracy {acc:.4f} ({int(np.trace(cm.counts))}/{cm.total})")
    print(cm.to_csv(), end="")
    return EXIT_OK


def cmd_grid(args) -> int:
    data, out = Path(args.data), Path(args.out)
    _check_out(out, data)
    corpus, _ = _load(data)
    method = SHORT_NAMES[args.feature]
    rows = grid_search(corpus, args.task, method, args.model, args.seed, tuple(args.test_reps))
    write_text_atomic(out / "grid.csv", grid_csv(rows))
    write_run_manifest(
        out,
        "grid",
        {"method": method, "task": args.task, "model": args.model, "test_reps": args.test_reps},
        args.seed,
        {"data": data},
        {"grid": out / "grid.csv"},
    )
    best = rows[0]
    print(f"{len(rows)} configurations; best {best.config.w_l} ms, n_b={best.config.n_b}, "
          f"n_c={best.n_c}: {best.accuracy:.4f}")
    return EXIT_OK


_COLOR_OF = {
    "wear": lambda r: r.wear_level,
    "feed": lambda r: r.feed_speed,
    "grit": lambda r: r.grit_size,
    "material": lambda r: r.material,
}


def cmd_pca(args) -> int:
    data, out = Path(args.data), Path(args.out)
    _check_out(out, data)
    corpus, sr = _load(data)
    cfg = _config(args, sr)
    X = FeatureStore(corpus).matrix("analysis", cfg)
    model = fit_pca(X, args.k, standardize=args.standardize)
    scores = transform(model, X)
    colors = [_COLOR_OF[args.color_by](r) for r in corpus.records]
    write_scatter_csv(out / "scatter.csv", [r.clip_path for r in corpus.records], scores, args.color_by, colors)
    ratios = model.explained_variance_ratio
    lines = ["component,explained_variance_ratio"] + [f"pc{i + 1},{v:.17g}" for i, v in enumerate(ratios)]
    write_text_atomic(out / "explained_variance.csv", "\n".join(lines) + "\n")
    outputs = {"scatter": out / "scatter.csv", "explained_variance": out / "explained_variance.csv"}
    if args.svg:
        title = f"{cfg.short_name} PCA by {args.color_by}"
        write_scatter_svg(out / "scatter.svg", scores, colors, title)
        outputs["svg"] = out / "scatter.svg"
    write_run_manifest(
        out,
        "pca",
        {**_config_dict(cfg), "k": args.k, "color_by": args.color_by, "standardize": args.standardize},
        None,
        {"data": data},
        outputs,
    )
    print(f"first {args.k} components explain {100 * ratios.sum():.1f}% "
          f"({', '.join(f'{100 * v:.1f}%' for v in ratios)})")
    return EXIT_OK


def cmd_specialized(args) -> int:
    data, out = Path(args.data), Path(args.out)
    _check_out(out, data)
    corpus, sr = _load(data)
    cfg = _config(args, sr)
    res = train_specialized(corpus, args.task, args.model, cfg, args.seed, tuple(args.test_reps))
    write_text_atomic(out / "specialized.csv", res.to_csv())
    write_run_manifest(
        out,
        "specialized",
        {**_config_dict(cfg), "task": args.task, "model": args.model, "test_reps": args.test_reps},
        args.seed,
        {"data": data},
        {"specialized": out / "specialized.csv"},
    )
    print(f"{len(res.models)} specialised models, mean accuracy {res.mean_accuracy:.4f}")
    return EXIT_OK


def _check_gates(summary: dict) -> list[str]:
    tasks = summary["tasks"]
    failed = []
    for task, floor in (("wear", 0.90), ("machine_state", 0.95), ("feed_speed", 0.95), ("grit_size", 0.95)):
        if task in tasks and tasks[task] < floor:
            failed.append(f"{task} {tasks[task]:.4f} < {floor}")
    if summary["specialized"]["mean_accuracy"] < tasks["wear"]:
        failed.append("specialised mean below generalised wear accuracy")
    return failed


def _print_summary(summary: dict) -> None:
    for name, acc in summary["tasks"].items():
        print(f"{name:14s} {acc:.4f}")
    print(f"{'wear+params':14s} {summary['wear_with_parameters']:.4f}")
    print(f"{'specialised':14s} {summary['specialized']['mean_accuracy']:.4f}")


def cmd_report(args) -> int:
    data, out = Path(args.data), Path(args.out)
    _check_out(out, data)
    corpus, _ = _load(data)
    summary = run_report(corpus, out, args.seed)
    write_run_manifest(out, "report", {}, args.seed, {"data": data}, {"summary": out / "summary.json"})
    _print_summary(summary)
    failed = _check_gates(summary)
    if failed:
        raise GateError("; ".join(failed))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    """synth, segment and report in one go under ``--out``."""
    out = Path(args.out)
    t0 = time.perf_counter()
    ns = argparse.Namespace
    cmd_synth(ns(seed=args.seed, out=str(out / "data"), clip_seconds=args.clip_seconds))
    code = cmd_segment(ns(data=str(out / "data"), out=str(out / "segmented"), k=args.k, sustain=args.sustain))
    code = code or cmd_report(ns(data=str(out / "segmented"), out=str(out / "report"), seed=args.seed))
    print(f"pipeline finished in {time.perf_counter() - t0:.1f} s")
    return code


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="beltwear", description="Acoustic abrasive-belt wear classification.", formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt)
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, "generate the synthetic corpus")
    p.add_argument("--seed", type=int, default=7, help="corpus seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--clip-seconds", type=float, default=6.0, help="clip length (120 for two-minute clips)")
    p.add_argument("--manifest", default=None, help="only render the records listed in this manifest")

    p = add("segment", cmd_segment, "detect sanding events and cut analysis and idle clips")
    p.add_argument("--data", required=True, help="corpus directory with manifest.csv")
    p.add_argument("--out", required=True, help="output directory for cut clips and markers")
    p.add_argument("--k", type=float, default=DetectorConfig.k, help="threshold in noise standard deviations")
    p.add_argument("--sustain", type=int, default=DetectorConfig.sustain_frames, help="frames the energy must stay up")

    p = add("features", cmd_features, "extract one feature matrix to CSV")
    p.add_argument("--data", required=True, help="segmented corpus directory")
    _feature_args(p)
    p.add_argument("--source", choices=FeatureStore.SOURCES, default="analysis", help="which cut clips to use")
    p.add_argument("--out", required=True, help="output CSV path")

    p = add("train", cmd_train, "train one model on the training split")
    p.add_argument("--data", required=True, help="segmented corpus directory")
    _feature_args(p)
    _task_args(p)
    p.add_argument("--out", required=True, help="output model path (.bw)")

    p = add("eval", cmd_eval, "train and score one model, writing accuracy and confusion matrix")
    p.add_argument("--data", required=True, help="segmented corpus directory")
    _feature_args(p)
    _task_args(p)
    p.add_argument("--load", default=None, help="score this saved model instead of training one")
    p.add_argument("--out", default="report", help="report directory")

    p = add("grid", cmd_grid, "rank the window/filterbank/coefficient grid for one feature method")
    p.add_argument("--data", required=True, help="segmented corpus directory")
    p.add_argument("--feature", choices=list(SHORT_NAMES), default="mfcc", help="feature method")
    _task_args(p)
    p.add_argument("--out", default="report", help="output directory for grid.csv")

    p = add("pca", cmd_pca, "project features onto principal components")
    p.add_argument("--data", required=True, help="segmented corpus directory")
    _feature_args(p)
    p.add_argument("--k", type=int, default=2, help="components kept")
    p.add_argument("--color-by", choices=COLOR_KEYS, default="wear", help="label written next to each point")
    p.add_argument("--standardize", action="store_true", help="scale features to unit variance first")
    p.add_argument("--svg", action="store_true", help="also render scatter.svg")
    p.add_argument("--out", default="pca", help="output directory")

    p = add("specialized", cmd_specialized, "one model per sanding-parameter configuration")
    p.add_argument("--data", required=True, help="segmented corpus directory")
    _feature_args(p)
    _task_args(p)
    p.add_argument("--out", default="report", help="output directory")

    p = add("report", cmd_report, "full protocol: 5x5 wear table, side tasks, specialised models")
    p.add_argument("--data", required=True, help="segmented corpus directory")
    p.add_argument("--seed", type=int, default=7, help="training seed")
    p.add_argument("--out", default="report", help="report directory")

    p = add("pipeline", cmd_pipeline, "synth, segment and report into one directory")
    p.add_argument("--seed", type=int, default=7, help="corpus and training seed")
    p.add_argument("--out", required=True, help="output directory (data/, segmented/, report/)")
    p.add_argument("--clip-seconds", type=float, default=6.0, help="clip length")
    p.add_argument("--k", type=float, default=DetectorConfig.k, help="detector threshold")
    p.add_argument("--sustain", type=int, default=DetectorConfig.sustain_frames, help="detector sustain frames")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except GateError as exc:
        _fail("QualityGate", str(exc), EXIT_GATE)
    except UsageError as exc:
        _fail("UsageError", str(exc), EXIT_USAGE)
    except (OSError, ManifestError, WavFormatError, ModelFormatError) as exc:
        _fail(type(exc).__name__, str(exc), EXIT_IO)
    except SynthesisError as exc:
        _fail("SynthesisError", str(exc), EXIT_GATE)
    except ValueError as exc:
        _fail(type(exc).__name__, str(exc), EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
