from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
from typing import Any, Callable

from pydantic import ValidationError

from .config import get_settings
from .errors import (
    ArgumentError,
    ChannelNotFoundError,
    ChromAlignError,
    ConfigError,
    DataValidationError,
    ParseError,
    UndefinedMetricError,
)
from .evaluation import group_tp_fdr, pair_labels, pairwise_confusion, roc_auc, runtime_fit
from .features import build_feature_set
from .graph import build_pipeline_graph
from .grouping import align, benchmark_predictions, default_sizes, predict_all_pairs
from .ingest import load_peak_table, save_peak_table
from .model import get_variant
from .reporting import (
    build_metrics_payload,
    load_alignment_report,
    load_pair_scores,
    sidecar,
    write_alignment_report,
    write_metrics,
    write_pair_scores,
    write_roc,
    write_timing,
)
from .rules import rule_align
from .schemas import RunConfig
from .signal_processing import detect_matrix
from .storage import (
    build_run_config,
    load_features,
    load_matrices,
    load_truth,
    load_weights,
    run_config_lines,
    save_features,
    save_history,
    save_matrices,
    save_truth,
    save_weights,
)
from .synthdata import air_like, breath_like, generate, match_truth, truth_to_labels
from .training import make_pairs, train

logger = logging.getLogger(__name__)

INPUT_ERRORS = (
    ConfigError,
    DataValidationError,
    ParseError,
    ArgumentError,
    ChannelNotFoundError,
    ValidationError,
    FileNotFoundError,
)
PRESETS: dict[str, Callable[..., Any]] = {"air": air_like, "breath": breath_like}


def _describe(key: str, text: str | None = None) -> str:
    """Help text for a run-config key, with its default and unit."""
    model: Any = RunConfig
    parts = key.split(".")
    for part in parts[:-1]:
        model = model.model_fields[part].annotation
    field = model.model_fields[parts[-1]]
    default = field.get_default(call_default_factory=True)
    return f"{text or field.description or parts[-1]}; default {json.dumps(default)} [{key}]"


def _run_config(args: argparse.Namespace, flags: dict[str, Any] | None = None) -> RunConfig:
    defaults: dict[str, Any] = {"seed": get_settings().default_seed}
    preset = getattr(args, "preset", None)
    if preset:
        synth = PRESETS[preset]().model_dump()
        defaults.update({f"synth.{k}": v for k, v in synth.items()})
    variant = getattr(args, "variant", None)
    if variant:
        defaults.update({f"variant.{k}": v for k, v in get_variant(variant).model_dump().items()})
    merged = dict(flags or {})
    if getattr(args, "seed", None) is not None:
        merged.update({"seed": args.seed, "synth.seed": args.seed, "train.seed": args.seed})
    return build_run_config(args.config, args.set or (), merged, defaults)


def simulate_command(args: argparse.Namespace) -> None:
    cfg = _run_config(args, {"synth.n_samples": args.samples, "synth.n_compounds": args.compounds})
    synthetic = generate(cfg.synth)
    out = Path(args.out)
    paths = save_matrices(synthetic.matrices, out / "matrices")
    save_truth(synthetic.truth, out / "truth.csv")
    print(f"Wrote {len(paths)} matrices to {out / 'matrices'}")
    print(f"Wrote {len(synthetic.truth)} planted apexes to {out / 'truth.csv'}")


def detect_command(args: argparse.Namespace) -> None:
    cfg = _run_config(args, {"channels": args.mz})
    matrices = load_matrices(args.matrices)
    channels = cfg.detect_channels(synthetic=bool(args.truth))
    peaks = []
    for matrix in matrices:
        peaks.extend(detect_matrix(matrix, cfg.als, cfg.detect, channels))
    if args.truth:
        peaks = truth_to_labels(load_truth(args.truth), peaks, cfg.match_tolerance)
    save_peak_table(peaks, args.out)
    labeled = sum(p.group >= 0 for p in peaks)
    print(f"Detected {len(peaks)} peaks in {len(matrices)} samples ({labeled} labeled)")
    print(f"Peak table: {args.out}")


def features_command(args: argparse.Namespace) -> None:
    cfg = _run_config(args)
    matrices = load_matrices(args.matrices)
    peaks = load_peak_table(args.peaks)
    features, feature_config = build_feature_set(matrices, peaks, cfg.features)
    paths = save_features(features, feature_config, args.out)
    print(f"Wrote features for {len(features)} peaks to {len(paths)} bundles in {args.out}")


def train_command(args: argparse.Namespace) -> None:
    cfg = _run_config(
        args,
        {
            "variant.peak_encoder": args.peak_encoder,
            "train.epochs": args.epochs,
            "train.batch_size": args.batch_size,
        },
    )
    features, _ = load_features(args.features)
    pairs = make_pairs(features, seed=cfg.seed, max_rt_diff=args.max_rt_diff)
    params, history = train(pairs, cfg.variant, cfg.train)
    save_weights(params, args.out)
    history_path = args.history or sidecar(args.out, "history.csv")
    save_history(history, history_path)
    final = [h for h in history if h.split == "validation" and h.output == "main"][-1]
    print(f"Trained variant {cfg.variant.id} on {len(pairs)} pairs")
    print(f"Final validation loss {final.loss:.4f}, accuracy {final.accuracy:.3f}")
    print(f"Weights: {args.out}")
    print(f"History: {history_path}")


def align_command(args: argparse.Namespace) -> None:
    cfg = _run_config(
        args,
        {
            "align.rt_cutoff": args.rt_cutoff,
            "align.cut_distance": args.cut_distance,
            "align.group_rt_weighting": args.weighting,
        },
    )
    params = load_weights(args.weights)
    features, _ = load_features(args.features)
    results = predict_all_pairs(params, features, cfg.align.rt_cutoff)
    result = align(params, features, cfg.align, model_id=Path(args.weights).stem, results=results)
    write_alignment_report(result, features, args.out)
    if args.scores_out:
        write_pair_scores(results, args.scores_out)
    print(f"Aligned {len(features)} peaks into {result.n_groups} groups")
    print(f"Report: {args.out}")


def evaluate_command(args: argparse.Namespace) -> None:
    cfg = _run_config(args)
    rows, result = load_alignment_report(args.report)
    truth = load_truth(args.truth)
    groups = match_truth(
        truth, [(r.sample_id, r.mz, r.rt_apex) for r in rows], cfg.match_tolerance
    )
    group_metrics = group_tp_fdr(result, groups)
    confusion = roc = None
    if args.scores:
        scores, labels = pair_labels(groups, load_pair_scores(args.scores, n=len(rows)))
        confusion = pairwise_confusion(scores, labels, args.threshold)
        try:
            roc = roc_auc(scores, labels)
        except UndefinedMetricError as exc:
            logger.warning("no ROC curve: %s", exc)
    payload = build_metrics_payload(group_metrics, confusion, roc, result.provenance)
    write_metrics(payload, args.out)
    print(f"Group TP rate {group_metrics.tp_rate:.4f}, FDR {group_metrics.fdr:.4f}")
    if roc is not None:
        roc_path = args.roc_out or sidecar(args.out, "roc.csv")
        write_roc(roc, roc_path)
        print(f"Pairwise AUC {roc.auc:.4f}; ROC points: {roc_path}")
    print(f"Metrics: {args.out}")


def benchmark_command(args: argparse.Namespace) -> None:
    cfg = _run_config(args, {"align.rt_cutoff": args.rt_cutoff})
    params = load_weights(args.weights)
    features, _ = load_features(args.features)
    sizes = args.sizes or default_sizes(len(features))
    rows = benchmark_predictions(params, features, sizes, cfg.align.rt_cutoff, args.repeats)
    try:
        fit = runtime_fit(rows)
    except (ArgumentError, UndefinedMetricError) as exc:
        logger.warning("no runtime fit: %s", exc)
        fit = None
    write_timing(rows, fit, args.out)
    for row in rows:
        print(f"{row.peaks:>6} peaks {row.combinations:>10} combinations {row.seconds:.4f}s")
    if fit is not None:
        print(f"seconds = {fit.slope:.3e} * combinations + {fit.intercept:.3e}")
        print(f"R^2 {fit.r_squared:.4f}")


def rule_align_command(args: argparse.Namespace) -> None:
    cfg = _run_config(
        args,
        {
            "rules.max_linear_shift": args.max_linear_shift,
            "rules.max_diff_peak2mean": args.max_diff_peak2mean,
            "rules.min_diff_peak2peak": args.min_diff_peak2peak,
        },
    )
    peaks = load_peak_table(args.peaks)
    dt = min(m.dt for m in load_matrices(args.matrices)) if args.matrices else None
    result = rule_align(peaks, cfg.rules, reference=args.reference, dt=dt)
    write_alignment_report(result, peaks, args.out)
    print(f"Rule-aligned {len(peaks)} peaks into {result.n_groups} groups")
    print(f"Report: {args.out}")


def config_command(args: argparse.Namespace) -> None:
    text = "\n".join(run_config_lines(_run_config(args))) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"Run configuration: {args.out}")
    else:
        print(text, end="")


def run_command(args: argparse.Namespace) -> None:
    cfg = _run_config(args)
    state: dict[str, Any] = {"run_config": cfg}
    if args.out:
        state["output_dir"] = args.out
    result = build_pipeline_graph().invoke(state)
    metrics = result["metrics"]
    print(f"Detected {len(result['peaks'])} peaks; trained variant {cfg.variant.id}")
    print(f"Aligned into {result['alignment'].n_groups} groups")
    print(f"Group TP rate {metrics['group']['tp_rate']:.4f}, FDR {metrics['group']['fdr']:.4f}")
    if "auc" in metrics:
        print(f"Held-out pairwise AUC {metrics['auc']:.4f}")
    for path in result.get("written", []):
        print(f"- {path}")


def _common(parser: argparse.ArgumentParser, seeded: bool = False) -> None:
    parser.add_argument("--config", help="run-config file of 'section.key = value' lines")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one run-config key; repeatable; flags still win",
    )
    if seeded:
        parser.add_argument("--seed", type=int, help=_describe("seed", "random seed"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chromalign", description="GC-MS peak alignment with a Siamese similarity network"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Generate synthetic matrices and truth")
    _common(simulate, seeded=True)
    simulate.add_argument("--out", required=True, help="output directory")
    simulate.add_argument("--preset", choices=sorted(PRESETS), help="start from a preset")
    simulate.add_argument("--samples", type=int, help=_describe("synth.n_samples", "samples"))
    simulate.add_argument(
        "--compounds", type=int, help=_describe("synth.n_compounds", "compounds")
    )
    simulate.set_defaults(func=simulate_command)

    detect = sub.add_parser("detect", help="Baseline-correct and detect peaks")
    _common(detect)
    detect.add_argument("--matrices", required=True, help="directory of matrix CSVs")
    detect.add_argument("--out", required=True, help="peak table CSV")
    detect.add_argument(
        "--truth",
        help="truth CSV; labels peaks with planted groups, channels default to synth.target_mz",
    )
    detect.add_argument(
        "--mz",
        type=int,
        action="append",
        help=_describe("channels", "m/z channel (Da), repeatable"),
    )
    detect.set_defaults(func=detect_command)

    features = sub.add_parser("features", help="Build network inputs for detected peaks")
    _common(features)
    features.add_argument("--matrices", required=True, help="directory of matrix CSVs")
    features.add_argument("--peaks", required=True, help="peak table CSV")
    features.add_argument("--out", required=True, help="directory of feature bundles")
    features.set_defaults(func=features_command)

    train_cmd = sub.add_parser("train", help="Train the Siamese model on labeled features")
    _common(train_cmd, seeded=True)
    train_cmd.add_argument("--features", required=True, help="directory of feature bundles")
    train_cmd.add_argument("--out", required=True, help="weights JSON")
    train_cmd.add_argument("--history", help="history CSV (default: <out stem>.history.csv)")
    train_cmd.add_argument("--variant", help="variant id 01-31; default 01")
    train_cmd.add_argument(
        "--peak-encoder",
        choices=["full", "simplified", "none"],
        help=_describe("variant.peak_encoder", "peak encoder"),
    )
    train_cmd.add_argument("--epochs", type=int, help=_describe("train.epochs", "epochs"))
    train_cmd.add_argument(
        "--batch-size", type=int, help=_describe("train.batch_size", "pairs per update")
    )
    train_cmd.add_argument(
        "--max-rt-diff",
        type=float,
        help="only pair peaks within this many minutes; default no limit",
    )
    train_cmd.set_defaults(func=train_command)

    align_cmd = sub.add_parser("align", help="Score pairs and group peaks")
    _common(align_cmd)
    align_cmd.add_argument("--weights", required=True, help="weights JSON")
    align_cmd.add_argument("--features", required=True, help="directory of feature bundles")
    align_cmd.add_argument("--out", required=True, help="alignment report CSV")
    align_cmd.add_argument("--scores-out", help="pair scores CSV (i,j,probability,within_cutoff)")
    align_cmd.add_argument("--rt-cutoff", type=float, help=_describe("align.rt_cutoff"))
    align_cmd.add_argument("--cut-distance", type=float, help=_describe("align.cut_distance"))
    align_cmd.add_argument(
        "--weighting",
        choices=["area", "height"],
        help=_describe("align.group_rt_weighting", "group RT weighting"),
    )
    align_cmd.set_defaults(func=align_command)

    evaluate = sub.add_parser("evaluate", help="Score an alignment report against truth")
    _common(evaluate)
    evaluate.add_argument("--report", required=True, help="alignment report CSV")
    evaluate.add_argument("--truth", required=True, help="truth CSV")
    evaluate.add_argument("--scores", help="pair scores CSV; enables ROC output")
    evaluate.add_argument("--out", required=True, help="metrics JSON")
    evaluate.add_argument("--roc-out", help="ROC CSV (default: <out stem>.roc.csv)")
    evaluate.add_argument(
        "--threshold",
        type=float,
        default=0.5,
        help="probability counted as a positive call; default %(default)s",
    )
    evaluate.set_defaults(func=evaluate_command)

    benchmark = sub.add_parser("benchmark", help="Time pair prediction against combinations")
    _common(benchmark)
    benchmark.add_argument("--weights", required=True, help="weights JSON")
    benchmark.add_argument("--features", required=True, help="directory of feature bundles")
    benchmark.add_argument("--out", required=True, help="timing CSV (combinations,seconds)")
    benchmark.add_argument(
        "--sizes",
        type=int,
        nargs="+",
        help="peak counts to time; default five even steps up to all peaks",
    )
    benchmark.add_argument("--rt-cutoff", type=float, help=_describe("align.rt_cutoff"))
    benchmark.add_argument(
        "--repeats", type=int, default=1, help="runs per size, fastest kept; default %(default)s"
    )
    benchmark.set_defaults(func=benchmark_command)

    rules = sub.add_parser("rule-align", help="Three-stage rule-based alignment of a peak table")
    _common(rules)
    rules.add_argument("--peaks", required=True, help="peak table CSV")
    rules.add_argument("--out", required=True, help="alignment report CSV")
    rules.add_argument(
        "--reference", default="auto", help="reference sample id or 'auto'; default %(default)s"
    )
    rules.add_argument(
        "--max-linear-shift", type=float, help=_describe("rules.max_linear_shift", "stage 1 shift")
    )
    rules.add_argument(
        "--max-diff-peak2mean",
        type=float,
        help=_describe("rules.max_diff_peak2mean", "stage 2 distance to group mean"),
    )
    rules.add_argument(
        "--min-diff-peak2peak",
        type=float,
        help=_describe("rules.min_diff_peak2peak", "stage 3 merge distance"),
    )
    rules.add_argument(
        "--matrices", help="directory of matrix CSVs; their sampling interval sets the shift grid"
    )
    rules.set_defaults(func=rule_align_command)

    config = sub.add_parser("config", help="Print every run-config key with default and unit")
    _common(config, seeded=True)
    config.add_argument("--out", help="write to a file instead of stdout")
    config.set_defaults(func=config_command)

    run = sub.add_parser("run", help="Simulate, detect, train, align and evaluate in one go")
    _common(run, seeded=True)
    run.add_argument("--preset", choices=sorted(PRESETS), help="synthetic data preset")
    run.add_argument("--variant", help="variant id 01-31; default 01")
    run.add_argument("--out", help="directory for every intermediate and report file")
    run.set_defaults(func=run_command)

    return parser


def main(argv: list[str] | None = None) -> int:
    settings = get_settings()
    logging.basicConfig(level=settings.log_level, format=settings.log_format)
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except INPUT_ERRORS as exc:
        logger.error("%s", exc)
        return 2
    except ChromAlignError as exc:
        logger.error("%s", exc)
        return 1
    return 0
