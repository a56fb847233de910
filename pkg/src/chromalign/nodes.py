from __future__ import annotations

import logging
from pathlib import Path
from typing import TypedDict

from langgraph.graph import END

from .errors import UndefinedMetricError
from .evaluation import RocCurve, group_tp_fdr, pair_labels, pairwise_confusion, roc_auc
from .features import PeakFeatures, build_feature_set
from .grouping import PairwiseResults, align, predict_all_pairs
from .ingest import ChromatogramMatrix
from .model import ModelParams
from .reporting import (
    build_metrics_payload,
    write_alignment_report,
    write_metrics,
    write_pair_scores,
    write_roc,
)
from .schemas import AlignmentResult, FeatureConfig, HistoryRecord, Peak, RunConfig, TruthRecord
from .signal_processing import detect_matrix
from .storage import save_history, save_matrices, save_truth, save_weights
from .synthdata import generate, truth_to_labels
from .training import PairExample, make_pairs, train

logger = logging.getLogger(__name__)


class GraphState(TypedDict, total=False):
    run_config: RunConfig
    output_dir: str
    matrices: list[ChromatogramMatrix]
    truth: list[TruthRecord]
    peaks: list[Peak]
    feature_config: FeatureConfig
    features: list[PeakFeatures]
    pairs: list[PairExample]
    params: ModelParams
    history: list[HistoryRecord]
    pair_results: PairwiseResults
    holdout_features: list[PeakFeatures]
    holdout_results: PairwiseResults
    alignment: AlignmentResult
    roc: RocCurve | None
    metrics: dict
    written: list[str]


def _config(state: GraphState) -> RunConfig:
    return state.get("run_config") or RunConfig()


def simulate(state: GraphState) -> GraphState:
    synthetic = generate(_config(state).synth)
    return {**state, "matrices": synthetic.matrices, "truth": synthetic.truth}


def _detect_all(matrices: list[ChromatogramMatrix], cfg: RunConfig) -> list[Peak]:
    channels = cfg.detect_channels(synthetic=True)
    peaks: list[Peak] = []
    for matrix in matrices:
        peaks.extend(detect_matrix(matrix, cfg.als, cfg.detect, channels))
    return peaks


def detect(state: GraphState) -> GraphState:
    return {**state, "peaks": _detect_all(state["matrices"], _config(state))}


def has_truth(state: GraphState) -> str:
    return "label" if state.get("truth") else "extract"


def label(state: GraphState) -> GraphState:
    cfg = _config(state)
    labeled = truth_to_labels(state["truth"], state["peaks"], cfg.match_tolerance)
    return {**state, "peaks": labeled}


def extract(state: GraphState) -> GraphState:
    features, feature_config = build_feature_set(
        state["matrices"], state["peaks"], _config(state).features
    )
    return {**state, "features": features, "feature_config": feature_config}


def fit(state: GraphState) -> GraphState:
    cfg = _config(state)
    pairs = make_pairs(state["features"], seed=cfg.seed)
    params, history = train(pairs, cfg.variant, cfg.train)
    return {**state, "pairs": pairs, "params": params, "history": history}


def align_peaks(state: GraphState) -> GraphState:
    cfg = _config(state)
    results = predict_all_pairs(state["params"], state["features"], cfg.align.rt_cutoff)
    alignment = align(state["params"], state["features"], cfg.align, results=results)
    return {**state, "pair_results": results, "alignment": alignment}


def holdout(state: GraphState) -> GraphState:
    """Score every pair of fresh samples of the same compounds, unseen in training."""
    cfg = _config(state)
    seed = cfg.resolved_holdout_seed()
    draw = generate(cfg.synth, sample_seed=seed)
    peaks = truth_to_labels(draw.truth, _detect_all(draw.matrices, cfg), cfg.match_tolerance)
    features, _ = build_feature_set(draw.matrices, peaks, state["feature_config"])
    results = predict_all_pairs(state["params"], features, cfg.align.rt_cutoff)
    logger.info("held-out samples (seed %d): %d peaks", seed, len(features))
    return {**state, "holdout_features": features, "holdout_results": results}


def evaluate(state: GraphState) -> GraphState:
    features = state["features"]
    alignment = state["alignment"]
    groups = group_tp_fdr(alignment, [f.group for f in features])
    scores, labels = pair_labels(state["holdout_features"], state["holdout_results"])
    try:
        roc = roc_auc(scores, labels)
    except UndefinedMetricError as exc:
        logger.warning("no ROC for this run: %s", exc)
        roc = None
    confusion = pairwise_confusion(scores, labels)
    payload = build_metrics_payload(groups, confusion, roc, alignment.provenance)
    payload["holdout"] = {
        "seed": _config(state).resolved_holdout_seed(),
        "peaks": len(state["holdout_features"]),
        "pairs": int(labels.size),
    }
    return {**state, "metrics": payload, "roc": roc}


def wants_report(state: GraphState) -> str:
    return "report" if state.get("output_dir") else END


def report(state: GraphState) -> GraphState:
    out = Path(state["output_dir"])
    written = save_matrices(state["matrices"], out / "matrices")
    if state.get("truth"):
        written.append(save_truth(state["truth"], out / "truth.csv"))
    written.append(save_weights(state["params"], out / "weights.json"))
    written.append(save_history(state["history"], out / "history.csv"))
    written.extend(
        write_alignment_report(state["alignment"], state["features"], out / "alignment.csv")
        .values()
    )
    written.append(write_pair_scores(state["pair_results"], out / "pairs.csv"))
    written.append(write_metrics(state["metrics"], out / "metrics.json"))
    if state.get("roc") is not None:
        written.append(write_roc(state["roc"], out / "roc.csv"))
    return {**state, "written": [str(p) for p in written]}
