from __future__ import annotations

from langgraph.graph import END, StateGraph

from .nodes import (
    GraphState,
    align_peaks,
    detect,
    evaluate,
    extract,
    fit,
    has_truth,
    holdout,
    label,
    report,
    simulate,
    wants_report,
)


def build_pipeline_graph() -> StateGraph:
    graph = StateGraph(GraphState)
    graph.add_node("simulate", simulate)
    graph.add_node("detect", detect)
    graph.add_node("label", label)
    graph.add_node("extract", extract)
    graph.add_node("train", fit)
    graph.add_node("align", align_peaks)
    graph.add_node("holdout", holdout)
    graph.add_node("evaluate", evaluate)
    graph.add_node("report", report)

    graph.set_entry_point("simulate")
    graph.add_edge("simulate", "detect")
    graph.add_conditional_edges("detect", has_truth, {"label": "label", "extract": "extract"})
    graph.add_edge("label", "extract")
    graph.add_edge("extract", "train")
    graph.add_edge("train", "align")
    graph.add_edge("align", "holdout")
    graph.add_edge("holdout", "evaluate")
    graph.add_conditional_edges("evaluate", wants_report, {"report": "report", END: END})
    graph.add_edge("report", END)

    return graph.compile()
