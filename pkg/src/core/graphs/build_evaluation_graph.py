from langgraph.graph import END, StateGraph

from src.core.nodes.ap_scoring_node import score_detections
from src.core.nodes.config import hydrate_from_env
from src.core.nodes.detection_filter_node import filter_detections
from src.core.nodes.frame_loader_node import ensure_frames_loaded
from src.core.state import EvaluationState


def build_evaluation_graph():
    g = StateGraph(EvaluationState)

    g.set_entry_point("hydrate")
    g.add_node("hydrate", hydrate_from_env)
    g.add_node("load_frames", ensure_frames_loaded)
    g.add_node("filter_detections", filter_detections)
    g.add_node("score_detections", score_detections)

    g.add_edge("hydrate", "load_frames")
    g.add_edge("load_frames", "filter_detections")
    g.add_edge("filter_detections", "score_detections")
    g.add_edge("score_detections", END)

    return g
