"""Case-based retrieval and prompting for evasive maneuver recommendation."""

from .casebase import Case, CaseBaseView, CaseStore
from .gateway import GatewayConfig, HttpChat, HttpEmbedder, MockEmbedder, extract_decision
from .metrics import MetricReport, aggregate, bleu4, cider, meteor, rouge_l
from .pipeline import RunConfig, RunRecord, decide_event, run_batch
from .prompts import PromptConfig, assemble
from .retrieval import RetrievalQuery, retrieve_random, retrieve_similar
from .taxonomy import (AnnotatedEvent, Decision, EvasiveManeuver, PromptMode, RiskType, Sampling,
                       ScdsEvent, parse_maneuver, parse_risk_type)

__version__ = "0.1.0"

__all__ = [
    "AnnotatedEvent", "Case", "CaseBaseView", "CaseStore", "Decision", "EvasiveManeuver",
    "GatewayConfig", "HttpChat", "HttpEmbedder", "MetricReport", "MockEmbedder", "PromptConfig",
    "PromptMode", "RetrievalQuery", "RiskType", "RunConfig", "RunRecord", "Sampling", "ScdsEvent",
    "aggregate", "assemble", "bleu4", "cider", "decide_event", "extract_decision", "meteor",
    "parse_maneuver", "parse_risk_type", "retrieve_random", "retrieve_similar", "rouge_l", "run_batch",
]
