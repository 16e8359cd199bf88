"""Knowledge-graph augmented question answering.

TransE embeddings, GCN refinement, query-focused subgraph retrieval, grounded
answer generation and set-based QA evaluation.
"""

from .errors import KgragError
from .kg_store import KnowledgeGraph, Triple, load_desk_kg, load_store
from .pipeline import Pipeline, PipelineConfig, run_pipeline

__all__ = [
    "KgragError",
    "KnowledgeGraph",
    "Pipeline",
    "PipelineConfig",
    "Triple",
    "load_desk_kg",
    "load_store",
    "run_pipeline",
]

__version__ = "0.1.0"
