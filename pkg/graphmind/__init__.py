from pathlib import Path
from typing import Tuple, Union

from .audit import emit_audit, load_audit, replay
from .backends import BaseBackend, generate, load_script
from .coordinator import Workspace, prepare_graph, run_pipeline
from .decomposer import decompose, parse_decomposition
from .graph import KnowledgeGraph, find_chains, generate_graph, load_graph, neighbors, stats
from .linker import embed, link, similarity
from .models import AuditRecord
from .protocol import detect_termination, extract_search_block, render_result_block
from .retriever import kg_search, merge_evidence, run_chain, verbalize
from .settings import ChainConfig, PipelineConfig, RunConfig, settings
from .synthesizer import detect_conflicts, resolve, support_score, synthesize_final
from .utils import create_backend, find_backend


class Session:
    """A session object that keeps a graph, a backend and pipeline settings
    across queries.

    Similar to `requests.Session`, configure once and call `ask` repeatedly.
    """

    def __init__(
        self,
        graph: Union[KnowledgeGraph, str, Path],
        backend: BaseBackend,
        *,
        config: PipelineConfig | None = None,
    ):
        self.config = config or PipelineConfig()
        if not isinstance(graph, KnowledgeGraph):
            graph = load_graph(graph)
        self.graph = prepare_graph(graph, self.config)
        self.backend = backend

    @classmethod
    def from_config(cls, run_config: RunConfig) -> "Session":
        """Build a session from a run configuration file's contents."""
        graph = load_graph(run_config.graph.path, run_config.graph.format)
        return cls(
            graph,
            create_backend(run_config.backend),
            config=run_config.pipeline_config(),
        )

    def ask(self, query: str) -> Tuple[str, AuditRecord]:
        """Answer ``query``; returns the final answer and its audit record."""
        return run_pipeline(query, self.graph, self.config, self.backend)

    def close(self) -> None:
        self.backend.close()

    def __enter__(self) -> "Session":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def enable_logfire(**kwargs) -> None:
    """Send spans and records to logfire; kwargs go to ``logfire.configure``."""
    settings.logging.enable_logfire(**kwargs)


def disable_logfire() -> None:
    settings.logging.disable_logfire()


__all__ = [
    "AuditRecord",
    "ChainConfig",
    "KnowledgeGraph",
    "PipelineConfig",
    "RunConfig",
    "Session",
    "Workspace",
    "create_backend",
    "decompose",
    "detect_conflicts",
    "detect_termination",
    "disable_logfire",
    "embed",
    "emit_audit",
    "enable_logfire",
    "extract_search_block",
    "find_backend",
    "find_chains",
    "generate",
    "generate_graph",
    "kg_search",
    "link",
    "load_audit",
    "load_graph",
    "load_script",
    "merge_evidence",
    "neighbors",
    "parse_decomposition",
    "render_result_block",
    "replay",
    "resolve",
    "run_chain",
    "run_pipeline",
    "settings",
    "similarity",
    "stats",
    "support_score",
    "synthesize_final",
    "verbalize",
]
