import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import (
    BaseModel,
    Field,
    SecretStr,
    ValidationError,
    field_validator,
    model_validator,
)
from pydantic_settings import BaseSettings, SettingsConfigDict

from .exceptions import ConfigError

GRAPH_FORMAT = Literal["tsv", "jsonl"]
BACKEND_KIND = Literal["scripted", "http"]


class LoggingConfig(BaseSettings):
    """Logfire output for graphmind. Off until ``enable_logfire`` is called."""

    is_enabled: bool = Field(False, description="Emit spans and records through logfire")
    service_name: str = Field("graphmind", description="Service name attached to every span")
    console: bool = Field(True, description="Also print records to the terminal")
    model_config = SettingsConfigDict(env_prefix="GRAPHMIND_LOG_", extra="forbid")

    def enable_logfire(self, **kwargs) -> None:
        """Configure logfire and start emitting.

        Keyword arguments go to ``logfire.configure`` and win over the fields above.
        """
        try:
            import logfire
            from logging import basicConfig
        except ImportError as e:
            raise ImportError(
                "graphmind logging needs logfire: `pip install logfire`"
            ) from e

        options = {
            "service_name": self.service_name,
            "send_to_logfire": "if-token-present",
            **({} if self.console else {"console": False}),
            **kwargs,
        }
        try:
            logfire.configure(**options)
            basicConfig(handlers=[logfire.LogfireLoggingHandler()])
        except Exception as e:
            self.is_enabled = False
            raise RuntimeError(f"Could not configure logfire: {e}") from e
        self.is_enabled = True

    def disable_logfire(self) -> None:
        """Stop emitting; spans already sent are unaffected."""
        self.is_enabled = False


class Settings(BaseSettings):
    """Process-wide defaults, read from the environment and `.env`."""

    DEFAULT_API_KEY_ENV: str = Field(
        "GRAPHMIND_API_KEY",
        description="Environment variable holding the HTTP backend credential",
    )

    model_config = SettingsConfigDict(
        env_file=".env", env_file_encoding="utf-8", case_sensitive=True, extra="ignore"
    )
    logging: LoggingConfig = Field(default_factory=LoggingConfig)

    @field_validator("DEFAULT_API_KEY_ENV", mode="before")
    @classmethod
    def blank_means_default(cls, v: Optional[str]) -> str:
        return v or "GRAPHMIND_API_KEY"

    def get_api_key(self, env_var: str | None = None) -> Union[str, None]:
        """Read the credential stored in ``env_var`` (or the default variable)."""
        value = os.environ.get(env_var or self.DEFAULT_API_KEY_ENV)
        if not value:
            return None
        return SecretStr(value).get_secret_value()


settings = Settings()


# Run configuration.


class ChainConfig(BaseModel):
    """Budgets and caps for one reasoning chain, defaults per the reference setup."""

    max_turns: int = Field(10, ge=1, description="Reasoning turns per sub-question")
    n_q: int = Field(4, ge=1, description="Max number of sub-questions per query")
    n_r: int = Field(5, ge=1, description="Max retrieval calls per sub-question")
    k: int = Field(10, ge=1, description="Max neighbors per relation")
    h: int = Field(3, ge=1, description="Max graph hop length")
    n: int = Field(5, ge=1, description="Max chains per entity pair")
    tau: float = Field(0.7, gt=0.0, le=1.0, description="Entity similarity threshold")


class SamplingParams(BaseModel):
    temperature: float = Field(0.7, ge=0.0)
    top_p: float = Field(0.8, gt=0.0, le=1.0)
    top_k: int = Field(20, ge=0)
    repetition_penalty: float = Field(1.05, ge=1.0)


class StageSampling(BaseModel):
    """Sampling per stage: reasoning runs hotter than decomposition and synthesis."""

    retrieval: SamplingParams = Field(default_factory=SamplingParams)
    decompose: SamplingParams = Field(
        default_factory=lambda: SamplingParams(temperature=0.6)
    )
    synthesize: SamplingParams = Field(
        default_factory=lambda: SamplingParams(temperature=0.6)
    )


class PipelineConfig(BaseModel):
    """Everything the pipeline needs besides the graph and the backend."""

    chain: ChainConfig = Field(default_factory=ChainConfig)
    sampling: StageSampling = Field(default_factory=StageSampling)
    max_input_tokens: int = Field(32_768, ge=1)
    chars_per_token: int = Field(4, ge=1)
    max_tokens: int = Field(2_048, ge=1)
    prompts_dir: Optional[Path] = None
    conflict_rules: List[Tuple[str, str]] = Field(
        default_factory=lambda: [("treats", "causes")]
    )
    synonyms: Dict[str, str] = Field(default_factory=dict)
    relations: Optional[List[str]] = None
    use_decomposer: bool = True
    use_synthesizer: bool = True
    parallelism: Optional[int] = Field(None, ge=1)

    @property
    def max_input_chars(self) -> int:
        return self.max_input_tokens * self.chars_per_token

    @field_validator("conflict_rules")
    @classmethod
    def rules_not_empty(cls, v: List[Tuple[str, str]]) -> List[Tuple[str, str]]:
        if not v:
            raise ValueError("at least one conflict rule is required")
        return v


class GraphSource(BaseModel):
    path: Path
    format: GRAPH_FORMAT = "tsv"

    @model_validator(mode="before")
    @classmethod
    def infer_format(cls, data: Any) -> Any:
        if isinstance(data, dict) and not data.get("format") and data.get("path"):
            suffix = Path(str(data["path"])).suffix.lower()
            data = {**data, "format": "jsonl" if suffix == ".jsonl" else "tsv"}
        return data


class BackendConfig(BaseModel):
    kind: BACKEND_KIND
    script: Optional[Path] = None
    endpoint: Optional[str] = None
    model: Optional[str] = None
    api_key_env: Optional[str] = None
    timeout: float = Field(60.0, gt=0.0)
    max_retries: int = Field(3, ge=0)

    @model_validator(mode="after")
    def exactly_one_backend(self) -> "BackendConfig":
        if self.kind == "scripted":
            if self.script is None:
                raise ValueError("a scripted backend needs `script`")
            if self.endpoint is not None:
                raise ValueError("a scripted backend takes no `endpoint`")
        else:
            if self.endpoint is None:
                raise ValueError("an http backend needs `endpoint`")
            if self.script is not None:
                raise ValueError("an http backend takes no `script`")
        return self


# Keys holding paths that are resolved against the config file's directory.
_PATH_KEYS = (
    ("graph", "path"),
    ("backend", "script"),
    ("pipeline", "prompts_dir"),
    ("conflict_rules_file",),
    ("synonyms_file",),
    ("audit_dir",),
)


class RunConfig(BaseSettings):
    """One run: graph, backend and pipeline settings.

    Values come from, in order of precedence: explicit overrides (CLI flags),
    the config file, ``GRAPHMIND_*`` environment variables, and defaults.
    """

    graph: GraphSource
    backend: BackendConfig
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    conflict_rules_file: Optional[Path] = None
    synonyms_file: Optional[Path] = None
    audit_dir: Optional[Path] = None

    model_config = SettingsConfigDict(
        env_prefix="GRAPHMIND_", env_nested_delimiter="__", extra="forbid"
    )

    @classmethod
    def from_file(
        cls, path: Union[str, Path, None], overrides: Optional[Dict[str, Any]] = None
    ) -> "RunConfig":
        """Load a JSON config file, then apply ``overrides`` on top of it."""
        data: Dict[str, Any] = {}
        if path is not None:
            path = Path(path)
            try:
                data = json.loads(path.read_text(encoding="utf-8"))
            except OSError as e:
                raise ConfigError(f"Cannot read config file {str(path)!r}: {e}") from e
            except json.JSONDecodeError as e:
                raise ConfigError(f"Config file {str(path)!r} is not JSON: {e}") from e
            if not isinstance(data, dict):
                raise ConfigError(f"Config file {str(path)!r} must hold an object.")
            _resolve_paths(data, path.parent)

        data = _deep_merge(data, overrides or {})
        try:
            return cls(**data)
        except ValidationError as e:
            missing = [
                ".".join(str(p) for p in err["loc"])
                for err in e.errors()
                if err["type"] == "missing"
            ]
            if missing:
                raise ConfigError("Incomplete configuration.", missing=missing) from e
            raise ConfigError(f"Invalid configuration: {e}") from e

    def pipeline_config(self) -> PipelineConfig:
        """The pipeline settings with rule and synonym files folded in."""
        update: Dict[str, Any] = {}
        if self.conflict_rules_file is not None:
            rules = _read_json(self.conflict_rules_file)
            if not isinstance(rules, list) or not all(
                isinstance(r, list) and len(r) == 2 for r in rules
            ):
                raise ConfigError(
                    f"{str(self.conflict_rules_file)!r} must be a JSON array of "
                    "2-element relation-name arrays."
                )
            update["conflict_rules"] = [tuple(r) for r in rules]
        if self.synonyms_file is not None:
            synonyms = _read_json(self.synonyms_file)
            if not isinstance(synonyms, dict):
                raise ConfigError(
                    f"{str(self.synonyms_file)!r} must be a JSON object."
                )
            update["synonyms"] = synonyms
        if not update:
            return self.pipeline
        return PipelineConfig.model_validate(
            {**self.pipeline.model_dump(), **update}
        )


def _read_json(path: Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot load {str(path)!r}: {e}") from e


def _resolve_paths(data: Dict[str, Any], base: Path) -> None:
    for keys in _PATH_KEYS:
        node = data
        for key in keys[:-1]:
            node = node.get(key) if isinstance(node, dict) else None
            if node is None:
                break
        if not isinstance(node, dict):
            continue
        value = node.get(keys[-1])
        if isinstance(value, str) and value and not Path(value).is_absolute():
            node[keys[-1]] = str(base / value)


def _deep_merge(base: Dict[str, Any], other: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in other.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged
