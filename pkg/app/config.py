"""Run configuration: one TOML (or echoed JSON) file with [data], [rule], [network], [train] and [output].

Precedence, lowest first: built-in defaults, ``EGM_TRIAGE_SEED`` from the environment
or ``.env``, the config file, then command flags (``--seed``, ``--out``, ``--set``).
"""

import json
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

from dotenv import find_dotenv, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .dataset_io import write_json
from .errors import ConfigError, DatasetIOError
from .nn.network import NetworkConfig
from .nn.training import TrainConfig
from .rules import RuleParams
from .synthgen import GeneratorConfig

logger = logging.getLogger(__name__)

ENV_SEED = "EGM_TRIAGE_SEED"
RUN_CONFIG_FILE = "run_config.json"
SECTIONS = ("data", "rule", "network", "train", "output")


class DataSection(GeneratorConfig):
    path: Optional[str] = Field(None, description="Dataset directory read by every command except synth")
    disagreement_prob: float = Field(
        0.0, ge=0, le=1, description="Simulated annotator disagreement; 0 disables annotation simulation"
    )

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(**self.model_dump(exclude={"path", "disagreement_prob"}))


class TrainSection(TrainConfig):
    seed: Optional[int] = Field(None, description="Training seed; falls back to [data].seed")


class OutputSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: str = Field("runs/latest", description="Output directory of the command")
    formats: List[Literal["text", "csv", "json"]] = Field(
        ["text", "csv", "json"], description="Metric formats to write"
    )
    plots: bool = Field(False, description="Render SVG plots of misclassified signals")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data: DataSection = Field(default_factory=DataSection)
    rule: RuleParams = Field(default_factory=RuleParams)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    train: TrainSection = Field(default_factory=TrainSection)
    output: OutputSection = Field(default_factory=OutputSection)

    def train_config(self) -> TrainConfig:
        fields = self.train.model_dump()
        if fields["seed"] is None:
            fields["seed"] = self.data.seed
        return TrainConfig(**fields)


def _read_file(path: Path) -> Dict[str, Any]:
    try:
        text = path.read_text()
    except OSError as e:
        raise DatasetIOError(f"Cannot read config file {path}: {e}") from e
    try:
        document = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Cannot parse config file {path}: {e}") from e
    if not isinstance(document, dict):
        raise ConfigError(f"Config file {path} must hold a table of sections")
    # an echoed run_config.json wraps the sections
    if set(document) == {"version", "config"}:
        document = document["config"]
    unknown = sorted(set(document) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"Unknown config section(s): {', '.join(unknown)}")
    return {section: dict(values) for section, values in document.items()}


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_override(raw: Dict[str, Dict[str, Any]], assignment: str) -> None:
    """Apply one ``section.key=value`` override; the value is JSON when it parses, a string otherwise."""
    key, sep, value = assignment.partition("=")
    section, dot, field = key.strip().partition(".")
    if not sep or not dot or not field:
        raise ConfigError(f"Override {assignment!r} must look like section.key=value")
    if section not in SECTIONS:
        raise ConfigError(f"Unknown config section in override: {key}")
    raw.setdefault(section, {})[field] = _parse_value(value.strip())


def _env_seed() -> Optional[int]:
    # .env is looked up from the working directory, not from this package
    load_dotenv(find_dotenv(usecwd=True))
    value = os.getenv(ENV_SEED)
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError as e:
        raise ConfigError(f"{ENV_SEED} must be an integer, got {value!r}") from e


def load_run_config(
    path: Optional[os.PathLike] = None,
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
    out: Optional[os.PathLike] = None,
    data_path: Optional[os.PathLike] = None,
) -> RunConfig:
    """
    Resolve the run configuration.

    Raises:
        ConfigError: on unknown sections or keys and invalid values, naming the offending key
        DatasetIOError: if the config file cannot be read
    """
    raw: Dict[str, Dict[str, Any]] = {}
    env_seed = _env_seed()
    if env_seed is not None:
        raw["data"] = {"seed": env_seed}
    if path is not None:
        for section, values in _read_file(Path(path)).items():
            raw.setdefault(section, {}).update(values)
    for assignment in overrides:
        apply_override(raw, assignment)
    if seed is not None:
        raw.setdefault("data", {})["seed"] = seed
    if out is not None:
        raw.setdefault("output", {})["directory"] = str(out)
    if data_path is not None:
        raw.setdefault("data", {})["path"] = str(data_path)

    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"Invalid configuration: {problems}") from e


def write_run_config(config: RunConfig, directory: os.PathLike) -> Path:
    path = Path(directory) / RUN_CONFIG_FILE
    write_json({"version": __version__, "config": config.model_dump(mode="json")}, path)
    logger.debug("Wrote %s", path)
    return path
