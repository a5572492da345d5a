"""Run configuration and its key=value file format."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .encoder import EncoderConfig
from .errors import ConfigError
from .graph import InjectionSpec, SBMSpec


@dataclass(frozen=True)
class RunConfig:
    # data: either files, or a synthetic block model (optionally with injected anomalies)
    nodes: str | None = None
    edges: str | None = None
    labels: str | None = None
    sbm_blocks: int = 2
    sbm_per_block: int = 150
    sbm_p_in: float = 0.05
    sbm_p_out: float = 0.005
    sbm_d: int = 16
    sbm_seed: int = 0
    sbm_mean_scale: float = 3.0
    sbm_noise: float = 1.0
    inject_cliques: int = 2
    inject_clique_size: int = 5
    inject_candidates: int = 50
    inject_seed: int = 0
    # model
    k: int = 2
    d_h: int = 128
    heads: int = 4
    layers: int = 1
    m: int = 512
    memory_similarity: str = "cosine"
    unit_queries: bool = False
    distance: str = "squared"
    ratio: float = 0.8
    beta: float = 0.5
    lambda_s: float = 1.0
    lambda_n: float = 0.01
    lambda_m: float = 0.01
    # optimisation
    lr: float = 1e-3
    epochs: int = 100
    seed: int = 0
    no_memory: bool = False
    no_structure_extractor: bool = False
    score_every: int = 0
    output_dir: str = "runs/latest"
    cache_dir: str | None = None

    def __post_init__(self):
        for name in ("lambda_s", "lambda_n", "lambda_m"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigError("ratio must be in (0, 1]")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if (self.nodes is None) != (self.edges is None):
            raise ConfigError("nodes and edges must be given together")
        self.encoder  # validates k / d_h / heads / layers

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(k=self.k, d_h=self.d_h, heads=self.heads, layers=self.layers)

    @property
    def lambdas(self) -> tuple[float, float, float]:
        return self.lambda_s, self.lambda_n, self.lambda_m

    @property
    def synthetic(self) -> bool:
        return self.nodes is None

    def sbm_spec(self) -> SBMSpec:
        return SBMSpec(self.sbm_blocks, self.sbm_per_block, self.sbm_p_in, self.sbm_p_out,
                       self.sbm_d, self.sbm_seed, self.sbm_mean_scale, self.sbm_noise)

    def injection_spec(self) -> InjectionSpec:
        return InjectionSpec(self.inject_cliques, self.inject_clique_size,
                             self.inject_candidates, self.inject_seed)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(name: str, raw):
    """Convert a string (from a config file or CLI) to the field's type."""
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {name!r}")
    if not isinstance(raw, str):
        return raw
    kind = _FIELD_TYPES[name]
    text = raw.strip()
    if "None" in kind and text.lower() in ("", "none", "null"):
        return None
    try:
        if kind.startswith("bool"):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return text


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines. A leading ``[section]`` header is optional and ignored."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string("[__root__]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            values[key.replace("-", "_")] = coerce(key.replace("-", "_"), raw)
    return values


def build_config(path=None, **overrides) -> RunConfig:
    values = read_config_file(path) if path else {}
    values.update({k: coerce(k, v) for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def write_config_file(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        for k, v in cfg.to_dict().items():
            fh.write(f"{k} = {'none' if v is None else v}\n")
