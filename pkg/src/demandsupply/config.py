"""Run configuration: a YAML tree mapped onto dataclasses.

Every field has a default, unknown keys are rejected with their dotted path,
and :func:`config_hash` fingerprints the resolved tree.
"""

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field

import yaml

from .data import Schema, SyntheticSpec
from .errors import UsageError
from .supply import CostParams
from .trainer import TrainConfig

TOGGLES = ("no-embeddings", "no-augmentation", "forecast-only", "supply-only")
OUT_ENV = "DEMANDSUPPLY_OUT"


@dataclass
class DataConfig:
    source: str = "synthetic"
    path: str = None
    schema: Schema = field(default_factory=Schema)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    state_defaults: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in ("synthetic", "csv"):
            raise UsageError(f"data.source must be 'synthetic' or 'csv', got '{self.source}'", "config")
        if self.source == "csv" and not self.path:
            raise UsageError("data.path is required for csv sources", "config")


@dataclass
class PreprocessConfig:
    window: int = 30
    fractions: tuple = (0.70, 0.15, 0.15)
    augment: bool = True
    noise_sigma: float = 0.05
    supplier_dropout: float = 0.1

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        if self.window < 1:
            raise UsageError("preprocess.window must be positive", "config")


@dataclass
class ModelConfig:
    cell: str = "lstm"
    embed_dim: int = 32
    hidden: tuple = (128, 64)
    dense: int = 32
    recurrent_dropout: float = 0.2
    dropout: float = 0.2
    stochastic_head: bool = False
    decision_hidden: tuple = (64, 32)
    decision_dropout: float = 0.3

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.decision_hidden = tuple(int(h) for h in self.decision_hidden)
        if self.cell not in ("lstm", "gru", "rnn"):
            raise UsageError(f"model.cell must be lstm, gru or rnn, got '{self.cell}'", "config")


@dataclass
class SupplierEntry:
    name: str = "s0"
    reliability: float = 1.0
    lead_time: float = 0.0


@dataclass
class CostConfig:
    alpha: float = 1.0
    beta: float = 1.0
    rho_demand: float = 10.0
    rho_lead: float = 10.0
    rho_rel: float = 10.0
    tau: float = 0.1
    catalog: typing.List[SupplierEntry] = field(default_factory=list)

    def params(self):
        return CostParams(self.alpha, self.beta, self.rho_demand, self.rho_lead, self.rho_rel, self.tau)


@dataclass
class EvaluationConfig:
    seeds: tuple = (0, 1, 2, 3, 4)
    lead_times: str = "zero"
    holding: str = "end"
    eoq_order_cost: float = 50.0
    reorder_z: float = 1.645
    ar_order: int = 12
    seasonal_period: int = 12
    compare_against: str = "gru"
    ablation: tuple = TOGGLES
    sweep: dict = field(default_factory=lambda: {"lr": [1e-4, 5e-4, 1e-3], "batch_size": [32, 64, 128],
                                                 "embed_dim": [16, 32, 64]})

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.ablation = tuple(self.ablation)
        if not self.seeds:
            raise UsageError("evaluation.seeds must not be empty", "config")
        if self.lead_times not in ("zero", "state"):
            raise UsageError("evaluation.lead_times must be 'zero' or 'state'", "config")
        if self.holding not in ("end", "average"):
            raise UsageError("evaluation.holding must be 'end' or 'average'", "config")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    out: str = None
    workers: int = 1


def _build(cls, raw, path):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise UsageError(f"config section '{path or '<root>'}' must be a mapping", "config")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        where = ", ".join(f"{path}.{k}" if path else k for k in unknown)
        raise UsageError(f"unknown config key(s): {where}", "config")
    kwargs = {}
    for name, value in raw.items():
        hint = hints.get(name)
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, sub)
        elif typing.get_origin(hint) in (list, typing.List) and typing.get_args(hint) \
                and dataclasses.is_dataclass(typing.get_args(hint)[0]):
            kwargs[name] = [_build(typing.get_args(hint)[0], v, f"{sub}[{k}]") for k, v in enumerate(value or [])]
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise UsageError(f"invalid config section '{path or '<root>'}': {exc}", "config") from None


def from_dict(raw):
    return _build(RunConfig, raw, "")


def load_config(path):
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}", "config") from None
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path} is not valid YAML: {exc}", "config") from None
    return from_dict(raw or {})


def _plain(x):
    if dataclasses.is_dataclass(x):
        return {f.name: _plain(getattr(x, f.name)) for f in dataclasses.fields(x)}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    return x


def to_dict(cfg):
    return _plain(cfg)


def dump_config(cfg, path):
    with open(path, "w") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=True)


def config_hash(cfg):
    """Fingerprint of everything that affects results (output location and worker count excluded)."""
    tree = to_dict(cfg)
    tree.pop("out", None)
    tree.pop("workers", None)
    blob = json.dumps(tree, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def tiny_config():
    """Small architecture used by gradient checks and quick runs."""
    cfg = RunConfig()
    cfg.preprocess.window = 5
    cfg.model = ModelConfig(embed_dim=2, hidden=(4,), dense=4, decision_hidden=(4, 3))
    return cfg
