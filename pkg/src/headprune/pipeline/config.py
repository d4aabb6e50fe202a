"""Run configuration: JSON in, dataclasses out, unknown keys rejected."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from ..errors import ConfigError
from ..model import BlockSpec, ModelSpec


@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    seed: int = 1
    train_count: int = 2048
    eval_count: int = 512
    classes: int = 10
    train_path: str | None = None
    eval_path: str | None = None

    def validate(self):
        if self.kind not in ("synthetic", "file"):
            raise ConfigError(f"dataset kind must be synthetic or file, got {self.kind!r}")
        if self.kind == "file" and not (self.train_path and self.eval_path):
            raise ConfigError("file datasets need train_path and eval_path")
        if self.kind == "synthetic" and not (1 <= self.classes <= 16):
            raise ConfigError(f"synthetic classes must lie in [1, 16], got {self.classes}")


@dataclass
class AblationFlags:
    reweight: bool = True
    similarity_weight: bool = True
    multihead_adjust: bool = True
    indicator_init: bool = True


@dataclass
class RunConfig:
    model: ModelSpec
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    rho_target: float = 0.5
    tau: float = 0.5
    lam: float = 1.0
    epochs_search: int = 30
    epochs_refine: int = 30
    lr_start: float = 5e-4
    lr_end: float = 5e-6
    weight_decay_search: float = 1e-6
    weight_decay_refine: float = 0.05
    batch_size: int = 128
    seed: int = 0
    decay_indicators: bool = False
    init_batches: int = 8
    init_batch_size: int = 64
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def validate(self):
        if not 0.0 < self.rho_target <= 1.0:
            raise ConfigError(f"rho_target must lie in (0, 1], got {self.rho_target}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        for name in ("lam", "lr_start", "lr_end", "batch_size",
                     "init_batches", "init_batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.epochs_search < 0 or self.epochs_refine < 0:
            raise ConfigError("epoch counts cannot be negative")
        if self.weight_decay_search < 0 or self.weight_decay_refine < 0:
            raise ConfigError("weight decay cannot be negative")
        self.dataset.validate()

    def to_dict(self):
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        if "model" not in raw:
            raise ConfigError("config is missing the model section")
        model = ModelSpec.from_dict(raw.pop("model"))
        dataset = _load_section(DatasetConfig, raw.pop("dataset", {}), "dataset")
        ablation = _load_section(AblationFlags, raw.pop("ablation", {}), "ablation")
        known = {f.name for f in fields(cls)} - {"model", "dataset", "ablation"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(model=model, dataset=dataset, ablation=ablation, **raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
        return cls.from_dict(raw)


def _load_section(cls, raw, label):
    if not isinstance(raw, dict):
        raise ConfigError(f"{label} section must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown {label} fields: {sorted(unknown)}")
    return cls(**raw)


def hybrid_spec(embed_dim=64, heads=4, ffn_hidden=128, num_classes=10):
    """Two linear-attention blocks feeding two original-attention blocks."""
    blocks = (
        BlockSpec("linear", heads, ffn_hidden),
        BlockSpec("linear", heads, ffn_hidden),
        BlockSpec("original", heads, ffn_hidden),
        BlockSpec("original", heads, ffn_hidden),
    )
    return ModelSpec(image_size=32, patch_size=4, embed_dim=embed_dim,
                     num_classes=num_classes, blocks=blocks)


def linear_spec(embed_dim=64, heads=4, ffn_hidden=128, num_classes=10):
    """All-linear stack, the highest-compression preset."""
    blocks = tuple(BlockSpec("linear", heads, ffn_hidden) for _ in range(4))
    return ModelSpec(image_size=32, patch_size=4, embed_dim=embed_dim,
                     num_classes=num_classes, blocks=blocks)


def default_config(preset="hybrid"):
    if preset == "hybrid":
        spec = hybrid_spec()
        wd_refine = 0.05
    elif preset == "linear":
        spec = linear_spec()
        # keep refine decay tiny on the all-linear preset to avoid extra sparsity
        wd_refine = 1e-6
    else:
        raise ConfigError(f"unknown preset {preset!r}")
    return RunConfig(model=spec, weight_decay_refine=wd_refine)
