"""Experiment configuration, ``key = value`` file IO and seeded RNG streams."""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import get_type_hints

import numpy as np

from .errors import ConfigError
from .grm import LEAKY_SLOPE, VARIANTS

MODES = ("baseline", "celm", "celm+grm")
EXTRACTORS = ("precomputed", "tiny-conv")

# named sub-streams derived from the single global seed
_STREAMS = {"init": 1, "shuffle": 2, "augment": 3, "synth": 4, "gradcheck": 5}


def rng_for(seed: int, stream: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), _STREAMS[stream], *(int(e) for e in extra)])


def example_seed(seed: int, example_id: str, epoch: int) -> np.random.Generator:
    """Augmentation stream for one example in one epoch, independent of visit order."""
    return rng_for(seed, "augment", zlib.crc32(example_id.encode("utf-8")), epoch)


def scaled(base: int, scale: float) -> int:
    return max(1, int(round(base * scale)))


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_d: float = 0.5
    lambda_c: float = 0.5
    seed: int = 0
    mode: str = "celm+grm"
    variant: str | None = None
    extractor: str = "precomputed"
    scale: float = 1.0
    fcp_activation: str = "none"
    augment: bool = True
    image_size: str = "64x96"
    conv_channels: int = 32
    select_best: bool = False

    # derived architecture -------------------------------------------------
    @property
    def topology(self) -> str | None:
        if self.mode != "celm+grm":
            return None
        return self.variant or "dc"

    @property
    def feature_dim(self) -> int:
        return scaled(512, self.scale)

    @property
    def heads(self) -> tuple[int, int]:
        return (8, 1)

    @property
    def head_widths(self) -> tuple[int, int]:
        return (scaled(8, self.scale), scaled(512, self.scale))

    @property
    def fcp_hidden(self) -> int:
        return scaled(512, self.scale)

    @property
    def image_hw(self) -> tuple[int, int]:
        try:
            h, w = (int(v) for v in self.image_size.lower().split("x"))
        except ValueError:
            raise ConfigError(f"image_size must look like 64x96, got {self.image_size!r}") from None
        return h, w

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0 or self.lambda_d < 0 or self.lambda_c < 0:
            raise ConfigError("lr and auxiliary loss weights must be >= 0")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.variant is not None:
            if self.variant not in VARIANTS:
                raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
            if self.mode != "celm+grm":
                raise ConfigError(f"a GRM variant requires mode celm+grm (mode is {self.mode})")
        if self.extractor not in EXTRACTORS:
            raise ConfigError(f"extractor must be one of {EXTRACTORS}")
        if self.scale <= 0:
            raise ConfigError("scale must be positive")
        if self.fcp_activation not in ("none", "elu"):
            raise ConfigError("fcp_activation must be none or elu")
        if self.conv_channels < 1:
            raise ConfigError("conv_channels must be >= 1")
        self.image_hw


@dataclass
class ExperimentConfig(TrainConfig):
    manifest: str | None = None
    synth: str | None = None
    schema: str | None = None
    out: str = "runs/giin"
    metrics_split: str = "test"

    def validate(self) -> None:
        super().validate()
        if self.manifest and self.synth:
            raise ConfigError("give either a manifest or a synth spec, not both")
        if self.metrics_split not in ("train", "valid", "test"):
            raise ConfigError(f"unknown metrics split {self.metrics_split!r}")
        if self.synth:
            parse_synth_spec(self.synth)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})


def parse_synth_spec(spec: str) -> dict:
    """``n=64,noise=0`` style spec -> keyword arguments for synth_generate."""
    kinds = {"n": int, "noise": float, "correlation": float, "clin_noise_ratio": float,
             "train": float, "kind": str}
    out: dict = {}
    for part in filter(None, (p.strip() for p in spec.split(","))):
        if "=" not in part:
            raise ConfigError(f"bad synth item {part!r}; expected key=value")
        k, v = (s.strip() for s in part.split("=", 1))
        if k not in kinds:
            raise ConfigError(f"unknown synth key {k!r}; known: {sorted(kinds)}")
        try:
            out[k] = kinds[k](v)
        except ValueError:
            raise ConfigError(f"synth {k}={v!r} is not a valid {kinds[k].__name__}") from None
    if out.get("n", 1) < 1:
        raise ConfigError("synth n must be >= 1")
    return out


# ------------------------------------------------------------- text format

def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(name: str, raw: str, typ):
    raw = raw.strip()
    optional = "None" in str(typ)
    if optional and raw.lower() in ("none", ""):
        return None
    base = str if optional else typ
    try:
        if base is bool:
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return raw.lower() in ("true", "1", "yes")
        return base(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def config_to_text(cfg: TrainConfig) -> str:
    return "".join(f"{f.name} = {_fmt(getattr(cfg, f.name))}\n" for f in fields(cfg))


def apply_overrides(cfg, pairs: dict[str, str]):
    hints = get_type_hints(type(cfg))
    known = {f.name for f in fields(cfg)}
    for key, raw in pairs.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, raw, hints[key]))
    return cfg


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if k.startswith("derived."):
            continue  # informational lines emitted by describe()
        pairs[k] = v
    return pairs


def config_from_text(text: str, cls=ExperimentConfig, source: str = "<config>"):
    return apply_overrides(cls(), parse_kv(text, source))


def load_config(path, cls=ExperimentConfig):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return config_from_text(p.read_text(encoding="utf-8"), cls, str(p))


def describe(cfg: TrainConfig) -> str:
    """Config lines followed by the fixed and derived architecture settings."""
    w0, w1 = cfg.head_widths
    derived = {
        "feature_dim": cfg.feature_dim,
        "celm_dim": cfg.feature_dim,
        "gat_layers": 2,
        "gat_heads": "%d,%d" % cfg.heads,
        "gat_head_widths": f"{w0},{w1}",
        "gat_head_aggregation": "concat",
        "gat_activation": "elu",
        "leaky_relu_slope": LEAKY_SLOPE,
        "topology": cfg.topology or "none",
        "fcp_hidden": cfg.fcp_hidden,
        "dropout": 0.0,
        "weight_decay": 0.0,
        "init.conv": "he",
        "init.fully_connected": "glorot",
        "init.attention": "glorot",
        "init.bias": "zero",
        "loss_reduction": "mean_over_batch",
        "precision": "float64",
    }
    lines = [config_to_text(cfg), "# derived architecture (read-only)\n"]
    lines += [f"derived.{k} = {_fmt(v)}\n" for k, v in derived.items()]
    return "".join(lines)
