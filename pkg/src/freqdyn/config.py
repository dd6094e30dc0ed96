"""Sectioned key=value configuration: parsing, defaults, canonical printing.

The format is deliberately tiny: `[section]` headers, `key = value` lines,
blank lines, and `#` comments. Every key is declared in the schema below
with a type and default; unknown sections or keys are errors that cite the
line number. `format_config(parse_config_text(text))` is canonical text and
parses back to the same values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields as dc_fields
from fractions import Fraction

from .dynamic import AttentionHeadConfig
from .errors import ConfigurationError
from .model import ModelConfig


# -- run-stage configuration dataclasses --------------------------------------

@dataclass(frozen=True)
class DataConfig:
    n_clips: int = 512
    split_ratios: tuple[float, ...] = (0.8, 0.1, 0.1)
    master_seed: int = 1234
    n_mels: int = 128
    hop_seconds: float = 0.064
    clip_seconds: float = 10.0
    polyphony_min: int = 1
    polyphony_max: int = 2
    noise_power: float = 1e-3
    event_margin_db: float = 6.0
    min_event_s: float = 1.5
    max_event_s: float = 4.0
    classes: tuple[str, ...] = ("tone_low", "tone_high", "burst_wide", "ramp")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-3
    warmup_frac: float = 0.1
    weak_weight: float = 0.5
    seed: int = 0
    val_every: int = 1
    frame_shift: int = 16
    mixup_alpha: float = 0.2
    time_mask: int = 12
    filter_augment: bool = True
    filter_bands_min: int = 2
    filter_bands_max: int = 5
    filter_gain_db: float = 6.0


@dataclass(frozen=True)
class EvalConfig:
    thresholds: int = 50
    dtc: float = 0.7
    gtc: float = 0.7
    alpha_st: float = 1.0
    e_max: float = 100.0


@dataclass(frozen=True)
class PostprocConfig:
    median_filter: int = 7
    median_per_class: tuple[int, ...] = ()


# -- schema -------------------------------------------------------------------

@dataclass(frozen=True)
class Field:
    kind: str
    default: object


SCHEMA: dict[str, dict[str, Field]] = {
    "model": {
        "n_mels": Field("int", 128),
        "n_classes": Field("int", 10),
        "classes": Field("strs", ()),
        "channel_scale": Field("fraction", Fraction(1)),
        "base_widths": Field("ints", (32, 64, 128, 256, 256, 256, 256)),
        "layer_specs": Field("str", "static"),
        "branch_proportion": Field("fraction", Fraction(1, 8)),
        "basis_kernels": Field("int", 4),
        "kernel": Field("ints", (3, 3)),
        "att_ratio": Field("int", 4),
        "att_kernel": Field("int", 3),
        "att_min_hidden": Field("int", 4),
        "temperature": Field("float", 31.0),
        "pre_conv": Field("bool", False),
        "pre_channels": Field("int", 16),
        "pool_time": Field("ints", (2, 2, 1, 1, 1, 1, 1)),
        "pool_freq": Field("ints", (2, 2, 2, 2, 2, 2, 1)),
        "rnn_hidden": Field("int", 256),
        "rnn_layers": Field("int", 2),
        "dropout": Field("float", 0.5),
    },
    "data": {
        "n_clips": Field("int", 512),
        "split_ratios": Field("floats", (0.8, 0.1, 0.1)),
        "master_seed": Field("int", 1234),
        "n_mels": Field("int", 128),
        "hop_seconds": Field("float", 0.064),
        "clip_seconds": Field("float", 10.0),
        "polyphony_min": Field("int", 1),
        "polyphony_max": Field("int", 2),
        "noise_power": Field("float", 1e-3),
        "event_margin_db": Field("float", 6.0),
        "min_event_s": Field("float", 1.5),
        "max_event_s": Field("float", 4.0),
        "classes": Field("strs",
                         ("tone_low", "tone_high", "burst_wide", "ramp")),
    },
    "train": {
        "epochs": Field("int", 10),
        "batch_size": Field("int", 8),
        "lr": Field("float", 1e-3),
        "warmup_frac": Field("float", 0.1),
        "weak_weight": Field("float", 0.5),
        "seed": Field("int", 0),
        "val_every": Field("int", 1),
        "frame_shift": Field("int", 16),
        "mixup_alpha": Field("float", 0.2),
        "time_mask": Field("int", 12),
        "filter_augment": Field("bool", True),
        "filter_bands_min": Field("int", 2),
        "filter_bands_max": Field("int", 5),
        "filter_gain_db": Field("float", 6.0),
    },
    "eval": {
        "thresholds": Field("int", 50),
        "dtc": Field("float", 0.7),
        "gtc": Field("float", 0.7),
        "alpha_st": Field("float", 1.0),
        "e_max": Field("float", 100.0),
    },
    "postproc": {
        "median_filter": Field("int", 7),
        "median_per_class": Field("ints", ()),
    },
}


def _decode(kind: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "yes", "on", "1"):
                return True
            if raw.lower() in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if kind == "str":
            return raw
        if kind == "fraction":
            return Fraction(raw)
        if kind == "ints":
            return tuple(int(v) for v in raw.split(",") if v.strip() != "")
        if kind == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip() != "")
        if kind == "strs":
            return tuple(v.strip() for v in raw.split(",") if v.strip() != "")
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigurationError(
            f"{where}: cannot parse {raw!r} as {kind}") from exc
    raise ConfigurationError(f"{where}: unknown value kind {kind!r}")


def _encode(kind: str, value) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "fraction":
        return str(value)
    if kind in ("ints", "floats"):
        return ",".join(repr(v) if kind == "floats" else str(v)
                        for v in value)
    if kind == "strs":
        return ",".join(value)
    if kind == "float":
        return repr(float(value))
    return str(value)


def default_config() -> dict[str, dict[str, object]]:
    return {section: {key: f.default for key, f in keys.items()}
            for section, keys in SCHEMA.items()}


def parse_config_text(text: str) -> dict[str, dict[str, object]]:
    """Parse and validate; returns all sections with defaults filled in."""
    out = default_config()
    seen: set[tuple[str, str]] = set()
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigurationError(
                    f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigurationError(
                f"line {lineno}: expected 'key = value', got {stripped!r}")
        if section is None:
            raise ConfigurationError(
                f"line {lineno}: key outside of any [section]")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in SCHEMA[section]:
            raise ConfigurationError(
                f"line {lineno}: unknown key {key!r} in [{section}]")
        if (section, key) in seen:
            raise ConfigurationError(
                f"line {lineno}: duplicate key {key!r} in [{section}]")
        seen.add((section, key))
        out[section][key] = _decode(SCHEMA[section][key].kind, raw,
                                    f"line {lineno}")
    return out


def format_config(cfg: dict[str, dict[str, object]]) -> str:
    """Canonical text: schema section and key order, one value per line."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, f in keys.items():
            lines.append(f"{key} = {_encode(f.kind, cfg[section][key])}")
        lines.append("")
    return "\n".join(lines)


def apply_overrides(cfg: dict[str, dict[str, object]],
                    overrides: list[str]) -> None:
    """Apply `section.key=value` strings in place."""
    for item in overrides:
        head, sep, raw = item.partition("=")
        if not sep or "." not in head:
            raise ConfigurationError(
                f"override {item!r} is not of the form section.key=value")
        section, _, key = head.strip().partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigurationError(
                f"override {item!r} names unknown key [{section}] {key!r}")
        cfg[section][key] = _decode(SCHEMA[section][key].kind, raw,
                                    f"override {item!r}")


# -- bridges to the typed configuration objects --------------------------------

def model_config_from(section: dict[str, object]) -> ModelConfig:
    classes = section["classes"] or None
    return ModelConfig(
        n_mels=section["n_mels"],
        n_classes=section["n_classes"],
        class_names=tuple(classes) if classes else None,
        channel_scale=section["channel_scale"],
        base_widths=tuple(section["base_widths"]),
        layer_specs=section["layer_specs"],
        branch_proportion=section["branch_proportion"],
        basis_kernels=section["basis_kernels"],
        kernel=tuple(section["kernel"]),
        attention=AttentionHeadConfig(
            squeeze_ratio=section["att_ratio"],
            kernel=section["att_kernel"],
            min_hidden=section["att_min_hidden"],
            temperature=section["temperature"]),
        pre_conv=section["pre_conv"],
        pre_channels=section["pre_channels"],
        pool_time=tuple(section["pool_time"]),
        pool_freq=tuple(section["pool_freq"]),
        rnn_hidden=section["rnn_hidden"],
        rnn_layers=section["rnn_layers"],
        dropout=section["dropout"],
    )


def model_section_from(cfg: ModelConfig) -> dict[str, object]:
    return {
        "n_mels": cfg.n_mels,
        "n_classes": cfg.n_classes,
        "classes": cfg.class_names or (),
        "channel_scale": cfg.channel_scale,
        "base_widths": cfg.base_widths,
        "layer_specs": cfg.layer_specs,
        "branch_proportion": cfg.branch_proportion,
        "basis_kernels": cfg.basis_kernels,
        "kernel": cfg.kernel,
        "att_ratio": cfg.attention.squeeze_ratio,
        "att_kernel": cfg.attention.kernel,
        "att_min_hidden": cfg.attention.min_hidden,
        "temperature": cfg.attention.temperature,
        "pre_conv": cfg.pre_conv,
        "pre_channels": cfg.pre_channels,
        "pool_time": cfg.pool_time,
        "pool_freq": cfg.pool_freq,
        "rnn_hidden": cfg.rnn_hidden,
        "rnn_layers": cfg.rnn_layers,
        "dropout": cfg.dropout,
    }


def model_config_text(cfg: ModelConfig) -> str:
    """Canonical single-section text describing one model."""
    section = model_section_from(cfg)
    lines = ["[model]"]
    for key, f in SCHEMA["model"].items():
        lines.append(f"{key} = {_encode(f.kind, section[key])}")
    lines.append("")
    return "\n".join(lines)


def parse_model_config_text(text: str) -> ModelConfig:
    return model_config_from(parse_config_text(text)["model"])


def _from_section(cls, section: dict[str, object]):
    names = {f.name for f in dc_fields(cls)}
    return cls(**{k: v for k, v in section.items() if k in names})


def data_config_from(section: dict[str, object]) -> DataConfig:
    return _from_section(DataConfig, section)


def train_config_from(section: dict[str, object]) -> TrainConfig:
    return _from_section(TrainConfig, section)


def eval_config_from(section: dict[str, object]) -> EvalConfig:
    return _from_section(EvalConfig, section)


def postproc_config_from(section: dict[str, object]) -> PostprocConfig:
    return _from_section(PostprocConfig, section)


def section_from(section_name: str, obj) -> dict[str, object]:
    """Schema-ordered section dict for a stage-config dataclass instance."""
    if section_name == "model":
        return model_section_from(obj)
    if section_name not in SCHEMA:
        raise ConfigurationError(f"unknown config section {section_name!r}")
    return {key: getattr(obj, key) for key in SCHEMA[section_name]}


def resolved_config_text(model_cfg: ModelConfig, data_cfg: DataConfig,
                         train_cfg: TrainConfig, eval_cfg: EvalConfig,
                         postproc_cfg: PostprocConfig) -> str:
    """Canonical text of every stage's fully-resolved configuration."""
    return format_config({
        "model": model_section_from(model_cfg),
        "data": section_from("data", data_cfg),
        "train": section_from("train", train_cfg),
        "eval": section_from("eval", eval_cfg),
        "postproc": section_from("postproc", postproc_cfg),
    })
