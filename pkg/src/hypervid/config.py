"""Line-oriented ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored; unknown or duplicate keys are
errors. Every model, loss, and training field has a key here, and
:func:`format_config` writes the canonical text used as the checkpoint
snapshot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ArgumentError
from .losses import LossWeights
from .model import ModelConfig


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 2.5e-4
    lr_floor: float = 1e-5
    plateau_patience: int = 3

    def __post_init__(self):
        if self.epochs < 0:
            raise ArgumentError("epochs must be non-negative")
        if self.batch_size < 2:
            raise ArgumentError("batch_size must be at least 2")
        if self.lr <= 0 or self.lr_floor <= 0:
            raise ArgumentError("learning rates must be positive")
        if self.plateau_patience < 1:
            raise ArgumentError("plateau_patience must be at least 1")


def _parse_int(s):
    return int(s)


def _parse_float(s):
    return float(s)


def _parse_variances(s):
    if not s.strip():
        return ()
    out = []
    for part in s.split(","):
        part = part.strip()
        out.append(math.inf if part in ("inf", "Inf", "INF") else float(part))
    return tuple(out)


def _fmt_variances(v):
    return ",".join("inf" if math.isinf(x) else repr(float(x)) for x in v)


def _fmt_plain(v):
    return repr(v) if isinstance(v, float) else str(v)


# key -> (section, field, parse, format)
_SCHEMA = {
    "d": ("model", "d", _parse_int, _fmt_plain),
    "n": ("model", "n", _parse_int, _fmt_plain),
    "n_lorentz": ("model", "n_lorentz", _parse_int, _fmt_plain),
    "n_euclid": ("model", "n_euclid", _parse_int, _fmt_plain),
    "heads": ("model", "heads", _parse_int, _fmt_plain),
    "clips": ("model", "clips", _parse_int, _fmt_plain),
    "tau": ("model", "tau", _parse_float, _fmt_plain),
    "alpha_f": ("model", "alpha_f", _parse_float, _fmt_plain),
    "alpha_c": ("model", "alpha_c", _parse_float, _fmt_plain),
    "pop_scale": ("model", "pop_scale", _parse_float, _fmt_plain),
    "seed": ("model", "seed", _parse_int, _fmt_plain),
    "d_vid": ("model", "d_vid", _parse_int, _fmt_plain),
    "d_text": ("model", "d_text", _parse_int, _fmt_plain),
    "lorentz_variances": ("model", "lorentz_variances", _parse_variances, _fmt_variances),
    "euclid_variances": ("model", "euclid_variances", _parse_variances, _fmt_variances),
    "lambda_div": ("loss", "lambda_div", _parse_float, _fmt_plain),
    "lambda_pop": ("loss", "lambda_pop", _parse_float, _fmt_plain),
    "margin": ("loss", "margin", _parse_float, _fmt_plain),
    "nce_temperature": ("loss", "nce_temperature", _parse_float, _fmt_plain),
    "margin_div": ("loss", "margin_div", _parse_float, _fmt_plain),
    "cone_c": ("loss", "cone_c", _parse_float, _fmt_plain),
    "epochs": ("train", "epochs", _parse_int, _fmt_plain),
    "batch_size": ("train", "batch_size", _parse_int, _fmt_plain),
    "lr": ("train", "lr", _parse_float, _fmt_plain),
    "lr_floor": ("train", "lr_floor", _parse_float, _fmt_plain),
    "plateau_patience": ("train", "plateau_patience", _parse_int, _fmt_plain),
}

_CORPUS_KEYS = ("num_videos", "moments_per_video", "frames_per_moment_min",
                "frames_per_moment_max", "d_vid", "d_text", "queries_per_video",
                "words_per_query_min", "words_per_query_max",
                "frame_jitter", "query_jitter", "seed")


def parse_kv_text(text, what="config"):
    """Parse ``key = value`` lines into an ordered dict of raw strings."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ArgumentError(f"{what} line {lineno}: expected 'key = value', "
                                f"got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in raw:
            raise ArgumentError(f"{what} line {lineno}: duplicate key '{key}'")
        raw[key] = value.strip()
    return raw


def resolve_config(raw):
    """Turn raw key strings into (ModelConfig, LossWeights, TrainConfig)."""
    sections = {"model": {}, "loss": {}, "train": {}}
    for key, value in raw.items():
        if key not in _SCHEMA:
            raise ArgumentError(f"unknown configuration key '{key}'")
        section, fieldname, parse, _ = _SCHEMA[key]
        try:
            sections[section][fieldname] = parse(value)
        except ValueError as exc:
            raise ArgumentError(f"bad value for '{key}': {value!r}") from exc
    return (ModelConfig(**sections["model"]),
            LossWeights(**sections["loss"]),
            TrainConfig(**sections["train"]))


def parse_config_text(text):
    return resolve_config(parse_kv_text(text))


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def format_config(model_cfg, loss_cfg, train_cfg):
    """Canonical text for the full configuration, one key per line."""
    objs = {"model": model_cfg, "loss": loss_cfg, "train": train_cfg}
    lines = []
    for key, (section, fieldname, _, fmt) in _SCHEMA.items():
        lines.append(f"{key} = {fmt(getattr(objs[section], fieldname))}")
    return "\n".join(lines) + "\n"


def parse_corpus_spec_text(text):
    from .data import SyntheticCorpusSpec

    raw = parse_kv_text(text, what="corpus spec")
    kwargs = {}
    for key, value in raw.items():
        if key not in _CORPUS_KEYS:
            raise ArgumentError(f"unknown corpus spec key '{key}'")
        try:
            kwargs[key] = float(value) if "jitter" in key else int(value)
        except ValueError as exc:
            raise ArgumentError(f"bad value for '{key}': {value!r}") from exc
    return SyntheticCorpusSpec(**kwargs)


def load_corpus_spec(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_corpus_spec_text(fh.read())
