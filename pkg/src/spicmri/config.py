"""Experiment configuration: strict JSON with sections
{dataset, mask, model, loss, optim, output}.  Unknown keys are errors."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .losses import LossConfig
from .network import UnrolledConfig


class ConfigError(ValueError):
    pass


def _take(section: dict, name: str, allowed: dict):
    """Validate keys of ``section`` against ``allowed`` (name -> default);
    required entries use the sentinel ``REQUIRED``."""
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(
            f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    out = {}
    for key, default in allowed.items():
        if key in section:
            out[key] = section[key]
        elif default is REQUIRED:
            raise ConfigError(f"missing required key [{name}].{key}")
        else:
            out[key] = default
    return out


REQUIRED = object()


@dataclass(frozen=True)
class DatasetConfig:
    path: str | None = None
    n_slices: int = 8
    rows: int = 64
    cols: int = 64
    n_coils: int = 8
    sigma: float = 0.0
    noise_seed: int = 0
    seed: int = 0
    train_slices: int | None = None
    val_slices: int = 0


@dataclass(frozen=True)
class MaskConfig:
    accel: int = 4
    n_acs: int = 8


@dataclass(frozen=True)
class OptimConfig:
    steps: int = 200
    lr: float = 5e-4
    lr_decay: float = 1.0
    seed: int = 0
    val_interval: int = 0
    checkpoint_interval: int = 0
    freeze_mu: bool = False


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "run"


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    model: UnrolledConfig = field(default_factory=UnrolledConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    deterministic: bool = False


_SECTION_KEYS = {
    "dataset": {"path": None, "n_slices": 8, "rows": 64, "cols": 64,
                "n_coils": 8, "sigma": 0.0, "noise_seed": 0, "seed": 0,
                "train_slices": None, "val_slices": 0},
    "mask": {"accel": 4, "n_acs": 8},
    "model": {"unrolls": 5, "cg_iters": 10, "blocks": 3, "channels": 16,
              "kernel": 3, "precision": 64},
    "loss": {"method": "spicssdu", "beta": None, "rho": 0.4, "n_masks": 3,
             "n_perturbations": 3, "n_deltas": 1, "eps": 1e-4,
             "wavelet_kind": "dtcwt", "wavelet_levels": 3,
             "detach_inner": False, "resample_splits": False,
             "perturb_amplitude": 0.5, "perturb_features": 3},
    "optim": {"steps": 200, "lr": 5e-4, "lr_decay": 1.0, "seed": 0,
              "val_interval": 0, "checkpoint_interval": 0,
              "freeze_mu": False},
    "output": {"dir": "run"},
}


def parse_config(raw: dict) -> ExperimentConfig:
    top_allowed = set(_SECTION_KEYS) | {"deterministic"}
    unknown = set(raw) - top_allowed
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    sections = {}
    for name, allowed in _SECTION_KEYS.items():
        sections[name] = _take(raw.get(name, {}), name, allowed)
    try:
        return ExperimentConfig(
            dataset=DatasetConfig(**sections["dataset"]),
            mask=MaskConfig(**sections["mask"]),
            model=UnrolledConfig(**sections["model"]),
            loss=LossConfig(**sections["loss"]),
            optim=OptimConfig(**sections["optim"]),
            output=OutputConfig(**sections["output"]),
            deterministic=bool(raw.get("deterministic", False)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return parse_config(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for name in _SECTION_KEYS:
        section = getattr(cfg, name if name != "model" else "model")
        out[name] = {k: getattr(section, k) for k in _SECTION_KEYS[name]}
    out["deterministic"] = cfg.deterministic
    return out
