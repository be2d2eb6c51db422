"""Experiment configuration: one JSON document drives every command.

Every value has a default, so a config file is optional; the master seed
deterministically derives the per-module seeds (data generation, search,
training) via :mod:`batseg.seeding`. Unknown keys are rejected so typos
cannot silently fall back to defaults.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .bat import BatConfig
from .data import SynthSpec
from .errors import InvalidConfigError
from .seeding import derive_seed
from .unet import UNetConfig
from .volume import Shape3

SCHEMA_VERSION = 1

DEFAULT_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    out_dir: str
    threads: int
    synth: SynthSpec
    unet: UNetConfig
    bat: BatConfig
    epochs: int
    proxy_epochs: int
    val_ratio: float
    augment: bool
    thresholds: tuple[float, ...]

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidConfigError("epochs must be >= 0")
        if self.proxy_epochs < 1:
            raise InvalidConfigError("proxy_epochs must be >= 1")
        if not 0.0 < self.val_ratio < 1.0:
            raise InvalidConfigError("val_ratio must lie in (0, 1)")
        if self.threads < 1:
            raise InvalidConfigError("threads must be >= 1")
        if not self.thresholds or any(
            t2 <= t1 for t1, t2 in zip(self.thresholds, self.thresholds[1:])
        ):
            raise InvalidConfigError("thresholds must be non-empty and strictly increasing")
        if self.unet.input_shape != self.synth.target_shape:
            raise InvalidConfigError(
                f"model input shape {tuple(self.unet.input_shape)} must equal "
                f"data target shape {tuple(self.synth.target_shape)}"
            )

    def to_dict(self) -> dict:
        """Fully resolved snapshot (derived seeds included) for run logs."""
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "threads": self.threads,
            "synth": self.synth.to_dict(),
            "unet": self.unet.to_dict(),
            "bat": self.bat.to_dict(),
            "train": {
                "epochs": self.epochs,
                "proxy_epochs": self.proxy_epochs,
                "val_ratio": self.val_ratio,
                "augment": self.augment,
            },
            "thresholds": list(self.thresholds),
        }


def _take(section: dict, known: dict, where: str) -> dict:
    unknown = set(section) - set(known)
    if unknown:
        raise InvalidConfigError(f"unknown {where} keys: {sorted(unknown)}")
    merged = dict(known)
    merged.update(section)
    return merged


def build_config(
    doc: dict | None = None,
    *,
    seed: int | None = None,
    out_dir: str | None = None,
    threads: int | None = None,
) -> ExperimentConfig:
    """Resolve a config document plus CLI overrides into a full config."""
    doc = dict(doc or {})
    version = doc.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise InvalidConfigError(f"unsupported schema_version {version}")

    top = _take(
        doc,
        {
            "seed": 1234,
            "out_dir": "runs/exp",
            "threads": 1,
            "synth": {},
            "unet": {},
            "bat": {},
            "train": {},
            "thresholds": list(DEFAULT_THRESHOLDS),
        },
        "top-level",
    )
    master = int(seed if seed is not None else top["seed"])

    synth_fields = _take(
        top["synth"],
        {
            "num_samples": 24,
            "raw_shape": [32, 32, 16],
            "target_shape": [32, 32, 16],
            "tumor_count_range": [2, 3],
            "tumor_radius_range": [3.5, 5.5],
            "background_noise_sigma": 0.02,
            "organ_intensity": 0.4,
            "tumor_intensity": 1.0,
        },
        "synth",
    )
    try:
        synth = SynthSpec(
            num_samples=int(synth_fields["num_samples"]),
            raw_shape=Shape3(*synth_fields["raw_shape"]),
            target_shape=Shape3(*synth_fields["target_shape"]),
            tumor_count_range=tuple(synth_fields["tumor_count_range"]),
            tumor_radius_range=tuple(synth_fields["tumor_radius_range"]),
            background_noise_sigma=float(synth_fields["background_noise_sigma"]),
            organ_intensity=float(synth_fields["organ_intensity"]),
            tumor_intensity=float(synth_fields["tumor_intensity"]),
            seed=derive_seed(master, "synth"),
        )

        unet_fields = _take(top["unet"], {"base_filters": 4}, "unet")
        unet = UNetConfig(
            input_shape=synth.target_shape,
            base_filters=int(unet_fields["base_filters"]),
        )

        bat_fields = _take(
            top["bat"],
            {
                "num_bats": 2,
                "max_iterations": 2,
                "freq_min": 0.0,
                "freq_max": 2.0,
                "alpha": 0.9,
                "gamma": 0.9,
                "learning_rate_range": [1e-4, 1e-3],
                "batch_size_range": [2, 4],
                "initial_loudness": 1.0,
                "initial_pulse_rate": 0.5,
                "walk_scale": 0.1,
                "tol": 1e-6,
                "patience": 3,
            },
            "bat",
        )
        lr_lo, lr_hi = bat_fields.pop("learning_rate_range")
        bs_lo, bs_hi = bat_fields.pop("batch_size_range")
        if not 0 < lr_lo < lr_hi:
            raise InvalidConfigError("learning_rate_range must be increasing and positive")
        bat = BatConfig(
            bounds=((math.log10(lr_lo), math.log10(lr_hi)), (float(bs_lo), float(bs_hi))),
            seed=derive_seed(master, "bat"),
            **{k: v for k, v in bat_fields.items()},
        )

        train_fields = _take(
            top["train"],
            {"epochs": 10, "proxy_epochs": 2, "val_ratio": 0.2, "augment": False},
            "train",
        )
        return ExperimentConfig(
            seed=master,
            out_dir=str(out_dir if out_dir is not None else top["out_dir"]),
            threads=int(threads if threads is not None else top["threads"]),
            synth=synth,
            unet=unet,
            bat=bat,
            epochs=int(train_fields["epochs"]),
            proxy_epochs=int(train_fields["proxy_epochs"]),
            val_ratio=float(train_fields["val_ratio"]),
            augment=bool(train_fields["augment"]),
            thresholds=tuple(float(t) for t in top["thresholds"]),
        )
    except InvalidConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise InvalidConfigError(f"malformed config value: {exc}") from exc


def load_config(
    path: str | Path | None,
    *,
    seed: int | None = None,
    out_dir: str | None = None,
    threads: int | None = None,
) -> ExperimentConfig:
    doc = None
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise InvalidConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise InvalidConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise InvalidConfigError("config document must be a JSON object")
    return build_config(doc, seed=seed, out_dir=out_dir, threads=threads)
