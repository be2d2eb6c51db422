"""Synthetic volumetric dataset generation, augmentation, splitting, batching.

The generator is a stand-in for a real CT corpus: each sample is a smooth
ellipsoidal organ containing one or more brighter ellipsoidal tumors, plus
Gaussian noise, normalized and resampled to the working resolution. Ground
truth is the exact tumor ellipsoid membership, resampled nearest-neighbor so
labels stay binary. Everything is a pure function of the configured seeds.

On disk a dataset is a directory of paired VOL3 files plus a JSON manifest::

    <id>.img.vol3   <id>.mask.vol3   manifest.json
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, GenerationError, InvalidConfigError, InvalidInputError
from .fsio import atomic_write_bytes, atomic_write_text
from .seeding import derive_rng
from .volume import (
    MaskVolume,
    Shape3,
    Volume,
    nearest_resize_mask,
    normalize_max,
    read_volume,
    trilinear_resize,
    write_volume,
)

MANIFEST_NAME = "manifest.json"
SHIFT_LIMIT = 4  # augmentation shifts are drawn from [-4, +4] voxels


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic corpus."""

    num_samples: int
    raw_shape: Shape3
    target_shape: Shape3 = Shape3(64, 64, 32)
    tumor_count_range: tuple[int, int] = (1, 2)
    tumor_radius_range: tuple[float, float] = (4.0, 7.0)
    background_noise_sigma: float = 0.03
    organ_intensity: float = 0.45
    tumor_intensity: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "raw_shape", Shape3(*self.raw_shape).validate())
        object.__setattr__(self, "target_shape", Shape3(*self.target_shape).validate())
        if self.num_samples < 1:
            raise InvalidConfigError("num_samples must be >= 1")
        lo, hi = self.tumor_count_range
        if not 0 < lo <= hi:
            raise InvalidConfigError(f"bad tumor_count_range {self.tumor_count_range}")
        rlo, rhi = self.tumor_radius_range
        if not 1.0 <= rlo <= rhi:
            raise InvalidConfigError(f"tumor radii must be >= 1, got {self.tumor_radius_range}")
        if 2 * rhi >= min(self.raw_shape):
            raise InvalidConfigError("largest tumor does not fit inside raw_shape")
        stride = max(r / t for r, t in zip(self.raw_shape, self.target_shape))
        if rlo < stride:
            raise InvalidConfigError(
                f"min tumor radius {rlo} is below the resampling stride {stride:.2f}; "
                "tumors could vanish from the resized mask"
            )
        if self.background_noise_sigma < 0:
            raise InvalidConfigError("noise sigma must be >= 0")
        if not 0 < self.organ_intensity < self.tumor_intensity:
            raise InvalidConfigError("need 0 < organ_intensity < tumor_intensity")

    def to_dict(self) -> dict:
        return {
            "num_samples": self.num_samples,
            "raw_shape": list(self.raw_shape),
            "target_shape": list(self.target_shape),
            "tumor_count_range": list(self.tumor_count_range),
            "tumor_radius_range": list(self.tumor_radius_range),
            "background_noise_sigma": self.background_noise_sigma,
            "organ_intensity": self.organ_intensity,
            "tumor_intensity": self.tumor_intensity,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(
            num_samples=int(d["num_samples"]),
            raw_shape=Shape3(*d["raw_shape"]),
            target_shape=Shape3(*d["target_shape"]),
            tumor_count_range=tuple(d["tumor_count_range"]),
            tumor_radius_range=tuple(d["tumor_radius_range"]),
            background_noise_sigma=float(d["background_noise_sigma"]),
            organ_intensity=float(d["organ_intensity"]),
            tumor_intensity=float(d["tumor_intensity"]),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class SegSample:
    """Paired normalized image volume and binary ground-truth mask."""

    image: Volume
    mask: MaskVolume
    id: str

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise InvalidInputError(
                f"image shape {tuple(self.image.shape)} != mask shape {tuple(self.mask.shape)}"
            )
        if self.image.data.min() < 0.0 or self.image.data.max() > 1.0:
            raise InvalidInputError("image values must lie in [0, 1]")


@dataclass(frozen=True)
class SplitIndex:
    train: tuple[str, ...]
    val: tuple[str, ...]
    ratio: float
    seed: int


def _ellipsoid_membership(shape: Shape3, center: np.ndarray, semi: np.ndarray) -> np.ndarray:
    axes = np.ogrid[0 : shape.d, 0 : shape.h, 0 : shape.w]
    dist = sum(((ax - c) / s) ** 2 for ax, c, s in zip(axes, center, semi))
    return dist <= 1.0


def _generate_sample(spec: SynthSpec, index: int) -> SegSample:
    rng = derive_rng(spec.seed, "synth-sample", index)
    shape = spec.raw_shape
    dims = np.array(shape, dtype=np.float64)

    organ_center = dims / 2.0 + rng.uniform(-0.05, 0.05, size=3) * dims
    organ_semi = rng.uniform(0.32, 0.42, size=3) * dims
    organ = _ellipsoid_membership(shape, organ_center, organ_semi)

    img = np.zeros(shape, dtype=np.float64)
    img[organ] = spec.organ_intensity

    count = int(rng.integers(spec.tumor_count_range[0], spec.tumor_count_range[1] + 1))
    tumor = np.zeros(shape, dtype=bool)
    if spec.tumor_radius_range[0] > 0.8 * float(np.min(organ_semi)):
        raise GenerationError(
            f"minimum tumor radius {spec.tumor_radius_range[0]} does not fit inside "
            f"organ semi-axes {organ_semi.round(2)}"
        )
    for _ in range(count):
        radii = rng.uniform(*spec.tumor_radius_range, size=3)
        # anisotropic organs: cap each semi-axis so the tumor stays interior
        radii = np.minimum(radii, 0.8 * organ_semi)
        margin = 1.0 - np.max(radii / organ_semi)
        for attempt in range(200):
            offset = rng.uniform(-1.0, 1.0, size=3) * organ_semi * margin
            if np.sum((offset / (organ_semi * margin)) ** 2) <= 1.0:
                break
        else:
            raise GenerationError("could not place tumor inside organ")
        tumor |= _ellipsoid_membership(shape, organ_center + offset, radii)
    img[tumor] = spec.tumor_intensity

    if spec.background_noise_sigma > 0:
        img = img + rng.normal(0.0, spec.background_noise_sigma, size=shape)
        img = np.maximum(img, 0.0)

    image = trilinear_resize(normalize_max(Volume(shape, 1, img)), spec.target_shape)
    mask = nearest_resize_mask(MaskVolume(shape, tumor.astype(np.uint8)), spec.target_shape)
    return SegSample(image=image, mask=mask, id=f"s{index:04d}")


def generate_dataset(spec: SynthSpec) -> list[SegSample]:
    """Deterministic synthetic corpus; sample i depends only on (seed, i)."""
    return [_generate_sample(spec, i) for i in range(spec.num_samples)]


# ---------------------------------------------------------------------------
# augmentation: flips, quarter turns in the (d,h) plane, integer shifts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentParams:
    flips: tuple[bool, bool, bool]
    quarter_turns: int
    shifts: tuple[int, int, int]

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls((False, False, False), 0, (0, 0, 0))


def draw_augment_params(rng: np.random.Generator, shape: Shape3) -> AugmentParams:
    """Independent draws: three coin-flip mirrors, one rotation, three shifts.

    When the rotation plane is not square (d != h) odd quarter turns would
    change the shape, so they degrade to the nearest half turn.
    """
    flips = tuple(bool(f) for f in rng.random(3) < 0.5)
    k = int(rng.integers(0, 4))
    if shape.d != shape.h and k % 2 == 1:
        k -= 1
    shifts = tuple(int(s) for s in rng.integers(-SHIFT_LIMIT, SHIFT_LIMIT + 1, size=3))
    return AugmentParams(flips, k, shifts)


def _shift_zero_fill(arr: np.ndarray, shifts: tuple[int, int, int], axes: tuple[int, int, int]) -> np.ndarray:
    out = np.zeros_like(arr)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    for ax, s in zip(axes, shifts):
        n = arr.shape[ax]
        if abs(s) >= n:
            return out
        if s >= 0:
            dst[ax] = slice(s, n)
            src[ax] = slice(0, n - s)
        else:
            dst[ax] = slice(0, n + s)
            src[ax] = slice(-s, n)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _apply_geometry(arr: np.ndarray, params: AugmentParams, axes: tuple[int, int, int]) -> np.ndarray:
    for ax, flip in zip(axes, params.flips):
        if flip:
            arr = np.flip(arr, axis=ax)
    if params.quarter_turns % 4:
        arr = np.rot90(arr, k=params.quarter_turns, axes=(axes[0], axes[1]))
    if any(params.shifts):
        arr = _shift_zero_fill(arr, params.shifts, axes)
    return np.ascontiguousarray(arr)


def apply_augment(sample: SegSample, params: AugmentParams) -> SegSample:
    """Apply the identical geometric transform to image and mask."""
    img = _apply_geometry(sample.image.data, params, axes=(1, 2, 3))
    msk = _apply_geometry(sample.mask.data, params, axes=(0, 1, 2))
    return SegSample(
        image=Volume(sample.image.shape, sample.image.channels, img),
        mask=MaskVolume(sample.mask.shape, msk),
        id=sample.id,
    )


def augment(sample: SegSample, rng: np.random.Generator) -> SegSample:
    return apply_augment(sample, draw_augment_params(rng, sample.image.shape))


# ---------------------------------------------------------------------------
# splitting and batching
# ---------------------------------------------------------------------------

def split_dataset(ids: list[str], ratio: float, seed: int) -> SplitIndex:
    """Seeded shuffle then prefix split; |train| = round(ratio * N), both non-empty."""
    n = len(ids)
    if n < 2:
        raise InvalidInputError(f"need at least 2 samples to split, got {n}")
    if not 0.0 < ratio < 1.0:
        raise InvalidInputError(f"ratio must lie strictly in (0, 1), got {ratio}")
    rng = derive_rng(seed, "split")
    order = rng.permutation(n)
    n_train = min(max(int(round(ratio * n)), 1), n - 1)
    shuffled = [ids[i] for i in order]
    return SplitIndex(
        train=tuple(shuffled[:n_train]),
        val=tuple(shuffled[n_train:]),
        ratio=ratio,
        seed=seed,
    )


def make_batches(ids: list, batch_size: int, seed: int, epoch: int) -> list[list]:
    """Per-epoch reshuffle seeded by (seed, epoch); partial final batch kept."""
    if batch_size < 1:
        raise InvalidInputError(f"batch_size must be >= 1, got {batch_size}")
    rng = derive_rng(seed, "batches", epoch)
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


# ---------------------------------------------------------------------------
# on-disk dataset directory
# ---------------------------------------------------------------------------

def save_dataset(path: str | Path, samples: list[SegSample], spec: SynthSpec, split: SplitIndex) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for s in samples:
        atomic_write_bytes(path / f"{s.id}.img.vol3", write_volume(s.image))
        atomic_write_bytes(path / f"{s.id}.mask.vol3", write_volume(s.mask))
    manifest = {
        "schema_version": 1,
        "ids": [s.id for s in samples],
        "spec": spec.to_dict(),
        "seed": spec.seed,
        "split": {
            "train": list(split.train),
            "val": list(split.val),
            "ratio": split.ratio,
            "seed": split.seed,
        },
    }
    atomic_write_text(path / MANIFEST_NAME, json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def load_manifest(path: str | Path) -> dict:
    manifest_path = Path(path) / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"no dataset manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"unreadable manifest {manifest_path}: {exc}") from exc
    if manifest.get("schema_version") != 1:
        raise DataError(f"unsupported manifest schema {manifest.get('schema_version')}")
    return manifest


def load_sample(path: str | Path, sample_id: str) -> SegSample:
    path = Path(path)
    try:
        image = read_volume((path / f"{sample_id}.img.vol3").read_bytes())
        mask = read_volume((path / f"{sample_id}.mask.vol3").read_bytes())
    except FileNotFoundError as exc:
        raise DataError(f"missing volume file for sample {sample_id!r}: {exc}") from exc
    if not isinstance(image, Volume) or not isinstance(mask, MaskVolume):
        raise DataError(f"sample {sample_id!r} has swapped or mistyped volume files")
    return SegSample(image=image, mask=mask, id=sample_id)


def load_split_samples(path: str | Path) -> tuple[list[SegSample], list[SegSample], dict]:
    """Load (train samples, val samples, manifest) from a dataset directory."""
    manifest = load_manifest(path)
    train = [load_sample(path, sid) for sid in manifest["split"]["train"]]
    val = [load_sample(path, sid) for sid in manifest["split"]["val"]]
    return train, val, manifest


def import_raw_volumes(
    src: str | Path,
    dest: str | Path,
    target_shape: Shape3,
    *,
    ratio: float = 0.8,
    seed: int = 0,
) -> list[SegSample]:
    """Build a standard dataset directory from raw ``<id>.img.vol3`` /
    ``<id>.mask.vol3`` pairs (the drop-in path for real volumes).

    Each image gets the usual preprocessing (peak normalization, trilinear
    resize to ``target_shape``); masks are resampled nearest-neighbor.
    """
    src = Path(src)
    img_paths = sorted(src.glob("*.img.vol3"))
    if not img_paths:
        raise DataError(f"no *.img.vol3 files under {src}")
    samples = []
    for img_path in img_paths:
        sid = img_path.name[: -len(".img.vol3")]
        mask_path = src / f"{sid}.mask.vol3"
        if not mask_path.exists():
            raise DataError(f"sample {sid!r} has no mask file {mask_path.name}")
        image = read_volume(img_path.read_bytes())
        mask = read_volume(mask_path.read_bytes())
        if not isinstance(image, Volume) or not isinstance(mask, MaskVolume):
            raise DataError(f"sample {sid!r} has swapped or mistyped volume files")
        if image.shape != mask.shape:
            raise DataError(f"sample {sid!r}: image and mask shapes differ")
        image = trilinear_resize(normalize_max(image), target_shape)
        mask = nearest_resize_mask(mask, target_shape)
        samples.append(SegSample(image=image, mask=mask, id=sid))

    split = split_dataset([s.id for s in samples], ratio=ratio, seed=seed)
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    for s in samples:
        atomic_write_bytes(dest / f"{s.id}.img.vol3", write_volume(s.image))
        atomic_write_bytes(dest / f"{s.id}.mask.vol3", write_volume(s.mask))
    manifest = {
        "schema_version": 1,
        "ids": [s.id for s in samples],
        "spec": {"source": "import", "target_shape": list(target_shape)},
        "seed": seed,
        "split": {
            "train": list(split.train),
            "val": list(split.val),
            "ratio": split.ratio,
            "seed": split.seed,
        },
    }
    atomic_write_text(dest / MANIFEST_NAME, json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return samples
