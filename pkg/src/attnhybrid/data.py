"""Synthetic 3-class image data and the stochastic augmentation pipeline.

The generator produces lesion-like color images whose class is determined by
global structure — a smooth round blob, a blob with an irregular border, and
a blob with strong interior texture — over a skin-toned background. The
out-of-distribution variant draws fresh images and applies one global color
shift to the whole set, standing in for a change of imaging source.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .imageops import affine_warp, bilinear_resize, hsv_to_rgb, rgb_to_hsv
from .tensor import Tensor

__all__ = [
    "Dataset",
    "generate_toy_dataset",
    "AugmentPolicy",
    "augment",
    "write_image_dataset",
    "load_image_dataset",
]

_SPLIT_TAGS = ("train", "val", "test", "ood")

IMAGE_SIZE = 32
CLASS_NAMES = ("round", "irregular", "textured")


@dataclass
class Dataset:
    """A fixed-size image classification set."""

    images: np.ndarray  # (N, 3, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_count: int
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, C, H, W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match "
                f"{self.images.shape[0]} images"
            )
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.class_count
        ):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if self.split not in _SPLIT_TAGS:
            raise ValueError(f"split must be one of {_SPLIT_TAGS}, got {self.split!r}")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, indices, split: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            images=self.images[idx],
            labels=self.labels[idx],
            class_count=self.class_count,
            split=self.split if split is None else split,
        )


def _lesion_mask(
    rng: np.random.Generator, irregular: bool, size: int
) -> np.ndarray:
    """Soft inside/outside mask of a blob with a smooth or wobbly border."""
    cy, cx = size / 2.0 + rng.uniform(-2.0, 2.0, size=2)
    radius = rng.uniform(0.28, 0.36) * size
    ys, xs = np.mgrid[0:size, 0:size]
    dy = ys - cy
    dx = xs - cx
    r = np.hypot(dy, dx)
    theta = np.arctan2(dy, dx)
    boundary = np.full_like(r, radius)
    # A barely-visible ripple keeps the smooth classes from being perfect
    # circles; the irregular class gets large-amplitude angular harmonics.
    boundary = boundary * (1.0 + 0.02 * np.sin(2.0 * theta + rng.uniform(0, 2 * np.pi)))
    if irregular:
        for harmonic in (3, 5, 7):
            amp = rng.uniform(0.18, 0.30)
            phase = rng.uniform(0, 2 * np.pi)
            boundary = boundary * (1.0 + amp * np.sin(harmonic * theta + phase))
    return np.clip((boundary - r) / 1.5 + 0.5, 0.0, 1.0)


def _toy_image(rng: np.random.Generator, label: int, size: int) -> np.ndarray:
    skin = np.array([0.85, 0.69, 0.58]) + rng.uniform(-0.04, 0.04, size=3)
    lesion = np.array([0.38, 0.24, 0.16]) + rng.uniform(-0.05, 0.05, size=3)
    mask = _lesion_mask(rng, irregular=label == 1, size=size)
    background = skin[:, None, None] + rng.normal(0.0, 0.015, size=(3, size, size))
    foreground = np.broadcast_to(lesion[:, None, None], (3, size, size)).copy()
    if label == 2:
        speckle = rng.uniform(0.4, 1.9, size=(size, size))
        foreground = foreground * speckle[None]
    img = background * (1.0 - mask)[None] + foreground * mask[None]
    return np.clip(img, 0.0, 1.0)


def generate_toy_dataset(seed: int, n_per_class: int, ood: bool = False) -> Dataset:
    """Three structurally distinct classes at 32x32; fully seed-determined.

    The ``ood`` variant draws a fresh sample of images and shifts every
    channel of every image by one set-wide offset.
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2 if ood else 0]))
    images = np.empty((3 * n_per_class, 3, IMAGE_SIZE, IMAGE_SIZE))
    labels = np.repeat(np.arange(3, dtype=np.int64), n_per_class)
    for i, label in enumerate(labels):
        images[i] = _toy_image(rng, int(label), IMAGE_SIZE)
    if ood:
        shift_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        shift = shift_rng.uniform(-0.18, 0.18, size=3)
        images = np.clip(images + shift[None, :, None, None], 0.0, 1.0)
    return Dataset(
        images=images,
        labels=labels,
        class_count=3,
        split="ood" if ood else "train",
    )


@dataclass
class AugmentPolicy:
    """Probabilities and ranges for the stochastic training transforms.

    With every probability and range at zero the pipeline is exactly the
    identity. Random draws happen in a fixed order regardless of which
    transforms fire, so a given generator state always yields the same
    output.
    """

    crop_prob: float = 0.5
    min_crop_fraction: float = 0.8
    affine_prob: float = 0.5
    max_rotation_deg: float = 15.0
    max_scale_delta: float = 0.1
    max_shear: float = 0.1
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    hue_delta: float = 0.05
    saturation_delta: float = 0.2
    brightness_delta: float = 0.2
    contrast_delta: float = 0.2

    @staticmethod
    def identity() -> "AugmentPolicy":
        return AugmentPolicy(
            crop_prob=0.0,
            min_crop_fraction=1.0,
            affine_prob=0.0,
            max_rotation_deg=0.0,
            max_scale_delta=0.0,
            max_shear=0.0,
            hflip_prob=0.0,
            vflip_prob=0.0,
            hue_delta=0.0,
            saturation_delta=0.0,
            brightness_delta=0.0,
            contrast_delta=0.0,
        )

    @staticmethod
    def light() -> "AugmentPolicy":
        """Flips plus gentle geometry and color jitter."""
        return AugmentPolicy(
            crop_prob=0.3,
            min_crop_fraction=0.85,
            affine_prob=0.3,
            max_rotation_deg=10.0,
            max_scale_delta=0.05,
            max_shear=0.05,
            hue_delta=0.02,
            saturation_delta=0.1,
            brightness_delta=0.1,
            contrast_delta=0.1,
        )


def _affine_inverse(h: int, w: int, rot_deg: float, scale: float, shear: float):
    """Output->source 2x3 map for rotation/scale/shear about the center."""
    angle = np.deg2rad(rot_deg)
    rotation = np.array(
        [[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]]
    )
    shear_m = np.array([[1.0, shear], [0.0, 1.0]])
    forward = rotation @ shear_m * scale
    inverse = np.linalg.inv(forward)
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = center - inverse @ center
    return np.array(
        [
            [inverse[0, 0], inverse[0, 1], offset[0]],
            [inverse[1, 0], inverse[1, 1], offset[1]],
        ]
    )


def augment(image, rng: np.random.Generator, policy: AugmentPolicy) -> np.ndarray:
    """Randomly crop, warp, flip, and color-jitter one CHW image in [0, 1]."""
    img = image.data if isinstance(image, Tensor) else np.asarray(image)
    img = img.astype(np.float64, copy=True)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"augment expects a (3, H, W) image, got {img.shape}")
    h, w = img.shape[1], img.shape[2]

    do_crop = rng.random() < policy.crop_prob
    crop_fraction = rng.uniform(policy.min_crop_fraction, 1.0)
    crop_top = rng.random()
    crop_left = rng.random()
    if do_crop and crop_fraction < 1.0:
        ch = max(2, int(round(h * crop_fraction)))
        cw = max(2, int(round(w * crop_fraction)))
        top = int(round(crop_top * (h - ch)))
        left = int(round(crop_left * (w - cw)))
        img = bilinear_resize(img[:, top : top + ch, left : left + cw], h, w)

    do_affine = rng.random() < policy.affine_prob
    rot = rng.uniform(-1.0, 1.0) * policy.max_rotation_deg
    scale = 1.0 + rng.uniform(-1.0, 1.0) * policy.max_scale_delta
    shear = rng.uniform(-1.0, 1.0) * policy.max_shear
    if do_affine and (rot != 0.0 or scale != 1.0 or shear != 0.0):
        img = affine_warp(img, _affine_inverse(h, w, rot, scale, shear))

    if rng.random() < policy.hflip_prob:
        img = img[:, :, ::-1]
    if rng.random() < policy.vflip_prob:
        img = img[:, ::-1, :]

    hue = rng.uniform(-1.0, 1.0) * policy.hue_delta
    saturation = rng.uniform(-1.0, 1.0) * policy.saturation_delta
    brightness = rng.uniform(-1.0, 1.0) * policy.brightness_delta
    contrast = rng.uniform(-1.0, 1.0) * policy.contrast_delta
    if hue != 0.0 or saturation != 0.0:
        hsv = rgb_to_hsv(np.clip(img, 0.0, 1.0))
        hsv[0] = (hsv[0] + hue) % 1.0
        hsv[1] = np.clip(hsv[1] * (1.0 + saturation), 0.0, 1.0)
        img = hsv_to_rgb(hsv)
    if brightness != 0.0:
        img = img * (1.0 + brightness)
    if contrast != 0.0:
        mean = img.mean()
        img = (img - mean) * (1.0 + contrast) + mean

    return np.clip(img, 0.0, 1.0)


def write_image_dataset(dataset: Dataset, out_dir) -> None:
    """Write a dataset as one PPM per image plus a ``labels.csv`` manifest.

    Pixels are quantized to 8 bits (round half up), so a reloaded copy is the
    quantized dataset, not a bitwise one.
    """
    from pathlib import Path

    from .netpbm import write_ppm

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["filename,label"]
    for i, (image, label) in enumerate(zip(dataset.images, dataset.labels)):
        name = f"img_{i:05d}.ppm"
        u8 = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        write_ppm(out / name, u8.transpose(1, 2, 0))
        lines.append(f"{name},{int(label)}")
    (out / "labels.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_image_dataset(path, class_count: int = 3, split: str = "train") -> Dataset:
    """Load a directory written by :func:`write_image_dataset`."""
    from pathlib import Path

    from .netpbm import read_netpbm

    root = Path(path)
    manifest = root / "labels.csv"
    if not manifest.is_file():
        raise ValueError(f"no labels.csv manifest in {root}")
    images, labels = [], []
    text = manifest.read_text(encoding="utf-8").strip().splitlines()
    if not text or text[0] != "filename,label":
        raise ValueError("labels.csv must start with a 'filename,label' header")
    for line in text[1:]:
        name, _, label = line.partition(",")
        arr = read_netpbm(root / name)
        if arr.ndim == 2:
            arr = np.stack([arr] * 3, axis=-1)
        images.append(arr.transpose(2, 0, 1).astype(np.float64) / 255.0)
        labels.append(int(label))
    if not images:
        raise ValueError(f"manifest {manifest} lists no images")
    return Dataset(
        images=np.stack(images),
        labels=np.asarray(labels, dtype=np.int64),
        class_count=class_count,
        split=split,
    )
