"""Datasets and the distribution shifts applied to them."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, NumericError
from .numcore import make_rng, substream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

SHIFT_KINDS = ("rotation", "gauss_noise", "gauss_blur", "impulse_noise", "fgsm")


@dataclass
class Dataset:
    """``inputs`` is N x d; ``targets`` holds class indices or real labels."""

    inputs: np.ndarray
    targets: np.ndarray
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError("dataset needs at least one input row")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ValueError("targets and inputs differ in length")
        if not np.all(np.isfinite(self.inputs)):
            raise NumericError("dataset inputs must be finite")
        if self.image_shape is not None:
            self.image_shape = (int(self.image_shape[0]), int(self.image_shape[1]))
            if self.image_shape[0] * self.image_shape[1] != self.inputs.shape[1]:
                raise ValueError("image_shape does not match input width")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> Dataset:
        return Dataset(self.inputs[idx], self.targets[idx], self.image_shape)

    def with_inputs(self, inputs) -> Dataset:
        return Dataset(inputs, self.targets.copy(), self.image_shape)

    def with_targets(self, targets) -> Dataset:
        return Dataset(self.inputs.copy(), targets, self.image_shape)

    def images(self) -> np.ndarray:
        if self.image_shape is None:
            raise ValueError("dataset is not image-shaped")
        return self.inputs.reshape(len(self), *self.image_shape)


def make_blobs(num_classes: int, d: int, per_class: int, separation: float, seed: int) -> Dataset:
    """Isotropic unit-variance Gaussian blobs centered at ``separation * mu_c``.

    The ``mu_c`` are random unit vectors drawn from the seeded generator.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if separation < 0:
        raise ValueError("separation must be nonnegative")
    rng = make_rng(seed)
    centers = rng.standard_normal((num_classes, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.repeat(np.arange(num_classes), per_class)
    x = separation * centers[labels] + rng.standard_normal((labels.size, d))
    order = rng.permutation(labels.size)
    return Dataset(x[order], labels[order])


def load_digits_dataset() -> Dataset:
    """The 8x8 handwritten digits bundled with scikit-learn, pixels scaled to [0, 1]."""
    from sklearn.datasets import load_digits

    bunch = load_digits()
    return Dataset(bunch.data / 16.0, bunch.target.astype(np.int64), (8, 8))


def split(data: Dataset, holdout_frac: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random (train, holdout) split."""
    n = len(data)
    order = make_rng(seed).permutation(n)
    n_hold = int(round(holdout_frac * n))
    return data.subset(np.sort(order[n_hold:])), data.subset(np.sort(order[:n_hold]))


# --- IDX ------------------------------------------------------------------


def _read_u32s(buf: bytes, offset: int, count: int, what: str):
    end = offset + 4 * count
    if len(buf) < end:
        raise FormatError(f"truncated {what} header at offset {offset}", field=what, offset=offset)
    return struct.unpack_from(f">{count}I", buf, offset)


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image file (magic 0x803) and label file (magic 0x801)."""
    img = Path(images_path).read_bytes()
    lab = Path(labels_path).read_bytes()

    magic, n, rows, cols = _read_u32s(img, 0, 4, "images")
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad image magic 0x{magic:08x} at offset 0", field="images.magic", offset=0)
    lmagic, ln = _read_u32s(lab, 0, 2, "labels")
    if lmagic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad label magic 0x{lmagic:08x} at offset 0", field="labels.magic", offset=0)
    if ln != n:
        raise FormatError(f"image count {n} != label count {ln} (offset 4)", field="labels.count", offset=4)
    if n == 0:
        raise FormatError("IDX files contain no items", field="images.count", offset=4)
    need = 16 + n * rows * cols
    if len(img) < need:
        raise FormatError(
            f"image payload truncated at offset {len(img)} (need {need} bytes)",
            field="images.pixels",
            offset=len(img),
        )
    if len(lab) < 8 + n:
        raise FormatError(
            f"label payload truncated at offset {len(lab)} (need {8 + n} bytes)",
            field="labels.values",
            offset=len(lab),
        )
    pixels = np.frombuffer(img, dtype=np.uint8, count=n * rows * cols, offset=16)
    labels = np.frombuffer(lab, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    return Dataset(pixels.reshape(n, rows * cols) / 255.0, labels, (rows, cols))


def write_idx(images_path, labels_path, images: np.ndarray, labels) -> None:
    """Write uint8 images (N x H x W) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


# --- shifts -----------------------------------------------------------------


@dataclass(frozen=True)
class ShiftSpec:
    """One corruption at one level (degrees, sigma, probability or epsilon)."""

    kind: str
    level: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise ValueError(f"unknown shift kind {self.kind!r}")
        if self.kind == "rotation" and not 0 <= self.level < 360:
            raise ValueError("rotation degrees must be in [0, 360)")
        if self.kind == "impulse_noise" and not 0 <= self.level <= 1:
            raise ValueError("impulse probability must be in [0, 1]")
        if self.level < 0:
            raise ValueError("shift level must be nonnegative")


def rotate_images(images: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate N x H x W images about their center, clockwise as displayed (row 0 on top).

    Bilinear interpolation; samples that fall outside the image read as 0.
    """
    n, h, w = images.shape
    theta = math.radians(degrees)
    cos, sin = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = rr - cy, cc - cx
    # inverse map: output pixel -> source location
    sy = cos * dy - sin * dx + cy
    sx = sin * dy + cos * dx + cx
    y0, x0 = np.floor(sy).astype(np.int64), np.floor(sx).astype(np.int64)
    fy, fx = sy - y0, sx - x0
    padded = np.zeros((n, h + 2, w + 2))
    padded[:, 1:-1, 1:-1] = images

    def tap(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        yy = np.where(inside, yy + 1, 0)
        xx = np.where(inside, xx + 1, 0)
        return padded[:, yy, xx]

    return (
        tap(y0, x0) * ((1 - fy) * (1 - fx))
        + tap(y0, x0 + 1) * ((1 - fy) * fx)
        + tap(y0 + 1, x0) * (fy * (1 - fx))
        + tap(y0 + 1, x0 + 1) * (fy * fx)
    )


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def blur_images(images: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with clamped edges."""
    if sigma == 0:
        return images.copy()
    k = gaussian_kernel(sigma)
    r = (k.size - 1) // 2
    out = images
    for axis in (1, 2):
        size = out.shape[axis]
        idx = np.clip(np.arange(size)[:, None] + np.arange(-r, r + 1)[None, :], 0, size - 1)
        gathered = np.take(out, idx, axis=axis)  # inserts the tap axis after `axis`
        out = np.tensordot(gathered, k, axes=([axis + 1], [0]))
    return out


def _per_sample(seed: int, n: int, draw) -> np.ndarray:
    return np.stack([draw(substream(seed, i)) for i in range(n)])


def apply_shift(data: Dataset, shift: ShiftSpec, model=None, loss=None) -> Dataset:
    """Corrupt the inputs of ``data``; targets are carried through unchanged.

    Stochastic shifts draw from a per-sample substream so the result does not
    depend on processing order. ``fgsm`` additionally needs ``model`` and ``loss``.
    """
    x = data.inputs
    n, d = x.shape
    kind, level = shift.kind, shift.level
    if kind in ("rotation", "gauss_blur") and data.image_shape is None:
        raise ValueError(f"{kind} needs an image-shaped dataset")
    if kind == "rotation":
        if level == 0:
            return data.with_inputs(x.copy())
        out = rotate_images(data.images(), level).reshape(n, d)
        return data.with_inputs(np.clip(out, 0.0, 1.0))
    if kind == "gauss_blur":
        return data.with_inputs(blur_images(data.images(), level).reshape(n, d))
    if kind == "gauss_noise":
        if level == 0:
            return data.with_inputs(x.copy())
        noise = _per_sample(shift.seed, n, lambda g: g.standard_normal(d))
        return data.with_inputs(np.clip(x + level * noise, 0.0, 1.0))
    if kind == "impulse_noise":
        draws = _per_sample(shift.seed, n, lambda g: g.random((2, d)))
        hit = draws[:, 0] < level
        salt = (draws[:, 1] < 0.5).astype(np.float64)
        return data.with_inputs(np.where(hit, salt, x))
    if model is None or loss is None:
        raise ValueError("fgsm shift needs a model and a loss")
    return fgsm(model, loss, data, level)


def fgsm(model, loss, data: Dataset, eps: float) -> Dataset:
    """One-step sign-gradient attack, clamped to [0, 1]."""
    from .netcore import input_gradient

    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if eps == 0:
        return data.with_inputs(data.inputs.copy())
    g = input_gradient(model, data.inputs, data.targets, loss)
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(g), axis=1))[0])
        raise NumericError(f"non-finite input gradient at sample {bad}", index=bad)
    return data.with_inputs(np.clip(data.inputs + eps * np.sign(g), 0.0, 1.0))
