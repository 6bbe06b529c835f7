"""Dataset ingestion, preprocessing, and desk-scale synthetic surrogates.

Two unpaired image domains drive training: a grayscale digit domain and a
colored-digit domain built by compositing digit foregrounds over random
backgrounds. A small paired scene surrogate stands in for map/label style
tasks evaluated by MSE. All construction is a pure function of
``(inputs, seed)``; images are float32 arrays of shape (N, C, H, W) with
values in [-1, 1].

Raw digit ingestion accepts the standard IDX byte layout (big-endian magic,
dims, unsigned bytes) or a directory of PNG files, selected by whether the
path is a file or a directory.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import torch

from .errors import ConfigError, DataIngestError, ShapeError, ValidationError
from .seeding import derive_seed, spawn_seeds

_CACHE_MAGIC = b"ACD1"


class EmptyStreamWarning(UserWarning):
    """Batch stream will yield nothing (batch_size > dataset with drop_last)."""


@dataclass
class Dataset:
    """A named image collection, optionally labeled and optionally paired."""

    name: str
    split: str
    images: np.ndarray
    labels: np.ndarray | None = None
    paired_partner: np.ndarray | None = None

    def __post_init__(self):
        if self.split not in ("train", "val"):
            raise ValidationError(f"split must be 'train' or 'val', got {self.split!r}")
        img = np.asarray(self.images, dtype=np.float32)
        if img.ndim != 4:
            raise ShapeError(f"images must be (N, C, H, W), got shape {img.shape}")
        if img.size and (img.min() < -1.0 - 1e-6 or img.max() > 1.0 + 1e-6):
            raise ValidationError("pixel values must lie in [-1, 1]")
        self.images = img
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (img.shape[0],):
                raise ShapeError(f"labels shape {lab.shape} does not match {img.shape[0]} images")
            self.labels = lab
        if self.paired_partner is not None:
            par = np.asarray(self.paired_partner, dtype=np.float32)
            if par.shape[0] != img.shape[0]:
                raise ShapeError("paired_partner length must equal image count")
            self.paired_partner = par

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])


@dataclass
class DomainPair:
    """Source and target domains; ``paired`` only for aligned ground-truth tasks."""

    source: Dataset
    target: Dataset
    paired: bool = False

    def __post_init__(self):
        if self.paired and len(self.source) != len(self.target):
            raise ValidationError("paired domains must have equal length")


# ---------------------------------------------------------------------------
# Resizing and raw ingestion
# ---------------------------------------------------------------------------


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a (..., H, W) array with half-pixel centers.

    Resizing to the input size reproduces the input exactly.
    """
    *lead, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    sy = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    sx = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(sy).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(sx).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(sy - y0, 0.0, 1.0)[:, None]
    fx = np.clip(sx - x0, 0.0, 1.0)[None, :]
    flat = img.reshape(-1, h, w)
    top = flat[:, y0[:, None], x0[None, :]] * (1 - fx) + flat[:, y0[:, None], x1[None, :]] * fx
    bot = flat[:, y1[:, None], x0[None, :]] * (1 - fx) + flat[:, y1[:, None], x1[None, :]] * fx
    out = top * (1 - fy) + bot * fy
    return out.reshape(*lead, out_h, out_w).astype(img.dtype)


def _read_idx(path: Path) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataIngestError(f"cannot read raw file {path}: {e}") from e
    if len(raw) < 4:
        raise DataIngestError(f"corrupt IDX file {path}: too short for magic")
    zero1, zero2, dtype_code, ndim = struct.unpack(">BBBB", raw[:4])
    if zero1 != 0 or zero2 != 0 or dtype_code != 0x08:
        raise DataIngestError(f"corrupt IDX file {path}: bad magic {raw[:4].hex()}")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise DataIngestError(f"corrupt IDX file {path}: truncated dims")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    expected = int(np.prod(dims))
    body = np.frombuffer(raw, dtype=np.uint8, offset=header_end)
    if body.size != expected:
        raise DataIngestError(
            f"corrupt IDX file {path}: payload {body.size} bytes, header says {expected}"
        )
    return body.reshape(dims)


def _labels_path_for(images_path: Path) -> Path | None:
    name = images_path.name
    if "images" in name:
        cand = images_path.with_name(name.replace("images", "labels"))
        if cand.exists():
            return cand
    return None


def _load_png_dir(path: Path) -> tuple[np.ndarray, np.ndarray | None]:
    from PIL import Image

    files = sorted(path.glob("*.png"))
    if not files:
        raise DataIngestError(f"no PNG files found in {path}")
    imgs, labels = [], []
    for f in files:
        try:
            with Image.open(f) as im:
                arr = np.asarray(im)
        except Exception as e:
            raise DataIngestError(f"cannot read image {f}: {e}") from e
        if arr.ndim == 2:
            arr = arr[None, :, :]
        elif arr.ndim == 3:
            arr = arr[:, :, :3].transpose(2, 0, 1)
        else:
            raise ShapeError(f"image {f} has unsupported shape {arr.shape}")
        imgs.append(arr.astype(np.float32))
        stem = f.stem.split("_")[0]
        labels.append(int(stem) if stem.isdigit() else -1)
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise ShapeError(f"PNG directory {path} mixes image shapes: {sorted(shapes)}")
    lab = np.asarray(labels)
    return np.stack(imgs), (lab if (lab >= 0).all() else None)


def load_mnist_like(path, size: int, name: str = "digits", split: str = "train") -> Dataset:
    """Load a raw digit set, replicate grayscale to RGB, resize, and rescale.

    ``path`` is either an IDX image file (a sibling file with ``labels`` in
    its name supplies labels when present) or a directory of PNGs whose
    filenames start with the digit label.
    """
    if size < 8:
        raise ValidationError("size must be >= 8")
    path = Path(path)
    if not path.exists():
        raise DataIngestError(f"raw data path does not exist: {path}")
    labels = None
    if path.is_dir():
        raw, labels = _load_png_dir(path)
    else:
        arr = _read_idx(path)
        if arr.ndim != 3:
            raise ShapeError(f"IDX image file {path} must be rank 3 (N, H, W), got rank {arr.ndim}")
        raw = arr.astype(np.float32)[:, None, :, :]
        lpath = _labels_path_for(path)
        if lpath is not None:
            lab = _read_idx(lpath)
            if lab.ndim != 1 or lab.shape[0] != raw.shape[0]:
                raise ShapeError(
                    f"label file {lpath} has shape {lab.shape}, expected ({raw.shape[0]},)"
                )
            labels = lab.astype(np.int64)
    n, c, h, w = raw.shape
    resized = bilinear_resize(raw, size, size)
    if c == 1:
        resized = np.repeat(resized, 3, axis=1)
    elif c != 3:
        raise ShapeError(f"expected 1 or 3 channels, got {c}")
    images = (resized / 255.0) * 2.0 - 1.0
    return Dataset(name=name, split=split, images=np.clip(images, -1.0, 1.0), labels=labels)


# ---------------------------------------------------------------------------
# Procedural digit rendering (desk-scale stand-in for a raw digit corpus)
# ---------------------------------------------------------------------------

_GLYPHS = {
    0: ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    1: ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    2: ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    3: ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    4: ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    5: ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    6: ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    7: ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    8: ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    9: ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
}

_GLYPH_ARRAYS = {
    d: np.asarray([[float(ch) for ch in row] for row in rows], dtype=np.float32)
    for d, rows in _GLYPHS.items()
}


def _rotate_gray(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate one (H, W) grayscale image with bilinear resampling."""
    import math

    h, w = img.shape
    a = math.radians(degrees)
    ca, sa = math.cos(a), math.sin(a)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    yc, xc = (h - 1) / 2.0, (w - 1) / 2.0
    ys = ca * (yy - yc) + sa * (xx - xc) + yc
    xs = -sa * (yy - yc) + ca * (xx - xc) + xc
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = ys - y0
    fx = xs - x0

    def sample(yi, xi):
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        out = np.zeros_like(ys)
        out[valid] = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)][valid]
        return out

    top = sample(y0, x0) * (1 - fx) + sample(y0, x0 + 1) * fx
    bot = sample(y0 + 1, x0) * (1 - fx) + sample(y0 + 1, x0 + 1) * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def synth_digits(
    n: int, size: int, seed: int, name: str = "digits", split: str = "train"
) -> Dataset:
    """Render n labeled grayscale digit images procedurally.

    Bitmap-font glyphs are rasterized with random scale, shift, rotation,
    and stroke intensity, giving a deterministic labeled digit set without
    any external corpus.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if size < 8:
        raise ValidationError("size must be >= 8")
    rng = np.random.default_rng(seed)
    images = np.zeros((n, size, size), dtype=np.float32)
    labels = rng.integers(0, 10, size=n)
    for i in range(n):
        glyph = _GLYPH_ARRAYS[int(labels[i])]
        box = int(round(size * rng.uniform(0.6, 0.85)))
        box = max(6, box)
        gh = box
        gw = max(4, int(round(box * 5 / 7)))
        # Render at double resolution and max-pool for bold, solid strokes.
        up = bilinear_resize(glyph, gh * 2, gw * 2)
        digit = np.maximum.reduce([up[0::2, 0::2], up[1::2, 0::2], up[0::2, 1::2], up[1::2, 1::2]])
        digit = np.clip(digit * 1.4, 0.0, 1.0)
        intensity = rng.uniform(0.75, 1.0)
        canvas = np.zeros((size, size), dtype=np.float32)
        max_y = size - gh
        max_x = size - gw
        y0 = int(round(max_y / 2 + rng.uniform(-0.12, 0.12) * size))
        x0 = int(round(max_x / 2 + rng.uniform(-0.12, 0.12) * size))
        y0 = min(max(y0, 0), max_y)
        x0 = min(max(x0, 0), max_x)
        canvas[y0 : y0 + gh, x0 : x0 + gw] = digit * intensity
        canvas = _rotate_gray(canvas, rng.uniform(-8.0, 8.0))
        images[i] = np.clip(canvas, 0.0, 1.0)
    images3 = np.repeat(images[:, None, :, :], 3, axis=1)
    return Dataset(name=name, split=split, images=images3 * 2.0 - 1.0, labels=labels)


# ---------------------------------------------------------------------------
# Colored-digit surrogate
# ---------------------------------------------------------------------------


def _procedural_background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Random smooth color gradient plus noise, (3, size, size) in [-1, 1].

    Mean luminance is capped so a luminance-inverted foreground stays
    legible on any generated background.
    """
    c0 = rng.uniform(-0.8, 0.8, size=3)
    c1 = rng.uniform(-0.8, 0.8, size=3)
    for c in (c0, c1):
        m = c.mean()
        if abs(m) > 0.4:
            c -= m - np.sign(m) * 0.4
    t_y = np.linspace(0.0, 1.0, size)[:, None]
    t_x = np.linspace(0.0, 1.0, size)[None, :]
    wy, wx = rng.uniform(-1.0, 1.0, size=2)
    norm = abs(wy) + abs(wx) + 1e-8
    t = (wy * t_y + wx * t_x) / norm * 0.5 + 0.5
    bg = c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    bg = bg + rng.uniform(-0.1, 0.1, size=(3, size, size))
    return np.clip(bg, -1.0, 1.0).astype(np.float32)


def _patch_background(rng: np.random.Generator, size: int, patch_images: list[np.ndarray]) -> np.ndarray:
    src = patch_images[int(rng.integers(0, len(patch_images)))]
    _, h, w = src.shape
    if h < size or w < size:
        src = bilinear_resize(src, max(size, h), max(size, w))
        _, h, w = src.shape
    y0 = int(rng.integers(0, h - size + 1))
    x0 = int(rng.integers(0, w - size + 1))
    return src[:, y0 : y0 + size, x0 : x0 + size].astype(np.float32)


def _load_patch_sources(patch_dir: Path) -> list[np.ndarray]:
    from PIL import Image

    files = sorted(
        p for p in patch_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")
    )
    if not files:
        raise ConfigError(f"patch source directory {patch_dir} contains no images")
    out = []
    for f in files:
        with Image.open(f) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
        out.append((arr.transpose(2, 0, 1) / 255.0) * 2.0 - 1.0)
    return out


def synthesize_colored_digits(
    base: Dataset,
    seed: int,
    background: str = "procedural",
    patch_dir=None,
    name: str = "colored-digits",
) -> Dataset:
    """Blend digit foregrounds over random color backgrounds.

    Output pixel = bg * (1 - m) + invert(bg) * m, where m is the normalized
    grayscale digit mask, so strokes take the inverted background color and
    stay legible. Labels carry over; fixed seed gives bit-identical output.
    """
    if base.labels is None:
        raise ValidationError("base dataset must be labeled")
    if background not in ("procedural", "patches"):
        raise ValidationError(f"unknown background mode {background!r}")
    patch_images = None
    if background == "patches":
        if patch_dir is None:
            raise ConfigError("background='patches' requires a patch source directory")
        patch_images = _load_patch_sources(Path(patch_dir))
    rng = np.random.default_rng(seed)
    n, _, h, w = base.images.shape
    if h != w:
        raise ShapeError("colored-digit synthesis expects square images")
    out = np.empty_like(base.images)
    for i in range(n):
        if patch_images is not None:
            bg = _patch_background(rng, h, patch_images)
        else:
            bg = _procedural_background(rng, h)
        m = (base.images[i].mean(axis=0) + 1.0) / 2.0
        out[i] = bg * (1.0 - 2.0 * m[None, :, :])
    return Dataset(
        name=name,
        split=base.split,
        images=np.clip(out, -1.0, 1.0),
        labels=base.labels.copy(),
    )


# ---------------------------------------------------------------------------
# Paired scene surrogate
# ---------------------------------------------------------------------------

_LABEL_PALETTE = np.asarray(
    [
        [-0.8, -0.8, 0.8],
        [-0.8, 0.8, -0.8],
        [0.8, -0.8, -0.8],
        [0.8, 0.8, -0.8],
        [-0.6, -0.6, -0.6],
    ],
    dtype=np.float32,
)

_PHOTO_PALETTE = np.asarray(
    [
        [-0.2, -0.1, 0.5],
        [-0.3, 0.4, -0.2],
        [0.5, -0.1, -0.2],
        [0.4, 0.4, -0.3],
        [-0.1, -0.1, -0.1],
    ],
    dtype=np.float32,
)


def make_paired_surrogate(n: int, size: int, seed: int) -> DomainPair:
    """Build n aligned (flat-color label, textured photo) scene pairs.

    Scenes are random axis-aligned rectangles over a background region, the
    same geometry rendered twice: flat class colors for the label image and
    textured class tones for the photo.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labels_img = np.empty((n, 3, size, size), dtype=np.float32)
    photos_img = np.empty((n, 3, size, size), dtype=np.float32)
    k_classes = len(_LABEL_PALETTE)
    for i in range(n):
        class_map = np.full((size, size), int(rng.integers(0, k_classes)), dtype=np.int64)
        for _ in range(int(rng.integers(2, 5))):
            cls = int(rng.integers(0, k_classes))
            y0, x0 = rng.integers(0, size - 2, size=2)
            hh = int(rng.integers(2, max(3, size // 2)))
            ww = int(rng.integers(2, max(3, size // 2)))
            class_map[y0 : y0 + hh, x0 : x0 + ww] = cls
        labels_img[i] = _LABEL_PALETTE[class_map].transpose(2, 0, 1)
        photo = _PHOTO_PALETTE[class_map].transpose(2, 0, 1)
        shade = rng.uniform(-0.2, 0.2) * np.linspace(-1, 1, size)[None, :, None]
        photo = photo + shade + rng.uniform(-0.25, 0.25, size=(3, size, size))
        photos_img[i] = np.clip(photo, -1.0, 1.0)
    source = Dataset("scene-labels", "train", labels_img, paired_partner=photos_img)
    target = Dataset("scene-photos", "train", photos_img, paired_partner=labels_img)
    return DomainPair(source=source, target=target, paired=True)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


def batcher(
    dataset: Dataset,
    batch_size: int,
    seed: int,
    drop_last: bool = False,
    with_labels: bool = False,
) -> Iterator:
    """Yield shuffled torch batches for one pass over ``dataset``.

    Shuffle order is a pure function of ``seed``; restarting with the same
    seed replays the same batch order. Unpaired training draws source and
    target streams with independent seeds.
    """
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    if with_labels and dataset.labels is None:
        raise ValidationError("dataset has no labels")
    n = len(dataset)
    if drop_last and batch_size > n:
        warnings.warn(
            f"batch_size {batch_size} exceeds dataset size {n} with drop_last; "
            "stream is empty",
            EmptyStreamWarning,
            stacklevel=2,
        )
        return
    order = np.random.default_rng(seed).permutation(n)
    stop = n - (n % batch_size) if drop_last else n
    for start in range(0, stop, batch_size):
        idx = order[start : start + batch_size]
        batch = torch.from_numpy(dataset.images[idx])
        assert batch.min() >= -1.0 and batch.max() <= 1.0, "batch violates [-1, 1] range"
        if with_labels:
            yield batch, torch.from_numpy(dataset.labels[idx])
        else:
            yield batch


# ---------------------------------------------------------------------------
# Binary dataset cache
# ---------------------------------------------------------------------------


def save_dataset(dataset: Dataset, path) -> None:
    """Write one dataset to the binary cache format.

    Layout: magic, little-endian u32 (N, C, H, W), flag bytes for labels and
    paired partner, split code, name, then raw little-endian float32 pixels.
    """
    path = Path(path)
    n, c, h, w = dataset.images.shape
    name_bytes = dataset.name.encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CACHE_MAGIC)
        f.write(struct.pack("<4I", n, c, h, w))
        f.write(
            struct.pack(
                "<BBB",
                1 if dataset.labels is not None else 0,
                1 if dataset.paired_partner is not None else 0,
                0 if dataset.split == "train" else 1,
            )
        )
        f.write(struct.pack("<H", len(name_bytes)))
        f.write(name_bytes)
        if dataset.labels is not None:
            f.write(dataset.labels.astype("<i8").tobytes())
        if dataset.paired_partner is not None:
            f.write(dataset.paired_partner.astype("<f4").tobytes())
        f.write(dataset.images.astype("<f4").tobytes())


def load_dataset(path) -> Dataset:
    """Read a dataset back from the binary cache format."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataIngestError(f"cannot read dataset cache {path}: {e}") from e
    if raw[:4] != _CACHE_MAGIC:
        raise DataIngestError(f"{path} is not a dataset cache (bad magic)")
    off = 4
    n, c, h, w = struct.unpack_from("<4I", raw, off)
    off += 16
    has_labels, has_partner, split_code = struct.unpack_from("<BBB", raw, off)
    off += 3
    (name_len,) = struct.unpack_from("<H", raw, off)
    off += 2
    name = raw[off : off + name_len].decode("utf-8")
    off += name_len
    labels = None
    if has_labels:
        labels = np.frombuffer(raw, dtype="<i8", count=n, offset=off).copy()
        off += 8 * n
    partner = None
    count = n * c * h * w
    if has_partner:
        partner = (
            np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(n, c, h, w).copy()
        )
        off += 4 * count
    images = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(n, c, h, w).copy()
    return Dataset(
        name=name,
        split="train" if split_code == 0 else "val",
        images=images,
        labels=labels,
        paired_partner=partner,
    )


# ---------------------------------------------------------------------------
# Desk-scale task assembly
# ---------------------------------------------------------------------------


def build_digit_task(
    n_train: int,
    n_val: int,
    size: int,
    seed: int,
    background: str = "procedural",
    patch_dir=None,
) -> tuple[DomainPair, Dataset, Dataset]:
    """Assemble the unpaired digit translation task.

    Returns (train pair, source val set, target val set). The two training
    domains are built from disjoint digit draws so no index correspondence
    exists between them.
    """
    s = spawn_seeds(seed, 4)
    src_train = synth_digits(n_train, size, s[0], name="digits", split="train")
    src_val = synth_digits(n_val, size, s[1], name="digits", split="val")
    tgt_train = synthesize_colored_digits(
        synth_digits(n_train, size, s[2], name="colored-digits", split="train"),
        seed=derive_seed(s[2], 1),
        background=background,
        patch_dir=patch_dir,
    )
    tgt_val = synthesize_colored_digits(
        synth_digits(n_val, size, s[3], name="colored-digits", split="val"),
        seed=derive_seed(s[3], 1),
        background=background,
        patch_dir=patch_dir,
    )
    return DomainPair(source=src_train, target=tgt_train, paired=False), src_val, tgt_val
