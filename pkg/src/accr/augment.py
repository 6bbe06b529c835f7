"""Stochastic semantics-preserving image augmentations.

A :class:`TransformSpec` describes an augmentation family (crop, rotation,
cutout, erasing, color jitter, or a composition). :func:`draw` samples all
random parameters once into a :class:`TransformDraw`; :func:`apply` then
maps a batch through the realized transform deterministically, so the same
draw can be reused to evaluate a discriminator on a matched pair
``(x, T(x))``.

All transforms preserve the (C, H, W) shape exactly and keep pixel values
inside [-1, 1]. Geometric realizations are stored in relative coordinates
so one draw applies to any image size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ShapeError, ValidationError

KINDS = (
    "identity",
    "random_crop",
    "random_rotation",
    "cutout",
    "random_erasing",
    "color_jitter",
    "compose",
)

# Config-schema parameter names per kind. These keys are the serialized
# form consumed by the CLI config loader.
PARAM_NAMES = {
    "identity": frozenset(),
    "random_crop": frozenset({"pad"}),
    "random_rotation": frozenset({"degrees"}),
    "cutout": frozenset({"side"}),
    "random_erasing": frozenset({"area_min", "area_max", "aspect_min", "aspect_max"}),
    "color_jitter": frozenset({"brightness", "contrast", "saturation"}),
    "compose": frozenset(),
}

DEFAULT_PARAMS = {
    "random_crop": {"pad": 2},
    "random_rotation": {"degrees": 10.0},
    "cutout": {"side": 8},
    "random_erasing": {"area_min": 0.02, "area_max": 0.2, "aspect_min": 0.3, "aspect_max": 3.3},
    "color_jitter": {"brightness": 0.2, "contrast": 0.2, "saturation": 0.2},
}


@dataclass(frozen=True)
class TransformSpec:
    """Description of one stochastic augmentation and its parameters."""

    kind: str
    params: dict = field(default_factory=dict)
    children: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown transform kind {self.kind!r}")
        allowed = PARAM_NAMES[self.kind]
        extra = set(self.params) - allowed
        if extra:
            raise ValidationError(f"{self.kind}: unexpected params {sorted(extra)}")
        if self.kind == "compose":
            if not self.children:
                raise ValidationError("compose requires at least one child")
            object.__setattr__(self, "children", tuple(self.children))
            for c in self.children:
                if not isinstance(c, TransformSpec):
                    raise ValidationError("compose children must be TransformSpec")
        elif self.children:
            raise ValidationError(f"{self.kind} takes no children")
        if self.kind == "identity" and self.params:
            raise ValidationError("identity takes no params")
        self._validate_params()

    def _validate_params(self):
        p = self.resolved_params()
        if self.kind == "random_crop":
            if int(p["pad"]) < 0:
                raise ValidationError("random_crop: pad must be >= 0")
        elif self.kind == "random_rotation":
            if p["degrees"] < 0:
                raise ValidationError("random_rotation: degrees must be >= 0")
        elif self.kind == "cutout":
            if int(p["side"]) < 1:
                raise ValidationError("cutout: side must be >= 1")
        elif self.kind == "random_erasing":
            if not (0 < p["area_min"] <= p["area_max"] < 1):
                raise ValidationError("random_erasing: need 0 < area_min <= area_max < 1")
            if not (0 < p["aspect_min"] <= p["aspect_max"]):
                raise ValidationError("random_erasing: need 0 < aspect_min <= aspect_max")
        elif self.kind == "color_jitter":
            for k in ("brightness", "contrast", "saturation"):
                if not (0 <= p[k] < 1):
                    raise ValidationError(f"color_jitter: {k} strength must be in [0, 1)")

    def resolved_params(self) -> dict:
        """Params with kind defaults filled in."""
        merged = dict(DEFAULT_PARAMS.get(self.kind, {}))
        merged.update(self.params)
        return merged

    def to_config(self) -> dict:
        """Serialize to the plain-dict config form."""
        cfg = {"kind": self.kind}
        if self.params:
            cfg["params"] = dict(self.params)
        if self.children:
            cfg["children"] = [c.to_config() for c in self.children]
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "TransformSpec":
        """Rebuild from the plain-dict config form."""
        if not isinstance(cfg, dict) or "kind" not in cfg:
            raise ValidationError("transform config must be a dict with a 'kind' key")
        children = tuple(cls.from_config(c) for c in cfg.get("children", ()))
        return cls(kind=cfg["kind"], params=dict(cfg.get("params", {})), children=children)


@dataclass(frozen=True)
class TransformDraw:
    """One concrete realization of a TransformSpec.

    ``realized`` holds the sampled parameters, one entry per image when the
    draw is batched (``n`` > 1). Applying the same draw to the same input is
    deterministic.
    """

    spec: TransformSpec
    seed: int
    n: int
    realized: dict


def draw(spec: TransformSpec, rng_seed: int, n: int = 1) -> TransformDraw:
    """Sample all random parameters of ``spec`` for ``n`` images.

    A draw with n == 1 applies the same realization to every image in a
    batch; n == batch size gives per-image independent realizations.
    """
    if n < 1:
        raise ValidationError("draw: n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    realized = _realize(spec, rng, n)
    return TransformDraw(spec=spec, seed=int(rng_seed), n=n, realized=realized)


def _realize(spec: TransformSpec, rng: np.random.Generator, n: int) -> dict:
    p = spec.resolved_params()
    if spec.kind == "identity":
        return {}
    if spec.kind == "random_crop":
        pad = int(p["pad"])
        return {
            "dy": rng.integers(0, 2 * pad + 1, size=n),
            "dx": rng.integers(0, 2 * pad + 1, size=n),
        }
    if spec.kind == "random_rotation":
        deg = float(p["degrees"])
        return {"angle": rng.uniform(-deg, deg, size=n)}
    if spec.kind == "cutout":
        # Box centers in relative coords; pixel boxes derive from H, W at apply time.
        return {"cy": rng.random(n), "cx": rng.random(n)}
    if spec.kind == "random_erasing":
        return {
            "area": rng.uniform(p["area_min"], p["area_max"], size=n),
            "aspect": rng.uniform(p["aspect_min"], p["aspect_max"], size=n),
            "y": rng.random(n),
            "x": rng.random(n),
            "fill_seed": rng.integers(0, 2**31 - 1, size=n),
        }
    if spec.kind == "color_jitter":
        return {
            "brightness": 1.0 + p["brightness"] * rng.uniform(-1.0, 1.0, size=n),
            "contrast": 1.0 + p["contrast"] * rng.uniform(-1.0, 1.0, size=n),
            "saturation": 1.0 + p["saturation"] * rng.uniform(-1.0, 1.0, size=n),
        }
    if spec.kind == "compose":
        return {"children": [_realize(c, rng, n) for c in spec.children]}
    raise ValidationError(f"unknown transform kind {spec.kind!r}")


def apply(t: TransformDraw, x: torch.Tensor) -> torch.Tensor:
    """Apply a realized transform to a (B, C, H, W) batch.

    Shape-preserving; the output may alias the input for identity.
    """
    if x.ndim != 4:
        raise ShapeError(f"expected a rank-4 batch, got shape {tuple(x.shape)}")
    if t.n != 1 and t.n != x.shape[0]:
        raise ShapeError(f"draw batched for {t.n} images, batch has {x.shape[0]}")
    out = _apply_realized(t.spec, t.realized, x)
    if out.shape != x.shape:  # internal sanity: all transforms are shape-preserving
        raise ShapeError(f"transform changed shape {tuple(x.shape)} -> {tuple(out.shape)}")
    return out


def _per_image(values: np.ndarray, i: int, n: int):
    return values[i if n > 1 else 0]


def _apply_realized(spec: TransformSpec, realized: dict, x: torch.Tensor) -> torch.Tensor:
    b, c, h, w = x.shape
    p = spec.resolved_params()

    if spec.kind == "identity":
        return x

    if spec.kind == "compose":
        out = x
        for child, child_real in zip(spec.children, realized["children"]):
            out = _apply_realized(child, child_real, out)
        return out

    n = len(next(iter(realized.values())))

    if spec.kind == "random_crop":
        pad = int(p["pad"])
        if pad == 0:
            return x
        padded = F.pad(x, (pad, pad, pad, pad))
        dy = torch.as_tensor([int(_per_image(realized["dy"], i, n)) for i in range(b)])
        dx = torch.as_tensor([int(_per_image(realized["dx"], i, n)) for i in range(b)])
        bi = torch.arange(b).view(b, 1, 1)
        ri = (dy.view(b, 1, 1) + torch.arange(h).view(1, h, 1)).expand(b, h, w)
        ci = (dx.view(b, 1, 1) + torch.arange(w).view(1, 1, w)).expand(b, h, w)
        # Advanced indexing with the channel slice in the middle puts the
        # gathered dims first: (b, h, w, c).
        return padded[bi, :, ri, ci].permute(0, 3, 1, 2).contiguous()

    if spec.kind == "random_rotation":
        angles = realized["angle"]
        theta = torch.zeros((b, 2, 3), dtype=x.dtype)
        for i in range(b):
            a = math.radians(float(_per_image(angles, i, n)))
            ca, sa = math.cos(a), math.sin(a)
            # Aspect-corrected rotation in normalized grid coordinates.
            theta[i, 0, 0] = ca
            theta[i, 0, 1] = sa * h / w
            theta[i, 1, 0] = -sa * w / h
            theta[i, 1, 1] = ca
        grid = F.affine_grid(theta, list(x.shape), align_corners=False)
        return F.grid_sample(x, grid, mode="bilinear", padding_mode="zeros", align_corners=False)

    if spec.kind == "cutout":
        side = int(p["side"])
        out = x.clone()
        for i in range(b):
            cy = int(float(_per_image(realized["cy"], i, n)) * h)
            cx = int(float(_per_image(realized["cx"], i, n)) * w)
            y0 = max(0, cy - side // 2)
            x0 = max(0, cx - side // 2)
            y1 = min(h, cy - side // 2 + side)
            x1 = min(w, cx - side // 2 + side)
            out[i, :, y0:y1, x0:x1] = 0.0
        return out

    if spec.kind == "random_erasing":
        out = x.clone()
        for i in range(b):
            area = float(_per_image(realized["area"], i, n)) * h * w
            aspect = float(_per_image(realized["aspect"], i, n))
            eh = max(1, min(h, int(round(math.sqrt(area * aspect)))))
            ew = max(1, min(w, int(round(math.sqrt(area / aspect)))))
            y0 = int(float(_per_image(realized["y"], i, n)) * (h - eh + 1))
            x0 = int(float(_per_image(realized["x"], i, n)) * (w - ew + 1))
            fill_rng = np.random.default_rng(int(_per_image(realized["fill_seed"], i, n)))
            # Fill noise is shared across channels so the op commutes with
            # channel permutation like the other geometric transforms.
            noise = fill_rng.uniform(-1.0, 1.0, size=(eh, ew))
            out[i, :, y0 : y0 + eh, x0 : x0 + ew] = torch.as_tensor(noise, dtype=x.dtype)
        return out

    if spec.kind == "color_jitter":
        def factors(key):
            vals = realized[key]
            t = torch.as_tensor(
                np.asarray([_per_image(vals, i, n) for i in range(b)]), dtype=x.dtype
            )
            return t.view(b, 1, 1, 1)

        x01 = (x + 1.0) / 2.0
        x01 = x01 * factors("brightness")
        gray = _luma(x01)
        mean = gray.mean(dim=(2, 3), keepdim=True)
        x01 = (x01 - mean) * factors("contrast") + mean
        fs = factors("saturation")
        x01 = x01 * fs + _luma(x01) * (1.0 - fs)
        x01 = x01.clamp(0.0, 1.0)
        return x01 * 2.0 - 1.0

    raise ValidationError(f"unknown transform kind {spec.kind!r}")


def _luma(x01: torch.Tensor) -> torch.Tensor:
    """Per-pixel luminance, broadcastable back over channels."""
    if x01.shape[1] == 3:
        wts = torch.as_tensor([0.299, 0.587, 0.114], dtype=x01.dtype).view(1, 3, 1, 1)
        return (x01 * wts).sum(dim=1, keepdim=True)
    return x01.mean(dim=1, keepdim=True)


def standard_menu(index: int, size: int = 32) -> TransformSpec:
    """Return entry ``index`` (1..7) of the standard augmentation menu.

    1: random crop, 2: random rotation, 3: crop + rotation, 4: cutout,
    5: random erasing, 6: color jitter, 7: crop + rotation + jitter.
    Pixel magnitudes scale proportionally with ``size`` (defaults target
    32 x 32 inputs: pad 2, cutout side 8, rotations within 10 degrees).
    """
    if not 1 <= index <= 7:
        raise ValidationError(f"menu index must be in 1..7, got {index}")
    scale = size / 32.0
    pad = max(1, round(2 * scale))
    side = max(1, round(8 * scale))
    crop = TransformSpec("random_crop", {"pad": pad})
    rot = TransformSpec("random_rotation", {"degrees": 10.0})
    jitter = TransformSpec("color_jitter", {"brightness": 0.2, "contrast": 0.2, "saturation": 0.2})
    if index == 1:
        return crop
    if index == 2:
        return rot
    if index == 3:
        return TransformSpec("compose", children=(crop, rot))
    if index == 4:
        return TransformSpec("cutout", {"side": side})
    if index == 5:
        return TransformSpec("random_erasing", {})
    if index == 6:
        return jitter
    return TransformSpec("compose", children=(crop, rot, jitter))
