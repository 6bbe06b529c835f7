"""Network definitions: generators, patch discriminators, and the evaluation classifier.

Generator: two stride-2 downsampling convolutions, two residual blocks, two
stride-2 transposed convolutions, tanh output head. Output shape equals
input shape for any H, W divisible by 4 and the tanh head keeps values in
[-1, 1].

Discriminator: 5 convolutional layers with stride plan (2, 2, 2, 1, 1) and
4x4 kernels producing a spatial map of patch scores; the activations
feeding the final layer are exposed as a feature tap.

Classifier: 2 convolutional layers and 2 fully connected layers with a
10-way output head.

Checkpoints are zip archives mapping canonical layer names to shape-tagged
little-endian float32 ``.npy`` entries plus a JSON manifest.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError, ValidationError


def _norm_layer(kind: str, channels: int) -> nn.Module:
    if kind == "instance":
        return nn.InstanceNorm2d(channels)
    if kind == "none":
        return nn.Identity()
    raise ValidationError(f"unknown norm kind {kind!r}")


@dataclass
class GeneratorConfig:
    in_channels: int = 3
    base_width: int = 64
    n_res_blocks: int = 2
    norm: str = "instance"
    bias: bool = False


@dataclass
class DiscriminatorConfig:
    in_channels: int = 3
    base_width: int = 64
    norm: str = "instance"


@dataclass
class ClassifierConfig:
    in_channels: int = 3
    input_size: int = 32
    base_width: int = 32
    hidden: int = 128
    n_classes: int = 10


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with normalization and a skip connection."""

    def __init__(self, channels: int, norm: str, bias: bool):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1, bias=bias),
            _norm_layer(norm, channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1, bias=bias),
            _norm_layer(norm, channels),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """Image-to-image generator with a tanh output head.

    Downsampling convolutions use reflection padding so that a constant
    brightness shift of the input turns into a per-channel constant after
    the first convolution, which instance normalization then removes.
    """

    def __init__(self, config: GeneratorConfig | None = None):
        super().__init__()
        cfg = config or GeneratorConfig()
        self.config = cfg
        w = cfg.base_width
        self.down = nn.Sequential(
            nn.Conv2d(cfg.in_channels, w, 4, stride=2, padding=1, padding_mode="reflect", bias=cfg.bias),
            _norm_layer(cfg.norm, w),
            nn.ReLU(inplace=True),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1, padding_mode="reflect", bias=cfg.bias),
            _norm_layer(cfg.norm, 2 * w),
            nn.ReLU(inplace=True),
        )
        self.blocks = nn.Sequential(
            *[ResidualBlock(2 * w, cfg.norm, cfg.bias) for _ in range(cfg.n_res_blocks)]
        )
        self.up = nn.Sequential(
            nn.ConvTranspose2d(2 * w, w, 4, stride=2, padding=1, bias=cfg.bias),
            _norm_layer(cfg.norm, w),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(w, cfg.in_channels, 4, stride=2, padding=1, bias=True),
            nn.Tanh(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4:
            raise ShapeError(f"expected rank-4 input, got shape {tuple(x.shape)}")
        _, c, h, w = x.shape
        if c != self.config.in_channels:
            raise ShapeError(f"expected {self.config.in_channels} channels, got {c}")
        if h % 4 != 0 or w % 4 != 0:
            raise ShapeError(f"spatial dims must be divisible by 4, got {h}x{w}")
        return self.up(self.blocks(self.down(x)))


class _SamePad4(nn.Module):
    """'Same' padding for a stride-1 conv with an even 4x4 kernel."""

    def forward(self, x):
        return F.pad(x, (1, 2, 1, 2))


class PatchDiscriminator(nn.Module):
    """Patch discriminator emitting a spatial map of realness scores."""

    def __init__(self, config: DiscriminatorConfig | None = None):
        super().__init__()
        cfg = config or DiscriminatorConfig()
        self.config = cfg
        w = cfg.base_width
        self.features = nn.Sequential(
            nn.Conv2d(cfg.in_channels, w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1, bias=False),
            _norm_layer(cfg.norm, 2 * w),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * w, 4 * w, 4, stride=2, padding=1, bias=False),
            _norm_layer(cfg.norm, 4 * w),
            nn.LeakyReLU(0.2, inplace=True),
            _SamePad4(),
            nn.Conv2d(4 * w, 8 * w, 4, stride=1, bias=False),
            _norm_layer(cfg.norm, 8 * w),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.head = nn.Sequential(_SamePad4(), nn.Conv2d(8 * w, 1, 4, stride=1))

    def forward(self, x: torch.Tensor, want_features: bool = False):
        if x.ndim != 4:
            raise ShapeError(f"expected rank-4 input, got shape {tuple(x.shape)}")
        if x.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected {self.config.in_channels} channels, got {x.shape[1]}")
        feats = self.features(x)
        scores = self.head(feats)
        if want_features:
            return scores, feats
        return scores

    @staticmethod
    def score_map_shape(h: int, w: int) -> tuple[int, int]:
        """Spatial size of the score map for an h x w input."""
        for _ in range(3):  # three stride-2 layers, k=4, p=1
            h = (h + 2 - 4) // 2 + 1
            w = (w + 2 - 4) // 2 + 1
        return h, w  # stride-1 layers are same-padded


class DigitClassifier(nn.Module):
    """Small convolutional classifier used as a fixed evaluation probe."""

    def __init__(self, config: ClassifierConfig | None = None):
        super().__init__()
        cfg = config or ClassifierConfig()
        if cfg.input_size % 4 != 0:
            raise ValidationError("classifier input_size must be divisible by 4")
        self.config = cfg
        w = cfg.base_width
        self.conv = nn.Sequential(
            nn.Conv2d(cfg.in_channels, w, 5, padding=2),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(w, 2 * w, 5, padding=2),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
        )
        flat = 2 * w * (cfg.input_size // 4) ** 2
        self.fc = nn.Sequential(
            nn.Flatten(),
            nn.Linear(flat, cfg.hidden),
            nn.ReLU(inplace=True),
            nn.Linear(cfg.hidden, cfg.n_classes),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4:
            raise ShapeError(f"expected rank-4 input, got shape {tuple(x.shape)}")
        if x.shape[2] != self.config.input_size or x.shape[3] != self.config.input_size:
            raise ShapeError(
                f"classifier expects {self.config.input_size}x{self.config.input_size} input, "
                f"got {x.shape[2]}x{x.shape[3]}"
            )
        return self.fc(self.conv(x))


@dataclass
class ModelBundle:
    """The four trainable networks of one translation experiment."""

    g1: Generator
    g2: Generator
    d1: PatchDiscriminator
    d2: PatchDiscriminator

    def nets(self) -> dict[str, nn.Module]:
        return {"g1": self.g1, "g2": self.g2, "d1": self.d1, "d2": self.d2}


# ---------------------------------------------------------------------------
# Weight initialization
# ---------------------------------------------------------------------------


def init_weights(net: nn.Module, seed: int, scheme: str = "normal-0.02") -> nn.Module:
    """Deterministically initialize ``net`` in place and return it.

    ``normal-0.02`` draws conv and linear weights from N(0, 0.02^2) and
    zeroes biases; ``default`` reruns each module's standard reset under a
    fixed seed.
    """
    if scheme == "normal-0.02":
        gen = torch.Generator().manual_seed(seed)
        for _, m in sorted(dict(net.named_modules()).items()):
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                with torch.no_grad():
                    m.weight.normal_(0.0, 0.02, generator=gen)
                    if m.bias is not None:
                        m.bias.zero_()
    elif scheme == "default":
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            for _, m in sorted(dict(net.named_modules()).items()):
                if hasattr(m, "reset_parameters"):
                    m.reset_parameters()
    else:
        raise ValidationError(f"unknown init scheme {scheme!r}")
    return net


# ---------------------------------------------------------------------------
# Checkpoint archive
# ---------------------------------------------------------------------------

_NET_KINDS = {
    "generator": (Generator, GeneratorConfig),
    "discriminator": (PatchDiscriminator, DiscriminatorConfig),
    "classifier": (DigitClassifier, ClassifierConfig),
}


def config_hash(obj) -> str:
    """Stable short hash of a JSON-serializable config object."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def write_archive(path, arrays: dict[str, np.ndarray], manifest: dict) -> None:
    """Write a checkpoint archive: manifest.json plus one .npy per array."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        for name, arr in sorted(arrays.items()):
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(arr))
            zf.writestr(name + ".npy", buf.getvalue())


def read_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    arrays = {}
    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        for info in zf.infolist():
            if info.filename.endswith(".npy"):
                arrays[info.filename[:-4]] = np.load(io.BytesIO(zf.read(info.filename)))
    return arrays, manifest


def net_arrays(net: nn.Module, prefix: str) -> dict[str, np.ndarray]:
    """State tensors as little-endian float32 arrays keyed by canonical name."""
    return {
        f"{prefix}/{name}": tensor.detach().cpu().numpy().astype("<f4")
        for name, tensor in net.state_dict().items()
    }


def load_net_arrays(net: nn.Module, arrays: dict[str, np.ndarray], prefix: str) -> None:
    state = {}
    plen = len(prefix) + 1
    for key, arr in arrays.items():
        if key.startswith(prefix + "/"):
            state[key[plen:]] = torch.from_numpy(arr.copy())
    net.load_state_dict(state)


def save_bundle(path, bundle: ModelBundle, manifest_extra: dict | None = None) -> None:
    """Save all four networks into one archive with their configs."""
    arrays = {}
    for name, net in bundle.nets().items():
        arrays.update(net_arrays(net, name))
    manifest = {
        "format": "accr-bundle-v1",
        "generator_config": asdict(bundle.g1.config),
        "discriminator_config": asdict(bundle.d1.config),
    }
    manifest["config_hash"] = config_hash(
        {"g": manifest["generator_config"], "d": manifest["discriminator_config"]}
    )
    if manifest_extra:
        manifest.update(manifest_extra)
    write_archive(path, arrays, manifest)


def load_bundle(path) -> tuple[ModelBundle, dict]:
    """Rebuild a ModelBundle from an archive; returns (bundle, manifest)."""
    arrays, manifest = read_archive(path)
    gcfg = GeneratorConfig(**manifest["generator_config"])
    dcfg = DiscriminatorConfig(**manifest["discriminator_config"])
    bundle = ModelBundle(
        g1=Generator(gcfg),
        g2=Generator(gcfg),
        d1=PatchDiscriminator(dcfg),
        d2=PatchDiscriminator(dcfg),
    )
    for name, net in bundle.nets().items():
        load_net_arrays(net, arrays, name)
    return bundle, manifest


def save_classifier(path, net: DigitClassifier, manifest_extra: dict | None = None) -> None:
    manifest = {"format": "accr-classifier-v1", "classifier_config": asdict(net.config)}
    if manifest_extra:
        manifest.update(manifest_extra)
    write_archive(path, net_arrays(net, "classifier"), manifest)


def load_classifier(path) -> tuple[DigitClassifier, dict]:
    arrays, manifest = read_archive(path)
    net = DigitClassifier(ClassifierConfig(**manifest["classifier_config"]))
    load_net_arrays(net, arrays, "classifier")
    return net, manifest
