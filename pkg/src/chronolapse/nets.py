"""The four networks and their functional forward API.

Tensors are ``(B, 3, H, W)`` in ``[-1, 1]``; times are ``(B,)`` floats in
``[0, 1)``. No layer keeps running statistics, so every forward is a pure
function of parameters and inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import Mode, TimeMode, TrainConfig
from .errors import EmptySetError, ShapeError, WeightsLoadError

# (channels, convs) per VGG-16 stage; torchvision's `features` indices follow
# from this layout, so exported VGG-16 weights load by key.
VGG16_STAGES = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))
_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


def time_channels(mode: TimeMode | str) -> int:
    return 1 if TimeMode(mode) is TimeMode.RAW else 2


def encode_time(t, mode: TimeMode | str = TimeMode.CYCLIC) -> torch.Tensor:
    """``RAW -> [t]``, ``CYCLIC -> [sin 2 pi t, cos 2 pi t]`` along a new last axis."""
    t = torch.as_tensor(t, dtype=torch.get_default_dtype()) if not torch.is_tensor(t) else t
    if TimeMode(mode) is TimeMode.RAW:
        return t.unsqueeze(-1)
    angle = 2 * math.pi * t
    return torch.stack([torch.sin(angle), torch.cos(angle)], dim=-1)


def _check_stride(x: torch.Tensor, stride: int) -> None:
    if x.dim() != 4 or x.shape[1] != 3:
        raise ShapeError(f"expected (B, 3, H, W), got {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % stride or w % stride:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by encoder stride {stride}")


class VGGEncoder(nn.Module):
    """VGG-16 convolution stack truncated after ``stages`` pooling layers."""

    def __init__(self, stages: int = 2, width: int = 64):
        super().__init__()
        layers: list[nn.Module] = []
        c_in = 3
        for channels, convs in VGG16_STAGES[:stages]:
            c_out = max(1, channels * width // 64)
            for _ in range(convs):
                layers += [nn.Conv2d(c_in, c_out, 3, padding=1), nn.ReLU()]
                c_in = c_out
            layers.append(nn.MaxPool2d(2))
        self.features = nn.Sequential(*layers)
        self.out_channels = c_in
        self.stride = 2 ** stages
        self.register_buffer("mean", torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1), persistent=False)

    def forward(self, x):
        x = ((x + 1) / 2 - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        return self.features(x)


class CondResBlock(nn.Module):
    def __init__(self, channels: int, cond: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels + cond, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, h, c):
        y = F.relu(self.conv1(torch.cat([h, c], 1)))
        return h + self.conv2(y)


class Generator(nn.Module):
    """Encoder, conditioned residual blocks, mirrored decoder.

    Time encoding and latent ``z`` are broadcast to constant maps and
    concatenated with the features at the block input and inside every block.
    """

    def __init__(self, cfg: TrainConfig, use_latent: bool = True):
        super().__init__()
        self.time_mode = cfg.time_encoding
        self.d_z = cfg.d_z if use_latent else 0
        self.encoder = VGGEncoder(cfg.encoder_stages, cfg.encoder_width)
        cond = time_channels(cfg.time_encoding) + self.d_z
        ch = cfg.res_channels
        self.inject = nn.Conv2d(self.encoder.out_channels + cond, ch, 1)
        self.blocks = nn.ModuleList(CondResBlock(ch, cond) for _ in range(cfg.res_blocks))
        up: list[nn.Module] = []
        c_in = ch
        for channels, _ in reversed(VGG16_STAGES[: cfg.encoder_stages]):
            c_out = max(1, channels * cfg.encoder_width // 64)
            up += [nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(c_in, c_out, 3, padding=1), nn.ReLU()]
            c_in = c_out
        self.decoder = nn.Sequential(*up, nn.Conv2d(c_in, 3, 3, padding=1))

    @property
    def stride(self) -> int:
        return self.encoder.stride

    def forward(self, x, t, z=None):
        _check_stride(x, self.stride)
        h = self.encoder(x)
        c = encode_time(torch.as_tensor(t, dtype=x.dtype).reshape(-1), self.time_mode).to(x.dtype)
        if self.d_z:
            if z is None:
                raise ShapeError("generator needs a latent z")
            z = torch.as_tensor(z, dtype=x.dtype).reshape(-1, self.d_z)
            c = torch.cat([c, z.expand(c.shape[0], -1)], 1)
        if c.shape[0] != h.shape[0]:
            c = c.expand(h.shape[0], -1)
        cmap = c[:, :, None, None].expand(-1, -1, h.shape[2], h.shape[3])
        h = F.relu(self.inject(torch.cat([h, cmap], 1)))
        for block in self.blocks:
            h = block(h, cmap)
        return torch.tanh(self.decoder(F.relu(h)))


class SetDiscriminator(nn.Module):
    """Shared image encoder with a per-image head and a max-pooled set head."""

    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.time_mode = cfg.time_encoding
        layers: list[nn.Module] = []
        c_in, w = 3, cfg.disc_width
        for i in range(cfg.disc_layers):
            c_out = w * 2 ** min(i, 3)
            layers += [nn.Conv2d(c_in, c_out, 4, 2, 1), nn.LeakyReLU(0.2)]
            c_in = c_out
        self.conv = nn.Sequential(*layers)
        self.proj = nn.Linear(c_in, cfg.disc_feature)
        self.uncond_head = nn.Linear(cfg.disc_feature, 1)
        hid = cfg.cond_hidden
        self.frame_mlp = nn.Sequential(
            nn.Linear(cfg.disc_feature + time_channels(cfg.time_encoding), hid),
            nn.LeakyReLU(0.2),
            nn.Linear(hid, hid),
            nn.LeakyReLU(0.2),
        )
        self.set_head = nn.Sequential(nn.Linear(hid, hid), nn.LeakyReLU(0.2), nn.Linear(hid, 1))

    def encode(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W), got {tuple(x.shape)}")
        h = self.conv(x).mean(dim=(2, 3))
        return F.leaky_relu(self.proj(h), 0.2)

    def uncond_logits(self, x):
        return self.uncond_head(self.encode(x)).squeeze(-1)

    def cond_logits(self, x, t):
        """``x``: ``(B, N, 3, H, W)``, ``t``: ``(B, N)``; returns ``(B,)``."""
        if x.dim() != 5:
            raise ShapeError(f"expected (B, N, 3, H, W), got {tuple(x.shape)}")
        b, n = x.shape[:2]
        if n == 0:
            raise EmptySetError("conditional discriminator needs a non-empty set")
        feats = self.encode(x.reshape(b * n, *x.shape[2:])).reshape(b, n, -1)
        tc = encode_time(torch.as_tensor(t, dtype=x.dtype).reshape(b, n), self.time_mode).to(x.dtype)
        per_frame = self.frame_mlp(torch.cat([feats, tc], -1))
        pooled = per_frame.max(dim=1).values
        return self.set_head(pooled).squeeze(-1)


class UNetTranslator(nn.Module):
    """Encoder-decoder with skip connections; the input is a skip of the last layer."""

    def __init__(self, width: int = 32, depth: int = 3):
        super().__init__()
        self.down = nn.ModuleList()
        chans = [3]
        c_in = 3
        for i in range(depth):
            c_out = width * 2 ** min(i, 3)
            self.down.append(nn.Sequential(nn.Conv2d(c_in, c_out, 4, 2, 1), nn.LeakyReLU(0.2)))
            chans.append(c_out)
            c_in = c_out
        self.up = nn.ModuleList()
        for i in reversed(range(depth)):
            skip = chans[i]
            c_out = max(width, skip) if i else width
            self.up.append(nn.Sequential(nn.ConvTranspose2d(c_in, c_out, 4, 2, 1), nn.ReLU()))
            c_in = c_out + skip
        self.out = nn.Conv2d(c_in, 3, 3, padding=1)
        self.stride = 2 ** depth

    def forward(self, x):
        _check_stride(x, self.stride)
        skips = [x]
        h = x
        for layer in self.down:
            h = layer(h)
            skips.append(h)
        skips.pop()
        for layer in self.up:
            h = torch.cat([layer(h), skips.pop()], 1)
        return torch.tanh(self.out(h))


class PlainDiscriminator(nn.Module):
    """DCGAN-style strided classifier."""

    def __init__(self, width: int = 64, layers: int = 4):
        super().__init__()
        mods: list[nn.Module] = []
        c_in = 3
        for i in range(layers):
            c_out = width * 2 ** min(i, 3)
            mods += [nn.Conv2d(c_in, c_out, 4, 2, 1), nn.LeakyReLU(0.2)]
            c_in = c_out
        self.conv = nn.Sequential(*mods)
        self.head = nn.Linear(c_in, 1)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W), got {tuple(x.shape)}")
        return self.head(self.conv(x).mean(dim=(2, 3))).squeeze(-1)


@dataclass
class ModelBundle:
    mode: Mode
    config: TrainConfig
    g_t: Generator
    d_a: SetDiscriminator
    g_a: UNetTranslator | None = None
    d_t: PlainDiscriminator | None = None

    def networks(self) -> dict[str, nn.Module]:
        nets = {"g_t": self.g_t, "d_a": self.d_a, "g_a": self.g_a, "d_t": self.d_t}
        return {k: v for k, v in nets.items() if v is not None}

    def state_dict(self) -> dict[str, torch.Tensor]:
        """Every parameter under a canonical ``<net>.<param>`` name."""
        out = {}
        for name, net in self.networks().items():
            for k, v in net.state_dict().items():
                out[f"{name}.{k}"] = v
        return out

    def load_state_dict(self, state: dict[str, torch.Tensor]) -> None:
        for name, net in self.networks().items():
            prefix = name + "."
            sub = {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}
            net.load_state_dict(sub, strict=True)

    def parameter_counts(self) -> dict[str, int]:
        return {k: sum(p.numel() for p in v.parameters()) for k, v in self.networks().items()}


def load_encoder_weights(encoder: VGGEncoder, path: str | Path) -> None:
    """Load a ``.npz`` archive keyed like torchvision's ``vgg16().features``.

    Every parameter of the truncated encoder must be present with a matching
    shape; deeper layers in the archive are ignored.
    """
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {k: archive[k] for k in archive.files}
    except (OSError, ValueError) as exc:
        raise WeightsLoadError(f"cannot read encoder weights {path}: {exc}") from exc
    state = encoder.state_dict()
    new = {}
    for key, ref in state.items():
        if key not in arrays:
            raise WeightsLoadError(f"{path}: missing {key}")
        arr = arrays[key]
        if tuple(arr.shape) != tuple(ref.shape):
            raise WeightsLoadError(f"{path}: {key} has shape {arr.shape}, expected {tuple(ref.shape)}")
        new[key] = torch.from_numpy(np.ascontiguousarray(arr)).to(ref.dtype)
    encoder.load_state_dict(new)


def init_models(cfg: TrainConfig, seed: int | None = None) -> ModelBundle:
    """Build the bundle for ``cfg.mode`` deterministically from ``seed``."""
    seed = cfg.seed if seed is None else seed
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        g_t = Generator(cfg, use_latent=cfg.mode is not Mode.VANILLA)
        d_a = SetDiscriminator(cfg)
        g_a = d_t = None
        if cfg.mode is Mode.MULTIDOMAIN:
            g_a = UNetTranslator(cfg.translator_width, cfg.translator_depth)
            d_t = PlainDiscriminator(cfg.disc_width, cfg.disc_layers)
    if cfg.pretrained_encoder:
        load_encoder_weights(g_t.encoder, cfg.pretrained_encoder)
    return ModelBundle(cfg.mode, cfg, g_t, d_a, g_a, d_t)


# ---------------------------------------------------------------------------
# functional API


def as_batch(image) -> tuple[torch.Tensor, bool]:
    """Accept ``(3,H,W)``/``(B,3,H,W)`` tensors or ``(H,W,3)``/``(B,H,W,3)`` arrays."""
    if not torch.is_tensor(image):
        arr = np.asarray(image, dtype=np.float32)
        if arr.ndim not in (3, 4) or arr.shape[-1] != 3:
            raise ShapeError(f"expected (..., H, W, 3) array, got {arr.shape}")
        image = torch.from_numpy(np.ascontiguousarray(np.moveaxis(arr, -1, -3)))
    single = image.dim() == 3
    return (image.unsqueeze(0) if single else image), single


def to_hwc(x: torch.Tensor) -> np.ndarray:
    return x.detach().cpu().numpy().transpose(*range(x.dim() - 3), -2, -1, -3)


def generator_forward(g: Generator, image, t, z=None) -> torch.Tensor:
    x, single = as_batch(image)
    t = torch.as_tensor(t, dtype=x.dtype).reshape(-1)
    if t.numel() == 1 and x.shape[0] > 1:
        t = t.expand(x.shape[0])
    out = g(x, t, z)
    return out[0] if single else out


def generate_frameset(g: Generator, image, times: Sequence[float], z=None, chunk: int = 32) -> list[torch.Tensor]:
    """One output per time, all sharing the single latent ``z``."""
    if len(times) == 0:
        raise EmptySetError("times must be non-empty")
    x, _ = as_batch(image)
    x = x[:1]
    t_all = torch.as_tensor(list(times), dtype=x.dtype)
    outs = []
    for s in range(0, len(t_all), chunk):
        tt = t_all[s:s + chunk]
        outs.extend(g(x.expand(len(tt), -1, -1, -1), tt, z).unbind(0))
    return outs


def disc_uncond_score(d: SetDiscriminator, image) -> torch.Tensor:
    x, single = as_batch(image)
    s = torch.sigmoid(d.uncond_logits(x))
    return s[0] if single else s


def disc_cond_score(d: SetDiscriminator, pairs: Sequence[tuple]) -> torch.Tensor:
    """Score one unordered set of ``(image, time)`` pairs."""
    if len(pairs) == 0:
        raise EmptySetError("empty frame set")
    x = torch.stack([as_batch(img)[0][0] for img, _ in pairs]).unsqueeze(0)
    t = torch.as_tensor([float(tt) for _, tt in pairs], dtype=x.dtype).unsqueeze(0)
    return torch.sigmoid(d.cond_logits(x, t))[0]


def translator_forward(g_a: UNetTranslator, image) -> torch.Tensor:
    x, single = as_batch(image)
    out = g_a(x)
    return out[0] if single else out
