"""The four parameterized networks: denoiser, encoder, decoder, classifier.

All signal tensors are (batch, channels, length). Every convolutional stage is
conv1d -> group_norm -> elu; downsampling uses stride 2 and upsampling uses
nearest-neighbour repetition followed by a stride-1 convolution.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError
from .grad_core import (
    NDValue,
    adaptive_avg_pool,
    add_channel_bias,
    affine,
    concat,
    conv1d,
    elu,
    group_norm,
    reshape,
    upsample_nearest,
)

N_CLASSES = 13
LATENT_DIM = 256
DOWNSAMPLE = 8


def time_embed(t, dim: int = 64, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal features: first half sin(t * w_k), second half cos(t * w_k)."""
    if dim < 2 or dim % 2:
        raise ConfigurationError(f"time embedding dim must be a positive even integer, got {dim}")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any(t < 0):
        raise ConfigurationError("time embedding needs t >= 0")
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def check_length(length: int) -> None:
    if length % DOWNSAMPLE:
        raise ConfigurationError(
            f"signal length {length} must be divisible by {DOWNSAMPLE} (three stride-2 stages)")


class Network:
    """Flat, ordered collection of named parameters."""

    def __init__(self):
        self.params: dict[str, NDValue] = {}

    def parameters(self) -> list[NDValue]:
        return list(self.params.values())

    def named_parameters(self) -> dict[str, NDValue]:
        return dict(self.params)

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> "Network":
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ConfigurationError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise DimensionError(f"parameter {k}: expected {p.shape}, got {state[k].shape}")
            p.data = np.array(state[k], dtype=p.data.dtype)

    # parameter factories; uniform(+-1/sqrt(fan_in)) like common framework defaults
    def _conv(self, rng, name, c_in, c_out, k, dtype):
        bound = 1.0 / np.sqrt(c_in * k)
        self.params[f"{name}.weight"] = NDValue(rng.uniform(-bound, bound, (c_out, c_in, k)).astype(dtype), True)
        self.params[f"{name}.bias"] = NDValue(rng.uniform(-bound, bound, c_out).astype(dtype), True)

    def _norm(self, name, c, dtype):
        self.params[f"{name}.gamma"] = NDValue(np.ones(c, dtype=dtype), True)
        self.params[f"{name}.beta"] = NDValue(np.zeros(c, dtype=dtype), True)

    def _linear(self, rng, name, n_in, n_out, dtype):
        bound = 1.0 / np.sqrt(n_in)
        self.params[f"{name}.weight"] = NDValue(rng.uniform(-bound, bound, (n_out, n_in)).astype(dtype), True)
        self.params[f"{name}.bias"] = NDValue(rng.uniform(-bound, bound, n_out).astype(dtype), True)

    def _block(self, name, x, stride, groups):
        p = self.params
        h = conv1d(x, p[f"{name}.conv.weight"], p[f"{name}.conv.bias"], stride=stride, padding=1)
        h = group_norm(h, groups, p[f"{name}.norm.gamma"], p[f"{name}.norm.beta"])
        return elu(h)

    def _add_block(self, rng, name, c_in, c_out, groups, dtype, kernel=3):
        if c_out % groups:
            raise ConfigurationError(f"{name}: {c_out} channels not divisible by {groups} groups")
        self._conv(rng, f"{name}.conv", c_in, c_out, kernel, dtype)
        self._norm(f"{name}.norm", c_out, dtype)


class DdpmNet(Network):
    """Three-stage time-conditional 1-D UNet that predicts x0 from x_t.

    Besides the prediction, ``forward`` returns the activations the decoder
    taps at each resolution: ``{8: bottleneck, 4: up-stage at L/4, 2: up-stage at L/2}``
    keyed by downsampling factor.
    """

    stages = ("down1", "down2", "down3", "mid", "up3", "up2", "up1")

    def __init__(self, in_channels: int = 64, widths: Sequence[int] = (32, 64, 128),
                 time_dim: int = 64, groups: int = 8, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(rng)
        w1, w2, w3 = widths
        self.in_channels, self.widths, self.time_dim, self.groups = in_channels, tuple(widths), time_dim, groups
        chans = {
            "down1": (in_channels, w1), "down2": (w1, w2), "down3": (w2, w3), "mid": (w3, w3),
            "up3": (w3 + w2, w2), "up2": (w2 + w1, w1), "up1": (w1 + in_channels, w1),
        }
        self.stage_channels = {k: v[1] for k, v in chans.items()}
        for name, (c_in, c_out) in chans.items():
            self._add_block(rng, name, c_in, c_out, groups, dtype)
            self._linear(rng, f"{name}.time", time_dim, c_out, dtype)
        self._conv(rng, "out", w1, in_channels, 1, dtype)

    @property
    def skip_channels(self) -> dict[int, int]:
        return {8: self.stage_channels["mid"], 4: self.stage_channels["up3"], 2: self.stage_channels["up2"]}

    def forward(self, x_t: NDValue, t) -> tuple[NDValue, dict[int, NDValue]]:
        if x_t.ndim != 3 or x_t.shape[1] != self.in_channels:
            raise DimensionError(f"DDPM expects (B, {self.in_channels}, L), got {x_t.shape}")
        check_length(x_t.shape[2])
        emb = NDValue(time_embed(t, self.time_dim).astype(x_t.dtype))
        p, g = self.params, self.groups

        def stage(name, h, stride):
            h = self._block(name, h, stride, g)
            cond = affine(emb, p[f"{name}.time.weight"], p[f"{name}.time.bias"])
            return add_channel_bias(h, cond)

        d1 = stage("down1", x_t, 2)
        d2 = stage("down2", d1, 2)
        d3 = stage("down3", d2, 2)
        mid = stage("mid", d3, 1)
        u3 = stage("up3", concat([upsample_nearest(mid), d2]), 1)
        u2 = stage("up2", concat([upsample_nearest(u3), d1]), 1)
        u1 = stage("up1", concat([upsample_nearest(u2), x_t]), 1)
        x_hat = conv1d(u1, p["out.weight"], p["out.bias"])
        return x_hat, {8: mid, 4: u3, 2: u2}


class Encoder(Network):
    """Three stride-2 stages; global average pooling of the last one gives z."""

    def __init__(self, in_channels: int = 64, widths: Sequence[int] = (64, 128, 256),
                 groups: int = 8, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.in_channels, self.widths, self.groups = in_channels, tuple(widths), groups
        c_in = in_channels
        for i, w in enumerate(widths, start=1):
            self._add_block(rng, f"enc{i}", c_in, w, groups, dtype)
            c_in = w

    @property
    def latent_dim(self) -> int:
        return self.widths[-1]

    @property
    def skip_channels(self) -> dict[int, int]:
        return {8: self.widths[2], 4: self.widths[1], 2: self.widths[0]}

    def forward(self, x0: NDValue) -> tuple[dict[int, NDValue], NDValue]:
        if x0.ndim != 3 or x0.shape[1] != self.in_channels:
            raise DimensionError(f"encoder expects (B, {self.in_channels}, L), got {x0.shape}")
        check_length(x0.shape[2])
        h = x0
        feats = {}
        for i, factor in enumerate((2, 4, 8), start=1):
            h = self._block(f"enc{i}", h, 2, self.groups)
            feats[factor] = h
        pooled = adaptive_avg_pool(h, 1)
        z = reshape(pooled, (h.shape[0], h.shape[1]))
        return feats, z


class Decoder(Network):
    """Mirror of the encoder that fuses a second network's activations at each scale.

    ``skip_channels`` gives the channel count of the tapped activation at each
    downsampling factor (8, 4, 2). ``final_skip_channels`` is the number of extra
    full-resolution channels concatenated before the last 1x1 convolution
    (x0 and x_hat in the full model; zero when reconstructing x0 itself).
    """

    def __init__(self, in_channels: int, out_channels: int, skip_channels: dict[int, int],
                 final_skip_channels: int, widths: Sequence[int] = (32, 32, 32),
                 groups: int = 8, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.skip_channels = dict(skip_channels)
        self.final_skip_channels = final_skip_channels
        self.widths, self.groups = tuple(widths), groups
        c_in = in_channels
        for name, factor, w in zip(("dec3", "dec2", "dec1"), (8, 4, 2), widths):
            self._add_block(rng, name, c_in + self.skip_channels[factor], w, groups, dtype)
            c_in = w
        self._conv(rng, "out", c_in + final_skip_channels, out_channels, 1, dtype)

    def forward(self, bottleneck: NDValue, skips: dict[int, NDValue],
                final_skips: Sequence[NDValue] = ()) -> NDValue:
        h = bottleneck
        for name, factor in zip(("dec3", "dec2", "dec1"), (8, 4, 2)):
            s = skips[factor]
            if s.shape[0] != h.shape[0] or s.shape[2] != h.shape[2]:
                raise ConfigurationError(
                    f"{name}: skip at 1/{factor} resolution has shape {s.shape}, decoder stage has {h.shape}")
            if s.shape[1] != self.skip_channels[factor]:
                raise ConfigurationError(
                    f"{name}: skip has {s.shape[1]} channels, decoder built for {self.skip_channels[factor]}")
            h = self._block(name, concat([h, s]), 1, self.groups)
            h = upsample_nearest(h)
        extra = sum(v.shape[1] for v in final_skips)
        if extra != self.final_skip_channels:
            raise ConfigurationError(
                f"decoder output layer expects {self.final_skip_channels} skip channels, got {extra}")
        if final_skips:
            h = concat([h, *final_skips])
        return conv1d(h, self.params["out.weight"], self.params["out.bias"])


class Classifier(Network):
    """Linear map from z to class scores; optionally one ELU hidden layer."""

    def __init__(self, in_dim: int = LATENT_DIM, n_classes: int = N_CLASSES, hidden: int = 0,
                 rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.in_dim, self.n_classes, self.hidden = in_dim, n_classes, hidden
        if hidden:
            self._linear(rng, "hidden", in_dim, hidden, dtype)
            self._linear(rng, "fc", hidden, n_classes, dtype)
        else:
            self._linear(rng, "fc", in_dim, n_classes, dtype)

    def forward(self, z: NDValue) -> NDValue:
        if z.ndim != 2 or z.shape[1] != self.in_dim:
            raise DimensionError(f"classifier expects (B, {self.in_dim}), got {z.shape}")
        p = self.params
        if self.hidden:
            z = elu(affine(z, p["hidden.weight"], p["hidden.bias"]))
        return affine(z, p["fc.weight"], p["fc.bias"])


def classify(z: NDValue, rho: Classifier) -> NDValue:
    return rho.forward(z)


def ddpm_forward(x_t: NDValue, t, theta: DdpmNet):
    return theta.forward(x_t, t)


def encoder_forward(x0: NDValue, phi: Encoder):
    return phi.forward(x0)


def decoder_forward(bottleneck: NDValue, skips: dict[int, NDValue], x0: NDValue | None,
                    x_hat: NDValue | None, psi: Decoder) -> NDValue:
    final = [v for v in (x0, x_hat) if v is not None]
    return psi.forward(bottleneck, skips, final)


@dataclass
class ModelBundle:
    """Parameters of the four networks; absent networks are ``None``."""

    theta: DdpmNet | None
    phi: Encoder
    psi: Decoder | None
    rho: Classifier

    def networks(self) -> dict[str, Network]:
        nets = {"theta": self.theta, "phi": self.phi, "psi": self.psi, "rho": self.rho}
        return {k: v for k, v in nets.items() if v is not None}

    def param_counts(self) -> dict[str, int]:
        counts = {k: (v.param_count() if v is not None else 0)
                  for k, v in {"theta": self.theta, "phi": self.phi, "psi": self.psi, "rho": self.rho}.items()}
        counts["theta+phi+psi"] = counts["theta"] + counts["phi"] + counts["psi"]
        counts["total"] = counts["theta+phi+psi"] + counts["rho"]
        return counts

    def state_dict(self) -> dict[str, dict[str, np.ndarray]]:
        return {k: v.state_dict() for k, v in self.networks().items()}

    def load_state_dict(self, state: dict[str, dict[str, np.ndarray]]) -> None:
        nets = self.networks()
        if set(nets) != set(state):
            raise ConfigurationError(f"bundle has networks {sorted(nets)}, state has {sorted(state)}")
        for k, net in nets.items():
            net.load_state_dict(state[k])


def param_count(bundle: ModelBundle | Network | None) -> dict[str, int] | int:
    """Trainable parameter counts, per network plus combined totals for a bundle."""
    if bundle is None:
        return 0
    if isinstance(bundle, ModelBundle):
        return bundle.param_counts()
    return bundle.param_count()


def build_bundle(mode: str = "full", in_channels: int = 64, seed: int = 42,
                 ddpm_widths=(32, 64, 128), encoder_widths=(64, 128, 256),
                 decoder_widths=(32, 32, 32), time_dim: int = 64, groups: int = 8,
                 classifier_hidden: int = 0, n_classes: int = N_CLASSES,
                 dtype=np.float32) -> ModelBundle:
    """Initialize the networks a training mode needs, each from its own seeded stream."""
    if mode not in ("full", "no_ddpm", "encoder_classifier"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    seeds = np.random.SeedSequence(seed).spawn(4)
    phi = Encoder(in_channels, encoder_widths, groups, rng=np.random.default_rng(seeds[1]), dtype=dtype)
    rho = Classifier(phi.latent_dim, n_classes, classifier_hidden, rng=np.random.default_rng(seeds[3]), dtype=dtype)
    theta = psi = None
    if mode == "full":
        theta = DdpmNet(in_channels, ddpm_widths, time_dim, groups, rng=np.random.default_rng(seeds[0]), dtype=dtype)
        psi = Decoder(phi.latent_dim, in_channels, theta.skip_channels, 2 * in_channels,
                      decoder_widths, groups, rng=np.random.default_rng(seeds[2]), dtype=dtype)
    elif mode == "no_ddpm":
        psi = Decoder(phi.latent_dim, in_channels, phi.skip_channels, 0,
                      decoder_widths, groups, rng=np.random.default_rng(seeds[2]), dtype=dtype)
    return ModelBundle(theta, phi, psi, rho)
