"""MG-Net encoder/decoder, attention fusion, pretraining and the classifier head."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import tensorkit as tk
from .errors import ConfigError, ShapeError
from .tensorkit import Parameter, Tensor

MODES = ("mgnet", "autoencoder")


@dataclass(frozen=True)
class MGNetConfig:
    input_size: int = 64
    encoder_channels: tuple = (32, 64, 128, 128)
    embed_dims: int = 128
    epochs_pretrain: int = 25
    epochs_finetune: int = 10
    batch_size: int = 64
    lr: float = 1e-4
    finetune_lr: Optional[float] = None
    hidden_sizes: tuple = (256, 512, 1024)
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "hidden_sizes", tuple(int(c) for c in self.hidden_sizes))
        problems = self.violations()
        if problems:
            raise ConfigError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if len(self.encoder_channels) != 4:
            out.append("encoder_channels must list exactly 4 blocks")
        elif self.encoder_channels[-1] != self.embed_dims:
            out.append(f"last encoder channel count {self.encoder_channels[-1]} must equal embed_dims {self.embed_dims}")
        if any(c < 1 for c in self.encoder_channels):
            out.append("encoder channel counts must be positive")
        if self.input_size < 16 or self.input_size % 16:
            out.append("input_size must be a positive multiple of 16")
        for name in ("epochs_pretrain", "epochs_finetune"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0")
        if self.batch_size < 1:
            out.append("batch_size must be >= 1")
        if self.lr < 0 or (self.finetune_lr is not None and self.finetune_lr < 0):
            out.append("learning rates must be >= 0")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            out.append("hidden_sizes must be positive")
        return out

    @property
    def classifier_lr(self) -> float:
        return self.lr if self.finetune_lr is None else self.finetune_lr


# -- fusion -------------------------------------------------------------------


def fuse_attention(x_g: Tensor, x_lc: Tensor) -> Tensor:
    """Attention over spatial sites of the local map, valued by the global feature.

    ``x_g`` is ``(B, d)``, ``x_lc`` is ``(B, d, h, w)``. Site scores are
    ``sum_c x_g[c] * x_lc[c, s]``; ``alpha = softmax`` over the ``h*w`` sites;
    the attended map is ``alpha[s] * x_g[c]`` and the fused feature is its
    site-sum, ``sum_s alpha[s] * x_g[c]``.
    """
    x_g, x_lc = tk.as_tensor(x_g), tk.as_tensor(x_lc)
    if x_g.ndim != 2 or x_lc.ndim != 4 or x_lc.shape[:2] != x_g.shape:
        raise ShapeError(f"fuse_attention: global {x_g.shape} incompatible with local map {x_lc.shape}")
    b, d, h, w = x_lc.shape
    flat = tk.reshape(x_lc, (b, d, h * w))
    g3 = tk.reshape(x_g, (b, d, 1))
    scores = tk.sum(tk.elementwise_mul(g3, flat), axis=1)  # (B, hw)
    alpha = tk.softmax(scores, axis=1)
    attended = tk.elementwise_mul(tk.reshape(alpha, (b, 1, h * w)), g3)  # (B, d, hw)
    return tk.sum(attended, axis=2)


# -- network ------------------------------------------------------------------


class MGNet:
    """Four conv blocks down, attention fusion, four transposed-conv blocks up.

    ``mode="autoencoder"`` skips the fusion and feeds the decoder with the
    global-average-pooled encoder output instead; it is the image-only
    ablation.
    """

    def __init__(self, cfg: MGNetConfig, mode: str = "mgnet"):
        if mode not in MODES:
            raise ConfigError(f"unknown model mode {mode!r}; expected one of {MODES}")
        self.cfg = cfg
        self.mode = mode
        rng = np.random.default_rng([cfg.seed, 0xC0DE])
        self.params: list[Parameter] = []
        chans = (3,) + cfg.encoder_channels
        self.enc = []
        for i in range(4):
            cin, cout = chans[i], chans[i + 1]
            w = Parameter(tk.glorot_uniform(rng, (cout, cin, 3, 3), cin * 9, cout * 9), f"enc{i}.weight")
            b = Parameter(np.zeros(cout), f"enc{i}.bias")
            self.enc.append((w, b))
        dec_in = (cfg.embed_dims,) + tuple(reversed(cfg.encoder_channels[:-1]))
        dec_out = tuple(reversed(cfg.encoder_channels[:-1])) + (3,)
        self.dec = []
        for i in range(4):
            cin, cout = dec_in[i], dec_out[i]
            w = Parameter(tk.glorot_uniform(rng, (cin, cout, 3, 3), cin * 9, cout * 9), f"dec{i}.weight")
            b = Parameter(np.zeros(cout), f"dec{i}.bias")
            self.dec.append((w, b))
        for pair in self.enc + self.dec:
            self.params.extend(pair)

    @property
    def seed_side(self) -> int:
        return self.cfg.input_size // 16

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.params}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        mine = self.named_parameters()
        if set(state) != set(mine):
            missing = sorted(set(mine) - set(state))
            extra = sorted(set(state) - set(mine))
            raise ConfigError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        for name, arr in state.items():
            if arr.shape != mine[name].shape:
                raise ConfigError(f"checkpoint {name}: shape {arr.shape} != {mine[name].shape}")
            mine[name].data = np.array(arr, dtype=np.float64)

    def encode_local(self, images) -> Tensor:
        x = tk.as_tensor(images)
        if x.ndim == 3:
            x = tk.reshape(x, (1,) + x.shape)
        side = self.cfg.input_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (side, side):
            raise ShapeError(f"encoder expects (B, 3, {side}, {side}) images, got {x.shape}")
        for w, b in self.enc:
            x = tk.maxpool2d(tk.relu(tk.conv2d(x, w, b, stride=1, padding=1)), 2)
        return x

    def decode(self, fused: Tensor, skip_free: bool = True) -> Tensor:
        if not skip_free:
            raise ConfigError("the decoder has no skip connections; skip_free must be True")
        fused = tk.as_tensor(fused)
        if fused.ndim == 1:
            fused = tk.reshape(fused, (1, -1))
        b, d = fused.shape
        if d != self.cfg.embed_dims:
            raise ShapeError(f"decoder expects {self.cfg.embed_dims}-dim features, got {d}")
        s = self.seed_side
        x = tk.broadcast_to(tk.reshape(fused, (b, d, 1, 1)), (b, d, s, s))
        for i, (w, bias) in enumerate(self.dec):
            x = tk.transposed_conv2d(x, w, bias, stride=2, padding=1, output_padding=1)
            if i < 3:
                x = tk.relu(x)
        return x

    def bottleneck(self, images, x_g=None) -> Tensor:
        x_lc = self.encode_local(images)
        if self.mode == "autoencoder":
            return tk.global_avg_pool(x_lc)
        if x_g is None:
            raise ConfigError("MG-Net fusion needs the global structural feature")
        return fuse_attention(tk.as_tensor(x_g), x_lc)

    def reconstruction_loss(self, images, x_g=None) -> Tensor:
        images = tk.as_tensor(images)
        recon = self.decode(self.bottleneck(images, x_g))
        return tk.mse_loss(recon, images)


# -- data plumbing ------------------------------------------------------------


def image_batch(pixels: np.ndarray) -> np.ndarray:
    """``(B, side, side)`` uint8 grey images -> ``(B, 3, side, side)`` floats in [0, 1]."""
    px = np.asarray(pixels, dtype=np.float64) / 255.0
    return np.repeat(px[:, None, :, :], 3, axis=1)


def _check_dataset(images, x_g, cfg: MGNetConfig, need_xg: bool):
    images = np.asarray(images)
    if images.ndim != 3 or len(images) == 0:
        raise ConfigError("pretraining needs a non-empty (N, side, side) image stack")
    if images.shape[1:] != (cfg.input_size, cfg.input_size):
        raise ShapeError(f"images are {images.shape[1:]}, model input is {cfg.input_size}")
    if need_xg:
        x_g = np.asarray(x_g, dtype=np.float64)
        if x_g.shape != (len(images), cfg.embed_dims):
            raise ShapeError(f"global features {x_g.shape} do not match {len(images)} x {cfg.embed_dims}")
    return images, x_g


def pretrain(images, x_g, cfg: MGNetConfig, mode: str = "mgnet", model: Optional[MGNet] = None, log=None):
    """Self-supervised reconstruction training.

    Returns ``(model, history)`` where ``history[e]`` is the mean per-batch
    reconstruction MSE of epoch ``e`` (weighted by batch size).
    """
    images, x_g = _check_dataset(images, x_g, cfg, need_xg=(mode == "mgnet"))
    model = model or MGNet(cfg, mode)
    rng = np.random.default_rng([cfg.seed, 0xBA7C])
    n = len(images)
    history = []
    for epoch in range(cfg.epochs_pretrain):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb = image_batch(images[idx])
            gb = x_g[idx] if mode == "mgnet" else None
            loss = model.reconstruction_loss(xb, gb)
            tk.backward(loss)
            tk.sgd_step(model.params, cfg.lr)
            total += loss.item() * len(idx)
        history.append(total / n)
        if log is not None:
            log(epoch + 1, history[-1])
    return model, history


def reconstruction_mse(model: MGNet, images, x_g=None, batch_size: int = 256) -> float:
    images = np.asarray(images)
    total = 0.0
    for lo in range(0, len(images), batch_size):
        xb = image_batch(images[lo : lo + batch_size])
        gb = None if x_g is None else np.asarray(x_g)[lo : lo + batch_size]
        total += model.reconstruction_loss(xb, gb).item() * len(xb)
    return total / len(images)


def encoder_gap(model: MGNet, images, batch_size: int = 256) -> np.ndarray:
    out = []
    for lo in range(0, len(images), batch_size):
        out.append(tk.global_avg_pool(model.encode_local(image_batch(images[lo : lo + batch_size]))).data)
    return np.concatenate(out) if out else np.zeros((0, model.cfg.embed_dims))


def fused_features(model: MGNet, images, x_g, batch_size: int = 256) -> np.ndarray:
    """X^MG for every image, no parameter updates."""
    if x_g is None:
        raise ConfigError("feature extraction needs global structural features (embedding table)")
    images = np.asarray(images)
    x_g = np.asarray(x_g, dtype=np.float64)
    if x_g.shape != (len(images), model.cfg.embed_dims):
        raise ShapeError(f"global features {x_g.shape} do not match {len(images)} x {model.cfg.embed_dims}")
    out = []
    for lo in range(0, len(images), batch_size):
        x_lc = model.encode_local(image_batch(images[lo : lo + batch_size]))
        out.append(fuse_attention(Tensor(x_g[lo : lo + batch_size]), x_lc).data)
    return np.concatenate(out) if out else np.zeros((0, model.cfg.embed_dims))


def extract_features(streams, table, model: MGNet, lambda_min: float = 0.0) -> np.ndarray:
    """Render each read, encode it and fuse with its pooled k-mer embedding."""
    from .embed import pool_many
    from .pseudoimage import render_scaled

    if table is None:
        raise ConfigError("feature extraction needs an embedding table; run the embed stage first")
    streams = list(streams)
    if table.dims != model.cfg.embed_dims:
        raise ConfigError(f"embedding dims {table.dims} != model embed_dims {model.cfg.embed_dims}")
    images = np.stack([render_scaled(s, model.cfg.input_size, lambda_min).pixels for s in streams]) if streams else np.zeros(
        (0, model.cfg.input_size, model.cfg.input_size), np.uint8
    )
    return fused_features(model, images, pool_many(streams, table))


# -- classifier -----------------------------------------------------------------


@dataclass
class Classifier:
    classes: list
    params: list[Parameter]
    mean: np.ndarray
    std: np.ndarray
    history: list = field(default_factory=list)

    @property
    def in_dims(self) -> int:
        return self.params[0].shape[1]

    def logits(self, features) -> Tensor:
        x = Tensor((np.asarray(features, dtype=np.float64) - self.mean) / self.std)
        layers = len(self.params) // 2
        for i in range(layers):
            x = tk.linear(x, self.params[2 * i], self.params[2 * i + 1])
            if i < layers - 1:
                x = tk.relu(x)
        return x


def _init_mlp(rng, sizes) -> list[Parameter]:
    params = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        params.append(Parameter(tk.glorot_uniform(rng, (b, a), a, b), f"fc{i}.weight"))
        params.append(Parameter(np.zeros(b), f"fc{i}.bias"))
    return params


def finetune_classifier(features, labels, cfg: MGNetConfig) -> Classifier:
    """Train an MLP (hidden sizes ``cfg.hidden_sizes``) on frozen features with cross-entropy."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or len(features) != len(labels):
        raise ShapeError(f"features {features.shape} and labels {labels.shape} disagree")
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise ConfigError("finetuning needs at least two classes")
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[v] for v in labels.tolist()], dtype=np.int64)
    if cfg.standardize:
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
    else:
        mean = np.zeros(features.shape[1])
        std = np.ones(features.shape[1])
    rng = np.random.default_rng([cfg.seed, 0xF1E7])
    sizes = (features.shape[1],) + cfg.hidden_sizes + (len(classes),)
    clf = Classifier(classes, _init_mlp(rng, sizes), mean, std)
    n = len(features)
    lr = cfg.classifier_lr
    for _ in range(cfg.epochs_finetune):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss = tk.cross_entropy(clf.logits(features[idx]), y[idx])
            tk.backward(loss)
            tk.sgd_step(clf.params, lr)
            total += loss.item() * len(idx)
        clf.history.append(total / n)
    return clf


def predict(features, clf: Classifier):
    """Return ``(labels, scores)``; scores are per-class softmax probabilities."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != clf.in_dims:
        raise ShapeError(f"classifier expects {clf.in_dims}-dim features, got {features.shape}")
    scores = tk.softmax(clf.logits(features), axis=1).data
    labels = [clf.classes[i] for i in scores.argmax(axis=1)]
    return labels, scores
