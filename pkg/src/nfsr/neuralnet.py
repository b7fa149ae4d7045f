"""Encoder-decoder restoration network and its training loop.

The network maps a pre-upsampled (bilinear) undersampled map back to the
fully-sampled map: 4 encoder stages of dual 3x3 convolutions (stride 1,
padding 1, batch norm, ReLU) with 2x2 max pooling, a bottleneck, a mirrored
decoder using 2x2 transposed convolutions with skip concatenation, and a
final 1x1 convolution squashed through a hard sigmoid so outputs stay in
[0, 1] (and can actually reach both ends, unlike the smooth sigmoid).

Map size 86 is not divisible by 2^4, so forward() reflect-pads the input to
``pad_to`` (default 96) and crops the output back.

Training is plain mini-batch descent with a hand-stepped Adam update and a
staircase learning rate lr0 / 10^floor(epoch / decay_every). Magnitude and
phase restorers are independent instances of the same architecture, trained
separately against their respective composite losses.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.interpolate import RegularGridInterpolator
from torch import nn

from .dataio import (
    BundleError,
    ChannelMap,
    Dataset,
    infer_factor,
    read_bundle,
    write_bundle,
)
from .losses import LossWeights, MsSsimConfig, composite_mag, composite_phase


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss); carries the history so far."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass(frozen=True)
class UNetConfig:
    base_channels: int = 64
    stages: int = 4
    in_size: int = 86
    pad_to: int = 96
    kernel: int = 3
    pool: int = 2

    def __post_init__(self):
        if self.base_channels < 1 or self.stages < 1:
            raise ValueError("base_channels and stages must be >= 1")
        if self.pad_to < self.in_size:
            raise ValueError("pad_to must be >= in_size")
        if self.pad_to % (self.pool ** self.stages) != 0:
            raise ValueError(f"pad_to {self.pad_to} not divisible by "
                             f"pool^stages = {self.pool ** self.stages}")
        if self.kernel % 2 != 1:
            raise ValueError("kernel must be odd")

    @property
    def stage_widths(self):
        return [self.base_channels * 2 ** k for k in range(self.stages)]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 15
    lr0: float = 1e-3
    lr_decay_factor: float = 10.0
    decay_every: int = 50
    total_epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.decay_every, self.total_epochs) < 1:
            raise ValueError("batch_size, decay_every, total_epochs must be >= 1")
        if self.lr0 <= 0 or self.lr_decay_factor <= 1 or self.eps <= 0:
            raise ValueError("lr0 > 0, lr_decay_factor > 1, eps > 0 required")
        if self.decay_every > self.total_epochs:
            raise ValueError("decay_every must be <= total_epochs")


# Published operating points: the full-scale configuration per channel, and a
# shrunken preset that trains in minutes on a CPU for tests and demos.
def default_unet_config(preset: str = "full") -> UNetConfig:
    if preset == "full":
        return UNetConfig(base_channels=64)
    if preset == "toy":
        return UNetConfig(base_channels=16)
    raise ValueError(f"unknown preset {preset!r}")


def default_train_config(kind: str, preset: str = "full", seed: int = 0) -> TrainConfig:
    if kind not in ("magnitude", "phase"):
        raise ValueError(f"unknown channel kind {kind!r}")
    if preset == "full":
        if kind == "magnitude":
            return TrainConfig(decay_every=50, total_epochs=200, seed=seed)
        return TrainConfig(decay_every=75, total_epochs=300, seed=seed)
    if preset == "toy":
        return TrainConfig(decay_every=20, total_epochs=30, seed=seed)
    raise ValueError(f"unknown preset {preset!r}")


class _DoubleConv(nn.Sequential):
    def __init__(self, cin, cout, kernel=3):
        pad = kernel // 2
        super().__init__(
            nn.Conv2d(cin, cout, kernel, stride=1, padding=pad),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, kernel, stride=1, padding=pad),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
        )


class NfsNet(nn.Module):
    """Near-field super-resolution network (single-channel in/out)."""

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        widths = config.stage_widths
        enc = []
        cin = 1
        for w in widths:
            enc.append(_DoubleConv(cin, w, config.kernel))
            cin = w
        self.encoders = nn.ModuleList(enc)
        bottleneck_width = widths[-1] * 2
        self.bottleneck = _DoubleConv(widths[-1], bottleneck_width, config.kernel)
        ups, dec = [], []
        cin = bottleneck_width
        for w in reversed(widths):
            ups.append(nn.ConvTranspose2d(cin, w, config.pool, stride=config.pool))
            dec.append(_DoubleConv(2 * w, w, config.kernel))
            cin = w
        self.ups = nn.ModuleList(ups)
        self.decoders = nn.ModuleList(dec)
        self.head = nn.Conv2d(widths[0], 1, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        c = self.config
        if x.dim() != 4 or x.shape[1] != 1 or x.shape[-2:] != (c.in_size, c.in_size):
            raise ValueError(f"expected (B, 1, {c.in_size}, {c.in_size}) input, "
                             f"got {tuple(x.shape)}")
        pad = c.pad_to - c.in_size
        lo, hi = pad // 2, pad - pad // 2
        x = F.pad(x, (lo, hi, lo, hi), mode="reflect")
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = F.max_pool2d(x, c.pool)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = dec(torch.cat([skip, up(x)], dim=1))
        # hard sigmoid, not the smooth one: magnitude maps spend most pixels
        # near 0 where sigmoid's sig*(1-sig) gradient vanishes and training
        # crawls; the piecewise-linear gate keeps slope 1/6 and can emit an
        # exact 0 for the normalized background
        x = F.hardsigmoid(self.head(x))
        return x[..., lo:lo + c.in_size, lo:lo + c.in_size]


def build_model(config: UNetConfig, seed: int) -> NfsNet:
    torch.manual_seed(int(seed))
    return NfsNet(config)


def upsample_input(low: ChannelMap, target: int, factor: int | None = None) -> ChannelMap:
    """Bilinear pre-upsampling placing low[i, j] at full-grid index (f i, f j).

    The last ``target - 1 - f*(n-1)`` rows/columns extend the boundary cell
    linearly (there is no anchor beyond index f*(n-1)).
    """
    vals = low.values
    ny, nx = vals.shape
    f = infer_factor(ny, target) if factor is None else int(factor)
    if f < 1 or -(-target // f) != ny or -(-target // f) != nx:
        raise ValueError(f"inconsistent sizes: {vals.shape} low map does not "
                         f"tile a {target}x{target} grid with factor {f}")
    interp = RegularGridInterpolator(
        (f * np.arange(ny, dtype=float), f * np.arange(nx, dtype=float)),
        vals, method="linear", bounds_error=False, fill_value=None)
    yy, xx = np.meshgrid(np.arange(target, dtype=float),
                         np.arange(target, dtype=float), indexing="ij")
    up = interp(np.stack([yy, xx], axis=-1))
    return ChannelMap(values=np.clip(up, 0.0, 1.0), kind=low.kind, denorm=low.denorm)


def lr_schedule(config: TrainConfig, epoch: int) -> float:
    if not 0 <= epoch < config.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.total_epochs})")
    return config.lr0 / config.lr_decay_factor ** (epoch // config.decay_every)


def adam_init(params) -> dict:
    return {"m": [torch.zeros_like(p) for p in params],
            "v": [torch.zeros_like(p) for p in params],
            "t": 0}


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8) -> dict:
    """One bias-corrected Adam update, in place on ``params``."""
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state["m"], state["v"]):
            if g is None:
                continue
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt().add_(eps), value=-lr)
    return state


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    model: NfsNet
    unet_config: UNetConfig
    train_config: TrainConfig
    kind: str
    factor: int
    history: list
    val_init: float

    def history_rows(self):
        return [(h.epoch, h.train_loss, h.val_loss) for h in self.history]


def _loss_for_kind(kind: str, weights: LossWeights, msconfig: MsSsimConfig,
                   phase_variant: str):
    if kind == "magnitude":
        return lambda y, y_hat: composite_mag(y, y_hat, weights, msconfig)
    if kind == "phase":
        return lambda y, y_hat: composite_phase(y, y_hat, weights, msconfig,
                                                phase_variant)
    raise ValueError(f"unknown channel kind {kind!r}")


def _stack(pairs, target: int, factor: int):
    xs = np.stack([upsample_input(p.low, target, factor).values for p in pairs])
    ys = np.stack([p.high.values for p in pairs])
    to = lambda a: torch.from_numpy(a.astype(np.float32))[:, None]
    return to(xs), to(ys)


def _mean_loss(model, loss_fn, x, y, batch_size):
    model.eval()
    total, n = 0.0, x.shape[0]
    with torch.no_grad():
        for s in range(0, n, batch_size):
            xb, yb = x[s:s + batch_size], y[s:s + batch_size]
            total += float(loss_fn(yb, model(xb))) * xb.shape[0]
    return total / n


def train(dataset: Dataset, kind: str, unet_config: UNetConfig,
          train_config: TrainConfig, factor: int | None = None,
          weights: LossWeights = LossWeights(),
          msconfig: MsSsimConfig = MsSsimConfig(),
          phase_variant: str = "symmetric", loss_fn=None,
          progress=None) -> TrainResult:
    """Train one restorer; returns the model plus per-epoch loss history.

    ``history`` has one row per epoch; ``val_init`` is the validation loss of
    the untrained network, the reference point for convergence checks.
    Deterministic for a fixed seed (single-threaded torch).
    """
    cfg = train_config
    if factor is None:
        factor = int(dataset.config["factor"])
    target = int(dataset.config["grid_n"])
    train_pairs = dataset.pairs(kind=kind, split="train")
    val_pairs = dataset.pairs(kind=kind, split="test")
    if not train_pairs:
        raise ValueError("dataset has no training pairs of kind " + kind)
    if not val_pairs:
        raise ValueError("dataset has no validation pairs of kind " + kind)
    if loss_fn is None:
        loss_fn = _loss_for_kind(kind, weights, msconfig, phase_variant)

    x_tr, y_tr = _stack(train_pairs, target, factor)
    x_va, y_va = _stack(val_pairs, target, factor)

    model = build_model(unet_config, cfg.seed)
    params = list(model.parameters())
    state = adam_init(params)
    rng = np.random.default_rng(np.random.SeedSequence((int(cfg.seed), 0xA11)))

    val_init = _mean_loss(model, loss_fn, x_va, y_va, cfg.batch_size)
    history = []
    n = x_tr.shape[0]
    for epoch in range(cfg.total_epochs):
        lr = lr_schedule(cfg, epoch)
        order = rng.permutation(n)
        model.train()
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(order[s:s + cfg.batch_size].copy())
            xb, yb = x_tr[idx], y_tr[idx]
            loss = loss_fn(yb, model(xb))
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} step {s // cfg.batch_size}",
                    history)
            model.zero_grad(set_to_none=True)
            loss.backward()
            adam_step(params, [p.grad for p in params], state, lr,
                      cfg.beta1, cfg.beta2, cfg.eps)
            total += float(loss.detach()) * xb.shape[0]
        val_loss = _mean_loss(model, loss_fn, x_va, y_va, cfg.batch_size)
        stats = EpochStats(epoch=epoch, train_loss=total / n, val_loss=val_loss)
        history.append(stats)
        if progress is not None:
            progress(stats)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}",
                                history)
    model.eval()
    return TrainResult(model=model, unet_config=unet_config, train_config=cfg,
                       kind=kind, factor=factor, history=history,
                       val_init=val_init)


# ---------------------------------------------------------------------------
# params persistence (same bundle layout as datasets)

_INT_STATE_SUFFIX = "num_batches_tracked"


def save_params(result: TrainResult, path) -> None:
    sd = result.model.state_dict()
    arrays = {k: v.detach().cpu().numpy() for k, v in sd.items()}
    meta = {
        "unet": asdict(result.unet_config),
        "train": asdict(result.train_config),
        "kind": result.kind,
        "factor": result.factor,
        "val_init": result.val_init,
        "history": result.history_rows(),
    }
    write_bundle(path, "netparams", arrays, meta)


def load_params(path, config: UNetConfig | None = None):
    """Rebuild the model from a params bundle; returns (model, meta).

    If ``config`` is given it must match the stored shapes exactly.
    """
    manifest, arrays = read_bundle(path, expect_kind="netparams")
    meta = manifest["meta"]
    stored = UNetConfig(**meta["unet"])
    if config is not None and config != stored:
        raise ValueError(f"params at {path} were trained with {stored}, "
                         f"requested {config}")
    model = build_model(stored, 0)
    sd = model.state_dict()
    if set(sd) != set(arrays):
        missing = sorted(set(sd) ^ set(arrays))
        raise BundleError(f"{path}: parameter names do not match model "
                          f"(first differences: {missing[:4]})")
    new_sd = {}
    for k, ref in sd.items():
        a = arrays[k]
        if tuple(a.shape) != tuple(ref.shape):
            raise ValueError(f"{path}: shape mismatch for {k}: stored "
                             f"{tuple(a.shape)}, model needs {tuple(ref.shape)}")
        t = torch.from_numpy(a.copy())  # copy: frombuffer arrays are read-only
        new_sd[k] = t.to(torch.int64) if k.endswith(_INT_STATE_SUFFIX) else t
    model.load_state_dict(new_sd)
    model.eval()
    return model, meta


def predict(model: NfsNet, low: ChannelMap, factor: int | None = None) -> ChannelMap:
    target = model.config.in_size
    up = upsample_input(low, target, factor)
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(up.values.astype(np.float32))[None, None]
        out = model(x)[0, 0].numpy().astype(float)
    return ChannelMap(values=np.clip(out, 0.0, 1.0), kind=low.kind,
                      denorm=low.denorm)


def write_history_csv(result: TrainResult, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in result.history_rows():
            w.writerow([epoch, f"{tr:.8f}", f"{va:.8f}"])
