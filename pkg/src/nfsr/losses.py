"""Training losses for map restoration.

All losses accept 2D maps (H, W) or batches (B, 1, H, W), as numpy arrays or
torch tensors, and return a torch scalar. Gradients come from autograd; use
``loss_with_grad`` to get (value, d loss / d prediction) as plain numpy.

 - ``mae``: mean absolute error.
 - ``ms_ssim``: multi-scale structural similarity. Local statistics use a
   Gaussian window; scales are linked by 2x average pooling. The luminance
   term enters at the coarsest scale only; the contrast-structure term at
   every scale. With c3 = c2/2 contrast*structure collapses to the familiar
   (2*cov + c2)/(var_a + var_b + c2).
 - ``periodic_phase_loss``: circular distance between phase maps encoded in
   [0, 1]. The default "symmetric" variant is min(|d|, 1 - |d|), the true
   wrap-around distance. The "literal" variant min(|d|, |d - 1|) is kept
   selectable: it treats d near +1 as a wrap but not d near -1, and the
   difference is observable (see ``tests``/demos).
 - composites: weighted sums used to train the magnitude network
   (mae + ms-ssim term) and the phase network (periodic + ms-ssim term).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    alpha_mag: float = 1.0
    beta_mag: float = 1.0
    alpha_phase: float = 0.6
    beta_phase: float = 0.4

    def __post_init__(self):
        vals = (self.alpha_mag, self.beta_mag, self.alpha_phase, self.beta_phase)
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be non-negative")
        if self.alpha_mag + self.beta_mag <= 0 or self.alpha_phase + self.beta_phase <= 0:
            raise ValueError("each composite needs alpha + beta > 0")


@dataclass(frozen=True)
class MsSsimConfig:
    scales: int = 3
    scale_weights: tuple = (1 / 3, 1 / 3, 1 / 3)
    window_size: int = 11
    window_sigma: float = 1.5
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2
    c3: float = 0.03 ** 2 / 2

    def __post_init__(self):
        if self.scales < 1 or len(self.scale_weights) != self.scales:
            raise ValueError("need one scale weight per scale")
        if abs(sum(self.scale_weights) - 1.0) > 1e-6:
            raise ValueError("scale weights must sum to 1")
        if self.window_size % 2 != 1 or self.window_size < 3:
            raise ValueError("window size must be odd and >= 3")
        if min(self.c1, self.c2, self.c3) <= 0:
            raise ValueError("stabilization constants must be positive")


def _as_batch(t) -> torch.Tensor:
    t = torch.as_tensor(t)
    if not t.dtype.is_floating_point:
        t = t.to(torch.get_default_dtype())
    if t.dim() == 2:
        return t[None, None]
    if t.dim() == 4 and t.shape[1] == 1:
        return t
    raise ValueError(f"expected (H, W) or (B, 1, H, W) map, got {tuple(t.shape)}")


def _pair(y, y_hat):
    a, b = _as_batch(y), _as_batch(y_hat)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dtype != b.dtype:
        wide = torch.promote_types(a.dtype, b.dtype)
        a, b = a.to(wide), b.to(wide)
    return a, b


def _gaussian_window(size: int, sigma: float, dtype, device) -> torch.Tensor:
    half = (size - 1) / 2.0
    x = torch.arange(size, dtype=dtype, device=device) - half
    g = torch.exp(-(x ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    return (g[:, None] * g[None, :])[None, None]


def _local_stats(y, y_hat, win):
    mu_a = F.conv2d(y, win)
    mu_b = F.conv2d(y_hat, win)
    var_a = (F.conv2d(y * y, win) - mu_a ** 2).clamp_min(0.0)
    var_b = (F.conv2d(y_hat * y_hat, win) - mu_b ** 2).clamp_min(0.0)
    cov = F.conv2d(y * y_hat, win) - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def mae(y, y_hat) -> torch.Tensor:
    a, b = _pair(y, y_hat)
    return (a - b).abs().mean()


class SsimComponents:
    """Mean-pooled luminance/contrast/structure terms plus the local maps."""

    def __init__(self, l_map, c_map, s_map):
        self.l_map, self.c_map, self.s_map = l_map, c_map, s_map
        self.l, self.c, self.s = l_map.mean(), c_map.mean(), s_map.mean()


def ssim_components(y, y_hat, config: MsSsimConfig = MsSsimConfig()) -> SsimComponents:
    a, b = _pair(y, y_hat)
    if min(a.shape[-2:]) < config.window_size:
        raise ValueError(f"map {tuple(a.shape[-2:])} smaller than "
                         f"{config.window_size}x{config.window_size} window")
    win = _gaussian_window(config.window_size, config.window_sigma, a.dtype, a.device)
    mu_a, mu_b, var_a, var_b, cov = _local_stats(a, b, win)
    sd_a, sd_b = var_a.sqrt(), var_b.sqrt()
    l_map = (2 * mu_a * mu_b + config.c1) / (mu_a ** 2 + mu_b ** 2 + config.c1)
    c_map = (2 * sd_a * sd_b + config.c2) / (var_a + var_b + config.c2)
    s_map = (cov + config.c3) / (sd_a * sd_b + config.c3)
    return SsimComponents(l_map, c_map, s_map)


def ms_ssim(y, y_hat, config: MsSsimConfig = MsSsimConfig()) -> torch.Tensor:
    a, b = _pair(y, y_hat)
    win = _gaussian_window(config.window_size, config.window_sigma, a.dtype, a.device)
    terms = []
    for k in range(config.scales):
        if min(a.shape[-2:]) < config.window_size:
            raise ValueError(
                f"scale {k + 1} map {tuple(a.shape[-2:])} smaller than the "
                f"{config.window_size}x{config.window_size} window; "
                f"reduce scales for this map size")
        mu_a, mu_b, var_a, var_b, cov = _local_stats(a, b, win)
        # contrast*structure with c3 = c2/2 in its collapsed form
        cs = (2 * cov + config.c2) / (var_a + var_b + config.c2)
        terms.append(cs.mean().clamp_min(_EPS))
        if k == config.scales - 1:
            l_map = (2 * mu_a * mu_b + config.c1) / (mu_a ** 2 + mu_b ** 2 + config.c1)
            lum = l_map.mean().clamp_min(_EPS)
        else:
            a = F.avg_pool2d(a, 2)
            b = F.avg_pool2d(b, 2)
    out = lum ** config.scale_weights[-1]
    for w, cs in zip(config.scale_weights, terms):
        out = out * cs ** w
    return out


def ms_ssim_loss(y, y_hat, config: MsSsimConfig = MsSsimConfig()) -> torch.Tensor:
    return 1.0 - ms_ssim(y, y_hat, config)


def periodic_phase_loss(z, z_hat, variant: str = "symmetric") -> torch.Tensor:
    a, b = _pair(z, z_hat)
    for t, name in ((a, "z"), (b, "z_hat")):
        if t.min() < -1e-9 or t.max() > 1.0 + 1e-9:
            raise ValueError(f"{name} must lie in [0, 1] (encoded phase)")
    d = a - b
    if variant == "symmetric":
        dist = torch.minimum(d.abs(), 1.0 - d.abs())
    elif variant == "literal":
        dist = torch.minimum(d.abs(), (d - 1.0).abs())
    else:
        raise ValueError(f"unknown periodic loss variant {variant!r}")
    return dist.mean()


def composite_mag(y, y_hat, weights: LossWeights = LossWeights(),
                  config: MsSsimConfig = MsSsimConfig()) -> torch.Tensor:
    return (weights.alpha_mag * mae(y, y_hat)
            + weights.beta_mag * ms_ssim_loss(y, y_hat, config))


def composite_phase(z, z_hat, weights: LossWeights = LossWeights(),
                    config: MsSsimConfig = MsSsimConfig(),
                    variant: str = "symmetric") -> torch.Tensor:
    return (weights.alpha_phase * periodic_phase_loss(z, z_hat, variant)
            + weights.beta_phase * ms_ssim_loss(z, z_hat, config))


def loss_with_grad(loss_fn, y, y_hat, *args, wrt: str = "y_hat", **kwargs):
    """Evaluate a loss and its gradient w.r.t. one argument.

    Returns (float value, numpy gradient with the input's original shape).
    """
    a = torch.as_tensor(np.asarray(y, dtype=np.float64))
    b = torch.as_tensor(np.asarray(y_hat, dtype=np.float64))
    if wrt == "y_hat":
        b = b.clone().requires_grad_(True)
        target, shape = b, np.shape(y_hat)
    elif wrt == "y":
        a = a.clone().requires_grad_(True)
        target, shape = a, np.shape(y)
    else:
        raise ValueError("wrt must be 'y' or 'y_hat'")
    value = loss_fn(a, b, *args, **kwargs)
    value.backward()
    return float(value.detach()), target.grad.detach().numpy().reshape(shape)
