"""Classical single-map super-resolution baselines.

All three methods take an undersampled ChannelMap whose samples sit at
fine-grid indices (0, f, 2f, ...) and return a full-resolution ChannelMap
with values clamped to [0, 1]:

 - ``bicubic_upsample``: interpolating tensor-product cubic spline.
 - ``kriging_upsample``: ordinary Kriging with a per-map variogram fitted by
   least squares to the empirical semivariogram (exponential / gaussian /
   spherical families), solved as one global system with the Lagrange
   multiplier that forces weights to sum to 1.
 - ``cs_reconstruct``: compressive-sensing reconstruction by iterative
   shrinkage-thresholding (ISTA) in an orthonormal 2D DCT basis. The
   measurement operator selects the anchor pixels, so its spectral norm
   is 1 and a unit step size guarantees a monotone objective.

Phase maps go through the same code paths in their wrapped [0, 1] encoding;
none of these methods understands the wrap-around, which is precisely the
failure mode the trained restorer is meant to fix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn
from scipy.interpolate import make_interp_spline
from scipy.optimize import curve_fit
from scipy.spatial.distance import cdist, pdist

from .dataio import ChannelMap, infer_factor

VARIOGRAM_KINDS = ("exponential", "gaussian", "spherical")


class KrigingError(ArithmeticError):
    """The ordinary-Kriging system could not be solved reliably."""


@dataclass(frozen=True)
class VariogramModel:
    kind: str
    nugget: float
    sill: float
    range_m: float

    def __post_init__(self):
        if self.kind not in VARIOGRAM_KINDS:
            raise ValueError(f"unknown variogram kind {self.kind!r}")
        if self.nugget < 0 or self.sill <= self.nugget or self.range_m <= 0:
            raise ValueError("need nugget >= 0, sill > nugget, range > 0")

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        p = self.sill - self.nugget
        r = self.range_m
        if self.kind == "exponential":
            g = 1.0 - np.exp(-3.0 * h / r)
        elif self.kind == "gaussian":
            g = 1.0 - np.exp(-3.0 * (h / r) ** 2)
        else:  # spherical
            hr = np.minimum(h / r, 1.0)
            g = 1.5 * hr - 0.5 * hr ** 3
        # semivariance is 0 at lag 0 by definition; the nugget is the jump
        return np.where(h > 0, self.nugget + p * g, 0.0)


def _anchor_axes(shape, target, factor=None):
    ny, nx = shape
    f = infer_factor(ny, target) if factor is None else int(factor)
    if -(-target // f) != ny or -(-target // f) != nx:
        raise ValueError(f"{shape} low map does not tile a {target}x{target} "
                         f"grid with factor {f}")
    return f * np.arange(ny, dtype=float), f * np.arange(nx, dtype=float)


def bicubic_upsample(low: ChannelMap, target: int, factor: int | None = None) -> ChannelMap:
    # tensor-product not-a-knot cubic, one axis at a time; unlike
    # RegularGridInterpolator's current "cubic" method this passes through
    # the samples exactly and extends the end polynomials past the last
    # anchor row/column
    ax_y, ax_x = _anchor_axes(low.values.shape, target, factor)
    fine = np.arange(target, dtype=float)
    up = make_interp_spline(ax_y, low.values, k=3, axis=0)(fine)
    up = make_interp_spline(ax_x, up, k=3, axis=1)(fine)
    return ChannelMap(values=np.clip(up, 0.0, 1.0), kind=low.kind,
                      denorm=low.denorm)


def empirical_semivariogram(coords: np.ndarray, values: np.ndarray,
                            n_bins: int = 15):
    """Binned semivariance over pair lags up to half the maximum distance."""
    d = pdist(coords)
    sq = 0.5 * pdist(values.reshape(-1, 1), metric="sqeuclidean")
    h_max = d.max() / 2.0
    edges = np.linspace(0.0, h_max, n_bins + 1)
    lags, gammas = [], []
    for k in range(n_bins):
        sel = (d > edges[k]) & (d <= edges[k + 1])
        if np.any(sel):
            lags.append(d[sel].mean())
            gammas.append(sq[sel].mean())
    return np.array(lags), np.array(gammas)


def fit_variogram(coords: np.ndarray, values: np.ndarray) -> VariogramModel:
    """Least-squares fit over the three model families; best SSE wins."""
    lags, gammas = empirical_semivariogram(coords, values)
    var = max(float(np.var(values)), 1e-12)
    h_max = float(lags.max())
    best = None
    for kind in VARIOGRAM_KINDS:
        def gamma_fn(h, nugget, partial, rng, _kind=kind):
            return VariogramModel(_kind, nugget, nugget + partial, rng)(h)

        try:
            p0 = (min(gammas[0], var) * 0.5, max(var, 1e-9), h_max / 2.0)
            popt, _ = curve_fit(
                gamma_fn, lags, gammas, p0=p0,
                bounds=([0.0, 1e-12, h_max * 1e-3], [np.inf, np.inf, h_max * 10]),
                maxfev=2000)
        except (RuntimeError, ValueError):
            continue
        model = VariogramModel(kind, popt[0], popt[0] + popt[1], popt[2])
        sse = float(np.sum((model(lags) - gammas) ** 2))
        if best is None or sse < best[0]:
            best = (sse, model)
    if best is None:
        # moment fallback: pure exponential shaped by the sample variance
        return VariogramModel("exponential", 0.0, var, h_max / 3.0)
    return best[1]


def _ok_weights(coords, targets, model: VariogramModel):
    """Solve the ordinary-Kriging system for all targets at once.

    Returns the (n+1, m) weight block; rows 0..n-1 are the sample weights,
    row n is the Lagrange multiplier.
    """
    n = coords.shape[0]
    a = np.empty((n + 1, n + 1))
    a[:n, :n] = model(cdist(coords, coords))
    a[:n, n] = 1.0
    a[n, :n] = 1.0
    a[n, n] = 0.0
    b = np.empty((n + 1, targets.shape[0]))
    b[:n] = model(cdist(coords, targets))
    b[n] = 1.0
    try:
        w = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(w)):
        return None
    return w


def kriging_upsample(low: ChannelMap, target: int,
                     model: VariogramModel | None = None,
                     factor: int | None = None) -> ChannelMap:
    ax_y, ax_x = _anchor_axes(low.values.shape, target, factor)
    gy, gx = np.meshgrid(ax_y, ax_x, indexing="ij")
    coords = np.stack([gy.ravel(), gx.ravel()], axis=1)
    values = low.values.ravel()
    ty, tx = np.meshgrid(np.arange(target, dtype=float),
                         np.arange(target, dtype=float), indexing="ij")
    targets = np.stack([ty.ravel(), tx.ravel()], axis=1)
    if model is None:
        model = fit_variogram(coords, values)

    w = _ok_weights(coords, targets, model)
    bad = w is None or float(np.max(np.abs(w[:-1].sum(axis=0) - 1.0))) > 1e-6
    if bad:
        # near-singular system; bump the nugget once and retry
        jittered = VariogramModel(model.kind, model.nugget + 1e-6 * model.sill,
                                  model.sill + 1e-6 * model.sill, model.range_m)
        w = _ok_weights(coords, targets, jittered)
        if w is None or float(np.max(np.abs(w[:-1].sum(axis=0) - 1.0))) > 1e-6:
            raise KrigingError(f"singular ordinary-Kriging system "
                               f"({low.values.shape} -> {target}, {model})")
    pred = w[:-1].T @ values
    return ChannelMap(values=np.clip(pred.reshape(target, target), 0.0, 1.0),
                      kind=low.kind, denorm=low.denorm)


@dataclass(frozen=True)
class CsConfig:
    lam: float = 1e-3
    iters: int = 500
    tol: float = 1e-6

    def __post_init__(self):
        if self.lam < 0 or self.iters < 1 or self.tol <= 0:
            raise ValueError("need lam >= 0, iters >= 1, tol > 0")


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def cs_reconstruct(low: ChannelMap, target: int,
                   config: CsConfig = CsConfig(), factor: int | None = None,
                   return_info: bool = False):
    """ISTA in an orthonormal DCT basis: min 0.5||S idct(x) - y||^2 + lam||x||_1."""
    ax_y, ax_x = _anchor_axes(low.values.shape, target, factor)
    iy = ax_y.astype(int)
    ix = ax_x.astype(int)
    mask = np.zeros((target, target), dtype=bool)
    mask[np.ix_(iy, ix)] = True
    y = low.values

    x = np.zeros((target, target))
    objective = []
    converged = False
    for _ in range(config.iters):
        recon = idctn(x, norm="ortho")
        resid = np.zeros_like(recon)
        resid[np.ix_(iy, ix)] = y - recon[np.ix_(iy, ix)]
        x_new = _soft(x + dctn(resid, norm="ortho"), config.lam)
        recon_new = idctn(x_new, norm="ortho")
        err = recon_new[np.ix_(iy, ix)] - y
        objective.append(0.5 * float(np.sum(err ** 2))
                         + config.lam * float(np.abs(x_new).sum()))
        delta = np.linalg.norm(x_new - x) / max(1.0, np.linalg.norm(x))
        x = x_new
        if delta <= config.tol:
            converged = True
            break
    result = ChannelMap(values=np.clip(idctn(x, norm="ortho"), 0.0, 1.0),
                        kind=low.kind, denorm=low.denorm)
    if return_info:
        return result, {"objective": objective, "converged": converged,
                        "iterations": len(objective)}
    return result
