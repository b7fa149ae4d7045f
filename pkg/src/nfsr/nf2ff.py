"""Planar near-field to far-field transform via the plane-wave spectrum.

The spectrum is the 2D transform of the tangential field with the
``exp(+j(kx x + ky y))`` kernel,

    f_x(kx, ky) = integral E_x(x', y', z_d) e^{+j(kx x' + ky y')} dx' dy'

evaluated by a zero-padded FFT with cell-area weighting, and the far field
follows from

    E_theta ~ f_x cos(phi) + f_y sin(phi)
    E_phi   ~ cos(theta) [ -f_x sin(phi) + f_y cos(phi) ]

at (kx, ky) = k0 (sin(theta) cos(phi), sin(theta) sin(phi)). The common
radial factor j k e^{-jkr} / (2 pi r) is dropped: every consumer works with
peak-normalized patterns.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .fieldsynth import FieldMap

#: dB floor applied to normalized pattern cuts; below any plotted dynamic range
CUT_FLOOR_DB = -80.0


class TransformError(ValueError):
    """Invalid input to the near-field to far-field transform."""


@dataclass
class PlaneWaveSpectrum:
    fx: np.ndarray
    fy: np.ndarray
    kx_axis: np.ndarray
    ky_axis: np.ndarray
    k0: float

    def __post_init__(self):
        if self.fx.shape != self.fy.shape:
            raise TransformError("fx and fy must have equal shapes")
        if self.fx.shape != (len(self.ky_axis), len(self.kx_axis)):
            raise TransformError("spectrum shape must be (len(ky), len(kx))")
        if np.any(np.diff(self.kx_axis) <= 0) or np.any(np.diff(self.ky_axis) <= 0):
            raise TransformError("wavenumber axes must be monotonic increasing")
        if self.k0 <= 0:
            raise TransformError("k0 must be positive")


@dataclass
class FarFieldPattern:
    """E_theta, E_phi over a (theta, phi) grid, forward hemisphere only."""

    e_theta: np.ndarray
    e_phi: np.ndarray
    theta_axis: np.ndarray
    phi_axis: np.ndarray

    def __post_init__(self):
        self.theta_axis = np.asarray(self.theta_axis, dtype=float)
        self.phi_axis = np.asarray(self.phi_axis, dtype=float)
        if np.any(self.theta_axis < -1e-12) or np.any(self.theta_axis > math.pi / 2 + 1e-9):
            raise TransformError("theta must lie in [0, pi/2] for a planar scan")
        shape = (len(self.theta_axis), len(self.phi_axis))
        if self.e_theta.shape != shape or self.e_phi.shape != shape:
            raise TransformError(f"pattern arrays must have shape {shape}")


@dataclass
class PatternCut:
    """Principal-plane cut, peak-normalized dB over angle in degrees."""

    angle_deg: np.ndarray
    level_db: np.ndarray
    plane: str

    def __post_init__(self):
        if abs(float(np.max(self.level_db))) > 1e-9:
            raise TransformError("cut must be peak-normalized to 0 dB")
        if not np.all(np.isfinite(self.level_db)):
            raise TransformError("cut levels must be finite")


def plane_wave_spectrum(fieldmap: FieldMap, pad_factor: int = 4) -> PlaneWaveSpectrum:
    """Discrete plane-wave spectrum of a fully-sampled scan.

    Zero-pads the map by ``pad_factor`` per axis before the FFT (finer
    wavenumber sampling for the later angular interpolation) and applies the
    dx*dy cell weight so the result approximates the continuous integral.
    """
    if not (1 <= int(pad_factor) <= 16):
        raise TransformError("pad_factor must be in [1, 16]")
    grid = fieldmap.grid
    if not grid.fully_sampled:
        raise TransformError(
            "Nyquist violation: grid spacing exceeds lambda/2, "
            "super-resolve the map before transforming"
        )
    px = int(pad_factor) * grid.nx
    py = int(pad_factor) * grid.ny
    kx = 2 * math.pi * np.fft.fftshift(np.fft.fftfreq(px, grid.dx))
    ky = 2 * math.pi * np.fft.fftshift(np.fft.fftfreq(py, grid.dy))
    # ifft2 carries the e^{+j} kernel; undo its 1/N normalization, weight by
    # the cell area, and re-phase for the centered grid origin
    x0 = grid.x_axis()[0]
    y0 = grid.y_axis()[0]
    phase = np.exp(1j * (ky[:, None] * y0 + kx[None, :] * x0))

    def transform(e: np.ndarray) -> np.ndarray:
        f = np.fft.ifft2(e, s=(py, px)) * (px * py) * grid.dx * grid.dy
        return np.fft.fftshift(f) * phase

    return PlaneWaveSpectrum(
        fx=transform(fieldmap.ex),
        fy=transform(fieldmap.ey),
        kx_axis=kx,
        ky_axis=ky,
        k0=grid.k0,
    )


def spectrum_energy(spec: PlaneWaveSpectrum) -> float:
    """sum |f|^2 dkx dky / (2 pi)^2, for Parseval checks against the map."""
    dkx = spec.kx_axis[1] - spec.kx_axis[0]
    dky = spec.ky_axis[1] - spec.ky_axis[0]
    total = np.sum(np.abs(spec.fx) ** 2 + np.abs(spec.fy) ** 2)
    return float(total * dkx * dky / (2 * math.pi) ** 2)


def map_energy(fieldmap: FieldMap) -> float:
    """sum |E|^2 dx dy over the scan plane."""
    g = fieldmap.grid
    total = np.sum(np.abs(fieldmap.ex) ** 2 + np.abs(fieldmap.ey) ** 2)
    return float(total * g.dx * g.dy)


def to_farfield(spec: PlaneWaveSpectrum, theta_axis, phi_axis) -> FarFieldPattern:
    """Evaluate the far-field pattern on a (theta, phi) grid.

    Spectrum values at off-grid (kx, ky) come from bilinear interpolation on
    the padded spectrum grid; queries marginally outside the last cell (the
    theta = 90 deg rim at exactly lambda/2 spacing) extrapolate linearly.
    """
    th = np.asarray(theta_axis, dtype=float)
    ph = np.asarray(phi_axis, dtype=float)
    if np.any(th < -1e-12) or np.any(th > math.pi / 2 + 1e-9):
        raise TransformError("theta outside [0, pi/2]")
    TH, PH = np.meshgrid(th, ph, indexing="ij")
    qx = spec.k0 * np.sin(TH) * np.cos(PH)
    qy = spec.k0 * np.sin(TH) * np.sin(PH)
    pts = np.stack([qy, qx], axis=-1)

    interp_fx = RegularGridInterpolator(
        (spec.ky_axis, spec.kx_axis), spec.fx, method="linear",
        bounds_error=False, fill_value=None)
    interp_fy = RegularGridInterpolator(
        (spec.ky_axis, spec.kx_axis), spec.fy, method="linear",
        bounds_error=False, fill_value=None)
    fx = interp_fx(pts)
    fy = interp_fy(pts)

    sp, cp = np.sin(PH), np.cos(PH)
    e_theta = fx * cp + fy * sp
    e_phi = np.cos(TH) * (-fx * sp + fy * cp)
    return FarFieldPattern(e_theta=e_theta, e_phi=e_phi, theta_axis=th, phi_axis=ph)


def default_hemisphere_axes(theta_step_deg: float = 1.0, phi_step_deg: float = 90.0):
    """Theta 0..90 and phi 0..360 axes; the phi default hits all four
    principal half-planes needed for E/H cuts."""
    th = np.deg2rad(np.arange(0.0, 90.0 + theta_step_deg / 2, theta_step_deg))
    ph = np.deg2rad(np.arange(0.0, 360.0, phi_step_deg))
    return th, ph


_CUT_GEOMETRY = {
    # (plane, polarization_axis) -> (phi of the positive half-plane, component)
    ("E", "x"): (0.0, "e_theta"),
    ("H", "x"): (90.0, "e_phi"),
    ("E", "y"): (90.0, "e_theta"),
    ("H", "y"): (0.0, "e_phi"),
}


def _nearest_phi_column(phi_axis: np.ndarray, phi_deg: float) -> int:
    target = math.radians(phi_deg % 360.0)
    diff = np.abs((phi_axis - target + math.pi) % (2 * math.pi) - math.pi)
    idx = int(np.argmin(diff))
    step = np.min(np.diff(phi_axis)) if len(phi_axis) > 1 else 2 * math.pi
    if diff[idx] > step + 1e-9:
        raise TransformError(
            f"pattern phi grid has no column within one step of {phi_deg} deg"
        )
    return idx


def extract_cut(pattern: FarFieldPattern, plane: str = "E",
                polarization_axis: str = "x") -> PatternCut:
    """Principal-plane cut of the co-polarized component in normalized dB.

    The positive angles come from the cut's phi half-plane, the negative
    angles from phi + 180 deg, stitched at theta = 0 so the abscissa runs
    -90..+90 deg. Levels are peak-normalized and floored at CUT_FLOOR_DB.
    """
    key = (plane, polarization_axis)
    if key not in _CUT_GEOMETRY:
        raise TransformError(f"unknown cut request {key}")
    phi_deg, comp_name = _CUT_GEOMETRY[key]
    comp = getattr(pattern, comp_name)
    i_pos = _nearest_phi_column(pattern.phi_axis, phi_deg)
    i_neg = _nearest_phi_column(pattern.phi_axis, phi_deg + 180.0)

    mag_pos = np.abs(comp[:, i_pos])
    mag_neg = np.abs(comp[:, i_neg])
    theta_deg = np.rad2deg(pattern.theta_axis)
    angle = np.concatenate([-theta_deg[::-1], theta_deg[1:]])
    mag = np.concatenate([mag_neg[::-1], mag_pos[1:]])

    peak = mag.max()
    if peak == 0.0:
        raise TransformError("degenerate pattern: cut is identically zero")
    with np.errstate(divide="ignore"):
        level = 20.0 * np.log10(mag / peak)
    level = np.maximum(level, CUT_FLOOR_DB)
    return PatternCut(angle_deg=angle, level_db=level, plane=plane)


def pattern_error(a: PatternCut, b: PatternCut, floor_db: float = -30.0) -> float:
    """Mean absolute dB difference above the floor.

    Samples where both cuts sit below ``floor_db`` are excluded: disagreement
    deep inside nulls does not affect how pattern agreement is judged.
    """
    if a.angle_deg.shape != b.angle_deg.shape or np.max(
            np.abs(a.angle_deg - b.angle_deg)) > 1e-9:
        raise TransformError("pattern cuts must share the same angle axis")
    mask = np.maximum(a.level_db, b.level_db) >= floor_db
    if not np.any(mask):
        raise TransformError("no samples above the error floor")
    return float(np.mean(np.abs(a.level_db[mask] - b.level_db[mask])))


def write_cut_csv(cut: PatternCut, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["angle_deg", "level_db"])
        for ang, lev in zip(cut.angle_deg, cut.level_db):
            w.writerow([f"{ang:.6f}", f"{lev:.6f}"])


def read_cut_csv(path, plane: str = "E") -> PatternCut:
    angles, levels = [], []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:2] != ["angle_deg", "level_db"]:
            raise TransformError(f"unexpected cut CSV header: {header}")
        for row in r:
            angles.append(float(row[0]))
            levels.append(float(row[1]))
    return PatternCut(angle_deg=np.array(angles), level_db=np.array(levels), plane=plane)
