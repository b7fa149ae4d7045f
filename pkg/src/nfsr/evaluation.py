"""Desk-scale evaluation studies over the restoration -> far-field pipeline.

Every study runs the same end-to-end chain per scene: synthesize the exact
near field, normalize into magnitude/phase channel maps, decimate, restore
with a chosen method, denormalize, recombine the complex field, transform to
far field, and score principal-plane cuts against the closed-form reference
pattern. The "identity" method skips restoration (ground-truth maps through
the same transform) and is therefore the per-scene floor every restorer is
measured against.

Map metrics (MAE, periodic phase distance, MS-SSIM) are computed in the
normalized [0, 1] domain and averaged over the ex/ey components; pattern
errors are mean absolute dB deviations above a -30 dB floor (with a -40 dB
column reported alongside so the floor's influence is visible).

Studies mirror the published experiment designs: method comparison,
downsampling-factor study, ground-truth/restored error attribution, and a
noise (SNR) sweep.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import losses
from .baselines import CsConfig, VariogramModel, bicubic_upsample, cs_reconstruct, kriging_upsample
from .dataio import (
    ChannelMap,
    Dataset,
    add_noise,
    channel_maps,
    denormalize,
    downsample,
)
from .fieldsynth import (
    AntennaScene,
    FieldMap,
    GridSpec,
    analytic_farfield,
    default_grid,
    random_scene,
    synthesize_nearfield,
)
from .neuralnet import predict
from .nf2ff import (
    PatternCut,
    default_hemisphere_axes,
    extract_cut,
    pattern_error,
    plane_wave_spectrum,
    to_farfield,
)

METHODS = ("nfsnet", "bicubic", "kriging", "cs", "identity")
ERROR_FLOOR_DB = -30.0
ERROR_FLOOR_ALT_DB = -40.0

COMPARE_COLUMNS = ["scene_id", "profile", "method", "factor", "mag_mae",
                   "phase_lpp", "mag_msssim", "phase_msssim", "err_e_db",
                   "err_h_db", "err_mean_db", "err_e_db_floor40",
                   "err_h_db_floor40", "pol_axis"]
ATTRIBUTION_COLUMNS = ["scene_id", "factor", "combo", "err_e_db", "err_h_db",
                       "err_mean_db"]
SNR_COLUMNS = ["scene_id", "method", "factor", "snr_db", "err_e_db",
               "err_h_db", "err_mean_db"]


class EvalError(RuntimeError):
    """A study stage failed; message carries the stage label."""


def restore_map(method: str, low: ChannelMap, target: int,
                factor: int | None = None, models: dict | None = None,
                cs_config: CsConfig = CsConfig(),
                variogram: VariogramModel | None = None,
                high: ChannelMap | None = None) -> ChannelMap:
    """Dispatch one undersampled channel map to a restoration method."""
    if method == "nfsnet":
        if not models or low.kind not in models:
            raise EvalError(f"no trained model available for {low.kind!r}")
        return predict(models[low.kind], low, factor)
    if method == "bicubic":
        return bicubic_upsample(low, target, factor)
    if method == "kriging":
        return kriging_upsample(low, target, variogram, factor)
    if method == "cs":
        return cs_reconstruct(low, target, cs_config, factor)
    if method == "identity":
        if high is None:
            raise EvalError("identity method needs the ground-truth map")
        return high
    raise EvalError(f"unknown restoration method {method!r}")


def _dominant_pol(fieldmap: FieldMap) -> str:
    px = float(np.sum(np.abs(fieldmap.ex) ** 2))
    py = float(np.sum(np.abs(fieldmap.ey) ** 2))
    return "x" if px >= py else "y"


def _recombine(grid: GridSpec, restored: dict) -> FieldMap:
    comps = {}
    for comp in ("ex", "ey"):
        mag = denormalize(restored[comp, "magnitude"])
        ph = denormalize(restored[comp, "phase"])
        comps[comp] = mag * np.exp(1j * ph)
    return FieldMap(grid=grid, ex=comps["ex"], ey=comps["ey"])


def reference_cuts(scene: AntennaScene, pol_axis: str,
                   theta_step_deg: float = 1.0) -> dict:
    th, ph = default_hemisphere_axes(theta_step_deg)
    pattern = analytic_farfield(scene, th, ph)
    return {plane: extract_cut(pattern, plane, pol_axis) for plane in ("E", "H")}


@dataclass
class PipelineResult:
    method: str
    factor: int
    pol_axis: str
    ground: dict  # (component, kind) -> ChannelMap
    restored: dict  # (component, kind) -> ChannelMap
    fieldmap: FieldMap
    cuts: dict  # plane -> (restored cut, reference cut)
    err_e_db: float
    err_h_db: float
    err_e_db_floor40: float
    err_h_db_floor40: float

    @property
    def err_mean_db(self) -> float:
        return 0.5 * (self.err_e_db + self.err_h_db)


def _cut_errors(recon_pattern, refs: dict, pol_axis: str):
    cuts = {}
    errs = {}
    for plane in ("E", "H"):
        rec = extract_cut(recon_pattern, plane, pol_axis)
        cuts[plane] = (rec, refs[plane])
        errs[plane] = (pattern_error(rec, refs[plane], ERROR_FLOOR_DB),
                       pattern_error(rec, refs[plane], ERROR_FLOOR_ALT_DB))
    return cuts, errs


def pipeline_from_fieldmap(scene: AntennaScene, fieldmap: FieldMap,
                           method: str, factor: int,
                           models: dict | None = None, pad_factor: int = 4,
                           theta_step_deg: float = 1.0,
                           cs_config: CsConfig = CsConfig(),
                           variogram: VariogramModel | None = None,
                           refs: dict | None = None,
                           pol_axis: str | None = None) -> PipelineResult:
    """Run decimation -> restoration -> far field on one synthesized map."""
    grid = fieldmap.grid
    target = grid.nx
    ground = channel_maps(fieldmap)
    restored = {}
    for key, high in ground.items():
        low = downsample(high, factor)
        restored[key] = restore_map(method, low, target, factor, models,
                                    cs_config, variogram, high=high)
    recon = _recombine(grid, restored)
    spec = plane_wave_spectrum(recon, pad_factor)
    th, ph = default_hemisphere_axes(theta_step_deg)
    pattern = to_farfield(spec, th, ph)
    if pol_axis is None:
        pol_axis = _dominant_pol(fieldmap)
    if refs is None:
        refs = reference_cuts(scene, pol_axis, theta_step_deg)
    cuts, errs = _cut_errors(pattern, refs, pol_axis)
    return PipelineResult(
        method=method, factor=factor, pol_axis=pol_axis, ground=ground,
        restored=restored, fieldmap=recon, cuts=cuts,
        err_e_db=errs["E"][0], err_h_db=errs["H"][0],
        err_e_db_floor40=errs["E"][1], err_h_db_floor40=errs["H"][1])


def end_to_end(scene: AntennaScene, method: str, factor: int,
               models: dict | None = None, grid: GridSpec | None = None,
               **kwargs) -> PipelineResult:
    if grid is None:
        grid = default_grid(scene.freq_hz)
    fieldmap = synthesize_nearfield(scene, grid)
    return pipeline_from_fieldmap(scene, fieldmap, method, factor, models,
                                  **kwargs)


def map_metrics(ground: dict, restored: dict) -> dict:
    """MAE / periodic distance / MS-SSIM in [0, 1] space, averaged over ex/ey."""
    out = {"mag_mae": [], "phase_lpp": [], "mag_msssim": [], "phase_msssim": []}
    with torch.no_grad():
        for comp in ("ex", "ey"):
            gm, rm = ground[comp, "magnitude"], restored[comp, "magnitude"]
            gp, rp = ground[comp, "phase"], restored[comp, "phase"]
            out["mag_mae"].append(float(losses.mae(gm.values, rm.values)))
            out["phase_lpp"].append(float(
                losses.periodic_phase_loss(gp.values, rp.values)))
            out["mag_msssim"].append(float(losses.ms_ssim(gm.values, rm.values)))
            out["phase_msssim"].append(float(losses.ms_ssim(gp.values, rp.values)))
    return {k: float(np.mean(v)) for k, v in out.items()}


# ---------------------------------------------------------------------------
# scene access for datasets


def dataset_scene(dataset: Dataset, scene_id: str):
    """Rebuild the scene and grid a dataset entry came from."""
    entry = next(e for e in dataset.meta["entries"]
                 if e["scene_id"] == scene_id)
    scene = random_scene(entry["scene_seed"], entry["profile"])
    cfg = dataset.config
    grid = default_grid(scene.freq_hz, n=int(cfg["grid_n"]),
                        z_d_lambda=float(cfg["z_d_lambda"]),
                        spacing_lambda=float(cfg["spacing_lambda"]))
    return scene, grid, entry["profile"]


# ---------------------------------------------------------------------------
# studies


def compare_study(dataset: Dataset, models: dict, factor: int | None = None,
                  methods=METHODS, split: str = "test",
                  scene_ids=None, **kwargs):
    """Per-scene, per-method metric rows (map domain + pattern domain)."""
    if factor is None:
        factor = int(dataset.config["factor"])
    if scene_ids is None:
        scene_ids = dataset.scene_ids(split)
    rows = []
    artifacts = {}
    for sid in scene_ids:
        scene, grid, profile = dataset_scene(dataset, sid)
        fieldmap = synthesize_nearfield(scene, grid)
        pol = _dominant_pol(fieldmap)
        refs = reference_cuts(scene, pol)
        for method in methods:
            res = pipeline_from_fieldmap(scene, fieldmap, method, factor,
                                         models, refs=refs, pol_axis=pol,
                                         **kwargs)
            row = {"scene_id": sid, "profile": profile, "method": method,
                   "factor": factor, "pol_axis": pol,
                   "err_e_db": res.err_e_db, "err_h_db": res.err_h_db,
                   "err_mean_db": res.err_mean_db,
                   "err_e_db_floor40": res.err_e_db_floor40,
                   "err_h_db_floor40": res.err_h_db_floor40}
            row.update(map_metrics(res.ground, res.restored))
            rows.append(row)
            artifacts[sid, method] = res
    return rows, artifacts


def factor_study(dataset: Dataset, models_by_factor: dict,
                 method: str = "nfsnet", split: str = "test",
                 scene_ids=None, **kwargs):
    """Same pipeline at each decimation factor; one row per scene and factor."""
    if scene_ids is None:
        scene_ids = dataset.scene_ids(split)
    rows = []
    for sid in scene_ids:
        scene, grid, profile = dataset_scene(dataset, sid)
        fieldmap = synthesize_nearfield(scene, grid)
        pol = _dominant_pol(fieldmap)
        refs = reference_cuts(scene, pol)
        for factor in sorted(models_by_factor):
            res = pipeline_from_fieldmap(scene, fieldmap, method, int(factor),
                                         models_by_factor[factor], refs=refs,
                                         pol_axis=pol, **kwargs)
            row = {"scene_id": sid, "profile": profile, "method": method,
                   "factor": int(factor), "pol_axis": pol,
                   "err_e_db": res.err_e_db, "err_h_db": res.err_h_db,
                   "err_mean_db": res.err_mean_db,
                   "err_e_db_floor40": res.err_e_db_floor40,
                   "err_h_db_floor40": res.err_h_db_floor40}
            row.update(map_metrics(res.ground, res.restored))
            rows.append(row)
    return rows


ATTRIBUTION_COMBOS = {
    # ground-truth (g) vs restored (r) magnitude/phase channels
    "gm_gp": ("ground", "ground"),
    "gm_rp": ("ground", "restored"),
    "rm_gp": ("restored", "ground"),
    "rm_rp": ("restored", "restored"),
}


def error_attribution(scene: AntennaScene, fieldmap: FieldMap, factor: int,
                      models: dict, method: str = "nfsnet",
                      pad_factor: int = 4, theta_step_deg: float = 1.0,
                      **kwargs) -> dict:
    """Pattern error for each ground/restored magnitude-phase combination."""
    grid = fieldmap.grid
    ground = channel_maps(fieldmap)
    restored = {}
    for key, high in ground.items():
        low = downsample(high, factor)
        restored[key] = restore_map(method, low, grid.nx, factor, models,
                                    high=high, **kwargs)
    pol = _dominant_pol(fieldmap)
    refs = reference_cuts(scene, pol, theta_step_deg)
    th, ph = default_hemisphere_axes(theta_step_deg)
    out = {}
    for combo, (mag_src, ph_src) in ATTRIBUTION_COMBOS.items():
        pick = lambda src, kind, comp: (ground if src == "ground" else restored)[comp, kind]
        maps = {}
        for comp in ("ex", "ey"):
            maps[comp, "magnitude"] = pick(mag_src, "magnitude", comp)
            maps[comp, "phase"] = pick(ph_src, "phase", comp)
        recon = _recombine(grid, maps)
        pattern = to_farfield(plane_wave_spectrum(recon, pad_factor), th, ph)
        _, errs = _cut_errors(pattern, refs, pol)
        out[combo] = {"err_e_db": errs["E"][0], "err_h_db": errs["H"][0],
                      "err_mean_db": 0.5 * (errs["E"][0] + errs["H"][0])}
    return out


def attribution_study(dataset: Dataset, models: dict, factor: int | None = None,
                      method: str = "nfsnet", split: str = "test",
                      scene_ids=None):
    if factor is None:
        factor = int(dataset.config["factor"])
    if scene_ids is None:
        scene_ids = dataset.scene_ids(split)
    rows = []
    for sid in scene_ids:
        scene, grid, _ = dataset_scene(dataset, sid)
        fieldmap = synthesize_nearfield(scene, grid)
        combos = error_attribution(scene, fieldmap, factor, models, method)
        for combo, errs in combos.items():
            rows.append({"scene_id": sid, "factor": factor, "combo": combo,
                         **errs})
    return rows


def snr_study(dataset: Dataset, models: dict, snr_db_list,
              factor: int | None = None, method: str = "nfsnet",
              seed: int = 0, split: str = "test", scene_ids=None):
    """Noise injected into the raw fields before decimation/restoration."""
    if factor is None:
        factor = int(dataset.config["factor"])
    if scene_ids is None:
        scene_ids = dataset.scene_ids(split)
    rows = []
    for i, sid in enumerate(scene_ids):
        scene, grid, _ = dataset_scene(dataset, sid)
        clean = synthesize_nearfield(scene, grid)
        pol = _dominant_pol(clean)
        refs = reference_cuts(scene, pol)
        for snr_db in snr_db_list:
            noisy = add_noise(clean, float(snr_db), int(seed) * 100_003 + i)
            res = pipeline_from_fieldmap(scene, noisy, method, factor, models,
                                         refs=refs, pol_axis=pol)
            rows.append({"scene_id": sid, "method": method, "factor": factor,
                         "snr_db": float(snr_db), "err_e_db": res.err_e_db,
                         "err_h_db": res.err_h_db,
                         "err_mean_db": res.err_mean_db})
    return rows


def summarize(rows, group_keys, value_key="err_mean_db") -> dict:
    """Mean of ``value_key`` per distinct combination of ``group_keys``."""
    groups = {}
    for row in rows:
        key = tuple(row[k] for k in group_keys)
        groups.setdefault(key, []).append(float(row[value_key]))
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}


# ---------------------------------------------------------------------------
# report files


def write_rows_csv(rows, path, columns=None, comment: str | None = None) -> None:
    if not rows:
        raise EvalError("no rows to report")
    if columns is None:
        columns = list(rows[0].keys())
    for i, row in enumerate(rows):
        missing = [c for c in columns if c not in row]
        if missing:
            raise EvalError(f"row {i} missing columns {missing}")
        bad = [c for c in columns if isinstance(row[c], float)
               and not math.isfinite(row[c])]
        if bad:
            raise EvalError(f"row {i} has non-finite metrics {bad}")
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([f"{row[c]:.6f}" if isinstance(row[c], float)
                        else row[c] for c in columns])


def plot_cut_overlay(cuts, path, title: str = "", floor_db: float = -60.0) -> None:
    """Overlay pattern cuts (label, PatternCut) into one self-contained SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with plt.rc_context({"svg.hashsalt": "nfsr"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        styles = ["-", "--", "-.", ":"]
        for i, (label, cut) in enumerate(cuts):
            ax.plot(cut.angle_deg, np.maximum(cut.level_db, floor_db),
                    styles[i % len(styles)], label=label, linewidth=1.4)
        ax.set_xlabel("angle (deg)")
        ax.set_ylabel("normalized level (dB)")
        ax.set_ylim(floor_db, 2.0)
        ax.set_xlim(-90, 90)
        ax.grid(True, alpha=0.4)
        if title:
            ax.set_title(title)
        ax.legend(loc="lower center", fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def write_study_report(study: str, rows, out_dir, artifacts=None) -> list:
    """Write <study>.csv (+ cut overlay SVGs for the compare study)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    comments = {
        "compare": ("map metrics averaged over ex/ey components in [0,1] "
                    "space; pattern errors are mean |dB| deviations above "
                    "the -30 dB floor (floor40 columns: -40 dB floor)"),
        "factor": "one row per scene and decimation factor, method fixed",
        "attribution": ("combo key: gm/rm = ground/restored magnitude, "
                        "gp/rp = ground/restored phase"),
        "snr": "noise injected into raw fields before decimation",
    }
    columns = {
        "compare": COMPARE_COLUMNS,
        "factor": COMPARE_COLUMNS,
        "attribution": ATTRIBUTION_COLUMNS,
        "snr": SNR_COLUMNS,
    }[study]
    files = [out / f"{study}.csv"]
    write_rows_csv(rows, files[0], columns, comments.get(study))
    if artifacts:
        for (sid, method), res in sorted(artifacts.items()):
            if method == "identity":
                continue
            for plane in ("E", "H"):
                rec, ref = res.cuts[plane]
                svg = out / f"{sid}_{method}_{plane}cut.svg"
                plot_cut_overlay(
                    [("reference", ref), (method, rec)], svg,
                    title=f"{sid} {plane}-plane ({method}, factor {res.factor})")
                files.append(svg)
    return files
