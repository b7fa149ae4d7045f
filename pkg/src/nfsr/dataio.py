"""Dataset construction and persistence for the restoration workflow.

A scan produces two complex field components; each becomes a magnitude map
and a wrapped-phase map, normalized per map into [0, 1]:

  magnitude  v -> (v - min) / (max - min)        (denorm constants kept)
  phase      v -> (v + pi) / (2 pi),  v in [-pi, pi)

Undersampled counterparts are pure index selections (rows/cols 0, f, 2f, ...)
so low[i, j] == high[f i, f j] holds exactly. Rotation augmentation uses
exact 90-degree index permutations. Everything persists in a two-file bundle:
`manifest.json` (UTF-8, versioned) plus `arrays.bin` (little-endian float32,
row-major, located by byte offsets from the manifest) - readable from any
language without extra dependencies.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fieldsynth import (
    PROFILES,
    AntennaScene,
    FieldMap,
    GridSpec,
    default_grid,
    random_scene,
    synthesize_nearfield,
)

BUNDLE_VERSION = 1
MANIFEST_NAME = "manifest.json"
ARRAYS_NAME = "arrays.bin"

KINDS = ("magnitude", "phase")
COMPONENTS = ("ex", "ey")
SUPPORTED_FACTORS = (2, 3)


class BundleError(OSError):
    """Bundle file missing, corrupted, or version-incompatible."""


@dataclass
class ChannelMap:
    """A single normalized real-valued map in [0, 1].

    ``denorm`` holds the affine constants for magnitude maps
    ({"offset": min, "scale": max - min}); phase maps carry none because
    their encoding is fixed ([-pi, pi) <-> [0, 1)).
    """

    values: np.ndarray
    kind: str
    denorm: dict | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("ChannelMap values must be 2D")
        if self.kind not in KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("ChannelMap values must be finite")
        lo, hi = float(self.values.min()), float(self.values.max())
        if lo < -1e-9 or hi > 1.0 + 1e-9:
            raise ValueError(f"values outside [0, 1]: min {lo}, max {hi}")
        np.clip(self.values, 0.0, 1.0, out=self.values)
        if self.kind == "magnitude":
            if self.denorm is None:
                raise ValueError("magnitude map requires denorm constants")
            if not float(self.denorm["scale"]) > 0:
                raise ValueError("denorm scale must be positive")

    @property
    def shape(self):
        return self.values.shape


@dataclass
class SamplePair:
    low: ChannelMap
    high: ChannelMap
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f = int(self.meta.get("factor", 0))
        if f:
            want = tuple(-(-s // f) for s in self.high.shape)  # ceil division
            if self.low.shape != want:
                raise ValueError(
                    f"low shape {self.low.shape} != ceil(high/{f}) {want}")


def normalize(raw: np.ndarray, kind: str) -> ChannelMap:
    """Min-max scale a magnitude map, or affinely encode a wrapped phase map."""
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise ValueError("cannot normalize non-finite values")
    if kind == "magnitude":
        if np.any(raw < 0):
            raise ValueError("magnitude values must be non-negative")
        lo = float(raw.min())
        hi = float(raw.max())
        if hi - lo <= 0.0:
            raise ValueError("degenerate normalization: constant magnitude map")
        vals = (raw - lo) / (hi - lo)
        return ChannelMap(values=vals, kind=kind,
                          denorm={"offset": lo, "scale": hi - lo})
    if kind == "phase":
        if np.any(raw < -math.pi - 1e-9) or np.any(raw >= math.pi + 1e-9):
            raise ValueError("phase values must lie in [-pi, pi)")
        return ChannelMap(values=(raw + math.pi) / (2 * math.pi), kind=kind)
    raise ValueError(f"unknown channel kind {kind!r}")


def denormalize(cm: ChannelMap) -> np.ndarray:
    if cm.kind == "magnitude":
        return cm.denorm["offset"] + cm.values * cm.denorm["scale"]
    return cm.values * (2 * math.pi) - math.pi


def wrap_phase(angles: np.ndarray) -> np.ndarray:
    """Reduce angles to [-pi, pi); +pi maps to -pi (same circle point)."""
    return np.where(angles >= math.pi, angles - 2 * math.pi, angles)


def downsample(high: ChannelMap, factor: int) -> ChannelMap:
    """Keep indices 0, factor, 2*factor, ... along both axes (no filtering)."""
    if factor not in SUPPORTED_FACTORS:
        raise ValueError(f"unsupported downsampling factor {factor}; "
                         f"supported: {SUPPORTED_FACTORS}")
    return ChannelMap(values=high.values[::factor, ::factor].copy(),
                      kind=high.kind, denorm=high.denorm)


def infer_factor(n_low: int, target: int) -> int:
    """Recover the decimation factor from grid sizes (ceil(target/f) == n_low)."""
    if n_low < 2 or target < n_low:
        raise ValueError(f"cannot relate {n_low} samples to a {target} grid")
    f = int(round((target - 1) / (n_low - 1)))
    if f < 1 or -(-target // f) != n_low:
        raise ValueError(f"{n_low} samples do not tile a {target} grid "
                         f"at any uniform factor")
    return f


def augment_rotations(cm: ChannelMap) -> list[ChannelMap]:
    """[original, rot90, rot180, rot270]; square maps only, no interpolation."""
    if cm.values.shape[0] != cm.values.shape[1]:
        raise ValueError("rotation augmentation requires a square map")
    return [ChannelMap(values=np.rot90(cm.values, r).copy(),
                       kind=cm.kind, denorm=cm.denorm)
            for r in range(4)]


def add_noise(fieldmap: FieldMap, snr_db: float, seed: int) -> FieldMap:
    """Add complex circular Gaussian noise at the target map SNR.

    The noise budget is total over both tangential components:
    sum|n|^2 = sum(|ex|^2 + |ey|^2) / 10^(snr_db/10), split evenly per sample.
    """
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x5E15E)))
    sig_power = np.mean(np.abs(fieldmap.ex) ** 2 + np.abs(fieldmap.ey) ** 2)
    # per-sample complex variance for each of the two components
    var = sig_power / 10.0 ** (snr_db / 10.0) / 2.0
    scale = math.sqrt(var / 2.0)

    def cnoise(shape):
        return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    shape = fieldmap.ex.shape
    return FieldMap(grid=fieldmap.grid,
                    ex=fieldmap.ex + cnoise(shape),
                    ey=fieldmap.ey + cnoise(shape))


# ---------------------------------------------------------------------------
# bundle format


def write_bundle(path, kind: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write manifest.json + arrays.bin; arrays stored f32 row-major in
    sorted-name order so rebuilds are byte-identical."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        index = {}
        offset = 0
        blobs = []
        for name in sorted(arrays):
            # NB: ascontiguousarray would silently promote 0-d arrays to (1,)
            a = np.asarray(arrays[name], dtype="<f4", order="C")
            index[name] = {"offset": offset, "shape": list(a.shape), "dtype": "<f4"}
            blobs.append(a.tobytes())
            offset += a.nbytes
        manifest = {"version": BUNDLE_VERSION, "kind": kind,
                    "arrays": index, "meta": meta}
        (path / ARRAYS_NAME).write_bytes(b"".join(blobs))
        text = json.dumps(manifest, sort_keys=True, indent=1)
        (path / MANIFEST_NAME).write_text(text + "\n", encoding="utf-8")
    except OSError as e:
        raise BundleError(f"failed writing bundle at {path}: {e}") from e


def read_bundle(path, expect_kind: str | None = None):
    """Return (manifest, arrays) from a bundle directory."""
    path = Path(path)
    mpath = path / MANIFEST_NAME
    bpath = path / ARRAYS_NAME
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        blob = bpath.read_bytes()
    except OSError as e:
        raise BundleError(f"cannot read bundle at {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise BundleError(f"corrupt manifest {mpath}: {e}") from e
    if not isinstance(manifest, dict) or "version" not in manifest:
        raise BundleError(f"corrupt manifest {mpath}: missing version field")
    if manifest["version"] != BUNDLE_VERSION:
        raise BundleError(f"{mpath}: bundle version {manifest['version']} "
                          f"unsupported (expected {BUNDLE_VERSION})")
    if expect_kind is not None and manifest.get("kind") != expect_kind:
        raise BundleError(f"{mpath}: bundle kind {manifest.get('kind')!r}, "
                          f"expected {expect_kind!r}")
    arrays = {}
    for name, entry in manifest.get("arrays", {}).items():
        if entry.get("dtype") != "<f4":
            raise BundleError(f"{mpath}: array {name} has unsupported dtype")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        end = start + 4 * count
        if start < 0 or end > len(blob):
            raise BundleError(f"{mpath}: array {name} offsets exceed blob size")
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=count,
                                     offset=start).reshape(shape)
    return manifest, arrays


def save_fieldmap(fieldmap: FieldMap, path) -> None:
    """Persist a complex field map (components split into re/im f32 planes)."""
    g = fieldmap.grid
    write_bundle(path, "fieldmap", {
        "ex_re": fieldmap.ex.real, "ex_im": fieldmap.ex.imag,
        "ey_re": fieldmap.ey.real, "ey_im": fieldmap.ey.imag,
    }, meta={"grid": {"nx": g.nx, "ny": g.ny, "dx": g.dx, "dy": g.dy,
                      "z_d": g.z_d, "freq_hz": g.freq_hz}})


def load_fieldmap(path) -> FieldMap:
    manifest, arrays = read_bundle(path, expect_kind="fieldmap")
    gm = manifest["meta"]["grid"]
    grid = GridSpec(nx=int(gm["nx"]), ny=int(gm["ny"]), dx=float(gm["dx"]),
                    dy=float(gm["dy"]), z_d=float(gm["z_d"]),
                    freq_hz=float(gm["freq_hz"]))
    ex = arrays["ex_re"].astype(float) + 1j * arrays["ex_im"].astype(float)
    ey = arrays["ey_re"].astype(float) + 1j * arrays["ey_im"].astype(float)
    return FieldMap(grid=grid, ex=ex, ey=ey)


# ---------------------------------------------------------------------------
# dataset build / load


@dataclass(frozen=True)
class DatasetConfig:
    n_scenes: int
    seed: int
    factor: int = 3
    grid_n: int = 86
    z_d_lambda: float = 4.0
    spacing_lambda: float = 0.5
    profiles: tuple = PROFILES
    split_ratio: float = 0.8

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ValueError("n_scenes must be >= 1")
        if self.factor not in SUPPORTED_FACTORS:
            raise ValueError(f"factor must be one of {SUPPORTED_FACTORS}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must be in (0, 1)")
        for p in self.profiles:
            if p not in PROFILES:
                raise ValueError(f"unknown scene profile {p!r}")


def scene_seed_for(config: DatasetConfig, index: int) -> int:
    return int(config.seed) * 100_003 + index


def scene_for_index(config: DatasetConfig, index: int) -> AntennaScene:
    profile = config.profiles[index % len(config.profiles)]
    return random_scene(scene_seed_for(config, index), profile)


def grid_for_scene(config: DatasetConfig, scene: AntennaScene) -> GridSpec:
    return default_grid(scene.freq_hz, n=config.grid_n,
                        z_d_lambda=config.z_d_lambda,
                        spacing_lambda=config.spacing_lambda)


def channel_maps(fieldmap: FieldMap) -> dict:
    """(component, kind) -> normalized high-res ChannelMap."""
    out = {}
    for comp in COMPONENTS:
        e = getattr(fieldmap, comp)
        out[comp, "magnitude"] = normalize(np.abs(e), "magnitude")
        out[comp, "phase"] = normalize(wrap_phase(np.angle(e)), "phase")
    return out


def build_dataset(config: DatasetConfig, out_dir, threads: int = 1) -> dict:
    """Synthesize scenes, derive normalized channel maps with 4 rotations and
    their undersampled counterparts, split train/test by scene, and persist.

    Returns the manifest. The split is by scene so that no rotated variant of
    a test scene can leak into training.
    """
    cfg = config
    scene_ids = [f"s{i:05d}" for i in range(cfg.n_scenes)]

    def make_scene(i):
        scene = scene_for_index(cfg, i)
        grid = grid_for_scene(cfg, scene)
        fmap = synthesize_nearfield(scene, grid)
        return scene, channel_maps(fmap)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            built = list(pool.map(make_scene, range(cfg.n_scenes)))
    else:
        built = [make_scene(i) for i in range(cfg.n_scenes)]

    arrays = {}
    entries = []
    for i, (scene, chans) in enumerate(built):
        sid = scene_ids[i]
        profile = cfg.profiles[i % len(cfg.profiles)]
        for comp in COMPONENTS:
            for kind in KINDS:
                high = chans[comp, kind]
                for rot, rotated in enumerate(augment_rotations(high)):
                    low = downsample(rotated, cfg.factor)
                    eid = f"{sid}.{comp}.{kind}.r{rot}"
                    arrays[eid + ".high"] = rotated.values
                    arrays[eid + ".low"] = low.values
                    entries.append({
                        "id": eid, "scene_id": sid,
                        "scene_seed": scene_seed_for(cfg, i),
                        "profile": profile, "freq_hz": scene.freq_hz,
                        "z_d_lambda": cfg.z_d_lambda, "channel": comp,
                        "kind": kind, "rot": rot, "factor": cfg.factor,
                        "denorm": dict(high.denorm) if high.denorm else None,
                    })

    rng = np.random.default_rng(np.random.SeedSequence((int(cfg.seed), 0x5)))
    order = list(rng.permutation(cfg.n_scenes))
    n_train = int(round(cfg.split_ratio * cfg.n_scenes))
    train_scenes = sorted(scene_ids[j] for j in order[:n_train])
    test_scenes = sorted(scene_ids[j] for j in order[n_train:])

    meta = {
        "config": {
            "n_scenes": cfg.n_scenes, "seed": cfg.seed, "factor": cfg.factor,
            "grid_n": cfg.grid_n, "z_d_lambda": cfg.z_d_lambda,
            "spacing_lambda": cfg.spacing_lambda,
            "profiles": list(cfg.profiles), "split_ratio": cfg.split_ratio,
        },
        "entries": sorted(entries, key=lambda e: e["id"]),
        "split": {"train": train_scenes, "test": test_scenes},
    }
    write_bundle(out_dir, "dataset", arrays, meta)
    manifest, _ = read_bundle(out_dir, expect_kind="dataset")
    return manifest


class Dataset:
    """In-memory view of a dataset bundle."""

    def __init__(self, manifest: dict, arrays: dict):
        self.manifest = manifest
        self.meta = manifest["meta"]
        self.config = self.meta["config"]
        self.split = self.meta["split"]
        self._arrays = arrays
        self._entries = {e["id"]: e for e in self.meta["entries"]}

    @property
    def entry_ids(self):
        return sorted(self._entries)

    def scene_ids(self, split: str | None = None):
        if split is None:
            return sorted(self.split["train"] + self.split["test"])
        return list(self.split[split])

    def entry(self, eid: str) -> dict:
        return self._entries[eid]

    def pair(self, eid: str) -> SamplePair:
        e = self._entries[eid]
        denorm = dict(e["denorm"]) if e["denorm"] else None
        high = ChannelMap(values=self._arrays[eid + ".high"].astype(float),
                          kind=e["kind"], denorm=denorm)
        low = ChannelMap(values=self._arrays[eid + ".low"].astype(float),
                         kind=e["kind"], denorm=denorm)
        return SamplePair(low=low, high=high, meta=dict(e))

    def pairs(self, kind: str | None = None, split: str | None = None,
              channel: str | None = None, rot: int | None = None):
        scenes = set(self.scene_ids(split))
        out = []
        for eid in self.entry_ids:
            e = self._entries[eid]
            if e["scene_id"] not in scenes:
                continue
            if kind is not None and e["kind"] != kind:
                continue
            if channel is not None and e["channel"] != channel:
                continue
            if rot is not None and e["rot"] != rot:
                continue
            out.append(self.pair(eid))
        return out


def load_dataset(path) -> Dataset:
    manifest, arrays = read_bundle(path, expect_kind="dataset")
    return Dataset(manifest, arrays)


def bundle_digest(path) -> str:
    """SHA-256 over manifest + blob, for determinism checks."""
    import hashlib

    h = hashlib.sha256()
    h.update((Path(path) / MANIFEST_NAME).read_bytes())
    h.update((Path(path) / ARRAYS_NAME).read_bytes())
    return h.hexdigest()
