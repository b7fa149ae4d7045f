"""Tests for normalization, pairing, augmentation, noise, and the bundle format."""

import json
import math

import numpy as np
import pytest

from nfsr import dataio
from nfsr import fieldsynth as fs

FREQ_1M = fs.C_LIGHT


def mag_map(values):
    return dataio.normalize(np.asarray(values, dtype=float), "magnitude")


# ---------------------------------------------------------------------------
# normalization


def test_normalize_magnitude_example():
    cm = mag_map([[0.0, 5.0], [10.0, 10.0]])
    np.testing.assert_allclose(cm.values, [[0.0, 0.5], [1.0, 1.0]])
    assert cm.denorm == {"offset": 0.0, "scale": 10.0}


def test_normalize_phase_endpoints():
    cm = dataio.normalize(np.array([[-math.pi, 0.0]]), "phase")
    assert cm.values[0, 0] == pytest.approx(0.0)
    assert cm.values[0, 1] == pytest.approx(0.5)
    assert cm.denorm is None


def test_normalize_round_trip_random():
    rng = np.random.default_rng(0)
    raw = rng.uniform(0.3, 7.0, size=(24, 24))
    back = dataio.denormalize(dataio.normalize(raw, "magnitude"))
    assert np.max(np.abs(back - raw)) < 1e-6

    ph = rng.uniform(-math.pi, math.pi, size=(24, 24))
    back = dataio.denormalize(dataio.normalize(ph, "phase"))
    assert np.max(np.abs(back - ph)) < 1e-9


def test_normalize_rejects_constant_magnitude():
    with pytest.raises(ValueError, match="degenerate normalization"):
        dataio.normalize(np.full((4, 4), 3.3), "magnitude")


def test_normalize_rejects_bad_inputs():
    with pytest.raises(ValueError, match="non-negative"):
        dataio.normalize(np.array([[-1.0, 2.0]]), "magnitude")
    with pytest.raises(ValueError):
        dataio.normalize(np.array([[np.nan, 2.0]]), "magnitude")
    with pytest.raises(ValueError, match="pi"):
        dataio.normalize(np.array([[4.0, 0.0]]), "phase")
    with pytest.raises(ValueError, match="kind"):
        dataio.normalize(np.array([[0.5]]), "intensity")


def test_wrap_phase_half_open_interval():
    wrapped = dataio.wrap_phase(np.array([math.pi, 0.0, -math.pi, 3.0]))
    assert wrapped[0] == pytest.approx(-math.pi)
    assert wrapped[2] == pytest.approx(-math.pi)
    assert wrapped[1] == 0.0 and wrapped[3] == 3.0


def test_channelmap_validation():
    with pytest.raises(ValueError, match="outside"):
        dataio.ChannelMap(values=np.array([[1.5]]), kind="phase")
    with pytest.raises(ValueError, match="denorm"):
        dataio.ChannelMap(values=np.array([[0.5]]), kind="magnitude")
    # values a hair outside [0,1] from float noise are clipped, not rejected
    cm = dataio.ChannelMap(values=np.array([[1.0 + 1e-12, 0.0]]), kind="phase")
    assert cm.values.max() <= 1.0


# ---------------------------------------------------------------------------
# sampling


def test_downsample_shapes():
    high = dataio.ChannelMap(values=np.zeros((86, 86)) + 0.5, kind="phase")
    assert dataio.downsample(high, 3).shape == (29, 29)
    assert dataio.downsample(high, 2).shape == (43, 43)


def test_downsample_is_pure_index_selection():
    rng = np.random.default_rng(1)
    high = dataio.ChannelMap(values=rng.uniform(size=(20, 20)), kind="phase")
    low = dataio.downsample(high, 3)
    np.testing.assert_array_equal(low.values, high.values[::3, ::3])


def test_downsample_rejects_other_factors():
    high = dataio.ChannelMap(values=np.zeros((12, 12)), kind="phase")
    for f in (1, 4, 0):
        with pytest.raises(ValueError, match="unsupported"):
            dataio.downsample(high, f)


def test_sample_pair_shape_contract():
    high = dataio.ChannelMap(values=np.zeros((86, 86)), kind="phase")
    low = dataio.downsample(high, 3)
    dataio.SamplePair(low=low, high=high, meta={"factor": 3})  # fine
    with pytest.raises(ValueError, match="ceil"):
        dataio.SamplePair(low=low, high=high, meta={"factor": 2})


def test_infer_factor():
    assert dataio.infer_factor(29, 86) == 3
    assert dataio.infer_factor(43, 86) == 2
    with pytest.raises(ValueError):
        dataio.infer_factor(30, 86)
    with pytest.raises(ValueError):
        dataio.infer_factor(90, 86)


def test_augment_rotations_group_properties():
    rng = np.random.default_rng(2)
    cm = dataio.ChannelMap(values=rng.uniform(size=(9, 9)), kind="phase")
    rots = dataio.augment_rotations(cm)
    assert len(rots) == 4
    np.testing.assert_array_equal(rots[0].values, cm.values)
    # rot180 is rot90 twice
    np.testing.assert_array_equal(rots[2].values, np.rot90(np.rot90(cm.values)))
    # four quarter turns come home
    np.testing.assert_array_equal(np.rot90(rots[3].values), cm.values)


def test_augment_rotations_requires_square():
    cm = dataio.ChannelMap(values=np.zeros((4, 6)), kind="phase")
    with pytest.raises(ValueError, match="square"):
        dataio.augment_rotations(cm)


# ---------------------------------------------------------------------------
# noise injection


def scene_map(n=86, seed=9):
    scene = fs.random_scene(seed, "planar_array")
    grid = fs.default_grid(scene.freq_hz, n=n)
    return fs.synthesize_nearfield(scene, grid)


def test_noise_vanishes_at_300db():
    fm = scene_map(n=32)
    noisy = dataio.add_noise(fm, 300.0, seed=4)
    scale = np.abs(fm.ex).max()
    np.testing.assert_allclose(noisy.ex, fm.ex, atol=1e-9 * scale)


def test_noise_realized_snr_near_target():
    fm = scene_map(n=86)
    noisy = dataio.add_noise(fm, 20.0, seed=4)
    p_sig = np.mean(np.abs(fm.ex) ** 2 + np.abs(fm.ey) ** 2)
    p_noise = np.mean(np.abs(noisy.ex - fm.ex) ** 2
                      + np.abs(noisy.ey - fm.ey) ** 2)
    realized = 10 * math.log10(p_sig / p_noise)
    assert 19.5 <= realized <= 20.5


def test_noise_deterministic_per_seed():
    fm = scene_map(n=24)
    a = dataio.add_noise(fm, 15.0, seed=7)
    b = dataio.add_noise(fm, 15.0, seed=7)
    c = dataio.add_noise(fm, 15.0, seed=8)
    np.testing.assert_array_equal(a.ex, b.ex)
    assert np.any(a.ex != c.ex)


def test_noise_rejects_nonfinite_snr():
    with pytest.raises(ValueError):
        dataio.add_noise(scene_map(n=16), float("inf"), seed=0)


# ---------------------------------------------------------------------------
# bundle format


def test_bundle_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    arrays = {
        "b.map": rng.uniform(size=(7, 5)).astype("<f4"),
        "a.map": rng.uniform(size=(3, 3)).astype("<f4"),
        "scalar": np.float32(0.25),  # 0-dim must survive too
    }
    out = tmp_path / "bundle"
    dataio.write_bundle(out, "dataset", arrays, meta={"note": 1})
    manifest, back = dataio.read_bundle(out, expect_kind="dataset")
    assert manifest["meta"] == {"note": 1}
    for name, a in arrays.items():
        assert back[name].shape == np.shape(a)
        np.testing.assert_array_equal(back[name], np.asarray(a, dtype="<f4"))
    d1 = dataio.bundle_digest(out)
    dataio.write_bundle(out, "dataset", arrays, meta={"note": 1})
    assert dataio.bundle_digest(out) == d1


def test_bundle_corrupt_manifest(tmp_path):
    out = tmp_path / "bundle"
    dataio.write_bundle(out, "dataset", {"x": np.zeros((2, 2), "<f4")}, meta={})
    (out / "manifest.json").write_text("{not json")
    with pytest.raises(dataio.BundleError, match="corrupt"):
        dataio.read_bundle(out)


def test_bundle_version_and_kind_checks(tmp_path):
    out = tmp_path / "bundle"
    dataio.write_bundle(out, "dataset", {"x": np.zeros((2, 2), "<f4")}, meta={})
    m = json.loads((out / "manifest.json").read_text())
    m["version"] = 99
    (out / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(dataio.BundleError, match="version"):
        dataio.read_bundle(out)
    m["version"] = dataio.BUNDLE_VERSION
    (out / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(dataio.BundleError, match="kind"):
        dataio.read_bundle(out, expect_kind="netparams")


def test_bundle_offset_bounds_checked(tmp_path):
    out = tmp_path / "bundle"
    dataio.write_bundle(out, "dataset", {"x": np.zeros((4, 4), "<f4")}, meta={})
    m = json.loads((out / "manifest.json").read_text())
    m["arrays"]["x"]["offset"] = 60  # 60 + 64 bytes > 64-byte blob
    (out / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(dataio.BundleError, match="blob"):
        dataio.read_bundle(out)


def test_bundle_missing_path(tmp_path):
    with pytest.raises(dataio.BundleError, match="cannot read"):
        dataio.read_bundle(tmp_path / "nope")


def test_fieldmap_bundle_round_trip(tmp_path):
    fm = scene_map(n=20)
    dataio.save_fieldmap(fm, tmp_path / "fm")
    back = dataio.load_fieldmap(tmp_path / "fm")
    assert back.grid == fm.grid
    # storage is f32, so expect single precision agreement
    np.testing.assert_allclose(back.ex, fm.ex, rtol=2e-7, atol=2e-7 * np.abs(fm.ex).max())


# ---------------------------------------------------------------------------
# dataset build


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds") / "bundle"
    cfg = dataio.DatasetConfig(n_scenes=10, seed=77,
                               profiles=("linear_array", "planar_array"))
    dataio.build_dataset(cfg, out)
    return cfg, out, dataio.load_dataset(out)


def test_dataset_counts(small_dataset):
    cfg, _, ds = small_dataset
    # 10 scenes x 2 components x 2 kinds x 4 rotations
    assert len(ds.entry_ids) == 160
    assert len(ds.scene_ids("train")) == 8
    assert len(ds.scene_ids("test")) == 2


def test_dataset_split_disjoint_no_leakage(small_dataset):
    _, _, ds = small_dataset
    train = set(ds.scene_ids("train"))
    test = set(ds.scene_ids("test"))
    assert not train & test
    for pair in ds.pairs(split="train"):
        assert pair.meta["scene_id"] in train
    for pair in ds.pairs(split="test"):
        assert pair.meta["scene_id"] in test


def test_dataset_pair_contents(small_dataset):
    cfg, _, ds = small_dataset
    pairs = ds.pairs(kind="magnitude", split="train", rot=0)
    assert pairs, "expected rot-0 magnitude pairs"
    p = pairs[0]
    assert p.high.shape == (86, 86)
    assert p.low.shape == (29, 29)
    np.testing.assert_array_equal(p.low.values, p.high.values[::3, ::3])
    assert p.meta["factor"] == 3
    assert p.high.denorm["scale"] > 0


def test_dataset_rotations_consistent(small_dataset):
    _, _, ds = small_dataset
    sid = ds.scene_ids("train")[0]
    base = ds.pair(f"{sid}.ex.phase.r0").high.values
    r2 = ds.pair(f"{sid}.ex.phase.r2").high.values
    np.testing.assert_array_equal(r2, np.rot90(base, 2))


def test_dataset_rebuild_is_byte_identical(small_dataset, tmp_path):
    cfg, out, _ = small_dataset
    again = tmp_path / "again"
    dataio.build_dataset(cfg, again)
    assert dataio.bundle_digest(again) == dataio.bundle_digest(out)


def test_dataset_threads_do_not_change_bytes(small_dataset, tmp_path):
    cfg, out, _ = small_dataset
    threaded = tmp_path / "threaded"
    dataio.build_dataset(cfg, threaded, threads=4)
    assert dataio.bundle_digest(threaded) == dataio.bundle_digest(out)


def test_dataset_seed_changes_bytes(small_dataset, tmp_path):
    cfg, out, _ = small_dataset
    other = tmp_path / "other"
    cfg2 = dataio.DatasetConfig(n_scenes=10, seed=78,
                                profiles=("linear_array", "planar_array"))
    dataio.build_dataset(cfg2, other)
    assert dataio.bundle_digest(other) != dataio.bundle_digest(out)


def test_scene_for_index_cycles_profiles():
    cfg = dataio.DatasetConfig(n_scenes=4, seed=5,
                               profiles=("single", "random_cluster"))
    s0 = dataio.scene_for_index(cfg, 0)
    s1 = dataio.scene_for_index(cfg, 1)
    assert len(s0.sources) == 1
    assert len(s1.sources) >= 4


def test_dataset_config_validation():
    with pytest.raises(ValueError):
        dataio.DatasetConfig(n_scenes=0, seed=1)
    with pytest.raises(ValueError):
        dataio.DatasetConfig(n_scenes=1, seed=1, factor=5)
    with pytest.raises(ValueError):
        dataio.DatasetConfig(n_scenes=1, seed=1, split_ratio=1.0)
    with pytest.raises(ValueError):
        dataio.DatasetConfig(n_scenes=1, seed=1, profiles=("array_of_horns",))
