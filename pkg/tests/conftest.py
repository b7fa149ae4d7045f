"""Shared fixtures for the expensive acceptance artifacts.

The acceptance suite needs an 80-scene dataset and four trained toy
restorers (~25 minutes of CPU work all told). Set NFSR_TEST_CACHE to a
directory to keep those artifacts between runs; each cached entry stores
the wall time of the run that built it, so timing criteria report real
measured costs either way. The cache self-invalidates when the scene
population or normalization pipeline changes (a one-scene probe bundle is
rebuilt fresh every session and its digest compared).
"""

import json
import shutil
import time
from dataclasses import replace
from pathlib import Path

import pytest

from nfsr import dataio, neuralnet

ACC_SEED = 20260815
ACC_SCENES = 80
ACC_PROFILES = ("planar_array",)

# one visible line per acceptance criterion, shown after the test summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_report():
    def report(num, name, ok, detail):
        line = (f"ACCEPTANCE {num:2d} ({name}): "
                f"{'PASS' if ok else 'FAIL'} - {detail}")
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, line
    return report


def _dataset_config(factor):
    return dataio.DatasetConfig(n_scenes=ACC_SCENES, seed=ACC_SEED,
                                factor=factor, profiles=ACC_PROFILES)


@pytest.fixture(scope="session")
def artifact_root(tmp_path_factory):
    """Cache dir (validated against the current population) or a tmp dir."""
    import os

    cache = os.environ.get("NFSR_TEST_CACHE")
    root = Path(cache) if cache else tmp_path_factory.mktemp("acc_artifacts")
    root.mkdir(parents=True, exist_ok=True)
    # fingerprint the generator + normalization path with a one-scene bundle
    probe = tmp_path_factory.mktemp("popprobe")
    dataio.build_dataset(
        dataio.DatasetConfig(n_scenes=1, seed=ACC_SEED, factor=3,
                             profiles=ACC_PROFILES), probe)
    token = dataio.bundle_digest(probe)
    token_file = root / "population.txt"
    if token_file.exists() and token_file.read_text() != token:
        for entry in root.iterdir():
            if entry.is_dir():
                shutil.rmtree(entry)
    token_file.write_text(token)
    return root


def _timed(path, build):
    """Run ``build(path)`` unless ``path`` already holds a timed artifact;
    returns the wall seconds the original build took."""
    stamp = path / "timing.json"
    if stamp.exists():
        return json.loads(stamp.read_text())["seconds"]
    if path.exists():
        shutil.rmtree(path)
    t0 = time.monotonic()
    build(path)
    seconds = time.monotonic() - t0
    stamp.write_text(json.dumps({"seconds": seconds}))
    return seconds


def _dataset_fixture(root, factor):
    path = root / f"ds_f{factor}"
    seconds = _timed(path, lambda p: dataio.build_dataset(
        _dataset_config(factor), p))
    return dataio.load_dataset(path), seconds


@pytest.fixture(scope="session")
def acc_dataset3(artifact_root):
    """(dataset, build_seconds): the factor-3 acceptance bundle."""
    return _dataset_fixture(artifact_root, 3)


@pytest.fixture(scope="session")
def acc_dataset2(artifact_root):
    """(dataset, build_seconds): factor-2 twin (same scenes, same split)."""
    return _dataset_fixture(artifact_root, 2)


def _train_fixture(root, dataset, kind, factor, train_config):
    path = root / f"net_{kind}_f{factor}"

    def build(p):
        result = neuralnet.train(dataset, kind,
                                 neuralnet.default_unet_config("toy"),
                                 train_config, factor=factor)
        neuralnet.save_params(result, p)

    seconds = _timed(path, build)
    model, meta = neuralnet.load_params(path)
    return model, meta, seconds


@pytest.fixture(scope="session")
def acc_models3(acc_dataset3, artifact_root):
    """Toy-preset restorers for factor 3: kind -> (model, meta, seconds)."""
    dataset, _ = acc_dataset3
    out = {}
    for kind in ("magnitude", "phase"):
        tc = neuralnet.default_train_config(kind, "toy", seed=0)
        out[kind] = _train_fixture(artifact_root, dataset, kind, 3, tc)
    return out


@pytest.fixture(scope="session")
def acc_models2(acc_dataset2, artifact_root):
    """Shortened toy restorers for the factor-2 arm of the factor study."""
    dataset, _ = acc_dataset2
    out = {}
    for kind in ("magnitude", "phase"):
        tc = replace(neuralnet.default_train_config(kind, "toy", seed=0),
                     total_epochs=10, decay_every=7)
        out[kind] = _train_fixture(artifact_root, dataset, kind, 2, tc)
    return out
