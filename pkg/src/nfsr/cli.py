"""Command-line workflow around the library.

Subcommands mirror the processing chain: ``synth`` builds a dataset bundle,
``train`` fits a restorer, ``restore`` applies a method to dataset entries,
``nf2ff`` transforms a stored field map into pattern cuts, ``eval`` runs the
study suite, and ``plot`` overlays cut CSVs into an SVG.

Configuration is layered: built-in defaults < ``--config file.json`` <
explicit flags. Config files may only contain keys the subcommand knows;
anything else is rejected before any work starts.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, message, code=EXIT_CONFIG):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class Flag:
    name: str
    type: object = str
    default: object = None
    help: str = ""
    required: bool = False
    choices: tuple | None = None
    is_flag: bool = False


def _parse_bool(v):
    if isinstance(v, bool):
        return v
    raise ValueError(f"expected true/false, got {v!r}")


def _csv_list(conv):
    def parse(v):
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        return [conv(x.strip()) for x in str(v).split(",") if x.strip()]
    return parse


SCHEMAS = {
    "synth": [
        Flag("scenes", int, None, "number of scenes to synthesize", required=True),
        Flag("seed", int, None, "master seed (required: build is stochastic)",
             required=True),
        Flag("out", str, None, "output bundle directory", required=True),
        Flag("factor", int, 3, "decimation factor", choices=(2, 3)),
        Flag("grid_n", int, 86, "scan grid points per axis"),
        Flag("z_d_lambda", float, 4.0, "scan-plane height in wavelengths"),
        Flag("spacing_lambda", float, 0.5, "grid spacing in wavelengths"),
        Flag("profiles", _csv_list(str),
             ["single", "linear_array", "planar_array", "random_cluster"],
             "comma list of scene profiles to cycle through"),
        Flag("split_ratio", float, 0.8, "train fraction of scenes"),
        Flag("threads", int, 1, "worker threads for scene synthesis"),
        Flag("keep_fields", _parse_bool, False,
             "also store raw complex field maps per scene", is_flag=True),
    ],
    "train": [
        Flag("data", str, None, "dataset bundle directory", required=True),
        Flag("channel", str, None, "which restorer to train", required=True,
             choices=("mag", "phase")),
        Flag("out", str, None, "output params bundle directory", required=True),
        Flag("seed", int, None, "training seed (required: init/shuffle)",
             required=True),
        Flag("preset", str, "full", "architecture/schedule preset",
             choices=("full", "toy")),
        Flag("factor", int, 0, "decimation factor (0 = dataset's)"),
        Flag("epochs", int, 0, "override total epochs (0 = preset)"),
        Flag("batch_size", int, 0, "override batch size (0 = preset)"),
        Flag("lr0", float, 0.0, "override initial learning rate (0 = preset)"),
        Flag("decay_every", int, 0, "override lr staircase period (0 = preset)"),
        Flag("base_channels", int, 0, "override first-stage width (0 = preset)"),
        Flag("threads", int, 1, "torch intra-op threads"),
    ],
    "restore": [
        Flag("data", str, None, "dataset bundle directory", required=True),
        Flag("method", str, None, "restoration method", required=True,
             choices=("nfsnet", "bicubic", "kriging", "cs")),
        Flag("out", str, None, "output directory", required=True),
        Flag("split", str, "test", "dataset split to restore",
             choices=("train", "test")),
        Flag("params_mag", str, "", "magnitude params bundle (nfsnet)"),
        Flag("params_phase", str, "", "phase params bundle (nfsnet)"),
        Flag("ids", _csv_list(str), [], "restrict to these entry ids"),
        Flag("limit", int, 0, "restore at most N entries (0 = all)"),
        Flag("threads", int, 1, "torch intra-op threads"),
    ],
    "nf2ff": [
        Flag("in_", str, None, "field map bundle directory", required=True),
        Flag("out", str, None, "output cut CSV (or directory for --cut both)",
             required=True),
        Flag("cut", str, "E", "principal plane", choices=("E", "H", "both")),
        Flag("pol", str, "auto", "co-polarized axis", choices=("x", "y", "auto")),
        Flag("pad_factor", int, 4, "spectrum zero-padding factor"),
        Flag("theta_step", float, 1.0, "cut angular step in degrees"),
    ],
    "eval": [
        Flag("data", str, None, "dataset bundle directory", required=True),
        Flag("study", str, None, "which study to run", required=True,
             choices=("compare", "factor", "attribution", "snr")),
        Flag("models", str, None, "models directory "
             "(expects <kind>_f<factor> params bundles)", required=True),
        Flag("out", str, None, "report output directory", required=True),
        Flag("factor", int, 0, "decimation factor (0 = dataset's)"),
        Flag("split", str, "test", "dataset split to evaluate",
             choices=("train", "test")),
        Flag("methods", _csv_list(str),
             ["nfsnet", "bicubic", "kriging", "cs", "identity"],
             "methods for the compare study"),
        Flag("snr", _csv_list(float), [10.0, 20.0, 30.0],
             "SNR levels in dB for the snr study"),
        Flag("seed", int, None, "noise seed (required for --study snr)"),
        Flag("plots", _parse_bool, False, "emit cut overlay SVGs (compare)",
             is_flag=True),
        Flag("threads", int, 1, "torch intra-op threads"),
    ],
    "plot": [
        Flag("overlay", _csv_list(str), None, "comma list of cut CSVs",
             required=True),
        Flag("out", str, None, "output SVG path", required=True),
        Flag("labels", _csv_list(str), [], "labels (default: file stems)"),
        Flag("floor_db", float, -60.0, "display floor in dB"),
        Flag("title", str, "", "plot title"),
    ],
}

_SUMMARIES = {
    "synth": "synthesize scenes into a train/test dataset bundle",
    "train": "train the magnitude or phase restorer on a dataset",
    "restore": "apply a restoration method to dataset entries",
    "nf2ff": "transform a stored field map into far-field pattern cuts",
    "eval": "run an evaluation study and write report files",
    "plot": "overlay pattern-cut CSVs into one SVG figure",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nfsr",
        description="near-field map restoration and far-field transform workflow")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for cmd, schema in SCHEMAS.items():
        p = sub.add_parser(cmd, help=_SUMMARIES[cmd], description=_SUMMARIES[cmd])
        p.add_argument("--config", type=str, default=None,
                       help="JSON config file (defaults < file < flags)")
        for f in schema:
            flag = "--" + f.name.rstrip("_").replace("_", "-")
            kw = {"dest": f.name, "default": None}
            if f.is_flag:
                kw["action"] = "store_true"
            else:
                kw["type"] = f.type
                if f.choices and f.type in (str, int):
                    kw["choices"] = list(f.choices)
            default_note = "" if f.required else f" (default: {_show(f.default)})"
            req_note = " [required]" if f.required else ""
            kw["help"] = f.help + default_note + req_note
            p.add_argument(flag, **kw)
    return parser


def _show(v):
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    return v


def load_config_file(path, schema) -> dict:
    known = {f.name: f for f in schema}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise CliError(f"cannot read config file {path}: {e}", EXIT_IO) from e
    except json.JSONDecodeError as e:
        raise CliError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    out = {}
    for key, value in raw.items():
        if key not in known:
            raise CliError(f"config file {path}: unknown key {key!r}")
        f = known[key]
        try:
            out[key] = _parse_bool(value) if f.is_flag else f.type(value)
        except (TypeError, ValueError) as e:
            raise CliError(f"config file {path}: bad value for {key!r}: {e}") from e
        if f.choices and out[key] not in f.choices:
            raise CliError(f"config file {path}: {key!r} must be one of "
                           f"{f.choices}")
    return out


def merge_config(args: argparse.Namespace, schema) -> dict:
    file_cfg = load_config_file(args.config, schema) if args.config else {}
    cfg = {}
    for f in schema:
        flag_val = getattr(args, f.name)
        if flag_val is not None:
            if f.choices and flag_val not in f.choices:
                raise CliError(f"--{f.name}: must be one of {f.choices}")
            cfg[f.name] = flag_val
        elif f.name in file_cfg:
            cfg[f.name] = file_cfg[f.name]
        else:
            cfg[f.name] = f.default
        if f.required and cfg[f.name] is None:
            raise CliError(f"missing required option --"
                           f"{f.name.rstrip('_').replace('_', '-')}")
    return cfg


def _set_threads(n):
    if n and n > 0:
        import torch

        torch.set_num_threads(int(n))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg) -> int:
    from . import dataio

    ds_cfg = dataio.DatasetConfig(
        n_scenes=cfg["scenes"], seed=cfg["seed"], factor=cfg["factor"],
        grid_n=cfg["grid_n"], z_d_lambda=cfg["z_d_lambda"],
        spacing_lambda=cfg["spacing_lambda"], profiles=tuple(cfg["profiles"]),
        split_ratio=cfg["split_ratio"])
    manifest = dataio.build_dataset(ds_cfg, cfg["out"], threads=cfg["threads"])
    meta = manifest["meta"]
    if cfg["keep_fields"]:
        from .fieldsynth import synthesize_nearfield

        for sid in meta["split"]["train"] + meta["split"]["test"]:
            idx = int(sid[1:])
            scene = dataio.scene_for_index(ds_cfg, idx)
            grid = dataio.grid_for_scene(ds_cfg, scene)
            fmap = synthesize_nearfield(scene, grid)
            dataio.save_fieldmap(fmap, Path(cfg["out"]) / "fields" / sid)
    n_entries = len(meta["entries"])
    print(f"dataset: {cfg['scenes']} scenes -> {n_entries} sample pairs "
          f"(factor {cfg['factor']}, grid {cfg['grid_n']})")
    print(f"split: {len(meta['split']['train'])} train / "
          f"{len(meta['split']['test'])} test scenes")
    print(f"digest: {dataio.bundle_digest(cfg['out'])}")
    print(f"wrote {cfg['out']}")
    return EXIT_OK


def cmd_train(cfg) -> int:
    from . import dataio, neuralnet

    _set_threads(cfg["threads"])
    dataset = dataio.load_dataset(cfg["data"])
    kind = {"mag": "magnitude", "phase": "phase"}[cfg["channel"]]
    unet = neuralnet.default_unet_config(cfg["preset"])
    tc = neuralnet.default_train_config(kind, cfg["preset"], seed=cfg["seed"])
    if cfg["base_channels"]:
        unet = neuralnet.UNetConfig(base_channels=cfg["base_channels"])
    overrides = {}
    if cfg["epochs"]:
        overrides["total_epochs"] = cfg["epochs"]
        overrides["decay_every"] = min(tc.decay_every, cfg["epochs"])
    if cfg["batch_size"]:
        overrides["batch_size"] = cfg["batch_size"]
    if cfg["lr0"]:
        overrides["lr0"] = cfg["lr0"]
    if cfg["decay_every"]:
        overrides["decay_every"] = cfg["decay_every"]
    if overrides:
        from dataclasses import replace

        tc = replace(tc, **overrides)
    factor = cfg["factor"] or None

    def progress(stats):
        print(f"epoch {stats.epoch:3d}  train {stats.train_loss:.6f}  "
              f"val {stats.val_loss:.6f}", flush=True)

    result = neuralnet.train(dataset, kind, unet, tc, factor=factor,
                             progress=progress)
    neuralnet.save_params(result, cfg["out"])
    neuralnet.write_history_csv(result, Path(cfg["out"]) / "history.csv")
    print(f"val loss: init {result.val_init:.6f} -> "
          f"final {result.history[-1].val_loss:.6f}")
    print(f"wrote {cfg['out']}")
    return EXIT_OK


def cmd_restore(cfg) -> int:
    import numpy as np

    from . import dataio, evaluation, losses, neuralnet

    _set_threads(cfg["threads"])
    dataset = dataio.load_dataset(cfg["data"])
    target = int(dataset.config["grid_n"])
    models = {}
    if cfg["method"] == "nfsnet":
        for key, kind in (("params_mag", "magnitude"), ("params_phase", "phase")):
            if cfg[key]:
                models[kind], _ = neuralnet.load_params(cfg[key])
    pairs = dataset.pairs(split=cfg["split"])
    if cfg["ids"]:
        wanted = set(cfg["ids"])
        pairs = [p for p in pairs if p.meta["id"] in wanted]
        missing = wanted - {p.meta["id"] for p in pairs}
        if missing:
            raise CliError(f"ids not in dataset split: {sorted(missing)}")
    if cfg["limit"]:
        pairs = pairs[:cfg["limit"]]
    if not pairs:
        raise CliError("nothing to restore with the given selection")
    if cfg["method"] == "nfsnet":
        lacking = sorted({p.meta["kind"] for p in pairs} - set(models))
        if lacking:
            raise CliError(f"method nfsnet needs trained params for {lacking}; "
                           f"pass --params-mag / --params-phase")
    arrays = {}
    rows = []
    import torch

    for p in pairs:
        restored = evaluation.restore_map(cfg["method"], p.low, target,
                                          p.meta["factor"], models,
                                          high=p.high)
        arrays[p.meta["id"] + ".restored"] = restored.values
        with torch.no_grad():
            err = float(losses.mae(p.high.values, restored.values)
                        if p.meta["kind"] == "magnitude" else
                        losses.periodic_phase_loss(p.high.values, restored.values))
            ssim = float(losses.ms_ssim(p.high.values, restored.values))
        rows.append({"id": p.meta["id"], "kind": p.meta["kind"],
                     "err": err, "ms_ssim": ssim})
    out = Path(cfg["out"])
    dataio.write_bundle(out, "restored",
                        arrays, {"method": cfg["method"],
                                 "split": cfg["split"],
                                 "source": str(cfg["data"])})
    evaluation.write_rows_csv(rows, out / "metrics.csv",
                              ["id", "kind", "err", "ms_ssim"],
                              "err = MAE for magnitude, periodic distance for phase")
    for kind in ("magnitude", "phase"):
        vals = [r["err"] for r in rows if r["kind"] == kind]
        if vals:
            print(f"{cfg['method']} {kind}: mean err {np.mean(vals):.6f} "
                  f"over {len(vals)} maps")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_nf2ff(cfg) -> int:
    import numpy as np

    from . import dataio, nf2ff

    fmap = dataio.load_fieldmap(cfg["in_"])
    pol = cfg["pol"]
    if pol == "auto":
        ex = float(np.sum(np.abs(fmap.ex) ** 2))
        ey = float(np.sum(np.abs(fmap.ey) ** 2))
        pol = "x" if ex >= ey else "y"
    spec = nf2ff.plane_wave_spectrum(fmap, cfg["pad_factor"])
    th, ph = nf2ff.default_hemisphere_axes(cfg["theta_step"])
    pattern = nf2ff.to_farfield(spec, th, ph)
    planes = ("E", "H") if cfg["cut"] == "both" else (cfg["cut"],)
    out = Path(cfg["out"])
    if len(planes) > 1:
        out.mkdir(parents=True, exist_ok=True)
    for plane in planes:
        cut = nf2ff.extract_cut(pattern, plane, pol)
        path = out / f"{plane}cut.csv" if len(planes) > 1 else out
        nf2ff.write_cut_csv(cut, path)
        print(f"wrote {path} ({plane}-plane, {pol}-pol, "
              f"{len(cut.angle_deg)} angles)")
    return EXIT_OK


def _load_models_dir(models_dir, factor):
    from . import neuralnet

    out = {}
    for kind in ("magnitude", "phase"):
        path = Path(models_dir) / f"{kind}_f{factor}"
        model, _ = neuralnet.load_params(path)
        out[kind] = model
    return out


def cmd_eval(cfg) -> int:
    from . import dataio, evaluation

    _set_threads(cfg["threads"])
    dataset = dataio.load_dataset(cfg["data"])
    factor = cfg["factor"] or int(dataset.config["factor"])
    study = cfg["study"]
    out = Path(cfg["out"])
    if study == "snr" and cfg["seed"] is None:
        raise CliError("--study snr injects noise; --seed is required")

    if study == "compare":
        models = _load_models_dir(cfg["models"], factor)
        rows, artifacts = evaluation.compare_study(
            dataset, models, factor, methods=tuple(cfg["methods"]),
            split=cfg["split"])
        files = evaluation.write_study_report(
            "compare", rows, out, artifacts if cfg["plots"] else None)
        summary = evaluation.summarize(rows, ["method"])
        for (method,), err in summary.items():
            print(f"{method:8s} mean pattern error {err:.3f} dB")
    elif study == "factor":
        models_by_factor = {f: _load_models_dir(cfg["models"], f)
                            for f in (2, 3)}
        rows = evaluation.factor_study(dataset, models_by_factor,
                                       split=cfg["split"])
        files = evaluation.write_study_report("factor", rows, out)
        for (f,), err in evaluation.summarize(rows, ["factor"]).items():
            print(f"factor {f}: mean pattern error {err:.3f} dB")
    elif study == "attribution":
        models = _load_models_dir(cfg["models"], factor)
        rows = evaluation.attribution_study(dataset, models, factor,
                                            split=cfg["split"])
        files = evaluation.write_study_report("attribution", rows, out)
        for (combo,), err in evaluation.summarize(rows, ["combo"]).items():
            print(f"{combo}: mean pattern error {err:.3f} dB")
    else:
        models = _load_models_dir(cfg["models"], factor)
        rows = evaluation.snr_study(dataset, models, cfg["snr"], factor,
                                    seed=cfg["seed"], split=cfg["split"])
        files = evaluation.write_study_report("snr", rows, out)
        for (snr,), err in evaluation.summarize(rows, ["snr_db"]).items():
            print(f"snr {snr:5.1f} dB: mean pattern error {err:.3f} dB")
    for f in files:
        print(f"wrote {f}")
    return EXIT_OK


def cmd_plot(cfg) -> int:
    from . import evaluation, nf2ff

    paths = [Path(p) for p in cfg["overlay"]]
    labels = cfg["labels"] or [p.stem for p in paths]
    if len(labels) != len(paths):
        raise CliError("--labels must match --overlay in length")
    cuts = [(lab, nf2ff.read_cut_csv(p)) for lab, p in zip(labels, paths)]
    evaluation.plot_cut_overlay(cuts, cfg["out"], title=cfg["title"],
                                floor_db=cfg["floor_db"])
    print(f"wrote {cfg['out']}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "restore": cmd_restore,
    "nf2ff": cmd_nf2ff,
    "eval": cmd_eval,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    schema = SCHEMAS[args.command]
    try:
        cfg = merge_config(args, schema)
        return COMMANDS[args.command](cfg)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ArithmeticError, RuntimeError) as e:
        # numeric failures: training divergence, singular systems, eval stages
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
