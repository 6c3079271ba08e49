"""Command-line entry point: ``lfiqt <command> [options]``.

Every command accepts ``--config file.json``; keys use the long option names
with dashes replaced by underscores. Explicit flags override config values,
which override built-in defaults. Unknown config keys are rejected.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .errors import IqtError
from .nifti import load_volume, save_volume, strip_nifti_suffix
from .volume import MembershipMaps, Volume

logger = logging.getLogger("lfiqt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "LFIQT_NUM_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage().strip()}\n{self.prog}: error: {message}")


# command -> {key: default}; None means required unless noted
DEFAULTS = {
    "phantom": {
        "out": None, "gm": "", "wm": "", "csf": "", "dims": [64, 64, 64], "spacing": [1.0, 1.0, 1.0],
        "softness": 2.0, "tissue_means": [100.0, 150.0, 30.0], "seed": 0,
    },
    "segment": {
        "in": None, "out_prefix": None, "seed": 0, "max_iter": 200, "tol": 1e-6, "mask": "",
    },
    "estimate-snr": {
        "in": None, "gm": None, "wm": None, "csf": None, "background": [], "aggregate": "mean", "out": "",
    },
    "simulate": {
        "in": None, "gm": None, "wm": None, "csf": None, "snr_gm": None, "snr_wm": None,
        "st": None, "gap": 0.0, "axis": 2, "offset": None, "seed": 0, "eps": 1e-3,
        "normalization": "wm-anchored", "out": None, "maps_out_prefix": "",
    },
    "upsample": {"in": None, "k": None, "axis": None, "phase": 0.0, "out": None},
    "train": {
        "train": None, "val": None, "k": None, "out": None, "history": "", "seed": 0,
        "epochs": 60, "batch_size": 8, "learning_rate": 1e-3, "levels": 3, "base_channels": 16,
        "patch_xy": 32, "patch_z_lf": 4, "stride": [16, 16, 2], "min_brain_fraction": 0.1,
        "residual": False,
    },
    "enhance": {"model": None, "in": None, "out": None, "patch_xy": 32, "patch_z_lf": 4},
    "evaluate": {
        "enhanced": None, "baseline": None, "ref": None, "mask": "", "out": None,
        "window": 7, "k1": 0.01, "k2": 0.03, "data_range": None,
    },
    "repro-desk": {"out": None, "seed": 0, "preset": "desk", "epochs": None},
}


def _add(p, name, **kw):
    p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, **kw)


def build_parser():
    parser = _Parser(prog="lfiqt", description="Low-field MRI image quality transfer toolkit")
    parser.add_argument("--version", action="version", version=f"lfiqt {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", default=None, help="JSON file with option values")
        return p

    p = command("phantom", "generate a nested-ellipsoid phantom and its memberships")
    _add(p, "out", help="phantom volume path")
    for t in ("gm", "wm", "csf"):
        _add(p, t, help=f"{t} membership output (default: <out>_{t}.nii.gz)")
    _add(p, "dims", type=int, nargs=3)
    _add(p, "spacing", type=float, nargs=3)
    _add(p, "softness", type=float)
    _add(p, "tissue_means", type=float, nargs=3, help="GM WM CSF signal")
    _add(p, "seed", type=int)

    p = command("segment", "3-class EM segmentation into GM/WM/CSF maps")
    _add(p, "in")
    _add(p, "out_prefix", help="writes <prefix>_{gm,wm,csf}.nii.gz and <prefix>_gmm.json")
    _add(p, "mask", help="optional brain mask volume")
    _add(p, "seed", type=int)
    _add(p, "max_iter", type=int)
    _add(p, "tol", type=float)

    p = command("estimate-snr", "measure GM/WM SNR on one or more LF images")
    for t in ("in", "gm", "wm", "csf"):
        _add(p, t, nargs="+")
    _add(p, "background", nargs="+", help="background masks (default: zero total membership)")
    _add(p, "aggregate", choices=["mean", "median"])
    _add(p, "out", help="JSON output path")

    p = command("simulate", "simulate a low-field image from a high-field one")
    for t in ("in", "gm", "wm", "csf"):
        _add(p, t)
    for t in ("snr_gm", "snr_wm", "st", "gap", "offset", "eps"):
        _add(p, t, type=float)
    _add(p, "axis", type=int)
    _add(p, "seed", type=int)
    _add(p, "normalization", choices=["wm-anchored", "mean-preserving"])
    _add(p, "out")
    _add(p, "maps_out_prefix", help="also write LF-grid membership maps")

    p = command("upsample", "cubic B-spline baseline along the slice axis")
    _add(p, "in")
    _add(p, "k", type=int)
    _add(p, "axis", type=int)
    _add(p, "phase", type=float)
    _add(p, "out")

    p = command("train", "train the super-resolution network")
    _add(p, "train", nargs="+", help="subject JSON files or a list in --config")
    _add(p, "val", nargs="+")
    _add(p, "k", type=int)
    _add(p, "out", help="checkpoint path")
    _add(p, "history", help="CSV path (default: <out>.history.csv)")
    for t in ("seed", "epochs", "batch_size", "levels", "base_channels", "patch_xy", "patch_z_lf"):
        _add(p, t, type=int)
    _add(p, "learning_rate", type=float)
    _add(p, "min_brain_fraction", type=float)
    _add(p, "stride", type=int, nargs=3)
    p.add_argument("--residual", dest="residual", action="store_const", const=True, default=None)

    p = command("enhance", "apply a trained model to an LF volume")
    for t in ("model", "in", "out"):
        _add(p, t)
    _add(p, "patch_xy", type=int)
    _add(p, "patch_z_lf", type=int)

    p = command("evaluate", "SSIM/PSNR/MSE of enhanced and baseline vs reference")
    for t in ("enhanced", "baseline", "ref", "mask", "out"):
        _add(p, t)
    _add(p, "window", type=int)
    for t in ("k1", "k2", "data_range"):
        _add(p, t, type=float)

    p = command("repro-desk", "full desk-scale acceptance pipeline")
    _add(p, "out", help="output directory")
    _add(p, "seed", type=int)
    _add(p, "preset", choices=["desk", "tiny"])
    _add(p, "epochs", type=int)
    return parser


def resolve_options(command, args):
    """Merge defaults, config file and explicit flags; validate keys."""
    defaults = DEFAULTS[command]
    opts = dict(defaults)
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        unknown = sorted(set(cfg) - set(defaults))
        if unknown:
            raise UsageError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
        opts.update(cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = val
    optional_none = {"offset", "data_range", "epochs", "axis"}
    missing = [k for k, v in opts.items() if v is None and k not in optional_none]
    if missing:
        raise UsageError(f"{command}: missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return opts


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def provenance_path(out):
    return strip_nifti_suffix(out) + ".json"


def write_provenance(out, command, inputs, params, extra=None):
    record = {
        "toolkit": "lfiqt",
        "version": __version__,
        "command": command,
        "output": os.path.basename(out),
        "inputs": {name: {"path": os.path.basename(p), "sha256": sha256(p)} for name, p in inputs.items() if p},
        "parameters": params,
    }
    if extra:
        record.update(extra)
    with open(provenance_path(out), "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _maps(gm, wm, csf, reference):
    from .segment import load_memberships

    return load_memberships(gm, wm, csf, reference)


def cmd_phantom(o):
    from .phantom import make_phantom, scaled_spec

    spec = scaled_spec(o["dims"], o["spacing"], boundary_softness=o["softness"], tissue_means=tuple(o["tissue_means"]))
    hf, maps = make_phantom(spec, o["seed"])
    save_volume(hf, o["out"])
    write_provenance(o["out"], "phantom", {}, o)
    stem = strip_nifti_suffix(o["out"])
    for t in ("gm", "wm", "csf"):
        path = o[t] or f"{stem}_{t}.nii.gz"
        save_volume(getattr(maps, t), path)
        write_provenance(path, "phantom", {}, o)


def cmd_segment(o):
    from .segment import default_brain_mask, fit_gmm, memberships

    v = load_volume(o["in"])
    mask = load_volume(o["mask"]).data > 0 if o["mask"] else default_brain_mask(v)
    model = fit_gmm(v, mask, seed=o["seed"], max_iter=o["max_iter"], tol=o["tol"])
    maps = memberships(model, v, mask)
    prefix = o["out_prefix"]
    for t in ("gm", "wm", "csf"):
        path = f"{prefix}_{t}.nii.gz"
        save_volume(getattr(maps, t), path)
        write_provenance(path, "segment", {"in": o["in"], "mask": o["mask"]}, o)
    with open(f"{prefix}_gmm.json", "w") as fh:
        fh.write(model.to_json() + "\n")


def cmd_estimate_snr(o):
    from .lfsim import aggregate_snr, estimate_snr

    n = len(o["in"])
    if not (len(o["gm"]) == len(o["wm"]) == len(o["csf"]) == n) or (o["background"] and len(o["background"]) != n):
        raise UsageError("estimate-snr: --in, --gm, --wm, --csf (and --background) need the same count")
    results = []
    for i in range(n):
        v = load_volume(o["in"][i])
        maps = _maps(o["gm"][i], o["wm"][i], o["csf"][i], v)
        bg = load_volume(o["background"][i]).data > 0 if o["background"] else maps.total() == 0
        results.append(estimate_snr(v, maps, bg))
    target = aggregate_snr(results, o["aggregate"])
    report = {
        "images": [dict(path=p, **vars(e)) for p, e in zip(o["in"], results)],
        "aggregate": o["aggregate"],
        "snr_gm": target.snr_gm,
        "snr_wm": target.snr_wm,
    }
    text = json.dumps(report, indent=2, default=float)
    if o["out"]:
        with open(o["out"], "w") as fh:
            fh.write(text + "\n")
    print(f"snr_gm={target.snr_gm:.4g} snr_wm={target.snr_wm:.4g} ({o['aggregate']} of {n})")


def cmd_simulate(o):
    from .lfsim import SimParams, SnrTarget, degrade_maps, simulate_lf
    from .resample import SliceGeometry

    hf = load_volume(o["in"])
    maps = _maps(o["gm"], o["wm"], o["csf"], hf)
    g = SliceGeometry(o["st"], o["gap"], axis=o["axis"], offset=o["offset"])
    p = SimParams(SnrTarget(o["snr_gm"], o["snr_wm"]), g, seed=o["seed"],
                  membership_threshold=o["eps"], normalization=o["normalization"])
    lf, prov = simulate_lf(hf, maps, p)
    save_volume(lf, o["out"])
    inputs = {t: o[t] for t in ("in", "gm", "wm", "csf")}
    write_provenance(o["out"], "simulate", inputs, o, {"simulation": prov})
    if o["maps_out_prefix"]:
        lf_maps = degrade_maps(maps, g)
        for t in ("gm", "wm", "csf"):
            path = f"{o['maps_out_prefix']}_{t}.nii.gz"
            save_volume(getattr(lf_maps, t), path)
            write_provenance(path, "simulate", inputs, o)


def cmd_upsample(o):
    from dataclasses import replace

    from .resample import bspline_upsample

    v = load_volume(o["in"])
    axis = v.slice_axis if o["axis"] is None else o["axis"]
    out = bspline_upsample(replace(v, slice_axis=axis), axis, o["k"], o["phase"])
    save_volume(out, o["out"])
    write_provenance(o["out"], "upsample", {"in": o["in"]}, o)


def _load_subjects(entries, k):
    """Each entry: dict (or JSON path) with hf, lf, gm, wm, csf volume paths."""
    from .srnet import crop_to_lf

    subjects = []
    for entry in entries:
        if isinstance(entry, str):
            with open(entry) as fh:
                entry = json.load(fh)
        missing = {"hf", "lf", "gm", "wm", "csf"} - set(entry)
        if missing:
            raise UsageError(f"subject entry missing keys: {sorted(missing)}")
        hf = load_volume(entry["hf"])
        lf = load_volume(entry["lf"])
        maps = _maps(entry["gm"], entry["wm"], entry["csf"], hf)
        n = lf.shape[2]
        subjects.append((crop_to_lf(hf, n, k), lf, maps.map(lambda m: crop_to_lf(m, n, k)), entry))
    return subjects


def cmd_train(o):
    from .srnet import SrModel, SrModelConfig, TrainConfig, extract_patches, history_csv, save_checkpoint, train

    k = o["k"]
    tcfg = TrainConfig(
        epochs=o["epochs"], batch_size=o["batch_size"], learning_rate=o["learning_rate"], seed=o["seed"],
        patch_xy=o["patch_xy"], patch_z_lf=o["patch_z_lf"], stride=tuple(o["stride"]),
        min_brain_fraction=o["min_brain_fraction"],
    )
    mcfg = SrModelConfig(k=k, levels=o["levels"], base_channels=o["base_channels"], residual=bool(o["residual"]))

    def pairs(entries):
        out = []
        for hf, lf, maps, _ in _load_subjects(entries, k):
            out.extend(extract_patches(hf, lf, maps, tcfg.patch_xy, tcfg.patch_z_lf, tcfg.stride,
                                       tcfg.min_brain_fraction, k=k, levels=mcfg.levels))
        return out

    train_pairs, val_pairs = pairs(o["train"]), pairs(o["val"])
    if not train_pairs or not val_pairs:
        raise UsageError("no training or validation patches survived extraction")
    model, history = train(SrModel(mcfg, seed=o["seed"]), train_pairs, val_pairs, tcfg)
    prov = {"train_config": tcfg.to_dict(), "best_epoch": model.best_epoch, "toolkit_version": __version__}
    save_checkpoint(model, o["out"], prov)
    hist_path = o["history"] or o["out"] + ".history.csv"
    with open(hist_path, "w") as fh:
        fh.write(history_csv(history))


def cmd_enhance(o):
    from .srnet import enhance, load_checkpoint

    model, _ = load_checkpoint(o["model"])
    lf = load_volume(o["in"])
    out = enhance(model, lf, o["patch_xy"], o["patch_z_lf"])
    save_volume(out, o["out"])
    write_provenance(o["out"], "enhance", {"model": o["model"], "in": o["in"]}, o)


def cmd_evaluate(o):
    from .metrics import SsimParams, evaluate_pair

    vols = {t: load_volume(o[t]) for t in ("enhanced", "baseline", "ref")}
    mask = load_volume(o["mask"]).data > 0 if o["mask"] else None
    p = SsimParams(o["window"], o["k1"], o["k2"], o["data_range"])
    report = evaluate_pair(vols["enhanced"], vols["baseline"], vols["ref"], mask, p)
    with open(o["out"], "w") as fh:
        fh.write(report.to_csv())
    with open(os.path.splitext(o["out"])[0] + ".json", "w") as fh:
        fh.write(report.to_json() + "\n")
    print(f"ssim enhanced={report.enhanced.ssim:.4f} baseline={report.baseline.ssim:.4f}")


def cmd_repro_desk(o):
    from dataclasses import replace

    from .pipeline import PRESETS, run_desk

    recipe = replace(PRESETS[o["preset"]], seed=o["seed"])
    if o["epochs"] is not None:
        recipe = replace(recipe, training={**recipe.training, "epochs": o["epochs"]})
    summary, _, _ = run_desk(recipe, o["out"])
    print(
        f"mean ssim enhanced={summary['mean_ssim_enhanced']:.4f} "
        f"baseline={summary['mean_ssim_baseline']:.4f} margin={summary['ssim_margin']:.4f}"
    )


COMMANDS = {
    "phantom": cmd_phantom,
    "segment": cmd_segment,
    "estimate-snr": cmd_estimate_snr,
    "simulate": cmd_simulate,
    "upsample": cmd_upsample,
    "train": cmd_train,
    "enhance": cmd_enhance,
    "evaluate": cmd_evaluate,
    "repro-desk": cmd_repro_desk,
}


def _set_threads():
    value = os.environ.get(THREADS_ENV)
    if value:
        import torch

        torch.set_num_threads(max(1, int(value)))


def run(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip() + "\nlfiqt: error: a command is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        opts = resolve_options(args.command, args)
        _set_threads()
        COMMANDS[args.command](opts)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except IqtError as exc:
        print(f"lfiqt: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, TypeError) as exc:
        print(f"lfiqt: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"lfiqt: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main(argv=None):
    return run(sys.argv[1:] if argv is None else argv)
