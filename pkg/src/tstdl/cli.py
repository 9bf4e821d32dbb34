"""Command-line interface.

    tstdl gen-patterns --ordering russian_doll --side 32 --ratio 4 --out pats/
    tstdl gen-data --source synthetic_shapes --side 32 --ratio 4 --lsqr --out data/
    tstdl train --data data/dataset.tstd --kind tst --out run/
    tstdl reconstruct --model run/model.tstw --measurements data/dataset.tstd --out rec/
    tstdl eval --model run/model.tstw --data data/dataset.tstd --out ev/
    tstdl sweep --config sweep.json --out sweep/ --threads 2
    tstdl inspect run/model.tstw

Every option of a subcommand may also come from ``--config <json>``; a flag
given on the command line wins over the file. Exit codes: 0 success,
1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from . import __version__
from . import measurement as mm
from .errors import FormatError, ParameterError, TstdlError

log = logging.getLogger("tstdl")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# built-in defaults per subcommand; --config values sit between these and flags
DEFAULTS: Dict[str, Dict[str, Any]] = {
    "gen-patterns": {"ordering": "russian_doll", "side": 32, "ratio": 1, "n_patterns": None, "limit": 64},
    "gen-data": {"source": "synthetic_shapes", "source_path": None, "side": 32, "ordering": "russian_doll",
                 "ratio": 1, "n_measurements": None, "autocorrelation": False, "snr_db": None,
                 "mismatch_mode": "invert_elements", "mismatch": 0.0, "lsqr": False,
                 "splits": [2000, 400, 400]},
    "train": {"data": None, "kind": "tst", "epochs": 30, "batch_size": 50, "alpha": 1.0,
              "learning_rate": 1e-3, "loss": "rmse_dssim", "fcl_layers": 1, "depth": 3, "channels": 16,
              "dropout": 0.2, "residual": True, "batchnorm": True},
    "reconstruct": {"model": None, "measurements": None, "split": "test", "export": 4},
    "eval": {"model": None, "data": None, "split": "test", "baseline": None},
    "sweep": {"kind": None, "set": []},
    "inspect": {"path": None},
}


def _common(p):
    # SUPPRESS lets the same flag appear before or after the subcommand
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (default 0)")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON file with option values")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default .)")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="parallel jobs for sweep")
    g.add_argument("--no-figures", action="store_true", default=argparse.SUPPRESS,
                   help="skip the matplotlib PNG figures")
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tstdl", description="Single-pixel imaging reconstruction experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _common(p)
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True
    N = None  # flags default to None so config values can fill them

    s = sub.add_parser("gen-patterns", help="export Hadamard patterns (PGM) and the matrix (TSTW)")
    _common(s)
    s.add_argument("--ordering", choices=mm.ORDERINGS, default=N)
    s.add_argument("--side", type=int, default=N)
    s.add_argument("--ratio", type=int, default=N, help="keep the first N/ratio patterns")
    s.add_argument("--n-patterns", type=int, default=N, help="explicit pattern count (overrides --ratio)")
    s.add_argument("--limit", type=int, default=N, help="max PGM files written")

    s = sub.add_parser("gen-data", help="simulate measurements and write a TSTD dataset")
    _common(s)
    s.add_argument("--source", choices=("synthetic_shapes", "digits", "idx_mnist", "stl10_binary"), default=N)
    s.add_argument("--source-path", default=N, help="IDX image file or STL-10 binary")
    s.add_argument("--side", type=int, default=N)
    s.add_argument("--ordering", choices=mm.ORDERINGS, default=N)
    s.add_argument("--ratio", type=int, default=N)
    s.add_argument("--n-measurements", type=int, default=N)
    s.add_argument("--autocorrelation", action="store_const", const=True, default=N,
                   help="autocorrelation forward model instead of Hadamard")
    s.add_argument("--snr-db", type=float, default=N)
    s.add_argument("--mismatch-mode", choices=("invert_elements", "gaussian_perturb"), default=N)
    s.add_argument("--mismatch", type=float, default=N, help="inversion fraction or gaussian sigma")
    s.add_argument("--lsqr", action="store_const", const=True, default=N, help="store LSQR initial guesses")
    s.add_argument("--splits", type=int, nargs=3, metavar=("TRAIN", "VAL", "TEST"), default=N)

    s = sub.add_parser("train", help="train a reconstruction network on a TSTD dataset")
    _common(s)
    s.add_argument("--data", default=N)
    s.add_argument("--kind", choices=("tst", "ost", "dcan", "unet_lsqr"), default=N)
    s.add_argument("--epochs", type=int, default=N, help="epochs per step (one-step models get 2x)")
    s.add_argument("--batch-size", type=int, default=N)
    s.add_argument("--alpha", type=float, default=N, help="DSSIM weight in the loss")
    s.add_argument("--learning-rate", type=float, default=N)
    s.add_argument("--loss", choices=("rmse_dssim", "mse"), default=N)
    s.add_argument("--fcl-layers", type=int, default=N)
    s.add_argument("--depth", type=int, default=N, help="U-Net pooling levels")
    s.add_argument("--channels", type=int, default=N, help="U-Net base channels / DCAN channels")
    s.add_argument("--dropout", type=float, default=N)
    s.add_argument("--no-residual", dest="residual", action="store_const", const=False, default=N)
    s.add_argument("--no-batchnorm", dest="batchnorm", action="store_const", const=False, default=N)

    s = sub.add_parser("reconstruct", help="run a trained model on measurements")
    _common(s)
    s.add_argument("--model", default=N)
    s.add_argument("--measurements", default=N, help="TSTD dataset or raw little-endian f32 file")
    s.add_argument("--split", choices=("train", "validation", "test", "all"), default=N)
    s.add_argument("--export", type=int, default=N, help="number of PGM images written")

    s = sub.add_parser("eval", help="score a model (or a classical baseline) on a dataset split")
    _common(s)
    s.add_argument("--model", default=N)
    s.add_argument("--data", default=N)
    s.add_argument("--split", choices=("train", "validation", "test"), default=N)
    s.add_argument("--baseline", choices=("lsqr",), default=N,
                   help="score the dataset's LSQR channel instead of a model")

    s = sub.add_parser("sweep", help="run an experiment sweep from a JSON config")
    _common(s)
    s.add_argument("--kind", default=N, help="experiment kind when no config file is given")
    s.add_argument("--set", action="append", default=N, metavar="KEY=JSON",
                   help="override one config field, e.g. --set 'grid=[4,8]'")

    s = sub.add_parser("inspect", help="describe a TSTW, TSTD, CSV or summary JSON file")
    _common(s)
    s.add_argument("path", nargs="?", default=N)
    return p


def _resolve(args: argparse.Namespace) -> Dict[str, Any]:
    """Merge built-in defaults, the --config file and explicit flags."""
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    file_cfg: Dict[str, Any] = {}
    path = getattr(args, "config", None)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
    if cmd != "sweep":
        unknown = sorted(set(file_cfg) - set(cfg) - {"seed", "out", "threads", "figures"})
        if unknown:
            raise UsageError(f"unknown keys in {path}: {unknown}")
    cfg.update({k: v for k, v in file_cfg.items() if k in cfg})
    for k in DEFAULTS[cmd]:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    cfg["seed"] = getattr(args, "seed", file_cfg.get("seed", 0))
    cfg["out"] = getattr(args, "out", file_cfg.get("out", "."))
    cfg["threads"] = getattr(args, "threads", file_cfg.get("threads", 1))
    cfg["figures"] = not getattr(args, "no_figures", False) and file_cfg.get("figures", True)
    if cmd == "sweep":
        cfg["file"] = file_cfg
    return cfg


def _write_resolved(out: Path, cmd: str, cfg: Dict[str, Any]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    body = {"command": cmd, "version": __version__, **{k: v for k, v in cfg.items() if k != "file"}}
    (out / "config.resolved.json").write_text(json.dumps(body, indent=2, sort_keys=True, default=str))


def _need(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------

def cmd_gen_patterns(cfg, out: Path) -> int:
    from .autodiff import save_tensors

    model = mm.make_model(cfg["ordering"], cfg["side"], seed=cfg["seed"])
    if cfg["n_patterns"] is not None:
        model = mm.compress(model, n_rows=cfg["n_patterns"])
    elif cfg["ratio"] != 1:
        model = mm.compress(model, cfg["ratio"])
    n = mm.export_patterns(model, out / "patterns", cfg["limit"])
    save_tensors(out / "H.tstw", {"H": model.H.astype(np.float32)})
    (out / "model.json").write_text(json.dumps(model.describe(), indent=2))
    print(f"{model.n_measurements} x {model.n_pixels} matrix -> {out / 'H.tstw'}; {n} PGM patterns")
    return EXIT_OK


def _gen_model(cfg):
    if cfg["autocorrelation"]:
        return mm.autocorrelation_model(cfg["side"])
    model = mm.make_model(cfg["ordering"], cfg["side"], seed=cfg["seed"])
    if cfg["n_measurements"] is not None:
        return mm.compress(model, n_rows=cfg["n_measurements"])
    if cfg["ratio"] != 1:
        return mm.compress(model, cfg["ratio"])
    return model


def cmd_gen_data(cfg, out: Path) -> int:
    from .data import build_dataset, save_dataset
    from .experiments import ExperimentConfig, _images

    if cfg["source"] in ("idx_mnist", "stl10_binary"):
        _need(cfg, "source_path")
    model = _gen_model(cfg)
    count = sum(cfg["splits"])
    src = ExperimentConfig(kind="compression_sweep", grid=[1], source=cfg["source"],
                           source_path=cfg["source_path"], side=cfg["side"], splits=cfg["splits"])
    images = _images(src, cfg["seed"], count)
    mismatch = None
    if cfg["mismatch"]:
        key = "fraction" if cfg["mismatch_mode"] == "invert_elements" else "sigma"
        mismatch = mm.MismatchSpec(cfg["mismatch_mode"], seed=cfg["seed"], **{key: cfg["mismatch"]})
    ds = build_dataset(images, model, noise_snr=cfg["snr_db"], mismatch=mismatch, lsqr=cfg["lsqr"],
                       splits=cfg["splits"], seed=cfg["seed"], source=cfg["source"])
    save_dataset(ds, out / "dataset.tstd")
    print(f"{len(ds.images)} images, side {ds.side}, M={ds.n_measurements} -> {out / 'dataset.tstd'}"
          f" (hash {ds.content_hash()[:12]})")
    return EXIT_OK


def cmd_train(cfg, out: Path) -> int:
    from .data import load_dataset
    from .learned import (NetworkSpec, TrainConfig, UNetSpec, save_model, train_dcan_decoder, train_ost,
                          train_tst, train_unet_baseline)

    _need(cfg, "data")
    ds = load_dataset(cfg["data"])
    tcfg = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], alpha=cfg["alpha"],
                       learning_rate=cfg["learning_rate"], loss=cfg["loss"], seed=cfg["seed"])
    unet = UNetSpec(depth=cfg["depth"], base_channels=cfg["channels"], dropout=cfg["dropout"],
                    residual=cfg["residual"])
    kind = cfg["kind"]
    if kind in ("tst", "ost"):
        spec = NetworkSpec(ds.n_measurements, ds.side, fcl_layers=cfg["fcl_layers"],
                           batchnorm_after_fcl=cfg["batchnorm"], unet=unet)
        model = (train_tst if kind == "tst" else train_ost)(ds, spec, tcfg)
    elif kind == "dcan":
        model = train_dcan_decoder(ds, tcfg, channels=cfg["channels"])
    else:
        model = train_unet_baseline(ds, tcfg, unet)
    save_model(model, out / "model.tstw")
    if cfg["figures"]:
        from .plotting import history_figure

        history_figure(out / "history.png", model.history, title=kind)
    best = model.provenance.get("best_val_loss") or [float("nan")]
    print(f"{kind}: {model.network.n_parameters()} parameters, {model.epochs_run()} epochs, "
          f"best val loss {best[-1]:.4f} -> {out / 'model.tstw'}")
    return EXIT_OK


def _model_inputs(model, path: Path, split: str):
    """Inputs for ``model`` from a TSTD dataset or a raw f32 file; returns (inputs, truths|None, ids)."""
    from .data import load_dataset

    with open(path, "rb") as fh:
        head = fh.read(4)
    image_input = model.kind == "unet_lsqr"
    if head == b"TSTD":
        ds = load_dataset(path)
        if split == "all":
            idx = np.arange(len(ds.images))
        else:
            idx = ds.splits[split]
        if image_input:
            if ds.lsqr is None:
                raise ParameterError("the LSQR-input U-Net needs a dataset with an LSQR channel")
            x = ds.lsqr[idx].reshape(len(idx), -1)
        else:
            x = ds.measurements[idx]
        return x, ds.images[idx], [str(i) for i in idx]
    raw = np.fromfile(path, dtype="<f4")
    L = model.spec.input_length
    if raw.size == 0 or raw.size % L:
        raise FormatError(f"{path}: {raw.size} floats is not a multiple of the model input length {L}")
    x = raw.reshape(-1, L)
    return x, None, [str(i) for i in range(len(x))]


def cmd_reconstruct(cfg, out: Path) -> int:
    from .learned import load_model, predict

    _need(cfg, "model", "measurements")
    model = load_model(cfg["model"])
    x, _, ids = _model_inputs(model, Path(cfg["measurements"]), cfg["split"])
    rec = predict(model, x).reshape(len(x), model.spec.output_side, model.spec.output_side)
    rec.astype("<f4").tofile(out / "reconstructions.f32")
    (out / "reconstructions.json").write_text(json.dumps(
        {"dtype": "float32", "byteorder": "little", "shape": list(rec.shape), "ids": ids}, indent=1))
    for k in range(min(cfg["export"], len(rec))):
        mm.write_pgm(out / f"recon_{ids[k]}.pgm", np.clip(rec[k], 0, 1))
    print(f"{len(rec)} reconstructions of {rec.shape[1]}x{rec.shape[2]} -> {out / 'reconstructions.f32'}")
    return EXIT_OK


def cmd_eval(cfg, out: Path) -> int:
    from .data import load_dataset
    from .metrics import evaluate, write_csv

    _need(cfg, "data")
    ds = load_dataset(cfg["data"])
    idx = ds.splits[cfg["split"]]
    truths = ds.images[idx]
    ids = [str(i) for i in idx]
    if cfg["baseline"] == "lsqr":
        if ds.lsqr is None:
            raise ParameterError("dataset carries no LSQR channel (generate it with --lsqr)")
        preds, name = ds.lsqr[idx], "lsqr"
    else:
        from .learned import load_model, predict

        _need(cfg, "model")
        model = load_model(cfg["model"])
        x, truths, ids = _model_inputs(model, Path(cfg["data"]), cfg["split"])
        preds, name = predict(model, x), model.kind
    report = evaluate(preds, truths, ids, experiment=f"eval/{cfg['split']}", model=name,
                      provenance={"data": str(cfg["data"]), "model": cfg.get("model")})
    write_csv([report], out / "metrics.csv")
    agg = report.aggregate_dict()
    (out / "summary.json").write_text(json.dumps(agg, indent=2, default=str))
    print(f"{name} on {len(ids)} {cfg['split']} images: RMSE {agg['rmse_mean']:.4f} +- {agg['rmse_std']:.4f}, "
          f"SSIM {agg['ssim_mean']:.4f} +- {agg['ssim_std']:.4f}")
    return EXIT_OK


def _parse_set(items: List[str]) -> Dict[str, Any]:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=JSON, got {item!r}")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val  # bare strings need no quotes
    return out


def _fmt(v) -> str:
    # summary.json stores NaN (SSIM of sub-window images) as null
    return "n/a" if v is None or v != v else f"{v:.4f}"


def cmd_sweep(cfg, out: Path) -> int:
    from .experiments import config_from_dict, run_experiment

    raw = dict(cfg["file"])
    for k in ("out", "threads"):
        raw.pop(k, None)
    if cfg.get("kind"):
        raw["kind"] = cfg["kind"]
    raw.update(_parse_set(cfg["set"]))
    if "seed" in raw:
        raw.setdefault("seeds", [raw.pop("seed")])
    if cfg["seed"] and "seeds" not in raw:
        raw["seeds"] = [cfg["seed"]]
    if not cfg["figures"]:
        raw["figures"] = False
    if "kind" not in raw:
        raise UsageError("sweep needs --config <json> or --kind")
    try:
        exp = config_from_dict(raw)
    except (ParameterError, TypeError) as exc:
        raise UsageError(f"invalid sweep config: {exc}") from None
    reports = run_experiment(exp, out, threads=max(1, cfg["threads"]))
    summary = json.loads((out / "summary.json").read_text())
    failed = [j for j in summary["jobs"] if j["status"] != "ok"]
    for label, row in summary["aggregates"].items():
        for name, agg in row.items():
            print(f"{label:>24s} {name:>10s}  RMSE {_fmt(agg['rmse_mean'])}  SSIM {_fmt(agg['ssim_mean'])}"
                  f"  ({agg['seeds']} seed{'s' if agg['seeds'] != 1 else ''})")
    for j in failed:
        print(f"FAILED {j['label']} seed {j['seed']}: {j['reason']}", file=sys.stderr)
    if not reports:
        return EXIT_RUNTIME
    return EXIT_RUNTIME if failed else EXIT_OK


def describe_file(path: Path) -> Dict[str, Any]:
    """Short structured description of an artifact file."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == b"TSTW":
        from .autodiff import load_tensors

        tensors = load_tensors(path)
        info: Dict[str, Any] = {"format": "TSTW", "tensors": {k: list(v.shape) for k, v in tensors.items()}}
        manifest = path.with_suffix(".json")
        if manifest.exists():
            m = json.loads(manifest.read_text())
            info.update({"kind": m.get("kind"), "spec": m.get("spec"), "provenance": m.get("provenance"),
                         "epochs": len(m.get("history", []))})
        return info
    if head == b"TSTD":
        from .data import load_dataset

        ds = load_dataset(path)
        return {"format": "TSTD", "images": len(ds.images), "side": ds.side,
                "measurements": ds.n_measurements, "splits": {k: len(v) for k, v in ds.splits.items()},
                "lsqr_channel": ds.lsqr is not None, "source": ds.source, "model": ds.model,
                "seed": ds.seed, "hash": ds.content_hash()}
    if path.suffix == ".csv":
        from .metrics import read_csv

        return {"format": "metrics CSV",
                "reports": [{"experiment": r.experiment, "model": r.model, "images": len(r.per_image),
                             **{k: r.aggregate_dict()[k] for k in ("rmse_mean", "ssim_mean")}}
                            for r in read_csv(path)]}
    if path.suffix == ".json":
        return json.loads(path.read_text())
    raise FormatError(f"{path}: unrecognised file (expected TSTW, TSTD, .csv or .json)")


def cmd_inspect(cfg, out: Optional[Path]) -> int:
    _need(cfg, "path")
    print(json.dumps(describe_file(Path(cfg["path"])), indent=2, default=str))
    return EXIT_OK


COMMANDS = {
    "gen-patterns": cmd_gen_patterns,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "inspect": cmd_inspect,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    if argv is not None:
        argv = [str(a) for a in argv]  # allow Path arguments from Python callers
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(cfg["out"])
    try:
        if args.command == "inspect":
            return cmd_inspect(cfg, None)
        # sweep writes its own resolved experiment config
        if args.command != "sweep":
            _write_resolved(out, args.command, cfg)
        return COMMANDS[args.command](cfg, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TstdlError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception:  # anything unexpected is still a runtime failure, not a usage one
        log.exception("unexpected failure in %s", args.command)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
