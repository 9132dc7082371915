"""Command-line entry point.

Commands: ``gen-data``, ``calibrate``, ``train``, ``evaluate``, ``mpc``,
``ablate`` and ``report``. Every command is a function of the YAML config
and the seed; outputs are CSV or sorted JSON, written atomically.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import calib, config, control, dataio, pbm, pipeline
from .errors import ConfigError, DomainError, DryerError, NumericalError, SchemaError

log = logging.getLogger("graybox_dryer")

FORMAT_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


# --------------------------------------------------------------------------
# Atomic output helpers

def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)
    return path


def write_json(path: Path, payload: dict) -> Path:
    body = {"format_version": FORMAT_VERSION, **payload}
    return write_text(path, json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n")


def write_csv(path: Path, df: pd.DataFrame) -> Path:
    return write_text(path, df.to_csv(index=False, float_format="%.10g", lineterminator="\n"))


def read_json(path: Path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise SchemaError(f"missing artifact: {path}") from exc
    if d.get("format_version") != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported format_version {d.get('format_version')!r}")
    return d


# --------------------------------------------------------------------------
# Shared steps

def _splits(cfg: config.RunConfig):
    raw = dataio.load_dataset(cfg.paths.data_dir)
    cleaned, train, test = pipeline.split_clean(raw, cfg.eval.train_frac)
    log.info("data: %d raw rows, %d rejected, %d train, %d test", len(raw), cleaned.rejected["total"],
             len(train), len(test))
    return cleaned, train, test


def _load_model(cfg: config.RunConfig) -> pipeline.Trained:
    d = read_json(cfg.paths.model() / "model.json")
    return pipeline.Trained.from_dict(d["model"])


def _truth(cfg: config.RunConfig) -> dataio.TruthParams:
    d = read_json(Path(cfg.paths.data_dir) / "truth.json")
    return dataio.TruthParams.from_dict(d["truth"])


def export_trajectories(path: Path, row: pd.Series, cfg: pbm.SectionConfig, p) -> Path:
    """Section trajectories ``(t, X, T)`` for one dataset row, stacked by section."""
    x = dataio.convert_units(row)
    gas = pbm.GasConditions(T_hot=x["T_hot_K"], w=x["w"], P_total=pbm.P_ATM,
                            T_air=x["Tair_K"], RH=x["RH"])
    feed = pbm.feed_state(x["Xin_db"], x["Tair_K"], x["feed_kgps"], cfg.parcel_seconds)
    res = pbm.simulate_chain(feed, gas, cfg, p, record=True)
    frames = [pd.DataFrame({"section": name, "t": tr.t, "X": tr.X, "T": tr.T})
              for name, tr in res.trajectories.items()]
    return write_csv(path, pd.concat(frames, ignore_index=True))


# --------------------------------------------------------------------------
# Commands

def cmd_gen_data(cfg: config.RunConfig, ideal: bool = False) -> dict:
    scn = cfg.scenario.ideal() if ideal else cfg.scenario
    ds, truth = dataio.gen_synthetic(scn, cfg.seed, cfg.pbm, cfg.material)
    out = Path(cfg.paths.data_dir)
    files = dataio.save_dataset(ds, out)
    write_json(out / "truth.json", {"truth": truth.to_dict(), "scenario": scn.to_dict(), "seed": cfg.seed})
    log.info("gen-data: %d batches, %d rows -> %s", len(files), len(ds), out)
    return {"files": [str(f) for f in files]}


def cmd_calibrate(cfg: config.RunConfig) -> dict:
    _, train, _ = _splits(cfg)
    sub = dataio.calibration_subset(train)
    res = calib.calibrate(cfg.calib, sub, cfg.pbm, cfg.material, cfg.seed)
    write_json(Path(cfg.paths.out_dir) / "calibration.json", {"calibration": res.to_dict()})
    return res.to_dict()


def cmd_train(cfg: config.RunConfig) -> dict:
    cleaned, train, _ = _splits(cfg)
    trained = pipeline.run_training(train, cfg.pbm, cfg.material, cfg.learn, cfg.toggles,
                                    calibrate=cfg.calibrate, problem=cfg.calib, seed=cfg.seed)
    model_dir = cfg.paths.model()
    write_json(model_dir / "model.json", {"model": trained.to_dict(), "seed": cfg.seed})
    m = trained.hybrid.predictor.model
    report = {
        "counts": {**trained.counts, "rejected": cleaned.rejected},
        "calibration": None if trained.calibration is None else trained.calibration.to_dict(),
        "toggles": trained.toggles.active(),
        "hybrid": {"rho_raw": m.rho_raw, "rho": m.rho, "certified": m.certified,
                   "ridge_static": trained.hybrid.ridge_static},
        "ext_input": {"rho_raw": trained.ext.predictor.model.rho_raw,
                      "rho": trained.ext.predictor.model.rho},
    }
    write_json(Path(cfg.paths.out_dir) / "train_report.json", report)
    if cfg.export_trajectories:
        export_trajectories(Path(cfg.paths.out_dir) / "pbm_trajectories.csv", train.batches[0].iloc[0],
                            trained.cfg, trained.material)
    return report


def cmd_evaluate(cfg: config.RunConfig) -> dict:
    trained = _load_model(cfg)
    _, _, test = _splits(cfg)
    if len(test) == 0:
        raise SchemaError("test split is empty")
    ev = pipeline.evaluate(trained, test, cfg.eval.horizon, cfg.eval.diag_kw())
    out = Path(cfg.paths.out_dir)
    table = pd.DataFrame(ev.table())
    write_csv(out / "evaluation.csv", table)
    acf_rows, psd_rows = [], []
    for model, dgs in ev.diagnostics.items():
        for col, dg in zip(dataio.Y_COLS, dgs):
            acf_rows += [{"model": model, "output": col, "lag": k, "acf": v} for k, v in enumerate(dg.acf)]
            psd_rows += [{"model": model, "output": col, "freq": f, "power": pw}
                         for f, pw in zip(dg.spectrum.freq, dg.spectrum.power)]
    write_csv(out / "residual_acf.csv", pd.DataFrame(acf_rows))
    write_csv(out / "residual_psd.csv", pd.DataFrame(psd_rows))
    summary = {"rows": table.to_dict(orient="records"), "test_rows": len(test)}
    write_json(out / "evaluation.json", summary)
    return summary


def cmd_mpc(cfg: config.RunConfig) -> dict:
    trained = _load_model(cfg)
    truth = _truth(cfg)
    scn = replace(cfg.mpc_scenario, seed=cfg.seed)
    depth = truth.fouling_depth[0] if truth.fouling_depth else 0.0
    ctrls = control.controllers_from(trained, cfg.mpc, scn)
    rep = control.run_closed_loop(ctrls, truth, scn, cfg.mpc, cfg.pbm, cfg.material, depth)
    out = Path(cfg.paths.out_dir)
    write_csv(out / "mpc_summary.csv", rep.table())
    for name, df in rep.trajectories.items():
        write_csv(out / f"mpc_trajectory_{name}.csv", df)
    summary = {"metrics": rep.metrics, "aborted": rep.aborted, "scenario": scn.to_dict()}
    write_json(out / "mpc_report.json", summary)
    if rep.aborted:
        raise NumericalError(f"closed loop aborted: {rep.aborted}")
    return summary


def cmd_ablate(cfg: config.RunConfig) -> dict:
    _, train, test = _splits(cfg)
    rows = pipeline.ablate(train, test, cfg.pbm, cfg.material, cfg.learn, cfg.calibrate, cfg.calib,
                           cfg.seed, cfg.eval.horizon, cfg.eval.diag_kw())
    write_csv(Path(cfg.paths.out_dir) / "ablation.csv", pd.DataFrame(rows))
    return {"rows": rows}


def cmd_report(cfg: config.RunConfig) -> str:
    """Plain-text digest of whatever artifacts exist in the output directory."""
    out = Path(cfg.paths.out_dir)
    parts = [f"output directory: {out}"]
    for name in ("evaluation.csv", "mpc_summary.csv", "ablation.csv"):
        p = out / name
        if p.exists():
            df = pd.read_csv(p)
            if name == "evaluation.csv":
                df = df[["model", "output", "mae", "r2", "lb_logp", "low_fraction"]]
            parts += ["", f"== {name}", df.to_string(index=False, float_format=lambda v: f"{v:.5g}")]
    tr = out / "train_report.json"
    if tr.exists():
        d = read_json(tr)
        parts += ["", "== train_report.json", json.dumps(d["hybrid"], sort_keys=True)]
    text = "\n".join(parts) + "\n"
    write_text(out / "report.txt", text)
    return text


COMMANDS = {"gen-data": cmd_gen_data, "calibrate": cmd_calibrate, "train": cmd_train,
            "evaluate": cmd_evaluate, "mpc": cmd_mpc, "ablate": cmd_ablate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="graybox-dryer", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="YAML run configuration")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("--out", help="output directory (overrides paths.out_dir)")
    ap.add_argument("--data", help="data directory (overrides paths.data_dir)")
    ap.add_argument("--toggle", action="append", default=[], metavar="NAME",
                    help=f"ablation toggle, repeatable: {', '.join(pipeline.TOGGLES)}")
    ap.add_argument("--ideal", action="store_true",
                    help="gen-data: plant identical to the model (no noise, lag, fouling or mismatch)")
    ap.add_argument("--export-trajectories", action="store_true",
                    help="train: also write section trajectories of the first training row")
    ap.add_argument("--no-calibrate", action="store_true", help="skip parameter calibration")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve(args) -> config.RunConfig:
    cfg = config.load(args.config)
    paths = cfg.paths
    if args.out:
        paths = replace(paths, out_dir=args.out)
    if args.data:
        paths = replace(paths, data_dir=args.data)
    kw = {"paths": paths}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.toggle:
        kw["toggles"] = pipeline.Toggles.from_names(sorted(set(cfg.toggles.active()) | set(args.toggle)))
    if args.export_trajectories:
        kw["export_trajectories"] = True
    if args.no_calibrate:
        kw["calibrate"] = False
    return replace(cfg, **kw)


def exit_code(exc: BaseException) -> int:
    cause = getattr(exc, "cause", None)
    if isinstance(cause, BaseException):
        exc = cause
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, (SchemaError, FileNotFoundError, pd.errors.ParserError)):
        return EXIT_DATA
    if isinstance(exc, (ConfigError, DomainError)):
        return EXIT_CONFIG
    return EXIT_DATA if isinstance(exc, OSError) else EXIT_NUMERICAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args)
        fn = COMMANDS[args.command]
        result = fn(cfg, ideal=args.ideal) if args.command == "gen-data" else fn(cfg)
    except (DryerError, OSError, pd.errors.ParserError) as exc:
        stage = getattr(exc, "stage", None)
        where = f" [stage {stage}]" if stage else ""
        print(f"error{where}: {exc}", file=sys.stderr)
        return exit_code(exc)
    if args.command == "report":
        print(result, end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
