"""Command-line entry point: synth, train, compare, simulate, optimize."""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .config import ConfigError, RunConfig, load_config
from .data import (GridError, InsufficientLength, RecordSet, SamplingError, SchemaError,
                   filter_record_set, interpolate_velocity, load_force_log, split_dataset,
                   synth_generate, windows_for, write_force_log)
from .dynamics import NonFiniteState, simulate, simulate_batch
from .kinematics import GaitParams, LinkageInfeasible
from .lstm import LstmModel, ModelFormatError, fit, load_model, predict, save_model
from .optimize import genes_to_gait, nsga2_run, simulation_evaluator, top_solutions
from .report import Comparison, csv_text, trajectory_rows, trajectory_summary

log = logging.getLogger("swimquad")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


EXPECTED = (ConfigError, SchemaError, SamplingError, InsufficientLength, GridError, ModelFormatError,
            LinkageInfeasible, NonFiniteState, ValueError, OSError, KeyError, FloatingPointError)


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except EXPECTED as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc


# --- file helpers ----------------------------------------------------------

def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dump_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_manifest(out: Path, command: str, cfg: RunConfig, inputs: dict, extra: dict | None = None):
    outputs = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            outputs[p.relative_to(out).as_posix()] = sha256(p)
    doc = {"command": command, "version": __version__, "seed": cfg.seed, "config": cfg.to_dict(),
           "inputs": inputs, "outputs": outputs}
    if extra:
        doc.update(extra)
    dump_json(out / "manifest.json", doc)


def set_filename(set_id: str) -> str:
    gait, _, speed = set_id.partition("@")
    return f"{gait}_v{speed}.csv" if speed else f"{gait}.csv"


def clean_json(x):
    """Replace non-finite floats with None so reports stay strict JSON."""
    if isinstance(x, dict):
        return {k: clean_json(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [clean_json(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, np.floating):
        return clean_json(float(x))
    return x


# --- shared pipeline -------------------------------------------------------

def load_sets(data_dir: Path) -> tuple[list[RecordSet], dict]:
    files = sorted((data_dir / "sets").glob("*.csv"))
    if not files:
        raise SchemaError(f"no force logs under {data_dir / 'sets'}")
    sets = []
    for f in files:
        sets.extend(load_force_log(f))
    return sets, {f"sets/{f.name}": sha256(f) for f in files}


def prepare_splits(cfg: RunConfig, sets: list[RecordSet]):
    """filter -> interpolate -> split; every flow speed of a gait stays in one split."""
    pp = cfg.preprocess
    fs = cfg.synth.fs
    with stage("filter"):
        filtered = [filter_record_set(s, pp.cutoff, fs) for s in sets]
    with stage("interpolate"):
        groups: dict[str, list[RecordSet]] = {}
        for s in filtered:
            groups.setdefault(s.params_key, []).append(s)
        extra = []
        if pp.interp_speeds:
            for key in sorted(groups):
                if len({s.V_flow for s in groups[key]}) >= 3:
                    extra.extend(interpolate_velocity(groups[key], pp.interp_speeds, pp.cutoff, fs))
    with stage("split"):
        return split_dataset(filtered + extra, cfg.seed)


def load_lstm(path) -> LstmModel:
    with stage("model"):
        return load_model(path, hidden=None)


# --- commands ----------------------------------------------------------------

def cmd_synth(cfg: RunConfig, out: Path, inputs: dict) -> dict:
    grid = cfg.synth.grid.grid()
    with stage("synth"):
        sets = synth_generate(grid, cfg.synth.noise, cfg.seed, cfg.ef, cfg.geometry, cfg.synth.fs)
    (out / "sets").mkdir(parents=True, exist_ok=True)
    with stage("io"):
        for rs in sets:
            write_force_log(out / "sets" / set_filename(rs.set_id), [rs], fs=cfg.synth.fs)
    counts = {"gaits": len(grid.gaits()), "speeds": len(grid.speeds), "record_sets": len(sets)}
    write_manifest(out, "synth", cfg, inputs, {"counts": counts})
    log.info("wrote %d record sets (%d gaits x %d speeds)", len(sets), counts["gaits"], counts["speeds"])
    return counts


def cmd_train(cfg: RunConfig, data_dir: Path, out: Path, inputs: dict) -> dict:
    with stage("load"):
        sets, hashes = load_sets(data_dir)
    inputs.update(hashes)
    train, val, test = prepare_splits(cfg, sets)
    win = cfg.preprocess.window
    with stage("window"):
        wtr, wva = windows_for(train, win), windows_for(val, win)
    log.info("windows: train %d, val %d", len(wtr), len(wva))
    with stage("train"):
        model, hist = fit(wtr.inputs, wtr.targets, wva.inputs, wva.targets, cfg.train, log=log.info)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.json")
    dump_json(out / "history.json", hist.to_dict())
    with stage("compare"):
        cmp = Comparison(test, lambda x: predict(model, x), cfg.ef, cfg.geometry, cfg.synth.fs, win)
        table = cmp.speed_table()
    (out / "test_mse.csv").write_text(csv_text(table))
    print(f"{'V_flow':>7} {'LSTM MSE':>12} {'EF MSE':>12}")
    for r in table:
        print(f"{r['V_flow']:7.3f} {r['lstm_aggregate_mse']:12.6f} {r['ef_aggregate_mse']:12.6f}")
    write_manifest(out, "train", cfg, inputs, {"splits": {"train": len(train), "val": len(val),
                                                          "test": len(test)}})
    return {"history": hist, "table": table}


def cmd_compare(cfg: RunConfig, data_dir: Path, model_path: Path, out: Path, inputs: dict,
                predictor=None) -> dict:
    with stage("load"):
        sets, hashes = load_sets(data_dir)
    inputs.update(hashes)
    if predictor is None:
        model = load_lstm(model_path)
        inputs["model"] = sha256(model_path)
        predictor = lambda x: predict(model, x)  # noqa: E731
    _, _, test = prepare_splits(cfg, sets)
    with stage("compare"):
        cmp = Comparison(test, predictor, cfg.ef, cfg.geometry, cfg.synth.fs, cfg.preprocess.window)
        speed_rows = cmp.speed_table()
        box_rows = cmp.box_table()
    out.mkdir(parents=True, exist_ok=True)
    (out / "series").mkdir(exist_ok=True)
    with stage("report"):
        (out / "speed_mse.csv").write_text(csv_text(speed_rows))
        (out / "box_summary.csv").write_text(csv_text(box_rows))
        plotting.mse_boxes(box_rows, out / "mse_boxes.png")
        for sid in cmp.example_ids(cfg.compare.examples, cfg.compare.speeds):
            rows = cmp.series(sid)
            stem = set_filename(sid)[:-4]
            (out / "series" / f"{stem}.csv").write_text(csv_text(rows))
            plotting.force_series(rows, sid, out / "series" / f"{stem}.png")
    write_manifest(out, "compare", cfg, inputs)
    return {"speed": speed_rows, "box": box_rows}


def _model_for(tag: str, model_path, inputs: dict):
    if tag == "ef":
        return "EF"
    if model_path is None:
        raise StageError("model", "--model is required with --model-tag lstm")
    inputs["model"] = sha256(model_path)
    return load_lstm(model_path)


def load_gait(path) -> GaitParams:
    doc = json.loads(Path(path).read_text())
    return GaitParams.from_dict(doc.get("gait", doc))


def cmd_simulate(cfg: RunConfig, gait: GaitParams, tag: str, mode: str, model_path, out: Path,
                 inputs: dict) -> dict:
    model = _model_for(tag, model_path, inputs)
    with stage("simulate"):
        traj = simulate(gait, model, cfg.body, mode, cfg.ef, cfg.geometry)
    rows = trajectory_rows(traj)
    summary = trajectory_summary(traj, cfg.body.finish_distance)
    summary["gait"] = gait.to_dict()
    out.mkdir(parents=True, exist_ok=True)
    with stage("report"):
        (out / "trajectory.csv").write_text(csv_text(rows))
        dump_json(out / "summary.json", clean_json(summary))
        plotting.trajectory(rows, f"{traj.model_tag} {mode}", out / "trajectory.png")
    write_manifest(out, "simulate", cfg, inputs)
    return summary


def cmd_optimize(cfg: RunConfig, tag: str, mode: str, model_path, out: Path, inputs: dict) -> dict:
    model = _model_for(tag, model_path, inputs)
    ocfg = replace(cfg.optimize, mode=mode)
    evaluate = simulation_evaluator(model, mode, cfg.body, cfg.ef, cfg.geometry, ocfg.chunk)
    with stage("optimize"):
        result = nsga2_run(ocfg, evaluate, log=log.info)
        top = top_solutions(result, ocfg)
        trajs = simulate_batch([genes_to_gait(s.genes) for s in top], model, cfg.body, mode,
                               cfg.ef, cfg.geometry)
    entries = []
    for sol, tr in zip(top, trajs):
        e = sol.to_dict()
        e["summary"] = trajectory_summary(tr, cfg.body.finish_distance)
        entries.append(e)
    report = {
        "mode": mode,
        "model": "EF" if tag == "ef" else "LSTM",
        "model_sha256": inputs.get("model"),
        "optimize": asdict(ocfg),
        "body": cfg.to_dict()["body"],
        "generations": [h.to_dict() for h in result.history],
        "archive_best": {"objectives": list(result.archive_best.objectives),
                         "gait": genes_to_gait(result.archive_best.genes).to_dict()},
        "top": entries,
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "top").mkdir(exist_ok=True)
    with stage("report"):
        dump_json(out / "report.json", clean_json(report))
        table = [{"rank": e["rank"], "S": e["S"], "f1": e["objectives"][0], "f2": e["objectives"][1],
                  "f3": e["objectives"][2], "T_S": e["summary"]["T_S"], "MAE_x": e["summary"]["mae_x"],
                  "T_T": e["summary"]["T_T"], "r_T": e["summary"]["r_T"]} for e in entries]
        (out / "top8.csv").write_text(csv_text(table))
        for sol in top:
            dump_json(out / "top" / f"gait_{sol.rank:02d}.json",
                      {"rank": sol.rank, "S": sol.S, "gait": genes_to_gait(sol.genes).to_dict()})
        front = np.array([ind.objectives for ind in result.front], dtype=float)
        plotting.optimization(report["generations"], front, out / "optimize.png")
    write_manifest(out, "optimize", cfg, inputs)
    return report


# --- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swimquad", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="override the config seed (unsigned)")
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("-q", "--quiet", action="store_true")
        return sp

    common(sub.add_parser("synth", help="generate synthetic force logs"))
    sp = common(sub.add_parser("train", help="fit the LSTM surrogate"))
    sp.add_argument("--data", type=Path, required=True, help="directory written by synth")
    sp = common(sub.add_parser("compare", help="LSTM vs EF on the test split"))
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--model", type=Path, required=True)
    for name, text in (("simulate", "simulate one gait"), ("optimize", "NSGA-II gait search")):
        sp = common(sub.add_parser(name, help=text))
        sp.add_argument("--model", type=Path)
        sp.add_argument("--model-tag", choices=("ef", "lstm"), default="ef")
        sp.add_argument("--mode", choices=("straight", "turn"), default="straight")
        if name == "simulate":
            sp.add_argument("--gait", type=Path, help="gait JSON (e.g. a top/gait_XX.json file)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        if args.seed is not None and args.seed < 0:
            raise StageError("config", "--seed must be unsigned")
        with stage("config"):
            cfg = load_config(args.config, args.seed)
        inputs = {"config": sha256(args.config)} if args.config else {}
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "synth":
            cmd_synth(cfg, out, inputs)
        elif args.command == "train":
            cmd_train(cfg, args.data, out, inputs)
        elif args.command == "compare":
            cmd_compare(cfg, args.data, args.model, out, inputs)
        elif args.command == "simulate":
            with stage("config"):
                gait = load_gait(args.gait) if args.gait else cfg.simulate.gait()
            if args.gait:
                inputs["gait"] = sha256(args.gait)
            cmd_simulate(cfg, gait, args.model_tag, args.mode, args.model, out, inputs)
        elif args.command == "optimize":
            cmd_optimize(cfg, args.model_tag, args.mode, args.model, out, inputs)
    except StageError as exc:
        print(f"swimquad {args.command}: error {exc}", file=sys.stderr)
        return 2 if exc.stage == "config" else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
