"""Experiment harness: configs, seeded runs, CSV ingestion, persisted results.

A config is a flat text file of dotted ``key = value`` lines, one file per
experiment cell.  Each replication r of a run derives its seed as
``seed + r``, regenerates data, trains, and reports the task's error
metric; results persist as a JSON document whose floats round-trip
bit-exactly (divergent replications serialize their metric as null plus a
flag, never as bare NaN text).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import causal, evalign, oica, synthdata
from .diffcore import ProxConfig
from .mmd import KernelSpec
from .oica import TrainConfig, TrainingDivergedError
from .sources import make_source_gen

TASKS = ("oica", "measurement-error", "subsampled", "aggregated", "datagen")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


class DataFormatError(ValueError):
    """Malformed input data file; message carries the line number."""


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def _parse_scalar(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in text:
        return tuple(_parse_scalar(part.strip()) for part in text.split(",") if part.strip())
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text: str) -> dict:
    """Dotted-key config dict from ``key = value`` lines (# starts a comment)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _parse_scalar(value)
    return out


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


_DEFAULTS = {
    "seed": 0,
    "replications": 1,
    "data.recipe": "laplace",
    "data.csv": None,
    "model.source": "auto",
    "model.mog_m": 2,
    "model.tau": 0.5,
    "model.mlp_widths": (16, 16),
    "model.oracle_init": False,
    "model.oracle_noise": 0.5,
    "train.batch": 256,
    "train.iters": 2000,
    "train.lr": 1e-3,
    "train.lr_final": None,
    "train.lambda": None,
    "train.estimator": "biased",
    "train.avg_tail": 0.0,
    "train.warmup": 0,
    "kernel.scales": (0.25, 0.5, 1.0, 2.0, 4.0),
    "kernel.bandwidths": None,
}

_REQUIRED = {
    "oica": ("dims.p", "dims.d", "data.n"),
    "measurement-error": ("dims.n", "data.n"),
    "subsampled": ("dims.n", "data.t", "data.k"),
    "aggregated": ("dims.n", "data.t", "data.k", "data.l"),
    "datagen": ("datagen.kind",),
}


@dataclass
class ExperimentConfig:
    """Validated experiment description; ``raw`` echoes the config file."""

    task: str
    raw: dict

    def __getitem__(self, key):
        if key in self.raw:
            return self.raw[key]
        if key in _DEFAULTS:
            return _DEFAULTS[key]
        raise ConfigError(f"missing required field {key!r}")

    def get(self, key, default=None):
        return self.raw.get(key, _DEFAULTS.get(key, default))


def _expect(cfg: dict, key: str, types, predicate=None, what=""):
    if key not in cfg:
        raise ConfigError(f"missing required field {key!r}")
    val = cfg[key]
    if not isinstance(val, types) or isinstance(val, bool) and types is int:
        raise ConfigError(f"field {key!r} has invalid type {type(val).__name__}")
    if predicate is not None and not predicate(val):
        raise ConfigError(f"field {key!r} is out of range{': ' + what if what else ''}")
    return val


def validate_config(cfg: dict, task: str) -> ExperimentConfig:
    """Check presence/type/range of every field the task needs."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    declared = cfg.get("task")
    if declared is not None and declared != task:
        raise ConfigError(f"field 'task' is {declared!r} but the subcommand is {task!r}")
    if declared is None:
        raise ConfigError("missing required field 'task'")

    for key in _REQUIRED[task]:
        if key not in cfg and not (task in ("subsampled", "aggregated")
                                   and key == "data.t" and cfg.get("data.csv")):
            raise ConfigError(f"missing required field {key!r}")
    if "replications" in cfg:
        _expect(cfg, "replications", int, lambda v: v >= 1, ">= 1")
    if "seed" in cfg:
        _expect(cfg, "seed", int, lambda v: v >= 0, ">= 0")

    if task == "oica":
        p = _expect(cfg, "dims.p", int, lambda v: v >= 1)
        _expect(cfg, "dims.d", int, lambda v: v >= p, "d >= p")
        _expect(cfg, "data.n", int, lambda v: v >= 2)
        if cfg.get("data.recipe", "laplace") not in ("laplace", "mog"):
            raise ConfigError("field 'data.recipe' must be 'laplace' or 'mog'")
    elif task == "measurement-error":
        _expect(cfg, "dims.n", int, lambda v: v >= 2)
        _expect(cfg, "data.n", int, lambda v: v >= 2)
    elif task == "subsampled":
        _expect(cfg, "dims.n", int, lambda v: v >= 1)
        _expect(cfg, "data.k", int, lambda v: v >= 1)
        if not cfg.get("data.csv"):
            t = _expect(cfg, "data.t", int, lambda v: v >= 2)
            batch = cfg.get("train.batch", _DEFAULTS["train.batch"])
            if t < batch + 1:
                raise ConfigError(f"field 'data.t' must be >= train.batch+1={batch + 1}, got {t}")
    elif task == "aggregated":
        _expect(cfg, "dims.n", int, lambda v: v >= 1)
        _expect(cfg, "data.k", int, lambda v: v >= 1)
        ell = _expect(cfg, "data.l", int, lambda v: v >= 2, ">= 2")
        if not cfg.get("data.csv"):
            t = _expect(cfg, "data.t", int, lambda v: v >= 2)
            if t // ell < 2:
                raise ConfigError(f"field 'data.t' must fit >= 2 pieces of data.l={ell}, got {t}")
    elif task == "datagen":
        kind = _expect(cfg, "datagen.kind", str)
        if kind not in ("oica", "measurement-error", "subsampled", "aggregated"):
            raise ConfigError(f"field 'datagen.kind' has unknown value {kind!r}")

    for key in ("model.source",):
        if cfg.get(key, "auto") not in ("auto", "mlp", "mog"):
            raise ConfigError(f"field {key!r} must be auto|mlp|mog")
    for key in ("train.batch", "train.iters"):
        if key in cfg:
            _expect(cfg, key, int, lambda v: v >= 1)
    if cfg.get("train.batch", _DEFAULTS["train.batch"]) < 2:
        raise ConfigError("field 'train.batch' must be >= 2")
    for key in ("train.lr", "train.lr_final", "model.tau", "model.oracle_noise"):
        if key in cfg and cfg[key] is not None:
            _expect(cfg, key, (int, float), lambda v: v > 0, "> 0")
    if "train.lambda" in cfg and cfg["train.lambda"] is not None:
        _expect(cfg, "train.lambda", (int, float), lambda v: v >= 0, ">= 0")
    if "train.avg_tail" in cfg:
        _expect(cfg, "train.avg_tail", (int, float), lambda v: 0.0 <= v <= 1.0, "in [0, 1]")
    return ExperimentConfig(task=task, raw=dict(cfg))


def build_train_config(ec: ExperimentConfig, seed: int, default_lambda=None) -> TrainConfig:
    lam = ec.get("train.lambda")
    if lam is None:
        lam = default_lambda
    lr = float(ec["train.lr"])
    prox = ProxConfig(float(lam), lr) if lam is not None else None
    widths = ec["model.mlp_widths"]
    if isinstance(widths, int):
        widths = (widths,)
    bandwidths = ec.get("kernel.bandwidths")
    kernel = None
    if bandwidths is not None:
        bw = (bandwidths,) if isinstance(bandwidths, (int, float)) else tuple(bandwidths)
        kernel = KernelSpec(bw, estimator=ec["train.estimator"])
    scales = ec["kernel.scales"]
    if isinstance(scales, (int, float)):
        scales = (scales,)
    lr_final = ec.get("train.lr_final")
    return TrainConfig(batch=int(ec["train.batch"]), iters=int(ec["train.iters"]),
                       lr=lr, lr_final=None if lr_final is None else float(lr_final),
                       prox=prox, kernel=kernel, bandwidth_scales=tuple(scales),
                       estimator=ec["train.estimator"],
                       avg_tail_frac=float(ec["train.avg_tail"]),
                       warmup_iters=int(ec["train.warmup"]), seed=seed)


# ---------------------------------------------------------------------------
# CSV ingestion / export
# ---------------------------------------------------------------------------

def load_timeseries_csv(path: str):
    """(n x T matrix, column names) from a header + one-row-per-time-step CSV."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise DataFormatError(f"{path}: {e}") from e
    rows = [line for line in lines]
    if not rows or not rows[0].strip():
        raise DataFormatError(f"{path}: empty file")
    names = [c.strip() for c in rows[0].split(",")]
    width = len(names)
    body = []
    for lineno, line in enumerate(rows[1:], start=2):
        if line == "":
            continue
        cells = line.split(",")
        if len(cells) != width:
            raise DataFormatError(f"{path}: line {lineno}: expected {width} columns, got {len(cells)}")
        try:
            body.append([float(c) for c in cells])
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno}: non-numeric cell") from None
    if not body:
        raise DataFormatError(f"{path}: no data rows")
    return np.asarray(body, dtype=np.float64).T, names


def save_timeseries_csv(path: str, matrix, names=None):
    """Write an (n, T) matrix as header + one-row-per-time-step CSV.

    Floats use shortest round-trip formatting so re-ingestion is exact.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    n = matrix.shape[0]
    names = names or [f"x{i + 1}" for i in range(n)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for t in range(matrix.shape[1]):
            fh.write(",".join(repr(float(v)) for v in matrix[:, t]) + "\n")


# ---------------------------------------------------------------------------
# results document
# ---------------------------------------------------------------------------

def _matrix_doc(m) -> dict:
    m = np.asarray(m, dtype=np.float64)
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]),
            "data": [float(v) for v in m.reshape(-1)]}


def _matrix_undoc(doc) -> np.ndarray:
    return np.asarray(doc["data"], dtype=np.float64).reshape(doc["rows"], doc["cols"])


@dataclass
class ReplicationResult:
    seed: int
    mse: float | None          # None when diverged or no ground truth
    final_loss: float | None
    diverged: bool
    wall_time_s: float
    estimates: dict = field(default_factory=dict)   # name -> (rows, cols) array
    truths: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)


@dataclass
class RunResult:
    config: dict
    replications: list
    mean_mse: float | None
    median_mse: float | None
    diverged_count: int

    def to_dict(self) -> dict:
        reps = []
        for r in self.replications:
            reps.append({
                "seed": r.seed,
                "mse": r.mse,
                "final_loss": r.final_loss,
                "diverged": r.diverged,
                "estimates": {k: _matrix_doc(v) for k, v in r.estimates.items()},
                "truths": {k: _matrix_doc(v) for k, v in r.truths.items()},
                "notes": r.notes,
            })
        return {
            "config": self.config,
            "replications": reps,
            "aggregate": {"mean_mse": self.mean_mse, "median_mse": self.median_mse,
                          "diverged_count": self.diverged_count},
            "timing": {"wall_times_s": [r.wall_time_s for r in self.replications]},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunResult":
        reps = []
        for rd, wt in zip(doc["replications"], doc["timing"]["wall_times_s"]):
            reps.append(ReplicationResult(
                seed=rd["seed"], mse=rd["mse"], final_loss=rd["final_loss"],
                diverged=rd["diverged"], wall_time_s=wt,
                estimates={k: _matrix_undoc(v) for k, v in rd["estimates"].items()},
                truths={k: _matrix_undoc(v) for k, v in rd["truths"].items()},
                notes=dict(rd["notes"])))
        agg = doc["aggregate"]
        return cls(config=dict(doc["config"]), replications=reps,
                   mean_mse=agg["mean_mse"], median_mse=agg["median_mse"],
                   diverged_count=agg["diverged_count"])


def save_results(result: RunResult, path: str):
    """Persist a run as JSON; finite doubles round-trip bit-exactly."""
    doc = result.to_dict()
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, allow_nan=False)
            fh.write("\n")
    except OSError as e:
        raise OSError(f"cannot write results to {path}: {e}") from e


def load_results(path: str) -> RunResult:
    with open(path, "r", encoding="utf-8") as fh:
        return RunResult.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# experiment execution
# ---------------------------------------------------------------------------

def _oica_replication(ec: ExperimentConfig, seed: int) -> ReplicationResult:
    p, d, n = ec["dims.p"], ec["dims.d"], ec["data.n"]
    specs = synthdata.laplace_recipe(d) if ec["data.recipe"] == "laplace" \
        else synthdata.mog_recipe_oica(d)
    a_true, x = synthdata.gen_oica(p, d, n, specs=specs, seed=seed)
    cfg = build_train_config(ec, seed)
    rng = np.random.default_rng(seed + 10_000)
    gen = make_source_gen(d, n, kind=ec["model.source"], mog_m=ec["model.mog_m"],
                          tau=ec["model.tau"], widths=tuple(ec["model.mlp_widths"])
                          if not isinstance(ec["model.mlp_widths"], int) else (ec["model.mlp_widths"],),
                          rng=rng)
    init = a_true if ec["model.oracle_init"] else None
    model = oica.OicaModel.create(p, d, gen, rng=rng, init=init,
                                  init_noise=ec["model.oracle_noise"] if init is not None else 0.0)
    t0 = time.perf_counter()
    try:
        model, losses = oica.train(model, x, cfg)
    except TrainingDivergedError as e:
        return ReplicationResult(seed, None, None, True, time.perf_counter() - t0,
                                 notes={"diverged_at": e.iteration})
    wall = time.perf_counter() - t0
    err = evalign.aligned_mixing_mse(model.A.value, a_true)
    return ReplicationResult(seed, err, losses[-1], False, wall,
                             estimates={"A": model.A.value}, truths={"A": a_true})


def _measurement_replication(ec: ExperimentConfig, seed: int) -> ReplicationResult:
    n, n_obs = ec["dims.n"], ec["data.n"]
    b_true, x = synthdata.gen_measurement_error(n, n_obs, seed=seed)
    cfg = build_train_config(ec, seed, default_lambda=causal.DEFAULT_B_PROX_LAM)
    gen = make_source_gen(n, n_obs, kind=ec["model.source"], mog_m=ec["model.mog_m"],
                          tau=ec["model.tau"], rng=np.random.default_rng(seed + 10_000),
                          prefix="etilde")
    model = causal.MeasurementErrorModel.create(n, gen)
    t0 = time.perf_counter()
    try:
        model, losses = causal.train_measurement_error(x, cfg, model=model)
    except TrainingDivergedError as e:
        return ReplicationResult(seed, None, None, True, time.perf_counter() - t0,
                                 notes={"diverged_at": e.iteration})
    wall = time.perf_counter() - t0
    err = evalign.mse(model.B.value, b_true)
    return ReplicationResult(seed, err, losses[-1], False, wall,
                             estimates={"B": model.B.value}, truths={"B": b_true})


def _timeseries_data(ec: ExperimentConfig, seed: int, scheme: str):
    csv_path = ec.get("data.csv")
    if csv_path:
        data, _names = load_timeseries_csv(csv_path)
        return None, data
    ds = synthdata.gen_var_dataset(ec["dims.n"], ec["data.t"], ec["data.k"],
                                   scheme, seed=seed)
    return ds.C, ds.data


def _subsampled_replication(ec: ExperimentConfig, seed: int) -> ReplicationResult:
    c_true, data = _timeseries_data(ec, seed, "subsample")
    k = ec["data.k"]
    cfg = build_train_config(ec, seed)
    t0 = time.perf_counter()
    try:
        model, losses = causal.train_subsampled(data, k, cfg)
    except TrainingDivergedError as e:
        return ReplicationResult(seed, None, None, True, time.perf_counter() - t0,
                                 notes={"diverged_at": e.iteration})
    wall = time.perf_counter() - t0
    est = {"C": model.C.value}
    if c_true is None:
        return ReplicationResult(seed, None, losses[-1], False, wall, estimates=est)
    return ReplicationResult(seed, evalign.mse(model.C.value, c_true), losses[-1], False,
                             wall, estimates=est, truths={"C": c_true})


def _aggregated_replication(ec: ExperimentConfig, seed: int) -> ReplicationResult:
    c_true, data = _timeseries_data(ec, seed, "aggregate")
    k, ell = ec["data.k"], ec["data.l"]
    cfg = build_train_config(ec, seed)
    t0 = time.perf_counter()
    try:
        model, losses = causal.train_aggregated(data, k, ell, cfg)
    except TrainingDivergedError as e:
        return ReplicationResult(seed, None, None, True, time.perf_counter() - t0,
                                 notes={"diverged_at": e.iteration})
    wall = time.perf_counter() - t0
    est = {"C": model.C.value}
    notes = {"tail_dropped": model.tail_dropped}
    if c_true is None:
        return ReplicationResult(seed, None, losses[-1], False, wall, estimates=est, notes=notes)
    return ReplicationResult(seed, evalign.mse(model.C.value, c_true), losses[-1], False,
                             wall, estimates=est, truths={"C": c_true}, notes=notes)


_REPLICATION_FNS = {
    "oica": _oica_replication,
    "measurement-error": _measurement_replication,
    "subsampled": _subsampled_replication,
    "aggregated": _aggregated_replication,
}


def run_experiment(ec: ExperimentConfig, threads: int = 1) -> RunResult:
    """Execute every replication of a validated config; deterministic end to end.

    Replication r uses seed ``config seed + r`` and fresh data.  Diverged
    replications are recorded but excluded from the aggregates.
    """
    if ec.task not in _REPLICATION_FNS:
        raise ConfigError(f"task {ec.task!r} is not runnable")
    fn = _REPLICATION_FNS[ec.task]
    base_seed = ec["seed"]
    n_reps = ec["replications"]
    seeds = [base_seed + r for r in range(n_reps)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(lambda s: fn(ec, s), seeds))
    else:
        reps = [fn(ec, s) for s in seeds]
    errors = [r.mse for r in reps if not r.diverged and r.mse is not None]
    diverged = sum(r.diverged for r in reps)
    if diverged:
        print(f"warning: {diverged}/{n_reps} replications diverged", file=sys.stderr)
    mean = float(np.mean(errors)) if errors else None
    median = float(np.median(errors)) if errors else None
    return RunResult(config=dict(ec.raw), replications=reps,
                     mean_mse=mean, median_mse=median, diverged_count=diverged)


def run_datagen(ec: ExperimentConfig, out_path: str):
    """Generate one dataset per the config and write it as CSV (+ truth JSON)."""
    kind = ec["datagen.kind"]
    seed = ec["seed"]
    truth_doc = {"kind": kind, "seed": seed}
    if kind == "oica":
        specs = synthdata.laplace_recipe(ec["dims.d"]) if ec["data.recipe"] == "laplace" \
            else synthdata.mog_recipe_oica(ec["dims.d"])
        a_true, x = synthdata.gen_oica(ec["dims.p"], ec["dims.d"], ec["data.n"],
                                       specs=specs, seed=seed)
        truth_doc["A"] = _matrix_doc(a_true)
        data = x
    elif kind == "measurement-error":
        b_true, data = synthdata.gen_measurement_error(ec["dims.n"], ec["data.n"], seed=seed)
        truth_doc["B"] = _matrix_doc(b_true)
    else:
        scheme = "subsample" if kind == "subsampled" else "aggregate"
        ds = synthdata.gen_var_dataset(ec["dims.n"], ec["data.t"], ec["data.k"], scheme, seed=seed)
        truth_doc["C"] = _matrix_doc(ds.C)
        truth_doc["rescaled"] = ds.rescaled
        data = ds.data
    save_timeseries_csv(out_path, data)
    with open(out_path + ".truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth_doc, fh, indent=2)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmdica",
                                     description="kernel moment-matching ICA experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in TASKS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--replications", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.replications is not None:
            cfg["replications"] = args.replications
        ec = validate_config(cfg, args.command)
    except (ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "datagen":
            run_datagen(ec, args.out)
            return EXIT_OK
        result = run_experiment(ec, threads=args.threads)
    except DataFormatError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except synthdata.UnstableTransitionError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA

    save_results(result, args.out)
    if result.diverged_count == len(result.replications):
        print("error: every replication diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
