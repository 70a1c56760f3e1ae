"""Run orchestration: build the objective, train, evaluate, persist artifacts.

A run directory holds everything needed to repeat the run bit-identically:

    config.json        resolved configuration (after profile/file/flag merge)
    environment.json   interpreter and library versions
    metrics.csv        one RunRecord row per epoch, starting with epoch 0
    summary.json       final and best metrics
    params.npy         final parameters
    inner_trace.jsonl  per-update SGLD diagnostics (trace_inner)
    angle_trace.csv    per-update gradient angles (trace_angle)
    divergence.json    written instead of summary.json when training blows up
"""
from __future__ import annotations

import csv
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import data as data_mod
from ..analysis import gradient_angle, spectrum_report
from ..errors import ArgumentError, DivergenceError, EntropySgdError, NumericError
from ..net import HESSIAN_CAP, MlpObjective, MlpSpec, exact_hessian, fisher_diagonal, init_params
from ..objective import sample_minibatch, subsample, train_val_split
from ..optimize import (
    RUN_RECORD_FIELDS,
    OptimizerState,
    RunRecord,
    adam_step,
    entropy_adam_step,
    entropy_sgd_step,
    gamma_at,
    sgd_step,
    sgld_baseline_step,
)
from .config import ExperimentConfig, validate

log = logging.getLogger(__name__)

STEP_FUNCTIONS = {
    "sgd": sgd_step,
    "adam": adam_step,
    "sgld": sgld_baseline_step,
    "entropy-sgd": entropy_sgd_step,
    "entropy-adam": entropy_adam_step,
}

NAN = float("nan")


# ---------------------------------------------------------------------------
# data and model
# ---------------------------------------------------------------------------


def build_datasets(cfg):
    """Return ``(train, val, note)`` for the configured dataset."""
    if cfg.dataset == "mnist":
        train = data_mod.load_mnist_dir(cfg.data_path, "train")
        val = data_mod.load_mnist_dir(cfg.data_path, "test")
        note = "validation error is measured on the MNIST test set"
    else:
        if cfg.dataset == "mnist5k":
            full = data_mod.load_mnist5k(cfg.data_path)
        elif cfg.dataset == "csv":
            full = data_mod.read_csv_dataset(cfg.data_path)
        else:
            full = data_mod.make_blobs(cfg.synthetic_n, cfg.synthetic_dim, cfg.synthetic_classes, seed=cfg.data_seed)
        train, val = train_val_split(full, cfg.val_fraction, cfg.data_seed, cfg.stratified)
        note = f"validation error is measured on a held-out {cfg.val_fraction:g} split of {cfg.dataset}"
    if cfg.train_size is not None and cfg.train_size < train.n:
        train = subsample(train, cfg.train_size, cfg.data_seed, cfg.stratified)
    if cfg.input_pool:
        train, val = data_mod.pool_images(train), data_mod.pool_images(val)
    return train, val, note


def build_model(cfg, train):
    spec = MlpSpec((train.input_dim, *cfg.hidden_sizes, train.num_classes), cfg.dropout)
    return MlpObjective(spec, train)


def environment_stamp():
    import scipy

    from .. import __version__

    return {
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "entropy_sgd": __version__,
        "argv": sys.argv,
    }


# ---------------------------------------------------------------------------
# single run
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    run_dir: Path
    summary: dict
    records: list = field(default_factory=list)
    x: np.ndarray = None


def _fmt(value):
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def write_metrics(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RUN_RECORD_FIELDS)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, name)) for name in RUN_RECORD_FIELDS])


def read_metrics(path):
    """Rows of a metrics CSV as dicts of floats (``epoch`` and ``seed`` as ints)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed = {k: float(v) for k, v in row.items()}
        for k in ("epoch", "effective_epochs", "seed"):
            parsed[k] = int(parsed[k])
        out.append(parsed)
    return out


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _probe_point(state, cfg):
    # the point at which the optimizer evaluates its direction
    if cfg.optimizer == "entropy-sgd" and cfg.momentum > 0 and cfg.nesterov:
        return state.x + cfg.momentum * state.velocity
    return state.x


def run_experiment(cfg, out_dir=None):
    """Train according to ``cfg`` and write the run directory.

    One epoch is ``steps_per_epoch`` (default ``max(1, N // m)``) parameter
    updates; effective epochs multiply that by ``L`` for the entropy
    optimizers.  Validation error is evaluated after every epoch.  Raises
    :class:`DivergenceError` after writing ``divergence.json``.
    """
    if not isinstance(cfg, ExperimentConfig):
        cfg = validate(cfg)
    run_dir = Path(out_dir) if out_dir is not None else cfg.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = cfg.model_copy(update={"out_dir": str(run_dir)})
    (run_dir / "config.json").write_text(snapshot.to_json() + "\n")
    _write_json(run_dir / "environment.json", environment_stamp())

    train, val, note = build_datasets(cfg)
    obj = build_model(cfg, train)
    opt_cfg = cfg.optimizer_config()
    step = STEP_FUNCTIONS[cfg.optimizer]
    m = min(cfg.batch_size, train.n)
    steps = cfg.steps_per_epoch or max(1, train.n // m)
    inner = cfg.inner_steps

    rng = np.random.default_rng(cfg.seed)
    state = OptimizerState.create(init_params(obj.spec, rng))
    # angle probes use their own stream so tracing never perturbs training
    angle_rng = np.random.default_rng([cfg.seed, 1])
    trace_angle = cfg.trace_angle and cfg.is_entropy
    inner_fh = open(run_dir / "inner_trace.jsonl", "w") if cfg.trace_inner and cfg.is_entropy else None
    angle_rows = []

    start = time.perf_counter()

    def record(epoch, grad_norm, angle):
        loss = obj.full_loss(state.x)
        _, err = obj.evaluate(state.x, val)
        gamma = gamma_at(opt_cfg.schedule, state.t) if cfg.is_entropy else NAN
        return RunRecord(
            epoch, epoch * inner, float(loss), float(err), float(gamma), float(grad_norm), float(angle),
            (time.perf_counter() - start) * 1e3, cfg.seed,
        )

    records = [record(0, NAN, NAN)]
    try:
        for epoch in range(cfg.epochs):
            state.epoch = epoch
            norms, angles = [], []
            for _ in range(steps):
                if trace_angle:
                    probe = _probe_point(state, cfg)
                    batch = sample_minibatch(obj, m, angle_rng)
                    g_sgd = obj.batch_loss_grad(probe, batch)[1]
                step(state, obj, opt_cfg, m, rng)
                norms.append(float(np.linalg.norm(state.last_direction)))
                if trace_angle:
                    try:
                        angles.append(gradient_angle(state.last_direction, g_sgd))
                    except ArgumentError:
                        angles.append(NAN)
                    angle_rows.append((state.t, angles[-1]))
                if inner_fh is not None:
                    row = {"update": state.t, "gamma": state.gamma, **state.last_diagnostics}
                    inner_fh.write(json.dumps(row, sort_keys=True) + "\n")
            angle = float(np.mean(angles)) if angles else NAN
            records.append(record(epoch + 1, float(np.mean(norms)), angle))
            rec = records[-1]
            log.info("epoch %d loss %.5f val_err %.2f%%", rec.epoch, rec.train_loss, rec.val_error_pct)
            if cfg.stop_train_loss is not None and rec.train_loss < cfg.stop_train_loss:
                break
    except (DivergenceError, NumericError) as exc:
        write_metrics(run_dir / "metrics.csv", records)
        _write_json(run_dir / "divergence.json", {
            "status": "diverged",
            "message": str(exc),
            "update": state.t,
            "inner_step": getattr(exc, "step", None),
            "layer": getattr(exc, "layer", None),
            "epoch": state.epoch,
            "last_record": asdict(records[-1]),
        })
        if isinstance(exc, DivergenceError):
            raise
        raise DivergenceError(str(exc), step=state.t) from exc
    finally:
        if inner_fh is not None:
            inner_fh.close()

    write_metrics(run_dir / "metrics.csv", records)
    if trace_angle:
        with open(run_dir / "angle_trace.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["update", "angle_deg"])
            writer.writerows((u, repr(a)) for u, a in angle_rows)
    np.save(run_dir / "params.npy", state.x)

    final = records[-1]
    summary = {
        "status": "ok",
        "name": cfg.name,
        "optimizer": cfg.optimizer,
        "model": obj.spec.describe(),
        "n_params": obj.dim,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "epochs_run": final.epoch,
        "L": inner,
        "steps_per_epoch": steps,
        "batch_size": m,
        "effective_epochs": final.effective_epochs,
        "n_train": train.n,
        "n_val": val.n,
        "initial_train_loss": records[0].train_loss,
        "initial_val_error_pct": records[0].val_error_pct,
        "final_train_loss": final.train_loss,
        "final_val_error_pct": final.val_error_pct,
        "best_val_error_pct": min(r.val_error_pct for r in records[1:]) if len(records) > 1 else final.val_error_pct,
        "validation_note": note,
        "wall_ms": final.wall_ms,
    }
    _write_json(run_dir / "summary.json", summary)
    return RunResult(run_dir, summary, records, state.x)


def load_run(run_dir):
    """Rebuild ``(cfg, objective, val, x)`` from a finished run directory."""
    run_dir = Path(run_dir)
    cfg = ExperimentConfig.from_json((run_dir / "config.json").read_text())
    train, val, _ = build_datasets(cfg)
    obj = build_model(cfg, train)
    x = np.load(run_dir / "params.npy")
    if x.shape != (obj.dim,):
        raise EntropySgdError(f"params.npy has shape {x.shape}, model expects ({obj.dim},)")
    return cfg, obj, val, x


def run_spectrum(run_dir, source="auto", cap=HESSIAN_CAP, workers=1):
    """Eigenspectrum at a run's final parameters; writes ``spectrum.csv`` and ``spectrum.json``."""
    run_dir = Path(run_dir)
    _, obj, _, x = load_run(run_dir)
    if source == "auto":
        source = "exact" if obj.dim <= cap else "fisher"
    if source == "exact":
        report = spectrum_report(exact_hessian(obj, x, cap=cap, workers=workers))
    elif source == "fisher":
        report = spectrum_report(fisher_diag=fisher_diagonal(obj, x))
    else:
        raise ArgumentError(f"unknown spectrum source {source!r}")
    extra = {"train_loss": float(obj.full_loss(x)), "run_dir": str(run_dir)}
    report.write(run_dir / "spectrum.csv", run_dir / "spectrum.json", extra)
    return report


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

SUITE_FIELDS = [
    "name", "model", "optimizer", "n_runs", "n_failed", "seeds", "effective_epochs",
    "val_error_mean", "val_error_std", "val_error", "best_val_error_min", "failures",
]
RUN_FIELDS = ["name", "seed", "run_dir", "status", "final_val_error_pct", "best_val_error_pct", "error"]


def _suite_worker(payload):
    cfg_json, run_dir = payload
    try:
        run_experiment(ExperimentConfig.from_json(cfg_json), run_dir)
        return run_dir, None
    except Exception as exc:  # a failed run is recorded, not fatal
        return run_dir, f"{type(exc).__name__}: {exc}"


def mean_std(values):
    """Mean and sample standard deviation (``ddof=1``; 0 for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return NAN, NAN
    return float(np.mean(v)), float(np.std(v, ddof=1)) if v.size > 1 else 0.0


def format_mean_std(mean, std):
    return f"{mean:.2f} ± {std:.2f}"


def run_suite(configs, out_dir, jobs=1):
    """Run every config and aggregate final validation error by config name.

    Writes ``suite.csv`` (one row per name) and ``runs.csv`` (one row per
    run) under ``out_dir`` and returns the aggregated rows.  A failing run is
    listed in its group's ``failures`` column; the rest carry on.
    """
    if not configs:
        raise ArgumentError("a suite needs at least one config")
    configs = [c if isinstance(c, ExperimentConfig) else validate(c) for c in configs]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payloads, seen = [], set()
    for cfg in configs:
        run_dir = out_dir / f"{cfg.name}-s{cfg.seed}"
        k = 1
        while run_dir in seen:
            k += 1
            run_dir = out_dir / f"{cfg.name}-s{cfg.seed}-{k}"
        seen.add(run_dir)
        payloads.append((cfg.to_json(), str(run_dir)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_suite_worker, payloads))
    else:
        outcomes = [_suite_worker(p) for p in payloads]

    groups, per_run = {}, []
    for cfg, (run_dir, error) in zip(configs, outcomes):
        groups.setdefault(cfg.name, []).append((cfg, Path(run_dir), error))
        per_run.append(_run_row(cfg, Path(run_dir), error))
    rows = [aggregate_group(name, members) for name, members in groups.items()]
    with open(out_dir / "suite.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, SUITE_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    with open(out_dir / "runs.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, RUN_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(per_run)
    return rows


def _run_row(cfg, run_dir, error):
    row = {"name": cfg.name, "seed": cfg.seed, "run_dir": str(run_dir), "status": "failed" if error else "ok",
           "final_val_error_pct": "", "best_val_error_pct": "", "error": error or ""}
    if error is None:
        rows = read_metrics(run_dir / "metrics.csv")
        row["final_val_error_pct"] = repr(rows[-1]["val_error_pct"])
        row["best_val_error_pct"] = repr(_best(rows))
    return row


def _best(rows):
    return min(r["val_error_pct"] for r in rows[1:]) if len(rows) > 1 else rows[-1]["val_error_pct"]


def aggregate_group(name, members):
    finals, bests, seeds, failures, eff, model = [], [], [], [], "", ""
    for cfg, run_dir, error in members:
        if error is not None:
            failures.append(f"seed {cfg.seed}: {error}")
            continue
        rows = read_metrics(run_dir / "metrics.csv")
        finals.append(rows[-1]["val_error_pct"])
        bests.append(_best(rows))
        seeds.append(cfg.seed)
        eff = rows[-1]["effective_epochs"]
        model = json.loads((run_dir / "summary.json").read_text())["model"]
    mean, std = mean_std(finals)
    return {
        "name": name,
        "model": model,
        "optimizer": members[0][0].optimizer,
        "n_runs": len(finals),
        "n_failed": len(failures),
        "seeds": " ".join(str(s) for s in seeds),
        "effective_epochs": eff,
        "val_error_mean": repr(mean),
        "val_error_std": repr(std),
        "val_error": format_mean_std(mean, std) if finals else "",
        "best_val_error_min": repr(min(bests)) if bests else repr(NAN),
        "failures": "; ".join(failures),
    }


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------


def _run_ids(run_dirs):
    ids, used = [], {}
    for d in run_dirs:
        base = Path(d).name or "run"
        used[base] = used.get(base, 0) + 1
        ids.append(base if used[base] == 1 else f"{base}-{used[base]}")
    return ids


def emit_plot_data(run_dirs, out_dir, smoothing_csv=None):
    """Write tidy plotting CSVs; no rendering.

    ``curves.csv`` has an ``effective_epochs`` column and, per run, the
    columns ``<run>/train_loss`` and ``<run>/val_error_pct``, outer-joined on
    effective epochs (blank where a run has no row).  With ``smoothing_csv``
    (``gamma,x,negF`` rows) a wide ``smoothing_curves.csv`` with one column
    per scope is added.  Returns the written paths by kind.
    """
    if isinstance(run_dirs, (str, os.PathLike)):
        run_dirs = [run_dirs]
    out_dir = Path(out_dir)
    series = {}
    for rid, d in zip(_run_ids(run_dirs), run_dirs):
        path = Path(d) / "metrics.csv"
        if not path.is_file():
            raise FileNotFoundError(f"missing run artifact: {path}")
        series[rid] = {r["effective_epochs"]: r for r in read_metrics(path)}
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    abscissa = sorted({e for s in series.values() for e in s})
    header = ["effective_epochs"] + [f"{rid}/{col}" for rid in series for col in ("train_loss", "val_error_pct")]
    with open(out_dir / "curves.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for e in abscissa:
            row = [str(e)]
            for s in series.values():
                r = s.get(e)
                row += [repr(r["train_loss"]), repr(r["val_error_pct"])] if r else ["", ""]
            writer.writerow(row)
    written["curves"] = out_dir / "curves.csv"
    if smoothing_csv is not None:
        written["smoothing"] = widen_smoothing(smoothing_csv, out_dir / "smoothing_curves.csv")
    return written


def widen_smoothing(tidy_csv, out_path):
    """Pivot ``gamma,x,negF`` rows into ``x, gamma=<g>...`` columns."""
    with open(tidy_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"gamma", "x", "negF"}:
        raise EntropySgdError(f"{tidy_csv}: expected gamma,x,negF columns")
    gammas, table = [], {}
    for r in rows:
        g, x = r["gamma"], r["x"]
        if g not in gammas:
            gammas.append(g)
        table.setdefault(x, {})[g] = r["negF"]
    xs = sorted(table, key=float)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x"] + [f"gamma={g}" for g in gammas])
        for x in xs:
            writer.writerow([x] + [table[x].get(g, "") for g in gammas])
    return Path(out_path)
