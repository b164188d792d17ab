"""Experiment orchestration behind the command-line interface.

A training run writes a self-contained directory::

    config.toml            copy of the experiment document
    data/{train,val,test}.csv
    checkpoint.json        (member_<i>.json for ensembles)
    train_log.jsonl
    metrics_<split>.json   one per split and per configured shift
    reliability_<split>.csv
    probe.csv, decay_monitor.json when probing is on
    manifest.json
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as datagen
from . import metrics, mlp, optim, posthoc, theory
from .config import ConfigError, ExperimentConfig, _sweep_point
from .losses import predictive_entropy

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def make_splits(cfg: ExperimentConfig) -> dict[str, datagen.Dataset]:
    d = cfg.data
    if d.kind == "csv":
        return read_splits(d.dir, d.K)
    if d.kind == "blobs":
        ds = datagen.gen_blobs(d.K, d.d, d.n, d.overlap, d.label_noise, d.seed)
    else:
        ds = datagen.gen_two_moons(d.n, d.noise_sd, d.seed)
    return dict(zip(SPLITS, datagen.split(ds, d.fractions, d.seed)))


def read_splits(directory, K: int | None = None) -> dict[str, datagen.Dataset]:
    root = Path(directory)
    missing = [s for s in SPLITS if not (root / f"{s}.csv").exists()]
    if missing:
        raise ConfigError(f"dataset directory {root} lacks {', '.join(m + '.csv' for m in missing)}")
    out = {s: datagen.read_csv_dataset(root / f"{s}.csv") for s in SPLITS}
    K = K or int(max(ds.labels.max() for ds in out.values())) + 1
    for ds in out.values():
        ds.meta["K"] = K
    return out


def write_splits(splits: dict[str, datagen.Dataset], directory) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    for name, ds in splits.items():
        datagen.write_csv_dataset(ds, root / f"{name}.csv")


def cmd_gen_data(cfg: ExperimentConfig, out) -> dict[str, datagen.Dataset]:
    splits = make_splits(cfg)
    write_splits(splits, out)
    return splits


def predictions(members: list[mlp.ModelParams], ds: datagen.Dataset) -> metrics.PredictionSet:
    return metrics.ensemble_predict(members, ds.features, ds.labels)


def evaluate_splits(members, splits: dict, cfg: ExperimentConfig, out) -> dict[str, dict]:
    """Metrics JSON and reliability CSV for every split and configured shift."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for name, ds in splits.items():
        preds = predictions(members, ds)
        block = metrics.metrics_block(preds, cfg.M)
        block["mean_entropy_py"] = float(predictive_entropy(preds.probs, preds.labels)[0].mean())
        results[name] = block
        (out / f"metrics_{name}.json").write_text(_dump(block))
        (out / f"reliability_{name}.csv").write_text(metrics.reliability_data(preds, cfg.M).to_csv())
    if "test" in splits and cfg.shifts:
        clean = predictions(members, splits["test"])
        for i, spec in enumerate(cfg.shifts):
            shifted = datagen.apply_shift(splits["test"], spec, seed=cfg.data.seed + 1000 + i)
            preds = predictions(members, shifted)
            block = metrics.metrics_block(preds, cfg.M)
            block["auroc_ood"] = metrics.auroc_ood(clean, preds)
            name = f"test_{spec.name}"
            results[name] = block
            (out / f"metrics_{name}.json").write_text(_dump(block))
            (out / f"reliability_{name}.csv").write_text(metrics.reliability_data(preds, cfg.M).to_csv())
    return results


def train_members(cfg: ExperimentConfig, splits, probe: bool = False):
    tr, va = splits["train"], splits["val"]
    spec = mlp.MlpSpec(cfg.layer_sizes(tr.d, tr.K), seed=cfg.train.seed)
    if cfg.ensemble > 1:
        members, logs = optim.train_ensemble(spec, tr.features, tr.labels, cfg.train, cfg.ensemble,
                                             val=(va.features, va.labels))
        return members, logs
    params, trlog = optim.train(spec, tr.features, tr.labels, cfg.train,
                                val=(va.features, va.labels), probe=probe)
    return [params], [trlog]


def probe_geomeans(trlog: optim.TrainingLog) -> tuple[np.ndarray, np.ndarray]:
    """Per-step geometric means of ``(p_y, p_tilde)`` over each mini-batch."""
    p, pt = [], []
    for t in trlog.traces:
        if t.p_y is not None:
            p.append(theory.geometric_mean(np.maximum(t.p_y, 1e-300)))
            pt.append(theory.geometric_mean(np.maximum(t.p_tilde, 1e-300)))
    return np.asarray(p), np.asarray(pt)


def cmd_train(cfg: ExperimentConfig, out, probe: bool = False) -> dict:
    """Train, checkpoint and evaluate. Returns the manifest; status != ok on divergence."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    splits = make_splits(cfg)
    (out / "config.toml").write_text(cfg.source)
    write_splits(splits, out / "data")
    try:
        members, logs = train_members(cfg, splits, probe)
    except optim.DivergenceError as e:
        manifest = {"status": "diverged", "message": str(e)}
        (out / "manifest.json").write_text(_dump(manifest))
        return manifest
    files = []
    for i, m in enumerate(members):
        name = "checkpoint.json" if len(members) == 1 else f"member_{i}.json"
        mlp.save(m, out / name)
        files.append(name)
    (out / "train_log.jsonl").write_text("".join(lg.to_jsonl() for lg in logs))
    manifest = {"status": logs[0].status, "message": logs[0].message, "checkpoints": files}
    if probe and logs[0].traces:
        (out / "probe.csv").write_text(logs[0].probe_csv())
        p, pt = probe_geomeans(logs[0])
        report = theory.decay_monitor(p, pt, cfg.train.rho).to_dict()
        report["late"] = theory.decay_monitor(p, pt, cfg.train.rho, tail=0.25).to_dict()
        (out / "decay_monitor.json").write_text(_dump(report))
    if manifest["status"] == "ok":
        manifest["metrics"] = evaluate_splits(members, splits, cfg, out)
    (out / "manifest.json").write_text(_dump(manifest))
    return manifest


def load_members(paths) -> list[mlp.ModelParams]:
    return [mlp.load(p) for p in paths]


def cmd_evaluate(checkpoints, splits, cfg: ExperimentConfig, out) -> dict:
    members = load_members(checkpoints)
    return evaluate_splits(members, splits, cfg, out)


def cmd_calibrate(checkpoints, splits, method: str, out, M: int = 15) -> dict:
    """Fit a calibrator on val, report pre/post metrics on test."""
    if method not in ("temperature", "isotonic"):
        raise ConfigError(f"calibration method must be temperature or isotonic, got {method!r}")
    members = load_members(checkpoints)
    val, test = predictions(members, splits["val"]), predictions(members, splits["test"])
    return calibrate_predictions(val, test, method, out, M)


def calibrate_predictions(val, test, method: str, out, M: int = 15) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if method == "temperature":
        if val.logits is None or test.logits is None:
            raise ConfigError("temperature scaling needs logits (single-model predictions)")
        model = posthoc.fit_temperature(val)
        after = posthoc.apply_temperature(test, model)
    else:
        model = posthoc.fit_isotonic(val)
        after = posthoc.apply_isotonic(test, model)
    pre, post = metrics.metrics_block(test, M), metrics.metrics_block(after, M)
    report = {"method": method, "calibrator": model.to_dict(), "pre": pre, "post": post}
    if method == "temperature":
        report["tce"] = post["ece"]
    (out / "calibrator.json").write_text(posthoc.calibrator_to_json(model) + "\n")
    (out / "calibration_report.json").write_text(_dump(report))
    return report


def cmd_theory(out, n1: int = 100_000, n3: int = 100_000, n2: int = 10_000, seed: int = 0,
               probe_cfg: ExperimentConfig | None = None) -> dict:
    """Sampling suites, the lambda landscape and the out-of-region gating check."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {
        "entropy_bound": theory.entropy_bound_suite(n1, seed),
        "damped_bound": theory.damped_bound_suite(n3, seed),
        "batch_bound": theory.batch_bound_suite(n2, seed=seed),
    }
    rows = theory.lambda_landscape()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rho", "p_tilde", "lambda_lb"])
    for r, q, v in rows:
        w.writerow([repr(r), repr(q), "" if v is None else repr(float(v))])
    (out / "lambda_landscape.csv").write_text(buf.getvalue())
    summary["lambda"] = {"monotone": theory.landscape_monotone(rows),
                         "rho0_all_ones": all(v == 1.0 for r, _, v in rows if r == 0.0)}
    # a pair with pt > p lies outside the bound's region; it is reported, not failed
    forced = theory.check_entropy_bound(0.5, 0.9)
    summary["out_of_region_probe"] = {"p": 0.5, "p_tilde": 0.9, "holds": forced.holds,
                                      "slack": forced.slack, "status": "out_of_region"}
    if probe_cfg is not None:
        splits = make_splits(probe_cfg)
        tr = splits["train"]
        spec = mlp.MlpSpec(probe_cfg.layer_sizes(tr.d, tr.K), seed=probe_cfg.train.seed)
        _, trlog = optim.train(spec, tr.features, tr.labels, probe_cfg.train, probe=True)
        p, pt = probe_geomeans(trlog)
        if p.size:
            summary["decay_monitor"] = theory.decay_monitor(p, pt, probe_cfg.train.rho, tail=0.25).to_dict()
    violations = sum(summary[k]["violations"] for k in ("entropy_bound", "batch_bound", "damped_bound"))
    summary["total_violations"] = violations + (0 if summary["lambda"]["monotone"] else 1)
    (out / "theory_summary.json").write_text(_dump(summary))
    return summary


SWEEP_COLUMNS = ["param", "value", "seed", "status", "test_acc", "ece", "nll", "mean_entropy_py"]


def sweep_run(cfg: ExperimentConfig, value, seed: int, splits) -> dict:
    train_cfg = replace(_sweep_point(cfg.train, cfg.sweep_param, value), seed=seed)
    tr, te = splits["train"], splits["test"]
    spec = mlp.MlpSpec(cfg.layer_sizes(tr.d, tr.K), seed=seed)
    row = {"param": cfg.sweep_param, "value": value, "seed": seed}
    try:
        params, trlog = optim.train(spec, tr.features, tr.labels, train_cfg)
    except (optim.DivergenceError, ValueError) as e:
        return {**row, "status": f"failed: {e}"}
    if trlog.status != "ok":
        return {**row, "status": trlog.status}
    preds = predictions([params], te)
    return {**row, "status": "ok", "test_acc": metrics.accuracy(preds), "ece": metrics.ece(preds, cfg.M)[0],
            "nll": metrics.nll(preds),
            "mean_entropy_py": float(predictive_entropy(preds.probs, preds.labels)[0].mean())}


def cmd_sweep(cfg: ExperimentConfig, out) -> list[dict]:
    """One run per (value, seed); seeds are ``train.seed + i``. Failures are marked, not fatal."""
    if cfg.sweep_param is None:
        raise ConfigError("sweep requires [sweep] param and values")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    splits = make_splits(cfg)
    rows = [sweep_run(cfg, v, cfg.train.seed + i, splits)
            for v in cfg.sweep_values for i in range(cfg.sweep_seeds)]
    buf = io.StringIO()
    w = csv.DictWriter(buf, SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    (out / "sweep.csv").write_text(buf.getvalue())
    return rows
