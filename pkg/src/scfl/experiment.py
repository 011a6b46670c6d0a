"""Build a full simulation from a config and write its outputs."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis
from .coding import CodedDataset, CodingConfig, PrivacyReport, calibrate_sigma, encode_dataset, privacy_budget
from .config import AUTO, SWEEP_AXES, ExperimentConfig, config_hash, parse_axis_value
from .data import (
    BoundEstimates,
    FederatedDataset,
    compute_bounds,
    generate_synthetic,
    iid_partition,
    read_feature_file,
    rffm_transform,
    skewed_partition,
)
from .engine import CFL_FB, FL_PMA, RunRecord, StrategyConfig, resolve_batches, train
from .errors import ConfigError, DivergenceError, InfiniteLeakageError, ScflError
from .network import DelayProfile, deadline_candidates, sample_profile
from .numerics import RngStream

log = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "clock_s", "n_arrived", "loss", "gap", "grad_norm")
SUMMARY_KEYS = ("strategy", "config_hash", "seed", "epsilon", "rho", "final_loss",
                "final_gap", "total_time_s", "diverged")


class VerificationFailed(ScflError):
    def __init__(self, names):
        super().__init__(f"{len(names)} hard check(s) failed: {', '.join(names)}")
        self.names = list(names)


class SweepPointFailed(ScflError):
    def __init__(self, points):
        super().__init__(f"sweep points failed: {', '.join(points)}; see their error.json")
        self.points = list(points)


@dataclass
class Simulation:
    config: ExperimentConfig
    root: RngStream
    dataset: FederatedDataset
    optimum: analysis.Optimum
    bounds: BoundEstimates
    coding: CodingConfig
    coded: CodedDataset
    profile: DelayProfile
    strategy: StrategyConfig


def build_dataset(cfg: ExperimentConfig, root: RngStream) -> FederatedDataset:
    d = cfg.data
    if d.feature_file:
        x, y = read_feature_file(d.feature_file)
    else:
        x, y, _ = generate_synthetic(root.child("data"), d.m, d.d, d.o, d.noise_std,
                                     d.ground_truth_scale)
    if d.rffm:
        x = rffm_transform(root.child("rffm"), x, d.rffm_dim, d.rffm_bandwidth)
    peak = float(np.max(np.abs(x)))
    if peak > 1.0:
        log.info("rescaling features by %g so every entry lies in [-1, 1]", peak)
        x = x / peak
    if d.skew:
        parts = skewed_partition(y, d.n)
    else:
        parts = iid_partition(root.child("partition"), x.shape[0], d.n)
    return FederatedDataset(x, y, parts)


def build_profile(cfg: ExperimentConfig, root: RngStream, dataset: FederatedDataset) -> DelayProfile:
    net = cfg.network
    size = dataset.d * dataset.o
    n_mac = 2.0 * size if net.n_mac_per_sample == AUTO else net.n_mac_per_sample
    payload = 64.0 * size if net.payload_bits == AUTO else net.payload_bits
    model = 64.0 * size if net.model_bits == AUTO else net.model_bits
    if net.profile == "explicit":
        erasure = net.erasure_probs or (net.erasure_prob,) * dataset.n
        return DelayProfile(net.mac_rates, net.uplink_rates, tuple(erasure), net.downlink_rate,
                            net.server_mac_rate, n_mac, payload, model)
    prof = sample_profile(root.child("profile"), dataset.n, n_mac_per_sample=n_mac,
                          payload_bits=payload, model_bits=model, erasure_prob=net.erasure_prob,
                          downlink_rate=net.downlink_rate, server_mac_rate=net.server_mac_rate)
    if net.erasure_probs is not None:
        prof = DelayProfile.from_dict({**prof.to_dict(), "erasure_probs": net.erasure_probs})
    return prof


def resolve_coding(cfg: ExperimentConfig, dataset: FederatedDataset) -> CodingConfig:
    c = cfg.coding
    if cfg.strategy.kind == CFL_FB:
        return CodingConfig(c.c, 0.0, c.noise_convention)
    if c.target_epsilon is not None:
        sigma = calibrate_sigma(dataset, c.c, c.target_epsilon, c.noise_convention)
    else:
        sigma = c.sigma
    return CodingConfig(c.c, sigma, c.noise_convention)


def build_strategy(cfg: ExperimentConfig) -> StrategyConfig:
    s = cfg.strategy
    return StrategyConfig(
        kind=s.kind,
        deadline=cfg.run.deadline,
        server_batch=None if s.server_batch == AUTO else s.server_batch,
        client_batches=None if s.client_batch == AUTO else s.client_batch,
        psi=s.psi,
        learning_rate=s.learning_rate,
        project=None if s.project == AUTO else s.project,
    )


def build(cfg: ExperimentConfig) -> Simulation:
    root = RngStream(cfg.seed)
    dataset = build_dataset(cfg, root)
    optimum = analysis.least_squares_optimum(dataset)
    phi = cfg.data.phi
    if phi == AUTO:
        phi = 10.0 * float(np.linalg.norm(optimum.w_star)) or 1.0
    bounds = compute_bounds(dataset, phi)
    coding = resolve_coding(cfg, dataset)
    coded = encode_dataset(root.child("coding"), dataset, coding)
    profile = build_profile(cfg, root, dataset)
    return Simulation(cfg, root, dataset, optimum, bounds, coding, coded, profile,
                      build_strategy(cfg))


def privacy_of(sim: Simulation) -> PrivacyReport | None:
    if sim.strategy.kind == FL_PMA:
        return None
    try:
        return privacy_budget(sim.dataset, sim.coding)
    except InfiniteLeakageError:
        return None


def simulate(sim: Simulation) -> RunRecord:
    return train(sim.dataset, sim.coded, sim.profile, sim.strategy, sim.config.run.epochs,
                 sim.root.child("train"), bounds=sim.bounds, f_star=sim.optimum.f_star)


# ------------------------------------------------------------------ output

def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def format_real(v) -> str:
    return format(float(v), ".17g")


def record_csv(record: RunRecord, extra: str | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS + (("axis_value",) if extra is not None else ()))
    for e in record.epochs:
        row = [e.epoch, format_real(e.clock_s), e.n_arrived, format_real(e.loss),
               format_real(e.gap), format_real(e.grad_norm)]
        if extra is not None:
            row.append(extra)
        w.writerow(row)
    return buf.getvalue()


def summary_dict(sim: Simulation, record: RunRecord) -> dict:
    priv = privacy_of(sim)
    out = {
        "strategy": record.strategy,
        "config_hash": config_hash(sim.config),
        "seed": sim.config.seed,
        "epsilon": None if priv is None else _num(priv.epsilon),
        "rho": _num(record.rho),
        "final_loss": _num(record.final_loss),
        "final_gap": _num(record.final_gap),
        "total_time_s": _num(record.total_time_s),
        "diverged": record.diverged,
        "sigma": sim.coding.sigma,
        "f_star": _num(record.f_star),
        "epochs": len(record.epochs),
        "kappa_violations": record.kappa_violations,
        "config": _jsonable(sim.config.as_dict()),
    }
    out["config"]["run"].pop("output_dir", None)
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, tuple):
        return [_jsonable(v) for v in obj]
    return obj


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def write_error(out_dir: Path, exc: Exception) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"error": type(exc).__name__, "message": str(exc)}
    key = getattr(exc, "key", None)
    if key:
        payload["key"] = key
    if isinstance(exc, DivergenceError):
        payload["epoch"] = exc.epoch
    (out_dir / "error.json").write_text(dump_json(payload), encoding="utf-8")


def run_experiment(cfg: ExperimentConfig, out_dir=None, axis_value: str | None = None) -> int:
    """Write ``epochs.csv`` and ``summary.json``; ``error.json`` plus exit 1 on failure."""
    out = Path(out_dir if out_dir is not None else cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "error.json").unlink(missing_ok=True)
    try:
        sim = build(cfg)
        try:
            record = simulate(sim)
            failure = None
        except DivergenceError as exc:
            record, failure = exc.record, exc
    except ScflError as exc:
        write_error(out, exc)
        return 1
    (out / "epochs.csv").write_text(record_csv(record, axis_value), encoding="utf-8")
    summary = summary_dict(sim, record)
    if axis_value is not None:
        summary["axis_value"] = axis_value
    (out / "summary.json").write_text(dump_json(summary), encoding="utf-8")
    if failure is not None:
        write_error(out, failure)
        return 1
    return 0


def _sweep_point(args):
    cfg, out_dir, label = args
    return run_experiment(cfg, out_dir, axis_value=label)


def run_sweep(cfg: ExperimentConfig, axis: str, values, out_dir=None, jobs: int = 1) -> int:
    """One paired-seed run per value, merged into ``sweep.csv`` in value order."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"not sweepable; choose from {', '.join(sorted(SWEEP_AXES))}", key=axis)
    section, key = SWEEP_AXES[axis]
    out = Path(out_dir if out_dir is not None else cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "error.json").unlink(missing_ok=True)
    jobs_list = []
    for k, text in enumerate(values):
        value = parse_axis_value(axis, text)
        label = str(value) if not isinstance(value, float) else repr(value)
        point_cfg = cfg.with_value(section, key, value)
        jobs_list.append((point_cfg, out / f"{axis}_{k:03d}", label))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            codes = list(pool.map(_sweep_point, jobs_list))
    else:
        codes = [_sweep_point(j) for j in jobs_list]

    header_done = False
    merged = []
    summaries = []
    for (_, point_dir, _), code in zip(jobs_list, codes):
        csv_path = point_dir / "epochs.csv"
        if csv_path.exists():
            lines = csv_path.read_text(encoding="utf-8").splitlines(keepends=True)
            merged.extend(lines if not header_done else lines[1:])
            header_done = header_done or bool(lines)
        summary_path = point_dir / "summary.json"
        if summary_path.exists():
            summaries.append(json.loads(summary_path.read_text(encoding="utf-8")))
        else:
            summaries.append({"axis_value": None, "error": json.loads(
                (point_dir / "error.json").read_text(encoding="utf-8"))})
    (out / "sweep.csv").write_text("".join(merged), encoding="utf-8")
    (out / "sweep_summary.json").write_text(dump_json({"axis": axis, "runs": summaries}),
                                            encoding="utf-8")
    bad = [point_dir.name for (_, point_dir, _), code in zip(jobs_list, codes) if code != 0]
    if bad:
        write_error(out, SweepPointFailed(bad))
        return 1
    return 0


# ------------------------------------------------------------------ verify

VERIFY_SUITES = ("lemma1", "lemma2", "lemma3", "network", "all")


def lemma_setup(sim: Simulation) -> analysis.LemmaSetup:
    b_s, batches = resolve_batches(sim.strategy, sim.dataset, sim.coded)
    return analysis.LemmaSetup(sim.dataset, sim.coding, sim.profile, sim.strategy.deadline,
                               b_s, tuple(batches))


def network_deadlines(sim: Simulation, batches) -> list[float]:
    T = sim.strategy.deadline
    if T is None:
        cands = deadline_candidates(sim.profile, batches)
        T = float(np.median(cands))
    return [0.5 * T, T, 2.0 * T]


def collect_reports(cfg: ExperimentConfig, suite: str) -> list[analysis.VerificationReport]:
    if suite not in VERIFY_SUITES:
        raise ValueError(f"unknown suite {suite!r}")
    suites = ("lemma1", "lemma2", "lemma3", "network") if suite == "all" else (suite,)
    root = RngStream(cfg.seed).child("verify")
    v = cfg.verify
    reports = []
    sim = None
    for name in suites:
        if name == "lemma1":
            reports += analysis.verify_lemma1(
                root.child("lemma1"), m=v.lemma1_m, d=v.lemma1_d, n=v.lemma1_n, c=v.lemma1_c,
                b_s=v.lemma1_bs, l_i=v.lemma1_l, b_i=v.lemma1_b, trials=v.trials,
                noise_convention=cfg.coding.noise_convention)
            continue
        sim = sim or build(cfg)
        if name == "network":
            _, batches = resolve_batches(sim.strategy, sim.dataset, sim.coded)
            reports += analysis.verify_network(root.child("network"), sim.profile, batches,
                                               network_deadlines(sim, batches), v.network_trials)
            continue
        setup = lemma_setup(sim)
        w = analysis.probe_model(root.child("probe"), sim.dataset, sim.optimum.w_star,
                                 sim.bounds.phi)
        if name == "lemma2":
            reports.append(analysis.verify_lemma2(setup, w, root.child("lemma2"), v.trials))
        else:
            reports += list(analysis.verify_lemma3(setup, w, root.child("lemma3"), v.trials,
                                                   sim.bounds).reports)
    return reports


def run_verify(cfg: ExperimentConfig, suite: str, out_dir=None) -> int:
    out = Path(out_dir if out_dir is not None else cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "error.json").unlink(missing_ok=True)
    try:
        reports = collect_reports(cfg, suite)
    except ScflError as exc:
        write_error(out, exc)
        return 1
    payload = [_clean(r.to_dict()) for r in reports]
    (out / f"verify_{suite}.json").write_text(dump_json(payload), encoding="utf-8")
    failed = [r.name for r in reports if r.hard and r.passed is False]
    for name in failed:
        log.error("verification failed: %s", name)
    if failed:
        write_error(out, VerificationFailed(failed))
        return 1
    return 0


def _clean(d: dict) -> dict:
    return {k: (_num(v) if isinstance(v, float) else v) for k, v in d.items()}


def run_privacy(cfg: ExperimentConfig, out_dir=None) -> int:
    out = Path(out_dir if out_dir is not None else cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "error.json").unlink(missing_ok=True)
    try:
        root = RngStream(cfg.seed)
        dataset = build_dataset(cfg, root)
        coding = resolve_coding(cfg, dataset)
        report = privacy_budget(dataset, coding)
    except ScflError as exc:
        write_error(out, exc)
        return 1
    payload = {"config_hash": config_hash(cfg), "seed": cfg.seed, "c": coding.c,
               "sigma": coding.sigma, "noise_convention": coding.noise_convention,
               **report.to_dict()}
    if cfg.coding.target_epsilon is not None:
        payload["target_epsilon"] = cfg.coding.target_epsilon
    (out / "privacy.json").write_text(dump_json(payload), encoding="utf-8")
    return 0
