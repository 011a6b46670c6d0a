"""Monte Carlo checks of the moment identities, unbiasedness and variance bound.

Every report compares an empirical mean against a closed form with a
5-standard-error rule. Matrix-valued means are summarised by their worst
entry, which passes exactly when every entry passes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..coding import COMPOSITE_UNIT, CodingConfig, encode_dataset
from ..data import BoundEstimates, FederatedDataset
from .. import engine
from ..network import DelayProfile, arrival_probabilities, sample_epoch, sample_total_times
from ..numerics import RngStream
from .oracles import global_gradient

Z_THRESHOLD = 5.0
EQUAL = "equal"
UPPER_BOUND = "upper_bound"


@dataclass(frozen=True)
class VerificationReport:
    name: str
    samples: int
    empirical: float
    theoretical: float | None
    std_error: float
    hard: bool = True
    comparison: str = EQUAL
    note: str = ""

    @property
    def passed(self) -> bool | None:
        if self.theoretical is None:
            return None
        slack = Z_THRESHOLD * self.std_error
        if self.comparison == UPPER_BOUND:
            return self.empirical <= self.theoretical + slack
        return abs(self.empirical - self.theoretical) <= slack

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def scalar_report(name, samples, theoretical, **kw) -> VerificationReport:
    samples = np.asarray(samples, dtype=np.float64).ravel()
    n = samples.size
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return VerificationReport(name, n, float(samples.mean()),
                              None if theoretical is None else float(theoretical), se, **kw)


def entrywise_report(name, samples, theoretical, **kw) -> VerificationReport:
    """Worst entry (largest standardised deviation) of a matrix-valued mean."""
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n)
    theo = np.broadcast_to(np.asarray(theoretical, dtype=np.float64), mean.shape)
    dev = np.abs(mean - theo)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, dev / se, np.where(dev > 0, np.inf, 0.0))
    k = np.unravel_index(int(np.argmax(z)), z.shape)
    label = ",".join(str(int(v)) for v in k)
    note = kw.pop("note", "")
    note = f"worst entry [{label}], z={float(z[k]):.3f}" + (f"; {note}" if note else "")
    return VerificationReport(name, n, float(mean[k]), float(theo[k]), float(se[k]), note=note, **kw)


def _chunks(total, size=1000):
    start = 0
    while start < total:
        yield min(size, total - start)
        start += size


# ------------------------------------------------------------------ lemma 1

def verify_lemma1(stream: RngStream, *, m: int, d: int, n: int, c: int, b_s: int,
                  l_i: int, b_i: int, trials: int = 10_000,
                  noise_convention: str = COMPOSITE_UNIT) -> list[VerificationReport]:
    """Means and squared deviations of the projection, noise and sampling matrices."""
    # per-entry variance of the unit-sigma composite noise
    v = 1.0 if noise_convention == COMPOSITE_UNIT else float(n)
    per_client_var = v / n

    gen = stream.child("G").generator()
    g_mean, g_dev = [], []
    for k in _chunks(trials):
        g = gen.standard_normal((k, c, m))
        q = np.einsum("tij,tik->tjk", g, g) / c
        g_mean.append(q)
        g_dev.append(((q - np.eye(m)) ** 2).sum(axis=(1, 2)))
    g_mean, g_dev = np.concatenate(g_mean), np.concatenate(g_dev)

    gen = stream.child("N").generator()
    n_mean, n_dev = [], []
    for k in _chunks(trials):
        noise = gen.standard_normal((k, n, c, d)).sum(axis=1) * math.sqrt(per_client_var)
        q = np.einsum("tij,tik->tjk", noise, noise) / c
        n_mean.append(q)
        n_dev.append(((q - v * np.eye(d)) ** 2).sum(axis=(1, 2)))
    n_mean, n_dev = np.concatenate(n_mean), np.concatenate(n_dev)

    s_scaled = (c / b_s) * (stream.child("S_server").generator().random((trials, c)) < b_s / c)
    c_scaled = (l_i / b_i) * (stream.child("S_client").generator().random((trials, l_i)) < b_i / l_i)

    stated_noise = (d + d * d) * n / c
    return [
        entrywise_report("lemma1.G.mean", g_mean, np.eye(m)),
        scalar_report("lemma1.G.deviation", g_dev, (m + m * m) / c),
        entrywise_report("lemma1.N.mean", n_mean, v * np.eye(d),
                         note=f"convention={noise_convention}"),
        scalar_report("lemma1.N.deviation", n_dev, v * v * (d + d * d) / c,
                      note=f"convention={noise_convention}; (d+d^2)n/c={stated_noise:.6g}"),
        entrywise_report("lemma1.S_server.mean", s_scaled, 1.0),
        scalar_report("lemma1.S_server.deviation", ((s_scaled - 1.0) ** 2).sum(axis=1),
                      c * (c - b_s) / b_s),
        entrywise_report("lemma1.S_client.mean", c_scaled, 1.0),
        scalar_report("lemma1.S_client.deviation", ((c_scaled - 1.0) ** 2).sum(axis=1),
                      l_i * (l_i - b_i) / b_i),
    ]


# -------------------------------------------------------------- lemmas 2, 3

@dataclass(frozen=True)
class LemmaSetup:
    """Everything that is held fixed while coding, sampling and arrivals re-randomise."""

    dataset: FederatedDataset
    coding: CodingConfig
    profile: DelayProfile
    deadline: float
    server_batch: int
    client_batches: tuple

    def arrival_probs(self) -> np.ndarray:
        return arrival_probabilities(self.profile, self.client_batches, self.deadline)


def probe_model(stream: RngStream, dataset: FederatedDataset, w_star: np.ndarray,
                phi: float | None = None) -> np.ndarray:
    """W* plus a Gaussian offset of norm ||W*|| / 2 (capped at phi)."""
    offset = stream.generator().standard_normal(w_star.shape)
    scale = 0.5 * max(np.linalg.norm(w_star), 1.0)
    w = w_star + offset * (scale / np.linalg.norm(offset))
    if phi is not None and np.linalg.norm(w) > phi:
        w = w * (phi / np.linalg.norm(w))
    return w


def _trial_terms(setup: LemmaSetup, w: np.ndarray, stream: RngStream, make_up_coeff: float):
    """Client, server-sampling and coding parts of g - grad f for one draw."""
    ds = setup.dataset
    probs = setup.arrival_probs()
    grad_f = global_gradient(ds, w)
    coded = encode_dataset(stream.child("coding"), ds, setup.coding)
    arrivals = sample_epoch(stream.child("delay"), setup.profile, setup.client_batches, 0, setup.deadline)
    samp = stream.child("sample")
    grads = [engine.client_gradient(ds, i, w, samp.child(i), setup.client_batches[i]) if ok else None
             for i, ok in enumerate(arrivals.arrived)]
    gs = engine.server_gradient(coded, w, samp.child("server"), setup.server_batch)
    g = engine.aggregate_scfl(grads, arrivals.arrived, gs, w, probs, make_up_coeff)

    client_part = -grad_f
    for gi, ok, p in zip(grads, arrivals.arrived, probs):
        if ok:
            client_part = client_part + gi / p
    full_coded = coded.full_gradient(w)
    server_part = gs - full_coded
    coding_part = full_coded - make_up_coeff * w - grad_f
    return g, client_part, server_part, coding_part, grad_f


def sample_aggregated_gradients(setup: LemmaSetup, w: np.ndarray, trials: int, stream: RngStream,
                                make_up_coeff: float | None = None) -> np.ndarray:
    """``trials`` independent draws of the aggregated gradient at ``w``."""
    if make_up_coeff is None:
        make_up_coeff = setup.coding.composite_noise_var(setup.dataset.n)
    out = np.empty((trials,) + w.shape)
    for t in range(trials):
        out[t] = _trial_terms(setup, w, stream.child("trial", t), make_up_coeff)[0]
    return out


def verify_lemma2(setup: LemmaSetup, w: np.ndarray, stream: RngStream, trials: int = 10_000,
                  make_up_coeff: float | None = None) -> VerificationReport:
    samples = sample_aggregated_gradients(setup, w, trials, stream, make_up_coeff)
    grad_f = global_gradient(setup.dataset, w)
    return entrywise_report(
        f"lemma2.unbiased[sigma={setup.coding.sigma:g}]", samples, grad_f,
        note=f"convention={setup.coding.noise_convention}")


@dataclass(frozen=True)
class VarianceBreakdown:
    total: float
    client: float
    server_sampling: float
    coding: float
    rho: float | None
    reports: tuple


def verify_lemma3(setup: LemmaSetup, w: np.ndarray, stream: RngStream, trials: int = 10_000,
                  bounds: BoundEstimates | None = None) -> VarianceBreakdown:
    """Empirical variance, its three-way split, and its ratio to the rho bound."""
    make_up = setup.coding.composite_noise_var(setup.dataset.n)
    total = np.empty(trials)
    parts = np.empty((trials, 3))
    for t in range(trials):
        g, a, b, c_, grad_f = _trial_terms(setup, w, stream.child("trial", t), make_up)
        total[t] = float(np.sum((g - grad_f) ** 2))
        parts[t] = [0.25 * np.sum(a * a), 0.25 * np.sum(b * b), 0.25 * np.sum(c_ * c_)]

    ds, cfg = setup.dataset, setup.coding
    rho = None
    if bounds is not None:
        rho = engine.rho_bound(bounds, m=ds.m, d=ds.d, c=cfg.c, b_s=setup.server_batch, sizes=ds.sizes,
                        batches=setup.client_batches, arrival_probs=setup.arrival_probs(),
                        noise_std=math.sqrt(cfg.per_client_noise_var(ds.n)))
    mean_total = float(total.mean())
    ratio = "" if rho is None else f"ratio to rho={mean_total / rho:.6g}"
    reports = [
        scalar_report("lemma3.variance", total, rho, hard=False, comparison=UPPER_BOUND, note=ratio),
        scalar_report("lemma3.component.client", parts[:, 0], None, hard=False),
        scalar_report("lemma3.component.server_sampling", parts[:, 1], None, hard=False),
        scalar_report("lemma3.component.coding", parts[:, 2], None, hard=False),
        scalar_report("lemma3.additivity", total - parts.sum(axis=1), 0.0,
                      note="total minus sum of components; cross terms vanish in expectation"),
        _cross_moment_report(stream.child("cross"), ds.m, ds.d, ds.n, cfg, min(trials, 2000)),
    ]
    means = parts.mean(axis=0)
    return VarianceBreakdown(mean_total, float(means[0]), float(means[1]), float(means[2]),
                             rho, tuple(reports))


def _cross_moment_report(stream, m, d, n, cfg: CodingConfig, trials) -> VerificationReport:
    """E||G^T N||_F^2 for unit sigma, against the direct value c m d v."""
    v = 1.0 if cfg.noise_convention == COMPOSITE_UNIT else float(n)
    gen = stream.generator()
    vals = []
    for k in _chunks(trials, 250):
        g = gen.standard_normal((k, cfg.c, m))
        noise = gen.standard_normal((k, cfg.c, d)) * math.sqrt(v)
        gtn = np.einsum("tij,tik->tjk", g, noise)
        vals.append((gtn**2).sum(axis=(1, 2)))
    return scalar_report("lemma3.GtN_moment", np.concatenate(vals), cfg.c * m * d * v,
                         note=f"dmn={d * m * n}")


# ------------------------------------------------------------------ network

def verify_network(stream: RngStream, profile: DelayProfile, batch_sizes, deadlines,
                   trials: int = 100_000) -> list[VerificationReport]:
    """Simulated arrival frequency against the closed-form probability."""
    reports = []
    for k, T in enumerate(deadlines):
        probs = arrival_probabilities(profile, batch_sizes, T)
        for i in range(profile.n):
            p = float(probs[i])
            hits = sample_total_times(stream.child(k, i), profile, i, batch_sizes[i], trials) <= T
            freq = float(hits.mean())
            se = math.sqrt(p * (1.0 - p) / trials)
            reports.append(VerificationReport(f"network.arrival[T={T:.6g},client={i}]",
                                              trials, freq, p, se))
    return reports
