"""Training loop for stochastic coded FL and the four baseline strategies.

Strategies
----------
SCFL        clients and server both run mini-batch SGD; arrived client
            gradients are weighted by 1/p_i and the make-up term cancels the
            noise bias of the coded gradient.
CodedFedL   same structure, arrived gradients at weight 1, no make-up term.
CFL-FB      SCFL structure with full batches, noiseless coding, no make-up.
DP-CFL      full-batch gradient descent on the composite coded data only.
FL-PMA      sum of the first ceil((1 - psi) n) client gradients to arrive.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .analysis.oracles import global_loss, least_squares_optimum
from .coding import CodedDataset
from .data import BoundEstimates, FederatedDataset
from .errors import ConfigError, DivergenceError
from .network import (
    SERVER,
    DelayProfile,
    arrival_probabilities,
    compute_time,
    sample_epoch,
)
from .numerics import RngStream, bernoulli_mask, frobenius_norm_sq

log = logging.getLogger(__name__)

SCFL = "SCFL"
FL_PMA = "FL-PMA"
CFL_FB = "CFL-FB"
CODEDFEDL = "CodedFedL"
DP_CFL = "DP-CFL"
STRATEGIES = (SCFL, FL_PMA, CFL_FB, CODEDFEDL, DP_CFL)
DEADLINE_STRATEGIES = (SCFL, CFL_FB, CODEDFEDL)
CODED_STRATEGIES = (SCFL, CFL_FB, CODEDFEDL, DP_CFL)
THEOREM = "theorem"


@dataclass(frozen=True)
class StrategyConfig:
    kind: str
    deadline: float | None = None
    server_batch: int | None = None
    client_batches: tuple | None = None
    psi: float = 0.0
    learning_rate: object = THEOREM  # "theorem" or a positive float
    project: bool | None = None  # None: on for the theorem schedule only
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.kind!r}", key="strategy.kind")
        if not 0.0 <= self.psi < 1.0:
            raise ConfigError("psi must lie in [0, 1)", key="strategy.psi")
        if self.learning_rate != THEOREM and not (
                isinstance(self.learning_rate, (int, float)) and self.learning_rate > 0):
            raise ConfigError("learning_rate must be 'theorem' or a positive number",
                              key="strategy.learning_rate")
        if self.kind in DEADLINE_STRATEGIES and not (self.deadline is not None and self.deadline > 0):
            raise ConfigError(f"{self.kind} needs a positive deadline", key="run.deadline")

    @property
    def projects(self) -> bool:
        if self.project is None:
            return self.learning_rate == THEOREM
        return self.project


@dataclass
class ModelState:
    w: np.ndarray
    epoch: int = 0
    w_running_sum: np.ndarray = None

    def __post_init__(self):
        if self.w_running_sum is None:
            self.w_running_sum = np.zeros_like(self.w)

    def visit(self):
        """Count the current model in the trajectory average."""
        self.epoch += 1
        self.w_running_sum = self.w_running_sum + self.w

    def average(self) -> np.ndarray:
        if self.epoch == 0:
            return self.w.copy()
        return self.w_running_sum / self.epoch


@dataclass
class EpochLog:
    epoch: int
    clock_s: float
    n_arrived: int
    loss: float
    gap: float
    grad_norm: float


@dataclass
class RunRecord:
    strategy: str
    epochs: list = field(default_factory=list)
    final_model: np.ndarray = None
    averaged_model: np.ndarray = None
    final_loss: float = math.nan  # loss of the averaged model
    final_gap: float = math.nan
    total_time_s: float = 0.0
    f_star: float = math.nan
    rho: float | None = None
    arrival_probs: np.ndarray | None = None
    kappa_violations: int = 0
    diverged: bool = False

    def time_to_loss(self, threshold: float) -> float:
        """Simulated clock when the per-epoch loss first reaches ``threshold``."""
        for e in self.epochs:
            if e.loss <= threshold:
                return e.clock_s
        return math.inf


# ---------------------------------------------------------------- gradients

def server_gradient(coded: CodedDataset, w: np.ndarray, stream: RngStream, b_s: int) -> np.ndarray:
    """(1/b_s) (S X~)^T (S X~ W - S Y~) with S ~ diag Bernoulli(b_s / c)."""
    c = coded.c
    if not 1 <= b_s <= c:
        raise ConfigError(f"server batch must lie in [1, {c}]", key="strategy.server_batch")
    mask = bernoulli_mask(stream.generator(), c, b_s / c)
    xs = coded.x_tilde[mask]
    return xs.T @ (xs @ w - coded.y_tilde[mask]) / b_s


def client_gradient(dataset: FederatedDataset, client: int, w: np.ndarray,
                    stream: RngStream, b_i: int) -> np.ndarray:
    """(l_i/b_i) (S X_i)^T (S X_i W - S Y_i) with S ~ diag Bernoulli(b_i / l_i)."""
    xi, yi = dataset.client(client)
    l_i = xi.shape[0]
    if not 1 <= b_i <= l_i:
        raise ConfigError(f"client {client} batch must lie in [1, {l_i}]", key="strategy.client_batch")
    mask = bernoulli_mask(stream.generator(), l_i, b_i / l_i)
    xs = xi[mask]
    return (l_i / b_i) * (xs.T @ (xs @ w - yi[mask]))


def aggregate_scfl(client_grads, arrived, server_grad: np.ndarray, w: np.ndarray,
                   arrival_probs, make_up_coeff: float) -> np.ndarray:
    """1/2 [ sum_i 1{arrived_i} g_i / p_i + g_s - make_up_coeff * W ].

    Entries of ``client_grads`` for clients that did not arrive are ignored
    and may be ``None``.
    """
    total = server_grad - make_up_coeff * w
    for g, ok, p in zip(client_grads, arrived, arrival_probs):
        if ok:
            if not p > 0:
                raise ConfigError("arrival probability must be positive for inverse weighting")
            total = total + g / p
    return 0.5 * total


def aggregate_codedfedl(client_grads, arrived, server_grad: np.ndarray) -> np.ndarray:
    """Unweighted arrivals plus the coded gradient, no make-up term."""
    ones = np.ones(len(arrived))
    return aggregate_scfl(client_grads, arrived, server_grad, server_grad, ones, 0.0)


def flpma_count(n: int, psi: float) -> int:
    # round first so that e.g. (1 - 0.3) * 20 is 14, not 14.000000000000002
    return max(1, math.ceil(round((1.0 - psi) * n, 9)))


def flpma_selection(total_times, psi: float) -> np.ndarray:
    """Indices of the first ceil((1 - psi) n) arrivals; ties go to the lower index."""
    total_times = np.asarray(total_times, dtype=np.float64)
    n = total_times.size
    order = np.lexsort((np.arange(n), total_times))
    return order[:flpma_count(n, psi)]


def aggregate_flpma(client_grads, total_times, psi: float) -> np.ndarray:
    chosen = flpma_selection(total_times, psi)
    total = np.zeros_like(client_grads[chosen[0]])
    for i in chosen:
        total = total + client_grads[i]
    return total


# ----------------------------------------------------------- step size, rho

def learning_rate(schedule, epoch: int, bounds: BoundEstimates | None = None,
                  rho: float | None = None) -> float:
    """Theorem schedule 1 / (zeta + 1/gamma_r), gamma_r = sqrt(4 phi^2 / (rho r)).

    Any positive number passed as ``schedule`` is returned unchanged.
    """
    if schedule != THEOREM:
        return float(schedule)
    if epoch < 1:
        raise ValueError("epochs are numbered from 1")
    if bounds is None or rho is None:
        raise ConfigError("theorem schedule needs bound estimates and rho")
    if not (bounds.zeta > 0 and bounds.phi > 0 and rho >= 0):
        raise ConfigError("theorem schedule needs zeta > 0, phi > 0 and rho >= 0",
                          key="strategy.learning_rate")
    inv_gamma = math.sqrt(rho * epoch / (4.0 * bounds.phi**2))
    return 1.0 / (bounds.zeta + inv_gamma)


def rho_bound(bounds: BoundEstimates, *, m: int, d: int, c: int, b_s: int, sizes, batches,
              arrival_probs, noise_std: float) -> float:
    """Variance bound of the aggregated gradient.

    ``noise_std`` is the per-client noise standard deviation (sigma in the
    per-client-unit convention, sigma / sqrt(n) in the composite one).
    """
    n = len(sizes)
    zeta, kappa, phi = bounds.zeta, bounds.kappa, bounds.phi
    zk_i = bounds.zeta_i**2 * bounds.kappa_i**2
    p = np.asarray(arrival_probs, dtype=np.float64)
    if np.any(p <= 0):
        raise ConfigError("rho needs every arrival probability to be positive")
    l = np.asarray(sizes, dtype=np.float64)
    b = np.asarray(batches, dtype=np.float64)
    server_sampling = (c - b_s) / (4.0 * c * b_s) * zeta * kappa
    coding = (m + m * m) * zeta * kappa / c
    noise = (d + d * d) * n * noise_std**2 * phi**2 / c
    cross = d * m * n * noise_std / c**2 * (zeta * phi**2 + kappa)
    arrivals = 0.5 * float(np.sum((1.0 - p) / p * zk_i))
    client_sampling = 0.5 * float(np.sum(l * (l - b) / b * zk_i))
    return server_sampling + coding + noise + cross + arrivals + client_sampling


# ------------------------------------------------------------------- train

def resolve_batches(strategy: StrategyConfig, dataset: FederatedDataset,
                     coded: CodedDataset | None):
    sizes = dataset.sizes
    if strategy.kind == CFL_FB:
        return (coded.c if coded is not None else None), list(sizes)
    b = strategy.client_batches
    if b is None:
        batches = list(sizes)
    elif len(b) == 1:
        batches = [int(b[0])] * dataset.n
    else:
        batches = [int(v) for v in b]
    if len(batches) != dataset.n:
        raise ConfigError("need one client batch size or one per client", key="strategy.client_batch")
    for i, (bi, li) in enumerate(zip(batches, sizes)):
        if not 1 <= bi <= li:
            raise ConfigError(f"client {i}: batch {bi} outside [1, {li}]", key="strategy.client_batch")
    b_s = None
    if coded is not None:
        b_s = coded.c if strategy.server_batch is None else int(strategy.server_batch)
        if not 1 <= b_s <= coded.c:
            raise ConfigError(f"server batch {b_s} outside [1, {coded.c}]", key="strategy.server_batch")
    return b_s, batches


def make_up_coefficient(strategy: StrategyConfig, coded: CodedDataset | None) -> float:
    if strategy.kind == SCFL and coded is not None:
        return coded.effective_sigma_sq
    return 0.0


def noise_std_per_client(coded: CodedDataset | None, n: int) -> float:
    if coded is None:
        return 0.0
    return math.sqrt(coded.config.per_client_noise_var(n))


def train(dataset: FederatedDataset, coded: CodedDataset | None, profile: DelayProfile,
          strategy: StrategyConfig, epochs: int, stream: RngStream, *,
          bounds: BoundEstimates | None = None, f_star: float | None = None,
          w0: np.ndarray | None = None) -> RunRecord:
    """Run ``epochs`` rounds of ``strategy`` and return the per-epoch log.

    Delay and sampling draws are labelled by (purpose, epoch, client) only,
    so different strategies on the same stream see identical delays.
    """
    kind = strategy.kind
    if epochs < 0:
        raise ConfigError("epochs must be nonnegative", key="run.epochs")
    if kind in CODED_STRATEGIES and coded is None:
        raise ConfigError(f"{kind} needs a coded dataset")
    if kind == CFL_FB and coded.effective_sigma_sq != 0.0:
        raise ConfigError("CFL-FB uses noiseless coding; set coding.sigma = 0", key="coding.sigma")
    if profile.n != dataset.n:
        raise ConfigError("delay profile and dataset disagree on n", key="data.n")

    b_s, batches = resolve_batches(strategy, dataset, coded)
    T = strategy.deadline
    if kind in DEADLINE_STRATEGIES:
        if compute_time(profile, SERVER, b_s) > T:
            raise ConfigError("server cannot finish its coded gradient within the deadline",
                              key="run.deadline")
        probs = arrival_probabilities(profile, batches, T)
        if kind in (SCFL, CFL_FB) and np.any(probs <= 0):
            bad = [int(i) for i in np.flatnonzero(probs <= 0)]
            raise ConfigError(f"clients {bad} can never arrive before the deadline",
                              key="run.deadline")
    else:
        probs = np.ones(dataset.n)

    if f_star is None:
        f_star = least_squares_optimum(dataset).f_star
    if w0 is None:
        w0 = np.zeros((dataset.d, dataset.o))
    make_up = make_up_coefficient(strategy, coded)

    rho = None
    if bounds is not None and np.all(probs > 0):
        c = coded.c if coded is not None else 1
        rho = rho_bound(bounds, m=dataset.m, d=dataset.d, c=c, b_s=b_s if b_s else c,
                        sizes=dataset.sizes, batches=batches, arrival_probs=probs,
                        noise_std=noise_std_per_client(coded, dataset.n))
    if strategy.learning_rate == THEOREM and rho is None:
        raise ConfigError("theorem schedule needs bound estimates", key="strategy.learning_rate")
    project = strategy.projects
    if project and bounds is None:
        raise ConfigError("projection needs the model-norm bound phi", key="strategy.project")

    state = ModelState(np.array(w0, dtype=np.float64))
    record = RunRecord(kind, f_star=f_star, rho=rho, arrival_probs=probs)
    loss0 = global_loss(dataset, state.w)
    limit = strategy.divergence_factor * max(loss0, np.finfo(float).tiny)
    clock = 0.0
    server_time = compute_time(profile, SERVER, coded.c) if kind == DP_CFL else None

    for r in range(1, epochs + 1):
        w = state.w
        state.visit()
        if kind == DP_CFL:
            g = coded.full_gradient(w)
            n_arrived = 0
            clock += server_time
        else:
            arrivals = sample_epoch(stream.child("delay"), profile, batches, r, T)
            samp = stream.child("sample", r)
            if kind == FL_PMA:
                chosen = flpma_selection(arrivals.total_time, strategy.psi)
                grads = [None] * dataset.n
                for i in chosen:
                    grads[i] = client_gradient(dataset, i, w, samp.child(i), batches[i])
                g = aggregate_flpma(grads, arrivals.total_time, strategy.psi)
                n_arrived = len(chosen)
                clock += float(arrivals.total_time[chosen[-1]])
            else:
                grads = [client_gradient(dataset, i, w, samp.child(i), batches[i]) if ok else None
                         for i, ok in enumerate(arrivals.arrived)]
                gs = server_gradient(coded, w, samp.child(SERVER), b_s)
                if kind == CODEDFEDL:
                    g = aggregate_codedfedl(grads, arrivals.arrived, gs)
                else:
                    g = aggregate_scfl(grads, arrivals.arrived, gs, w, probs, make_up)
                n_arrived = arrivals.n_arrived
                clock += T

        eta = learning_rate(strategy.learning_rate, r, bounds, rho)
        w_next = w - eta * g
        if project:
            norm = math.sqrt(frobenius_norm_sq(w_next))
            if norm > bounds.phi:
                w_next = w_next * (bounds.phi / norm)
        state.w = w_next

        loss = global_loss(dataset, w_next)
        record.epochs.append(EpochLog(r, clock, n_arrived, loss, loss - f_star,
                                      math.sqrt(frobenius_norm_sq(g))))
        if bounds is not None:
            record.kappa_violations += _count_kappa_violations(dataset, w_next, bounds)
        if not (loss <= limit):
            record.diverged = True
            _finish(record, dataset, state, clock)
            err = DivergenceError(r, loss, limit)
            err.record = record
            raise err

    _finish(record, dataset, state, clock)
    if record.kappa_violations:
        log.warning("residual bound kappa_i exceeded %d times", record.kappa_violations)
    return record


def _count_kappa_violations(dataset, w, bounds) -> int:
    count = 0
    for i in range(dataset.n):
        xi, yi = dataset.client(i)
        if math.sqrt(frobenius_norm_sq(xi @ w - yi)) > bounds.kappa_i[i]:
            count += 1
    return count


def _finish(record: RunRecord, dataset, state: ModelState, clock: float) -> None:
    record.final_model = state.w
    record.averaged_model = state.average()
    record.final_loss = global_loss(dataset, record.averaged_model)
    record.final_gap = record.final_loss - record.f_star
    record.total_time_s = clock
