"""
Training Engine
FedU (server-coordinated, with client sampling) and dFedU (neighbor exchange, no server):
R local SGD steps per round followed by the Laplacian regularization step
    w_k <- w_{k,R} - mu~ eta sum_{l in N_k} a_kl (w_{k,R} - w_{l,R}),   mu~ = mu R.
Non-sampled clients keep their round-start model and act as stale neighbors.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from core import graph as graph_ops
from core import seeding
from core.data import prepend_virtual_client
from core.errors import (
    DimensionMismatch, InvalidAlpha, InvalidConfig, InvalidSampleSize, NonFiniteParameter,
)
from core.models import Batch, QuadraticModel, accuracy

CENTRALIZED = "centralized"
DECENTRALIZED = "decentralized"


@dataclass(frozen=True)
class TrainConfig:
    local_lr: float = 0.01
    local_steps: int = 5
    rounds: int = 200
    eta: float = 0.01
    sample_size: Optional[int] = None
    batch_size: int = 20
    seed: int = 0
    mode: str = CENTRALIZED
    avg_alpha: Optional[float] = None
    sampled_neighbors_only: bool = False
    keep_iterates: bool = False
    eval_every: Optional[int] = None
    workers: int = 1

    def __post_init__(self):
        if not self.local_lr >= 0:
            raise InvalidConfig(f"local_lr must be non-negative, got {self.local_lr}")
        if self.local_steps < 1 or self.rounds < 0 or self.batch_size < 1:
            raise InvalidConfig("local_steps and batch_size must be >= 1, rounds >= 0")
        if not self.eta >= 0:
            raise InvalidConfig(f"eta must be non-negative, got {self.eta}")
        if self.mode not in (CENTRALIZED, DECENTRALIZED):
            raise InvalidConfig(f"mode must be '{CENTRALIZED}' or '{DECENTRALIZED}', got {self.mode!r}")
        if self.avg_alpha is not None and not self.avg_alpha > 0:
            raise InvalidConfig(f"avg_alpha must be positive, got {self.avg_alpha}")
        if self.eval_every is not None and self.eval_every < 1:
            raise InvalidConfig(f"eval_every must be >= 1, got {self.eval_every}")

    @property
    def global_lr(self):
        """mu~ = mu R; derived, never configured."""
        return self.local_lr * self.local_steps

    def resolved_sample_size(self, n_clients):
        return n_clients if self.sample_size is None else int(self.sample_size)

    def resolved_eval_every(self):
        if self.eval_every is not None:
            return int(self.eval_every)
        return 1 if self.rounds <= 500 else 5


def check_step_size(config, graph):
    """Warns (does not fail) when mu~ eta rho > 2, where the server update stops being normalized."""
    value = config.global_lr * config.eta * graph.rho
    if value > 2:
        logging.warning(f"⚠️ Step size condition violated: mu~*eta*rho = {value:.4g} > 2 "
                        f"(mu~={config.global_lr:.4g}, eta={config.eta:.4g}, rho={graph.rho:.4g})")
        return False
    return True


# --- Stacked parameters ---
def stack_params(blocks):
    """Stacks N equal-length client vectors into an (N, d) array."""
    blocks = [np.asarray(b, dtype=float).reshape(-1) for b in blocks]
    if not blocks:
        raise DimensionMismatch("No parameter blocks")
    dims = {b.shape[0] for b in blocks}
    if len(dims) != 1:
        raise DimensionMismatch(f"Parameter blocks have different lengths: {sorted(dims)}")
    W = np.vstack(blocks)
    if not np.all(np.isfinite(W)):
        raise NonFiniteParameter("Non-finite entry in stacked parameters")
    return W


def initial_params(models, seed):
    return stack_params([m.init_params(seeding.derive_rng(seed, seeding.INIT, k)) for k, m in enumerate(models)])


# --- Round building blocks ---
def sample_clients(n_clients, sample_size, rng):
    """Uniform S-subset without replacement, as a sorted tuple."""
    if not 1 <= sample_size <= n_clients:
        raise InvalidSampleSize(f"sample_size must be in 1..{n_clients}, got {sample_size}")
    if sample_size == n_clients:
        return tuple(range(n_clients))
    return tuple(sorted(int(k) for k in rng.choice(n_clients, size=sample_size, replace=False)))


class LocalResult(NamedTuple):
    params: np.ndarray
    iterates: list

    @property
    def drift(self):
        """(1/R) sum_{r<R} ||w_r - w_0||^2."""
        start = self.iterates[0]
        steps = self.iterates[:-1]
        return float(np.mean([np.sum((w - start) ** 2) for w in steps]))


def local_update(model, w_start, local_steps, local_lr, batch_size, data, rng):
    """Runs exactly R mini-batch SGD steps from w_start."""
    if local_steps < 1 or local_lr < 0:
        raise InvalidConfig(f"Need local_steps >= 1 and local_lr >= 0, got {local_steps}, {local_lr}")
    batch = batch_size if not model.uses_data else min(batch_size, len(data))
    w = np.array(w_start, dtype=float)
    iterates = [w]
    for r in range(local_steps):
        w = w - local_lr * model.stoch_grad(w, data, batch, rng)
        if not np.all(np.isfinite(w)):
            raise NonFiniteParameter(f"Local update diverged at step {r}")
        iterates.append(w)
    return LocalResult(w, iterates)


def _pull(w_k, weights, messages, coef):
    """w_{k,R} - coef * sum_l a_kl (w_{k,R} - w_{l,R}) over the stacked neighbor messages.

    FedU and dFedU both go through here so their arithmetic is identical.
    """
    if len(weights) == 0 or coef == 0:
        return w_k.copy()
    lap = weights.sum() * w_k - weights @ messages
    return w_k - coef * lap


def _neighbor_set(graph, k, sampled, sampled_neighbors_only):
    nbrs = graph.neighbors(k)
    if sampled_neighbors_only:
        nbrs = nbrs[np.isin(nbrs, sampled)]
    return nbrs


def server_regularize(W_R, sampled, graph, eta, global_lr, sampled_neighbors_only=False):
    """
    Server step. W_R holds w_{k,R} for sampled clients and the stale round-start
    model for the others. Sampled clients are pulled towards all their neighbors
    (stale values included); the rest are returned unchanged.
    """
    W_R = np.asarray(W_R, dtype=float)
    if W_R.ndim != 2 or W_R.shape[0] != graph.n_clients:
        raise DimensionMismatch(f"Expected {graph.n_clients} parameter blocks, got shape {W_R.shape}")
    sampled = np.asarray(sorted(sampled), dtype=int)
    out = W_R.copy()
    coef = global_lr * eta
    for k in sampled:
        nbrs = _neighbor_set(graph, k, sampled, sampled_neighbors_only)
        out[k] = _pull(W_R[k], graph.adjacency[k, nbrs], W_R[nbrs], coef)
    return out


def server_matrix(graph, sampled, eta, global_lr, sampled_neighbors_only=False):
    """C = I - mu~ eta S~ L as an N x N matrix (acts on every dimension alike)."""
    n = graph.n_clients
    S = np.zeros((n, n))
    idx = np.asarray(sorted(sampled), dtype=int)
    S[idx, idx] = 1.0
    L = graph.laplacian
    if sampled_neighbors_only:
        A = graph.adjacency * np.outer(S.diagonal(), S.diagonal())
        L = np.diag(A.sum(axis=1)) - A
    return np.eye(n) - global_lr * eta * (S @ L)


def matrix_form_step(W_t, W_R, sampled, graph, eta, global_lr, sampled_neighbors_only=False):
    """Independent matrix-notation version of server_regularize: C W_R, stale rows restored."""
    W_t = np.asarray(W_t, dtype=float)
    W_R = np.asarray(W_R, dtype=float)
    if W_t.shape != W_R.shape or W_R.shape[0] != graph.n_clients:
        raise DimensionMismatch(f"Shapes {W_t.shape} and {W_R.shape} do not match {graph.n_clients} clients")
    C = server_matrix(graph, sampled, eta, global_lr, sampled_neighbors_only)
    out = C @ W_R
    stale = np.setdiff1d(np.arange(graph.n_clients), np.asarray(list(sampled), dtype=int))
    out[stale] = W_t[stale]
    return out


# --- History ---
@dataclass
class RunHistory:
    rounds: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    drift: list = field(default_factory=list)
    disagreement: list = field(default_factory=list)
    grad_norm_sq: list = field(default_factory=list)
    sampled: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    final_params: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.rounds)

    def mean_train_loss(self, i=-1):
        return float(np.mean(self.train_loss[i]))

    def mean_test_acc(self, i=-1, clients=None):
        acc = np.asarray(self.test_acc[i])
        if clients is not None:
            acc = acc[list(clients)]
        if acc.size == 0 or np.all(np.isnan(acc)):
            return float('nan')
        return float(np.nanmean(acc))

    def rows(self):
        """One dict per recorded round, in history.csv column order."""
        return [{
            "round": self.rounds[i],
            "objective": self.objective[i],
            "mean_train_loss": self.mean_train_loss(i),
            "mean_test_acc": self.mean_test_acc(i),
            "drift": self.drift[i],
            "disagreement": self.disagreement[i],
        } for i in range(len(self.rounds))]


def _client_data(dataset, k, split="train"):
    if dataset is None:
        return None
    return getattr(dataset.clients[k], split)


def evaluate(graph, models, dataset, W, eta):
    """Objective J(W) = sum_k F_k(w_k) + (eta/2) sum_{k<l} a_kl ||w_k - w_l||^2 and per-client metrics."""
    losses = np.array([m.loss(W[k], _client_data(dataset, k)) for k, m in enumerate(models)])
    grads = np.vstack([m.grad(W[k], _client_data(dataset, k)) for k, m in enumerate(models)])
    if eta:
        grads = grads + eta * graph_ops.laplacian_apply(graph, W)
    acc = np.array([accuracy(m, W[k], _client_data(dataset, k, "test")) for k, m in enumerate(models)])
    objective = float(losses.sum()) + 0.5 * eta * graph_ops.laplacian_quadratic(graph, W)
    return {
        "objective": objective,
        "train_loss": losses,
        "test_acc": acc,
        "grad_norm_sq": float(np.sum(grads ** 2)),
        "disagreement": graph_ops.disagreement(graph, W),
    }


def _record(history, t, metrics, drift, sampled, started):
    history.rounds.append(t)
    history.objective.append(metrics["objective"])
    history.train_loss.append(metrics["train_loss"])
    history.test_acc.append(metrics["test_acc"])
    history.grad_norm_sq.append(metrics["grad_norm_sq"])
    history.disagreement.append(metrics["disagreement"])
    history.drift.append(drift)
    history.sampled.append(tuple(sampled))
    history.wall_time.append(time.perf_counter() - started)


def _check_inputs(graph, models, dataset):
    if len(models) != graph.n_clients:
        raise DimensionMismatch(f"{len(models)} models for {graph.n_clients} graph vertices")
    if dataset is not None and dataset.n_clients != graph.n_clients:
        raise DimensionMismatch(f"{dataset.n_clients} data clients for {graph.n_clients} graph vertices")
    if dataset is None and any(m.uses_data for m in models):
        raise InvalidConfig("Data-driven models need a dataset")
    if len({m.param_dim for m in models}) != 1:
        raise DimensionMismatch("All client models must share one parameter dimension")


def _local_round(models, dataset, W, active, config, t, executor):
    """Local SGD on the active clients; returns {k: LocalResult}."""

    def _work(k):
        rng = seeding.client_rng(config.seed, k, t)
        try:
            return k, local_update(models[k], W[k], config.local_steps, config.local_lr,
                                   config.batch_size, _client_data(dataset, k), rng)
        except NonFiniteParameter as e:
            raise NonFiniteParameter(str(e), round=t, client=k) from e

    if executor is None:
        return dict(_work(k) for k in active)
    return dict(executor.map(_work, active))


def _run(graph, models, dataset, config, mode, init=None):
    _check_inputs(graph, models, dataset)
    n = graph.n_clients
    sample_size = config.resolved_sample_size(n) if mode == CENTRALIZED else n
    if not 1 <= sample_size <= n:
        raise InvalidSampleSize(f"sample_size must be in 1..{n}, got {sample_size}")
    check_step_size(config, graph)
    eval_every = config.resolved_eval_every()

    W = initial_params(models, config.seed) if init is None else stack_params(init)
    if W.shape != (n, models[0].param_dim):
        raise DimensionMismatch(f"Initial parameters have shape {W.shape}, expected {(n, models[0].param_dim)}")

    label = "FedU" if mode == CENTRALIZED else "dFedU"
    logging.info(f"{label} run: N={n}, S={sample_size}, T={config.rounds}, R={config.local_steps}, "
                 f"mu={config.local_lr:g}, eta={config.eta:g}, B={config.batch_size}, seed={config.seed}")

    history = RunHistory()
    started = time.perf_counter()
    metrics = evaluate(graph, models, dataset, W, config.eta)
    _record(history, 0, metrics, 0.0, (), started)
    if config.keep_iterates:
        history.iterates.append(W.copy())
    last_objective = metrics["objective"]

    executor = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        for t in range(config.rounds):
            if mode == CENTRALIZED:
                sampled = sample_clients(n, sample_size, seeding.server_rng(config.seed, t))
            else:
                sampled = tuple(range(n))

            try:
                results = _local_round(models, dataset, W, sampled, config, t, executor)
            except NonFiniteParameter as e:
                e.last_objective = last_objective
                logging.error(f"❌ {label} diverged: {e}")
                raise

            W_R = W.copy()
            for k in sampled:
                W_R[k] = results[k].params

            if mode == CENTRALIZED:
                W_next = server_regularize(W_R, sampled, graph, config.eta, config.global_lr,
                                           config.sampled_neighbors_only)
            else:
                W_next = _exchange_and_regularize(W_R, graph, config)

            bad = np.flatnonzero(~np.all(np.isfinite(W_next), axis=1))
            if len(bad):
                err = NonFiniteParameter("Regularization step produced non-finite parameters",
                                         round=t, client=int(bad[0]), last_objective=last_objective)
                logging.error(f"❌ {label} diverged: {err}")
                raise err
            W = W_next

            if config.keep_iterates:
                history.iterates.append(W.copy())
            if (t + 1) % eval_every == 0 or t + 1 == config.rounds:
                drift = float(np.mean([results[k].drift for k in sampled]))
                metrics = evaluate(graph, models, dataset, W, config.eta)
                _record(history, t + 1, metrics, drift, sampled, started)
                last_objective = metrics["objective"]
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    history.final_params = W
    logging.info(f"✅ {label} finished: objective={history.objective[-1]:.6g}, "
                 f"mean test acc={history.mean_test_acc():.4f}")
    return history


def _exchange_and_regularize(W_R, graph, config):
    """Each client sends w_{k,R} to its neighbors, then regularizes with what it received."""
    n = graph.n_clients
    inbox = [{} for _ in range(n)]
    for k in range(n):
        for l in graph.neighbors(k):
            inbox[l][k] = W_R[k]

    out = np.empty_like(W_R)
    coef = config.global_lr * config.eta
    for k in range(n):
        nbrs = graph.neighbors(k)
        messages = np.stack([inbox[k][l] for l in nbrs]) if len(nbrs) else np.empty((0, W_R.shape[1]))
        out[k] = _pull(W_R[k], graph.adjacency[k, nbrs], messages, coef)
    return out


def run_fedu(graph, models, dataset, config, init=None):
    """Centralized FedU with uniform client sampling."""
    if config.mode != CENTRALIZED:
        raise InvalidConfig(f"run_fedu needs mode '{CENTRALIZED}', got {config.mode!r}")
    return _run(graph, models, dataset, config, CENTRALIZED, init)


def run_dfedu(graph, models, dataset, config, init=None):
    """Decentralized dFedU: every client trains every round and talks only to its neighbors."""
    if config.mode != DECENTRALIZED:
        raise InvalidConfig(f"run_dfedu needs mode '{DECENTRALIZED}', got {config.mode!r}")
    return _run(graph, models, dataset, config, DECENTRALIZED, init)


def run(graph, models, dataset, config, init=None):
    """Dispatches on config.mode."""
    if config.mode == DECENTRALIZED:
        return run_dfedu(graph, models, dataset, config, init)
    return run_fedu(graph, models, dataset, config, init)


# --- Outputs and reductions ---
def weighted_average(iterates, local_lr, local_steps, sample_size, n_clients, alpha):
    """
    theta-weighted average of round iterates W^(0..T-1) with
    theta_t = (1 - mu R S alpha / (4N))^-(t+1).
    """
    x = local_lr * local_steps * sample_size * alpha / (4.0 * n_clients)
    if not 0 < x < 1:
        raise InvalidAlpha(f"mu R S alpha / (4N) must be in (0, 1), got {x}")
    if len(iterates) == 0:
        raise InvalidConfig("No iterates retained; enable keep_iterates")
    t = np.arange(len(iterates))
    log_theta = -(t + 1) * np.log1p(-x)
    weights = np.exp(log_theta - log_theta.max())
    weights /= weights.sum()
    return np.tensordot(weights, np.stack(iterates), axes=1)


def weighted_output(history, config, n_clients):
    """W~^(T) over the first T retained iterates (W^(0) when T = 0)."""
    iterates = history.iterates[:-1] if len(history.iterates) > 1 else history.iterates
    return weighted_average(iterates, config.local_lr, config.local_steps,
                            config.resolved_sample_size(n_clients), n_clients, config.avg_alpha)


def fedavg_mode(kind, n_clients, weight=1.0):
    """
    'complete': unit-weight complete graph, whose eta -> infinity limit is FedAvg consensus.
    'star': hub vertex 0 (a zero-loss virtual server) linked to clients 1..N with a_k0 = 1.
    """
    if kind == "complete":
        return graph_ops.complete_graph(n_clients, weight)
    if kind == "star":
        return graph_ops.star_graph(n_clients, weight)
    raise InvalidConfig(f"Unknown reduction graph {kind!r}; use 'complete' or 'star'")


def server_vertex_model(param_dim):
    """F_0 = 0: a quadratic with zero curvature."""
    return QuadraticModel(np.zeros(param_dim), curvature=0.0)


def attach_server_vertex(models, dataset=None):
    """Prepends the zero-loss server vertex so models/data line up with a star graph."""
    models = [server_vertex_model(models[0].param_dim)] + list(models)
    if dataset is not None:
        dataset = prepend_virtual_client(dataset)
    return models, dataset


@dataclass
class GlobalResult:
    params: np.ndarray
    train_loss: float
    test_acc: np.ndarray

    def mean_test_acc(self, clients=None):
        acc = self.test_acc if clients is None else self.test_acc[list(clients)]
        return float(np.nanmean(acc)) if acc.size else float('nan')


def run_global(model, dataset, config):
    """One model, plain mini-batch SGD on the pooled training data for T*R steps."""
    if not model.uses_data or dataset is None:
        raise InvalidConfig("The global baseline needs a data-driven model and a dataset")
    real = [c for c in dataset.clients if not c.virtual]
    pooled = Batch(np.vstack([c.train.features for c in real]),
                   np.concatenate([c.train.labels for c in real]))
    rng = seeding.derive_rng(config.seed, seeding.GLOBAL)
    w = model.init_params(seeding.derive_rng(config.seed, seeding.INIT, 0))
    batch = min(config.batch_size, len(pooled))
    for step in range(config.rounds * config.local_steps):
        w = w - config.local_lr * model.stoch_grad(w, pooled, batch, rng)
        if not np.all(np.isfinite(w)):
            raise NonFiniteParameter("Global baseline diverged", round=step // config.local_steps)
    acc = np.array([accuracy(model, w, c.test) if not c.virtual else float('nan') for c in dataset.clients])
    result = GlobalResult(params=w, train_loss=model.loss(w, pooled), test_acc=acc)
    logging.info(f"Global baseline: train loss={result.train_loss:.6g}, mean test acc={result.mean_test_acc():.4f}")
    return result


def with_eta(config, eta):
    return replace(config, eta=float(eta))
