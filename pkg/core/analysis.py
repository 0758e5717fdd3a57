"""
Analysis & Oracles
Closed-form quadratic solutions, the bounded-gradient (sigma_2) check, gradient-variance
estimation and convergence-trend extraction from run histories.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from core import graph as graph_ops
from core.errors import InvalidConfig, PreconditionViolated, SingularSystem
from core.models import QuadraticModel, estimate_smoothness

# Gaps below this are floating-point noise and are excluded from rate fits
GAP_FLOOR = 1e-12
RESIDUAL_TOL = 1e-10


def _centers(centers, curvatures, n_clients):
    C = np.atleast_2d(np.asarray(centers, dtype=float))
    if C.shape[0] != n_clients:
        raise InvalidConfig(f"Expected {n_clients} centers, got {C.shape[0]}")
    curv = np.broadcast_to(np.asarray(curvatures, dtype=float), (n_clients,)).copy()
    return C, curv


def _solve(A, B, what):
    try:
        X = linalg.solve(A, B)
    except (linalg.LinAlgError, ValueError) as e:
        raise SingularSystem(f"{what}: {e}") from e
    if not np.all(np.isfinite(X)):
        raise SingularSystem(f"{what}: non-finite solution")
    return X


def solve_quadratic_optimum(graph, centers, curvatures, eta):
    """
    W* with grad J(W*) = 0 for quadratic clients:
    (diag(curvatures) + eta L) W* = diag(curvatures) C, solved for all d columns at once.
    """
    C, curv = _centers(centers, curvatures, graph.n_clients)
    A = np.diag(curv) + eta * graph.laplacian
    W = _solve(A, curv[:, None] * C, "Quadratic optimum system is singular")
    residual = np.linalg.norm(curv[:, None] * (W - C) + eta * graph_ops.laplacian_apply(graph, W))
    if residual > RESIDUAL_TOL:
        logging.warning(f"⚠️ Quadratic optimum residual {residual:.3e} exceeds {RESIDUAL_TOL:g} (eta={eta:g})")
    else:
        logging.debug(f"Quadratic optimum solved: eta={eta:g}, residual={residual:.3e}")
    return W


def solve_round_fixed_point(graph, centers, curvatures, eta, local_lr, local_steps):
    """
    Fixed point of one full-participation FedU round with exact quadratic gradients:
    (I - M Q) W = M (I - Q) C, M = I - mu R eta L, Q = diag((1 - mu curv_k)^R).
    Constant-step FedU converges here; the offset from W* shrinks linearly in mu.
    """
    C, curv = _centers(centers, curvatures, graph.n_clients)
    n = graph.n_clients
    M = np.eye(n) - local_lr * local_steps * eta * graph.laplacian
    Q = np.diag((1.0 - local_lr * curv) ** local_steps)
    A = np.eye(n) - M @ Q
    return _solve(A, M @ (np.eye(n) - Q) @ C, "Round map has no unique fixed point")


@dataclass
class LemmaOneReport:
    eta: float
    rho: float
    beta_estimate: float
    grad_at_zero_sq: float
    sigma2_squared: float
    n_trials: int
    max_violation: float

    @property
    def passed(self):
        return self.max_violation <= 1e-9

    def to_dict(self):
        out = asdict(self)
        out["passed"] = self.passed
        return out


def _client_data(dataset, k):
    return None if dataset is None else dataset.clients[k].train


def _global_beta(models, dataset):
    betas = []
    for k, m in enumerate(models):
        bound = m.smoothness_bound(_client_data(dataset, k))
        if bound is None:
            bound = estimate_smoothness(m, _client_data(dataset, k))
            logging.warning(f"⚠️ No analytic smoothness bound for client {k} "
                            f"({type(m).__name__}); using probed lower bound {bound:.4g}")
        betas.append(bound)
    return float(max(betas))


def check_lemma1(models, graph, eta, n_trials, rng, dataset=None, beta=None):
    """
    Checks sum ||grad F_k(w_k)||^2 <= sigma_2^2 + sum ||grad_{w_k} J(W)||^2 at random W with
    sigma_2^2 = ||grad F(0)||^2 eta rho / (eta rho - 2 beta). Needs eta rho > 2 beta.
    """
    beta = _global_beta(models, dataset) if beta is None else float(beta)
    rho = graph.rho
    if not eta * rho > 2 * beta:
        raise PreconditionViolated(f"Lemma needs eta*rho > 2*beta, got eta*rho={eta * rho:.4g}, beta={beta:.4g}")

    d = models[0].param_dim
    zero = np.zeros(d)
    grad0 = sum(float(np.sum(m.grad(zero, _client_data(dataset, k)) ** 2)) for k, m in enumerate(models))
    sigma2_sq = grad0 * eta * rho / (eta * rho - 2 * beta)

    worst = -np.inf
    for _ in range(n_trials):
        scale = 10.0 ** rng.uniform(-2, 2)
        W = rng.normal(scale=scale, size=(graph.n_clients, d))
        G = np.vstack([m.grad(W[k], _client_data(dataset, k)) for k, m in enumerate(models)])
        lhs = float(np.sum(G ** 2))
        grad_J = G + eta * graph_ops.laplacian_apply(graph, W)
        rhs = sigma2_sq + float(np.sum(grad_J ** 2))
        # relative to the magnitudes involved so that large-scale probes do not register rounding
        worst = max(worst, (lhs - rhs) / max(1.0, rhs))

    report = LemmaOneReport(eta=float(eta), rho=rho, beta_estimate=beta, grad_at_zero_sq=grad0,
                            sigma2_squared=sigma2_sq, n_trials=int(n_trials),
                            max_violation=float(worst if n_trials else 0.0))
    logging.info(f"Lemma check: sigma2^2={sigma2_sq:.6g}, max violation={report.max_violation:.3e} "
                 f"over {n_trials} trials")
    return report


def estimate_variance(models, dataset, batch_size, n_draws, rng, params=None):
    """
    Monte-Carlo estimate of sum_k E||grad~F_k - grad F_k||^2 at W (random N(0,1) when not given).
    Batch sizes are clamped to each client's training-set size.
    """
    if n_draws < 100:
        raise InvalidConfig(f"n_draws must be >= 100, got {n_draws}")
    n = len(models)
    d = models[0].param_dim
    W = rng.normal(size=(n, d)) if params is None else np.asarray(params, dtype=float)

    total = 0.0
    for k, m in enumerate(models):
        if not m.uses_data:
            continue
        data = _client_data(dataset, k)
        b = min(batch_size, len(data))
        if b == len(data):
            continue
        full = m.grad(W[k], data)
        acc = 0.0
        for _ in range(n_draws):
            diff = m.stoch_grad(W[k], data, b, rng) - full
            acc += float(diff @ diff)
        total += acc / n_draws
    return total


@dataclass
class ConvergenceSummary:
    final_objective: float
    final_gap: float
    gaps: list
    decay_rate: float
    rounds_to_tol: Optional[int]
    tol: float

    def to_dict(self):
        return {
            "final_objective": self.final_objective,
            "final_gap": self.final_gap,
            "decay_rate": self.decay_rate,
            "rounds_to_tol": self.rounds_to_tol,
            "tol": self.tol,
        }


def fit_decay_rate(rounds, gaps):
    """Per-round geometric rate: least squares on log(gap) over the later half of the gaps above GAP_FLOOR."""
    rounds = np.asarray(rounds, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    keep = gaps >= GAP_FLOOR
    rounds, gaps = rounds[keep], gaps[keep]
    if len(rounds) < 2:
        return 1.0
    tail = rounds >= rounds[0] + 0.5 * (rounds[-1] - rounds[0])
    if tail.sum() < 2:
        tail = np.arange(len(rounds)) >= len(rounds) - 2
    slope, _ = np.polyfit(rounds[tail], np.log(gaps[tail]), 1)
    return float(np.exp(slope))


def convergence_metrics(history, W_star=None, objective_star=None, tol=1e-4):
    """
    Gap series is ||W^(t) - W*|| over the retained iterates when W_star is given,
    otherwise objective - objective_star (default: the best recorded objective).
    """
    if len(history) == 0:
        raise InvalidConfig("Empty run history")

    if W_star is not None:
        if not history.iterates:
            raise InvalidConfig("Distances to W* need retained iterates (keep_iterates)")
        W_star = np.asarray(W_star, dtype=float)
        rounds = list(range(len(history.iterates)))
        gaps = [float(np.linalg.norm(W - W_star)) for W in history.iterates]
    else:
        rounds = list(history.rounds)
        ref = min(history.objective) if objective_star is None else objective_star
        gaps = [float(obj - ref) for obj in history.objective]

    hit = next((r for r, g in zip(rounds, gaps) if g <= tol), None)
    return ConvergenceSummary(
        final_objective=float(history.objective[-1]),
        final_gap=gaps[-1],
        gaps=gaps,
        decay_rate=fit_decay_rate(rounds, gaps),
        rounds_to_tol=hit,
        tol=tol,
    )


def quadratic_instance(models):
    """(centers, curvatures) of a list of QuadraticModel clients."""
    if not all(isinstance(m, QuadraticModel) for m in models):
        raise InvalidConfig("Closed-form oracles need quadratic client models")
    return np.vstack([m.center for m in models]), np.array([m.curvature for m in models])
