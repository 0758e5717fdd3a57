"""
Verification Suite
Self-checks of the simulator against independent oracles: matrix-form server step,
closed-form quadratic solutions, the bounded-gradient inequality, finite-difference
gradients, dFedU/FedU equivalence, the consensus limit and client-sampling behavior.
"""
import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from core import analysis, data, engine, seeding, storage
from core import graph as graph_ops
from core.models import Batch, MLPModel, MLRModel, QuadraticModel
from tools.run import EXIT_OK, EXIT_VERIFY_FAILED

VERIFY_SEED = 20240


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0


# --- Shared instances ---
def reference_instance():
    """Two quadratic clients, centers 0 and 4, one unit edge."""
    graph = graph_ops.build_graph(2, [(0, 1, 1.0)])
    models = [QuadraticModel([0.0]), QuadraticModel([4.0])]
    return graph, models


def small_classification(n_clients=10, seed=VERIFY_SEED):
    dataset = data.generate_synthetic(n_clients=n_clients, n_features=5, n_classes=4, labels_per_client=2,
                                      samples_mean=40, samples_std=10, seed=seed)
    return dataset


def finite_difference_error(model, batch, w, eps=1e-6):
    """||g - g_fd|| / max(||g_fd||, 1e-12) with central differences per coordinate."""
    g = model.grad(w, batch)
    fd = np.empty_like(w)
    for i in range(w.shape[0]):
        step = np.zeros_like(w)
        step[i] = eps
        fd[i] = (model.loss(w + step, batch) - model.loss(w - step, batch)) / (2 * eps)
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))


# --- Checks ---
def check_matrix_oracle(tol, n_rounds=50, seed=VERIFY_SEED):
    rng = seeding.derive_rng(seed, seeding.PROBE, 1)
    worst = 0.0
    for _ in range(n_rounds):
        n = int(rng.integers(2, 11))
        d = int(rng.integers(1, 6))
        g = graph_ops.erdos_renyi_graph(n, float(rng.uniform(0.2, 1.0)), seed=int(rng.integers(1 << 30)))
        g = graph_ops.assign_weights(g, graph_ops.RandomWeights(seed=int(rng.integers(1 << 30))))
        s = int(rng.integers(1, n + 1))
        sampled = engine.sample_clients(n, s, rng)
        W_t = rng.normal(size=(n, d))
        W_R = W_t.copy()
        W_R[list(sampled)] = rng.normal(size=(s, d))
        eta = float(rng.uniform(0.01, 1.0))
        global_lr = float(rng.uniform(0.01, 0.5))
        only = bool(rng.integers(2))
        # looked up on the module so a replaced implementation is what gets checked
        got = engine.server_regularize(W_R, sampled, g, eta, global_lr, only)
        want = engine.matrix_form_step(W_t, W_R, sampled, g, eta, global_lr, only)
        worst = max(worst, float(np.max(np.abs(got - want))))
    return CheckResult("matrix_oracle", worst <= tol, worst, tol, f"{n_rounds} random rounds")


def check_quadratic_convergence(tol=1e-6, rounds=2000):
    graph, models = reference_instance()
    centers, curv = analysis.quadratic_instance(models)
    W_star = analysis.solve_quadratic_optimum(graph, centers, curv, 0.5)
    if not np.allclose(W_star, [[1.0], [3.0]], atol=1e-10):
        return CheckResult("quadratic_convergence", False, float(np.max(np.abs(W_star - [[1.0], [3.0]]))),
                           1e-10, "W* is not (1, 3)")

    config = engine.TrainConfig(local_lr=0.5, local_steps=1, rounds=rounds, eta=0.5, batch_size=1,
                                seed=VERIFY_SEED, keep_iterates=True)
    history = engine.run_fedu(graph, models, None, config)
    W_fp = analysis.solve_round_fixed_point(graph, centers, curv, 0.5, 0.5, 1)
    summary = analysis.convergence_metrics(history, W_star=W_fp, tol=tol)

    # the fixed point approaches W* linearly in mu: offset per block mu / (2 - mu)
    offset_err = 0.0
    for mu in (0.5, 0.1, 0.01):
        W_mu = analysis.solve_round_fixed_point(graph, centers, curv, 0.5, mu, 1)
        expected = W_star + mu / (2 - mu) * np.array([[1.0], [-1.0]])
        offset_err = max(offset_err, float(np.max(np.abs(W_mu - expected))))

    passed = summary.final_gap <= tol and summary.decay_rate < 1 and offset_err <= 1e-10
    detail = f"rate={summary.decay_rate:.4f}, rounds_to_tol={summary.rounds_to_tol}, offset_err={offset_err:.1e}"
    return CheckResult("quadratic_convergence", passed, summary.final_gap, tol, detail)


def check_lemma1(n_trials=1000):
    graph, models = reference_instance()
    rng = seeding.derive_rng(VERIFY_SEED, seeding.PROBE, 2)
    report = analysis.check_lemma1(models, graph, eta=2.0, n_trials=n_trials, rng=rng)
    sigma_ok = abs(report.sigma2_squared - 32.0) <= 1e-12 * 32.0
    return CheckResult("lemma1", report.passed and sigma_ok, report.max_violation, 1e-9,
                       f"sigma2^2={report.sigma2_squared:g}")


def check_gradients(n_probes=20):
    rng = seeding.derive_rng(VERIFY_SEED, seeding.PROBE, 3)
    features = rng.normal(size=(12, 4))
    labels = rng.integers(0, 3, size=12)
    batch = Batch(features, labels)
    worst = {}
    for name, model, limit in (("mlr", MLRModel(4, 3, l2_alpha=0.01), 1e-5),
                               ("mlp", MLPModel([4, 6, 3], l2_alpha=0.01), 1e-4)):
        errs = []
        for _ in range(n_probes):
            w = model.init_params(rng) + 0.1 * rng.normal(size=model.param_dim)
            errs.append(finite_difference_error(model, batch, w))
        worst[name] = (max(errs), limit)
    passed = all(err < limit for err, limit in worst.values())
    detail = ", ".join(f"{k} {v[0]:.1e}" for k, v in worst.items())
    return CheckResult("gradients", passed, max(v[0] / v[1] for v in worst.values()), 1.0, detail)


def check_dfedu_equivalence(rounds=200):
    dataset = small_classification()
    graph = graph_ops.assign_weights(graph_ops.ring_graph(dataset.n_clients),
                                     graph_ops.RandomWeights(seed=VERIFY_SEED))
    models = [MLRModel(dataset.n_features, dataset.n_classes, 1e-3)] * dataset.n_clients
    base = engine.TrainConfig(local_lr=0.05, local_steps=5, rounds=rounds, eta=0.1, batch_size=8,
                              seed=VERIFY_SEED, eval_every=1)
    central = engine.run_fedu(graph, models, dataset, base)
    decentral = engine.run_dfedu(graph, models, dataset, replace(base, mode=engine.DECENTRALIZED))
    same = central.objective == decentral.objective and np.array_equal(central.final_params,
                                                                      decentral.final_params)
    diff = float(np.max(np.abs(np.array(central.objective) - np.array(decentral.objective))))
    return CheckResult("dfedu_equals_fedu", same, diff, 0.0, f"{rounds} rounds, bitwise")


def check_consensus_limit():
    rng = seeding.derive_rng(VERIFY_SEED, seeding.PROBE, 4)
    graph = graph_ops.complete_graph(5)
    centers = rng.normal(scale=3.0, size=(5, 3))
    scale = float(max(np.linalg.norm(a - b) for a in centers for b in centers))
    values = []
    for eta in (0.0, 0.1, 1.0, 10.0, 1e3, 1e6):
        W = analysis.solve_quadratic_optimum(graph, centers, np.ones(5), eta)
        values.append(graph_ops.disagreement(graph, W))
    monotone = all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    final = values[-1] / scale
    return CheckResult("consensus_limit", monotone and final < 1e-4, final, 1e-4,
                       "disagreement " + " ".join(f"{v:.1e}" for v in values))


def check_sampling(n_draws=40000, n_clients=100, sample_size=10, tol=0.01):
    rng = seeding.derive_rng(VERIFY_SEED, seeding.PROBE, 5)
    counts = np.zeros(n_clients)
    for _ in range(n_draws):
        counts[list(engine.sample_clients(n_clients, sample_size, rng))] += 1
    worst = float(np.max(np.abs(counts / n_draws - sample_size / n_clients)))
    return CheckResult("sampling_uniformity", worst <= tol, worst, tol, f"{n_draws} draws")


def check_stale_clients(rounds=30):
    rng = seeding.derive_rng(VERIFY_SEED, seeding.PROBE, 6)
    graph = graph_ops.ring_graph(8)
    models = [QuadraticModel(c) for c in rng.normal(size=(8, 2))]
    config = engine.TrainConfig(local_lr=0.1, local_steps=3, rounds=rounds, eta=0.5, sample_size=3,
                                batch_size=1, seed=VERIFY_SEED, keep_iterates=True, eval_every=1)
    history = engine.run_fedu(graph, models, None, config)
    changed = 0
    for t in range(rounds):
        stale = sorted(set(range(8)) - set(history.sampled[t + 1]))
        if not np.array_equal(history.iterates[t][stale], history.iterates[t + 1][stale]):
            changed += 1
    return CheckResult("stale_clients", changed == 0, float(changed), 0.0, f"{rounds} rounds, S=3 of 8")


def run_checks(tol=1e-12):
    checks = [
        ("matrix_oracle", lambda: check_matrix_oracle(tol)),
        ("quadratic_convergence", check_quadratic_convergence),
        ("lemma1", check_lemma1),
        ("gradients", check_gradients),
        ("dfedu_equals_fedu", check_dfedu_equivalence),
        ("consensus_limit", check_consensus_limit),
        ("sampling_uniformity", check_sampling),
        ("stale_clients", check_stale_clients),
    ]
    results = []
    for name, check in checks:
        started = time.perf_counter()
        try:
            result = check()
        except Exception as e:
            logging.error(f"❌ Check {name} raised: {e}", exc_info=True)
            result = CheckResult(name, False, float('nan'), float('nan'), f"error: {e}")
        result.seconds = time.perf_counter() - started
        status = "✅ PASS" if result.passed else "❌ FAIL"
        logging.info(f"{status} {result.name}: value={result.value:.3e} (threshold {result.threshold:.1e}) "
                     f"{result.detail}")
        results.append(result)
    return results


def format_table(results):
    lines = [f"{'check':<24}{'status':<8}{'value':>12}{'threshold':>12}{'time':>9}"]
    for r in results:
        lines.append(f"{r.name:<24}{'PASS' if r.passed else 'FAIL':<8}{r.value:>12.3e}"
                     f"{r.threshold:>12.1e}{r.seconds:>8.2f}s")
    return "\n".join(lines)


def cmd_verify(tol=1e-12, report_path=None):
    """fedlap verify [--tol X]; exit 0 iff every check passes."""
    results = run_checks(tol)
    logging.info("Verification summary:\n" + format_table(results))
    if report_path:
        storage.write_json({"tol": tol, "checks": [vars(r) for r in results]}, report_path)
    failed = [r.name for r in results if not r.passed]
    if failed:
        logging.error(f"❌ Verification failed: {', '.join(failed)}")
        return EXIT_VERIFY_FAILED
    logging.info(f"✅ All {len(results)} checks passed")
    return EXIT_OK
