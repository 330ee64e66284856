"""Release gate: every criterion below must hold on a stock CPU install.

Run with `pytest tests/test_acceptance.py -s` to see one PASS/FAIL line per
criterion.  The trained-model criteria share a single session-scoped
training run, so the whole file costs one desk-scale training plus seconds.
"""

import math
import time

import numpy as np
import pytest

from transtok import lattice, loss as loss_mod
from transtok.corpus import CorpusConfig, generate_synthetic
from transtok.decode import DecodeConfig
from transtok.lattice import AlphaBeta, backward, brute_force_likelihood, forward, occupancy
from transtok.loss import LogitsLattice, PruneBounds, gather_window_logits, prob_lattice_from_logits, pruned_loss, prune_bounds, transducer_loss
from transtok.pipeline import (
    RunConfig,
    rate_correlation,
    run_eval,
    run_gradcheck,
    run_rate_sweep,
    run_train,
)
from transtok.quantizer import fit_kmeans, inertia, lloyd_iterations, seed_centroids


def report(num: int, name: str, ok: bool, detail: str) -> bool:
    print(f"criterion {num} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok


def random_normalized_instance(rng, u_max=4, t_range=(1, 4), v_max=5):
    U = int(rng.integers(1, u_max + 1))
    T = int(rng.integers(t_range[0], t_range[1] + 1))
    V = int(rng.integers(1, v_max + 1))
    logits = rng.normal(0.0, 2.0, size=(U, T + 1, V + 1))
    y = rng.integers(0, V, size=T)
    return prob_lattice_from_logits(LogitsLattice(logits=logits), y)


# -- criteria 1 and 2: dynamic programs against enumeration ------------------


def test_criterion_1_oracle_equivalence():
    rng = np.random.default_rng(101)
    t0 = time.monotonic()
    worst = 0.0
    for _ in range(100):
        lat = random_normalized_instance(rng)
        f = forward(lat)
        worst = max(worst, abs(f.log_likelihood - brute_force_likelihood(lat)))
    elapsed = time.monotonic() - t0
    ok = worst <= 1e-9 and elapsed < 5.0
    assert report(
        1,
        "forward equals enumeration on 100 normalized lattices",
        ok,
        f"max abs err {worst:.3e} (limit 1e-9), {elapsed:.2f}s (limit 5s)",
    )


def test_criterion_2_duality_and_diagonal_mass():
    rng = np.random.default_rng(101)
    worst_dual = 0.0
    worst_diag = 0.0
    for _ in range(100):
        lat = random_normalized_instance(rng)
        f = forward(lat)
        b = backward(lat)
        worst_dual = max(worst_dual, abs(f.log_likelihood - b.log_likelihood))
        occ = occupancy(lat, AlphaBeta(f.alpha, b.beta, f.log_likelihood))
        U = lat.log_blank.shape[0]
        T = lat.log_emit.shape[1]
        for c in range(U + T):
            s = sum(occ.gamma[u, c - u] for u in range(U) if 0 <= c - u <= T)
            worst_diag = max(worst_diag, abs(s - 1.0))
    ok = worst_dual <= 1e-9 and worst_diag <= 1e-9
    assert report(
        2,
        "forward/backward duality and per-diagonal posterior mass",
        ok,
        f"max duality gap {worst_dual:.3e}, max |diag sum - 1| {worst_diag:.3e} (limits 1e-9)",
    )


# -- criterion 3: gradients -----------------------------------------------------


def test_criterion_3_gradient_suite():
    t0 = time.monotonic()
    rep = run_gradcheck(seed=0, n_loss=50, n_model=5)
    elapsed = time.monotonic() - t0
    loss_checks = [c for c in rep.checks if c.name == "loss_grad_vs_fd"]
    model_checks = [c for c in rep.checks if c.name.startswith("model_grad_vs_fd/")]
    worst_loss = max(c.value for c in loss_checks)
    worst_model = max(c.value for c in model_checks)
    ok = rep.passed and elapsed < 60.0 and len(model_checks) > 0
    assert report(
        3,
        "analytic gradients vs central differences",
        ok,
        f"loss-level max rel err {worst_loss:.3e} (limit 1e-5, 50 instances), "
        f"end-to-end {worst_model:.3e} (limit 1e-4, 5 instances), {elapsed:.1f}s (limit 60s)",
    )


# -- criterion 4: windowed loss convergence -----------------------------------------


def test_criterion_4_pruning_convergence():
    rng = np.random.default_rng(104)
    worst_monotone = -math.inf
    worst_equal = 0.0
    worst_bound = -math.inf
    for _ in range(40):
        U = int(rng.integers(1, 5))
        T = int(rng.integers(0, 9))
        V = int(rng.integers(1, 6))
        logits = rng.normal(0.0, 2.0, size=(U, T + 1, V + 1))
        y = rng.integers(0, V, size=T)
        exact = transducer_loss(LogitsLattice(logits), y)
        base = np.minimum(np.arange(U, dtype=np.int64), T)
        prev = math.inf
        for S in range(1, T + 3):
            W = min(S, T + 1)
            bounds = PruneBounds(start=np.minimum(base, T + 1 - W), S=S)
            res = pruned_loss(gather_window_logits(logits, bounds), y, bounds)
            if math.isfinite(res.loss) and math.isfinite(prev):
                worst_monotone = max(worst_monotone, res.loss - prev)
            worst_bound = max(worst_bound, exact.loss - res.loss)
            prev = res.loss
        worst_equal = max(worst_equal, abs(prev - exact.loss))
        grown = prune_bounds(exact.node_posteriors, int(rng.integers(1, T + 3)))
        res = pruned_loss(gather_window_logits(logits, grown), y, grown)
        worst_bound = max(worst_bound, exact.loss - res.loss)
    ok = worst_monotone <= 1e-9 and worst_equal <= 1e-9 and worst_bound <= 1e-12
    assert report(
        4,
        "windowed loss nests monotonically onto the exact loss",
        ok,
        f"max monotonicity violation {worst_monotone:.3e} (limit 1e-9), "
        f"full-window gap {worst_equal:.3e} (limit 1e-9), "
        f"exact-minus-windowed {worst_bound:.3e} (limit 1e-12)",
    )


# -- criterion 5: quantizer ------------------------------------------------------


def test_criterion_5_quantizer_properties():
    rng = np.random.default_rng(105)
    worst_rise = -math.inf
    for trial in range(10):
        data = np.concatenate(
            [
                rng.normal(0.0, 1.0, size=(30, 3)),
                rng.normal(6.0, 1.0, size=(30, 3)),
                rng.normal(-6.0, 0.5, size=(20, 3)),
            ]
        )
        centroids = seed_centroids(data, 5, np.random.default_rng(trial))
        costs = [c for _, _, c in lloyd_iterations(data, centroids, max_iters=60)]
        for a, b in zip(costs, costs[1:]):
            worst_rise = max(worst_rise, b - a)

    four = np.asarray([[0.0], [1.0], [10.0], [11.0]])
    cb = fit_kmeans(four, k=2, seed=0)
    pair_inertia = inertia(cb, four)

    big = rng.normal(size=(120, 6))
    refit_equal = all(
        np.array_equal(fit_kmeans(big, k=7, seed=s).centroids, fit_kmeans(big, k=7, seed=s).centroids)
        for s in (0, 1, 2)
    )

    ok = worst_rise <= 1e-12 and pair_inertia == 1.0 and refit_equal
    assert report(
        5,
        "Lloyd monotonicity, exact pair-split inertia, deterministic refits",
        ok,
        f"max per-iteration inertia rise {worst_rise:.3e} (limit 1e-12), "
        f"pair instance inertia {pair_inertia!r} (must be exactly 1.0), "
        f"refits identical: {refit_equal}",
    )


# -- criteria 6 and 7: the trained desk model ----------------------------------------


@pytest.fixture(scope="session")
def desk_run():
    train = generate_synthetic(CorpusConfig(n_utts=2000, seed=0))
    held_out = generate_synthetic(CorpusConfig(n_utts=200, seed=1))
    cfg = RunConfig()
    t0 = time.monotonic()
    params, history = run_train(cfg, train)
    train_s = time.monotonic() - t0
    report = run_eval(params, held_out, DecodeConfig(mode="greedy"))
    return params, held_out, report, train_s, history


def test_criterion_6_desk_scale_learning(desk_run):
    params, held_out, eval_report, train_s, history = desk_run
    ter = eval_report.token_error_rate
    ok = ter <= 0.05 and train_s <= 900.0
    assert report(
        6,
        "greedy token error rate after desk-scale training",
        ok,
        f"TER {ter:.4f} on {len(held_out)} held-out utterances (limit 0.05), "
        f"trained 2000 utterances in {train_s:.0f}s (limit 900s)",
    )


def test_criterion_7_rate_controllability(desk_run):
    params, held_out, _, _, _ = desk_run
    sweep = run_rate_sweep(
        params, [u.text for u in held_out], [1, 2, 3], DecodeConfig(mode="greedy")
    )
    corr = sweep["correlation"]
    means = [sweep["mean_length_by_rate"][k] for k in ("1", "2", "3")]
    increasing = means[0] < means[1] < means[2]
    ok = corr is not None and corr >= 0.8 and increasing
    assert report(
        7,
        "conditioned rate controls realized length",
        ok,
        f"Pearson {0.0 if corr is None else corr:.4f} (limit 0.8), "
        f"mean emitted length by rate {[round(m, 2) for m in means]} (must strictly increase)",
    )


# -- criterion 8: bitwise determinism --------------------------------------------------


def test_criterion_8_byte_identical_runs(tmp_path):
    utts = generate_synthetic(CorpusConfig(n_utts=80, u_min=3, u_max=6, seed=2))
    held_out = generate_synthetic(CorpusConfig(n_utts=30, u_min=3, u_max=6, seed=3))
    cfg = RunConfig(epochs=3, seed=5)
    blobs = []
    for run in ("a", "b"):
        ck = tmp_path / f"ck_{run}.json"
        rep = tmp_path / f"report_{run}.json"
        params, _ = run_train(cfg, utts, checkpoint_path=str(ck))
        run_eval(params, held_out, DecodeConfig(mode="greedy")).save(str(rep))
        blobs.append((ck.read_bytes(), rep.read_bytes()))
    same_ck = blobs[0][0] == blobs[1][0]
    same_rep = blobs[0][1] == blobs[1][1]
    ok = same_ck and same_rep
    assert report(
        8,
        "train + eval is byte-identical under a fixed seed",
        ok,
        f"checkpoints identical: {same_ck} ({len(blobs[0][0])} bytes), "
        f"eval reports identical: {same_rep} ({len(blobs[0][1])} bytes)",
    )
