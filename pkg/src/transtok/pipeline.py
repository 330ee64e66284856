"""Training, evaluation, and self-check drivers plus their metrics.

Training couples the two loss heads: the additive head is scored exactly
and its node posteriors choose the windows inside which the main joiner is
scored and differentiated.  Should a degenerate window set exclude every
alignment (possible early in training, when posteriors are still flat),
that utterance falls back to the exact loss on the full lattice for the
step instead of propagating an infinite loss.

Reported losses are nats per emitted token.  Everything is deterministic
given the seeds: fixed parameter iteration order, seeded shuffles, seeded
decoders.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff, decode as decode_mod, lattice, loss as loss_mod, model as model_mod
from .corpus import Utterance, rate_frames
from .decode import DecodeConfig
from .loss import LogitsLattice
from .model import AdamState, ModelDims, ModelParams

REPORT_VERSION = 1
LOG_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the run is aborted rather than continued."""


# -- metrics ---------------------------------------------------------------


def levenshtein(a, b) -> int:
    """Unit-cost edit distance with a rolling row."""
    a = list(a)
    b = list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[len(b)]


def token_error_rate(hyp, ref) -> float:
    """Edit distance normalized by the reference length."""
    ref = list(ref)
    if not ref:
        raise ValueError("token error rate undefined for an empty reference")
    return levenshtein(hyp, ref) / len(ref)


def rate_correlation(pairs) -> float:
    """Pearson correlation over (conditioned, realized) pairs.  A constant
    series on either side is an error, not zero."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("need at least two pairs for a correlation")
    x = np.asarray([p[0] for p in pairs], dtype=np.float64)
    y = np.asarray([p[1] for p in pairs], dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt(np.sum(xc * xc)))
    sy = float(np.sqrt(np.sum(yc * yc)))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("correlation undefined for a constant series")
    return float(np.sum(xc * yc) / (sx * sy))


# -- run configuration -----------------------------------------------------


@dataclass
class RunConfig:
    """Desk-scale defaults throughout.  prune_width must exceed the largest
    number of consecutive emissions one text position can need (two tokens
    per repetition), otherwise the windows cannot contain any valid
    alignment for fast-rate utterances."""

    d_model: int = 32
    d_joiner: int = 64
    d_ref: int = 16
    ref_frame_dim: int = 8
    text_vocab: int = 16
    token_vocab: int = 32
    alpha1: float = 0.5
    alpha2: float = 1.0
    prune_width: int = 8
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0

    def dims(self) -> ModelDims:
        return ModelDims(
            d_model=self.d_model,
            d_joiner=self.d_joiner,
            d_ref=self.d_ref,
            ref_frame_dim=self.ref_frame_dim,
            text_vocab=self.text_vocab,
            token_vocab=self.token_vocab,
        )

    def validate(self) -> None:
        self.dims().validate()
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("loss scales must be non-negative")
        if self.prune_width < 1:
            raise ValueError("prune_width must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


# -- per-utterance objective ----------------------------------------------


def utterance_losses(params: ModelParams, utt: Utterance, cfg: RunConfig, bounds=None):
    """Forward-only combined objective.  Returns (combined, simple, main)
    losses; bounds may be frozen by the caller (the gradient checker does
    this so the objective stays differentiable under perturbation)."""
    y = np.asarray(utt.tokens, dtype=np.int64)
    main, enc_proj, dec_proj = model_mod.forward_outputs(params, utt.text, y, utt.ref_frames)
    simple_lat = loss_mod.simple_joiner_logits(enc_proj, dec_proj)
    res_s = loss_mod.transducer_loss(simple_lat, y)
    if bounds is None:
        bounds = loss_mod.prune_bounds(res_s.node_posteriors, cfg.prune_width)
    res_p = loss_mod.pruned_loss(loss_mod.gather_window_logits(main, bounds), y, bounds)
    if not math.isfinite(res_p.loss):
        res_p = loss_mod.transducer_loss(LogitsLattice(main), y)
    comb = loss_mod.combined_objective(res_s, res_p, cfg.alpha1, cfg.alpha2)
    return comb.loss, res_s.loss, res_p.loss


def utterance_grads(params: ModelParams, utt: Utterance, cfg: RunConfig, bounds=None):
    """Combined loss and parameter gradients for one utterance.  Returns
    (loss, grads, used_fallback)."""
    y = np.asarray(utt.tokens, dtype=np.int64)
    g = model_mod.build_graph(params, utt.text, y, utt.ref_frames)
    simple_lat = loss_mod.simple_joiner_logits(g.enc_proj.data, g.dec_proj.data)
    res_s = loss_mod.transducer_loss(simple_lat, y)
    if bounds is None:
        bounds = loss_mod.prune_bounds(res_s.node_posteriors, cfg.prune_width)
    windowed = loss_mod.gather_window_logits(g.main_logits.data, bounds)
    res_p = loss_mod.pruned_loss(windowed, y, bounds)
    fallback = not math.isfinite(res_p.loss)
    if fallback:
        res_p = loss_mod.transducer_loss(LogitsLattice(g.main_logits.data), y)
    comb = loss_mod.combined_objective(res_s, res_p, cfg.alpha1, cfg.alpha2)
    # the additive structure reduces the simple-head gradient over the
    # opposite axis of each projection
    g.enc_proj.grad += comb.grad_simple.sum(axis=1)
    g.dec_proj.grad += comb.grad_simple.sum(axis=0)
    if fallback:
        g.main_logits.grad += comb.grad_pruned
    else:
        g.main_logits.grad += loss_mod.scatter_window_grads(comb.grad_pruned, bounds, len(y))
    autodiff.backward(g.outputs())
    return comb.loss, g.param_grads(), fallback


# -- training ---------------------------------------------------------------


def _check_corpus(cfg: RunConfig, utts: list[Utterance]) -> None:
    if not utts:
        raise ValueError("empty corpus")
    for i, utt in enumerate(utts):
        utt.validate()
        if max(utt.text) >= cfg.text_vocab or min(utt.text) < 0:
            raise ValueError(f"utterance {i}: text symbol out of range")
        if utt.tokens and (max(utt.tokens) >= cfg.token_vocab or min(utt.tokens) < 0):
            raise ValueError(f"utterance {i}: token id out of range")
        if utt.ref_frames.shape[1] != cfg.ref_frame_dim:
            raise ValueError(f"utterance {i}: reference frame dim mismatch")


def run_train(
    cfg: RunConfig,
    utts: list[Utterance],
    checkpoint_path: str | None = None,
    log_path: str | None = None,
) -> tuple[ModelParams, list[dict]]:
    """Adam over shuffled minibatches; per-utterance gradients are averaged
    with a per-token normalization so long utterances do not dominate.  A
    checkpoint is written after every epoch.  Returns the final parameters
    and the per-epoch log records."""
    cfg.validate()
    _check_corpus(cfg, utts)
    params = model_mod.init_params(cfg.dims(), cfg.seed)
    opt = model_mod.init_adam(params)
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []
    log_f = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(utts))
            epoch_loss = 0.0
            fallbacks = 0
            for lo in range(0, len(order), cfg.batch_size):
                batch = order[lo : lo + cfg.batch_size]
                acc = {k: np.zeros_like(v) for k, v in params.tensors.items()}
                for idx in batch:
                    utt = utts[int(idx)]
                    n_tok = max(len(utt.tokens), 1)
                    l, grads, fb = utterance_grads(params, utt, cfg)
                    if not math.isfinite(l):
                        raise TrainingDiverged(
                            f"non-finite loss at epoch {epoch}, utterance {int(idx)}"
                        )
                    fallbacks += fb
                    scale = 1.0 / (len(batch) * n_tok)
                    for k in acc:
                        acc[k] += grads[k] * scale
                    epoch_loss += l / n_tok
                model_mod.adam_step(
                    params, acc, opt, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps
                )
            record = {
                "version": LOG_VERSION,
                "epoch": epoch,
                "mean_loss_per_token": epoch_loss / len(utts),
                "pruned_fallbacks": fallbacks,
                "optimizer_steps": opt.step,
            }
            history.append(record)
            if log_f:
                log_f.write(json.dumps(record) + "\n")
                log_f.flush()
            if checkpoint_path:
                model_mod.save_checkpoint(params, checkpoint_path, step=opt.step)
    finally:
        if log_f:
            log_f.close()
    return params, history


# -- evaluation --------------------------------------------------------------


@dataclass
class EvalReport:
    """Corpus-level token error rate (pooled edits over pooled reference
    length), rate correlation over (conditioned, realized tokens-per-symbol)
    pairs, and per-utterance records sufficient to recompute both.  The
    correlation is None when undefined, e.g. a single-rate corpus."""

    token_error_rate: float
    rate_correlation: float | None
    records: list[dict]
    rate_sweep: dict | None = None

    def to_dict(self) -> dict:
        payload = {
            "version": REPORT_VERSION,
            "token_error_rate": self.token_error_rate,
            "rate_correlation": self.rate_correlation,
            "records": self.records,
        }
        if self.rate_sweep is not None:
            payload["rate_sweep"] = self.rate_sweep
        return payload

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, sort_keys=True)
            f.write("\n")


def run_eval(params: ModelParams, utts: list[Utterance], dcfg: DecodeConfig) -> EvalReport:
    if not utts:
        raise ValueError("empty corpus")
    dcfg.validate()
    records = []
    total_edits = 0
    total_ref = 0
    pairs = []
    for i, utt in enumerate(utts):
        out = decode_mod.decode(params, utt.text, utt.ref_frames, dcfg)
        edits = levenshtein(out.tokens, utt.tokens)
        realized = len(out.tokens) / len(utt.text)
        total_edits += edits
        total_ref += len(utt.tokens)
        pairs.append((utt.rate, realized))
        records.append(
            {
                "index": i,
                "conditioned_rate": utt.rate,
                "realized_rate": realized,
                "edits": edits,
                "ref_len": len(utt.tokens),
                "hyp_len": len(out.tokens),
            }
        )
    if total_ref == 0:
        raise ValueError("token error rate undefined: empty references")
    try:
        corr = rate_correlation(pairs)
    except ValueError:
        corr = None
    return EvalReport(
        token_error_rate=total_edits / total_ref,
        rate_correlation=corr,
        records=records,
    )


def run_rate_sweep(
    params: ModelParams,
    texts: list[list[int]],
    rates: list[int],
    dcfg: DecodeConfig,
    n_ref_frames: int = 4,
) -> dict:
    """Decode every text once per rate with noiseless conditioning frames.
    Reports the correlation between conditioned and realized rate (None
    when realized rates are constant, as an untrained model produces) and
    the mean emitted length per rate."""
    if not texts or not rates:
        raise ValueError("need texts and rates to sweep")
    dcfg.validate()
    dims = params.dims
    pairs = []
    mean_len: dict[str, float] = {}
    for rate in rates:
        frames = rate_frames(rate, n_ref_frames, dims.ref_frame_dim, noise_std=0.0)
        lengths = []
        for text in texts:
            out = decode_mod.decode(params, text, frames, dcfg)
            lengths.append(len(out.tokens))
            pairs.append((float(rate), len(out.tokens) / len(text)))
        mean_len[str(rate)] = float(np.mean(lengths))
    try:
        corr = rate_correlation(pairs)
    except ValueError:
        corr = None
    return {
        "correlation": corr,
        "mean_length_by_rate": mean_len,
        "rates": [float(r) for r in rates],
    }


# -- self checks --------------------------------------------------------------


@dataclass
class CheckEntry:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def __post_init__(self):
        # numpy scalars sneak in from comparisons; keep the report JSON-safe
        self.passed = bool(self.passed)
        self.value = float(self.value)
        self.threshold = float(self.threshold)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CheckReport:
    checks: list[CheckEntry] = field(default_factory=list)
    elapsed_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "passed": self.passed,
            "elapsed_s": self.elapsed_s,
            "checks": [c.to_dict() for c in self.checks],
        }


def _max_rel_err(analytic: np.ndarray, reference: np.ndarray, floor: float = 1e-3) -> float:
    """Entries below the floor are compared absolutely; this keeps
    finite-difference noise on structurally zero entries from swamping the
    comparison while still measuring real gradients relatively."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(reference)), floor)
    return float(np.max(np.abs(analytic - reference) / denom)) if analytic.size else 0.0


def _random_loss_instance(rng):
    U = int(rng.integers(1, 5))
    T = int(rng.integers(0, 5))
    V = int(rng.integers(1, 6))
    logits = rng.normal(0.0, 2.0, size=(U, T + 1, V + 1))
    y = rng.integers(0, V, size=T)
    return LogitsLattice(logits=logits), y


def run_gradcheck(seed: int = 0, inject_fault: bool = False, n_loss: int = 50, n_model: int = 5) -> CheckReport:
    """Loss-level and end-to-end gradients against central finite
    differences.  inject_fault perturbs one analytic gradient entry, which
    must be caught; it proves the harness can fail."""
    t0 = time.monotonic()
    rng = np.random.default_rng(seed)
    report = CheckReport()
    h = 1e-5

    worst = 0.0
    for i in range(n_loss):
        lat, y = _random_loss_instance(rng)
        res = loss_mod.transducer_loss(lat, y)
        analytic = res.grad_logits.copy()
        if inject_fault and i == 0:
            analytic[0, 0, 0] += 1e-3
        fd = np.zeros_like(lat.logits)
        it = np.nditer(lat.logits, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            plus = lat.logits.copy()
            plus[idx] += h
            minus = lat.logits.copy()
            minus[idx] -= h
            fd[idx] = (
                loss_mod.transducer_loss(LogitsLattice(plus), y).loss
                - loss_mod.transducer_loss(LogitsLattice(minus), y).loss
            ) / (2 * h)
        worst = max(worst, _max_rel_err(analytic, fd))
    report.checks.append(
        CheckEntry(
            name="loss_grad_vs_fd",
            passed=worst <= 1e-5,
            value=worst,
            threshold=1e-5,
            detail=f"{n_loss} random lattices, U,T <= 4, V <= 5",
        )
    )

    # End-to-end: small dims keep the parameter count tractable while every
    # code path (both heads, windows, conditioning) stays exercised.
    cfg = RunConfig(
        d_model=6,
        d_joiner=8,
        d_ref=4,
        ref_frame_dim=3,
        text_vocab=5,
        token_vocab=6,
        prune_width=3,
    )
    per_tensor: dict[str, float] = {}
    for i in range(n_model):
        params = model_mod.init_params(cfg.dims(), seed=seed + 100 + i)
        text = rng.integers(0, cfg.text_vocab, size=3)
        y = rng.integers(0, cfg.token_vocab, size=3)
        utt = Utterance(
            text=text.tolist(),
            tokens=y.tolist(),
            rate=1.0,
            ref_frames=rng.normal(size=(2, cfg.ref_frame_dim)),
        )
        # bounds frozen at the base point so the objective is differentiable
        main, enc_proj, dec_proj = model_mod.forward_outputs(params, utt.text, y, utt.ref_frames)
        res_s = loss_mod.transducer_loss(loss_mod.simple_joiner_logits(enc_proj, dec_proj), y)
        bounds = loss_mod.prune_bounds(res_s.node_posteriors, cfg.prune_width)
        base_loss, _, _ = utterance_losses(params, utt, cfg, bounds=bounds)
        if not math.isfinite(base_loss):
            continue
        _, grads, _ = utterance_grads(params, utt, cfg, bounds=bounds)
        for name, arr in params.tensors.items():
            fd = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + h
                lp, _, _ = utterance_losses(params, utt, cfg, bounds=bounds)
                arr[idx] = old - h
                lm, _, _ = utterance_losses(params, utt, cfg, bounds=bounds)
                arr[idx] = old
                fd[idx] = (lp - lm) / (2 * h)
            err = _max_rel_err(grads[name], fd)
            per_tensor[name] = max(per_tensor.get(name, 0.0), err)
    for name in sorted(per_tensor):
        report.checks.append(
            CheckEntry(
                name=f"model_grad_vs_fd/{name}",
                passed=per_tensor[name] <= 1e-4,
                value=per_tensor[name],
                threshold=1e-4,
                detail=f"{n_model} desk instances, U=3, T=3",
            )
        )
    report.elapsed_s = time.monotonic() - t0
    return report


def _random_prob_lattice(rng, U, T):
    blank = rng.uniform(0.05, 0.9, size=(U, T + 1))
    emit = rng.uniform(0.05, 0.9, size=(U, T))
    scale = np.maximum(1.0, blank[:, :T] + emit + 0.01)
    emit = emit / scale
    blank = blank.copy()
    blank[:, :T] = blank[:, :T] / scale
    return lattice.ProbLattice(log_blank=np.log(blank), log_emit=np.log(emit))


def run_oracle_check(seed: int = 0, n_instances: int = 100) -> CheckReport:
    """DP results against the enumeration oracle, the forward/backward
    duality, posterior normalization, and windowed-loss convergence."""
    t0 = time.monotonic()
    rng = np.random.default_rng(seed)
    report = CheckReport()

    worst_fwd = 0.0
    worst_dual = 0.0
    worst_diag = 0.0
    for _ in range(n_instances):
        U = int(rng.integers(1, 5))
        T = int(rng.integers(0, 5))
        lat = _random_prob_lattice(rng, U, T)
        f = lattice.forward(lat)
        b = lattice.backward(lat)
        worst_fwd = max(worst_fwd, abs(f.log_likelihood - lattice.brute_force_likelihood(lat)))
        worst_dual = max(worst_dual, abs(f.log_likelihood - b.log_likelihood))
        occ = lattice.occupancy(lat, lattice.AlphaBeta(f.alpha, b.beta, f.log_likelihood))
        for c in range(U + T):
            s = sum(occ.gamma[u, c - u] for u in range(U) if 0 <= c - u <= T)
            worst_diag = max(worst_diag, abs(s - 1.0))
    report.checks.append(
        CheckEntry("forward_vs_enumeration", worst_fwd <= 1e-9, worst_fwd, 1e-9,
                   f"{n_instances} random lattices")
    )
    report.checks.append(
        CheckEntry("forward_backward_duality", worst_dual <= 1e-9, worst_dual, 1e-9)
    )
    report.checks.append(
        CheckEntry("antidiagonal_normalization", worst_diag <= 1e-9, worst_diag, 1e-9)
    )

    worst_monotone = 0.0
    worst_equal = 0.0
    worst_bound = 0.0
    for _ in range(20):
        U = int(rng.integers(1, 5))
        T = int(rng.integers(0, 9))
        V = int(rng.integers(1, 6))
        logits = rng.normal(0.0, 2.0, size=(U, T + 1, V + 1))
        y = rng.integers(0, V, size=T)
        exact = loss_mod.transducer_loss(LogitsLattice(logits), y)
        prev = math.inf
        base = np.minimum(np.arange(U, dtype=np.int64), T)
        for S in range(1, T + 3):
            W = min(S, T + 1)
            bounds = loss_mod.PruneBounds(start=np.minimum(base, T + 1 - W), S=S)
            res = loss_mod.pruned_loss(loss_mod.gather_window_logits(logits, bounds), y, bounds)
            worst_monotone = max(worst_monotone, res.loss - prev if math.isfinite(res.loss) and math.isfinite(prev) else 0.0)
            worst_bound = max(worst_bound, exact.loss - res.loss)
            prev = res.loss
        worst_equal = max(worst_equal, abs(prev - exact.loss))
        # argmax-derived windows must also respect the lower bound
        gb = loss_mod.prune_bounds(exact.node_posteriors, int(rng.integers(1, T + 3)))
        res = loss_mod.pruned_loss(loss_mod.gather_window_logits(logits, gb), y, gb)
        worst_bound = max(worst_bound, exact.loss - res.loss)
    report.checks.append(
        CheckEntry("pruned_nested_monotone", worst_monotone <= 1e-9, worst_monotone, 1e-9,
                   "nested windows, T <= 8")
    )
    report.checks.append(
        CheckEntry("pruned_full_window_equality", worst_equal <= 1e-9, worst_equal, 1e-9)
    )
    report.checks.append(
        CheckEntry("pruned_lower_bounds_exact", worst_bound <= 1e-12, worst_bound, 1e-12)
    )
    report.elapsed_s = time.monotonic() - t0
    return report
