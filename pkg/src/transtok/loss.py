"""Transducer losses over per-node logit distributions.

Each lattice node (u, t) carries a logit vector over the token vocabulary
plus one trailing blank slot; a per-node softmax turns it into the arc
distribution consumed by the lattice DP.  The exact loss marginalizes all
alignments.  The windowed variant restricts each text row u to a span of S
token counts, which is how the main joiner stays affordable at scale: the
cheap additive joiner is scored exactly, its node posteriors pick the
windows, and the expensive joiner is only evaluated (and differentiated)
inside them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import (
    NEG_INF,
    AlphaBeta,
    Occupancy,
    ProbLattice,
    forward_backward,
    logaddexp,
    occupancy,
)


@dataclass
class LogitsLattice:
    """Unnormalized per-node scores, shape (U, T+1, V+1).  Index V (the last
    slot) is blank; indices [0, V) are token ids.  Entries must be finite:
    masking is expressed through windows, never through -inf logits."""

    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)

    @property
    def U(self) -> int:
        return self.logits.shape[0]

    @property
    def T(self) -> int:
        return self.logits.shape[1] - 1

    @property
    def vocab_size(self) -> int:
        return self.logits.shape[2] - 1

    @property
    def blank_id(self) -> int:
        return self.logits.shape[2] - 1

    def validate(self) -> None:
        if self.logits.ndim != 3:
            raise ValueError(f"logits must be 3-d, got shape {self.logits.shape}")
        U, T1, V1 = self.logits.shape
        if U < 1 or T1 < 1 or V1 < 2:
            raise ValueError(f"need U >= 1, T >= 0 and at least one token symbol, got {self.logits.shape}")
        if not np.isfinite(self.logits).all():
            raise ValueError("logits must be finite")


@dataclass
class LossResult:
    """loss is the negative log-likelihood in nats.  grad_logits matches the
    shape of the scored logits (full lattice for the exact loss, windows for
    the pruned one).  node_posteriors is gamma per scored node."""

    loss: float
    grad_logits: np.ndarray
    node_posteriors: np.ndarray


@dataclass
class PruneBounds:
    """Per-row window starts over the token-count axis.  Row u may only use
    nodes (u, t) with start[u] <= t < start[u] + S (clipped to the axis)."""

    start: np.ndarray
    S: int

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=np.int64)

    def width(self, T: int) -> int:
        return min(self.S, T + 1)

    def validate(self, T: int) -> None:
        if self.S < 1:
            raise ValueError(f"window width must be >= 1, got {self.S}")
        if self.start.ndim != 1:
            raise ValueError("start must be 1-d")
        W = self.width(T)
        if np.any(self.start < 0) or np.any(self.start > T + 1 - W):
            raise ValueError(f"start entries must lie in [0, {T + 1 - W}]")
        d = np.diff(self.start)
        if np.any(d < 0):
            raise ValueError("start must be non-decreasing over rows")
        if np.any(d > self.S):
            raise ValueError("start may not jump by more than S between rows")


def _check_target(lattice: LogitsLattice, target: list[int] | np.ndarray) -> np.ndarray:
    y = np.asarray(target, dtype=np.int64)
    if y.ndim != 1 or y.shape[0] != lattice.T:
        raise ValueError(f"target length {y.shape} does not match lattice T={lattice.T}")
    if y.size and (y.min() < 0 or y.max() >= lattice.vocab_size):
        raise ValueError("target contains out-of-vocabulary token ids")
    return y


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    s = x - m
    return s - np.log(np.sum(np.exp(s), axis=axis, keepdims=True))


def prob_lattice_from_logits(lattice: LogitsLattice, target) -> ProbLattice:
    """Per-node log-softmax, then keep the blank column and the one token
    column that continues the target at each count t."""
    lattice.validate()
    y = _check_target(lattice, target)
    lsm = log_softmax(lattice.logits)
    T = lattice.T
    log_blank = lsm[:, :, lattice.blank_id]
    if T > 0:
        log_emit = lsm[:, np.arange(T), y]
    else:
        log_emit = np.zeros((lattice.U, 0))
    return ProbLattice(log_blank=log_blank, log_emit=log_emit)


def transducer_loss(lattice: LogitsLattice, target) -> LossResult:
    """Exact marginal loss with its analytic logit gradient.

    d loss / d logit(u, t, v) = gamma(u, t) * softmax(u, t)[v] - xi(u, t, v),
    where xi is nonzero only for the blank arc and the target continuation.
    """
    lattice.validate()
    y = _check_target(lattice, target)
    lat = prob_lattice_from_logits(lattice, y)
    ab = forward_backward(lat)
    occ = occupancy(lat, ab)
    U, T = lattice.U, lattice.T
    sm = np.exp(log_softmax(lattice.logits))
    grad = occ.gamma[:, :, None] * sm
    grad[:, :, lattice.blank_id] -= occ.xi_blank
    if T > 0:
        grad[:, np.arange(T), y] -= occ.xi_emit
    return LossResult(loss=-ab.log_likelihood, grad_logits=grad, node_posteriors=occ.gamma)


def simple_joiner_logits(enc_proj: np.ndarray, dec_proj: np.ndarray) -> LogitsLattice:
    """Rank-restricted additive join: logits[u, t] = enc_proj[u] + dec_proj[t].
    enc_proj has shape (U, V+1), dec_proj (T+1, V+1)."""
    enc_proj = np.asarray(enc_proj, dtype=np.float64)
    dec_proj = np.asarray(dec_proj, dtype=np.float64)
    if enc_proj.ndim != 2 or dec_proj.ndim != 2 or enc_proj.shape[1] != dec_proj.shape[1]:
        raise ValueError(
            f"projection shapes {enc_proj.shape} and {dec_proj.shape} do not join"
        )
    return LogitsLattice(logits=enc_proj[:, None, :] + dec_proj[None, :, :])


def prune_bounds(gamma_simple: np.ndarray, S: int) -> PruneBounds:
    """Window starts from the cheap loss's node posteriors.

    Per row, start is the argmax (first on ties) of the windowed posterior
    sum.  A forward pass then forces monotonicity and a backward pass caps
    jumps at S, keeping the staircase well-formed.
    """
    gamma = np.asarray(gamma_simple, dtype=np.float64)
    if gamma.ndim != 2:
        raise ValueError("gamma must be 2-d")
    if S < 1:
        raise ValueError(f"window width must be >= 1, got {S}")
    U, T1 = gamma.shape
    W = min(S, T1)
    cs = np.concatenate([np.zeros((U, 1)), np.cumsum(gamma, axis=1)], axis=1)
    sums = cs[:, W:] - cs[:, : T1 - W + 1]
    start = np.argmax(sums, axis=1).astype(np.int64)
    for u in range(1, U):
        if start[u] < start[u - 1]:
            start[u] = start[u - 1]
    for u in range(U - 2, -1, -1):
        if start[u + 1] - start[u] > S:
            start[u] = start[u + 1] - S
    return PruneBounds(start=start, S=S)


def gather_window_logits(logits: np.ndarray, bounds: PruneBounds) -> np.ndarray:
    """(U, T+1, V+1) -> (U, W, V+1), slot (u, j) = node (u, start[u] + j)."""
    logits = np.asarray(logits, dtype=np.float64)
    U, T1, _ = logits.shape
    bounds.validate(T1 - 1)
    W = bounds.width(T1 - 1)
    cols = bounds.start[:, None] + np.arange(W)[None, :]
    return logits[np.arange(U)[:, None], cols]


def scatter_window_grads(grad_w: np.ndarray, bounds: PruneBounds, T: int) -> np.ndarray:
    """Inverse placement of gather_window_logits; out-of-window positions
    stay zero."""
    grad_w = np.asarray(grad_w, dtype=np.float64)
    U, W, V1 = grad_w.shape
    out = np.zeros((U, T + 1, V1))
    cols = bounds.start[:, None] + np.arange(W)[None, :]
    out[np.arange(U)[:, None], cols] = grad_w
    return out


def pruned_loss(logits_w: np.ndarray, target, bounds: PruneBounds) -> LossResult:
    """Marginal loss over only the alignments that stay inside the windows.

    Arcs that would leave a window contribute -inf, so the result is always
    >= the exact loss; if no complete path survives the loss is +inf and the
    gradient is zero.  Softmax normalization per node is untouched by the
    windowing.  Storage here is (U, W, V+1) throughout.
    """
    logits_w = np.asarray(logits_w, dtype=np.float64)
    if logits_w.ndim != 3:
        raise ValueError("windowed logits must be 3-d")
    if not np.isfinite(logits_w).all():
        raise ValueError("logits must be finite")
    U, W, V1 = logits_w.shape
    y = np.asarray(target, dtype=np.int64)
    T = y.shape[0]
    bounds.validate(T)
    if bounds.width(T) != W:
        raise ValueError(f"window width {W} does not match bounds (expect {bounds.width(T)})")
    if bounds.start.shape[0] != U:
        raise ValueError("bounds rows do not match logits rows")
    if y.size and (y.min() < 0 or y.max() >= V1 - 1):
        raise ValueError("target contains out-of-vocabulary token ids")
    start = bounds.start
    blank = V1 - 1

    lsm = log_softmax(logits_w)
    wlb = lsm[:, :, blank]
    # wle[u, j]: log-prob of emitting the next target token from node
    # (u, start[u] + j); no emit arc exists at t = T.
    wle = np.full((U, W), NEG_INF)
    for u in range(U):
        for j in range(W):
            t = start[u] + j
            if t < T:
                wle[u, j] = lsm[u, j, y[t]]

    alpha = np.full((U, W), NEG_INF)
    alpha[0, 0] = 0.0 if start[0] == 0 else NEG_INF
    for j in range(1, W):
        alpha[0, j] = alpha[0, j - 1] + wle[0, j - 1]
    for u in range(1, U):
        off = start[u] - start[u - 1]
        for j in range(W):
            jp = j + off  # same t in the row above
            via_blank = alpha[u - 1, jp] + wlb[u - 1, jp] if jp < W else NEG_INF
            via_emit = alpha[u, j - 1] + wle[u, j - 1] if j > 0 else NEG_INF
            alpha[u, j] = logaddexp(via_blank, via_emit)

    jT = T - start[U - 1]
    ll = alpha[U - 1, jT] + wlb[U - 1, jT] if 0 <= jT < W else NEG_INF
    if ll == NEG_INF:
        return LossResult(
            loss=math.inf,
            grad_logits=np.zeros_like(logits_w),
            node_posteriors=np.zeros((U, W)),
        )

    beta = np.full((U, W), NEG_INF)
    beta[U - 1, jT] = wlb[U - 1, jT]
    for j in range(W - 1, -1, -1):
        via_emit = wle[U - 1, j] + beta[U - 1, j + 1] if j + 1 < W else NEG_INF
        if j != jT:
            beta[U - 1, j] = via_emit
        else:
            beta[U - 1, j] = logaddexp(beta[U - 1, j], via_emit)
    for u in range(U - 2, -1, -1):
        off = start[u + 1] - start[u]
        for j in range(W - 1, -1, -1):
            jn = j - off  # same t in the row below
            via_blank = wlb[u, j] + beta[u + 1, jn] if 0 <= jn < W else NEG_INF
            via_emit = wle[u, j] + beta[u, j + 1] if j + 1 < W else NEG_INF
            beta[u, j] = logaddexp(via_blank, via_emit)

    xi_blank = np.zeros((U, W))
    for u in range(U - 1):
        off = start[u + 1] - start[u]
        for j in range(W):
            jn = j - off
            if 0 <= jn < W:
                xi_blank[u, j] = math.exp(alpha[u, j] + wlb[u, j] + beta[u + 1, jn] - ll)
    xi_blank[U - 1, jT] += math.exp(alpha[U - 1, jT] + wlb[U - 1, jT] - ll)
    xi_emit = np.zeros((U, W))
    for u in range(U):
        for j in range(W - 1):
            xi_emit[u, j] = math.exp(alpha[u, j] + wle[u, j] + beta[u, j + 1] - ll)
    gamma = xi_blank + xi_emit

    sm = np.exp(lsm)
    grad = gamma[:, :, None] * sm
    grad[:, :, blank] -= xi_blank
    for u in range(U):
        for j in range(W - 1):
            t = start[u] + j
            if t < T and xi_emit[u, j] != 0.0:
                grad[u, j, y[t]] -= xi_emit[u, j]
    return LossResult(loss=float(-ll), grad_logits=grad, node_posteriors=gamma)


@dataclass
class CombinedResult:
    """Weighted two-part objective.  The gradients stay separate because the
    two heads feed different logits; upstream parameter sharing merges them
    during backprop."""

    loss: float
    grad_simple: np.ndarray
    grad_pruned: np.ndarray


def combined_objective(
    simple_result: LossResult,
    pruned_result: LossResult,
    alpha1: float,
    alpha2: float,
) -> CombinedResult:
    """alpha1 scales the cheap window-search loss, alpha2 the windowed main
    loss."""
    if alpha1 < 0 or alpha2 < 0:
        raise ValueError("loss scales must be non-negative")
    return CombinedResult(
        loss=alpha1 * simple_result.loss + alpha2 * pruned_result.loss,
        grad_simple=alpha1 * simple_result.grad_logits,
        grad_pruned=alpha2 * pruned_result.grad_logits,
    )
