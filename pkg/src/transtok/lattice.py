"""Log-semiring dynamic programming over the monotonic emit/advance lattice.

The lattice for a text of length U and a token sequence of length T has nodes
(u, t) with u in [1..U] and t in [0..T].  Two arc kinds leave a node: an
"advance" arc (called blank here) that moves to (u+1, t), and an "emit" arc
that moves to (u, t+1) while producing the next token.  Every complete path
starts at (1, 0), ends at (U, T), and is closed by one terminating blank arc
out of (U, T).  A path therefore contains exactly T emit arcs and U blank
arcs, counting the terminator.

Arrays in this module are stored zero-based: position [i, j] holds the value
for node (u=i+1, t=j).  All probabilities are kept in log space; impossible
states carry -inf.  Everything runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

NEG_INF = float("-inf")

# Guard for the path enumerator: the number of alignments is C(U-1+T, T),
# which explodes quickly.  U + T is the number of steps per path.
MAX_ENUM_STEPS = 24


def logaddexp(a: float, b: float) -> float:
    """log(exp(a) + exp(b)) for scalars, safe when either side is -inf."""
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    m = a if a > b else b
    return m + math.log1p(math.exp(-abs(a - b)))


def logsumexp(values) -> float:
    """Reduce an iterable of log values; returns -inf for an empty or
    all--inf input rather than raising."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return NEG_INF
    m = float(np.max(arr))
    if m == NEG_INF:
        return NEG_INF
    return m + math.log(float(np.sum(np.exp(arr - m))))


class Step(Enum):
    BLANK = "B"
    EMIT = "E"


@dataclass
class AlignmentPath:
    """One monotonic path through the lattice.

    steps[i] is the arc kind taken at step i and nodes[i] is the (u, t) node
    the arc leaves from, using the one-based u / zero-based t convention of
    the lattice.  A well-formed path ends with a blank arc out of (U, T).
    """

    steps: list[Step]
    nodes: list[tuple[int, int]]

    def emit_count(self) -> int:
        return sum(1 for s in self.steps if s is Step.EMIT)

    def blank_count(self) -> int:
        return sum(1 for s in self.steps if s is Step.BLANK)

    def validate(self) -> None:
        if len(self.steps) != len(self.nodes):
            raise ValueError("steps and nodes must have equal length")
        if not self.steps:
            raise ValueError("empty path")
        if self.steps[-1] is not Step.BLANK:
            raise ValueError("path must end with a blank arc")
        u, t = 1, 0
        for s, node in zip(self.steps, self.nodes):
            if node != (u, t):
                raise ValueError(f"node trace broken at {node}, expected {(u, t)}")
            if s is Step.BLANK:
                u += 1
            else:
                t += 1


@dataclass
class ProbLattice:
    """Arc log-probabilities for one lattice.

    log_blank[i, j] is log P(blank | u=i+1, t=j) with shape (U, T+1); the
    entry at (U-1, T) is the terminating arc.  log_emit[i, j] is
    log P(y_{j+1} | u=i+1, t=j) with shape (U, T): emitting from token count
    j produces the (j+1)-th target token.
    """

    log_blank: np.ndarray
    log_emit: np.ndarray

    def __post_init__(self):
        self.log_blank = np.asarray(self.log_blank, dtype=np.float64)
        self.log_emit = np.asarray(self.log_emit, dtype=np.float64)

    @property
    def U(self) -> int:
        return self.log_blank.shape[0]

    @property
    def T(self) -> int:
        return self.log_blank.shape[1] - 1

    def validate(self) -> None:
        if self.log_blank.ndim != 2 or self.log_emit.ndim != 2:
            raise ValueError("lattice tables must be 2-d")
        U, T1 = self.log_blank.shape
        if U < 1 or T1 < 1:
            raise ValueError(f"need U >= 1 and T >= 0, got blank shape {self.log_blank.shape}")
        if self.log_emit.shape != (U, T1 - 1):
            raise ValueError(
                f"log_emit shape {self.log_emit.shape} does not match log_blank {self.log_blank.shape}"
            )
        for name, table in (("log_blank", self.log_blank), ("log_emit", self.log_emit)):
            if np.isnan(table).any():
                raise ValueError(f"{name} contains NaN")
            if np.isposinf(table).any():
                raise ValueError(f"{name} contains +inf; log-probabilities must be <= 0 or -inf")


@dataclass
class AlphaBeta:
    """Forward/backward state sums.  alpha[i, j] is the log-sum over path
    prefixes reaching node (i+1, j); beta[i, j] the log-sum over suffixes
    leaving it, including the terminating arc.  Either table may be absent
    depending on which pass produced the object."""

    alpha: np.ndarray | None
    beta: np.ndarray | None
    log_likelihood: float


@dataclass
class Occupancy:
    """Posterior arc and node occupancies under the path distribution.

    xi_blank[i, j] / xi_emit[i, j] are the posterior probabilities of the
    blank / emit arc out of node (i+1, j); gamma is their sum per node.
    Entries for arcs that do not exist (blank out of the last row before
    t = T, emit at t = T) are zero.
    """

    gamma: np.ndarray
    xi_blank: np.ndarray
    xi_emit: np.ndarray


def forward(lat: ProbLattice) -> AlphaBeta:
    """Left-to-right pass.  alpha(1, 0) = log 1; each node sums the blank
    arc from the row above and the emit arc from the left.  The sequence
    log-likelihood is alpha(U, T) plus the terminating blank arc."""
    lat.validate()
    U, T = lat.U, lat.T
    lb, le = lat.log_blank, lat.log_emit
    alpha = np.full((U, T + 1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(1, T + 1):
        alpha[0, t] = alpha[0, t - 1] + le[0, t - 1]
    for u in range(1, U):
        alpha[u, 0] = alpha[u - 1, 0] + lb[u - 1, 0]
        for t in range(1, T + 1):
            alpha[u, t] = logaddexp(
                alpha[u - 1, t] + lb[u - 1, t],
                alpha[u, t - 1] + le[u, t - 1],
            )
    ll = float(alpha[U - 1, T] + lb[U - 1, T])
    return AlphaBeta(alpha=alpha, beta=None, log_likelihood=ll)


def backward(lat: ProbLattice) -> AlphaBeta:
    """Right-to-left dual of forward().  beta(U, T) is the terminating arc
    itself, and beta(1, 0) reproduces the log-likelihood."""
    lat.validate()
    U, T = lat.U, lat.T
    lb, le = lat.log_blank, lat.log_emit
    beta = np.full((U, T + 1), NEG_INF)
    beta[U - 1, T] = lb[U - 1, T]
    for t in range(T - 1, -1, -1):
        beta[U - 1, t] = le[U - 1, t] + beta[U - 1, t + 1]
    for u in range(U - 2, -1, -1):
        beta[u, T] = lb[u, T] + beta[u + 1, T]
        for t in range(T - 1, -1, -1):
            beta[u, t] = logaddexp(
                lb[u, t] + beta[u + 1, t],
                le[u, t] + beta[u, t + 1],
            )
    return AlphaBeta(alpha=None, beta=beta, log_likelihood=float(beta[0, 0]))


def forward_backward(lat: ProbLattice) -> AlphaBeta:
    """Both passes on one lattice, reporting the forward log-likelihood."""
    f = forward(lat)
    b = backward(lat)
    return AlphaBeta(alpha=f.alpha, beta=b.beta, log_likelihood=f.log_likelihood)


def occupancy(lat: ProbLattice, ab: AlphaBeta) -> Occupancy:
    """Arc posteriors xi and node posteriors gamma.

    xi(u, t, arc) = exp(alpha(u, t) + log p(arc) + beta(next) - logL), with
    the beta factor dropped for the terminating arc.  Requires both tables
    in `ab` and a finite log-likelihood.
    """
    lat.validate()
    if ab.alpha is None or ab.beta is None:
        raise ValueError("occupancy needs both alpha and beta tables")
    ll = ab.log_likelihood
    if ll == NEG_INF:
        raise ValueError("occupancy undefined for a zero-likelihood lattice")
    U, T = lat.U, lat.T
    alpha, beta = ab.alpha, ab.beta
    xi_blank = np.zeros((U, T + 1))
    xi_emit = np.zeros((U, T))
    if U > 1:
        xi_blank[: U - 1, :] = np.exp(
            alpha[: U - 1, :] + lat.log_blank[: U - 1, :] + beta[1:, :] - ll
        )
    xi_blank[U - 1, T] = math.exp(alpha[U - 1, T] + lat.log_blank[U - 1, T] - ll)
    if T > 0:
        xi_emit[:, :] = np.exp(
            alpha[:, :T] + lat.log_emit + beta[:, 1:] - ll
        )
    gamma = xi_blank.copy()
    if T > 0:
        gamma[:, :T] += xi_emit
    return Occupancy(gamma=gamma, xi_blank=xi_blank, xi_emit=xi_emit)


def enumerate_alignments(U: int, T: int) -> list[AlignmentPath]:
    """Every monotonic path for a (U, T) lattice, in lexicographic order
    with blank ordered before emit.  Guarded to small U + T because the
    count is C(U-1+T, T)."""
    if U < 1 or T < 0:
        raise ValueError(f"need U >= 1 and T >= 0, got U={U}, T={T}")
    if U + T > MAX_ENUM_STEPS:
        raise ValueError(f"refusing to enumerate U+T={U + T} > {MAX_ENUM_STEPS} steps")
    paths: list[AlignmentPath] = []

    def rec(u: int, t: int, steps: list[Step], nodes: list[tuple[int, int]]) -> None:
        if u == U and t == T:
            paths.append(AlignmentPath(steps + [Step.BLANK], nodes + [(U, T)]))
            return
        if u < U:
            rec(u + 1, t, steps + [Step.BLANK], nodes + [(u, t)])
        if t < T:
            rec(u, t + 1, steps + [Step.EMIT], nodes + [(u, t)])

    rec(1, 0, [], [])
    return paths


def path_log_prob(lat: ProbLattice, path: AlignmentPath) -> float:
    """Sum of arc log-probabilities along one path."""
    total = 0.0
    for s, (u, t) in zip(path.steps, path.nodes):
        if s is Step.BLANK:
            total += float(lat.log_blank[u - 1, t])
        else:
            total += float(lat.log_emit[u - 1, t])
        if total == NEG_INF:
            return NEG_INF
    return total


def brute_force_likelihood(lat: ProbLattice) -> float:
    """Reference oracle: explicit sum over every alignment.  Only viable
    for small lattices; the DP passes must agree with this exactly up to
    rounding."""
    lat.validate()
    paths = enumerate_alignments(lat.U, lat.T)
    return logsumexp(path_log_prob(lat, p) for p in paths)


def viterbi_alignment(lat: ProbLattice) -> tuple[AlignmentPath, float]:
    """Highest-probability single path and its log-probability.  Ties are
    broken by preferring the emit arc, so among equal-probability paths the
    one that emits earliest wins."""
    lat.validate()
    U, T = lat.U, lat.T
    lb, le = lat.log_blank, lat.log_emit
    # best[i, j]: best suffix score from node (i+1, j), terminator included.
    best = np.full((U, T + 1), NEG_INF)
    best[U - 1, T] = lb[U - 1, T]
    for t in range(T - 1, -1, -1):
        best[U - 1, t] = le[U - 1, t] + best[U - 1, t + 1]
    for u in range(U - 2, -1, -1):
        best[u, T] = lb[u, T] + best[u + 1, T]
        for t in range(T - 1, -1, -1):
            best[u, t] = max(lb[u, t] + best[u + 1, t], le[u, t] + best[u, t + 1])
    steps: list[Step] = []
    nodes: list[tuple[int, int]] = []
    u, t = 0, 0
    while not (u == U - 1 and t == T):
        emit_score = le[u, t] + best[u, t + 1] if t < T else NEG_INF
        blank_score = lb[u, t] + best[u + 1, t] if u < U - 1 else NEG_INF
        nodes.append((u + 1, t))
        if emit_score >= blank_score:
            steps.append(Step.EMIT)
            t += 1
        else:
            steps.append(Step.BLANK)
            u += 1
    steps.append(Step.BLANK)
    nodes.append((U, T))
    return AlignmentPath(steps=steps, nodes=nodes), float(best[0, 0])
