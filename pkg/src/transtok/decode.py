"""Inference over the lattice: one pass of text positions left to right.

At each node the joiner scores tokens plus blank.  Choosing blank advances
the text position; choosing a token appends it, feeds it to the decoder,
and stays on the same position.  A cap on consecutive emissions per
position forces a blank so decoding always terminates; decoding ends with
the blank taken at the last position.  The blank-removal map from an
alignment back to its token sequence is the identity on what greedy or
sampled walks produce, and tests hold us to that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lattice import AlignmentPath, Step
from .loss import log_softmax
from .model import (
    ModelParams,
    decode_step,
    encode_reference,
    encode_text,
    initial_decoder_state,
    joiner,
)


@dataclass
class DecodeConfig:
    """mode is "greedy" or "topk".  k and temperature only matter for
    sampling; max_symbols_per_position bounds consecutive emissions at one
    text position."""

    mode: str = "greedy"
    k: int = 5
    temperature: float = 1.0
    max_symbols_per_position: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in ("greedy", "topk"):
            raise ValueError(f"unknown decode mode {self.mode!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.max_symbols_per_position < 1:
            raise ValueError("max_symbols_per_position must be >= 1")


@dataclass
class DecodeOutput:
    """tokens: emitted ids.  alignment: the walked path, whose emit steps
    correspond one-to-one with tokens.  step_log_probs: log-softmax score
    of the symbol chosen at each step, forced blanks included."""

    tokens: list[int]
    alignment: AlignmentPath
    step_log_probs: list[float]


def topk_sample(rng: np.random.Generator, logits: np.ndarray, k: int, temperature: float) -> int:
    """Sample among the k highest logits after temperature scaling.  The
    candidate order is by descending logit with index as tiebreak, so k=1
    reduces to the greedy argmax."""
    order = np.argsort(-logits, kind="stable")
    top = order[: min(k, logits.shape[0])]
    scaled = logits[top] / temperature
    scaled = scaled - scaled.max()
    probs = np.exp(scaled)
    probs /= probs.sum()
    return int(top[rng.choice(top.shape[0], p=probs)])


def walk_lattice(
    node_logits: Callable[[int, object], np.ndarray],
    advance: Callable[[int, object], object],
    init_state: object,
    U: int,
    blank_id: int,
    cfg: DecodeConfig,
    pick: Callable[[np.ndarray], int],
) -> DecodeOutput:
    """Generic decode loop.  node_logits(u, state) scores the current node
    (u zero-based), advance(token, state) consumes an emitted token."""
    if U < 1:
        raise ValueError("need at least one text position")
    state = init_state
    tokens: list[int] = []
    steps: list[Step] = []
    nodes: list[tuple[int, int]] = []
    lps: list[float] = []
    u = 0
    t = 0
    emitted_here = 0
    while True:
        logits = np.asarray(node_logits(u, state), dtype=np.float64)
        lsm = log_softmax(logits)
        if emitted_here >= cfg.max_symbols_per_position:
            sym = blank_id
        else:
            sym = pick(logits)
        nodes.append((u + 1, t))
        if sym == blank_id:
            steps.append(Step.BLANK)
            lps.append(float(lsm[blank_id]))
            if u == U - 1:
                break
            u += 1
            emitted_here = 0
        else:
            steps.append(Step.EMIT)
            lps.append(float(lsm[sym]))
            tokens.append(int(sym))
            state = advance(int(sym), state)
            t += 1
            emitted_here += 1
    return DecodeOutput(
        tokens=tokens,
        alignment=AlignmentPath(steps=steps, nodes=nodes),
        step_log_probs=lps,
    )


def _model_walk(params: ModelParams, text, ref_frames, cfg: DecodeConfig, pick) -> DecodeOutput:
    dims = params.dims
    h_enc = encode_text(params, text)
    h_ref = encode_reference(params, ref_frames)

    # the first decoder step consumes SOS so the walk starts at t = 0
    _, first_state = decode_step(params, dims.sos_id, initial_decoder_state(dims))

    def node_logits(u, state):
        return joiner(params, h_enc[u], state.hidden, h_ref)

    def advance(token, state):
        _, new_state = decode_step(params, token, state)
        return new_state

    return walk_lattice(
        node_logits=node_logits,
        advance=advance,
        init_state=first_state,
        U=h_enc.shape[0],
        blank_id=dims.blank_id,
        cfg=cfg,
        pick=pick,
    )


def greedy_decode(params: ModelParams, text, ref_frames, cfg: DecodeConfig | None = None) -> DecodeOutput:
    """Deterministic argmax walk (lowest index wins ties)."""
    cfg = cfg or DecodeConfig(mode="greedy")
    cfg.validate()
    return _model_walk(params, text, ref_frames, cfg, pick=lambda lg: int(np.argmax(lg)))


def topk_sample_decode(params: ModelParams, text, ref_frames, cfg: DecodeConfig | None = None) -> DecodeOutput:
    """Seeded stochastic walk over the k best symbols per node."""
    cfg = cfg or DecodeConfig(mode="topk")
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    return _model_walk(
        params, text, ref_frames, cfg, pick=lambda lg: topk_sample(rng, lg, cfg.k, cfg.temperature)
    )


def decode(params: ModelParams, text, ref_frames, cfg: DecodeConfig) -> DecodeOutput:
    cfg.validate()
    if cfg.mode == "greedy":
        return greedy_decode(params, text, ref_frames, cfg)
    return topk_sample_decode(params, text, ref_frames, cfg)
