"""Synthetic data with a controllable emission rate.

Each text symbol p expands deterministically to the token pair
(2p, 2p+1) repeated r times, where the repetition factor r is drawn per
utterance from a small set of rates.  Crucially, r is recorded nowhere in
the text or the tokens themselves: it is encoded only in the reference
frames, as a constant vector at level r plus Gaussian noise.  A model can
therefore match the token stream only by reading the conditioning pathway.

The module also generates synthetic embedding-frame streams from
well-separated Gaussian clusters, which is the input side of the
quantizer: cluster centers sit on a scaled coordinate simplex so a k-means
fit can recover them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class CorpusFormatError(ValueError):
    """Raised when a serialized corpus line cannot be parsed."""


@dataclass
class Utterance:
    """text: input symbol ids, length U.  tokens: target token ids, length
    T = 2 * rate * U.  rate: the drawn repetition factor.  ref_frames: the
    (n, ref_frame_dim) conditioning frames that encode the rate."""

    text: list[int]
    tokens: list[int]
    rate: float
    ref_frames: np.ndarray

    def __post_init__(self):
        self.ref_frames = np.asarray(self.ref_frames, dtype=np.float64)

    def validate(self) -> None:
        if len(self.text) < 1:
            raise ValueError("utterance needs at least one text symbol")
        if self.ref_frames.ndim != 2 or self.ref_frames.shape[0] < 1:
            raise ValueError("ref_frames must be a non-empty 2-d array")
        if self.rate < 1:
            raise ValueError("rate must be >= 1")


@dataclass
class CorpusConfig:
    """V must be at least twice the text vocabulary so every symbol owns a
    disjoint token pair."""

    n_utts: int = 2000
    u_min: int = 3
    u_max: int = 8
    text_vocab: int = 16
    token_vocab: int = 32
    rates: tuple[int, ...] = (1, 2, 3)
    noise_std: float = 0.1
    ref_frame_dim: int = 8
    n_ref_frames: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.n_utts < 1:
            raise ValueError("n_utts must be >= 1")
        if not (1 <= self.u_min <= self.u_max):
            raise ValueError("need 1 <= u_min <= u_max")
        if self.token_vocab < 2 * self.text_vocab:
            raise ValueError(
                f"token vocab {self.token_vocab} too small for {self.text_vocab} symbol pairs"
            )
        if not self.rates or any(r < 1 or r != int(r) for r in self.rates):
            raise ValueError("rates must be positive integers")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.ref_frame_dim < 1 or self.n_ref_frames < 1:
            raise ValueError("reference frame dimensions must be >= 1")


def expand_symbol(p: int, rate: int) -> list[int]:
    """The pair map: symbol p yields (2p, 2p+1) repeated rate times."""
    return [2 * p, 2 * p + 1] * rate


def rate_frames(rate: float, n_frames: int, dim: int, noise_std: float, rng=None) -> np.ndarray:
    """Conditioning frames for a rate: a constant vector at the rate value
    plus optional Gaussian jitter."""
    base = np.full((n_frames, dim), float(rate))
    if noise_std > 0:
        if rng is None:
            raise ValueError("need an rng when noise_std > 0")
        base = base + noise_std * rng.normal(size=(n_frames, dim))
    return base


def generate_synthetic(cfg: CorpusConfig, seed: int | None = None) -> list[Utterance]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    utts = []
    for _ in range(cfg.n_utts):
        U = int(rng.integers(cfg.u_min, cfg.u_max + 1))
        rate = int(rng.choice(np.asarray(cfg.rates)))
        text = rng.integers(0, cfg.text_vocab, size=U).tolist()
        tokens: list[int] = []
        for p in text:
            tokens.extend(expand_symbol(p, rate))
        frames = rate_frames(rate, cfg.n_ref_frames, cfg.ref_frame_dim, cfg.noise_std, rng)
        utts.append(Utterance(text=text, tokens=tokens, rate=float(rate), ref_frames=frames))
    return utts


def write_jsonl(utts: list[Utterance], path: str) -> None:
    with open(path, "w") as f:
        for utt in utts:
            f.write(
                json.dumps(
                    {
                        "text": utt.text,
                        "tokens": utt.tokens,
                        "rate": utt.rate,
                        "ref": utt.ref_frames.tolist(),
                    }
                )
            )
            f.write("\n")


def _require(record: dict, key: str, lineno: int):
    if key not in record:
        raise CorpusFormatError(f"line {lineno}: missing field {key!r}")
    return record[key]


def read_jsonl(path: str) -> list[Utterance]:
    """Inverse of write_jsonl.  Failures carry the 1-based line number."""
    utts = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusFormatError(f"line {lineno}: expected an object")
            text = _require(record, "text", lineno)
            tokens = _require(record, "tokens", lineno)
            rate = _require(record, "rate", lineno)
            ref = _require(record, "ref", lineno)
            def plain_ints(values):
                # bool is an int subtype and must not slip through
                return isinstance(values, list) and all(
                    isinstance(v, int) and not isinstance(v, bool) for v in values
                )

            if not plain_ints(text):
                raise CorpusFormatError(f"line {lineno}: text must be a list of ints")
            if not plain_ints(tokens):
                raise CorpusFormatError(f"line {lineno}: tokens must be a list of ints")
            if not isinstance(rate, (int, float)) or isinstance(rate, bool):
                raise CorpusFormatError(f"line {lineno}: rate must be a number")
            try:
                frames = np.asarray(ref, dtype=np.float64)
            except (TypeError, ValueError) as exc:
                raise CorpusFormatError(f"line {lineno}: ref must be a 2-d float array") from exc
            if frames.ndim != 2:
                raise CorpusFormatError(f"line {lineno}: ref must be a 2-d float array")
            utts.append(Utterance(text=text, tokens=tokens, rate=float(rate), ref_frames=frames))
    return utts


# -- synthetic embedding streams for the quantizer ------------------------


@dataclass
class EmbeddingConfig:
    """Cluster means sit at scale * e_i for the first k_true coordinate
    axes, so dim must be >= k_true for them to stay distinct."""

    n_sequences: int = 20
    frames_per_seq: int = 50
    dim: int = 8
    k_true: int = 4
    scale: float = 10.0
    sigma: float = 0.3
    frame_duration_s: float = 0.02
    seed: int = 0

    def validate(self) -> None:
        if self.n_sequences < 1 or self.frames_per_seq < 1:
            raise ValueError("need at least one sequence and one frame")
        if self.k_true < 1 or self.dim < self.k_true:
            raise ValueError("need 1 <= k_true <= dim for simplex means")
        if self.sigma < 0 or self.scale <= 0:
            raise ValueError("need sigma >= 0 and scale > 0")
        if self.frame_duration_s <= 0:
            raise ValueError("frame_duration_s must be positive")


@dataclass
class EmbeddingSequence:
    frames: np.ndarray
    frame_duration_s: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)


def cluster_means(cfg: EmbeddingConfig) -> np.ndarray:
    means = np.zeros((cfg.k_true, cfg.dim))
    for i in range(cfg.k_true):
        means[i, i] = cfg.scale
    return means


def generate_embeddings(cfg: EmbeddingConfig, seed: int | None = None) -> list[EmbeddingSequence]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    means = cluster_means(cfg)
    seqs = []
    for _ in range(cfg.n_sequences):
        labels = rng.integers(0, cfg.k_true, size=cfg.frames_per_seq)
        frames = means[labels] + cfg.sigma * rng.normal(size=(cfg.frames_per_seq, cfg.dim))
        seqs.append(EmbeddingSequence(frames=frames, frame_duration_s=cfg.frame_duration_s))
    return seqs


def write_embeddings_jsonl(seqs: list[EmbeddingSequence], path: str) -> None:
    with open(path, "w") as f:
        for seq in seqs:
            f.write(
                json.dumps(
                    {"frames": seq.frames.tolist(), "frame_duration_s": seq.frame_duration_s}
                )
            )
            f.write("\n")


def read_embeddings_jsonl(path: str) -> list[EmbeddingSequence]:
    seqs = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusFormatError(f"line {lineno}: expected an object")
            frames = _require(record, "frames", lineno)
            duration = _require(record, "frame_duration_s", lineno)
            arr = np.asarray(frames, dtype=np.float64)
            if arr.ndim != 2:
                raise CorpusFormatError(f"line {lineno}: frames must be 2-d")
            seqs.append(EmbeddingSequence(frames=arr, frame_duration_s=float(duration)))
    return seqs
