"""Neural text-to-token transducer toolkit: lattice dynamic programs, a
windowed training objective, a numpy autodiff tape, a rate-conditioned
sequence model, synthetic corpora, a k-means frame quantizer, and decoding.
"""

from . import autodiff, cli, corpus, decode, lattice, loss, model, pipeline, quantizer
from .corpus import CorpusConfig, Utterance, generate_synthetic
from .decode import DecodeConfig, decode as decode_utterance
from .lattice import ProbLattice, forward, backward, forward_backward, occupancy
from .loss import LogitsLattice, combined_objective, pruned_loss, transducer_loss
from .model import ModelDims, ModelParams, init_params, load_checkpoint, save_checkpoint
from .pipeline import EvalReport, RunConfig, run_eval, run_gradcheck, run_oracle_check, run_train
from .quantizer import Codebook, fit_kmeans

__version__ = "0.1.0"

__all__ = [
    "autodiff",
    "cli",
    "corpus",
    "decode",
    "lattice",
    "loss",
    "model",
    "pipeline",
    "quantizer",
    "CorpusConfig",
    "Utterance",
    "generate_synthetic",
    "DecodeConfig",
    "decode_utterance",
    "ProbLattice",
    "forward",
    "backward",
    "forward_backward",
    "occupancy",
    "LogitsLattice",
    "combined_objective",
    "pruned_loss",
    "transducer_loss",
    "ModelDims",
    "ModelParams",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "EvalReport",
    "RunConfig",
    "run_eval",
    "run_gradcheck",
    "run_oracle_check",
    "run_train",
    "Codebook",
    "fit_kmeans",
    "__version__",
]
