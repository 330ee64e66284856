"""Sanity demo: drive the combined objective to near zero on one utterance
and confirm greedy decoding replays its tokens exactly.

Usage:
    python scripts/overfit_single.py [--epochs 200]
"""

import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from transtok.corpus import CorpusConfig, generate_synthetic
from transtok.decode import DecodeConfig, greedy_decode
from transtok.pipeline import RunConfig, run_train


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    utt = generate_synthetic(CorpusConfig(n_utts=1, u_min=3, u_max=5, seed=args.seed))[0]
    print(f"text {utt.text} rate {utt.rate:g} -> tokens {utt.tokens}")

    cfg = RunConfig(epochs=args.epochs, batch_size=1, seed=args.seed)
    params, history = run_train(cfg, [utt])
    print(f"loss/token {history[0]['mean_loss_per_token']:.4f} -> {history[-1]['mean_loss_per_token']:.4f}")

    out = greedy_decode(params, utt.text, utt.ref_frames, DecodeConfig(mode="greedy"))
    print(f"decoded {out.tokens}")
    print("exact match" if out.tokens == utt.tokens else "mismatch")
    return 0 if out.tokens == utt.tokens else 1


if __name__ == "__main__":
    sys.exit(main())
