"""Quantizer demo: sample embedding frames from known clusters, fit a
codebook, and measure how cleanly the codes recover the true labels.

Usage:
    python scripts/quantizer_demo.py [--k 4] [--sigma 0.3]
"""

import argparse
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from transtok.corpus import EmbeddingConfig, cluster_means, generate_embeddings
from transtok.quantizer import assign, fit_kmeans, inertia


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--sigma", type=float, default=0.3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = EmbeddingConfig(k_true=args.k, sigma=args.sigma, seed=args.seed)
    seqs = generate_embeddings(cfg)
    frames = np.concatenate([s.frames for s in seqs], axis=0)
    true_labels = np.argmin(
        np.linalg.norm(frames[:, None, :] - cluster_means(cfg)[None], axis=2), axis=1
    )

    cb = fit_kmeans(frames, k=args.k, seed=args.seed)
    codes = assign(cb, frames)
    print(f"{frames.shape[0]} frames, k={args.k}, inertia {inertia(cb, frames):.3f}")

    # purity: fraction of frames whose code maps to their majority true label
    purity = 0
    for c in range(args.k):
        members = true_labels[codes == c]
        if members.size:
            purity += np.max(np.bincount(members, minlength=args.k))
    purity /= frames.shape[0]
    print(f"cluster purity {purity:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
