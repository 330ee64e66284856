"""Train the desk-scale model on synthetic rate data and report held-out
token error rate plus rate controllability.

Usage:
    python scripts/train_desk_model.py --out-dir runs/desk
"""

import argparse
import json
import pathlib
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from transtok.corpus import CorpusConfig, generate_synthetic
from transtok.decode import DecodeConfig
from transtok.pipeline import RunConfig, run_eval, run_rate_sweep, run_train


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="runs/desk")
    ap.add_argument("--train-utts", type=int, default=2000)
    ap.add_argument("--eval-utts", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    train = generate_synthetic(CorpusConfig(n_utts=args.train_utts, seed=args.seed))
    held_out = generate_synthetic(CorpusConfig(n_utts=args.eval_utts, seed=args.seed + 1))
    cfg = RunConfig(epochs=args.epochs, seed=args.seed)

    t0 = time.monotonic()
    params, history = run_train(
        cfg,
        train,
        checkpoint_path=str(out / "checkpoint.json"),
        log_path=str(out / "train_log.jsonl"),
    )
    train_s = time.monotonic() - t0
    print(f"trained {args.epochs} epochs on {len(train)} utterances in {train_s:.0f}s")
    print(f"final loss/token {history[-1]['mean_loss_per_token']:.4f}")

    report = run_eval(params, held_out, DecodeConfig(mode="greedy"))
    report.rate_sweep = run_rate_sweep(
        params, [u.text for u in held_out], [1, 2, 3], DecodeConfig(mode="greedy")
    )
    report.save(str(out / "eval_report.json"))

    corr = report.rate_sweep["correlation"]
    print(f"held-out TER {report.token_error_rate:.4f} on {len(held_out)} utterances")
    print(f"rate sweep correlation {corr if corr is None else round(corr, 4)}")
    print(f"mean length by rate {report.rate_sweep['mean_length_by_rate']}")
    print(f"total {time.monotonic() - t0:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
