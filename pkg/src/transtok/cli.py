"""Command line front end.

Exit codes: 0 success, 2 configuration problem (bad flag, bad config file,
invalid override), 3 file problem (missing or malformed data), 4 a check
or gate failed.  All structured outputs are versioned JSON or JSONL.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import corpus as corpus_mod
from . import decode as decode_mod
from . import model as model_mod
from . import pipeline
from . import quantizer as quant_mod

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_CHECK = 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def _coerce(value: str, typ):
    """Coerce a --set string to a dataclass field's type."""
    if typ is bool:
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    if typ is int:
        return int(value)
    if typ is float:
        return float(value)
    if typ is str:
        return value
    # tuples of numbers, e.g. rates=1,2,3
    origin = getattr(typ, "__origin__", None)
    if origin is tuple or typ is tuple:
        parts = [p for p in value.split(",") if p]
        out = []
        for p in parts:
            f = float(p)
            out.append(int(f) if f == int(f) else f)
        return tuple(out)
    raise ConfigError(f"cannot coerce override for field type {typ}")


def build_config(cls, config_path: str | None, overrides: list[str], seed: int | None = None):
    """Instantiate a config dataclass from an optional JSON file plus
    key=value overrides.  Unknown keys are configuration errors."""
    # field types arrive as strings under deferred annotation evaluation
    hints = {}
    for f in dataclasses.fields(cls):
        t = f.type
        if isinstance(t, str):
            t = {"int": int, "float": float, "str": str, "bool": bool}.get(t.strip(), tuple)
        hints[f.name] = t

    values: dict = {}
    if config_path:
        try:
            with open(config_path) as fh:
                loaded = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {config_path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {config_path} is not valid JSON: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {config_path} must hold a JSON object")
        for k, v in loaded.items():
            if k not in hints:
                raise ConfigError(f"unknown config key {k!r} for {cls.__name__}")
            values[k] = tuple(v) if isinstance(v, list) else v
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        k, _, raw = item.partition("=")
        if k not in hints:
            raise ConfigError(f"unknown config key {k!r} for {cls.__name__}")
        try:
            values[k] = _coerce(raw, hints[k])
        except ValueError as e:
            raise ConfigError(f"bad value for {k!r}: {e}") from e
    if seed is not None and "seed" in hints:
        values["seed"] = seed
    try:
        cfg = cls(**values)
        cfg.validate()
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return cfg


def _write_json(payload: dict, path: str | None) -> None:
    text = json.dumps(payload, sort_keys=True)
    if path:
        with open(path, "w") as f:
            f.write(text + "\n")
    else:
        print(text)


def _load_checkpoint(path: str) -> model_mod.ModelParams:
    """A checkpoint that fails to parse or validate is a data problem."""
    try:
        params, _ = model_mod.load_checkpoint(path)
    except (ValueError, json.JSONDecodeError) as e:
        raise DataError(f"checkpoint {path}: {e}") from e
    return params


def _decode_config(args) -> decode_mod.DecodeConfig:
    cfg = decode_mod.DecodeConfig(
        mode=args.mode,
        k=args.k,
        temperature=args.temperature,
        seed=args.seed if args.seed is not None else 0,
    )
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return cfg


# -- subcommands ------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    cfg = build_config(corpus_mod.CorpusConfig, args.config, args.set, args.seed)
    utts = corpus_mod.generate_synthetic(cfg)
    corpus_mod.write_jsonl(utts, args.out)
    print(f"wrote {len(utts)} utterances to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_config(pipeline.RunConfig, args.config, args.set, args.seed)
    utts = corpus_mod.read_jsonl(args.data)
    try:
        _, history = pipeline.run_train(
            cfg, utts, checkpoint_path=args.checkpoint, log_path=args.log
        )
    except pipeline.TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_CHECK
    except ValueError as e:
        raise ConfigError(str(e)) from e
    last = history[-1]
    print(
        f"trained {last['epoch']} epochs, final loss/token "
        f"{last['mean_loss_per_token']:.4f}, checkpoint at {args.checkpoint}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    params = _load_checkpoint(args.checkpoint)
    utts = corpus_mod.read_jsonl(args.data)
    report = pipeline.run_eval(params, utts, _decode_config(args))
    _write_json(report.to_dict(), args.out)
    corr = "n/a" if report.rate_correlation is None else f"{report.rate_correlation:.3f}"
    print(f"TER {report.token_error_rate:.4f}, rate correlation {corr}", file=sys.stderr)
    return EXIT_OK


def cmd_decode(args) -> int:
    params = _load_checkpoint(args.checkpoint)
    try:
        text = [int(t) for t in args.text.split()]
    except ValueError as e:
        raise ConfigError(f"--text must be whitespace-separated ints: {e}") from e
    if not text:
        raise ConfigError("--text is empty")
    frames = corpus_mod.rate_frames(args.rate, args.n_ref_frames, params.dims.ref_frame_dim, 0.0)
    out = decode_mod.decode(params, text, frames, _decode_config(args))
    _write_json(
        {
            "version": 1,
            "text": text,
            "rate": args.rate,
            "tokens": [int(t) for t in out.tokens],
            "alignment": [[step.value, u, t] for step, (u, t) in zip(out.alignment.steps, out.alignment.nodes)],
        },
        args.out,
    )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.n_loss < 1 or args.n_model < 0:
        raise ConfigError("need --n-loss >= 1 and --n-model >= 0")
    report = pipeline.run_gradcheck(
        seed=args.seed or 0,
        inject_fault=args.inject_fault,
        n_loss=args.n_loss,
        n_model=args.n_model,
    )
    _write_json(report.to_dict(), args.out)
    for c in report.checks:
        mark = "ok" if c.passed else "FAIL"
        print(f"{mark:4s} {c.name}: {c.value:.3e} (limit {c.threshold:.0e})", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_oracle_check(args) -> int:
    report = pipeline.run_oracle_check(seed=args.seed or 0)
    _write_json(report.to_dict(), args.out)
    for c in report.checks:
        mark = "ok" if c.passed else "FAIL"
        print(f"{mark:4s} {c.name}: {c.value:.3e} (limit {c.threshold:.0e})", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_quantize_fit(args) -> int:
    if args.k < 1:
        raise ConfigError("--k must be >= 1")
    seqs = corpus_mod.read_embeddings_jsonl(args.data)
    data = np.concatenate([s.frames for s in seqs], axis=0)
    cb = quant_mod.fit_kmeans(data, args.k, seed=args.seed or 0)
    quant_mod.save_codebook(cb, args.out)
    print(
        f"fit {cb.k} centroids on {data.shape[0]} frames, "
        f"inertia {quant_mod.inertia(cb, data):.6f}, wrote {args.out}"
    )
    return EXIT_OK


def cmd_quantize_encode(args) -> int:
    cb = quant_mod.load_codebook(args.codebook)
    seqs = corpus_mod.read_embeddings_jsonl(args.data)
    with open(args.out, "w") as f:
        for seq in seqs:
            codes = quant_mod.assign(cb, seq.frames)
            f.write(
                json.dumps(
                    {
                        "version": 1,
                        "codes": [int(c) for c in codes],
                        "frame_duration_s": seq.frame_duration_s,
                    }
                )
                + "\n"
            )
    print(f"encoded {len(seqs)} sequences to {args.out}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _add_common(p, out_required=False):
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", required=out_required, default=None, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transtok", description="text to token transducer toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic paired corpus")
    p.add_argument("--config", default=None, help="JSON corpus config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    _add_common(p, out_required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train on a JSONL corpus")
    p.add_argument("--config", default=None, help="JSON run config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--data", required=True, help="corpus JSONL")
    p.add_argument("--checkpoint", required=True, help="checkpoint output path")
    p.add_argument("--log", default=None, help="per-epoch JSONL log path")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="decode a corpus and report error rates")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", default="greedy", choices=["greedy", "topk"])
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--temperature", type=float, default=1.0)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="decode one text at a chosen rate")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True, help="whitespace-separated symbol ids")
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--n-ref-frames", type=int, default=4)
    p.add_argument("--mode", default="greedy", choices=["greedy", "topk"])
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--temperature", type=float, default=1.0)
    _add_common(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("gradcheck", help="gradients against finite differences")
    p.add_argument("--inject-fault", action="store_true", help="must fail; proves sensitivity")
    p.add_argument("--n-loss", type=int, default=50, help="loss-level instance count")
    p.add_argument("--n-model", type=int, default=5, help="end-to-end instance count")
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle-check", help="dynamic programs against enumeration")
    _add_common(p)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("quantize-fit", help="fit a k-means codebook to embedding frames")
    p.add_argument("--data", required=True, help="embeddings JSONL")
    p.add_argument("--k", type=int, required=True)
    _add_common(p, out_required=True)
    p.set_defaults(func=cmd_quantize_fit)

    p = sub.add_parser("quantize-encode", help="map embedding frames to codebook ids")
    p.add_argument("--data", required=True, help="embeddings JSONL")
    p.add_argument("--codebook", required=True)
    _add_common(p, out_required=True)
    p.set_defaults(func=cmd_quantize_encode)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad flags, which matches the config exit code
        return int(e.code) if e.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DataError, corpus_mod.CorpusFormatError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
