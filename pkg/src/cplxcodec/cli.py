"""Command-line entry points: train, encode, decode, eval, inspect-codebook."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import bitstream as bs
from .dsp import CODEC_SAMPLE_RATE, AudioBuffer, WavFormatError, read_wav, write_wav
from .metrics import evaluate, write_csv
from .model import CheckpointError, load_checkpoint
from .rvq import codebook_stats

EXIT_OK, EXIT_ERROR, EXIT_AUDIO, EXIT_CHECKPOINT, EXIT_MISMATCH, EXIT_TRUNCATED = 0, 1, 2, 3, 4, 5

log = logging.getLogger("cplxcodec")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _atomic_write(path, write_fn):
    """Write through a temp file in the target directory, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_model(path):
    try:
        model = load_checkpoint(path)
    except (CheckpointError, FileNotFoundError) as exc:
        raise CliError(str(exc), EXIT_CHECKPOINT) from exc
    model.eval()
    return model


def _read_audio(path):
    try:
        return read_wav(path, CODEC_SAMPLE_RATE)
    except WavFormatError as exc:
        raise CliError(str(exc), EXIT_AUDIO) from exc


def _header_for(model, frames, length):
    cfg = model.cfg
    return bs.StreamHeader(CODEC_SAMPLE_RATE, cfg.stft.n_fft, cfg.stft.hop_length, cfg.time_stride,
                           cfg.quantizer.stages, cfg.quantizer.codebook_size, frames, length)


def _check_header(header, model):
    expect = _header_for(model, header.frame_count, header.original_length)
    if header != expect:
        raise CliError(f"stream header {header} does not match checkpoint config", EXIT_MISMATCH)


# -- subcommands ----------------------------------------------------------------

def cmd_train(args):
    from .trainer import TrainConfig, train

    cfg = TrainConfig.from_dict(json.loads(Path(args.config).read_text())) if args.config else TrainConfig()
    for key in ("preset", "bitrate", "seed", "steps", "batch_size"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    trainer = train(cfg, args.data, args.out, args.max_seconds)
    print(f"trained {trainer.step_count} steps; checkpoint at {Path(args.out) / 'checkpoint.ckpt'}")
    return EXIT_OK


def cmd_encode(args):
    audio = _read_audio(args.input)
    model = _load_model(args.checkpoint)
    indices = model.encode_tokens(audio.samples)
    header = _header_for(model, indices.shape[1], len(audio))
    data = bs.pack(indices, header)
    _atomic_write(args.output, lambda p: Path(p).write_bytes(data))
    print(f"{len(data)} bytes ({header.payload_bits} payload bits); "
          f"{header.token_rate:g} tokens/s, {bs.bitrate(header):g} bps")
    return EXIT_OK


def cmd_decode(args):
    data = Path(args.input).read_bytes()
    try:
        stream = bs.unpack(data)
    except bs.TruncatedStreamError as exc:
        raise CliError(str(exc), EXIT_TRUNCATED) from exc
    except bs.BitstreamError as exc:
        raise CliError(str(exc), EXIT_MISMATCH) from exc
    model = _load_model(args.checkpoint)
    _check_header(stream.header, model)
    y = model.decode_tokens(stream.indices, stream.header.original_length)
    _atomic_write(args.output, lambda p: write_wav(p, AudioBuffer(y, CODEC_SAMPLE_RATE)))
    print(f"wrote {len(y)} samples to {args.output}")
    return EXIT_OK


def _load_external(paths):
    scores = {}
    for p in paths or ():
        with open(p, newline="") as fh:
            for row in csv.DictReader(fh):
                name = row.pop("file")
                scores.setdefault(name, {}).update(row)
    return scores


def cmd_eval(args):
    ref_dir = Path(args.ref_dir)
    refs = sorted(ref_dir.glob("*.wav"))
    model = _load_model(args.checkpoint) if args.checkpoint else None
    if model is None and not args.deg_dir:
        raise CliError("eval needs --deg-dir or --checkpoint", EXIT_ERROR)
    external = _load_external(args.external)
    rows, extra = [], []
    for ref_path in refs:
        ref = _read_audio(ref_path)
        if model is not None:
            est = model.decode_tokens(model.encode_tokens(ref.samples), len(ref))
        else:
            deg_path = Path(args.deg_dir) / ref_path.name
            if not deg_path.exists():
                log.warning("no degraded file for %s; skipped", ref_path.name)
                continue
            est = _read_audio(deg_path).samples
            if len(est) != len(ref):
                log.warning("length mismatch for %s; skipped", ref_path.name)
                continue
        row = {"file": ref_path.name, **evaluate(est, ref.samples).as_dict()}
        for key, val in external.get(ref_path.name, {}).items():
            row[key] = val
            if key not in extra:
                extra.append(key)
        rows.append(row)
    report = Path(args.report)
    means = {}
    _atomic_write(report, lambda p: means.update(write_csv(rows, p, extra)))
    summary = {"pairs": len(rows), "mean": means}
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_inspect(args):
    model = _load_model(args.checkpoint)
    K = model.cfg.quantizer.codebook_size
    out = []
    for m, book in enumerate(model.quantizer.books):
        util, ppl, ratio = codebook_stats(book.ema_counts, K)
        dead = int((book.usage < model.cfg.quantizer.dead_threshold).sum())
        out.append({"stage": m, "utilization": util, "perplexity": ppl, "perplexity_ratio": ratio,
                    "dead_codes": dead, "mean_norm": float(np.abs(book.centroids).mean())})
    print(json.dumps(out, indent=2))
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON training/config document")
    common.add_argument("--seed", type=int)
    common.add_argument("--preset", choices=("paper", "toy"))
    common.add_argument("--bitrate", choices=("6k", "12k"))
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cplxcodec", description="Complex-valued RVQ speech codec")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a codec on a WAV directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--max-seconds", type=float)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", parents=[common], help="WAV -> token stream")
    e.add_argument("input")
    e.add_argument("checkpoint")
    e.add_argument("output")
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", parents=[common], help="token stream -> WAV")
    d.add_argument("input")
    d.add_argument("checkpoint")
    d.add_argument("output")
    d.set_defaults(func=cmd_decode)

    v = sub.add_parser("eval", parents=[common], help="SI-SDR / LSD / GDD report")
    v.add_argument("ref_dir")
    v.add_argument("--deg-dir")
    v.add_argument("--checkpoint")
    v.add_argument("--report", required=True)
    v.add_argument("--external", action="append", help="CSV of external scores keyed by 'file'")
    v.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect-codebook", parents=[common], help="codebook usage statistics")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None:
        np.random.seed(args.seed)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
