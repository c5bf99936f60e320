"""Command-line entry point: ``pianist <subcommand> ...``.

Exit status is 0 on success, 1 on input errors (the error class name is
printed to stderr), and 2 on usage errors. Data goes to stdout only when no
output path is given. The default seed comes from ``$PIANIST_SEED`` (else 0).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus, inference, metrics, midi, tempo_map, tokenizer
from . import model as M
from .model import checkpoint

log = logging.getLogger("pianist")

SEED_ENV = "PIANIST_SEED"
MIDI_SUFFIXES = (".mid", ".midi")
TOKEN_SUFFIX = ".tok"


class InputError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"{SEED_ENV}={raw!r} is not an integer") from None


# ---------------------------------------------------------------- file helpers


def read_token_file(path) -> list[np.ndarray]:
    seqs = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            seqs.append(np.array([int(t) for t in line.split()], dtype=np.int64))
    return seqs


def format_tokens(seqs, header: str | None = None) -> str:
    lines = [f"# {header}"] if header else []
    lines += [" ".join(str(int(t)) for t in s) for s in seqs]
    return "\n".join(lines) + "\n"


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"{p} does not exist")
    return p


def _expand(paths) -> list[Path]:
    """Files given directly plus MIDI/token files inside given directories, sorted by name."""
    out = []
    for raw in paths:
        p = _existing(raw)
        if p.is_dir():
            out.extend(sorted(f for f in p.iterdir() if f.suffix.lower() in MIDI_SUFFIXES + (TOKEN_SUFFIX,)))
        else:
            out.append(p)
    return out


def load_sequences(paths, mode: str = "performance") -> list[np.ndarray]:
    seqs = []
    for f in _expand(paths):
        if f.suffix.lower() in MIDI_SUFFIXES:
            seqs.append(tokenizer.encode(midi.normalize(midi.read_midi_file(f), mode)))
        else:
            seqs.extend(read_token_file(f))
    return seqs


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _write_meta(path, **fields) -> None:
    Path(str(path) + ".json").write_text(json.dumps(fields, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- subcommands


def cmd_tokenize(args) -> None:
    files = _expand(args.inputs)
    seqs = [tokenizer.encode(midi.normalize(midi.read_midi_file(f), args.mode)) for f in files]
    if args.shard_dir:
        written = corpus.write_shards(seqs, args.shard_dir, args.max_tokens)
        _write_manifest(args.shard_dir, seqs, written, args)
        log.info("wrote %d shard(s) to %s", len(written), args.shard_dir)
    else:
        _emit(format_tokens(seqs, f"mode={args.mode} seed={args.seed}"), args.out)


def cmd_detokenize(args) -> None:
    seqs = read_token_file(_existing(args.inp))
    if len(seqs) != 1:
        raise InputError(f"expected exactly one token sequence, found {len(seqs)}")
    piece = midi.to_midi(tokenizer.decode(seqs[0]), args.ppq)
    midi.write_midi_file(piece, args.out)
    _write_meta(args.out, seed=args.seed, ppq=args.ppq, notes=len(piece.notes))


def cmd_corrupt(args) -> None:
    rows = []
    for seq in load_sequences([args.inp], args.mode):
        ex = tokenizer.corrupt_for_pretraining(tokenizer.strip_framing(seq), args.ratio, args.seed)
        rows.append(
            {
                "encoder_input": ex.encoder_input.tolist(),
                "decoder_target": ex.decoder_target.tolist(),
                "loss_mask": ex.loss_mask.astype(int).tolist(),
            }
        )
    _emit(json.dumps({"seed": args.seed, "ratio": args.ratio, "examples": rows}) + "\n", args.out)


def _performer(name: str):
    if name == "stub":
        return inference.StubPerformer()
    return inference.TransformerPerformer(checkpoint.load(_existing(name)))


def cmd_render(args) -> None:
    score = tokenizer.encode(midi.normalize(midi.read_midi_file(_existing(args.inp)), "score"))
    sampling = inference.SamplingConfig(args.temperature, args.top_k, args.seed, args.greedy)
    block = inference.BlockConfig(args.window, args.stride, args.tail_drop)
    perf = inference.blockwise_generate(_performer(args.model), score, block, sampling)
    midi.write_midi_file(midi.to_midi(tokenizer.decode(perf), args.ppq), args.out)
    _write_meta(args.out, seed=args.seed, model=args.model, temperature=args.temperature,
                top_k=args.top_k, greedy=args.greedy, window=args.window, stride=args.stride,
                tail_drop_notes=args.tail_drop, notes=len(perf) // tokenizer.TOKENS_PER_NOTE)


def cmd_tempo_map(args) -> None:
    score = midi.normalize(midi.read_midi_file(_existing(args.score)), "score")
    perf = midi.normalize(midi.read_midi_file(_existing(args.perf)), "performance")
    out = tempo_map.expressive_tempo_map(tempo_map.AlignedPair(score, perf), args.ppq)
    midi.write_midi_file(out, args.out)
    _write_meta(args.out, seed=args.seed, ppq=args.ppq, tempo_events=[list(e) for e in out.tempo_events])


def _write_report(report: metrics.MetricReport, out, label: str) -> None:
    if not out:
        sys.stdout.write(report.to_text())
        return
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_suffix(".txt").write_text(report.to_text())
    out.with_suffix(".json").write_text(report.to_json() + "\n")
    out.with_suffix(".csv").write_text(report.to_csv(label))


def cmd_evaluate(args) -> None:
    cands = load_sequences([args.candidates], args.mode)
    refs = load_sequences([args.references], args.mode)
    report = metrics.evaluate_testset(cands, refs, args.bin_width)
    _write_report(metrics.MetricReport(report.js, report.intersection, args.seed), args.out, "candidate")


def cmd_human_baseline(args) -> None:
    root = _existing(args.groups)
    groups = [load_sequences([d], args.mode) for d in sorted(p for p in root.iterdir() if p.is_dir())]
    report = metrics.human_baseline(groups, args.bin_width)
    _write_report(metrics.MetricReport(report.js, report.intersection, args.seed), args.out, "human")


def cmd_shard(args) -> None:
    seqs = load_sequences(args.inputs, args.mode)
    written = corpus.write_shards(seqs, args.out, args.max_tokens)
    _write_manifest(args.out, seqs, written, args)
    log.info("wrote %d sequence(s) into %d shard(s)", len(seqs), len(written))


def _write_manifest(out_dir, seqs, written, args) -> None:
    manifest = {"seed": args.seed, "mode": args.mode, "sequences": len(seqs),
                "tokens": int(sum(len(s) for s in seqs)), "shards": [Path(w).name for w in written],
                "vocabulary_checksum": tokenizer.vocabulary_checksum().hex()}
    (Path(out_dir) / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def cmd_augment(args) -> None:
    src = _existing(args.inp)
    piece = midi.normalize(midi.read_midi_file(src), args.mode)
    params = corpus.AugmentParams(args.velocity_jitter, args.timing_jitter, args.seed)
    seed = corpus.derive_seed(args.seed, src.name)
    midi.write_midi_file(midi.to_midi(corpus.augment(piece, params, seed), args.ppq), args.out)
    _write_meta(args.out, seed=args.seed, file_seed=seed, velocity_jitter=args.velocity_jitter,
                timing_jitter=args.timing_jitter)


def toy_corpus(notes: int = 4) -> np.ndarray:
    """A fixed short phrase used by ``train-toy``."""
    pitches = [60, 64, 67, 72, 71, 67, 64, 62]
    rows = []
    for i in range(notes):
        rows.append(midi.TimedNote(pitches[i % len(pitches)], 60 + 7 * i, 250.0 * i, 240.0))
    return tokenizer.encode(midi.NormalizedPiece(tuple(rows), ((0.0, 127), (250.0 * notes - 50, 0))))


def cmd_train_toy(args) -> None:
    cfg = M.ModelConfig(seed=args.seed)
    model = M.init(cfg)
    example = tokenizer.corrupt_for_pretraining(toy_corpus(args.notes), args.mask_ratio, args.seed)
    opt = M.OptimizerConfig(peak_lr=args.lr, warmup_steps=0)
    trace = M.train_steps(model, [example], opt, args.steps)
    checkpoint.save(model, args.out)
    trace_path = Path(args.trace) if args.trace else Path(str(args.out) + ".trace.txt")
    trace_path.write_text(f"# seed={args.seed}\n" + "".join(f"{i}\t{v:.8f}\n" for i, v in enumerate(trace)))
    log.info("final loss %.6f after %d steps", trace[-1], args.steps)


def cmd_cost_report(args) -> None:
    cfg = M.FULL_CONFIG
    rows = []
    for n in args.seq_len:
        full = M.attention_cost(n, cfg.encoder_layers, False, cfg.heads, cfg.head_dim)
        comp = M.attention_cost(n, cfg.encoder_layers, True, cfg.heads, cfg.head_dim)
        rows.append({"seq_len": n, "uncompressed": full, "compressed": comp, "ratio": full / comp})
    prefix = args.decoder_prefix
    mem = max(args.seq_len) // 8
    dec = {layers: M.decoder_step_cost(layers, prefix, mem) for layers in (2, 6)}
    breakdown = M.parameter_breakdown(cfg)
    data = {
        "seed": args.seed,
        "attention": rows,
        "decoder_step": {"prefix_len": prefix, "memory_len": mem, "layers_2": dec[2], "layers_6": dec[6],
                         "ratio_6_vs_2": dec[6] / dec[2]},
        "parameters": {**breakdown.__dict__, "total": breakdown.total},
    }
    if args.format == "json":
        _emit(json.dumps(data, indent=2) + "\n", args.out)
        return
    lines = [f"# seed={args.seed}", "seq_len\tuncompressed_macs\tcompressed_macs\tratio"]
    lines += [f"{r['seq_len']}\t{r['uncompressed']}\t{r['compressed']}\t{r['ratio']:g}" for r in rows]
    lines.append("")
    lines.append(f"decoder_step_macs\t2_layers={dec[2]}\t6_layers={dec[6]}\tratio={dec[6] / dec[2]:g}")
    lines.append("")
    lines += [f"params.{k}\t{v}" for k, v in data["parameters"].items()]
    _emit("\n".join(lines) + "\n", args.out)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    seed = argparse.ArgumentParser(add_help=False)
    seed.add_argument("--seed", type=int, default=None, help=f"random seed (default ${SEED_ENV} or 0)")
    mode = argparse.ArgumentParser(add_help=False)
    mode.add_argument("--mode", choices=("score", "performance"), default="performance",
                      help="MIDI normalization mode")
    ppq = argparse.ArgumentParser(add_help=False)
    ppq.add_argument("--ppq", type=int, default=midi.DEFAULT_PPQ)
    binw = argparse.ArgumentParser(add_help=False)
    binw.add_argument("--bin-width", type=int, default=1)

    parser = argparse.ArgumentParser(prog="pianist", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenize", parents=[seed, mode], help="MIDI -> token dump or shards")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out")
    p.add_argument("--shard-dir")
    p.add_argument("--max-tokens", type=int, default=1 << 24)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("detokenize", parents=[seed, ppq], help="token dump -> MIDI")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detokenize)

    p = sub.add_parser("corrupt", parents=[seed, mode], help="build masked-denoising examples")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--ratio", type=float, default=0.3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("render", parents=[seed, ppq], help="score MIDI -> performance MIDI")
    p.add_argument("--model", default="stub", help="'stub' or a checkpoint path")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--top-k", type=int, default=32)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--window", type=int, default=4096)
    p.add_argument("--stride", type=int, default=2048)
    p.add_argument("--tail-drop", type=int, default=2, help="notes dropped from the overlap prompt")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("tempo-map", parents=[seed, ppq], help="(score, performance) -> tempo-mapped MIDI")
    p.add_argument("--score", required=True)
    p.add_argument("--perf", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tempo_map)

    p = sub.add_parser("evaluate", parents=[seed, mode, binw], help="candidate vs reference metrics")
    p.add_argument("--candidates", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--out", help="report path prefix (.txt/.json/.csv written)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("human-baseline", parents=[seed, mode, binw], help="leave-one-out human baseline")
    p.add_argument("--groups", required=True, help="directory with one subdirectory per piece")
    p.add_argument("--out")
    p.set_defaults(func=cmd_human_baseline)

    p = sub.add_parser("shard", parents=[seed, mode], help="MIDI/token files -> token shards")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--max-tokens", type=int, default=1 << 24)
    p.set_defaults(func=cmd_shard)

    p = sub.add_parser("augment", parents=[seed, mode, ppq], help="jitter velocity/duration/IOI")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--velocity-jitter", type=int, default=8)
    p.add_argument("--timing-jitter", type=float, default=0.05)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train-toy", parents=[seed], help="overfit the toy model on a short phrase")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--notes", type=int, default=4)
    p.add_argument("--mask-ratio", type=float, default=0.3)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("cost-report", parents=[seed], help="attention cost and parameter tables")
    p.add_argument("--seq-len", type=int, nargs="+", default=[4096])
    p.add_argument("--decoder-prefix", type=int, default=2048)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_cost_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        if args.seed is None:
            args.seed = default_seed()
        args.func(args)
    except (InputError, ValueError, OSError, RuntimeError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
