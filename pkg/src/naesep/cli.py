"""Command line entry point (``naesep``).

On failure the last line written to stderr is a JSON object
``{"error": <exception class>, "message": <text>}`` and the exit code is 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .dsp import read_wav, write_wav
from .metrics import bss_eval
from .nae import TrainConfig, nae_forward, nae_train
from .nmf import nmf_train
from .separation import KINDS, SourceModel, separate, train_source_model


def _wav_inputs(paths):
    files = []
    for p in map(Path, paths):
        files.extend(sorted(p.glob("*.wav")) if p.is_dir() else [p])
    if not files:
        raise ValueError("no WAV inputs given")
    return files


def cmd_train(args):
    cfg = TrainConfig(lam=args.lam, max_iterations=args.iterations, tol=args.tol, seed=args.seed)
    waves = [read_wav(p) for p in _wav_inputs(args.inputs)]
    model = train_source_model(waves, args.kind, args.size, cfg, depth=args.depth,
                               n_fft=args.n_fft, hop=args.hop,
                               nmf_iterations=args.nmf_iterations)
    model.save(args.output)
    print(json.dumps({"model": str(args.output), "kind": model.kind,
                      "final_cost": model.meta["final_cost"],
                      "iterations": model.meta["iterations"]}))


def cmd_separate(args):
    models = [SourceModel.load(p) for p in args.model]
    cfg = TrainConfig(lam=args.lam, max_iterations=args.iterations, tol=args.tol, seed=args.seed)
    mixture = read_wav(args.mixture)
    waves = separate(mixture, models, cfg, nmf_iterations=args.iterations)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, w in enumerate(waves):
        path = out / f"source{k}.wav"
        write_wav(path, w, subtype="FLOAT")
        paths.append(str(path))
    print(json.dumps({"outputs": paths}))


def cmd_eval(args):
    if len(args.estimates) != len(args.references):
        raise ValueError("need the same number of estimates and references")
    est = [read_wav(p) for p in args.estimates]
    ref = [read_wav(p) for p in args.references]
    print(json.dumps(bss_eval(est, ref, args.filter_len).as_dict()))


def cmd_experiment(args):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stderr)
    config = harness.ExperimentConfig(
        corpus=args.corpus, out_dir=args.out, master_seed=args.seed,
        n_mixtures=args.n_mixtures, methods=tuple(args.methods), ranks=tuple(args.ranks),
        depth=args.depth, n_fft=args.n_fft, hop=args.hop, snr_db=args.snr_db, lam=args.lam,
        max_iterations=args.iterations, fit_iterations=args.fit_iterations,
        nmf_iterations=args.nmf_iterations, tol=args.tol, filter_len=args.filter_len,
        test_index=args.test_index, jobs=args.jobs,
    )
    result = harness.run_experiment(config)
    print(json.dumps(result.summary))


def cmd_toy(args):
    toy = harness.generate_toy_notes(args.seed, sample_rate=args.sample_rate)
    if args.output:
        write_wav(args.output, toy.waveform)
    X = harness.stft(toy.waveform).magnitude
    nmf = nmf_train(X, 4, iterations=500, seed=args.seed)
    cos, _ = harness.best_permutation_match(nmf.W.T, toy.templates.T, harness.cosine_similarity)
    nae = nae_train(X, [X.shape[0], 4, X.shape[0]],
                    TrainConfig(lam=args.lam, max_iterations=args.iterations, seed=args.seed))
    H = nae_forward(nae, X).H
    corr, _ = harness.best_permutation_match(H, toy.gates, harness.correlation)
    print(json.dumps({"nmf_template_cosine": cos, "nae_gate_correlation": corr,
                      "segments": len(harness.active_segments(X))}))


def cmd_make_corpus(args):
    root = harness.make_synthetic_corpus(args.out, args.seed, args.n_speakers, args.clips,
                                         args.sample_rate, args.seconds)
    print(json.dumps({"corpus": str(root)}))


def _training_flags(p, iterations=2000):
    p.add_argument("--lam", type=float, default=0.1, help="sparsity weight (default 0.1)")
    p.add_argument("--iterations", type=int, default=iterations)
    p.add_argument("--tol", type=float, default=1e-6, help="relative-change early stop")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="naesep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a source model from WAV files")
    p.add_argument("inputs", nargs="+", help="WAV files or directories of WAV files")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--kind", choices=KINDS, default="nae-shallow")
    p.add_argument("--size", type=int, default=20, help="rank or hidden width")
    p.add_argument("--depth", type=int, default=2, help="L for nae-deep")
    p.add_argument("--n-fft", type=int, default=512)
    p.add_argument("--hop", type=int, default=128)
    p.add_argument("--nmf-iterations", type=int, default=500)
    _training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", help="separate a mixture with trained models")
    p.add_argument("mixture")
    p.add_argument("--model", action="append", required=True, help="model file (repeat)")
    p.add_argument("--out-dir", default=".")
    _training_flags(p, iterations=500)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("eval", help="BSS_EVAL metrics of estimates against references")
    p.add_argument("--estimates", nargs="+", required=True)
    p.add_argument("--references", nargs="+", required=True)
    p.add_argument("--filter-len", type=int, default=512)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run the mixture x method x rank experiment")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True, help="master seed")
    p.add_argument("--n-mixtures", type=int, default=32)
    p.add_argument("--methods", nargs="+", choices=KINDS, default=list(KINDS))
    p.add_argument("--ranks", nargs="+", type=int, default=[20, 100])
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--n-fft", type=int, default=512)
    p.add_argument("--hop", type=int, default=128)
    p.add_argument("--snr-db", type=float, default=0.0)
    p.add_argument("--lam", type=float, default=0.1)
    p.add_argument("--iterations", type=int, default=2000, help="NAE training budget")
    p.add_argument("--fit-iterations", type=int, default=500, help="mixture fitting budget")
    p.add_argument("--nmf-iterations", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--filter-len", type=int, default=512)
    p.add_argument("--test-index", type=int, default=-1,
                   help="index of the held-out clip in each speaker's sorted file list")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("toy", help="five-note toy decomposition with NMF and sparse NAE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-rate", type=int, default=8000)
    p.add_argument("--lam", type=float, default=0.1)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("-o", "--output", help="write the toy waveform here")
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("make-corpus", help="write a synthetic multi-speaker corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-speakers", type=int, default=4)
    p.add_argument("--clips", type=int, default=10)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--seconds", type=float, default=1.0)
    p.set_defaults(func=cmd_make_corpus)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
