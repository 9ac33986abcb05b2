"""Synthetic data and the separation experiment runner.

Corpus layout is ``<root>/<speaker_id>/*.wav``.  Within a speaker the files
are sorted by name; by default the last one is held out as the test clip
and the rest are used to train that speaker's model (``test_index``
overrides the choice).

``run_experiment`` writes three files to its output directory:

``results.csv``
    One row per (mixture, method, rank, source), columns ``ROW_FIELDS``,
    rows sorted by mixture, method, rank and source.  Floats use Python's
    shortest round-trip repr, so identical runs give identical bytes.
``summary.json``
    Median and interquartile range of SDR/SIR/SAR per (method, rank) cell;
    validates against ``schemas/summary.schema.json``.
``timings.csv``
    Wall-clock seconds per cell.  Kept apart from ``results.csv`` because
    timings are not reproducible.

Trained speaker models are cached under ``models/`` in the model file
format, and cells already present in ``results.csv`` are skipped, so an
interrupted run can be resumed by calling it again.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .dsp import Waveform, make_mixture, read_wav, stft, write_wav
from .metrics import QUARTILE_METHOD, bss_eval, median_iqr
from .nae import TrainConfig
from .numerics import make_rng
from .separation import KINDS, SourceModel, separate, train_source_model

log = logging.getLogger(__name__)

SUMMARY_SCHEMA_VERSION = 1
ROW_FIELDS = [
    "mixture_id", "speaker_a", "speaker_b", "method", "rank", "depth", "source",
    "reference_speaker", "sdr", "sir", "sar", "seed",
]


def derive_seed(*parts) -> int:
    """64-bit seed from the SHA-256 of the ``|``-joined parts."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


# --------------------------------------------------------------------------
# toy piano notes

PITCHES = {"D4": 293.6648, "Eb4": 311.1270, "F#4": 369.9944, "G4": 391.9954}
NOTE_SEQUENCE = ("D4", "Eb4", "G4", "F#4", "G4")


@dataclass
class ToyNotes:
    waveform: Waveform
    pitch_names: list
    templates: np.ndarray  # bins x pitches, unit-sum columns
    gates: np.ndarray  # pitches x frames, per-frame magnitude mass of each pitch
    segments: list  # (start, stop) sample ranges of the five notes
    sequence: tuple = NOTE_SEQUENCE


def generate_toy_notes(seed=0, sample_rate=8000, note_seconds=0.5, gap_seconds=0.1,
                       n_harmonics=10, decay=0.8, level=0.5, n_fft=512, hop=None):
    """Five harmonic notes D, Eb, G, F#, G separated by short silences.

    Every tone is a fundamental plus ``n_harmonics - 1`` overtones whose
    amplitudes fall off geometrically by ``decay``; the seed only picks the
    harmonic phases.  Ground truth is computed from the STFT of each pitch's
    isolated part of the signal: ``templates`` holds each pitch's unit-sum
    spectrum and ``gates`` its magnitude mass per frame.

    At 8 kHz a 512-point frame resolves the semitone between D and Eb far
    better than at 16 kHz, and with 10 harmonics G4 still stays below
    Nyquist.
    """
    rng = make_rng(seed)
    names = list(PITCHES)
    n_note = int(round(note_seconds * sample_rate))
    n_gap = int(round(gap_seconds * sample_rate))
    total = n_gap + len(NOTE_SEQUENCE) * (n_note + n_gap)
    n_fade = max(int(0.01 * sample_rate), 1)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n_fade) / n_fade)
    env = np.ones(n_note)
    env[:n_fade] = ramp
    env[-n_fade:] = ramp[::-1]
    amps = decay ** np.arange(n_harmonics)
    amps /= np.sqrt(np.sum(amps**2))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(len(names), n_harmonics))
    t = np.arange(n_note) / sample_rate

    parts = np.zeros((len(names), total))
    segments = []
    for i, note in enumerate(NOTE_SEQUENCE):
        k = names.index(note)
        start = n_gap + i * (n_note + n_gap)
        h = np.arange(1, n_harmonics + 1)[:, None]
        tone = amps @ np.sin(2.0 * np.pi * PITCHES[note] * h * t + phases[k][:, None])
        parts[k, start : start + n_note] += level * env * tone
        segments.append((start, start + n_note))

    mags = [stft(Waveform(p, sample_rate), n_fft, hop).magnitude for p in parts]
    templates = np.stack([m.sum(axis=1) for m in mags], axis=1)
    templates /= templates.sum(axis=0)
    gates = np.stack([m.sum(axis=0) for m in mags])
    return ToyNotes(Waveform(parts.sum(axis=0), sample_rate), names, templates, gates, segments)


def active_segments(magnitude, rel_threshold=1e-3):
    """Runs of frames whose energy exceeds ``rel_threshold`` of the peak."""
    energy = np.sum(magnitude**2, axis=0)
    active = energy > rel_threshold * energy.max()
    runs, start = [], None
    for i, a in enumerate(active):
        if a and start is None:
            start = i
        elif not a and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, active.size))
    return runs


def best_permutation_match(estimated, truth, similarity):
    """Exhaustive matching of rows of ``estimated`` to rows of ``truth``.

    Returns ``(worst, permutation)`` for the permutation whose worst matched
    similarity is largest.  Intended for a handful of components.
    """
    best, best_perm = -np.inf, None
    for perm in itertools.permutations(range(len(truth)), len(estimated)):
        worst = min(similarity(estimated[i], truth[j]) for i, j in enumerate(perm))
        if worst > best:
            best, best_perm = worst, perm
    return best, best_perm


def cosine_similarity(a, b) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def correlation(a, b) -> float:
    return float(np.corrcoef(a, b)[0, 1])


# --------------------------------------------------------------------------
# synthetic speakers


def _formant_envelope(freqs, formants, widths):
    gains = (1.0, 0.7, 0.4)
    f = np.asarray(freqs, dtype=np.float64)
    env = sum(g * np.exp(-0.5 * ((f - c) / w) ** 2) for c, w, g in zip(formants, widths, gains))
    return env + 0.01


@dataclass
class SpeakerProfile:
    speaker_id: str
    formants: tuple
    widths: tuple
    f0_low: float
    f0_high: float


def speaker_profiles(seed, n_speakers, low_hz=700.0, high_hz=3700.0):
    """Distinct "voices": formant groups spread evenly over ``[low_hz, high_hz]``.

    The seed shuffles which speaker gets which region and draws the pitch
    ranges.
    """
    if n_speakers < 2:
        raise ValueError("need at least two speakers")
    rng = make_rng(derive_seed(seed, "profiles"))
    centers = np.linspace(low_hz, high_hz, n_speakers)[rng.permutation(n_speakers)]
    profiles = []
    for i, c in enumerate(centers):
        c = c + rng.uniform(-50.0, 50.0)
        f0 = rng.uniform(90.0, 230.0)
        profiles.append(SpeakerProfile(
            speaker_id=f"spk{i:02d}",
            formants=tuple(float(v) for v in c * np.array([0.55, 1.0, 1.5])),
            widths=tuple(float(v) for v in max(0.12 * c, 80.0) * np.array([1.0, 1.2, 1.5])),
            f0_low=float(f0),
            f0_high=float(1.3 * f0),
        ))
    return profiles


def synthesize_utterance(profile: SpeakerProfile, seed, sample_rate=16000, seconds=1.0,
                         peak=0.3) -> Waveform:
    """Syllable-like bursts of a gliding harmonic source plus breath noise,
    both shaped by the speaker's formant envelope."""
    rng = make_rng(seed)
    n = int(round(seconds * sample_rate))
    f0 = np.full(n, profile.f0_low)
    amp = np.zeros(n)
    t = int(rng.uniform(0.02, 0.08) * sample_rate)
    while t < n:
        stop = min(t + int(rng.uniform(0.12, 0.3) * sample_rate), n)
        m = stop - t
        a, b = rng.uniform(profile.f0_low, profile.f0_high, size=2)
        f0[t:stop] = np.linspace(a, b, m)
        amp[t:stop] = np.sin(np.pi * np.arange(m) / m) ** 0.5 * rng.uniform(0.6, 1.0)
        t = stop + int(rng.uniform(0.03, 0.1) * sample_rate)

    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    nyquist = sample_rate / 2.0
    voiced = np.zeros(n)
    for h in range(1, int(nyquist / profile.f0_low)):
        fh = h * f0
        gain = np.where(fh < nyquist, _formant_envelope(fh, profile.formants, profile.widths), 0.0)
        voiced += gain * np.sin(h * phase + rng.uniform(0.0, 2.0 * np.pi))
    spectrum = np.fft.rfft(rng.standard_normal(n))
    shape = _formant_envelope(np.fft.rfftfreq(n, 1.0 / sample_rate), profile.formants,
                              profile.widths)
    breath = np.fft.irfft(spectrum * shape, n)
    x = (voiced / np.std(voiced) + 0.2 * breath / np.std(breath)) * amp
    return Waveform(peak * x / np.max(np.abs(x)), sample_rate)


def spectral_centroid(w: Waveform) -> float:
    power = np.abs(np.fft.rfft(w.samples)) ** 2
    freqs = np.fft.rfftfreq(len(w), 1.0 / w.sample_rate)
    return float(np.sum(power * freqs) / np.sum(power))


def make_synthetic_corpus(root, seed, n_speakers=4, clips_per_speaker=10, sample_rate=16000,
                          seconds=1.0) -> Path:
    """Write a corpus of synthetic speakers as 16-bit WAVs; returns ``root``."""
    root = Path(root)
    for profile in speaker_profiles(seed, n_speakers):
        d = root / profile.speaker_id
        d.mkdir(parents=True, exist_ok=True)
        for c in range(clips_per_speaker):
            w = synthesize_utterance(profile, derive_seed(seed, profile.speaker_id, c),
                                     sample_rate, seconds)
            write_wav(d / f"clip{c:02d}.wav", w)
    return root


# --------------------------------------------------------------------------
# corpus loading


class CorpusError(ValueError):
    pass


@dataclass
class Speaker:
    speaker_id: str
    train: list
    test: Path


def load_corpus(root, test_index=-1) -> list:
    """Scan ``<root>/<speaker_id>/*.wav`` and split each speaker's clips."""
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"corpus root {root} is not a directory")
    speakers = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        wavs = sorted(d.glob("*.wav"))
        if len(wavs) < 2:
            raise CorpusError(f"{d}: need at least 2 WAV files (train + test), found {len(wavs)}")
        test = wavs[test_index]
        speakers.append(Speaker(d.name, [w for w in wavs if w != test], test))
    if len(speakers) < 2:
        raise CorpusError(f"{root}: need at least 2 speaker directories, found {len(speakers)}")
    return speakers


# --------------------------------------------------------------------------
# experiment


@dataclass
class ExperimentConfig:
    corpus: str
    out_dir: str
    master_seed: int
    n_mixtures: int = 32
    methods: tuple = KINDS
    ranks: tuple = (20, 100)
    depth: int = 2
    n_fft: int = 512
    hop: int = 128
    snr_db: float = 0.0
    lam: float = 0.1
    max_iterations: int = 2000
    fit_iterations: int = 500
    nmf_iterations: int = 500
    tol: float = 1e-6
    filter_len: int = 512
    test_index: int = -1
    jobs: int = 1

    def __post_init__(self):
        if self.master_seed < 0:
            raise ValueError("master_seed must be non-negative")
        if self.n_mixtures < 1:
            raise ValueError("n_mixtures must be >= 1")
        if not self.ranks:
            raise ValueError("ranks must be non-empty")
        for m in self.methods:
            if m not in KINDS:
                raise ValueError(f"unknown method {m!r}; expected one of {KINDS}")
        self.methods = tuple(self.methods)
        self.ranks = tuple(int(r) for r in self.ranks)


@dataclass
class ResultRow:
    mixture_id: int
    speaker_a: str
    speaker_b: str
    method: str
    rank: int
    depth: int
    source: int
    reference_speaker: str
    sdr: float
    sir: float
    sar: float
    seed: int


@dataclass
class ExperimentResult:
    rows: list
    summary: dict
    timings: dict = field(default_factory=dict)


def mixture_pairs(speakers, n_mixtures, master_seed):
    """Two distinct speakers per mixture, drawn from the master seed."""
    rng = make_rng(derive_seed(master_seed, "pairs"))
    return [tuple(int(i) for i in rng.choice(len(speakers), size=2, replace=False))
            for _ in range(n_mixtures)]


def _method_depth(method, depth):
    return depth if method == "nae-deep" else 1


def _model_job(args):
    config, speaker, method, rank, path = args
    path = Path(path)
    if path.exists():
        return str(path)
    train_cfg = TrainConfig(lam=config.lam, max_iterations=config.max_iterations,
                            tol=config.tol,
                            seed=derive_seed(config.master_seed, "model", speaker.speaker_id,
                                             method, rank))
    waves = [read_wav(p) for p in speaker.train]
    model = train_source_model(waves, method, rank, train_cfg, depth=config.depth,
                               n_fft=config.n_fft, hop=config.hop,
                               nmf_iterations=config.nmf_iterations)
    tmp = path.with_suffix(".tmp")
    model.save(tmp)
    tmp.replace(path)
    return str(path)


def _cell_job(args):
    config, mix_id, (spk_a, spk_b), method, rank, model_paths = args
    start = time.perf_counter()
    seed = derive_seed(config.master_seed, mix_id, method, rank)
    s1, s2 = read_wav(spk_a.test), read_wav(spk_b.test)
    mixture, ref1, ref2 = make_mixture(s1, s2, config.snr_db)
    models = [SourceModel.load(p) for p in model_paths]
    fit_cfg = TrainConfig(lam=config.lam, max_iterations=config.fit_iterations,
                          tol=config.tol, seed=seed)
    estimates = separate(mixture, models, fit_cfg,
                         seeds=[derive_seed(seed, k) for k in range(len(models))],
                         nmf_iterations=config.fit_iterations)
    result = bss_eval(estimates, [ref1, ref2], config.filter_len)
    rows = [
        ResultRow(mix_id, spk_a.speaker_id, spk_b.speaker_id, method, rank,
                  _method_depth(method, config.depth), k, spk.speaker_id,
                  float(result.sdr[k]), float(result.sir[k]), float(result.sar[k]), seed)
        for k, spk in enumerate((spk_a, spk_b))
    ]
    return rows, time.perf_counter() - start


def _row_key(row: ResultRow, config: ExperimentConfig):
    return (row.mixture_id, config.methods.index(row.method), row.rank, row.source)


def read_rows(path) -> list:
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            rows.append(ResultRow(
                mixture_id=int(rec["mixture_id"]), speaker_a=rec["speaker_a"],
                speaker_b=rec["speaker_b"], method=rec["method"], rank=int(rec["rank"]),
                depth=int(rec["depth"]), source=int(rec["source"]),
                reference_speaker=rec["reference_speaker"], sdr=float(rec["sdr"]),
                sir=float(rec["sir"]), sar=float(rec["sar"]), seed=int(rec["seed"]),
            ))
    return rows


def write_rows(path, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ROW_FIELDS)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in (getattr(row, k) for k in ROW_FIELDS)])


def summarize(rows, config: ExperimentConfig) -> dict:
    cells = []
    for method in config.methods:
        for rank in config.ranks:
            sel = [r for r in rows if r.method == method and r.rank == rank]
            if not sel:
                continue
            cell = {"method": method, "rank": rank, "depth": _method_depth(method, config.depth),
                    "n_rows": len(sel)}
            for metric in ("sdr", "sir", "sar"):
                cell[metric] = median_iqr([getattr(r, metric) for r in sel])
            cells.append(cell)
    return {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "master_seed": int(config.master_seed),
        "n_mixtures": int(config.n_mixtures),
        "quartile_method": QUARTILE_METHOD,
        "cells": cells,
    }


def summary_schema() -> dict:
    text = resources.files("naesep").joinpath("schemas/summary.schema.json").read_text()
    return json.loads(text)


def _map(fn, jobs, n_workers):
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _config_record(config: ExperimentConfig) -> dict:
    # worker count changes scheduling only, never results
    rec = json.loads(json.dumps(asdict(config), default=list))
    rec.pop("jobs")
    return rec


def _check_resumable(out: Path, config: ExperimentConfig) -> None:
    path = out / "config.json"
    if not (out / "results.csv").exists() or not path.exists():
        return
    old = json.loads(path.read_text())
    old.pop("jobs", None)
    if old != _config_record(config):
        changed = sorted(k for k in set(old) | set(_config_record(config))
                         if old.get(k) != _config_record(config).get(k))
        raise ValueError(f"{out} holds results of a different configuration "
                         f"(differs in {', '.join(changed)}); use a fresh output directory")


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Train, separate and score every (mixture, method, rank) cell.

    Speaker models depend only on the speaker, method and rank, so each is
    trained once and shared by all mixtures that use that speaker.
    """
    out = Path(config.out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    speakers = load_corpus(config.corpus, config.test_index)
    rates = {read_wav(s.test).sample_rate for s in speakers}
    if len(rates) != 1:
        raise CorpusError(f"{config.corpus}: mixed sample rates {sorted(rates)}")
    pairs = [(speakers[a], speakers[b])
             for a, b in mixture_pairs(speakers, config.n_mixtures, config.master_seed)]

    results_path = out / "results.csv"
    _check_resumable(out, config)
    done = read_rows(results_path) if results_path.exists() else []
    done_cells = {(r.mixture_id, r.method, r.rank) for r in done}
    todo = [(i, pair, method, rank)
            for i, pair in enumerate(pairs)
            for method in config.methods for rank in config.ranks
            if (i, method, rank) not in done_cells]

    def model_path(spk, method, rank):
        return out / "models" / f"{spk.speaker_id}__{method}__r{rank}.model"

    needed = {}
    for _, pair, method, rank in todo:
        for spk in pair:
            needed[(spk.speaker_id, method, rank)] = (config, spk, method, rank,
                                                      str(model_path(spk, method, rank)))
    log.info("training %d speaker models", len(needed))
    _map(_model_job, [needed[k] for k in sorted(needed)], config.jobs)

    jobs = [(config, i, pair, method, rank,
             [str(model_path(spk, method, rank)) for spk in pair])
            for i, pair, method, rank in todo]
    log.info("separating %d cells (%d already done)", len(jobs), len(done_cells))
    outputs = _map(_cell_job, jobs, config.jobs)

    rows = list(done)
    timings = {}
    for job, (cell_rows, seconds) in zip(jobs, outputs):
        rows.extend(cell_rows)
        timings[(job[1], job[3], job[4])] = seconds
    rows.sort(key=lambda r: _row_key(r, config))
    expected = config.n_mixtures * len(config.methods) * len(config.ranks) * 2
    if len(rows) != expected:
        raise RuntimeError(f"expected {expected} result rows, have {len(rows)}")
    write_rows(results_path, rows)

    summary = summarize(rows, config)
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    timing_path = out / "timings.csv"
    with open(timing_path, "a", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if f.tell() == 0:
            writer.writerow(["mixture_id", "method", "rank", "seconds"])
        for (mix_id, method, rank), seconds in sorted(timings.items()):
            writer.writerow([mix_id, method, rank, f"{seconds:.3f}"])
    with open(out / "config.json", "w") as f:
        json.dump(_config_record(config), f, indent=2, sort_keys=True)
        f.write("\n")
    return ExperimentResult(rows, summary, timings)
