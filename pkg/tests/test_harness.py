import csv
import json

import jsonschema
import numpy as np
import pytest

from naesep.dsp import Waveform, read_wav, stft, write_wav
from naesep.harness import (
    NOTE_SEQUENCE,
    CorpusError,
    ExperimentConfig,
    active_segments,
    best_permutation_match,
    correlation,
    cosine_similarity,
    derive_seed,
    generate_toy_notes,
    load_corpus,
    make_synthetic_corpus,
    mixture_pairs,
    read_rows,
    run_experiment,
    spectral_centroid,
    speaker_profiles,
    summary_schema,
    write_rows,
)
from naesep.metrics import median_iqr
from naesep.nmf import nmf_train

SR = 8000


@pytest.fixture(scope="module")
def toy():
    return generate_toy_notes(0)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Small stand-in corpus: 4 speakers, 3 half-second clips each."""
    root = tmp_path_factory.mktemp("corpus")
    return make_synthetic_corpus(root, seed=7, n_speakers=4, clips_per_speaker=3,
                                 sample_rate=SR, seconds=0.5)


def fast_config(corpus, out, **kw):
    base = dict(corpus=str(corpus), out_dir=str(out), master_seed=3, n_mixtures=2,
                methods=("nmf",), ranks=(20,), max_iterations=30, fit_iterations=30,
                nmf_iterations=30, filter_len=32)
    base.update(kw)
    return ExperimentConfig(**base)


def test_derive_seed():
    assert derive_seed(1, "a", 20) == derive_seed(1, "a", 20)
    assert derive_seed(1, "a", 20) != derive_seed(1, "a", 100)
    assert 0 <= derive_seed("x") < 2**64


class TestToy:
    def test_five_disjoint_segments(self, toy):
        X = stft(toy.waveform).magnitude
        runs = active_segments(X)
        assert len(runs) == 5
        assert all(a[1] <= b[0] for a, b in zip(runs, runs[1:]))

    def test_repeated_g_shares_template(self, toy):
        assert NOTE_SEQUENCE[2] == NOTE_SEQUENCE[4] == "G4"
        g = toy.pitch_names.index("G4")
        # both G notes come from one template column and one gate row
        segs = [toy.segments[2], toy.segments[4]]
        gate = toy.gates[g]
        hop = 128
        for a, b in segs:
            assert gate[a // hop + 4 : b // hop].min() > 0.5 * gate.max()

    def test_templates_and_gates(self, toy):
        assert toy.templates.shape == (257, 4) and toy.gates.shape[0] == 4
        np.testing.assert_allclose(toy.templates.sum(axis=0), 1.0)
        assert np.all(toy.gates >= 0)

    def test_at_least_five_harmonics(self):
        t = generate_toy_notes(0, n_harmonics=5, sample_rate=16000)
        peak = np.argmax(t.templates[:, t.pitch_names.index("D4")])
        assert peak == round(293.6648 * 512 / 16000)

    def test_deterministic(self):
        a, b = generate_toy_notes(4), generate_toy_notes(4)
        assert a.waveform.samples.tobytes() == b.waveform.samples.tobytes()

    def test_rank4_nmf_recovers_templates(self, toy):
        X = stft(toy.waveform).magnitude
        m = nmf_train(X, 4, iterations=500, seed=0)
        cos, _ = best_permutation_match(m.W.T, toy.templates.T, cosine_similarity)
        assert cos > 0.95


def test_best_permutation_match():
    truth = np.eye(3)
    est = truth[[2, 0, 1]] + 0.01
    worst, perm = best_permutation_match(est, truth, cosine_similarity)
    assert perm == (2, 0, 1) and worst > 0.99
    assert correlation(np.arange(5.0), 2 * np.arange(5.0) + 1) == pytest.approx(1.0)


class TestCorpus:
    def test_layout_and_split(self, corpus):
        speakers = load_corpus(corpus)
        assert [s.speaker_id for s in speakers] == ["spk00", "spk01", "spk02", "spk03"]
        for s in speakers:
            assert s.test.name == "clip02.wav" and len(s.train) == 2
            assert s.test not in s.train
        assert load_corpus(corpus, test_index=0)[0].test.name == "clip00.wav"

    def test_loads_without_warnings(self, corpus, recwarn):
        for s in load_corpus(corpus):
            read_wav(s.test)
        assert len(recwarn) == 0

    def test_centroids_differ(self, corpus):
        cents = sorted(spectral_centroid(read_wav(s.test)) for s in load_corpus(corpus))
        assert cents[-1] - cents[0] > 500

    def test_full_rate_centroids_well_spread(self, tmp_path):
        root = make_synthetic_corpus(tmp_path, seed=0, n_speakers=4, clips_per_speaker=1)
        cents = sorted(spectral_centroid(read_wav(p)) for p in sorted(root.glob("*/*.wav")))
        assert min(np.diff(cents)) > 500

    def test_same_seed_same_tree(self, tmp_path):
        a = make_synthetic_corpus(tmp_path / "a", 1, 2, 2, SR, 0.25)
        b = make_synthetic_corpus(tmp_path / "b", 1, 2, 2, SR, 0.25)
        fa = sorted(p.relative_to(a) for p in a.rglob("*.wav"))
        assert fa == sorted(p.relative_to(b) for p in b.rglob("*.wav"))
        assert all((a / f).read_bytes() == (b / f).read_bytes() for f in fa)

    def test_needs_two_speakers(self):
        with pytest.raises(ValueError):
            speaker_profiles(0, 1)

    def test_layout_errors_name_path(self, tmp_path):
        with pytest.raises(CorpusError, match="missing"):
            load_corpus(tmp_path / "missing")
        (tmp_path / "spkA").mkdir()
        write_wav(tmp_path / "spkA" / "only.wav", Waveform(np.ones(10) * 0.1, SR))
        with pytest.raises(CorpusError, match="spkA"):
            load_corpus(tmp_path)


def test_mixture_pairs_distinct_and_seeded():
    pairs = mixture_pairs(list(range(4)), 20, 5)
    assert all(a != b for a, b in pairs)
    assert pairs == mixture_pairs(list(range(4)), 20, 5)
    assert pairs != mixture_pairs(list(range(4)), 20, 6)


@pytest.fixture(scope="module")
def run(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    return out, run_experiment(fast_config(corpus, out))


class TestExperiment:
    def test_row_count(self, run):
        out, res = run
        assert len(res.rows) == 4
        assert len(read_rows(out / "results.csv")) == 4
        assert [(r.mixture_id, r.source) for r in res.rows] == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_csv_header(self, run):
        with open(run[0] / "results.csv") as f:
            header = next(csv.reader(f))
        assert header[:4] == ["mixture_id", "speaker_a", "speaker_b", "method"]

    def test_bitwise_repeatable(self, run, corpus, tmp_path):
        run_experiment(fast_config(corpus, tmp_path))
        assert (tmp_path / "results.csv").read_bytes() == (run[0] / "results.csv").read_bytes()

    def test_summary_matches_rows(self, run):
        out, res = run
        summary = json.loads((out / "summary.json").read_text())
        cell = summary["cells"][0]
        for metric in ("sdr", "sir", "sar"):
            assert cell[metric] == median_iqr([getattr(r, metric) for r in res.rows])
        jsonschema.validate(summary, summary_schema())

    def test_resume_skips_done_cells(self, corpus, tmp_path):
        cfg = fast_config(corpus, tmp_path, ranks=(20, 5))
        first = run_experiment(cfg)
        # drop one cell, then resume: only that cell is recomputed
        kept = [r for r in first.rows if not (r.mixture_id == 1 and r.rank == 5)]
        write_rows(tmp_path / "results.csv", kept)
        before = (tmp_path / "results.csv").read_bytes()
        second = run_experiment(cfg)
        assert len(second.timings) == 1
        assert len(second.rows) == 8
        assert (tmp_path / "results.csv").read_bytes() != before

    def test_resume_rejects_other_config(self, run, corpus):
        with pytest.raises(ValueError, match="master_seed"):
            run_experiment(fast_config(corpus, run[0], master_seed=99))

    def test_models_cached(self, run):
        files = sorted(p.name for p in (run[0] / "models").iterdir())
        assert files and all(f.endswith(".model") for f in files)

    def test_config_validation(self, corpus, tmp_path):
        with pytest.raises(ValueError):
            fast_config(corpus, tmp_path, n_mixtures=0)
        with pytest.raises(ValueError):
            fast_config(corpus, tmp_path, ranks=())
        with pytest.raises(ValueError):
            fast_config(corpus, tmp_path, methods=("pca",))
        with pytest.raises(ValueError):
            fast_config(corpus, tmp_path, master_seed=-1)
