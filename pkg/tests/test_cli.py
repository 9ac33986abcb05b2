import json
import subprocess
import sys

import pytest

from naesep.cli import build_parser, main


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "corpus"
    assert main(["make-corpus", "--out", str(root), "--seed", "2", "--clips", "3",
                 "--sample-rate", "8000", "--seconds", "0.5"]) == 0
    return root


def test_subcommands_present():
    sub = build_parser()._subparsers._group_actions[0].choices
    assert set(sub) == {"train", "separate", "eval", "experiment", "toy", "make-corpus"}


def test_experiment_requires_seed(capsys, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["experiment", "--corpus", str(tmp_path), "--out", str(tmp_path)])
    assert exc.value.code != 0


def test_train_separate_eval(capsys, corpus, tmp_path):
    spk = sorted(p for p in corpus.iterdir())
    models = []
    for i, d in enumerate(spk[:2]):
        path = tmp_path / f"m{i}.model"
        code, out, _ = run_cli(capsys, "train", *sorted(d.glob("*.wav"))[:2], "-o", path,
                               "--kind", "nae-shallow", "--size", "4",
                               "--iterations", "30", "--seed", i)
        assert code == 0 and json.loads(out)["kind"] == "nae-shallow"
        models.append(path)

    from naesep.dsp import make_mixture, read_wav, write_wav

    s1, s2 = (read_wav(sorted(d.glob("*.wav"))[-1]) for d in spk[:2])
    mix, r1, r2 = make_mixture(s1, s2)
    write_wav(tmp_path / "mix.wav", mix, subtype="FLOAT")
    write_wav(tmp_path / "r1.wav", r1, subtype="FLOAT")
    write_wav(tmp_path / "r2.wav", r2, subtype="FLOAT")

    code, out, _ = run_cli(capsys, "separate", tmp_path / "mix.wav", "--model", models[0],
                           "--model", models[1], "--out-dir", tmp_path / "sep",
                           "--iterations", "30")
    outputs = json.loads(out)["outputs"]
    assert code == 0 and len(outputs) == 2

    code, out, _ = run_cli(capsys, "eval", "--estimates", *outputs,
                           "--references", tmp_path / "r1.wav", tmp_path / "r2.wav",
                           "--filter-len", "16")
    res = json.loads(out)
    assert code == 0 and len(res["sdr"]) == 2


def test_experiment(capsys, corpus, tmp_path):
    code, out, _ = run_cli(capsys, "experiment", "--corpus", corpus, "--out", tmp_path,
                           "--seed", "1", "--n-mixtures", "1", "--methods", "nmf",
                           "--ranks", "4", "--fit-iterations", "20",
                           "--nmf-iterations", "20", "--filter-len", "16")
    assert code == 0
    summary = json.loads(out)
    assert summary["cells"][0]["n_rows"] == 2
    assert (tmp_path / "results.csv").exists() and (tmp_path / "summary.json").exists()


def test_error_line_is_json(capsys, tmp_path):
    code, _, err = run_cli(capsys, "experiment", "--corpus", tmp_path / "nope", "--out",
                           tmp_path / "o", "--seed", "0")
    assert code == 1
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["error"] == "CorpusError" and "nope" in payload["message"]


def test_model_load_error(capsys, tmp_path):
    (tmp_path / "bad.model").write_bytes(b"garbage")
    code, _, err = run_cli(capsys, "separate", tmp_path / "x.wav", "--model",
                           tmp_path / "bad.model")
    assert code == 1 and "error" in json.loads(err.strip().splitlines()[-1])


def test_toy(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "toy", "--iterations", "50", "-o", tmp_path / "toy.wav")
    res = json.loads(out)
    assert code == 0 and res["segments"] == 5
    assert res["nmf_template_cosine"] > 0.95
    assert (tmp_path / "toy.wav").exists()


def test_console_script_module():
    proc = subprocess.run([sys.executable, "-m", "naesep.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "experiment" in proc.stdout
