import json
import os

import pytest

from motionudf.cli import build_parser, main
from motionudf.motion import read_native
from motionudf.udf import save_model

from conftest import random_model


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("MOTIONUDF_OUTPUT_DIR", raising=False)
    monkeypatch.delenv("MOTIONUDF_THREADS", raising=False)
    return tmp_path


@pytest.fixture
def model_file(work):
    save_model(random_model(T=16), work / "m.ckpt")
    return "m.ckpt"


def _subparsers():
    parser = build_parser()
    action = next(a for a in parser._actions if a.dest == "command")
    return action.choices


def test_every_flag_is_documented():
    subs = _subparsers()
    assert set(subs) >= {"synth", "ingest", "corrupt", "build-zero-level", "label", "train", "denoise",
                         "fit-partial", "smooth", "inbetween", "generate", "eval", "correlate", "ablate",
                         "reproduce"}
    for name, p in subs.items():
        text = p.format_help()
        for a in p._actions:
            if a.dest == "help":
                continue
            assert a.help, f"{name} {a.option_strings} has no help"
            for opt in a.option_strings:
                assert opt in text


def test_synth_is_deterministic(work):
    assert main(["synth", "--kind", "walk-cycle", "--frames", "128", "--seed", "7", "--out", "a"]) == 0
    assert main(["synth", "--kind", "walk-cycle", "--frames", "128", "--seed", "7", "--out", "b"]) == 0
    names = sorted(n for n in os.listdir("a") if n.endswith(".mot"))
    assert names
    for n in names:
        assert (work / "a" / n).read_bytes() == (work / "b" / n).read_bytes()
    summary = json.loads((work / "a" / "summary.json").read_text())
    manifest = json.loads((work / "a" / "manifest.json").read_text())
    assert "elapsed_s" in summary and manifest["seed"] == 7
    assert set(manifest["artifacts"]) == set(names) | {"skeleton.json"}


def test_default_output_dir_from_environment(work, monkeypatch):
    monkeypatch.setenv("MOTIONUDF_OUTPUT_DIR", str(work / "env"))
    assert main(["synth", "--frames", "20"]) == 0
    assert (work / "env" / "synth" / "summary.json").exists()


def test_outputs_are_write_once(work, capsys):
    assert main(["synth", "--frames", "20", "--out", "a"]) == 0
    assert main(["synth", "--frames", "20", "--out", "a"]) == 9
    assert "OutputExistsError" in capsys.readouterr().err


@pytest.mark.parametrize("argv,code", [
    (["synth", "--bogus"], 2),
    (["nonsense"], 2),
    (["eval", "--pred", "nope.mot", "--gt", "nope.mot"], 4),
    (["synth", "--frames", "2"], 5),
])
def test_exit_codes(work, argv, code):
    assert main(argv + ["--out", "o"] if argv[0] != "nonsense" else argv) == code


def test_malformed_config_and_file_errors(work, model_file):
    main(["synth", "--frames", "20", "--out", "s"])
    mot = "s/" + sorted(n for n in os.listdir("s") if n.endswith(".mot"))[0]
    (work / "bad.json").write_text("{not json")
    assert main(["denoise", "--input", mot, "--model", model_file, "--config", "bad.json", "--out", "d"]) == 3
    (work / "unknown.json").write_text('{"lambda_f": 1}')
    assert main(["denoise", "--input", mot, "--model", model_file, "--config", "unknown.json", "--out", "e"]) == 3
    (work / "junk.mot").write_bytes(b"junk" * 10)
    assert main(["eval", "--pred", "junk.mot", "--gt", mot, "--out", "f"]) == 6


def test_denoise_inbetween_generate(work, model_file):
    assert main(["synth", "--frames", "24", "--out", "s"]) == 0
    mot = "s/" + sorted(n for n in os.listdir("s") if n.endswith(".mot"))[0]
    common = ["--model", model_file, "--iterations", "3"]
    assert main(["denoise", "--input", mot, *common, "--out", "d"]) == 0
    assert read_native(work / "d" / "denoised.mot").num_frames == 24
    clip = read_native(mot)
    assert main(["inbetween", "--input", mot, "--keyframes", "0-5,23", *common, "--out", "i"]) == 0
    out = read_native(work / "i" / "inbetween.mot")
    keys = [0, 1, 2, 3, 4, 5, 23]
    assert out.positions[keys].tobytes() == clip.positions[keys].tobytes()
    assert main(["generate", "--poses", "16", *common, "--out", "g"]) == 0
    assert (work / "g" / "generated.mot").exists()


def test_reproduce_zero_drift_and_reported_drift(work, model_file, capsys):
    assert main(["synth", "--frames", "24", "--out", "s"]) == 0
    mot = "s/" + sorted(n for n in os.listdir("s") if n.endswith(".mot"))[0]
    (work / "e.json").write_text(json.dumps({"iterations": 3}))
    assert main(["denoise", "--input", mot, "--model", model_file, "--config", "e.json", "--out", "d"]) == 0
    (work / "all.json").write_text(json.dumps({"runs": ["s/manifest.json", "d/manifest.json"]}))
    assert main(["reproduce", "--manifest", "all.json", "--out", "r1"]) == 0
    assert json.loads((work / "r1" / "drift.json").read_text())["drift"] == []

    (work / "e.json").write_text(json.dumps({"iterations": 4}))
    assert main(["reproduce", "--manifest", "all.json", "--out", "r2"]) == 8
    drift = json.loads((work / "r2" / "drift.json").read_text())["drift"]
    assert {d["artifact"] for d in drift} == {"denoised.mot", "log.csv"}
    assert all(d["run"].endswith("d/manifest.json") for d in drift)
    assert "drift: denoised.mot" in capsys.readouterr().err
    assert json.loads((work / "r2" / "summary.json").read_text())["status"] == "drift"


def test_threads_do_not_change_training(work):
    assert main(["synth", "--kind", "mixed", "--count", "2", "--frames", "30", "--out", "s"]) == 0
    mots = sorted("s/" + n for n in os.listdir("s") if n.endswith(".mot"))
    args = ["train", "--inputs", *mots, "--T", "8", "--epochs", "1", "--hidden", "4"]
    assert main(args + ["--out", "t1", "--threads", "1"]) == 0
    assert main(args + ["--out", "t2", "--threads", "2"]) == 0
    assert (work / "t1" / "model.ckpt").read_bytes() == (work / "t2" / "model.ckpt").read_bytes()
    m1 = json.loads((work / "t1" / "manifest.json").read_text())
    assert m1["threads"] == 1
