import json
import os

import pytest

from posm.cli import main
from posm.ink import parse_interchange

TINY = {
    "windowing": {"w_size": 8, "s_posm": 4, "s_train": 8, "s_test": 4},
    "encoder": {"blstm_layers": "3*relu + 3*relu", "head_layers": "16*relu + reshape(8,2)"},
    "pretrain": {"epochs": 1, "batch_size": 64},
    "finetune": {"n_layers_kept": 1, "head_layers": "4*relu + 2*softmax", "epochs": 1, "batch_size": 32},
}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def workspace(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    assert run(capsys, "synth", "--writers", 3, "--paragraphs", 4, "--words", 2, "--seed", 1, "-o", corpus)[0] == 0
    cfg = dict(TINY, data={"corpus": str(corpus)})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return tmp_path, path


def test_synth_writes_one_line_per_strokeset(tmp_path, capsys):
    out_path = tmp_path / "s.jsonl"
    code, out, _ = run(capsys, "synth", "--writers", 4, "--paragraphs", 8, "--words", 2, "-o", out_path)
    assert code == 0 and json.loads(out)["strokesets"] == 32
    assert len(out_path.read_text().splitlines()) == 32


def test_pretrain_is_reproducible(workspace, capsys):
    tmp, cfg = workspace
    digests = []
    for name in ("a.posm", "b.posm"):
        code, out, err = run(capsys, "pretrain", "-c", cfg, "-o", tmp / name)
        assert code == 0, err
        digests.append(json.loads(out)["sha256"])
        assert all(json.loads(line) for line in err.splitlines())
    assert digests[0] == digests[1]
    assert (tmp / "a.posm").read_bytes() == (tmp / "b.posm").read_bytes()


def test_full_pipeline(workspace, capsys):
    tmp, cfg = workspace
    assert run(capsys, "pretrain", "-c", cfg, "-o", tmp / "enc.posm")[0] == 0
    code, out, err = run(capsys, "finetune", "-c", cfg, "--checkpoint", tmp / "enc.posm", "-o", tmp / "m.posm",
                         "--finetune-head-layers", "4*relu + 3*softmax")
    assert code == 0, err
    code, out, err = run(capsys, "evaluate", "-c", cfg, "--model", tmp / "m.posm", "-o", tmp / "r.json")
    assert code == 0, err
    report = json.loads((tmp / "r.json").read_text())
    assert report["schema"] == "posm-eval-report/1" and report["task"] == "writer_id"
    assert len(report["metrics"]["confusion"]) == 3

    code, out, err = run(capsys, "reconstruct", "-c", cfg, "--checkpoint", tmp / "enc.posm", "-o", tmp / "rec",
                         "--reconstruct-limit", 2)
    assert code == 0, err
    assert sorted(p.name for p in (tmp / "rec").iterdir()) == ["case_0000.svg", "case_0001.svg", "summary.json"]

    code, out, err = run(capsys, "compare", "-c", cfg, "--checkpoint", tmp / "enc.posm", "--seeds", "1,2",
                         "--control", "-o", tmp / "cmp.json", "--finetune-head-layers", "4*relu + 3*softmax")
    assert code == 0, err
    cmp_ = json.loads((tmp / "cmp.json").read_text())
    assert cmp_["n_pairs"] == 2 and cmp_["mean_margin"] == 0.0


def test_finetune_is_reproducible(workspace, capsys):
    tmp, cfg = workspace
    run(capsys, "pretrain", "-c", cfg, "-o", tmp / "enc.posm")
    shas = []
    for name in ("m1.posm", "m2.posm"):
        code, out, err = run(capsys, "finetune", "-c", cfg, "--checkpoint", tmp / "enc.posm", "-o", tmp / name,
                             "--finetune-head-layers", "4*relu + 3*softmax", "--finetune-trainable", "first")
        assert code == 0, err
        shas.append(json.loads(out)["sha256"])
    assert shas[0] == shas[1]


def test_errors_are_json_with_exit_code_1(workspace, capsys):
    tmp, cfg = workspace
    code, out, err = run(capsys, "pretrain", "-c", cfg, "-o", tmp / "x.posm", "--finetune-trainable", "nope")
    assert code == 1 and out == ""
    assert json.loads(err)["error"] == "ConfigError"
    code, _, err = run(capsys, "evaluate", "-c", cfg, "--model", tmp / "missing.posm", "-o", tmp / "r.json")
    assert code == 1 and "missing.posm" in json.loads(err)["message"]


def test_data_dir_env_resolves_relative_paths(workspace, capsys, monkeypatch):
    tmp, _ = workspace
    monkeypatch.setenv("POSM_DATA_DIR", str(tmp))
    cfg = tmp / "rel.json"
    cfg.write_text(json.dumps(dict(TINY, data={"corpus": "corpus.jsonl"})))
    assert run(capsys, "pretrain", "-c", cfg, "-o", tmp / "e.posm")[0] == 0


def test_convert_xml_round_trip(fixtures_dir, tmp_path, capsys):
    src = os.path.join(fixtures_dir, "two_strokes.xml")
    meta = tmp_path / "meta.json"
    meta.write_text(json.dumps({"10042": {"gender": "female", "handedness": "left"}}))
    code, out, err = run(capsys, "convert", src, "--meta", meta, "-o", tmp_path / "c.jsonl")
    assert code == 0, err
    corpus = parse_interchange((tmp_path / "c.jsonl").read_bytes())
    ss = corpus.strokesets[0]
    assert ss.id == "two_strokes" and ss.writer_id == "10042" and ss.n_points == 6 and ss.gender == "female"


def test_config_commands(capsys, tmp_path):
    code, out, _ = run(capsys, "config", "print-defaults")
    assert code == 0 and json.loads(out)["windowing"]["w_size"] == 32
    code, out, _ = run(capsys, "config", "show", "--pretrain-epochs", 3)
    assert json.loads(out)["pretrain"]["epochs"] == 3
    bad = tmp_path / "bad.json"
    bad.write_text('{"nope": 1}')
    code, _, err = run(capsys, "config", "validate", "-c", bad)
    assert code == 1 and "nope" in json.loads(err)["message"]
