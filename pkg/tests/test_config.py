import argparse
import json
from dataclasses import fields, is_dataclass

import pytest

from posm import config as cfgmod


def _parser():
    p = argparse.ArgumentParser()
    p.add_argument("-c", "--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    cfgmod.add_config_flags(p)
    return p


def test_defaults():
    cfg = cfgmod.RunConfig()
    assert (cfg.windowing.w_size, cfg.windowing.s_posm, cfg.masking.m_views, cfg.masking.f_mask) == (32, 4, 3, 0.3)
    assert cfg.pretrain.epochs == 100 and cfg.finetune.epochs == 50
    spec = cfg.validate().encoder_spec()
    assert spec.units == [32, 32, 32] and spec.masking.block_len(32) == 10


def test_round_trip_through_json():
    cfg = cfgmod.RunConfig(seed=5)
    cfg.finetune.trainable = "first"
    assert cfgmod.from_dict(json.loads(cfg.to_json())) == cfg


def test_unknown_keys_rejected():
    with pytest.raises(cfgmod.ConfigError, match="unknown config key 'bogus'"):
        cfgmod.from_dict({"bogus": 1})
    with pytest.raises(cfgmod.ConfigError, match="pretrain.*'epoch'"):
        cfgmod.from_dict({"pretrain": {"epoch": 3}})


def test_types_checked():
    with pytest.raises(cfgmod.ConfigError, match="pretrain.epochs"):
        cfgmod.from_dict({"pretrain": {"epochs": "ten"}})
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.from_dict({"seed": True})
    assert cfgmod.from_dict({"pretrain": {"lr": 1}}).pretrain.lr == 1.0


def test_invalid_values_fail_validation():
    cfg = cfgmod.from_dict({"finetune": {"trainable": "third"}})
    with pytest.raises(cfgmod.ConfigError, match="trainable"):
        cfg.validate()


def test_bad_json_reports_line(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "seed": 1,\n  oops\n}')
    with pytest.raises(cfgmod.ConfigError, match="line 3"):
        cfgmod.load(p)


def test_every_leaf_has_a_flag():
    dests = {a.dest for a in _parser()._actions}
    for name, typ in [(f.name, f.type) for f in fields(cfgmod.RunConfig)]:
        sub = getattr(cfgmod.RunConfig(), name)
        if is_dataclass(sub):
            for f in fields(sub):
                assert f"cfg__{name}__{f.name}" in dests
    assert "--pretrain-batch-size" in _parser().format_help()


def test_precedence_flags_over_file_over_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 3, "pretrain": {"epochs": 7, "lr": 0.01}}))
    cfg = cfgmod.resolve(_parser().parse_args(["-c", str(p), "--pretrain-epochs", "9"]))
    assert cfg.pretrain.epochs == 9
    assert cfg.pretrain.lr == 0.01
    assert cfg.seed == 3
    assert cfg.pretrain.batch_size == 64
    assert cfgmod.resolve(_parser().parse_args(["-c", str(p), "--seed", "4"])).seed == 4


def test_digest_tracks_content():
    a, b = cfgmod.RunConfig(), cfgmod.RunConfig()
    assert a.digest() == b.digest()
    b.masking.f_mask = 0.2
    assert a.digest() != b.digest()


def test_preset_overrides_structure():
    cfg = cfgmod.from_dict({"finetune": {"preset": "Inc20.FC"}})
    cs = cfg.classifier_spec()
    assert cs.pipeline == "inclusive" and cs.n_windows == 20
