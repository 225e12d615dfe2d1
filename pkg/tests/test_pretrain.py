import numpy as np
import pytest

from posm import featurize as fz
from posm.ink import Corpus, concat_pen_down
from posm.nn import serialize
from posm.nn.spec import parse_layers
from posm.pretrain import (Encoder, EncoderSpec, checkpoint_bytes, checkpoint_from_bytes, digest, evaluate_mse,
                           load_checkpoint, load_masked_set, masked_views_for, pretrain, save_checkpoint,
                           save_masked_set, split_for_validation, untrained_checkpoint)
from posm.synth import synth_corpus
from posm.training import JsonLog, TrainConfig, minibatches

SMALL = EncoderSpec(
    blstm_layers=tuple(parse_layers("4*relu + 4*relu", "blstm")),
    head_layers=tuple(parse_layers("BN + 16*relu + reshape(8,2)")),
    windowing=fz.WindowingConfig(8, 4),
)


@pytest.fixture(scope="module")
def corpus():
    return synth_corpus(3, 4, 5, words_per_paragraph=2)


def test_default_spec_widths():
    spec = EncoderSpec()
    assert spec.units == [32, 32, 32]
    assert spec.representation_width == 32 * 64
    enc = Encoder(spec)
    widths = [(layer.n_in, layer.units) for layer in enc.blstm_layers()]
    assert widths == [(2, 32), (64, 32), (64, 32)]
    out = enc.forward(np.zeros((3, 32, 2), np.float32))
    assert out.shape == (3, 32, 2)


def test_aggregate_representation_width():
    spec = EncoderSpec(block_type="aggregate_state")
    assert Encoder(spec).encode(np.zeros((2, 32, 2))).shape == (2, 64)


def test_spec_round_trips_through_dict():
    assert EncoderSpec.from_dict(SMALL.to_dict()) == SMALL


@pytest.mark.parametrize("kw", [
    {"block_type": "middle"},
    {"head_layers": tuple(parse_layers("16*relu"))},
    {"blstm_layers": tuple(parse_layers("dropout(0.1)", "blstm"))},
])
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        EncoderSpec(**kw)


def test_input_shape_checked():
    with pytest.raises(ValueError, match="expected windows"):
        Encoder(SMALL).forward(np.zeros((1, 9, 2)))


def test_masked_views_counts(corpus):
    ms = masked_views_for(corpus.strokesets[:2], SMALL, seed=0)
    n_windows = sum(len(fz.window_starts(len(concat_pen_down(ss)), SMALL.windowing))
                    for ss in corpus.strokesets[:2])
    assert len(ms) == 3 * n_windows
    assert ms.inputs.shape[1:] == (8, 2) and ms.targets.shape[1:] == (8, 2)
    assert np.all(ms.inputs[ms.masks] == -1.0)


def test_masked_views_are_seeded(corpus):
    a = masked_views_for(corpus.strokesets[:1], SMALL, seed=3)
    b = masked_views_for(corpus.strokesets[:1], SMALL, seed=3)
    np.testing.assert_array_equal(a.inputs, b.inputs)


def test_masked_set_round_trip(tmp_path, corpus):
    ms = masked_views_for(corpus.strokesets[:1], SMALL, seed=0)
    save_masked_set(tmp_path / "m.bin", ms, SMALL)
    back, spec = load_masked_set(tmp_path / "m.bin")
    assert spec == SMALL and back.sources == ms.sources
    np.testing.assert_array_equal(back.masks, ms.masks)


def test_validation_split_holds_out_at_least_one(corpus):
    tr, va = split_for_validation(corpus.strokesets, 0.01, 0)
    assert len(va) == 1 and len(tr) == len(corpus) - 1


def test_minibatches_merge_singleton_tail():
    sizes = [len(b) for b in minibatches(9, 4, np.random.default_rng(0), min_size=2)]
    assert sizes == [4, 5]
    assert sorted(np.concatenate(list(minibatches(10, 3, np.random.default_rng(0))))) == list(range(10))


def test_pretraining_reduces_validation_mse(corpus):
    log = JsonLog()
    ck = pretrain(corpus, SMALL, TrainConfig(epochs=4, batch_size=32, lr=5e-3, seed=0), log=log)
    vals = [r["val_mse"] for r in log.records]
    assert min(vals[1:]) < vals[0]
    assert ck.record.best_val_mse == pytest.approx(min(vals), rel=1e-6)


def test_pretraining_is_deterministic(corpus):
    cfg = TrainConfig(epochs=2, batch_size=32, seed=1)
    a = checkpoint_bytes(pretrain(corpus, SMALL, cfg))
    b = checkpoint_bytes(pretrain(corpus, SMALL, cfg))
    assert digest(a) == digest(b)


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    ck = untrained_checkpoint(SMALL, seed=4)
    save_checkpoint(tmp_path / "c.posm", ck)
    back = load_checkpoint(tmp_path / "c.posm")
    assert checkpoint_bytes(back) == (tmp_path / "c.posm").read_bytes()
    x = np.random.default_rng(0).uniform(size=(3, 8, 2))
    np.testing.assert_array_equal(back.encoder.forward(x), ck.encoder.forward(x))


def test_shape_mismatch_names_tensor():
    data = checkpoint_bytes(untrained_checkpoint(SMALL))
    wider = EncoderSpec(blstm_layers=tuple(parse_layers("5*relu + 4*relu", "blstm")),
                        head_layers=SMALL.head_layers, windowing=SMALL.windowing)
    with pytest.raises(serialize.ContainerError, match="blstm0.Wx_f"):
        checkpoint_from_bytes(data, spec_override=wider)


def test_wrong_format_rejected():
    with pytest.raises(serialize.ContainerError, match="not an encoder"):
        checkpoint_from_bytes(serialize.dumps({"a": np.zeros(1)}, {"format": "other"}))


def test_empty_pretrain_split():
    c = synth_corpus(2, 1, 0, words_per_paragraph=2)
    empty = Corpus(c.strokesets, {s.id: "test" for s in c.strokesets})
    with pytest.raises(ValueError, match="empty pretrain"):
        pretrain(empty, SMALL, TrainConfig(epochs=1))


def test_evaluate_mse_rejects_empty():
    ms = masked_views_for([], SMALL, 0)
    with pytest.raises(ValueError):
        evaluate_mse(Encoder(SMALL), ms)
