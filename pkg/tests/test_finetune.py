import numpy as np
import pytest
from hypothesis import given, strategies as st

from posm import featurize as fz
from posm import finetune as ft
from posm.nn.gradcheck import numeric_grad, relative_error
from posm.nn.losses import cross_entropy_from_logits
from posm.nn.spec import parse_layers
from posm.pretrain import EncoderSpec, untrained_checkpoint
from posm.training import TrainConfig

import oracles

SMALL = EncoderSpec(
    blstm_layers=tuple(parse_layers("3*relu + 3*tanh + 3*relu", "blstm")),
    head_layers=tuple(parse_layers("12*relu + reshape(6,2)")),
    windowing=fz.WindowingConfig(6, 3),
)
AGG = EncoderSpec(block_type="aggregate_state", blstm_layers=SMALL.blstm_layers,
                  head_layers=SMALL.head_layers, windowing=SMALL.windowing)
LABELS = ["a", "b", "c"]


def _cspec(pipeline="exclusive", n=0, head="5*relu + 3*softmax", opt="-", block="none"):
    return ft.ClassifierSpec(pipeline, n, tuple(parse_layers(opt, "blstm")), block, tuple(parse_layers(head)))


def _data(rng, n=24, chain=None):
    shape = (n, 6, 2) if chain is None else (n, chain, 6, 2)
    return ft.LabeledData(rng.uniform(size=shape).astype(np.float32), np.arange(n) % 3)


@pytest.mark.parametrize("plan,trainable", [
    ("none", []), ("first", ["enc.blstm1"]), ("second", ["enc.blstm2"]), ("all", ["enc.blstm1", "enc.blstm2"]),
])
def test_plan_selects_trainable_encoder_layers(plan, trainable):
    clf = ft.Classifier(SMALL, _cspec(), ft.FreezePlan(2, plan), LABELS)
    names = sorted({k.rsplit(".", 1)[0] for k in clf.trainable_params() if k.startswith("enc.")})
    assert names == trainable
    assert all(k.startswith("head") for k in clf.trainable_params() if not k.startswith("enc."))


@pytest.mark.parametrize("plan", ["none", "first", "second"])
def test_frozen_tensors_untouched_by_training(plan, rng):
    model = ft.assemble(untrained_checkpoint(SMALL, seed=1), _cspec(), ft.FreezePlan(2, plan), LABELS)
    before = ft.tensor_digest(model.classifier.frozen_tensors())
    trained_before = ft.tensor_digest(model.classifier.trainable_params())
    ft.train_classifier(model, _data(rng), TrainConfig(epochs=2, batch_size=8, patience=5))
    assert ft.tensor_digest(model.classifier.frozen_tensors()) == before
    assert ft.tensor_digest(model.classifier.trainable_params()) != trained_before


def test_pretrained_weights_are_copied():
    ck = untrained_checkpoint(SMALL, seed=7)
    model = ft.assemble(ck, _cspec(), ft.FreezePlan(2), LABELS)
    src = ck.encoder.blstm_layers()
    for k in range(2):
        np.testing.assert_array_equal(model.classifier.enc_stack[k].params["Wx_f"], src[k].params["Wx_f"])
    scratch = ft.assemble(ck, _cspec(), ft.FreezePlan(2), LABELS, pretrained=False)
    assert not np.array_equal(scratch.classifier.enc_stack[0].params["Wx_f"], src[0].params["Wx_f"])


def test_inclusive_representation_width():
    clf = ft.Classifier(AGG, _cspec("inclusive", 20), ft.FreezePlan(2), LABELS)
    assert clf.representation_width == 20 * 6
    enc = EncoderSpec(block_type="aggregate_state")
    head = "flatten + 20*relu + 2*sigmoid"
    assert ft.Classifier(enc, _cspec("inclusive", 20, head), ft.FreezePlan(2), LABELS).representation_width == 1280


def test_full_state_exclusive_width():
    clf = ft.Classifier(SMALL, _cspec(), ft.FreezePlan(2), LABELS)
    assert clf.representation_width == 6 * 6


def test_exclusive_equals_inclusive_with_one_window(rng):
    x = rng.uniform(size=(5, 6, 2))
    exc = ft.Classifier(SMALL, _cspec(), ft.FreezePlan(2), LABELS, seed=3)
    inc = ft.Classifier(SMALL, _cspec("inclusive", 1), ft.FreezePlan(2), LABELS, seed=3)
    np.testing.assert_array_equal(exc.predict_proba(x), inc.predict_proba(x[:, None]))


@pytest.mark.parametrize("pipeline,n,opt,block", [
    ("exclusive", 1, "4*tanh", "aggregate_state"),
    ("exclusive", 1, "-", "none"),
    ("inclusive", 3, "4*tanh", "full_state"),
    ("inclusive", 2, "-", "none"),
])
def test_classifier_gradients(pipeline, n, opt, block, rng):
    head = "BN + 4*tanh + 3*softmax" if opt == "-" else "4*tanh + 3*softmax"
    clf = ft.Classifier(SMALL, _cspec(pipeline, n, head, opt, block), ft.FreezePlan(2, "all"), LABELS,
                        seed=1, dtype=np.float64)
    x = rng.uniform(size=(4, 6, 2) if pipeline == "exclusive" else (4, n, 6, 2))
    y = np.eye(3)[[0, 1, 2, 1]]

    def loss():
        return cross_entropy_from_logits(clf.logits(x, training=True), y)[0]

    _, _, d = cross_entropy_from_logits(clf.logits(x, training=True), y)
    clf.backward(d)
    analytic = {k: g.copy() for k, g in clf.trainable_grads().items()}
    for name, p in clf.trainable_params().items():
        assert relative_error(analytic[name], numeric_grad(loss, p)) < 1e-5, name


def test_frozen_prefix_cache_gives_same_gradients(rng):
    clf = ft.Classifier(SMALL, _cspec(), ft.FreezePlan(2, "second"), LABELS, dtype=np.float64)
    assert clf.frozen_prefix() == 1
    x = rng.uniform(size=(4, 6, 2))
    y = np.eye(3)[[0, 1, 2, 0]]
    grads = []
    for start in (0, 1):
        z = clf.precompute(x, start)
        _, _, d = cross_entropy_from_logits(clf.logits(z, start=start), y)
        clf.backward(d)
        grads.append({k: g.copy() for k, g in clf.trainable_grads().items()})
    for k in grads[0]:
        np.testing.assert_allclose(grads[0][k], grads[1][k], atol=1e-12)


def test_last_head_layer_takes_vocabulary_width():
    clf = ft.Classifier(SMALL, ft.preset("Exc.full16.FC"), ft.FreezePlan(2), ["x"] * 5)
    assert clf.head[-1].n_out == 5
    assert clf.output_activation == "sigmoid"


@pytest.mark.parametrize("name", sorted(ft.PRESETS))
def test_presets_build(name):
    cs = ft.preset(name)
    assert cs.n_windows == (20 if name.startswith("Inc") else 1)
    enc = EncoderSpec(block_type="aggregate_state")
    ft.Classifier(enc, cs, ft.FreezePlan(2), ["m", "f"])


@pytest.mark.parametrize("kw,match", [
    (dict(pipeline="exclusive", n_windows=2), "exactly one"),
    (dict(head_layers=tuple(parse_layers("4*relu"))), "softmax or sigmoid"),
    (dict(optional_block="full_state"), "optional_block"),
    (dict(pipeline="sideways"), "pipeline"),
    (dict(loss="binary_ce"), "does not match"),
])
def test_classifier_spec_errors(kw, match):
    with pytest.raises(ValueError, match=match):
        ft.ClassifierSpec(**kw)


def test_plan_errors():
    with pytest.raises(ValueError, match="cannot train layer 2"):
        ft.FreezePlan(1, "second")
    with pytest.raises(ValueError, match="keeps 4"):
        ft.Classifier(SMALL, _cspec(), ft.FreezePlan(4), LABELS)
    with pytest.raises(ValueError, match="two classes"):
        ft.Classifier(SMALL, _cspec(), ft.FreezePlan(2), ["only"])


def test_wrong_input_shape():
    clf = ft.Classifier(SMALL, _cspec("inclusive", 2), ft.FreezePlan(2), LABELS)
    with pytest.raises(ValueError, match="expected input"):
        clf.predict_proba(np.zeros((1, 6, 2)))


def test_spec_round_trip():
    cs = ft.preset("Inc20.agg20.FC_1")
    assert ft.ClassifierSpec.from_dict(cs.to_dict()) == cs


def test_soft_vote_example():
    label, score = ft.soft_vote([[0.6, 0.4], [0.1, 0.9]])
    assert label == 1
    np.testing.assert_allclose(score, [0.35, 0.65])


def test_soft_vote_tie_goes_to_lowest_index():
    assert ft.soft_vote([[0.5, 0.5]])[0] == 0
    assert ft.soft_vote([[0.2, 0.4, 0.4]])[0] == 1


def test_soft_vote_rejects_empty():
    with pytest.raises(ValueError):
        ft.soft_vote(np.zeros((0, 3)))


dist_rows = st.lists(st.lists(st.integers(0, 20), min_size=3, max_size=3), min_size=1, max_size=12)


@given(dist_rows)
def test_soft_vote_matches_oracle_exactly(rows):
    d = np.array(rows, dtype=np.float64) / 20.0
    assert ft.soft_vote(d)[0] == oracles.soft_vote(d.tolist())


@given(dist_rows, st.randoms())
def test_soft_vote_permutation_invariant(rows, r):
    d = np.array(rows, dtype=np.float64)
    shuffled = list(d)
    r.shuffle(shuffled)
    assert ft.soft_vote(d)[0] == ft.soft_vote(np.array(shuffled))[0]


@given(dist_rows, st.sampled_from([0.5, 2.0, 4.0, 0.25]))
def test_soft_vote_scale_invariant(rows, c):
    d = np.array(rows, dtype=np.float64)
    a, sa = ft.soft_vote(d)
    b, sb = ft.soft_vote(c * d)
    assert a == b
    np.testing.assert_allclose(sa, sb)


def test_model_round_trip_preserves_labels_and_predictions(tmp_path, rng):
    model = ft.assemble(untrained_checkpoint(SMALL), _cspec(), ft.FreezePlan(2, "first"), ["x", "y", "z"])
    ft.train_classifier(model, _data(rng), TrainConfig(epochs=1, batch_size=8))
    ft.save_model(tmp_path / "m.posm", model)
    back = ft.load_model(tmp_path / "m.posm")
    assert back.labels == ["x", "y", "z"]
    assert back.plan == model.plan and back.spec == model.spec
    x = rng.uniform(size=(3, 6, 2))
    np.testing.assert_array_equal(back.classifier.predict_proba(x), model.classifier.predict_proba(x))
    assert ft.model_bytes(back) == (tmp_path / "m.posm").read_bytes()


def test_training_learns_a_separable_problem(rng):
    n = 60
    y = np.arange(n) % 2
    x = np.zeros((n, 6, 2), np.float32)
    x[y == 1, :, 0] = np.linspace(0, 1, 6)
    x[y == 0, :, 1] = np.linspace(0, 1, 6)
    x += rng.normal(0, 0.05, x.shape).astype(np.float32)
    model = ft.assemble(untrained_checkpoint(SMALL), _cspec(head="8*relu + 2*softmax"), ft.FreezePlan(1, "all"),
                        ["p", "q"], seed=0)
    val = [(x[i:i + 1], int(y[i])) for i in range(0, n, 5)]
    ft.train_classifier(model, ft.LabeledData(x, y), TrainConfig(epochs=30, batch_size=16, lr=1e-2), val)
    assert model.encoder_ref["best_val_accuracy"] == 1.0


def test_training_needs_two_classes(rng):
    model = ft.assemble(untrained_checkpoint(SMALL), _cspec(), ft.FreezePlan(2), LABELS)
    with pytest.raises(ValueError, match="two classes"):
        ft.train_classifier(model, ft.LabeledData(np.zeros((4, 6, 2), np.float32), np.zeros(4, int)),
                            TrainConfig(epochs=1))


def test_test_arrays_group_windows_per_sequence():
    seqs = [fz.LabeledSequence(np.column_stack([np.arange(20.0), np.arange(20.0) ** 0.5, np.arange(20.0)]),
                               1, "s")]
    arrays = ft.test_arrays(seqs, SMALL, _cspec(), s_test=2)
    assert len(arrays) == 1 and arrays[0][0].shape == (8, 6, 2) and arrays[0][1] == 1
    chains = ft.test_arrays(seqs, SMALL, _cspec("inclusive", 2), s_test=2)
    assert chains[0][0].shape == (5, 2, 6, 2)


def test_evaluate_reports_accuracy(rng):
    model = ft.assemble(untrained_checkpoint(SMALL), _cspec(), ft.FreezePlan(2), LABELS)
    arrays = [(rng.uniform(size=(3, 6, 2)).astype(np.float32), k % 3) for k in range(6)]
    rep = ft.evaluate_classifier(model, arrays, "writer_id")
    assert rep.metrics["n"] == 6 and 0 <= rep.metrics["accuracy"] <= 1
    with pytest.raises(ValueError):
        ft.evaluate_classifier(model, [], "writer_id")
