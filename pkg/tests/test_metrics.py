import numpy as np
import pytest
from hypothesis import given, strategies as st

from posm.metrics import EvalReport, classification_metrics, confusion_matrix

import oracles


def test_example():
    m = classification_metrics([0, 0, 1, 1], [0, 1, 1, 1], ["a", "b"])
    assert m["accuracy"] == 0.75
    assert m["confusion"] == [[1, 1], [0, 2]]
    assert m["per_class"]["b"]["precision"] == pytest.approx(2 / 3)
    assert m["macro_f1"] == pytest.approx((2 / 3 + 0.8) / 2)


@given(st.integers(2, 6).flatmap(lambda n: st.tuples(
    st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), min_size=1, max_size=60))))
def test_matches_loop_oracle(case):
    n, pairs = case
    yt, yp = [a for a, _ in pairs], [b for _, b in pairs]
    m = classification_metrics(yt, yp, [str(i) for i in range(n)])
    acc, f1, cm = oracles.metrics(yt, yp, n)
    assert m["accuracy"] == pytest.approx(acc)
    assert m["macro_f1"] == pytest.approx(f1)
    assert m["confusion"] == cm
    assert np.asarray(m["confusion"]).sum() == len(pairs)


def test_empty_rejected():
    with pytest.raises(ValueError):
        classification_metrics([], [], ["a"])


def test_confusion_counts():
    np.testing.assert_array_equal(confusion_matrix([2, 2, 0], [2, 0, 0], 3), [[1, 0, 0], [0, 0, 0], [1, 0, 1]])


def test_report_round_trip_and_validation():
    m = classification_metrics([0, 1], [0, 1], ["x", "y"])
    r = EvalReport("writer_id", m, "abc", 3)
    assert EvalReport.from_dict(r.to_dict()) == r
    with pytest.raises(ValueError):
        EvalReport("t", {"accuracy": 1.5})
    with pytest.raises(ValueError, match="schema"):
        EvalReport.from_dict({"schema": "nope"})
