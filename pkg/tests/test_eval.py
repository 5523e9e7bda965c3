import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exosense import datasets as D
from exosense import decoders
from exosense import eval as E
from exosense.errors import ContractError, ShapeError

floats = st.floats(-100, 100, allow_nan=False)


def test_rmse_and_pearson_examples():
    assert E.rmse([1, 2, 3], [1, 2, 3]) == 0
    assert E.rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5))
    assert E.pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert E.pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    with pytest.raises(ShapeError):
        E.rmse([1, 2], [1])
    with pytest.raises(ContractError):
        E.pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ContractError):
        E.rmse([], [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(floats, floats), min_size=1, max_size=40))
def test_rmse_symmetric_nonnegative(pairs):
    a, b = zip(*pairs)
    assert E.rmse(a, b) == E.rmse(b, a) >= 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(floats, floats), min_size=3, max_size=40))
def test_pearson_bounded(pairs):
    a, b = map(np.array, zip(*pairs))
    if np.ptp(a) < 1e-6 or np.ptp(b) < 1e-6:
        return
    r = E.pearson(a, b)
    assert -1 <= r <= 1
    assert E.pearson(2 * a + 1, b) == pytest.approx(r, abs=1e-9)


def test_confusion_and_f1():
    m = E.confusion([0, 1, 1, 2, 2, 2], [0, 1, 2, 2, 2, 1], 3)
    np.testing.assert_array_equal(m, [[1, 0, 0], [0, 1, 1], [0, 1, 2]])
    prec, rec, f1 = E.precision_recall_f1(m)
    np.testing.assert_allclose(prec, [1, 0.5, 2 / 3])
    np.testing.assert_allclose(rec, [1, 0.5, 2 / 3])
    np.testing.assert_allclose(f1, [1, 0.5, 2 / 3])
    # a class never predicted nor present scores 0, not NaN
    assert E.f1_per_class([0, 0], [0, 0], 3).tolist() == [1.0, 0.0, 0.0]
    assert E.accuracy([0, 1, 1], [0, 1, 2]) == pytest.approx(2 / 3)
    assert E.recall([1, 0, 1], [1, 1, 0]) == 0.5
    with pytest.raises(ContractError):
        E.confusion([3], [0], 3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=50))
def test_confusion_totals(pairs):
    p, y = zip(*pairs)
    m = E.confusion(p, y, 3)
    assert m.sum() == len(pairs)
    np.testing.assert_array_equal(m.sum(axis=1), np.bincount(y, minlength=3))
    assert np.trace(m) / len(pairs) == pytest.approx(E.accuracy(p, y))


def test_detection_delay():
    t = np.round(np.arange(0, 10, 0.05), 6)
    pos = np.isin(t, [2.05, 2.1, 6.5, 8.0])
    r = E.detection_delay([2.0, 5.0, 7.9], t, pos)
    assert r.detected == [2.0, 7.9] and r.missed == [5.0]
    assert r.delays_ms == [pytest.approx(50.0), pytest.approx(100.0)]
    assert r.false_alarms == [6.5]
    assert r.recall == pytest.approx(2 / 3)
    # a positive exactly at onset has zero delay; one past the window is a miss
    assert E.detection_delay([1.0], [1.0], [True]).delays_ms == [0.0]
    assert E.detection_delay([1.0], [2.05], [True]).missed == [1.0]


def _toy_per_subject(n_sub=3, n=40):
    out = {}
    for i in range(n_sub):
        rng = np.random.default_rng(i)
        strain = rng.standard_normal((n, 2, 100)).astype(np.float32)
        t = np.round(0.99 + 0.05 * np.arange(n), 10)
        onsets = np.array([1.2])
        y = D.risk_positive_mask(t, onsets)
        strain[y, :, -10:] += 4.0
        sid = f"S{i + 1:02d}"
        out[sid] = D.Dataset(
            "risk", {"strain": strain}, y, t, np.full(n, sid),
            extra={"last_onset_s": D.last_onset(t, onsets), "side": np.zeros(n, np.int64)},
        )
    return out


def test_run_loso_writes_reports(tmp_path):
    cfg = decoders.make_config("risk", overrides={"train": {"epochs": 2}})
    rep = E.run_loso("risk", _toy_per_subject(), cfg, tmp_path, save_models=True)
    assert [f.subject for f in rep.folds] == ["S01", "S02", "S03"]
    assert set(rep.aggregate) >= {"recall", "false_alarm_rate", "delay_median_ms"}
    assert rep.notes["extra_metrics"]
    for name in ("report.json", "report.csv", "recall_per_fold.svg", "delay_histogram.svg"):
        assert (tmp_path / name).exists(), name
    assert (tmp_path / rep.folds[0].model_path / "weights.bin").exists()
    back = E.load_report(tmp_path)
    assert back.to_dict() == json.loads((tmp_path / "report.json").read_text())
    rows = (tmp_path / "report.csv").read_text().splitlines()
    assert rows[0].startswith("fold,subject,seed") and rows[-2].startswith("mean") and len(rows) == 6
    with pytest.raises(ContractError):
        E.run_loso("risk", dict(list(_toy_per_subject().items())[:1]), cfg)


def test_aggregate_and_version():
    folds = [E.FoldReport(0, "A", 1, {"rmse": 1.0}), E.FoldReport(1, "B", 2, {"rmse": 3.0})]
    assert E.aggregate(folds) == {"rmse": {"mean": 2.0, "std": 1.0}}
    rep = E.Report("moment", 0, "loso", "imu_emg", folds)
    d = rep.to_dict()
    d["version"] = 99
    with pytest.raises(ContractError):
        E.Report.from_dict(d)
