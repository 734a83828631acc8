from __future__ import annotations

import numpy as np
import pytest

from synth import make_tree_thesaurus

from meshkit import evaluation as ev


def _preds_gold(rows):
    preds = {}
    gold = {}
    for label, doc, score, is_pos in rows:
        preds[(label, doc)] = score
        gold[(label, doc)] = is_pos
    return preds, gold


def test_prf_all_correct():
    preds, gold = _preds_gold([("a", "d1", 0.9, True), ("b", "d1", 0.1, False)])
    report = ev.prf(preds, gold)
    assert report.precision == report.recall == report.f1 == 1.0


def test_prf_all_negative_predictions():
    preds, gold = _preds_gold([("a", "d1", 0.2, True), ("b", "d1", 0.3, True)])
    report = ev.prf(preds, gold)
    assert report.recall == 0.0 and report.f1 == 0.0


def test_prf_hand_computed_confusion():
    rows = (
        [("a", f"d{i}", 0.9, True) for i in range(4)]  # 4 TP
        + [("a", f"e{i}", 0.9, False) for i in range(2)]  # 2 FP
        + [("b", f"f{i}", 0.1, True) for i in range(3)]  # 3 FN
        + [("b", f"g{i}", 0.1, False) for i in range(1)]  # 1 TN
    )
    preds, gold = _preds_gold(rows)
    report = ev.prf(preds, gold)
    assert report.confusion.tp == 4 and report.confusion.fp == 2
    assert report.confusion.fn == 3 and report.confusion.tn == 1
    assert report.precision == pytest.approx(4 / 6)
    assert report.recall == pytest.approx(4 / 7)
    expected_f1 = 2 * (4 / 6) * (4 / 7) / ((4 / 6) + (4 / 7))
    assert report.f1 == pytest.approx(expected_f1)
    assert report.support == 10


def test_prf_empty_raises():
    with pytest.raises(ev.EmptyEvaluation):
        ev.prf({}, {})


def test_prf_missing_prediction_raises():
    with pytest.raises(ev.EvaluationError):
        ev.prf({}, {("a", "d"): True})


def test_f1_matches_confusion_recomputation():
    rng = np.random.default_rng(0)
    rows = [
        (f"l{rng.integers(5)}", f"d{i}", float(rng.random()), bool(rng.random() < 0.5))
        for i in range(200)
    ]
    preds, gold = _preds_gold(rows)
    report = ev.prf(preds, gold)
    p, r, f1 = report.confusion.prf()
    assert (report.precision, report.recall, report.f1) == (p, r, f1)


def test_frequency_bins_partition_and_edges():
    rows = []
    counts = {}
    expected_bin = {0: "0", 1: "1", 2: "(1,10]", 10: "(1,10]", 11: "(10,100]", 100: "(10,100]", 101: "(100,inf)"}
    for i, (count, _name) in enumerate(expected_bin.items()):
        label = f"l{count}"
        counts[label] = count
        rows.append((label, f"d{i}", 0.9, True))
    preds, gold = _preds_gold(rows)
    report = ev.f1_by_frequency(preds, gold, counts)
    assert report.total_support() == len(rows)
    by_label = {b.label: b.support for b in report.bins}
    assert by_label == {"0": 1, "1": 1, "(1,10]": 2, "(10,100]": 2, "(100,inf)": 1}


def test_frequency_all_zero_shot():
    preds, gold = _preds_gold([("a", "d1", 0.9, True), ("b", "d2", 0.1, False)])
    report = ev.f1_by_frequency(preds, gold, {})
    populated = [b for b in report.bins if b.support]
    assert [b.label for b in populated] == ["0"]


def test_binned_recombination_equals_global():
    rng = np.random.default_rng(1)
    th = make_tree_thesaurus(seed=81, n_nodes=30)
    ids = th.ids()
    rows = [
        (ids[int(rng.integers(len(ids)))], f"d{i}", float(rng.random()), bool(rng.random() < 0.6))
        for i in range(300)
    ]
    preds, gold = _preds_gold(rows)
    counts = {l: int(rng.integers(0, 120)) for l in ids}
    global_report = ev.prf(preds, gold)
    for report in (ev.f1_by_frequency(preds, gold, counts), ev.f1_by_depth(preds, gold, th)):
        assert report.total_support() == global_report.support
        rec = report.recombined()
        assert vars(rec) == vars(global_report.confusion)


def test_depth_bins_single_depth():
    th = make_tree_thesaurus(seed=82, n_nodes=10, max_depth=2)
    depth2 = [d for d in th.ids() if len(th.get(d).tree_numbers[0].segments) == 2]
    rows = [(d, "doc", 0.9, True) for d in depth2]
    preds, gold = _preds_gold(rows)
    report = ev.f1_by_depth(preds, gold, th)
    assert len([b for b in report.bins if b.support]) == 1


def test_depth_filter_recompute_equality():
    th = make_tree_thesaurus(seed=83, n_nodes=40, max_depth=4)
    rng = np.random.default_rng(3)
    ids = th.ids()
    rows = [
        (ids[int(rng.integers(len(ids)))], f"d{i}", float(rng.random()), bool(rng.random() < 0.5))
        for i in range(150)
    ]
    preds, gold = _preds_gold(rows)
    report = ev.f1_by_depth(preds, gold, th)
    from meshkit import hierarchy as hi

    for b in report.bins:
        keys = [k for k in gold if round(hi.depth(th, k[0])) == int(b.label)]
        sub_report = ev.prf({k: preds[k] for k in keys}, {k: gold[k] for k in keys})
        assert ev.isclose_f1(sub_report.f1, b.f1)


def test_baseline_isin():
    assert ev.baseline_isin("Treatment", "... novel treatment options ...")
    assert not ev.baseline_isin("Forecasting", "nothing to see here")
    assert ev.baseline_isin("tReAtMeNt", "TREATMENT works")


def test_baseline_cos_sim():
    u = np.array([1.0, 0.0])
    assert ev.baseline_cos_sim(u, u, threshold=0.9)
    assert not ev.baseline_cos_sim(u, np.array([0.0, 1.0]), threshold=0.1)


def test_cosine_threshold_grid_search():
    rng = np.random.default_rng(7)
    gold = {}
    scores = {}
    for i in range(200):
        is_pos = bool(rng.random() < 0.5)
        scores[("l", f"d{i}")] = float(
            np.clip(rng.normal(0.7 if is_pos else 0.4, 0.08), 0.0, 1.0)
        )
        gold[("l", f"d{i}")] = is_pos
    t = ev.select_cosine_threshold(scores, gold)
    # brute-force oracle over the same grid
    def f1_at(threshold):
        c = ev.Confusion()
        for k, g in gold.items():
            c.add(scores[k] >= threshold, g)
        return c.prf()[2]

    best = max((f1_at(i * 0.01) for i in range(101)))
    assert f1_at(t) == pytest.approx(best)


def test_binned_csv_output(tmp_path):
    preds, gold = _preds_gold([("a", "d1", 0.9, True), ("b", "d2", 0.2, False)])
    report = ev.f1_by_frequency(preds, gold, {"a": 5})
    path = tmp_path / "bins.csv"
    ev.write_binned_csv(report, str(path))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "bin,f1,support,tp,fp,fn,tn"
    assert len(lines) == 1 + len(report.bins)
