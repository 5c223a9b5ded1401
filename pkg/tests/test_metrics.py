import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socialcvae import metrics as mt
from socialcvae import tensor as tc
from socialcvae.graph import AttentionReport


def report(weights, lanelet=0.4):
    n = len(weights)
    return AttentionReport(
        ["s"] * (n + 1),
        [0] * (n + 1),
        [str(i + 1) for i in range(n)] + ["L0"],
        ["agent"] * n + ["lanelet"],
        np.array(list(weights) + [lanelet]),
    )


def test_agent_ratio_counts_non_zero_neighbours():
    assert mt.agent_ratio(report([0.3, 0, 0.7, 0]), "s", 0) == 50.0
    assert mt.agent_ratio(report([0, 0, 0]), "s", 0) == 0.0
    assert mt.agent_ratio(report([0.1, 0.2]), "s", 0) == 100.0
    assert mt.weights_agent_ratio([0.3, 0, 0.7, 0]) == 50.0


def test_agent_ratio_undefined_without_neighbours():
    with pytest.raises(mt.UndefinedMetric):
        mt.agent_ratio(report([]), "s", 0)


def test_thresholded_ratio_examples():
    r = report([0.3, 0, 0.7, 0])
    assert mt.agent_ratio_thresholded(r, "s", 0, [0.5]).tolist() == [25.0]
    assert mt.agent_ratio_thresholded(r, "s", 0, [0.0]).tolist() == [100.0]
    assert mt.agent_ratio_thresholded(r, "s", 0, [1.0 + 1e-12]).tolist() == [0.0]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=6))
def test_thresholded_ratio_is_non_increasing(w):
    curve = mt.agent_ratio_thresholded(report(w), "s", 0)
    assert np.all(np.diff(curve) <= 0)


def test_negative_threshold_rejected():
    with pytest.raises(ValueError):
        mt.agent_ratio_thresholded(report([0.5]), "s", 0, [-0.1])


def test_linear_probe_gradient_importance_is_two():
    def probe(x):
        s = tc.sum(tc.as_tensor(x)[1])  # all-ones Jacobian w.r.t. the neighbour, zero w.r.t. the target
        return tc.stack([s, s], axis=0)

    hist = np.random.default_rng(0).normal(size=(2, 5, 2))
    assert mt.gradient_importance(probe, hist, 0) == 2.0
    assert mt.finite_difference_importance(probe, hist, 0) == pytest.approx(2.0, rel=1e-9)


def test_neighbour_free_model_has_zero_importance():
    probe = lambda x: tc.as_tensor(x)[0, -1] * 2.0
    assert mt.gradient_importance(probe, np.ones((3, 4, 2)), 0) == 0.0


def test_autodiff_importance_matches_finite_differences():
    w = np.random.default_rng(1).normal(size=(3 * 4 * 2, 2))
    probe = lambda x: tc.tanh(tc.as_tensor(x).reshape(1, -1) @ w).reshape(2)
    hist = np.random.default_rng(2).normal(size=(3, 4, 2)) * 0.3
    a = mt.gradient_importance(probe, hist, 1)
    b = mt.finite_difference_importance(probe, hist, 1)
    assert abs(a - b) / b < 1e-3


def test_gradient_importance_needs_neighbour():
    with pytest.raises(mt.UndefinedMetric):
        mt.gradient_importance(lambda x: x[0, -1], np.zeros((1, 3, 2)), 0)


def test_leave_one_out():
    ref = np.zeros((4, 2))
    assert mt.leave_one_out_ade(ref, [ref.copy()]) == 0.0
    assert mt.leave_one_out_ade(ref, [ref + [1.0, 0.0], ref + [0.0, 1.0]]) == 1.0
    with pytest.raises(mt.UndefinedMetric):
        mt.leave_one_out_ade(ref, [])


def test_min_ade_of_best_fde_sample():
    truth = np.zeros((5, 2))
    sample_a = np.zeros((5, 2))
    sample_a[-1] = [1.0, 0.0]  # FDE 1, ADE 0.2
    sample_b = np.array([[0.0, 1.0]] * 4 + [[0.5, 0.0]])  # FDE 0.5, ADE 0.9
    ade, fde, idx = mt.min_ade_fde(np.stack([sample_a, sample_b]), truth)
    assert (ade, fde, idx) == (0.9, 0.5, 1)


def test_exact_single_sample():
    t = np.random.default_rng(0).normal(size=(4, 2))
    assert mt.min_ade_fde(t[None], t) == (0.0, 0.0, 0)


def test_worse_sample_changes_nothing():
    rng = np.random.default_rng(1)
    truth = rng.normal(size=(6, 2))
    samples = truth + rng.normal(0, 0.5, (3, 6, 2))
    base = mt.min_ade_fde(samples, truth)
    worse = truth + 100.0
    assert mt.min_ade_fde(np.concatenate([samples, worse[None]]), truth) == base


def test_ties_go_to_first_sample():
    truth = np.zeros((2, 2))
    s = np.array([[[1.0, 0], [0, 1.0]], [[0, 0], [1.0, 0]]])
    assert mt.min_ade_fde(s, truth)[2] == 0


def test_min_ade_fde_validates_shapes():
    with pytest.raises(ValueError):
        mt.min_ade_fde(np.zeros((2, 3, 2)), np.zeros((4, 2)))


def test_aggregate_two_rows():
    agg = mt.aggregate_trials([{"x": 1.0}, {"x": 3.0}])["x"]
    assert agg.mean == 2.0
    assert agg.std == pytest.approx(2**0.5, abs=1e-12)
    assert not agg.single


def test_aggregate_single_row_is_flagged():
    agg = mt.aggregate_trials([{"x": 4.0}])["x"]
    assert (agg.mean, agg.std, agg.single) == (4.0, 0.0, True)
    assert "n=1" in str(agg)


def test_aggregate_is_order_free_and_skips_missing():
    rows = [{"x": 1.0, "y": None}, {"x": 5.0, "y": 2.0}, {"x": 2.0, "y": 4.0}]
    a, b = mt.aggregate_trials(rows), mt.aggregate_trials(rows[::-1])
    assert a == b
    assert a["y"].count == 2


def test_metrics_table_format(tmp_path):
    row = mt.MetricsRow("0", "vae", "entmax", ar=12.5, min_ade={1: 0.5, 6: 0.25}, min_fde={1: 1.0, 6: 0.75})
    path = tmp_path / "m.tsv"
    mt.write_metrics(path, [row])
    lines = path.read_text().splitlines()
    assert lines[0].split("\t") == ["trial", "variant", "aggregator", "ar", "min_ade_1", "min_fde_1", "min_ade_6", "min_fde_6", "tau_g", "loo_ade"]
    assert lines[1].split("\t") == ["0", "vae", "entmax", "12.5", "0.5", "1", "0.25", "0.75", "NA", "NA"]


def test_curve_and_aggregate_files(tmp_path):
    mt.write_curve(tmp_path / "c.tsv", [0.0, 0.5], [100.0, 25.0])
    assert (tmp_path / "c.tsv").read_text() == "delta\tar_delta\n0\t100\n0.5\t25\n"
    rows = [mt.MetricsRow("0", "vae", "entmax", ar=1.0), mt.MetricsRow("1", "vae", "entmax", ar=3.0)]
    mt.write_aggregate(tmp_path / "a.tsv", {"vae/entmax": rows})
    assert "vae/entmax\tar\t2\t1.414213562\t2" in (tmp_path / "a.tsv").read_text()


def test_delta_grid():
    assert mt.DELTA_GRID[0] == 0.0 and mt.DELTA_GRID[-1] == 1.0 and len(mt.DELTA_GRID) == 51
