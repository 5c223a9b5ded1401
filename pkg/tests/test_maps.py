import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socialcvae import maps

from conftest import SIX_SEGMENT_ROI, six_segment_map, straight_segment


def chain():
    g = maps.LaneGraph()
    for seg in (straight_segment("A", 0, 10), straight_segment("B", 10, 30), straight_segment("C", 30, 60)):
        g.add_segment(seg)
    g.connect("A", "B")
    g.connect("B", "C")
    return g


def test_chain_example():
    assert maps.roi_graph_search((5.0, 0.0), maps.RoiConfig(16.0), chain()) == {"A": 0.0, "B": 15.0}


def test_six_segment_map():
    assert maps.roi_graph_search((5.0, 0.2), maps.RoiConfig(16.0), six_segment_map()) == SIX_SEGMENT_ROI


@pytest.mark.parametrize("d_max", [0.5, 5.0, 100.0])
def test_adjacent_segment_always_at_zero(d_max):
    roi = maps.roi_graph_search((5.0, 0.2), maps.RoiConfig(d_max, min(5.0, d_max)), six_segment_map())
    assert roi["D"] == 0.0


def test_small_budget_keeps_only_seeds_and_adjacent():
    roi = maps.roi_graph_search((5.0, 0.0), maps.RoiConfig(1.0, 1.0), chain())
    assert roi == {"A": 0.0}


def test_empty_map_gives_empty_set():
    assert maps.roi_graph_search((0.0, 0.0), maps.RoiConfig(10.0), maps.LaneGraph()) == {}


def test_far_point_gives_empty_set():
    assert maps.roi_graph_search((500.0, 500.0), maps.RoiConfig(20.0), chain()) == {}


def test_box_fallback_finds_nearby_segment():
    # beside the road: outside every polygon, inside the first 5 m box (which misses B)
    roi = maps.roi_graph_search((3.0, 4.0), maps.RoiConfig(16.0), chain())
    assert roi == {"A": 0.0, "B": 15.0}


def test_result_independent_of_insertion_order():
    g = six_segment_map()
    g2 = maps.LaneGraph()
    for sid in reversed(list(g.segments)):
        g2.add_segment(g.segments[sid])
    for table in ("adjacent", "predecessors", "successors"):
        for k, v in getattr(g, table).items():
            getattr(g2, table)[k] = list(reversed(v))
    cfg = maps.RoiConfig(40.0)
    assert maps.roi_graph_search((5.0, 0.2), cfg, g) == maps.roi_graph_search((5.0, 0.2), cfg, g2)


@settings(max_examples=40, deadline=None)
@given(st.floats(1.0, 60.0), st.floats(0.0, 40.0))
def test_enlarging_budget_never_removes_segments(d_small, extra):
    g = six_segment_map()
    a = maps.roi_graph_search((5.0, 0.2), maps.RoiConfig(d_small, min(5.0, d_small)), g)
    b = maps.roi_graph_search((5.0, 0.2), maps.RoiConfig(d_small + extra, min(5.0, d_small)), g)
    assert set(a) <= set(b)


def test_roi_config_validation():
    with pytest.raises(ValueError):
        maps.RoiConfig(5.0, 10.0)
    with pytest.raises(ValueError):
        maps.RoiConfig(5.0, 0.0)


def test_graph_consistency_checks():
    g = chain()
    g.successors["A"].append("C")
    with pytest.raises(ValueError, match="predecessor"):
        g.check()
    g = chain()
    g.adjacent["A"].append("B")
    with pytest.raises(ValueError, match="symmetric"):
        g.check()


def test_zero_length_segment_rejected():
    with pytest.raises(ValueError, match="zero-length"):
        maps.LaneGraph().add_segment(straight_segment("Z", 1, 1))


def test_lane_graph_json_round_trip(tmp_path):
    g = six_segment_map()
    g.save(tmp_path / "map.json")
    back = maps.LaneGraph.load(tmp_path / "map.json")
    cfg = maps.RoiConfig(16.0)
    assert maps.roi_graph_search((5.0, 0.2), cfg, back) == SIX_SEGMENT_ROI


def test_constant_heading_is_fixed_point():
    assert maps.smooth_heading([0.7] * 6) == pytest.approx(0.7, abs=1e-15)


def test_two_frame_example():
    # weights 0.5 and 1 normalised: (0 * 0.5 + 1 * 1) / 1.5
    assert maps.smooth_heading([0.0, 1.0], lam=0.5) == pytest.approx(2 / 3, abs=1e-12)


def test_near_one_limit_is_plain_mean():
    psi = [0.1, 0.5, -0.3]
    assert maps.smooth_heading(psi, lam=1 - 1e-12) == pytest.approx(np.mean(psi), abs=1e-9)


def test_wrap_around_is_harmless():
    # two headings 0.1 rad apart across the +-pi seam average to pi, not 0
    out = maps.smooth_heading([math.pi - 0.05, -math.pi + 0.05], lam=0.5)
    assert abs(math.remainder(out - math.pi, 2 * math.pi)) < 0.05


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=10), st.floats(0.05, 0.95))
def test_adding_full_turn_changes_nothing(psi, lam):
    a = maps.smooth_heading(psi, lam)
    b = maps.smooth_heading(np.asarray(psi) + 2 * math.pi, lam)
    assert abs(math.remainder(a - b, 2 * math.pi)) < 1e-9


def test_heading_input_validation():
    with pytest.raises(ValueError):
        maps.smooth_heading([])
    with pytest.raises(ValueError):
        maps.smooth_heading([0.0], lam=1.0)


def test_frame_headings_on_straight_track():
    t = np.column_stack([np.arange(5.0), np.arange(5.0)])
    assert np.allclose(maps.frame_headings(t), math.pi / 4)


def test_resample_polyline_even_spacing():
    out = maps.resample_polyline(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 2.0]]), 4)
    assert np.allclose(out, [[0, 0], [1, 0], [1, 1], [1, 2]])
