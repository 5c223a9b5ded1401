import json
import math

import numpy as np
import pytest

from socialcvae import world


def scenes_equal(a, b):
    ra = [json.dumps(world.scene_to_record(s), sort_keys=True) for s in a]
    rb = [json.dumps(world.scene_to_record(s), sort_keys=True) for s in b]
    return ra == rb


@pytest.mark.parametrize("template", world.TEMPLATES)
def test_generation_is_deterministic(template):
    assert scenes_equal(world.generate(template, 4, 3), world.generate(template, 4, 3))
    assert not scenes_equal(world.generate(template, 4, 3), world.generate(template, 4, 4))


@pytest.mark.parametrize("template", world.TEMPLATES)
def test_scene_shapes_and_timing(template):
    sc = world.generate(template, 1, 0)[0]
    dt, th, tp = world.TIMING[sc.mode]
    assert sc.dt == dt and sc.history_len == th and sc.future_len == tp
    tpl = world.DEFAULT_TEMPLATES[template]
    assert tpl.min_agents <= sc.n_agents <= tpl.max_agents
    assert bool(sc.lanelets) == (template != "open-field")
    for ln in sc.lanelets:
        assert ln.left.shape == (8, 4) and ln.right.shape == (8, 4)


def test_merge_certificate_exceeds_half_metre():
    assert world.interactivity_certificate("merge", 40, 0) > 0.5


def test_intersection_certificate_exceeds_half_metre():
    assert world.interactivity_certificate("intersection", 40, 0) > 0.5


def test_open_field_masking_changes_nothing():
    assert world.interactivity_certificate("open-field", 20, 0) == 0.0


def test_masking_keeps_target_history():
    tpl = world.DEFAULT_TEMPLATES["merge"]
    a, b = world.simulate(tpl, 5, 2), world.simulate(tpl, 5, 2, masked=True)
    i = a.agent_index(a.target)
    assert np.allclose(a.agents[i].history, b.agents[i].history, atol=1e-9)


def test_target_at_origin_heading_zero():
    for sc in world.generate("merge", 5, 1):
        h = sc.agents[sc.agent_index(sc.target)].history
        assert np.allclose(h[-1], 0.0, atol=1e-12)
        # smoothed heading is zero: the last displacement points nearly along +x
        d = h[-1] - h[-2]
        assert abs(math.atan2(d[1], d[0])) < 0.05


def test_pedestrian_scenes_mean_centred():
    for sc in world.generate("open-field", 5, 1):
        assert np.allclose(np.mean([a.history[-1] for a in sc.agents], axis=0), 0.0, atol=1e-12)


def test_normalize_round_trip():
    tpl = world.DEFAULT_TEMPLATES["intersection"]
    raw = world.simulate(tpl, 2, 0)
    back = world.denormalize(world.normalize(raw))
    for a, b in zip(raw.agents, back.agents):
        assert np.max(np.abs(a.history - b.history)) < 1e-9
        assert np.max(np.abs(a.future - b.future)) < 1e-9
    for a, b in zip(raw.lanelets, back.lanelets):
        assert np.max(np.abs(a.left - b.left)) < 1e-9


def test_rotation_by_zero_is_identity():
    sc = world.generate("merge", 1, 0)[0]
    assert scenes_equal([world.rotate(sc, 0.0)], [sc])


def _distances(sc):
    pts = np.concatenate([sc.histories().reshape(-1, 2), sc.futures().reshape(-1, 2)])
    return np.linalg.norm(pts[:, None] - pts[None], axis=-1)


def test_rotation_preserves_distances_and_denormalizes():
    sc = world.generate("merge", 1, 0)[0]
    r1, r2 = world.augment_rotate(sc, 1), world.augment_rotate(sc, 2)
    assert not np.allclose(r1.agents[1].history, r2.agents[1].history)
    assert np.allclose(_distances(r1), _distances(sc), atol=1e-9)
    assert np.allclose(_distances(r2), _distances(sc), atol=1e-9)
    w0, w1 = world.denormalize(sc), world.denormalize(r1)
    assert np.allclose(w0.agents[1].history, w1.agents[1].history, atol=1e-9)


def test_dataset_round_trip(tmp_path):
    scenes = world.generate("merge", 3, 0) + world.generate("open-field", 2, 0)
    path = tmp_path / "d.jsonl"
    world.write_dataset(path, scenes, {"seed": 0})
    assert scenes_equal(world.read_dataset(path), scenes)


def test_empty_dataset(tmp_path):
    path = tmp_path / "empty.jsonl"
    world.write_dataset(path, [])
    assert json.loads(path.read_text().splitlines()[0])["count"] == 0
    assert world.read_dataset(path) == []


def test_truncated_file_is_an_error(tmp_path):
    path = tmp_path / "d.jsonl"
    world.write_dataset(path, world.generate("merge", 3, 0))
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(world.DatasetError, match="truncated|count"):
        world.read_dataset(path)
    path.write_text("\n".join(lines[:-1]) + "\n" + lines[-1][: len(lines[-1]) // 2])
    with pytest.raises(world.DatasetError, match=":4"):
        world.read_dataset(path)


def test_bad_field_names_line_and_field(tmp_path):
    path = tmp_path / "d.jsonl"
    world.write_dataset(path, world.generate("merge", 2, 0))
    lines = path.read_text().splitlines()
    rec = json.loads(lines[2])
    del rec["target"]
    lines[2] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(world.DatasetError, match=r":3: missing field 'target'"):
        world.read_dataset(path)


def test_wrong_format_header(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps({"format": "other"}) + "\n")
    with pytest.raises(world.DatasetError, match="format"):
        world.read_dataset(path)


def test_template_config_file(tmp_path):
    p = tmp_path / "tpl.cfg"
    p.write_text("template = merge  # base\nreaction_delay = 5\nnoise_scale = 0.3\n")
    tpl = world.load_template_config(p)
    assert (tpl.name, tpl.reaction_delay, tpl.noise_scale, tpl.min_agents) == ("merge", 5, 0.3, 3)
    p.write_text("speed = 3\n")
    with pytest.raises(ValueError, match="unknown key"):
        world.load_template_config(p)


def test_template_validation():
    with pytest.raises(ValueError, match="reaction delay"):
        world.ScenarioTemplate("merge", 3, 4, 0, 1.0, 0.1)
    with pytest.raises(ValueError):
        world.ScenarioTemplate("merge", 4, 3, 2, 1.0, 0.1)
    with pytest.raises(ValueError):
        world.generate("merge", 0, 0)
