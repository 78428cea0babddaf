import numpy as np
import pytest

import litevla


def test_codebook_shape_and_range():
    levels = litevla.nf4_codebook()
    assert len(levels) == 16
    assert levels[0] == -1.0 and levels[-1] == 1.0 and levels[7] == 0.0
    assert all(a < b for a, b in zip(levels, levels[1:]))


def test_quantize_round_trip_and_memory():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((64, 128)).astype(np.float32)
    q = litevla.quantize_nf4(w)
    assert q.shape == [64, 128]
    assert q.block_size == 64
    d = q.dequantize()
    scales = np.repeat(np.asarray(q.scales()), 64).reshape(w.shape)
    gap = np.max(np.diff(litevla.nf4_codebook()))
    assert np.all(np.abs(w - d) <= scales * gap / 2)
    assert q.memory()["bits_per_parameter"] == 4.5
    x = rng.standard_normal(128).astype(np.float32)
    np.testing.assert_allclose(q.matvec(x), d @ x, rtol=1e-4, atol=1e-4)
    dq = litevla.double_quantize_scales(q)
    assert dq.double_quantized
    assert dq.memory()["quantized_bytes"] < q.memory()["quantized_bytes"]


def test_non_finite_input_rejected():
    with pytest.raises(ValueError):
        litevla.quantize_nf4(np.array([1.0, np.nan], dtype=np.float32))


def test_action_grammar():
    assert litevla.parse_action("forward_0.2_3.0s") == ("forward", 0.2, 3.0)
    assert litevla.parse_action("turn_left_0.1_2.5s") == ("turn_left", 0.1, 2.5)
    assert litevla.serialize_action("stop", 0.0, 0.5) == "stop_0.0_0.5s"
    assert litevla.to_velocity("turn_right_0.1_2.5s") == (0.0, -0.1, 2.5)
    with pytest.raises(litevla.ActionParseError):
        litevla.parse_action("forward_0.2_3.0")
    with pytest.raises(litevla.SafetyError):
        litevla.to_velocity("forward_5.0_1.0s")


def test_synchronize_and_split():
    matches, dropped = litevla.synchronize([0, 100, 1000], [10, 90], 50)
    assert matches == [(0, 0, 10), (1, 1, 10)]
    assert dropped == 1
    labels = ["forward"] * 20 + ["stop"] * 10
    split = litevla.stratified_split(labels, 0.85, 3)
    assert split == litevla.stratified_split(labels, 0.85, 3)
    assert split[:20].count("train") == 17
    assert litevla.velocity_to_class(0.2, 0.0) == "forward"


def test_policy_modes(tmp_path):
    p = litevla.Policy.create(seed=1)
    img = litevla.render_scene(0.0, 0.0, 0.0)
    assert img.shape == (32, 32, 3)
    action = p.act(img)
    litevla.parse_action(action)
    hybrid = p.quantize("hybrid")
    assert hybrid.precision == "hybrid"
    assert hybrid.memory()["whole"]["reduction_fraction"] >= 0.70
    path = tmp_path / "p.lvla"
    hybrid.save(path)
    again = litevla.Policy.load(path)
    assert again.logits(img) == hybrid.logits(img)
    with pytest.raises(Exception):
        hybrid.quantize("nf4")


def test_expert_episode():
    r = litevla.run_expert_episode(seed=3, duration=120.0)
    assert r["success"]
