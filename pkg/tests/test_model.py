"""Detector assembly, parameter accounting, and checkpoint round-trips."""

from fractions import Fraction

import numpy as np
import pytest

from freqdyn import CheckpointError, ConfigurationError
from freqdyn.checkpoint import load_checkpoint, save_checkpoint
from freqdyn.config import (format_config, model_config_text,
                            parse_config_text, parse_model_config_text)
from freqdyn.model import (ModelConfig, build_model, count_model_params,
                           count_parameters)


def desk_config(layer_specs="static", **kw):
    base = dict(n_mels=128, n_classes=4,
                class_names=("a", "b", "c", "d"),
                channel_scale=Fraction(1, 4), rnn_hidden=64, dropout=0.0,
                layer_specs=layer_specs)
    base.update(kw)
    return ModelConfig(**base)


def features(batch=2, frames=8, n_mels=128, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((batch, 1, frames, n_mels)).astype(np.float32)


# -- construction and validation ----------------------------------------------

def test_build_is_deterministic_per_seed():
    cfg = desk_config("(1)x2+(2,3)")
    a = build_model(cfg, seed=7)
    b = build_model(cfg, seed=7)
    c = build_model(cfg, seed=8)
    for (name_a, pa), (_, pb), (_, pc) in zip(a.parameters(), b.parameters(),
                                              c.parameters()):
        assert np.array_equal(pa.data, pb.data), name_a
    assert any(not np.array_equal(pa.data, pc.data)
               for (_, pa), (_, pc) in zip(a.parameters(), c.parameters()))


def test_frequency_extent_must_reach_two():
    with pytest.raises(ConfigurationError, match="must be 2"):
        build_model(desk_config(n_mels=64), seed=0)


def test_pool_divisibility_is_checked_at_build():
    with pytest.raises(ConfigurationError, match="divisible"):
        build_model(desk_config(n_mels=129,
                                pool_freq=(3, 2, 2, 2, 2, 2, 1)), seed=0)


def test_layer7_dilations_are_forced_to_one():
    model = build_model(desk_config("(2,3)"), seed=0)
    assert any("layer 7" in w and "forced to 1" in w
               for w in model.build_warnings)
    last = model.blocks[-1].conv
    assert last.branches[0].dilations == [1, 1, 1, 1]
    # earlier layers keep their dilations
    assert model.blocks[1].conv.branches[0].dilations == [1, 1, 2, 3]


def test_scaled_widths_must_be_integral():
    with pytest.raises(ConfigurationError, match="not a positive integer"):
        build_model(desk_config(channel_scale=Fraction(1, 3)), seed=0)


def test_class_name_count_must_match():
    with pytest.raises(ConfigurationError, match="class names"):
        ModelConfig(n_classes=3, class_names=("a", "b"))


# -- forward shapes and ranges --------------------------------------------------

def test_forward_shapes_and_ranges():
    model = build_model(desk_config("(1)x2+(2,3)"), seed=1)
    strong, weak = model.forward(features())
    assert strong.shape == (2, 4, 2)     # T pooled by 4
    assert weak.shape == (2, 4)
    assert np.all(strong.data > 0) and np.all(strong.data < 1)
    assert np.all(weak.data > 0) and np.all(weak.data < 1)
    assert np.all(np.isfinite(strong.data))
    # attention pooling is a convex combination over time
    assert np.all(weak.data <= strong.data.max(axis=2) + 1e-6)


def test_forward_validates_input_geometry():
    model = build_model(desk_config(), seed=2)
    with pytest.raises(ConfigurationError, match="expected features"):
        model.forward(np.zeros((2, 1, 8, 64), dtype=np.float32))
    with pytest.raises(ConfigurationError, match="divisible"):
        model.forward(np.zeros((2, 1, 9, 128), dtype=np.float32))
    with pytest.raises(ConfigurationError, match="rng"):
        model_d = build_model(desk_config(dropout=0.5), seed=2)
        model_d.forward(features(), training=True)


def test_training_forward_is_seeded():
    model = build_model(desk_config("(1)", dropout=0.5), seed=3)
    x = features(seed=4)
    s1, _ = model.forward(x, training=True, rng=np.random.default_rng(5))
    # reset running stats so the second pass sees the same state
    model2 = build_model(desk_config("(1)", dropout=0.5), seed=3)
    s2, _ = model2.forward(x, training=True, rng=np.random.default_rng(5))
    np.testing.assert_array_equal(s1.data, s2.data)


def test_pre_conv_block_is_used():
    model = build_model(desk_config("(1)", pre_conv=True), seed=6)
    assert model.pre is not None
    # with a pre-conv the first conv layer is dynamic too
    assert hasattr(model.blocks[0].conv, "branches")
    strong, _ = model.forward(features(seed=7))
    assert strong.shape == (2, 4, 2)


# -- parameter accounting -------------------------------------------------------

@pytest.mark.parametrize("cfg", [
    desk_config("static"),
    desk_config("(1)"),
    desk_config("(1)x2+(2,3)"),
    desk_config("(2,2,3,3)", branch_proportion=Fraction(1, 2)),
    desk_config("(1)", pre_conv=True),
    desk_config("(1)x8", branch_proportion=Fraction(1, 11),
                channel_scale=Fraction(11, 8), rnn_hidden=256, pre_conv=True),
])
def test_closed_form_count_matches_enumeration(cfg):
    model = build_model(cfg, seed=0)
    assert count_parameters(model).total == count_model_params(cfg)


def test_count_report_categories():
    report = count_parameters(build_model(desk_config("(1)x2+(2,3)"), seed=0))
    for cat in ("static", "dynamic", "attention", "norm_gate", "rnn", "head"):
        assert report.by_category.get(cat, 0) > 0, cat
    assert report.total == sum(report.by_category.values())
    text = report.format_text()
    assert "layer2" in text and "rnn" in text


def test_full_scale_reference_totals():
    crnn = ModelConfig(layer_specs="static")
    fdy = ModelConfig(layer_specs="(1)", branch_proportion=Fraction(1))
    assert count_model_params(crnn) == 4427956
    assert count_model_params(fdy) == 11064916


# -- config text round-trips ----------------------------------------------------

def test_model_config_text_roundtrip():
    cfg = desk_config("(1)x2+(2,3)", pre_conv=True,
                      branch_proportion=Fraction(1, 8))
    text = model_config_text(cfg)
    assert parse_model_config_text(text) == cfg


def test_full_config_text_is_canonical():
    text = format_config(parse_config_text("[train]\nepochs = 3\n"))
    again = format_config(parse_config_text(text))
    assert text == again
    assert "epochs = 3" in text


def test_config_rejects_unknown_and_duplicate_keys():
    with pytest.raises(ConfigurationError, match="line 2: unknown key"):
        parse_config_text("[train]\nnot_a_key = 1\n")
    with pytest.raises(ConfigurationError, match="line 1: unknown section"):
        parse_config_text("[nope]\n")
    with pytest.raises(ConfigurationError, match="duplicate"):
        parse_config_text("[train]\nepochs = 1\nepochs = 2\n")
    with pytest.raises(ConfigurationError, match="line 2: cannot parse"):
        parse_config_text("[train]\nepochs = soon\n")


# -- checkpoints ----------------------------------------------------------------

def roundtrip_model(tmp_path, cfg, seed=11):
    model = build_model(cfg, seed=seed)
    # run one training forward so running stats differ from their init
    model.forward(features(seed=12), training=True,
                  rng=np.random.default_rng(13))
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    return model, path


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    cfg = desk_config("(1)x2+(2,3)", dropout=0.0)
    model, path = roundtrip_model(tmp_path, cfg)
    loaded = load_checkpoint(path)
    assert loaded.config == cfg
    for (name, a, _), (_, b, _) in zip(model.state_arrays(),
                                       loaded.state_arrays()):
        assert np.array_equal(a, b), name
    x = features(seed=14)
    np.testing.assert_array_equal(model.forward(x)[0].data,
                                  loaded.forward(x)[0].data)


def test_checkpoint_save_is_deterministic(tmp_path):
    cfg = desk_config("(1)")
    model, path = roundtrip_model(tmp_path, cfg)
    other = tmp_path / "again.ckpt"
    save_checkpoint(model, other)
    assert path.read_bytes() == other.read_bytes()


def test_checkpoint_truncation_is_an_error(tmp_path):
    _, path = roundtrip_model(tmp_path, desk_config("(1)"))
    blob = path.read_bytes()
    clipped = tmp_path / "clipped.ckpt"
    clipped.write_bytes(blob[: int(len(blob) * 0.6)])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(clipped)


def test_checkpoint_bad_magic_and_version(tmp_path):
    _, path = roundtrip_model(tmp_path, desk_config())
    blob = bytearray(path.read_bytes())
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE" + bytes(blob[4:]))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad)
    blob[4] = 99
    bad.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version 99"):
        load_checkpoint(bad)
