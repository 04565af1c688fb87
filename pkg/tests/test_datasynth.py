"""Synthetic sequence generation and the on-disk dataset/guidance formats."""

import json

import numpy as np
import pytest

from gaitscreen.datasynth import (FRAME_H, FRAME_W, DatasetConfig, FrameSequence,
                                  SwayProfile, default_phase_plan,
                                  default_text_embeddings, generate_dataset,
                                  generate_sequence, label_for_amplitude,
                                  load_dataset, load_text_embeddings, save_dataset)
from gaitscreen.errors import DataFormatError

PLAN = (("front", 16), ("turning", 12), ("back", 12))


def centroid_abs_deviation(frames):
    cols = np.arange(frames.shape[2]) + 0.5
    cx = np.array([(f * cols).sum() / f.sum() for f in frames.astype(float)])
    return np.abs(cx - cx.mean()).mean()


def test_profile_validation():
    with pytest.raises(ValueError):
        SwayProfile(-1.0, 0.0, 10, PLAN)
    with pytest.raises(ValueError):
        SwayProfile(1.0, 2.0, 10, PLAN)
    with pytest.raises(ValueError):
        SwayProfile(1.0, 0.0, 2, PLAN)
    with pytest.raises(ValueError):
        SwayProfile(1.0, 0.0, 10, (("sideways", 10),))


def test_label_thresholds():
    assert label_for_amplitude(2.9) == "negative"
    assert label_for_amplitude(3.0) == "neutral"
    assert label_for_amplitude(5.0) == "neutral"
    assert label_for_amplitude(5.1) == "positive"


def test_frame_shape_and_binary_values():
    seq = generate_sequence(SwayProfile(2.0, 0.3, 10, PLAN), seed=0)
    assert seq.frames.shape == (40, FRAME_H, FRAME_W)
    assert set(np.unique(seq.frames)) <= {0, 1}
    assert seq.frame_count == 40


def test_zero_sway_is_mirror_symmetric():
    """No sway, no asymmetry: frames equal their own horizontal mirror."""
    seq = generate_sequence(SwayProfile(0.0, 0.0, 10, PLAN), seed=42)
    fg = seq.frames.sum()
    diff = np.abs(seq.frames.astype(int) - seq.frames[:, :, ::-1].astype(int)).sum()
    assert diff < 0.02 * fg


def test_generation_deterministic():
    profile = SwayProfile(4.0, 0.5, 9, PLAN)
    a = generate_sequence(profile, seed=123)
    b = generate_sequence(profile, seed=123)
    np.testing.assert_array_equal(a.frames, b.frames)
    assert a.subject_id == b.subject_id


def test_sway_shifts_centroid():
    """Amplitude 6 vs 0: mean absolute centroid excursion differs by >= 4 px."""
    quiet = generate_sequence(SwayProfile(0.0, 0.0, 10, default_phase_plan(40)), seed=7)
    swaying = generate_sequence(SwayProfile(6.0, 0.0, 10, default_phase_plan(40)), seed=7)
    delta = centroid_abs_deviation(swaying.frames) - centroid_abs_deviation(quiet.frames)
    assert delta >= 4.0


def test_frame_sequence_validation():
    with pytest.raises(ValueError, match="at least 8"):
        FrameSequence("s", "negative", np.zeros((4, FRAME_H, FRAME_W), np.uint8))
    with pytest.raises(ValueError, match="unknown label"):
        FrameSequence("s", "banana", np.zeros((8, FRAME_H, FRAME_W), np.uint8))
    with pytest.raises(ValueError):
        FrameSequence("s", "negative", np.zeros((8, 64, 44), np.uint8))


# ---------------------------------------------------------------------------
# dataset generation


def test_generate_dataset_counts_and_ids():
    ds = generate_dataset(10, 10, 80, seed=1)
    assert len(ds) == 100
    counts = {label: sum(s.label == label for s in ds)
              for label in ("negative", "neutral", "positive")}
    assert counts == {"negative": 80, "neutral": 10, "positive": 10}
    assert len({s.subject_id for s in ds}) == 100


def test_generate_dataset_empty():
    assert generate_dataset(0, 0, 0, seed=0) == []


def test_dataset_config_band_validation():
    with pytest.raises(ValueError, match="separated by the label thresholds"):
        DatasetConfig(band_negative=(0.0, 3.5))


def test_generate_dataset_class_bands_ordered():
    """Class-conditional sway means must be strictly ordered neg < neu < pos."""
    config = DatasetConfig()
    ds = generate_dataset(25, 25, 200, config, seed=3)
    # recompute the effective sway from the rendered frames via the centroid
    means = {}
    for label in ("negative", "neutral", "positive"):
        sample = [s for s in ds if s.label == label][:8]
        means[label] = np.mean([centroid_abs_deviation(s.frames) for s in sample])
    assert means["negative"] < means["neutral"] < means["positive"]


# ---------------------------------------------------------------------------
# on-disk format


def test_dataset_roundtrip(tmp_path):
    ds = generate_dataset(1, 1, 1, seed=5)
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert len(back) == 3
    for a, b in zip(ds, back):
        assert a.subject_id == b.subject_id
        assert a.label == b.label
        np.testing.assert_array_equal(a.frames, b.frames)


def test_load_missing_frame_named(tmp_path):
    ds = generate_dataset(0, 0, 1, seed=5)
    save_dataset(ds, tmp_path / "d")
    victim = next((tmp_path / "d" / "frames_neg0000").glob("frame_00003.pgm"))
    victim.unlink()
    with pytest.raises(DataFormatError, match="frame_00003.pgm"):
        load_dataset(tmp_path / "d")


def test_load_unknown_label(tmp_path):
    ds = generate_dataset(0, 0, 1, seed=5)
    save_dataset(ds, tmp_path / "d")
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    manifest[0]["label"] = "mystery"
    (tmp_path / "d" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DataFormatError, match="mystery"):
        load_dataset(tmp_path / "d")


def test_load_malformed_manifest(tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    (d / "manifest.json").write_text("{not json")
    with pytest.raises(DataFormatError, match="manifest.json"):
        load_dataset(d)


def test_handwritten_minimal_dataset(tmp_path):
    """A manifest plus 8 hand-written PGM frames loads with S == 8."""
    d = tmp_path / "mini"
    (d / "frames_x").mkdir(parents=True)
    header = f"P5\n{FRAME_W} {FRAME_H}\n255\n".encode()
    for t in range(8):
        body = bytearray(FRAME_H * FRAME_W)
        body[t * FRAME_W:(t + 1) * FRAME_W] = b"\xff" * FRAME_W
        (d / "frames_x" / f"frame_{t:05d}.pgm").write_bytes(header + bytes(body))
    (d / "manifest.json").write_text(json.dumps(
        [{"subject_id": "x", "label": "neutral", "frame_count": 8, "frames_dir": "frames_x"}]))
    seqs = load_dataset(d)
    assert len(seqs) == 1
    assert seqs[0].frame_count == 8
    assert seqs[0].frames[3, 3].sum() == FRAME_W


def test_wrong_frame_size_rejected(tmp_path):
    d = tmp_path / "bad"
    (d / "frames_x").mkdir(parents=True)
    (d / "frames_x" / "frame_00000.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(16))
    (d / "manifest.json").write_text(json.dumps(
        [{"subject_id": "x", "label": "neutral", "frame_count": 1, "frames_dir": "frames_x"}]))
    with pytest.raises(DataFormatError, match="4x4"):
        load_dataset(d)


# ---------------------------------------------------------------------------
# text embeddings


def test_default_text_embeddings_unit_norm():
    emb = default_text_embeddings(64)
    assert set(emb) == {"ternary", "binary"}
    for tag, e in emb.items():
        assert e.task_tag == tag
        assert abs(np.linalg.norm(e.vector) - 1.0) < 1e-9


def test_load_text_embeddings_renormalizes(tmp_path):
    vec = [2.0] + [0.0] * 63
    path = tmp_path / "g.json"
    path.write_text(json.dumps({"dim": 64, "ternary": vec, "binary": vec}))
    with pytest.warns(UserWarning, match="renormalizing"):
        emb = load_text_embeddings(path)
    assert abs(np.linalg.norm(emb["ternary"].vector) - 1.0) < 1e-9


def test_load_text_embeddings_zero_vector(tmp_path):
    path = tmp_path / "g.json"
    path.write_text(json.dumps({"dim": 4, "ternary": [0, 0, 0, 0], "binary": [1, 0, 0, 0]}))
    with pytest.raises(DataFormatError, match="zeros"):
        load_text_embeddings(path)


def test_load_text_embeddings_missing_tag(tmp_path):
    path = tmp_path / "g.json"
    path.write_text(json.dumps({"dim": 2, "ternary": [1, 0]}))
    with pytest.raises(DataFormatError, match="binary"):
        load_text_embeddings(path)


def test_load_text_embeddings_dim_mismatch(tmp_path):
    path = tmp_path / "g.json"
    path.write_text(json.dumps({"dim": 2, "ternary": [1, 0], "binary": [0, 1]}))
    with pytest.raises(DataFormatError, match="configured dim"):
        load_text_embeddings(path, expected_dim=64)
