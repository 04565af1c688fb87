"""Synthetic gait silhouette sequences with a controllable lateral-sway cue.

Sequences are binary 128x88 silhouettes of a walking figure. The screening
cue is geometric: the whole upper body oscillates laterally with a chosen
amplitude (flat-topped waveform, so the mean absolute excursion is close to
the amplitude) and the shoulder line tilts with the asymmetry parameter.
A three-phase plan (front / turning / back) modulates apparent body width,
with the width ramping smoothly inside the turning phase so inter-frame
motion separates the phases for the clustering stage.

Also defines the on-disk dataset layout (manifest.json + binary PGM frames),
which is equally usable for real silhouette data, and the loader for
precomputed text-guidance embedding files.
"""

import json
import math
import os
import warnings
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import DataFormatError

FRAME_H = 128
FRAME_W = 88
LABELS = ("negative", "neutral", "positive")
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}
PHASES = ("front", "turning", "back")

_CENTER_X = FRAME_W / 2.0  # pixel centers live at j + 0.5


@dataclass(frozen=True)
class SwayProfile:
    """Geometry knobs for one synthetic subject."""

    sway_amplitude: float
    asymmetry: float
    period: int
    phase_plan: tuple  # ((phase_name, frame_count), ...)

    def __post_init__(self):
        if self.sway_amplitude < 0:
            raise ValueError(f"sway_amplitude must be >= 0, got {self.sway_amplitude}")
        if not 0.0 <= self.asymmetry <= 1.0:
            raise ValueError(f"asymmetry must be in [0,1], got {self.asymmetry}")
        if self.period < 4:
            raise ValueError(f"period must be >= 4, got {self.period}")
        for name, count in self.phase_plan:
            if name not in PHASES:
                raise ValueError(f"unknown phase {name!r}")
            if count < 1:
                raise ValueError(f"phase {name!r} has a non-positive frame budget")

    @property
    def frame_count(self):
        return sum(count for _, count in self.phase_plan)


@dataclass
class FrameSequence:
    """One subject's silhouette frames plus class label."""

    subject_id: str
    label: str
    frames: np.ndarray  # [S, 128, 88] uint8 in {0, 1}

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (FRAME_H, FRAME_W):
            raise ValueError(
                f"frames must be [S,{FRAME_H},{FRAME_W}], got {self.frames.shape}")
        if self.frames.shape[0] < 8:
            raise ValueError(f"need at least 8 frames, got {self.frames.shape[0]}")

    @property
    def frame_count(self):
        return int(self.frames.shape[0])


@dataclass(frozen=True)
class DatasetConfig:
    """Class bands on sway amplitude plus shared sequence parameters.

    Thresholds (t_lo, t_hi) map amplitude to label: below t_lo is negative,
    above t_hi positive, the closed band in between neutral. Bands are where
    each class's amplitudes are drawn from and must respect the thresholds.
    """

    thresholds: tuple = (3.0, 5.0)
    band_negative: tuple = (0.0, 1.0)
    band_neutral: tuple = (3.5, 4.5)
    band_positive: tuple = (8.0, 10.0)
    frame_count_range: tuple = (40, 56)
    period_range: tuple = (8, 13)

    def __post_init__(self):
        t_lo, t_hi = self.thresholds
        if not (self.band_negative[1] < t_lo <= self.band_neutral[0]
                and self.band_neutral[1] <= t_hi < self.band_positive[0]):
            raise ValueError("class bands must be separated by the label thresholds")

    def band(self, label):
        return {
            "negative": self.band_negative,
            "neutral": self.band_neutral,
            "positive": self.band_positive,
        }[label]


def label_for_amplitude(amplitude, thresholds=(3.0, 5.0)):
    t_lo, t_hi = thresholds
    if amplitude < t_lo:
        return "negative"
    if amplitude <= t_hi:
        return "neutral"
    return "positive"


def default_phase_plan(total_frames):
    """40% front, 30% turning, rest back."""
    n_front = max(1, round(0.4 * total_frames))
    n_turn = max(1, round(0.3 * total_frames))
    n_back = total_frames - n_front - n_turn
    if n_back < 1:
        raise ValueError(f"{total_frames} frames is too short for a 3-phase plan")
    return (("front", n_front), ("turning", n_turn), ("back", n_back))


# ---------------------------------------------------------------------------
# rendering


def _fill_convex(frame, corners):
    """Rasterize a convex polygon; a pixel is set when its center is inside."""
    ys = [p[1] for p in corners]
    row_lo = max(0, math.ceil(min(ys) - 0.5))
    row_hi = min(FRAME_H - 1, math.floor(max(ys) - 0.5))
    n = len(corners)
    for row in range(row_lo, row_hi + 1):
        yc = row + 0.5
        left = math.inf
        right = -math.inf
        for k in range(n):
            x1, y1 = corners[k]
            x2, y2 = corners[(k + 1) % n]
            if y1 == y2 or yc < min(y1, y2) or yc > max(y1, y2):
                continue
            x = x1 + (yc - y1) / (y2 - y1) * (x2 - x1)
            left = min(left, x)
            right = max(right, x)
        if left <= right:
            j_lo = max(0, math.ceil(left - 0.5))
            j_hi = min(FRAME_W - 1, math.floor(right - 0.5))
            if j_lo <= j_hi:
                frame[row, j_lo:j_hi + 1] = 1


def _fill_disk(frame, cx, cy, r):
    row_lo = max(0, math.ceil(cy - r - 0.5))
    row_hi = min(FRAME_H - 1, math.floor(cy + r - 0.5))
    for row in range(row_lo, row_hi + 1):
        yc = row + 0.5
        chord = r * r - (yc - cy) ** 2
        if chord <= 0:
            continue
        half = math.sqrt(chord)
        j_lo = max(0, math.ceil(cx - half - 0.5))
        j_hi = min(FRAME_W - 1, math.floor(cx + half - 0.5))
        if j_lo <= j_hi:
            frame[row, j_lo:j_hi + 1] = 1


@dataclass(frozen=True)
class _Body:
    head_radius: float
    head_y: float
    shoulder_y: float
    hip_y: float
    foot_y: float
    shoulder_halfwidth: float
    hip_halfwidth: float
    leg_halfwidth: float
    leg_swing: float


def _sample_body(rng):
    return _Body(
        head_radius=7.0 + rng.uniform(-0.8, 0.8),
        head_y=15.0 + rng.uniform(-1.5, 1.5),
        shoulder_y=27.0 + rng.uniform(-1.0, 1.0),
        hip_y=72.0 + rng.uniform(-2.0, 2.0),
        foot_y=122.0,
        shoulder_halfwidth=13.5 + rng.uniform(-1.2, 1.2),
        hip_halfwidth=8.5 + rng.uniform(-0.8, 0.8),
        leg_halfwidth=2.2 + rng.uniform(-0.3, 0.3),
        leg_swing=7.0 + rng.uniform(-1.0, 1.0),
    )


def _phase_schedule(phase_plan):
    """Per-frame (phase_name, progress within phase) pairs."""
    schedule = []
    for name, count in phase_plan:
        for k in range(count):
            schedule.append((name, k / count))
    return schedule


def _render_frame(body, profile, t, phase, progress):
    frame = np.zeros((FRAME_H, FRAME_W), dtype=np.uint8)
    omega = 2.0 * math.pi * t / profile.period
    # flat-topped sway: |offset| sits near the amplitude for most of the cycle
    sway = profile.sway_amplitude * math.tanh(2.5 * math.sin(omega))
    cx = _CENTER_X + sway
    # turning reads wider and the torso sweeps at a constant rate (triangle
    # wave, two sweeps per gait cycle, kinks off the leg still-points), so
    # the turning phase always has visible motion at any cycle alignment
    if phase == "turning":
        u = (2.0 * t / profile.period + 0.25) % 1.0
        width = 1.2 + 0.3 * (4.0 * abs(u - 0.5) - 1.0)
    else:
        width = 1.0

    stride_boost = 2.0 if phase == "turning" else 1.0  # turning moves visibly more

    tilt = 8.0 * profile.asymmetry  # right shoulder sits lower than the left
    w_top = body.shoulder_halfwidth * width
    w_bot = body.hip_halfwidth * width
    torso = [
        (cx - w_top, body.shoulder_y - tilt / 2.0),
        (cx + w_top, body.shoulder_y + tilt / 2.0),
        (cx + w_bot, body.hip_y),
        (cx - w_bot, body.hip_y),
    ]
    _fill_convex(frame, torso)
    _fill_disk(frame, cx, body.head_y, body.head_radius)
    # neck
    _fill_convex(frame, [
        (cx - 2.0, body.head_y), (cx + 2.0, body.head_y),
        (cx + 2.0, body.shoulder_y + tilt / 2.0), (cx - 2.0, body.shoulder_y + tilt / 2.0),
    ])

    spread = (w_bot * 0.5 + 4.0 + 3.0 * (stride_boost - 1.0)
              + body.leg_swing * stride_boost * abs(math.sin(omega / 2.0)))
    for side in (-1.0, 1.0):
        hip_x = cx + side * w_bot * 0.5
        foot_x = cx + side * spread
        lh = body.leg_halfwidth
        _fill_convex(frame, [
            (hip_x - lh, body.hip_y), (hip_x + lh, body.hip_y),
            (foot_x + lh, body.foot_y), (foot_x - lh, body.foot_y),
        ])
    return frame


def generate_sequence(profile: SwayProfile, seed: int,
                      thresholds=(3.0, 5.0), subject_id=None) -> FrameSequence:
    """Render one deterministic sequence; label follows the sway thresholds."""
    rng = np.random.default_rng(seed)
    body = _sample_body(rng)
    schedule = _phase_schedule(profile.phase_plan)
    frames = np.empty((len(schedule), FRAME_H, FRAME_W), dtype=np.uint8)
    for t, (phase, progress) in enumerate(schedule):
        frames[t] = _render_frame(body, profile, t, phase, progress)
    if subject_id is None:
        subject_id = f"s{seed:08d}"
    return FrameSequence(subject_id=subject_id,
                         label=label_for_amplitude(profile.sway_amplitude, thresholds),
                         frames=frames)


def generate_dataset(n_pos, n_neu, n_neg, config: DatasetConfig = None,
                     seed: int = 0):
    """Labelled sequences with per-class sway bands; negatives first.

    Subject ids are disjoint across the whole dataset. The asymmetry cue is
    loosely coupled to the sway amplitude so both cues agree with the label.
    """
    if min(n_pos, n_neu, n_neg) < 0:
        raise ValueError("sequence counts must be >= 0")
    config = config or DatasetConfig()
    rng = np.random.default_rng(seed)
    sequences = []
    for label, count in (("negative", n_neg), ("neutral", n_neu), ("positive", n_pos)):
        lo, hi = config.band(label)
        for i in range(count):
            amplitude = rng.uniform(lo, hi)
            asymmetry = float(np.clip(amplitude / 10.0 + rng.normal(0.0, 0.04), 0.0, 1.0))
            period = int(rng.integers(*config.period_range))
            total = int(rng.integers(config.frame_count_range[0],
                                     config.frame_count_range[1] + 1))
            profile = SwayProfile(sway_amplitude=amplitude, asymmetry=asymmetry,
                                  period=period, phase_plan=default_phase_plan(total))
            sequences.append(generate_sequence(
                profile, seed=int(rng.integers(0, 2 ** 31)),
                thresholds=config.thresholds, subject_id=f"{label[:3]}{i:04d}"))
    return sequences


# ---------------------------------------------------------------------------
# on-disk dataset format


def _write_pgm(path, frame):
    with open(path, "wb") as fh:
        fh.write(f"P5\n{FRAME_W} {FRAME_H}\n255\n".encode("ascii"))
        fh.write((frame * 255).astype(np.uint8).tobytes())


def _read_pgm(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise DataFormatError(f"missing frame file: {path}") from None
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5" or parts[3] != b"255":
        raise DataFormatError(f"{path}: not an 8-bit binary PGM")
    w, h = int(parts[1]), int(parts[2])
    pixels = np.frombuffer(parts[4][:w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise DataFormatError(f"{path}: truncated pixel data")
    if (h, w) != (FRAME_H, FRAME_W):
        raise DataFormatError(f"{path}: frame is {h}x{w}, expected {FRAME_H}x{FRAME_W}")
    return (pixels.reshape(h, w) >= 128).astype(np.uint8)


def save_dataset(sequences, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    manifest = []
    for seq in sequences:
        frames_dir = f"frames_{seq.subject_id}"
        os.makedirs(os.path.join(directory, frames_dir), exist_ok=True)
        for t in range(seq.frame_count):
            _write_pgm(os.path.join(directory, frames_dir, f"frame_{t:05d}.pgm"),
                       seq.frames[t])
        manifest.append({
            "subject_id": seq.subject_id,
            "label": seq.label,
            "frame_count": seq.frame_count,
            "frames_dir": frames_dir,
        })
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_dataset(directory):
    manifest_path = os.path.join(directory, "manifest.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataFormatError(f"missing manifest: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{manifest_path}: invalid JSON ({exc})") from None
    if not isinstance(manifest, list):
        raise DataFormatError(f"{manifest_path}: manifest must be a JSON array")

    sequences = []
    for entry in manifest:
        required = {"subject_id", "label", "frame_count", "frames_dir"}
        if not isinstance(entry, dict) or not required.issubset(entry):
            raise DataFormatError(
                f"{manifest_path}: entry {entry!r} missing keys {sorted(required)}")
        if entry["label"] not in LABELS:
            raise DataFormatError(
                f"{manifest_path}: unknown label {entry['label']!r} "
                f"for subject {entry['subject_id']!r}")
        frames = np.empty((entry["frame_count"], FRAME_H, FRAME_W), dtype=np.uint8)
        for t in range(entry["frame_count"]):
            frames[t] = _read_pgm(
                os.path.join(directory, entry["frames_dir"], f"frame_{t:05d}.pgm"))
        sequences.append(FrameSequence(subject_id=entry["subject_id"],
                                       label=entry["label"], frames=frames))
    return sequences


# ---------------------------------------------------------------------------
# text-guidance embeddings

TASK_TAGS = ("ternary", "binary")


@dataclass(frozen=True)
class TextEmbedding:
    vector: np.ndarray
    task_tag: str


def _load_guidance_json(raw, origin, expected_dim=None):
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{origin}: invalid JSON ({exc})") from None
    if "dim" not in doc:
        raise DataFormatError(f"{origin}: missing 'dim' field")
    dim = int(doc["dim"])
    if expected_dim is not None and dim != expected_dim:
        raise DataFormatError(
            f"{origin}: embedding dim {dim} does not match configured dim {expected_dim}")
    out = {}
    for tag in TASK_TAGS:
        if tag not in doc:
            raise DataFormatError(f"{origin}: missing task tag {tag!r}")
        vec = np.asarray(doc[tag], dtype=np.float64)
        if vec.shape != (dim,):
            raise DataFormatError(
                f"{origin}: {tag} vector has shape {vec.shape}, expected ({dim},)")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise DataFormatError(f"{origin}: {tag} vector is all zeros, cannot normalize")
        if abs(norm - 1.0) > 1e-9:
            warnings.warn(f"{origin}: {tag} vector has norm {norm:.6g}, renormalizing")
            vec = vec / norm
        out[tag] = TextEmbedding(vector=vec, task_tag=tag)
    return out


def load_text_embeddings(path, expected_dim=None):
    """Load {'ternary': ..., 'binary': ...} unit vectors from a guidance file."""
    try:
        with open(path) as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise DataFormatError(f"missing text-guidance file: {path}") from None
    return _load_guidance_json(raw, str(path), expected_dim)


def default_text_embeddings(expected_dim=None):
    """Bundled guidance vectors (fixed seeded unit vectors, dim 64)."""
    raw = resources.files("gaitscreen").joinpath("data/text_guidance.json").read_text()
    return _load_guidance_json(raw, "bundled text_guidance.json", expected_dim)
