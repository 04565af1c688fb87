"""Gait-phase segmentation: strip descriptors, DTW distances, contiguous
agglomerative clustering into K bags.

Per-frame motion descriptors are strip-wise mean absolute frame differences.
The DTW distance between two frames treats their R strip values as scalar
sequences. Clustering merges only temporally adjacent segments (phases are
contiguous in time), by smallest average inter-segment distance; ties prefer
the smaller merged segment, then the leftmost pair, which keeps the result
deterministic and balanced on constant input.
"""

import numpy as np

from . import kernels
from .datasynth import FrameSequence

DEFAULT_STRIPS = 16


def frame_features(seq, strips: int = DEFAULT_STRIPS) -> np.ndarray:
    """Per-frame motion descriptors [S, strips]; frame 0 reuses the (0,1) pair."""
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq)
    s = frames.shape[0]
    if s < 2:
        raise ValueError(f"frame_features needs at least 2 frames, got {s}")
    h = frames.shape[1]
    if h % strips != 0:
        raise ValueError(f"frame height {h} not divisible by {strips} strips")
    x = frames.astype(np.float64)
    d = np.empty_like(x)
    d[1:] = np.abs(x[1:] - x[:-1])
    d[0] = d[1]
    return d.reshape(s, strips, h // strips, -1).mean(axis=(2, 3))


def dtw_distance(a, b) -> float:
    """Dynamic time warping distance between two vector sequences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("dtw_distance: sequences must be non-empty")
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    return float(kernels.dtw_pair(np.ascontiguousarray(a), np.ascontiguousarray(b)))


def distance_matrix(features) -> np.ndarray:
    """Symmetric all-pairs DTW matrix over per-frame descriptors [S, R]."""
    feats = np.ascontiguousarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ValueError(f"distance_matrix needs [S>=2, R] descriptors, got {feats.shape}")
    return kernels.dtw_matrix(feats)


def _merge_levels(dist):
    """Replayable agglomerative merge ladder; boundaries for every level."""
    s = dist.shape[0]
    # integral image for O(1) block sums
    acc = np.zeros((s + 1, s + 1))
    acc[1:, 1:] = dist.cumsum(axis=0).cumsum(axis=1)
    segments = [(i, i + 1) for i in range(s)]
    levels = {s: [0] + [seg[1] for seg in segments]}
    while len(segments) > 1:
        best_key = None
        best_idx = 0
        for idx in range(len(segments) - 1):
            a0, a1 = segments[idx]
            b0, b1 = segments[idx + 1]
            block = acc[a1, b1] - acc[a0, b1] - acc[a1, b0] + acc[a0, b0]
            avg = block / ((a1 - a0) * (b1 - b0))
            key = (avg, (b1 - b0) + (a1 - a0), a0)
            if best_key is None or key < best_key:
                best_key = key
                best_idx = idx
        a0, _ = segments[best_idx]
        _, b1 = segments.pop(best_idx + 1)
        segments[best_idx] = (a0, b1)
        levels[len(segments)] = [0] + [seg[1] for seg in segments]
    return levels


def cluster_bags(dist, k: int) -> np.ndarray:
    """Partition [0, S) into K contiguous bags from a distance matrix."""
    dist = np.asarray(dist, dtype=np.float64)
    s = dist.shape[0]
    if not 1 <= k <= s:
        raise ValueError(f"bag count K={k} must satisfy 1 <= K <= S={s}")
    return np.asarray(_merge_levels(dist)[k], dtype=np.int64)


def partition_boundaries(frames, k: int, strips: int = DEFAULT_STRIPS) -> np.ndarray:
    """frame_features -> distance_matrix -> cluster_bags, in one call."""
    feats = frame_features(frames, strips=strips)
    if k > feats.shape[0]:
        raise ValueError(f"bag count K={k} exceeds sequence length S={feats.shape[0]}")
    if k == 1:
        return np.asarray([0, feats.shape[0]], dtype=np.int64)
    return cluster_bags(distance_matrix(feats), k)


def partition_sequence(seq, k: int, strips: int = DEFAULT_STRIPS):
    """Split a sequence into K contiguous frame bags (concatenation == input)."""
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq)
    if frames.shape[0] < k:
        raise ValueError(f"bag count K={k} exceeds sequence length S={frames.shape[0]}")
    bounds = partition_boundaries(frames, k, strips=strips)
    return [frames[bounds[i]:bounds[i + 1]] for i in range(k)]


def uniform_boundaries(s: int, k: int) -> np.ndarray:
    """K contiguous near-equal bags; the first S mod K bags get the extra frame."""
    if not 1 <= k <= s:
        raise ValueError(f"bag count K={k} must satisfy 1 <= K <= S={s}")
    base, rem = divmod(s, k)
    sizes = [base + 1] * rem + [base] * (k - rem)
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
