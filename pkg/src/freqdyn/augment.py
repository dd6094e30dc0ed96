"""Batch-level augmentations on raw feature and label arrays.

All functions are pure: they return a new LabeledBatch and never write to
their input. Randomness comes from the generator passed in, one stream per
call site, so training runs replay exactly from their seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class LabeledBatch:
    """Features [B,1,T,F], strong labels [B,C,T], weak labels [B,C].

    Labels hold {0, 1} except after mixup, which produces convex mixtures.
    The mask arrays flag per-clip label availability.
    """

    features: np.ndarray
    strong: np.ndarray
    weak: np.ndarray
    strong_mask: np.ndarray
    weak_mask: np.ndarray

    @staticmethod
    def create(features, strong, weak) -> "LabeledBatch":
        n = features.shape[0]
        return LabeledBatch(features, strong, weak,
                            np.ones(n, dtype=bool), np.ones(n, dtype=bool))

    def __post_init__(self):
        b = self.features.shape[0]
        if self.features.ndim != 4 or self.features.shape[1] != 1:
            raise ConfigurationError(
                f"features must be [B,1,T,F], got {self.features.shape}")
        if self.strong.shape[0] != b or self.weak.shape[0] != b or \
                self.strong.shape[2] != self.features.shape[2]:
            raise ConfigurationError(
                f"label shapes {self.strong.shape}/{self.weak.shape} do not "
                f"match features {self.features.shape}")


def frame_shift(batch: LabeledBatch, max_shift: int,
                rng: np.random.Generator) -> LabeledBatch:
    """Circularly shift each clip along time; strong labels follow."""
    if max_shift < 0:
        raise ConfigurationError(f"max_shift must be >= 0, got {max_shift}")
    feats = batch.features.copy()
    strong = batch.strong.copy()
    for i in range(feats.shape[0]):
        offset = int(rng.integers(-max_shift, max_shift + 1))
        feats[i] = np.roll(feats[i], offset, axis=1)
        strong[i] = np.roll(strong[i], offset, axis=1)
    return replace(batch, features=feats, strong=strong)


def mixup(batch: LabeledBatch, alpha: float, rng: np.random.Generator,
          lam: float | None = None) -> LabeledBatch:
    """Blend the batch with a shuffled copy of itself.

    One mixing weight lam ~ Beta(alpha, alpha) is drawn per call (or forced
    via the argument); features, strong, and weak labels all combine as
    lam * a + (1 - lam) * b. Masks combine conservatively (both available).
    """
    if alpha <= 0:
        raise ConfigurationError(f"mixup alpha must be > 0, got {alpha}")
    perm = rng.permutation(batch.features.shape[0])
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    mix = lambda a: lam * a + (1.0 - lam) * a[perm]  # noqa: E731
    return LabeledBatch(
        features=mix(batch.features).astype(batch.features.dtype),
        strong=mix(batch.strong).astype(batch.strong.dtype),
        weak=mix(batch.weak).astype(batch.weak.dtype),
        strong_mask=batch.strong_mask & batch.strong_mask[perm],
        weak_mask=batch.weak_mask & batch.weak_mask[perm])


def time_mask(batch: LabeledBatch, max_width: int,
              rng: np.random.Generator) -> LabeledBatch:
    """Zero a random time span per clip in features and strong labels.

    Weak labels are left alone: the clip-level class presence stays the
    training target even when the masked span hides some of the evidence.
    """
    t_len = batch.features.shape[2]
    if not 0 <= max_width <= t_len:
        raise ConfigurationError(
            f"time_mask width must be in [0, {t_len}], got {max_width}")
    feats = batch.features.copy()
    strong = batch.strong.copy()
    for i in range(feats.shape[0]):
        width = int(rng.integers(0, max_width + 1))
        if width == 0:
            continue
        start = int(rng.integers(0, t_len - width + 1))
        feats[i, :, start:start + width, :] = 0.0
        strong[i, :, start:start + width] = 0.0
    return replace(batch, features=feats, strong=strong)


def filter_augment(batch: LabeledBatch, rng: np.random.Generator,
                   bands: tuple[int, int] = (2, 5),
                   gain_db: float = 6.0) -> LabeledBatch:
    """Scale each clip by a piecewise-linear random frequency response.

    Per clip: split the frequency axis into n random bands, draw one dB gain
    per band, linearly interpolate the gains between band centers, and
    multiply the features by the 10^(dB/20) amplitude factors.
    """
    lo, hi = bands
    if not 1 <= lo <= hi:
        raise ConfigurationError(f"band count range must satisfy "
                                 f"1 <= lo <= hi, got {bands}")
    f_len = batch.features.shape[3]
    feats = batch.features.copy()
    for i in range(feats.shape[0]):
        n = int(rng.integers(lo, hi + 1))
        if n >= f_len:
            raise ConfigurationError(
                f"{n} bands do not fit {f_len} frequency bins")
        cuts = np.sort(rng.choice(np.arange(1, f_len), size=n - 1,
                                  replace=False)) if n > 1 else np.array([])
        edges = np.concatenate([[0], cuts, [f_len]])
        gains = rng.uniform(-gain_db, gain_db, size=n)
        centers = (edges[:-1] + edges[1:]) / 2.0
        curve_db = np.interp(np.arange(f_len), centers, gains)
        feats[i] *= (10.0 ** (curve_db / 20.0)).astype(feats.dtype)
    return replace(batch, features=feats)
