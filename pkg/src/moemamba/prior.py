"""Degradation prior over haze rating levels.

An intensity estimator maps an image to a logit vector over an L-token
vocabulary.  A rating-level set picks N of those positions; the prior is
the softmax restricted to them.  The built-in estimator is a deterministic
dark-channel density stand-in for a multimodal quality model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.ndimage import minimum_filter

from .errors import ConfigurationError, ParameterError, ShapeError

# Ordered clearest -> densest.  Five ITU quality words, three haze
# descriptors and six graded haze terms.
DEFAULT_LEVELS = (
    "clear", "excellent", "good", "light", "mist", "fair", "haze",
    "moderate", "poor", "fog", "heavy", "bad", "dense", "opaque",
)

UNMAPPED_LOGIT = -1e9
RAMP_SLOPE = 10.0


@dataclass(frozen=True)
class RatingLevelSet:
    """Named rating levels with their 1-based token positions in a vocabulary of size L."""

    levels: tuple[str, ...]
    token_index: tuple[int, ...]
    vocab_size: int

    def __post_init__(self):
        if len(self.levels) == 0:
            raise ConfigurationError("rating level set is empty")
        if len(set(self.levels)) != len(self.levels):
            raise ConfigurationError("rating level names must be unique")
        if len(self.token_index) != len(self.levels):
            raise ConfigurationError("one token index per level required")
        for name, j in zip(self.levels, self.token_index):
            if not 1 <= j <= self.vocab_size:
                raise ConfigurationError(f"level {name!r} maps to token {j}, outside [1, {self.vocab_size}]")

    def __len__(self) -> int:
        return len(self.levels)

    @classmethod
    def identity(cls, levels) -> "RatingLevelSet":
        levels = tuple(levels)
        return cls(levels, tuple(range(1, len(levels) + 1)), len(levels))

    @classmethod
    def default(cls, n: int = len(DEFAULT_LEVELS)) -> "RatingLevelSet":
        """`n` levels spread evenly over the default clearest-to-densest list."""
        if not 1 <= n <= len(DEFAULT_LEVELS):
            raise ConfigurationError(f"default level set supports 1..{len(DEFAULT_LEVELS)} levels, got {n}")
        if n == 1:
            picks = [0]
        else:
            picks = np.round(np.linspace(0, len(DEFAULT_LEVELS) - 1, n)).astype(int)
        return cls.identity(DEFAULT_LEVELS[i] for i in picks)

    @classmethod
    def load(cls, path, vocab_size: int | None = None) -> "RatingLevelSet":
        """Read ``level_name = token_index`` lines; '#' starts a comment."""
        levels, index = [], []
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected 'level = index'")
            name, value = (s.strip() for s in line.split("=", 1))
            try:
                index.append(int(value))
            except ValueError as exc:
                raise ConfigurationError(f"{path}:{lineno}: token index {value!r} is not an integer") from exc
            levels.append(name)
        if not index:
            raise ConfigurationError(f"{path}: no levels")
        return cls(tuple(levels), tuple(index), vocab_size or max(index))

    def dump(self, path) -> None:
        lines = [f"{name} = {j}" for name, j in zip(self.levels, self.token_index)]
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class DegradationPrior:
    probs: np.ndarray = field(repr=True)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ParameterError("prior must be a nonnegative vector summing to 1")
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return self.probs.size

    def argmax(self) -> int:
        return int(np.argmax(self.probs))


class IntensityEstimator(Protocol):
    prompt: str

    def __call__(self, image: np.ndarray) -> np.ndarray: ...


def close_set_prior(logits, levels: RatingLevelSet) -> DegradationPrior:
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if logits.size != levels.vocab_size:
        raise ShapeError(f"{logits.size} logits for a vocabulary of {levels.vocab_size}")
    idx = np.asarray(levels.token_index) - 1
    if idx.min() < 0 or idx.max() >= logits.size:
        raise ConfigurationError("token index outside the logit vector")
    z = logits[idx]
    if not np.isfinite(z).all():
        raise ParameterError("mapped logits must be finite")
    z = z - z.max()
    e = np.exp(z)
    return DegradationPrior(e / e.sum())


def dark_channel(image: np.ndarray, window: int = 15) -> np.ndarray:
    """Per-pixel min over channels of a (C, H, W) image, then a window x window min filter."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise ShapeError(f"dark_channel expects a single image, got shape {img.shape}")
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 1, got {window}")
    return minimum_filter(img.min(axis=0), size=window, mode="nearest")


def dark_channel_density(image: np.ndarray, window: int = 15) -> float:
    """Mean dark channel: 0 for haze-free black, 1 for saturated white."""
    img = np.asarray(image)
    if img.min() < 0 or img.max() > 1:
        raise ParameterError("image values must lie in [0, 1]")
    return float(dark_channel(img, window).mean())


def ramp_logits(density: float, n: int, slope: float = RAMP_SLOPE) -> np.ndarray:
    """logit_i = -slope * |density - i/(n-1)|, level i anchored at i/(n-1)."""
    anchors = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
    return -slope * np.abs(density - anchors)


@dataclass(frozen=True)
class DarkChannelEstimator:
    """Deterministic estimator: dark-channel density through a triangular ramp."""

    levels: RatingLevelSet
    window: int = 15
    slope: float = RAMP_SLOPE
    prompt: str = "Rate the quality of the image."

    def __call__(self, image: np.ndarray) -> np.ndarray:
        return dark_channel_estimator(image, self.levels, self.window, self.slope)


def dark_channel_estimator(image, levels: RatingLevelSet, window: int = 15,
                           slope: float = RAMP_SLOPE) -> np.ndarray:
    """Logits over the vocabulary; mapped positions follow the ramp, others a sentinel."""
    d = dark_channel_density(image, window)
    logits = np.full(levels.vocab_size, UNMAPPED_LOGIT)
    logits[np.asarray(levels.token_index) - 1] = ramp_logits(d, len(levels), slope)
    return logits


def estimate_prior(image, levels: RatingLevelSet, window: int = 15) -> DegradationPrior:
    return close_set_prior(dark_channel_estimator(image, levels, window), levels)
