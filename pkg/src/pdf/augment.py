"""Test-time augmentation and uncertainty-budgeted view generation.

The number of extra views per step is not fixed: it scales with the
policy's decision uncertainty at that step, measured as normalized token
entropy of the base logits. Confident steps spend no compute; uncertain
steps get up to n_max augmented views.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import kernels
from .types import ConfigError, InvariantError, LogitsMatrix, Observation

AUGMENT_KINDS = ("pixel_shift", "gaussian_noise", "brightness", "occlusion_patch")


@dataclass(frozen=True)
class AugmentSpec:
    """One concrete augmentation: a kind plus its sampled parameters.

    Only the fields relevant to ``kind`` are meaningful; seed feeds the
    noise draw so applying the same spec twice gives the same view.
    """

    kind: str
    dx: int = 0
    dy: int = 0
    sigma: float = 0.0
    delta: float = 0.0
    x0: int = 0
    y0: int = 0
    width: int = 0
    height: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in AUGMENT_KINDS + ("identity",):
            raise ConfigError(f"unknown augmentation kind {self.kind!r}")
        if self.kind == "gaussian_noise" and self.sigma < 0:
            raise ConfigError("gaussian_noise sigma must be >= 0")
        if self.kind == "occlusion_patch" and (self.width < 1 or self.height < 1):
            raise ConfigError("occlusion patch must be at least 1x1")


@dataclass(frozen=True)
class AugmentRanges:
    """Sampling ranges for random augmentation specs.

    kinds restricts which augmentations are drawn (uniformly). shift_px
    bounds pixel translations per axis; occlusion patch sides are drawn in
    [1, patch_px].
    """

    kinds: Tuple[str, ...] = AUGMENT_KINDS
    shift_px: int = 2
    noise_sigma: float = 0.05
    brightness_delta: float = 0.1
    patch_px: int = 3

    def __post_init__(self) -> None:
        if not self.kinds:
            raise ConfigError("at least one augmentation kind is required")
        for kind in self.kinds:
            if kind not in AUGMENT_KINDS:
                raise ConfigError(f"unknown augmentation kind {kind!r}")
        if self.shift_px < 0 or self.patch_px < 1:
            raise ConfigError("shift_px must be >= 0 and patch_px >= 1")
        if self.noise_sigma < 0 or self.brightness_delta < 0:
            raise ConfigError("noise_sigma and brightness_delta must be >= 0")


def apply_augment(obs: Observation, spec: AugmentSpec) -> Observation:
    """Apply one spec to an observation; the input is never mutated."""
    img = obs.pixels
    if spec.kind == "identity":
        return obs
    if spec.kind == "pixel_shift":
        return Observation(kernels.shift_image(img, spec.dx, spec.dy))
    if spec.kind == "gaussian_noise":
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        noisy = img.astype(np.float64) + spec.sigma * rng.standard_normal(img.shape)
        return Observation(np.clip(noisy, 0.0, 1.0).astype(np.float32))
    if spec.kind == "brightness":
        shifted = img.astype(np.float64) + spec.delta
        return Observation(np.clip(shifted, 0.0, 1.0).astype(np.float32))
    if spec.kind == "occlusion_patch":
        h, w = img.shape[0], img.shape[1]
        if spec.x0 < 0 or spec.y0 < 0 or spec.x0 + spec.width > w \
                or spec.y0 + spec.height > h:
            raise ConfigError("occlusion patch falls outside the image")
        out = img.copy()
        out[spec.y0:spec.y0 + spec.height, spec.x0:spec.x0 + spec.width, :] = 0.0
        return Observation(out)
    raise ConfigError(f"unknown augmentation kind {spec.kind!r}")


def sample_augment_spec(rng: np.random.Generator, ranges: AugmentRanges,
                        img_shape: Tuple[int, int, int]) -> AugmentSpec:
    """Draw one random spec: uniform kind, then uniform parameters."""
    kind = ranges.kinds[int(rng.integers(len(ranges.kinds)))]
    h, w = img_shape[0], img_shape[1]
    if kind == "pixel_shift":
        s = ranges.shift_px
        return AugmentSpec(kind, dx=int(rng.integers(-s, s + 1)),
                           dy=int(rng.integers(-s, s + 1)))
    if kind == "gaussian_noise":
        return AugmentSpec(kind, sigma=float(rng.uniform(0.0, ranges.noise_sigma)),
                           seed=int(rng.integers(2 ** 31)))
    if kind == "brightness":
        d = ranges.brightness_delta
        return AugmentSpec(kind, delta=float(rng.uniform(-d, d)))
    if kind == "occlusion_patch":
        pw = int(rng.integers(1, min(ranges.patch_px, w) + 1))
        ph = int(rng.integers(1, min(ranges.patch_px, h) + 1))
        return AugmentSpec(kind, x0=int(rng.integers(0, w - pw + 1)),
                           y0=int(rng.integers(0, h - ph + 1)),
                           width=pw, height=ph)
    raise ConfigError(f"unknown augmentation kind {kind!r}")


def uncertainty(logits: LogitsMatrix, aggregate: str = "mean") -> float:
    """Normalized token entropy of the base logits, in [0, 1].

    Per action dimension the Shannon entropy of the token distribution is
    divided by log(action_tokens); rows are combined by mean (default) or
    max. 0 means one token holds all mass in every dimension; 1 means
    uniform everywhere.
    """
    if aggregate not in ("mean", "max"):
        raise ConfigError(f"aggregate must be 'mean' or 'max', got {aggregate!r}")
    return kernels.normalized_entropy(logits.values, 1 if aggregate == "max" else 0)


def budget(u: float, n_max: int, rounding: str = "floor") -> int:
    """Integer view budget floor(n_max * u), or nearest-even under 'round'.

    Result is clamped to [0, n_max]; u outside [0, 1] is rejected.
    """
    if not (0.0 <= u <= 1.0):
        raise InvariantError(f"uncertainty must lie in [0, 1], got {u}")
    if n_max < 0:
        raise ConfigError("n_max must be >= 0")
    if rounding == "floor":
        n = math.floor(n_max * u)
    elif rounding == "round":
        n = int(np.rint(n_max * u))
    else:
        raise ConfigError(f"rounding must be 'floor' or 'round', got {rounding!r}")
    return max(0, min(n_max, n))


def generate_views(obs: Observation, n: int, rng: np.random.Generator,
                   ranges: AugmentRanges,
                   ) -> Tuple[List[AugmentSpec], List[Observation]]:
    """Sample n random specs and apply each to obs.

    Returns (specs, views) in draw order. n = 0 yields empty lists and
    leaves the generator untouched.
    """
    if n < 0:
        raise InvariantError("view count must be >= 0")
    specs: List[AugmentSpec] = []
    views: List[Observation] = []
    for _ in range(n):
        spec = sample_augment_spec(rng, ranges, obs.pixels.shape)
        specs.append(spec)
        views.append(apply_augment(obs, spec))
    return specs, views


def identity_views(obs: Observation, n: int) -> Tuple[List[AugmentSpec], List[Observation]]:
    """Debug helper: n identity specs, each view aliasing the original."""
    if n < 0:
        raise InvariantError("view count must be >= 0")
    spec = AugmentSpec("identity")
    return [spec] * n, [obs] * n
