"""Brightness, contrast and blur perturbations for robustness experiments."""

import math
from dataclasses import dataclass, replace

import numpy as np

PERTURBATIONS = ("brightness", "contrast", "blur")


@dataclass(frozen=True)
class AugmentPlan:
    fraction: float = 0.2
    brightness_delta: float = -100.0
    contrast_factor: float = 1.5
    blur_sigma: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must be within [0, 1]")
        if not self.contrast_factor > 0:
            raise ValueError("contrast_factor must be positive")
        if self.blur_sigma < 0:
            raise ValueError("blur_sigma must be non-negative")


def _round_half_away(v):
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def _like(result, image):
    if np.issubdtype(np.asarray(image).dtype, np.integer):
        return np.clip(_round_half_away(result), 0, 255).astype(np.asarray(image).dtype)
    return np.clip(result, 0.0, 255.0)


def adjust_brightness(image, delta):
    """Add ``delta`` to every channel value, clamped to [0, 255]."""
    return _like(np.asarray(image, dtype=np.float64) + delta, image)


def adjust_contrast(image, k):
    """Multiply every channel value by ``k``; rounding is half away from zero."""
    if not k > 0:
        raise ValueError("contrast factor must be positive")
    return _like(np.asarray(image, dtype=np.float64) * k, image)


def gaussian_kernel(sigma):
    radius = int(math.ceil(3.0 * sigma))
    i = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (i / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image, sigma):
    """Separable Gaussian blur, kernel radius ``ceil(3 sigma)``, reflected edges.

    Integer images come back rounded to the same dtype; float images stay float.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return np.array(image, copy=True)
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    out = np.asarray(image, dtype=np.float64)
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        # symmetric padding repeats the edge sample; radius may exceed the image
        padded = np.pad(out, pad, mode="symmetric")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for j, kj in enumerate(k):
            acc += kj * np.take(padded, np.arange(j, j + n), axis=axis)
        out = acc
    return _like(out, image)


def perturb(image, kind, plan):
    if kind == "brightness":
        return adjust_brightness(image, plan.brightness_delta)
    if kind == "contrast":
        return adjust_contrast(image, plan.contrast_factor)
    if kind == "blur":
        return gaussian_blur(image, plan.blur_sigma)
    raise ValueError(f"unknown perturbation {kind!r}")


def augment_dataset(series, plan, return_log=False):
    """Perturb ``floor(fraction * n_images)`` images, one random perturbation each.

    Images are picked uniformly without replacement across all snips of all
    series. Input series are not modified. With ``return_log`` also returns
    ``[(series_index, snip_index, kind), ...]`` sorted by position.
    """
    slots = [(i, j) for i, s in enumerate(series) for j in range(len(s.snips))]
    n_sel = int(math.floor(plan.fraction * len(slots) + 1e-9))
    rng = np.random.default_rng(np.random.SeedSequence([plan.seed, 7]))
    chosen = np.sort(rng.choice(len(slots), size=n_sel, replace=False)) if n_sel else np.array([], int)
    kinds = rng.integers(0, len(PERTURBATIONS), size=n_sel)
    out = [replace(s, snips=list(s.snips)) for s in series]
    log = []
    for pos, kind_idx in zip(chosen, kinds):
        i, j = slots[pos]
        kind = PERTURBATIONS[kind_idx]
        snip = out[i].snips[j]
        out[i].snips[j] = replace(snip, image=perturb(snip.image, kind, plan))
        log.append((i, j, kind))
    return (out, log) if return_log else out
