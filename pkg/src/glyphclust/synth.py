"""Synthetic corpus of perturbed glyph renderings with known cast labels.

Each character class has a few base casts (distinct shapes of the same
letter). Every example starts from one cast and passes through three
perturbation stages:

  1. a random small affine placement (rotation, offsets, shears, scale),
     applied with the same attention warp the model uses;
  2. random ink morphology: erosion, dilation, or an erode/dilate
     combination, with square structuring elements;
  3. additive pixelwise Gaussian noise, clamped back to [0, 1].

Ground truth (cast id, the drawn spatial parameters, morphology choices)
is recorded per example so experiments can score recovered structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi
import torch

from glyphclust.casts import base_casts
from glyphclust.corpus import CANVAS_SIZE, GlyphImage
from glyphclust.warp import DEFAULT_BANDWIDTH, SpatialParams, warp

MORPH_KINDS = ("erode", "dilate", "combo")


@dataclass
class PerturbConfig:
    """Ranges for the random perturbation stages; all draws are uniform."""

    offset_px: float = 2.0
    rotation_rad: float = 0.05
    shear: float = 0.05
    scale: float = 0.05
    morph_kernels: tuple[int, ...] = (1, 3)
    morph_kinds: tuple[str, ...] = MORPH_KINDS
    morph_strength: tuple[float, float] = (1.0, 1.0)
    # how strongly each cast's wear tilts the kind draw: a worn stamp
    # prints light (erode-leaning), a fresh one heavy (dilate-leaning)
    morph_kind_bias: float = 0.0
    noise_sigma: float = 0.05
    per_cast: int = 100
    canvas: int = CANVAS_SIZE
    bandwidth: float = DEFAULT_BANDWIDTH

    def __post_init__(self):
        if self.per_cast < 1:
            raise ValueError("per_cast must be at least 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        for k in self.morph_kernels:
            if k < 1 or k % 2 == 0:
                raise ValueError(f"morph kernels must be odd and positive, got {k}")
        lo, hi = self.morph_strength
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(
                f"morph_strength must satisfy 0 <= lo <= hi <= 1, got {self.morph_strength}"
            )
        if not 0.0 <= self.morph_kind_bias < 1.0:
            raise ValueError("morph_kind_bias must lie in [0, 1)")
        for kind in self.morph_kinds:
            if kind not in MORPH_KINDS:
                raise ValueError(f"unknown morph kind {kind!r}")


def morph(img: np.ndarray, kind: str, kernel: int) -> np.ndarray:
    """Grayscale morphology with a square kernel; ink is high-valued.

    "erode" thins ink (minimum filter), "dilate" thickens it (maximum
    filter). Off-canvas pixels count as blank paper.
    """
    if kind == "erode":
        return ndi.minimum_filter(img, size=kernel, mode="constant", cval=0.0)
    if kind == "dilate":
        return ndi.maximum_filter(img, size=kernel, mode="constant", cval=0.0)
    raise ValueError(f"unknown morph kind {kind!r}")


def _example_rng(seed: int, class_idx: int, cast_id: int, idx: int) -> np.random.Generator:
    # one independent stream per example, stable under reordering
    return np.random.default_rng(np.random.SeedSequence([seed, class_idx, cast_id, idx]))


def _draw_params(rng: np.random.Generator, cfg: PerturbConfig) -> SpatialParams:
    def u(a: float) -> float:
        return float(rng.uniform(-a, a))

    return SpatialParams(
        r=u(cfg.rotation_rad),
        o_h=u(cfg.offset_px),
        o_v=u(cfg.offset_px),
        s_h=u(cfg.shear),
        s_v=u(cfg.shear),
        a=u(cfg.scale),
    )


def _kind_weights(cfg: PerturbConfig, wear: float) -> np.ndarray | None:
    """Kind probabilities for a cast with the given wear sign in [-1, 1].

    Worn stamps hold less ink, so positive wear tilts the draw toward
    the lighter kinds (listed first) and away from the heavier ones.
    """
    if cfg.morph_kind_bias == 0.0 or len(cfg.morph_kinds) < 2 or wear == 0.0:
        return None
    n = len(cfg.morph_kinds)
    tilt = np.linspace(1.0, -1.0, n)
    w = 1.0 + cfg.morph_kind_bias * wear * tilt
    return w / w.sum()


def _apply_morph(
    img: np.ndarray,
    rng: np.random.Generator,
    cfg: PerturbConfig,
    kind_weights: np.ndarray | None = None,
) -> tuple[np.ndarray, dict]:
    kind = str(rng.choice(cfg.morph_kinds, p=kind_weights))
    if kind == "combo":
        # one erosion and one dilation, order drawn at random
        order = ["erode", "dilate"] if rng.uniform() < 0.5 else ["dilate", "erode"]
        kernels = [int(rng.choice(cfg.morph_kernels)) for _ in order]
        out = img
        for op, k in zip(order, kernels):
            out = morph(out, op, k)
        rec = {"kind": "combo", "ops": order, "kernels": kernels}
    else:
        kernel = int(rng.choice(cfg.morph_kernels))
        out = morph(img, kind, kernel)
        rec = {"kind": kind, "kernels": [kernel]}
    # partial inking: blend between the untouched and fully morphed image
    strength = float(rng.uniform(*cfg.morph_strength))
    rec["strength"] = strength
    if strength < 1.0:
        out = img + strength * (out - img)
    return out, rec


def perturb_example(
    base: np.ndarray,
    rng: np.random.Generator,
    cfg: PerturbConfig,
    wear: float = 0.0,
) -> tuple[np.ndarray, dict]:
    """One perturbed rendering of a cast plus its ground-truth record."""
    lam = _draw_params(rng, cfg)
    with torch.no_grad():
        warped = warp(
            torch.as_tensor(base, dtype=torch.float64), lam, cfg.bandwidth
        ).numpy()
    inked, morph_rec = _apply_morph(warped, rng, cfg, _kind_weights(cfg, wear))
    noisy = inked + rng.normal(0.0, cfg.noise_sigma, size=inked.shape)
    out = np.clip(noisy, 0.0, 1.0)
    truth = {
        "lambda": [lam.r, lam.o_h, lam.o_v, lam.s_h, lam.s_v, lam.a],
        "morph": morph_rec,
    }
    return out, truth


def generate_corpus(
    char_classes: list[str] | tuple[str, ...],
    config: PerturbConfig | None = None,
    seed: int = 0,
) -> tuple[list[GlyphImage], list[dict]]:
    """Perturbed examples for the given classes, with ground-truth records.

    Returns the in-memory images and a parallel list of truth records,
    one per image. Each example's random stream depends only on the
    seed, the class position, the cast id, and the example index.
    """
    cfg = config if config is not None else PerturbConfig()
    entries: list[GlyphImage] = []
    truths: list[dict] = []
    for ci, char in enumerate(sorted(char_classes)):
        casts = base_casts(char, canvas=cfg.canvas)
        wears = np.linspace(1.0, -1.0, len(casts))
        for cast in casts:
            cast_id = cast.true_font
            for idx in range(cfg.per_cast):
                rng = _example_rng(seed, ci, cast_id, idx)
                pixels, truth = perturb_example(
                    cast.pixels, rng, cfg, wear=float(wears[cast_id])
                )
                sid = f"{char}:{cast_id}:{idx}"
                entries.append(
                    GlyphImage(
                        pixels=pixels,
                        char_class=char,
                        true_font=cast_id,
                        source_id=sid,
                    )
                )
                truth.update({"source_id": sid, "char_class": char, "cast": cast_id})
                truths.append(truth)
    return entries, truths
