"""Procedural base casts: binary glyph rasters for synthetic corpora.

Each character class gets three hand-designed casts that differ in subtle
geometric features (arm lengths, bar positions, junction points) while
sharing stroke layout, mimicking distinct metal stamps of the same letter.
Some classes vary a single scalar; others move several sub-pixel-to-pixel
landmarks at once, signed per cast, so no single landmark gives a cast
away but jointly they do.

Strokes live in a unit square (x right, y down) and are rasterized into a
margin-padded square canvas. Primitives are thick line segments and
circular arcs; a pixel is ink when its center lies within half a stroke
width of any primitive. "gap" primitives are subtractive: they carve
hairline flaws out of whatever ink the other strokes laid down.
"""

from __future__ import annotations

import math

import numpy as np

from glyphclust.corpus import CANVAS_SIZE, GlyphImage

DEFAULT_THICKNESS = 4.2

# (kind, *geometry, thickness_scale); geometry in unit glyph coordinates
Stroke = tuple


def _line(x1, y1, x2, y2, t=1.0) -> Stroke:
    return ("line", x1, y1, x2, y2, t)


def _arc(cx, cy, r, a0, a1, t=1.0) -> Stroke:
    return ("arc", cx, cy, r, a0, a1, t)


def _curved(x1, y1, x2, y2, bow=(0.0, 0.0), wave=(0.0, 0.0)) -> list[Stroke]:
    """Stroke with a gentle bow (arch) and/or wave (S-bend) deflection.

    Four chained segments through quarter points. `bow` peaks at the
    midpoint; `wave` deflects the quarter points in opposite directions.
    Affine warps keep lines straight, so these sub-pixel deflections
    survive alignment while staying far below the jitter blur.
    """
    pts = []
    for t, b, w in ((0.0, 0.0, 0.0), (0.25, 0.75, 1.0), (0.5, 1.0, 0.0),
                    (0.75, 0.75, -1.0), (1.0, 0.0, 0.0)):
        pts.append((
            x1 + (x2 - x1) * t + b * bow[0] + w * wave[0],
            y1 + (y2 - y1) * t + b * bow[1] + w * wave[1],
        ))
    return [_line(*p, *q) for p, q in zip(pts, pts[1:])]


def _gap(x1, y1, x2, y2, t=0.5) -> Stroke:
    return ("gap", x1, y1, x2, y2, t)


def _nick(x, y, along, reach=0.13, t=0.55) -> list[Stroke]:
    """Hairline crack at (x, y) on a stroke running in direction `along`.

    The cut runs perpendicular to the stroke and slightly past both
    edges. Wear marks like these survive heavy inking far better than
    edge detail does: erosion only widens a cut, and a blot has to fill
    it completely before the location is lost.
    """
    dx, dy = along
    n = math.hypot(dx, dy)
    ux, uy = -dy / n, dx / n
    return [_gap(x - ux * reach, y - uy * reach, x + ux * reach, y + uy * reach, t)]


def _f_glyph(mid_len: float) -> list[Stroke]:
    return [
        _line(0.15, 0.03, 0.15, 0.97),
        _line(0.15, 0.07, 0.90, 0.07),
        _line(0.15, 0.50, 0.15 + mid_len, 0.50),
    ]


def _a_glyph(bar_y: float) -> list[Stroke]:
    half = 0.42 * bar_y
    return [
        _line(0.50, 0.03, 0.08, 0.97),
        _line(0.50, 0.03, 0.92, 0.97),
        _line(0.50 - half, bar_y, 0.50 + half, bar_y),
    ]


def _b_glyph(lower_r: float) -> list[Stroke]:
    return [
        _line(0.15, 0.03, 0.15, 0.97),
        _line(0.15, 0.07, 0.50, 0.07),
        _arc(0.50, 0.27, 0.20, -math.pi / 2, math.pi / 2),
        _line(0.50, 0.47, 0.15, 0.47),
        _line(0.15, 0.50, 0.48, 0.50),
        _arc(0.48, 0.50 + lower_r, lower_r, -math.pi / 2, math.pi / 2),
        _line(0.48, 0.50 + 2 * lower_r, 0.15, 0.50 + 2 * lower_r),
    ]


def _g_glyph(spur_len: float) -> list[Stroke]:
    return [
        _arc(0.50, 0.50, 0.42, -0.10 * math.pi, 1.55 * math.pi),
        _line(0.58, 0.55, 0.90, 0.55),
        _line(0.90, 0.55, 0.90, 0.55 + spur_len),
    ]


def _e_glyph(s: tuple[int, ...]) -> list[Stroke]:
    # skeletons nearly coincide across casts; identity rides on the three
    # crack positions, with sub-pixel waves and bows as seasoning
    return (
        _curved(0.15, 0.03, 0.15, 0.97, wave=(0.012 * s[2], 0.0))
        + _curved(0.15, 0.07, 0.88, 0.07, bow=(0.0, 0.012 * s[3]))
        + [_line(0.15, 0.50, 0.69, 0.50)]
        + _curved(0.15, 0.93, 0.88, 0.93, bow=(0.0, 0.012 * s[4]))
        + _nick(0.15, 0.30 + 0.055 * s[0], (0.0, 1.0))
        + _nick(0.46 + 0.055 * s[1], 0.07, (1.0, 0.0))
        + _nick(0.52 + 0.055 * s[3], 0.93, (1.0, 0.0))
    )


def _h_glyph(s: tuple[int, ...]) -> list[Stroke]:
    # a crack on each upright and one on the crossbar
    return (
        _curved(0.14, 0.03, 0.14, 0.97, wave=(0.012 * s[2], 0.0))
        + _curved(0.86, 0.03, 0.86, 0.97, wave=(0.012 * s[4], 0.0))
        + _curved(0.14, 0.50, 0.86, 0.50, bow=(0.0, 0.012 * s[4]))
        + _nick(0.14, 0.28 + 0.048 * s[0], (0.0, 1.0))
        + _nick(0.86, 0.70 + 0.048 * s[1], (0.0, 1.0))
        + _nick(0.48 + 0.048 * s[3], 0.50, (1.0, 0.0))
    )


def _m_glyph(s: tuple[int, ...]) -> list[Stroke]:
    # cracks on both uprights and the left diagonal
    vx = 0.50 + 0.012 * s[2]
    vy = 0.68 + 0.012 * s[4]
    f = 0.45 + 0.055 * s[3]
    return (
        _curved(0.08, 0.03, 0.08, 0.97, bow=(0.012 * s[2], 0.0))
        + _curved(0.92, 0.03, 0.92, 0.97, bow=(0.012 * s[4], 0.0))
        + [_line(0.08, 0.03, vx, vy)]
        + [_line(0.92, 0.03, vx, vy)]
        + _nick(0.08, 0.40 + 0.055 * s[0], (0.0, 1.0))
        + _nick(0.92, 0.60 + 0.055 * s[1], (0.0, 1.0))
        + _nick(0.08 + 0.42 * f, 0.03 + 0.65 * f, (0.42, 0.65))
    )


def _n_glyph(s: tuple[int, ...]) -> list[Stroke]:
    # cracks on both uprights and the diagonal
    f = 0.48 + 0.042 * s[3]
    return (
        _curved(0.14, 0.03, 0.14, 0.97, bow=(0.012 * s[2], 0.0))
        + _curved(0.86, 0.03, 0.86, 0.97, bow=(0.012 * s[4], 0.0))
        + _curved(0.14, 0.05, 0.86, 0.95, wave=(0.010 * s[2], -0.010 * s[2]))
        + _nick(0.14, 0.30 + 0.042 * s[0], (0.0, 1.0))
        + _nick(0.86, 0.64 + 0.042 * s[1], (0.0, 1.0))
        + _nick(0.14 + 0.72 * f, 0.05 + 0.90 * f, (0.72, 0.90))
    )


def _r_glyph(leg: list[Stroke]) -> list[Stroke]:
    return [
        _line(0.16, 0.03, 0.16, 0.97),
        _line(0.16, 0.07, 0.55, 0.07),
        _arc(0.55, 0.27, 0.20, -math.pi / 2, math.pi / 2),
        _line(0.55, 0.47, 0.16, 0.47),
    ] + leg


def _w_glyph(s: tuple[int, ...]) -> list[Stroke]:
    # cracks on the outer strokes and the inner-left stroke; the central
    # peak keeps a sub-pixel wander
    px = 0.50 + 0.012 * s[2]
    py = 0.45 + 0.012 * s[4]
    u = 0.35 + 0.055 * s[0]
    v = 0.50 + 0.055 * s[1]
    g = 0.62 + 0.055 * s[3]
    return (
        _curved(0.06, 0.03, 0.28, 0.97, bow=(0.012 * s[2], 0.0))
        + [_line(0.28, 0.97, px, py)]
        + [_line(px, py, 0.72, 0.97)]
        + _curved(0.72, 0.97, 0.94, 0.03, bow=(0.012 * s[4], 0.0))
        + _nick(0.06 + 0.22 * u, 0.03 + 0.94 * u, (0.22, 0.94))
        + _nick(0.72 + 0.22 * v, 0.97 - 0.94 * v, (0.22, -0.94))
        + _nick(0.28 + 0.22 * g, 0.97 - 0.52 * g, (0.22, -0.52))
    )


# Sign patterns for the five-landmark classes: one pattern per cast, with
# every pair of casts disagreeing on at least three landmarks.
_CODES = ((1, 1, 1, 1, 1), (-1, -1, -1, 1, 1), (-1, 1, 1, -1, -1))

# Per class: three casts, each a stroke list. The per-cast tweaks are the
# fine features a bibliographer would sort on; steps stay near a pixel at
# the default canvas so casts are confusable before alignment.
CAST_LIBRARY: dict[str, list[list[Stroke]]] = {
    "A": [_a_glyph(y) for y in (0.55, 0.64, 0.73)],
    "B": [_b_glyph(r) for r in (0.16, 0.19, 0.22)],
    "E": [_e_glyph(c) for c in _CODES],
    "F": [_f_glyph(m) for m in (0.42, 0.56, 0.70)],
    "G": [_g_glyph(s) for s in (0.06, 0.20, 0.34)],
    "H": [_h_glyph(c) for c in _CODES],
    "M": [_m_glyph(c) for c in _CODES],
    "N": [_n_glyph(c) for c in _CODES],
    "R": [
        _r_glyph([_line(0.38, 0.47, 0.88, 0.97)]),
        _r_glyph([_line(0.38, 0.47, 0.79, 0.97)]),
        _r_glyph([_line(0.38, 0.47, 0.70, 0.97)]),
    ],
    "W": [_w_glyph(c) for c in _CODES],
}


def _segment_distance(px, py, x1, y1, x2, y2):
    dx, dy = x2 - x1, y2 - y1
    norm2 = dx * dx + dy * dy
    if norm2 < 1e-12:
        return np.hypot(px - x1, py - y1)
    t = np.clip(((px - x1) * dx + (py - y1) * dy) / norm2, 0.0, 1.0)
    return np.hypot(px - (x1 + t * dx), py - (y1 + t * dy))


def _arc_distance(px, py, cx, cy, r, a0, a1):
    # distance to the arc's swept circle portion; off-sweep points fall
    # back to the nearer endpoint
    ang = np.arctan2(py - cy, px - cx)
    sweep = (ang - a0) % (2 * math.pi)
    on_arc = sweep <= (a1 - a0) % (2 * math.pi) if a1 - a0 < 2 * math.pi else np.ones_like(sweep, bool)
    ring = np.abs(np.hypot(px - cx, py - cy) - r)
    e0 = np.hypot(px - (cx + r * math.cos(a0)), py - (cy + r * math.sin(a0)))
    e1 = np.hypot(px - (cx + r * math.cos(a1)), py - (cy + r * math.sin(a1)))
    return np.where(on_arc, ring, np.minimum(e0, e1))


def render_cast(
    strokes: list[Stroke],
    canvas: int = CANVAS_SIZE,
    thickness: float | None = None,
    margin: float = 5.0,
) -> np.ndarray:
    """Rasterize a stroke list to a binary (canvas, canvas) array."""
    if thickness is None:
        thickness = DEFAULT_THICKNESS
    box = canvas - 2 * margin
    ii, jj = np.meshgrid(np.arange(canvas), np.arange(canvas), indexing="ij")
    py = ii.astype(np.float64)
    px = jj.astype(np.float64)
    ink = np.zeros((canvas, canvas), dtype=bool)
    gaps = np.zeros((canvas, canvas), dtype=bool)
    for stroke in strokes:
        kind = stroke[0]
        t_scale = stroke[-1]
        if kind in ("line", "gap"):
            x1, y1, x2, y2 = (margin + v * box for v in stroke[1:5])
            dist = _segment_distance(px, py, x1, y1, x2, y2)
        elif kind == "arc":
            cx, cy = margin + stroke[1] * box, margin + stroke[2] * box
            dist = _arc_distance(px, py, cx, cy, stroke[3] * box, stroke[4], stroke[5])
        else:
            raise ValueError(f"unknown stroke kind: {kind}")
        if kind == "gap":
            # hairline flaw carved out of the ink, as from a cracked stamp
            gaps |= dist <= thickness * t_scale / 2.0
        else:
            ink |= dist <= thickness * t_scale / 2.0
    return (ink & ~gaps).astype(np.float64)


def base_casts(char_class: str, canvas: int = CANVAS_SIZE) -> list[GlyphImage]:
    """Return the three binary base casts for a character class."""
    if char_class not in CAST_LIBRARY:
        raise ValueError(
            f"no casts for {char_class!r}; available: {sorted(CAST_LIBRARY)}"
        )
    return [
        GlyphImage(
            pixels=render_cast(strokes, canvas=canvas),
            char_class=char_class,
            true_font=cast_id,
            source_id=f"cast:{char_class}:{cast_id}",
        )
        for cast_id, strokes in enumerate(CAST_LIBRARY[char_class])
    ]


def available_classes() -> list[str]:
    return sorted(CAST_LIBRARY)
