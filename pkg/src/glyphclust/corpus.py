"""Glyph image datasets: image IO, normalization, binarization, manifests.

Images are square grayscale rasters with values in [0, 1]. Datasets are
described by a JSON Lines manifest (one entry per image, optional header
line carrying the canvas size and alphabet). Supported file formats are
binary PGM (P5, maxval up to 255) and 8-bit grayscale PNG.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

CANVAS_SIZE = 32


@dataclass
class GlyphImage:
    """A normalized glyph raster plus provenance metadata."""

    pixels: np.ndarray  # (H, W) float64 in [0, 1]
    char_class: str
    true_font: int | None = None
    source_id: str = ""

    def copy_with(self, pixels: np.ndarray) -> "GlyphImage":
        return GlyphImage(pixels, self.char_class, self.true_font, self.source_id)


@dataclass
class DatasetManifest:
    """Parsed manifest: entry dicts plus dataset-level settings."""

    entries: list[dict] = field(default_factory=list)
    canvas_size: int = CANVAS_SIZE
    alphabet: list[str] | None = None


def normalize_minmax(pixels: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; constant images map to all zeros."""
    pixels = np.asarray(pixels, dtype=np.float64)
    lo = pixels.min()
    span = pixels.max() - lo
    if span < 1e-12:
        return np.zeros_like(pixels)
    return (pixels - lo) / span


def resample_bilinear(pixels: np.ndarray, size: int) -> np.ndarray:
    """Resample a 2-D array to size x size with bilinear interpolation.

    Output pixel centers map to input coordinates via the usual
    half-pixel alignment, with edge clamping; a same-size resample is
    the identity.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w = pixels.shape

    def axis_coords(n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        c = (np.arange(size) + 0.5) * (n_in / size) - 0.5
        c = np.clip(c, 0.0, n_in - 1.0)
        i0 = np.floor(c).astype(np.int64)
        i0 = np.minimum(i0, n_in - 2) if n_in > 1 else np.zeros_like(i0)
        return i0, i0 + (1 if n_in > 1 else 0), c - i0

    r0, r1, fr = axis_coords(h)
    c0, c1, fc = axis_coords(w)
    fr = fr[:, None]
    fc = fc[None, :]
    top = pixels[np.ix_(r0, c0)] * (1 - fc) + pixels[np.ix_(r0, c1)] * fc
    bot = pixels[np.ix_(r1, c0)] * (1 - fc) + pixels[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bot * fr


def binarize(img: GlyphImage, threshold: float) -> GlyphImage:
    """Threshold to {0, 1}: output is 1 exactly where pixel >= threshold."""
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return img.copy_with((img.pixels >= threshold).astype(np.float64))


# ---------------------------------------------------------------------------
# image file IO


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"not a binary PGM (P5) file: {path}")
    # header tokens: magic, width, height, maxval; '#' comments allowed
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    if maxval > 255:
        raise ValueError(f"16-bit PGM not supported (maxval {maxval}): {path}")
    if len(data) - pos < width * height:
        raise ValueError(f"truncated PGM raster: {path}")
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return raster.reshape(height, width).astype(np.float64) / maxval


def _write_pgm(pixels: np.ndarray, path: Path) -> None:
    h, w = pixels.shape
    quantized = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quantized.tobytes())


def load_image(path: str | Path) -> np.ndarray:
    """Load a PGM or grayscale PNG file as a float array in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image file not found: {path}")
    if path.suffix.lower() == ".pgm":
        return _read_pgm(path)
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError(
                f"expected 8-bit grayscale image, got mode {im.mode!r}: {path}"
            )
        return np.asarray(im, dtype=np.float64) / 255.0


def save_image(img: GlyphImage | np.ndarray, path: str | Path) -> None:
    """Write pixels to PGM or PNG by extension, quantized to 8 bits.

    A load of the saved file reproduces the pixels to within 1/255.
    """
    pixels = img.pixels if isinstance(img, GlyphImage) else np.asarray(img)
    path = Path(path)
    if not path.parent.exists():
        raise IOError(f"parent directory does not exist: {path.parent}")
    if path.suffix.lower() == ".pgm":
        _write_pgm(pixels, path)
    elif path.suffix.lower() == ".png":
        quantized = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(quantized, mode="L").save(path)
    else:
        raise ValueError(f"unsupported image extension: {path.suffix}")


# ---------------------------------------------------------------------------
# manifests


def read_manifest(manifest_path: str | Path) -> DatasetManifest:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    manifest = DatasetManifest()
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{manifest_path}:{line_no}: bad JSON: {exc}") from exc
            if "path" in obj:
                manifest.entries.append(obj)
            else:
                manifest.canvas_size = int(obj.get("canvas_size", CANVAS_SIZE))
                if "alphabet" in obj:
                    manifest.alphabet = list(obj["alphabet"])
    if manifest.alphabet is not None:
        for entry in manifest.entries:
            if entry["char_class"] not in manifest.alphabet:
                raise ValueError(
                    f"char_class {entry['char_class']!r} not in declared alphabet"
                )
    return manifest


def write_manifest(
    entries: list[dict],
    manifest_path: str | Path,
    canvas_size: int = CANVAS_SIZE,
    alphabet: list[str] | None = None,
) -> None:
    """Write a JSON Lines manifest with a leading header line."""
    header: dict = {"canvas_size": canvas_size}
    if alphabet is not None:
        header["alphabet"] = sorted(alphabet)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def load_dataset(manifest_path: str | Path) -> list[GlyphImage]:
    """Load all images referenced by a manifest, in manifest order.

    Every image is bilinearly resampled to the manifest canvas size and
    min-max normalized to [0, 1].
    """
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    base = manifest_path.parent
    dataset: list[GlyphImage] = []
    for entry in manifest.entries:
        img_path = Path(entry["path"])
        if not img_path.is_absolute():
            img_path = base / img_path
        pixels = load_image(img_path)
        if pixels.shape != (manifest.canvas_size, manifest.canvas_size):
            pixels = resample_bilinear(pixels, manifest.canvas_size)
        pixels = normalize_minmax(pixels)
        true_font = entry.get("true_font")
        dataset.append(
            GlyphImage(
                pixels=pixels,
                char_class=str(entry["char_class"]),
                true_font=None if true_font is None else int(true_font),
                source_id=str(entry.get("source_id", "")),
            )
        )
    return dataset
