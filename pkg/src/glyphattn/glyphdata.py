"""Synthetic glyph corpus: words rasterized from an embedded 5x7 bitmap font
with exact per-character ink masks."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats

log = logging.getLogger(__name__)

# 5x7 atlas, one string of 7 rows per glyph ('#' = ink).
_ATLAS = {
    "A": [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    "B": ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."],
    "C": [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."],
    "D": ["###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###.."],
    "E": ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
    "F": ["#####", "#....", "#....", "####.", "#....", "#....", "#...."],
    "G": [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"],
    "H": ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    "I": [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."],
    "J": ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."],
    "K": ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"],
    "L": ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
    "M": ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"],
    "N": ["#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"],
    "O": [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    "P": ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."],
    "Q": [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"],
    "R": ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"],
    "S": [".####", "#....", "#....", ".###.", "....#", "....#", "####."],
    "T": ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
    "U": ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    "V": ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."],
    "W": ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."],
    "X": ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"],
    "Y": ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."],
    "Z": ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"],
}

DEFAULT_ALPHABET = "ABCDEFGHIJKLMNOP"
FONT_NAMES = ("plain", "bold", "italic")
GLYPH_H, GLYPH_W = 7, 5


class GlyphError(ValueError):
    pass


def _base_glyph(ch: str) -> np.ndarray:
    try:
        rows = _ATLAS[ch]
    except KeyError:
        raise GlyphError(f"no bitmap for character {ch!r}") from None
    return np.array([[c == "#" for c in r] for r in rows], dtype=bool)


def glyph_bitmap(ch: str, font_id: int) -> np.ndarray:
    """Boolean ink bitmap of ``ch`` in the given font variant."""
    g = _base_glyph(ch)
    if font_id == 0:
        return g
    if font_id == 1:
        # bold: dilate one pixel to the right
        out = np.zeros((GLYPH_H, GLYPH_W + 1), dtype=bool)
        out[:, :-1] |= g
        out[:, 1:] |= g
        return out
    if font_id == 2:
        # italic: shift the top three rows one pixel right
        out = np.zeros((GLYPH_H, GLYPH_W + 1), dtype=bool)
        out[:3, 1:] = g[:3]
        out[3:, :-1] = g[3:]
        return out
    raise GlyphError(f"unknown font_id {font_id}; have {len(FONT_NAMES)} fonts")


@dataclass
class GlyphSample:
    image: np.ndarray  # (C, H, W) in [-1, 1]
    region_mask: np.ndarray  # (1, H, W) binary
    text: list[int]
    char_masks: np.ndarray  # (n_max, H, W) binary
    labels: list[int]
    font_id: int

    @property
    def n_chars(self) -> int:
        return len(self.text)

    def active(self) -> np.ndarray:
        a = np.zeros(self.char_masks.shape[0], dtype=bool)
        a[: self.n_chars] = True
        return a

    def equals(self, other: "GlyphSample") -> bool:
        return (
            self.text == other.text
            and self.labels == other.labels
            and self.font_id == other.font_id
            and np.array_equal(self.image, other.image)
            and np.array_equal(self.region_mask, other.region_mask)
            and np.array_equal(self.char_masks, other.char_masks)
        )


def _background(rng: np.random.Generator, c: int, h: int, w: int) -> np.ndarray:
    # sum of a few low-frequency cosines, scaled into [-0.8, 0.0]
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    out = np.empty((c, h, w))
    for ch in range(c):
        field_ = np.zeros((h, w))
        for _ in range(3):
            fy, fx = rng.uniform(0.3, 2.0, size=2)
            ph = rng.uniform(0, 2 * np.pi)
            field_ += np.cos(2 * np.pi * (fy * yy + fx * xx) + ph)
        field_ = (field_ - field_.min()) / max(np.ptp(field_), 1e-12)
        out[ch] = -0.8 + 0.4 * field_ + rng.uniform(0.0, 0.4)
    return out


def render_sample(
    text,
    font_id: int,
    rng: np.random.Generator,
    *,
    height: int = 32,
    width: int = 32,
    channels: int = 1,
    n_max: int = 8,
    alphabet: str = DEFAULT_ALPHABET,
) -> GlyphSample:
    """Rasterize character indices ``text`` left-to-right at a random spot."""
    text = [int(i) for i in text]
    if not 1 <= len(text) <= n_max:
        raise GlyphError(f"text length {len(text)} outside [1, {n_max}]")
    if any(i < 0 or i >= len(alphabet) for i in text):
        raise GlyphError(f"character index out of range for alphabet of {len(alphabet)}")
    if not 0 <= font_id < len(FONT_NAMES):
        raise GlyphError(f"unknown font_id {font_id}; have {len(FONT_NAMES)} fonts")

    bitmaps = [glyph_bitmap(alphabet[i], font_id) for i in text]
    word_w = sum(b.shape[1] for b in bitmaps) + (len(bitmaps) - 1)
    if word_w + 2 > width or GLYPH_H + 2 > height:
        raise GlyphError(f"word of width {word_w} does not fit a {height}x{width} image")

    y0 = int(rng.integers(1, height - GLYPH_H))
    x0 = int(rng.integers(1, width - word_w))
    image = _background(rng, channels, height, width)
    ink = rng.uniform(0.7, 1.0, size=channels)

    char_masks = np.zeros((n_max, height, width))
    x = x0
    for pos, bm in enumerate(bitmaps):
        h, w = bm.shape
        char_masks[pos, y0 : y0 + h, x : x + w] = bm
        x += w + 1
    ink_any = char_masks.any(axis=0)
    for ch in range(channels):
        image[ch][ink_any] = ink[ch]

    region = np.zeros((1, height, width))
    region[0, y0 - 1 : y0 + GLYPH_H + 1, x0 - 1 : x0 + word_w + 1] = 1.0
    return GlyphSample(image, region, text, char_masks, list(text), int(font_id))


@dataclass
class CorpusConfig:
    count: int = 200
    height: int = 32
    width: int = 32
    channels: int = 1
    n_max: int = 8
    alphabet: str = DEFAULT_ALPHABET
    min_len: int = 2
    max_len: int = 4
    fonts: int = len(FONT_NAMES)
    seed: int = 0


@dataclass
class CorpusManifest:
    count: int
    height: int
    width: int
    channels: int
    n_max: int
    alphabet: str
    fonts: int
    seed: int
    files: list[str]
    root: Path | None = None

    @property
    def num_classes(self) -> int:
        return len(self.alphabet)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def generate_sample(cfg: CorpusConfig, index: int) -> GlyphSample:
    rng = sample_rng(cfg.seed, index)
    n = int(rng.integers(cfg.min_len, cfg.max_len + 1))
    text = rng.integers(0, len(cfg.alphabet), size=n).tolist()
    font = int(rng.integers(0, cfg.fonts))
    return render_sample(
        text, font, rng, height=cfg.height, width=cfg.width, channels=cfg.channels,
        n_max=cfg.n_max, alphabet=cfg.alphabet,
    )


def make_corpus(cfg: CorpusConfig, out_dir) -> CorpusManifest:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create corpus directory {out}: {e}") from e
    files = []
    for i in range(cfg.count):
        name = f"sample_{i:05d}.bin"
        formats.write_sample(out / name, generate_sample(cfg, i))
        files.append(name)
    man = CorpusManifest(
        cfg.count, cfg.height, cfg.width, cfg.channels, cfg.n_max, cfg.alphabet,
        cfg.fonts, cfg.seed, files, out,
    )
    formats.write_manifest(out / "manifest.txt", man)
    log.info("wrote %d samples to %s", cfg.count, out)
    return man


def load_corpus(root) -> tuple[CorpusManifest, list[GlyphSample]]:
    root = Path(root)
    man = formats.read_manifest(root / "manifest.txt")
    man.root = root
    samples = [formats.read_sample(root / f) for f in man.files]
    return man, samples


def grayscale(image: np.ndarray) -> np.ndarray:
    """Equal-weight channel mean; identity for one channel."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise GlyphError(f"grayscale expects 1 or 3 channels, got shape {image.shape}")
    if image.shape[0] == 1:
        return image.copy()
    return image.mean(axis=0, keepdims=True)


def resize_nearest(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape[-2:]
    ri = (np.arange(out_h) * h) // out_h
    ci = (np.arange(out_w) * w) // out_w
    return img[..., ri[:, None], ci[None, :]]


def region_bbox(region_mask: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(np.asarray(region_mask).reshape(region_mask.shape[-2:]))
    if ys.size == 0:
        raise GlyphError("empty region mask")
    return int(ys.min()), int(ys.max()) + 1, int(xs.min()), int(xs.max()) + 1


def crop_text_region(sample: GlyphSample, out_hw: tuple[int, int] = (8, 32)) -> np.ndarray:
    """Tight bounding-box crop of the grayscale image, resized to ``out_hw``."""
    y0, y1, x0, x1 = region_bbox(sample.region_mask)
    crop = grayscale(sample.image)[:, y0:y1, x0:x1]
    return resize_nearest(crop, *out_hw)
