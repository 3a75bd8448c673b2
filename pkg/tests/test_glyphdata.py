import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glyphattn.glyphdata import (
    CorpusConfig,
    GlyphError,
    crop_text_region,
    generate_sample,
    glyph_bitmap,
    grayscale,
    load_corpus,
    make_corpus,
    region_bbox,
    render_sample,
)


def check_invariants(s):
    region = s.region_mask[0] > 0
    active = s.char_masks[: s.n_chars] > 0
    for m in active:
        assert m.any()
        assert not (m & ~region).any()
    assert active.sum(axis=0).max() <= 1  # pairwise disjoint
    assert not s.char_masks[s.n_chars :].any()
    assert np.all((s.image >= -1) & (s.image <= 1))
    assert set(np.unique(s.region_mask)) <= {0.0, 1.0}
    assert set(np.unique(s.char_masks)) <= {0.0, 1.0}


def test_single_char_mask_is_the_ink():
    s = render_sample([0], 0, np.random.default_rng(3))
    nonempty = [i for i in range(8) if s.char_masks[i].any()]
    assert nonempty == [0]
    ys, xs = np.nonzero(s.char_masks[0])
    bm = glyph_bitmap("A", 0)
    assert s.char_masks[0].sum() == bm.sum()
    assert np.array_equal(s.char_masks[0][ys.min() : ys.max() + 1, xs.min() : xs.max() + 1], bm)
    assert np.all(s.region_mask[0][s.char_masks[0] > 0] == 1)


def test_two_chars_disjoint():
    s = render_sample([0, 1], 1, np.random.default_rng(0))
    assert not (s.char_masks[0] * s.char_masks[1]).any()


def test_render_is_deterministic():
    a = render_sample([2, 5, 7], 2, np.random.default_rng(9))
    b = render_sample([2, 5, 7], 2, np.random.default_rng(9))
    assert a.equals(b)
    assert a.image.tobytes() == b.image.tobytes()


def test_render_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(GlyphError):
        render_sample([], 0, rng)
    with pytest.raises(GlyphError):
        render_sample(list(range(9)), 0, rng)
    with pytest.raises(GlyphError):
        render_sample([0], 3, rng)


def test_font_variants_differ():
    assert not np.array_equal(glyph_bitmap("B", 1)[:, :5], glyph_bitmap("B", 0))
    assert glyph_bitmap("B", 2).sum() == glyph_bitmap("B", 0).sum()


def test_corpus_round_trip(tmp_path):
    cfg = CorpusConfig(count=10, seed=4)
    man = make_corpus(cfg, tmp_path / "c")
    assert len(man.files) == 10
    man2, samples = load_corpus(tmp_path / "c")
    assert man2.files == man.files and man2.alphabet == cfg.alphabet
    for i, s in enumerate(samples):
        assert s.equals(generate_sample(cfg, i))


def test_corpus_deterministic(tmp_path):
    cfg = CorpusConfig(count=6, seed=11)
    make_corpus(cfg, tmp_path / "a")
    make_corpus(cfg, tmp_path / "b")
    for name in ["manifest.txt"] + [f"sample_{i:05d}.bin" for i in range(6)]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_corpus_invariant_sweep():
    cfg = CorpusConfig(count=200, height=32, width=32)
    for i in range(cfg.count):
        check_invariants(generate_sample(cfg, i))


def test_parallel_equals_serial():
    cfg = CorpusConfig(count=20, seed=2)
    serial = [generate_sample(cfg, i) for i in range(20)]
    assert all(generate_sample(cfg, i).equals(serial[i]) for i in reversed(range(20)))


def test_grayscale_cases():
    white = np.ones((3, 4, 4))
    assert np.array_equal(grayscale(white), np.ones((1, 4, 4)))
    one = np.random.default_rng(0).uniform(-1, 1, (1, 3, 3))
    assert np.array_equal(grayscale(one), one)
    px = np.array([0.3, 0.6, 0.9]).reshape(3, 1, 1)
    assert grayscale(px)[0, 0, 0] == pytest.approx(0.6, abs=1e-15)
    with pytest.raises(GlyphError):
        grayscale(np.ones((2, 3, 3)))


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_grayscale_within_channel_range(px):
    g = grayscale(np.array(px).reshape(3, 1, 1))[0, 0, 0]
    assert min(px) - 1e-15 <= g <= max(px) + 1e-15


def _sample_with_region(image, region):
    from glyphattn.glyphdata import GlyphSample

    return GlyphSample(image, region, [0], np.zeros((8,) + image.shape[1:]), [0], 0)


def test_crop_full_region_equals_resized_gray():
    from glyphattn.glyphdata import resize_nearest

    img = np.random.default_rng(1).uniform(-1, 1, (1, 32, 32))
    s = _sample_with_region(img, np.ones((1, 32, 32)))
    assert np.array_equal(crop_text_region(s), resize_nearest(img, 8, 32))


def test_crop_known_box_uses_only_those_pixels():
    img = np.full((1, 8, 8), -1.0)
    vals = np.arange(16, dtype=float).reshape(4, 4) / 16
    img[0, 1:5, 1:5] = vals
    region = np.zeros((1, 8, 8))
    region[0, 1:5, 1:5] = 1
    s = _sample_with_region(img, region)
    assert region_bbox(region) == (1, 5, 1, 5)
    out = crop_text_region(s, (4, 4))
    assert np.array_equal(out[0], vals)
    out = crop_text_region(s, (8, 32))
    assert set(np.unique(out)) <= set(vals.ravel())


def test_crop_contains_all_ink():
    cfg = CorpusConfig(count=30, seed=5)
    for i in range(30):
        s = generate_sample(cfg, i)
        y0, y1, x0, x1 = region_bbox(s.region_mask)
        ink = s.char_masks.any(axis=0)
        ys, xs = np.nonzero(ink)
        assert ys.min() >= y0 and ys.max() < y1 and xs.min() >= x0 and xs.max() < x1
        crop = grayscale(s.image)[0, y0:y1, x0:x1]
        assert np.array_equal(crop[ink[y0:y1, x0:x1]], grayscale(s.image)[0][ink])


def test_crop_empty_region():
    s = _sample_with_region(np.zeros((1, 4, 4)), np.zeros((1, 4, 4)))
    with pytest.raises(GlyphError):
        crop_text_region(s)
