import numpy as np
import pytest

from glyphattn.config import ModelConfig
from glyphattn.gradcore import Tape, Tensor, backward, rel_error
from glyphattn.losses import align_loss
from glyphattn.textenc import (
    align_features,
    classify_chars,
    encode_text,
    image_features,
    init_heads,
    init_textenc,
    token_indices,
)

CFG = ModelConfig(n_max=4, num_classes=8, d_emb=8, d=8, d_align=6, d_img=5)


@pytest.fixture
def params():
    rng = np.random.default_rng(3)
    return init_textenc(CFG, rng), init_heads(CFG, rng)


def test_deterministic(params):
    te, _ = params
    a = encode_text(te, [[1, 2, 3]], CFG).data
    b = encode_text(te, [[1, 2, 3]], CFG).data
    assert np.array_equal(a, b)
    assert a.shape == (1, 4, 8)


def test_positional_sensitivity(params):
    te, _ = params
    y = encode_text(te, [[0, 1], [1, 0]], CFG).data
    assert not np.allclose(y[0, 0], y[1, 0])
    assert not np.allclose(y[0, 1], y[1, 1])


def test_pad_rows_identical(params):
    te, _ = params
    y = encode_text(te, [[5], [2, 3]], CFG).data
    assert np.array_equal(y[0, 1], y[0, 2])
    assert np.array_equal(y[0, 1], y[0, 3])
    assert np.array_equal(y[0, 2], y[1, 3])


def test_token_indices_errors():
    with pytest.raises(ValueError):
        token_indices([[0] * 5], 4, 8)
    with pytest.raises(IndexError):
        token_indices([[8]], 4, 8)
    assert token_indices([[1]], 3, 8).tolist() == [[1, 8, 8]]


def test_zero_image_zero_bias_gives_zero_visual_feature(params):
    _, heads = params
    y = Tensor(np.zeros((2, 4, 8)))
    _, v = align_features(heads, y, np.zeros((2, 8, 32)), CFG)
    assert not v.data.any()


def test_image_encoder_linear(params, rng):
    _, heads = params
    img = rng.normal(size=(3, 8, 32))
    b = heads["img_b"].data
    one = image_features(heads, img, CFG).data - b
    two = image_features(heads, 2 * img, CFG).data - b
    assert np.allclose(two, 2 * one, atol=1e-13)


def test_image_shape_error(params):
    with pytest.raises(ValueError):
        image_features(params[1], np.zeros((1, 8, 16)), CFG)


def test_classifier_uniform_with_zero_weights(params, rng):
    _, heads = params
    heads = dict(heads, cls_w=Tensor(np.zeros((8, 8))), cls_b=Tensor(np.zeros(8)))
    p = classify_chars(heads, Tensor(rng.normal(size=(2, 4, 8)))).data
    assert np.allclose(p, 1 / 8, atol=1e-15)


def test_classifier_rows_sum_to_one(params, rng):
    p = classify_chars(params[1], Tensor(rng.normal(size=(3, 4, 8)) * 5)).data
    assert np.all(np.abs(p.sum(-1) - 1) < 1e-12)
    assert np.all(p >= 0)


def test_align_head_gradients(params, rng):
    _, heads = params
    y = Tensor(rng.normal(size=(2, 4, 8)))
    img = rng.normal(size=(2, 8, 32))
    names = list(heads)

    def f():
        return align_loss(*align_features(heads, y, img, CFG))

    for p in heads.values():
        p.grad = None
    with Tape() as tape:
        out = f()
    backward(out, tape)
    h = 1e-6
    for name in names:
        if name.startswith("cls"):
            continue
        p = heads[name]
        g = p.grad
        fd = np.zeros_like(p.data)
        for i in np.ndindex(p.data.shape):
            old = p.data[i]
            p.data[i] = old + h
            up = f().item()
            p.data[i] = old - h
            dn = f().item()
            p.data[i] = old
            fd[i] = (up - dn) / (2 * h)
        assert rel_error(g, fd) < 1e-4, name
