import numpy as np
import pytest

from glyphattn.config import ModelConfig
from glyphattn.denoiser import NoiseSchedule, cross_attention, forward_diffuse, init_denoiser, predict_noise
from glyphattn.gradcore import DimensionError, Tape, Tensor, backward, rel_error, tmean
from glyphattn.losses import attention_loss
from glyphattn.maskops import LatentCharMasks

TINY = ModelConfig(height=8, width=8, n_max=4, num_classes=8, d_emb=6, d=6, hidden=6, layers=2, T=10)


def test_schedule():
    s = NoiseSchedule.linear()
    assert s.T == 100 and s.alpha_bar[0] == 1.0
    assert s.betas[0] == 1e-4 and s.betas[-1] == pytest.approx(0.02)
    assert np.all(np.diff(s.alpha_bar) < 0)


class TestForwardDiffuse:
    def test_identity_at_zero(self, rng):
        z0 = rng.normal(size=(2, 1, 4, 4))
        assert np.array_equal(forward_diffuse(z0, 0, rng.normal(size=z0.shape), NoiseSchedule.linear()), z0)

    def test_limit_is_noise(self, rng):
        s = NoiseSchedule(np.ones(1), np.array([1.0, 0.0]))
        eps = rng.normal(size=(3, 3))
        assert np.array_equal(forward_diffuse(rng.normal(size=(3, 3)), 1, eps, s), eps)

    def test_quarter(self):
        s = NoiseSchedule(np.array([0.75]), np.array([1.0, 0.25]))
        z = forward_diffuse(np.zeros((2, 2)), 1, np.ones((2, 2)), s)
        assert np.allclose(z, np.sqrt(0.75), atol=1e-15)
        assert np.sqrt(0.75) == pytest.approx(0.8660, abs=1e-4)

    def test_per_row_timesteps(self, rng):
        s = NoiseSchedule.linear()
        z0, eps = rng.normal(size=(2, 1, 3, 3)), rng.normal(size=(2, 1, 3, 3))
        both = forward_diffuse(z0, np.array([5, 80]), eps, s)
        assert np.array_equal(both[1], forward_diffuse(z0[1], 80, eps[1], s))

    def test_errors(self):
        s = NoiseSchedule.linear(T=10)
        with pytest.raises(ValueError):
            forward_diffuse(np.zeros(3), 11, np.zeros(3), s)
        with pytest.raises(DimensionError):
            forward_diffuse(np.zeros(3), 1, np.zeros(4), s)

    def test_second_moment(self):
        s = NoiseSchedule.linear()
        rng = np.random.default_rng(7)
        z0 = rng.normal(size=(16, 16))
        for t in (10, 50, 100):
            ab = s.alpha_bar[t]
            want = ab * np.sum(z0**2) + (1 - ab) * z0.size
            got = np.mean([np.sum(forward_diffuse(z0, t, rng.standard_normal(z0.shape), s) ** 2) for _ in range(1000)])
            assert abs(got - want) / want < 0.05


@pytest.fixture
def model():
    return init_denoiser(TINY, np.random.default_rng(11))


def _inputs(rng, b=2):
    z = rng.normal(size=(b, 1, 8, 8))
    region = np.zeros((b, 1, 8, 8))
    region[:, :, 2:6, 1:7] = 1
    y = Tensor(rng.normal(size=(b, 4, 6)))
    return z, region, y


class TestCrossAttention:
    def test_single_token(self, model, rng):
        h = Tensor(rng.normal(size=(1, 16, 6)))
        _, a = cross_attention(model, "l0.", h, Tensor(rng.normal(size=(1, 1, 6))), (4, 4))
        assert np.array_equal(a.data, np.ones((1, 1, 4, 4)))

    def test_zero_query_uniform(self, model, rng):
        p = dict(model)
        p["l0.wq"] = Tensor(np.zeros((6, 6)))
        _, a = cross_attention(p, "l0.", Tensor(rng.normal(size=(2, 16, 6))), Tensor(rng.normal(size=(2, 4, 6))), (4, 4))
        assert np.allclose(a.data, 0.25, atol=1e-15)

    def test_distribution(self, model):
        rng = np.random.default_rng(0)
        for _ in range(20):
            h = Tensor(rng.normal(size=(1, 16, 6)) * 3)
            _, a = cross_attention(model, "l1.", h, Tensor(rng.normal(size=(1, 4, 6)) * 3), (4, 4))
            assert a.data.min() >= 0 and a.data.max() <= 1
            assert np.all(np.abs(a.data.sum(1) - 1) < 1e-12)

    def test_bad_spatial_size(self, model, rng):
        with pytest.raises(DimensionError):
            cross_attention(model, "l0.", Tensor(rng.normal(size=(1, 15, 6))), Tensor(rng.normal(size=(1, 4, 6))), (4, 4))


class TestPredictNoise:
    def test_deterministic_and_shapes(self, model, rng):
        z, region, y = _inputs(rng)
        e1, s1 = predict_noise(model, z, 3, y, region, TINY)
        e2, s2 = predict_noise(model, z, 3, y, region, TINY)
        assert e1.shape == (2, 1, 8, 8)
        assert np.array_equal(e1.data, e2.data)
        assert len(s1) == TINY.layers
        for a, b in zip(s1, s2):
            assert a.shape == (2, 4, 8, 8)
            assert np.array_equal(a.data, b.data)
            assert np.all(np.abs(a.data.sum(1) - 1) < 1e-12)

    def test_region_is_live(self, model, rng):
        z, region, y = _inputs(rng)
        e1, _ = predict_noise(model, z, 3, y, region, TINY)
        e2, _ = predict_noise(model, z, 3, y, 1 - region, TINY)
        assert np.linalg.norm(e1.data - e2.data) > 0

    def test_shape_mismatch(self, model, rng):
        z, region, y = _inputs(rng)
        with pytest.raises(DimensionError):
            predict_noise(model, z[:, :, :4], 3, y, region, TINY)

    def test_gradients_match_fd(self, model, rng):
        z, region, y = _inputs(rng)
        eps = rng.normal(size=z.shape)
        t = np.array([2, 7])

        def f():
            e, _ = predict_noise(model, z, t, y, region, TINY)
            return tmean((Tensor(eps) - e) * (Tensor(eps) - e))

        for p in model.values():
            p.grad = None
        with Tape() as tape:
            out = f()
        backward(out, tape)
        h = 1e-6
        sub = np.random.default_rng(1)
        for name, p in model.items():
            flat = p.data.reshape(-1)
            # a handful of coordinates per tensor keeps this quick
            idx = sub.choice(flat.size, size=min(6, flat.size), replace=False)
            g = p.grad.reshape(-1)[idx] if p.grad is not None else np.zeros(len(idx))
            fd = np.empty(len(idx))
            for j, i in enumerate(idx):
                old = flat[i]
                flat[i] = old + h
                up = f().item()
                flat[i] = old - h
                dn = f().item()
                flat[i] = old
                fd[j] = (up - dn) / (2 * h)
            if not np.any(fd) and not np.any(g):
                continue
            assert rel_error(g, fd) < 1e-4, name

    def test_attention_loss_reaches_query_weights(self, model, rng):
        z, region, y = _inputs(rng)
        m = (rng.uniform(size=(2, 4, 8, 8)) > 0.7).astype(float)
        masks = LatentCharMasks(m, np.array([[1, 1, 0, 0], [1, 1, 1, 0]], bool))
        for p in model.values():
            p.grad = None
        with Tape() as tape:
            _, stack = predict_noise(model, z, 4, y, region, TINY)
            loss = attention_loss(stack, masks)
        backward(loss, tape)
        for l in range(TINY.layers):
            assert np.linalg.norm(model[f"l{l}.wq"].grad) > 0
