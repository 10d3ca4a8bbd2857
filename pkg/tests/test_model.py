import numpy as np
import pytest
import torch
from sklearn.base import clone

from shadowlab import model
from shadowlab.exceptions import DatasetIOError, InvalidInputError, NumericalDivergenceError
from helpers import toy_pairs

TOY_SSGM = {"filters": {"dilate_radius": 1, "median_radius_pre": 1, "median_radius_post": 1}}


def tiny_config(**kw):
    base = dict(codec_widths=(4, 4), width=8, blocks=1, time_dim=8, time_hidden=16,
                steps=10, ssgm=TOY_SSGM)
    base.update(kw)
    return model.ModelConfig(**base)


def check_net():
    torch.manual_seed(0)
    net = model.Denoiser(latent_channels=2, width=4, blocks=1, time_dim=4, time_hidden=8)
    return model.randomize_parameters(net, seed=1)


def check_sample(seed=3, zero=False):
    g = torch.Generator().manual_seed(seed)
    draw = lambda *s: torch.randn(*s, generator=g, dtype=torch.float64)
    x, c, e = draw(2, 2, 4, 4), draw(2, 2, 4, 4), draw(2, 2, 4, 4)
    m = torch.rand(2, 1, 4, 4, generator=g, dtype=torch.float64)
    if zero:
        x, c, m, e = (torch.zeros_like(v) for v in (x, c, m, e))
    return x, c, m, torch.tensor([3, 70]), e


class TestCodec:
    @pytest.mark.parametrize("h,w", [(128, 128), (32, 48), (37, 50), (5, 3)])
    def test_round_trip_shape(self, rng, h, w):
        net = model.ShadowDiffusion(tiny_config())
        img = rng.random((h, w, 3))
        z = net.encode(img)
        assert z.shape == (4, -(-h // 4), -(-w // 4))
        out = net.decode(z, (h, w))
        assert out.shape == (h, w, 3)
        assert np.isfinite(out).all() and out.min() >= 0 and out.max() <= 1

    def test_default_latent(self, rng):
        net = model.ShadowDiffusion()
        assert net.encode(rng.random((128, 128, 3))).shape == (32, 32, 32)
        assert model.parameter_count(net.codec) > 0

    @pytest.mark.slow
    def test_pretraining_reconstructs_held_out(self):
        from shadowlab import metrics, synth
        rng = np.random.default_rng(0)
        train = [synth.toy_page(rng, 32) for _ in range(64)]
        held = [synth.toy_page(rng, 32) for _ in range(16)]
        net = model.ShadowDiffusion(model.ModelConfig())
        model.pretrain_codec(net, train, model.TrainConfig(codec_iterations=1500))
        scores = [metrics.psnr(net.decode(net.encode(p), p.shape[:2]), p) for p in held]
        assert np.mean(scores) >= 25.0


class TestTimeEmbedding:
    def test_sinusoid_at_zero(self):
        emb = model.sinusoidal_embedding(torch.tensor([0]), 64)[0].numpy()
        np.testing.assert_array_equal(emb, np.tile([0.0, 1.0], 32))

    def test_sinusoid_oracle(self):
        emb = model.sinusoidal_embedding(torch.tensor([7]), 8)[0].numpy()
        for i in range(4):
            f = 10000.0 ** (-i / 4)
            assert emb[2 * i] == pytest.approx(np.sin(7 * f), abs=1e-12)
            assert emb[2 * i + 1] == pytest.approx(np.cos(7 * f), abs=1e-12)

    def test_distinct_over_all_steps(self):
        emb = model.TimeEmbedding(64)(torch.arange(101)).detach().numpy()
        d = np.abs(emb[:, None, :] - emb[None, :, :]).max(axis=-1)
        np.fill_diagonal(d, np.inf)
        assert d.min() > 0

    def test_deterministic(self):
        te = model.TimeEmbedding(64)
        t = torch.tensor([5, 50])
        assert torch.equal(te(t), te(t))


class TestDenoiser:
    def test_zero_init_predicts_zero(self, rng):
        net = model.ShadowDiffusion(tiny_config())
        x = rng.standard_normal((4, 3, 3))
        e = net.predict_noise(x, rng.standard_normal((4, 3, 3)), rng.random((3, 3)), 5)
        assert e.shape == x.shape
        assert np.all(e == 0)

    def test_blocks_start_as_identity(self, rng):
        block = model.ModulatedBlock(6, 8)
        h = torch.from_numpy(rng.standard_normal((2, 6, 5, 5)))
        assert torch.equal(block(h, torch.zeros(2, 8, dtype=torch.float64)), h)

    def test_bit_identical(self, rng):
        net = check_net()
        s = check_sample()
        assert torch.equal(net(*s[:4]), net(*s[:4]))

    def test_shape_mismatch(self):
        net = check_net()
        x, c, m, t, _ = check_sample()
        with pytest.raises(InvalidInputError):
            net(x, c[..., :3], m, t)


class TestGradientCheck:
    def test_linear_model(self):
        lin = model.randomize_parameters(model.LinearNoisePredictor(2), seed=2)
        assert model.gradient_check(lin, check_sample()) <= 1e-6

    def test_tiny_denoiser(self):
        net = check_net()
        assert model.parameter_count(net) <= 1000
        assert model.gradient_check(net, check_sample()) <= 1e-3

    def test_degenerate_sample_zero_final_gradient(self):
        from shadowlab import loss
        torch.manual_seed(0)
        net = model.Denoiser(latent_channels=2, width=4, blocks=1, time_dim=4, time_hidden=8)
        x, c, m, t, e = check_sample(zero=True)
        loss.diff_loss(net(x, c, m, t), e).backward()
        assert torch.all(net.out.weight.grad == 0) and torch.all(net.out.bias.grad == 0)
        lin = model.LinearNoisePredictor(2)
        with torch.no_grad():
            lin.proj.bias.zero_()
        loss.diff_loss(lin(x, c, m, t), e).backward()
        assert torch.all(lin.proj.weight.grad == 0) and torch.all(lin.proj.bias.grad == 0)


def tiny_data(n=6, size=32, seed=0):
    s, g, m = toy_pairs(n, seed, size=size, sources=4)
    return s, g, m


class TestTraining:
    def _train(self, lam=0.5, iterations=3, seed=0, **kw):
        s, g, m = tiny_data()
        net = model.ShadowDiffusion(tiny_config(), seed=seed)
        tc = model.TrainConfig(batch_size=2, iterations=iterations, codec_iterations=3,
                               lam=lam, seed=seed, lr=1e-3, **kw)
        model.pretrain_codec(net, s + g, tc)
        data = model.prepare_training_data(net, s, g, m)
        return net, model.train_denoiser(net, data, tc)

    def test_lambda_one(self):
        _, reports = self._train(lam=1.0)
        for r in reports:
            assert r["l_total"] == r["l_diff"] and r["l_fea"] == 0.0

    def test_lambda_zero(self):
        _, reports = self._train(lam=0.0)
        for r in reports:
            assert r["l_total"] == r["l_fea"]

    def test_half(self):
        _, reports = self._train(lam=0.5)
        for r in reports:
            assert r["l_total"] == pytest.approx(0.5 * r["l_diff"] + 0.5 * r["l_fea"])

    def test_deterministic_trajectory(self):
        a, ra = self._train(iterations=4)
        b, rb = self._train(iterations=4)
        assert ra == rb
        for k, v in a.tensors().items():
            np.testing.assert_array_equal(v, b.tensors()[k])

    @pytest.mark.parametrize("opt", ["sgd", "lion"])
    def test_other_optimizers(self, opt):
        _, reports = self._train(iterations=2, optimizer=opt, lr_schedule="cosine")
        assert all(np.isfinite(r["l_total"]) for r in reports)

    def test_codec_frozen(self):
        net, _ = self._train(iterations=1)
        assert not any(p.requires_grad for p in net.codec.parameters())

    def test_prior_var_estimated(self):
        net, _ = self._train(iterations=1)
        assert net.config.prior_var > 0

    def test_divergence_error(self):
        s, g, m = tiny_data()
        net = model.ShadowDiffusion(tiny_config())
        tc = model.TrainConfig(batch_size=2, iterations=1, codec_iterations=0, lam=1.0)
        data = model.prepare_training_data(net, s, g, m)
        data.z_shadow[0, 0, 0, 0] = float("nan")
        opt = model.make_optimizer("adam", net.denoiser.parameters(), 1e-3)
        with pytest.raises(NumericalDivergenceError, match="samples"):
            model.train_step(net, data, [0, 1], opt, tc, np.random.default_rng(0))

    @pytest.mark.parametrize("kw", [dict(lam=1.5), dict(lr=0.0), dict(batch_size=0),
                                    dict(optimizer="rmsprop"), dict(lr_schedule="step"),
                                    dict(diff_weighting="x"), dict(mask_source="x")])
    def test_config_validation(self, kw):
        with pytest.raises(InvalidInputError):
            model.TrainConfig(**kw)


class TestRemoveShadow:
    def test_zero_mask_is_codec_round_trip(self, rng):
        net = model.ShadowDiffusion(tiny_config())
        model.randomize_parameters(net.denoiser, seed=4, scale=0.1)
        img = rng.random((16, 16, 3))
        out = model.remove_shadow(net, img, rng, mask=np.zeros((16, 16)))
        np.testing.assert_array_equal(out, net.decode(net.encode(img), (16, 16)))

    def test_seeded(self, rng):
        net = model.ShadowDiffusion(tiny_config())
        s, _, m = tiny_data(1)
        a = model.remove_shadow(net, s[0], np.random.default_rng(9), mask=m[0])
        b = model.remove_shadow(net, s[0], np.random.default_rng(9), mask=m[0])
        np.testing.assert_array_equal(a, b)
        assert a.shape == s[0].shape

    def test_score_from_noise(self):
        e = np.array([1.0, 2.0, 3.0])
        gain = np.array([0.5, 0.0, 1.0])
        np.testing.assert_array_equal(model.score_from_noise(e, gain, 2.0), [-1.0, 0.0, -1.5])


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        net = model.ShadowDiffusion(tiny_config(prior_var=0.25))
        model.randomize_parameters(net.denoiser, seed=5, scale=0.1)
        net.save(tmp_path / "m.ckpt")
        back = model.ShadowDiffusion.load(tmp_path / "m.ckpt")
        assert back.config == net.config
        for k, v in net.tensors().items():
            np.testing.assert_array_equal(back.tensors()[k], v)
        x = rng.standard_normal((4, 2, 2))
        np.testing.assert_array_equal(back.predict_noise(x, x, np.ones((2, 2)), 3),
                                      net.predict_noise(x, x, np.ones((2, 2)), 3))

    def test_header_is_text(self, tmp_path):
        model.save_checkpoint(tmp_path / "c", {"a": np.arange(3.0)}, {"k": 1})
        raw = (tmp_path / "c").read_bytes()
        assert raw.startswith(model.CHECKPOINT_MAGIC.encode())
        assert b"tensor a 3\nend\n" in raw
        meta, tensors = model.load_checkpoint(tmp_path / "c")
        assert meta == {"k": 1}
        np.testing.assert_array_equal(tensors["a"], [0.0, 1.0, 2.0])

    def test_corrupt(self, tmp_path):
        model.save_checkpoint(tmp_path / "c", {"a": np.arange(3.0)}, {})
        raw = (tmp_path / "c").read_bytes()
        (tmp_path / "t").write_bytes(raw[:-4])
        (tmp_path / "m").write_bytes(b"nope\nend\n")
        for name in ("t", "m", "missing"):
            with pytest.raises(DatasetIOError):
                model.load_checkpoint(tmp_path / name)


class TestEstimator:
    def test_params_and_clone(self):
        est = model.ShadowRemover(iterations=5, lam=0.3)
        params = est.get_params()
        assert params["iterations"] == 5 and params["lam"] == 0.3
        twin = clone(est)
        assert twin.get_params() == params
        assert est.set_params(seed=7).seed == 7

    def test_unfitted(self, rng):
        with pytest.raises(InvalidInputError):
            model.ShadowRemover().predict(rng.random((1, 8, 8, 3)))

    def test_fit_predict_score(self):
        s, g, m = tiny_data(4)
        est = model.ShadowRemover(iterations=2, codec_iterations=2, batch_size=2, width=8,
                                  blocks=1, codec_widths=(4, 4), steps=5, ssgm_params=TOY_SSGM)
        assert est.fit(s, g, masks=m) is est
        assert len(est.history_) == 2 and len(est.codec_history_) == 2
        pred = est.predict(s)
        assert pred.shape == (4, 32, 32, 3)
        np.testing.assert_array_equal(pred, est.transform(s))
        assert np.isfinite(est.score(s, g))

    def test_rejects_bad_input(self, rng):
        est = model.ShadowRemover()
        with pytest.raises(InvalidInputError):
            est.fit([rng.random((8, 8, 3))], [rng.random((8, 8, 3))] * 2)
        with pytest.raises(InvalidInputError):
            est.fit([rng.random((8, 8))], [rng.random((8, 8))])
