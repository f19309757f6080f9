import numpy as np
import pytest

from diffmonitor import nn
from diffmonitor.config import PRESETS
from diffmonitor.diffusion import (DiffusionConfig, DiffusionModel, Standardizer, begin_sampling,
                                   build_model, denoise_step, forward_diffuse,
                                   make_linear_schedule, sample, spectro_to_windows,
                                   spectro_to_windows_raw, timestep_embedding, train_epoch,
                                   windows_to_spectro)
from diffmonitor.spectral import StftConfig

SMALL = DiffusionConfig(T=50, hidden=(32,), time_embedding_dim=8, batch_size=64, repeats=8)


def small_windows(rng, n=4, channels=2):
    t = np.arange(160) / 50.0
    base = np.sin(2 * np.pi * 1.5 * t)
    return base[None, None, :] * (1 + 0.1 * rng.standard_normal((n, channels, 1)))


class TestSchedule:
    def test_constant_beta_closed_form(self):
        s = make_linear_schedule(2, 30, 0.01, 0.01)
        assert np.allclose(s.alpha_bars, 0.99 ** np.arange(1, 31)[None, :], rtol=1e-13)

    def test_desk_defaults_reach_noise(self):
        cfg = DiffusionConfig()
        s = make_linear_schedule(3, cfg.T, cfg.beta_start, cfg.beta_end)
        assert s.alpha_bars[:, -1].max() < 0.01
        assert np.all(np.diff(s.alpha_bars, axis=1) < 0)

    def test_per_channel_ramps(self):
        s = make_linear_schedule(2, 10, (1e-4, 1e-3), (0.02, 0.05))
        assert s.betas[0, 0] == 1e-4 and s.betas[1, -1] == pytest.approx(0.05)
        assert np.allclose(np.diff(s.betas, 2, axis=1), 0.0, atol=1e-15)

    @pytest.mark.parametrize("start,end", [(0.0, 0.02), (0.02, 0.01), (1e-4, 1.0)])
    def test_invalid(self, start, end):
        with pytest.raises(ValueError):
            make_linear_schedule(1, 10, start, end)

    def test_gather(self):
        s = make_linear_schedule(2, 5)
        assert s.at(s.betas, np.array([1, 5])).shape == (2, 2, 1, 1)
        assert s.at(s.betas, np.array([5]))[0, 1, 0, 0] == s.betas[1, 4]


class TestRepresentation:
    def test_shape(self, rng):
        spec = windows_to_spectro(rng.standard_normal((3, 2, 160)))
        assert spec.shape == (3, 2, 24, 70)

    def test_round_trip_interior(self, rng):
        w = rng.standard_normal((2, 3, 160))
        back = spectro_to_windows_raw(windows_to_spectro(w), StftConfig(), 160)
        assert np.allclose(back[..., 1:-1], w[..., 1:-1], atol=1e-10)

    def test_wrong_rows(self):
        with pytest.raises(ValueError, match="stacked frequency rows"):
            spectro_to_windows_raw(np.zeros((1, 1, 10, 70)), StftConfig(), 160)

    def test_standardizer(self, rng):
        x = rng.standard_normal((5, 2, 4, 6)) * np.array([1.0, 7.0])[:, None, None] + 3
        s = Standardizer.fit(x)
        z = s.apply(x)
        assert np.allclose(z.mean(axis=(0, 2, 3)), 0, atol=1e-12)
        assert np.allclose(z.std(axis=(0, 2, 3)), 1)
        assert np.allclose(s.invert(z), x)

    def test_constant_channel_std_floor(self):
        s = Standardizer.fit(np.ones((2, 1, 3, 3)))
        assert s.std[0] == 1.0

    def test_embedding(self):
        e = timestep_embedding(np.array([0, 5]), 7)
        assert e.shape == (2, 7)
        assert np.allclose(e[0, :3], 0) and np.allclose(e[0, 3:6], 1)


class TestForward:
    def test_marginal_moments(self):
        s = make_linear_schedule(1, 100, 1e-4, 0.05)
        x0 = np.full((40000, 1, 1, 1), 2.0)
        xt, _ = forward_diffuse(x0, 60, s, 0)
        ab = s.alpha_bars[0, 59]
        assert xt.mean() == pytest.approx(np.sqrt(ab) * 2.0, abs=0.02)
        assert xt.var() == pytest.approx(1 - ab, rel=0.03)

    def test_last_step_is_standard_normal(self):
        s = make_linear_schedule(2, 200, 1e-4, 0.05)
        x0 = np.random.default_rng(3).standard_normal((5000, 2, 1, 1))  # standardized data
        xt, _ = forward_diffuse(x0, 200, s, 4)
        for c in range(2):
            assert abs(xt[:, c].mean()) < 0.05
            assert abs(xt[:, c].var() - 1) < 0.1

    def test_first_step_keeps_data(self, rng):
        s = make_linear_schedule(1, 100, 1e-6, 0.02)
        x0 = rng.standard_normal((3, 1, 4, 4))
        xt, _ = forward_diffuse(x0, 1, s, 0)
        assert np.allclose(xt, x0, atol=0.01)

    def test_seeded(self, rng):
        s = make_linear_schedule(1, 10)
        x0 = rng.standard_normal((2, 1, 3, 3))
        a, b = forward_diffuse(x0, 5, s, 7), forward_diffuse(x0, 5, s, 7)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_out_of_range(self):
        s = make_linear_schedule(1, 10)
        with pytest.raises(ValueError, match="t must lie"):
            forward_diffuse(np.zeros((1, 1, 1, 1)), 0, s)
        with pytest.raises(ValueError):
            forward_diffuse(np.zeros((1, 1, 1, 1)), 11, s)


class TestModel:
    def test_untrained_predicts_zero_and_loss_near_one(self, rng):
        model, data = build_model(small_windows(rng), SMALL)
        t = np.full(4, 10)
        xt, noise = forward_diffuse(data, t, model.schedule, 1)
        assert np.array_equal(model.predict_noise(xt, t), np.zeros_like(xt))
        loss, _ = model.loss_and_grads(xt, t, noise)
        assert loss == pytest.approx(1.0, abs=0.05)

    def test_loss_gradients(self, rng):
        cfg = DiffusionConfig(T=10, hidden=(3,), time_embedding_dim=4)
        model = DiffusionModel((1, 2, 2), cfg, seed=3)
        for p in model.parameters():
            p += 0.3 * rng.standard_normal(p.shape)
        model.touch()
        xt, noise = rng.standard_normal((3, 1, 2, 2)), rng.standard_normal((3, 1, 2, 2))
        t = np.array([1, 4, 9])
        _, grads = model.loss_and_grads(xt, t, noise)
        h = 1e-6
        for p, g in zip(model.parameters(), grads):
            numeric = np.empty_like(p)
            for idx in np.ndindex(p.shape):
                orig = p[idx]
                p[idx] = orig + h
                up = nn.mse_loss(model.predict_noise(xt, t), noise)[0]
                p[idx] = orig - h
                down = nn.mse_loss(model.predict_noise(xt, t), noise)[0]
                p[idx] = orig
                numeric[idx] = (up - down) / (2 * h)
            assert nn.relative_error(g, numeric) < 1e-5

    def test_training_overfits_one_window(self, rng):
        cfg = PRESETS["desk"].diffusion()
        windows = np.repeat(small_windows(rng, 1), 8, axis=0)
        model, data = build_model(windows, cfg, seed=0)
        opt = nn.Adam(cfg.lr)
        losses = [train_epoch(model, data, opt, seed=e) for e in range(200)]
        assert losses[0] > 0.8
        assert losses[-1] < 0.5

    def test_training_deterministic(self, rng):
        w = small_windows(rng)
        runs = []
        for _ in range(2):
            model, data = build_model(w, SMALL, seed=1)
            opt = nn.Adam(SMALL.lr)
            for e in range(3):
                train_epoch(model, data, opt, seed=e)
            runs.append(model.snapshot())
        assert all(np.array_equal(a, b) for a, b in zip(*runs))

    def test_empty_data(self, rng):
        model, data = build_model(small_windows(rng), SMALL)
        with pytest.raises(ValueError, match="no training data"):
            train_epoch(model, data[:0], nn.Adam(), 0)

    def test_snapshot_restore_and_copy(self, rng):
        model, data = build_model(small_windows(rng), SMALL)
        snap = model.snapshot()
        clone = model.copy()
        train_epoch(model, data, nn.Adam(SMALL.lr), 0)
        assert not all(np.array_equal(a, b) for a, b in zip(snap, model.parameters()))
        assert all(np.array_equal(a, b) for a, b in zip(snap, clone.parameters()))
        model.restore(snap)
        assert all(np.array_equal(a, b) for a, b in zip(snap, model.parameters()))


class TestSampling:
    def test_oracle_denoiser_recovers_point_mass(self):
        # with the exact noise predictor for a single data point the sampler returns that point
        model = DiffusionModel((1, 2, 3), DiffusionConfig(T=200), seed=0)
        c = np.array([0.5, -1.0, 2.0, 0.0, 1.0, -0.3]).reshape(1, 1, 2, 3)
        s = model.schedule

        def exact(x, t):
            ab = s.at(s.alpha_bars, t)
            return (x - np.sqrt(ab) * c) / np.sqrt(1 - ab)
        model.predict_noise = exact
        run = begin_sampling(model, 500, 0)
        while not run.finished:
            denoise_step(run, model)
        assert np.abs(run.current_state - c).max() < 0.05

    def test_deterministic_and_seed_sensitive(self, rng):
        model, _ = build_model(small_windows(rng), SMALL)
        a, b, c = sample(model, 3, 5), sample(model, 3, 5), sample(model, 3, 6)
        assert a.shape == (3, 2, 160)
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    def test_stepwise_equals_sample(self, rng):
        model, _ = build_model(small_windows(rng), SMALL)
        run = begin_sampling(model, 2, 9)
        steps = 0
        while not run.finished:
            denoise_step(run, model)
            steps += 1
        assert steps == SMALL.T
        assert np.array_equal(spectro_to_windows(run.current_state, model), sample(model, 2, 9))
        with pytest.raises(ValueError, match="already finished"):
            denoise_step(run, model)

    def test_bad_batch(self, rng):
        model, _ = build_model(small_windows(rng), SMALL)
        with pytest.raises(ValueError):
            begin_sampling(model, 0, 0)

    def test_save_load_bit_exact(self, rng, tmp_path):
        model, data = build_model(small_windows(rng), SMALL, seed=2)
        train_epoch(model, data, nn.Adam(SMALL.lr), 0)
        model.save(tmp_path / "m")
        loaded = DiffusionModel.load(tmp_path / "m")
        for p, q in zip(model.parameters(), loaded.parameters()):
            assert p.tobytes() == q.tobytes()
        assert np.array_equal(loaded.schedule.betas, model.schedule.betas)
        assert np.array_equal(sample(model, 2, 3), sample(loaded, 2, 3))
