import numpy as np
import pytest

from toyedit import diffusion as D
from toyedit import model as M
from toyedit import world
from toyedit.autograd import Tensor


# --- schedule -----------------------------------------------------------------

def test_schedule_first_alpha_bar():
    s = D.make_schedule()
    assert s.abar(0) == pytest.approx(1 - 1e-4, abs=1e-12)


def test_schedule_final_alpha_bar_small():
    s = D.make_schedule()
    # independent oracle: explicit float64 running product
    prod = 1.0
    for b in np.linspace(1e-4, 0.02, 1000):
        prod *= 1.0 - b
    assert s.abar(999) == pytest.approx(prod, rel=1e-10)
    assert s.abar(999) < 0.01


def test_schedule_monotone_decreasing():
    s = D.make_schedule()
    assert (np.diff(s.alpha_bars) < 0).all()


def test_schedule_invalid_range():
    with pytest.raises(D.ScheduleConfigError):
        D.make_schedule(beta_min=0.05, beta_max=0.01)
    with pytest.raises(D.ScheduleConfigError):
        D.make_schedule(beta_min=0.0)


# --- add_noise -----------------------------------------------------------------

def _stub_schedule(abar_value, t=5, T=10):
    bars = np.linspace(0.9, 0.1, T)
    bars[t] = abar_value
    return D.NoiseSchedule(T=T, betas=np.zeros(T), alphas=np.zeros(T), alpha_bars=bars)


def test_add_noise_zero_eps():
    s = _stub_schedule(0.49)
    x0 = np.full((2, 2), 3.0)
    out = D.add_noise(x0, 5, np.zeros_like(x0), s)
    np.testing.assert_allclose(out, 0.7 * 3.0)


def test_add_noise_hand_value():
    # abar = 0.25, x0 = 1, eps = 1 -> 0.5 + sqrt(0.75)
    s = _stub_schedule(0.25)
    out = D.add_noise(np.ones(1), 5, np.ones(1), s)
    assert out[0] == pytest.approx(0.5 + np.sqrt(0.75), abs=1e-12)


def test_add_noise_t0_close_to_x0():
    s = D.make_schedule()
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((16, 16, 3)).astype(np.float32)
    eps = rng.standard_normal((16, 16, 3)).astype(np.float32)
    out = D.add_noise(x0, 0, eps, s)
    assert np.abs(out - x0).max() < 0.02 * np.abs(eps).max() + 1e-3


def test_add_noise_range_and_shape_contract():
    s = D.make_schedule()
    with pytest.raises(D.LossContractError):
        D.add_noise(np.zeros(3), 1000, np.zeros(3), s)
    with pytest.raises(D.LossContractError):
        D.add_noise(np.zeros(3), 10, np.zeros(4), s)


# --- cfg ------------------------------------------------------------------------

def test_cfg_combine_identities():
    rng = np.random.default_rng(1)
    u = rng.standard_normal((4, 4)).astype(np.float32)
    c = rng.standard_normal((4, 4)).astype(np.float32)
    assert D.cfg_combine(u, c, 1.0) is c
    assert D.cfg_combine(u, c, 0.0) is u


def test_cfg_combine_hand_value():
    out = D.cfg_combine(np.zeros(1), np.ones(1), 3.0)
    assert out[0] == pytest.approx(3.0)


def test_cfg_combine_affine_in_w():
    rng = np.random.default_rng(2)
    u = rng.standard_normal(8)
    c = rng.standard_normal(8)
    for w1, w2 in [(0.3, 2.7), (1.5, 5.0)]:
        lhs = D.cfg_combine(u, c, w1) + D.cfg_combine(u, c, w2)
        rhs = 2.0 * D.cfg_combine(u, c, (w1 + w2) / 2.0)
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_cfg_dual_scales_at_one_pass_through():
    rng = np.random.default_rng(3)
    eu, ei, ef = (rng.standard_normal(5) for _ in range(3))
    assert D.cfg_dual(eu, ei, ef, 1.0, 1.0) is ef
    np.testing.assert_allclose(
        D.cfg_dual(eu, ei, ef, 2.0, 3.0),
        eu + 2.0 * (ei - eu) + 3.0 * (ef - ei), atol=1e-12)


# --- training loss -----------------------------------------------------------------

class ScriptedRng:
    """Deterministic rng stand-in: scripted draws for t, noise, dropout."""

    def __init__(self, t, eps, uniform=0.9):
        self._t = t
        self._eps = eps
        self._uniform = uniform

    def integers(self, *a, **k):
        return self._t

    def standard_normal(self, shape):
        return self._eps.reshape(shape)

    def random(self):
        return self._uniform


def test_loss_lambda_zero_ignores_t2i_batch(tiny_params, tiny_config, schedule):
    f = world.all_factors()[0]
    i = world.EditInstruction("size", "large")
    rec = {"x_c": world.render(f), "x": world.render(world.apply_instruction(f, i)),
           "y_c": world.caption_of(f), "y": i.tokens()}
    t2i = [{"x": world.render(f), "y": world.caption_of(f)}]
    g = D.GuidanceConfig()
    l1 = D.training_loss(tiny_params, tiny_config, schedule, [rec], t2i, 0.0, g,
                         np.random.default_rng(3))
    l2 = D.training_loss(tiny_params, tiny_config, schedule, [rec], [], 0.0, g,
                         np.random.default_rng(3))
    assert float(l1.data) == float(l2.data)


def test_loss_lambda_without_t2i_batch_rejected(tiny_params, tiny_config, schedule):
    with pytest.raises(D.LossContractError):
        D.training_loss(tiny_params, tiny_config, schedule, [], [], 0.5,
                        D.GuidanceConfig(), np.random.default_rng(0))


def test_loss_zero_for_perfect_model(tiny_params, tiny_config, schedule, monkeypatch):
    cfg = tiny_config
    rng = ScriptedRng(t=137, eps=np.arange(768, dtype=np.float32).reshape(16, 16, 3) / 768.0)
    eps_tok = M.patchify(rng._eps, cfg)

    def perfect_forward(params, config, x_t_tokens, t, out_text_ids, cond=None):
        b = np.asarray(out_text_ids).shape[0]
        return Tensor(np.stack([eps_tok] * b))

    monkeypatch.setattr(M, "forward_eps_tokens", perfect_forward)
    f = world.all_factors()[3]
    t2i = [{"x": world.render(f), "y": world.caption_of(f)}]
    loss = D.training_loss(tiny_params, cfg, schedule, [], t2i, 0.0,
                           D.GuidanceConfig(), rng)
    assert float(loss.data) == 0.0


def test_loss_matches_external_mse(tiny_params, tiny_config, schedule):
    """Single fixed sample: loss equals an independently coded MSE."""
    cfg = tiny_config
    f = world.all_factors()[10]
    i = world.EditInstruction("fg_color", "white")
    rec = {"x_c": world.render(f), "x": world.render(world.apply_instruction(f, i)),
           "y_c": world.caption_of(f), "y": i.tokens()}
    eps = np.random.default_rng(4).standard_normal((16, 16, 3)).astype(np.float32)
    rng = ScriptedRng(t=421, eps=eps, uniform=0.9)  # 0.9 -> keep image and text

    loss = D.training_loss(tiny_params, cfg, schedule, [rec], [], 0.0,
                           D.GuidanceConfig(), rng)

    # outside-the-graph recomputation
    x0 = D.to_model_space(rec["x"])
    x_t = D.add_noise(x0, 421, eps, schedule).astype(np.float32)
    pred = M.denoise_eps(tiny_params, cfg, x_t, 421, rec["y"],
                         cond=(D.to_model_space(rec["x_c"]), rec["y_c"]))
    expected = float(((pred - eps) ** 2).mean())
    assert float(loss.data) == pytest.approx(expected, abs=1e-6)


# --- DDIM ----------------------------------------------------------------------------

def test_ddim_step_recovers_true_trajectory():
    rng = np.random.default_rng(5)
    x0 = rng.standard_normal((16, 16, 3)).astype(np.float32)
    eps = rng.standard_normal((16, 16, 3)).astype(np.float32)
    s = D.make_schedule()
    t, t_prev = 700, 650
    x_t = D.add_noise(x0, t, eps, s).astype(np.float32)
    stepped = D.ddim_step(x_t, eps, s.abar(t), s.abar(t_prev))
    expected = D.add_noise(x0, t_prev, eps, s)
    assert np.abs(stepped - expected).max() < 1e-5


def test_ddim_sample_deterministic(tiny_params, tiny_config, schedule):
    cap = world.caption_of(world.all_factors()[0])
    g = D.GuidanceConfig(w_text=3.0)
    a = D.ddim_sample(tiny_params, tiny_config, schedule, g, cap, n_steps=8, seed=11)
    b = D.ddim_sample(tiny_params, tiny_config, schedule, g, cap, n_steps=8, seed=11)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_ddim_sample_matches_naive_loop_at_w1(tiny_params, tiny_config, schedule):
    """Independent sampler oracle: hand-rolled loop over denoise_eps."""
    cfg = tiny_config
    cap = world.caption_of(world.all_factors()[42])
    out = D.ddim_sample(tiny_params, cfg, schedule, D.GuidanceConfig(w_text=1.0),
                        cap, n_steps=6, seed=3)

    rng = np.random.default_rng(3)
    x = rng.standard_normal((16, 16, 3)).astype(np.float32)
    times = D.sampling_times(schedule.T, 6)
    for idx in range(len(times) - 1, -1, -1):
        t = int(times[idx])
        abar_prev = schedule.abar(int(times[idx - 1])) if idx > 0 else 1.0
        eps = M.denoise_eps(tiny_params, cfg, x, t, cap)
        x0 = (x - np.sqrt(1 - schedule.abar(t)) * eps) / np.sqrt(schedule.abar(t))
        x = np.sqrt(abar_prev) * x0 + np.sqrt(1 - abar_prev) * eps
    expected = np.clip((x + 1) / 2, 0, 1)
    np.testing.assert_allclose(out, expected, atol=1e-6)


def test_ddim_invert_smoke_no_nan(tiny_params, tiny_config, schedule):
    gray = np.full((16, 16, 3), 0.5, dtype=np.float32)
    cap = world.caption_of(world.all_factors()[7])
    lat = D.ddim_invert(tiny_params, tiny_config, schedule, cap, gray, n_steps=6)
    assert np.all(np.isfinite(lat))


def test_pair_sampler_gamma_zero_bit_equals_shared_seed_regen(tiny_params, tiny_config, schedule):
    cfg = tiny_config
    f = world.all_factors()[100]
    i = world.EditInstruction("shape", "triangle")
    cap1 = world.caption_of(f)
    cap2 = world.caption_of(world.apply_instruction(f, i))
    g = D.GuidanceConfig(w_text=3.5)
    x1, x2 = D.ddim_sample_pair(tiny_params, cfg, schedule, g, cap1, cap2, 0.0,
                                n_steps=6, seed=21)
    r1 = D.ddim_sample(tiny_params, cfg, schedule, g, cap1, n_steps=6, seed=21)
    r2 = D.ddim_sample(tiny_params, cfg, schedule, g, cap2, n_steps=6, seed=21)
    np.testing.assert_array_equal(x1, r1)
    np.testing.assert_array_equal(x2, r2)


def test_pair_sampler_deterministic(tiny_params, tiny_config, schedule):
    f = world.all_factors()[5]
    i = world.EditInstruction("position", "left")
    cap1 = world.caption_of(f)
    cap2 = world.caption_of(world.apply_instruction(f, i))
    g = D.GuidanceConfig(w_text=2.0)
    a = D.ddim_sample_pair(tiny_params, tiny_config, schedule, g, cap1, cap2, 0.4,
                           n_steps=5, seed=9)
    b = D.ddim_sample_pair(tiny_params, tiny_config, schedule, g, cap1, cap2, 0.4,
                           n_steps=5, seed=9)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_sym_wma_flag_changes_stream_one(tiny_config, schedule):
    rng = np.random.default_rng(13)
    base = M.ModelConfig(d_model=16, n_heads=2, n_layers=1)
    sym = M.ModelConfig(d_model=16, n_heads=2, n_layers=1, sym_wma=True)
    params = M.init_params(base, rng, zero_init=False, scale=0.05)
    f = world.all_factors()[11]
    i = world.EditInstruction("bg_color", "gray")
    cap1, cap2 = world.caption_of(f), world.caption_of(world.apply_instruction(f, i))
    g = D.GuidanceConfig(w_text=2.0)
    a = D.ddim_sample_pair(params, base, schedule, g, cap1, cap2, 0.5, n_steps=4, seed=2)
    b = D.ddim_sample_pair(params, sym, schedule, g, cap1, cap2, 0.5, n_steps=4, seed=2)
    assert not np.array_equal(a[0], b[0])  # stream 1 now mixes too
    np.testing.assert_array_equal(
        D.ddim_sample_pair(params, sym, schedule, g, cap1, cap2, 0.0, n_steps=4, seed=2)[0],
        D.ddim_sample_pair(params, base, schedule, g, cap1, cap2, 0.0, n_steps=4, seed=2)[0])
