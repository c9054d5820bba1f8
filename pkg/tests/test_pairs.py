import numpy as np
import pytest

from toyedit import diffusion as D
from toyedit import pairs as P
from toyedit import world


def test_synthesis_config_validation():
    with pytest.raises(P.SynthesisConfigError):
        P.SynthesisConfig(gamma_range=(0.5, 1.5))
    with pytest.raises(P.SynthesisConfigError):
        P.SynthesisConfig(cfg_range=(0.0, 2.0))
    with pytest.raises(P.SynthesisConfigError):
        P.SynthesisConfig(mode="prompt2prompt")


def test_wma_pair_gamma_zero_equals_regen_shared_seed(tiny_params, tiny_config, schedule):
    f = world.all_factors()[77]
    i = world.EditInstruction("fg_color", "yellow")
    wma = P.synth_pair_wma(tiny_params, tiny_config, schedule, f, i,
                           gamma=0.0, cfg=3.0, seed=5, n_steps=5)
    regen = P.synth_pair_regen(tiny_params, tiny_config, schedule, f, i,
                               cfg=3.0, seed=5, share_noise=True, n_steps=5)
    np.testing.assert_array_equal(wma.x_c, regen.x_c)
    np.testing.assert_array_equal(wma.x, regen.x)


def test_pair_records_self_consistent(tiny_params, tiny_config, schedule):
    f = world.all_factors()[200]
    i = world.EditInstruction("position", "bottom-right")
    rec = P.synth_pair_wma(tiny_params, tiny_config, schedule, f, i,
                           gamma=0.5, cfg=2.5, seed=8, n_steps=4)
    assert rec.y == i.tokens()
    assert rec.y_c == world.caption_of(f)
    assert rec.out_caption == world.caption_of(world.apply_instruction(f, i))
    assert rec.gamma == 0.5 and rec.cfg == 2.5 and rec.seed == 8


def test_same_args_identical_record(tiny_params, tiny_config, schedule):
    f = world.all_factors()[300]
    i = world.EditInstruction("size", "small")
    a = P.synth_pair_wma(tiny_params, tiny_config, schedule, f, i, 0.3, 4.0, 13, n_steps=4)
    b = P.synth_pair_wma(tiny_params, tiny_config, schedule, f, i, 0.3, 4.0, 13, n_steps=4)
    np.testing.assert_array_equal(a.x_c, b.x_c)
    np.testing.assert_array_equal(a.x, b.x)


def test_regen_identical_captions_shared_noise_identical_images(tiny_params, tiny_config, schedule):
    f = world.all_factors()[50]
    noop = world.EditInstruction("shape", f.shape)
    rec = P.synth_pair_regen(tiny_params, tiny_config, schedule, f, noop,
                             cfg=3.0, seed=2, share_noise=True, n_steps=4)
    np.testing.assert_array_equal(rec.x_c, rec.x)


def test_synth_batch_counts_and_ranges(tiny_params, tiny_config, schedule):
    syn = P.SynthesisConfig(k=4, mode="mixed", n_steps=3)
    rng = np.random.default_rng(0)
    records = P.synth_batch(tiny_params, tiny_config, schedule, syn, 10, rng)
    assert len(records) == 40
    for rec in records:
        if rec.gamma is not None:
            assert 0.2 <= rec.gamma <= 0.8
        assert 2.0 <= rec.cfg <= 6.0
        assert rec.provenance["round"] == 0


def test_synth_batch_deterministic(tiny_params, tiny_config, schedule):
    syn = P.SynthesisConfig(k=2, mode="wma", n_steps=3)
    a = P.synth_batch(tiny_params, tiny_config, schedule, syn, 4, np.random.default_rng(42))
    b = P.synth_batch(tiny_params, tiny_config, schedule, syn, 4, np.random.default_rng(42))
    assert len(a) == len(b)
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.x, rb.x)
        assert ra.seed == rb.seed and ra.gamma == rb.gamma and ra.cfg == rb.cfg


def test_synth_batch_edit_mode_provenance(tiny_params, tiny_config, schedule):
    syn = P.SynthesisConfig(k=2, n_steps=3)

    def fake_editor(img, instr, cfg, seed):
        return img  # identity editor

    records = P.synth_batch(tiny_params, tiny_config, schedule, syn, 3,
                            np.random.default_rng(1), edit_sampler=fake_editor,
                            round_idx=2)
    assert len(records) == 6
    for rec in records:
        assert rec.provenance["mode"] == "edit_model"
        assert rec.provenance["round"] == 2
        assert rec.gamma is None


def test_diversity_floor_in_large_batch(tiny_params, tiny_config, schedule):
    syn = P.SynthesisConfig(k=4, mode="wma", n_steps=2)
    records = P.synth_batch(tiny_params, tiny_config, schedule, syn, 25,
                            np.random.default_rng(3))
    assert len(records) == 100
    deciles = {int(r.gamma * 10) for r in records if r.gamma is not None}
    cfgs = {round(r.cfg, 1) for r in records}
    assert len(deciles) >= 3
    assert len(cfgs) >= 3


def test_nan_params_raise_generation_error(tiny_config, schedule):
    import toyedit.model as M

    rng = np.random.default_rng(0)
    params = M.init_params(tiny_config, rng, zero_init=False, scale=0.05)
    bad = {k: v for k, v in params.items()}
    import toyedit.autograd as ag
    ag.set_debug_checks(False)  # let the NaN flow to the generation check
    bad["head.w"].data[:] = np.nan
    f = world.all_factors()[0]
    i = world.EditInstruction("size", "large")
    with pytest.raises(P.GenerationError):
        P.synth_pair_wma(bad, tiny_config, schedule, f, i, 0.4, 3.0, 1, n_steps=2)
    ag.set_debug_checks(True)
