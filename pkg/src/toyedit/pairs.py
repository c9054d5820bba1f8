"""Editing-pair synthesis from a text-to-image model.

Two generation routes, both driven by (factors, instruction) prompts:
naive re-generation (two DDIM runs, optionally from shared noise) and
weighted mutual attention (stream 2 mixes its attention against stream 1
with weight gamma, trading prompt adherence for consistency). Candidate
diversity comes from sweeping gamma, text CFG and seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from toyedit import diffusion as D
from toyedit import world


class GenerationError(RuntimeError):
    pass


class SynthesisConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthesisConfig:
    gamma_range: tuple[float, float] = (0.2, 0.8)
    cfg_range: tuple[float, float] = (2.0, 6.0)
    k: int = 4  # candidates per prompt
    mode: str = "mixed"  # regen | wma | mixed
    n_steps: int = 50

    def __post_init__(self):
        lo, hi = self.gamma_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise SynthesisConfigError(f"gamma range must sit inside [0, 1], got {self.gamma_range}")
        clo, chi = self.cfg_range
        if not (0.0 < clo <= chi):
            raise SynthesisConfigError(f"cfg range must be positive, got {self.cfg_range}")
        if self.mode not in ("regen", "wma", "mixed"):
            raise SynthesisConfigError(f"unknown mode {self.mode!r}")
        if self.k < 1:
            raise SynthesisConfigError("k must be >= 1")


@dataclass
class PairRecord:
    x_c: np.ndarray  # input image [0, 1]
    x: np.ndarray    # output image [0, 1]
    y_c: list        # input caption tokens
    y: list          # instruction tokens
    out_caption: list
    gamma: float | None
    cfg: float
    seed: int
    scores: dict | None = None
    provenance: dict = field(default_factory=dict)

    def loss_record(self) -> dict:
        """Training view: the generation branch is conditioned on the
        rephrased output caption (the deterministic stand-in for the
        paper's instruction-to-description step), not the raw instruction."""
        return {"x_c": self.x_c, "x": self.x, "y_c": self.y_c, "y": self.out_caption}


def _check_generated(img: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(img)):
        raise GenerationError(f"{what} produced non-finite pixels (untrained or diverged model?)")


def synth_pair_wma(t2i_params, config, schedule, f: world.FactorVector,
                   i: world.EditInstruction, gamma: float, cfg: float,
                   seed: int, n_steps: int = 50) -> PairRecord:
    """Two parallel DDIM streams from shared noise; stream 2 follows the
    edited caption and mixes attention against stream 1 with weight gamma."""
    f2 = world.apply_instruction(f, i)
    cap1 = world.caption_of(f)
    cap2 = world.caption_of(f2)
    guidance = D.GuidanceConfig(w_text=cfg)
    x_c, x = D.ddim_sample_pair(t2i_params, config, schedule, guidance,
                                cap1, cap2, gamma, n_steps=n_steps, seed=seed)
    _check_generated(x_c, "WMA stream 1")
    _check_generated(x, "WMA stream 2")
    return PairRecord(x_c=x_c, x=x, y_c=cap1, y=i.tokens(), out_caption=cap2,
                      gamma=gamma, cfg=cfg, seed=seed,
                      provenance={"mode": "wma"})


def synth_pair_regen(t2i_params, config, schedule, f: world.FactorVector,
                     i: world.EditInstruction, cfg: float, seed: int,
                     share_noise: bool = True, n_steps: int = 50) -> PairRecord:
    """Baseline: two independent DDIM runs (optionally sharing the initial
    noise), captions before/after the edit."""
    f2 = world.apply_instruction(f, i)
    cap1 = world.caption_of(f)
    cap2 = world.caption_of(f2)
    guidance = D.GuidanceConfig(w_text=cfg)
    seed2 = seed if share_noise else seed + 1_000_003
    x_c = D.ddim_sample(t2i_params, config, schedule, guidance, cap1,
                        n_steps=n_steps, seed=seed)
    x = D.ddim_sample(t2i_params, config, schedule, guidance, cap2,
                      n_steps=n_steps, seed=seed2)
    _check_generated(x_c, "re-generation input")
    _check_generated(x, "re-generation output")
    return PairRecord(x_c=x_c, x=x, y_c=cap1, y=i.tokens(), out_caption=cap2,
                      gamma=None, cfg=cfg, seed=seed,
                      provenance={"mode": "regen", "share_noise": share_noise})


def synth_batch(params, config, schedule, syn: SynthesisConfig, n_prompts: int,
                rng: np.random.Generator, edit_sampler=None,
                round_idx: int = 0) -> list[PairRecord]:
    """k candidates per sampled (factors, instruction) prompt.

    With edit_sampler (a callable (input_img, instruction, cfg, seed) ->
    image, usually the current editing model), candidates come from it
    instead of the T2I routes; that is the later-rounds path.
    """
    records = []
    for pid in range(n_prompts):
        f = world.sample_factors(rng)
        i = world.sample_instruction(rng, f)
        for c in range(syn.k):
            gamma = float(rng.uniform(*syn.gamma_range))
            cfg = float(rng.uniform(*syn.cfg_range))
            seed = int(rng.integers(2 ** 31))
            if edit_sampler is not None:
                x_c = world.render(f)
                x = edit_sampler(x_c, i, cfg, seed)
                _check_generated(x, "editing model sample")
                rec = PairRecord(x_c=x_c, x=x, y_c=world.caption_of(f), y=i.tokens(),
                                 out_caption=world.caption_of(world.apply_instruction(f, i)),
                                 gamma=None, cfg=cfg, seed=seed,
                                 provenance={"mode": "edit_model"})
            else:
                use_wma = syn.mode == "wma" or (syn.mode == "mixed" and rng.random() < 0.5)
                if use_wma:
                    rec = synth_pair_wma(params, config, schedule, f, i, gamma, cfg,
                                         seed, n_steps=syn.n_steps)
                else:
                    rec = synth_pair_regen(params, config, schedule, f, i, cfg, seed,
                                           share_noise=True, n_steps=syn.n_steps)
            rec.provenance.update({"round": round_idx, "prompt": pid, "candidate": c})
            records.append(rec)
    return records
