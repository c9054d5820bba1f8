"""Text-to-image pretraining on the toy world."""

from __future__ import annotations

import numpy as np

from toyedit import autograd as ag
from toyedit import diffusion as D
from toyedit import model as M
from toyedit import world
from toyedit.ema import EmaTracker
from toyedit.optim import AdamWState, adamw_step


def t2i_dataset() -> list[dict]:
    """Every factor combination with its caption (1080 records)."""
    return [{"x": world.render(f), "y": world.caption_of(f)} for f in world.all_factors()]


def train_t2i(config: M.ModelConfig, schedule: D.NoiseSchedule,
              train_cfg: D.TrainConfig, guidance: D.GuidanceConfig | None = None,
              params: dict | None = None, verbose: bool = False,
              log_every: int = 500) -> tuple[dict, list[float]]:
    """Train a T2I denoiser from scratch; returns (params, loss curve)."""
    guidance = guidance or D.GuidanceConfig()
    rng = np.random.default_rng(train_cfg.seed)
    if params is None:
        params = M.init_params(config, rng)
    data = t2i_dataset()
    state = AdamWState.init(params)
    ema = EmaTracker(params, train_cfg.ema_decay) if train_cfg.ema_decay > 0 else None
    losses = []
    for step in range(train_cfg.steps):
        idx = rng.integers(len(data), size=train_cfg.batch_size)
        batch = [data[j] for j in idx]
        loss = D.training_loss(params, config, schedule, [], batch, 0.0, guidance, rng,
                               train_cfg.min_snr_gamma)
        ag.zero_grads(params)
        loss.backward()
        adamw_step(params, state, lr=train_cfg.lr_at(step), weight_decay=train_cfg.weight_decay)
        if ema is not None:
            ema.update(params)
        losses.append(float(loss.data))
        if verbose and step % log_every == 0:
            recent = float(np.mean(losses[-100:]))
            print(f"t2i step {step}: loss {recent:.4f}")
    return (ema.snapshot() if ema is not None else params), losses


def t2i_caption_accuracy(params, config, schedule, n_samples: int = 200,
                         w_text: float = 3.0, n_steps: int = 50,
                         seed: int = 0) -> float:
    """Fraction of fresh samples that classify back to their conditioning
    caption -- the oracle's stand-in for generation quality."""
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_samples):
        f = world.sample_factors(rng)
        img = D.ddim_sample(params, config, schedule, D.GuidanceConfig(w_text=w_text),
                            world.caption_of(f), n_steps=n_steps,
                            seed=int(rng.integers(2 ** 31)))
        hits += int(world.classify(img) == f)
    return hits / n_samples
