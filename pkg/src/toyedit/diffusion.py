"""Noise schedule, mixed training loss, DDIM sampling/inversion, CFG.

Images live in [0, 1] at the package boundary; the diffusion math runs in
model space 2*img - 1. Outputs are clamped to [0, 1] only at the very end
of sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from toyedit import autograd as ag
from toyedit import model as M
from toyedit import world
from toyedit.autograd import Tensor


class ScheduleConfigError(ValueError):
    pass


class LossContractError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def abar(self, t: int) -> float:
        """alpha-bar at t; t = -1 denotes the clean endpoint (abar = 1)."""
        if t < 0:
            return 1.0
        return float(self.alpha_bars[t])


def make_schedule(T: int = 1000, beta_min: float = 1e-4, beta_max: float = 0.02,
                  kind: str = "linear") -> NoiseSchedule:
    if not (0.0 < beta_min < beta_max < 1.0):
        raise ScheduleConfigError(f"need 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}")
    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((steps + s) / (1 + s) * np.pi / 2) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 0.0, 0.999)
    else:
        raise ScheduleConfigError(f"unknown schedule kind {kind!r}")
    alphas = 1.0 - betas
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


@dataclass
class GuidanceConfig:
    w_text: float = 4.0
    w_img: float = 1.0  # 1 = image guidance off
    uncond_id: int = world.UNCOND_ID
    p_drop_text: float = 0.1
    p_drop_img: float = 0.1
    p_drop_both: float = 0.05

    def __post_init__(self):
        if self.w_text < 0 or self.w_img < 0:
            raise ScheduleConfigError("guidance scales must be >= 0")


@dataclass
class TrainConfig:
    lam: float = 0.5
    lr: float = 2e-3
    batch_size: int = 32
    steps: int = 3000
    weight_decay: float = 0.0
    seed: int = 0
    # min-SNR loss weighting (0 disables): downweights the near-clean
    # timesteps whose epsilon target is mostly irreducible noise, which at
    # this scale is what lets caption-driven composition get learned
    min_snr_gamma: float = 5.0
    # exponential moving average of weights; the trained artifact is the
    # EMA copy when enabled (0 disables)
    ema_decay: float = 0.999
    # cosine-decay the learning rate to lr_floor * lr over the run
    lr_decay: bool = True
    lr_floor: float = 0.05

    def lr_at(self, step: int) -> float:
        if not self.lr_decay or self.steps <= 1:
            return self.lr
        frac = 0.5 * (1.0 + np.cos(np.pi * step / max(self.steps - 1, 1)))
        return self.lr * (self.lr_floor + (1.0 - self.lr_floor) * frac)


def to_model_space(img01: np.ndarray) -> np.ndarray:
    return (2.0 * np.asarray(img01, dtype=np.float32) - 1.0).astype(np.float32)


def to_pixel_space(x: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(x, dtype=np.float32) + 1.0) / 2.0, 0.0, 1.0)


def add_noise(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    if not 0 <= t < schedule.T:
        raise LossContractError(f"timestep {t} outside [0, {schedule.T})")
    if np.shape(x0) != np.shape(eps):
        raise LossContractError(f"x0 shape {np.shape(x0)} != eps shape {np.shape(eps)}")
    ab = schedule.abar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, w: float) -> np.ndarray:
    """eps_uncond + w (eps_cond - eps_uncond); w=1 and w=0 return the
    operands untouched so the identities are exact."""
    if np.shape(eps_uncond) != np.shape(eps_cond):
        raise LossContractError("cfg_combine operands must share a shape")
    if w == 1.0:
        return eps_cond
    if w == 0.0:
        return eps_uncond
    return eps_uncond + w * (eps_cond - eps_uncond)


def cfg_dual(eps_u: np.ndarray, eps_img: np.ndarray, eps_full: np.ndarray,
             w_img: float, w_text: float) -> np.ndarray:
    """eps_u + w_img (eps_img - eps_u) + w_text (eps_full - eps_img).

    Both scales at 1 return eps_full untouched."""
    if w_img == 1.0 and w_text == 1.0:
        return eps_full
    if w_img == 1.0:
        return cfg_combine(eps_img, eps_full, w_text)
    return cfg_combine(eps_u, eps_img, w_img) + w_text * (eps_full - eps_img)


# --- training loss --------------------------------------------------------

def _drop_mode(rng: np.random.Generator, g: GuidanceConfig) -> tuple[bool, bool]:
    """(keep_image, keep_text) for one editing sample."""
    u = rng.random()
    if u < g.p_drop_both:
        return False, False
    if u < g.p_drop_both + g.p_drop_img:
        return False, True
    if u < g.p_drop_both + g.p_drop_img + g.p_drop_text:
        return True, False
    return True, True


def _group_loss(params, config, group) -> tuple[Tensor, int]:
    """MSE over generation-branch image positions for one layout group.
    Per-sample weights fold in as sqrt(w) factors on the residual."""
    xs = np.stack([s["x_t_tok"] for s in group])
    ts = np.array([s["t"] for s in group])
    texts = np.stack([s["text"] for s in group])
    targets = np.stack([s["eps_tok"] for s in group])
    if group[0]["cond_tok"] is not None:
        cond = (np.stack([s["cond_tok"] for s in group]),
                np.stack([s["cond_cap"] for s in group]))
    else:
        cond = None
    pred = M.forward_eps_tokens(params, config, xs, ts, texts, cond)
    diff = pred - Tensor(targets)
    w = np.array([s.get("weight", 1.0) for s in group], dtype=np.float32)
    if not np.all(w == 1.0):
        diff = diff * Tensor(np.sqrt(w)[:, None, None])
    return (diff * diff).mean(), len(group)


def _snr_weight(schedule: NoiseSchedule, t: int, gamma: float) -> float:
    if gamma <= 0:
        return 1.0
    ab = schedule.abar(t)
    snr = ab / max(1.0 - ab, 1e-12)
    return min(snr, gamma) / snr


def _prepare_edit_sample(config, schedule, g, rec, rng, gamma=0.0) -> dict:
    t = int(rng.integers(schedule.T))
    eps = rng.standard_normal((config.image_size, config.image_size, 3)).astype(np.float32)
    x0 = to_model_space(rec["x"])
    x_t = add_noise(x0, t, eps, schedule).astype(np.float32)
    keep_img, keep_text = _drop_mode(rng, g)
    y = list(rec["y"])
    text = y if keep_text else [g.uncond_id] * len(y)
    s = {
        "t": t,
        "x_t_tok": M.patchify(x_t, config),
        "eps_tok": M.patchify(eps, config),
        "text": np.asarray(text),
        "cond_tok": M.patchify(to_model_space(rec["x_c"]), config) if keep_img else None,
        "cond_cap": np.asarray(rec["y_c"]) if keep_img else None,
        "weight": _snr_weight(schedule, t, gamma),
    }
    return s


def _prepare_t2i_sample(config, schedule, g, rec, rng, gamma=0.0) -> dict:
    t = int(rng.integers(schedule.T))
    eps = rng.standard_normal((config.image_size, config.image_size, 3)).astype(np.float32)
    x0 = to_model_space(rec["x"])
    x_t = add_noise(x0, t, eps, schedule).astype(np.float32)
    y = list(rec["y"])
    text = y if rng.random() >= g.p_drop_text else [g.uncond_id] * len(y)
    return {
        "t": t,
        "x_t_tok": M.patchify(x_t, config),
        "eps_tok": M.patchify(eps, config),
        "text": np.asarray(text),
        "cond_tok": None,
        "cond_cap": None,
        "weight": _snr_weight(schedule, t, gamma),
    }


def training_loss(params, config: M.ModelConfig, schedule: NoiseSchedule,
                  edit_batch: list, t2i_batch: list, lam: float,
                  guidance: GuidanceConfig, rng: np.random.Generator,
                  min_snr_gamma: float = 0.0) -> Tensor:
    """Mixed editing + text-to-image epsilon-MSE.

    edit_batch records carry {x_c, x, y_c, y} (images in [0, 1], token id
    lists); t2i_batch records carry {x, y}. Per-sample timestep and noise
    are drawn from rng; condition dropout follows the guidance config so
    the trained model supports CFG at sampling time. min_snr_gamma > 0
    weights per-sample terms by min(SNR, gamma)/SNR (trainer option; the
    default leaves the plain objective).
    """
    if lam > 0 and not t2i_batch:
        raise LossContractError("lam > 0 requires a non-empty t2i batch")
    if not edit_batch and not t2i_batch:
        raise LossContractError("nothing to train on")

    total = None
    if edit_batch:
        samples = [_prepare_edit_sample(config, schedule, guidance, r, rng, min_snr_gamma)
                   for r in edit_batch]
        groups: dict[tuple, list] = {}
        for s in samples:
            key = (s["cond_tok"] is not None, len(s["text"]))
            groups.setdefault(key, []).append(s)
        n_total = len(samples)
        for group in groups.values():
            mse, n = _group_loss(params, config, group)
            term = mse * (n / n_total)
            total = term if total is None else total + term

    if t2i_batch and lam > 0:
        samples = [_prepare_t2i_sample(config, schedule, guidance, r, rng, min_snr_gamma)
                   for r in t2i_batch]
        mse, _ = _group_loss(params, config, samples)
        term = mse * lam
        total = term if total is None else total + term
    elif total is None:
        # pure T2I training (lam ignored, the t2i term is the whole loss)
        samples = [_prepare_t2i_sample(config, schedule, guidance, r, rng, min_snr_gamma)
                   for r in t2i_batch]
        total, _ = _group_loss(params, config, samples)
    return total


# --- DDIM -----------------------------------------------------------------

def sampling_times(T: int, n_steps: int) -> np.ndarray:
    """Ascending timestep grid used by both sampling and inversion."""
    if n_steps > T:
        raise ScheduleConfigError(f"n_steps {n_steps} exceeds T {T}")
    return np.unique(np.linspace(0, T - 1, n_steps).round().astype(int))


def initial_latent(rng: np.random.Generator, config: M.ModelConfig) -> np.ndarray:
    return rng.standard_normal((config.image_size, config.image_size, 3)).astype(np.float32)


def ddim_step(x: np.ndarray, eps: np.ndarray, abar_t: float, abar_prev: float,
              eta: float = 0.0, rng: np.random.Generator | None = None,
              clip_x0: bool = False) -> np.ndarray:
    x0 = (x - np.sqrt(1.0 - abar_t) * eps) / np.sqrt(abar_t)
    if clip_x0:
        # keep the running clean-image estimate inside model space; tames
        # the 1/sqrt(abar) blow-up of prediction error at high t
        x0 = np.clip(x0, -1.0, 1.0)
    if eta > 0.0:
        sigma = eta * np.sqrt((1.0 - abar_prev) / (1.0 - abar_t)) * \
            np.sqrt(1.0 - abar_t / abar_prev)
        direction = np.sqrt(max(1.0 - abar_prev - sigma ** 2, 0.0))
        noise = rng.standard_normal(x.shape).astype(np.float32)
        return np.sqrt(abar_prev) * x0 + direction * eps + sigma * noise
    return np.sqrt(abar_prev) * x0 + np.sqrt(1.0 - abar_prev) * eps


def make_t2i_eps_fn(params, config, text_ids, w_text: float):
    """Batched CFG epsilon for the text-to-image layout."""
    text = np.asarray(text_ids)
    uncond = np.full_like(text, world.UNCOND_ID)
    rows = [text] if w_text == 1.0 else [uncond, text]
    ids = np.stack(rows)
    b = ids.shape[0]

    def eps_fn(x: np.ndarray, t: int) -> np.ndarray:
        tok = M.patchify(x, config)
        toks = np.stack([tok] * b)
        with ag.no_grad():
            out = M.forward_eps_tokens(params, config, toks, np.full(b, t), ids)
        eps_rows = [M.unpatchify(out.data[i], config) for i in range(b)]
        if b == 1:
            return eps_rows[0]
        return cfg_combine(eps_rows[0], eps_rows[1], w_text)

    return eps_fn


def make_edit_eps_fn(params, config, instr_ids, cache: M.KVCache,
                     guidance: GuidanceConfig):
    """Dual-CFG epsilon for the cached editing layout.

    The image-conditioned/unconditional-text row is needed whenever either
    scale differs from 1; the fully unconditional row only for image
    guidance."""
    instr = np.asarray(instr_ids)
    uncond = np.full_like(instr, guidance.uncond_id)
    need_img_row = guidance.w_text != 1.0 or guidance.w_img != 1.0
    rows = [uncond, instr] if need_img_row else [instr]
    ids = np.stack(rows)
    b = ids.shape[0]

    def eps_fn(x: np.ndarray, t: int) -> np.ndarray:
        tok = M.patchify(x, config)
        toks = np.stack([tok] * b)
        with ag.no_grad():
            out = M.forward_eps_tokens_cached(params, config, toks, np.full(b, t), ids, cache)
            rows_eps = [M.unpatchify(out.data[i], config) for i in range(b)]
            if b == 1:
                return rows_eps[0]  # w_text == w_img == 1
            eps_img, eps_full = rows_eps
            if guidance.w_img == 1.0:
                return cfg_combine(eps_img, eps_full, guidance.w_text)
            out_u = M.forward_eps_tokens(params, config, toks[:1], np.array([t]), uncond[None])
            eps_u = M.unpatchify(out_u.data[0], config)
        return cfg_dual(eps_u, eps_img, eps_full, guidance.w_img, guidance.w_text)

    return eps_fn


def ddim_sample(params, config, schedule: NoiseSchedule, guidance: GuidanceConfig,
                out_text_ids, cond: tuple | None = None, n_steps: int = 50,
                eta: float = 0.0, seed: int = 0, x_T: np.ndarray | None = None,
                clip_x0: bool = False) -> np.ndarray:
    """Deterministic (eta=0) DDIM run; returns a [0, 1] image.

    cond, when present, is (input_image01, caption_ids); the condition is
    encoded exactly once and its KV cache reused for every step.
    """
    rng = np.random.default_rng(seed)
    x = initial_latent(rng, config) if x_T is None else np.asarray(x_T, dtype=np.float32).copy()
    if cond is None:
        eps_fn = make_t2i_eps_fn(params, config, out_text_ids, guidance.w_text)
    else:
        img01, cap = cond
        cache = M.encode_condition(params, config, to_model_space(img01), cap)
        eps_fn = make_edit_eps_fn(params, config, out_text_ids, cache, guidance)

    times = sampling_times(schedule.T, n_steps)
    for idx in range(len(times) - 1, -1, -1):
        t = int(times[idx])
        abar_prev = schedule.abar(int(times[idx - 1])) if idx > 0 else 1.0
        eps = eps_fn(x, t)
        x = ddim_step(x, eps, schedule.abar(t), abar_prev, eta, rng, clip_x0)
    return to_pixel_space(x)


def ddim_invert(params, config, schedule: NoiseSchedule, out_text_ids,
                image01: np.ndarray, n_steps: int = 50) -> np.ndarray:
    """Walk the DDIM ODE forward to recover a latent whose re-sampling
    approximately reconstructs the image (guidance fixed at w=1)."""
    eps_fn = make_t2i_eps_fn(params, config, out_text_ids, 1.0)
    x = to_model_space(image01)
    times = sampling_times(schedule.T, n_steps)
    abar_prev = 1.0
    for idx in range(len(times)):
        t = int(times[idx])
        eps = eps_fn(x, t)
        x0 = (x - np.sqrt(1.0 - abar_prev) * eps) / np.sqrt(abar_prev)
        x = np.sqrt(schedule.abar(t)) * x0 + np.sqrt(1.0 - schedule.abar(t)) * eps
        abar_prev = schedule.abar(t)
    return x


def ddim_sample_pair(params, config, schedule: NoiseSchedule, guidance: GuidanceConfig,
                     text1_ids, text2_ids, gamma: float, n_steps: int = 50,
                     seed: int = 0, clip_x0: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Two T2I streams from shared initial noise, stream 2 WMA-mixed
    against stream 1 at every layer. gamma=0 reduces bit-exactly to two
    independent runs with a shared seed."""
    rng = np.random.default_rng(seed)
    x_shared = initial_latent(rng, config)
    x1 = x_shared.copy()
    x2 = x_shared.copy()

    text1 = np.asarray(text1_ids)
    text2 = np.asarray(text2_ids)
    u1 = np.full_like(text1, guidance.uncond_id)
    u2 = np.full_like(text2, guidance.uncond_id)
    w = guidance.w_text
    rows1 = [text1] if w == 1.0 else [u1, text1]
    rows2 = [text2] if w == 1.0 else [u2, text2]
    ids1 = np.stack(rows1)
    ids2 = np.stack(rows2)
    b = ids1.shape[0]

    times = sampling_times(schedule.T, n_steps)
    for idx in range(len(times) - 1, -1, -1):
        t = int(times[idx])
        abar_prev = schedule.abar(int(times[idx - 1])) if idx > 0 else 1.0
        tok1 = M.patchify(x1, config)
        tok2 = M.patchify(x2, config)
        with ag.no_grad():
            e1, e2 = M.t2i_pair_forward(params, config,
                                        np.stack([tok1] * b), np.stack([tok2] * b),
                                        np.full(b, t), ids1, ids2, gamma)
        eps1_rows = [M.unpatchify(e1.data[i], config) for i in range(b)]
        eps2_rows = [M.unpatchify(e2.data[i], config) for i in range(b)]
        eps1 = eps1_rows[0] if b == 1 else cfg_combine(eps1_rows[0], eps1_rows[1], w)
        eps2 = eps2_rows[0] if b == 1 else cfg_combine(eps2_rows[0], eps2_rows[1], w)
        x1 = ddim_step(x1, eps1, schedule.abar(t), abar_prev, clip_x0=clip_x0)
        x2 = ddim_step(x2, eps2, schedule.abar(t), abar_prev, clip_x0=clip_x0)
    return to_pixel_space(x1), to_pixel_space(x2)
