"""Shared-weight two-branch denoiser.

One joint-sequence transformer serves both branches: condition tokens
(input caption + clean input image, modulated with the fixed pseudo-
timestep t_c) and generation tokens (instruction text + noisy image,
modulated with the denoising timestep t). A block-causal mask keeps the
condition branch blind to the generation branch, so dropping the condition
branch *is* the plain text-to-image model, with bit-equal outputs.

Because the condition branch never sees the other branch and its timestep
is fixed, its per-layer keys/values can be computed once and cached for a
whole sampling run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from toyedit import autograd as ag
from toyedit.autograd import Tensor


class ContractError(ValueError):
    pass


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 16
    patch_size: int = 4
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 4
    vocab_size: int = 30
    max_caption_tokens: int = 5
    max_instruction_tokens: int = 3
    t_c: int = -100
    T: int = 1000
    ffn_mult: int = 4
    sym_wma: bool = False  # mix the sibling stream's attention into stream 1 as well

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ModelConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.d_model % self.n_heads != 0:
            raise ModelConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if 0 <= self.t_c < self.T:
            raise ModelConfigError(f"t_c must lie outside [0, {self.T}), got {self.t_c}")

    @property
    def n_img_tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = config.d_model
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.w": (config.patch_dim, d),
        "patch_embed.b": (d,),
        "token_embed": (config.vocab_size, d),
        "t_mlp.w1": (d, d),
        "t_mlp.b1": (d,),
        "t_mlp.w2": (d, d),
        "t_mlp.b2": (d,),
        "final_ln.g": (d,),
        "final_ln.b": (d,),
        "head.w": (d, config.patch_dim),
        "head.b": (config.patch_dim,),
    }
    h = d * config.ffn_mult
    for i in range(config.n_layers):
        shapes[f"layers.{i}.qkv.w"] = (d, 3 * d)
        shapes[f"layers.{i}.qkv.b"] = (3 * d,)
        shapes[f"layers.{i}.proj.w"] = (d, d)
        shapes[f"layers.{i}.proj.b"] = (d,)
        shapes[f"layers.{i}.ada.w"] = (d, 6 * d)
        shapes[f"layers.{i}.ada.b"] = (6 * d,)
        shapes[f"layers.{i}.ffn.w1"] = (d, h)
        shapes[f"layers.{i}.ffn.b1"] = (h,)
        shapes[f"layers.{i}.ffn.w2"] = (h, d)
        shapes[f"layers.{i}.ffn.b2"] = (d,)
    return shapes


def param_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


def init_params(config: ModelConfig, rng: np.random.Generator,
                zero_init: bool = True, scale: float | None = None) -> dict[str, Tensor]:
    """Fresh parameters. zero_init zeroes the adaLN and output heads so
    untrained blocks start as identities (standard DiT initialization);
    disable it for gradient checks where degenerate zeros hide bugs.
    Weight matrices use 1/sqrt(fan_in) normal init unless `scale` overrides."""
    params = {}
    for name, shape in param_shapes(config).items():
        zeroed_head = ".ada." in name or name.startswith("head.")
        if name.endswith(".b") or name.endswith(".b1") or name.endswith(".b2"):
            data = np.zeros(shape, dtype=np.float32)
        elif name == "final_ln.g":
            data = np.ones(shape, dtype=np.float32)
        elif zero_init and zeroed_head:
            data = np.zeros(shape, dtype=np.float32)
        else:
            std = scale if scale is not None else (
                1.0 if len(shape) < 2 else 1.0 / np.sqrt(shape[0]))
            data = (rng.standard_normal(shape) * std).astype(np.float32)
        params[name] = Tensor(data, requires_grad=True)
    return params


def clone_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(p.data.copy(), requires_grad=True) for k, p in params.items()}


# --- tokenization of images ---------------------------------------------

def patchify(image: np.ndarray, config: ModelConfig) -> np.ndarray:
    """[H, W, 3] (or [B, H, W, 3]) -> [n_img, p*p*3] raster-order patches."""
    p = config.patch_size
    g = config.image_size // p
    batched = image.ndim == 4
    img = image if batched else image[None]
    if img.shape[-3:] != (config.image_size, config.image_size, 3):
        raise ModelConfigError(f"image shape {image.shape} does not match config image_size {config.image_size}")
    b = img.shape[0]
    tok = img.reshape(b, g, p, g, p, 3).transpose(0, 1, 3, 2, 4, 5).reshape(b, g * g, p * p * 3)
    return tok if batched else tok[0]


def unpatchify(tokens: np.ndarray, config: ModelConfig) -> np.ndarray:
    p = config.patch_size
    g = config.image_size // p
    batched = tokens.ndim == 3
    tok = tokens if batched else tokens[None]
    b = tok.shape[0]
    img = tok.reshape(b, g, g, p, p, 3).transpose(0, 1, 3, 2, 4, 5).reshape(
        b, config.image_size, config.image_size, 3)
    return img if batched else img[0]


# --- fixed positional encodings -------------------------------------------

def _sincos_1d(pos: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = 1.0 / (10000.0 ** (np.arange(half, dtype=np.float64) / half))
    args = np.asarray(pos, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(np.float32)


_POS_CACHE: dict[tuple, np.ndarray] = {}


def image_pos_encoding(config: ModelConfig) -> np.ndarray:
    """Fixed 2-D sin-cos positional encoding over the patch grid."""
    key = (config.image_size, config.patch_size, config.d_model)
    if key not in _POS_CACHE:
        g = config.image_size // config.patch_size
        ys, xs = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
        half = config.d_model // 2
        emb = np.concatenate([_sincos_1d(ys.reshape(-1), half),
                              _sincos_1d(xs.reshape(-1), half)], axis=1)
        _POS_CACHE[key] = emb.astype(np.float32)
    return _POS_CACHE[key]


# --- timestep embedding --------------------------------------------------

def sinusoid_features(t: np.ndarray, dim: int) -> np.ndarray:
    """Standard sinusoidal features; t may be any integer (t_c included)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float32))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float32) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1).astype(np.float32)


def _check_t(t: np.ndarray, config: ModelConfig) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t))
    ok = ((t >= 0) & (t < config.T)) | (t == config.t_c)
    if not ok.all():
        bad = t[~ok][0]
        raise ContractError(f"timestep {bad} outside [0, {config.T}) and != t_c={config.t_c}")
    return t


def timestep_embedding(params: dict[str, Tensor], config: ModelConfig, t) -> Tensor:
    """Sinusoids passed through the timestep MLP -> [B, d_model]."""
    t = _check_t(t, config)
    feats = Tensor(sinusoid_features(t, config.d_model))
    h = ag.gelu(ag.matmul(feats, params["t_mlp.w1"]) + params["t_mlp.b1"])
    return ag.matmul(h, params["t_mlp.w2"]) + params["t_mlp.b2"]


# --- masks ---------------------------------------------------------------

def block_causal_mask(n_in: int, n_out: int) -> np.ndarray:
    """Condition tokens attend within the condition block; generation
    tokens attend everywhere. Entry (q, k) allowed iff not (q < n_in and
    k >= n_in)."""
    if n_in < 0 or n_out < 1:
        raise ModelConfigError(f"need n_in >= 0 and n_out >= 1, got {n_in}, {n_out}")
    n = n_in + n_out
    mask = np.ones((n, n), dtype=np.float32)
    mask[:n_in, n_in:] = 0.0
    return mask


def full_mask(nq: int, nk: int) -> np.ndarray:
    return np.ones((nq, nk), dtype=np.float32)


# --- WMA primitive -------------------------------------------------------

def weighted_mutual_attention(q2: Tensor, k2: Tensor, v2: Tensor,
                              k1: Tensor, v1: Tensor,
                              mask: np.ndarray, n_heads: int,
                              gamma: float) -> Tensor:
    """Convex mix of stream-2 self-attention and mutual attention against
    stream 1's keys/values. gamma=0 and gamma=1 short-circuit so the
    endpoints are bit-equal to the pure operations."""
    if not 0.0 <= gamma <= 1.0:
        raise ModelConfigError(f"gamma must be in [0, 1], got {gamma}")
    if gamma == 0.0:
        return ag.attention(q2, k2, v2, mask, n_heads)
    f_ma = ag.attention(q2, k1, v1, mask, n_heads)
    if gamma == 1.0:
        return f_ma
    f_sa = ag.attention(q2, k2, v2, mask, n_heads)
    return f_sa * (1.0 - gamma) + f_ma * gamma


# --- forward helpers ------------------------------------------------------

def _layer_mods(params: dict[str, Tensor], config: ModelConfig, temb: Tensor):
    """Per-layer (shift_a, scale_a, gate_a, shift_m, scale_m, gate_m), each
    reshaped to [B, 1, d] for per-token broadcasting."""
    b = temb.shape[0]
    d = config.d_model
    act = ag.gelu(temb)
    mods = []
    for i in range(config.n_layers):
        m = ag.matmul(act, params[f"layers.{i}.ada.w"]) + params[f"layers.{i}.ada.b"]
        parts = tuple(
            ag.reshape(ag.slice_(m, (slice(None), slice(j * d, (j + 1) * d))), (b, 1, d))
            for j in range(6))
        mods.append(parts)
    return mods


def _embed_text(params: dict[str, Tensor], config: ModelConfig, ids: np.ndarray) -> Tensor:
    # caption/instruction slots draw from disjoint token ranges, so the
    # tokens themselves carry the slot identity; no positional term needed
    ids = np.asarray(ids)
    n = ids.shape[-1]
    if n > config.max_caption_tokens:
        raise ContractError(f"text segment of {n} tokens exceeds max {config.max_caption_tokens}")
    return ag.embed(params["token_embed"], ids)


def _embed_image_tokens(params: dict[str, Tensor], config: ModelConfig, tokens) -> Tensor:
    t = tokens if isinstance(tokens, Tensor) else Tensor(np.asarray(tokens, dtype=np.float32))
    if t.shape[-2:] != (config.n_img_tokens, config.patch_dim):
        raise ContractError(f"image token shape {t.shape} vs expected "
                            f"[{config.n_img_tokens}, {config.patch_dim}]")
    pos = Tensor(image_pos_encoding(config))
    return ag.matmul(t, params["patch_embed.w"]) + params["patch_embed.b"] + pos


def _embed_branch(params, config, text_ids: np.ndarray, img_tokens) -> Tensor:
    text = _embed_text(params, config, text_ids)
    img = _embed_image_tokens(params, config, img_tokens)
    if text.data.ndim == 2 and img.data.ndim == 3:
        b = img.shape[0]
        text = ag.reshape(text, (1,) + text.shape)
        text = ag.concat([text] * b, axis=0) if b > 1 else text
    return ag.concat([text, img], axis=-2)


def _modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    return x * (scale + 1.0) + shift


def _qkv(params, i: int, a: Tensor, d: int) -> tuple[Tensor, Tensor, Tensor]:
    m = ag.matmul(a, params[f"layers.{i}.qkv.w"]) + params[f"layers.{i}.qkv.b"]
    sl = (slice(None),) * (len(m.shape) - 1)
    q = ag.slice_(m, sl + (slice(0, d),))
    k = ag.slice_(m, sl + (slice(d, 2 * d),))
    v = ag.slice_(m, sl + (slice(2 * d, 3 * d),))
    return q, k, v


def _ffn(params, i: int, a: Tensor) -> Tensor:
    h = ag.gelu(ag.matmul(a, params[f"layers.{i}.ffn.w1"]) + params[f"layers.{i}.ffn.b1"])
    return ag.matmul(h, params[f"layers.{i}.ffn.w2"]) + params[f"layers.{i}.ffn.b2"]


def _block_single(params, config, i: int, h: Tensor, mods, attn_fn=None) -> Tensor:
    """One transformer block over a single token sequence.

    attn_fn(q, k, v) may replace plain self-attention (KV-cache reads, WMA
    mixing); the default is full self-attention over the sequence.
    """
    sh_a, sc_a, g_a, sh_m, sc_m, g_m = mods[i]
    d = config.d_model
    a = _modulate(ag.layernorm(h), sh_a, sc_a)
    q, k, v = _qkv(params, i, a, d)
    if attn_fn is None:
        att = ag.attention(q, k, v, full_mask(q.shape[-2], k.shape[-2]), config.n_heads)
    else:
        att = attn_fn(q, k, v)
    att = ag.matmul(att, params[f"layers.{i}.proj.w"]) + params[f"layers.{i}.proj.b"]
    h = h + g_a * att
    m = _modulate(ag.layernorm(h), sh_m, sc_m)
    h = h + g_m * _ffn(params, i, m)
    return h


def _block_joint(params, config, i: int, h_in: Tensor, h_out: Tensor,
                 mods_in, mods_out, mask: np.ndarray) -> tuple[Tensor, Tensor]:
    """One block over [condition | generation] with per-branch modulation."""
    d = config.d_model
    n_in = h_in.shape[-2]
    sh_a, sc_a, g_a, sh_m, sc_m, g_m = mods_in[i]
    so_a, co_a, go_a, so_m, co_m, go_m = mods_out[i]

    a_in = _modulate(ag.layernorm(h_in), sh_a, sc_a)
    a_out = _modulate(ag.layernorm(h_out), so_a, co_a)
    q_i, k_i, v_i = _qkv(params, i, a_in, d)
    q_o, k_o, v_o = _qkv(params, i, a_out, d)
    q = ag.concat([q_i, q_o], axis=-2)
    k = ag.concat([k_i, k_o], axis=-2)
    v = ag.concat([v_i, v_o], axis=-2)
    att = ag.attention(q, k, v, mask, config.n_heads)
    att = ag.matmul(att, params[f"layers.{i}.proj.w"]) + params[f"layers.{i}.proj.b"]
    sl = (slice(None),) * (len(att.shape) - 2)
    att_in = ag.slice_(att, sl + (slice(0, n_in),))
    att_out = ag.slice_(att, sl + (slice(n_in, att.shape[-2]),))
    h_in = h_in + g_a * att_in
    h_out = h_out + go_a * att_out
    h_in = h_in + g_m * _ffn(params, i, _modulate(ag.layernorm(h_in), sh_m, sc_m))
    h_out = h_out + go_m * _ffn(params, i, _modulate(ag.layernorm(h_out), so_m, co_m))
    return h_in, h_out


def _head(params, config, h_out: Tensor) -> Tensor:
    """Read the noise prediction off the image-token positions."""
    n_img = config.n_img_tokens
    sl = (slice(None),) * (len(h_out.shape) - 2)
    img_h = ag.slice_(h_out, sl + (slice(h_out.shape[-2] - n_img, h_out.shape[-2]),))
    img_h = ag.layernorm(img_h, params["final_ln.g"], params["final_ln.b"])
    return ag.matmul(img_h, params["head.w"]) + params["head.b"]


# --- public forwards ------------------------------------------------------

def forward_eps_tokens(params: dict[str, Tensor], config: ModelConfig,
                       x_t_tokens, t, out_text_ids: np.ndarray,
                       cond: tuple | None = None) -> Tensor:
    """Noise prediction in patch-token space, graph-enabled.

    x_t_tokens: [B, n_img, patch_dim]; t: [B] ints; out_text_ids: [B, n_txt].
    cond, when present, is (cond_img_tokens [B, n_img, patch_dim],
    cond_caption_ids [B, n_cap]); its tokens run at the fixed condition
    timestep and are invisible to nothing -- generation tokens see them,
    they see only themselves.
    """
    out_text_ids = np.asarray(out_text_ids)
    if out_text_ids.ndim == 1:
        out_text_ids = out_text_ids[None]
    t = np.atleast_1d(np.asarray(t))
    b = out_text_ids.shape[0]
    temb_out = timestep_embedding(params, config, t)
    mods_out = _layer_mods(params, config, temb_out)
    h_out = _embed_branch(params, config, out_text_ids, x_t_tokens)

    if cond is not None and np.asarray(cond[1]).shape[-1] == 0 and np.asarray(cond[0]).shape[-2] == 0:
        cond = None  # dropping the condition branch is literally a shorter sequence

    if cond is None:
        h = h_out
        for i in range(config.n_layers):
            h = _block_single(params, config, i, h, mods_out)
        return _head(params, config, h)

    cond_tokens, cond_caption = cond
    cond_caption = np.asarray(cond_caption)
    if cond_caption.ndim == 1:
        cond_caption = cond_caption[None]
    temb_in = timestep_embedding(params, config, np.full(b, config.t_c))
    mods_in = _layer_mods(params, config, temb_in)
    h_in = _embed_branch(params, config, cond_caption, cond_tokens)
    mask = block_causal_mask(h_in.shape[-2], h_out.shape[-2])
    for i in range(config.n_layers):
        h_in, h_out = _block_joint(params, config, i, h_in, h_out, mods_in, mods_out, mask)
    return _head(params, config, h_out)


def denoise_eps(params, config, x_t: np.ndarray, t: int, out_text_ids,
                cond: tuple | None = None) -> np.ndarray:
    """Image-shaped noise prediction (inference; no graph).

    cond is (input_image_model_space [H, W, 3], caption ids) or None for
    the plain text-to-image forward.
    """
    with ag.no_grad():
        x_tok = patchify(np.asarray(x_t, dtype=np.float32), config)[None]
        c = None
        if cond is not None:
            img, cap = cond
            if np.asarray(cap).size == 0 and np.asarray(img).size == 0:
                c = None  # empty condition branch == plain T2I
            else:
                c = (patchify(np.asarray(img, dtype=np.float32), config)[None], np.asarray(cap)[None])
        out = forward_eps_tokens(params, config, x_tok, np.array([t]), np.asarray(out_text_ids)[None], c)
    return unpatchify(out.data[0], config)


# --- KV cache -------------------------------------------------------------

@dataclass
class KVCache:
    k: list  # per layer [B, n_in, d]
    v: list
    n_in: int
    d_model: int
    n_layers: int

    def check(self, config: ModelConfig) -> None:
        if self.n_layers != config.n_layers or self.d_model != config.d_model:
            raise ContractError(
                f"cache built for n_layers={self.n_layers}, d_model={self.d_model}; "
                f"config has {config.n_layers}, {config.d_model}")


def encode_condition(params, config, input_image: np.ndarray,
                     caption_ids) -> KVCache:
    """Run the condition branch once at the fixed condition timestep and
    record its per-layer keys/values. Valid for one (image, caption) pair
    and reusable across every denoising step, since the condition branch
    never sees the generation branch and carries no noise."""
    ks: list[np.ndarray] = []
    vs: list[np.ndarray] = []

    def recording(q, k, v):
        ks.append(k.data.copy())
        vs.append(v.data.copy())
        return ag.attention(q, k, v, full_mask(q.shape[-2], k.shape[-2]), config.n_heads)

    with ag.no_grad():
        cap = np.asarray(caption_ids)
        if cap.ndim == 1:
            cap = cap[None]
        tok = patchify(np.asarray(input_image, dtype=np.float32), config)
        if tok.ndim == 2:
            tok = tok[None]
        b = cap.shape[0]
        temb = timestep_embedding(params, config, np.full(b, config.t_c))
        mods = _layer_mods(params, config, temb)
        h = _embed_branch(params, config, cap, tok)
        for i in range(config.n_layers):
            h = _block_single(params, config, i, h, mods, attn_fn=recording)
    return KVCache(k=ks, v=vs, n_in=ks[0].shape[-2], d_model=config.d_model,
                   n_layers=config.n_layers)


def forward_eps_tokens_cached(params, config, x_t_tokens, t,
                              out_text_ids: np.ndarray, cache: KVCache) -> Tensor:
    """Generation-branch forward reading condition keys/values from cache."""
    cache.check(config)
    out_text_ids = np.asarray(out_text_ids)
    if out_text_ids.ndim == 1:
        out_text_ids = out_text_ids[None]
    b = out_text_ids.shape[0]
    t = np.atleast_1d(np.asarray(t))
    temb = timestep_embedding(params, config, t)
    mods = _layer_mods(params, config, temb)
    h = _embed_branch(params, config, out_text_ids, x_t_tokens)
    layer = [0]

    def cached_attn(q, k, v):
        i = layer[0]
        ck, cv = cache.k[i], cache.v[i]
        if ck.shape[0] != b:
            ck = np.broadcast_to(ck, (b,) + ck.shape[1:])
            cv = np.broadcast_to(cv, (b,) + cv.shape[1:])
        k_all = ag.concat([Tensor(np.ascontiguousarray(ck)), k], axis=-2)
        v_all = ag.concat([Tensor(np.ascontiguousarray(cv)), v], axis=-2)
        layer[0] += 1
        return ag.attention(q, k_all, v_all,
                            full_mask(q.shape[-2], k_all.shape[-2]), config.n_heads)

    for i in range(config.n_layers):
        h = _block_single(params, config, i, h, mods, attn_fn=cached_attn)
    return _head(params, config, h)


def denoise_eps_cached(params, config, x_t: np.ndarray, t: int, out_text_ids,
                       cache: KVCache) -> np.ndarray:
    with ag.no_grad():
        x_tok = patchify(np.asarray(x_t, dtype=np.float32), config)[None]
        out = forward_eps_tokens_cached(params, config, x_tok, np.array([t]),
                                        np.asarray(out_text_ids)[None], cache)
    return unpatchify(out.data[0], config)


# --- paired text-to-image forward for pair synthesis ----------------------

def t2i_pair_forward(params, config, x1_tokens, x2_tokens, t,
                     text1_ids: np.ndarray, text2_ids: np.ndarray,
                     gamma: float):
    """Two text-to-image streams in lockstep; stream 2's attention is the
    weighted mutual mix against stream 1's keys/values at every layer.
    With config.sym_wma, stream 1 is mixed symmetrically against stream 2's
    (pre-mix) keys/values. Returns (eps1_tokens, eps2_tokens)."""
    if not 0.0 <= gamma <= 1.0:
        raise ModelConfigError(f"gamma must be in [0, 1], got {gamma}")
    t = np.atleast_1d(np.asarray(t))
    temb = timestep_embedding(params, config, t)
    mods = _layer_mods(params, config, temb)
    h1 = _embed_branch(params, config, np.asarray(text1_ids), x1_tokens)
    h2 = _embed_branch(params, config, np.asarray(text2_ids), x2_tokens)
    d = config.d_model

    for i in range(config.n_layers):
        sh_a, sc_a, g_a, sh_m, sc_m, g_m = mods[i]
        a1 = _modulate(ag.layernorm(h1), sh_a, sc_a)
        a2 = _modulate(ag.layernorm(h2), sh_a, sc_a)
        q1, k1, v1 = _qkv(params, i, a1, d)
        q2, k2, v2 = _qkv(params, i, a2, d)
        m12 = full_mask(q2.shape[-2], k1.shape[-2])
        att2 = weighted_mutual_attention(q2, k2, v2, k1, v1, m12, config.n_heads, gamma)
        if config.sym_wma:
            att1 = weighted_mutual_attention(q1, k1, v1, k2, v2,
                                             full_mask(q1.shape[-2], k2.shape[-2]),
                                             config.n_heads, gamma)
        else:
            att1 = ag.attention(q1, k1, v1, full_mask(q1.shape[-2], k1.shape[-2]), config.n_heads)
        w, bb = params[f"layers.{i}.proj.w"], params[f"layers.{i}.proj.b"]
        h1 = h1 + g_a * (ag.matmul(att1, w) + bb)
        h2 = h2 + g_a * (ag.matmul(att2, w) + bb)
        h1 = h1 + g_m * _ffn(params, i, _modulate(ag.layernorm(h1), sh_m, sc_m))
        h2 = h2 + g_m * _ffn(params, i, _modulate(ag.layernorm(h2), sh_m, sc_m))
    return _head(params, config, h1), _head(params, config, h2)
