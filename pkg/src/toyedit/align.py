"""Iterative alignment: score -> rank/filter -> fine-tune -> repeat.

Round 0 initializes the editing model from T2I weights and trains on
synthesized pairs; later rounds sample from the current editing model,
filter, and fine-tune again. A round that fails to improve the held-out
mean reward is rolled back and stops the loop, so accepted rounds are
non-decreasing by construction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from toyedit import autograd as ag
from toyedit import diffusion as D
from toyedit import model as M
from toyedit import world
from toyedit.ema import EmaTracker
from toyedit.optim import AdamWState, adamw_step
from toyedit.pairs import PairRecord, SynthesisConfig, synth_batch


class FilterContractError(ValueError):
    pass


class AlignmentDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class FilterConfig:
    k_min: int = 1
    k_max: int = 3
    min_similarity: float = 0.7
    min_direction: float = 0.5

    def __post_init__(self):
        if not 1 <= self.k_min <= self.k_max:
            raise FilterContractError(f"need 1 <= k_min <= k_max, got {self.k_min}, {self.k_max}")
        for name in ("min_similarity", "min_direction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise FilterContractError(f"{name} must be in [0, 1], got {v}")


@dataclass
class RoundReport:
    round: int
    n_candidates: int
    n_selected: int
    reward_before: float
    reward_after: float
    dir_after: float
    sim_after: float
    accepted: bool
    converged: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def reward(sim: float, dir_score: float) -> float:
    """sim + 5 min(dir, 0.2) + 2 max(dir, 0.2): weight re-generation while
    the direction score is low, reconstruction once it clears 0.2."""
    if not 0.0 <= sim <= 1.0:
        raise FilterContractError(f"sim must be in [0, 1], got {sim}")
    if not 0.0 <= dir_score <= 1.0:
        raise FilterContractError(f"dir must be in [0, 1], got {dir_score}")
    return sim + 5.0 * min(dir_score, 0.2) + 2.0 * max(dir_score, 0.2)


def score_records(records: list[PairRecord]) -> list[PairRecord]:
    """Fill oracle scores in place (idempotent) and return the list."""
    for rec in records:
        instr = world.instruction_of_tokens(list(rec.y))
        d = world.direction_score(rec.x_c, rec.x, instr)
        s = world.image_similarity(rec.x_c, rec.x)
        rec.scores = {"dir": d, "sim": s, "reward": reward(s, d)}
    return records


def rank_and_filter(records: list[PairRecord], cfg: FilterConfig) -> list[PairRecord]:
    """Per prompt: keep the top k_max by reward (ties break by seed), then
    drop anything below the thresholds. Prompts with no survivors vanish.
    Thresholding happens after top-k so ranking sees the full pool."""
    groups: dict = {}
    for rec in records:
        if rec.scores is None:
            raise FilterContractError("rank_and_filter needs scored records")
        key = (rec.provenance.get("round"), rec.provenance.get("prompt"))
        groups.setdefault(key, []).append(rec)

    selected = []
    for key in sorted(groups, key=lambda k: (str(k[0]), str(k[1]))):
        group = sorted(groups[key], key=lambda r: (-r.scores["reward"], r.seed))
        top = group[: cfg.k_max]
        keep = [r for r in top
                if r.scores["sim"] >= cfg.min_similarity
                and r.scores["dir"] >= cfg.min_direction]
        selected.extend(keep)
    return selected


def edit_sample(edit_params, config, schedule, input_image: np.ndarray,
                instruction: world.EditInstruction, guidance: D.GuidanceConfig,
                seed: int, n_steps: int = 50) -> np.ndarray:
    """End-user editing path: classify the input, encode it once as the
    condition branch, rephrase the instruction into the output caption
    (the rule-based stand-in for a VLM rephraser), and DDIM-sample the
    generation branch under that caption."""
    factors = world.classify(input_image)
    caption = world.caption_of(factors)
    out_caption = world.caption_of(world.apply_instruction(factors, instruction))
    return D.ddim_sample(edit_params, config, schedule, guidance,
                         out_caption, cond=(input_image, caption),
                         n_steps=n_steps, seed=seed)


def finetune(params, config, schedule, selected: list[PairRecord],
             t2i_dataset: list, train_cfg: D.TrainConfig,
             guidance: D.GuidanceConfig | None = None,
             log_every: int = 0) -> tuple[dict, list[float]]:
    """AdamW over the mixed loss; returns (new params, loss curve)."""
    if not selected:
        raise FilterContractError("finetune needs a non-empty selected set")
    if train_cfg.lam > 0 and not t2i_dataset:
        raise FilterContractError("lam > 0 requires a t2i dataset")
    guidance = guidance or D.GuidanceConfig()
    new_params = M.clone_params(params)
    if train_cfg.steps == 0:
        return new_params, []
    state = AdamWState.init(new_params)
    ema = EmaTracker(new_params, train_cfg.ema_decay) if train_cfg.ema_decay > 0 else None
    rng = np.random.default_rng(train_cfg.seed)
    edit_pool = [r.loss_record() for r in selected]
    losses = []
    for step in range(train_cfg.steps):
        idx = rng.integers(len(edit_pool), size=min(train_cfg.batch_size, len(edit_pool)))
        edit_batch = [edit_pool[j] for j in idx]
        t2i_batch = []
        if train_cfg.lam > 0:
            jdx = rng.integers(len(t2i_dataset), size=max(1, train_cfg.batch_size // 2))
            t2i_batch = [t2i_dataset[j] for j in jdx]
        loss = D.training_loss(new_params, config, schedule, edit_batch, t2i_batch,
                               train_cfg.lam, guidance, rng, train_cfg.min_snr_gamma)
        if not np.isfinite(loss.data):
            raise AlignmentDiverged(f"non-finite loss at fine-tune step {step}")
        ag.zero_grads(new_params)
        loss.backward()
        adamw_step(new_params, state, lr=train_cfg.lr_at(step), weight_decay=train_cfg.weight_decay)
        if ema is not None:
            ema.update(new_params)
        losses.append(float(loss.data))
        if log_every and step % log_every == 0:
            print(f"  finetune step {step}: loss {losses[-1]:.4f}")
    return (ema.snapshot() if ema is not None else new_params), losses


def make_heldout_cases(n_cases: int, seed: int) -> list[dict]:
    rng = np.random.default_rng(seed)
    cases = []
    for idx in range(n_cases):
        f = world.sample_factors(rng)
        i = world.sample_instruction(rng, f)
        cases.append({"id": idx, "factors": f, "instruction": i,
                      "image": world.render(f), "seed": int(rng.integers(2 ** 31))})
    return cases


def evaluate_editor(params, config, schedule, cases: list[dict],
                    guidance: D.GuidanceConfig, n_steps: int = 50) -> dict:
    """Mean oracle metrics of the editing model over held-out cases."""
    dirs, sims, rewards, succ = [], [], [], []
    for case in cases:
        out = edit_sample(params, config, schedule, case["image"],
                          case["instruction"], guidance, case["seed"], n_steps)
        d = world.direction_score(case["image"], out, case["instruction"])
        s = world.image_similarity(case["image"], out)
        dirs.append(d)
        sims.append(s)
        rewards.append(reward(s, d))
        succ.append(world.edit_success(case["image"], out, case["instruction"]))
    return {"dir": float(np.mean(dirs)), "sim": float(np.mean(sims)),
            "reward": float(np.mean(rewards)), "success": float(np.mean(succ))}


@dataclass
class AlignSettings:
    synthesis: SynthesisConfig
    filter: FilterConfig
    train_round0: D.TrainConfig
    train_later: D.TrainConfig
    n_prompts_round0: int = 200
    n_prompts_later: int = 80
    n_heldout: int = 64
    heldout_seed: int = 4242
    eval_guidance: D.GuidanceConfig | None = None
    sample_steps: int = 50
    max_rounds: int = 5
    eps_improve: float = 0.005  # relative held-out reward improvement


def align(t2i_params, config, schedule, settings: AlignSettings,
          t2i_dataset: list, seed: int = 0, out_dir=None,
          save_round=None, verbose: bool = False):
    """Full alignment loop; returns (final params, [RoundReport]).

    Round 0 trains an editing model from the T2I weights on WMA/regen
    pairs; rounds >= 1 synthesize from the current editing model. Stops on
    max_rounds, a regressing round (rolled back), or relative improvement
    below eps_improve.
    """
    rng = np.random.default_rng(seed)
    guidance = settings.eval_guidance or D.GuidanceConfig(w_text=3.0)
    heldout = make_heldout_cases(settings.n_heldout, settings.heldout_seed)
    reports: list[RoundReport] = []
    params = t2i_params
    best_reward = None

    for rnd in range(settings.max_rounds + 1):
        if verbose:
            print(f"round {rnd}: synthesizing candidates")
        if rnd == 0:
            candidates = synth_batch(params, config, schedule, settings.synthesis,
                                     settings.n_prompts_round0, rng, round_idx=0)
        else:
            def sampler(img, instr, cfg, s):
                g = D.GuidanceConfig(w_text=cfg, w_img=guidance.w_img)
                return edit_sample(params, config, schedule, img, instr, g, s,
                                   n_steps=settings.sample_steps)
            candidates = synth_batch(params, config, schedule, settings.synthesis,
                                     settings.n_prompts_later, rng,
                                     edit_sampler=sampler, round_idx=rnd)
        score_records(candidates)
        selected = rank_and_filter(candidates, settings.filter)
        if verbose:
            print(f"round {rnd}: {len(selected)}/{len(candidates)} records selected")
        if not selected:
            report = RoundReport(
                round=rnd, n_candidates=len(candidates), n_selected=0,
                reward_before=best_reward or 0.0, reward_after=best_reward or 0.0,
                dir_after=0.0, sim_after=0.0, accepted=False, converged=True)
            reports.append(report)
            if save_round is not None:
                save_round(rnd, candidates, selected, params, report)
            break

        before = evaluate_editor(params, config, schedule, heldout, guidance,
                                 settings.sample_steps) if rnd > 0 else None
        train_cfg = settings.train_round0 if rnd == 0 else settings.train_later
        new_params, losses = finetune(params, config, schedule, selected,
                                      t2i_dataset, train_cfg,
                                      log_every=200 if verbose else 0)
        after = evaluate_editor(new_params, config, schedule, heldout, guidance,
                                settings.sample_steps)
        reward_before = before["reward"] if before else (best_reward if best_reward is not None else 0.0)

        if best_reward is None or after["reward"] >= best_reward:
            accepted = True
            params = new_params
            prev = best_reward
            best_reward = after["reward"]
            converged = prev is not None and prev > 0 and \
                (best_reward - prev) / prev < settings.eps_improve
        else:
            accepted = False
            converged = True

        report = RoundReport(
            round=rnd, n_candidates=len(candidates), n_selected=len(selected),
            reward_before=float(reward_before), reward_after=float(after["reward"]),
            dir_after=float(after["dir"]), sim_after=float(after["sim"]),
            accepted=accepted, converged=converged)
        reports.append(report)
        if verbose:
            print(f"round {rnd}: reward {report.reward_before:.3f} -> {report.reward_after:.3f} "
                  f"accepted={accepted}")
        if save_round is not None:
            save_round(rnd, candidates, selected, params, report)
        if converged:
            break
    return params, reports
