"""Held-out benchmark and the direction-vs-similarity trade-off study.

Strategies are callables (case, cfg) -> output image; the bench runs them
over a stratified case set and aggregates exact oracle metrics, producing
trade-off curves across CFG values and a dominance report comparing the
aligned editor against naive re-generation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from math import fsum

import numpy as np

from toyedit import diffusion as D
from toyedit import world
from toyedit.align import edit_sample, reward

DEFAULT_CFG_LIST = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.5)


@dataclass(frozen=True)
class BenchCase:
    id: int
    factors: world.FactorVector
    instruction: world.EditInstruction
    seed: int

    @property
    def image(self) -> np.ndarray:
        return world.render(self.factors)


@dataclass
class TradeoffPoint:
    strategy: str
    cfg: float
    dir: float
    sim: float
    reward: float
    success: float
    n: int


def build_benchmark(n_cases: int = 200, seed: int = 0) -> list[BenchCase]:
    """Deterministic stratified case set: instruction fields rotate so each
    of the 5 fields gets at least n_cases // 5 cases; inputs are exact
    renders and instructions are never no-ops."""
    rng = np.random.default_rng(seed)
    cases = []
    for idx in range(n_cases):
        f = world.sample_factors(rng)
        field = world.FIELDS[idx % len(world.FIELDS)]
        current = getattr(f, field)
        choices = [v for v in world.FIELD_VALUES[field] if v != current]
        instr = world.EditInstruction(field, choices[rng.integers(len(choices))])
        cases.append(BenchCase(id=idx, factors=f, instruction=instr,
                               seed=int(rng.integers(2 ** 31))))
    return cases


def evaluate(strategy, cases: list[BenchCase], cfg: float,
             label: str = "strategy") -> TradeoffPoint:
    """Run every case through the strategy and aggregate oracle metrics."""
    dirs, sims, rewards, succ = [], [], [], []
    for case in cases:
        img = case.image
        out = strategy(case, cfg)
        d = world.direction_score(img, out, case.instruction)
        s = world.image_similarity(img, out)
        dirs.append(d)
        sims.append(s)
        rewards.append(reward(s, d))
        succ.append(world.edit_success(img, out, case.instruction))
    n = len(cases)
    # fsum: exact aggregation, so the result is evaluation-order independent
    return TradeoffPoint(strategy=label, cfg=cfg,
                         dir=fsum(dirs) / n, sim=fsum(sims) / n,
                         reward=fsum(rewards) / n, success=fsum(succ) / n,
                         n=n)


def tradeoff_curve(strategy, cases: list[BenchCase],
                   cfg_list=DEFAULT_CFG_LIST, label: str = "strategy") -> list[TradeoffPoint]:
    return [evaluate(strategy, cases, float(cfg), label) for cfg in cfg_list]


# --- strategy factories ---------------------------------------------------

def strategy_identity():
    """Calibration anchor: output = input (sim 1, dir 0)."""
    def run(case: BenchCase, cfg: float) -> np.ndarray:
        return case.image
    return run


def strategy_oracle():
    """Upper bound: output = exact render of the edited factors."""
    def run(case: BenchCase, cfg: float) -> np.ndarray:
        return world.render(world.apply_instruction(case.factors, case.instruction))
    return run


def strategy_regen(params, config, schedule, share_noise: bool = True,
                   n_steps: int = 50):
    """Naive re-generation from the edited caption (the weak editor)."""
    def run(case: BenchCase, cfg: float) -> np.ndarray:
        f2 = world.apply_instruction(case.factors, case.instruction)
        guidance = D.GuidanceConfig(w_text=cfg)
        seed = case.seed if share_noise else case.seed + 1_000_003
        return D.ddim_sample(params, config, schedule, guidance,
                             world.caption_of(f2), n_steps=n_steps, seed=seed)
    return run


def strategy_wma(params, config, schedule, gamma: float, n_steps: int = 50):
    def run(case: BenchCase, cfg: float) -> np.ndarray:
        guidance = D.GuidanceConfig(w_text=cfg)
        cap1 = world.caption_of(case.factors)
        cap2 = world.caption_of(world.apply_instruction(case.factors, case.instruction))
        _, x = D.ddim_sample_pair(params, config, schedule, guidance, cap1, cap2,
                                  gamma, n_steps=n_steps, seed=case.seed)
        return x
    return run


def strategy_edit_model(params, config, schedule, w_img: float = 1.0,
                        n_steps: int = 50):
    def run(case: BenchCase, cfg: float) -> np.ndarray:
        guidance = D.GuidanceConfig(w_text=cfg, w_img=w_img)
        return edit_sample(params, config, schedule, case.image,
                           case.instruction, guidance, case.seed, n_steps)
    return run


# --- comparison report ------------------------------------------------------

def dominance_check(regen_curve: list[TradeoffPoint],
                    aligned_curve: list[TradeoffPoint],
                    sim_margin: float = 0.05) -> dict:
    """For each re-generation point: does some aligned point reach at least
    its direction score with similarity higher by at least the margin?"""
    per_point = []
    for rp in regen_curve:
        dominated = any(ap.dir >= rp.dir and ap.sim >= rp.sim + sim_margin
                        for ap in aligned_curve)
        per_point.append({"cfg": rp.cfg, "dir": rp.dir, "sim": rp.sim,
                          "dominated": dominated})
    frac = float(np.mean([p["dominated"] for p in per_point])) if per_point else 0.0
    return {"sim_margin": sim_margin, "points": per_point, "fraction_dominated": frac}


def compare_strategies(t2i_params, aligned_params_per_round: list, config, schedule,
                       cases: list[BenchCase], cfg_list=DEFAULT_CFG_LIST,
                       n_steps: int = 50, sim_margin: float = 0.05) -> dict:
    """Full report: identity anchor, regen curve, per-round aligned curves,
    and the dominance check of the final aligned model over re-generation."""
    report: dict = {"n_cases": len(cases), "cfg_list": list(cfg_list)}
    report["identity"] = asdict(evaluate(strategy_identity(), cases, 0.0, "identity"))

    regen = tradeoff_curve(strategy_regen(t2i_params, config, schedule, n_steps=n_steps),
                           cases, cfg_list, "regen_shared_seed")
    report["regen"] = [asdict(p) for p in regen]

    rounds = []
    final_curve = None
    for ridx, params in enumerate(aligned_params_per_round):
        curve = tradeoff_curve(strategy_edit_model(params, config, schedule, n_steps=n_steps),
                               cases, cfg_list, f"aligned_round{ridx}")
        rounds.append([asdict(p) for p in curve])
        final_curve = curve
    report["aligned_rounds"] = rounds

    if final_curve is not None:
        report["dominance"] = dominance_check(regen, final_curve, sim_margin)
    return report


def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)


def write_curve_csv(points: list[TradeoffPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "cfg", "dir", "sim", "reward", "success"])
        for p in points:
            w.writerow([p.strategy, p.cfg, p.dir, p.sim, p.reward, p.success])
