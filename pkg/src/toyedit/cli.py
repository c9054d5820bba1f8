"""Command-line interface.

Exit codes: 0 success, 1 usage error (unknown flags, malformed
instructions), 2 runtime error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from toyedit import bench as B
from toyedit import diffusion as D
from toyedit import model as M
from toyedit import storage, world
from toyedit import train as T
from toyedit.align import (AlignSettings, FilterConfig, edit_sample, finetune,
                           rank_and_filter, score_records)
from toyedit.pairs import SynthesisConfig, synth_batch

FIELD_ALIASES = {
    "shape": "shape",
    "color": "fg_color",
    "fg_color": "fg_color",
    "background": "bg_color",
    "bg_color": "bg_color",
    "position": "position",
    "size": "size",
}

GRAMMAR_REMINDER = (
    'instruction grammar: "set <field> <value>" with fields '
    "shape|color|background|position|size, e.g. \"set color red\""
)


def parse_instruction_text(text: str) -> world.EditInstruction:
    parts = text.strip().split()
    if len(parts) != 3 or parts[0].lower() != "set":
        raise click.UsageError(f"cannot parse instruction {text!r}; {GRAMMAR_REMINDER}")
    field = FIELD_ALIASES.get(parts[1].lower())
    if field is None:
        raise click.UsageError(f"unknown field {parts[1]!r}; {GRAMMAR_REMINDER}")
    try:
        return world.EditInstruction(field, parts[2].lower())
    except world.InstructionError as exc:
        raise click.UsageError(f"{exc}; {GRAMMAR_REMINDER}")


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _model_config(cfg_file: dict) -> M.ModelConfig:
    return M.ModelConfig(**cfg_file.get("model", {}))


def _schedule_for(config: M.ModelConfig, cfg_file: dict) -> D.NoiseSchedule:
    sched = dict(cfg_file.get("schedule", {}))
    sched.setdefault("T", config.T)
    return D.make_schedule(**sched)


def common_options(fn):
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                      help="JSON config file with model/train/synthesis/filter/align sections")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), default="out", show_default=True)(fn)
    return fn


@click.group()
def cli():
    """Toy instruction-following image editor."""


@cli.command("make-data")
@common_options
def make_data(seed, config_path, out_dir):
    """Render the full factor world to PNGs with a caption manifest."""
    out = Path(out_dir)
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for idx, f in enumerate(world.all_factors()):
        rel = f"images/factor_{idx:04d}.png"
        (out / rel).write_bytes(storage.encode_image(world.render(f)))
        rows.append({"image": rel, "caption": world.caption_of(f),
                     "factors": {k: getattr(f, k) for k in world.FIELDS}})
    with open(out / "captions.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    click.echo(f"wrote {len(rows)} rendered images under {out}")


@cli.command("train-t2i")
@common_options
@click.option("--steps", type=int, default=6000, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--lr", type=float, default=2e-3, show_default=True)
@click.option("--eval-samples", type=int, default=100, show_default=True)
def train_t2i_cmd(seed, config_path, out_dir, steps, batch_size, lr, eval_samples):
    """Train the text-to-image model from scratch."""
    cfg_file = _load_config_file(config_path)
    config = _model_config(cfg_file)
    schedule = _schedule_for(config, cfg_file)
    tc = D.TrainConfig(**{**dict(steps=steps, batch_size=batch_size, lr=lr, seed=seed),
                          **cfg_file.get("train", {})})
    params, losses = T.train_t2i(config, schedule, tc, verbose=True)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    storage.save_checkpoint(params, config, {"stage": "t2i", "round": None,
                                             "steps": tc.steps, "seed": seed}, out / "t2i.ckpt")
    (out / "t2i_losses.json").write_text(json.dumps(losses))
    acc = T.t2i_caption_accuracy(params, config, schedule, n_samples=eval_samples, seed=seed)
    click.echo(f"checkpoint: {out / 't2i.ckpt'}")
    click.echo(f"caption accuracy on {eval_samples} fresh samples: {acc:.3f}")


@cli.command("synth-pairs")
@common_options
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--n-prompts", type=int, default=50, show_default=True)
@click.option("--mode", type=click.Choice(["regen", "wma", "mixed"]), default="mixed",
              show_default=True)
@click.option("--n-steps", type=int, default=50, show_default=True)
def synth_pairs_cmd(seed, config_path, out_dir, checkpoint, n_prompts, mode, n_steps):
    """Synthesize editing-pair candidates from a T2I checkpoint."""
    cfg_file = _load_config_file(config_path)
    params, config, _ = storage.load_checkpoint(checkpoint)
    schedule = _schedule_for(config, cfg_file)
    syn = SynthesisConfig(**{**dict(mode=mode, n_steps=n_steps), **cfg_file.get("synthesis", {})})
    rng = np.random.default_rng(seed)
    records = synth_batch(params, config, schedule, syn, n_prompts, rng)
    manifest = storage.write_manifest(records, out_dir, "candidates")
    click.echo(f"wrote {len(records)} candidates to {manifest}")


@cli.command("filter")
@common_options
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--k-max", type=int, default=3, show_default=True)
@click.option("--min-similarity", type=float, default=0.7, show_default=True)
@click.option("--min-direction", type=float, default=0.5, show_default=True)
def filter_cmd(seed, config_path, out_dir, manifest, k_max, min_similarity, min_direction):
    """Score candidates with the oracle and keep the best per prompt."""
    cfg_file = _load_config_file(config_path)
    fc = FilterConfig(**{**dict(k_max=k_max, min_similarity=min_similarity,
                                min_direction=min_direction), **cfg_file.get("filter", {})})
    records = storage.read_manifest(manifest)
    score_records(records)
    selected = rank_and_filter(records, fc)
    out_manifest = storage.write_manifest(selected, out_dir, "selected")
    click.echo(f"selected {len(selected)}/{len(records)} records -> {out_manifest}")


@cli.command("finetune")
@common_options
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--steps", type=int, default=3000, show_default=True)
@click.option("--lam", type=float, default=0.5, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
def finetune_cmd(seed, config_path, out_dir, checkpoint, manifest, steps, lam, lr):
    """Fine-tune an editing model on a selected manifest (mixed loss)."""
    cfg_file = _load_config_file(config_path)
    params, config, meta = storage.load_checkpoint(checkpoint)
    schedule = _schedule_for(config, cfg_file)
    selected = storage.read_manifest(manifest)
    tc = D.TrainConfig(**{**dict(steps=steps, lam=lam, lr=lr, seed=seed),
                          **cfg_file.get("train", {})})
    new_params, losses = finetune(params, config, schedule, selected,
                                  T.t2i_dataset(), tc, log_every=200)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    storage.save_checkpoint(new_params, config,
                            {"stage": "edit", "round": 0, "seed": seed}, out / "edit.ckpt")
    (out / "finetune_losses.json").write_text(json.dumps(losses))
    click.echo(f"checkpoint: {out / 'edit.ckpt'}")


@cli.command("align")
@common_options
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--max-rounds", type=int, default=5, show_default=True)
@click.option("--n-steps", type=int, default=50, show_default=True,
              help="DDIM steps for synthesis and evaluation")
def align_cmd(seed, config_path, out_dir, checkpoint, max_rounds, n_steps):
    """Run the full iterative alignment loop from a T2I checkpoint."""
    from toyedit.align import align

    cfg_file = _load_config_file(config_path)
    params, config, _ = storage.load_checkpoint(checkpoint)
    schedule = _schedule_for(config, cfg_file)
    a = cfg_file.get("align", {})
    settings = AlignSettings(
        synthesis=SynthesisConfig(**cfg_file.get("synthesis", {"n_steps": n_steps})),
        filter=FilterConfig(**cfg_file.get("filter", {})),
        train_round0=D.TrainConfig(**cfg_file.get("train_round0",
                                                  {"steps": 3000, "lam": 0.5, "lr": 1e-3, "seed": seed})),
        train_later=D.TrainConfig(**cfg_file.get("train_later",
                                                 {"steps": 500, "lam": 0.5, "lr": 5e-4, "seed": seed + 1})),
        max_rounds=max_rounds,
        sample_steps=n_steps,
        **a,
    )
    out = Path(out_dir)

    def save_round(rnd, candidates, selected, round_params, report):
        rdir = out / "rounds" / str(rnd)
        rdir.mkdir(parents=True, exist_ok=True)
        storage.write_manifest(candidates, rdir, "candidates")
        storage.write_manifest(selected, rdir, "selected")
        storage.save_checkpoint(round_params, config,
                                {"stage": "edit", "round": rnd, "seed": seed},
                                rdir / "model.ckpt")
        (rdir / "report.json").write_text(report.to_json())

    final_params, reports = align(params, config, schedule, settings,
                                  T.t2i_dataset(), seed=seed, save_round=save_round,
                                  verbose=True)
    storage.save_checkpoint(final_params, config,
                            {"stage": "edit", "round": reports[-1].round, "seed": seed},
                            out / "aligned.ckpt")
    click.echo(f"{len(reports)} rounds; final checkpoint: {out / 'aligned.ckpt'}")


@cli.command("eval")
@common_options
@click.option("--checkpoint", type=click.Path(exists=True), required=True,
              help="T2I checkpoint (re-generation baseline)")
@click.option("--aligned", "aligned_paths", type=click.Path(exists=True), multiple=True,
              help="aligned editing checkpoints, one per round")
@click.option("--n-cases", type=int, default=200, show_default=True)
@click.option("--n-steps", type=int, default=50, show_default=True)
def eval_cmd(seed, config_path, out_dir, checkpoint, aligned_paths, n_cases, n_steps):
    """Benchmark strategies and write report.json + curve.csv."""
    cfg_file = _load_config_file(config_path)
    t2i_params, config, _ = storage.load_checkpoint(checkpoint)
    schedule = _schedule_for(config, cfg_file)
    aligned = [storage.load_checkpoint(p)[0] for p in aligned_paths]
    cases = B.build_benchmark(n_cases, seed)
    report = B.compare_strategies(t2i_params, aligned, config, schedule, cases,
                                  n_steps=n_steps)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    B.write_report(report, out / "report.json")
    points = [B.TradeoffPoint(**p) for p in report["regen"]]
    for curve in report["aligned_rounds"]:
        points.extend(B.TradeoffPoint(**p) for p in curve)
    B.write_curve_csv(points, out / "curve.csv")
    if "dominance" in report:
        click.echo(f"dominance fraction: {report['dominance']['fraction_dominated']:.2f}")
    click.echo(f"report: {out / 'report.json'}")


@cli.command("edit")
@common_options
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--input", "input_path", type=click.Path(exists=True), required=True)
@click.option("--instruction", required=True, help='e.g. "set color red"')
@click.option("--cfg-text", type=float, default=3.0, show_default=True)
@click.option("--cfg-img", type=float, default=1.0, show_default=True)
@click.option("--n-steps", type=int, default=50, show_default=True)
def edit_cmd(seed, config_path, out_dir, checkpoint, input_path, instruction,
             cfg_text, cfg_img, n_steps):
    """Apply one instruction to a PNG and write the edited PNG."""
    instr = parse_instruction_text(instruction)
    cfg_file = _load_config_file(config_path)
    params, config, _ = storage.load_checkpoint(checkpoint)
    schedule = _schedule_for(config, cfg_file)
    img = storage.decode_image(Path(input_path).read_bytes())
    if img.shape != (config.image_size, config.image_size, 3):
        raise click.ClickException(
            f"input must be {config.image_size}x{config.image_size} RGB, got {img.shape}")
    guidance = D.GuidanceConfig(w_text=cfg_text, w_img=cfg_img)
    out_img = edit_sample(params, config, schedule, img, instr, guidance, seed, n_steps)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    out_path = out / "edited.png"
    out_path.write_bytes(storage.encode_image(out_img))
    d = world.direction_score(img, out_img, instr)
    s = world.image_similarity(img, out_img)
    ok = world.edit_success(img, out_img, instr)
    click.echo(f"wrote {out_path}  dir={d:.3f} sim={s:.3f} success={ok}")


@cli.command("serve")
@common_options
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8321, show_default=True)
@click.option("--static-dir", type=click.Path(), default=None,
              help="serve a built frontend from this directory")
def serve_cmd(seed, config_path, out_dir, checkpoint, host, port, static_dir):
    """Serve the HTTP API (and optionally the UI) over one checkpoint."""
    from toyedit.server import serve

    click.echo(f"serving {checkpoint} on http://{host}:{port}")
    serve(checkpoint, host=host, port=port, static_dir=static_dir)


def run(argv=None) -> int:
    try:
        cli(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 2
    except click.exceptions.Abort:
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
