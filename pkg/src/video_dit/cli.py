"""Command-line entry point for reproducible runs.

Subcommands: train, sample, predict, eval, compare-cond, gen-data,
inspect-schedule.  Every run is driven by one JSON run config (sections
model/schedule/data/train/sampler + seed) and writes its resolved config
next to its outputs, so a rerun from that file with the same seed is
bit-reproducible within one runtime configuration.

Exit codes: 0 success, 2 config error, 3 numerical failure (a non-finite
training loss aborts loudly with batch statistics).
"""

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import network, sampler, training
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig
from .data import (dataset_from_config, clips_to_model_space,
                   model_space_to_clips, make_tokenizer, to_uint8,
                   write_vclip, read_vclip, from_uint8, export_frames,
                   normalize)
from .eval import evaluate_clips, MetricReport
from .params import init_params
from .schedule import make_schedule
from .training import TrainPlan, run_training, write_loss_csv, canonical_stage

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# run-config plumbing

def load_run_config(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            run = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")
    if not isinstance(run, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return run


def _section(run, name) -> dict:
    if name not in run:
        raise ConfigError(f"config is missing the '{name}' section")
    if not isinstance(run[name], dict):
        raise ConfigError(f"config section '{name}' must be an object")
    return run[name]


def _model_cfg(run) -> ModelConfig:
    try:
        return ModelConfig.from_json(_section(run, "model"))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"model section: {e}")


def _schedule_cfg(run):
    try:
        return make_schedule(**_section(run, "schedule"))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"schedule section: {e}")


def _tokenizer_cfg(run):
    d = _section(run, "data")
    try:
        return make_tokenizer(d.get("tokenizer", "identity"),
                              d.get("pool_factor", 2))
    except ValueError as e:
        raise ConfigError(f"data section: {e}")


def _build_dataset(run, seed):
    dcfg = _section(run, "data")
    try:
        return dataset_from_config(dcfg, seed=dcfg.get("seed", seed))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"data section: {e}")


def _check_dims(run, cfg: ModelConfig):
    d = _section(run, "data")
    tok = _tokenizer_cfg(run)
    lh, lw = tok.latent_hw(d.get("height", 16), d.get("width", 16))
    if (lh, lw) != (cfg.latent_h, cfg.latent_w):
        raise ConfigError(
            f"tokenizer produces {lh}x{lw} latents but the model expects "
            f"{cfg.latent_h}x{cfg.latent_w}")
    if cfg.latent_c != 3:
        raise ConfigError("pixel tokenizers produce 3 latent channels")
    need = cfg.frames + (cfg.cond_frames if cfg.cond_scheme != "none" else 0)
    if d.get("frames") != need:
        raise ConfigError(
            f"data.frames must equal model frames plus conditional frames "
            f"({need}), got {d.get('frames')}")


def _resolve_seed(run, args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return int(run.get("seed", 0))


def _write_resolved(run, out_dir, seed, command):
    resolved = dict(run)
    resolved["seed"] = seed
    resolved["command"] = command
    path = os.path.join(out_dir, "resolved_config.json")
    with open(path, "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
    return path


def _split_latents(run, dataset, tok):
    """(train_latents, holdout_latents, holdout_pixels): holdout clips are
    the trailing `data.holdout` indices (default 0)."""
    d = _section(run, "data")
    holdout = int(d.get("holdout", 0))
    latents = clips_to_model_space(dataset.clips, tok)
    if holdout <= 0:
        return latents, None, None
    if holdout >= len(dataset.clips):
        raise ConfigError(f"data.holdout={holdout} leaves no training clips")
    return (latents[:-holdout], latents[-holdout:],
            dataset.clips[-holdout:])


# ---------------------------------------------------------------------------
# subcommands

def cmd_train(args) -> int:
    run = load_run_config(args.config)
    cfg = _model_cfg(run)
    sched = _schedule_cfg(run)
    _check_dims(run, cfg)
    tok = _tokenizer_cfg(run)
    seed = _resolve_seed(run, args)
    stage = canonical_stage(args.stage)

    stages = _section(run, "train").get("stages", [])
    entry = next((s for s in stages
                  if canonical_stage(s.get("stage", "")) == stage), None)
    if entry is None:
        raise ConfigError(f"train.stages has no entry for stage {args.stage!r}")
    plan = TrainPlan(stage=stage, steps=int(entry["steps"]),
                     lr=float(entry.get("lr", 1e-4)),
                     batch=int(entry.get("batch", 8)),
                     weight_decay=float(_section(run, "train").get("weight_decay", 0.0)))

    dataset = _build_dataset(run, seed)
    train_latents, _, _ = _split_latents(run, dataset, tok)

    if args.init_from:
        params, ck_cfg = load_checkpoint(args.init_from)
        if ck_cfg != cfg:
            raise ConfigError(
                f"checkpoint {args.init_from} was trained with a different "
                f"model config")
    else:
        params = init_params(cfg, np.random.default_rng(seed))

    os.makedirs(args.out, exist_ok=True)
    result = run_training(params, cfg, sched, train_latents, [plan],
                          seed=seed, log_every=args.log_every)
    ck_path = os.path.join(args.out, "checkpoint.bin")
    save_checkpoint(ck_path, result.params, cfg)
    csv_path = os.path.join(args.out, f"loss_{stage}.csv")
    write_loss_csv(csv_path, result.history)
    _write_resolved(run, args.out, seed, f"train --stage {args.stage}")
    losses = result.losses()
    print(f"stage {stage}: {len(losses)} steps, "
          f"loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    print(f"wrote {ck_path} and {csv_path}")
    return EXIT_OK


def _load_model(args, run):
    params, cfg = load_checkpoint(args.ckpt)
    cfg_conf = _model_cfg(run)
    if cfg != cfg_conf:
        raise ConfigError("checkpoint model config differs from run config")
    return params, cfg


def cmd_sample(args) -> int:
    run = load_run_config(args.config)
    sched = _schedule_cfg(run)
    tok = _tokenizer_cfg(run)
    seed = _resolve_seed(run, args)
    params, cfg = _load_model(args, run)
    if cfg.cond_scheme != "none":
        raise ConfigError("sample is unconditional; use predict for "
                          "conditional schemes")
    scfg = sampler.SamplerConfig(
        variance_choice=run.get("sampler", {}).get("variance", "beta_tilde"),
        seed=seed)
    eps_fn = network.make_eps_fn(params, cfg)
    shape = (args.count, cfg.frames, cfg.latent_h, cfg.latent_w, cfg.latent_c)
    lat = sampler.sample(eps_fn, sched, scfg, shape)
    clips = model_space_to_clips(lat, tok)
    os.makedirs(args.out, exist_ok=True)
    for i, clip in enumerate(clips):
        write_vclip(os.path.join(args.out, f"sample_{i:03d}.vclip"),
                    to_uint8(clip))
        export_frames(clip, os.path.join(args.out, f"sample_{i:03d}_frames"))
    _write_resolved(run, args.out, seed, "sample")
    print(f"wrote {len(clips)} samples to {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    run = load_run_config(args.config)
    sched = _schedule_cfg(run)
    tok = _tokenizer_cfg(run)
    seed = _resolve_seed(run, args)
    params, cfg = _load_model(args, run)
    if cfg.cond_scheme == "none":
        raise ConfigError("predict needs a conditional scheme; use sample")
    k = args.cond_frames or cfg.cond_frames
    if k != cfg.cond_frames and cfg.cond_scheme != "token_concat":
        raise ConfigError(f"scheme {cfg.cond_scheme} is fixed to "
                          f"K={cfg.cond_frames} conditional frames")
    scfg = sampler.SamplerConfig(
        variance_choice=run.get("sampler", {}).get("variance", "beta_tilde"),
        seed=seed)
    eps_fn = network.make_eps_fn(params, cfg)
    os.makedirs(args.out, exist_ok=True)

    truth_pixels = None
    if args.cond:
        raw = read_vclip(args.cond)
        pix = from_uint8(raw) if raw.dtype == np.uint8 else raw.astype(np.float64)
        if pix.shape[0] < k:
            raise ConfigError(f"cond clip has {pix.shape[0]} frames, need {k}")
        cond_lat = normalize(tok.encode(pix[:k]))[None]
    else:
        dataset = _build_dataset(run, seed)
        _, hold_lat, hold_pix = _split_latents(run, dataset, tok)
        if hold_lat is None:
            raise ConfigError("predict without --cond needs data.holdout > 0")
        n = min(args.count, hold_lat.shape[0])
        cond_lat = hold_lat[:n, :k]
        truth_pixels = hold_pix[:n, cfg.cond_frames:]

    _, pred_lat = sampler.predict(eps_fn, sched, scfg, cond_lat, cfg.frames)
    pred_clips = model_space_to_clips(pred_lat, tok)
    for i, clip in enumerate(pred_clips):
        write_vclip(os.path.join(args.out, f"pred_{i:03d}.vclip"),
                    to_uint8(clip))
        export_frames(clip, os.path.join(args.out, f"pred_{i:03d}_frames"))

    if truth_pixels is not None:
        report = evaluate_clips(list(pred_clips), list(truth_pixels))
        with open(os.path.join(args.out, "metrics.json"), "w") as fh:
            fh.write(report.to_json())
        table = report.format_table()
        with open(os.path.join(args.out, "metrics.txt"), "w") as fh:
            fh.write(table + "\n")
        print(table)
        for i, t in enumerate(truth_pixels):
            write_vclip(os.path.join(args.out, f"truth_{i:03d}.vclip"),
                        to_uint8(t))
    _write_resolved(run, args.out, seed, f"predict --cond-frames {k}")
    print(f"wrote {len(pred_clips)} predictions to {args.out}")
    return EXIT_OK


def _gather_clips(spec_list):
    paths = []
    for item in spec_list:
        if os.path.isdir(item):
            paths.extend(sorted(glob.glob(os.path.join(item, "*.vclip"))))
        else:
            paths.append(item)
    if not paths:
        raise ConfigError(f"no .vclip files found in {spec_list}")
    clips = []
    for p in paths:
        raw = read_vclip(p)
        clips.append(from_uint8(raw) if raw.dtype == np.uint8
                     else raw.astype(np.float64))
    return clips


def cmd_eval(args) -> int:
    preds = _gather_clips(args.pred)
    truths = _gather_clips(args.truth)
    if len(preds) != len(truths):
        raise ConfigError(f"{len(preds)} predictions vs {len(truths)} truths")
    report = evaluate_clips(preds, truths, with_fd=len(preds) >= 2)
    print(report.format_table())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.to_json())
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_compare_cond(args) -> int:
    run = load_run_config(args.config)
    base_cfg = _model_cfg(run)
    sched = _schedule_cfg(run)
    tok = _tokenizer_cfg(run)
    _check_dims(run, base_cfg)
    train_sec = _section(run, "train")
    entry = train_sec.get("compare")
    if entry is None:
        entry = next((s for s in train_sec.get("stages", [])
                      if canonical_stage(s.get("stage", "")) == "joint"), None)
    if entry is None:
        raise ConfigError("train.compare or a joint stage entry is required")
    seeds = args.seeds or [int(run.get("seed", 0))]
    if base_cfg.cond_frames < 1:
        raise ConfigError("compare-cond needs model.cond_frames >= 1")

    schemes = ("adaln", "cross_attention", "token_concat")
    os.makedirs(args.out, exist_ok=True)
    summary = {"schemes": schemes, "seeds": list(seeds), "final_loss": {},
               "lowest": {}}
    tail = max(1, int(entry["steps"]) // 10)
    for seed in seeds:
        dataset = _build_dataset(run, seed)
        latents, _, _ = _split_latents(run, dataset, tok)
        histories = {}
        for scheme in schemes:
            cfg = base_cfg.with_scheme(scheme, base_cfg.cond_frames)
            params = init_params(cfg, np.random.default_rng(seed))
            plan = TrainPlan(stage="joint", steps=int(entry["steps"]),
                             lr=float(entry.get("lr", 1e-4)),
                             batch=int(entry.get("batch", 8)))
            result = run_training(params, cfg, sched, latents, [plan],
                                  seed=seed, log_every=args.log_every)
            histories[scheme] = result.losses()
        csv_path = os.path.join(args.out, f"compare_seed{seed}.csv")
        with open(csv_path, "w") as fh:
            fh.write("step," + ",".join(schemes) + "\n")
            for i in range(int(entry["steps"])):
                fh.write(f"{i}," + ",".join(f"{histories[s][i]!r}"
                                            for s in schemes) + "\n")
        finals = {s: float(np.mean(histories[s][-tail:])) for s in schemes}
        summary["final_loss"][str(seed)] = finals
        summary["lowest"][str(seed)] = min(finals, key=finals.get)
        print(f"seed {seed}: " + "  ".join(f"{s}={finals[s]:.4f}"
                                           for s in schemes)
              + f"  lowest={summary['lowest'][str(seed)]}")
    wins = sum(1 for s in summary["lowest"].values() if s == "token_concat")
    summary["token_concat_wins"] = wins
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    _write_resolved(run, args.out, seeds[0], "compare-cond")
    print(f"token_concat lowest in {wins}/{len(seeds)} seeds")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    run = load_run_config(args.config)
    seed = _resolve_seed(run, args)
    dataset = _build_dataset(run, seed)
    os.makedirs(args.out, exist_ok=True)
    for i, clip in enumerate(dataset.clips):
        write_vclip(os.path.join(args.out, f"clip_{i:04d}.vclip"),
                    to_uint8(clip))
    meta = {"kind": _section(run, "data").get("kind"),
            "n_clips": len(dataset.clips), "seed": seed,
            "config": dataset.config.to_json()}
    if getattr(dataset, "labels", None) is not None:
        meta["collision_labels"] = dataset.labels.astype(int).tolist()
    with open(os.path.join(args.out, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    _write_resolved(run, args.out, seed, "gen-data")
    print(f"wrote {len(dataset.clips)} clips to {args.out}")
    return EXIT_OK


def cmd_inspect_schedule(args) -> int:
    try:
        sched = make_schedule(args.T, args.beta_start, args.beta_end)
    except ValueError as e:
        raise ConfigError(str(e))
    marks = sorted({1, max(sched.T // 4, 1), max(sched.T // 2, 1),
                    max(3 * sched.T // 4, 1), sched.T})
    print(f"{'t':>6}  {'beta':>12}  {'alpha_bar':>12}  {'posterior_var':>14}")
    for t in marks:
        i = t - 1
        print(f"{t:>6}  {sched.beta[i]:>12.6g}  {sched.alpha_bar[i]:>12.6g}  "
              f"{sched.posterior_var[i]:>14.6g}")
    if args.json:
        payload = sched.to_config()
        payload["alpha_bar_final"] = float(sched.alpha_bar[-1])
        with open(args.json, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        print(f"wrote {args.json}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="video-dit",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--config", required=True)
    t.add_argument("--stage", required=True,
                   choices=["spatial", "temporal", "joint"])
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--init-from", default=None,
                   help="checkpoint to continue from (required workflow for "
                        "the temporal stage)")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sample", help="unconditional generation")
    s.add_argument("--config", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--count", type=int, default=4)
    s.set_defaults(fn=cmd_sample)

    p = sub.add_parser("predict", help="conditional video prediction")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--cond", default=None,
                   help=".vclip of observed frames; default: held-out clips")
    p.add_argument("--cond-frames", type=int, default=None,
                   help="use K' observed frames (token_concat only)")
    p.set_defaults(fn=cmd_predict)

    e = sub.add_parser("eval", help="SSIM/PSNR/FD between clip sets")
    e.add_argument("--pred", nargs="+", required=True)
    e.add_argument("--truth", nargs="+", required=True)
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("compare-cond",
                       help="train the three schemes at a matched budget")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--seeds", type=int, nargs="+", default=None)
    c.add_argument("--log-every", type=int, default=0)
    c.set_defaults(fn=cmd_compare_cond)

    g = sub.add_parser("gen-data", help="materialize a dataset as .vclip files")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=None)
    g.set_defaults(fn=cmd_gen_data)

    i = sub.add_parser("inspect-schedule", help="print schedule tables")
    i.add_argument("--T", type=int, required=True)
    i.add_argument("--beta-start", type=float, required=True)
    i.add_argument("--beta-end", type=float, required=True)
    i.add_argument("--json", default=None)
    i.set_defaults(fn=cmd_inspect_schedule)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
