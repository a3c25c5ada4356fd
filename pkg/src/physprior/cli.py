"""``physprior`` command line: data, predictor, probe and agent pipelines."""

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .dataset import GENERALIZATION_VARIANTS, GenConfig, PVDReader, generate_dataset, make_generalization_config
from .rng import derive_seed


class CommandError(Exception):
    pass


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def resolve_threads(flag):
    if flag is not None:
        threads = flag
    else:
        env = os.environ.get("PHYSPRIOR_THREADS")
        try:
            threads = int(env) if env else 1
        except ValueError:
            raise CommandError(f"PHYSPRIOR_THREADS must be an integer, got {env!r}") from None
    if threads < 1:
        raise CommandError(f"thread count must be >= 1, got {threads}")
    return threads


def emit(report, stream=None):
    stream = stream or sys.stdout
    stream.write(json.dumps(report, sort_keys=True) + "\n")
    stream.flush()


def echo_config(cfg, path, **extra):
    cfg.write(path, **extra)
    return str(path)


# ------------------------------------------------------------------ commands


def cmd_gen_data(args, cfg):
    if args.desk:
        d = GenConfig.desk()
        cfg.override("dataset", n_traj=d.n_traj, traj_len=d.traj_len, height=d.height, width=d.width)
    cfg.override("dataset", n_traj=args.n_traj, traj_len=args.traj_len, height=args.height, width=args.width,
                 master_seed=args.seed)
    data_cfg = cfg.dataset
    if args.variant:
        data_cfg = make_generalization_config(data_cfg, args.variant)
        cfg.dataset = data_cfg
    cfg.validate()
    outputs = generate_dataset(data_cfg, args.out, split=args.split, threads=args.threads)
    files = []
    for path, header in outputs:
        size = os.path.getsize(path)
        expected = len(header.encode()) + header.payload_bytes
        if size != expected:
            raise CommandError(f"{path}: size {size} differs from expected {expected}")
        files.append({"path": path, "bytes": size, "n_traj": header.n_traj,
                      "first_index": header.metadata["first_index"], "sha256": sha256(path)})
    config_path = echo_config(cfg, f"{args.out}.config.json", command="gen-data", seed=data_cfg.master_seed)
    emit({"command": "gen-data", "files": files, "master_seed": data_cfg.master_seed, "config": config_path})


def _load_videos(path):
    try:
        return PVDReader(path)
    except (OSError, ValueError) as exc:
        raise CommandError(f"cannot read dataset {path}: {exc}") from exc


def cmd_train_predictor(args, cfg):
    from .metrics import MetricsLog
    from .predictor.evaluate import copy_baseline_mse, eval_multistep
    from .predictor.io import save_predictor
    from .predictor.models import build_model
    from .predictor.train import train_predictor

    cfg.override("predictor", arch=args.model, channels=args.channels, lr=args.lr, epochs=args.epochs,
                 max_steps=args.max_steps, batch_size=args.batch_size, bptt_len=args.bptt_len)
    p = cfg.predictor
    reader = _load_videos(args.data)
    frames = reader.frames()
    if frames.shape[1] < p.bptt_len + 1:
        raise CommandError(f"trajectories of length {frames.shape[1]} are shorter than bptt_len + 1 = {p.bptt_len + 1}")
    val = _load_videos(args.val).frames() if args.val else None
    model = build_model(p.arch, p.channels, p.kernel_size, seed=derive_seed(args.seed, "predictor"))
    log_path = args.log or f"{args.out}.loss.csv"
    with MetricsLog(log_path) as log:
        losses = train_predictor(model, frames, bptt_len=p.bptt_len, batch_size=p.batch_size, lr=p.lr,
                                 epochs=p.epochs, max_steps=p.max_steps, seed=args.seed, log=log,
                                 val_frames=val, eval_every=p.eval_every)
    save_predictor(args.out, model)
    eval_frames = val if val is not None else frames
    final = eval_multistep(model, eval_frames, warmup=2, horizons=(1,), objects_step=None)["mse"][1]
    report = {"command": "train-predictor", "checkpoint": str(args.out), "loss_csv": str(log_path),
              "steps": len(losses), "final_train_loss": losses[-1] if losses else None,
              "mse_1": final, "copy_baseline_mse_1": copy_baseline_mse(eval_frames),
              "evaluated_on": "val" if val is not None else "train"}
    report["config"] = echo_config(cfg, f"{args.out}.config.json", command="train-predictor", seed=args.seed,
                                   report=report)
    emit(report)


def _load_model(path):
    from .checkpoint import CheckpointError
    from .predictor.io import load_predictor

    try:
        model, _ = load_predictor(path)
    except (OSError, CheckpointError, KeyError, ValueError) as exc:
        raise CommandError(f"cannot load predictor checkpoint {path}: {exc}") from exc
    return model


def cmd_eval_predictor(args, cfg):
    from .predictor.evaluate import eval_multistep, prediction_strip
    from .predictor.visualize import save_hidden_ppm
    from .raster import to_uint8, write_ppm

    cfg.override("eval", noise=args.noise, warmup=args.warmup,
                 horizons=tuple(args.horizons) if args.horizons else None)
    e = cfg.eval
    model = _load_model(args.ckpt)
    reader = _load_videos(args.data)
    h, w = reader.header.height, reader.header.width
    if h % 2 or w % 2:
        raise CommandError(f"dataset frames {h}x{w} must have even height and width")
    frames = reader.frames()
    res = eval_multistep(model, frames, warmup=e.warmup, horizons=e.horizons, noise=e.noise,
                         noise_seed=derive_seed(args.seed, "eval-noise"), objects_step=e.objects_step)
    report = {"command": "eval-predictor", "checkpoint": str(args.ckpt), "data": str(args.data),
              "noise": float(e.noise), "warmup": e.warmup,
              "mse": {str(k): v for k, v in res["mse"].items()}, "objects_lost": res["objects_lost"]}
    if args.dump_frames:
        out = Path(args.dump_frames)
        out.mkdir(parents=True, exist_ok=True)
        horizon = max(e.horizons)
        for i in range(min(args.n_dump, len(frames))):
            strip, state = prediction_strip(model, frames[i], e.warmup, horizon)
            write_ppm(np.concatenate([to_uint8(f) for f in strip], axis=1), out / f"strip_{i:03d}.ppm")
            save_hidden_ppm(model.hidden(state), out / f"hidden_{i:03d}.ppm")
        report["dump_dir"] = str(out)
    emit(report)


def cmd_probe(args, cfg):
    from .predictor.models import build_model
    from .predictor.probe import run_probe

    cfg.override("eval", probe_train_per_class=args.n_train, probe_test_per_class=args.n_test,
                 probe_clip_start=args.clip_start)
    e = cfg.eval
    model = _load_model(args.ckpt)
    control = build_model(model.arch, model.channels, model.kernel_size, seed=derive_seed(args.seed, "control"))
    base = dataclasses.replace(cfg.dataset, height=args.size or cfg.dataset.height,
                               width=args.size or cfg.dataset.width)
    acc = run_probe(model, args.property, e.probe_train_per_class, e.probe_test_per_class, base=base,
                    clip_start=e.probe_clip_start, seed=args.seed, control=control)
    emit({"command": "probe", "property": args.property, "pretrained_accuracy": acc["model"],
          "random_accuracy": acc["control"], "difference": acc["model"] - acc["control"]})


def _env_config(args, cfg):
    from .physworld import EnvConfig

    if getattr(args, "trivial", False):
        env = EnvConfig.trivial_goal()
    else:
        env = cfg.env
    env = dataclasses.replace(env, game=args.env or env.game)
    if args.frame_size:
        env = dataclasses.replace(env, height=args.frame_size, width=args.frame_size)
    env.validate()
    return env


def cmd_train_agent(args, cfg):
    from .agent.ipa import train_agent
    from .checkpoint import save_checkpoint
    from .predictor.io import save_predictor
    from .predictor.models import build_model

    env_cfg = _env_config(args, cfg)
    cfg.env = env_cfg
    cfg.override("agent", total_frames=args.frames)
    if args.no_finetune:
        cfg.agent.finetune = False
    ppo_over = {k: v for k, v in (("k", args.k), ("n_envs", args.n_envs), ("horizon", args.horizon)) if v is not None}
    cfg.agent.ppo = {**cfg.agent.ppo, **ppo_over}
    if args.predictor == "none":
        cfg.agent.ppo["k"] = 0
        predictor = None
    elif args.predictor == "random":
        predictor = build_model("spatialnet", args.channels or cfg.agent.predictor_channels,
                                seed=derive_seed(args.seed, "agent-predictor"))
    else:
        predictor = _load_model(args.predictor)
    ppo = cfg.ppo_config()
    ppo.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train_agent(env_cfg, predictor, ppo, total_frames=cfg.agent.total_frames, seed=args.seed,
                         metrics_path=out / "metrics.csv", finetune=cfg.agent.finetune)
    save_checkpoint(out / "policy.pckp", result.policy.state_dict())
    if predictor is not None:
        save_predictor(out / "predictor.pckp", predictor)
    rewards = result.episode_rewards
    report = {"command": "train-agent", "out": str(out), "frames": result.frames, "episodes": len(rewards),
              "k": ppo.k, "mean_reward_first_50": float(np.mean(rewards[:50])) if rewards else None,
              "mean_reward_last_50": float(np.mean(rewards[-50:])) if rewards else None}
    if result.predictor_mse:
        report["predictor_mse_first"] = result.predictor_mse[0]
        report["predictor_mse_last"] = result.predictor_mse[-1]
    report["config"] = echo_config(cfg, out / "config.json", command="train-agent", seed=args.seed, report=report)
    emit(report)


def cmd_eval_agent(args, cfg):
    from .agent.ipa import evaluate_agent
    from .agent.policy import policy_from_arrays
    from .checkpoint import CheckpointError, load_checkpoint

    env_cfg = _env_config(args, cfg)
    cfg.override("eval", episodes=args.episodes)
    predictor = _load_model(args.predictor) if args.predictor else None
    k = args.k if args.k is not None else (3 if predictor is not None else 0)
    if k and predictor is None:
        raise CommandError(f"k={k} needs --predictor")
    try:
        arrays = load_checkpoint(args.policy)
        policy = policy_from_arrays(arrays, env_cfg.height, env_cfg.width)
    except (OSError, CheckpointError, KeyError, ValueError) as exc:
        raise CommandError(f"cannot load policy checkpoint {args.policy}: {exc}") from exc
    if policy.in_channels != (k + 1) * 3:
        raise CommandError(f"channel mismatch: policy expects {policy.in_channels} input channels, "
                           f"but k={k} gives {(k + 1) * 3}")
    from .physworld import PhysWorldEnv
    n_actions = PhysWorldEnv(env_cfg).n_actions
    if policy.n_actions != n_actions:
        raise CommandError(f"policy has {policy.n_actions} actions, {env_cfg.game} has {n_actions}")
    csv_path = args.csv or f"{args.policy}.eval.csv"
    mean, std, rewards = evaluate_agent(env_cfg, policy, predictor, k=k, episodes=cfg.eval.episodes,
                                        seed=args.seed, greedy=not args.sample, csv_path=csv_path)
    emit({"command": "eval-agent", "env": env_cfg.game, "episodes": len(rewards), "mean_reward": mean,
          "std_reward": std, "csv": str(csv_path)})


# -------------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(prog="physprior", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (sections dataset/predictor/agent/env/eval)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help="worker cap (falls back to PHYSPRIOR_THREADS, then 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate a PVD1 video dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--variant", choices=GENERALIZATION_VARIANTS)
    g.add_argument("--split", type=int, help="trajectories for the train file; the rest go to test")
    g.add_argument("--desk", action="store_true", help="desk-scale profile (64 x 40 frames at 42x42)")
    g.add_argument("--n-traj", type=int)
    g.add_argument("--traj-len", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--width", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train-predictor", parents=[common], help="train a frame predictor")
    t.add_argument("--model", choices=("spatialnet", "convlstm", "convlstm_res"))
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--val", help="held-out dataset for validation MSE")
    t.add_argument("--log", help="loss CSV path (default: <out>.loss.csv)")
    t.add_argument("--channels", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--bptt-len", type=int)
    t.set_defaults(func=cmd_train_predictor)

    e = sub.add_parser("eval-predictor", parents=[common], help="multi-step evaluation")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--noise", type=float)
    e.add_argument("--warmup", type=int)
    e.add_argument("--horizons", type=int, nargs="+")
    e.add_argument("--dump-frames", help="directory for PPM prediction strips and hidden maps")
    e.add_argument("--n-dump", type=int, default=4)
    e.set_defaults(func=cmd_eval_predictor)

    p = sub.add_parser("probe", parents=[common], help="probe hidden state for drag or elasticity")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--property", required=True, choices=("drag", "elasticity"))
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--clip-start", type=int)
    p.add_argument("--size", type=int, help="frame size of the probe clips (default: dataset section)")
    p.set_defaults(func=cmd_probe)

    games = ("physgoal", "physforage", "physshooter")
    a = sub.add_parser("train-agent", parents=[common], help="train a PPO / IPA agent")
    a.add_argument("--env", choices=games)
    a.add_argument("--predictor", required=True, help="checkpoint path, 'random' or 'none'")
    a.add_argument("--out", required=True)
    a.add_argument("--frames", type=int)
    a.add_argument("--k", type=int)
    a.add_argument("--n-envs", type=int)
    a.add_argument("--horizon", type=int)
    a.add_argument("--channels", type=int, help="width of a random predictor")
    a.add_argument("--frame-size", type=int)
    a.add_argument("--trivial", action="store_true", help="trivial PhysGoal variant")
    a.add_argument("--no-finetune", action="store_true")
    a.set_defaults(func=cmd_train_agent)

    v = sub.add_parser("eval-agent", parents=[common], help="evaluate a trained policy")
    v.add_argument("--env", choices=games)
    v.add_argument("--policy", required=True)
    v.add_argument("--predictor")
    v.add_argument("--k", type=int)
    v.add_argument("--episodes", type=int)
    v.add_argument("--csv")
    v.add_argument("--sample", action="store_true", help="sample actions instead of argmax")
    v.add_argument("--frame-size", type=int)
    v.add_argument("--trivial", action="store_true")
    v.set_defaults(func=cmd_eval_agent)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.threads = resolve_threads(args.threads)
        cfg = RunConfig.load(args.config)
        if args.command == "train-agent" and args.predictor not in ("none", "random") \
                and not Path(args.predictor).is_file():
            raise CommandError(f"predictor checkpoint {args.predictor} does not exist")
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=args.threads):
            args.func(args, cfg)
    except (CommandError, ValueError, OSError, RuntimeError) as exc:
        print(f"physprior {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
