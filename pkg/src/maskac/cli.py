"""Command-line front end: configuration, training, evaluation, analysis.

Subcommands: train, eval, viz, inject, compare, random-baseline.
Exit codes: 0 ok, 2 config problem, 3 checkpoint problem, 4 variant
mismatch, 5 invalid argument.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .analysis import (compare_variants, evaluate, injection_response,
                       random_baseline, record_heatmaps)
from .checkpoint import CheckpointError, load_checkpoint
from .envs import ENV_NAMES, EnvSpec, InjectionSpec, default_episode_cap
from .netpbm import read_pgm
from .network import NetworkConfig
from .training import Hyperparams, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_VARIANT = 4
EXIT_ARGUMENT = 5

MASK_MODES = {"normal": "identity", "inverse": "inverse", "ones": "ones"}


class ConfigError(Exception):
    pass


class VariantError(Exception):
    pass


class ArgumentProblem(Exception):
    pass


# ---------------------------------------------------------------------------
# flat key=value configuration

CONFIG_DEFAULTS = {
    "env": "catch",
    "size": "20",
    "episode_cap": "auto",
    "policy_mask": "true",
    "value_mask": "true",
    "fe_channels": "32,32,64",
    "lstm_channels": "64",
    "branch_channels": "32",
    "conv_kernel": "3",
    "conv_stride": "2",
    "conv_padding": "1",
    "gamma": "0.99",
    "lr": "0.0001",
    "n_workers": "4",
    "t_max": "20",
    "entropy_coef": "0.01",
    "value_coef": "0.5",
    "grad_clip_norm": "40.0",
    "total_steps": "200000",
    "episode_step_cap": "10000",
    "rmsprop_decay": "0.99",
    "rmsprop_eps": "0.1",
    "precision": "single",
    "seed": "0",
    "seeds": "0,1,2,3,4",
    "out_dir": "runs/out",
    "checkpoint_interval": "50000",
    "eval_episodes": "100",
}


def parse_config_file(path):
    """Defaults overlaid with key=value lines; unknown keys are rejected."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    raw = dict(CONFIG_DEFAULTS)
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            key, sep, value = text.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line.strip()!r}")
            if key not in CONFIG_DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            raw[key] = value
    return raw


def _as_int(raw, key):
    try:
        return int(raw[key])
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {raw[key]!r}") from None


def _as_float(raw, key):
    try:
        return float(raw[key])
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {raw[key]!r}") from None


def _as_bool(raw, key):
    value = raw[key].lower()
    if value in ("true", "1", "yes"):
        return True
    if value in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key} must be true or false, got {raw[key]!r}")


def _as_int_list(raw, key):
    try:
        return [int(v) for v in raw[key].split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(f"{key} must be comma-separated integers, got {raw[key]!r}") from None


class ResolvedConfig:
    """Typed view over the raw mapping, plus the resolved echo text."""

    def __init__(self, raw):
        self.raw = dict(raw)
        env = raw["env"]
        if env not in ENV_NAMES:
            raise ConfigError(f"env must be one of {ENV_NAMES}, got {env!r}")
        size = _as_int(raw, "size")
        if raw["episode_cap"] == "auto":
            episode_cap = default_episode_cap(env, size)
        else:
            episode_cap = _as_int(raw, "episode_cap")
        self.env_spec = EnvSpec(name=env, size=size, episode_cap=episode_cap,
                                seed=_as_int(raw, "seed"))
        try:
            self.network = NetworkConfig(
                input_hw=size,
                fe_channels=tuple(_as_int_list(raw, "fe_channels")),
                lstm_channels=_as_int(raw, "lstm_channels"),
                branch_channels=_as_int(raw, "branch_channels"),
                n_actions=self.env_spec.n_actions,
                policy_mask_enabled=_as_bool(raw, "policy_mask"),
                value_mask_enabled=_as_bool(raw, "value_mask"),
                conv_kernel=_as_int(raw, "conv_kernel"),
                conv_stride=_as_int(raw, "conv_stride"),
                conv_padding=_as_int(raw, "conv_padding"))
            self.hyper = Hyperparams(
                gamma=_as_float(raw, "gamma"),
                lr=_as_float(raw, "lr"),
                n_workers=_as_int(raw, "n_workers"),
                t_max=_as_int(raw, "t_max"),
                entropy_coef=_as_float(raw, "entropy_coef"),
                value_coef=_as_float(raw, "value_coef"),
                grad_clip_norm=_as_float(raw, "grad_clip_norm"),
                total_steps=_as_int(raw, "total_steps"),
                episode_step_cap=_as_int(raw, "episode_step_cap"),
                rmsprop_decay=_as_float(raw, "rmsprop_decay"),
                rmsprop_eps=_as_float(raw, "rmsprop_eps"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.precision = raw["precision"]
        if self.precision not in ("single", "double"):
            raise ConfigError(f"precision must be single or double, got {self.precision!r}")
        self.seed = _as_int(raw, "seed")
        self.seeds = _as_int_list(raw, "seeds")
        if not self.seeds:
            raise ConfigError("seeds must name at least one seed")
        self.out_dir = raw["out_dir"]
        self.checkpoint_interval = _as_int(raw, "checkpoint_interval")
        self.eval_episodes = _as_int(raw, "eval_episodes")
        self.raw["episode_cap"] = str(episode_cap)

    def resolved_text(self):
        return "".join(f"{k}={self.raw[k]}\n" for k in sorted(self.raw))


def write_resolved(config, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved"), "w") as fh:
        fh.write(config.resolved_text())


# ---------------------------------------------------------------------------
# shared command helpers

def _load_ckpt(path):
    if not os.path.isfile(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _env_spec_from_args(args, n_actions_hint=None):
    spec = EnvSpec(name=args.env, size=args.size, seed=0)
    if n_actions_hint is not None and spec.n_actions != n_actions_hint:
        raise VariantError(
            f"checkpoint expects {n_actions_hint} actions but env {args.env!r} "
            f"has {spec.n_actions}")
    return spec


def _require_masked(config, need_policy=False):
    if need_policy and not config.policy_mask_enabled:
        raise VariantError("this checkpoint has no policy mask branch")
    if not (config.policy_mask_enabled or config.value_mask_enabled):
        raise VariantError("this checkpoint has no mask branches")


def _write_episode_csv(path, stats):
    with open(path, "w") as fh:
        fh.write("episode,return\n")
        for i, r in enumerate(stats.returns):
            fh.write(f"{i},{r!r}\n")


# ---------------------------------------------------------------------------
# subcommands

def cmd_train(args):
    config = ResolvedConfig(parse_config_file(args.config))
    out_dir = args.out or config.out_dir
    config.raw["out_dir"] = out_dir
    write_resolved(config, out_dir)
    final = train(config.network, config.hyper, config.env_spec, config.seed, out_dir,
                  precision=config.precision,
                  checkpoint_interval=config.checkpoint_interval,
                  log=lambda msg: print(msg, flush=True))
    print(f"final checkpoint: {final}")
    return EXIT_OK


def cmd_eval(args):
    weights, net_config = _load_ckpt(args.ckpt)
    spec = _env_spec_from_args(args, n_actions_hint=net_config.n_actions)
    if net_config.input_hw != spec.size:
        raise VariantError(f"checkpoint expects {net_config.input_hw}x{net_config.input_hw} "
                           f"observations, env size is {spec.size}")
    if args.mask in ("inverse", "ones"):
        _require_masked(net_config, need_policy=(args.mask == "inverse"))
    stats = evaluate(weights, net_config, spec, args.episodes,
                     mask_transform=MASK_MODES[args.mask], seed=args.seed,
                     greedy=args.greedy)
    out_csv = args.out or f"{args.ckpt}.eval.csv"
    _write_episode_csv(out_csv, stats)
    print(f"max={stats.max!r} mean={stats.mean!r} n={stats.n_episodes}")
    return EXIT_OK


def cmd_viz(args):
    weights, net_config = _load_ckpt(args.ckpt)
    _require_masked(net_config)
    spec = _env_spec_from_args(args, n_actions_hint=net_config.n_actions)
    record_heatmaps(weights, net_config, spec, args.episodes, args.seed, args.out,
                    greedy=args.greedy)
    print(f"heat maps written to {args.out}")
    return EXIT_OK


def _parse_pair(text, what):
    parts = text.split(",")
    if len(parts) != 2:
        raise ArgumentProblem(f"{what} must be two comma-separated integers, got {text!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise ArgumentProblem(f"{what} must be integers, got {text!r}") from None


def load_sprite(path, threshold):
    """PGM sprite file: intensities from bytes, stencil from the threshold."""
    raw = read_pgm(path)
    sprite = raw.astype(np.float32) / 255.0
    stencil = raw >= threshold
    return sprite, stencil


def cmd_inject(args):
    weights, net_config = _load_ckpt(args.ckpt)
    _require_masked(net_config)
    spec = _env_spec_from_args(args, n_actions_hint=net_config.n_actions)
    row, col = _parse_pair(args.pos, "--pos")
    first, last = _parse_pair(args.window, "--window")
    duration = None if args.duration == "permanent" else int(args.duration)
    sprite, stencil = load_sprite(args.sprite, args.stencil_threshold)
    try:
        inj = InjectionSpec(sprite, stencil, position=(row, col),
                            start_frame=args.frame, duration=duration)
        report = injection_response(weights, net_config, spec, inj,
                                    window=(first, last), seed=args.seed)
    except ValueError as exc:
        raise ArgumentProblem(str(exc)) from None

    out_csv = args.out or f"{args.ckpt}.inject.csv"
    prob_cols = [f"p_{name}" for name in report.action_names]
    with open(out_csv, "w") as fh:
        fh.write("t,injected,region_mean_policy,region_mean_value,value,"
                 + ",".join(prob_cols) + "\n")
        for r in report.rows:
            mp = r.get("region_mean_policy")
            mv = r.get("region_mean_value")
            fh.write(f"{r['t']},{int(r['injected'])},"
                     f"{'' if mp is None else repr(mp)},"
                     f"{'' if mv is None else repr(mv)},"
                     f"{r['value']!r},"
                     + ",".join(repr(p) for p in r["probs"]) + "\n")
    print(f"injection report written to {out_csv}")
    return EXIT_OK


def cmd_compare(args):
    config = ResolvedConfig(parse_config_file(args.config))
    out_dir = args.out or config.out_dir
    config.raw["out_dir"] = out_dir
    write_resolved(config, out_dir)
    net = config.network
    overrides = dict(fe_channels=net.fe_channels, lstm_channels=net.lstm_channels,
                     branch_channels=net.branch_channels, conv_kernel=net.conv_kernel,
                     conv_stride=net.conv_stride, conv_padding=net.conv_padding)
    rows = compare_variants(config.env_spec, config.seeds, config.hyper,
                            config.eval_episodes, out_dir,
                            precision=config.precision, config_overrides=overrides,
                            log=lambda msg: print(msg, flush=True))
    print(f"{'variant':<10} {'seed':>6} {'max':>10} {'mean':>10}")
    for r in rows:
        print(f"{r['variant']:<10} {str(r['seed']):>6} {r['max']:>10.3f} {r['mean']:>10.3f}")
    print(f"table written to {os.path.join(out_dir, 'variants.csv')}")
    return EXIT_OK


def cmd_random_baseline(args):
    spec = _env_spec_from_args(args)
    stats = random_baseline(spec, args.episodes, args.seed)
    if args.out:
        _write_episode_csv(args.out, stats)
    print(f"max={stats.max!r} mean={stats.mean!r} n={stats.n_episodes}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentProblem(message)


def _add_env_flags(p):
    p.add_argument("--env", default="catch", choices=ENV_NAMES)
    p.add_argument("--size", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = _Parser(prog="maskac",
                     description="Mask-attention actor-critic: train, evaluate, analyze.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train per a config file")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint over full episodes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--mask", default="normal", choices=sorted(MASK_MODES))
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--out", default=None, help="per-episode CSV path")
    _add_env_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", help="write mask heat-map files for episodes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--greedy", action="store_true")
    _add_env_flags(p)
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("inject", help="plant a sprite in the observations and record reactions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sprite", required=True, help="small PGM file")
    p.add_argument("--stencil-threshold", type=int, default=1,
                   help="bytes >= threshold count as sprite pixels (0 = full stencil)")
    p.add_argument("--pos", required=True, help="row,col of the sprite's top-left corner")
    p.add_argument("--frame", type=int, required=True, help="first frame showing the sprite")
    p.add_argument("--window", required=True, help="first,last frames to report")
    p.add_argument("--duration", default="permanent", help="frames shown, or 'permanent'")
    p.add_argument("--out", default=None, help="report CSV path")
    _add_env_flags(p)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("compare", help="train and tabulate all four attention variants")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("random-baseline", help="score the uniform-random policy")
    p.add_argument("--episodes", type=int, default=10000)
    p.add_argument("--out", default=None, help="per-episode CSV path")
    _add_env_flags(p)
    p.set_defaults(func=cmd_random_baseline)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except VariantError as exc:
        print(f"variant mismatch: {exc}", file=sys.stderr)
        return EXIT_VARIANT
    except ArgumentProblem as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return EXIT_ARGUMENT


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
