"""Checkpoint format, config parsing, and the command-line surface."""

import os

import numpy as np
import pytest

from maskac import netpbm
from maskac.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from maskac.cli import (CONFIG_DEFAULTS, EXIT_ARGUMENT, EXIT_CHECKPOINT,
                        EXIT_CONFIG, EXIT_OK, EXIT_VARIANT, ResolvedConfig,
                        main, parse_config_file)
from maskac.network import NetworkConfig, init_weights, weight_names


def cfg(policy=True, value=True, **kw):
    return NetworkConfig(policy_mask_enabled=policy, value_mask_enabled=value, **kw)


def write_config(path, **overrides):
    lines = [f"{k}={v}" for k, v in overrides.items()]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def small_net_overrides():
    return dict(fe_channels="4,4,8", lstm_channels="8", branch_channels="4")


# ---------------------------------------------------------------------------
# checkpoints

def test_checkpoint_roundtrip_bit_identical(tmp_path):
    for variant in ((False, False), (True, False), (False, True), (True, True)):
        config = cfg(policy=variant[0], value=variant[1])
        weights = init_weights(config, seed=7)
        path = str(tmp_path / f"w_{variant[0]}_{variant[1]}.ma3c")
        save_checkpoint(weights, config, path)
        loaded, loaded_config = load_checkpoint(path)
        assert loaded_config == config
        assert set(loaded) == set(weights)
        for k in weights:
            assert np.array_equal(loaded[k], weights[k].data)
        # saving what was loaded reproduces the same bytes
        path2 = str(tmp_path / "again.ma3c")
        save_checkpoint(loaded, loaded_config, path2)
        assert open(path, "rb").read() == open(path2, "rb").read()


def test_checkpoint_detects_single_bit_corruption(tmp_path):
    config = cfg()
    path = str(tmp_path / "w.ma3c")
    save_checkpoint(init_weights(config, seed=0), config, path)
    blob = bytearray(open(path, "rb").read())
    blob[len(blob) // 2] ^= 0x01
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_detects_truncation(tmp_path):
    config = cfg()
    path = str(tmp_path / "w.ma3c")
    save_checkpoint(init_weights(config, seed=0), config, path)
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-9])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = str(tmp_path / "w.ma3c")
    open(path, "wb").write(b"NOPE" + b"\x00" * 64)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_name_set_must_match_config(tmp_path):
    config = cfg()
    weights = init_weights(config, seed=0)
    weights.pop("policy_mask.w")
    path = str(tmp_path / "w.ma3c")
    save_checkpoint(weights, config, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


# ---------------------------------------------------------------------------
# config files

def test_config_defaults_and_overrides(tmp_path):
    path = write_config(tmp_path / "c.cfg", lr="0.001", env="fuel")
    raw = parse_config_file(path)
    assert raw["lr"] == "0.001"
    assert raw["env"] == "fuel"
    assert raw["gamma"] == CONFIG_DEFAULTS["gamma"]
    resolved = ResolvedConfig(raw)
    assert resolved.hyper.lr == 0.001
    assert resolved.env_spec.name == "fuel"
    assert resolved.network.n_actions == 6
    assert resolved.env_spec.episode_cap == 200  # auto-resolved


def test_config_rejects_unknown_key(tmp_path):
    path = write_config(tmp_path / "c.cfg", nonsense="1")
    with pytest.raises(Exception):
        parse_config_file(path)
    assert main(["train", path]) == EXIT_CONFIG


def test_config_missing_file_exit_code(capsys):
    assert main(["train", "/nonexistent/nowhere.cfg"]) == EXIT_CONFIG
    assert "/nonexistent/nowhere.cfg" in capsys.readouterr().err


def test_config_resolved_roundtrip(tmp_path):
    cfg_path = write_config(tmp_path / "c.cfg", total_steps="0", n_workers="1",
                            out_dir=str(tmp_path / "run"), **small_net_overrides())
    assert main(["train", cfg_path]) == EXIT_OK
    resolved_path = tmp_path / "run" / "config.resolved"
    assert resolved_path.is_file()
    # feeding the resolved config back reproduces the identical resolution
    raw2 = parse_config_file(str(resolved_path))
    text2 = ResolvedConfig(raw2).resolved_text()
    assert text2 == resolved_path.read_text()


# ---------------------------------------------------------------------------
# train / eval / viz

def trained_tiny_run(tmp_path, **extra):
    os.makedirs(tmp_path, exist_ok=True)
    out = tmp_path / "run"
    settings = dict(total_steps="60", n_workers="1", t_max="10", out_dir=str(out),
                    checkpoint_interval="1000000", **small_net_overrides())
    settings.update(extra)
    cfg_path = write_config(tmp_path / "c.cfg", **settings)
    assert main(["train", cfg_path]) == EXIT_OK
    ckpts = sorted(p for p in os.listdir(out) if p.endswith(".ma3c"))
    final = max(ckpts, key=lambda n: int(n[5:-5]))
    return out, str(out / final)


def test_train_writes_metrics_and_loadable_checkpoint(tmp_path):
    out, ckpt = trained_tiny_run(tmp_path)
    assert (out / "metrics.csv").stat().st_size > 0
    weights, config = load_checkpoint(ckpt)
    assert set(weights) == set(weight_names(config))


def test_train_zero_steps_single_checkpoint(tmp_path):
    out = tmp_path / "run"
    cfg_path = write_config(tmp_path / "c.cfg", total_steps="0", n_workers="1",
                            out_dir=str(out), **small_net_overrides())
    assert main(["train", cfg_path]) == EXIT_OK
    assert [p for p in os.listdir(out) if p.endswith(".ma3c")] == ["ckpt_0.ma3c"]


def test_eval_prints_stats_and_writes_csv(tmp_path, capsys):
    out, ckpt = trained_tiny_run(tmp_path)
    csv = str(tmp_path / "eval.csv")
    assert main(["eval", "--ckpt", ckpt, "--episodes", "3", "--seed", "1",
                 "--greedy", "--out", csv]) == EXIT_OK
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert line.startswith("max=") and "mean=" in line and line.endswith("n=3")
    rows = open(csv).read().strip().splitlines()
    assert rows[0] == "episode,return"
    assert len(rows) == 4


def test_eval_deterministic_byte_identical(tmp_path):
    out, ckpt = trained_tiny_run(tmp_path)
    blobs = []
    for name in ("a.csv", "b.csv"):
        csv = str(tmp_path / name)
        assert main(["eval", "--ckpt", ckpt, "--episodes", "4", "--seed", "2",
                     "--greedy", "--out", csv]) == EXIT_OK
        blobs.append(open(csv, "rb").read())
    assert blobs[0] == blobs[1]


def test_eval_corrupted_checkpoint_exit_3(tmp_path):
    out, ckpt = trained_tiny_run(tmp_path)
    blob = bytearray(open(ckpt, "rb").read())
    blob[100] ^= 0x10
    open(ckpt, "wb").write(bytes(blob))
    assert main(["eval", "--ckpt", ckpt, "--episodes", "1"]) == EXIT_CHECKPOINT


def test_eval_inverse_on_vanilla_exit_4(tmp_path):
    out, ckpt = trained_tiny_run(tmp_path, policy_mask="false", value_mask="false")
    assert main(["eval", "--ckpt", ckpt, "--episodes", "1",
                 "--mask", "inverse"]) == EXIT_VARIANT
    assert main(["eval", "--ckpt", ckpt, "--episodes", "1",
                 "--mask", "ones"]) == EXIT_VARIANT
    assert main(["eval", "--ckpt", ckpt, "--episodes", "1"]) == EXIT_OK


def test_eval_mask_ones_matches_vanilla_twin(tmp_path, capsys):
    # same seed stream: shared layers of the masked run equal the vanilla run
    out_m, ckpt_m = trained_tiny_run(tmp_path, total_steps="0")
    vdir = tmp_path / "v"
    cfg_path = write_config(tmp_path / "v.cfg", total_steps="0", n_workers="1",
                            out_dir=str(vdir), policy_mask="false", value_mask="false",
                            **small_net_overrides())
    assert main(["train", cfg_path]) == EXIT_OK
    ckpt_v = str(vdir / "ckpt_0.ma3c")
    outs = []
    for ck, mask in ((ckpt_m, "ones"), (ckpt_v, "normal")):
        assert main(["eval", "--ckpt", ck, "--episodes", "5", "--seed", "4",
                     "--greedy", "--mask", mask,
                     "--out", str(tmp_path / "o.csv")]) == EXIT_OK
        outs.append((capsys.readouterr().out.strip().splitlines()[-1],
                     open(tmp_path / "o.csv").read()))
    assert outs[0] == outs[1]


def test_viz_writes_files_and_rejects_vanilla(tmp_path):
    out, ckpt = trained_tiny_run(tmp_path)
    viz_dir = str(tmp_path / "viz")
    assert main(["viz", "--ckpt", ckpt, "--episodes", "1", "--seed", "3",
                 "--out", viz_dir]) == EXIT_OK
    names = os.listdir(viz_dir)
    n_pgm = sum(n.endswith(".pgm") for n in names)
    n_ppm = sum(n.endswith(".ppm") for n in names)
    n_csv = sum(n.endswith(".csv") for n in names)
    assert n_pgm > 0 and n_ppm > 0 and n_csv == 1
    assert n_pgm == 3 * (n_pgm // 3)  # policy + value + obs per step

    out_v, ckpt_v = trained_tiny_run(tmp_path / "v", policy_mask="false",
                                     value_mask="false")
    assert main(["viz", "--ckpt", ckpt_v, "--episodes", "1",
                 "--out", str(tmp_path / "viz2")]) == EXIT_VARIANT


def test_viz_rerun_byte_identical(tmp_path):
    out, ckpt = trained_tiny_run(tmp_path)
    blobs = []
    for d in ("viz_a", "viz_b"):
        viz_dir = tmp_path / d
        assert main(["viz", "--ckpt", ckpt, "--episodes", "1", "--seed", "5",
                     "--out", str(viz_dir)]) == EXIT_OK
        blobs.append({n: (viz_dir / n).read_bytes() for n in os.listdir(viz_dir)})
    assert blobs[0] == blobs[1]


# ---------------------------------------------------------------------------
# inject

def write_sprite(tmp_path, shape=(3, 20), value=0.9):
    path = str(tmp_path / "sprite.pgm")
    netpbm.write_pgm(path, np.full(shape, value))
    return path


def test_inject_report_csv(tmp_path):
    out, ckpt = trained_tiny_run(tmp_path, env="fuel")
    sprite = write_sprite(tmp_path)
    csv = str(tmp_path / "report.csv")
    assert main(["inject", "--ckpt", ckpt, "--sprite", sprite, "--pos", "17,0",
                 "--frame", "4", "--window", "0,8", "--env", "fuel",
                 "--seed", "1", "--out", csv]) == EXIT_OK
    rows = open(csv).read().strip().splitlines()
    assert rows[0] == ("t,injected,region_mean_policy,region_mean_value,value,"
                       "p_up,p_down,p_left,p_right,p_stay,p_collect")
    assert len(rows) == 10
    injected_flags = [r.split(",")[1] for r in rows[1:]]
    assert injected_flags == ["0"] * 4 + ["1"] * 5


def test_inject_window_must_cover_frame(tmp_path):
    out, ckpt = trained_tiny_run(tmp_path, env="fuel")
    sprite = write_sprite(tmp_path)
    assert main(["inject", "--ckpt", ckpt, "--sprite", sprite, "--pos", "17,0",
                 "--frame", "30", "--window", "0,8", "--env", "fuel"]) == EXIT_ARGUMENT


def test_inject_out_of_bounds_sprite(tmp_path):
    out, ckpt = trained_tiny_run(tmp_path, env="fuel")
    sprite = write_sprite(tmp_path)
    assert main(["inject", "--ckpt", ckpt, "--sprite", sprite, "--pos", "19,5",
                 "--frame", "2", "--window", "0,4", "--env", "fuel"]) == EXIT_ARGUMENT


def test_inject_zero_intensity_full_stencil(tmp_path):
    out, ckpt = trained_tiny_run(tmp_path, env="fuel")
    sprite = write_sprite(tmp_path, value=0.0)
    csv = str(tmp_path / "report.csv")
    assert main(["inject", "--ckpt", ckpt, "--sprite", sprite, "--pos", "17,0",
                 "--frame", "2", "--window", "0,4", "--env", "fuel",
                 "--stencil-threshold", "0", "--out", csv]) == EXIT_OK
    assert len(open(csv).read().strip().splitlines()) == 6


# ---------------------------------------------------------------------------
# misc commands

def test_random_baseline_command(tmp_path, capsys):
    csv = str(tmp_path / "rb.csv")
    assert main(["random-baseline", "--env", "catch", "--episodes", "50",
                 "--seed", "3", "--out", csv]) == EXIT_OK
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert "mean=" in line and line.endswith("n=50")
    assert len(open(csv).read().strip().splitlines()) == 51


def test_bad_cli_arguments_exit_5():
    assert main(["eval"]) == EXIT_ARGUMENT           # missing --ckpt
    assert main(["frobnicate"]) == EXIT_ARGUMENT     # unknown subcommand


def test_compare_command(tmp_path, capsys):
    out = tmp_path / "cmp"
    cfg_path = write_config(tmp_path / "c.cfg", total_steps="40", n_workers="1",
                            t_max="10", seeds="0", eval_episodes="2",
                            out_dir=str(out), **small_net_overrides())
    assert main(["compare", cfg_path]) == EXIT_OK
    assert (out / "variants.csv").is_file()
    text = capsys.readouterr().out
    for v in ("vanilla", "policy", "value", "both"):
        assert v in text
