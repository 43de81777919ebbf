import csv
from maskac.envs import EnvSpec
from maskac.network import NetworkConfig
from maskac.training import Hyperparams, train
from maskac.analysis import evaluate
from maskac.checkpoint import load_checkpoint

config = NetworkConfig(input_hw=20, n_actions=3)
for lr in (5e-4, 2e-3, 8e-3):
    hyper = Hyperparams(total_steps=60_000, n_workers=4, t_max=20, lr=lr)
    out = f"/root/calib/sweep_lr{lr}"
    final = train(config, hyper, EnvSpec(name="catch"), seed=0, out_dir=out,
                  checkpoint_interval=20_000)
    w, c = load_checkpoint(final)
    stats = evaluate(w, c, EnvSpec(name="catch"), episodes=50, seed=999, greedy=True)
    with open(out + "/metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    tail_ent = sum(float(r["entropy"]) for r in rows[-50:]) / 50
    print(f"lr={lr}: greedy mean {stats.mean:+.3f}  tail entropy {tail_ent:.3f}", flush=True)
