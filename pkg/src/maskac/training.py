"""n-step advantage actor-critic training with asynchronous worker threads.

Each worker repeatedly snapshots the shared parameters, collects a
bounded rollout segment with its own environment, backpropagates the
actor-critic loss through the segment (truncated through time at the
segment boundary), and applies the clipped gradients to the shared
store under a coarse lock.  Workers never barrier-synchronize; the
global step counter is the only coupling.
"""

from __future__ import annotations

import dataclasses
import os
import threading
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .envs import make_env
from .network import RecurrentState, forward, init_weights


@dataclass
class Hyperparams:
    gamma: float = 0.99
    lr: float = 1e-4
    n_workers: int = 4
    t_max: int = 20
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    grad_clip_norm: float = 40.0
    total_steps: int = 200_000
    episode_step_cap: int = 10_000
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must lie in [0, 1]")
        if self.lr <= 0 or self.t_max < 1 or self.n_workers < 1:
            raise ValueError("lr must be > 0, t_max >= 1, n_workers >= 1")


@dataclass
class RolloutStep:
    obs: np.ndarray
    action: int
    reward: float
    value: float
    log_prob: float
    trace: object


@dataclass
class Rollout:
    steps: list
    bootstrap_value: float
    terminal: bool

    def __len__(self):
        return len(self.steps)


def sample_action(probs, rng):
    """Categorical draw via the cumulative distribution."""
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, len(probs) - 1)


def collect_rollout(env, weights, config, state, t_max, rng):
    """Run up to t_max policy steps; stop early on episode end.

    The recurrent state stays attached within the segment (gradients flow
    through time across it) and is detached at the boundary.  On a
    terminal step the state resets to zeros and bootstrap_value is 0;
    otherwise the value of the successor state seeds the return.
    """
    if env.done:
        env.reset()
        state = RecurrentState.zeros(config, weights["fe1.w"].dtype)
    steps = []
    terminal = False
    for _ in range(t_max):
        obs = env.observe()
        trace = forward(obs, state, weights, config)
        probs = trace.policy.data
        action = sample_action(probs, rng)
        res = env.step(action)
        steps.append(RolloutStep(obs=obs, action=action, reward=res.reward,
                                 value=trace.value_scalar,
                                 log_prob=float(np.log(probs[action])),
                                 trace=trace))
        state = trace.next_state
        if res.done:
            terminal = True
            state = RecurrentState.zeros(config, weights["fe1.w"].dtype)
            break
    if terminal:
        bootstrap = 0.0
    else:
        tail = forward(env.observe(), state.detach(), weights, config)
        bootstrap = tail.value_scalar
    return Rollout(steps, bootstrap, terminal), state.detach()


def compute_returns(rollout, gamma):
    """R_t = r_t + gamma * R_{t+1}, seeded with the bootstrap value; A_t = R_t - V_t."""
    acc = rollout.bootstrap_value
    returns = []
    for step in reversed(rollout.steps):
        acc = step.reward + gamma * acc
        returns.append(acc)
    returns.reverse()
    advantages = [r - s.value for r, s in zip(returns, rollout.steps)]
    return returns, advantages


def a3c_loss(rollout, returns, advantages, entropy_coef, value_coef):
    """Sum over the segment of policy, value, and entropy terms.

    Advantages and returns enter as constants: the policy term pushes
    log-probabilities only, the value term pushes the critic only.
    """
    if not (len(rollout.steps) == len(returns) == len(advantages)):
        raise ValueError("rollout, returns and advantages must have equal length")
    total = None
    for step, ret, adv in zip(rollout.steps, returns, advantages):
        logp = ad.log_softmax(step.trace.policy_logits)
        picked = ad.pick(logp, step.action)
        entropy = ad.neg(ad.sum_all(ad.mul(step.trace.policy, logp)))
        verr = ad.add(ad.neg(ad.pick(step.trace.value, 0)), float(ret))
        term = ad.add(ad.mul(picked, -float(adv)),
                      ad.add(ad.mul(ad.mul(verr, verr), float(value_coef)),
                             ad.mul(entropy, -float(entropy_coef))))
        total = term if total is None else ad.add(total, term)
    return total


def loss_components(rollout, returns, advantages):
    """Per-step means of the three loss pieces, for the metrics log."""
    t = len(rollout.steps)
    policy_loss = -sum(s.log_prob * a for s, a in zip(rollout.steps, advantages)) / t
    value_loss = sum((r - s.value) ** 2 for s, r in zip(rollout.steps, returns)) / t
    entropy = 0.0
    for s in rollout.steps:
        p = s.trace.policy.data
        nz = p[p > 0]
        entropy += float(-(nz * np.log(nz)).sum())
    return policy_loss, value_loss, entropy / t


class SharedParams:
    """Global weights plus per-parameter RMSProp statistics and a step counter.

    Snapshot reads and updates each take one coarse exclusive lock, so a
    snapshot is always some globally-applied version of the weights.
    """

    def __init__(self, weights):
        self._lock = threading.Lock()
        self.values = {k: np.array(t.data, copy=True) for k, t in weights.items()}
        self.ms = {k: np.zeros_like(v) for k, v in self.values.items()}
        self.steps = 0
        self.updates = 0
        self.skipped = 0
        self._ckpt_marks = set()

    def snapshot(self):
        with self._lock:
            return {k: v.copy() for k, v in self.values.items()}

    def step_count(self):
        with self._lock:
            return self.steps

    def advance_only(self, n_steps):
        with self._lock:
            self.steps += n_steps
            self.skipped += 1
            return self.steps

    def claim_checkpoint(self, mark):
        with self._lock:
            if mark in self._ckpt_marks:
                return False
            self._ckpt_marks.add(mark)
            return True


def sync_local(shared):
    """Fresh, unaliased tensor snapshot of the global weights."""
    snap = shared.snapshot()
    return {k: Tensor(v, requires_grad=True) for k, v in snap.items()}


def apply_gradients(shared, grads, hyper, n_steps):
    """Clip to the global-norm budget, then shared RMSProp on the named tensors.

    Parameters absent from ``grads`` are untouched, statistics included.
    A non-finite gradient skips the update (the step counter still
    advances) and reports None so the caller can flag it.
    """
    sq = 0.0
    for g in grads.values():
        flat = g.ravel()
        sq += float(np.dot(flat, flat))
    norm = float(np.sqrt(sq))
    if not np.isfinite(norm):
        shared.advance_only(n_steps)
        return None
    scale = 1.0 if norm <= hyper.grad_clip_norm else hyper.grad_clip_norm / norm
    lr, decay, eps = hyper.lr, hyper.rmsprop_decay, hyper.rmsprop_eps
    with shared._lock:
        for name, g in grads.items():
            if scale != 1.0:
                g = g * scale
            ms = shared.ms[name]
            np.multiply(ms, decay, out=ms)
            ms += (1.0 - decay) * (g * g)
            shared.values[name] -= lr * g / np.sqrt(ms + eps)
        shared.steps += n_steps
        shared.updates += 1
        return norm


class MetricsWriter:
    """Append-only CSV channel shared by the workers."""

    HEADER = "step,worker,episode_return,policy_loss,value_loss,entropy,grad_norm"

    def __init__(self, path):
        self._fh = open(path, "w")
        self._lock = threading.Lock()
        self._fh.write(self.HEADER + "\n")

    def log(self, step, worker, episode_return, policy_loss, value_loss, entropy, grad_norm):
        er = "" if episode_return is None else repr(float(episode_return))
        gn = "nan" if grad_norm is None else repr(float(grad_norm))
        row = (f"{step},{worker},{er},{repr(float(policy_loss))},"
               f"{repr(float(value_loss))},{repr(float(entropy))},{gn}\n")
        with self._lock:
            self._fh.write(row)

    def close(self):
        with self._lock:
            self._fh.close()


def worker_count(requested):
    """Requested worker threads, capped by the MASKAC_THREADS variable if set."""
    cap = os.environ.get("MASKAC_THREADS")
    if cap:
        return max(1, min(requested, int(cap)))
    return requested


def _limit_blas_threads():
    """Pin BLAS pools to one thread; the matrices here are far too small to split."""
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(1)
    except ImportError:
        pass


# Workers hand off whole rollout+update cycles instead of interleaving at
# numpy-call granularity: the engine is GIL-bound, and fine interleaving
# convoys badly (measured ~4x aggregate slowdown with 4 threads).  The
# gate serializes compute but keeps the workers' environments and update
# schedules fully independent; there is still no barrier anywhere.
_COMPUTE_GATE = threading.Lock()
_GATE_DISABLED = bool(os.environ.get("MASKAC_NO_COMPUTE_GATE"))


def _worker_env_seed(seed, worker_id):
    return int(np.random.SeedSequence([seed, worker_id, 17]).generate_state(1)[0])


def _worker_loop(worker_id, shared, config, hyper, env_spec, seed, metrics, stop,
                 dtype, save_snapshot, checkpoint_interval, errors):
    try:
        spec = dataclasses.replace(env_spec, seed=_worker_env_seed(seed, worker_id))
        env = make_env(spec)
        env.episode_cap = min(env.episode_cap, hyper.episode_step_cap)
        rng = np.random.default_rng([seed, worker_id, 1])
        state = RecurrentState.zeros(config, dtype)
        gated = not _GATE_DISABLED
        while not stop.is_set() and shared.step_count() < hyper.total_steps:
            if gated:
                _COMPUTE_GATE.acquire()
            try:
                weights = sync_local(shared)
                rollout, state = collect_rollout(env, weights, config, state,
                                                 hyper.t_max, rng)
                episode_return = env.score if rollout.terminal else None
                returns, advantages = compute_returns(rollout, hyper.gamma)
                loss = a3c_loss(rollout, returns, advantages,
                                hyper.entropy_coef, hyper.value_coef)
                ad.backward(loss)
                grads = {k: t.grad for k, t in weights.items() if t.grad is not None}
                norm = apply_gradients(shared, grads, hyper, len(rollout))
            finally:
                if gated:
                    _COMPUTE_GATE.release()
            step_now = shared.step_count()
            p_loss, v_loss, entropy = loss_components(rollout, returns, advantages)
            metrics.log(step_now, worker_id, episode_return, p_loss, v_loss, entropy, norm)
            if checkpoint_interval:
                mark = step_now // checkpoint_interval
                if mark > 0 and shared.claim_checkpoint(mark):
                    save_snapshot(shared.snapshot(), mark * checkpoint_interval)
            if gated:
                time.sleep(0)  # give a waiting sibling a chance at the gate
    except Exception as exc:  # propagate to the spawning thread
        errors.append((worker_id, exc))
        stop.set()


def train(config, hyper, env_spec, seed, out_dir, precision="single",
          checkpoint_interval=50_000, log=None):
    """Run the asynchronous training loop until the global step budget is met.

    Writes ckpt_<step>.ma3c files (including the initial ckpt_0) and a
    metrics.csv into ``out_dir``; returns the path of the final
    checkpoint.
    """
    from .checkpoint import save_checkpoint  # here to avoid an import cycle

    if precision not in ("single", "double"):
        raise ValueError("precision must be 'single' or 'double'")
    dtype = np.float64 if precision == "double" else np.float32
    _limit_blas_threads()
    os.makedirs(out_dir, exist_ok=True)

    shared = SharedParams(init_weights(config, seed, dtype))
    n_workers = worker_count(hyper.n_workers)

    def save_snapshot(values, step):
        save_checkpoint(values, config, os.path.join(out_dir, f"ckpt_{step}.ma3c"))

    save_snapshot(shared.snapshot(), 0)
    metrics = MetricsWriter(os.path.join(out_dir, "metrics.csv"))
    stop = threading.Event()
    errors = []
    threads = [
        threading.Thread(target=_worker_loop, name=f"worker-{i}",
                         args=(i, shared, config, hyper, env_spec, seed, metrics, stop,
                               dtype, save_snapshot, checkpoint_interval, errors))
        for i in range(n_workers)
    ]
    t0 = time.monotonic()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    metrics.close()
    if errors:
        worker_id, exc = errors[0]
        raise RuntimeError(f"worker {worker_id} failed") from exc

    final_step = shared.step_count()
    final_path = os.path.join(out_dir, f"ckpt_{final_step}.ma3c")
    if final_step > 0:
        save_snapshot(shared.snapshot(), final_step)
    else:
        final_path = os.path.join(out_dir, "ckpt_0.ma3c")
    elapsed = time.monotonic() - t0
    if log:
        rate = final_step / elapsed if elapsed > 0 else 0.0
        log(f"trained {final_step} steps in {elapsed:.1f}s "
            f"({rate:.0f} steps/s, {shared.updates} updates, {shared.skipped} skipped)")
    return final_path
