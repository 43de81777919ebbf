"""Independent reference implementations shared by the test modules.

Everything here is deliberately written the slow, obvious way (explicit
loops, direct formulas) so it cannot share a bug with the library paths
it checks.
"""

import numpy as np


def conv2d_oracle(x, k, b, stride, padding):
    """Direct six-nested-loop convolution."""
    c_in, h, w = x.shape
    c_out, _, kh, kw = k.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    xp = np.zeros((c_in, hp, wp))
    xp[:, padding:padding + h, padding:padding + w] = x
    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1
    y = np.zeros((c_out, h_out, w_out))
    for co in range(c_out):
        for oi in range(h_out):
            for oj in range(w_out):
                acc = 0.0
                for ci in range(c_in):
                    for ki in range(kh):
                        for kj in range(kw):
                            acc += xp[ci, oi * stride + ki, oj * stride + kj] * k[co, ci, ki, kj]
                y[co, oi, oj] = acc + b[co]
    return y


def matvec_oracle(x, w, b):
    y = np.zeros(w.shape[0])
    for i in range(w.shape[0]):
        acc = 0.0
        for j in range(w.shape[1]):
            acc += w[i, j] * x[j]
        y[i] = acc + b[i]
    return y


def convlstm_oracle(x, h_prev, c_prev, kernel, bias):
    """Gate-by-gate ConvLSTM step from the raw formulas."""
    L = h_prev.shape[0]
    z = conv2d_oracle(np.concatenate([x, h_prev], axis=0), kernel, bias, stride=1, padding=1)

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    i = sig(z[0:L])
    f = sig(z[L:2 * L])
    o = sig(z[2 * L:3 * L])
    g = np.tanh(z[3 * L:4 * L])
    c_next = f * c_prev + i * g
    h_next = o * np.tanh(c_next)
    return h_next, c_next


def discounted_returns_oracle(rewards, bootstrap, gamma):
    """R_t = sum_k gamma^k r_{t+k} + gamma^(T-t) * bootstrap, summed directly."""
    T = len(rewards)
    out = []
    for t in range(T):
        acc = 0.0
        for k in range(T - t):
            acc += gamma ** k * rewards[t + k]
        acc += gamma ** (T - t) * bootstrap
        out.append(acc)
    return out


def catch_random_expectation(size=20, paddle_half=3):
    """Exact mean return of the uniform-random policy on the catch task.

    Enumerates every (ball start column, drift) pair and evolves the exact
    paddle-center distribution of the clipped uniform random walk; the
    catch probability is the coverage mass under each landing column.
    """
    steps = size - 1
    lo, hi = paddle_half, size - 1 - paddle_half
    dist = np.zeros(size)
    dist[size // 2] = 1.0
    for _ in range(steps):
        nxt = np.zeros(size)
        for c in range(size):
            if dist[c] == 0.0:
                continue
            for d in (-1, 0, 1):
                nxt[min(max(c + d, lo), hi)] += dist[c] / 3.0
        dist = nxt

    total = 0.0
    n_cases = 0
    for start in range(size):
        for drift in (-1, 0, 1):
            col, d = start, drift
            for _ in range(steps):
                col += d
                if col < 0:
                    col, d = -col, -d
                elif col > size - 1:
                    col, d = 2 * (size - 1) - col, -d
            p_catch = dist[max(col - paddle_half, 0):col + paddle_half + 1].sum()
            total += 2.0 * p_catch - 1.0
            n_cases += 1
    return total / n_cases
