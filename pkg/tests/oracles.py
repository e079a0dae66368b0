"""Brute-force reference implementations used only by the tests."""
import math

import numpy as np


def dft_frames(x, fft_size, hop, win):
    """Explicit-sum STFT magnitude with a periodic Hann window."""
    n = np.arange(win)
    window = np.array([0.5 - 0.5 * math.cos(2 * math.pi * k / win) for k in range(win)])
    frames = []
    start = 0
    while start + win <= len(x):
        seg = x[start:start + win] * window
        row = []
        for k in range(fft_size // 2 + 1):
            ang = -2j * np.pi * k * n / fft_size
            row.append(abs(np.sum(seg * np.exp(ang))))
        frames.append(row)
        start += hop
    return np.array(frames)


def sc_loss(est, tgt, cfg):
    a, b = dft_frames(est, *cfg), dft_frames(tgt, *cfg)
    return math.sqrt(((a - b) ** 2).sum()) / math.sqrt((b ** 2).sum())


def logmag_loss(est, tgt, cfg):
    a, b = dft_frames(est, *cfg), dft_frames(tgt, *cfg)
    total, count = 0.0, 0
    for i in range(a.shape[0]):
        for k in range(a.shape[1]):
            total += abs(math.log(a[i, k] + 1e-7) - math.log(b[i, k] + 1e-7))
            count += 1
    return total / count


def ptn(est, tgt, cfgs):
    value = sum(abs(e - t) for e, t in zip(est, tgt)) / len(est)
    for cfg in cfgs:
        value += sc_loss(est, tgt, cfg) + logmag_loss(est, tgt, cfg)
    return value


def cos(a, b):
    return float(sum(x * y for x, y in zip(a, b)) / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b))))


def ap_loss(queries, centroids, w, b):
    n = len(queries)
    total = 0.0
    for i in range(n):
        sims = [w * cos(queries[i], centroids[j]) + b for j in range(n)]
        denom = sum(math.exp(s) for s in sims) / n
        total += -math.log(math.exp(sims[i]) / denom)
    return total / n


def reward(x_hat, x_tilde, pos_hat, pos_tilde, neg_hat, neg_tilde):
    value = cos(x_tilde, pos_tilde) - cos(x_hat, pos_hat)
    diffs = [cos(x_hat, nh) - cos(x_tilde, nt) for nh, nt in zip(neg_hat, neg_tilde)]
    return value + sum(diffs) / len(diffs)


def smooth_l1(d):
    d = abs(d)
    return 0.5 * d * d if d < 1.0 else d - 0.5


def dqn(pred, actual):
    return sum(smooth_l1(p - a) for p, a in zip(pred, actual)) / len(pred)


def sweep_rates(scores, labels):
    """(P_fa, P_miss) at every candidate threshold; accept when score >= t."""
    thresholds = sorted(set(scores)) + [math.inf]
    n_t = sum(labels)
    n_n = len(labels) - n_t
    out = []
    for t in thresholds:
        miss = sum(1 for s, l in zip(scores, labels) if l and s < t)
        fa = sum(1 for s, l in zip(scores, labels) if not l and s >= t)
        out.append((fa / n_n, miss / n_t))
    return out


def eer(scores, labels):
    pts = sweep_rates(scores, labels)
    # P_fa decreases and P_miss increases as t rises; find the crossing segment.
    for (fa0, m0), (fa1, m1) in zip(pts, pts[1:]):
        d0, d1 = fa0 - m0, fa1 - m1
        if d0 == 0:
            return fa0
        if d0 > 0 and d1 <= 0:
            if d1 == 0:
                return fa1
            lam = d0 / (d0 - d1)
            return fa0 + lam * (fa1 - fa0)
    fa, m = pts[-1]
    return (fa + m) / 2


def min_dcf(scores, labels, p=0.05):
    best = math.inf
    for fa, miss in sweep_rates(scores, labels):
        best = min(best, miss * p + fa * (1 - p))
    return best / min(p, 1 - p)


def param_gradcheck(loss_fn, param_sets, h=1e-5, max_coords=40, seed=0):
    """Worst relative error between backprop and central differences.

    ``loss_fn()`` rebuilds the graph from the current parameter values. A
    random subset of coordinates per tensor is perturbed to keep it cheap.
    """
    from lc4sv.learn.gradcheck import relative_error

    rng = np.random.default_rng(seed)
    tensors = [t for ps in param_sets for t in ps.tensors()]
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    for t, g in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        k = flat.size if max_coords is None else min(max_coords, flat.size)
        picks = rng.choice(flat.size, size=k, replace=False)
        num = np.empty(picks.size)
        for k, i in enumerate(picks):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            num[k] = (up - down) / (2 * h)
        worst = max(worst, relative_error(num, g.reshape(-1)[picks]))
    return worst
