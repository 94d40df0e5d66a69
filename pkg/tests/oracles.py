"""Independent reference implementations used as test oracles."""

import math
from fractions import Fraction

import numpy as np


def brute_force(preds, labels, c):
    """Counting oracle in exact rationals: (accuracy, kappa, per-class f1)."""
    n = len(labels)
    acc = Fraction(sum(p == l for p, l in zip(preds, labels)), n)
    p_e = sum(Fraction(sum(l == k for l in labels) * sum(p == k for p in preds), n * n) for k in range(c))
    kappa = Fraction(0) if p_e == 1 else (acc - p_e) / (1 - p_e)
    f1 = []
    for k in range(c):
        tp = sum(p == k and l == k for p, l in zip(preds, labels))
        denom = sum(p == k for p in preds) + sum(l == k for l in labels)
        f1.append(Fraction(2 * tp, denom) if denom else Fraction(0))
    return acc, kappa, f1


def stop_epoch(losses, window=10, patience=5):
    """1-based epoch at which training halts, or None; vectorised with cumsum."""
    losses = np.asarray(losses, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(losses)])
    e = np.arange(window, len(losses))
    cond = np.zeros(len(losses), bool)
    cond[e] = losses[e] >= (csum[e] - csum[e - window]) / window
    run = 0
    for i, c in enumerate(cond):
        run = run + 1 if c else 0
        if run == patience:
            return i + 1
    return None


def lockstep_asha(kappa_of, n_trials, parallelism, rungs=(10, 20, 40, 60)):
    """Replay ASHA by brute force: every round all running trials gain one
    epoch, then each rung reading is ranked against everything seen at that
    rung so far. Returns (decisions [(trial, epoch, decision)], epochs used)."""
    seen = {r: [] for r in rungs}
    running, next_id, used, log = [], 0, 0, []
    while running or next_id < n_trials:
        while len(running) < parallelism and next_id < n_trials:
            running.append([next_id, 0])
            next_id += 1
        for t in running:
            t[1] += 1
        used += len(running)
        for tid, ep in running:
            if ep in rungs:
                seen[ep].append(kappa_of(tid, ep))
        kept = []
        for tid, ep in running:
            if ep not in rungs:
                kept.append([tid, ep])
                continue
            if ep == rungs[-1]:
                log.append((tid, ep, "finished"))
                continue
            k = kappa_of(tid, ep)
            better = sorted((v for v in seen[ep] if v > k), reverse=True)
            if len(better) < math.ceil(len(seen[ep]) / 2):
                log.append((tid, ep, "continue"))
                kept.append([tid, ep])
            else:
                log.append((tid, ep, "stop_at_rung"))
        running = kept
    return log, used
