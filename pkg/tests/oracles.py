"""Independent reference implementations used by the unit and acceptance tests."""

import math

import numpy as np


def brute_force_metrics(records, num_labels, mode, ks=(1, 2, 3, 5)):
    """Accuracy, recall, macro-F1, legality and top-k by explicit per-class counting."""
    n = len(records)
    accuracy = sum(1 for r in records if r.pred is not None and r.pred == r.gold) / n
    per_recall, per_f1 = {}, {}
    for c in range(num_labels):
        tp = sum(1 for r in records if r.gold == c and r.pred == c)
        fp = sum(1 for r in records if r.gold != c and r.pred == c)
        fn = sum(1 for r in records if r.gold == c and r.pred != c)
        if tp + fn == 0:
            continue
        p = tp / (tp + fp) if tp + fp else 0.0
        q = tp / (tp + fn)
        per_recall[c] = q
        per_f1[c] = 2 * p * q / (p + q) if p + q else 0.0
    macro_f1 = float(np.mean([per_f1[c] for c in sorted(per_f1)]))
    if mode == "binary":
        recall = per_recall.get(1, 0.0)
    else:
        recall = float(np.mean([per_recall[c] for c in sorted(per_recall)]))
    legal = sum(1 for r in records if r.pred is not None) / n
    topk = {k: sum(1 for r in records if r.gold in r.ranked[:k]) / n for k in ks}
    return accuracy, recall, macro_f1, legal, topk


def random_records(rng, num_labels, record_type):
    out = []
    for _ in range(rng.randint(1, 25)):
        gold = rng.randrange(num_labels)
        pred = None if rng.random() < 0.2 else rng.randrange(num_labels)
        out.append(record_type(0, "", pred, gold, rng.sample(range(num_labels), num_labels)))
    return out


def binomial_upper_tail(successes: int, n: int, p: float) -> float:
    """P[X >= successes] for X ~ Binomial(n, p), summed exactly."""
    return float(sum(math.comb(n, k) * p**k * (1 - p) ** (n - k) for k in range(successes, n + 1)))
