"""Interval link-state samples, balanced test sets, scoring and AUC metrics.

A sample is a short window ``[t - eps, t + eps]`` placed inside one
constant-state segment of a dyad and labelled with that state.  The model
scores a window by the negative time-averaged squared latent distance, so
higher scores mean "more link-like".
"""

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.stats import rankdata

from .graph import all_dyads, build_event_sequence
from .model import anchor_positions, mean_squared_distance

__all__ = [
    "TASKS",
    "EvalSample",
    "generate_samples",
    "assemble_balanced_set",
    "score_sample",
    "score_samples",
    "auc_roc",
    "auc_pr",
    "task_pool",
    "run_task",
    "save_metrics",
]

TASKS = ("reconstruction", "completion", "future")
EPS_FRACTION = 1e-2
MAX_PER_CLASS = 1000


@dataclass(frozen=True)
class EvalSample:
    dyad: tuple
    start: float
    end: float
    label: int
    difficulty: str
    task: str
    future_category: str = "n/a"

    @property
    def center(self):
        return 0.5 * (self.start + self.end)


def generate_samples(graph, dyads, task, rng, epsilon, start=0.0, seen_dyads=None):
    """One labelled window per sufficiently long segment of every dyad.

    Parameters
    ----------
    graph : TemporalGraph
        Intervals of the window ``[start, graph.horizon)``.
    dyads : array-like of (i, j)
    task : str
        One of :data:`TASKS`; only stored on the samples.
    rng : numpy.random.Generator
    epsilon : float
        Half-width of each window.  Segments shorter than ``2 * epsilon``
        yield nothing.
    start : float
        Start of the observation window.
    seen_dyads : set of tuple, optional
        Dyads linked before the window; tags samples ``seen``/``unseen``.

    Returns
    -------
    list of EvalSample
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    out = []
    for i, j in np.asarray(dyads, dtype=int).reshape(-1, 2).tolist():
        segs = build_event_sequence(graph, (i, j), start=start).segments
        states = {s for _, _, s in segs}
        difficulty = "hard" if len(states) == 2 else "simple"
        if seen_dyads is None:
            category = "n/a"
        else:
            category = "seen" if (i, j) in seen_dyads else "unseen"
        for a, b, s in segs:
            lo, hi = a + epsilon, b - epsilon
            if not hi > lo:
                continue
            t = rng.uniform(lo, hi)
            # guard against rounding onto an event time
            if not (t - epsilon > a and t + epsilon < b):
                continue
            out.append(EvalSample((i, j), t - epsilon, t + epsilon, int(s),
                                  difficulty, task, category))
    return out


def assemble_balanced_set(samples, rng, max_per_class=MAX_PER_CLASS):
    """Class-balanced subset with a guaranteed share of hard samples.

    ``k = min(max_per_class, #link, #non-link)``.  In each class ``h`` is the
    hard-pool size capped at ``k``; ``h // 2`` hard samples are drawn first
    and the remaining ``k - h // 2`` come uniformly from the leftover hard and
    all simple samples.  Links come first in the output.
    """
    by_label = {1: [], -1: []}
    for smp in samples:
        by_label[smp.label].append(smp)
    k = min(max_per_class, len(by_label[1]), len(by_label[-1]))
    if k == 0:
        raise ValueError("both link and non-link samples are required")
    chosen = []
    for label in (1, -1):
        pool = by_label[label]
        hard = np.array([n for n, smp in enumerate(pool) if smp.difficulty == "hard"], dtype=int)
        n_hard = min(len(hard), k) // 2
        first = rng.choice(hard, size=n_hard, replace=False) if n_hard else np.empty(0, int)
        rest = np.setdiff1d(np.arange(len(pool)), first)
        fill = rng.choice(rest, size=k - n_hard, replace=False)
        chosen.extend(pool[n] for n in np.concatenate([first, fill]).tolist())
    return chosen


def score_sample(params, config, sample, time_scale=1.0, anchors=None):
    """Negative mean squared latent distance of the dyad over the window."""
    i, j = sample.dyad
    return -mean_squared_distance(params, config, i, j, sample.start * time_scale,
                                  sample.end * time_scale, anchors=anchors)


def score_samples(params, config, samples, time_scale=1.0):
    anchors = anchor_positions(params, config)
    return np.array([score_sample(params, config, smp, time_scale, anchors)
                     for smp in samples], dtype=float)


def _binary(labels):
    y = np.asarray(labels)
    if y.dtype == bool:
        return y
    return y > 0


def auc_roc(scores, labels):
    """Mann-Whitney AUC with ties counted one half.

    Computed from integer twice-ranks, so the result equals exhaustive pair
    counting exactly.
    """
    scores = np.asarray(scores, dtype=float)
    pos = _binary(labels)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc_roc needs both classes")
    twice_ranks = (2 * rankdata(scores, method="average")).astype(np.int64)
    u2 = int(twice_ranks[pos].sum()) - n_pos * (n_pos + 1)
    return u2 / (2 * n_pos * n_neg)


def auc_pr(scores, labels):
    """Average precision over a descending sweep, tied scores as one block.

    ``sum_b (recall_b - recall_{b-1}) * precision_b`` with exact rational
    accumulation and a single final rounding.
    """
    scores = np.asarray(scores, dtype=float)
    pos = _binary(labels)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("auc_pr needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s_sorted, p_sorted = scores[order], pos[order]
    block_end = np.flatnonzero(np.append(s_sorted[1:] != s_sorted[:-1], True)) + 1
    tp_cum = np.cumsum(p_sorted)[block_end - 1]
    pos_in_block = np.diff(np.concatenate([[0], tp_cum]))
    total = Fraction(0)
    for gained, tp, seen in zip(pos_in_block.tolist(), tp_cum.tolist(), block_end.tolist()):
        if gained:
            total += Fraction(gained * tp, seen)
    return float(total / n_pos)


def task_pool(split, task):
    """``(graph, dyads, start, seen_dyads)`` defining a task's sample pool."""
    if task == "reconstruction":
        return split.train_graph, split.train_dyads, 0.0, None
    if task == "completion":
        return split.heldout_graph, split.test_dyads, 0.0, None
    if task == "future":
        removed = {tuple(d) for d in split.removed_dyads.tolist()}
        dyads = np.array([d for d in all_dyads(split.num_nodes).tolist()
                          if tuple(d) not in removed], dtype=int).reshape(-1, 2)
        seen = set(split.first_period_graph().intervals)
        return split.future_graph, dyads, split.boundary, seen
    raise ValueError(f"unknown task {task!r}")


def _breakdown(samples, scores, key):
    out = {}
    for value in sorted({getattr(smp, key) for smp in samples}):
        mask = np.array([getattr(smp, key) == value for smp in samples])
        labels = np.array([smp.label for smp in samples])[mask]
        entry = {"count": int(mask.sum()), "links": int((labels > 0).sum())}
        if 0 < entry["links"] < entry["count"]:
            entry["auc_roc"] = auc_roc(scores[mask], labels)
        out[value] = entry
    return out


def run_task(split, params, config, task, seeds=(0, 1, 2, 3, 4), time_scale=1.0,
             epsilon=None):
    """Evaluate one protocol over several seeded resamplings.

    Returns a JSON-ready record with mean and standard deviation of both
    AUCs, plus per-seed values and sample breakdowns.  ``epsilon`` defaults
    to one percent of the full horizon.
    """
    graph, dyads, start, seen = task_pool(split, task)
    epsilon = EPS_FRACTION * split.horizon if epsilon is None else epsilon
    if len(dyads) == 0:
        raise ValueError(f"{task}: no dyads to sample from")
    per_seed = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        pool = generate_samples(graph, dyads, task, rng, epsilon, start=start,
                                seen_dyads=seen)
        if not any(s.label > 0 for s in pool) or not any(s.label < 0 for s in pool):
            raise ValueError(f"{task}: sample pool lacks a class")
        chosen = assemble_balanced_set(pool, rng)
        scores = score_samples(params, config, chosen, time_scale)
        labels = np.array([s.label for s in chosen])
        per_seed.append({
            "seed": int(seed),
            "auc_roc": auc_roc(scores, labels),
            "auc_pr": auc_pr(scores, labels),
            "num_samples": len(chosen),
            "pool_size": len(pool),
            "difficulty": _breakdown(chosen, scores, "difficulty"),
            **({"future_category": _breakdown(chosen, scores, "future_category")}
               if task == "future" else {}),
        })
    record = {"task": task, "R": len(per_seed), "seeds": [int(s) for s in seeds],
              "epsilon": epsilon}
    for metric in ("auc_roc", "auc_pr"):
        vals = np.array([r[metric] for r in per_seed])
        record[metric] = {"mean": float(vals.mean()),
                          "sd": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
    record["runs"] = per_seed
    return record


def save_metrics(path, records, **extra):
    """Write task records (keyed by task name) as JSON."""
    payload = {"tasks": {r["task"]: r for r in records}, **extra}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
