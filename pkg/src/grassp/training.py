"""Initialisation, staged Adam optimisation and prior-scale selection."""

import csv
import math
from dataclasses import dataclass, fields

import numpy as np

from .model import ModelConfig, ModelParams, compile_terms, objective_and_gradient

__all__ = [
    "STAGE_PARAMS",
    "TrainSchedule",
    "Adam",
    "TrainTrace",
    "initialize",
    "train",
    "select_prior_scale",
    "write_loss_trace",
    "read_config_file",
    "DEFAULT_LAMBDA_GRID",
]

STAGE_PARAMS = {
    1: ("v",),
    2: ("v", "x"),
    3: ("v", "x", "beta", "sigma_b_logits", "sigma_n_logits"),
}
DEFAULT_LAMBDA_GRID = tuple(10.0 ** k for k in range(1, 11))


@dataclass(frozen=True)
class TrainSchedule:
    stage1_epochs: int = 100
    stage2_epochs: int = 100
    stage3_epochs: int = 100
    learning_rate: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 100
    batch_unit: str = "nodes"

    def __post_init__(self):
        if self.batch_unit not in ("nodes", "dyads"):
            raise ValueError("batch_unit must be 'nodes' or 'dyads'")
        if min(self.stage1_epochs, self.stage2_epochs, self.stage3_epochs) < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("batch_size must be >= 1 and learning_rate > 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ValueError("invalid Adam constants")

    @property
    def total_epochs(self):
        return self.stage1_epochs + self.stage2_epochs + self.stage3_epochs

    def stages(self):
        """``(stage, epochs)`` pairs in execution order."""
        return [(1, self.stage1_epochs), (2, self.stage2_epochs), (3, self.stage3_epochs)]


class Adam:
    """Adam with independent moment state and step count per parameter."""

    def __init__(self, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = {}

    def reset(self, name):
        self.state.pop(name, None)

    def step(self, name, value, grad):
        """Update ``value`` in place from ``grad``."""
        m, v, t = self.state.get(name, (np.zeros_like(value), np.zeros_like(value), 0))
        t += 1
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        self.state[name] = (m, v, t)
        m_hat = m / (1.0 - self.beta1 ** t)
        v_hat = v / (1.0 - self.beta2 ** t)
        value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainTrace:
    epochs: list
    stages: list
    objectives: list

    def rows(self):
        return list(zip(self.epochs, self.stages, self.objectives))


def initialize(config, rng):
    """Uniform(-1, 1) positions, standard-normal velocities and biases,
    uniform prior weights."""
    n, d, b = config.num_nodes, config.dim, config.num_bins
    x = rng.uniform(-1.0, 1.0, size=(n, d))
    v = rng.standard_normal(size=(b, n, d))
    beta = rng.standard_normal(size=2)
    return ModelParams(x, v, beta, np.zeros(b), np.zeros(n))


def train(graph, config, schedule, rng, dyads=None, params=None, terms=None):
    """Fit the model by staged mini-batch Adam.

    Parameters
    ----------
    graph : TemporalGraph
    config : ModelConfig
    schedule : TrainSchedule
    rng : numpy.random.Generator
        Drives initialisation (unless ``params`` is given) and batch order.
        With ``batch_unit="nodes"`` a batch holds every dyad among a random
        group of ``batch_size`` nodes; with ``"dyads"`` it holds
        ``batch_size`` random dyads.  The prior enters each batch weighted
        by its share of dyads.
    dyads : array-like, optional
        Dyads whose likelihood terms are used (default: all).
    params : ModelParams, optional
        Starting point; copied, never modified.
    terms : Terms, optional
        Precompiled terms for ``dyads``.

    Returns
    -------
    (ModelParams, TrainTrace)
        The trace holds, per epoch, the sum of the batch objectives.
    """
    params = initialize(config, rng) if params is None else params.copy().check(config)
    terms = compile_terms(graph, config, dyads) if terms is None else terms
    num_dyads = terms.num_dyads
    if num_dyads == 0:
        raise ValueError("no dyads to train on")
    opt = Adam(schedule.learning_rate, schedule.adam_beta1, schedule.adam_beta2,
               schedule.adam_eps)
    by_nodes = schedule.batch_unit == "nodes"
    full_batch = schedule.batch_size >= (config.num_nodes if by_nodes else num_dyads)
    trace = TrainTrace([], [], [])
    epoch = 0
    active = ()
    for stage, n_epochs in schedule.stages():
        if n_epochs == 0:
            continue
        names = STAGE_PARAMS[stage]
        for name in names:
            if name not in active:
                opt.reset(name)
        active = names
        for _ in range(n_epochs):
            epoch += 1
            if full_batch:
                batches = [None]
            elif by_nodes:
                group = np.empty(config.num_nodes, dtype=int)
                group[rng.permutation(config.num_nodes)] = (
                    np.arange(config.num_nodes) // schedule.batch_size)
                gi, gj = group[terms.dyads[:, 0]], group[terms.dyads[:, 1]]
                batches = [np.flatnonzero((gi == k) & (gj == k)) for k in range(group.max() + 1)]
                batches = [b for b in batches if len(b)]
            else:
                order = rng.permutation(num_dyads)
                batches = [order[k:k + schedule.batch_size]
                           for k in range(0, num_dyads, schedule.batch_size)]
            total = 0.0
            for nb, slots in enumerate(batches):
                sub = terms if slots is None else terms.select(slots)
                weight = sub.num_dyads / num_dyads
                try:
                    value, grad = objective_and_gradient(params, config, sub, prior_weight=weight)
                except FloatingPointError as exc:
                    raise FloatingPointError(f"epoch {epoch}, batch {nb}: {exc}") from exc
                if not math.isfinite(value):
                    raise FloatingPointError(f"non-finite objective at epoch {epoch}, batch {nb}")
                total += value
                for name in names:
                    opt.step(name, getattr(params, name), getattr(grad, name))
            trace.epochs.append(epoch)
            trace.stages.append(stage)
            trace.objectives.append(total)
    return params, trace


def select_prior_scale(graph, config, schedule, validation_samples, candidate_scales,
                       seed=0, dyads=None, time_scale=1.0):
    """Train once per candidate scale and keep the best validation AUC-ROC.

    Every candidate starts from the same seed.  Ties go to the smaller scale.

    Returns
    -------
    best_scale : float
    table : list of dict
        ``{"prior_scale", "auc_roc"}`` (or ``"error"``) per candidate.
    fits : dict
        ``scale -> (params, trace)`` of the successful runs.
    """
    from .evaluation import auc_roc, score_samples

    if not validation_samples:
        raise ValueError("validation_samples is empty")
    labels = np.array([s.label for s in validation_samples])
    terms = compile_terms(graph, config, dyads)
    table, fits, errors = [], {}, []
    for scale in sorted(float(c) for c in candidate_scales):
        cfg = ModelConfig(config.num_nodes, config.dim, config.num_bins, config.horizon, scale)
        try:
            params, trace = train(graph, cfg, schedule, np.random.default_rng(seed),
                                  terms=terms)
            scores = score_samples(params, cfg, validation_samples, time_scale)
            auc = auc_roc(scores, labels)
        except (FloatingPointError, ValueError) as exc:
            errors.append(f"scale {scale:g}: {exc}")
            table.append({"prior_scale": scale, "error": str(exc)})
            continue
        fits[scale] = (params, trace)
        table.append({"prior_scale": scale, "auc_roc": auc})
    ok = [row for row in table if "auc_roc" in row]
    if not ok:
        raise RuntimeError("every prior scale failed:\n" + "\n".join(errors))
    best = max(ok, key=lambda row: (row["auc_roc"], -row["prior_scale"]))
    return best["prior_scale"], table, fits


def write_loss_trace(path, trace):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "stage", "objective"])
        for epoch, stage, obj in trace.rows():
            writer.writerow([epoch, stage, repr(float(obj))])


_MODEL_KEYS = {f.name: f.type for f in fields(ModelConfig)}
_SCHEDULE_KEYS = {f.name: f.type for f in fields(TrainSchedule)}
_EXTRA_KEYS = {"seed": int, "normalize_time": bool}
_STR_KEYS = {"batch_unit"}


def _coerce(key, raw, kind):
    if key in _STR_KEYS:
        return raw
    if kind in (int, "int"):
        return int(raw)
    if kind in (bool, "bool"):
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key}: expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    return float(raw)


def read_config_file(path):
    """Parse a flat ``key = value`` file (``#`` comments allowed).

    Returns ``(model_kwargs, schedule, extra)``; unknown or repeated keys
    raise :class:`ValueError`.
    """
    model, sched, extra = {}, {}, {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, raw = (part.strip() for part in line.split("=", 1))
            for table, target in ((_MODEL_KEYS, model), (_SCHEDULE_KEYS, sched),
                                  (_EXTRA_KEYS, extra)):
                if key in table:
                    if key in target:
                        raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
                    try:
                        target[key] = _coerce(key, raw, table[key])
                    except ValueError as exc:
                        raise ValueError(f"{path}:{lineno}: {exc}") from exc
                    break
            else:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    return model, TrainSchedule(**sched), extra
