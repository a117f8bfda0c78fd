"""Continuous-time interval graphs, event sequences and dataset splits."""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "GraphValidationError",
    "TemporalGraph",
    "EventSequence",
    "DatasetSplit",
    "all_dyads",
    "load_graph",
    "save_graph",
    "load_contacts",
    "aggregate_contacts",
    "build_event_sequence",
    "split_dataset",
]

INTERVAL_HEADER = ("i", "j", "t_start", "t_end")
CONTACT_HEADER = ("i", "j", "t")


class GraphValidationError(ValueError):
    """Raised when interval data violates the interval-graph invariants."""


def all_dyads(num_nodes):
    """Every unordered dyad ``(i, j)``, ``i < j``, as an ``(n, 2)`` array."""
    iu, ju = np.triu_indices(num_nodes, k=1)
    return np.stack([iu, ju], axis=1)


def _normalize_dyad(i, j, num_nodes):
    i, j = int(i), int(j)
    if i == j:
        raise GraphValidationError(f"self-loop on node {i}")
    if min(i, j) < 0 or max(i, j) >= num_nodes:
        raise GraphValidationError(
            f"node id out of range in dyad ({i}, {j}) for N={num_nodes}")
    return (i, j) if i < j else (j, i)


def _clean_intervals(dyad, rows, horizon, merge_touching):
    """Sort, validate and optionally merge touching intervals of one dyad."""
    rows = sorted(rows)
    out = []
    for a, b in rows:
        if not (math.isfinite(a) and math.isfinite(b)):
            raise GraphValidationError(f"non-finite time on dyad {dyad}")
        if b <= a:
            raise GraphValidationError(
                f"t_end <= t_start ({a}, {b}) on dyad {dyad}")
        if a < 0 or b > horizon:
            raise GraphValidationError(
                f"interval ({a}, {b}) on dyad {dyad} outside [0, {horizon}]")
        if out:
            pa, pb = out[-1]
            if a < pb:
                raise GraphValidationError(
                    f"overlapping intervals ({pa}, {pb}) and ({a}, {b}) "
                    f"on dyad {dyad}")
            if a == pb:
                if not merge_touching:
                    raise GraphValidationError(
                        f"touching intervals at t={a} on dyad {dyad}")
                logger.warning("merging touching intervals at t=%s on dyad %s",
                               a, dyad)
                out[-1] = (pa, b)
                continue
        out.append((a, b))
    return np.asarray(out, dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class TemporalGraph:
    """Undirected interval graph over the timeline ``[0, horizon)``.

    ``intervals`` maps a dyad ``(i, j)`` with ``i < j`` to a sorted
    ``(k, 2)`` array of disjoint, non-empty ``[t_start, t_end)`` intervals.
    Dyads without links are simply absent from the mapping.  Instances are
    validated on construction and are read-only afterwards.
    """

    num_nodes: int
    horizon: float
    intervals: "MappingProxyType" = field(default_factory=dict)

    def __post_init__(self):
        if self.num_nodes < 2:
            raise GraphValidationError("need at least two nodes")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise GraphValidationError("horizon must be positive and finite")
        object.__setattr__(self, "num_nodes", int(self.num_nodes))
        object.__setattr__(self, "horizon", float(self.horizon))
        cleaned = {}
        for dyad, arr in dict(self.intervals).items():
            key = _normalize_dyad(dyad[0], dyad[1], self.num_nodes)
            if key != tuple(dyad):
                raise GraphValidationError(f"dyad {dyad} must satisfy i < j")
            rows = [tuple(map(float, r)) for r in np.asarray(arr, float).reshape(-1, 2)]
            clean = _clean_intervals(key, rows, self.horizon, merge_touching=False)
            if len(clean):
                clean.setflags(write=False)
                cleaned[key] = clean
        object.__setattr__(self, "intervals", MappingProxyType(dict(sorted(cleaned.items()))))

    @classmethod
    def from_records(cls, num_nodes, horizon, records, merge_touching=True):
        """Build a graph from ``(i, j, t_start, t_end)`` rows in any order.

        Rows with ``i > j`` are swapped; touching intervals of one dyad are
        merged (with a warning) unless ``merge_touching`` is false.
        """
        grouped = {}
        for i, j, a, b in records:
            key = _normalize_dyad(i, j, num_nodes)
            grouped.setdefault(key, []).append((float(a), float(b)))
        return cls(num_nodes, horizon, {
            k: _clean_intervals(k, rows, float(horizon), merge_touching)
            for k, rows in grouped.items()
        })

    def __eq__(self, other):
        if not isinstance(other, TemporalGraph):
            return NotImplemented
        return (self.num_nodes == other.num_nodes
                and self.horizon == other.horizon
                and self.intervals.keys() == other.intervals.keys()
                and all(np.array_equal(a, other.intervals[k])
                        for k, a in self.intervals.items()))

    __hash__ = None

    @property
    def num_intervals(self):
        return sum(len(a) for a in self.intervals.values())

    @property
    def num_events(self):
        """Number of state changes strictly inside ``(0, horizon)``."""
        n = 0
        for arr in self.intervals.values():
            n += int(np.count_nonzero(arr > 0) - np.count_nonzero(arr >= self.horizon))
        return n

    def dyad_intervals(self, i, j):
        key = _normalize_dyad(i, j, self.num_nodes)
        return self.intervals.get(key, np.empty((0, 2)))

    def records(self):
        """Canonically sorted ``(i, j, t_start, t_end)`` tuples."""
        return [(i, j, float(a), float(b))
                for (i, j), arr in self.intervals.items() for a, b in arr]

    def state_at(self, i, j, t):
        arr = self.dyad_intervals(i, j)
        return 1 if np.any((arr[:, 0] <= t) & (t < arr[:, 1])) else -1

    def clipped(self, t0, t1):
        """Intervals restricted to ``[t0, t1)``; the horizon becomes ``t1``."""
        out = {}
        for key, arr in self.intervals.items():
            a = np.maximum(arr[:, 0], t0)
            b = np.minimum(arr[:, 1], t1)
            keep = b > a
            if keep.any():
                out[key] = np.stack([a[keep], b[keep]], axis=1)
        return TemporalGraph(self.num_nodes, t1, out)

    def subgraph(self, dyads, exclude=False):
        """Keep (or drop, with ``exclude``) the intervals of the given dyads."""
        chosen = {tuple(map(int, d)) for d in dyads}
        out = {k: a for k, a in self.intervals.items() if (k in chosen) != exclude}
        return TemporalGraph(self.num_nodes, self.horizon, out)

    def rescaled(self, factor):
        """Multiply every time (and the horizon) by ``factor``."""
        return TemporalGraph(self.num_nodes, self.horizon * factor,
                             {k: a * factor for k, a in self.intervals.items()})


@dataclass(frozen=True)
class EventSequence:
    """Alternating-state partition of one dyad's timeline.

    ``events[0] == start`` and segment ``m`` spans
    ``[events[m], events[m + 1])`` (the last one ends at ``horizon``, where
    it is censored) with state ``states[m]``.
    """

    dyad: tuple
    events: np.ndarray
    states: np.ndarray
    horizon: float

    def __post_init__(self):
        ev, st = np.asarray(self.events, float), np.asarray(self.states, int)
        if ev.ndim != 1 or ev.shape != st.shape or len(ev) == 0:
            raise ValueError("events and states must be equal-length 1-d arrays")
        if np.any(np.diff(ev) <= 0) or ev[-1] >= self.horizon:
            raise ValueError("events must be strictly increasing and below the horizon")
        if not np.all(np.abs(st) == 1) or np.any(st[1:] == st[:-1]):
            raise ValueError("states must alternate between -1 and +1")
        object.__setattr__(self, "events", ev)
        object.__setattr__(self, "states", st)

    @property
    def segments(self):
        """``(start, end, state)`` triples covering ``[events[0], horizon)``."""
        ends = np.append(self.events[1:], self.horizon)
        return list(zip(self.events.tolist(), ends.tolist(), self.states.tolist()))

    def intervals(self):
        """Link intervals implied by the positive-state segments."""
        return np.array([(a, b) for a, b, s in self.segments if s == 1],
                        dtype=float).reshape(-1, 2)


def build_event_sequence(graph, dyad, start=0.0):
    """Event sequence of ``dyad`` over ``[start, graph.horizon)``."""
    i, j = _normalize_dyad(dyad[0], dyad[1], graph.num_nodes)
    arr = graph.intervals.get((i, j), np.empty((0, 2)))
    arr = arr[(arr[:, 1] > start)]
    bounds = arr.ravel()
    inner = bounds[(bounds > start) & (bounds < graph.horizon)]
    events = np.concatenate([[start], inner])
    first = 1 if len(arr) and arr[0, 0] <= start else -1
    states = first * (-1) ** np.arange(len(events))
    return EventSequence((i, j), events, states, graph.horizon)


def _read_rows(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            return []
        if tuple(c.strip() for c in first) != header:
            raise GraphValidationError(
                f"{path}: expected header {','.join(header)}, got {','.join(first)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise GraphValidationError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                rows.append((int(row[0]), int(row[1]), *map(float, row[2:])))
            except ValueError as exc:
                raise GraphValidationError(f"{path}:{lineno}: {exc}") from None
        return rows


def load_graph(path, num_nodes=None, horizon=None, rescale=False):
    """Read an interval CSV (header ``i,j,t_start,t_end``).

    ``num_nodes`` and ``horizon`` default to ``max id + 1`` and the largest
    ``t_end``.  With ``rescale`` the times are mapped affinely so the
    earliest start is 0 and the latest end equals ``horizon``.
    """
    rows = _read_rows(path, INTERVAL_HEADER)
    if num_nodes is None:
        num_nodes = max([max(r[0], r[1]) for r in rows], default=1) + 1
    if rescale and rows:
        lo = min(r[2] for r in rows)
        hi = max(r[3] for r in rows)
        target = horizon if horizon is not None else hi - lo
        scale = target / (hi - lo)
        rows = [(i, j, (a - lo) * scale, (b - lo) * scale) for i, j, a, b in rows]
        horizon = target
    if horizon is None:
        horizon = max([r[3] for r in rows], default=1.0)
    return TemporalGraph.from_records(num_nodes, horizon, rows)


def save_graph(graph, path):
    """Write ``graph`` as a canonically sorted interval CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INTERVAL_HEADER)
        for i, j, a, b in graph.records():
            writer.writerow([i, j, repr(a), repr(b)])


def load_contacts(path):
    """Read a raw contact CSV (header ``i,j,t``) into ``(i, j, t)`` tuples."""
    return _read_rows(path, CONTACT_HEADER)


def aggregate_contacts(raw_events, contact_len=20.0, merge_window=120.0,
                       num_nodes=None, horizon=None):
    """Turn instantaneous contact timestamps into link intervals.

    Every timestamp ``t`` stands for a contact ``[t, t + contact_len)``.
    Consecutive timestamps of a dyad whose start times differ by at most
    ``merge_window`` are joined into one interval running from the first
    start to the last start plus ``contact_len``.
    """
    if not contact_len > 0:
        raise GraphValidationError("contact_len must be positive")
    if merge_window < contact_len:
        raise GraphValidationError("merge_window must be at least contact_len")
    raw_events = list(raw_events)
    if num_nodes is None:
        num_nodes = max([max(e[0], e[1]) for e in raw_events], default=1) + 1
    per_dyad = {}
    for i, j, t in raw_events:
        t = float(t)
        if t < 0:
            raise GraphValidationError(f"negative timestamp {t} on dyad ({i}, {j})")
        per_dyad.setdefault(_normalize_dyad(i, j, num_nodes), []).append(t)
    records = []
    for (i, j), times in per_dyad.items():
        times = sorted(set(times))
        first = last = times[0]
        for t in times[1:]:
            if t - last <= merge_window:
                last = t
            else:
                records.append((i, j, first, last + contact_len))
                first = last = t
        records.append((i, j, first, last + contact_len))
    if horizon is None:
        horizon = max([r[3] for r in records], default=1.0)
    return TemporalGraph.from_records(num_nodes, horizon, records)


@dataclass(frozen=True)
class DatasetSplit:
    """Train / held-out / future partition of a temporal graph.

    ``train_graph`` and ``heldout_graph`` cover ``[0, boundary)``;
    ``future_graph`` holds the clipped remainder over ``[boundary, horizon)``
    (absolute times).  Every drawn held-out dyad, including the ones moved to
    ``removed_dyads``, is excluded from training.
    """

    train_graph: TemporalGraph
    heldout_graph: TemporalGraph
    future_graph: TemporalGraph
    validation_dyads: np.ndarray
    test_dyads: np.ndarray
    removed_dyads: np.ndarray
    seed: int = None
    future_frac: float = 0.1
    heldout_frac: float = 0.2

    @property
    def num_nodes(self):
        return self.train_graph.num_nodes

    @property
    def boundary(self):
        return self.train_graph.horizon

    @property
    def horizon(self):
        return self.future_graph.horizon

    @property
    def heldout_dyads(self):
        return np.concatenate([self.validation_dyads, self.test_dyads,
                               self.removed_dyads]).reshape(-1, 2)

    @property
    def train_dyads(self):
        """All dyads whose likelihood terms enter training."""
        dyads = all_dyads(self.num_nodes)
        held = {tuple(d) for d in self.heldout_dyads.tolist()}
        mask = np.array([tuple(d) not in held for d in dyads.tolist()], dtype=bool)
        return dyads[mask]

    def first_period_graph(self):
        """Training plus held-out intervals, i.e. the clipped first period."""
        merged = dict(self.train_graph.intervals)
        merged.update(self.heldout_graph.intervals)
        return TemporalGraph(self.num_nodes, self.boundary, merged)

    def manifest(self):
        return {
            "num_nodes": self.num_nodes,
            "horizon": self.horizon,
            "boundary": self.boundary,
            "seed": self.seed,
            "future_frac": self.future_frac,
            "heldout_frac": self.heldout_frac,
            "validation_dyads": self.validation_dyads.tolist(),
            "test_dyads": self.test_dyads.tolist(),
            "removed_dyads": self.removed_dyads.tolist(),
        }

    def save(self, directory):
        """Write ``train.csv``, ``heldout.csv``, ``future.csv`` and ``split.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_graph(self.train_graph, directory / "train.csv")
        save_graph(self.heldout_graph, directory / "heldout.csv")
        save_graph(self.future_graph, directory / "future.csv")
        with open(directory / "split.json", "w", encoding="utf-8") as fh:
            json.dump(self.manifest(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        with open(directory / "split.json", encoding="utf-8") as fh:
            m = json.load(fh)
        n, boundary, horizon = m["num_nodes"], m["boundary"], m["horizon"]

        def pairs(key):
            return np.asarray(m[key], dtype=int).reshape(-1, 2)

        return cls(
            train_graph=load_graph(directory / "train.csv", n, boundary),
            heldout_graph=load_graph(directory / "heldout.csv", n, boundary),
            future_graph=load_graph(directory / "future.csv", n, horizon),
            validation_dyads=pairs("validation_dyads"),
            test_dyads=pairs("test_dyads"),
            removed_dyads=pairs("removed_dyads"),
            seed=m["seed"],
            future_frac=m["future_frac"],
            heldout_frac=m["heldout_frac"],
        )


def split_dataset(graph, future_frac=0.1, heldout_frac=0.2, seed=None):
    """Split ``graph`` into training, validation/test dyads and a future window.

    The last ``future_frac`` of the timeline becomes the future window (an
    interval crossing the boundary is cut in two).  ``heldout_frac`` of all
    dyads are drawn without replacement and halved into validation and test
    sets; drawn dyads with no link in the first period are set aside in
    ``removed_dyads``.
    """
    if not 0 < future_frac < 1:
        raise ValueError("future_frac must lie in (0, 1)")
    if not 0 < heldout_frac < 1:
        raise ValueError("heldout_frac must lie in (0, 1)")
    boundary = (1.0 - future_frac) * graph.horizon
    first = graph.clipped(0.0, boundary)
    future = {}
    for key, arr in graph.intervals.items():
        a = np.maximum(arr[:, 0], boundary)
        keep = arr[:, 1] > a
        if keep.any():
            future[key] = np.stack([a[keep], arr[keep, 1]], axis=1)
    future_graph = TemporalGraph(graph.num_nodes, graph.horizon, future)

    dyads = all_dyads(graph.num_nodes)
    n_held = int(round(heldout_frac * len(dyads)))
    if n_held < 2:
        raise ValueError(f"only {n_held} held-out dyads; need at least 2")
    rng = np.random.default_rng(seed)
    drawn = dyads[rng.choice(len(dyads), size=n_held, replace=False)]
    half = n_held // 2
    has_link = np.array([tuple(d) in first.intervals for d in drawn.tolist()], dtype=bool)
    groups = np.arange(n_held) < half
    validation = drawn[groups & has_link]
    test = drawn[~groups & has_link]
    removed = drawn[~has_link]
    return DatasetSplit(
        train_graph=first.subgraph(drawn, exclude=True),
        heldout_graph=first.subgraph(drawn),
        future_graph=future_graph,
        validation_dyads=validation,
        test_dyads=test,
        removed_dyads=removed,
        seed=seed,
        future_frac=future_frac,
        heldout_frac=heldout_frac,
    )
