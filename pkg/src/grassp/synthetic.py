"""Synthetic interval graphs.

``generate_alpha`` draws ground-truth trajectories and samples every dyad
from the sequential survival process they induce.  ``generate_beta``
re-clusters the nodes in each of a few equal time bins and links dyads
within a bin with a cluster-dependent probability.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .graph import TemporalGraph, all_dyads
from .model import DyadHazard, ModelConfig, ModelParams
from .survival import sample_path

__all__ = ["AlphaSpec", "BetaSpec", "generate_alpha", "generate_beta", "write_manifest"]

MAX_EVENTS_PER_DYAD = 100_000


@dataclass(frozen=True)
class AlphaSpec:
    """Ground-truth settings for the survival-process graph.

    Positions are ``N(0, position_spread^2)`` per coordinate and per-bin
    velocities ``N(0, (prior_scale * velocity_spread)^2)``.
    """

    num_nodes: int = 100
    dim: int = 2
    beta_nolink: float = 3.0
    beta_link: float = -0.25
    prior_scale: float = 30.0
    velocity_spread: float = 0.2
    position_spread: float = 2.5
    horizon: float = 1.0
    num_bins: int = 10

    def __post_init__(self):
        if self.num_nodes < 2 or self.dim < 1 or self.num_bins < 1:
            raise ValueError("need num_nodes >= 2, dim >= 1, num_bins >= 1")
        if not (self.horizon > 0 and self.prior_scale > 0):
            raise ValueError("horizon and prior_scale must be positive")
        if self.velocity_spread < 0 or self.position_spread < 0:
            raise ValueError("spreads must be non-negative")
        if not np.all(np.isfinite([self.beta_nolink, self.beta_link])):
            raise ValueError("biases must be finite")

    @property
    def velocity_std(self):
        return self.prior_scale * self.velocity_spread


@dataclass(frozen=True)
class BetaSpec:
    num_nodes: int = 100
    num_time_bins: int = 8
    num_clusters: int = 10
    p_intra: float = 0.8
    p_inter: float = 1e-2
    horizon: float = 800.0

    def __post_init__(self):
        if self.num_nodes < 2 or self.num_time_bins < 1:
            raise ValueError("need num_nodes >= 2 and num_time_bins >= 1")
        if not 1 <= self.num_clusters <= self.num_nodes:
            raise ValueError("num_clusters must lie in [1, num_nodes]")
        if not (0 <= self.p_intra <= 1 and 0 <= self.p_inter <= 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")


def generate_alpha(spec, seed):
    """Sample a graph from the survival process of random trajectories.

    Every dyad starts without a link.  The path of dyad ``(i, j)`` uses its
    own generator seeded by ``(seed, i, j)``, so each path is independent
    of evaluation order.

    Returns
    -------
    (TemporalGraph, ModelParams, ModelConfig)
        The graph and the generating parameters.
    """
    rng = np.random.default_rng(seed)
    n, d, b = spec.num_nodes, spec.dim, spec.num_bins
    config = ModelConfig(n, d, b, spec.horizon)
    params = ModelParams(
        x=rng.normal(0.0, spec.position_spread, size=(n, d)),
        v=rng.normal(0.0, spec.velocity_std, size=(b, n, d)),
        beta=np.array([spec.beta_nolink, spec.beta_link], dtype=float),
        sigma_b_logits=np.zeros(b),
        sigma_n_logits=np.zeros(n),
    )
    records = []
    for i, j in all_dyads(n).tolist():
        path = sample_path(DyadHazard(params, config, i, j), -1, spec.horizon,
                           np.random.default_rng([seed, i, j]),
                           max_events=MAX_EVENTS_PER_DYAD)
        records.extend((i, j, a, e) for a, e in path.to_intervals().tolist())
    graph = TemporalGraph.from_records(n, spec.horizon, records, merge_touching=False)
    return graph, params, config


def generate_beta(spec, seed):
    """Cluster-switching graph with links persisting through each bin.

    In every bin each node gets a uniformly random cluster label; a dyad
    links for the whole bin with probability ``p_intra`` inside a cluster
    and ``p_inter`` across clusters.  Links in consecutive bins merge.
    """
    rng = np.random.default_rng(seed)
    dyads = all_dyads(spec.num_nodes)
    edges = np.linspace(0.0, spec.horizon, spec.num_time_bins + 1)
    linked = np.empty((spec.num_time_bins, len(dyads)), dtype=bool)
    for k in range(spec.num_time_bins):
        labels = rng.integers(0, spec.num_clusters, size=spec.num_nodes)
        same = labels[dyads[:, 0]] == labels[dyads[:, 1]]
        prob = np.where(same, spec.p_intra, spec.p_inter)
        linked[k] = rng.random(len(dyads)) < prob
    records = []
    for col in np.flatnonzero(linked.any(axis=0)):
        i, j = dyads[col].tolist()
        on = np.concatenate([[False], linked[:, col], [False]]).astype(np.int8)
        change = np.diff(on)
        for a, e in zip(np.flatnonzero(change == 1), np.flatnonzero(change == -1)):
            records.append((i, j, float(edges[a]), float(edges[e])))
    return TemporalGraph.from_records(spec.num_nodes, spec.horizon, records,
                                      merge_touching=False)


def write_manifest(path, kind, spec, seed, graph, **extra):
    """Record the generator settings and basic graph statistics as JSON."""
    payload = {
        "kind": kind,
        "seed": seed,
        "spec": asdict(spec),
        "num_nodes": graph.num_nodes,
        "horizon": graph.horizon,
        "num_intervals": graph.num_intervals,
        "num_events": graph.num_events,
        **extra,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
