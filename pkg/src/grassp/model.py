"""Piecewise-linear latent distance model with survival-process likelihood.

Node ``i`` moves through ``R^D`` along

    r_i(t) = x_i + sum_{b < k} w_b v_i^(b) + (t - t_k) v_i^(k),   t in bin k,

with ``B`` equal bins of width ``w_b = T / B`` starting at ``t_k``.  A dyad in
state ``s`` flips with hazard ``exp(beta(s) + s * ||r_i(t) - r_j(t)||^2)``.

Within one bin the squared distance is a quadratic in time, so the hazard
integral reduces to Gaussian-type integrals.  They are evaluated through
Dawson's function (``s = +1``) and ``erf``/``erfcx`` (``s = -1``) with all
exponential factors folded into hazard values at the piece endpoints, which
keeps every intermediate finite whenever the hazard itself is.  Pieces on
which the distance is nearly constant (``||dv|| * length < 0.25``) are
integrated with subdivided Gauss-Legendre quadrature instead, where the
closed forms would cancel catastrophically.

Likelihood, prior and gradient evaluation run on :class:`Terms`, a flat,
vectorised compilation of all event points and bin-aligned integration
pieces of a set of dyads.
"""

import json
import math
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np
from scipy.special import log_softmax, softmax

from . import special
from .graph import all_dyads, build_event_sequence

__all__ = [
    "ModelConfig",
    "ModelParams",
    "Terms",
    "DistanceBounds",
    "compile_terms",
    "anchor_positions",
    "position",
    "extrapolate_position",
    "hazard_rate",
    "integrate_hazard",
    "log_likelihood",
    "log_prior",
    "objective_and_gradient",
    "lemma1_bounds",
    "mean_squared_distance",
    "DyadHazard",
    "save_checkpoint",
    "load_checkpoint",
    "write_snapshots",
    "read_snapshots",
]

CHECKPOINT_VERSION = 1
DEGENERATE_SPEED = 1e-9
CLOSED_FORM_MIN_SPREAD = 0.25
_QUAD_MAX_VARIATION = 1.0
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)
_SQRT_PI = math.sqrt(math.pi)


def _sidx(s):
    """Index into ``beta`` for state ``s``: ``-1 -> 0``, ``+1 -> 1``."""
    return (np.asarray(s) + 1) // 2


@dataclass(frozen=True)
class ModelConfig:
    num_nodes: int
    dim: int = 2
    num_bins: int = 100
    horizon: float = 1.0
    prior_scale: float = 1.0

    def __post_init__(self):
        if self.num_nodes < 1 or self.dim < 1 or self.num_bins < 1:
            raise ValueError("need num_nodes >= 1, dim >= 1 and num_bins >= 1")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        if not self.prior_scale > 0:
            raise ValueError("prior_scale must be positive")

    @property
    def bin_width(self):
        return self.horizon / self.num_bins

    @property
    def bin_edges(self):
        edges = np.linspace(0.0, self.horizon, self.num_bins + 1)
        edges[-1] = self.horizon
        return edges

    def bin_of(self, t):
        """Bin index; a boundary belongs to the later bin, ``T`` to the last."""
        k = np.searchsorted(self.bin_edges, t, side="right") - 1
        return np.clip(k, 0, self.num_bins - 1)


@dataclass
class ModelParams:
    """Trainable parameters.

    ``beta`` holds ``(beta(-1), beta(+1))``.  The prior's bin and node
    weights are ``softmax(sigma_b_logits)`` and ``softmax(sigma_n_logits)``.
    """

    x: np.ndarray
    v: np.ndarray
    beta: np.ndarray
    sigma_b_logits: np.ndarray
    sigma_n_logits: np.ndarray

    @classmethod
    def zeros(cls, config):
        n, d, b = config.num_nodes, config.dim, config.num_bins
        return cls(np.zeros((n, d)), np.zeros((b, n, d)), np.zeros(2),
                   np.zeros(b), np.zeros(n))

    @staticmethod
    def names():
        return [f.name for f in fields(ModelParams)]

    def beta_of(self, s):
        return float(self.beta[_sidx(s)])

    @property
    def sigma_b(self):
        return softmax(self.sigma_b_logits)

    @property
    def sigma_n(self):
        return softmax(self.sigma_n_logits)

    def copy(self):
        return ModelParams(**{k: np.array(getattr(self, k), dtype=float)
                              for k in self.names()})

    def check(self, config):
        n, d, b = config.num_nodes, config.dim, config.num_bins
        shapes = {"x": (n, d), "v": (b, n, d), "beta": (2,),
                  "sigma_b_logits": (b,), "sigma_n_logits": (n,)}
        for name, shape in shapes.items():
            if np.shape(getattr(self, name)) != shape:
                raise ValueError(f"{name} has shape {np.shape(getattr(self, name))}, "
                                 f"expected {shape}")
        return self

    def flat(self):
        return np.concatenate([np.ravel(getattr(self, k)) for k in self.names()])

    def with_flat(self, vec):
        out, pos = self.copy(), 0
        for k in self.names():
            arr = getattr(out, k)
            arr[...] = np.reshape(vec[pos:pos + arr.size], arr.shape)
            pos += arr.size
        return out


def anchor_positions(params, config):
    """Positions at the bin edges, shape ``(B + 1, N, D)``."""
    widths = np.diff(config.bin_edges)
    steps = widths[:, None, None] * params.v
    return np.concatenate([params.x[None], params.x[None] + np.cumsum(steps, axis=0)])


def _check_time(config, t):
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > config.horizon)) or not np.all(np.isfinite(t)):
        raise ValueError(f"time outside [0, {config.horizon}]")
    return t


def position(params, config, i, t, anchors=None):
    """Latent position of node(s) ``i`` at time(s) ``t`` in ``[0, T]``."""
    t = _check_time(config, t)
    anchors = anchor_positions(params, config) if anchors is None else anchors
    k = config.bin_of(t)
    offset = (t - config.bin_edges[k])[..., None]
    return anchors[k, i] + offset * params.v[k, i]


def extrapolate_position(params, config, i, t, linear=False):
    """Position beyond the horizon: frozen at ``r_i(T)`` unless ``linear``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= config.horizon):
        raise ValueError("extrapolate_position needs t > horizon; use position()")
    r_end = position(params, config, i, np.full(t.shape, config.horizon))
    if linear:
        r_end = r_end + (t - config.horizon)[..., None] * params.v[-1, i]
    return r_end


def hazard_rate(params, config, i, j, s, t):
    """``exp(beta(s) + s * ||r_i(t) - r_j(t)||^2)``."""
    if i == j:
        raise ValueError("hazard needs two distinct nodes")
    diff = position(params, config, i, t) - position(params, config, j, t)
    d2 = float(np.sum(diff * diff))
    expo = params.beta_of(s) + s * d2
    rate = math.exp(expo) if expo < 709.0 else math.inf
    if not math.isfinite(rate):
        raise FloatingPointError(
            f"hazard overflow: beta={params.beta_of(s)}, s={s}, squared distance={d2}")
    return rate


# ---------------------------------------------------------------------------
# vectorised piece integrals


def _gl_moments(dx, dv, length, bs, s, need_moments):
    """Moments ``int_0^L u^n exp(bs + s||dx + dv u||^2) du`` by quadrature."""
    g = np.einsum("nd,nd->n", dx, dv)
    w2 = np.einsum("nd,nd->n", dv, dv)
    d2a = np.einsum("nd,nd->n", dx, dx)
    variation = np.abs(2.0 * g * length) + w2 * length ** 2
    nsub = np.maximum(1, np.ceil(variation / _QUAD_MAX_VARIATION)).astype(int)
    n = len(length)
    if np.all(nsub == 1):
        owner = None
        u = length[:, None] * (0.5 * (_GL_NODES + 1.0))[None]
        wt = (0.5 * length)[:, None] * _GL_WEIGHTS[None]
    else:
        owner = np.repeat(np.arange(n), nsub)
        start = np.cumsum(nsub) - nsub
        sub = np.arange(len(owner)) - start[owner]
        h = (length / nsub)[owner]
        u = (sub[:, None] + 0.5 * (_GL_NODES[None] + 1.0)) * h[:, None]
        wt = 0.5 * h[:, None] * _GL_WEIGHTS[None]
        bs, s, d2a, g, w2 = bs[owner], s[owner], d2a[owner], g[owner], w2[owner]
    # exponent = bs + s (d2a + 2 g u + w2 u^2)
    expo = (s * w2)[:, None] * u
    expo += (2.0 * s * g)[:, None]
    expo *= u
    expo += (bs + s * d2a)[:, None]
    with np.errstate(over="ignore"):
        f = np.exp(expo, out=expo)
    f *= wt

    def total(vals):
        rows = vals.sum(axis=1)
        return rows if owner is None else np.bincount(owner, rows, minlength=n)

    i0 = total(f)
    if not need_moments:
        return i0, None, None
    fu = f * u
    return i0, total(fu), total(fu * u)


def _closed_moments(dx, dv, length, bs, s, need_moments):
    """Moments by the Dawson / erf / erfcx closed forms (``||dv|| L`` not small)."""
    g = np.einsum("nd,nd->n", dx, dv)
    w2 = np.einsum("nd,nd->n", dv, dv)
    w = np.sqrt(w2)
    dxb = dx + dv * length[:, None]
    d2a = np.einsum("nd,nd->n", dx, dx)
    d2b = np.einsum("nd,nd->n", dxb, dxb)
    ta = g / w
    tb = ta + w * length
    with np.errstate(over="ignore"):
        la = np.exp(bs + s * d2a)
        lb = np.exp(bs + s * d2b)
    i0 = np.empty_like(length)

    pos = s > 0
    if pos.any():
        i0[pos] = (lb[pos] * special.dawson(tb[pos])
                   - la[pos] * special.dawson(ta[pos])) / w[pos]
    neg_right = (~pos) & (ta >= 0)
    if neg_right.any():
        m = neg_right
        i0[m] = 0.5 * _SQRT_PI / w[m] * (la[m] * special.erfcx(ta[m])
                                         - lb[m] * special.erfcx(tb[m]))
    neg_left = (~pos) & (tb <= 0)
    if neg_left.any():
        m = neg_left
        i0[m] = 0.5 * _SQRT_PI / w[m] * (lb[m] * special.erfcx(-tb[m])
                                         - la[m] * special.erfcx(-ta[m]))
    neg_mid = (~pos) & (ta < 0) & (tb > 0)
    if neg_mid.any():
        m = neg_mid
        perp = dx[m] - (g[m] / w2[m])[:, None] * dv[m]
        c = bs[m] - np.einsum("nd,nd->n", perp, perp)
        i0[m] = 0.5 * _SQRT_PI / w[m] * np.exp(c) * (
            special.erf(tb[m]) - special.erf(ta[m]))
    if not need_moments:
        return i0, None, None
    # d/du lambda = 2 s (g + w2 u) lambda  and  d/du (u lambda) = lambda + u d/du lambda
    i1 = ((lb - la) / (2.0 * s) - g * i0) / w2
    i2 = ((length * lb - i0) / (2.0 * s) - g * i1) / w2
    return i0, i1, i2


def _piece_moments(dx, dv, length, bs, s, need_moments=False):
    w2 = np.einsum("nd,nd->n", dv, dv)
    closed = (w2 > DEGENERATE_SPEED ** 2) & (np.sqrt(w2) * length >= CLOSED_FORM_MIN_SPREAD)
    n = len(length)
    i0 = np.empty(n)
    i1 = np.empty(n) if need_moments else None
    i2 = np.empty(n) if need_moments else None
    for mask, fn in ((closed, _closed_moments), (~closed, _gl_moments)):
        if mask.any():
            r0, r1, r2 = fn(dx[mask], dv[mask], length[mask], bs[mask], s[mask],
                            need_moments)
            i0[mask] = r0
            if need_moments:
                i1[mask], i2[mask] = r1, r2
    return i0, i1, i2


# ---------------------------------------------------------------------------
# compiled likelihood terms


@dataclass
class Terms:
    """Event points and bin-aligned integration pieces of a set of dyads.

    Piece ``p`` integrates state ``ps[p]`` of dyad ``(pi[p], pj[p])`` over
    ``[pa[p], pb[p]]`` inside bin ``pk[p]``; event ``e`` adds
    ``log lambda(es[e], et[e])``.  ``powner``/``eowner`` index into ``dyads``.
    """

    dyads: np.ndarray
    pi: np.ndarray
    pj: np.ndarray
    pk: np.ndarray
    pa: np.ndarray
    pb: np.ndarray
    ps: np.ndarray
    powner: np.ndarray
    ei: np.ndarray
    ej: np.ndarray
    ek: np.ndarray
    et: np.ndarray
    es: np.ndarray
    eowner: np.ndarray

    @property
    def num_dyads(self):
        return len(self.dyads)

    def select(self, dyad_slots):
        """Sub-terms for the given positions in ``dyads`` (re-indexed)."""
        keep = np.zeros(self.num_dyads, dtype=bool)
        keep[dyad_slots] = True
        remap = np.cumsum(keep) - 1
        pm, em = keep[self.powner], keep[self.eowner]
        return Terms(
            self.dyads[keep],
            self.pi[pm], self.pj[pm], self.pk[pm], self.pa[pm], self.pb[pm],
            self.ps[pm], remap[self.powner[pm]],
            self.ei[em], self.ej[em], self.ek[em], self.et[em], self.es[em],
            remap[self.eowner[em]],
        )


def segments_to_terms(config, dyads, seg_owner, seg_a, seg_b, seg_s, ev_owner, ev_t, ev_s):
    """Split segments at bin edges and attach bin indices to events."""
    edges = config.bin_edges
    nb = config.num_bins
    k0 = np.clip(np.searchsorted(edges, seg_a, side="right") - 1, 0, nb - 1)
    k1 = np.clip(np.searchsorted(edges, seg_b, side="left") - 1, 0, nb - 1)
    k1 = np.maximum(k1, k0)
    count = k1 - k0 + 1
    rep = np.repeat(np.arange(len(seg_a)), count)
    k = k0[rep] + (np.arange(len(rep)) - (np.cumsum(count) - count)[rep])
    pa = np.maximum(seg_a[rep], edges[k])
    pb = np.minimum(seg_b[rep], edges[k + 1])
    pb[k == nb - 1] = np.minimum(seg_b[rep][k == nb - 1], config.horizon)
    keep = pb > pa
    rep, k, pa, pb = rep[keep], k[keep], pa[keep], pb[keep]
    owner = seg_owner[rep]
    ev_owner = np.asarray(ev_owner, dtype=int)
    return Terms(
        dyads=dyads,
        pi=dyads[owner, 0], pj=dyads[owner, 1], pk=k, pa=pa, pb=pb,
        ps=seg_s[rep].astype(np.int64), powner=owner,
        ei=dyads[ev_owner, 0], ej=dyads[ev_owner, 1], ek=config.bin_of(ev_t),
        et=np.asarray(ev_t, dtype=float), es=np.asarray(ev_s, dtype=np.int64),
        eowner=ev_owner,
    )


def compile_terms(graph, config, dyads=None):
    """Compile the likelihood terms of ``graph`` for ``dyads`` (default: all)."""
    if graph.num_nodes != config.num_nodes:
        raise ValueError("graph and config disagree on the number of nodes")
    if not math.isclose(graph.horizon, config.horizon, rel_tol=1e-12):
        raise ValueError("graph and config disagree on the horizon")
    dyads = all_dyads(graph.num_nodes) if dyads is None else np.asarray(dyads, int).reshape(-1, 2)
    seg_owner, seg_a, seg_b, seg_s = [], [], [], []
    ev_owner, ev_t, ev_s = [], [], []
    for slot, (i, j) in enumerate(dyads.tolist()):
        seq = build_event_sequence(graph, (i, j))
        ends = np.append(seq.events[1:], config.horizon)
        seg_owner.append(np.full(len(seq.events), slot))
        seg_a.append(seq.events)
        seg_b.append(ends)
        seg_s.append(seq.states)
        ev_owner.append(np.full(len(seq.events) - 1, slot))
        ev_t.append(seq.events[1:])
        ev_s.append(seq.states[:-1])
    cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.empty(0, dt))
    return segments_to_terms(
        config, dyads, cat(seg_owner, int), cat(seg_a, float), cat(seg_b, float),
        cat(seg_s, int), cat(ev_owner, int), cat(ev_t, float), cat(ev_s, int))


def _offsets(config, k, t):
    return t - config.bin_edges[k]


def _scatter(index, values, size):
    """Sum rows of ``values`` into ``size`` buckets given by ``index``."""
    out = np.empty((size, values.shape[1]))
    for d in range(values.shape[1]):
        out[:, d] = np.bincount(index, values[:, d], minlength=size)
    return out


def _evaluate(params, config, terms, need_grad):
    """Log-likelihood of ``terms`` and, optionally, its gradient."""
    anchors = anchor_positions(params, config)
    v, beta = params.v, params.beta
    n, b = config.num_nodes, config.num_bins

    oe = _offsets(config, terms.ek, terms.et)[:, None]
    dxe = (anchors[terms.ek, terms.ei] + oe * v[terms.ek, terms.ei]
           - anchors[terms.ek, terms.ej] - oe * v[terms.ek, terms.ej])
    d2e = np.einsum("nd,nd->n", dxe, dxe)
    esi = _sidx(terms.es)
    loglam = beta[esi] + terms.es * d2e

    op = _offsets(config, terms.pk, terms.pa)[:, None]
    dx = (anchors[terms.pk, terms.pi] + op * v[terms.pk, terms.pi]
          - anchors[terms.pk, terms.pj] - op * v[terms.pk, terms.pj])
    dv = v[terms.pk, terms.pi] - v[terms.pk, terms.pj]
    length = terms.pb - terms.pa
    psi = _sidx(terms.ps)
    i0, i1, i2 = _piece_moments(dx, dv, length, beta[psi], terms.ps.astype(float),
                                need_moments=need_grad)
    if not np.all(np.isfinite(i0)):
        bad = int(np.flatnonzero(~np.isfinite(i0))[0])
        dyad = tuple(terms.dyads[terms.powner[bad]].tolist())
        raise FloatingPointError(
            f"non-finite hazard integral on dyad {dyad}, bin {terms.pk[bad]}, "
            f"state {terms.ps[bad]}, [{terms.pa[bad]}, {terms.pb[bad]}]")
    ll = float(np.sum(loglam) - np.sum(i0))
    if not need_grad:
        return ll, None

    grad = ModelParams.zeros(config)
    grad.beta += np.bincount(esi, minlength=2) - np.bincount(psi, i0, minlength=2)

    # d ll / d dx at events and pieces; d ll / d dv on pieces
    sp = terms.ps[:, None].astype(float)
    g_e = 2.0 * terms.es[:, None] * dxe
    g_dx = -2.0 * sp * (dx * i0[:, None] + dv * i1[:, None])
    g_dv = -2.0 * sp * (dx * i1[:, None] + dv * i2[:, None])

    size = b * n
    idx_ei, idx_ej = terms.ek * n + terms.ei, terms.ek * n + terms.ej
    idx_pi, idx_pj = terms.pk * n + terms.pi, terms.pk * n + terms.pj
    idx = np.concatenate([idx_ei, idx_ej, idx_pi, idx_pj])
    g_anchor = _scatter(idx, np.concatenate([g_e, -g_e, g_dx, -g_dx]), size)
    g_vel = _scatter(idx, np.concatenate([oe * g_e, -oe * g_e,
                                          op * g_dx + g_dv, -(op * g_dx + g_dv)]), size)
    g_anchor = g_anchor.reshape(b, n, -1)
    g_vel = g_vel.reshape(b, n, -1)
    # anchors[k] = x + sum_{m < k} width_m v_m
    widths = np.diff(config.bin_edges)
    grad.x = g_anchor.sum(axis=0)
    later = np.cumsum(g_anchor[::-1], axis=0)[::-1]
    tail = np.concatenate([later[1:], np.zeros_like(later[:1])])
    grad.v = g_vel + widths[:, None, None] * tail
    return ll, grad


def log_likelihood(params, config, graph_or_terms, dyads=None):
    """Survival-process log-likelihood summed over dyads."""
    terms = graph_or_terms if isinstance(graph_or_terms, Terms) else \
        compile_terms(graph_or_terms, config, dyads)
    return _evaluate(params, config, terms, need_grad=False)[0]


def _log_variances(params, config):
    log_sb = log_softmax(params.sigma_b_logits)
    log_sn = log_softmax(params.sigma_n_logits)
    if not (np.all(np.isfinite(log_sb)) and np.all(np.isfinite(log_sn))):
        raise FloatingPointError("prior weight underflowed to zero")
    if np.exp(log_sb).min() == 0 or np.exp(log_sn).min() == 0:
        raise FloatingPointError("prior weight underflowed to zero")
    return 2.0 * math.log(config.prior_scale) + log_sb[:, None] + log_sn[None, :]


def log_prior(params, config, need_grad=False):
    """Gaussian log-density of the velocities under the Kronecker prior.

    ``vec(v) ~ N(0, scale^2 diag(sigma_B (x) sigma_N (x) 1_D))``, normalising
    constant included.  With ``need_grad`` also returns the gradient as a
    :class:`ModelParams` (zero for ``x`` and ``beta``).
    """
    log_var = _log_variances(params, config)
    var = np.exp(log_var)
    quad = np.sum(params.v ** 2, axis=2)
    dim = config.dim
    lp = -0.5 * float(np.sum(quad / var) + dim * np.sum(np.log(2.0 * math.pi) + log_var))
    if not need_grad:
        return lp
    grad = ModelParams.zeros(config)
    grad.v = -params.v / var[:, :, None]
    d_logvar = 0.5 * quad / var - 0.5 * dim
    for name, axis in (("sigma_b_logits", 1), ("sigma_n_logits", 0)):
        a = d_logvar.sum(axis=axis)
        sig = softmax(getattr(params, name))
        setattr(grad, name, a - sig * a.sum())
    return lp, grad


def objective_and_gradient(params, config, graph_or_terms, prior_weight=1.0):
    """Negative penalised log-likelihood and its exact gradient.

    Returns ``(value, grad)`` where ``value = -(ll + prior_weight * lp)`` and
    ``grad`` is a :class:`ModelParams` holding the partial derivatives.
    """
    terms = graph_or_terms if isinstance(graph_or_terms, Terms) else \
        compile_terms(graph_or_terms, config)
    ll, g_ll = _evaluate(params, config, terms, need_grad=True)
    lp, g_lp = log_prior(params, config, need_grad=True)
    grad = ModelParams(*[-(getattr(g_ll, k) + prior_weight * getattr(g_lp, k))
                         for k in ModelParams.names()])
    return -(ll + prior_weight * lp), grad


# ---------------------------------------------------------------------------
# single-dyad helpers


def _dyad_segment_pieces(config, a, b):
    edges = config.bin_edges
    k0 = int(config.bin_of(a))
    k1 = max(k0, min(int(np.searchsorted(edges, b, side="left")) - 1, config.num_bins - 1))
    ks = np.arange(k0, k1 + 1)
    pa = np.maximum(a, edges[ks])
    pb = np.minimum(b, edges[ks + 1])
    keep = pb > pa
    return ks[keep], pa[keep], pb[keep]


def integrate_hazard(params, config, i, j, s, a, b, anchors=None):
    """Cumulative hazard ``int_a^b lambda_ij(s, t) dt`` in closed form."""
    if not 0 <= a <= b <= config.horizon:
        raise ValueError(f"need 0 <= a <= b <= {config.horizon}, got [{a}, {b}]")
    if i == j:
        raise ValueError("hazard needs two distinct nodes")
    if a == b:
        return 0.0
    anchors = anchor_positions(params, config) if anchors is None else anchors
    ks, pa, pb = _dyad_segment_pieces(config, a, b)
    off = (pa - config.bin_edges[ks])[:, None]
    dx = anchors[ks, i] + off * params.v[ks, i] - anchors[ks, j] - off * params.v[ks, j]
    dv = params.v[ks, i] - params.v[ks, j]
    n = len(ks)
    i0, _, _ = _piece_moments(dx, dv, pb - pa, np.full(n, params.beta_of(s)),
                              np.full(n, float(s)))
    if not np.all(np.isfinite(i0)):
        raise FloatingPointError(f"non-finite hazard integral on dyad ({i}, {j}), "
                                 f"state {s}, [{a}, {b}]")
    return float(np.sum(i0))


class DyadHazard:
    """The model's hazard for one dyad, usable by the survival-process engine.

    Per-bin geometry and the cumulative hazard at every bin edge are cached,
    so one call integrates at most two partial pieces.
    """

    def __init__(self, params, config, i, j):
        if i == j:
            raise ValueError("hazard needs two distinct nodes")
        self.params, self.config, self.i, self.j = params, config, i, j
        anchors = anchor_positions(params, config)
        self._edges = config.bin_edges
        self._dx = anchors[:-1, i] - anchors[:-1, j]
        self._dv = params.v[:, i] - params.v[:, j]
        self._cum = {}

    def _edge_cumulative(self, s):
        if s not in self._cum:
            b = self.config.num_bins
            i0, _, _ = _piece_moments(self._dx, self._dv, np.diff(self._edges),
                                      np.full(b, self.params.beta_of(s)), np.full(b, float(s)))
            self._cum[s] = np.concatenate([[0.0], np.cumsum(i0)])
        return self._cum[s]

    def _partial(self, s, k, a, b):
        """Integral over ``[a, b]`` inside bin ``k``."""
        if b <= a:
            return 0.0
        off = a - self._edges[k]
        dx = (self._dx[k] + off * self._dv[k])[None]
        i0, _, _ = _piece_moments(dx, self._dv[k][None], np.array([b - a]),
                                  np.array([self.params.beta_of(s)]), np.array([float(s)]))
        return float(i0[0])

    def evaluate(self, s, t):
        return hazard_rate(self.params, self.config, self.i, self.j, s, t)

    def integrate(self, s, a, b):
        if not 0 <= a <= b <= self.config.horizon:
            raise ValueError(f"need 0 <= a <= b <= {self.config.horizon}, got [{a}, {b}]")
        last = self.config.num_bins - 1
        ka = min(int(np.searchsorted(self._edges, a, side="right")) - 1, last)
        kb = min(int(np.searchsorted(self._edges, b, side="right")) - 1, last)
        if b == self._edges[kb] and kb > ka:
            kb -= 1
        if ka == kb:
            total = self._partial(s, ka, a, b)
        else:
            cum = self._edge_cumulative(s)
            total = (self._partial(s, ka, a, self._edges[ka + 1])
                     + (cum[kb] - cum[ka + 1])
                     + self._partial(s, kb, self._edges[kb], b))
        if not math.isfinite(total):
            raise FloatingPointError(f"non-finite hazard integral on dyad ({self.i}, {self.j}), "
                                     f"state {s}, [{a}, {b}]")
        return total


def mean_squared_distance(params, config, i, j, a, b, anchors=None):
    """Exact time-average of ``||r_i - r_j||^2`` over ``[a, b]``, ``a < b``.

    Times beyond the horizon use frozen positions.
    """
    if not b > a:
        raise ValueError("need a < b")
    anchors = anchor_positions(params, config) if anchors is None else anchors
    total = 0.0
    hi = min(b, config.horizon)
    if hi > a:
        ks, pa, pb = _dyad_segment_pieces(config, a, hi)
        off = (pa - config.bin_edges[ks])[:, None]
        dx = anchors[ks, i] + off * params.v[ks, i] - anchors[ks, j] - off * params.v[ks, j]
        dv = params.v[ks, i] - params.v[ks, j]
        length = pb - pa
        total += float(np.sum(_quadratic_integral(dx, dv, length)))
    if b > config.horizon:
        lo = max(a, config.horizon)
        d = anchors[-1, i] - anchors[-1, j]
        total += float(d @ d) * (b - lo)
    return total / (b - a)


def _quadratic_integral(dx, dv, length):
    """``int_0^L ||dx + dv u||^2 du`` row-wise."""
    return (length * np.einsum("nd,nd->n", dx, dx)
            + length ** 2 * np.einsum("nd,nd->n", dx, dv)
            + length ** 3 / 3.0 * np.einsum("nd,nd->n", dv, dv))


class DistanceBounds(NamedTuple):
    lower: float
    mean_sq_dist: float
    upper: float

    def holds(self, tol=1e-9):
        return self.lower - tol <= self.mean_sq_dist <= self.upper + tol


def lemma1_bounds(params, config, i, j, segment):
    """Survival-based bounds on the mean squared distance over a segment.

    ``segment = (start, end, state)``.  With ``L = end - start`` and
    ``S_s = exp(-int lambda(s, .))`` over the segment,
    ``b(s) = -2 s log L - s log S_s - s beta(s)`` and the returned triple is
    ``(b(-1), mean squared distance, b(+1))``.  ``b(s)`` uses the survival
    function of state ``s``, so the state of the segment itself does not enter.
    The ordering is guaranteed for segments no longer than ``e`` time units.
    """
    start, end, _ = segment
    if not 0 <= start < end <= config.horizon:
        raise ValueError("segment must satisfy 0 <= start < end <= horizon")
    length = end - start
    anchors = anchor_positions(params, config)
    bound = {}
    for s in (-1, 1):
        cum = integrate_hazard(params, config, i, j, s, start, end, anchors=anchors)
        # log S = -cum
        bound[s] = -2 * s * math.log(length) + s * cum - s * params.beta_of(s)
    mean = mean_squared_distance(params, config, i, j, start, end, anchors=anchors)
    return DistanceBounds(bound[-1], mean, bound[1])


# ---------------------------------------------------------------------------
# persistence


def save_checkpoint(path, params, config, **extra):
    """Write a JSON checkpoint; floats round-trip exactly."""
    record = {
        "version": CHECKPOINT_VERSION,
        "config": {f.name: getattr(config, f.name) for f in fields(ModelConfig)},
        "params": {k: np.asarray(getattr(params, k)).tolist() for k in ModelParams.names()},
        "extra": extra,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh)
        fh.write("\n")


def load_checkpoint(path):
    """Read a checkpoint; returns ``(params, config, extra)``."""
    with open(path, encoding="utf-8") as fh:
        record = json.load(fh)
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {record.get('version')!r}")
    config = ModelConfig(**record["config"])
    params = ModelParams(**{k: np.asarray(record["params"][k], dtype=float)
                            for k in ModelParams.names()}).check(config)
    return params, config, record.get("extra", {})


def write_snapshots(path, params, config, times, time_scale=1.0):
    """Write positions of all nodes at ``times`` as ``node,t,dim_0,...`` CSV.

    ``times`` are in the caller's units; the model clock is ``t * time_scale``.
    Times past the horizon use frozen positions.
    """
    header = ["node", "t"] + [f"dim_{d}" for d in range(config.dim)]
    nodes = np.arange(config.num_nodes)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for t in times:
            tm = float(t) * time_scale
            if tm > config.horizon:
                pos = extrapolate_position(params, config, nodes, np.full(len(nodes), tm))
            else:
                pos = position(params, config, nodes, np.full(len(nodes), tm))
            for node, row in zip(nodes.tolist(), pos.tolist()):
                fh.write(",".join([str(node), repr(float(t))] + [repr(c) for c in row]) + "\n")


def read_snapshots(path):
    """Read a snapshot CSV into ``(nodes, times, positions)`` arrays."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["node", "t"] or not all(
                h == f"dim_{d}" for d, h in enumerate(header[2:])):
            raise ValueError(f"{path}: not a snapshot file")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        return np.empty(0, int), np.empty(0), np.empty((0, len(header) - 2))
    return data[:, 0].astype(int), data[:, 1], data[:, 2:]
