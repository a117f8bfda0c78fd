"""scikit-learn style wrapper around training, selection and scoring."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .evaluation import auc_roc, generate_samples, run_task, score_samples
from .graph import DatasetSplit, TemporalGraph
from .model import (
    ModelConfig,
    extrapolate_position,
    load_checkpoint,
    position,
    save_checkpoint,
)
from .training import DEFAULT_LAMBDA_GRID, TrainSchedule, select_prior_scale, train

__all__ = ["GraSSP"]


class GraSSP(BaseEstimator):
    """Continuous-time latent embedding of an interval graph.

    Parameters
    ----------
    dim, num_bins : int
        Latent dimension and number of equal velocity bins.
    prior_scale : float or None
        Velocity prior scale; ``None`` selects it from ``lambda_grid`` by
        validation AUC-ROC (requires fitting on a :class:`DatasetSplit`).
    lambda_grid : sequence of float
    stage1_epochs, stage2_epochs, stage3_epochs : int
    learning_rate, adam_beta1, adam_beta2, adam_eps : float
    batch_size : int
    batch_unit : {"nodes", "dyads"}
        Optimisation schedule; see :class:`grassp.training.TrainSchedule`.
    normalize_time : bool
        Fit on a clock rescaled so the training window has length 1.  The
        model is equivalent up to a reparametrisation, but hazards stay in
        a numerically comfortable range and the prior scale becomes
        unit-free.
    random_state : int
        Seed for initialisation and batch order.

    Attributes
    ----------
    params_, config_ : fitted parameters and model configuration
    time_scale_ : float
        Model time per unit of input time.
    prior_scale_ : float
    trace_ : TrainTrace
    selection_ : list of dict or None
        Validation AUC per candidate scale when selection ran.
    """

    def __init__(self, dim=2, num_bins=100, prior_scale=None, lambda_grid=DEFAULT_LAMBDA_GRID,
                 stage1_epochs=100, stage2_epochs=100, stage3_epochs=100, learning_rate=0.1,
                 adam_beta1=0.9, adam_beta2=0.999, adam_eps=1e-8, batch_size=100,
                 batch_unit="nodes", normalize_time=True, random_state=0):
        self.dim = dim
        self.num_bins = num_bins
        self.prior_scale = prior_scale
        self.lambda_grid = lambda_grid
        self.stage1_epochs = stage1_epochs
        self.stage2_epochs = stage2_epochs
        self.stage3_epochs = stage3_epochs
        self.learning_rate = learning_rate
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.batch_size = batch_size
        self.batch_unit = batch_unit
        self.normalize_time = normalize_time
        self.random_state = random_state

    def _schedule(self):
        return TrainSchedule(stage1_epochs=self.stage1_epochs, stage2_epochs=self.stage2_epochs,
                             stage3_epochs=self.stage3_epochs, learning_rate=self.learning_rate,
                             adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2,
                             adam_eps=self.adam_eps, batch_size=self.batch_size,
                             batch_unit=self.batch_unit)

    def fit(self, data, y=None):
        """Fit on a :class:`DatasetSplit` (training dyads only) or a whole graph."""
        if isinstance(data, DatasetSplit):
            graph, dyads = data.train_graph, data.train_dyads
        elif isinstance(data, TemporalGraph):
            graph, dyads = data, None
        else:
            raise TypeError("fit expects a DatasetSplit or a TemporalGraph")
        scale = 1.0 / graph.horizon if self.normalize_time else 1.0
        model_graph = graph.rescaled(scale) if self.normalize_time else graph
        schedule = self._schedule()
        self.time_scale_ = scale
        self.selection_ = None
        if self.prior_scale is None:
            if not isinstance(data, DatasetSplit):
                raise ValueError("prior_scale=None needs a DatasetSplit with validation dyads")
            rng = np.random.default_rng(self.random_state)
            samples = generate_samples(data.heldout_graph, data.validation_dyads,
                                       "completion", rng, 1e-2 * data.horizon)
            base = ModelConfig(graph.num_nodes, self.dim, self.num_bins, model_graph.horizon)
            best, table, fits = select_prior_scale(
                model_graph, base, schedule, samples, self.lambda_grid,
                seed=self.random_state, dyads=dyads, time_scale=scale)
            self.selection_ = table
            self.prior_scale_ = best
            self.config_ = ModelConfig(graph.num_nodes, self.dim, self.num_bins,
                                       model_graph.horizon, best)
            self.params_, self.trace_ = fits[best]
        else:
            self.prior_scale_ = float(self.prior_scale)
            self.config_ = ModelConfig(graph.num_nodes, self.dim, self.num_bins,
                                       model_graph.horizon, self.prior_scale_)
            self.params_, self.trace_ = train(model_graph, self.config_, schedule,
                                              np.random.default_rng(self.random_state),
                                              dyads=dyads)
        return self

    def decision_function(self, samples):
        """Link scores (negative mean squared distance) of evaluation samples."""
        check_is_fitted(self, "params_")
        return score_samples(self.params_, self.config_, list(samples), self.time_scale_)

    def predict(self, samples, threshold=None):
        """``+1``/``-1`` labels; the default threshold is the median score."""
        scores = self.decision_function(samples)
        cut = np.median(scores) if threshold is None else threshold
        return np.where(scores > cut, 1, -1)

    def score(self, samples, y=None):
        """AUC-ROC on labelled samples."""
        samples = list(samples)
        labels = np.array([s.label for s in samples]) if y is None else np.asarray(y)
        return auc_roc(self.decision_function(samples), labels)

    def transform(self, times):
        """Positions of all nodes at ``times``, shape ``(len(times), N, D)``.

        Times past the training horizon use frozen positions.
        """
        check_is_fitted(self, "params_")
        nodes = np.arange(self.config_.num_nodes)
        out = []
        for t in np.asarray(times, dtype=float).ravel():
            tm = t * self.time_scale_
            tt = np.full(len(nodes), tm)
            if tm > self.config_.horizon:
                out.append(extrapolate_position(self.params_, self.config_, nodes, tt))
            else:
                out.append(position(self.params_, self.config_, nodes, tt))
        return np.stack(out)

    def evaluate(self, split, tasks=("reconstruction", "completion", "future"),
                 seeds=(0, 1, 2, 3, 4)):
        """Run the evaluation protocols; one record per task."""
        check_is_fitted(self, "params_")
        return [run_task(split, self.params_, self.config_, task, seeds, self.time_scale_)
                for task in tasks]

    def save(self, path):
        check_is_fitted(self, "params_")
        save_checkpoint(path, self.params_, self.config_, time_scale=self.time_scale_,
                        estimator=self.get_params(), selection=self.selection_)

    @classmethod
    def load(cls, path):
        params, config, extra = load_checkpoint(path)
        kwargs = dict(extra.get("estimator", {}))
        if "lambda_grid" in kwargs:
            kwargs["lambda_grid"] = tuple(kwargs["lambda_grid"])
        est = cls(**kwargs)
        est.params_, est.config_ = params, config
        est.time_scale_ = float(extra.get("time_scale", 1.0))
        est.prior_scale_ = config.prior_scale
        est.selection_ = extra.get("selection")
        est.trace_ = None
        return est
