"""Scikit-learn estimator facade over the decentralized trainer.

CrossGradientClassifier splits the training set across simulated agents,
trains with the selected decentralized algorithm, and predicts with the
consensus (agent-mean) model.  It follows the usual fit/predict
contract, so it composes with pipelines, grid search and clone().
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import data as datamod
from .neural import ModelSpec, predict_logits
from .optim import ALGORITHMS, Hyper
from .seeding import subseed
from .simulate import _TAG_PARTITION, run_training
from .topology import TOPOLOGIES, build_topology


class CrossGradientClassifier(ClassifierMixin, BaseEstimator):
    """Decentralized MLP classifier trained by cross-gradient aggregation.

    Parameters
    ----------
    algorithm : {"cga", "compcga", "dpmsgd"}
        Training algorithm run by the simulated agents.
    topology : {"full", "ring", "bipartite"}
        Communication graph between agents.
    n_agents : int
        Number of simulated agents the data is split across.
    partition_mode : {"iid", "by_class"}
        How training samples are assigned to agents.
    hidden_layer_sizes : tuple of int
        Hidden layer widths of the shared MLP.
    epochs : int
        Passes over the smallest agent subset.
    batch_size, alpha0, beta, decay : training hyperparameters.
    qp_tol, qp_max_iter : projection solver options (cga/compcga).
    seed : int
        Master seed; fixes init, partition and batch order.
    n_threads : int
        Worker threads per round; does not affect results.

    Attributes
    ----------
    classes_ : ndarray of the sorted unique labels seen in fit.
    coef_ : ndarray, flat consensus parameter vector after training.
    history_ : list of per-round metrics records.
    """

    def __init__(self, algorithm="cga", topology="full", n_agents=5,
                 partition_mode="by_class", hidden_layer_sizes=(64, 32),
                 epochs=10, batch_size=32, alpha0=0.01, beta=0.98,
                 decay=0.981, qp_tol=1e-8, qp_max_iter=100_000, seed=0,
                 n_threads=1):
        self.algorithm = algorithm
        self.topology = topology
        self.n_agents = n_agents
        self.partition_mode = partition_mode
        self.hidden_layer_sizes = hidden_layer_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.alpha0 = alpha0
        self.beta = beta
        self.decay = decay
        self.qp_tol = qp_tol
        self.qp_max_iter = qp_max_iter
        self.seed = seed
        self.n_threads = n_threads

    def _scale(self, X):
        span = self.feature_span_.copy()
        span[span == 0.0] = 1.0
        return np.clip((X - self.feature_min_) / span, 0.0, 1.0)

    def fit(self, X, y):
        """Train the consensus model on (X, y)."""
        X, y = check_X_y(X, y, dtype=np.float64)
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}, got {self.topology!r}")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes in y")
        self.n_features_in_ = X.shape[1]
        self.feature_min_ = X.min(axis=0)
        self.feature_span_ = X.max(axis=0) - self.feature_min_

        train = datamod.Dataset(inputs=self._scale(X), labels=encoded.astype(np.int64),
                                n_classes=len(self.classes_))
        mixing = build_topology(self.topology, self.n_agents)
        part = datamod.partition(train, self.n_agents, self.partition_mode,
                                 subseed(self.seed, _TAG_PARTITION))
        hyper = Hyper(alpha0=self.alpha0, beta=self.beta, decay=self.decay,
                      batch_size=self.batch_size, qp_tol=self.qp_tol,
                      qp_max_iter=self.qp_max_iter)
        model = ModelSpec((self.n_features_in_,) + tuple(self.hidden_layer_sizes)
                          + (len(self.classes_),))
        records, states = run_training(
            model, self.algorithm, mixing, train, part, hyper,
            self.epochs, self.seed, n_threads=self.n_threads)

        self.model_spec_ = model
        self.coef_ = np.mean(np.stack([st.x for st in states]), axis=0)
        self.history_ = records
        self.n_rounds_ = records[-1].round if records else 0
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return predict_logits(self.model_spec_, self.coef_, self._scale(X))

    def predict_proba(self, X):
        """Softmax class probabilities of the consensus model."""
        logits = self.decision_function(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        expo = np.exp(shifted)
        return expo / expo.sum(axis=1, keepdims=True)

    def predict(self, X):
        """Most likely class label for each row of X."""
        winners = self.decision_function(X).argmax(axis=1)
        return self.classes_[winners]
