"""scikit-learn style classifier built on Farkas (or plain ReLU) MLPs."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .data import Dataset
from .netbuild import InitScheme, build, mlp_spec
from .train import SgdConfig, fit
from .verify import audit_network


class FarkasMLPClassifier(ClassifierMixin, BaseEstimator):
    """Multilayer perceptron whose hidden layers are Farkas layers by default.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Widths of the hidden layers. Farkas layers need width >= 2.
    farkas : bool
        Use Farkas layers (True) or plain dense + ReLU layers (False).
    agg : {"sum", "mean"}
        Aggregation used to build each Farkas layer's last row.
    batchnorm : bool
        Insert batch normalization after every hidden layer.
    init : str
        Initialization scheme name (see :class:`farkasnet.netbuild.InitScheme`).
    learning_rate, momentum, weight_decay, epochs, batch_size
        Minibatch SGD settings; the learning rate decays 10x at 50% and 75%
        of the epochs.
    random_state : int
        Seed for initialization and shuffling.
    """

    def __init__(self, hidden_layer_sizes=(16, 16), farkas=True, agg="sum", batchnorm=False,
                 init="default_uniform", learning_rate=0.01, momentum=0.9, weight_decay=5e-4,
                 epochs=100, batch_size=32, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.farkas = farkas
        self.agg = agg
        self.batchnorm = batchnorm
        self.init = init
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValueError("training data holds only 1 class; need at least 2")
        seed = 0 if self.random_state is None else int(self.random_state)
        spec = mlp_spec(X.shape[1], list(self.hidden_layer_sizes), len(self.classes_),
                        farkas=self.farkas, agg=self.agg, use_batchnorm=self.batchnorm,
                        init=InitScheme(self.init), seed=seed)
        self.network_ = build(spec)
        cfg = SgdConfig(self.learning_rate, self.momentum, self.weight_decay, self.epochs,
                        batch_size=self.batch_size)
        self.report_ = fit(self.network_, Dataset(X, codes), cfg, seed, name="estimator")
        self.loss_curve_ = list(self.report_.train_loss)
        return self

    def _logits(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return self.network_.predict_logits(X)

    def decision_function(self, X):
        """Logits; for two classes the margin ``z_1 - z_0`` as a 1-d array."""
        z = self._logits(X)
        return z[:, 1] - z[:, 0] if z.shape[1] == 2 else z

    def predict_proba(self, X):
        z = self._logits(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        z = self._logits(X)
        return self.classes_[np.argmax(z, axis=1)]

    def certify(self):
        """LP audit of every hidden layer (see :func:`farkasnet.verify.audit_network`)."""
        check_is_fitted(self)
        return audit_network(self.network_)
