"""Linear-ish probes of predictor hidden state for physical properties."""

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .. import autodiff as ad
from ..autodiff import Tensor
from ..dataset import GenConfig, generate_trajectory
from ..optim import Adam
from ..rng import derive_seed, numpy_rng
from .train import to_float

PROBE_VALUES = {"drag": (0.0, 0.15, 0.4), "elasticity": (0.5, 0.75, 0.95)}
MAX_IMBALANCE = 0.10


def check_balance(labels, max_imbalance=MAX_IMBALANCE):
    """Reject label sets whose class counts differ by more than ``max_imbalance``."""
    _, counts = np.unique(np.asarray(labels), return_counts=True)
    if len(counts) and (counts.max() - counts.min()) / counts.max() > max_imbalance:
        raise ValueError(f"class imbalance too large: counts {counts.tolist()}")


def make_probe_dataset(prop, n_per_class, base=None, clip_len=10, clip_start=60, seed=0):
    """Clips of ``clip_len`` frames starting at ``clip_start``, one class per property value.

    Starting late lets the property act for a while before the clip.
    Returns ``(clips uint8 N x clip_len x H x W x 3, labels)``.
    """
    if prop not in PROBE_VALUES:
        raise ValueError(f"unknown probe property {prop!r}; expected one of {sorted(PROBE_VALUES)}")
    base = base or GenConfig.desk()
    clips, labels = [], []
    for cls, value in enumerate(PROBE_VALUES[prop]):
        cfg = dataclasses.replace(base, traj_len=clip_start + clip_len, **{prop: value})
        for i in range(n_per_class):
            frames = generate_trajectory(derive_seed(seed, "probe", prop, cls, i), cfg)
            clips.append(frames[clip_start:])
            labels.append(cls)
    return np.stack(clips), np.asarray(labels)


def extract_features(model, clips, batch_size=32):
    """Global-average-pooled final hidden state after consuming each clip."""
    clips = np.asarray(clips)
    n, t_len, h, w, _ = clips.shape
    feats = []
    for lo in range(0, n, batch_size):
        batch = to_float(clips[lo:lo + batch_size], model.dtype)
        state = model.initial_state(len(batch), h, w)
        for t in range(t_len):
            _, state = model.predict_step(batch[:, t], state)
        feats.append(model.hidden(state).data.mean(axis=(1, 2)))
    return np.concatenate(feats).astype(np.float64)


class ProbeClassifier(ClassifierMixin, BaseEstimator):
    """Two-layer classifier (features -> ``hidden`` ELU units -> classes), full-batch Adam.

    Features are standardised with training statistics before the first layer.
    """

    def __init__(self, hidden=64, epochs=300, lr=1e-2, seed=0):
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.seed = seed

    def _logits(self, X):
        x = Tensor(((X - self.mean_) / self.scale_).astype(np.float64))
        z = ad.elu(ad.linear(x, self.w1_, self.b1_))
        return ad.linear(z, self.w2_, self.b2_)

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        index = np.searchsorted(self.classes_, y)
        self.n_features_in_ = X.shape[1]
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0) + 1e-8
        rng = numpy_rng(self.seed, "probe-init")
        d, k, m = X.shape[1], self.hidden, len(self.classes_)
        b1, b2 = 1 / np.sqrt(d), 1 / np.sqrt(k)
        self.w1_ = Tensor(rng.uniform(-b1, b1, (k, d)), requires_grad=True, dtype=np.float64)
        self.b1_ = Tensor(np.zeros(k), requires_grad=True, dtype=np.float64)
        self.w2_ = Tensor(rng.uniform(-b2, b2, (m, k)), requires_grad=True, dtype=np.float64)
        self.b2_ = Tensor(np.zeros(m), requires_grad=True, dtype=np.float64)
        params = [self.w1_, self.b1_, self.w2_, self.b2_]
        opt = Adam(params, lr=self.lr)
        self.loss_curve_ = []
        for _ in range(self.epochs):
            with ad.Tape():
                logp = ad.log_softmax(self._logits(X))
                loss = ad.scale(ad.tmean(ad.gather(logp, index)), -1.0)
                ad.backward(loss)
            opt.step()
            opt.zero_grad()
            self.loss_curve_.append(loss.item())
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "w1_")
        X = check_array(X)
        with ad.no_tape():
            return np.exp(ad.log_softmax(self._logits(X)).data)

    def predict(self, X):
        check_is_fitted(self, "w1_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


def run_probe(model, prop, n_train_per_class=256, n_test_per_class=128, base=None, clip_len=10,
              clip_start=60, seed=0, control=None, probe_params=None):
    """Held-out probe accuracy for ``model`` (and optionally a ``control`` model).

    Predictor parameters are never modified: features are computed tape-free.
    """
    train_x, train_y = make_probe_dataset(prop, n_train_per_class, base, clip_len, clip_start,
                                          derive_seed(seed, "train"))
    test_x, test_y = make_probe_dataset(prop, n_test_per_class, base, clip_len, clip_start,
                                        derive_seed(seed, "test"))
    check_balance(train_y)
    check_balance(test_y)
    out = {}
    for name, m in (("model", model), ("control", control)):
        if m is None:
            continue
        clf = ProbeClassifier(**(probe_params or {}))
        clf.fit(extract_features(m, train_x), train_y)
        out[name] = float(clf.score(extract_features(m, test_x), test_y))
    return out
