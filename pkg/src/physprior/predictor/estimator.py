"""scikit-learn style wrapper around the frame predictors."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .evaluate import eval_multistep
from .io import load_predictor, save_predictor
from .models import build_model
from .train import as_video_array, to_float, train_predictor


def check_videos(X, min_len=2):
    """Validate an ``N x T x H x W x 3`` video batch (uint8 or float in [0, 1])."""
    X = as_video_array(X)
    if X.shape[1] < min_len:
        raise ValueError(f"videos need at least {min_len} frames, got {X.shape[1]}")
    if X.dtype != np.uint8:
        if not np.issubdtype(X.dtype, np.floating):
            raise ValueError(f"videos must be uint8 or floating point, got {X.dtype}")
        if not np.all(np.isfinite(X)):
            raise ValueError("videos contain non-finite values")
    return X


class FramePredictorEstimator(BaseEstimator):
    """Fit a recurrent next-frame predictor on videos.

    ``predict`` returns teacher-forced next-frame predictions aligned with the
    input (entry ``t`` predicts frame ``t + 1``); ``score`` is the negated
    self-fed 1-step MSE after a two-frame warmup.
    """

    def __init__(self, arch="spatialnet", channels=32, kernel_size=None, bptt_len=10, batch_size=8,
                 lr=1e-4, epochs=1, max_steps=None, seed=0):
        self.arch = arch
        self.channels = channels
        self.kernel_size = kernel_size
        self.bptt_len = bptt_len
        self.batch_size = batch_size
        self.lr = lr
        self.epochs = epochs
        self.max_steps = max_steps
        self.seed = seed

    def fit(self, X, y=None, log=None, val_X=None, eval_every=0):
        X = check_videos(X, self.bptt_len + 1)
        self.model_ = build_model(self.arch, self.channels, self.kernel_size, seed=self.seed)
        self.loss_curve_ = train_predictor(
            self.model_, X, bptt_len=self.bptt_len, batch_size=self.batch_size, lr=self.lr,
            epochs=self.epochs, max_steps=self.max_steps, seed=self.seed, log=log, val_frames=val_X,
            eval_every=eval_every)
        self.frame_shape_ = X.shape[2:]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_videos(X, 1)
        n, t_len, h, w, _ = X.shape
        out = np.empty((n, t_len, h, w, 3), dtype=self.model_.dtype)
        frames = to_float(X, self.model_.dtype)
        state = self.model_.initial_state(n, h, w)
        for t in range(t_len):
            out[:, t], state = self.model_.predict_step(frames[:, t], state)
        return out

    def score(self, X, y=None):
        check_is_fitted(self, "model_")
        X = check_videos(X, 3)
        return -eval_multistep(self.model_, X, warmup=2, horizons=(1,), objects_step=None)["mse"][1]

    def save(self, path):
        check_is_fitted(self, "model_")
        save_predictor(path, self.model_)

    @classmethod
    def from_checkpoint(cls, path):
        model, _ = load_predictor(path)
        est = FramePredictorEstimator(arch=model.arch, channels=model.channels, kernel_size=model.kernel_size)
        est.model_ = model
        return est


class SpatialNetPredictor(FramePredictorEstimator):
    def __init__(self, channels=32, kernel_size=3, bptt_len=10, batch_size=8, lr=1e-4, epochs=1,
                 max_steps=None, seed=0):
        super().__init__("spatialnet", channels, kernel_size, bptt_len, batch_size, lr, epochs, max_steps,
                         seed)
