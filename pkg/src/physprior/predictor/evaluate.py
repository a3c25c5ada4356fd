"""Multi-step self-fed evaluation, baselines and the objects-lost proxy."""

import numpy as np

from ..dataset import corrupt_gaussian, count_objects
from ..rng import derive_seed
from .train import as_video_array, to_float


class CopyLastFrame:
    """Baseline predictor that returns its input unchanged."""

    dtype = np.dtype(np.float32)

    def initial_state(self, batch, height, width):
        return None

    def predict_step(self, x, state):
        return np.array(x, dtype=self.dtype), state


class ConstantFrame:
    """Predictor that always outputs one fixed frame (black by default)."""

    dtype = np.dtype(np.float32)

    def __init__(self, value=0.0):
        self.value = value

    def initial_state(self, batch, height, width):
        return None

    def predict_step(self, x, state):
        return np.full(np.shape(x), self.value, dtype=self.dtype), state


def _frames_mse(a, b):
    d = a.astype(np.float64) - b.astype(np.float64)
    return (d * d).reshape(d.shape[0], -1).mean(axis=1)


def eval_multistep(model, frames, warmup=2, horizons=(1, 5, 10), noise=0.0, noise_seed=0,
                   objects_step=20, batch_size=16):
    """Self-fed rollout error after ``warmup`` ground-truth frames.

    The model sees ``x_0 .. x_{warmup-1}``; horizon ``h`` compares the ``h``-th
    prediction, made with earlier predictions fed back as inputs, against
    ``x_{warmup-1+h}``. With ``noise > 0`` the warmup inputs are corrupted
    with Gaussian noise of that magnitude (targets stay clean).

    Returns a dict with ``mse`` (horizon -> mean MSE), ``per_traj``
    (``N x max_h`` MSE at every horizon) and ``objects_lost`` (mean
    true-minus-predicted blob count at ``objects_step``, or None).
    """
    frames = as_video_array(frames)
    n, t_len, h, w, _ = frames.shape
    if warmup < 1:
        raise ValueError(f"warmup must be >= 1, got {warmup}")
    horizons = tuple(int(k) for k in horizons)
    if not horizons or min(horizons) < 1:
        raise ValueError(f"horizons must be positive, got {horizons}")
    max_h = max(horizons)
    if objects_step is not None and warmup - 1 + objects_step <= t_len - 1:
        max_h = max(max_h, objects_step)
    elif objects_step is not None and objects_step > max(horizons):
        objects_step = None
    if warmup - 1 + max_h > t_len - 1:
        raise ValueError(
            f"trajectories of length {t_len} are too short for warmup {warmup} and horizon {max_h}")
    dtype = getattr(model, "dtype", np.dtype(np.float32))
    per_traj = np.zeros((n, max_h))
    lost = np.zeros(n) if objects_step is not None else None
    for lo in range(0, n, batch_size):
        idx = np.arange(lo, min(n, lo + batch_size))
        clips = to_float(frames[idx], dtype)
        inputs = clips[:, :warmup]
        if noise > 0:
            inputs = np.stack([corrupt_gaussian(inputs[b], noise, derive_seed(noise_seed, "eval-noise", int(i)))
                               for b, i in enumerate(idx)]).astype(dtype)
        state = model.initial_state(len(idx), h, w)
        pred = None
        for t in range(warmup):
            pred, state = model.predict_step(inputs[:, t], state)
        for k in range(1, max_h + 1):
            if k > 1:
                pred, state = model.predict_step(pred, state)
            target = clips[:, warmup - 1 + k]
            per_traj[idx, k - 1] = _frames_mse(pred, target)
            if objects_step is not None and k == objects_step:
                true_u8 = frames[idx, warmup - 1 + k]
                lost[idx] = [count_objects(true_u8[b]) - count_objects(np.clip(pred[b], 0, 1))
                             for b in range(len(idx))]
    return {
        "mse": {k: float(per_traj[:, k - 1].mean()) for k in horizons},
        "per_traj": per_traj,
        "objects_lost": None if lost is None else float(lost.mean()),
        "objects_lost_per_traj": lost,
    }


def copy_baseline_mse(frames, warmup=2):
    """1-step MSE of the copy-last-frame baseline, ``mse(x_{w-1}, x_w)``."""
    return eval_multistep(CopyLastFrame(), frames, warmup=warmup, horizons=(1,), objects_step=None)["mse"][1]


def prediction_strip(model, trajectory, warmup=2, horizon=10):
    """Warmup ground-truth frames followed by ``horizon`` self-fed predictions.

    Returns ``(frames, state)`` where ``frames`` holds ``warmup + horizon``
    float images and ``state`` is the model state after the warmup.
    """
    traj = to_float(np.asarray(trajectory)[None], getattr(model, "dtype", np.float32))[0]
    if warmup + horizon > len(traj) + 1 or warmup < 1:
        raise ValueError(f"trajectory of length {len(traj)} cannot show warmup {warmup} + horizon {horizon}")
    h, w = traj.shape[1:3]
    state = model.initial_state(1, h, w)
    frames = [traj[t] for t in range(warmup)]
    pred = None
    for t in range(warmup):
        pred, state = model.predict_step(traj[t][None], state)
    warm_state = model.clone_state(state) if hasattr(model, "clone_state") else state
    for k in range(horizon):
        if k:
            pred, state = model.predict_step(pred, state)
        frames.append(pred[0])
    return frames, warm_state
