"""Teacher-forced predictor training with truncated backpropagation through time."""

import numpy as np

from .. import autodiff as ad
from ..metrics import MetricsLog
from ..optim import Adam
from ..rng import numpy_rng


def as_video_array(frames):
    """Accept an ``N x T x H x W x 3`` array or a dataset reader."""
    if hasattr(frames, "frames") and callable(frames.frames):
        frames = frames.frames()
    frames = np.asarray(frames)
    if frames.ndim != 5 or frames.shape[-1] != 3:
        raise ValueError(f"expected videos of shape N x T x H x W x 3, got {frames.shape}")
    return frames


def to_float(frames, dtype=np.float32):
    dtype = np.dtype(dtype)
    if frames.dtype == np.uint8:
        return frames.astype(dtype) / dtype.type(255.0)
    return frames.astype(dtype, copy=False)


def bptt_windows(n_traj, traj_len, bptt_len, rng):
    """Shuffled ``(trajectory, start)`` windows covering every trajectory once.

    Window starts are a random phase plus multiples of ``bptt_len``, so all
    transitions are trained on equally often in expectation.
    """
    if traj_len < 2:
        raise ValueError(f"trajectories need at least 2 frames, got {traj_len}")
    length = min(bptt_len, traj_len - 1)
    windows = []
    for i in range(n_traj):
        slack = traj_len - 1 - length
        start = int(rng.integers(0, slack % length + 1)) if slack else 0
        while start + length <= traj_len - 1:
            windows.append((i, start))
            start += length
    order = rng.permutation(len(windows))
    return [windows[k] for k in order], length


def window_loss(model, clips):
    """Sum over the window of per-step next-frame MSE; ``clips`` is ``B x (L+1) x H x W x 3``."""
    b, steps, h, w, _ = clips.shape
    state = model.initial_state(b, h, w)
    loss = None
    for t in range(steps - 1):
        pred, state = model.step(ad.Tensor(clips[:, t]), state)
        term = ad.mse(pred, ad.Tensor(clips[:, t + 1]))
        loss = term if loss is None else ad.add(loss, term)
    return loss


def train_predictor(model, frames, bptt_len=10, batch_size=8, lr=1e-4, epochs=1, max_steps=None,
                    seed=0, log=None, optimizer=None, val_frames=None, eval_every=0, callback=None):
    """Train ``model`` in place; returns the per-step mean 1-step losses.

    Logs ``train/loss`` per optimizer step and, when ``val_frames`` is given,
    ``test/mse_1`` every ``eval_every`` steps and at the end.
    """
    from .evaluate import eval_multistep

    frames = as_video_array(frames)
    if batch_size < 1 or bptt_len < 1:
        raise ValueError(f"batch_size and bptt_len must be positive, got {batch_size}, {bptt_len}")
    log = log if log is not None else MetricsLog()
    opt = optimizer if optimizer is not None else Adam(model.parameters(), lr=lr)
    rng = numpy_rng(seed, "predictor-train")
    losses = []
    step = 0

    def validate():
        res = eval_multistep(model, val_frames, warmup=2, horizons=(1,), objects_step=None)
        log.log(step, "test", "mse_1", res["mse"][1])

    n, t_len = frames.shape[:2]
    done = False
    for _ in range(epochs):
        windows, length = bptt_windows(n, t_len, bptt_len, rng)
        for lo in range(0, len(windows), batch_size):
            batch = windows[lo:lo + batch_size]
            clips = np.stack([frames[i, s:s + length + 1] for i, s in batch])
            clips = to_float(clips, model.dtype)
            with ad.Tape():
                loss = window_loss(model, clips)
                ad.backward(loss)
            value = loss.item() / length
            if not np.isfinite(value):
                raise FloatingPointError(f"predictor loss became {value} at step {step}")
            opt.step()
            model.zero_grad()
            step += 1
            losses.append(value)
            log.log(step, "train", "loss", value)
            if callback is not None:
                callback(step, value)
            if val_frames is not None and eval_every and step % eval_every == 0:
                validate()
            if max_steps is not None and step >= max_steps:
                done = True
                break
        if done:
            break
    if val_frames is not None and not (eval_every and step % eval_every == 0):
        validate()
    return losses
