"""Independent references for the predictor step, written without the autodiff engine."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit as sigmoid

from physprior.predictor.models import SpatialNet


def conv_ref(x, w, b, stride=1, pad=None):
    """Cross-correlation on one ``H x W x Cin`` image; ``pad`` is ``(before, after)``."""
    k = w.shape[0]
    before, after = (k // 2, k // 2) if pad is None else pad
    xp = np.pad(x, ((before, after), (before, after), (0, 0)))
    patches = sliding_window_view(xp, (k, k), axis=(0, 1))[::stride, ::stride]
    # patches: Ho x Wo x Cin x k x k
    return np.einsum("hwcij,ijco->hwo", patches, w) + b


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def spatialnet_step_ref(params, x, h):
    """Frame ``x`` (H x W x 3) and memory ``h`` to (predicted frame, next memory)."""
    def c(name, v, **kw):
        return conv_ref(v, params[name + ".w"], params[name + ".b"], **kw)

    e0 = elu(c("enc_in", x, stride=2, pad=(0, 1)))
    z = elu(e0 + c("enc_r2", elu(c("enc_r1", e0))))
    i = elu(c("mem_e", np.concatenate([h, z], axis=-1)))
    u = elu(c("mem_u", np.concatenate([i, h], axis=-1)))
    h_next = elu(c("mem_dyn", u))
    o = elu(c("mem_d", np.concatenate([z, h_next], axis=-1)))
    d = elu(o + c("dec_r2", elu(c("dec_r1", o))))
    up = d.repeat(2, axis=0).repeat(2, axis=1)
    return sigmoid(c("dec_out", up)), h_next


def eq2_max_error(seed, channels=4, size=12, kernel_size=3, scale=0.6):
    """Max abs difference between the model step and the reference on random inputs."""
    rng = np.random.default_rng(seed)
    model = SpatialNet(channels, kernel_size, seed=seed, dtype=np.float64)
    params = {}
    for name, p in model.named_parameters():
        p.data = rng.normal(0.0, scale, p.shape)
        params[name] = p.data
    x = rng.uniform(0, 1, (2, size, size, 3))
    h = rng.normal(0, 1, (2, size // 2, size // 2, channels))
    pred, h_next = model.predict_step(x, model.as_input(h))
    err = 0.0
    for b in range(2):
        ref_pred, ref_h = spatialnet_step_ref(params, x[b], h[b])
        err = max(err, np.abs(ref_pred - pred[b]).max(), np.abs(ref_h - h_next.data[b]).max())
    return err
