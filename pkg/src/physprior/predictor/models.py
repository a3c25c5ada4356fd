"""Recurrent frame predictors: SpatialNet and ConvLSTM (optionally residual).

All models share one encoder/decoder layout. The encoder is a stride-2
convolution followed by a residual block, so the recurrent state lives on an
``H/2 x W/2`` grid. The decoder is a residual block, nearest-neighbour
upsampling by two and a convolution back to RGB squashed by a sigmoid.

A model step maps a batch of frames ``x_t`` (``N x H x W x 3`` in [0, 1]) and
the recurrent state to the predicted next frame and the new state.
"""

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..rng import numpy_rng

ARCHITECTURES = ("spatialnet", "convlstm", "convlstm_res")


class FramePredictor:
    arch = None

    def __init__(self, channels=32, kernel_size=3, seed=0, dtype=np.float32):
        if kernel_size % 2 == 0:
            raise ValueError(f"memory kernel size must be odd, got {kernel_size}")
        self.channels = int(channels)
        self.kernel_size = int(kernel_size)
        self.dtype = np.dtype(dtype)
        self.params = {}
        self._rng = numpy_rng(seed, "predictor-init", self.arch)
        self._build_codec()
        self._build_memory()

    # ------------------------------------------------------------ parameters

    def _conv(self, name, k, cin, cout):
        bound = 1.0 / np.sqrt(k * k * cin)
        w = self._rng.uniform(-bound, bound, size=(k, k, cin, cout)).astype(self.dtype)
        b = self._rng.uniform(-bound, bound, size=(cout,)).astype(self.dtype)
        self.params[name + ".w"] = Tensor(w, requires_grad=True, name=name + ".w")
        self.params[name + ".b"] = Tensor(b, requires_grad=True, name=name + ".b")

    def _build_codec(self):
        c = self.channels
        self._conv("enc_in", 3, 3, c)
        self._conv("enc_r1", 3, c, c)
        self._conv("enc_r2", 3, c, c)
        self._conv("dec_r1", 3, c, c)
        self._conv("dec_r2", 3, c, c)
        self._conv("dec_out", 3, c, 3)

    def _build_memory(self):
        raise NotImplementedError

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def apply(self, name, x, stride=1, padding=None):
        w = self.params[name + ".w"]
        if padding is None:
            padding = w.shape[0] // 2
        return ad.conv2d(x, w, self.params[name + ".b"], stride=stride, padding=padding)

    def state_dict(self):
        return {f"{self.arch}.{k}": v.data for k, v in self.params.items()}

    def load_state_dict(self, arrays):
        for k, p in self.params.items():
            key = f"{self.arch}.{k}"
            if key not in arrays:
                raise KeyError(f"checkpoint lacks parameter {key!r}")
            arr = np.asarray(arrays[key])
            if arr.shape != p.shape:
                raise ValueError(f"parameter {key!r} has shape {arr.shape}, model expects {p.shape}")
            p.data = arr.astype(self.dtype, copy=True)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    # ----------------------------------------------------------------- modules

    def check_frame(self, x):
        if x.ndim != 4 or x.shape[-1] != 3:
            raise ValueError(f"expected frames of shape N x H x W x 3, got {x.shape}")
        if x.shape[1] % 2 or x.shape[2] % 2:
            raise ValueError(f"frame height and width must be even, got {x.shape[1]}x{x.shape[2]}")

    def encode(self, x):
        # even H: one trailing row/column of padding gives exactly H/2 outputs
        e0 = ad.elu(self.apply("enc_in", x, stride=2, padding=(0, 1)))
        r = self.apply("enc_r2", ad.elu(self.apply("enc_r1", e0)))
        return ad.elu(ad.residual_add(e0, r))

    def decode(self, o):
        r = self.apply("dec_r2", ad.elu(self.apply("dec_r1", o)))
        d = ad.elu(ad.residual_add(o, r))
        return ad.sigmoid(self.apply("dec_out", ad.upsample_nearest(d, 2)))

    def as_input(self, x):
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x, dtype=self.dtype))

    def grid_shape(self, height, width):
        return height // 2, width // 2

    def initial_state(self, batch, height, width):
        raise NotImplementedError

    def step(self, x, state):
        raise NotImplementedError

    def hidden(self, state):
        """The spatial memory tensor of a state."""
        raise NotImplementedError

    def clone_state(self, state):
        raise NotImplementedError

    # ------------------------------------------------- numpy-level inference

    def predict_step(self, x, state):
        """Tape-free step on numpy frames; returns ``(prediction, state)``."""
        with ad.no_tape():
            pred, state = self.step(self.as_input(x), state)
        return pred.data, state


class SpatialNet(FramePredictor):
    """Spatial memory updated purely by convolutions.

    With ``f`` = ELU and ``[a; b]`` channel concatenation::

        i_t     = f(C_e   * [h_t; z_t])
        u_t     = f(C_u   * [i_t; h_t])
        h_{t+1} = f(C_dyn * u_t)
        o_t     = f(C_d   * [z_t; h_{t+1}])
    """

    arch = "spatialnet"

    def _build_memory(self):
        c, k = self.channels, self.kernel_size
        self._conv("mem_e", k, 2 * c, c)
        self._conv("mem_u", k, 2 * c, c)
        self._conv("mem_dyn", k, c, c)
        self._conv("mem_d", k, 2 * c, c)

    def initial_state(self, batch, height, width):
        n, m = self.grid_shape(height, width)
        return Tensor(np.zeros((batch, n, m, self.channels), dtype=self.dtype))

    def memory(self, z, h):
        i = ad.elu(self.apply("mem_e", ad.concat_channels(h, z)))
        u = ad.elu(self.apply("mem_u", ad.concat_channels(i, h)))
        h_next = ad.elu(self.apply("mem_dyn", u))
        o = ad.elu(self.apply("mem_d", ad.concat_channels(z, h_next)))
        return o, h_next

    def step(self, x, state):
        x = self.as_input(x)
        self.check_frame(x)
        if state.shape[:3] != (x.shape[0],) + self.grid_shape(x.shape[1], x.shape[2]):
            raise ValueError(f"hidden state {state.shape} does not match frames {x.shape}")
        z = self.encode(x)
        o, h_next = self.memory(z, state)
        return self.decode(o), h_next

    def hidden(self, state):
        return state

    def clone_state(self, state):
        return Tensor(state.data.copy())


class ConvLSTM(FramePredictor):
    """Convolutional LSTM over ``[z_t; h_t]`` with an additive cell update.

    ``residual=True`` adds the encoding ``z_t`` to the cell output before
    decoding.
    """

    arch = "convlstm"

    def __init__(self, channels=32, kernel_size=5, seed=0, dtype=np.float32, residual=False):
        self.residual = bool(residual)
        if self.residual:
            self.arch = "convlstm_res"
        super().__init__(channels, kernel_size, seed, dtype)

    def _build_memory(self):
        c, k = self.channels, self.kernel_size
        for gate in ("i", "f", "o", "g"):
            self._conv("gate_" + gate, k, 2 * c, c)

    def initial_state(self, batch, height, width):
        n, m = self.grid_shape(height, width)
        zeros = np.zeros((batch, n, m, self.channels), dtype=self.dtype)
        return (Tensor(zeros), Tensor(zeros.copy()))

    def cell(self, z, state):
        h, c = state
        zh = ad.concat_channels(z, h)
        i = ad.sigmoid(self.apply("gate_i", zh))
        f = ad.sigmoid(self.apply("gate_f", zh))
        o = ad.sigmoid(self.apply("gate_o", zh))
        g = ad.tanh(self.apply("gate_g", zh))
        c_next = ad.add(ad.mul(f, c), ad.mul(i, g))
        h_next = ad.mul(o, ad.tanh(c_next))
        return h_next, c_next

    def step(self, x, state):
        x = self.as_input(x)
        self.check_frame(x)
        h, _ = state
        if h.shape[:3] != (x.shape[0],) + self.grid_shape(x.shape[1], x.shape[2]):
            raise ValueError(f"hidden state {h.shape} does not match frames {x.shape}")
        z = self.encode(x)
        h_next, c_next = self.cell(z, state)
        out = ad.residual_add(h_next, z) if self.residual else h_next
        return self.decode(out), (h_next, c_next)

    def hidden(self, state):
        return state[0]

    def clone_state(self, state):
        return (Tensor(state[0].data.copy()), Tensor(state[1].data.copy()))


def build_model(arch, channels=32, kernel_size=None, seed=0, dtype=np.float32):
    if arch == "spatialnet":
        return SpatialNet(channels, kernel_size or 3, seed, dtype)
    if arch in ("convlstm", "convlstm_res"):
        return ConvLSTM(channels, kernel_size or 5, seed, dtype, residual=arch == "convlstm_res")
    raise ValueError(f"unknown predictor architecture {arch!r}; expected one of {ARCHITECTURES}")


def model_from_arrays(arrays, dtype=None):
    """Rebuild a predictor from checkpoint arrays (architecture read from names).

    The parameter dtype follows the stored tensors unless ``dtype`` is given.
    """
    for arch in ARCHITECTURES:
        key = f"{arch}.enc_in.w"
        if key in arrays:
            channels = arrays[key].shape[-1]
            dtype = dtype or arrays[key].dtype
            mem_key = f"{arch}.mem_e.w" if arch == "spatialnet" else f"{arch}.gate_i.w"
            model = build_model(arch, channels, arrays[mem_key].shape[0], dtype=dtype)
            model.load_state_dict(arrays)
            return model
    raise KeyError("checkpoint holds no predictor parameters")


def rollout(model, frame, state, k):
    """``k`` imagined frames from ``frame``, each fed back as the next input.

    ``state`` is cloned first; the caller's state is never modified.
    """
    if k < 0:
        raise ValueError(f"rollout horizon must be >= 0, got {k}")
    frames = []
    if k == 0:
        return frames
    state = model.clone_state(state)
    x = np.asarray(frame.data if isinstance(frame, Tensor) else frame, dtype=model.dtype)
    for _ in range(k):
        x, state = model.predict_step(x, state)
        frames.append(x)
    return frames
