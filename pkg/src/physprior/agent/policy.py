"""Actor-critic network with the Nature-DQN convolutional torso."""

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..rng import numpy_rng

# (out_channels, kernel, stride) of the three convolutions, then a dense layer
TORSO = ((32, 8, 4), (64, 4, 2), (64, 3, 1))
HIDDEN = 512
# uniform bound = gain / sqrt(fan_in); sqrt(6) gives He variance 2 / fan_in for ReLU layers
RELU_GAIN = np.sqrt(6.0)


def fit_padding(size, k, stride):
    """Smallest symmetric padding making ``(size + 2p - k)`` a multiple of ``stride``."""
    for p in range(stride):
        span = size + 2 * p - k
        if span >= 0 and span % stride == 0:
            return p
    raise ValueError(f"no padding fits size {size}, kernel {k}, stride {stride}")


class PolicyModel:
    """Shared torso with an action-logit head and a scalar value head.

    Input is ``N x H x W x (k+1)*3``: the current frame stacked with ``k``
    imagined frames.
    """

    def __init__(self, in_channels, n_actions, height=84, width=84, seed=0, dtype=np.float32):
        if in_channels < 3 or in_channels % 3:
            raise ValueError(f"input channels must be (k+1)*3, got {in_channels}")
        self.in_channels = int(in_channels)
        self.n_actions = int(n_actions)
        self.height, self.width = int(height), int(width)
        self.dtype = np.dtype(dtype)
        self.params = {}
        rng = numpy_rng(seed, "policy-init")
        self.layout = []
        cin, h, w = self.in_channels, self.height, self.width
        for idx, (cout, k, s) in enumerate(TORSO):
            ph, pw = fit_padding(h, k, s), fit_padding(w, k, s)
            if ph != pw:
                raise ValueError(f"non-square frames need equal padding, got {h}x{w}")
            self.layout.append((f"conv{idx + 1}", s, ph))
            self._add(f"conv{idx + 1}", rng, (k, k, cin, cout), k * k * cin, RELU_GAIN)
            cin = cout
            h = (h + 2 * ph - k) // s + 1
            w = (w + 2 * pw - k) // s + 1
        self.flat = h * w * cin
        self._add("fc", rng, (HIDDEN, self.flat), self.flat, RELU_GAIN)
        # near-uniform initial policy; unit-variance value head
        self._add("pi", rng, (self.n_actions, HIDDEN), HIDDEN, gain=0.01)
        self._add("v", rng, (1, HIDDEN), HIDDEN, gain=np.sqrt(3.0))

    def _add(self, name, rng, shape, fan_in, gain=1.0):
        bound = gain / np.sqrt(fan_in)
        out = shape[-1] if len(shape) == 4 else shape[0]
        self.params[name + ".w"] = Tensor(rng.uniform(-bound, bound, size=shape).astype(self.dtype),
                                          requires_grad=True, name=name + ".w")
        self.params[name + ".b"] = Tensor(np.zeros(out, dtype=self.dtype), requires_grad=True,
                                          name=name + ".b")

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def state_dict(self):
        return {"policy." + k: v.data for k, v in self.params.items()}

    def load_state_dict(self, arrays):
        for k, p in self.params.items():
            key = "policy." + k
            if key not in arrays:
                raise KeyError(f"checkpoint lacks parameter {key!r}")
            arr = np.asarray(arrays[key])
            if arr.shape != p.shape:
                raise ValueError(f"parameter {key!r} has shape {arr.shape}, model expects {p.shape}")
            p.data = arr.astype(self.dtype, copy=True)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def forward(self, obs):
        """``(logits N x A, values N)`` for a batch of observation stacks."""
        x = obs if isinstance(obs, Tensor) else Tensor(np.asarray(obs, dtype=self.dtype))
        if x.ndim != 4 or x.shape[-1] != self.in_channels:
            raise ValueError(f"expected N x H x W x {self.in_channels} observations, got {x.shape}")
        for name, stride, pad in self.layout:
            x = ad.relu(ad.conv2d(x, self.params[name + ".w"], self.params[name + ".b"],
                                  stride=stride, padding=pad, allow_even=True))
        x = ad.reshape(x, (x.shape[0], self.flat))
        x = ad.relu(ad.linear(x, self.params["fc.w"], self.params["fc.b"]))
        logits = ad.linear(x, self.params["pi.w"], self.params["pi.b"])
        values = ad.reshape(ad.linear(x, self.params["v.w"], self.params["v.b"]), (x.shape[0],))
        return logits, values

    def act(self, obs, rng, greedy=False):
        """Tape-free action selection; returns ``(actions, log_probs, values)`` arrays."""
        with ad.no_tape():
            logits, values = self.forward(obs)
            dist = ad.Categorical(logits)
            actions = dist.mode() if greedy else dist.sample(rng)
            logp = dist.log_prob(np.asarray(actions)).data
        return np.asarray(actions), logp, values.data


def policy_from_arrays(arrays, height, width, dtype=np.float32):
    """Rebuild a policy from checkpoint arrays; shapes come from the tensors."""
    if "policy.conv1.w" not in arrays:
        raise KeyError("checkpoint holds no policy parameters")
    in_channels = arrays["policy.conv1.w"].shape[2]
    n_actions = arrays["policy.pi.w"].shape[0]
    model = PolicyModel(in_channels, n_actions, height, width, dtype=dtype)
    model.load_state_dict(arrays)
    return model
