"""Adam with bias correction, plus gradient-norm clipping."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params, grads, state):
    """One in-place Adam update of ``params`` (Tensors) from ``grads`` (arrays or None)."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("adam_step: params, grads and moment lists differ in length")
    for p, g, m in zip(params, grads, state.m):
        if m.shape != p.shape or (g is not None and g.shape != p.shape):
            raise ValueError(f"adam_step: shape mismatch for parameter of shape {p.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)


class Adam:
    """Optimizer object binding parameters to an :class:`AdamState`."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState.for_params(self.params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_tensors(self, names):
        """Moments and step count as named arrays for checkpointing."""
        out = {}
        for name, m, v in zip(names, self.state.m, self.state.v):
            out["adam.m." + name] = m
            out["adam.v." + name] = v
        out["adam.t"] = np.asarray(self.state.t, dtype=np.float32)
        return out

    def load_state_tensors(self, names, arrays):
        for i, name in enumerate(names):
            m = arrays.get("adam.m." + name)
            v = arrays.get("adam.v." + name)
            if m is None or v is None:
                raise KeyError(f"checkpoint lacks Adam moments for {name!r}")
            self.state.m[i] = np.array(m, dtype=self.params[i].dtype).reshape(self.params[i].shape)
            self.state.v[i] = np.array(v, dtype=self.params[i].dtype).reshape(self.params[i].shape)
        self.state.t = int(arrays["adam.t"])


def clip_grad_norm(params, max_norm):
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = total ** 0.5
    if norm > max_norm:
        factor = max_norm / (norm + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(factor)
    return norm
