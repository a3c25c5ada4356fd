"""PCKP checkpoints for predictors, with optional Adam state."""

from ..checkpoint import load_checkpoint, save_checkpoint
from .models import model_from_arrays


def param_names(model):
    return [f"{model.arch}.{k}" for k in model.params]


def save_predictor(path, model, optimizer=None):
    tensors = dict(model.state_dict())
    if optimizer is not None:
        tensors.update(optimizer.state_tensors(param_names(model)))
    save_checkpoint(path, tensors)


def load_predictor(path, optimizer_factory=None):
    """Rebuild the predictor stored at ``path``; returns ``(model, optimizer or None)``."""
    arrays = load_checkpoint(path)
    model = model_from_arrays(arrays)
    opt = None
    if optimizer_factory is not None and "adam.t" in arrays:
        opt = optimizer_factory(model.parameters())
        opt.load_state_tensors(param_names(model), arrays)
    return model, opt
