"""RMSprop over dictionaries of named arrays."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass
class RMSprop:
    """acc <- decay * acc + (1 - decay) * g**2;  p <- p - lr * g / (sqrt(acc) + eps)."""

    lr: float = 3e-4
    decay: float = 0.9
    eps: float = 1e-8
    accumulators: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidInputError(f"learning rate must be positive, got {self.lr}")

    def step(self, params, grads):
        """Return a new parameter dict; parameters without a gradient are copied unchanged."""
        out = {}
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                out[name] = p
                continue
            if g.shape != p.shape:
                raise InvalidInputError(f"gradient for {name!r} has shape {g.shape}, expected {p.shape}")
            acc = self.accumulators.get(name)
            if acc is None:
                acc = np.zeros_like(p)
            acc = self.decay * acc + (1.0 - self.decay) * g * g
            self.accumulators[name] = acc
            out[name] = p - self.lr * g / (np.sqrt(acc) + self.eps)
        return out


def rmsprop_step(params, grads, state):
    """Functional form: returns (new params, state); ``state`` is updated in place."""
    return state.step(params, grads), state
