"""
First-order optimizers over name → array parameter mappings.

Steppers return new mappings and never modify the arrays they receive.
"""
import numpy as np


class Momentum:
    """
    Gradient step with heavy-ball momentum.
    """

    def __init__(self, lr, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity = {}

    def step(self, params, grads):
        out = {}
        for name, value in params.items():
            v = self.momentum * self.velocity.get(name, 0.0) + grads[name]
            self.velocity[name] = v
            out[name] = value - self.lr * v
        return out


class Adam:
    """
    Adaptive first/second moment method with bias correction.
    """

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        out = {}
        for name, value in params.items():
            g = grads[name]
            m = self.beta1 * self.m.get(name, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(name, 0.0) + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            out[name] = value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return out


OPTIMIZERS = {"momentum": Momentum, "adam": Adam}


def make_optimizer(name, lr):
    try:
        return OPTIMIZERS[name](lr)
    except KeyError:
        raise ValueError(f"invalid optimizer: {name!r}")
