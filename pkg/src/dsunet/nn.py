"""Parameter registry and thin layer wrappers over the tensor ops."""

from __future__ import annotations

import numpy as np

from .tensor import ConvSpec, Tensor, conv2d, linear


class Module:
    """Base class with a deterministic, insertion-ordered parameter registry."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def register(self, name, tensor):
        self._params[name] = tensor
        return tensor

    def add(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix=""):
        out: dict[str, Tensor] = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, child in self._children.items():
            out.update(child.named_parameters(prefix + name + "."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def trainable_parameters(self, prefix=""):
        return {n: p for n, p in self.named_parameters(prefix).items() if p.trainable}

    def freeze(self):
        for p in self.parameters():
            p.trainable = False
            p.requires_grad = False
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel, rng, stride=1, padding=0,
                 dilation=1, groups=1, bias=True, trainable=True):
        super().__init__()
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        self.spec = ConvSpec(in_channels, out_channels, kernel, stride, padding,
                             dilation, groups)
        kh, kw = kernel
        fan_in = (in_channels // groups) * kh * kw
        self.weight = self.register(
            "weight",
            Tensor(uniform_init(rng, (out_channels, in_channels // groups, kh, kw),
                                fan_in), trainable=trainable),
        )
        self.bias = None
        if bias:
            self.bias = self.register(
                "bias", Tensor(uniform_init(rng, (out_channels,), fan_in),
                               trainable=trainable)
            )

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.spec)

    __call__ = forward


class Linear(Module):
    def __init__(self, in_features, out_features, rng, bias=True, trainable=True):
        super().__init__()
        self.weight = self.register(
            "weight",
            Tensor(uniform_init(rng, (in_features, out_features), in_features),
                   trainable=trainable),
        )
        self.bias = None
        if bias:
            self.bias = self.register(
                "bias",
                Tensor(uniform_init(rng, (out_features,), in_features),
                       trainable=trainable),
            )

    def forward(self, x):
        return linear(x, self.weight, self.bias)

    __call__ = forward
