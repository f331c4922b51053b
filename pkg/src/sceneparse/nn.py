"""Parameter containers and the small layer zoo the parsing network needs.

A Module tracks parameters (Tensors with requires_grad), buffers (plain
arrays such as batch-norm running statistics), and child modules, in
insertion order. That order is the canonical one: it drives deterministic
initialization from a seed and the layout of checkpoints.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ShapeError, ValidationError
from .tensor import Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_decay", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_parameter(self, name, tensor, decay=True):
        tensor.requires_grad = True
        self._params[name] = tensor
        self._decay[name] = decay
        object.__setattr__(self, name, tensor)
        return tensor

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)
        return array

    # -- traversal ------------------------------------------------------

    def named_parameters(self, prefix=""):
        """Yield (dotted_name, tensor, decay_flag) in registration order."""
        for name, p in self._params.items():
            yield (prefix + name, p, self._decay[name])
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield (prefix + name, b)
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def parameters(self):
        return [p for _, p, _ in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode=True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        """In-place dtype conversion of all parameters and buffers."""
        for _, p, _ in self.named_parameters():
            p.data = p.data.astype(dtype)
        for holder in self._walk_modules():
            for name, b in holder._buffers.items():
                converted = b.astype(dtype)
                holder._buffers[name] = converted
                object.__setattr__(holder, name, converted)
        return self

    def _walk_modules(self):
        yield self
        for child in self._children.values():
            yield from child._walk_modules()

    # -- state dict -------------------------------------------------------

    def state_arrays(self):
        """Parameters then buffers, as an ordered name -> ndarray mapping."""
        out = {}
        for name, p, _ in self.named_parameters():
            out[name] = p.data
        for name, b in self.named_buffers():
            out["buffer:" + name] = b
        return out

    def load_state_arrays(self, arrays):
        own = self.state_arrays()
        if set(own) != set(arrays):
            missing = sorted(set(own) - set(arrays))
            extra = sorted(set(arrays) - set(own))
            raise ValidationError(
                f"state mismatch: missing {missing[:3]}, unexpected {extra[:3]}"
            )
        for name, p, _ in self.named_parameters():
            src = arrays[name]
            if src.shape != p.data.shape:
                raise ShapeError(f"parameter {name}: {src.shape} vs {p.data.shape}")
            p.data = src.astype(p.data.dtype).copy()
        # Buffers are written in place so attribute references stay live.
        buffer_names = dict(self.named_buffers())
        for name in buffer_names:
            src = arrays["buffer:" + name]
            dst = buffer_names[name]
            if src.shape != dst.shape:
                raise ShapeError(f"buffer {name}: {src.shape} vs {dst.shape}")
            dst[...] = src

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module):
        self._children[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, idx):
        return self._items[idx]


def he_normal(rng, shape, fan_in, dtype=np.float32):
    std = math.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, k, rng, stride=1, pad=0, bias=True):
        super().__init__()
        self.stride = stride
        self.pad = pad
        w = he_normal(rng, (out_ch, in_ch, k, k), fan_in=in_ch * k * k)
        self.register_parameter("weight", Tensor(w), decay=True)
        if bias:
            self.register_parameter("bias", Tensor(np.zeros(out_ch, np.float32)), decay=False)
        else:
            object.__setattr__(self, "bias", None)

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class BatchNorm2d(Module):
    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.register_parameter("gamma", Tensor(np.ones(channels, np.float32)), decay=False)
        self.register_parameter("beta", Tensor(np.zeros(channels, np.float32)), decay=False)
        self.register_buffer("running_mean", np.zeros(channels, np.float32))
        self.register_buffer("running_var", np.ones(channels, np.float32))

    def forward(self, x):
        return T.batch_norm2d(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            eps=self.eps,
            momentum=self.momentum,
        )


class Linear(Module):
    def __init__(self, in_features, out_features, rng):
        super().__init__()
        w = he_normal(rng, (in_features, out_features), fan_in=in_features)
        self.register_parameter("weight", Tensor(w), decay=True)
        self.register_parameter("bias", Tensor(np.zeros(out_features, np.float32)), decay=False)

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class ConvBNReLU(Module):
    """3x3/1x1 conv -> batch norm -> ReLU, the building unit of every
    non-classifier layer in the head graph. Conv bias is omitted; the BN
    shift makes it redundant."""

    def __init__(self, in_ch, out_ch, k, rng, stride=1, pad=None):
        super().__init__()
        if pad is None:
            pad = k // 2
        self.conv = Conv2d(in_ch, out_ch, k, rng, stride=stride, pad=pad, bias=False)
        self.bn = BatchNorm2d(out_ch)

    def forward(self, x):
        return T.relu(self.bn(self.conv(x)))
