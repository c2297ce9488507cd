"""Small fully connected networks with hand-written backpropagation.

Batches are row-major: an input of shape ``(N, in_dim)`` maps to an output
of shape ``(N, out_dim)``.  Hidden layers use ReLU; the output layer is
``tanh`` (actors) or identity (critics).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

POLICY_FORMAT = "td3-policy v1"
OUTPUT_ACTIVATIONS = ("tanh", "identity")


class PolicyFileError(ValueError):
    pass


class PolicyNet:
    def __init__(self, layer_dims, out_activation="tanh", rng=None, weights=None, biases=None):
        layer_dims = [int(x) for x in layer_dims]
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise ValueError(f"bad layer dims {layer_dims}")
        if out_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output activation must be one of {OUTPUT_ACTIVATIONS}")
        self.layer_dims = layer_dims
        self.out_activation = out_activation
        if weights is None:
            rng = np.random.default_rng(0) if rng is None else rng
            weights, biases = [], []
            for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                biases.append(rng.uniform(-bound, bound, size=fan_out))
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        for w, b, fi, fo in zip(self.weights, self.biases, layer_dims[:-1], layer_dims[1:]):
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise ValueError("weight shapes do not match layer dims")

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "PolicyNet":
        return PolicyNet(self.layer_dims, self.out_activation,
                         weights=[w.copy() for w in self.weights], biases=[b.copy() for b in self.biases])

    def forward(self, x, keep=False):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input has dim {x.shape[-1]}, network expects {self.in_dim}")
        single = x.ndim == 1
        h = x[None, :] if single else x
        cache = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                h = np.maximum(z, 0.0)
            elif self.out_activation == "tanh":
                h = np.tanh(z)
            else:
                h = z
            cache.append(h)
        y = h[0] if single else h
        return (y, cache) if keep else y

    __call__ = forward

    def backward(self, cache, dy):
        """Gradients of a scalar loss given ``dy = dL/dy``.

        Returns ``(grads, dx)`` where ``grads`` follows :meth:`params` order.
        """
        dy = np.asarray(dy, dtype=float)
        if dy.ndim == 1:
            dy = dy[None, :]
        n_layers = len(self.weights)
        grads = [None] * (2 * n_layers)
        out = cache[-1]
        dz = dy * (1.0 - out * out) if self.out_activation == "tanh" else dy
        for i in range(n_layers - 1, -1, -1):
            h_in = cache[i]
            grads[2 * i] = h_in.T @ dz
            grads[2 * i + 1] = dz.sum(axis=0)
            dh = dz @ self.weights[i].T
            if i > 0:
                dz = dh * (cache[i] > 0)
        return grads, dh

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())


class Adam:
    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        """Descend along ``grads`` (in place on the parameter arrays)."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def loss_and_grad(net: PolicyNet, x, loss_spec):
    """Scalar loss and its parameter gradients for a small set of losses.

    ``loss_spec`` is ``("squared", target)`` for ``0.5 * sum((y - t)^2)`` or
    ``("linear", coeffs)`` for ``sum(coeffs * y)``.
    """
    kind, arg = loss_spec
    y, cache = net.forward(x, keep=True)
    arg = np.asarray(arg, dtype=float)
    if kind == "squared":
        diff = y - arg
        loss = 0.5 * float(np.sum(diff * diff))
        dy = diff
    elif kind == "linear":
        loss = float(np.sum(arg * y))
        dy = np.broadcast_to(arg, np.shape(y)).astype(float)
    else:
        raise ValueError(f"unknown loss {kind!r}")
    grads, _ = net.backward(cache, dy)
    return loss, grads


def gradient_check(net: PolicyNet, x, loss_spec, epsilon: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences."""
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-6, 1e-3]")
    _, grads = loss_and_grad(net, x, loss_spec)
    worst = 0.0
    for p, g in zip(net.params(), grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + epsilon
            lp, _ = loss_and_grad(net, x, loss_spec)
            flat[k] = old - epsilon
            lm, _ = loss_and_grad(net, x, loss_spec)
            flat[k] = old
            numeric = (lp - lm) / (2 * epsilon)
            denom = max(abs(numeric), abs(gflat[k]), 1e-7)
            worst = max(worst, abs(numeric - gflat[k]) / denom)
    return worst


def dumps_policy(net: PolicyNet) -> str:
    lines = [POLICY_FORMAT, " ".join(str(d) for d in net.layer_dims) + " " + net.out_activation]
    for w, b in zip(net.weights, net.biases):
        vals = w.reshape(-1).tolist() + b.tolist()
        lines.append(" ".join(repr(v) for v in vals))
    return "\n".join(lines) + "\n"


def loads_policy(text: str, expect_in_dim: int | None = None, expect_out_dim: int | None = None) -> PolicyNet:
    lines = text.splitlines()
    if not lines or lines[0].strip() != POLICY_FORMAT:
        found = lines[0].strip() if lines else "<empty>"
        raise PolicyFileError(f"unsupported policy format {found!r}, expected {POLICY_FORMAT!r}")
    if len(lines) < 2:
        raise PolicyFileError("policy file truncated: missing layer dims")
    head = lines[1].split()
    if len(head) < 3 or head[-1] not in OUTPUT_ACTIVATIONS:
        raise PolicyFileError(f"bad layer line {lines[1]!r}")
    try:
        dims = [int(x) for x in head[:-1]]
    except ValueError:
        raise PolicyFileError(f"bad layer dims {lines[1]!r}") from None
    n_layers = len(dims) - 1
    if len(lines) != 2 + n_layers:
        raise PolicyFileError(f"policy file truncated: expected {n_layers} layer lines, found {len(lines) - 2}")
    if expect_in_dim is not None and dims[0] != expect_in_dim:
        raise PolicyFileError(f"policy input dim {dims[0]} does not match consumer dim {expect_in_dim}")
    if expect_out_dim is not None and dims[-1] != expect_out_dim:
        raise PolicyFileError(f"policy output dim {dims[-1]} does not match consumer dim {expect_out_dim}")
    weights, biases = [], []
    for i in range(n_layers):
        fi, fo = dims[i], dims[i + 1]
        try:
            vals = np.array([float(x) for x in lines[2 + i].split()])
        except ValueError:
            raise PolicyFileError(f"non-numeric value in layer {i}") from None
        if vals.size != fi * fo + fo:
            raise PolicyFileError(f"layer {i}: expected {fi * fo + fo} values, found {vals.size}")
        weights.append(vals[: fi * fo].reshape(fi, fo))
        biases.append(vals[fi * fo:])
    return PolicyNet(dims, head[-1], weights=weights, biases=biases)


def save_policy(net: PolicyNet, path) -> None:
    Path(path).write_text(dumps_policy(net), encoding="utf-8")


def load_policy(path, expect_in_dim=None, expect_out_dim=None) -> PolicyNet:
    return loads_policy(Path(path).read_text(encoding="utf-8"), expect_in_dim, expect_out_dim)
