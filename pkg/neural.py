"""Feed-forward network with hand-written backpropagation and AdamW.

Batched: inputs are (batch, in_dim) arrays; a 1-D input is treated as a
batch of one and the output is returned 1-D as well.
"""

import json

import numpy as np

from logging import warning

from common import CheckpointError
from config import DEFAULT_LR, DEFAULT_WEIGHT_DECAY


SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805

ACTIVATIONS = ('selu', 'identity')


def selu(x):
    return SELU_SCALE * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0)))


def selu_grad(x):
    return SELU_SCALE * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0)))


def _activate(name, x):
    return selu(x) if name == 'selu' else x


def _activate_grad(name, x):
    return selu_grad(x) if name == 'selu' else np.ones_like(x)


class Mlp:
    def __init__(self, layer_dims, rng=None, hidden_activation='selu',
                 output_activation='identity'):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
            raise ValueError('invalid layer dims {}'.format(layer_dims))
        for name in (hidden_activation, output_activation):
            if name not in ACTIVATIONS:
                raise ValueError('unknown activation {!r}'.format(name))
        self.layer_dims = layer_dims
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        if rng is None:
            rng = np.random.default_rng(0)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = np.sqrt(1.0 / fan_in)
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, fan_out))

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def output_dim(self):
        return self.layer_dims[-1]

    @property
    def num_layers(self):
        return len(self.weights)

    def _activation(self, layer):
        if layer == self.num_layers - 1:
            return self.output_activation
        return self.hidden_activation

    def params(self):
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def param_names(self):
        names = []
        for i in range(self.num_layers):
            names.extend(['layer{}.weight'.format(i), 'layer{}.bias'.format(i)])
        return names

    def set_params(self, params):
        params = list(params)
        if len(params) != 2 * self.num_layers:
            raise ValueError('expected {} parameter arrays, got {}'.format(
                2 * self.num_layers, len(params)))
        for i in range(self.num_layers):
            w, b = params[2*i], params[2*i+1]
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ValueError('shape mismatch in layer {}'.format(i))
            self.weights[i], self.biases[i] = np.array(w, dtype=float), np.array(b, dtype=float)

    def config(self):
        return {
            'layer_dims': self.layer_dims,
            'hidden_activation': self.hidden_activation,
            'output_activation': self.output_activation,
        }

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        x = np.atleast_2d(x)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError('expected input dim {}, got shape {}'.format(
                self.input_dim, x.shape))
        return x, squeeze

    def forward_cached(self, x):
        x, squeeze = self._check_input(x)
        cache = []
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = h @ w + b
            cache.append((h, pre))
            h = _activate(self._activation(i), pre)
        return (h[0] if squeeze else h), cache

    def forward(self, x):
        return self.forward_cached(x)[0]

    __call__ = forward

    def backward(self, cache, grad_out):
        """Gradients of a scalar loss given dL/d(output); returns
        (param_grads in params() order, dL/d(input))."""
        grad = np.atleast_2d(np.asarray(grad_out, dtype=float))
        batch = cache[0][0].shape[0]
        if grad.shape != (batch, self.output_dim):
            raise ValueError('expected upstream gradient shape {}, got {}'.format(
                (batch, self.output_dim), grad.shape))
        grads = [None] * (2 * self.num_layers)
        for i in reversed(range(self.num_layers)):
            h, pre = cache[i]
            grad = grad * _activate_grad(self._activation(i), pre)
            grads[2*i] = h.T @ grad
            grads[2*i+1] = grad.sum(axis=0)
            grad = grad @ self.weights[i].T
        return grads, grad


class AdamW:
    def __init__(self, params, lr=DEFAULT_LR, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=DEFAULT_WEIGHT_DECAY):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads, names=None):
        if len(params) != len(self.m) or len(grads) != len(params):
            raise ValueError('expected {} parameters and gradients'.format(
                len(self.m)))
        for i, (p, g) in enumerate(zip(params, grads)):
            if g.shape != p.shape or self.m[i].shape != p.shape:
                raise ValueError('shape mismatch for parameter {}'.format(
                    names[i] if names else i))
            if not np.all(np.isfinite(g)):
                raise FloatingPointError('non-finite gradient for {}'.format(
                    names[i] if names else 'parameter {}'.format(i)))
        beta1, beta2 = self.betas
        self.step_count += 1
        t = self.step_count
        for i, (p, g) in enumerate(zip(params, grads)):
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            self.m[i] = beta1 * self.m[i] + (1 - beta1) * g
            self.v[i] = beta2 * self.v[i] + (1 - beta2) * g * g
            m_hat = self.m[i] / (1 - beta1 ** t)
            v_hat = self.v[i] / (1 - beta2 ** t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, targets):
    logits = np.atleast_2d(logits)
    batch = logits.shape[0]
    probs = softmax(logits)
    rows = np.arange(batch)
    loss = -np.log(np.maximum(probs[rows, targets], 1e-300)).mean()
    grad = probs.copy()
    grad[rows, targets] -= 1.0
    return loss, grad / batch


def _format_array(a):
    return ' '.join(repr(v) for v in np.asarray(a, dtype=float).ravel().tolist())


def save_networks(path, nets, **header):
    """One JSON header line, then one line per parameter array of each
    network in declaration order, written with round-trip exact decimals."""
    header = dict(header, networks=[net.config() for net in nets])
    with open(path, 'w') as out:
        print(json.dumps(header, sort_keys=True), file=out)
        for net in nets:
            for p in net.params():
                print(_format_array(p), file=out)


def load_networks(path):
    try:
        with open(path) as f:
            lines = f.read().split('\n')
    except OSError as e:
        raise CheckpointError(path, e)
    try:
        header = json.loads(lines[0])
        net_configs = header.pop('networks')
    except (ValueError, KeyError, IndexError) as e:
        raise CheckpointError(path, 'bad header ({})'.format(e))
    nets, ln = [], 1
    for config in net_configs:
        try:
            net = Mlp(**config)
        except (TypeError, ValueError) as e:
            raise CheckpointError(path, 'bad network config ({})'.format(e))
        params = []
        for p in net.params():
            if ln >= len(lines):
                raise CheckpointError(path, 'truncated at line {}'.format(ln+1))
            try:
                values = np.array([float(v) for v in lines[ln].split()])
            except ValueError as e:
                raise CheckpointError(path, 'line {}: {}'.format(ln+1, e))
            if values.size != p.size:
                raise CheckpointError(path, 'line {}: expected {} values, got {}'.format(
                    ln+1, p.size, values.size))
            params.append(values.reshape(p.shape))
            ln += 1
        net.set_params(params)
        nets.append(net)
    return header, nets


def restore_networks(path):
    try:
        return load_networks(path)
    except CheckpointError as e:
        warning('Failed to restore from checkpoint {}: {}'.format(path, e))
        raise
