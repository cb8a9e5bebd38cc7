"""Noise-prediction MLP ``eps_theta(x_t, t)`` with manual backprop and Adam.

The network maps ``concat(x_t, embed(t))`` through SiLU hidden layers to an
output of the same size as ``x_t``. ``embed`` is a sinusoidal embedding with
geometrically spaced frequencies in ``[1, 1000]``.
"""
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericalError

CHECKPOINT_FORMAT = "psmlab-checkpoint"
CHECKPOINT_VERSION = 1


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def time_embedding(t, dim, max_freq=1000.0):
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.geomspace(1.0, max_freq, half) if half > 1 else np.ones(1)
    arg = t * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


class ScoreNet:
    def __init__(self, input_dim, hidden_dims=(256, 256, 256), time_embed_dim=64, seed=0, params=None):
        if time_embed_dim % 2:
            raise ConfigError("time_embed_dim must be even")
        if input_dim < 1:
            raise ConfigError("input_dim must be positive")
        self.input_dim = int(input_dim)
        self.hidden_dims = [int(h) for h in hidden_dims]
        self.time_embed_dim = int(time_embed_dim)
        sizes = [self.input_dim + self.time_embed_dim, *self.hidden_dims, self.input_dim]
        if params is None:
            rng = np.random.default_rng(seed)
            params = []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                bound = 1.0 / math.sqrt(fan_in)
                params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                params.append(rng.uniform(-bound, bound, size=fan_out))
        self.params = [np.array(p, dtype=np.float64) for p in params]
        expected = [(a, b) for a, b in zip(sizes[:-1], sizes[1:])]
        shapes = [p.shape for p in self.params[0::2]]
        if shapes != expected:
            raise ConfigError(f"parameter shapes {shapes} do not match architecture {expected}")

    @property
    def n_layers(self):
        return len(self.params) // 2

    def param_names(self):
        names = []
        for i in range(self.n_layers):
            names += [f"layers.{i}.weight", f"layers.{i}.bias"]
        return names

    def architecture(self):
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "time_embed_dim": self.time_embed_dim,
            "activation": "SiLU",
        }

    def copy(self):
        return ScoreNet(self.input_dim, self.hidden_dims, self.time_embed_dim, params=[p.copy() for p in self.params])

    def _inputs(self, x_t, t):
        x_t = np.asarray(x_t, dtype=np.float64)
        single = x_t.ndim == 1
        x = x_t.reshape(1, -1) if single else x_t
        if x.shape[1] != self.input_dim:
            raise DataError(f"expected inputs of dimension {self.input_dim}, got {x.shape[1]}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        h = np.concatenate([x, time_embedding(t, self.time_embed_dim)], axis=1)
        return h, single

    def forward(self, x_t, t):
        t_arr = np.asarray(t, dtype=np.float64)
        if t_arr.size == 1 and np.ndim(x_t) == 2:
            # one time for the whole batch: embed once and fold it into the first bias
            x = np.asarray(x_t, dtype=np.float64)
            if x.shape[1] != self.input_dim:
                raise DataError(f"expected inputs of dimension {self.input_dim}, got {x.shape[1]}")
            w0 = self.params[0]
            emb = time_embedding(t_arr.reshape(1), self.time_embed_dim)
            z = x @ w0[: self.input_dim] + (emb @ w0[self.input_dim :] + self.params[1])
            h = z * _sigmoid(z) if self.n_layers > 1 else z
            start, single = 1, False
        else:
            h, single = self._inputs(x_t, t)
            start = 0
        n = self.n_layers
        for i in range(start, n):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            h = z * _sigmoid(z) if i < n - 1 else z
        return h[0] if single else h

    __call__ = forward

    def loss_and_grad(self, x_t, t, target, weights=None):
        """Mean over the batch of ``weights * |forward(x_t, t) - target|^2`` and its parameter gradients."""
        h, _ = self._inputs(x_t, t)
        target = np.asarray(target, dtype=np.float64).reshape(h.shape[0], self.input_dim)
        bad = ~np.all(np.isfinite(target), axis=1)
        if bad.any():
            raise DataError(f"non-finite training target for sample {int(np.flatnonzero(bad)[0])}")
        batch = h.shape[0]
        w = np.ones(batch) if weights is None else np.broadcast_to(np.asarray(weights, dtype=np.float64), (batch,))

        n = self.n_layers
        acts = [h]
        pre = []
        for i in range(n):
            z = acts[-1] @ self.params[2 * i] + self.params[2 * i + 1]
            pre.append(z)
            acts.append(z * _sigmoid(z) if i < n - 1 else z)
        resid = acts[-1] - target
        loss = float(np.mean(w * np.sum(resid * resid, axis=1)))

        grads = [None] * len(self.params)
        delta = (2.0 / batch) * w[:, None] * resid
        for i in range(n - 1, -1, -1):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.params[2 * i].T
                z = pre[i - 1]
                s = _sigmoid(z)
                delta = delta * (s * (1.0 + z * (1.0 - s)))
        return loss, grads

    def state_dict(self):
        return dict(zip(self.param_names(), self.params))


def gradient_check(net, x_t, t, target, weights=None, n_coords=20, rng=None, h=1e-5):
    """Largest relative gap between backprop and central differences on random parameter coordinates."""
    rng = np.random.default_rng(0) if rng is None else rng
    _, grads = net.loss_and_grad(x_t, t, target, weights)
    worst = 0.0
    for _ in range(n_coords):
        k = int(rng.integers(len(net.params)))
        p = net.params[k]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        old = p[idx]
        p[idx] = old + h
        up, _ = net.loss_and_grad(x_t, t, target, weights)
        p[idx] = old - h
        down, _ = net.loss_and_grad(x_t, t, target, weights)
        p[idx] = old
        fd = (up - down) / (2 * h)
        worst = max(worst, abs(grads[k][idx] - fd) / max(abs(grads[k][idx]), abs(fd), 1e-7))
    return worst


def forward(net, x_t, t):
    return net.forward(x_t, t)


def grad(net, x_t, t, target, time_weight=None):
    return net.loss_and_grad(x_t, t, target, time_weight)


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-7
    max_epochs: int = 0
    step: int = 0
    epoch: int = 0
    base_lr: float = None
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def __post_init__(self):
        if self.base_lr is None:
            self.base_lr = self.lr

    def set_epoch(self, epoch):
        """Cosine decay of the learning rate over ``max_epochs`` (constant when ``max_epochs`` is 0)."""
        self.epoch = int(epoch)
        if self.max_epochs > 0:
            frac = min(self.epoch, self.max_epochs) / self.max_epochs
            self.lr = 0.5 * self.base_lr * (1.0 + math.cos(math.pi * frac))
        else:
            self.lr = self.base_lr

    def to_dict(self):
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "max_epochs": self.max_epochs,
            "step": self.step,
            "epoch": self.epoch,
            "base_lr": self.base_lr,
        }


def adam_step(state, net, grads):
    """One AdamW update in place; ``net`` is a ScoreNet or a list of parameter arrays."""
    params = net.params if hasattr(net, "params") else net
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter tensor {k} at optimiser step {state.step}")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


def _encode(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}


def _decode(obj):
    return np.array(obj["data"], dtype=np.float64).reshape(obj["shape"])


def config_hash(obj):
    """Stable SHA-256 of a JSON-serialisable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path, net, state=None, cfg_hash="", extra=None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": cfg_hash,
        "architecture": net.architecture(),
        "params": {name: _encode(p) for name, p in zip(net.param_names(), net.params)},
        "adam": None,
        "extra": extra or {},
    }
    if state is not None:
        doc["adam"] = {
            **state.to_dict(),
            "first_moment": [_encode(m) for m in state.first_moment],
            "second_moment": [_encode(v) for v in state.second_moment],
        }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Return ``(net, adam_state_or_None, config_hash, extra)``."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a JSON checkpoint ({exc})") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: not a psmlab checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    arch = doc["architecture"]
    n_layers = len(arch["hidden_dims"]) + 1
    names = [f"layers.{i}.{kind}" for i in range(n_layers) for kind in ("weight", "bias")]
    try:
        params = [_decode(doc["params"][name]) for name in names]
    except KeyError as exc:
        raise DataError(f"{path}: checkpoint lacks parameter {exc}") from exc
    net = ScoreNet(arch["input_dim"], arch["hidden_dims"], arch["time_embed_dim"], params=params)
    state = None
    if doc.get("adam"):
        a = dict(doc["adam"])
        first = [_decode(m) for m in a.pop("first_moment")]
        second = [_decode(v) for v in a.pop("second_moment")]
        state = AdamState(**a, first_moment=first, second_moment=second)
    return net, state, doc.get("config_hash", ""), doc.get("extra", {})
