"""RealNVP normalizing flow over a low-dimensional latent space, in plain numpy.

Direction convention: ``forward`` maps base draws ``z`` to data ``x``;
``inverse`` maps data to the base. Each affine coupling layer copies its
pass coordinates and updates the rest as

    x_act = z_act * exp(s(z_pass)) + m(z_pass)

where ``s`` and ``m`` come from two single-hidden-layer tanh networks and
``s`` is soft-clamped to ``(-clamp, clamp)`` by ``clamp * tanh(. / clamp)``.
A fixed per-coordinate affine standardization sits between the coupling
stack and data space, so

    log p(x) = log N(z; 0, I) + log|det dz/dx|

holds with every layer accounted for, and the untrained flow (zero network
outputs, unit standardization) reproduces the standard normal exactly.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DimMismatch, DimTooSmall, EmptyDataset, NonFiniteInput, NumericError, ValidationError

LOG_2PI = np.log(2.0 * np.pi)
DEFAULT_CLAMP = 5.0


def coupling_masks(dim, n_layers):
    """Pass-coordinate index arrays, alternating odd/even coordinates.

    Layer 0 (and every even-numbered layer) passes the odd coordinates,
    i.e. ``dim // 2`` of them; the next layer passes the even ones.
    """
    odd = np.arange(1, dim, 2)
    even = np.arange(0, dim, 2)
    return [odd if k % 2 == 0 else even for k in range(n_layers)]


def _layer_shapes(d_pass, d_act, hidden):
    # scale net then shift net, each W1, b1, W2, b2
    net = [(d_pass, hidden), (hidden,), (hidden, d_act), (d_act,)]
    return net + net


@dataclass(eq=False)
class FlowModel:
    """Stack of affine coupling layers plus a fixed input standardization.

    ``theta`` is the flat vector of every trainable weight; per-layer
    arrays are views into it, so ``params`` and ``theta`` never drift apart.
    """

    dim: int
    n_layers: int
    hidden_width: int
    theta: np.ndarray
    loc: np.ndarray
    scale: np.ndarray
    clamp: float = DEFAULT_CLAMP
    seed: int = 0
    params: list = field(init=False, repr=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.loc = np.asarray(self.loc, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        self.masks = coupling_masks(self.dim, self.n_layers)
        self.acts = [np.setdiff1d(np.arange(self.dim), p) for p in self.masks]
        if self.theta.size != self.n_params():
            raise ValidationError(f"theta has {self.theta.size} entries, expected {self.n_params()}")
        self.params = self._views(self.theta)

    def _shapes(self):
        return [_layer_shapes(len(p), len(a), self.hidden_width) for p, a in zip(self.masks, self.acts)]

    def n_params(self):
        return sum(int(np.prod(s)) for layer in self._shapes() for s in layer)

    def _views(self, flat):
        out, i = [], 0
        for layer in self._shapes():
            arrs = []
            for s in layer:
                k = int(np.prod(s))
                arrs.append(flat[i:i + k].reshape(s))
                i += k
            out.append(arrs)
        return out

    def copy(self):
        return replace(self, theta=self.theta.copy(), loc=self.loc.copy(), scale=self.scale.copy())

    # ------------------------------------------------------------------ nets

    def _nets(self, k, p):
        W1s, b1s, W2s, b2s, W1m, b1m, W2m, b2m = self.params[k]
        hs = np.tanh(p @ W1s + b1s)
        t = np.tanh((hs @ W2s + b2s) / self.clamp)
        hm = np.tanh(p @ W1m + b1m)
        m = hm @ W2m + b2m
        return self.clamp * t, m, (p, hs, t, hm)

    def _check(self, a):
        a = np.asarray(a, dtype=np.float64)
        single = a.ndim == 1
        a = np.atleast_2d(a)
        if a.shape[1] != self.dim:
            raise DimMismatch(f"expected {self.dim} columns, got {a.shape[1]}")
        if not np.all(np.isfinite(a)):
            raise NonFiniteInput("flow input contains NaN or inf")
        return a, single

    # ------------------------------------------------------------ transforms

    def forward(self, z):
        """Base -> data. Returns ``(x, log|det dx/dz|)``, row-wise."""
        z, single = self._check(z)
        x = z.copy()
        log_det = np.zeros(x.shape[0])
        for k in range(self.n_layers):
            s, m, _ = self._nets(k, x[:, self.masks[k]])
            act = self.acts[k]
            x[:, act] = x[:, act] * np.exp(s) + m
            log_det += s.sum(axis=1)
        x = x * self.scale + self.loc
        log_det += np.log(self.scale).sum()
        return (x[0], log_det[0]) if single else (x, log_det)

    def inverse(self, x):
        """Data -> base. Returns ``(z, log|det dz/dx|)``, row-wise."""
        x, single = self._check(x)
        z = (x - self.loc) / self.scale
        log_det = np.full(z.shape[0], -np.log(self.scale).sum())
        for k in reversed(range(self.n_layers)):
            s, m, _ = self._nets(k, z[:, self.masks[k]])
            act = self.acts[k]
            z[:, act] = (z[:, act] - m) * np.exp(-s)
            log_det -= s.sum(axis=1)
        return (z[0], log_det[0]) if single else (z, log_det)

    def log_prob(self, x):
        z, log_det = self.inverse(x)
        return -0.5 * np.sum(np.square(z), axis=-1) - 0.5 * self.dim * LOG_2PI + log_det

    def sample(self, n, seed):
        if n < 1:
            raise ValidationError("n must be >= 1")
        z = np.random.default_rng(seed).standard_normal((n, self.dim))
        return self.forward(z)[0]

    # --------------------------------------------------------------- gradient

    def nll_grad(self, batch, input_grad=False):
        """Mean negative log-likelihood of ``batch`` and its exact gradient.

        Returns ``(nll, grad)`` with ``grad`` laid out like ``theta``; with
        ``input_grad=True`` also the gradient with respect to the batch.
        """
        x, _ = self._check(batch)
        n = x.shape[0]
        if n == 0:
            raise EmptyDataset("empty batch")
        a = (x - self.loc) / self.scale
        tape = []
        sum_s = np.zeros(n)
        for k in reversed(range(self.n_layers)):
            act = self.acts[k]
            s, m, cache = self._nets(k, a[:, self.masks[k]])
            a = a.copy()
            a[:, act] = (a[:, act] - m) * np.exp(-s)
            sum_s += s.sum(axis=1)
            tape.append((k, s, a[:, act], cache))
        z = a
        nll_rows = 0.5 * np.sum(z * z, axis=1) + 0.5 * self.dim * LOG_2PI + sum_s + np.log(self.scale).sum()
        nll = float(nll_rows.mean())

        grad = np.zeros_like(self.theta)
        gviews = self._views(grad)
        g = z / n
        # tape is in inverse order, so walk it backwards (layer 0 first)
        for k, s, b_act, (p, hs, t, hm) in reversed(tape):
            W1s, b1s, W2s, b2s, W1m, b1m, W2m, b2m = self.params[k]
            dW1s, db1s, dW2s, db2s, dW1m, db1m, dW2m, db2m = gviews[k]
            act, pas = self.acts[k], self.masks[k]
            e = np.exp(-s)
            g_bact = g[:, act]
            g_new = g.copy()
            g_new[:, act] = g_bact * e
            g_m = -g_bact * e
            g_s = -g_bact * b_act + 1.0 / n
            g_raw = g_s * (1.0 - t * t)

            dW2m[...] = hm.T @ g_m
            db2m[...] = g_m.sum(axis=0)
            g_pm = (g_m @ W2m.T) * (1.0 - hm * hm)
            dW1m[...] = p.T @ g_pm
            db1m[...] = g_pm.sum(axis=0)

            dW2s[...] = hs.T @ g_raw
            db2s[...] = g_raw.sum(axis=0)
            g_ps = (g_raw @ W2s.T) * (1.0 - hs * hs)
            dW1s[...] = p.T @ g_ps
            db1s[...] = g_ps.sum(axis=0)

            g_new[:, pas] += g_pm @ W1m.T + g_ps @ W1s.T
            g = g_new
        if input_grad:
            return nll, grad, g / self.scale
        return nll, grad

    def mean_nll(self, x):
        return float(-np.mean(self.log_prob(x)))


@dataclass
class TrainReport:
    nll: list  # full-data mean NLL after each epoch
    initial_nll: float
    epochs: int
    lr: float
    batch_size: int
    seed: int
    seconds: float = 0.0

    def to_dict(self):
        return {
            "nll": list(self.nll),
            "initial_nll": self.initial_nll,
            "epochs": self.epochs,
            "lr_schedule": {"kind": "constant", "lr": self.lr},
            "batch_size": self.batch_size,
            "seed": self.seed,
            "seconds": self.seconds,
        }


def new_flow(dim, n_layers=5, hidden_width=32, seed=0, clamp=DEFAULT_CLAMP, init_std=0.01):
    """Near-identity flow: weights ~ N(0, init_std), biases zero, unit standardization."""
    if dim < 2:
        raise DimTooSmall("coupling layers need dim >= 2")
    if n_layers < 1 or hidden_width < 1:
        raise ValidationError("n_layers and hidden_width must be >= 1")
    model = FlowModel(dim, n_layers, hidden_width, np.zeros(_count(dim, n_layers, hidden_width)),
                      np.zeros(dim), np.ones(dim), clamp, seed)
    rng = np.random.default_rng(seed)
    for layer in model.params:
        for arr in layer:
            if arr.ndim == 2:
                arr[...] = rng.normal(0.0, init_std, size=arr.shape)
    return model


def _count(dim, n_layers, hidden):
    masks = coupling_masks(dim, n_layers)
    return sum(int(np.prod(s)) for p in masks for s in _layer_shapes(len(p), dim - len(p), hidden))


def train(model, X_latent, epochs=500, lr=1e-3, batch_size=64, seed=0, clip_norm=None):
    """Fit the flow by mini-batch SGD on the mean NLL.

    The per-coordinate standardization is fitted to ``X_latent`` first and
    then held fixed. ``model`` itself is not modified; a trained copy is
    returned together with a :class:`TrainReport`.

    ``clip_norm`` rescales any mini-batch gradient whose Euclidean norm
    exceeds it. The default (``None``) is plain SGD.
    """
    X = np.asarray(X_latent, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataset("training data must be a non-empty 2-D array")
    if X.shape[1] != model.dim:
        raise DimMismatch(f"data has {X.shape[1]} columns, flow dim is {model.dim}")
    if epochs < 1 or batch_size < 1 or not lr > 0:
        raise ValidationError("need epochs >= 1, batch_size >= 1, lr > 0")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("training data contains NaN or inf")

    t0 = time.perf_counter()
    out = model.copy()
    out.loc = X.mean(axis=0)
    sd = X.std(axis=0)
    out.scale = np.where(sd > 0, sd, 1.0)

    rng = np.random.default_rng(seed)
    n = X.shape[0]
    initial = out.mean_nll(X)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            _, grad = out.nll_grad(X[order[start:start + batch_size]])
            if clip_norm is not None:
                gn = np.linalg.norm(grad)
                if gn > clip_norm:
                    grad *= clip_norm / gn
            out.theta -= lr * grad
        nll = out.mean_nll(X)
        if not np.isfinite(nll):
            raise NumericError(f"non-finite training NLL at epoch {epoch}")
        history.append(nll)
    report = TrainReport(history, initial, epochs, lr, batch_size, seed, time.perf_counter() - t0)
    return out, report


# ----------------------------------------------------------------- persistence


def save(model, directory, name="flow"):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "dim": model.dim,
        "n_layers": model.n_layers,
        "hidden_width": model.hidden_width,
        "mask_scheme": "alternating-odd-even",
        "clamp": model.clamp,
        "activation": "tanh",
        "seed": model.seed,
        "loc": model.loc.tolist(),
        "scale": model.scale.tolist(),
        "n_params": int(model.theta.size),
    }
    (d / f"{name}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    np.save(d / f"{name}_theta.npy", model.theta)


def load(directory, name="flow"):
    d = Path(directory)
    m = json.loads((d / f"{name}.json").read_text())
    return FlowModel(m["dim"], m["n_layers"], m["hidden_width"], np.load(d / f"{name}_theta.npy"),
                     np.array(m["loc"]), np.array(m["scale"]), m["clamp"], m["seed"])
