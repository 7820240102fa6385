"""Dense MLP substrate with hand-written reverse mode.

Inputs are batches of shape ``(n, K_0)``; a 1-D vector is treated as a batch
of one.  Dropout masks already carry the inverted-dropout scale, so a forward
pass with masks is ``a_i = act(W_i a_{i-1} + b_i) * mask_i`` on hidden layers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

RELU = "relu"
IDENTITY = "identity"
CHECKPOINT_FORMAT = "probsurv-network"
CHECKPOINT_VERSION = 1


@dataclass
class DenseLayer:
    weights: np.ndarray  # (K_i, K_{i-1})
    biases: np.ndarray  # (K_i,)
    activation: str = RELU

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ValueError(f"inconsistent layer shapes {self.weights.shape} / {self.biases.shape}")
        if self.activation not in (RELU, IDENTITY):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


class Network:
    """Ordered list of dense layers; the last layer is the output layer."""

    def __init__(self, layers: Sequence[DenseLayer]):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"layer widths do not chain: {a.n_out} -> {b.n_in}")

    @classmethod
    def init(cls, widths: Sequence[int], rng: np.random.Generator, activation=RELU, output_activation=IDENTITY):
        """He-normal weights, zero biases."""
        layers = []
        for i, (k_in, k_out) in enumerate(zip(widths[:-1], widths[1:])):
            act = output_activation if i == len(widths) - 2 else activation
            W = rng.standard_normal((k_out, k_in)) * np.sqrt(2.0 / k_in)
            layers.append(DenseLayer(W, np.zeros(k_out), act))
        return cls(layers)

    @property
    def widths(self) -> List[int]:
        return [self.layers[0].n_in] + [l.n_out for l in self.layers]

    @property
    def hidden_widths(self) -> List[int]:
        return [l.n_out for l in self.layers[:-1]]

    def params(self) -> List[np.ndarray]:
        out = []
        for l in self.layers:
            out += [l.weights, l.biases]
        return out

    def param_names(self) -> List[str]:
        out = []
        for i in range(len(self.layers)):
            out += [f"layers[{i}].weights", f"layers[{i}].biases"]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "Network":
        return Network([DenseLayer(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers])

    def __call__(self, x, masks=None) -> np.ndarray:
        return forward(self, x, masks)[0]


def _activate(z, act):
    return np.maximum(z, 0.0) if act == RELU else z


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)  # a_{i-1} per layer
    pre: list = field(default_factory=list)  # z_i per layer
    masks: list = field(default_factory=list)
    squeeze: bool = False


def forward(net: Network, x, masks: Optional[Sequence[np.ndarray]] = None):
    """Affine + activation composition; returns (outputs, cache)."""
    a = np.asarray(x, dtype=np.float64)
    squeeze = a.ndim == 1
    if squeeze:
        a = a[None, :]
    if a.shape[1] != net.layers[0].n_in:
        raise ValueError(f"input width {a.shape[1]} != network input width {net.layers[0].n_in}")
    n_hidden = len(net.layers) - 1
    if masks is not None and len(masks) != n_hidden:
        raise ValueError(f"expected {n_hidden} dropout masks, got {len(masks)}")
    cache = ForwardCache(squeeze=squeeze)
    for i, layer in enumerate(net.layers):
        cache.inputs.append(a)
        z = a @ layer.weights.T + layer.biases
        cache.pre.append(z)
        a = _activate(z, layer.activation)
        m = masks[i] if (masks is not None and i < n_hidden) else None
        cache.masks.append(m)
        if m is not None:
            a = a * m
    return (a[0] if squeeze else a), cache


def backward(net: Network, cache: ForwardCache, grad_out, return_input_grad=False):
    """Reverse-mode gradients ``[dW_0, db_0, dW_1, ...]`` for a summed loss.

    ``grad_out`` is dLoss/dOutput with the same shape as the forward output.
    """
    if len(cache.pre) != len(net.layers):
        raise ValueError("cache does not belong to this network")
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.squeeze and g.ndim == 1:
        g = g[None, :]
    grads = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
        if layer.activation == RELU:
            g = g * (cache.pre[i] > 0.0)
        grads[2 * i] = g.T @ cache.inputs[i]
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0 or return_input_grad:
            g = g @ layer.weights
    if return_input_grad:
        return grads, (g[0] if cache.squeeze else g)
    return grads


def sample_dropout_masks(widths: Sequence[int], p_drop: float, rng, n_rows: Optional[int] = None):
    """Bernoulli keep-masks for each hidden layer, pre-scaled by 1/(1-p_drop).

    ``rng`` may be a Generator or an integer seed.  With ``n_rows`` each mask
    has shape ``(n_rows, width)`` (one draw per example and unit).
    """
    if not 0.0 <= p_drop <= 1.0:
        raise ValueError("p_drop must lie in [0, 1]")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    masks = []
    for w in widths:
        shape = (w,) if n_rows is None else (n_rows, w)
        if p_drop == 0.0:
            masks.append(np.ones(shape))
        elif p_drop == 1.0:
            masks.append(np.zeros(shape))
        else:
            keep = rng.random(shape) >= p_drop
            masks.append(keep / (1.0 - p_drop))
    return masks


def spectral_normalize(W, bound: float = 1.0, iters: int = 1, u=None, rng=None):
    """Power-iteration estimate of the top singular value and a hard rescale.

    Returns ``(W', sigma_hat, u)`` with ``W' = W * min(1, bound / sigma_hat)``.
    ``u`` (length ``W.shape[0]``) should be fed back on the next call.
    """
    W = np.asarray(W, dtype=np.float64)
    if u is None:
        rng = np.random.default_rng(0) if rng is None else rng
        u = rng.standard_normal(W.shape[0])
    u = u / max(np.linalg.norm(u), 1e-300)
    for _ in range(max(iters, 1)):
        v = W.T @ u
        v /= max(np.linalg.norm(v), 1e-300)
        u = W @ v
        u /= max(np.linalg.norm(u), 1e-300)
    sigma = float(u @ W @ v)
    scale = min(1.0, bound / sigma) if sigma > 0 else 1.0
    return W * scale, sigma, u


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    l2_lambda: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0 or self.l2_lambda < 0:
            raise ValueError("weight_decay and l2_lambda must be nonnegative")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("patience, batch_size and max_epochs must be >= 1")


@dataclass
class AdamState:
    m: list
    v: list

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, t: int, cfg: TrainConfig, names=None):
    """In-place Adam update with bias correction and decoupled weight decay."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            label = names[k] if names else f"param[{k}]"
            raise FloatingPointError(f"non-finite gradient in {label}")
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if cfg.weight_decay > 0:
            p -= cfg.learning_rate * cfg.weight_decay * p
        p -= step
    return params, state


def l2_penalty(params, lam: float):
    """``lam * sum ||p||^2`` over all parameter arrays, with its gradient."""
    if isinstance(params, Network):
        params = params.params()
    value = lam * sum(float(np.sum(p * p)) for p in params)
    return value, [2.0 * lam * p for p in params]


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_parameter: list  # max relative error per parameter array

    def ok(self, tol: float) -> bool:
        return self.max_rel_error < tol


def relative_error(a, n, floor: float = 1e-6):
    """|a - n| / max(|a|, |n|, floor).

    The floor keeps components whose true value is zero (e.g. the output bias
    under a shift-invariant Cox loss) from turning round-off into a large ratio.
    """
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


_STENCILS = {
    2: ((1.0, 0.5), (-1.0, -0.5)),
    4: ((2.0, -1.0 / 12.0), (1.0, 8.0 / 12.0), (-1.0, -8.0 / 12.0), (-2.0, 1.0 / 12.0)),
}


def numerical_gradient(params: Sequence[np.ndarray], loss: Callable[[], float], h: float = 1e-5, order: int = 2):
    """Central differences of ``loss()`` w.r.t. each array, perturbed in place.

    ``order`` 2 is the usual two-point stencil; 4 uses the five-point stencil
    whose O(h^4) truncation error allows larger ``h`` and less round-off.
    """
    if order not in _STENCILS:
        raise ValueError("order must be 2 or 4")
    stencil = _STENCILS[order]
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            total = 0.0
            for step, weight in stencil:
                flat[k] = orig + step * h
                total += weight * loss()
            flat[k] = orig
            gflat[k] = total / h
        out.append(g)
    return out


def grad_check(params, loss: Callable[[], float], analytic, h: float = 1e-5, floor: float = 1e-6, order: int = 2) -> GradCheckReport:
    """Compare analytic gradients with central differences of a frozen loss."""
    if isinstance(params, Network):
        params = params.params()
    numeric = numerical_gradient(params, loss, h, order)
    errs = [float(relative_error(a, n, floor).max()) if a.size else 0.0 for a, n in zip(analytic, numeric)]
    return GradCheckReport(max(errs) if errs else 0.0, errs)


def network_to_dict(net: Network) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layers": [
            {
                "shape": list(l.weights.shape),
                "weights": l.weights.ravel().tolist(),
                "biases": l.biases.tolist(),
                "activation": l.activation,
            }
            for l in net.layers
        ],
    }


def network_from_dict(doc: dict) -> Network:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a network checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    layers = []
    for spec in doc["layers"]:
        W = np.array(spec["weights"], dtype=np.float64).reshape(spec["shape"])
        layers.append(DenseLayer(W, np.array(spec["biases"], dtype=np.float64), spec["activation"]))
    return Network(layers)


def save_network(net: Network, path):
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh)


def load_network(path) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))
