"""Risk models: point MLP, Monte-Carlo dropout, mean-field VI and SNGP.

All models expose the same training surface used by
:func:`probsurv.probmodels.training.fit`:

``params()`` / ``param_names()``
    arrays updated in place by Adam
``loss_and_grads(X, times, events, n_total, rng)``
    one stochastic objective evaluation on a mini-batch
``post_step()``
    hook after each optimizer step (spectral normalization)
``outputs(X)``
    deterministic outputs used for validation loss and point predictions
``sample_outputs(X, n, rng)``
    posterior-predictive draws of the outputs, shape ``(n, N, k)``
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from ..tensorcore import (
    IDENTITY,
    RELU,
    DenseLayer,
    Network,
    backward,
    forward,
    l2_penalty,
    network_from_dict,
    network_to_dict,
    sample_dropout_masks,
    spectral_normalize,
)
from .objectives import CoxObjective, GaussianTimeObjective, make_objective


def softplus(x):
    return np.logaddexp(0.0, x)


class RiskModel:
    backend = "base"
    samples_predictive = False

    def __init__(self, objective):
        self.objective = objective
        self.history: List[tuple] = []
        self.best_epoch: Optional[int] = None
        self.trained = False

    def mark_trained(self):
        """Flag a hand-built model as ready for prediction."""
        self.trained = True
        return self

    @property
    def head_kind(self) -> str:
        return self.objective.name

    def risk(self, X) -> np.ndarray:
        """Deterministic risk score f(x) (first output column)."""
        return self.outputs(np.atleast_2d(X))[:, 0]

    def sample_risk(self, X, n: int, rng) -> np.ndarray:
        return self.sample_outputs(np.atleast_2d(X), n, rng)[:, :, 0]

    def validation_loss(self, X, times, events) -> float:
        return self.objective(self.outputs(X), times, events)[0]

    def post_step(self):
        pass

    def on_epoch_start(self):
        pass

    def finalize(self, X):
        pass

    def _objective_doc(self):
        doc = {"head": self.objective.name}
        if isinstance(self.objective, GaussianTimeObjective):
            doc["time_scale"] = self.objective.time_scale
        return doc


def _objective_from_doc(doc):
    if doc["head"] == "cox":
        return CoxObjective()
    return GaussianTimeObjective(doc.get("time_scale", 1.0))


class PointModel(RiskModel):
    """Deterministic MLP (DeepSurv-style) with an L2 penalty."""

    backend = "mlp"

    def __init__(self, net: Network, objective=None, l2_lambda: float = 0.0):
        super().__init__(objective or CoxObjective())
        self.net = net
        self.l2_lambda = l2_lambda

    def params(self):
        return self.net.params()

    def param_names(self):
        return self.net.param_names()

    def n_params(self) -> int:
        return self.net.n_params()

    def _masks(self, n_rows, rng):
        return None

    def loss_and_grads(self, X, times, events, n_total, rng, masks=None):
        if masks is None:
            masks = self._masks(X.shape[0], rng)
        out, cache = forward(self.net, X, masks)
        loss, g_out = self.objective(out, times, events)
        grads = backward(self.net, cache, g_out)
        if self.l2_lambda > 0:
            pen, pen_g = l2_penalty(self.net.params(), self.l2_lambda)
            loss += pen
            grads = [g + p for g, p in zip(grads, pen_g)]
        return loss, grads

    def outputs(self, X):
        return self.net(np.atleast_2d(X))

    def sample_outputs(self, X, n, rng):
        out = self.outputs(X)
        return np.broadcast_to(out, (n,) + out.shape).copy()

    def snapshot(self):
        return [p.copy() for p in self.params()]

    def restore(self, snap):
        for p, s in zip(self.params(), snap):
            p[...] = s

    def to_dict(self):
        return {"backend": self.backend, "network": network_to_dict(self.net), "l2_lambda": self.l2_lambda, **self._objective_doc()}


@dataclass
class MCDConfig:
    p_drop: float = 0.1
    n_samples: int = 100
    tau: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError("p_drop must lie in [0, 1)")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


class MCDModel(PointModel):
    """MLP trained and queried with dropout on every hidden layer."""

    backend = "mcd"
    samples_predictive = True

    def __init__(self, net: Network, mcd: MCDConfig, objective=None, l2_lambda: float = 0.0):
        super().__init__(net, objective, l2_lambda)
        self.mcd = mcd

    def _masks(self, n_rows, rng):
        return sample_dropout_masks(self.net.hidden_widths, self.mcd.p_drop, rng, n_rows=n_rows)

    def sample_outputs(self, X, n, rng):
        X = np.atleast_2d(X)
        out = np.empty((n, X.shape[0], self.net.layers[-1].n_out))
        for s in range(n):
            out[s] = self.net(X, self._masks(X.shape[0], rng))
        return out

    def to_dict(self):
        doc = super().to_dict()
        doc["dropout"] = {"p_drop": self.mcd.p_drop, "n_samples": self.mcd.n_samples, "tau": self.mcd.tau}
        return doc


@dataclass
class VariationalLayer:
    """Mean-field Gaussian over one dense layer; sigma = softplus(rho)."""

    weight_means: np.ndarray
    weight_rhos: np.ndarray
    bias_means: np.ndarray
    bias_rhos: np.ndarray
    prior_std: float = 1.0
    activation: str = RELU

    def params(self):
        return [self.weight_means, self.weight_rhos, self.bias_means, self.bias_rhos]

    @property
    def weight_stds(self):
        return softplus(self.weight_rhos)

    @property
    def bias_stds(self):
        return softplus(self.bias_rhos)

    def mean_layer(self) -> DenseLayer:
        return DenseLayer(self.weight_means, self.bias_means, self.activation)


def kl_diag_gaussian(mu, sigma, prior_std: float = 1.0) -> float:
    """KL( N(mu, sigma^2) || N(0, prior_std^2) ) summed over entries."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    s2 = prior_std * prior_std
    return float(np.sum(np.log(prior_std / sigma) + (sigma * sigma + mu * mu) / (2.0 * s2) - 0.5))


class VIModel(RiskModel):
    """Bayes-by-backprop network; one reparameterized weight draw per step."""

    backend = "vi"
    samples_predictive = True

    def __init__(self, layers: List[VariationalLayer], objective=None):
        super().__init__(objective or CoxObjective())
        self.layers = layers

    @classmethod
    def init(cls, widths, rng, prior_std=1.0, rho_init=-5.0, objective=None, activation=RELU):
        layers = []
        for i, (k_in, k_out) in enumerate(zip(widths[:-1], widths[1:])):
            act = IDENTITY if i == len(widths) - 2 else activation
            layers.append(
                VariationalLayer(
                    rng.standard_normal((k_out, k_in)) * np.sqrt(2.0 / k_in),
                    np.full((k_out, k_in), rho_init),
                    np.zeros(k_out),
                    np.full(k_out, rho_init),
                    prior_std,
                    act,
                )
            )
        return cls(layers, objective)

    def params(self):
        out = []
        for l in self.layers:
            out += l.params()
        return out

    def param_names(self):
        out = []
        for i in range(len(self.layers)):
            out += [f"layers[{i}].{n}" for n in ("weight_means", "weight_rhos", "bias_means", "bias_rhos")]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def mean_network(self) -> Network:
        return Network([l.mean_layer() for l in self.layers])

    def kl(self) -> float:
        return sum(
            kl_diag_gaussian(l.weight_means, l.weight_stds, l.prior_std)
            + kl_diag_gaussian(l.bias_means, l.bias_stds, l.prior_std)
            for l in self.layers
        )

    def draw_noise(self, rng):
        return [(rng.standard_normal(l.weight_means.shape), rng.standard_normal(l.bias_means.shape)) for l in self.layers]

    def sampled_network(self, noise) -> Network:
        return Network(
            [
                DenseLayer(l.weight_means + l.weight_stds * ew, l.bias_means + l.bias_stds * eb, l.activation)
                for l, (ew, eb) in zip(self.layers, noise)
            ]
        )

    def loss_and_grads(self, X, times, events, n_total, rng, noise=None):
        """Mini-batch negative ELBO: data NLL (batch mean) + KL / N."""
        if noise is None:
            noise = self.draw_noise(rng)
        net = self.sampled_network(noise)
        out, cache = forward(net, X)
        loss, g_out = self.objective(out, times, events)
        net_grads = backward(net, cache, g_out)
        kl_w = 1.0 / n_total
        loss += kl_w * self.kl()
        grads = []
        for i, (l, (ew, eb)) in enumerate(zip(self.layers, noise)):
            dW, db = net_grads[2 * i], net_grads[2 * i + 1]
            s2 = l.prior_std**2
            for dtheta, mu, rho, eps in ((dW, l.weight_means, l.weight_rhos, ew), (db, l.bias_means, l.bias_rhos, eb)):
                sig = softplus(rho)
                dsig = expit(rho)
                g_mu = dtheta + kl_w * mu / s2
                g_rho = (dtheta * eps + kl_w * (-1.0 / sig + sig / s2)) * dsig
                grads.append((g_mu, g_rho))
        flat = []
        for (gw_mu, gw_rho), (gb_mu, gb_rho) in zip(grads[0::2], grads[1::2]):
            flat += [gw_mu, gw_rho, gb_mu, gb_rho]
        return loss, flat

    def outputs(self, X):
        return self.mean_network()(np.atleast_2d(X))

    def sample_outputs(self, X, n, rng):
        X = np.atleast_2d(X)
        out = np.empty((n, X.shape[0], self.layers[-1].weight_means.shape[0]))
        for s in range(n):
            out[s] = self.sampled_network(self.draw_noise(rng))(X)
        return out

    def snapshot(self):
        return [p.copy() for p in self.params()]

    def restore(self, snap):
        for p, s in zip(self.params(), snap):
            p[...] = s

    def to_dict(self):
        return {
            "backend": self.backend,
            "layers": [
                {
                    "shape": list(l.weight_means.shape),
                    "weight_means": l.weight_means.ravel().tolist(),
                    "weight_rhos": l.weight_rhos.ravel().tolist(),
                    "bias_means": l.bias_means.tolist(),
                    "bias_rhos": l.bias_rhos.tolist(),
                    "prior_std": l.prior_std,
                    "activation": l.activation,
                }
                for l in self.layers
            ],
            **self._objective_doc(),
        }


@dataclass
class SNGPConfig:
    n_features: int = 128
    ridge: float = 1.0
    spectral_bound: float = 1.0
    power_iters: int = 1
    lengthscale: float = 1.0
    reset_precision_each_epoch: bool = False

    def __post_init__(self):
        if self.n_features < 1 or self.ridge <= 0 or self.spectral_bound <= 0 or self.lengthscale <= 0:
            raise ValueError("invalid SNGP head configuration")


@dataclass
class SNGPHead:
    """Random-Fourier-feature GP output layer with a Laplace precision matrix."""

    rff_weights: np.ndarray  # (m, K_L), frozen
    rff_bias: np.ndarray  # (m,), frozen
    output_weights: np.ndarray  # beta, (m,)
    precision: np.ndarray  # (m, m)
    ridge: float = 1.0
    _chol: Optional[tuple] = field(default=None, repr=False)

    @classmethod
    def init(cls, n_in, m, rng, ridge=1.0, lengthscale=1.0):
        R = rng.standard_normal((m, n_in)) / lengthscale
        b = rng.uniform(0.0, 2.0 * np.pi, m)
        return cls(R, b, np.zeros(m), ridge * np.eye(m), ridge)

    @property
    def m(self) -> int:
        return self.rff_bias.shape[0]

    def features(self, h):
        return np.sqrt(2.0 / self.m) * np.cos(np.atleast_2d(h) @ self.rff_weights.T + self.rff_bias)

    def mean(self, phi):
        return phi @ self.output_weights

    def reset(self):
        self.precision = self.ridge * np.eye(self.m)
        self._chol = None

    def accumulate(self, phi):
        phi = np.atleast_2d(phi)
        self.precision = self.precision + phi.T @ phi
        self._chol = None

    def variance(self, phi):
        """phi^T precision^{-1} phi for each row of ``phi``."""
        phi = np.atleast_2d(phi)
        if self._chol is None:
            self._chol = cho_factor(self.precision, lower=True)
        sol = cho_solve(self._chol, phi.T)
        return np.einsum("ij,ji->i", phi, sol)


class SNGPModel(RiskModel):
    """Spectrally normalized hidden layers feeding a random-feature GP head."""

    backend = "sngp"
    samples_predictive = True

    def __init__(self, hidden: Optional[Network], head: SNGPHead, cfg: SNGPConfig, l2_lambda=0.0, u_vectors=None):
        super().__init__(CoxObjective())
        self.hidden = hidden
        self.head = head
        self.cfg = cfg
        self.l2_lambda = l2_lambda
        self.u_vectors = u_vectors or []

    @classmethod
    def init(cls, widths_hidden, rng, cfg: SNGPConfig, l2_lambda=0.0):
        """``widths_hidden`` = [d, K_1, ..., K_L]; [d] means no hidden layers."""
        hidden = None
        u = []
        if len(widths_hidden) > 1:
            hidden = Network.init(widths_hidden, rng, output_activation=RELU)
            u = [rng.standard_normal(l.n_out) for l in hidden.layers]
        head = SNGPHead.init(widths_hidden[-1], cfg.n_features, rng, cfg.ridge, cfg.lengthscale)
        model = cls(hidden, head, cfg, l2_lambda, u)
        model.post_step()
        return model

    def params(self):
        return (self.hidden.params() if self.hidden else []) + [self.head.output_weights]

    def param_names(self):
        return (self.hidden.param_names() if self.hidden else []) + ["head.output_weights"]

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def _embed(self, X):
        if self.hidden is None:
            return np.atleast_2d(np.asarray(X, dtype=np.float64)), None
        return forward(self.hidden, X)

    def features(self, X):
        return self.head.features(self._embed(X)[0])

    def loss_and_grads(self, X, times, events, n_total, rng):
        h, cache = self._embed(X)
        pre = h @ self.head.rff_weights.T + self.head.rff_bias
        scale = np.sqrt(2.0 / self.head.m)
        phi = scale * np.cos(pre)
        risk = phi @ self.head.output_weights
        loss, g_out = self.objective(risk[:, None], times, events)
        if self.cfg.reset_precision_each_epoch:
            self.head.accumulate(phi)
        g = g_out[:, 0]
        g_beta = phi.T @ g
        grads = []
        if self.hidden is not None:
            d_phi = g[:, None] * self.head.output_weights[None, :]
            d_h = (-scale * np.sin(pre) * d_phi) @ self.head.rff_weights
            grads = backward(self.hidden, cache, d_h)
        grads = grads + [g_beta]
        if self.l2_lambda > 0:
            pen, pen_g = l2_penalty(self.params(), self.l2_lambda)
            loss += pen
            grads = [a + b for a, b in zip(grads, pen_g)]
        return loss, grads

    def post_step(self, iters=None):
        if self.hidden is None:
            return
        for k, layer in enumerate(self.hidden.layers):
            W, _, u = spectral_normalize(layer.weights, self.cfg.spectral_bound, iters or self.cfg.power_iters, self.u_vectors[k])
            layer.weights[...] = W
            self.u_vectors[k] = u

    def on_epoch_start(self):
        if self.cfg.reset_precision_each_epoch:
            self.head.reset()

    def finalize(self, X):
        """Converge the spectral bound and build the Laplace precision."""
        self.post_step(iters=200)
        if not self.cfg.reset_precision_each_epoch:
            self.head.reset()
            self.head.accumulate(self.features(X))

    def outputs(self, X):
        return (self.features(X) @ self.head.output_weights)[:, None]

    def predictive_variance(self, X):
        return self.head.variance(self.features(X))

    def sample_outputs(self, X, n, rng):
        phi = self.features(X)
        mean = phi @ self.head.output_weights
        sd = np.sqrt(np.maximum(self.head.variance(phi), 0.0))
        z = rng.standard_normal((n, mean.shape[0]))
        return (mean[None, :] + sd[None, :] * z)[:, :, None]

    def snapshot(self):
        return [p.copy() for p in self.params()] + [self.head.precision.copy()] + [u.copy() for u in self.u_vectors]

    def restore(self, snap):
        k = len(self.params())
        for p, s in zip(self.params(), snap[:k]):
            p[...] = s
        self.head.precision = snap[k].copy()
        self.head._chol = None
        self.u_vectors = [u.copy() for u in snap[k + 1 :]]

    def to_dict(self):
        return {
            "backend": self.backend,
            "hidden": network_to_dict(self.hidden) if self.hidden else None,
            "u_vectors": [u.tolist() for u in self.u_vectors],
            "config": {
                "n_features": self.cfg.n_features,
                "ridge": self.cfg.ridge,
                "spectral_bound": self.cfg.spectral_bound,
                "power_iters": self.cfg.power_iters,
                "lengthscale": self.cfg.lengthscale,
                "reset_precision_each_epoch": self.cfg.reset_precision_each_epoch,
            },
            "l2_lambda": self.l2_lambda,
            "rff_weights": self.head.rff_weights.ravel().tolist(),
            "rff_shape": list(self.head.rff_weights.shape),
            "rff_bias": self.head.rff_bias.tolist(),
            "output_weights": self.head.output_weights.tolist(),
            "precision": self.head.precision.ravel().tolist(),
            "head": "cox",
        }


def model_from_dict(doc: dict) -> RiskModel:
    return _model_from_dict(doc).mark_trained()


def _model_from_dict(doc: dict) -> RiskModel:
    backend = doc.get("backend")
    if backend in ("mlp", "mcd"):
        net = network_from_dict(doc["network"])
        obj = _objective_from_doc(doc)
        if backend == "mlp":
            return PointModel(net, obj, doc.get("l2_lambda", 0.0))
        return MCDModel(net, MCDConfig(**doc["dropout"]), obj, doc.get("l2_lambda", 0.0))
    if backend == "vi":
        layers = []
        for spec in doc["layers"]:
            shape = spec["shape"]
            layers.append(
                VariationalLayer(
                    np.array(spec["weight_means"]).reshape(shape),
                    np.array(spec["weight_rhos"]).reshape(shape),
                    np.array(spec["bias_means"], dtype=np.float64),
                    np.array(spec["bias_rhos"], dtype=np.float64),
                    spec["prior_std"],
                    spec["activation"],
                )
            )
        return VIModel(layers, _objective_from_doc(doc))
    if backend == "sngp":
        cfg = SNGPConfig(**doc["config"])
        hidden = network_from_dict(doc["hidden"]) if doc["hidden"] else None
        m = cfg.n_features
        head = SNGPHead(
            np.array(doc["rff_weights"]).reshape(doc["rff_shape"]),
            np.array(doc["rff_bias"], dtype=np.float64),
            np.array(doc["output_weights"], dtype=np.float64),
            np.array(doc["precision"]).reshape(m, m),
            cfg.ridge,
        )
        return SNGPModel(hidden, head, cfg, doc.get("l2_lambda", 0.0), [np.array(u) for u in doc["u_vectors"]])
    raise ValueError(f"unknown model backend {backend!r}")


__all__ = [
    "MCDConfig",
    "MCDModel",
    "PointModel",
    "RiskModel",
    "SNGPConfig",
    "SNGPHead",
    "SNGPModel",
    "VIModel",
    "VariationalLayer",
    "kl_diag_gaussian",
    "make_objective",
    "model_from_dict",
    "softplus",
]
