"""Forward noising and the noise-prediction loss on scene-graph conditioning."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol

import numpy as np

from ..model import SceneGraph
from .assemble import SgEmbedding, _backward, _forward, _Inputs, prepare
from .backends import EmbeddingBackend
from .gnn import EncoderParams


class NoiseSchedule:
    """Cumulative signal fraction ``alpha_bar[t]`` per timestep."""

    def __init__(self, alpha_bar: Mapping[int, float] | np.ndarray):
        if isinstance(alpha_bar, Mapping):
            self._table = {int(t): float(a) for t, a in alpha_bar.items()}
        else:
            self._table = {t: float(a) for t, a in enumerate(np.asarray(alpha_bar, dtype=np.float64))}
        ts = sorted(self._table)
        vals = [self._table[t] for t in ts]
        if any(not (0.0 <= a <= 1.0) for a in vals):
            raise ValueError("alpha_bar values must lie in [0, 1]")
        if any(b > a for a, b in zip(vals, vals[1:])):
            raise ValueError("alpha_bar must be non-increasing in t")

    @classmethod
    def linear(cls, n_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        betas = np.linspace(beta_start, beta_end, n_steps, dtype=np.float64)
        return cls(np.cumprod(1.0 - betas))

    @classmethod
    def scaled_linear(cls, n_steps: int = 1000, beta_start: float = 0.00085,
                      beta_end: float = 0.012) -> "NoiseSchedule":
        betas = np.linspace(beta_start ** 0.5, beta_end ** 0.5, n_steps, dtype=np.float64) ** 2
        return cls(np.cumprod(1.0 - betas))

    def __contains__(self, t) -> bool:
        return t in self._table

    def __len__(self) -> int:
        return len(self._table)

    def alpha_bar(self, t: int) -> float:
        try:
            return self._table[t]
        except KeyError:
            raise KeyError(f"timestep {t} not in schedule") from None


def noisy_latent(x0, eps, t: int, schedule: NoiseSchedule) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    a = schedule.alpha_bar(t)
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


class Denoiser(Protocol):
    def __call__(self, x_t: np.ndarray, t: int, cond: SgEmbedding) -> np.ndarray: ...


class ToyLinearDenoiser:
    """``pred = A x_t + B mean(cond) + (t / n_steps) c``.

    ``vjp_cond`` gives the gradient w.r.t. every conditioning vector, which is
    all the loss needs to differentiate through the encoder.
    """

    def __init__(self, a: np.ndarray, b: np.ndarray, c: np.ndarray, n_steps: int = 1000):
        self.a, self.b, self.c = (np.asarray(m, dtype=np.float64) for m in (a, b, c))
        self.n_steps = n_steps

    @classmethod
    def random(cls, latent_dim: int, cond_dim: int, seed: int = 0, n_steps: int = 1000) -> "ToyLinearDenoiser":
        rng = np.random.Generator(np.random.PCG64(seed))
        return cls(rng.standard_normal((latent_dim, latent_dim)) / np.sqrt(latent_dim),
                   rng.standard_normal((latent_dim, cond_dim)),
                   rng.standard_normal(latent_dim), n_steps)

    @staticmethod
    def _pool(cond: SgEmbedding, dim: int) -> np.ndarray:
        if len(cond) == 0:
            return np.zeros(dim)
        return cond.vectors.mean(axis=0)

    def __call__(self, x_t, t, cond):
        return self.a @ x_t + self.b @ self._pool(cond, self.b.shape[1]) + (t / self.n_steps) * self.c

    def vjp_cond(self, x_t, t, cond, g_pred):
        n = len(cond)
        if n == 0:
            return np.zeros((0, self.b.shape[1]))
        return np.tile(self.b.T @ g_pred / n, (n, 1))


def _mse(eps, pred) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != eps.shape:
        raise ValueError(f"denoiser output shape {pred.shape} != noise shape {eps.shape}")
    return float(np.mean((eps - pred) ** 2))


def sg_loss(x0, eps, t: int, schedule: NoiseSchedule, denoiser: Denoiser, graph: SceneGraph,
            backend: EmbeddingBackend, params: EncoderParams) -> float:
    """Mean squared error between the injected noise and the prediction."""
    eps = np.asarray(eps, dtype=np.float64)
    x_t = noisy_latent(x0, eps, t, schedule)
    cond = _forward(prepare(graph, backend), params).embedding
    return _mse(eps, denoiser(x_t, t, cond))


@dataclass
class LossConfig:
    x0: np.ndarray
    eps: np.ndarray
    t: int
    schedule: NoiseSchedule
    denoiser: Denoiser
    backend: EmbeddingBackend


def loss_from_inputs(inputs: _Inputs, params: EncoderParams, cfg: LossConfig) -> float:
    eps = np.asarray(cfg.eps, dtype=np.float64)
    x_t = noisy_latent(cfg.x0, eps, cfg.t, cfg.schedule)
    cond = _forward(inputs, params).embedding
    return _mse(eps, cfg.denoiser(x_t, cfg.t, cond))


def loss_and_grad(inputs: _Inputs, params: EncoderParams, cfg: LossConfig):
    """Loss plus analytic gradients: ``(loss, g_alpha, layer_grads)``."""
    if not hasattr(cfg.denoiser, "vjp_cond"):
        raise TypeError("denoiser does not expose vjp_cond; gradients unavailable")
    eps = np.asarray(cfg.eps, dtype=np.float64)
    x_t = noisy_latent(cfg.x0, eps, cfg.t, cfg.schedule)
    fwd = _forward(inputs, params)
    pred = np.asarray(cfg.denoiser(x_t, cfg.t, fwd.embedding), dtype=np.float64)
    loss = _mse(eps, pred)
    g_pred = -2.0 * (eps - pred) / eps.size
    g_vectors = cfg.denoiser.vjp_cond(x_t, cfg.t, fwd.embedding, g_pred)
    g_alpha, layer_grads = _backward(inputs, params, fwd, g_vectors)
    return loss, g_alpha, layer_grads
