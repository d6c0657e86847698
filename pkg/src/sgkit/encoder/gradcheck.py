"""Analytic gradients of the loss versus central finite differences."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model import SceneGraph
from .assemble import prepare
from .diffusion import LossConfig, loss_and_grad, loss_from_inputs
from .gnn import EncoderParams


def relative_error(g_a, g_fd) -> float:
    """``|g_a - g_fd| / max(1e-8, |g_a| + |g_fd|)`` with Euclidean norms."""
    g_a = np.ravel(g_a)
    g_fd = np.ravel(g_fd)
    num = float(np.linalg.norm(g_a - g_fd))
    return num / max(1e-8, float(np.linalg.norm(g_a)) + float(np.linalg.norm(g_fd)))


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    analytic: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    numeric: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    loss: float = 0.0


def grad_check_report(graph: SceneGraph, params: EncoderParams, loss_config: LossConfig,
                      eps_fd: float = 1e-5) -> GradCheckResult:
    inputs = prepare(graph, loss_config.backend)
    loss, g_alpha, layer_grads = loss_and_grad(inputs, params, loss_config)
    analytic = {"alpha": np.array([g_alpha])}
    for i, grads in enumerate(layer_grads):
        for name, g in grads.items():
            analytic[f"layers.{i}.{name}"] = g

    work = params.copy()

    def f():
        return loss_from_inputs(inputs, work, loss_config)

    numeric = {}
    a0 = work.alpha
    work.alpha = a0 + eps_fd
    up = f()
    work.alpha = a0 - eps_fd
    down = f()
    work.alpha = a0
    numeric["alpha"] = np.array([(up - down) / (2 * eps_fd)])
    for name, arr in work.named_arrays():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + eps_fd
            up = f()
            flat[k] = old - eps_fd
            down = f()
            flat[k] = old
            gflat[k] = (up - down) / (2 * eps_fd)
        numeric[name] = g

    per = {name: relative_error(analytic[name], numeric[name]) for name in analytic}
    return GradCheckResult(max(per.values()), per, analytic, numeric, loss)


def grad_check(graph: SceneGraph, params: EncoderParams, loss_config: LossConfig, eps_fd: float = 1e-5) -> float:
    """Max relative error over parameter tensors (alpha and each layer weight)."""
    return grad_check_report(graph, params, loss_config, eps_fd).max_rel_error
