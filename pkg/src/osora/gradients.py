"""Analytic gradients of the probe-set squared-error loss, plus a finite-difference oracle.

The loss over n probe columns X (k x n) with targets Y (d x n) is

    L = 1/(2n) * sum_i ||forward(x_i) - y_i||^2

so the gradient with respect to the dense update is G = (1/n) (pred - Y) X^T.
Per-method gradients chain G through each parameterization. For the svd-based
adapters the two diagonal extractions are

    dL/ds_r = diag(u_r^T diag(o) G v_r)
    dL/do   = diag(G v_r diag(s_r) u_r^T)   (rowwise sum of G * u_r diag(s_r) v_r^T)

and the dora-style magnitude rescale contributes the usual normalized-row
Jacobian (the row-norm denominator is differentiated, not detached).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapters import (
    AdapterState,
    clone_state,
    effective_weight,
    forward,
    trainable_slots,
    trainable_vector,
    load_trainable,
)
from .errors import DimensionMismatch, MethodMismatch

FD_STEP = 1e-6


@dataclass
class LossGrad:
    """Loss value plus per-tensor gradient slices, keyed in flat-layout order."""

    loss: float
    slices: dict[str, np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.slices.values()])


def _check_probes(state: AdapterState, x_probes, y_targets) -> tuple[np.ndarray, np.ndarray]:
    x = np.ascontiguousarray(x_probes, dtype=np.float64)
    y = np.ascontiguousarray(y_targets, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise DimensionMismatch(f"probe/target column counts differ: {x.shape} vs {y.shape}")
    if x.shape[0] != state.k or y.shape[0] != state.d:
        raise DimensionMismatch(f"expected probes {state.k} x n and targets {state.d} x n")
    return x, y


def loss_mse(state: AdapterState, x_probes, y_targets) -> float:
    x, y = _check_probes(state, x_probes, y_targets)
    resid = forward(state, x) - y
    return 0.5 / x.shape[1] * float((resid * resid).sum())


def _loss_and_update_grad(state, x, y):
    resid = forward(state, x) - y
    n = x.shape[1]
    loss = 0.5 / n * float((resid * resid).sum())
    return loss, (resid @ x.T) / n


def _select(state: AdapterState, full: dict[str, np.ndarray], loss: float) -> LossGrad:
    return LossGrad(loss=loss, slices={name: full[name] for name in trainable_slots(state)})


def grad_osora(state: AdapterState, x_probes, y_targets) -> LossGrad:
    """Gradients for the osora / osora_k parameterizations."""
    if state.method.tag not in ("osora", "osora_k"):
        raise MethodMismatch(f"grad_osora needs osora or osora_k, got {state.method.tag!r}")
    x, y = _check_probes(state, x_probes, y_targets)
    loss, g = _loss_and_update_grad(state, x, y)
    u, v = state.frozen["u_r"], state.frozen["v_r"]
    s, o = state.trainable["s_r"], state.trainable["o"]
    if state.method.tag == "osora":
        g_s = ((u * o[:, None]).T @ g @ v).diagonal().copy()
        g_o = (g * ((u * s) @ v.T)).sum(axis=1)
    else:
        g_s = (u.T @ (g * o[None, :]) @ v).diagonal().copy()
        g_o = (g * ((u * s) @ v.T)).sum(axis=0)
    return _select(state, {"s_r": g_s, "o": g_o}, loss)


def _dora_chain(state, g):
    # Backprop through row-wise rescale w_final[i] = m_i * w_eff[i] / ||w_eff[i]||.
    w_eff = effective_weight(state)
    norms = np.sqrt((w_eff * w_eff).sum(axis=1))
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = np.where(norms[:, None] > 0.0, w_eff / safe[:, None], 0.0)
    g_m = (g * unit).sum(axis=1)
    scale = np.where(norms > 0.0, state.trainable["m"] / safe, 0.0)
    g_eff = scale[:, None] * (g - g_m[:, None] * unit)
    return g_eff, g_m


def grad_generic(state: AdapterState, x_probes, y_targets) -> LossGrad:
    """Gradients for lora, vera, pissa, dora, and osora_dora trainables."""
    tag = state.method.tag
    if tag in ("osora", "osora_k"):
        raise MethodMismatch("use grad_osora for osora / osora_k")
    x, y = _check_probes(state, x_probes, y_targets)
    loss, g = _loss_and_update_grad(state, x, y)
    t, fz = state.trainable, state.frozen

    if tag in ("lora", "pissa"):
        return _select(state, {"a": t["b"].T @ g, "b": g @ t["a"].T}, loss)

    if tag == "vera":
        a, b = fz["a_base"], fz["b_base"]
        g_d = ((b * t["b_vec"][:, None]).T @ g @ a.T).diagonal().copy()
        g_b = (g * (b @ (t["d_vec"][:, None] * a))).sum(axis=1)
        return _select(state, {"d_vec": g_d, "b_vec": g_b}, loss)

    g_eff, g_m = _dora_chain(state, g)
    if tag == "dora":
        return _select(state, {"a": t["b"].T @ g_eff, "b": g_eff @ t["a"].T, "m": g_m}, loss)
    # osora_dora
    u, v = fz["u_r"], fz["v_r"]
    s, o = t["s_r"], t["o"]
    g_s = ((u * o[:, None]).T @ g_eff @ v).diagonal().copy()
    g_o = (g_eff * ((u * s) @ v.T)).sum(axis=1)
    return _select(state, {"s_r": g_s, "o": g_o, "m": g_m}, loss)


def gradient(state: AdapterState, x_probes, y_targets) -> LossGrad:
    """Analytic gradient for any method (dispatches on the tag)."""
    if state.method.tag in ("osora", "osora_k"):
        return grad_osora(state, x_probes, y_targets)
    return grad_generic(state, x_probes, y_targets)


def finite_diff(state: AdapterState, x_probes, y_targets, h: float = FD_STEP) -> LossGrad:
    """Central-difference gradient over the flat trainable vector."""
    if h <= 0.0:
        raise ValueError(f"step must be positive, got {h}")
    x, y = _check_probes(state, x_probes, y_targets)
    work = clone_state(state)
    theta0 = trainable_vector(work)
    loss0 = loss_mse(work, x, y)
    grad = np.empty_like(theta0)
    theta = theta0.copy()
    for i in range(theta0.size):
        theta[i] = theta0[i] + h
        load_trainable(work, theta)
        loss_plus = loss_mse(work, x, y)
        theta[i] = theta0[i] - h
        load_trainable(work, theta)
        loss_minus = loss_mse(work, x, y)
        theta[i] = theta0[i]
        grad[i] = (loss_plus - loss_minus) / (2.0 * h)
    slices: dict[str, np.ndarray] = {}
    pos = 0
    for name in trainable_slots(state):
        shape = state.trainable[name].shape
        n = state.trainable[name].size
        slices[name] = grad[pos : pos + n].reshape(shape).copy()
        pos += n
    return LossGrad(loss=loss0, slices=slices)
