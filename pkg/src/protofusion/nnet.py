"""Dense-network numerics: forward/backward passes, Adam, gradient checking.

Everything is float64 numpy. A network is a plain list of :class:`Layer`;
``mlp_forward`` records a tape so ``mlp_backward`` can produce exact analytic
gradients, and ``grad_check`` verifies any loss-with-gradients function
against central finite differences. Inputs may be single vectors ``(d,)`` or
row batches ``(n, d)``; outputs mirror the input's shape.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

ACTIVATIONS = ("identity", "leaky_relu", "sigmoid")


@dataclass(frozen=True)
class Layer:
    """One dense layer ``y = act(W x + b)`` with ``weight`` shaped (out, in)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"
    slope: float = 0.2  # leaky_relu negative-side slope

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        if w.ndim != 2:
            raise ValueError(f"layer weight must be 2-D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(
                f"bias shape {b.shape} does not match weight output size {w.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not self.slope > 0:
            raise ValueError("leaky_relu slope must be > 0")

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


def init_layer(rng, n_in, n_out, activation="identity", slope=0.2) -> Layer:
    """Glorot-normal weight init, zero bias."""
    std = np.sqrt(2.0 / (n_in + n_out))
    weight = rng.standard_normal((n_out, n_in)) * std
    return Layer(weight, np.zeros(n_out), activation, slope)


@dataclass(frozen=True)
class Tape:
    """Cached activations from one forward pass: per layer (input, pre-act, output)."""

    records: tuple
    was_1d: bool


def _as_batch(x):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        return a[None, :], True
    if a.ndim == 2:
        return a, False
    raise ValueError(f"expected a vector or a row batch, got shape {a.shape}")


def _activate(z, layer: Layer):
    if layer.activation == "identity":
        return z
    if layer.activation == "leaky_relu":
        return np.where(z > 0, z, layer.slope * z)
    return sigmoid(z)


def _activation_grad(z, out, layer: Layer):
    if layer.activation == "identity":
        return np.ones_like(z)
    if layer.activation == "leaky_relu":
        return np.where(z > 0, 1.0, layer.slope)
    return out * (1.0 - out)


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mlp_forward(layers, x):
    """Run ``x`` through ``layers``; returns ``(output, tape)``.

    Raises ValueError on any dimension mismatch between the input and the
    first layer or between consecutive layers.
    """
    a, was_1d = _as_batch(x)
    records = []
    for i, layer in enumerate(layers):
        if a.shape[1] != layer.n_in:
            raise ValueError(
                f"layer {i} expects input size {layer.n_in}, got {a.shape[1]}"
            )
        z = a @ layer.weight.T + layer.bias
        out = _activate(z, layer)
        records.append((a, z, out))
        a = out
    tape = Tape(tuple(records), was_1d)
    return (a[0] if was_1d else a), tape


def mlp_backward(layers, tape: Tape, output_grad):
    """Backpropagate ``output_grad`` through a taped forward pass.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` is a list of
    ``(dW, db)`` aligned with ``layers``.
    """
    if len(tape.records) != len(layers):
        raise ValueError(
            f"tape has {len(tape.records)} records for {len(layers)} layers"
        )
    g, g1d = _as_batch(output_grad)
    if g1d != tape.was_1d:
        raise ValueError("output_grad shape does not match the taped forward pass")
    grads = [None] * len(layers)
    for i in reversed(range(len(layers))):
        a_in, z, out = tape.records[i]
        layer = layers[i]
        if layer.weight.shape != (z.shape[1], a_in.shape[1]):
            raise ValueError(f"layer {i} does not match the tape")
        if g.shape != z.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match layer {i} output {z.shape}"
            )
        dz = g * _activation_grad(z, out, layer)
        grads[i] = (dz.T @ a_in, dz.sum(axis=0))
        g = dz @ layer.weight
    return grads, (g[0] if tape.was_1d else g)


@dataclass(frozen=True)
class AdamState:
    """Adam moments and hyperparameters for one list of layers."""

    step: int
    m: tuple
    v: tuple
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step must be >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")


def adam_init(layers, lr, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    zeros = tuple(
        (np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in layers
    )
    return AdamState(0, zeros, tuple(
        (np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in layers
    ), lr, beta1, beta2, eps)


def adam_update(layers, grads, state: AdamState):
    """One bias-corrected Adam step; returns ``(new_layers, new_state)``."""
    if not (len(layers) == len(grads) == len(state.m)):
        raise ValueError("layers, grads and optimizer state are misaligned")
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new_layers, new_m, new_v = [], [], []
    for layer, grad, mom, sec in zip(layers, grads, state.m, state.v):
        dW, db = grad
        if dW.shape != layer.weight.shape or db.shape != layer.bias.shape:
            raise ValueError("gradient shapes do not match parameter shapes")
        pairs = []
        for p, g, m_old, v_old in (
            (layer.weight, dW, mom[0], sec[0]),
            (layer.bias, db, mom[1], sec[1]),
        ):
            m_new = state.beta1 * m_old + (1.0 - state.beta1) * g
            v_new = state.beta2 * v_old + (1.0 - state.beta2) * g * g
            p_new = p - state.lr * (m_new / c1) / (np.sqrt(v_new / c2) + state.eps)
            pairs.append((p_new, m_new, v_new))
        (w_new, mw, vw), (b_new, mb, vb) = pairs
        new_layers.append(replace(layer, weight=w_new, bias=b_new))
        new_m.append((mw, mb))
        new_v.append((vw, vb))
    return new_layers, replace(state, step=t, m=tuple(new_m), v=tuple(new_v))


def grad_check(loss_fn, params, h=1e-4):
    """Compare analytic gradients with central finite differences.

    ``loss_fn(params) -> (loss, grads)`` must be deterministic (freeze any
    noise before calling). Returns the max over all parameter entries of
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    _, analytic = loss_fn(params)
    worst = 0.0
    for li in range(len(params)):
        for slot in (0, 1):
            base = params[li].weight if slot == 0 else params[li].bias
            a_grad = np.asarray(analytic[li][slot], dtype=np.float64)
            it = np.nditer(base, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                f_plus, _ = loss_fn(_perturbed(params, li, slot, idx, +h))
                f_minus, _ = loss_fn(_perturbed(params, li, slot, idx, -h))
                numeric = (f_plus - f_minus) / (2.0 * h)
                err = abs(a_grad[idx] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
    return worst


def _perturbed(params, li, slot, idx, delta):
    layer = params[li]
    if slot == 0:
        w = layer.weight.copy()
        w[idx] += delta
        bumped = replace(layer, weight=w)
    else:
        b = layer.bias.copy()
        b[idx] += delta
        bumped = replace(layer, bias=b)
    out = list(params)
    out[li] = bumped
    return out


def cosine_distance(a, b) -> float:
    """``1 - cos(a, b)``, clamped into [0, 2]. Zero-norm inputs are an error."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.ndim != 1 or av.shape != bv.shape:
        raise ValueError(f"expected equal-length vectors, got {av.shape} and {bv.shape}")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine distance is undefined for zero-norm vectors")
    d = 1.0 - float(av @ bv) / (na * nb)
    return min(2.0, max(0.0, d))
