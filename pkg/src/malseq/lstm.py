"""Batched single-layer LSTM with hand-written backpropagation through time.

Gate layout along the last axis of the weight matrices is
``[input, forget, output, candidate]``, each of width ``H``.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def init_cell(rng: np.random.Generator, v: int, h: int, scale: float = 0.08, forget_bias: float = 1.0) -> dict[str, np.ndarray]:
    b = np.zeros(4 * h)
    b[h : 2 * h] = forget_bias
    return {
        "Wx": rng.uniform(-scale, scale, (v, 4 * h)),
        "Wh": rng.uniform(-scale, scale, (h, 4 * h)),
        "b": b,
    }


def forward(x: np.ndarray, cell: dict[str, np.ndarray]) -> tuple[np.ndarray, dict]:
    """Run the cell over ``x`` of shape (B, T, v) from zero state.

    Returns hidden states (B, T, H) and the cache needed by :func:`backward`.
    """
    B, T, _ = x.shape
    Wh = cell["Wh"]
    H = Wh.shape[0]
    xp = x @ cell["Wx"] + cell["b"]
    gates = np.empty((B, T, 4 * H))
    cs = np.empty((B, T, H))
    tcs = np.empty((B, T, H))
    hs = np.empty((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        z = xp[:, t] + h @ Wh
        g = gates[:, t]
        g[:, : 3 * H] = sigmoid(z[:, : 3 * H])
        g[:, 3 * H :] = np.tanh(z[:, 3 * H :])
        c = g[:, H : 2 * H] * c + g[:, :H] * g[:, 3 * H :]
        tc = np.tanh(c)
        h = g[:, 2 * H : 3 * H] * tc
        cs[:, t] = c
        tcs[:, t] = tc
        hs[:, t] = h
    return hs, {"x": x, "gates": gates, "c": cs, "tc": tcs, "h": hs}


def backward(dhs: np.ndarray, cache: dict, cell: dict[str, np.ndarray], need_dx: bool = False):
    """Gradients of the cell parameters (and optionally inputs) given dLoss/dh."""
    x, gates, cs, tcs, hs = cache["x"], cache["gates"], cache["c"], cache["tc"], cache["h"]
    B, T, v = x.shape
    Wh = cell["Wh"]
    H = Wh.shape[0]
    dz_all = np.empty((B, T, 4 * H))
    dWh = np.zeros_like(Wh)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    zeros = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = gates[:, t]
        i, f, o, cand = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
        tc = tcs[:, t]
        c_prev = cs[:, t - 1] if t > 0 else zeros
        h_prev = hs[:, t - 1] if t > 0 else zeros
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dz_all[:, t]
        dz[:, :H] = dc * cand * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H :] = dc * i * (1.0 - cand * cand)
        dc_next = dc * f
        dWh += h_prev.T @ dz
        dh_next = dz @ Wh.T
    flat = dz_all.reshape(B * T, 4 * H)
    grads = {
        "Wx": x.reshape(B * T, v).T @ flat,
        "Wh": dWh,
        "b": flat.sum(axis=0),
    }
    dx = (dz_all @ cell["Wx"].T) if need_dx else None
    return grads, dx
