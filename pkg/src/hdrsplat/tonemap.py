"""Tone-mapper bank: per-channel global MLP, residual MLP, uncertainty MLP.

The global mapper g turns log-exposure ln(e*t) into an LDR value per RGB
channel. The residual mapper adds a context-conditioned correction

    c* = clip(g(ln(et)) + dg([ln(et), f]), 0, 1)

and a shared uncertainty head predicts a per-sample confidence

    u = max(softplus(rho([ln(et) (3 channels), f])), 0.1).

All MLPs are one hidden ReLU layer of 64 units with manual forward/backward;
forward calls return tapes consumed exactly once by their backward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decisions import DecisionLog
from .field import sigmoid

HIDDEN = 64
UNCERTAINTY_FLOOR = 0.1
UNIT_EXPOSURE_TARGET = 0.73


def softplus(x):
    return np.logaddexp(0.0, x)


class Mlp:
    """One-hidden-layer perceptron with ReLU and a tagged output activation."""

    OUT_ACTS = ("sigmoid", "identity", "softplus")

    def __init__(self, in_size: int, out_size: int, out_act: str, rng=None, hidden: int = HIDDEN):
        if out_act not in self.OUT_ACTS:
            raise ValueError(f"unknown output activation {out_act!r}")
        self.in_size = in_size
        self.hidden = hidden
        self.out_size = out_size
        self.out_act = out_act
        if rng is None:
            self.w1 = np.zeros((in_size, hidden))
            self.w2 = np.zeros((hidden, out_size))
        else:
            lim1 = np.sqrt(6.0 / (in_size + hidden))
            lim2 = np.sqrt(6.0 / (hidden + out_size))
            self.w1 = rng.uniform(-lim1, lim1, size=(in_size, hidden))
            self.w2 = rng.uniform(-lim2, lim2, size=(hidden, out_size))
        self.b1 = np.zeros(hidden)
        self.b2 = np.zeros(out_size)
        self.gw1 = np.zeros_like(self.w1)
        self.gb1 = np.zeros_like(self.b1)
        self.gw2 = np.zeros_like(self.w2)
        self.gb2 = np.zeros_like(self.b2)

    def param_arrays(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def grad_arrays(self):
        return [self.gw1, self.gb1, self.gw2, self.gb2]

    def forward(self, x: np.ndarray, decisions: DecisionLog | None = None):
        """(n, in_size) -> ((n, out_size), tape)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_size:
            raise ValueError(
                f"MLP expected input shape (n, {self.in_size}), got {x.shape}"
            )
        pre1 = x @ self.w1 + self.b1
        h = np.maximum(pre1, 0.0)
        pre2 = h @ self.w2 + self.b2
        if self.out_act == "sigmoid":
            y = sigmoid(pre2)
        elif self.out_act == "softplus":
            y = softplus(pre2)
        else:
            y = pre2
        if decisions is not None:
            decisions.add_bits(pre1 > 0.0)
        return y, (x, pre1, h, pre2, y)

    def backward(self, tape, grad_y: np.ndarray, want_input_grad: bool = True):
        """Accumulate parameter gradients; optionally return dL/dx."""
        x, pre1, h, pre2, y = tape
        grad_y = np.asarray(grad_y, dtype=np.float64)
        if grad_y.shape != y.shape:
            raise ValueError("gradient shape does not match the forward tape")
        if self.out_act == "sigmoid":
            dpre2 = grad_y * y * (1.0 - y)
        elif self.out_act == "softplus":
            dpre2 = grad_y * sigmoid(pre2)
        else:
            dpre2 = grad_y
        self.gw2 += h.T @ dpre2
        self.gb2 += dpre2.sum(axis=0)
        dh = dpre2 @ self.w2.T
        dpre1 = np.where(pre1 > 0.0, dh, 0.0)
        self.gw1 += x.T @ dpre1
        self.gb1 += dpre1.sum(axis=0)
        if want_input_grad:
            return dpre1 @ self.w1.T
        return None


def mlp_forward(m: Mlp, x: np.ndarray):
    """Single-vector convenience wrapper: x (in_size,) -> (y, tape)."""
    y, tape = m.forward(np.asarray(x, dtype=np.float64)[None, :])
    return y[0], tape


@dataclass
class ToneTape:
    """Forward state of one tone_map_local batch call."""

    g_tapes: list
    dg_tapes: list | None
    pass_mask: np.ndarray | None  # (n, 3) clip pass-through, None when residual off
    residual: bool
    n: int


@dataclass
class UncTape:
    rho_tape: tuple
    pass_mask: np.ndarray  # (n,) floor pass-through
    n: int


class ToneMapperBank:
    """Three global mappers, three residual mappers, one shared uncertainty head."""

    def __init__(self, feature_dim: int = 4, seed: int = 0, residual_enabled: bool = False):
        rng = np.random.default_rng(seed)
        self.feature_dim = feature_dim
        self.g = [Mlp(1, 1, "sigmoid", rng) for _ in range(3)]
        self.dg = [Mlp(1 + feature_dim, 1, "identity", rng) for _ in range(3)]
        self.rho = Mlp(3 + feature_dim, 1, "softplus", rng)
        self.residual_enabled = residual_enabled

    def param_items(self):
        """(group name, param array, grad array) triples for the optimizer."""
        items = []
        for name, mlps in (("g", self.g), ("dg", self.dg), ("rho", [self.rho])):
            for m in mlps:
                for p, gr in zip(m.param_arrays(), m.grad_arrays()):
                    items.append((name, p, gr))
        return items

    def zero_grad(self):
        for _, _, gr in self.param_items():
            gr.fill(0.0)

    # -- local tone mapping ------------------------------------------------

    def tone_map_global_batch(self, ln_et: np.ndarray, decisions=None):
        ln_et = np.atleast_2d(np.asarray(ln_et, dtype=np.float64))
        ldr = np.empty_like(ln_et)
        tapes = []
        for k in range(3):
            y, tape = self.g[k].forward(ln_et[:, k : k + 1], decisions)
            ldr[:, k] = y[:, 0]
            tapes.append(tape)
        return ldr, ToneTape(g_tapes=tapes, dg_tapes=None, pass_mask=None, residual=False, n=ln_et.shape[0])

    def tone_map_local_batch(self, ln_et: np.ndarray, f: np.ndarray, decisions=None):
        """clip(g + dg) per channel; exactly the global path when residual is off."""
        if not self.residual_enabled:
            return self.tone_map_global_batch(ln_et, decisions)
        ln_et = np.atleast_2d(np.asarray(ln_et, dtype=np.float64))
        f = np.atleast_2d(np.asarray(f, dtype=np.float64))
        if f.shape != (ln_et.shape[0], self.feature_dim):
            raise ValueError("feature batch shape mismatch")
        ldr = np.empty_like(ln_et)
        g_tapes, dg_tapes = [], []
        raw = np.empty_like(ln_et)
        for k in range(3):
            yg, tg = self.g[k].forward(ln_et[:, k : k + 1], decisions)
            yd, td = self.dg[k].forward(
                np.concatenate([ln_et[:, k : k + 1], f], axis=1), decisions
            )
            raw[:, k] = yg[:, 0] + yd[:, 0]
            g_tapes.append(tg)
            dg_tapes.append(td)
        pass_mask = (raw > 0.0) & (raw < 1.0)
        if decisions is not None:
            decisions.add_bits(pass_mask)
        np.clip(raw, 0.0, 1.0, out=ldr)
        return ldr, ToneTape(
            g_tapes=g_tapes, dg_tapes=dg_tapes, pass_mask=pass_mask, residual=True, n=ln_et.shape[0]
        )

    def tone_map_local_backward_batch(self, tape: ToneTape, grad_ldr: np.ndarray):
        """Returns (grad_ln_et (n,3), grad_f (n,d)); accumulates g/dg gradients."""
        grad_ldr = np.atleast_2d(np.asarray(grad_ldr, dtype=np.float64))
        if grad_ldr.shape != (tape.n, 3):
            raise ValueError("grad_ldr shape does not match the forward tape")
        grad_ln = np.zeros((tape.n, 3))
        grad_f = np.zeros((tape.n, self.feature_dim))
        for k in range(3):
            up = grad_ldr[:, k : k + 1]
            if tape.residual:
                up = np.where(tape.pass_mask[:, k : k + 1], up, 0.0)
            gx = self.g[k].backward(tape.g_tapes[k], up)
            grad_ln[:, k] += gx[:, 0]
            if tape.residual:
                dx = self.dg[k].backward(tape.dg_tapes[k], up)
                grad_ln[:, k] += dx[:, 0]
                grad_f += dx[:, 1:]
        return grad_ln, grad_f

    # -- uncertainty ---------------------------------------------------------

    def predict_uncertainty_batch(self, ln_et: np.ndarray, f: np.ndarray, decisions=None):
        ln_et = np.atleast_2d(np.asarray(ln_et, dtype=np.float64))
        f = np.atleast_2d(np.asarray(f, dtype=np.float64))
        if f.shape != (ln_et.shape[0], self.feature_dim):
            raise ValueError("feature batch shape mismatch")
        sp, tape = self.rho.forward(np.concatenate([ln_et, f], axis=1), decisions)
        sp = sp[:, 0]
        pass_mask = sp > UNCERTAINTY_FLOOR
        if decisions is not None:
            decisions.add_bits(pass_mask)
        u = np.maximum(sp, UNCERTAINTY_FLOOR)
        return u, UncTape(rho_tape=tape, pass_mask=pass_mask, n=ln_et.shape[0])

    def predict_uncertainty_backward_batch(
        self, tape: UncTape, grad_u: np.ndarray, want_input_grad: bool = True
    ):
        """Returns (grad_ln_et, grad_f) or None; accumulates rho gradients.

        Samples at the 0.1 floor pass zero gradient everywhere.
        """
        grad_u = np.asarray(grad_u, dtype=np.float64)
        if grad_u.shape != (tape.n,):
            raise ValueError("grad_u shape does not match the forward tape")
        up = np.where(tape.pass_mask, grad_u, 0.0)[:, None]
        gx = self.rho.backward(tape.rho_tape, up, want_input_grad=want_input_grad)
        if not want_input_grad:
            return None
        return gx[:, :3], gx[:, 3:]

    # -- unit-exposure anchor -------------------------------------------------

    def unit_exposure_values(self):
        zero = np.zeros((1, 1))
        vals, tapes = [], []
        for k in range(3):
            y, t = self.g[k].forward(zero)
            vals.append(y[0, 0])
            tapes.append(t)
        return np.array(vals), tapes

    def unit_exposure_loss(self) -> float:
        vals, _ = self.unit_exposure_values()
        return float(np.sum((vals - UNIT_EXPOSURE_TARGET) ** 2))

    def unit_exposure_backward(self, scale: float = 1.0) -> float:
        """Accumulates d(scale * loss)/d(g params); returns the loss value."""
        vals, tapes = self.unit_exposure_values()
        for k in range(3):
            up = np.array([[2.0 * (vals[k] - UNIT_EXPOSURE_TARGET) * scale]])
            self.g[k].backward(tapes[k], up, want_input_grad=False)
        return float(np.sum((vals - UNIT_EXPOSURE_TARGET) ** 2))


# -- spec-level single-sample wrappers ---------------------------------------


def tone_map_global(bank: ToneMapperBank, ln_et) -> np.ndarray:
    ldr, _ = bank.tone_map_global_batch(np.asarray(ln_et, dtype=np.float64)[None, :])
    return ldr[0]


def tone_map_local(bank: ToneMapperBank, ln_et, f) -> np.ndarray:
    ldr, _ = bank.tone_map_local_batch(
        np.asarray(ln_et, dtype=np.float64)[None, :], np.asarray(f, dtype=np.float64)[None, :]
    )
    return ldr[0]


def predict_uncertainty(bank: ToneMapperBank, ln_et, f) -> float:
    u, _ = bank.predict_uncertainty_batch(
        np.asarray(ln_et, dtype=np.float64)[None, :], np.asarray(f, dtype=np.float64)[None, :]
    )
    return float(u[0])
