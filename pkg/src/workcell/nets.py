"""Dense networks with hand-written reverse-mode gradients.

Every learned function in this project is a stack of (matmul -> layer
norm -> GELU) layers.  Prediction heads append one plain linear layer so
their outputs are unbounded.  Forward passes record the intermediates
needed for an exact backward pass; no external autodiff is involved.

The layer-norm/GELU block and its backward are fused numba kernels: the
learner calls them hundreds of thousands of times on short rows, where
separate numpy passes (and scipy's erf) dominate the step time.  Rows are
processed independently, so the parallel loops stay bit-deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

LN_EPS = 1e-5
_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


@njit(cache=True)
def _ln_gelu_forward(z, gain, shift, out, xhat, inv_std, a, phi):
    n, w = z.shape
    for i in range(n):
        mu = 0.0
        for j in range(w):
            mu += z[i, j]
        mu /= w
        var = 0.0
        for j in range(w):
            d = z[i, j] - mu
            var += d * d
        var /= w
        inv = 1.0 / math.sqrt(var + LN_EPS)
        inv_std[i] = inv
        for j in range(w):
            xh = (z[i, j] - mu) * inv
            xhat[i, j] = xh
            av = xh * gain[j] + shift[j]
            a[i, j] = av
            ph = 0.5 * (1.0 + math.erf(av * _INV_SQRT2))
            phi[i, j] = ph
            out[i, j] = av * ph


@njit(cache=True)
def _ln_gelu_backward(dy, a, phi, xhat, inv_std, gain, da, dz):
    # gelu'(a) = phi(a) + a * pdf(a); then the exact layer-norm backward
    n, w = dy.shape
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(w):
            av = a[i, j]
            d = dy[i, j] * (phi[i, j]
                            + av * math.exp(-0.5 * av * av) * _INV_SQRT2PI)
            da[i, j] = d
            dxh = d * gain[j]
            dz[i, j] = dxh            # stash dxhat, finish below
            m1 += dxh
            m2 += dxh * xhat[i, j]
        m1 /= w
        m2 /= w
        inv = inv_std[i]
        for j in range(w):
            dz[i, j] = inv * (dz[i, j] - m1 - xhat[i, j] * m2)


@dataclass
class DenseLayer:
    """One layer: y = act(ln(x @ w.T + b)).  Arrays double as gradient slots."""

    w: np.ndarray      # [out, in]
    b: np.ndarray      # [out]
    gain: np.ndarray   # [out], layer-norm scale
    shift: np.ndarray  # [out], layer-norm offset


@dataclass
class MlpParams:
    layers: list[DenseLayer]
    activate_last: bool  # False: final layer is plain linear (no LN, no GELU)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def in_width(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def out_width(self) -> int:
        return self.layers[-1].w.shape[0]

    def arrays(self):
        """All parameter arrays in a fixed, documented order."""
        for layer in self.layers:
            yield layer.w
            yield layer.b
            yield layer.gain
            yield layer.shift

    def copy(self) -> "MlpParams":
        return MlpParams(
            [DenseLayer(l.w.copy(), l.b.copy(), l.gain.copy(), l.shift.copy())
             for l in self.layers],
            self.activate_last,
        )


@dataclass
class GradientTape:
    """Per-layer intermediates from one forward call.

    Entries are None on plain (final linear) layers.
    """

    params: MlpParams
    x_in: list[np.ndarray] = field(default_factory=list)    # layer inputs
    xhat: list = field(default_factory=list)                # normalized pre-affine
    inv_std: list = field(default_factory=list)
    a: list = field(default_factory=list)                   # pre-GELU
    phi: list = field(default_factory=list)                 # gaussian cdf of a
    out_shape: tuple = ()
    squeezed: bool = False


def init_mlp(sizes, rng: np.random.Generator, activate_last: bool = True,
             dtype=np.float32) -> MlpParams:
    """Fan-in scaled uniform weights, zero biases, unit gain, zero shift."""
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)
        layers.append(DenseLayer(
            w,
            np.zeros(fan_out, dtype=dtype),
            np.ones(fan_out, dtype=dtype),
            np.zeros(fan_out, dtype=dtype),
        ))
    return MlpParams(layers, activate_last)


def make_mlp(in_width: int, width: int, depth: int, rng: np.random.Generator,
             out_width: int | None = None, dtype=np.float32) -> MlpParams:
    """MLP(width, depth) per the shape convention used in configs.

    out_width=None builds an embedding/update function (all layers
    activated, output width = width).  Otherwise a prediction head: depth
    activated layers of `width` plus a plain linear readout to out_width.
    """
    sizes = [in_width] + [width] * depth
    if out_width is None:
        return init_mlp(sizes, rng, activate_last=True, dtype=dtype)
    return init_mlp(sizes + [out_width], rng, activate_last=False, dtype=dtype)


def gelu(x: np.ndarray) -> np.ndarray:
    from scipy.special import erf
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    from scipy.special import erf
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * pdf


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, GradientTape]:
    """Run the stack on a (batch, in) matrix or a single (in,) vector."""
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.shape[1] != params.in_width:
        raise ValueError(
            f"input width {x.shape[1]} does not match mlp input {params.in_width}")
    x = np.ascontiguousarray(x, dtype=params.layers[0].w.dtype)

    tape = GradientTape(params, squeezed=squeezed)
    n = len(params.layers)
    for i, layer in enumerate(params.layers):
        plain = (i == n - 1) and not params.activate_last
        tape.x_in.append(x)
        z = x @ layer.w.T + layer.b
        if plain:
            tape.xhat.append(None)
            tape.inv_std.append(None)
            tape.a.append(None)
            tape.phi.append(None)
            x = z
        else:
            out = np.empty_like(z)
            xhat = np.empty_like(z)
            a = np.empty_like(z)
            phi = np.empty_like(z)
            inv_std = np.empty(z.shape[0], dtype=z.dtype)
            _ln_gelu_forward(z, layer.gain, layer.shift, out, xhat, inv_std,
                             a, phi)
            tape.xhat.append(xhat)
            tape.inv_std.append(inv_std)
            tape.a.append(a)
            tape.phi.append(phi)
            x = out
    tape.out_shape = x.shape
    return (x[0] if squeezed else x), tape


def mlp_backward(tape: GradientTape, dy: np.ndarray) -> tuple[MlpParams, np.ndarray]:
    """Gradients of a scalar loss w.r.t. parameters and the input.

    dy is dloss/doutput with the same shape the forward call returned.
    Returns (parameter gradients shaped like MlpParams, input gradient).
    """
    if tape.squeezed:
        dy = np.asarray(dy)[None, :]
    dy = np.asarray(dy, dtype=tape.x_in[0].dtype)
    if dy.shape != tape.out_shape:
        raise ValueError(f"gradient shape {dy.shape} does not match forward "
                         f"output {tape.out_shape}")

    params = tape.params
    grads = []
    dx = np.ascontiguousarray(dy)
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        x_in = tape.x_in[i]
        if tape.a[i] is None:
            dz = dx
            dgain = np.zeros_like(layer.gain)
            dshift = np.zeros_like(layer.shift)
        else:
            da = np.empty_like(dx)
            dz = np.empty_like(dx)
            _ln_gelu_backward(dx, tape.a[i], tape.phi[i], tape.xhat[i],
                              tape.inv_std[i], layer.gain, da, dz)
            dgain = np.einsum("bi,bi->i", da, tape.xhat[i])
            dshift = da.sum(axis=0)
        dw = dz.T @ x_in
        db = dz.sum(axis=0)
        dx = dz @ layer.w
        grads.append(DenseLayer(dw, db, dgain, dshift))
    grads.reverse()
    return MlpParams(grads, params.activate_last), (dx[0] if tape.squeezed else dx)


def zeros_like_params(params: MlpParams) -> MlpParams:
    return MlpParams(
        [DenseLayer(np.zeros_like(l.w), np.zeros_like(l.b),
                    np.zeros_like(l.gain), np.zeros_like(l.shift))
         for l in params.layers],
        params.activate_last,
    )


def accumulate_grads(total: MlpParams, extra: MlpParams) -> None:
    for t, e in zip(total.layers, extra.layers):
        t.w += e.w
        t.b += e.b
        t.gain += e.gain
        t.shift += e.shift


def grads_finite(grads: MlpParams) -> bool:
    return all(np.all(np.isfinite(a)) for a in grads.arrays())


@dataclass
class OptimizerState:
    """Adam accumulators plus the stepped learning-rate schedule."""

    m: MlpParams
    v: MlpParams
    step: int
    lr: float
    lr_decay: float          # multiplicative, applied per 100k steps
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @property
    def effective_lr(self) -> float:
        return self.lr * self.lr_decay ** (self.step // 100_000)


def adam_init(params: MlpParams, lr: float, lr_decay: float = 1.0) -> OptimizerState:
    return OptimizerState(zeros_like_params(params), zeros_like_params(params),
                          0, lr, lr_decay)


def optimizer_step(state: OptimizerState, params: MlpParams,
                   grads: MlpParams) -> bool:
    """Adam update in place.  Returns False (step skipped) on non-finite grads."""
    if not grads_finite(grads):
        return False
    state.step += 1
    lr = state.effective_lr
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params.layers, grads.layers, state.m.layers,
                          state.v.layers):
        for name in ("w", "b", "gain", "shift"):
            pa = getattr(p, name)
            ga = getattr(g, name)
            ma = getattr(m, name)
            va = getattr(v, name)
            ma *= state.beta1
            ma += (1.0 - state.beta1) * ga
            va *= state.beta2
            va += (1.0 - state.beta2) * ga * ga
            pa -= lr * (ma / c1) / (np.sqrt(va / c2) + state.eps)
    return True


def polyak_update(target: MlpParams, online: MlpParams, tau: float) -> None:
    """target <- (1 - tau) * target + tau * online, elementwise, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    for t, o in zip(target.layers, online.layers):
        for name in ("w", "b", "gain", "shift"):
            ta = getattr(t, name)
            oa = getattr(o, name)
            if ta.shape != oa.shape:
                raise ValueError("parameter shapes do not match")
            ta *= 1.0 - tau
            ta += tau * oa


def num_params(params: MlpParams) -> int:
    return sum(a.size for a in params.arrays())


def get_flat(params: MlpParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in params.arrays()])


def set_flat(params: MlpParams, flat: np.ndarray) -> None:
    i = 0
    for a in params.arrays():
        a[...] = flat[i:i + a.size].reshape(a.shape)
        i += a.size
    if i != flat.size:
        raise ValueError("flat vector size does not match parameter count")
