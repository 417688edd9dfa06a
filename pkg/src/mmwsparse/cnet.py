"""Complex-valued convolutional network with a small reverse-mode tape.

Tensors are numpy complex arrays.  The public layer functions take
``(batch, channels, height, width)`` arrays; the network itself runs in
channels-last layout so every 3x3 convolution becomes nine matrix products.

Gradients of a real loss ``L`` with respect to a complex quantity ``z`` follow
``dL/dRe(z) + 1j * dL/dIm(z)``.  With that convention a complex-linear map
``y = A z`` back-propagates as ``g_z = A^H g_y``.

Convolutions are cross-correlations (no kernel flip), stride 1, zero padding
``kernel_size // 2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class NetworkConfig:
    hidden: int = 32
    n_blocks: int = 5
    kernel_size: int = 3
    stride: int = 1
    padding: int = 1
    bn_eps: float = BN_EPS
    bn_momentum: float = BN_MOMENTUM
    dtype: str = "complex64"

    def __post_init__(self):
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        if self.stride != 1 or self.padding != self.kernel_size // 2:
            raise ValueError("only stride 1 with size-preserving padding is supported")
        if self.n_blocks < 1 or self.hidden < 1:
            raise ValueError("need at least one res-block and one hidden channel")
        if self.dtype not in ("complex64", "complex128", "clongdouble"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")


class Var:
    """A tensor on the tape.  ``name`` is set for parameters only."""

    __slots__ = ("data", "name")

    def __init__(self, data: np.ndarray, name: str | None = None):
        self.data = data
        self.name = name


@dataclass
class BNState:
    """Running statistics of one complex batch-norm layer."""

    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def initial(cls, channels: int) -> "BNState":
        return cls(np.zeros(channels, complex), np.tile(np.eye(2), (channels, 1, 1)))


class Tape:
    """Records backward closures in execution order."""

    def __init__(self):
        self.ops: list[tuple[Var, tuple[Var, ...], Callable]] = []
        self.params: dict[str, Var] = {}

    def record(self, out: Var, inputs: tuple[Var, ...], fn: Callable) -> None:
        self.ops.append((out, inputs, fn))

    def param(self, name: str, data: np.ndarray) -> Var:
        var = Var(data, name)
        self.params[name] = var
        return var


def backward(loss_grad: np.ndarray, tape: Tape, output: Var | None = None) -> dict[str, np.ndarray]:
    """Propagate ``loss_grad`` (gradient w.r.t. the tape output) to parameters.

    ``output`` defaults to the result of the last recorded op.  Parameters that
    do not influence the output get zero gradients.
    """
    if not tape.ops:
        raise ValueError("tape is empty; run a forward pass with recording first")
    output = output if output is not None else tape.ops[-1][0]
    loss_grad = np.asarray(loss_grad)
    if loss_grad.shape != output.data.shape:
        raise ValueError(f"loss gradient shape {loss_grad.shape} does not match output {output.data.shape}")
    grads: dict[int, np.ndarray] = {id(output): loss_grad.astype(output.data.dtype, copy=False)}
    for out, inputs, fn in reversed(tape.ops):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for var, gi in zip(inputs, fn(g)):
            if gi is None:
                continue
            key = id(var)
            grads[key] = grads[key] + gi if key in grads else gi
    return {
        name: grads.get(id(var), np.zeros_like(var.data)).astype(var.data.dtype, copy=False)
        for name, var in tape.params.items()
    }


# --- channels-last primitives -------------------------------------------------


def conv(x: Var, kernel: Var, bias: Var | None, tape: Tape | None) -> Var:
    """Complex 'same' convolution (cross-correlation, odd kernels, stride 1).

    The zero-padded input is flattened to rows of length ``W + 2 pw``; every
    kernel tap then reads a contiguous shifted slice of it, so all products are
    plain BLAS matrix multiplies.  Outputs are computed on the padded grid and
    cropped.
    """
    k = kernel.data
    c_out, c_in, kh, kw = k.shape
    b, h, w, c = x.data.shape
    if c != c_in:
        raise ValueError(f"input has {c} channels, kernel expects {c_in}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel size must be odd")
    ph, pw = kh // 2, kw // 2
    hp, wp = h + 2 * ph, w + 2 * pw
    dtype = np.result_type(x.data, k)
    xp = np.pad(x.data.astype(dtype, copy=False), ((0, 0), (ph, ph), (pw, pw), (0, 0))).reshape(-1, c_in)
    total = xp.shape[0]
    offsets = [dy * wp + dx for dy in range(kh) for dx in range(kw)]
    n = total - offsets[-1]
    # (taps, c_in, c_out), contiguous per tap
    kt = np.ascontiguousarray(k.transpose(2, 3, 1, 0).reshape(-1, c_in, c_out), dtype=dtype)
    full = np.zeros((total, c_out), dtype)
    acc, tmp = full[:n], np.empty((n, c_out), dtype)
    for t, off in enumerate(offsets):
        np.matmul(xp[off:off + n], kt[t], out=tmp)
        acc += tmp
    out = full.reshape(b, hp, wp, c_out)[:, :h, :w]
    if bias is not None:
        out = out + bias.data
    y = Var(np.ascontiguousarray(out))

    if tape is not None:
        def grad_fn(g):
            gfull = np.zeros((b, hp, wp, c_out), dtype)
            gfull[:, :h, :w] = g
            gn = gfull.reshape(-1, c_out)[:n]
            # conj(gk) = conj(g)^T xp avoids conjugating every shifted slice
            gnh = np.ascontiguousarray(gn.T.conj())
            kc = np.ascontiguousarray(kt.transpose(0, 2, 1).conj())
            gxp = np.zeros_like(xp)
            gk = np.empty((len(offsets), c_out, c_in), dtype)
            tmp = np.empty((n, c_in), dtype)
            for t, off in enumerate(offsets):
                np.matmul(gnh, xp[off:off + n], out=gk[t])
                np.matmul(gn, kc[t], out=tmp)
                gxp[off:off + n] += tmp
            gk = gk.conj().reshape(kh, kw, c_out, c_in).transpose(2, 3, 0, 1)
            gx = gxp.reshape(b, hp, wp, c_in)[:, ph:ph + h, pw:pw + w]
            gb = g.reshape(-1, c_out).sum(axis=0) if bias is not None else None
            return gx, gk.astype(k.dtype, copy=False), gb

        tape.record(y, (x, kernel, bias) if bias is not None else (x, kernel), grad_fn)
    return y


def crelu_var(x: Var, tape: Tape | None) -> Var:
    # rectify real and imaginary parts together through the interleaved float view
    flat = np.ascontiguousarray(x.data).view(x.data.real.dtype)
    y = Var(np.maximum(flat, 0).view(x.data.dtype))
    if tape is not None:
        keep = flat > 0

        def grad_fn(g):
            gf = np.ascontiguousarray(g).view(flat.dtype)
            return ((gf * keep).view(g.dtype),)

        tape.record(y, (x,), grad_fn)
    return y


def add(x: Var, y: Var, tape: Tape | None) -> Var:
    out = Var(x.data + y.data)
    if tape is not None:
        tape.record(out, (x, y), lambda g: (g, g))
    return out


def inv_sqrt_2x2(vrr, vri, vii):
    """Closed-form inverse square root of symmetric positive 2x2 matrices.

    Returns the entries ``(w11, w12, w22)`` plus the helpers ``s = sqrt(det)``
    and ``t = sqrt(trace + 2 s)`` used by the backward pass.
    """
    s = np.sqrt(vrr * vii - vri * vri)
    t = np.sqrt(vrr + vii + 2 * s)
    d = s * t
    return (vii + s) / d, -vri / d, (vrr + s) / d, s, t


def _colsum(a: np.ndarray) -> np.ndarray:
    # a GEMV against a ones vector is several times faster than ndarray.sum(axis=0)
    return np.ones(a.shape[0], a.dtype) @ a


def _mix(z: np.ndarray, a: np.ndarray, offset: np.ndarray | None = None) -> np.ndarray:
    """Apply per-channel real 2x2 matrices ``a`` (c, 2, 2) to the (re, im) pairs of ``z``.

    Written in widely-linear form ``p z + q conj(z)``, which needs far fewer
    passes over memory than working on strided real and imaginary parts.
    """
    p = (0.5 * (a[:, 0, 0] + a[:, 1, 1]) + 0.5j * (a[:, 1, 0] - a[:, 0, 1])).astype(z.dtype)
    q = (0.5 * (a[:, 0, 0] - a[:, 1, 1]) + 0.5j * (a[:, 1, 0] + a[:, 0, 1])).astype(z.dtype)
    out = z * p
    tmp = np.conj(z)
    tmp *= q
    out += tmp
    if offset is not None:
        out += offset.astype(z.dtype, copy=False)
    return out


def batchnorm(
    x: Var,
    gamma: Var,
    beta: Var,
    state: BNState | None,
    mode: str,
    tape: Tape | None,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> Var:
    b, h, w, c = x.data.shape
    flat = x.data.reshape(-1, c)
    m = flat.shape[0]
    rdt = flat.real.dtype
    gm = gamma.data
    if mode == "eval":
        if state is None:
            raise ValueError("eval mode needs running statistics")
        xc = flat - state.mean.astype(flat.dtype)
        cov = state.cov
        w11, w12, w22, _, _ = inv_sqrt_2x2(cov[:, 0, 0] + eps, cov[:, 0, 1], cov[:, 1, 1] + eps)
    elif mode == "train":
        if m < 2:
            raise ValueError("train-mode batch norm needs at least two samples per channel")
        mu = _colsum(flat) / m
        xc = flat - mu
        sq = _colsum(np.square(xc.view(rdt))).reshape(c, 2) / m
        vrr_d, vii_d = sq[:, 0], sq[:, 1]
        vri = _colsum(xc.real * xc.imag) / m
        vrr, vii = vrr_d + eps, vii_d + eps
        w11, w12, w22, s, t = inv_sqrt_2x2(vrr, vri, vii)
        if state is not None:
            batch_cov = np.stack([np.stack([vrr_d, vri], -1), np.stack([vri, vii_d], -1)], -2)
            state.mean = (1 - momentum) * state.mean + momentum * mu
            state.cov = (1 - momentum) * state.cov + momentum * batch_cov
    else:
        raise ValueError(f"unknown batch-norm mode {mode!r}")

    wm = np.stack([np.stack([w11, w12], -1), np.stack([w12, w22], -1)], -2)
    amat = (gm @ wm).astype(rdt, copy=False)
    xr, xi = xc.real, xc.imag
    y = Var(_mix(xc, amat, beta.data).reshape(b, h, w, c))

    if tape is not None:
        def grad_fn(g):
            g = g.reshape(-1, c)
            gr, gi = g.real, g.imag
            # cross moments C[r, t] = sum over samples of g_r * xc_t
            cm = np.empty((c, 2, 2), dtype=rdt)
            for r, gp in enumerate((gr, gi)):
                for t_, xp in enumerate((xr, xi)):
                    cm[:, r, t_] = _colsum(gp * xp)
            g_gamma = (cm @ wm).astype(gm.dtype, copy=False)
            g_beta = _colsum(g).astype(beta.data.dtype, copy=False)
            dmat = np.swapaxes(amat, 1, 2)
            if mode == "train":
                dw = np.swapaxes(gm, 1, 2) @ cm
                g11, g12, g22 = dw[:, 0, 0], dw[:, 0, 1] + dw[:, 1, 0], dw[:, 1, 1]
                d = s * t
                g_a = g11 * w11 + g12 * w12 + g22 * w22
                g_s = (g11 + g22) / d - g_a * (t + s / t) / d
                g_tr = -g_a * s / (2 * t * d)
                g_vrr = g22 / d + g_tr + g_s * vii / (2 * s)
                g_vii = g11 / d + g_tr + g_s * vrr / (2 * s)
                g_vri = -g12 / d - g_s * vri / s
                smat = np.stack([np.stack([2 * g_vrr, g_vri], -1), np.stack([g_vri, 2 * g_vii], -1)], -2) / m
                # the statistics path is linear in xc, whose sample mean is zero
                gx = _mix(g, dmat, _mix(-g_beta[None] / m, dmat)[0])
                gx += _mix(xc, smat)
            else:
                gx = _mix(g, dmat)
            return gx.astype(x.data.dtype, copy=False).reshape(b, h, w, c), g_gamma, g_beta

        tape.record(y, (x, gamma, beta), grad_fn)
    return y


# --- parameters ---------------------------------------------------------------


@dataclass
class NetworkParams:
    """Ordered parameter arrays plus batch-norm running statistics."""

    config: NetworkConfig
    arrays: dict[str, np.ndarray]
    bn_state: dict[str, BNState] = field(default_factory=dict)

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.config,
            {k: v.copy() for k, v in self.arrays.items()},
            {k: BNState(s.mean.copy(), s.cov.copy()) for k, s in self.bn_state.items()},
        )


def layer_names(config: NetworkConfig) -> list[str]:
    """Parameter names in declaration order."""
    names = ["in.conv.k", "in.conv.b", "in.bn.gamma", "in.bn.beta"]
    for i in range(config.n_blocks):
        for j in (1, 2):
            names += [f"block{i}.conv{j}.k", f"block{i}.conv{j}.b", f"block{i}.bn{j}.gamma", f"block{i}.bn{j}.beta"]
    names += ["out.conv.k", "out.conv.b"]
    return names


def _conv_shape(name: str, config: NetworkConfig) -> tuple[int, int]:
    c = config.hidden
    if name.startswith("in."):
        return c, 1
    if name.startswith("out."):
        return 1, c
    return c, c


def init_params(config: NetworkConfig, seed: int = 0) -> NetworkParams:
    """Kernels uniform in +-sqrt(1/fan_in) per real/imag part; gamma = I/sqrt(2)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    dtype = np.dtype(config.dtype)
    k = config.kernel_size
    arrays: dict[str, np.ndarray] = {}
    bn_state = {}
    for name in layer_names(config):
        c_out, c_in = _conv_shape(name, config)
        if name.endswith(".k"):
            bound = np.sqrt(1.0 / (c_in * k * k))
            shape = (c_out, c_in, k, k)
            arrays[name] = (rng.uniform(-bound, bound, shape) + 1j * rng.uniform(-bound, bound, shape)).astype(dtype)
        elif name.endswith(".b"):
            arrays[name] = np.zeros(c_out, dtype)
        elif name.endswith(".gamma"):
            arrays[name] = np.tile(np.eye(2) / np.sqrt(2), (config.hidden, 1, 1)).astype(_real_dtype(dtype))
            bn_state[name[: -len(".gamma")]] = BNState.initial(config.hidden)
        elif name.endswith(".beta"):
            arrays[name] = np.zeros(config.hidden, dtype)
    return NetworkParams(config, arrays, bn_state)


def _real_dtype(dtype: np.dtype) -> np.dtype:
    return np.empty(0, dtype).real.dtype


# --- network ------------------------------------------------------------------


def _nhwc(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(a, (0, 2, 3, 1)))


def _nchw(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(a, (0, 3, 1, 2)))


class Network:
    """Binds parameters to a tape for one forward pass."""

    def __init__(self, params: NetworkParams, tape: Tape | None = None, mode: str = "train"):
        self.params = params
        self.tape = tape
        self.mode = mode
        self.vars = {
            name: (tape.param(name, arr) if tape is not None else Var(arr, name))
            for name, arr in params.arrays.items()
        }

    def conv(self, x: Var, prefix: str) -> Var:
        return conv(x, self.vars[prefix + ".k"], self.vars[prefix + ".b"], self.tape)

    def bn(self, x: Var, prefix: str) -> Var:
        cfg = self.params.config
        return batchnorm(
            x, self.vars[prefix + ".gamma"], self.vars[prefix + ".beta"], self.params.bn_state.get(prefix),
            self.mode, self.tape, cfg.bn_eps, cfg.bn_momentum,
        )

    def resblock(self, x: Var, i: int) -> Var:
        p = f"block{i}"
        y = self.conv(x, p + ".conv1")
        y = self.bn(y, p + ".bn1")
        y = crelu_var(y, self.tape)
        y = self.conv(y, p + ".conv2")
        y = self.bn(y, p + ".bn2")
        return add(x, y, self.tape)

    def __call__(self, z: Var) -> Var:
        y = self.conv(z, "in.conv")
        y = self.bn(y, "in.bn")
        y = crelu_var(y, self.tape)
        for i in range(self.params.config.n_blocks):
            y = self.resblock(y, i)
        return self.conv(y, "out.conv")


def ccn_forward(z: np.ndarray, params: NetworkParams, tape: Tape | None = None, mode: str = "train") -> np.ndarray:
    """Run the network on ``z`` of shape ``(batch, 1, height, width)``."""
    z = np.asarray(z)
    if z.ndim != 4 or z.shape[1] != 1:
        raise ValueError(f"network input must be (batch, 1, H, W), got {z.shape}")
    dtype = np.dtype(params.config.dtype)
    net = Network(params, tape, mode)
    out = net(Var(_nhwc(z.astype(dtype))))
    return _nchw(out.data)


def ccn_forward_nhwc(z: np.ndarray, params: NetworkParams, tape: Tape | None = None, mode: str = "train") -> Var:
    """Channels-last variant returning the output :class:`Var`."""
    net = Network(params, tape, mode)
    return net(Var(z.astype(np.dtype(params.config.dtype), copy=False)))


# --- functional layer API (batch, channels, H, W) ------------------------------


def cconv_forward(F: np.ndarray, K: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Complex convolution ``(F_R*K_R - F_I*K_I) + 1j (F_R*K_I + F_I*K_R)``."""
    F, K = np.asarray(F), np.asarray(K)
    if F.ndim != 4 or K.ndim != 4 or F.shape[1] != K.shape[1]:
        raise ValueError(f"incompatible input {F.shape} and kernel {K.shape}")
    dtype = np.result_type(F, K, np.complex64)
    b = Var(np.asarray(bias, dtype)) if bias is not None else None
    return _nchw(conv(Var(_nhwc(F.astype(dtype))), Var(K.astype(dtype)), b, None).data)


def crelu(F: np.ndarray) -> np.ndarray:
    """Rectify real and imaginary parts independently."""
    F = np.asarray(F)
    return np.maximum(F.real, 0) + 1j * np.maximum(F.imag, 0)


def cbn_forward(
    F: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    mode: str = "train",
    state: BNState | None = None,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> np.ndarray:
    """Complex batch norm: whiten each channel, then ``gamma @ [re, im] + beta``."""
    F = np.asarray(F)
    dtype = np.result_type(F, np.complex64)
    gamma = np.asarray(gamma, dtype=_real_dtype(dtype))
    if gamma.shape == (2, 2):
        gamma = np.tile(gamma, (F.shape[1], 1, 1))
    beta = np.broadcast_to(np.asarray(beta, dtype), (F.shape[1],)).copy()
    y = batchnorm(Var(_nhwc(F.astype(dtype))), Var(gamma), Var(beta), state, mode, None, eps, momentum)
    return _nchw(y.data)


def resblock_forward(F: np.ndarray, params: dict[str, np.ndarray], eps: float = BN_EPS) -> np.ndarray:
    """``F + CBN(CConv(CReLU(CBN(CConv(F)))))`` in train mode.

    ``params`` holds ``conv1.k``, ``conv1.b``, ``bn1.gamma``, ``bn1.beta`` and
    the same for ``conv2``/``bn2``.
    """
    F = np.asarray(F)
    c = F.shape[1]
    for j in (1, 2):
        kshape = params[f"conv{j}.k"].shape
        if kshape[0] != c or kshape[1] != c:
            raise ValueError(f"res-block conv{j} kernel {kshape} does not preserve {c} channels")
    y = cconv_forward(F, params["conv1.k"], params["conv1.b"])
    y = cbn_forward(y, params["bn1.gamma"], params["bn1.beta"], eps=eps)
    y = crelu(y)
    y = cconv_forward(y, params["conv2.k"], params["conv2.b"])
    y = cbn_forward(y, params["bn2.gamma"], params["bn2.beta"], eps=eps)
    return F + y


# --- optimiser ----------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _real_view(a: np.ndarray) -> np.ndarray:
    return a.view(a.real.dtype) if np.iscomplexobj(a) else a


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float = 1e-3) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; complex entries are two real coordinates."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
    if state.m and set(state.m) != set(params):
        raise ValueError("optimiser state does not match the parameter set")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = {}
    for name, p in params.items():
        g = _real_view(np.ascontiguousarray(grads[name], dtype=p.dtype))
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new = _real_view(p.copy()) - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        state.m[name], state.v[name] = m, v
        out[name] = new.astype(g.dtype, copy=False).view(p.dtype)
    return out
