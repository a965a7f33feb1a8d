"""Forward and backward math for every layer the network is built from.

Layers are stateless: ``forward_cached`` returns the activation plus an
opaque cache, and ``backward`` consumes that cache, so a shared layer (and
therefore a shared network) is safe for concurrent forward passes.
Gradients are hand-derived per layer; there is no autodiff graph.

Convolution and pooling accept spatial inputs with or without a leading
batch axis ([C,D,H,W] or [B,C,D,H,W]) and return the same rank they were
given.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ConvParams, ShapeError, Tensor, _as_triple, as_tensor, conv_output_axis


def _batched(x: Tensor, expected_ndim: int, what: str) -> tuple[np.ndarray, bool]:
    """Normalize to a batched ndarray; report whether a batch axis was added."""
    if x.ndim == expected_ndim:
        return x.data, False
    if x.ndim == expected_ndim + 1:
        return x.data, True
    raise ShapeError(f"{what} expects {expected_ndim}-D or {expected_ndim + 1}-D input, got shape {x.shape}")


def _unbatch(y: np.ndarray, was_batched: bool) -> Tensor:
    return Tensor(y if was_batched else y[0])


def _check_dtype(x: np.ndarray, ref: np.ndarray, what: str) -> None:
    if x.dtype != ref.dtype:
        raise ShapeError(f"{what}: mixed precisions {x.dtype} vs {ref.dtype}")


class Conv3dCache(NamedTuple):
    cols: np.ndarray          # [B, Cin*kD*kH*kW, Do*Ho*Wo]
    x_shape: tuple            # padded-input shape
    out_spatial: tuple        # (Do, Ho, Wo)
    batched: bool


class Conv3d:
    """3D convolution (cross-correlation) with zero padding and strides."""

    def __init__(self, weight: Tensor, bias: Tensor, params: ConvParams | None = None) -> None:
        weight = as_tensor(weight)
        bias = as_tensor(bias)
        if weight.ndim != 5:
            raise ShapeError(f"conv weight must be [Cout,Cin,kD,kH,kW], got {weight.shape}")
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"conv bias must be [Cout]={weight.shape[0]}, got {bias.shape}")
        self.weight = weight
        self.bias = bias
        self.params = params or ConvParams()

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        return {"w": self.weight, "b": self.bias}

    def output_shape(self, spatial: tuple[int, int, int]) -> tuple[int, int, int]:
        k = self.weight.shape[2:]
        s, p = self.params.stride, self.params.padding
        return tuple(conv_output_axis(spatial[i], k[i], s[i], p[i]) for i in range(3))

    def forward_cached(self, x: Tensor) -> tuple[Tensor, Conv3dCache]:
        xb, batched = _batched(as_tensor(x), 4, "conv3d")
        w, b = self.weight.data, self.bias.data
        if not batched:
            xb = xb[None]
        _check_dtype(xb, w, "conv3d")
        if xb.shape[1] != w.shape[1]:
            raise ShapeError(f"conv3d: input has {xb.shape[1]} channels, weight expects {w.shape[1]}")
        B, cin = xb.shape[:2]
        cout = w.shape[0]
        kD, kH, kW = w.shape[2:]
        (sd, sh, sw), (pd, ph, pw) = self.params.stride, self.params.padding
        do, ho, wo = self.output_shape(xb.shape[2:])
        xp = np.pad(xb, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
        # im2col, channels-first columns: one strided copy per kernel offset
        cols = np.empty((B, cin, kD, kH, kW, do, ho, wo), dtype=xb.dtype)
        for kd in range(kD):
            for kh in range(kH):
                for kw in range(kW):
                    cols[:, :, kd, kh, kw] = xp[
                        :, :, kd:kd + sd * do:sd, kh:kh + sh * ho:sh, kw:kw + sw * wo:sw
                    ]
        cols = cols.reshape(B, cin * kD * kH * kW, do * ho * wo)
        y = np.matmul(w.reshape(cout, -1)[None], cols) + b[None, :, None]
        y = y.reshape(B, cout, do, ho, wo)
        cache = Conv3dCache(cols, xp.shape, (do, ho, wo), batched)
        return _unbatch(y, batched), cache

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_cached(x)[0]

    def backward(self, dy: Tensor, cache: Conv3dCache) -> tuple[Tensor, dict[str, Tensor]]:
        w = self.weight.data
        dyb, _ = _batched(as_tensor(dy), 4, "conv3d backward")
        if not cache.batched:
            dyb = dyb[None]
        B = cache.x_shape[0]
        cout, cin = w.shape[:2]
        do, ho, wo = cache.out_spatial
        if dyb.shape != (B, cout, do, ho, wo):
            raise ShapeError(f"conv3d backward: dy shape {dyb.shape} does not match output")
        kD, kH, kW = w.shape[2:]
        sd, sh, sw = self.params.stride
        pd, ph, pw = self.params.padding

        db = dyb.sum(axis=(0, 2, 3, 4))
        dy_mat = dyb.reshape(B, cout, do * ho * wo)
        dw = np.matmul(dy_mat, cache.cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)

        # col2im: scatter per-window gradients back through the padded buffer
        dcols = np.matmul(w.reshape(cout, -1).T[None], dy_mat)
        dcols = dcols.reshape(B, cin, kD, kH, kW, do, ho, wo)
        dxp = np.zeros(cache.x_shape, dtype=dyb.dtype)
        for kd in range(kD):
            for kh in range(kH):
                for kw in range(kW):
                    dxp[:, :, kd:kd + sd * do:sd, kh:kh + sh * ho:sh, kw:kw + sw * wo:sw] += (
                        dcols[:, :, kd, kh, kw]
                    )
        D = cache.x_shape[2] - 2 * pd
        H = cache.x_shape[3] - 2 * ph
        W = cache.x_shape[4] - 2 * pw
        dx = dxp[:, :, pd:pd + D, ph:ph + H, pw:pw + W]
        return _unbatch(np.ascontiguousarray(dx), cache.batched), {"w": Tensor(dw), "b": Tensor(db)}


class MaxPool3dCache(NamedTuple):
    flat_argmax: np.ndarray   # global flat indices into the input buffer
    x_shape: tuple
    batched: bool


class MaxPool3d:
    """Max pooling over 3-D windows; ties route to the lowest window-linear index."""

    def __init__(self, window, stride=None) -> None:
        self.window = _as_triple(window, "window")
        self.stride = _as_triple(stride, "stride") if stride is not None else self.window

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def output_shape(self, spatial: tuple[int, int, int]) -> tuple[int, int, int]:
        out = []
        for i in range(3):
            if self.window[i] > spatial[i]:
                raise ShapeError(
                    f"pool window {self.window} larger than input axis {spatial}"
                )
            out.append((spatial[i] - self.window[i]) // self.stride[i] + 1)
        return tuple(out)

    def forward_cached(self, x: Tensor) -> tuple[Tensor, MaxPool3dCache]:
        xb, batched = _batched(as_tensor(x), 4, "maxpool3d")
        if not batched:
            xb = xb[None]
        wd, wh, ww = self.window
        sd, sh, sw = self.stride
        do, ho, wo = self.output_shape(xb.shape[2:])
        win = sliding_window_view(xb, (wd, wh, ww), axis=(2, 3, 4))[:, :, ::sd, ::sh, ::sw]
        flat = np.ascontiguousarray(win).reshape(*win.shape[:5], -1)
        arg = flat.argmax(axis=-1)  # first max == lowest linear index in the window
        y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

        B, C, D, H, W = xb.shape
        kd, rem = np.divmod(arg, wh * ww)
        kh, kw = np.divmod(rem, ww)
        bidx, cidx, didx, hidx, widx = np.indices(arg.shape, sparse=True)
        src_d = didx * sd + kd
        src_h = hidx * sh + kh
        src_w = widx * sw + kw
        flat_idx = (((bidx * C + cidx) * D + src_d) * H + src_h) * W + src_w
        cache = MaxPool3dCache(flat_idx.reshape(-1), xb.shape, batched)
        return _unbatch(np.ascontiguousarray(y), batched), cache

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_cached(x)[0]

    def backward(self, dy: Tensor, cache: MaxPool3dCache) -> tuple[Tensor, dict[str, Tensor]]:
        dyb, _ = _batched(as_tensor(dy), 4, "maxpool3d backward")
        if not cache.batched:
            dyb = dyb[None]
        if dyb.size != cache.flat_argmax.size:
            raise ShapeError(f"maxpool3d backward: dy shape {dyb.shape} does not match output")
        dx = np.zeros(int(np.prod(cache.x_shape)), dtype=dyb.dtype)
        np.add.at(dx, cache.flat_argmax, dyb.reshape(-1))
        return _unbatch(dx.reshape(cache.x_shape), cache.batched), {}


class ReLU:
    """Elementwise max(x, 0); derivative at exactly 0 is 0."""

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def forward_cached(self, x: Tensor) -> tuple[Tensor, np.ndarray]:
        x = as_tensor(x)
        mask = x.data > 0
        return Tensor(np.where(mask, x.data, x.data.dtype.type(0))), mask

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_cached(x)[0]

    def backward(self, dy: Tensor, mask: np.ndarray) -> tuple[Tensor, dict[str, Tensor]]:
        dy = as_tensor(dy)
        if dy.shape != mask.shape:
            raise ShapeError(f"relu backward: dy shape {dy.shape} != input shape {mask.shape}")
        return Tensor(dy.data * mask), {}


class Linear:
    """Fully connected layer: y = x @ w.T + b over a batch of row vectors."""

    def __init__(self, weight: Tensor, bias: Tensor) -> None:
        weight = as_tensor(weight)
        bias = as_tensor(bias)
        if weight.ndim != 2:
            raise ShapeError(f"linear weight must be [Fout,Fin], got {weight.shape}")
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear bias must be [Fout]={weight.shape[0]}, got {bias.shape}")
        self.weight = weight
        self.bias = bias

    def parameters(self) -> dict[str, Tensor]:
        return {"w": self.weight, "b": self.bias}

    def forward_cached(self, x: Tensor) -> tuple[Tensor, np.ndarray]:
        x = as_tensor(x)
        w, b = self.weight.data, self.bias.data
        if x.ndim != 2 or x.shape[1] != w.shape[1]:
            raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
        _check_dtype(x.data, w, "linear")
        return Tensor(x.data @ w.T + b), x.data

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_cached(x)[0]

    def backward(self, dy: Tensor, cache: np.ndarray) -> tuple[Tensor, dict[str, Tensor]]:
        dy = as_tensor(dy)
        w = self.weight.data
        if dy.shape != (cache.shape[0], w.shape[0]):
            raise ShapeError(f"linear backward: dy shape {dy.shape} does not match output")
        dx = dy.data @ w
        dw = dy.data.T @ cache
        db = dy.data.sum(axis=0)
        return Tensor(dx), {"w": Tensor(dw), "b": Tensor(db)}


class ResidualAdd:
    """Identity-mapping shortcut: branch + shortcut zero-padded across channels."""

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def forward_cached(self, shortcut: Tensor, branch: Tensor) -> tuple[Tensor, tuple]:
        sb, s_batched = _batched(as_tensor(shortcut), 4, "residual_add")
        bb, b_batched = _batched(as_tensor(branch), 4, "residual_add")
        if s_batched != b_batched:
            raise ShapeError("residual_add: one input is batched, the other is not")
        if not s_batched:
            sb, bb = sb[None], bb[None]
        if sb.shape[2:] != bb.shape[2:] or sb.shape[0] != bb.shape[0]:
            raise ShapeError(f"residual_add: spatial/batch mismatch {sb.shape} vs {bb.shape}")
        cs, cb = sb.shape[1], bb.shape[1]
        if cs > cb:
            raise ShapeError(f"residual_add: shortcut has {cs} channels > branch {cb}")
        _check_dtype(sb, bb, "residual_add")
        y = bb.copy()
        y[:, :cs] += sb
        return _unbatch(y, s_batched), (cs, s_batched)

    def forward(self, shortcut: Tensor, branch: Tensor) -> Tensor:
        return self.forward_cached(shortcut, branch)[0]

    def backward(self, dy: Tensor, cache: tuple) -> tuple[tuple[Tensor, Tensor], dict[str, Tensor]]:
        cs, batched = cache
        dyb, _ = _batched(as_tensor(dy), 4, "residual_add backward")
        if not batched:
            dyb = dyb[None]
        d_short = np.ascontiguousarray(dyb[:, :cs])
        return (_unbatch(d_short, batched), _unbatch(dyb.copy(), batched)), {}


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row softmax, stabilized by subtracting the per-row maximum."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(
    logits: Tensor,
    targets,
    category_weights: Tensor | None = None,
) -> tuple[float, Tensor, Tensor]:
    """Weighted cross-entropy over a batch of logit rows.

    Returns (loss, probs, dlogits) where
    loss = (1/B) * sum_b weights[t_b] * -log(probs[b, t_b]) and dlogits is
    its exact gradient: weights[t_b] * (probs_b - onehot_b) / B.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [B,K], got {logits.shape}")
    B, K = logits.shape
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape[0] != B:
        raise ShapeError(f"targets length {t.shape[0]} != batch size {B}")
    if t.min(initial=0) < 0 or t.max(initial=0) >= K:
        raise ValueError(f"target out of range [0,{K}): {t.tolist()}")
    if category_weights is None:
        wk = np.ones(K, dtype=logits.dtype)
    else:
        wk = as_tensor(category_weights).data.astype(logits.dtype)
        if wk.shape != (K,):
            raise ShapeError(f"category_weights must be [K]={K}, got {wk.shape}")
        if wk.min() <= 0:
            raise ValueError("category weights must be positive")

    probs = softmax(logits.data.astype(np.float64))
    wt = wk.astype(np.float64)[t]
    nll = -np.log(probs[np.arange(B), t])
    loss = float((wt * nll).sum() / B)

    dlogits = probs * wt[:, None]
    dlogits[np.arange(B), t] -= wt
    dlogits /= B
    return loss, Tensor(probs.astype(logits.dtype)), Tensor(dlogits.astype(logits.dtype))


def conv3d(x: Tensor, w: Tensor, b: Tensor, params: ConvParams | None = None) -> Tensor:
    return Conv3d(w, b, params).forward(x)


def maxpool3d(x: Tensor, window, stride=None) -> tuple[Tensor, np.ndarray]:
    layer = MaxPool3d(window, stride)
    y, cache = layer.forward_cached(x)
    return y, cache.flat_argmax


def relu(x: Tensor) -> Tensor:
    return ReLU().forward(x)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return Linear(w, b).forward(x)


def residual_add(shortcut: Tensor, branch: Tensor) -> Tensor:
    return ResidualAdd().forward(shortcut, branch)
