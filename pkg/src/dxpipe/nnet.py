"""Minimal float32 tensor network: conv/pool/dense layers with exact
reverse-mode gradients, the dual-branch fusion classifier, weighted
cross-entropy, and SGD with momentum.

The fusion model runs two convolutional branches with different leading
receptive fields (3x3 vs 5x5) over the same input, concatenates their
feature vectors, and classifies through a shared two-layer head:

    branch A: conv3x3(8) relu pool2 conv3x3(16) relu pool2 flatten dense(a)
    branch B: conv5x5(8) relu pool2 conv3x3(24) relu pool2 flatten dense(b)
    head:     concat(a+b) dense(fusion) relu dropout dense(num_classes)

Parameters are float32; every layer function works on whatever float dtype
it is handed, so gradient checks can run the whole model in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass
class ModelConfig:
    input_size: int = 32
    branch_a_dim: int = 66
    branch_b_dim: int = 96
    fusion_dim: int = 128
    num_classes: int = 6
    dropout_rate: float = 0.5
    full_scale: bool = False

    def __post_init__(self) -> None:
        if self.full_scale:
            self.branch_a_dim = 1056
            self.branch_b_dim = 1536
            self.fusion_dim = 2048
        for name in ("input_size", "branch_a_dim", "branch_b_dim", "fusion_dim", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        if self.input_size < 16:
            raise ValueError(f"input_size must be >= 16, got {self.input_size}")


def _require_finite(name: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values in {name}")


# ---------------------------------------------------------------------------
# layer primitives (dtype-preserving, explicit caches)

def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Valid 2-D convolution (really cross-correlation), stride 1.

    x: (N, C, H, W); w: (F, C, kh, kw); b: (F,).  Returns (out, cols) with
    out (N, F, OH, OW); cols are kept for the backward pass.
    """
    n, c, h, wd = x.shape
    f, c2, kh, kw = w.shape
    if c != c2:
        raise ValueError(f"channel mismatch: input {c}, kernel {c2}")
    oh, ow = h - kh + 1, wd - kw + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"kernel {kh}x{kw} larger than input {h}x{wd}")
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + oh, j : j + ow]
    cols = cols.reshape(n, c * kh * kw, oh * ow)
    out = np.matmul(w.reshape(f, -1)[None], cols).reshape(n, f, oh, ow)
    out += b[None, :, None, None]
    return out, cols


def conv2d_backward(dout: np.ndarray, cols: np.ndarray, x_shape, w: np.ndarray):
    n, c, h, wd = x_shape
    f, _, kh, kw = w.shape
    oh, ow = h - kh + 1, wd - kw + 1
    dm = dout.reshape(n, f, oh * ow)
    dw = np.einsum("nfp,nkp->fk", dm, cols).reshape(w.shape)
    db = dout.sum(axis=(0, 2, 3))
    dcols = np.matmul(w.reshape(f, -1).T[None], dm)
    dcols = dcols.reshape(n, c, kh, kw, oh, ow)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + oh, j : j + ow] += dcols[:, :, i, j]
    return dx, dw, db


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


def maxpool2_forward(x: np.ndarray):
    """2x2 max pooling, stride 2; odd trailing rows/cols are dropped."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    xc = x[:, :, : 2 * h2, : 2 * w2]
    windows = (
        xc.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    )
    idx = np.argmax(windows, axis=4)
    out = np.take_along_axis(windows, idx[..., None], axis=4)[..., 0]
    return out, (idx, x.shape)


def maxpool2_backward(dout: np.ndarray, cache) -> np.ndarray:
    idx, x_shape = cache
    n, c, h, w = x_shape
    h2, w2 = h // 2, w // 2
    dwin = np.zeros((n, c, h2, w2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=4)
    dxc = dwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, 2 * h2, 2 * w2
    )
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :, : 2 * h2, : 2 * w2] = dxc
    return dx


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"dense shape mismatch: input {x.shape[1]}, weight {w.shape[1]}")
    return x @ w.T + b


def dense_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray):
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def dropout_forward(x: np.ndarray, rate: float, rng: np.random.Generator):
    """Inverted dropout: kept units are rescaled by 1/(1-rate)."""
    mask = (rng.random(x.shape) >= rate).astype(x.dtype)
    return x * mask / (1.0 - rate), mask


def dropout_backward(dout: np.ndarray, mask: np.ndarray, rate: float) -> np.ndarray:
    return dout * mask / (1.0 - rate)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def weighted_ce(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    """Class-weighted cross-entropy over a batch of logits.

    Per sample: weight[label] * (-x[label] + log sum_j exp(x[j])), with
    max-subtraction stabilization; the batch loss is the mean.  Returns
    (loss, dlogits) where dlogits[i, j] =
    weight[label_i] * (softmax(x_i)[j] - [j == label_i]) / N.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("label out of range")
    if weights.shape != (c,):
        raise ValueError(f"expected {c} class weights, got shape {weights.shape}")
    if (weights < 0).any() or not (weights > 0).any():
        raise ValueError("class weights must be nonnegative with at least one positive")
    _require_finite("logits", logits)

    x = logits.astype(np.float64)
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    w = weights[labels]
    losses = w * (-x[np.arange(n), labels] + lse)
    loss = float(losses.mean())

    p = np.exp(x - m)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(n), labels] -= 1.0
    dlogits = (p * w[:, None] / n).astype(logits.dtype)
    return loss, dlogits


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float = 0.0,
) -> None:
    """In-place momentum SGD: v = momentum*v - lr*g; p += v."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        v = velocity.setdefault(name, np.zeros_like(p))
        v *= momentum
        v -= (lr * g).astype(p.dtype)
        p += v


# ---------------------------------------------------------------------------
# the dual-branch fusion classifier

_BRANCHES = {
    "a": ((3, 8), (3, 16)),  # (kernel, filters) per conv stage
    "b": ((5, 8), (3, 24)),
}


def _branch_flat_dim(input_size: int, branch: str) -> int:
    (k1, f1), (k2, f2) = _BRANCHES[branch]
    s = (input_size - k1 + 1) // 2
    s = (s - k2 + 1) // 2
    if s < 1:
        raise ValueError(f"input_size {input_size} too small for branch {branch}")
    return f2 * s * s


class FusionNet:
    """Dual-branch feature-fusion classifier over (N, 1, S, S) inputs in [0, 1]."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        for branch in ("a", "b"):
            (k1, f1), (k2, f2) = _BRANCHES[branch]
            self._init_conv(rng, f"branch_{branch}.conv1", f1, 1, k1)
            self._init_conv(rng, f"branch_{branch}.conv2", f2, f1, k2)
            flat = _branch_flat_dim(config.input_size, branch)
            out = config.branch_a_dim if branch == "a" else config.branch_b_dim
            self._init_dense(rng, f"branch_{branch}.fc", out, flat)
        self._init_dense(rng, "fusion", config.fusion_dim, config.branch_a_dim + config.branch_b_dim)
        self._init_dense(rng, "head", config.num_classes, config.fusion_dim)

    def _init_conv(self, rng, name: str, f: int, c: int, k: int) -> None:
        fan_in = c * k * k
        self.params[f"{name}.w"] = (
            rng.standard_normal((f, c, k, k)) * np.sqrt(2.0 / fan_in)
        ).astype(np.float32)
        self.params[f"{name}.b"] = np.zeros(f, dtype=np.float32)

    def _init_dense(self, rng, name: str, out: int, fan_in: int) -> None:
        self.params[f"{name}.w"] = (
            rng.standard_normal((out, fan_in)) * np.sqrt(2.0 / fan_in)
        ).astype(np.float32)
        self.params[f"{name}.b"] = np.zeros(out, dtype=np.float32)

    def astype(self, dtype) -> "FusionNet":
        """Copy with parameters cast to dtype (float64 for gradient checks)."""
        clone = FusionNet(self.config, seed=0)
        clone.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return clone

    def _forward_branch(self, branch: str, x: np.ndarray, cache: dict) -> np.ndarray:
        p = self.params
        name = f"branch_{branch}"
        c1, cols1 = conv2d_forward(x, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"])
        _require_finite(f"{name}.conv1", c1)
        r1 = relu_forward(c1)
        p1, pool1 = maxpool2_forward(r1)
        c2, cols2 = conv2d_forward(p1, p[f"{name}.conv2.w"], p[f"{name}.conv2.b"])
        _require_finite(f"{name}.conv2", c2)
        r2 = relu_forward(c2)
        p2, pool2 = maxpool2_forward(r2)
        flat = p2.reshape(len(p2), -1)
        feat = dense_forward(flat, p[f"{name}.fc.w"], p[f"{name}.fc.b"])
        _require_finite(f"{name}.fc", feat)
        cache[name] = {
            "x_shape": x.shape,
            "cols1": cols1,
            "c1": c1,
            "pool1": pool1,
            "p1_shape": p1.shape,
            "cols2": cols2,
            "c2": c2,
            "pool2": pool2,
            "p2_shape": p2.shape,
            "flat": flat,
        }
        return feat

    def forward(
        self,
        x: np.ndarray,
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
    ):
        """Run the model; returns (logits, cache).  In train mode an rng is
        required whenever dropout_rate > 0."""
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected input (N, 1, H, W), got {x.shape}")
        s = self.config.input_size
        if x.shape[2] != s or x.shape[3] != s:
            raise ValueError(f"expected {s}x{s} input, got {x.shape[2]}x{x.shape[3]}")
        cache: dict = {"train_mode": train_mode}
        feat_a = self._forward_branch("a", x, cache)
        feat_b = self._forward_branch("b", x, cache)
        fused_in = np.concatenate([feat_a, feat_b], axis=1)
        fused = dense_forward(fused_in, self.params["fusion.w"], self.params["fusion.b"])
        _require_finite("fusion", fused)
        hidden = relu_forward(fused)
        if train_mode and self.config.dropout_rate > 0.0:
            if rng is None:
                raise ValueError("train-mode forward with dropout requires an rng")
            dropped, mask = dropout_forward(hidden, self.config.dropout_rate, rng)
        else:
            dropped, mask = hidden, None
        logits = dense_forward(dropped, self.params["head.w"], self.params["head.b"])
        _require_finite("logits", logits)
        cache.update(
            {
                "fused_in": fused_in,
                "fused": fused,
                "mask": mask,
                "dropped": dropped,
            }
        )
        return logits, cache

    def _backward_branch(self, branch: str, dfeat: np.ndarray, cache: dict, grads: dict):
        p = self.params
        name = f"branch_{branch}"
        c = cache[name]
        dflat, grads[f"{name}.fc.w"], grads[f"{name}.fc.b"] = dense_backward(
            dfeat, c["flat"], p[f"{name}.fc.w"]
        )
        dp2 = dflat.reshape(c["p2_shape"])
        dr2 = maxpool2_backward(dp2, c["pool2"])
        dc2 = relu_backward(dr2, c["c2"])
        dp1, grads[f"{name}.conv2.w"], grads[f"{name}.conv2.b"] = conv2d_backward(
            dc2, c["cols2"], c["p1_shape"], p[f"{name}.conv2.w"]
        )
        dr1 = maxpool2_backward(dp1, c["pool1"])
        dc1 = relu_backward(dr1, c["c1"])
        _, grads[f"{name}.conv1.w"], grads[f"{name}.conv1.b"] = conv2d_backward(
            dc1, c["cols1"], c["x_shape"], p[f"{name}.conv1.w"]
        )

    def backward(self, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Exact gradients for every parameter; reuses the forward cache
        (including the dropout mask)."""
        if "dropped" not in cache:
            raise ValueError("stale or missing forward cache")
        grads: dict[str, np.ndarray] = {}
        ddropped, grads["head.w"], grads["head.b"] = dense_backward(
            dlogits, cache["dropped"], self.params["head.w"]
        )
        if cache["mask"] is not None:
            dhidden = dropout_backward(ddropped, cache["mask"], self.config.dropout_rate)
        else:
            dhidden = ddropped
        dfused = relu_backward(dhidden, cache["fused"])
        dfused_in, grads["fusion.w"], grads["fusion.b"] = dense_backward(
            dfused, cache["fused_in"], self.params["fusion.w"]
        )
        a_dim = self.config.branch_a_dim
        self._backward_branch("a", dfused_in[:, :a_dim], cache, grads)
        self._backward_branch("b", dfused_in[:, a_dim:], cache, grads)
        return grads

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode softmax scores for (N, 1, S, S) inputs."""
        logits, _ = self.forward(x, train_mode=False)
        return softmax(logits)


def config_for_orientation(cfg: ModelConfig) -> ModelConfig:
    """Same architecture, four pose classes."""
    return replace(cfg, num_classes=4)
