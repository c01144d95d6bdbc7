"""A small float64 MLP with inverted dropout, manual backprop and Adam.

Layers are ``Linear -> ReLU -> Dropout`` for every hidden width, followed by a
linear output layer producing class logits. ``forward`` can keep a
:class:`Trace` of the intermediate activations; ``backward`` consumes that
trace together with the gradient of a scalar loss with respect to the logits.
Loss-side gradients (cross-entropy, instance weights) are produced by
:func:`ce_logit_grad` and the weighting module.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

Mode = Literal["train", "eval", "mc"]
CHECKPOINT_FORMAT = "replaycl.checkpoint/1"


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class GraphError(RuntimeError):
    """Raised when backward is asked to differentiate something it did not trace."""


@dataclass(frozen=True)
class NetworkConfig:
    layer_widths: tuple[int, ...]
    dropout_prob: float = 0.1
    activation: str = "relu"

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ValueError("layer_widths needs input, at least one hidden, and output width")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError(f"dropout_prob must lie in [0, 1), got {self.dropout_prob}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "dropout_prob": self.dropout_prob,
            "activation": self.activation,
        }


@dataclass
class Network:
    config: NetworkConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        widths = self.config.layer_widths
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise ShapeError("parameter count does not match config")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[i], widths[i + 1]) or b.shape != (widths[i + 1],):
                raise ShapeError(f"layer {i}: got W{w.shape} b{b.shape} for widths {widths}")

    @classmethod
    def init(cls, config: NetworkConfig, rng: np.random.Generator) -> "Network":
        """He-normal weights, zero biases."""
        widths = config.layer_widths
        weights = [
            rng.normal(0.0, np.sqrt(2.0 / widths[i]), size=(widths[i], widths[i + 1]))
            for i in range(len(widths) - 1)
        ]
        biases = [np.zeros(widths[i + 1]) for i in range(len(widths) - 1)]
        return cls(config, weights, biases)

    @classmethod
    def zeros(cls, config: NetworkConfig) -> "Network":
        widths = config.layer_widths
        return cls(
            config,
            [np.zeros((widths[i], widths[i + 1])) for i in range(len(widths) - 1)],
            [np.zeros(widths[i + 1]) for i in range(len(widths) - 1)],
        )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        """Live references in layer order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Network":
        return Network(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class DropoutMask:
    masks: list[np.ndarray]
    keep_prob: float

    @classmethod
    def sample(cls, config: NetworkConfig, batch: int, rng: np.random.Generator) -> "DropoutMask":
        keep = 1.0 - config.dropout_prob
        masks = []
        for width in config.layer_widths[1:-1]:
            if config.dropout_prob == 0.0:
                masks.append(np.ones((batch, width)))
            else:
                masks.append((rng.random((batch, width)) < keep) / keep)
        return cls(masks, keep)

    @classmethod
    def ones(cls, config: NetworkConfig, batch: int) -> "DropoutMask":
        return cls([np.ones((batch, w)) for w in config.layer_widths[1:-1]], 1.0)


@dataclass
class Trace:
    net_id: int
    inputs: np.ndarray
    layer_inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    mask: DropoutMask


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray

    def as_list(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def _check_finite(a: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite values in {where}")


def forward(
    net: Network,
    batch: np.ndarray,
    mode: Mode = "eval",
    rng: np.random.Generator | None = None,
    *,
    mask: DropoutMask | None = None,
    keep_trace: bool = False,
):
    """Compute logits for ``batch`` of shape (B, m).

    ``train`` and ``mc`` modes draw a fresh dropout mask from ``rng`` unless
    ``mask`` is given; ``eval`` uses no dropout. Returns the logits, or
    ``(logits, trace)`` when ``keep_trace`` is set.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.config.input_dim:
        raise ShapeError(f"expected batch of shape (B, {net.config.input_dim}), got {x.shape}")
    if mode not in ("train", "eval", "mc"):
        raise ValueError(f"unknown mode {mode!r}")
    _check_finite(x, "input batch")

    if mode == "eval":
        mask = DropoutMask.ones(net.config, x.shape[0])
    elif mask is None:
        if rng is None and net.config.dropout_prob > 0.0:
            raise ValueError(f"mode={mode!r} needs an rng to sample dropout masks")
        mask = DropoutMask.sample(net.config, x.shape[0], rng)
    elif any(mk.shape[0] != x.shape[0] for mk in mask.masks):
        raise ShapeError("dropout mask batch size does not match input")

    layer_inputs, pre = [], []
    h = x
    for i in range(net.n_layers - 1):
        layer_inputs.append(h)
        z = h @ net.weights[i] + net.biases[i]
        _check_finite(z, f"layer {i} pre-activation")
        pre.append(z)
        h = np.maximum(z, 0.0) * mask.masks[i]
    layer_inputs.append(h)
    logits = h @ net.weights[-1] + net.biases[-1]
    _check_finite(logits, "logits")
    if keep_trace:
        return logits, Trace(id(net), x, layer_inputs, pre, mask)
    return logits


def backward(net: Network, trace: Trace | None, grad_logits: np.ndarray) -> Gradients:
    """Backpropagate ``dLoss/dlogits`` through the traced forward pass."""
    if trace is None or trace.net_id != id(net):
        raise GraphError("no trace for this network; call forward(..., keep_trace=True) first")
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != (trace.inputs.shape[0], net.config.n_classes):
        raise ShapeError(f"grad_logits shape {g.shape} does not match traced logits")

    n = net.n_layers
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        gw[i] = trace.layer_inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        g = g @ net.weights[i].T
        if i > 0:
            g = g * trace.mask.masks[i - 1] * (trace.pre_activations[i - 1] > 0.0)
    return Gradients(gw, gb, g)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(labels: np.ndarray, n_rows: int, n_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (n_rows,):
        raise ShapeError(f"expected {n_rows} labels, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return y.astype(np.int64)


def per_instance_ce(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Unreduced cross-entropy ``-log p[i, y_i]``."""
    p = np.asarray(probs, dtype=np.float64)
    y = _check_labels(labels, p.shape[0], p.shape[1])
    with np.errstate(divide="ignore"):
        return -np.log(p[np.arange(len(y)), y])


def per_instance_ce_from_logits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Same as ``per_instance_ce(softmax(logits), labels)`` without underflow."""
    lp = log_softmax(logits)
    y = _check_labels(labels, lp.shape[0], lp.shape[1])
    return -lp[np.arange(len(y)), y]


def ce_logit_grad(probs: np.ndarray, labels: np.ndarray, row_weights: np.ndarray) -> np.ndarray:
    """Gradient of ``sum_i w_i * CE_i`` with respect to the logits."""
    p = np.asarray(probs, dtype=np.float64)
    y = _check_labels(labels, p.shape[0], p.shape[1])
    g = p.copy()
    g[np.arange(len(y)), y] -= 1.0
    return g * np.asarray(row_weights, dtype=np.float64)[:, None]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)

    def copy(self) -> "AdamState":
        return AdamState(
            [a.copy() for a in self.m], [a.copy() for a in self.v],
            self.step, self.beta1, self.beta2, self.eps,
        )


def adam_update(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, lr: float
) -> None:
    """In-place bias-corrected Adam update on ``params``."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and Adam moments differ in length")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def adam_step(net: Network, grads: Gradients, state: AdamState, lr: float) -> None:
    adam_update(net.parameters(), grads.as_list(), state, lr)


def save_checkpoint(net: Network, path: str | Path, seed: int) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "seed": int(seed),
        "config": net.config.to_dict(),
        "parameters": [
            {"shape": list(p.shape), "data": p.ravel().tolist()} for p in net.parameters()
        ],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[Network, int]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unrecognised checkpoint format {doc.get('format')!r}")
    cfg = doc["config"]
    config = NetworkConfig(tuple(cfg["layer_widths"]), cfg["dropout_prob"], cfg["activation"])
    arrays = [np.array(p["data"], dtype=np.float64).reshape(p["shape"]) for p in doc["parameters"]]
    return Network(config, arrays[0::2], arrays[1::2]), int(doc["seed"])
