"""FSMN language model: projection, hidden stack with memory blocks, softmax.

Layout is time-major throughout: activations are ``dim x P`` matrices where P
is the number of prediction positions in a batch (sentences concatenated).

For a hidden layer l carrying a memory block, ``H~_l = relu(H_l @ M)`` where
M is the batch's block-diagonal memory matrix, and the layer above receives
``W_{l+1} H_l + Wmem_l H~_l + b_{l+1}``. With identity taps and a zero
``Wmem_l`` the network is exactly the plain feedforward LM.

Parameters are an ordered ``dict`` of float64 arrays:

    embedding          vocab x embed
    W{l}, b{l}         hidden layer l (biases are column vectors)
    taps{l}, Wmem{l}   memory block on layer l
    W_out, b_out       softmax layer
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import memory
from .data import SentenceBatch, make_batches
from .linalg import relu, relu_backward

GROUPS = ("embedding", "W", "b", "taps", "Wmem", "output")

# Softmax is evaluated over at most this many positions at once during training.
OUTPUT_CHUNK = 2048


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    context_window: int = 2
    embed_dim: int = 200
    hidden_dims: tuple = (400, 400)
    memory_at: tuple = (1,)
    memory_order: int = 20
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        object.__setattr__(self, "memory_at", tuple(sorted({int(m) for m in self.memory_at})))
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if self.context_window < 1:
            raise ValueError("context_window must be >= 1")
        if self.embed_dim < 1 or not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("embed_dim and every hidden dim must be >= 1 (and at least one hidden layer)")
        if self.memory_order < 0:
            raise ValueError("memory_order must be >= 0")
        bad = [m for m in self.memory_at if not 1 <= m <= len(self.hidden_dims)]
        if bad:
            raise ValueError(f"memory_at entries {bad} outside hidden layers 1..{len(self.hidden_dims)}")
        if self.activation != "relu":
            raise ValueError("only relu hidden units are supported")

    @property
    def num_layers(self) -> int:
        return len(self.hidden_dims)

    def input_dim(self, layer: int) -> int:
        return self.context_window * self.embed_dim if layer == 1 else self.hidden_dims[layer - 2]

    def output_dim(self, layer: int) -> int:
        """Width of whatever sits on top of hidden layer ``layer``."""
        return self.vocab_size if layer == self.num_layers else self.hidden_dims[layer]

    def shapes(self) -> dict:
        shapes = {"embedding": (self.vocab_size, self.embed_dim)}
        for layer, dim in enumerate(self.hidden_dims, start=1):
            shapes[f"W{layer}"] = (dim, self.input_dim(layer))
            shapes[f"b{layer}"] = (dim, 1)
            if layer in self.memory_at:
                shapes[f"taps{layer}"] = (self.memory_order + 1,)
                shapes[f"Wmem{layer}"] = (self.output_dim(layer), dim)
        shapes["W_out"] = (self.vocab_size, self.hidden_dims[-1])
        shapes["b_out"] = (self.vocab_size, 1)
        return shapes

    def num_parameters(self) -> int:
        return sum(math.prod(s) for s in self.shapes().values())

    def describe(self) -> str:
        """Architecture string such as ``[2*200]-400(M)-400-10003``."""
        layers = [f"{d}(M)" if i in self.memory_at else str(d) for i, d in enumerate(self.hidden_dims, 1)]
        return "-".join([f"[{self.context_window}*{self.embed_dim}]", *layers, str(self.vocab_size)])

    def without_memory(self) -> "ModelConfig":
        return ModelConfig(
            self.vocab_size, self.context_window, self.embed_dim, self.hidden_dims, (), self.memory_order
        )


def ptb_config(vocab_size: int = 10003, memory: bool = True) -> ModelConfig:
    """[2*200]-400(M)-400 with a 20th-order memory block."""
    return ModelConfig(vocab_size, 2, 200, (400, 400), (1,) if memory else (), 20)


def ltcb_config(vocab_size: int = 80000, memory_at: Sequence[int] = (1,)) -> ModelConfig:
    """[2*200]-600-600-600 with 30th-order memory on the given layers."""
    return ModelConfig(vocab_size, 2, 200, (600, 600, 600), tuple(memory_at), 30)


def param_group(name: str) -> str:
    if name == "embedding":
        return "embedding"
    if name in ("W_out", "b_out"):
        return "output"
    match = re.fullmatch(r"(Wmem|taps|W|b)\d+", name)
    if match is None:
        raise KeyError(f"unknown parameter name {name!r}")
    return match.group(1)


def init_parameters(config: ModelConfig, seed: int) -> dict:
    """Normalized uniform init for weights, zero biases, identity taps."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in config.shapes().items():
        group = param_group(name)
        if group == "taps":
            params[name] = memory.FilterCoeffs.identity(config.memory_order).taps.copy()
        elif name.startswith("b"):
            params[name] = np.zeros(shape)
        else:
            fan_out, fan_in = shape
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def zeros_like(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def check_compatible(params: dict, config: ModelConfig):
    shapes = config.shapes()
    if list(params) != list(shapes):
        raise ValueError(f"parameter names {list(params)} do not match config {list(shapes)}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ValueError(f"{name}: shape {params[name].shape}, config expects {shape}")


@dataclass
class ForwardCache:
    inputs: np.ndarray  # concatenated context embeddings, (C*e) x P
    pre: dict = field(default_factory=dict)  # layer -> Z
    hidden: dict = field(default_factory=dict)  # layer -> H
    mem_pre: dict = field(default_factory=dict)  # layer -> H @ M
    mem_out: dict = field(default_factory=dict)  # layer -> H~
    memory: object = None  # BlockDiagMemory template (lengths only matter)


def _check_batch(batch: SentenceBatch, config: ModelConfig):
    if batch.num_positions == 0:
        raise ValueError("empty batch")
    for arr, what in ((batch.contexts, "context"), (batch.targets, "target")):
        if arr.min() < 0 or arr.max() >= config.vocab_size:
            raise ValueError(f"{what} id out of range for vocab_size={config.vocab_size}")
    if batch.contexts.shape[1] != config.context_window:
        raise ValueError(
            f"batch has context width {batch.contexts.shape[1]}, model expects {config.context_window}"
        )


def _block_memory(taps, lengths) -> memory.BlockDiagMemory:
    return memory.build_block_diagonal(memory.FilterCoeffs(taps), lengths)


def hidden_forward(params: dict, config: ModelConfig, batch: SentenceBatch) -> ForwardCache:
    """Everything up to (not including) the softmax layer."""
    _check_batch(batch, config)
    p = batch.num_positions
    x = params["embedding"][batch.contexts].reshape(p, -1).T
    cache = ForwardCache(inputs=x)
    below = x
    carry = None  # Wmem_{l-1} @ H~_{l-1}
    for layer in range(1, config.num_layers + 1):
        z = params[f"W{layer}"] @ below + params[f"b{layer}"]
        if carry is not None:
            z = z + carry
        h = relu(z)
        cache.pre[layer], cache.hidden[layer] = z, h
        carry = None
        if layer in config.memory_at:
            m = _block_memory(params[f"taps{layer}"], batch.lengths)
            s = memory.band_product(h, m)
            h_mem = relu(s)
            cache.mem_pre[layer], cache.mem_out[layer] = s, h_mem
            carry = params[f"Wmem{layer}"] @ h_mem
        below = h
    return cache


def _logits(params: dict, config: ModelConfig, cache: ForwardCache, cols=slice(None)) -> np.ndarray:
    top = config.num_layers
    logits = params["W_out"] @ cache.hidden[top][:, cols] + params["b_out"]
    if top in config.memory_at:
        logits = logits + params[f"Wmem{top}"] @ cache.mem_out[top][:, cols]
    return logits


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Column-wise log-softmax of a ``V x P`` matrix."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


def forward(params: dict, config: ModelConfig, batch: SentenceBatch):
    """Return ``(log_probs, cache)`` with ``log_probs`` of shape ``vocab x P``."""
    cache = hidden_forward(params, config, batch)
    return log_softmax(_logits(params, config, cache)), cache


def position_nll(params: dict, config: ModelConfig, batch: SentenceBatch) -> np.ndarray:
    """Negative log-likelihood of every prediction position in the batch."""
    cache = hidden_forward(params, config, batch)
    out = np.empty(batch.num_positions)
    for start in range(0, batch.num_positions, OUTPUT_CHUNK):
        cols = slice(start, start + OUTPUT_CHUNK)
        logp = log_softmax(_logits(params, config, cache, cols))
        tgt = batch.targets[cols]
        out[cols] = -logp[tgt, np.arange(tgt.size)]
    return out


def loss(params: dict, config: ModelConfig, batch: SentenceBatch) -> float:
    return float(np.mean(position_nll(params, config, batch)))


def loss_and_grad(params: dict, config: ModelConfig, batch: SentenceBatch):
    """Mean per-position NLL and its gradient with respect to every tensor."""
    cache = hidden_forward(params, config, batch)
    p = batch.num_positions
    top = config.num_layers
    top_mem = top in config.memory_at
    grads = zeros_like(params)

    total = 0.0
    d_hidden = np.empty_like(cache.hidden[top])
    d_mem_out = np.empty_like(cache.mem_out[top]) if top_mem else None
    for start in range(0, p, OUTPUT_CHUNK):
        cols = slice(start, start + OUTPUT_CHUNK)
        logp = log_softmax(_logits(params, config, cache, cols))
        tgt = batch.targets[cols]
        idx = np.arange(tgt.size)
        total += -logp[tgt, idx].sum()
        dlogits = np.exp(logp)
        dlogits[tgt, idx] -= 1.0
        dlogits /= p
        grads["W_out"] += dlogits @ cache.hidden[top][:, cols].T
        grads["b_out"] += dlogits.sum(axis=1, keepdims=True)
        d_hidden[:, cols] = params["W_out"].T @ dlogits
        if top_mem:
            grads[f"Wmem{top}"] += dlogits @ cache.mem_out[top][:, cols].T
            d_mem_out[:, cols] = params[f"Wmem{top}"].T @ dlogits

    for layer in range(top, 0, -1):
        h = cache.hidden[layer]
        if layer in config.memory_at:
            if layer != top:
                d_mem_out = params[f"Wmem{layer}"].T @ d_above
            d_s = relu_backward(cache.mem_pre[layer], d_mem_out)
            m = _block_memory(params[f"taps{layer}"], batch.lengths)
            d_h_mem, d_taps = memory.fir_backward(h, d_s, m)
            d_hidden = d_hidden + d_h_mem
            grads[f"taps{layer}"] = d_taps
        d_z = relu_backward(cache.pre[layer], d_hidden)
        below = cache.inputs if layer == 1 else cache.hidden[layer - 1]
        grads[f"W{layer}"] = d_z @ below.T
        grads[f"b{layer}"] = d_z.sum(axis=1, keepdims=True)
        if layer > 1 and (layer - 1) in config.memory_at:
            grads[f"Wmem{layer - 1}"] = d_z @ cache.mem_out[layer - 1].T
        d_below = params[f"W{layer}"].T @ d_z
        d_above = d_z
        d_hidden = d_below

    d_inputs = d_hidden.T.reshape(p, config.context_window, config.embed_dim)
    np.add.at(grads["embedding"], batch.contexts, d_inputs)
    return total / p, grads


def perplexity(params: dict, config: ModelConfig, dataset, batch_size: int = 256) -> float:
    """exp of the mean NLL over every prediction position in ``dataset``.

    ``dataset`` is a sequence of encoded sentences or of ``SentenceBatch``.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate perplexity on an empty dataset")
    if isinstance(dataset[0], SentenceBatch):
        batches = dataset
    else:
        batches = make_batches(dataset, batch_size, seed=None, context_window=config.context_window)
    total, count = 0.0, 0
    for batch in batches:
        nll = position_nll(params, config, batch)
        total += nll.sum()
        count += nll.size
    return math.exp(total / count)


@dataclass
class GradCheckReport:
    """Worst analytic-vs-numeric discrepancy per parameter group.

    ``errors[group]`` is a relative error, except for entries whose analytic
    and numeric gradients are both below ``floor`` in magnitude, which
    contribute their absolute difference instead.
    """

    errors: dict
    worst_entry: dict
    step: float
    floor: float

    def failures(self, threshold: float = 1e-4) -> list:
        return [g for g, e in self.errors.items() if not e < threshold]

    def passed(self, threshold: float = 1e-4) -> bool:
        return not self.failures(threshold)

    def lines(self, threshold: float = 1e-4) -> list:
        out = []
        for group, err in self.errors.items():
            status = "ok" if err < threshold else "FAIL"
            name, idx = self.worst_entry[group]
            out.append(f"group={group} max_rel_err={err:.3e} worst={name}{list(idx)} status={status}")
        return out


def grad_check(
    params: dict,
    config: ModelConfig,
    batch: SentenceBatch,
    step: float = 1e-5,
    floor: float = 1e-7,
    grad_fn=None,
) -> GradCheckReport:
    """Compare ``loss_and_grad`` against central differences on every entry."""
    grad_fn = grad_fn or loss_and_grad
    _, analytic = grad_fn(params, config, batch)
    work = copy_params(params)
    errors = {}
    worst = {}
    for name, value in work.items():
        group = param_group(name)
        errors.setdefault(group, 0.0)
        worst.setdefault(group, (name, ()))
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + step
            up = loss(work, config, batch)
            value[idx] = orig - step
            down = loss(work, config, batch)
            value[idx] = orig
            numeric = (up - down) / (2.0 * step)
            a = analytic[name][idx]
            scale = max(abs(a), abs(numeric))
            err = abs(a - numeric) / scale if scale >= floor else abs(a - numeric)
            if err > errors[group] or math.isnan(err):
                errors[group] = err
                worst[group] = (name, idx)
    ordered = {g: errors[g] for g in GROUPS if g in errors}
    return GradCheckReport(ordered, {g: worst[g] for g in ordered}, step, floor)


def randomize_for_check(params: dict, config: ModelConfig, seed: int, scale: float = 0.5) -> dict:
    """Copy of ``params`` with random taps, memory weights and biases.

    At initialization the memory weights' effect on the taps gradient can be
    degenerate; random values make every group's gradient informative.
    """
    rng = np.random.default_rng(seed)
    out = copy_params(params)
    for name, value in out.items():
        group = param_group(name)
        if group in ("taps", "Wmem", "b"):
            out[name] = rng.uniform(-scale, scale, size=value.shape)
        if group == "taps":
            out[name][0] = 1.0
    return out
