"""Forward/backward policies and state-flow head as small numpy MLPs.

Everything is float64 with hand-written backpropagation. Parameters are
exposed as a flat ``name -> ndarray`` mapping so the optimiser and the
finite-difference checker can treat them uniformly.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .env import State
from .errors import (
    InitialStateQueryError,
    NonFiniteGradientError,
    ShapeMismatchError,
    TerminalStateQueryError,
)

BACKWARD_MODES = ("uniform", "learned")


def silu(x):
    return x / (1.0 + np.exp(-x))


def silu_grad(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


def log_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    if mask is not None:
        logits = np.where(mask, logits, -np.inf)
    m = np.max(logits, axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


class MLP:
    """Fully connected net with SiLU hidden activations and a linear output."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None,
                 init_scale: float = 1.0, zero_output: bool = True):
        self.sizes = tuple(int(s) for s in sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = i == len(self.sizes) - 2
            if rng is None or (last and zero_output):
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.standard_normal((fan_in, fan_out)) * (init_scale / np.sqrt(fan_in))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    def named_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{i}.W"] = w
            out[f"{prefix}.{i}.b"] = b
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        cache = []
        h = x
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            cache.append((h, z))
            h = silu(z) if i < n - 1 else z
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list, dout: np.ndarray, prefix: str) -> dict[str, np.ndarray]:
        grads = {}
        g = dout
        for i in range(len(self.weights) - 1, -1, -1):
            h, z = cache[i]
            if i < len(self.weights) - 1:
                g = g * silu_grad(z)
            grads[f"{prefix}.{i}.W"] = h.T @ g
            grads[f"{prefix}.{i}.b"] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
        return grads


# ---------------------------------------------------------------------------
# state encoding


def encode(tokens: np.ndarray, lengths: np.ndarray, vocab_size: int, seq_len: int) -> np.ndarray:
    """Positional one-hot of the filled tokens plus a one-hot of the prefix length.

    ``tokens`` is ``(n, seq_len)``; entries at positions ``>= lengths[i]`` are ignored.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    n = tokens.shape[0]
    x = np.zeros((n, seq_len * vocab_size + seq_len + 1))
    pos = np.arange(seq_len)
    filled = pos[None, :] < lengths[:, None]
    rows, cols = np.nonzero(filled)
    x[rows, cols * vocab_size + tokens[rows, cols]] = 1.0
    x[np.arange(n), seq_len * vocab_size + lengths] = 1.0
    return x


def encode_states(states: Sequence[State], vocab_size: int, seq_len: int) -> np.ndarray:
    tokens = np.zeros((len(states), seq_len), dtype=np.int64)
    lengths = np.zeros(len(states), dtype=np.int64)
    for i, s in enumerate(states):
        tokens[i, : len(s.prefix)] = s.prefix
        lengths[i] = len(s.prefix)
    return encode(tokens, lengths, vocab_size, seq_len)


def prefix_batch(token_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Expand ``(B, L)`` complete sequences into the ``B*L`` non-terminal prefixes.

    Row ``b * L + t`` is the state ``s_t`` of trajectory ``b`` (length ``t``).
    """
    b, L = token_rows.shape
    tokens = np.repeat(token_rows, L, axis=0)
    lengths = np.tile(np.arange(L), b)
    return tokens, lengths


# ---------------------------------------------------------------------------
# parameters


@dataclass
class PolicyParams:
    vocab_size: int
    seq_len: int
    forward_net: MLP
    flow_net: MLP
    backward_net: MLP | None = None
    log_z: np.ndarray = field(default_factory=lambda: np.zeros(()))

    @property
    def backward_mode(self) -> str:
        return "uniform" if self.backward_net is None else "learned"

    @property
    def input_dim(self) -> int:
        return self.seq_len * self.vocab_size + self.seq_len + 1

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"log_z": self.log_z}
        out.update(self.forward_net.named_arrays("forward"))
        out.update(self.flow_net.named_arrays("flow"))
        if self.backward_net is not None:
            out.update(self.backward_net.named_arrays("backward"))
        return out

    def copy(self) -> "PolicyParams":
        return copy.deepcopy(self)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())


def init_params(
    vocab_size: int,
    seq_len: int,
    hidden: int = 256,
    n_hidden: int = 2,
    backward_mode: str = "uniform",
    rng: np.random.Generator | None = None,
    init_scale: float = 1.0,
) -> PolicyParams:
    """Scaled-normal hidden weights, zero output layers, ``log_z = 0``.

    Zero output layers make the initial forward policy exactly uniform.
    Passing ``rng=None`` gives all-zero weights.
    """
    if backward_mode not in BACKWARD_MODES:
        raise ValueError(f"backward_mode must be one of {BACKWARD_MODES}")
    d_in = seq_len * vocab_size + seq_len + 1
    body = [hidden] * n_hidden
    fwd = MLP([d_in, *body, vocab_size], rng, init_scale)
    flow = MLP([d_in, *body, 1], rng, init_scale)
    bwd = MLP([d_in, *body, vocab_size], rng, init_scale) if backward_mode == "learned" else None
    return PolicyParams(vocab_size, seq_len, fwd, flow, bwd, np.zeros(()))


# ---------------------------------------------------------------------------
# policy queries


def forward_logprobs_batch(params: PolicyParams, x: np.ndarray) -> np.ndarray:
    return log_softmax(params.forward_net(x))


def forward_logprobs(params: PolicyParams, s: State) -> np.ndarray:
    if s.is_terminal or len(s.prefix) >= params.seq_len:
        raise TerminalStateQueryError(f"no forward policy at terminal state {s.prefix}")
    x = encode_states([s], params.vocab_size, params.seq_len)
    return forward_logprobs_batch(params, x)[0]


def parent_mask(tokens: np.ndarray, lengths: np.ndarray, vocab_size: int) -> np.ndarray:
    """Valid parents of each child, indexed by the token that would be removed.

    Append-only construction leaves a single option: the last appended token.
    """
    mask = np.zeros((len(lengths), vocab_size), dtype=bool)
    mask[np.arange(len(lengths)), tokens[np.arange(len(lengths)), lengths - 1]] = True
    return mask


def backward_logprobs_batch(params: PolicyParams, tokens: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """log P_B(parent | child) for each ``(tokens, lengths)`` child state (lengths >= 1)."""
    if params.backward_net is None:
        return np.zeros(len(lengths))
    x = encode(tokens, lengths, params.vocab_size, params.seq_len)
    logp = log_softmax(params.backward_net(x), parent_mask(tokens, lengths, params.vocab_size))
    last = tokens[np.arange(len(lengths)), lengths - 1]
    return logp[np.arange(len(lengths)), last]


def backward_logprob(params: PolicyParams, s_child: State) -> float:
    if not s_child.prefix:
        raise InitialStateQueryError("the initial state has no parent")
    tokens = np.zeros((1, params.seq_len), dtype=np.int64)
    tokens[0, : len(s_child.prefix)] = s_child.prefix
    return float(backward_logprobs_batch(params, tokens, np.array([len(s_child.prefix)]))[0])


def sample_action(params: PolicyParams, s: State, rng: np.random.Generator) -> tuple[int, float]:
    logp = forward_logprobs(params, s)
    a = _draw(np.exp(logp)[None, :], np.array([rng.random()]))[0]
    return int(a), float(logp[a])


def _draw(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of one index per row."""
    cdf = np.cumsum(probs, axis=1)
    idx = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class OptimizerState:
    lr: float = 1e-3
    log_z_lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def grad_step(params: PolicyParams, opt: OptimizerState, grads: dict[str, np.ndarray]) -> PolicyParams:
    """Adam update applied in place; returns ``params`` for chaining."""
    arrays = params.arrays()
    for name, g in grads.items():
        if name not in arrays:
            raise ShapeMismatchError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != arrays[name].shape:
            raise ShapeMismatchError(f"{name}: gradient shape {np.shape(g)} != parameter shape {arrays[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name}")
    opt.step += 1
    t = opt.step
    bc1 = 1.0 - opt.beta1**t
    bc2 = 1.0 - opt.beta2**t
    for name, g in grads.items():
        p = arrays[name]
        m = opt.m.get(name)
        if m is None:
            m = opt.m[name] = np.zeros_like(p)
            opt.v[name] = np.zeros_like(p)
        v = opt.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * np.square(g)
        lr = opt.log_z_lr if name == "log_z" else opt.lr
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    return params


def gradient_check(
    params: PolicyParams,
    objective: Callable,
    batch,
    h: float = 1e-5,
    names: Sequence[str] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Error per scalar is ``|a - n| / (|a| + 1e-8)``. Every entry of every
    parameter array is probed, so keep the network small.
    """
    report = objective(params, batch)
    arrays = params.arrays()
    worst = 0.0
    for name in names or list(arrays):
        p = arrays[name]
        analytic = report.grads.get(name)
        if analytic is None:
            analytic = np.zeros_like(p)
        flat = p.reshape(-1)
        a_flat = np.asarray(analytic).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = objective(params, batch).loss
            flat[i] = orig - h
            lm = objective(params, batch).loss
            flat[i] = orig
            num = (lp - lm) / (2 * h)
            err = abs(a_flat[i] - num) / (abs(a_flat[i]) + 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(params: PolicyParams, path) -> None:
    """Write an ``.npz`` holding every parameter array plus a JSON shape manifest."""
    arrays = params.arrays()
    manifest = {
        "format": "dbgfn-policy",
        "version": CHECKPOINT_VERSION,
        "vocab_size": params.vocab_size,
        "seq_len": params.seq_len,
        "forward_sizes": list(params.forward_net.sizes),
        "flow_sizes": list(params.flow_net.sizes),
        "backward_sizes": None if params.backward_net is None else list(params.backward_net.sizes),
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
    }
    with open(path, "wb") as fh:
        np.savez(fh, __manifest__=np.array(json.dumps(manifest, sort_keys=True)), **arrays)


def load_checkpoint(path) -> PolicyParams:
    with np.load(path, allow_pickle=False) as data:
        manifest = json.loads(str(data["__manifest__"]))
        if manifest.get("format") != "dbgfn-policy" or manifest.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} policy checkpoint")
        params = PolicyParams(
            manifest["vocab_size"],
            manifest["seq_len"],
            MLP(manifest["forward_sizes"]),
            MLP(manifest["flow_sizes"]),
            MLP(manifest["backward_sizes"]) if manifest["backward_sizes"] else None,
            np.zeros(()),
        )
        arrays = params.arrays()
        for name, shape in manifest["shapes"].items():
            if name not in arrays or list(arrays[name].shape) != shape or data[name].shape != tuple(shape):
                raise ShapeMismatchError(f"{path}: bad shape for {name}")
            arrays[name][...] = data[name]
    return params
