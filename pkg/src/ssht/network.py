"""Small feedforward networks with hand-written reverse-mode gradients.

A network is a feature extractor (a stack of dense layers with a pointwise
nonlinearity) followed by a linear classifier head. Parameters live in a
flat list [W1, b1, ..., Wk, bk, Wc, bc] with weights stored input x output,
so a layer computes x @ W + b. Gradients come back in the same layout.

The optimizer is SGD with nesterov momentum and decoupled-from-nothing
weight decay (decay is folded into the gradient before the momentum
update, the classic formulation).

Models serialize to a line-oriented text format, version "ssht-model/1".
Floats are written with repr() so a round trip is bit exact.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .linalg import NumericalError

MODEL_FORMAT = "ssht-model/1"

ACTIVATIONS = ("tanh", "relu")


@dataclass
class NetworkSpec:
    input_dim: int
    hidden_dims: List[int]
    feature_dim: int
    num_classes: int
    activation: str = "tanh"

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if not self.hidden_dims:
            raise ValueError("hidden_dims must be non-empty")
        if any(int(h) < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be positive, got {self.feature_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, "
                             f"got {self.activation!r}")

    def layer_dims(self) -> List[Tuple[int, int]]:
        """(fan_in, fan_out) pairs for every layer, classifier last."""
        widths = [self.input_dim] + list(self.hidden_dims) + [self.feature_dim]
        dims = [(widths[i], widths[i + 1]) for i in range(len(widths) - 1)]
        dims.append((self.feature_dim, self.num_classes))
        return dims


# A gradient set is one array per parameter, same order and shapes.
GradientSet = List[np.ndarray]


@dataclass
class Network:
    spec: NetworkSpec
    params: List[np.ndarray]
    meta: Dict[str, str] = field(default_factory=dict)

    def num_extractor_layers(self) -> int:
        return len(self.spec.hidden_dims) + 1

    def classifier_param_indices(self) -> Tuple[int, int]:
        n = len(self.params)
        return (n - 2, n - 1)


def default_spec(input_dim: int = 2, num_classes: int = 4,
                 activation: str = "tanh") -> NetworkSpec:
    return NetworkSpec(input_dim=input_dim, hidden_dims=[64, 64],
                       feature_dim=16, num_classes=num_classes,
                       activation=activation)


def init_network(spec: NetworkSpec, seed: int) -> Network:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    spec.validate()
    rng = np.random.default_rng(seed)
    params: List[np.ndarray] = []
    for fan_in, fan_out in spec.layer_dims():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return Network(spec=spec, params=params)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(float)


def _check_batch(net: Network, x_batch: np.ndarray) -> np.ndarray:
    x = np.asarray(x_batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.spec.input_dim:
        raise ValueError(f"expected batch of shape (B, {net.spec.input_dim}), "
                         f"got {x.shape}")
    return x


def _forward_cached(net: Network, x: np.ndarray):
    """Forward pass keeping pre- and post-activation tensors per layer."""
    kind = net.spec.activation
    n_ext = net.num_extractor_layers()
    acts = [x]
    pre = []
    a = x
    for layer in range(n_ext):
        w, b = net.params[2 * layer], net.params[2 * layer + 1]
        z = a @ w + b
        a = _activate(z, kind)
        pre.append(z)
        acts.append(a)
    wc, bc = net.params[-2], net.params[-1]
    logits = a @ wc + bc
    return acts, pre, logits


def forward(net: Network, x_batch: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Return (features, logits) for a batch; pure function."""
    x = _check_batch(net, x_batch)
    acts, _, logits = _forward_cached(net, x)
    return acts[-1], logits


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting the row max."""
    z = np.asarray(logits, dtype=float)
    shifted = z - np.max(z, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def backward(net: Network, x_batch: np.ndarray,
             logit_grad: np.ndarray) -> GradientSet:
    """Reverse-mode gradients of any loss whose logit gradient is given.

    Recomputes the forward pass on x_batch, then backpropagates
    logit_grad (shape B x C) to every parameter tensor.
    """
    x = _check_batch(net, x_batch)
    g = np.asarray(logit_grad, dtype=float)
    if g.shape != (x.shape[0], net.spec.num_classes):
        raise ValueError(f"logit_grad must be {(x.shape[0], net.spec.num_classes)}, "
                         f"got {g.shape}")
    kind = net.spec.activation
    acts, pre, _ = _forward_cached(net, x)
    grads: GradientSet = [np.empty(0)] * len(net.params)

    features = acts[-1]
    grads[-2] = features.T @ g
    grads[-1] = np.sum(g, axis=0)
    da = g @ net.params[-2].T

    for layer in range(net.num_extractor_layers() - 1, -1, -1):
        dz = da * _activate_grad(pre[layer], acts[layer + 1], kind)
        grads[2 * layer] = acts[layer].T @ dz
        grads[2 * layer + 1] = np.sum(dz, axis=0)
        if layer > 0:
            da = dz @ net.params[2 * layer].T
    return grads


def zero_gradients(net: Network) -> GradientSet:
    return [np.zeros_like(p) for p in net.params]


def add_scaled(acc: GradientSet, grads: GradientSet, scale: float = 1.0) -> None:
    """acc += scale * grads, in place."""
    for a, g in zip(acc, grads):
        a += scale * g


@dataclass
class SgdState:
    learning_rate: float
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 0.0
    velocity: List[np.ndarray] = field(default_factory=list)

    def validate(self) -> None:
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be non-negative")


def init_sgd(net: Network, learning_rate: float, momentum: float = 0.9,
             nesterov: bool = True, weight_decay: float = 0.0) -> SgdState:
    state = SgdState(learning_rate=learning_rate, momentum=momentum,
                     nesterov=nesterov, weight_decay=weight_decay,
                     velocity=[np.zeros_like(p) for p in net.params])
    state.validate()
    return state


def sgd_step(net: Network, grads: GradientSet, state: SgdState,
             frozen: Tuple[int, ...] = ()) -> None:
    """One optimizer step in place.

    Weight decay is added to the raw gradient, then
        v <- momentum * v + g
        update = momentum * v + g   (nesterov)  or  v
        param <- param - lr * update
    Parameter indices in `frozen` are skipped entirely.
    """
    if len(grads) != len(net.params):
        raise ValueError("gradient count does not match parameter count")
    skip = set(frozen)
    for i, (p, g) in enumerate(zip(net.params, grads)):
        if i in skip:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, "
                             f"parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter tensor {i}")
        g_eff = g + state.weight_decay * p
        v = state.velocity[i]
        v *= state.momentum
        v += g_eff
        update = state.momentum * v + g_eff if state.nesterov else v
        p -= state.learning_rate * update


def _format_array(a: np.ndarray) -> str:
    return " ".join(repr(float(x)) for x in a.ravel())


def serialize(net: Network) -> str:
    """Self-describing text form of a network, version ssht-model/1."""
    lines = [MODEL_FORMAT]
    for key in sorted(net.meta):
        lines.append(f"meta.{key} = {net.meta[key]}")
    s = net.spec
    lines.append(f"spec.input_dim = {s.input_dim}")
    lines.append(f"spec.hidden_dims = {','.join(str(h) for h in s.hidden_dims)}")
    lines.append(f"spec.feature_dim = {s.feature_dim}")
    lines.append(f"spec.num_classes = {s.num_classes}")
    lines.append(f"spec.activation = {s.activation}")
    for i, p in enumerate(net.params):
        shape = ",".join(str(d) for d in p.shape)
        lines.append(f"param.{i}.shape = {shape}")
        lines.append(f"param.{i}.data = {_format_array(p)}")
    return "\n".join(lines) + "\n"


class ModelFormatError(ValueError):
    """Raised when a model document fails to parse."""


def _parse_kv_lines(lines: List[str]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for ln in lines:
        if not ln.strip():
            continue
        if " = " not in ln:
            raise ModelFormatError(f"malformed line: {ln!r}")
        key, val = ln.split(" = ", 1)
        out[key.strip()] = val
    return out


def deserialize(text: str) -> Network:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MODEL_FORMAT:
        head = lines[0].strip() if lines else ""
        raise ModelFormatError(f"expected header {MODEL_FORMAT!r}, got {head!r}")
    kv = _parse_kv_lines(lines[1:])
    try:
        spec = NetworkSpec(
            input_dim=int(kv["spec.input_dim"]),
            hidden_dims=[int(h) for h in kv["spec.hidden_dims"].split(",")],
            feature_dim=int(kv["spec.feature_dim"]),
            num_classes=int(kv["spec.num_classes"]),
            activation=kv["spec.activation"],
        )
        spec.validate()
    except KeyError as e:
        raise ModelFormatError(f"missing field {e.args[0]}") from e
    except ValueError as e:
        raise ModelFormatError(f"bad spec field: {e}") from e

    n_params = 2 * (len(spec.hidden_dims) + 2)
    params: List[np.ndarray] = []
    expected = [d for pair in spec.layer_dims() for d in (pair, (pair[1],))]
    for i in range(n_params):
        try:
            shape = tuple(int(d) for d in kv[f"param.{i}.shape"].split(","))
            flat = np.array([float(tok) for tok in kv[f"param.{i}.data"].split()])
        except KeyError as e:
            raise ModelFormatError(f"missing field {e.args[0]}") from e
        except ValueError as e:
            raise ModelFormatError(f"bad numeric data in param {i}: {e}") from e
        if shape != tuple(expected[i]):
            raise ModelFormatError(f"param {i} shape {shape} does not match "
                                   f"spec shape {tuple(expected[i])}")
        if flat.size != int(np.prod(shape)):
            raise ModelFormatError(f"param {i} has {flat.size} values, "
                                   f"shape {shape} needs {int(np.prod(shape))}")
        params.append(flat.reshape(shape))

    meta = {k[len("meta."):]: v for k, v in kv.items() if k.startswith("meta.")}
    return Network(spec=spec, params=params, meta=meta)
