"""Small feed-forward vector field v_θ(x_t, t, cond) with hand-written gradients.

Input layout is [x_t | time embedding | condition]; hidden layers use tanh and
the output layer is linear. Weights are stored (out, in) so a batch of row
vectors goes through as z = a Wᵀ + b.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from services.exceptions import DivergenceError, InputError, ParameterError, ShapeError


CHECKPOINT_MAGIC = b'LPCFMNET'
CHECKPOINT_VERSION = 1
ACTIVATION_CODES = {'tanh': 0, 'identity': 1}


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == 'tanh':
        return np.tanh(z)
    return z


def _activation_slope(name: str, activated: np.ndarray) -> np.ndarray:
    if name == 'tanh':
        return 1.0 - activated ** 2
    return np.ones_like(activated)


def embed_time(t, width: int) -> np.ndarray:
    """Time features: raw t for width 1, else [sin(2πkt)…, cos(2πkt)…] for k = 1..width/2."""
    t = np.asarray(t, dtype=np.float64)
    if width == 1:
        return t[..., None]
    if width < 2 or width % 2:
        raise ParameterError(f'time embedding width must be 1 or an even number >= 2, got {width}')
    k = np.arange(1, width // 2 + 1, dtype=np.float64)
    angle = 2.0 * np.pi * t[..., None] * k
    return np.concatenate([np.sin(angle), np.cos(angle)], axis=-1)


@dataclass(eq=False)
class GradientSet:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def arrays(self) -> Iterator[np.ndarray]:
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.arrays())


@dataclass(eq=False)
class VectorFieldModel:
    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    flow_dim: int
    cond_dim: int = 0
    time_embedding_width: int = 1
    activation: str = 'tanh'

    def __post_init__(self):
        if self.activation not in ACTIVATION_CODES:
            raise ParameterError(f'unknown activation {self.activation!r}')
        if self.time_embedding_width != 1:
            embed_time(0.0, self.time_embedding_width)
        if self.layer_sizes[0] != self.input_width:
            raise ShapeError(
                f'input layer has width {self.layer_sizes[0]}, expected '
                f'{self.flow_dim} + {self.time_embedding_width} + {self.cond_dim}'
            )
        if self.layer_sizes[-1] != self.flow_dim:
            raise ShapeError(f'output layer has width {self.layer_sizes[-1]}, flow has dim {self.flow_dim}')
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError('one weight matrix and bias vector per layer transition expected')
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if w.shape != expected or b.shape != (expected[0],):
                raise ShapeError(f'layer {i} has weights {w.shape} / bias {b.shape}, expected {expected}')

    @property
    def input_width(self) -> int:
        return self.flow_dim + self.time_embedding_width + self.cond_dim

    def parameters(self) -> Iterator[np.ndarray]:
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def parameter_norms(self) -> List[float]:
        return [float(np.linalg.norm(p)) for p in self.parameters()]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def copy(self) -> 'VectorFieldModel':
        return VectorFieldModel(
            layer_sizes=list(self.layer_sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            flow_dim=self.flow_dim,
            cond_dim=self.cond_dim,
            time_embedding_width=self.time_embedding_width,
            activation=self.activation,
        )

    def predict(self, x_t: np.ndarray, t, cond: Optional[np.ndarray] = None) -> np.ndarray:
        return forward(self, x_t, t, cond)


def init_model(flow_dim: int, cond_dim: int = 0, hidden: Sequence[int] = (64, 64),
               time_embedding_width: int = 1, rng: Optional[np.random.Generator] = None,
               activation: str = 'tanh') -> VectorFieldModel:
    """Glorot-uniform weights in [−s, s], s = √(6 / (fan_in + fan_out)); zero biases."""
    rng = rng if rng is not None else np.random.default_rng(0)
    sizes = [flow_dim + time_embedding_width + cond_dim, *hidden, flow_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-scale, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return VectorFieldModel(sizes, weights, biases, flow_dim, cond_dim, time_embedding_width, activation)


def assemble_input(model: VectorFieldModel, x_t: np.ndarray, t,
                   cond: Optional[np.ndarray]) -> Tuple[np.ndarray, bool]:
    """Stack [x_t | embed(t) | cond] into a 2-D batch; also report whether x_t was a single vector."""
    x_t = np.asarray(x_t, dtype=np.float64)
    single = x_t.ndim == 1
    x_t = np.atleast_2d(x_t)
    if x_t.shape[1] != model.flow_dim:
        raise ShapeError(f'x_t has width {x_t.shape[1]}, model expects {model.flow_dim}')
    n = x_t.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    parts = [x_t, embed_time(t, model.time_embedding_width)]
    if model.cond_dim:
        if cond is None:
            raise ShapeError(f'model expects a condition of width {model.cond_dim}')
        cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
        if cond.shape[1] != model.cond_dim:
            raise ShapeError(f'condition has width {cond.shape[1]}, model expects {model.cond_dim}')
        parts.append(np.broadcast_to(cond, (n, model.cond_dim)))
    elif cond is not None and np.size(cond):
        raise ShapeError('model takes no condition')
    return np.concatenate(parts, axis=1), single


def forward_cached(model: VectorFieldModel, inputs: np.ndarray) -> List[np.ndarray]:
    """Activations of every layer, inputs first and output last."""
    activations = [inputs]
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = activations[-1] @ w.T + b
        activations.append(z if i == last else _activate(model.activation, z))
    return activations


def forward(model: VectorFieldModel, x_t: np.ndarray, t, cond: Optional[np.ndarray] = None) -> np.ndarray:
    inputs, single = assemble_input(model, x_t, t, cond)
    output = forward_cached(model, inputs)[-1]
    return output[0] if single else output


def backward_cached(model: VectorFieldModel, activations: List[np.ndarray],
                    loss_grad: np.ndarray) -> GradientSet:
    delta = np.atleast_2d(np.asarray(loss_grad, dtype=np.float64))
    if delta.shape != activations[-1].shape:
        raise ShapeError(f'loss gradient has shape {delta.shape}, output has {activations[-1].shape}')
    n_layers = len(model.weights)
    grad_w: List[np.ndarray] = [np.empty(0)] * n_layers
    grad_b: List[np.ndarray] = [np.empty(0)] * n_layers
    for i in reversed(range(n_layers)):
        grad_w[i] = delta.T @ activations[i]
        grad_b[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i]) * _activation_slope(model.activation, activations[i])
    return GradientSet(grad_w, grad_b)


def backward(model: VectorFieldModel, x_t: np.ndarray, t, cond: Optional[np.ndarray],
             loss_grad: np.ndarray) -> GradientSet:
    """Gradients of a scalar loss w.r.t. every parameter, given dloss/doutput."""
    inputs, _ = assemble_input(model, x_t, t, cond)
    return backward_cached(model, forward_cached(model, inputs), loss_grad)


def gradient_check(model: VectorFieldModel, x_t: np.ndarray, t, cond: Optional[np.ndarray],
                   target: np.ndarray, step: float = 1e-6, abs_tol: float = 1e-8) -> float:
    """Worst relative error of backward against central differences of the per-coordinate MSE.

    Entries whose analytic and numeric values agree within abs_tol count as exact.
    The model is perturbed in place and restored.
    """
    inputs, _ = assemble_input(model, x_t, t, cond)
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    activations = forward_cached(model, inputs)
    grads = backward_cached(model, activations, 2.0 * (activations[-1] - target) / target.size)

    def loss() -> float:
        return float(np.mean((forward_cached(model, inputs)[-1] - target) ** 2))

    worst = 0.0
    for param, grad in zip(model.parameters(), grads.arrays()):
        for idx in np.ndindex(param.shape):
            original = param[idx]
            param[idx] = original + step
            plus = loss()
            param[idx] = original - step
            minus = loss()
            param[idx] = original
            numeric = (plus - minus) / (2.0 * step)
            gap = abs(numeric - grad[idx])
            if gap > abs_tol:
                worst = max(worst, gap / max(abs(numeric), abs(grad[idx])))
    return worst


# ------------------ Optimizers ------------------

@dataclass(eq=False)
class AdamState:
    first: List[np.ndarray] = field(default_factory=list)
    second: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, model: VectorFieldModel) -> 'AdamState':
        params = list(model.parameters())
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def _check_grads(model: VectorFieldModel, grads: GradientSet) -> None:
    params = list(model.parameters())
    arrays = list(grads.arrays())
    if len(params) != len(arrays) or any(p.shape != g.shape for p, g in zip(params, arrays)):
        raise ShapeError('gradient shapes do not mirror the model')
    if not grads.is_finite():
        raise DivergenceError('non-finite gradient')


def adam_step(model: VectorFieldModel, grads: GradientSet, state: AdamState, step_index: int,
              lr: float, beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8) -> VectorFieldModel:
    """Bias-corrected Adam update in place; step_index counts from 1."""
    _check_grads(model, grads)
    if step_index < 1:
        raise ParameterError(f'step_index counts from 1, got {step_index}')
    correction1 = 1.0 - beta1 ** step_index
    correction2 = 1.0 - beta2 ** step_index
    for param, grad, m, v in zip(model.parameters(), grads.arrays(), state.first, state.second):
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        param -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return model


def sgd_step(model: VectorFieldModel, grads: GradientSet, lr: float) -> VectorFieldModel:
    _check_grads(model, grads)
    for param, grad in zip(model.parameters(), grads.arrays()):
        param -= lr * grad
    return model


# ------------------ Checkpoint ------------------

def save_checkpoint(model: VectorFieldModel, path: Path) -> Path:
    """Little-endian: magic, uint32 header, uint32 layer sizes, float64 W (row-major) and b per layer."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = np.array([
        CHECKPOINT_VERSION, len(model.layer_sizes), model.flow_dim, model.cond_dim,
        model.time_embedding_width, ACTIVATION_CODES[model.activation],
    ], dtype='<u4')
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(header.tobytes())
        f.write(np.asarray(model.layer_sizes, dtype='<u4').tobytes())
        for param in model.parameters():
            f.write(np.ascontiguousarray(param, dtype='<f8').tobytes())
    return path


def load_checkpoint(path: Path) -> VectorFieldModel:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise InputError(f'{path} is not a model checkpoint')
    offset = len(CHECKPOINT_MAGIC)
    try:
        header = np.frombuffer(raw, dtype='<u4', count=6, offset=offset)
        version, n_sizes, flow_dim, cond_dim, time_width, act_code = (int(v) for v in header)
    except ValueError as e:
        raise InputError(f'{path} is truncated: {e}') from e
    if version != CHECKPOINT_VERSION:
        raise InputError(f'checkpoint format version {version} is not supported')
    if act_code not in ACTIVATION_CODES.values():
        raise InputError(f'unknown activation code {act_code} in {path}')
    try:
        offset += header.nbytes
        sizes = [int(s) for s in np.frombuffer(raw, dtype='<u4', count=n_sizes, offset=offset)]
        offset += 4 * n_sizes
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = np.frombuffer(raw, dtype='<f8', count=fan_in * fan_out, offset=offset)
            offset += w.nbytes
            b = np.frombuffer(raw, dtype='<f8', count=fan_out, offset=offset)
            offset += b.nbytes
            weights.append(w.reshape(fan_out, fan_in).astype(np.float64))
            biases.append(b.astype(np.float64))
    except ValueError as e:
        raise InputError(f'{path} is truncated: {e}') from e
    if offset != len(raw):
        raise InputError(f'{path} has {len(raw) - offset} trailing bytes')
    activation = {code: name for name, code in ACTIVATION_CODES.items()}[act_code]
    model = VectorFieldModel(sizes, weights, biases, flow_dim, cond_dim, time_width, activation)
    if not model.is_finite():
        raise InputError(f'{path} holds non-finite weights')
    return model
