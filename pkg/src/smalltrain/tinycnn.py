"""A desk-scale CNN whose parameters form exactly three ordered groups.

Architecture (grayscale input, any spatial size >= 16):

    group 1: conv 3x3 -> 8 ch,  relu, 2x2 max pool
             conv 3x3 -> 16 ch, relu, 2x2 max pool
    group 2: conv 3x3 -> 32 ch, relu, 2x2 max pool
             conv 3x3 -> 32 ch, relu
    group 3: global average pool -> fully-connected head -> sigmoid

Group 1 sits closest to the image; the head is the replaceable part when
weights are transferred from another task. Three initialization regimes
are provided: scaled-uniform fan-in init, loading a pretrained checkpoint
(head refreshed), and moment-preserving reinitialization that replaces
every transferred tensor by normal draws matching its empirical mean and
standard deviation.

Checkpoints are NumPy ``.npz`` archives mapping parameter names to
float64 arrays; the round trip is bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ndtensor import Graph, Tensor

MIN_IMAGE_SIZE = 16
CONV_CHANNELS = ((1, 8), (8, 16), (16, 32), (32, 32))
KERNEL = 3
HEAD_IN = CONV_CHANNELS[-1][1]
HEAD_NAMES = ("head.weight", "head.bias")


@dataclass
class LayerGroup:
    """One of the three ordered parameter groups; index 1 is closest to
    the image."""

    index: int
    names: list[str] = field(default_factory=list)
    frozen: bool = False


class TinyCnn:
    """The model: named parameter tensors plus their group partition."""

    def __init__(self, image_size: int, n_labels: int):
        if image_size < MIN_IMAGE_SIZE:
            raise ValueError(f"image_size {image_size} < {MIN_IMAGE_SIZE}: pooling would underflow")
        if n_labels < 1:
            raise ValueError(f"n_labels must be >= 1, got {n_labels}")
        self.image_size = image_size
        self.n_labels = n_labels
        self.params: dict[str, Tensor] = {}
        for li, (cin, cout) in enumerate(CONV_CHANNELS, start=1):
            self.params[f"conv{li}.weight"] = Tensor(np.zeros((cout, cin, KERNEL, KERNEL)), requires_grad=True)
            self.params[f"conv{li}.bias"] = Tensor(np.zeros(cout), requires_grad=True)
        self.params["head.weight"] = Tensor(np.zeros((HEAD_IN, n_labels)), requires_grad=True)
        self.params["head.bias"] = Tensor(np.zeros(n_labels), requires_grad=True)
        self.groups = [
            LayerGroup(1, ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"]),
            LayerGroup(2, ["conv3.weight", "conv3.bias", "conv4.weight", "conv4.bias"]),
            LayerGroup(3, ["head.weight", "head.bias"]),
        ]

    def forward(self, g: Graph, x: Tensor) -> Tensor:
        """Probabilities (B, n_labels) for a batch (B, 1, H, W)."""
        h = x
        for li in range(1, len(CONV_CHANNELS) + 1):
            h = g.conv2d(h, self.params[f"conv{li}.weight"])
            h = g.add_bias(h, self.params[f"conv{li}.bias"])
            h = g.relu(h)
            if li < len(CONV_CHANNELS):
                h = g.max_pool_2x2(h)
        h = g.global_avg_pool(h)
        h = g.matmul(h, self.params["head.weight"])
        h = g.add_bias(h, self.params["head.bias"])
        return g.sigmoid(h)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without gradient bookkeeping kept around."""
        return self.forward(Graph(), Tensor(x)).data

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            t.data = np.array(state[name], dtype=np.float64, copy=True)

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def group_of(self, name: str) -> LayerGroup:
        for grp in self.groups:
            if name in grp.names:
                return grp
        raise KeyError(name)


def fan_in(name: str, shape: tuple) -> int:
    if name.endswith(".bias"):
        raise ValueError("fan_in is defined for weight tensors")
    if len(shape) == 4:  # conv: (out, in, k, k)
        return shape[1] * shape[2] * shape[3]
    return shape[0]  # fully connected: (in, out)


def _init_tensor(rng: np.random.Generator, name: str, t: Tensor) -> None:
    if name.endswith(".bias"):
        t.data = np.zeros(t.shape)
    else:
        bound = 1.0 / np.sqrt(fan_in(name, t.shape))
        t.data = rng.uniform(-bound, bound, size=t.shape)


def init_default(model: TinyCnn, seed: int) -> TinyCnn:
    """Scaled-uniform fan-in init: weights ~ U[-1/sqrt(fan_in), +...],
    biases zero. Deterministic given the seed."""
    rng = np.random.default_rng(seed)
    for name, t in model.params.items():
        _init_tensor(rng, name, t)
    return model


def build_model(image_size: int, n_labels: int, seed: int) -> TinyCnn:
    return init_default(TinyCnn(image_size, n_labels), seed)


def save_checkpoint(model: TinyCnn, path) -> None:
    np.savez(path, **{name: t.data for name, t in model.params.items()})


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with np.load(path) as npz:
        return {name: npz[name].astype(np.float64) for name in npz.files}


def load_pretrained(model: TinyCnn, checkpoint, head_seed: int = 0) -> TinyCnn:
    """Copy every non-head tensor from a checkpoint (dict or .npz path)
    into the model; the head is freshly initialized, since its width
    belongs to the new task. Non-head shape mismatches are rejected."""
    state = checkpoint if isinstance(checkpoint, dict) else load_checkpoint(checkpoint)
    for name, t in model.params.items():
        if name in HEAD_NAMES:
            continue
        if name not in state:
            raise ValueError(f"load_pretrained: checkpoint is missing '{name}'")
        src = np.asarray(state[name], dtype=np.float64)
        if src.shape != t.shape:
            raise ValueError(f"load_pretrained: shape mismatch for '{name}': "
                             f"checkpoint {src.shape} vs model {t.shape}")
    for name, t in model.params.items():
        if name not in HEAD_NAMES:
            t.data = np.array(state[name], dtype=np.float64, copy=True)
    rng = np.random.default_rng(head_seed)
    for name in HEAD_NAMES:
        _init_tensor(rng, name, model.params[name])
    return model


def reinit_moment_preserving(model: TinyCnn, seed: int) -> TinyCnn:
    """Replace every transferred (non-head) tensor by i.i.d. normal draws
    with that tensor's empirical mean and standard deviation.

    This keeps each layer's first and second moments while destroying the
    learned features. A zero-variance tensor degenerates to its constant
    mean. The head is untouched (it is freshly initialized anyway).
    """
    rng = np.random.default_rng(seed)
    for name, t in model.params.items():
        if name in HEAD_NAMES:
            continue
        mu = float(t.data.mean())
        sigma = float(t.data.std())
        t.data = rng.normal(mu, sigma, size=t.shape)
    return model
