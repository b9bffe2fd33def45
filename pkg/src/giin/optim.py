"""Parameter storage, initialisation and the Adam optimiser."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, InvariantError


def _fans(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 0:
        return 1, 1
    if len(shape) == 1:
        # attention vectors behave like a (1, n) weight
        return shape[0], 1
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    return shape[1] * receptive, shape[0] * receptive


def init_params(scheme: str, shape, seed) -> Tensor:
    """Initialise a trainable tensor.

    ``he`` draws N(0, 2/fan_in), ``glorot`` draws U(+-sqrt(6/(fan_in+fan_out))),
    ``zero`` fills zeros. ``seed`` is an int or a ``np.random.Generator``.
    """
    shape = tuple(int(s) for s in shape)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    fan_in, fan_out = _fans(shape)
    if scheme == "zero":
        data = np.zeros(shape)
    elif scheme == "he":
        data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    elif scheme == "glorot":
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        data = rng.uniform(-lim, lim, size=shape)
    else:
        raise ConfigError(f"unknown init scheme {scheme!r}")
    return Tensor(data, requires_grad=True)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class ParamStore:
    """Named trainable tensors plus their Adam moments."""

    params: dict[str, Tensor] = field(default_factory=dict)
    state: dict[str, AdamState] = field(default_factory=dict)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self.params:
            raise InvariantError(f"duplicate parameter {name}")
        tensor.requires_grad = True
        self.params[name] = tensor
        self.state[name] = AdamState(np.zeros_like(tensor.data), np.zeros_like(tensor.data))
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if arrays[k].shape != p.shape:
                raise InvariantError(f"{k}: shape {arrays[k].shape} != {p.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)


def adam_step(params: ParamStore, lr: float = 1e-5, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, then zero all gradients.

    Parameters without a gradient are treated as having gradient zero
    (their moments still decay and the step counter still advances).
    """
    for name, p in params.items():
        st = params.state.get(name)
        if st is None or st.m.shape != p.shape:
            raise InvariantError(f"no Adam state allocated for {name}")
        g = p.grad if p.grad is not None else 0.0
        st.t += 1
        st.m = beta1 * st.m + (1.0 - beta1) * g
        st.v = beta2 * st.v + (1.0 - beta2) * np.square(g)
        m_hat = st.m / (1.0 - beta1 ** st.t)
        v_hat = st.v / (1.0 - beta2 ** st.t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    params.zero_grad()
