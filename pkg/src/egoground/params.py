"""Named parameter store.

Every learnable array lives here under a dotted name. Sharing is by
reference: the shot branch's pure-video stack reuses the fusion layers'
tensors instead of registering its own.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor


class ParamStore:
    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.asarray(array, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def parameter_count(self, prefix: str = "") -> int:
        return sum(t.data.size for n, t in self.items() if n.startswith(prefix))

    def zero_grads(self):
        for _, t in self.items():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise KeyError(
                f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, t in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()
