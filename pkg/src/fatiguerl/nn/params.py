"""Named parameter collections.

A ParameterSet maps string names to Tensors and tracks which are trainable.
Frozen entries (randomized priors, target networks) live in the same set so
checkpointing sees one flat namespace.
"""

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


class ParameterSet:
    def __init__(self):
        self._entries: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise ContractError(f"duplicate parameter name: {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=trainable)
        self._entries[name] = t
        self._trainable[name] = bool(trainable)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list:
        return list(self._entries)

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, name: str, flag: bool) -> None:
        """Flip trainability; keeps the tensor's grad tracking in sync."""
        if name not in self._entries:
            raise ContractError(f"unknown parameter: {name!r}")
        self._trainable[name] = bool(flag)
        self._entries[name].requires_grad = bool(flag)

    def items(self):
        return self._entries.items()

    def trainable_items(self):
        for name, t in self._entries.items():
            if self._trainable[name]:
                yield name, t

    def state_dict(self) -> dict:
        """Copies of all parameter arrays, keyed by name."""
        return {name: t.data.copy() for name, t in self._entries.items()}

    def load_state_dict(self, state: dict) -> None:
        """Overwrite parameter values in place. Names and shapes must match."""
        missing = set(self._entries) - set(state)
        extra = set(state) - set(self._entries)
        if missing or extra:
            raise ContractError(
                f"state dict mismatch: missing {sorted(missing)}, extra {sorted(extra)}"
            )
        for name, arr in state.items():
            t = self._entries[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ContractError(
                    f"shape mismatch for {name!r}: {arr.shape} vs {t.data.shape}"
                )
            t.data = arr.copy()
