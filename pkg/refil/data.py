# refil/data.py
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, Optional, Tuple

import numpy as np


@dataclass
class Dataset:
    """In-memory examples: ``inputs[i]`` with label ``labels[i]``."""

    inputs: np.ndarray
    labels: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def example_shape(self) -> Tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def subset(self, size: Optional[int], rng: Optional[np.random.Generator] = None) -> "Dataset":
        """First ``size`` examples, or a seeded random sample when ``rng`` is given."""
        if size is None or size >= len(self):
            return self
        if rng is None:
            idx = np.arange(size)
        else:
            idx = np.sort(rng.choice(len(self), size=size, replace=False))
        return Dataset(self.inputs[idx], self.labels[idx], dict(self.meta))

    def split(self, train_fraction: float, rng: np.random.Generator) -> Tuple["Dataset", "Dataset"]:
        order = rng.permutation(len(self))
        cut = int(round(train_fraction * len(self)))
        a, b = np.sort(order[:cut]), np.sort(order[cut:])
        return (Dataset(self.inputs[a], self.labels[a], dict(self.meta)),
                Dataset(self.inputs[b], self.labels[b], dict(self.meta)))

    def batches(self, batch_size: int, order: Optional[np.ndarray] = None) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            yield self.inputs[idx], self.labels[idx]
