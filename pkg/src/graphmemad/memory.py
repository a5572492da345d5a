"""Prototype memory of normal-node embeddings.

Items are plain arrays, never parameters: reads and the two memory losses
treat them as constants, and :meth:`MemoryBank.update` rewrites them in place
from a set of pseudo-normal queries.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(norms == 0.0, 0.0, x / np.where(norms == 0.0, 1.0, norms))


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _distance(sq: Tensor, kind: str) -> Tensor:
    return sq if kind == "squared" else ad.sqrt(sq, 1e-12)


@dataclass
class MemoryReadout:
    s_q: Tensor
    h_hat: Tensor
    h_bar: Tensor


class MemoryBank:
    def __init__(self, items: np.ndarray, similarity: str = "cosine", unit_queries: bool = False):
        if similarity not in ("cosine", "dot"):
            raise ValueError(f"unknown similarity {similarity!r}")
        self.items = np.array(items, dtype=np.float64)
        self.kind = similarity
        self.unit_queries = unit_queries

    @classmethod
    def random(cls, m: int, d_h: int, rng: np.random.Generator, **kwargs) -> "MemoryBank":
        """Items uniform on the unit sphere."""
        return cls(_unit_rows(rng.normal(size=(m, d_h))), **kwargs)

    @property
    def m(self) -> int:
        return self.items.shape[0]

    def similarity(self, h: np.ndarray) -> np.ndarray:
        """Cosine similarity between query rows and items (zero-norm queries give 0)."""
        return _unit_rows(h) @ _unit_rows(self.items).T

    def _match(self, h: np.ndarray) -> np.ndarray:
        if self.kind == "cosine":
            return self.similarity(h)
        return h @ self.items.T

    def _queries(self, h: np.ndarray) -> np.ndarray:
        return _unit_rows(h) if self.unit_queries else h

    def read(self, h_a: Tensor) -> MemoryReadout:
        if h_a.shape[1] != self.items.shape[1]:
            raise ValueError(f"query width {h_a.shape[1]} != item width {self.items.shape[1]}")
        items = Tensor(self.items)
        if self.kind == "cosine":
            sim = ad.l2_normalize_rows(h_a) @ ad.transpose(Tensor(_unit_rows(self.items)))
        else:
            sim = h_a @ ad.transpose(items)
        s_q = ad.row_softmax(sim)
        h_hat = s_q @ items
        return MemoryReadout(s_q=s_q, h_hat=h_hat, h_bar=ad.concat([h_a, h_hat]))

    def update_weights(self, h: np.ndarray) -> np.ndarray:
        """Item-by-query matching probabilities, softmax over the queries (m x |U|)."""
        return _softmax(self._match(h).T, axis=1)

    def update(self, h_a: np.ndarray, pseudo_normal) -> None:
        """Pull every item toward the pseudo-normal queries and renormalize."""
        idx = np.asarray(pseudo_normal, dtype=np.int64)
        if idx.size == 0:
            raise ValueError("pseudo-normal set is empty")
        q = np.asarray(h_a)[idx]
        s_m = self.update_weights(q)
        self.items = _unit_rows(self.items + s_m @ self._queries(q))

    def nearest_two(self, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d2 = ((h[:, None, :] - self.items[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")
        second = order[:, 1] if self.m > 1 else order[:, 0]
        return order[:, 0], second

    def losses(self, h_a: Tensor, beta: float, dist: str = "squared") -> tuple[Tensor, Tensor]:
        """Per-node compactness (squared distance to the nearest item) and
        separateness hinge ``max(0, d_nearest - d_second + beta)``."""
        if self.unit_queries:
            h_a = ad.l2_normalize_rows(h_a)
        first, second = self.nearest_two(h_a.data)
        d_first = _distance(ad.sum(ad.square(h_a - Tensor(self.items[first])), axis=1), dist)
        if self.m < 2:
            warnings.warn("separateness loss needs at least two memory items; using 0", stacklevel=2)
            return d_first, Tensor(np.zeros(h_a.shape[0]))
        d_second = _distance(ad.sum(ad.square(h_a - Tensor(self.items[second])), axis=1), dist)
        return d_first, ad.relu(d_first - d_second + beta)

    def max_cosine(self, h: np.ndarray) -> np.ndarray:
        return self.similarity(np.asarray(h)).max(axis=1)


def select_pseudo_normal(errors, ratio: float) -> np.ndarray:
    """Indices of the floor(ratio * n) smallest errors; ties go to the lower node id."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio={ratio} outside (0, 1]")
    errors = np.asarray(errors, dtype=np.float64)
    k = int(np.floor(ratio * errors.size))
    order = np.lexsort((np.arange(errors.size), errors))
    return np.sort(order[:k])
