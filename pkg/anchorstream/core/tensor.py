"""
Dense float64 numerics used by every other module.

Tensors are plain numpy arrays of dtype float64. The helpers here add the
shape checks, the numerically stable reductions and the seedable random source
that the model, the CTC engine and the data generator rely on.
"""

import hashlib
from typing import Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from anchorstream.exceptions import DomainError, ShapeError

Tensor = npt.NDArray[np.float64]

Shape = Union[int, Sequence[int]]


def as_tensor(values) -> Tensor:
    """Return `values` as a float64 array (no copy when already float64)."""
    return np.asarray(values, dtype=np.float64)


def check_finite(x: Tensor, name: str = "tensor") -> Tensor:
    """Raise DomainError if `x` holds NaN or Inf."""
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} contains non-finite entries")
    return x


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of a [m x k] and b [k x n].

    Raises:
        ShapeError: if either operand is not 2-D or the inner dimensions differ.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def log_sum_exp(v: Tensor) -> float:
    """
    Stable log(sum(exp(v))) over a 1-D array.

    Args:
        v: Values; may contain -inf entries.

    Returns:
        The reduction as a Python float (-inf if every entry is -inf).

    Raises:
        DomainError: If `v` is empty.
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise DomainError("log_sum_exp of an empty vector")
    m = np.max(v)
    if v.size == 1 or not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(v - m))))


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D array, shifted by the row max."""
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D array, got shape {x.shape}")
    check_finite(x, "softmax_rows input")
    z = x - np.max(x, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


def log_softmax_rows(x: Tensor) -> Tensor:
    """Row-wise log-softmax of a 2-D array."""
    if x.ndim != 2:
        raise ShapeError(f"log_softmax_rows expects a 2-D array, got shape {x.shape}")
    check_finite(x, "log_softmax_rows input")
    z = x - np.max(x, axis=1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))


class RngState:
    """
    Deterministic, splittable random source.

    Wraps a numpy Generator over the counter-based Philox bit generator. The
    same seed and the same sequence of calls always give bitwise-identical
    draws. `derive` returns an independent child stream keyed by integers or
    strings, so unrelated consumers never share a stream.

    A single RngState must not be drawn from by more than one thread.
    """

    def __init__(self, seed: int, _spawn_key: Tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.spawn_key = tuple(_spawn_key)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def derive(self, *keys: Union[int, str]) -> "RngState":
        """Return a child stream for the given key path."""
        return RngState(self.seed, self.spawn_key + tuple(_key_to_int(k) for k in keys))

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, spawn_key={self.spawn_key})"


def _key_to_int(key: Union[int, str]) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise DomainError(f"rng key must be non-negative, got {key}")
        return int(key)
    # stable across processes, unlike hash()
    return int.from_bytes(hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest(), "little")


def gaussian(rng: RngState, shape: Shape, mean: float = 0.0, std: float = 1.0) -> Tensor:
    """
    Draw a float64 array of normal samples.

    Raises:
        DomainError: If `std` is negative.
    """
    if std < 0:
        raise DomainError(f"gaussian std must be >= 0, got {std}")
    if std == 0:
        return np.full(shape, float(mean), dtype=np.float64)
    return rng.generator.normal(loc=mean, scale=std, size=shape).astype(np.float64, copy=False)
