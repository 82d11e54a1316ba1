"""Dense float64 numeric substrate: strict-shape matrix ops and a portable RNG.

Matrices and vectors are C-contiguous numpy float64 arrays (row-major).
Nothing in this module broadcasts: the slicing engine reshapes constantly,
so shape mismatches must fail loudly with both shapes in the message
instead of silently producing a plausible array.

All functions are pure and safe to call from multiple threads.
"""

import numpy as np

from .errors import DimensionError

_U64 = np.uint64
_GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1
_INV_2_53 = 1.0 / (1 << 53)


def as_matrix(a) -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {out.shape}")
    return out


def as_vector(a) -> np.ndarray:
    """Coerce to a 1-D float64 array, rejecting anything else."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {out.shape}")
    return out


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def map_sigmoid(a) -> np.ndarray:
    """Elementwise logistic 1/(1+e^-x), computed as (1+tanh(x/2))/2.

    The tanh form saturates instead of overflowing, and makes the
    symmetry sigmoid(x) + sigmoid(-x) == 1 hold bit-exactly.
    """
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(a, dtype=np.float64)))


def map_tanh(a) -> np.ndarray:
    """Elementwise hyperbolic tangent."""
    return np.tanh(np.asarray(a, dtype=np.float64))


def softmax(v) -> np.ndarray:
    """Probability vector from logits, stabilized by max subtraction."""
    v = as_vector(v)
    shifted = np.exp(v - v.max())
    return shifted / shifted.sum()


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float64)


def matrix_power(w, e: int) -> np.ndarray:
    """w multiplied by itself e times (square w only); e == 0 gives I.

    Uses exponentiation by squaring; the naive multiplication chain is
    kept as an independent oracle in the test suite.
    """
    w = as_matrix(w)
    if w.shape[0] != w.shape[1]:
        raise DimensionError(f"matrix_power needs a square matrix, got {w.shape}")
    if e < 0:
        raise ValueError(f"exponent must be >= 0, got {e}")
    result = identity(w.shape[0])
    base = w.copy()
    while e > 0:
        if e & 1:
            result = result @ base
        e >>= 1
        if e > 0:
            base = base @ base
    return result


def _mix64(z: np.ndarray) -> np.ndarray:
    """Finalization mix of splitmix64 on a uint64 array."""
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1FE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


class SeededRng:
    """Deterministic splitmix64 generator, identical on every platform.

    Draw i of a stream seeded with s is mix64(s + (i+1) * golden), the
    standard splitmix64 sequence written in counter form. Counter form
    means the stream is the same whether values are drawn one at a time
    or in blocks, and needs no mutable numpy state.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._count = 0

    def next_uint64(self, n: int | None = None):
        """Next raw draw (int) or next n draws (uint64 array)."""
        block = 1 if n is None else int(n)
        counters = np.arange(self._count + 1, self._count + block + 1, dtype=_U64)
        self._count += block
        with np.errstate(over="ignore"):
            out = _mix64(_U64(self.seed) + counters * _U64(_GOLDEN))
        return int(out[0]) if n is None else out

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        """Uniform float64 draws in [low, high)."""
        shape = () if size is None else size
        count = int(np.prod(shape, dtype=np.int64)) if shape != () else 1
        bits = self.next_uint64(count)
        unit = (bits >> _U64(11)).astype(np.float64) * _INV_2_53
        out = low + (high - low) * unit
        return float(out[0]) if size is None else out.reshape(shape)

    def integer(self, bound: int) -> int:
        """One integer in [0, bound); bias from the modulo is irrelevant here."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        return self.next_uint64() % bound

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n) driven by this stream."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.integer(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def derive(self, label: int) -> "SeededRng":
        """Independent child stream for a fixed label (e.g. epoch index)."""
        child = (self.seed ^ ((int(label) * _GOLDEN + 0x2545F4914F6CDD1D) & _MASK64)) & _MASK64
        return SeededRng(child)
