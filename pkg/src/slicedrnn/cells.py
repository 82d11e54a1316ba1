"""Recurrent cells: a GRU with an exact hand-derived backward pass, and a
bias-free linear cell used by the equivalence checker.

Forward recurrence of the GRU for one step:

    r = sigmoid(W_r x + U_r h_prev + b_r)        reset gate
    z = sigmoid(W_z x + U_z h_prev + b_z)        update gate
    h~ = tanh(W_h x + U_h (r * h_prev) + b_h)    candidate state
    h = z * h_prev + (1 - z) * h~

The backward pass is reverse-mode differentiation of those four lines;
the full derivation is written out in docs/gru_backward.md and verified
against central finite differences in the test suite.

All step functions exist in two forms: the vector form (one sequence
position) and a rows form operating on a stack of independent rows at
once, which is what the slicing engine and mini-batch training use.
Parameters are immutable during forward/backward, so all functions are
thread-safe.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, DimensionError
from .tensor import SeededRng, map_sigmoid, map_tanh

# fixed serialization order of the parameter blocks
_GRU_BLOCKS = ("W_r", "U_r", "b_r", "W_z", "U_z", "b_z", "W_h", "U_h", "b_h")

_CELL_MAGIC = b"SRNNCEL1"


@dataclass
class GruParams:
    """The nine learnable blocks of one GRU cell.

    W_* are (hidden, input) input projections, U_* are (hidden, hidden)
    recurrent projections, b_* are (hidden,) biases.
    """

    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_z: np.ndarray
    U_z: np.ndarray
    b_z: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.W_r.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W_r.shape[0]

    def blocks(self):
        """(name, array) pairs in the fixed checkpoint order."""
        return [(name, getattr(self, name)) for name in _GRU_BLOCKS]

    def validate(self) -> "GruParams":
        d, m = self.input_dim, self.hidden_dim
        for name, arr in self.blocks():
            want = (m, d) if name.startswith("W") else (m, m) if name.startswith("U") else (m,)
            if arr.shape != want:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {want}")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite entries")
        return self

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: SeededRng) -> "GruParams":
        """Uniform(-s, s) weights with s = 1/sqrt(fan_in); zero biases."""
        sw = 1.0 / np.sqrt(input_dim)
        su = 1.0 / np.sqrt(hidden_dim)
        m, d = hidden_dim, input_dim
        return cls(
            W_r=rng.uniform(-sw, sw, (m, d)),
            U_r=rng.uniform(-su, su, (m, m)),
            b_r=np.zeros(m),
            W_z=rng.uniform(-sw, sw, (m, d)),
            U_z=rng.uniform(-su, su, (m, m)),
            b_z=np.zeros(m),
            W_h=rng.uniform(-sw, sw, (m, d)),
            U_h=rng.uniform(-su, su, (m, m)),
            b_h=np.zeros(m),
        ).validate()

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "GruParams":
        m, d = hidden_dim, input_dim
        return cls(
            W_r=np.zeros((m, d)), U_r=np.zeros((m, m)), b_r=np.zeros(m),
            W_z=np.zeros((m, d)), U_z=np.zeros((m, m)), b_z=np.zeros(m),
            W_h=np.zeros((m, d)), U_h=np.zeros((m, m)), b_h=np.zeros(m),
        )

    def copy(self) -> "GruParams":
        return GruParams(**{name: arr.copy() for name, arr in self.blocks()})

    def add_(self, other: "GruParams") -> "GruParams":
        """In-place accumulation; used for the fixed-order gradient merge."""
        for name, arr in self.blocks():
            arr += getattr(other, name)
        return self

    def step_rows(self, x_rows, h_rows, clamp_r=None, clamp_z=None):
        return gru_step_rows(self, x_rows, h_rows, clamp_r=clamp_r, clamp_z=clamp_z)

    def step_rows_backward(self, cache, dh_rows):
        return gru_step_rows_backward(self, cache, dh_rows)


@dataclass
class GruStepCache:
    """Everything one backward step needs from its forward step.

    Arrays are stored in rows form (R, dim). clamp_r/clamp_z record the
    test hooks that were applied, so the backward pass treats a clamped
    gate as a constant.
    """

    x_t: np.ndarray
    h_prev: np.ndarray
    r_t: np.ndarray
    z_t: np.ndarray
    h_tilde: np.ndarray
    clamp_r: float | None = None
    clamp_z: float | None = None


@dataclass
class LinearRnnParams:
    """Bias-free-capable linear cell: h = U x + W h_prev + b."""

    U: np.ndarray
    W: np.ndarray
    b: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.U.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[0]

    def validate(self) -> "LinearRnnParams":
        m, d = self.hidden_dim, self.input_dim
        if self.W.shape != (m, m):
            raise DimensionError(f"W has shape {self.W.shape}, expected {(m, m)}")
        if self.b.shape != (m,):
            raise DimensionError(f"b has shape {self.b.shape}, expected {(m,)}")
        return self

    def step_rows(self, x_rows, h_rows, clamp_r=None, clamp_z=None):
        return linear_step_rows(self, x_rows, h_rows), None


def _check_rows(p, x_rows, h_rows):
    if x_rows.ndim != 2 or x_rows.shape[1] != p.input_dim:
        raise DimensionError(
            f"input rows have shape {x_rows.shape}, cell expects (*, {p.input_dim})"
        )
    if h_rows.ndim != 2 or h_rows.shape != (x_rows.shape[0], p.hidden_dim):
        raise DimensionError(
            f"hidden rows have shape {h_rows.shape}, "
            f"expected ({x_rows.shape[0]}, {p.hidden_dim})"
        )


def gru_step_rows(p: GruParams, x_rows, h_rows, clamp_r=None, clamp_z=None):
    """One GRU step over a stack of independent rows.

    Returns (h_new (R, m), GruStepCache). clamp_r / clamp_z force the
    corresponding gate to a constant (test hook for gate semantics).
    """
    x_rows = np.asarray(x_rows, dtype=np.float64)
    h_rows = np.asarray(h_rows, dtype=np.float64)
    _check_rows(p, x_rows, h_rows)

    if clamp_r is None:
        r = map_sigmoid(x_rows @ p.W_r.T + h_rows @ p.U_r.T + p.b_r)
    else:
        r = np.full_like(h_rows, float(clamp_r))
    if clamp_z is None:
        z = map_sigmoid(x_rows @ p.W_z.T + h_rows @ p.U_z.T + p.b_z)
    else:
        z = np.full_like(h_rows, float(clamp_z))
    h_tilde = map_tanh(x_rows @ p.W_h.T + (r * h_rows) @ p.U_h.T + p.b_h)
    h_new = z * h_rows + (1.0 - z) * h_tilde
    cache = GruStepCache(x_rows, h_rows, r, z, h_tilde, clamp_r, clamp_z)
    return h_new, cache


def gru_step(p: GruParams, x_t, h_prev, clamp_r=None, clamp_z=None):
    """One GRU step on single vectors x_t (d,), h_prev (m,)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x_t.ndim != 1 or h_prev.ndim != 1:
        raise DimensionError(
            f"gru_step takes vectors, got shapes {x_t.shape} and {h_prev.shape}"
        )
    h_new, cache = gru_step_rows(
        p, x_t[None, :], h_prev[None, :], clamp_r=clamp_r, clamp_z=clamp_z
    )
    return h_new[0], cache


def gru_step_rows_backward(p: GruParams, cache: GruStepCache, dh_rows):
    """Reverse-mode derivative of gru_step_rows.

    Given dL/dh for the step's output, returns (dx (R, d), dh_prev (R, m),
    dp) where dp is a GruParams-shaped gradient summed over the rows.
    Clamped gates contribute no gradient through their pre-activations.
    """
    dh = np.asarray(dh_rows, dtype=np.float64)
    x, hp = cache.x_t, cache.h_prev
    r, z, ht = cache.r_t, cache.z_t, cache.h_tilde
    if dh.shape != ht.shape:
        raise DimensionError(f"dh has shape {dh.shape}, cache expects {ht.shape}")

    d_ht = dh * (1.0 - z)
    da_h = d_ht * (1.0 - ht * ht)           # tanh'
    d_rh = da_h @ p.U_h                      # gradient w.r.t. r * h_prev

    if cache.clamp_z is None:
        dz = dh * (hp - ht)
        da_z = dz * z * (1.0 - z)            # sigmoid'
    else:
        da_z = np.zeros_like(dh)
    if cache.clamp_r is None:
        dr = d_rh * hp
        da_r = dr * r * (1.0 - r)
    else:
        da_r = np.zeros_like(dh)

    dp = GruParams(
        W_r=da_r.T @ x, U_r=da_r.T @ hp, b_r=da_r.sum(axis=0),
        W_z=da_z.T @ x, U_z=da_z.T @ hp, b_z=da_z.sum(axis=0),
        W_h=da_h.T @ x, U_h=da_h.T @ (r * hp), b_h=da_h.sum(axis=0),
    )
    dx = da_r @ p.W_r + da_z @ p.W_z + da_h @ p.W_h
    dh_prev = dh * z + da_r @ p.U_r + da_z @ p.U_z + d_rh * r
    return dx, dh_prev, dp


def gru_step_backward(p: GruParams, cache: GruStepCache, dh_t):
    """Vector form of the backward step (dh_t is (m,))."""
    dh_t = np.asarray(dh_t, dtype=np.float64)
    if dh_t.ndim != 1:
        raise DimensionError(f"dh_t must be a vector, got shape {dh_t.shape}")
    dx, dh_prev, dp = gru_step_rows_backward(p, cache, dh_t[None, :])
    return dx[0], dh_prev[0], dp


def linear_step_rows(p: LinearRnnParams, x_rows, h_rows) -> np.ndarray:
    x_rows = np.asarray(x_rows, dtype=np.float64)
    h_rows = np.asarray(h_rows, dtype=np.float64)
    _check_rows(p, x_rows, h_rows)
    return x_rows @ p.U.T + h_rows @ p.W.T + p.b


def linear_step(p: LinearRnnParams, x_t, h_prev) -> np.ndarray:
    """h_t = U x_t + W h_prev + b on single vectors."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x_t.ndim != 1 or h_prev.ndim != 1:
        raise DimensionError(
            f"linear_step takes vectors, got shapes {x_t.shape} and {h_prev.shape}"
        )
    return linear_step_rows(p, x_t[None, :], h_prev[None, :])[0]


def cell_to_bytes(p: GruParams) -> bytes:
    """Serialize: magic, little-endian int64 (d, m), then the nine blocks
    as row-major little-endian float64 in the fixed order."""
    parts = [_CELL_MAGIC, struct.pack("<qq", p.input_dim, p.hidden_dim)]
    for _, arr in p.blocks():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def cell_from_bytes(buf: bytes, offset: int = 0) -> tuple[GruParams, int]:
    """Deserialize a cell; returns (params, next_offset)."""
    if buf[offset : offset + 8] != _CELL_MAGIC:
        raise ConsistencyError(
            f"bad cell magic {buf[offset:offset + 8]!r}, expected {_CELL_MAGIC!r}"
        )
    offset += 8
    try:
        d, m = struct.unpack_from("<qq", buf, offset)
        offset += 16
        blocks = {}
        for name in _GRU_BLOCKS:
            shape = (m, d) if name.startswith("W") else (m, m) if name.startswith("U") else (m,)
            count = int(np.prod(shape))
            blocks[name] = (
                np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
                .reshape(shape)
                .copy()
            )
            offset += count * 8
    except (struct.error, ValueError) as exc:
        raise ConsistencyError(f"truncated or corrupt cell checkpoint: {exc}") from None
    return GruParams(**blocks).validate(), offset


def save_cell(p: GruParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(cell_to_bytes(p))


def load_cell(path) -> GruParams:
    with open(path, "rb") as fh:
        params, _ = cell_from_bytes(fh.read())
    return params
