"""Slice geometry: how a length-T sequence decomposes into layered
subsequences when it is sliced k times into n parts each time.

Slicing k times yields k+1 layers, indexed 0 (the minimum subsequences)
through k (the single top recurrence). Layer 0 holds n^k contiguous
pieces of length T / n^k; every layer above runs length-n recurrences
over the last states of its n children. Indices are 0-based everywhere.

All functions are pure; the plan objects are frozen and shareable.
"""

from dataclasses import dataclass

from .errors import DimensionError, DivisibilityError


@dataclass(frozen=True)
class SliceConfig:
    """The (T, n, k) geometry request: sequence length T, fan-out n per
    slice, k slice operations. n^k must divide T; pad upstream first."""

    T: int
    n: int
    k: int

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"sequence length must be >= 1, got {self.T}")
        if self.n < 2:
            raise ValueError(f"slice number must be >= 2, got {self.n}")
        if self.k < 0:
            raise ValueError(f"slice count must be >= 0, got {self.k}")
        pieces = self.n**self.k
        if self.T % pieces != 0:
            padded = ((self.T + pieces - 1) // pieces) * pieces
            raise DivisibilityError(
                f"T={self.T} is not divisible by n^k={pieces} (n={self.n}, "
                f"k={self.k}); nearest valid padded length is {padded}"
            )


@dataclass(frozen=True)
class LayerGeometry:
    """One layer of the plan: index p, subsequence count, recurrence length."""

    p: int
    count: int
    length: int


@dataclass(frozen=True)
class SlicePlan:
    """Derived geometry for a validated SliceConfig."""

    T: int
    n: int
    k: int
    l0: int
    layers: tuple[LayerGeometry, ...]

    @property
    def s0(self) -> int:
        return self.layers[0].count

    @property
    def critical_steps(self) -> int:
        """Longest chain of sequential recurrent steps: l0 + n*k."""
        return sum(layer.length for layer in self.layers)


def build_plan(cfg: SliceConfig) -> SlicePlan:
    """Layer counts and lengths for the (T, n, k) geometry.

    Layer 0 has n^k subsequences of length T/n^k; layer p >= 1 has
    n^(k-p) subsequences, each a length-n recurrence over child outputs.
    """
    l0 = cfg.T // cfg.n**cfg.k
    layers = [LayerGeometry(p=0, count=cfg.n**cfg.k, length=l0)]
    for p in range(1, cfg.k + 1):
        layers.append(LayerGeometry(p=p, count=cfg.n ** (cfg.k - p), length=cfg.n))
    return SlicePlan(T=cfg.T, n=cfg.n, k=cfg.k, l0=l0, layers=tuple(layers))


def child_range(plan: SlicePlan, p: int, j: int) -> range:
    """Which layer-(p-1) subsequence outputs feed subsequence j of layer p.

    Children are contiguous by construction: [j*n, (j+1)*n).
    """
    if not 1 <= p <= plan.k:
        raise IndexError(f"layer index {p} outside [1, {plan.k}]")
    count = plan.layers[p].count
    if not 0 <= j < count:
        raise IndexError(f"subsequence index {j} outside [0, {count}) on layer {p}")
    return range(j * plan.n, (j + 1) * plan.n)


def min_subsequence(tokens, plan: SlicePlan, i: int):
    """Contiguous slice i of the layer-0 decomposition: [i*l0, (i+1)*l0)."""
    if len(tokens) != plan.T:
        raise DimensionError(
            f"sequence has length {len(tokens)}, plan expects {plan.T}"
        )
    if not 0 <= i < plan.s0:
        raise IndexError(f"minimum-subsequence index {i} outside [0, {plan.s0})")
    return tokens[i * plan.l0 : (i + 1) * plan.l0]


def format_plan(plan: SlicePlan) -> str:
    """Tab-separated `p s_p l_p` rows plus the critical-step line."""
    lines = ["p\ts_p\tl_p"]
    for layer in plan.layers:
        lines.append(f"{layer.p}\t{layer.count}\t{layer.length}")
    lines.append(f"critical_steps = {plan.l0 + plan.n * plan.k}")
    return "\n".join(lines)
