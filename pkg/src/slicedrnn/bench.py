"""Speed model and wall-clock harness.

The analytic ratio for slicing with fan-out n, k times, on length-T
sequences is

    R = t_sliced / t_plain = 1/n^k + (n * k) / T

and 1/R is the theoretical speedup with unlimited parallel workers. The
harness validates the model two ways: sequential-dependency step counts,
which are exact (T for the plain arm, T/n^k + n*k for the sliced arm),
and measured wall clock, which is statistical and undershoots 1/R
because the model ignores scheduling and reshape overhead.

Both arms share one parameter set and one input batch, and BLAS-internal
threading is pinned to one thread while timing so that worker-level
parallelism over subsequences is the only concurrency being measured
(the plain arm is a single dependent chain by definition).
"""

import json
import time
from dataclasses import dataclass
from statistics import median

import numpy as np
from threadpoolctl import threadpool_limits

from .cells import GruParams
from .engine import sliced_forward_rows, standard_forward_rows
from .errors import HarnessError
from .slicing import SliceConfig, build_plan
from .tensor import SeededRng


def predict_ratio(n: int, k: int, T: int) -> float:
    """Predicted time ratio R; theoretical speedup is 1/R."""
    if n < 2 or k < 0 or T < 1:
        raise ValueError(f"need n >= 2, k >= 0, T >= 1; got n={n}, k={k}, T={T}")
    return 1.0 / n**k + (n * k) / T


@dataclass
class BenchConfig:
    T: int
    n: int
    k: int
    hidden_dim: int = 50
    embed_dim: int = 50
    batch: int = 32
    workers: int = 1
    trials: int = 3
    warmup: int = 1
    seed: int = 0
    timer_floor: float = 2e-4  # seconds; below this the timer is untrustworthy

    def __post_init__(self):
        SliceConfig(T=self.T, n=self.n, k=self.k)  # reuse divisibility checks
        if self.trials < 3:
            raise ValueError(f"need at least 3 trials for a median, got {self.trials}")
        if self.warmup < 1:
            raise ValueError(f"need at least 1 warmup run, got {self.warmup}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")


@dataclass
class BenchReport:
    T: int
    n: int
    k: int
    workers: int
    batch: int
    ratio_predicted: float
    steps_plain: int
    steps_sliced: int
    t_plain: float
    t_sliced: float

    @property
    def speedup(self) -> float:
        return self.t_plain / self.t_sliced

    def row(self) -> str:
        return (
            f"{self.T}\t{self.n}\t{self.k}\t{self.ratio_predicted:.9g}\t"
            f"{self.steps_plain}\t{self.steps_sliced}\t"
            f"{self.t_plain:.6f}\t{self.t_sliced:.6f}\t{self.speedup:.3f}"
        )

    def record(self) -> str:
        return json.dumps(
            {
                "T": self.T, "n": self.n, "k": self.k,
                "workers": self.workers, "batch": self.batch,
                "ratio_predicted": self.ratio_predicted,
                "steps_plain": self.steps_plain, "steps_sliced": self.steps_sliced,
                "t_plain": self.t_plain, "t_sliced": self.t_sliced,
                "speedup": self.speedup,
            }
        )


TABLE_HEADER = "T\tn\tk\tR_pred\tsteps_rnn\tsteps_srnn\tt_rnn\tt_srnn\tspeedup"


def emit_table(reports) -> str:
    """Tab-separated table, rows sorted by T ascending."""
    if not reports:
        raise ValueError("no reports to format")
    lines = [TABLE_HEADER]
    for report in sorted(reports, key=lambda r: r.T):
        lines.append(report.row())
    return "\n".join(lines)


def _median_time(work, warmup: int, trials: int) -> float:
    for _ in range(warmup):
        work()
    times = []
    for _ in range(trials):
        start = time.perf_counter()
        work()
        times.append(time.perf_counter() - start)
    return median(times)


def run_bench(cfg: BenchConfig) -> BenchReport:
    """Time the plain sequential arm against the sliced arm.

    Both arms consume the same randomly embedded (T, batch, dim) inputs
    with the same randomly initialized layer-0 cell; the sliced arm adds
    its k upper cells. Sliced outputs are verified to be identical
    across worker counts before any timing happens.
    """
    rng = SeededRng(cfg.seed)
    plan = build_plan(SliceConfig(T=cfg.T, n=cfg.n, k=cfg.k))
    cell0 = GruParams.init(cfg.embed_dim, cfg.hidden_dim, rng.derive(1))
    cells = [cell0] + [
        GruParams.init(cfg.hidden_dim, cfg.hidden_dim, rng.derive(1 + p))
        for p in range(1, cfg.k + 1)
    ]
    inputs = rng.uniform(-1.0, 1.0, (cfg.T, cfg.batch, cfg.embed_dim))

    # determinism gate: worker count must not change the arithmetic
    f_serial, sliced_trace = sliced_forward_rows(cells, plan, inputs, workers=1)
    f_workers, _ = sliced_forward_rows(cells, plan, inputs, workers=cfg.workers)
    if not np.array_equal(f_serial, f_workers):
        raise HarnessError(
            f"sliced outputs differ between workers=1 and workers={cfg.workers}"
        )
    _, plain_trace = standard_forward_rows(cell0, inputs)

    def plain_arm():
        standard_forward_rows(cell0, inputs)

    def sliced_arm():
        sliced_forward_rows(cells, plan, inputs, workers=cfg.workers)

    with threadpool_limits(limits=1):
        t_plain = _median_time(plain_arm, cfg.warmup, cfg.trials)
        t_sliced = _median_time(sliced_arm, cfg.warmup, cfg.trials)

    floor = cfg.timer_floor
    if t_plain < floor or t_sliced < floor:
        raise HarnessError(
            f"measured times ({t_plain:.2e}s, {t_sliced:.2e}s) are below the "
            f"{floor:.0e}s floor; increase --batch (or T) for a trustworthy reading"
        )
    return BenchReport(
        T=cfg.T, n=cfg.n, k=cfg.k, workers=cfg.workers, batch=cfg.batch,
        ratio_predicted=predict_ratio(cfg.n, cfg.k, cfg.T),
        steps_plain=plain_trace.critical_steps,
        steps_sliced=sliced_trace.critical_steps,
        t_plain=t_plain, t_sliced=t_sliced,
    )
