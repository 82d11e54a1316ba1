"""Executable equivalence check between the sliced network and the plain
linear recurrence.

For the bias-free linear cell h_t = U x_t + W h_{t-1} with h_0 = 0 and
T = n^(k+1), a sliced network with one linear cell per layer reproduces
the plain recurrence's final state exactly when its parameters are built
as

    layer 0:   inputs U_0 = U,  recurrence W_0 = W
    layer p>0: inputs U_p = I,  recurrence W_p = W^(n^p)

because each layer-p recurrence then contributes exactly the block of
n^p consecutive W applications that the plain chain performs between two
child last states. The checker runs three independent routes - the
sequential fold, the closed-form expansion
h_T = U x_T + W U x_{T-1} + ... + W^(T-1) U x_1, and the sliced network
under the construction - and reports their pairwise disagreement.
"""

from dataclasses import dataclass

import numpy as np

from .cells import LinearRnnParams, linear_step
from .engine import sliced_forward_rows
from .errors import DimensionError
from .slicing import SliceConfig, build_plan
from .tensor import SeededRng, identity, matrix_power


@dataclass
class EquivalenceCase:
    """One (n, k) geometry with its linear-cell parameters and inputs.

    T is pinned to n^(k+1) so every layer, including layer 0, runs
    length-n recurrences. Bias and initial state are zero by design.
    """

    n: int
    k: int
    U: np.ndarray
    W: np.ndarray
    inputs: np.ndarray

    @property
    def T(self) -> int:
        return self.n ** (self.k + 1)

    @property
    def dims(self) -> tuple:
        return self.U.shape[1], self.U.shape[0]

    def validate(self) -> "EquivalenceCase":
        if self.n < 2 or self.k < 1:
            raise ValueError(f"need n >= 2 and k >= 1, got n={self.n}, k={self.k}")
        m = self.U.shape[0]
        if self.W.shape != (m, m):
            raise DimensionError(f"W has shape {self.W.shape}, expected {(m, m)}")
        if self.inputs.shape != (self.T, self.U.shape[1]):
            raise DimensionError(
                f"inputs have shape {self.inputs.shape}, expected "
                f"{(self.T, self.U.shape[1])}"
            )
        return self


@dataclass
class EquivalenceReport:
    case: EquivalenceCase
    h_sequential: np.ndarray
    h_closed_form: np.ndarray
    f_sliced: np.ndarray
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def line(self) -> str:
        d, m = self.case.dims
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{self.case.n}\t{self.case.k}\t{self.case.T}\t{d}x{m}\t"
            f"{self.max_rel_err:.3e}\t{verdict}"
        )


def rel_err(a, b) -> float:
    """Infinity-norm relative disagreement with a unit floor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1.0)
    return float(np.abs(a - b).max() / scale)


def sequential_state(case: EquivalenceCase) -> np.ndarray:
    """Plain fold of the linear cell over all T inputs from h_0 = 0."""
    params = LinearRnnParams(U=case.U, W=case.W, b=np.zeros(case.U.shape[0]))
    h = np.zeros(case.U.shape[0])
    for t in range(case.T):
        h = linear_step(params, case.inputs[t], h)
    return h


def expand_closed_form(case: EquivalenceCase) -> np.ndarray:
    """Direct evaluation of h_T = sum_j W^j U x_{T-j} for j = 0..T-1."""
    h = np.zeros(case.U.shape[0])
    for j in range(case.T):
        h += matrix_power(case.W, j) @ (case.U @ case.inputs[case.T - 1 - j])
    return h


def construct_equivalent_srnn(case: EquivalenceCase) -> list:
    """The k+1 zero-bias linear cells of the power construction."""
    if case.W.shape[0] != case.W.shape[1]:
        raise DimensionError(f"W must be square, got {case.W.shape}")
    m = case.U.shape[0]
    cells = [LinearRnnParams(U=case.U.copy(), W=case.W.copy(), b=np.zeros(m))]
    for p in range(1, case.k + 1):
        cells.append(
            LinearRnnParams(
                U=identity(m), W=matrix_power(case.W, case.n**p), b=np.zeros(m)
            )
        )
    return cells


def layer0_last_states(case: EquivalenceCase) -> np.ndarray:
    """Expected layer-0 last states by the n-term expansion
    h0_i = sum_j W^j U x over each length-n minimum subsequence."""
    n = case.n
    pieces = case.T // n
    out = np.zeros((pieces, case.U.shape[0]))
    for i in range(pieces):
        for j in range(n):
            out[i] += matrix_power(case.W, j) @ (case.U @ case.inputs[(i + 1) * n - 1 - j])
    return out


def verify_equivalence(case: EquivalenceCase, tol: float = 1e-9,
                       perturb: float | None = None) -> EquivalenceReport:
    """Run all three routes and report the worst pairwise disagreement.

    perturb, when given, is added to one entry of the top constructed
    recurrence matrix before the sliced run - the sensitivity guard that
    proves the check cannot pass vacuously.
    """
    case.validate()
    h_seq = sequential_state(case)
    h_closed = expand_closed_form(case)
    cells = construct_equivalent_srnn(case)
    if perturb is not None:
        cells[-1].W[0, 0] += perturb
    plan = build_plan(SliceConfig(T=case.T, n=case.n, k=case.k))
    f_rows, _ = sliced_forward_rows(cells, plan, case.inputs[:, None, :])
    f = f_rows[0]
    worst = max(rel_err(h_seq, h_closed), rel_err(h_seq, f), rel_err(h_closed, f))
    return EquivalenceReport(
        case=case, h_sequential=h_seq, h_closed_form=h_closed, f_sliced=f,
        max_rel_err=worst, tol=tol,
    )


def random_case(seed: int, n: int, k: int, d: int, m: int) -> EquivalenceCase:
    """Seeded case with W scaled by 1/m so W^(T-1) stays in float64 range."""
    rng = SeededRng(seed)
    T = n ** (k + 1)
    return EquivalenceCase(
        n=n,
        k=k,
        U=rng.uniform(-0.9, 0.9, (m, d)),
        W=rng.uniform(-0.9, 0.9, (m, m)) / m,
        inputs=rng.uniform(-0.9, 0.9, (T, d)),
    ).validate()


def scalar_demo_case() -> EquivalenceCase:
    """The hand-checkable scalar instance: U=1, W=2, n=2, k=1, inputs of
    ones, whose layer-0 last states are (3, 3) and whose final state is
    1 + 2 + 4 + 8 = 15."""
    return EquivalenceCase(
        n=2, k=1, U=np.array([[1.0]]), W=np.array([[2.0]]),
        inputs=np.ones((4, 1)),
    ).validate()


# the 50-case default suite: five geometries, dims cycling over {1, 3, 5}
SUITE_GEOMETRIES = ((2, 1), (2, 2), (3, 1), (4, 1), (2, 3))
SUITE_DIMS = (1, 3, 5)


def default_suite(seed: int = 0, cases_per_geometry: int = 10) -> list:
    cases = []
    for gi, (n, k) in enumerate(SUITE_GEOMETRIES):
        for i in range(cases_per_geometry):
            dim = SUITE_DIMS[(gi + i) % len(SUITE_DIMS)]
            cases.append(random_case(seed + 101 * gi + i, n, k, dim, dim))
    return cases
