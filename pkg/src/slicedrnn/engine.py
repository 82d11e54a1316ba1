"""Network engine: plain sequential recurrence, sliced hierarchical
recurrence with concurrent within-layer execution, and the backward pass
through the whole slice tree.

Execution model
---------------
A layer is a set of independent subsequence recurrences ("units"). Units
may run concurrently; layers are a strict sequential barrier. One unit
processes its whole stack of independent rows (mini-batch documents) per
step, so inputs flow through the engine in time-major rows form
(steps, rows, dim).

Determinism contract: unit j's arithmetic never depends on the worker
count - workers only decide which thread executes which unit - and
gradients are merged into the per-cell buffers in ascending
(layer, subsequence) order after a layer's units have all finished, with
steps accumulated in reverse time order inside each unit. Outputs and
accumulated gradients are therefore identical for any worker count.

Every subsequence starts from a zero hidden state, and child last states
feed parent layers untransformed (identity between-layer activation).
"""

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cells import GruParams, cell_from_bytes, cell_to_bytes
from .errors import ConsistencyError, DimensionError, VocabularyError
from .slicing import SlicePlan

_MODEL_MAGIC = b"SRNNMDL1"


@dataclass
class UnitTrace:
    """Forward record of one subsequence: per-step caches + last state."""

    caches: list
    last_h: np.ndarray


@dataclass
class ForwardTrace:
    """Mirrors the slice plan: layers[p][j] is subsequence j of layer p.

    critical_steps counts the executed sequential step dependencies along
    the longest chain (units of one layer run concurrently, so a layer
    contributes the max of its units' step counts).
    """

    layers: list
    critical_steps: int
    token_ids: np.ndarray | None = None


@dataclass
class SrnnModel:
    """Embedding table, one recurrent cell per layer, classifier head."""

    plan: SlicePlan
    embed: np.ndarray
    cells: list
    head: object = None

    @property
    def hidden_dim(self) -> int:
        return self.cells[0].hidden_dim

    @property
    def vocab_size(self) -> int:
        return self.embed.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embed.shape[1]

    def validate(self) -> "SrnnModel":
        if len(self.cells) != self.plan.k + 1:
            raise ConsistencyError(
                f"model has {len(self.cells)} cells, plan needs {self.plan.k + 1}"
            )
        if self.cells[0].input_dim != self.embed_dim:
            raise DimensionError(
                f"layer-0 cell expects input dim {self.cells[0].input_dim}, "
                f"embedding provides {self.embed_dim}"
            )
        for p in range(1, len(self.cells)):
            if self.cells[p].input_dim != self.cells[p - 1].hidden_dim:
                raise DimensionError(
                    f"layer-{p} cell input dim {self.cells[p].input_dim} does not "
                    f"match layer-{p - 1} hidden dim {self.cells[p - 1].hidden_dim}"
                )
        return self


@dataclass
class ModelGradients:
    """Gradients mirroring SrnnModel's embedding and cells."""

    embed: np.ndarray
    cells: list


def _run_unit(cell, steps, keep_caches):
    """Sequential recurrence over one unit: steps is (l, rows, dim)."""
    rows = steps.shape[1]
    h = np.zeros((rows, cell.hidden_dim))
    caches = [] if keep_caches else None
    executed = 0
    for t in range(steps.shape[0]):
        h, cache = cell.step_rows(steps[t], h)
        executed += 1
        if keep_caches:
            caches.append(cache)
    return h, caches, executed


def _split_ranges(count, workers):
    bounds = [round(i * count / workers) for i in range(workers + 1)]
    return [(bounds[i], bounds[i + 1]) for i in range(workers) if bounds[i] < bounds[i + 1]]


def _layer_forward(cell, inputs, workers, keep_caches):
    """Run one layer's units, possibly concurrently.

    inputs: (s, l, rows, dim). Returns (last (s, rows, m), unit traces,
    critical step count for the layer).
    """
    s, l, rows, _ = inputs.shape
    last = np.empty((s, rows, cell.hidden_dim))
    units = [None] * s
    counts = [0] * s

    def run_range(lo, hi):
        for j in range(lo, hi):
            h, caches, executed = _run_unit(cell, inputs[j], keep_caches)
            last[j] = h
            units[j] = UnitTrace(caches=caches, last_h=h) if keep_caches else None
            counts[j] = executed

    if workers <= 1 or s == 1:
        run_range(0, s)
    else:
        ranges = _split_ranges(s, min(workers, s))
        with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
            futures = [pool.submit(run_range, lo, hi) for lo, hi in ranges]
            for future in futures:
                future.result()
    return last, units, max(counts)


def layer_forward_parallel(cell, inputs, workers: int = 1) -> np.ndarray:
    """Last states of s independent subsequences, inputs (s, l, dim).

    Output is identical to running the subsequences one at a time in
    order, for any worker count.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3:
        raise DimensionError(f"expected (s, l, dim) inputs, got shape {inputs.shape}")
    last, _, _ = _layer_forward(cell, inputs[:, :, None, :], workers, keep_caches=False)
    return last[:, 0, :]


def standard_forward_rows(cell, inputs, keep_caches=False):
    """Plain sequential recurrence over (T, rows, dim) inputs."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[0] < 1:
        raise ValueError(f"expected non-empty (T, rows, dim) inputs, got {inputs.shape}")
    h, caches, executed = _run_unit(cell, inputs, keep_caches)
    trace = ForwardTrace(
        layers=[[UnitTrace(caches=caches, last_h=h)]] if keep_caches else [[None]],
        critical_steps=executed,
    )
    return h, trace


def standard_forward(cell, embedded):
    """Final hidden state of the plain RNN over a (T, dim) sequence."""
    embedded = np.asarray(embedded, dtype=np.float64)
    if embedded.ndim != 2 or embedded.shape[0] < 1:
        raise ValueError(f"expected a non-empty (T, dim) sequence, got {embedded.shape}")
    h, trace = standard_forward_rows(cell, embedded[:, None, :], keep_caches=True)
    return h[0], trace


def sliced_forward_rows(cells, plan, inputs, workers=1, keep_caches=False):
    """Hierarchical forward over time-major rows inputs (T, rows, dim).

    Layer 0 runs its cell over every minimum subsequence from a zero
    state; each layer above runs over the last states of its children.
    Returns (final state (rows, m), ForwardTrace).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3:
        raise DimensionError(f"expected (T, rows, dim) inputs, got shape {inputs.shape}")
    if inputs.shape[0] != plan.T:
        raise DimensionError(
            f"sequence length {inputs.shape[0]} does not match plan T={plan.T}"
        )
    if len(cells) != plan.k + 1:
        raise ConsistencyError(f"{len(cells)} cells for a {plan.k + 1}-layer plan")

    rows = inputs.shape[1]
    layer_inputs = inputs.reshape(plan.s0, plan.l0, rows, inputs.shape[2])
    trace_layers = []
    critical = 0
    states = None
    for p, geometry in enumerate(plan.layers):
        if p > 0:
            layer_inputs = states.reshape(geometry.count, geometry.length, rows, -1)
        states, units, steps = _layer_forward(cells[p], layer_inputs, workers, keep_caches)
        trace_layers.append(units)
        critical += steps
    trace = ForwardTrace(layers=trace_layers, critical_steps=critical)
    return states[0], trace


def srnn_forward(model: SrnnModel, token_ids, workers: int = 1):
    """Document representation F for one length-T token id sequence."""
    ids = np.asarray(token_ids)
    if ids.ndim != 1:
        raise DimensionError(f"token ids must be 1-D, got shape {ids.shape}")
    _check_ids(ids, model.vocab_size)
    embedded = model.embed[ids]
    f_rows, trace = sliced_forward_rows(
        model.cells, model.plan, embedded[:, None, :], workers=workers, keep_caches=True
    )
    trace.token_ids = ids[None, :]
    return f_rows[0], trace


def srnn_forward_batch(model: SrnnModel, ids_batch, workers: int = 1, keep_caches=True):
    """Batched forward: ids_batch (B, T) -> (F (B, m), trace)."""
    ids = np.asarray(ids_batch)
    if ids.ndim != 2:
        raise DimensionError(f"token id batch must be 2-D, got shape {ids.shape}")
    _check_ids(ids, model.vocab_size)
    embedded = np.ascontiguousarray(model.embed[ids].transpose(1, 0, 2))
    f_rows, trace = sliced_forward_rows(
        model.cells, model.plan, embedded, workers=workers, keep_caches=keep_caches
    )
    trace.token_ids = ids
    return f_rows, trace


def _check_ids(ids, vocab_size):
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        bad = int(ids.min()) if ids.min() < 0 else int(ids.max())
        raise VocabularyError(f"token id {bad} outside vocabulary of size {vocab_size}")


def _unit_backward(cell, caches, dlast):
    """BPTT inside one unit; returns per-step input grads + summed cell grads."""
    length = len(caches)
    rows, _ = dlast.shape
    dsteps = np.empty((length, rows, cell.input_dim))
    grads = GruParams.zeros(cell.input_dim, cell.hidden_dim)
    dh = dlast
    for t in reversed(range(length)):
        dx, dh, dp = cell.step_rows_backward(caches[t], dh)
        dsteps[t] = dx
        grads.add_(dp)
    return dsteps, grads


def sliced_backward_rows(cells, plan, trace: ForwardTrace, df_rows, workers=1):
    """Backward through the slice tree.

    df_rows is the gradient at the final state (rows, m). Returns
    (per-cell gradients, gradient w.r.t. the (T, rows, dim) inputs).
    The gradient arriving at a child's last state is the input gradient
    of the parent step that consumed it.
    """
    df_rows = np.asarray(df_rows, dtype=np.float64)
    if len(trace.layers) != plan.k + 1:
        raise ConsistencyError(
            f"trace has {len(trace.layers)} layers, plan needs {plan.k + 1}"
        )
    rows = df_rows.shape[0]
    cell_grads = []
    dlast = df_rows[None, :, :]  # (s_k = 1, rows, m)
    dx_bottom = None
    for p in reversed(range(plan.k + 1)):
        units = trace.layers[p]
        geometry = plan.layers[p]
        if len(units) != geometry.count or any(u is None or u.caches is None for u in units):
            raise ConsistencyError(
                f"layer {p} trace does not match the plan (need {geometry.count} "
                "units with caches; run the forward pass with keep_caches)"
            )
        cell = cells[p]
        dsteps_all = np.empty((geometry.count, geometry.length, rows, cell.input_dim))
        unit_grads = [None] * geometry.count

        def run_range(lo, hi, p=p, units=units, cell=cell, dlast=dlast,
                      dsteps_all=dsteps_all, unit_grads=unit_grads):
            for j in range(lo, hi):
                dsteps, grads = _unit_backward(cell, units[j].caches, dlast[j])
                dsteps_all[j] = dsteps
                unit_grads[j] = grads

        if workers <= 1 or geometry.count == 1:
            run_range(0, geometry.count)
        else:
            ranges = _split_ranges(geometry.count, min(workers, geometry.count))
            with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
                futures = [pool.submit(run_range, lo, hi) for lo, hi in ranges]
                for future in futures:
                    future.result()

        # fixed-order reduction: ascending subsequence index
        merged = GruParams.zeros(cell.input_dim, cell.hidden_dim)
        for grads in unit_grads:
            merged.add_(grads)
        cell_grads.append(merged)

        if p > 0:
            dlast = dsteps_all.reshape(plan.layers[p - 1].count, rows, cell.input_dim)
        else:
            dx_bottom = dsteps_all.reshape(plan.T, rows, cell.input_dim)
    cell_grads.reverse()
    return cell_grads, dx_bottom


def srnn_backward(model: SrnnModel, trace: ForwardTrace, df, workers: int = 1):
    """Gradients of a scalar loss with dL/dF = df, for embedding + cells."""
    df = np.asarray(df, dtype=np.float64)
    if trace.token_ids is None:
        raise ConsistencyError("trace carries no token ids; use sliced_backward_rows")
    df_rows = df[None, :] if df.ndim == 1 else df
    if df_rows.shape != (trace.token_ids.shape[0], model.hidden_dim):
        raise ConsistencyError(
            f"dF has shape {df.shape}, expected batch {trace.token_ids.shape[0]} "
            f"x hidden {model.hidden_dim}"
        )
    cell_grads, dx = sliced_backward_rows(
        model.cells, model.plan, trace, df_rows, workers=workers
    )
    embed_grad = np.zeros_like(model.embed)
    # dx is (T, B, e); scatter rows onto embedding ids in fixed order
    ids_tb = trace.token_ids.T
    np.add.at(embed_grad, ids_tb.reshape(-1), dx.reshape(-1, model.embed_dim))
    return ModelGradients(embed=embed_grad, cells=cell_grads)


def save_model(model: SrnnModel, path) -> None:
    """Checkpoint: magic, int64 header (V, e, m, n, k, T), embedding,
    cells in layer order, then int64 class count + head blocks."""
    head = model.head
    if head is None:
        raise ConsistencyError("model has no classifier head to checkpoint")
    parts = [
        _MODEL_MAGIC,
        struct.pack(
            "<6q",
            model.vocab_size,
            model.embed_dim,
            model.hidden_dim,
            model.plan.n,
            model.plan.k,
            model.plan.T,
        ),
        np.ascontiguousarray(model.embed, dtype="<f8").tobytes(),
    ]
    for cell in model.cells:
        parts.append(cell_to_bytes(cell))
    parts.append(struct.pack("<q", head.W_F.shape[0]))
    parts.append(np.ascontiguousarray(head.W_F, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(head.b_F, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_model(path) -> SrnnModel:
    from .slicing import SliceConfig, build_plan
    from .training import ClassifierHead

    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != _MODEL_MAGIC:
        raise ConsistencyError(f"bad model magic {buf[:8]!r}, expected {_MODEL_MAGIC!r}")
    try:
        vocab, embed_dim, hidden, n, k, T = struct.unpack_from("<6q", buf, 8)
        offset = 8 + 48
        embed = (
            np.frombuffer(buf, dtype="<f8", count=vocab * embed_dim, offset=offset)
            .reshape(vocab, embed_dim)
            .copy()
        )
        offset += vocab * embed_dim * 8
        cells = []
        for _ in range(k + 1):
            cell, offset = cell_from_bytes(buf, offset)
            cells.append(cell)
        (classes,) = struct.unpack_from("<q", buf, offset)
        offset += 8
        w_f = (
            np.frombuffer(buf, dtype="<f8", count=classes * hidden, offset=offset)
            .reshape(classes, hidden)
            .copy()
        )
        offset += classes * hidden * 8
        b_f = np.frombuffer(buf, dtype="<f8", count=classes, offset=offset).copy()
    except (struct.error, ValueError) as exc:
        raise ConsistencyError(f"truncated or corrupt model checkpoint: {exc}") from None
    plan = build_plan(SliceConfig(T=T, n=n, k=k))
    model = SrnnModel(plan=plan, embed=embed, cells=cells, head=ClassifierHead(w_f, b_f))
    return model.validate()
