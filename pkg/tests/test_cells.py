import numpy as np
import pytest
from gradcheck import finite_difference, max_rel_err

from slicedrnn.cells import (
    GruParams,
    LinearRnnParams,
    cell_from_bytes,
    cell_to_bytes,
    gru_step,
    gru_step_backward,
    linear_step,
    load_cell,
    save_cell,
)
from slicedrnn.errors import ConsistencyError, DimensionError
from slicedrnn.tensor import SeededRng, map_tanh, matrix_power


def random_cell(d, m, seed):
    rng = SeededRng(seed)
    p = GruParams.init(d, m, rng)
    # nonzero biases so the zero-bias case does not mask sign errors
    for name in ("b_r", "b_z", "b_h"):
        setattr(p, name, rng.uniform(-0.3, 0.3, (m,)))
    return p, rng


class TestGruForward:
    def test_all_zero_params(self):
        p = GruParams.zeros(3, 4)
        h, cache = gru_step(p, np.array([1.0, -2.0, 0.5]), np.zeros(4))
        assert np.array_equal(h, np.zeros(4))
        assert np.array_equal(cache.r_t, np.full((1, 4), 0.5))
        assert np.array_equal(cache.z_t, np.full((1, 4), 0.5))
        assert np.array_equal(cache.h_tilde, np.zeros((1, 4)))

    def test_update_gate_one_copies_previous_state(self):
        p, rng = random_cell(3, 4, 101)
        h_prev = rng.uniform(-0.8, 0.8, (4,))
        h, _ = gru_step(p, rng.uniform(-1, 1, (3,)), h_prev, clamp_z=1.0)
        assert np.array_equal(h, h_prev)

    def test_reset_gate_zero_ignores_previous_memory(self):
        p, rng = random_cell(3, 4, 102)
        x = rng.uniform(-1, 1, (3,))
        h_prev = rng.uniform(-0.8, 0.8, (4,))
        _, cache = gru_step(p, x, h_prev, clamp_r=0.0)
        expected = map_tanh(p.W_h @ x + p.b_h)
        np.testing.assert_allclose(cache.h_tilde[0], expected, atol=1e-15)
        # changing h_prev must not move the candidate at all
        _, cache2 = gru_step(p, x, np.zeros(4), clamp_r=0.0)
        assert np.array_equal(cache.h_tilde, cache2.h_tilde)

    def test_shape_mismatch(self):
        p = GruParams.zeros(3, 4)
        with pytest.raises(DimensionError):
            gru_step(p, np.zeros(5), np.zeros(4))
        with pytest.raises(DimensionError):
            gru_step(p, np.zeros(3), np.zeros(2))

    def test_boundedness_from_zero_state(self):
        # h is a convex combination of h_prev and a tanh output, so from
        # h0 = 0 every state stays inside [-1, 1] componentwise
        p, rng = random_cell(5, 6, 103)
        h = np.zeros(6)
        for _ in range(200):
            h, _ = gru_step(p, rng.uniform(-3, 3, (5,)), h)
            assert np.all(h >= -1.0) and np.all(h <= 1.0)


class TestGruBackward:
    def _loss_setup(self, d, m, seed, clamp_r=None, clamp_z=None):
        p, rng = random_cell(d, m, seed)
        x = rng.uniform(-1, 1, (d,))
        h_prev = rng.uniform(-0.9, 0.9, (m,))
        g = rng.uniform(-1, 1, (m,))  # dL/dh for L = g . h
        arrays = {"x": x, "h_prev": h_prev}
        arrays.update({name: arr for name, arr in p.blocks()})

        def loss():
            h, _ = gru_step(p, x, h_prev, clamp_r=clamp_r, clamp_z=clamp_z)
            return float(g @ h)

        return p, x, h_prev, g, arrays, loss

    def test_zero_upstream_gradient(self):
        p, rng = random_cell(3, 4, 104)
        x = rng.uniform(-1, 1, (3,))
        h_prev = rng.uniform(-0.9, 0.9, (4,))
        _, cache = gru_step(p, x, h_prev)
        dx, dh_prev, dp = gru_step_backward(p, cache, np.zeros(4))
        assert np.array_equal(dx, np.zeros(3))
        assert np.array_equal(dh_prev, np.zeros(4))
        for _, arr in dp.blocks():
            assert not arr.any()

    def test_matches_finite_differences_small_instance(self):
        p, x, h_prev, g, arrays, loss = self._loss_setup(3, 4, 105)
        _, cache = gru_step(p, x, h_prev)
        dx, dh_prev, dp = gru_step_backward(p, cache, g)
        numeric = finite_difference(loss, arrays)
        assert max_rel_err(dx, numeric["x"]) < 1e-5
        assert max_rel_err(dh_prev, numeric["h_prev"]) < 1e-5
        for name, arr in dp.blocks():
            assert max_rel_err(arr, numeric[name]) < 1e-5, name

    @pytest.mark.parametrize("dims", [(1, 1), (3, 4), (5, 5)])
    def test_twenty_random_draws_per_dimension(self, dims):
        d, m = dims
        for draw in range(20):
            p, x, h_prev, g, arrays, loss = self._loss_setup(d, m, 7000 + 31 * draw + d)
            _, cache = gru_step(p, x, h_prev)
            dx, dh_prev, dp = gru_step_backward(p, cache, g)
            numeric = finite_difference(loss, arrays)
            worst = max(
                max_rel_err(dx, numeric["x"]),
                max_rel_err(dh_prev, numeric["h_prev"]),
                *(max_rel_err(arr, numeric[name]) for name, arr in dp.blocks()),
            )
            assert worst < 1e-5, f"draw {draw} at dims {dims}: {worst}"

    def test_clamped_update_gate(self):
        p, x, h_prev, g, arrays, loss = self._loss_setup(3, 4, 106, clamp_z=1.0)
        _, cache = gru_step(p, x, h_prev, clamp_z=1.0)
        dx, dh_prev, dp = gru_step_backward(p, cache, g)
        # with z clamped to 1 the cell is the identity on h_prev
        assert np.array_equal(dh_prev, g)
        for name in ("W_h", "U_h", "b_h", "W_z", "U_z", "b_z"):
            assert not getattr(dp, name).any(), name
        numeric = finite_difference(loss, arrays)
        assert max_rel_err(dx, numeric["x"]) < 1e-5
        assert max_rel_err(dh_prev, numeric["h_prev"]) < 1e-5
        for name, arr in dp.blocks():
            assert max_rel_err(arr, numeric[name]) < 1e-5, name

    def test_backward_shape_check(self):
        p, rng = random_cell(3, 4, 107)
        _, cache = gru_step(p, rng.uniform(-1, 1, (3,)), np.zeros(4))
        with pytest.raises(DimensionError):
            gru_step_backward(p, cache, np.zeros(5))


class TestLinearCell:
    def test_no_recurrence_no_bias(self):
        rng = SeededRng(108)
        U = rng.uniform(-1, 1, (4, 3))
        p = LinearRnnParams(U=U, W=np.zeros((4, 4)), b=np.zeros(4)).validate()
        x = rng.uniform(-1, 1, (3,))
        np.testing.assert_allclose(linear_step(p, x, np.ones(4)), U @ x, atol=1e-15)

    def test_scalar_four_step_accumulation(self):
        p = LinearRnnParams(U=np.array([[1.0]]), W=np.array([[2.0]]), b=np.zeros(1))
        h = np.zeros(1)
        for _ in range(4):
            h = linear_step(p, np.array([1.0]), h)
        assert h[0] == 15.0

    def test_zero_inputs_give_bias(self):
        p = LinearRnnParams(U=np.ones((2, 3)), W=np.ones((2, 2)), b=np.array([0.5, -1.5]))
        assert np.array_equal(linear_step(p, np.zeros(3), np.zeros(2)), p.b)

    def test_matches_closed_form_expansion(self):
        # h_T == sum_i W^(T-i) U x_i for the bias-free cell
        rng = SeededRng(109)
        d, m, T = 3, 4, 9
        U = rng.uniform(-0.9, 0.9, (m, d))
        W = rng.uniform(-0.9, 0.9, (m, m)) / m
        p = LinearRnnParams(U=U, W=W, b=np.zeros(m))
        xs = rng.uniform(-0.9, 0.9, (T, d))
        h = np.zeros(m)
        for t in range(T):
            h = linear_step(p, xs[t], h)
        closed = np.zeros(m)
        for i in range(T):
            closed += matrix_power(W, T - 1 - i) @ (U @ xs[i])
        np.testing.assert_allclose(h, closed, rtol=1e-10, atol=1e-12)

    def test_shape_check(self):
        p = LinearRnnParams(U=np.zeros((2, 3)), W=np.zeros((2, 2)), b=np.zeros(2))
        with pytest.raises(DimensionError):
            linear_step(p, np.zeros(4), np.zeros(2))


class TestCellCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        p, _ = random_cell(3, 5, 110)
        path = tmp_path / "cell.bin"
        save_cell(p, path)
        loaded = load_cell(path)
        for (name, arr), (name2, arr2) in zip(p.blocks(), loaded.blocks()):
            assert name == name2
            assert arr.tobytes() == arr2.tobytes()

    def test_header_records_dims(self):
        p = GruParams.zeros(7, 2)
        loaded, _ = cell_from_bytes(cell_to_bytes(p))
        assert loaded.input_dim == 7 and loaded.hidden_dim == 2

    def test_fixed_block_order(self):
        # distinct constants per block let the raw buffer be parsed by hand
        m, d = 2, 2
        blocks = {}
        for i, name in enumerate(("W_r", "U_r", "b_r", "W_z", "U_z", "b_z", "W_h", "U_h", "b_h")):
            shape = (m, d) if name[0] in "WU" else (m,)
            blocks[name] = np.full(shape, float(i + 1))
        buf = cell_to_bytes(GruParams(**blocks))
        payload = np.frombuffer(buf, dtype="<f8", offset=24)
        expected = np.concatenate(
            [np.full(4 if n[0] in "WU" else 2, float(i + 1)) for i, n in enumerate(blocks)]
        )
        assert np.array_equal(payload, expected)

    def test_bad_magic_rejected(self):
        with pytest.raises(ConsistencyError):
            cell_from_bytes(b"NOTACELL" + b"\0" * 64)

    def test_truncated_buffer_rejected(self):
        p, _ = random_cell(3, 5, 111)
        buf = cell_to_bytes(p)
        with pytest.raises(ConsistencyError, match="truncated or corrupt"):
            cell_from_bytes(buf[: len(buf) // 2])
