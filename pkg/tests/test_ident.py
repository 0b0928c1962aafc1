"""Tests for cell parameter identification: measurement records, the
log-space parameter encoding, the vectorized residual path, the
Levenberg-Marquardt solver, and end-to-end table recovery."""
import json
import math

import numpy as np
import pytest

from doe_forge import ecm, ident, profiles
from doe_forge.cells import truth_cell_2rc
from doe_forge.ident import (
    IdentData,
    IdentResult,
    IdentSpec,
    build_params,
    decode,
    encode,
    evaluate,
    identify,
    initial_guess,
    jacobian,
    load_measurements,
    residuals,
    save_measurements,
    solve_lm,
    support_counts,
    synthesize_measurements,
)

# ---------------------------------------------------------------------------
# shared fixtures: a 2-RC ground-truth cell whose parameters sit exactly on a
# small identification grid, plus a current-rich fitting dataset
# ---------------------------------------------------------------------------

N_SOC = 6  # small grid keeps the finite-difference Jacobian cheap


def _truth_tables(cell: ecm.EcmParams) -> dict:
    """Pull the exact grid values back out of the truth cell's tables."""
    return {
        "r0": cell.r0.values[:, 0, :].copy(),
        "r1": cell.rc_pairs[0][0].values[:, 0].copy(),
        "c1": cell.rc_pairs[0][1].values[:, 0].copy(),
        "r2": cell.rc_pairs[1][0].values[:, 0].copy(),
        "c2": cell.rc_pairs[1][1].values[:, 0].copy(),
    }


@pytest.fixture(scope="module")
def truth():
    return truth_cell_2rc(soc_breakpoints=np.linspace(0.0, 1.0, N_SOC))


@pytest.fixture(scope="module")
def spec(truth):
    return IdentSpec.for_cell(truth, soc_breakpoints=np.linspace(0.0, 1.0, N_SOC))


def _fit_profile(capacity_ah: float) -> profiles.CurrentProfile:
    """Pulse ladder plus a drive cycle: step changes for R0, long holds and
    relaxations for the RC branches, currents covering both breakpoint pairs."""
    pulses = profiles.pulse_profile(
        profiles.PulseSpec(
            amplitudes_a=(2.5, 10.0),
            pulse_s=10.0,
            rest_s=20.0,
            soc_points=(0.9, 0.7, 0.5, 0.3, 0.1),
        ),
        capacity_ah=capacity_ah,
        start_soc=1.0,
    )
    cycle = profiles.drive_cycle_profile(
        duration_s=1500.0,
        i_chg_max_a=8.0,
        i_dis_max_a=8.0,
        capacity_ah=capacity_ah,
        seed=701,
        start_soc=0.55,
    )
    return pulses, cycle


@pytest.fixture(scope="module")
def fit_data(truth, spec):
    pulses, cycle = _fit_profile(spec.capacity_ah)
    return [
        synthesize_measurements(truth, pulses, dt=1.0),
        synthesize_measurements(truth, cycle, dt=1.0, soc0=0.55),
    ]


@pytest.fixture(scope="module")
def noiseless_fit(truth, spec, fit_data):
    return identify(fit_data, spec, max_iter=80)


# ---------------------------------------------------------------------------
# IdentSpec
# ---------------------------------------------------------------------------


class TestIdentSpec:
    def test_defaults(self):
        s = IdentSpec(ocv_soc=[0.0, 1.0], ocv_v=[3.0, 4.2])
        assert s.n_soc == 11
        assert s.n_current == 4
        np.testing.assert_allclose(s.current_breakpoints, [-10.0, -1.0, 1.0, 10.0])
        # r0 on the (soc, current) grid plus r1/c1/r2/c2 per soc breakpoint
        assert s.n_params == 11 * 4 + 4 * 11

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"soc_breakpoints": [0.5]},
            {"soc_breakpoints": [0.5, 0.5, 1.0]},
            {"current_breakpoints": [3.0]},
            {"current_breakpoints": [3.0, 1.0]},
            {"capacity_ah": 0.0},
            {"capacity_ah": -1.0},
            {"smoothing": -0.1},
            {"ocv_v": [3.0, 3.5, 4.2]},  # length mismatch with ocv_soc
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        base = {"ocv_soc": [0.0, 1.0], "ocv_v": [3.0, 4.2]}
        base.update(kwargs)
        with pytest.raises(ValueError):
            IdentSpec(**base)

    def test_requires_ocv_curve(self):
        with pytest.raises(ValueError, match="OCV"):
            IdentSpec()

    def test_for_cell_takes_ocv_and_capacity_from_cell(self, truth):
        s = IdentSpec.for_cell(truth)
        assert s.capacity_ah == pytest.approx(float(truth.capacity(25.0)))
        np.testing.assert_array_equal(s.ocv_soc, truth.ocv.axes[0])
        for soc, v in zip(s.ocv_soc, s.ocv_v):
            assert v == pytest.approx(float(truth.ocv(soc, 25.0)))

    def test_dict_roundtrip(self, spec):
        back = IdentSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
        np.testing.assert_array_equal(back.soc_breakpoints, spec.soc_breakpoints)
        np.testing.assert_array_equal(back.current_breakpoints, spec.current_breakpoints)
        np.testing.assert_array_equal(back.ocv_v, spec.ocv_v)
        assert back.capacity_ah == spec.capacity_ah
        assert back.temp_c == spec.temp_c
        assert back.smoothing == spec.smoothing


# ---------------------------------------------------------------------------
# IdentData
# ---------------------------------------------------------------------------


def _mk_data(n=5, dt=2.0, soc0=0.5, **over):
    t = np.arange(1, n + 1) * dt
    kw = dict(
        t_s=t,
        current_a=np.ones(n),
        voltage_v=np.full(n, 3.6),
        soc=np.linspace(soc0, soc0 + 0.01, n),
        soc0=soc0,
    )
    kw.update(over)
    return IdentData(**kw)


class TestIdentData:
    def test_dt_and_duration(self):
        d = _mk_data(n=5, dt=2.0)
        assert d.dt == 2.0
        assert d.duration_s == 10.0  # n rows of held current, dt each

    def test_rejects_single_row(self):
        with pytest.raises(ValueError, match="at least 2"):
            _mk_data(n=1)

    def test_rejects_ragged_columns(self):
        with pytest.raises(ValueError, match="equal length"):
            _mk_data(current_a=np.ones(3))

    def test_rejects_nonuniform_cadence(self):
        with pytest.raises(ValueError, match="uniform"):
            _mk_data(t_s=np.array([1.0, 2.0, 3.0, 4.0, 5.5]))

    def test_rejects_decreasing_times(self):
        with pytest.raises(ValueError, match="increasing"):
            _mk_data(t_s=np.array([1.0, 2.0, 2.0, 3.0, 4.0]))

    def test_rejects_soc0_outside_unit_interval(self):
        with pytest.raises(ValueError, match="initial soc"):
            _mk_data(soc0=1.2)

    def test_tolerates_float_cadence_jitter(self):
        # cadence differences at 1e-12 relative scale are representation
        # noise, not a different sample rate
        t = np.cumsum(np.full(10, 0.1))
        d = _mk_data(n=10, t_s=t, soc=np.full(10, 0.5))
        assert d.dt == pytest.approx(0.1)


# ---------------------------------------------------------------------------
# measurement CSV round trips
# ---------------------------------------------------------------------------


class TestMeasurementIO:
    def test_roundtrip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        n = 40
        data = IdentData(
            t_s=np.arange(1, n + 1) * 0.5,
            current_a=rng.normal(size=n),
            voltage_v=3.6 + 0.01 * rng.normal(size=n),
            soc=np.clip(rng.random(n), 0, 1),
            soc0=0.42,
            temp_c=31.0,
            name="bench_run",
        )
        path = tmp_path / "meas.csv"
        save_measurements(data, path)
        back = load_measurements(path)
        np.testing.assert_array_equal(back.t_s, data.t_s)
        np.testing.assert_array_equal(back.current_a, data.current_a)
        np.testing.assert_array_equal(back.voltage_v, data.voltage_v)
        np.testing.assert_array_equal(back.soc, data.soc)
        assert back.soc0 == data.soc0
        assert back.temp_c == data.temp_c
        assert back.name == "bench_run"

    def test_without_sidecar_soc0_is_backstepped(self, tmp_path):
        data = _mk_data(n=6, dt=10.0, soc0=0.5, current_a=np.full(6, 3.6))
        path = tmp_path / "m.csv"
        save_measurements(data, path)
        (tmp_path / "m.csv.meta.json").unlink()
        back = load_measurements(path, capacity_ah=5.0)
        # one 10 s step of 3.6 A on 5 Ah moves SoC by 0.002
        assert back.soc0 == pytest.approx(data.soc[0] - 3.6 * 10.0 / (3600.0 * 5.0))
        assert back.name == "m"

    def test_without_sidecar_needs_capacity(self, tmp_path):
        path = tmp_path / "m.csv"
        save_measurements(_mk_data(), path)
        (tmp_path / "m.csv.meta.json").unlink()
        with pytest.raises(ValueError, match="capacity_ah"):
            load_measurements(path)

    def test_accepts_episode_log_format(self, tmp_path):
        # episode logs stamp rows at step START; the loader shifts them one
        # cadence forward to the end-of-step measurement convention
        path = tmp_path / "episode.csv"
        rows = [
            (0.0, 0.25, 2.5, 3.71, 0.601, 0.1),
            (1.0, -0.5, -5.0, 3.55, 0.600, 0.2),
            (2.0, 0.0, 0.0, 3.62, 0.600, 0.0),
        ]
        with open(path, "w") as f:
            f.write("t_s,action,current_a,voltage_v,soc,reward\n")
            for r in rows:
                f.write(",".join(repr(v) for v in r) + "\n")
        with open(str(path) + ".meta.json", "w") as f:
            json.dump({"start_soc": 0.6, "temp_c": 25.0}, f)
        d = load_measurements(path)
        np.testing.assert_array_equal(d.t_s, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(d.current_a, [2.5, -5.0, 0.0])
        np.testing.assert_array_equal(d.voltage_v, [3.71, 3.55, 3.62])
        assert d.soc0 == 0.6

    def test_rejects_unknown_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,current\n0,1\n1,2\n")
        with pytest.raises(ValueError, match="header"):
            load_measurements(path)

    def test_rejects_short_and_malformed_rows(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t_s,current_a,voltage_v,soc\n1.0,0.0,3.6\n")
        with pytest.raises(ValueError, match="columns"):
            load_measurements(path)
        path.write_text("t_s,current_a,voltage_v,soc\n1.0,0.0,oops,0.5\n2.0,0.0,3.6,0.5\n")
        with pytest.raises(ValueError, match="bad.csv:2"):
            load_measurements(path)
        path.write_text("t_s,current_a,voltage_v,soc\n1.0,0.0,3.6,0.5\n")
        with pytest.raises(ValueError, match="at least 2"):
            load_measurements(path)


# ---------------------------------------------------------------------------
# parameter vector encoding
# ---------------------------------------------------------------------------


class TestEncodeDecode:
    def test_roundtrip(self, spec):
        rng = np.random.default_rng(3)
        tables = {
            "r0": rng.uniform(1e-3, 0.1, (spec.n_soc, spec.n_current)),
            "r1": rng.uniform(1e-3, 0.1, spec.n_soc),
            "c1": rng.uniform(10, 1e4, spec.n_soc),
            "r2": rng.uniform(1e-3, 0.1, spec.n_soc),
            "c2": rng.uniform(10, 1e5, spec.n_soc),
        }
        x = encode(tables, spec)
        assert x.shape == (spec.n_params,)
        back = decode(x, spec)
        for key in tables:
            np.testing.assert_allclose(back[key], tables[key], rtol=1e-12)

    def test_layout_r0_block_first_then_rc_tables(self, spec):
        ns, nc = spec.n_soc, spec.n_current
        tables = {
            "r0": np.full((ns, nc), 1.0),
            "r1": np.full(ns, 1.0),
            "c1": np.full(ns, 1.0),
            "r2": np.full(ns, 1.0),
            "c2": np.full(ns, 1.0),
        }
        x = encode(tables, spec)  # all zeros in log space
        x[1 * nc + 2] = math.log(7.0)        # r0 at soc index 1, current index 2
        x[ns * nc + 2 * ns + 3] = math.log(5.0)  # r2 at soc index 3
        out = decode(x, spec)
        assert out["r0"][1, 2] == pytest.approx(7.0)
        assert out["r2"][3] == pytest.approx(5.0)
        assert np.sum(out["r0"] != 1.0) == 1
        assert np.sum(out["r2"] != 1.0) == 1

    def test_encode_rejects_bad_shapes_and_values(self, spec):
        good = {
            "r0": np.full((spec.n_soc, spec.n_current), 0.01),
            "r1": np.full(spec.n_soc, 0.01),
            "c1": np.full(spec.n_soc, 100.0),
            "r2": np.full(spec.n_soc, 0.01),
            "c2": np.full(spec.n_soc, 100.0),
        }
        bad = dict(good, r0=np.full((2, 2), 0.01))
        with pytest.raises(ValueError, match="r0 grid"):
            encode(bad, spec)
        bad = dict(good, c1=np.full(spec.n_soc + 1, 100.0))
        with pytest.raises(ValueError, match="c1"):
            encode(bad, spec)
        bad = dict(good, r1=np.full(spec.n_soc, 0.0))
        with pytest.raises(ValueError, match="positive"):
            encode(bad, spec)

    def test_decode_rejects_wrong_length(self, spec):
        with pytest.raises(ValueError, match=str(spec.n_params)):
            decode(np.zeros(spec.n_params - 1), spec)

    def test_build_params_places_tables_on_grid(self, truth, spec):
        tables = _truth_tables(truth)
        params = build_params(tables, spec, name="rebuilt")
        assert params.name == "rebuilt"
        assert params.n_rc == 2
        assert float(params.capacity(spec.temp_c)) == pytest.approx(spec.capacity_ah)
        for i, s in enumerate(spec.soc_breakpoints):
            for j, c in enumerate(spec.current_breakpoints):
                assert float(params.r0(s, spec.temp_c, c)) == pytest.approx(
                    tables["r0"][i, j], rel=1e-12
                )
            assert float(params.rc_pairs[0][0](s, spec.temp_c)) == pytest.approx(
                tables["r1"][i], rel=1e-12
            )
            assert float(params.rc_pairs[1][1](s, spec.temp_c)) == pytest.approx(
                tables["c2"][i], rel=1e-12
            )
            assert float(params.ocv(s, spec.temp_c)) == pytest.approx(
                np.interp(s, spec.ocv_soc, spec.ocv_v), rel=1e-12
            )


# ---------------------------------------------------------------------------
# synthesized measurements
# ---------------------------------------------------------------------------


class TestSynthesize:
    def test_matches_simulation_with_end_of_step_times(self, truth):
        prof = profiles.constant_current_profile(
            0.5, capacity_ah=5.0, duration_s=100.0, direction="discharge", start_soc=0.8
        )
        data = synthesize_measurements(truth, prof, dt=1.0)
        sim = ecm.simulate_profile(
            truth, prof, ecm.CellState.rested(0.8, truth.n_rc, 25.0), 1.0
        )
        # rows are stamped at end-of-step times: first row at t=dt
        np.testing.assert_array_equal(data.t_s, sim.t_s + 1.0)
        np.testing.assert_array_equal(data.voltage_v, sim.voltage_v)
        np.testing.assert_array_equal(data.soc, sim.soc)
        np.testing.assert_array_equal(data.current_a, sim.current_a)
        assert data.soc0 == 0.8
        assert data.name == prof.name

    def test_noise_lands_on_voltage_only_and_is_seeded(self, truth):
        prof = profiles.constant_current_profile(
            0.2, capacity_ah=5.0, duration_s=400.0, direction="charge", start_soc=0.3
        )
        clean = synthesize_measurements(truth, prof, dt=1.0)
        noisy1 = synthesize_measurements(truth, prof, dt=1.0, noise_mv=1.0, seed=5)
        noisy2 = synthesize_measurements(truth, prof, dt=1.0, noise_mv=1.0, seed=5)
        noisy3 = synthesize_measurements(truth, prof, dt=1.0, noise_mv=1.0, seed=6)
        np.testing.assert_array_equal(noisy1.voltage_v, noisy2.voltage_v)
        assert not np.array_equal(noisy1.voltage_v, noisy3.voltage_v)
        np.testing.assert_array_equal(noisy1.soc, clean.soc)
        np.testing.assert_array_equal(noisy1.current_a, clean.current_a)
        resid = noisy1.voltage_v - clean.voltage_v
        assert 0.5e-3 < resid.std() < 1.5e-3
        assert abs(resid.mean()) < 3e-4


# ---------------------------------------------------------------------------
# residuals: the vectorized path must equal a plain step-by-step replay
# ---------------------------------------------------------------------------


class TestResiduals:
    def test_zero_at_the_generating_parameters(self, truth, spec, fit_data):
        x_true = encode(_truth_tables(truth), spec)
        prepared = [ident._PreparedRecord(d, spec) for d in fit_data]
        f = residuals(x_true, prepared, spec)
        assert f.shape == (sum(d.t_s.shape[0] for d in fit_data),)
        assert np.max(np.abs(f)) < 1e-9

    @pytest.mark.parametrize("which", ["truth", "initial"])
    def test_matches_per_step_model_replay(self, truth, spec, fit_data, which):
        prepared = [ident._PreparedRecord(d, spec) for d in fit_data]
        if which == "truth":
            x = encode(_truth_tables(truth), spec)
        else:
            x = initial_guess(prepared, spec)
        fast = residuals(x, prepared, spec)
        params = build_params(decode(x, spec), spec)
        offset = 0
        for data in fit_data:
            state = ecm.CellState.rested(data.soc0, params.n_rc, data.temp_c)
            v_sim = np.empty(data.t_s.shape[0])
            for k in range(v_sim.shape[0]):
                res = ecm.step(params, state, float(data.current_a[k]), data.dt)
                state = res.state
                v_sim[k] = res.terminal_voltage
            slow = v_sim - data.voltage_v
            block = fast[offset : offset + v_sim.shape[0]]
            offset += v_sim.shape[0]
            np.testing.assert_allclose(block, slow, rtol=0, atol=1e-10)

    def test_smoothing_appends_log_difference_rows(self, spec, fit_data):
        sm = IdentSpec.from_dict({**spec.to_dict(), "smoothing": 0.25})
        prepared = [ident._PreparedRecord(d, sm) for d in fit_data]
        rng = np.random.default_rng(8)
        x = rng.normal(-4.0, 0.5, sm.n_params)
        f = residuals(x, prepared, sm)
        n_data = sum(d.t_s.shape[0] for d in fit_data)
        ns, nc = sm.n_soc, sm.n_current
        assert f.shape[0] == n_data + (ns - 1) * nc + 4 * (ns - 1)
        # the extra rows are sqrt(weight) * adjacent-breakpoint log differences
        r0_log = x[: ns * nc].reshape(ns, nc)
        expect = [0.5 * np.diff(r0_log, axis=0).reshape(-1)]
        for k in range(4):
            expect.append(0.5 * np.diff(x[ns * nc + k * ns : ns * nc + (k + 1) * ns]))
        np.testing.assert_allclose(f[n_data:], np.concatenate(expect), rtol=1e-12)
        # data rows are untouched by the smoothing option
        plain = residuals(x, [ident._PreparedRecord(d, spec) for d in fit_data], spec)
        np.testing.assert_array_equal(f[:n_data], plain)


class TestJacobian:
    def test_matches_analytic_derivative(self):
        def fn(x):
            return np.array([x[0] ** 2, 3.0 * x[1], x[0] * x[1]])

        x = np.array([1.5, -2.0])
        jac = jacobian(x, fn)
        expect = np.array([[2 * 1.5, 0.0], [0.0, 3.0], [-2.0, 1.5]])
        np.testing.assert_allclose(jac, expect, rtol=0, atol=1e-5)

    def test_zero_column_for_parameter_without_data(self, truth, spec):
        # a record confined to mid SoC never touches the soc=0 grid row, so
        # every residual is exactly flat in the r0 value stored there
        prof = profiles.drive_cycle_profile(
            duration_s=300.0,
            i_chg_max_a=5.0,
            i_dis_max_a=5.0,
            capacity_ah=spec.capacity_ah,
            seed=9,
            start_soc=0.5,
        )
        data = synthesize_measurements(truth, prof, dt=1.0, soc0=0.5)
        assert 0.3 < data.soc.min() and data.soc.max() < 0.7
        prepared = [ident._PreparedRecord(data, spec)]
        x = initial_guess(prepared, spec)
        jac = jacobian(x, lambda v: residuals(v, prepared, spec))
        col_unused = jac[:, 0]                  # r0 at (soc=0.0, current=-10)
        assert np.all(col_unused == 0.0)
        mid_row = np.argmin(np.abs(spec.soc_breakpoints - 0.5))
        col_used = jac[:, mid_row * spec.n_current]
        assert np.max(np.abs(col_used)) > 0.0


# ---------------------------------------------------------------------------
# Levenberg-Marquardt solver
# ---------------------------------------------------------------------------


def _rosenbrock(x):
    return np.array([1.0 - x[0], 10.0 * (x[1] - x[0] ** 2)])


def _rosenbrock_jac(x, f):
    return np.array([[-1.0, 0.0], [-20.0 * x[0], 10.0]])


class TestSolveLm:
    def test_rosenbrock_reaches_global_minimum(self):
        res = solve_lm(
            _rosenbrock,
            np.array([-1.2, 1.0]),
            jacobian_fn=_rosenbrock_jac,
            tol_g=1e-14,
            tol_x=1e-15,
            tol_f=1e-15,
            max_iter=200,
        )
        np.testing.assert_allclose(res.x, [1.0, 1.0], rtol=0, atol=1e-8)
        assert res.cost < 1e-16

    def test_rosenbrock_with_numeric_jacobian(self):
        res = solve_lm(_rosenbrock, np.array([-1.2, 1.0]), max_iter=200)
        np.testing.assert_allclose(res.x, [1.0, 1.0], rtol=0, atol=1e-6)

    def test_linear_least_squares_in_few_iterations(self):
        rng = np.random.default_rng(21)
        a = rng.normal(size=(12, 4)) + 2.0 * np.eye(12, 4)
        b = rng.normal(size=12)
        res = solve_lm(
            lambda x: a @ x - b,
            np.zeros(4),
            jacobian_fn=lambda x, f: a,
        )
        x_ref, *_ = np.linalg.lstsq(a, b, rcond=None)
        np.testing.assert_allclose(res.x, x_ref, rtol=0, atol=1e-8)
        assert res.n_iter <= 4

    def test_cost_history_is_monotone_and_starts_at_initial_cost(self):
        x0 = np.array([-1.2, 1.0])
        res = solve_lm(_rosenbrock, x0, jacobian_fn=_rosenbrock_jac, max_iter=200)
        f0 = _rosenbrock(x0)
        assert res.cost_history[0] == pytest.approx(float(f0 @ f0))
        assert res.cost_history[-1] == pytest.approx(res.cost)
        assert all(b <= a for a, b in zip(res.cost_history, res.cost_history[1:]))

    def test_gradient_stop_at_stationary_start(self):
        res = solve_lm(
            lambda x: np.array([x[0] - 2.0, 3.0 * (x[1] + 1.0)]),
            np.array([2.0, -1.0]),
            jacobian_fn=lambda x, f: np.array([[1.0, 0.0], [0.0, 3.0]]),
        )
        assert res.status == "gradient"
        assert res.n_iter == 1
        assert res.grad_inf <= 1e-8

    def test_max_iter_status(self):
        res = solve_lm(
            _rosenbrock, np.array([-1.2, 1.0]), jacobian_fn=_rosenbrock_jac, max_iter=1
        )
        assert res.status == "max_iter"
        assert res.n_iter == 1
        assert res.grad_inf > 0.0  # recomputed at the returned point

    def test_max_iter_below_one_rejected(self):
        with pytest.raises(ValueError, match="max_iter"):
            solve_lm(_rosenbrock, np.array([0.0, 0.0]), max_iter=0)

    def test_damping_overflow_raises(self):
        # forward differences see slope 1 at x=0 but every candidate step
        # increases the cost, so no damping value can make progress
        with pytest.raises(RuntimeError, match="damping"):
            solve_lm(lambda x: np.array([abs(x[0]) + 1.0]), np.array([0.0]))

    def test_nonfinite_initial_residual_raises(self):
        with pytest.raises(RuntimeError, match="non-finite"):
            solve_lm(lambda x: np.array([np.nan]), np.array([1.0]))

    def test_bounds_clip_start_and_iterates(self):
        history = []

        def fn(x):
            history.append(float(x[0]))
            return np.array([x[0]])

        res = solve_lm(
            fn,
            np.array([7.0]),
            jacobian_fn=lambda x, f: np.array([[1.0]]),
            x_bounds=(-5.0, 5.0),
        )
        assert res.cost_history[0] == pytest.approx(25.0)  # start clipped to 5
        assert all(-5.0 <= v <= 5.0 for v in history)
        assert abs(res.x[0]) < 1e-6

    def test_statuses_step_or_cost_on_converged_problem(self):
        res = solve_lm(
            lambda x: np.array([x[0] - 1.0, x[1] + 2.0, 0.5]),
            np.array([10.0, 10.0]),
            jacobian_fn=lambda x, f: np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]),
        )
        # nonzero floor cost: converges by step size or relative decrease
        assert res.status in ("step", "cost", "gradient")
        np.testing.assert_allclose(res.x, [1.0, -2.0], rtol=0, atol=1e-6)


# ---------------------------------------------------------------------------
# initial guess and data support
# ---------------------------------------------------------------------------


class TestInitialGuess:
    def test_r0_from_voltage_jumps(self, spec):
        # current toggles 0 <-> 2 A with voltage jumps of 16 mV: dV/dI = 8 mOhm
        n = 20
        i = np.tile([2.0, 0.0], n // 2)
        v = 3.6 + 0.008 * i
        data = IdentData(
            t_s=np.arange(1, n + 1), current_a=i, voltage_v=v, soc=np.full(n, 0.5), soc0=0.5
        )
        prepared = [ident._PreparedRecord(data, spec)]
        tables = decode(initial_guess(prepared, spec), spec)
        np.testing.assert_allclose(tables["r0"], 0.008, rtol=1e-9)
        # RC seed: 5 mOhm branches with 30 s / 300 s time constants
        np.testing.assert_allclose(tables["r1"] * tables["c1"], 30.0, rtol=1e-9)
        np.testing.assert_allclose(tables["r2"] * tables["c2"], 300.0, rtol=1e-9)

    def test_fallback_and_clipping(self, spec):
        rest = IdentData(
            t_s=np.arange(1, 11),
            current_a=np.zeros(10),
            voltage_v=np.full(10, 3.6),
            soc=np.full(10, 0.5),
            soc0=0.5,
        )
        tables = decode(initial_guess([ident._PreparedRecord(rest, spec)], spec), spec)
        np.testing.assert_allclose(tables["r0"], 0.01, rtol=1e-9)

        big = IdentData(
            t_s=np.arange(1, 11),
            current_a=np.tile([1.0, 0.0], 5),
            voltage_v=3.6 + np.tile([1.0, 0.0], 5),  # absurd 1 Ohm slope
            soc=np.full(10, 0.5),
            soc0=0.5,
        )
        tables = decode(initial_guess([ident._PreparedRecord(big, spec)], spec), spec)
        np.testing.assert_allclose(tables["r0"], 0.2, rtol=1e-9)  # clipped


class TestSupportCounts:
    def test_counts_nearest_breakpoints_and_skips_rest_for_r0(self, spec):
        # support follows the coulomb-counted trajectory: record A sits near
        # soc 0.6 (4 samples at 9.5 A, 2 at rest), record B rests near 0.2
        rec_a = IdentData(
            t_s=np.arange(1, 7),
            current_a=np.array([9.5, 9.5, 9.5, 9.5, 0.0, 0.0]),
            voltage_v=np.full(6, 3.7),
            soc=np.full(6, 0.6),
            soc0=0.6,
        )
        rec_b = IdentData(
            t_s=np.arange(1, 4),
            current_a=np.zeros(3),
            voltage_v=np.full(3, 3.4),
            soc=np.full(3, 0.2),
            soc0=0.2,
        )
        prepared = [ident._PreparedRecord(r, spec) for r in (rec_a, rec_b)]
        soc_support, r0_support = support_counts(prepared, spec)
        bp6 = np.argmin(np.abs(spec.soc_breakpoints - 0.6))
        bp2 = np.argmin(np.abs(spec.soc_breakpoints - 0.2))
        bp10a = np.argmin(np.abs(spec.current_breakpoints - 10.0))
        assert soc_support.sum() == 9
        assert soc_support[bp6] == 6
        assert soc_support[bp2] == 3
        # rest samples support the SoC axis but not any r0 cell
        assert r0_support.sum() == 4
        assert r0_support[bp6, bp10a] == 4


# ---------------------------------------------------------------------------
# end-to-end identification
# ---------------------------------------------------------------------------


def _assert_tables_close(result, truth_tables, spec, r0_rtol, tau_rtol, min_support):
    """Compare identified values to the generating values wherever the data
    actually constrains them."""
    soc_ok = result.support_soc >= min_support
    r0_ok = result.support_r0 >= min_support
    assert soc_ok.sum() >= 4, "fit data must cover most of the SoC range"
    assert r0_ok.sum() >= 8, "fit data must cover most of the r0 grid"
    got = result.tables
    np.testing.assert_allclose(
        got["r0"][r0_ok], truth_tables["r0"][r0_ok], rtol=r0_rtol
    )
    for num, den in (("r1", "c1"), ("r2", "c2")):
        tau_got = got[num][soc_ok] * got[den][soc_ok]
        tau_true = truth_tables[num][soc_ok] * truth_tables[den][soc_ok]
        np.testing.assert_allclose(tau_got, tau_true, rtol=tau_rtol)


class TestIdentify:
    def test_noiseless_recovery(self, truth, spec, fit_data, noiseless_fit):
        result = noiseless_fit
        assert result.status in ("gradient", "step", "cost")
        assert result.fit_mae_v < 1e-4
        _assert_tables_close(
            result, _truth_tables(truth), spec, r0_rtol=0.02, tau_rtol=0.10,
            min_support=50,
        )

    def test_noisy_recovery(self, truth, spec):
        pulses, cycle = _fit_profile(spec.capacity_ah)
        data = [
            synthesize_measurements(truth, pulses, dt=1.0, noise_mv=1.0, seed=31),
            synthesize_measurements(truth, cycle, dt=1.0, noise_mv=1.0, seed=32, soc0=0.55),
        ]
        result = identify(data, spec, max_iter=80)
        # 1 mV measurement noise: the fit floor is the noise level
        assert result.fit_mae_v < 1.5e-3
        _assert_tables_close(
            result, _truth_tables(truth), spec, r0_rtol=0.05, tau_rtol=0.20,
            min_support=50,
        )
        # the reported fit error must match an independent per-step replay of
        # the identified cell over the same records
        replay = evaluate(result.to_params(), data[0]).merge(
            evaluate(result.to_params(), data[1])
        )
        assert replay.mae == pytest.approx(result.fit_mae_v, rel=1e-6)

    def test_refit_from_solution_is_a_fixed_point(self, spec, fit_data, noiseless_fit):
        x_star = encode(noiseless_fit.tables, spec)
        again = identify(fit_data, spec, x0=x_star, max_iter=80)
        assert again.n_iter <= 3
        for key in ("r0", "r1", "c1", "r2", "c2"):
            np.testing.assert_allclose(
                again.tables[key], noiseless_fit.tables[key], rtol=1e-3
            )

    def test_resting_data_stops_immediately_and_warns(self, truth, spec):
        rest = profiles.CurrentProfile(
            t_s=np.arange(0.0, 120.0), current_a=np.zeros(120), name="rest"
        )
        data = synthesize_measurements(truth, rest, dt=1.0, soc0=0.5)
        with pytest.warns(UserWarning, match="fewer than 2 SoC breakpoints"):
            result = identify(data, spec)
        # zero current: residuals do not depend on any parameter
        assert result.status == "gradient"
        assert result.n_iter == 1
        assert np.all(result.support_r0 == 0)
        assert np.count_nonzero(result.support_soc) == 1

    def test_residual_norm_and_bookkeeping(self, fit_data, noiseless_fit):
        r = noiseless_fit
        assert r.residual_norm == pytest.approx(math.sqrt(r.cost), rel=1e-12)
        assert r.fit_n_samples == sum(d.t_s.shape[0] for d in fit_data)
        assert r.fit_duration_s == pytest.approx(sum(d.duration_s for d in fit_data))
        assert r.fit_mae_v == pytest.approx(
            float(np.mean(np.abs(r.residual_vector))), rel=1e-12
        )
        assert r.cost_history[0] >= r.cost_history[-1]
        assert r.fit_stats.n == r.fit_n_samples
        assert set(r.fit_uniformity) == {"v", "i", "soc"}
        taus = r.time_constants()
        np.testing.assert_allclose(taus["tau1"], r.tables["r1"] * r.tables["c1"])

    def test_empty_record_list_rejected(self, spec):
        with pytest.raises(ValueError, match="no measurement"):
            identify([], spec)

    def test_result_json_roundtrip(self, tmp_path, noiseless_fit):
        path = tmp_path / "result.json"
        noiseless_fit.save(path)
        back = IdentResult.load(path)
        for key in ("r0", "r1", "c1", "r2", "c2"):
            np.testing.assert_array_equal(back.tables[key], noiseless_fit.tables[key])
        assert back.cost == noiseless_fit.cost
        assert back.status == noiseless_fit.status
        assert back.n_iter == noiseless_fit.n_iter
        np.testing.assert_array_equal(back.support_r0, noiseless_fit.support_r0)
        assert back.fit_mae_v == noiseless_fit.fit_mae_v
        assert back.spec.capacity_ah == noiseless_fit.spec.capacity_ah
        # a reloaded result rebuilds the identical cell
        p1, p2 = noiseless_fit.to_params(), back.to_params()
        np.testing.assert_array_equal(p1.r0.values, p2.r0.values)

    def test_result_rejects_unknown_format_version(self, tmp_path, noiseless_fit):
        path = tmp_path / "result.json"
        noiseless_fit.save(path)
        blob = json.loads(path.read_text())
        blob["format_version"] = 99
        path.write_text(json.dumps(blob))
        with pytest.raises(ValueError, match="format_version"):
            IdentResult.load(path)

    def test_result_csv_export(self, tmp_path, spec, noiseless_fit):
        path = tmp_path / "tables.csv"
        noiseless_fit.save_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "quantity,soc,current_a,value,support"
        assert len(lines) == 1 + spec.n_soc * spec.n_current + 4 * spec.n_soc
        first = lines[1].split(",")
        assert first[0] == "r0"
        assert float(first[1]) == spec.soc_breakpoints[0]
        assert float(first[3]) == noiseless_fit.tables["r0"][0, 0]


# ---------------------------------------------------------------------------
# holdout evaluation
# ---------------------------------------------------------------------------


class TestEvaluate:
    def test_perfect_model_gives_zero_error(self, truth):
        prof = profiles.drive_cycle_profile(
            duration_s=240.0, i_chg_max_a=6.0, i_dis_max_a=6.0,
            capacity_ah=5.0, seed=17, start_soc=0.6,
        )
        data = synthesize_measurements(truth, prof, dt=1.0, soc0=0.6)
        stats = evaluate(truth, data)
        assert stats.n == data.t_s.shape[0]
        assert stats.max_abs < 1e-12

    def test_noise_floor_is_reported(self, truth):
        prof = profiles.constant_current_profile(
            0.4, capacity_ah=5.0, duration_s=2000.0, direction="discharge", start_soc=0.9
        )
        data = synthesize_measurements(truth, prof, dt=1.0, noise_mv=1.0, seed=3)
        stats = evaluate(truth, data)
        # mean |N(0, 1 mV)| is about 0.8 mV; rmse about 1 mV
        assert 0.6e-3 < stats.mae < 1.0e-3
        assert 0.8e-3 < stats.rmse < 1.2e-3

    def test_stats_from_different_records_merge(self, truth):
        p1 = profiles.constant_current_profile(
            0.5, capacity_ah=5.0, duration_s=50.0, direction="discharge", start_soc=0.8
        )
        p2 = profiles.constant_current_profile(
            0.5, capacity_ah=5.0, duration_s=70.0, direction="charge", start_soc=0.2
        )
        d1 = synthesize_measurements(truth, p1, dt=1.0)
        d2 = synthesize_measurements(truth, p2, dt=1.0)
        merged = evaluate(truth, d1).merge(evaluate(truth, d2))
        assert merged.n == d1.t_s.shape[0] + d2.t_s.shape[0]
