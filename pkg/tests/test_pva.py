import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from _stubs import scripted_episode, stub_twin
from eddm.pva import (
    TrackingConfig,
    TrackingState,
    aggregate,
    component_errors,
    export_trace,
    run_ensemble,
    total_error,
    weights_from_errors,
)

DEFAULT = TrackingConfig()

# three twins, five steps, dt = 0.5; surrogates are (plenum, flow)
MEASURED = [(0.0, 1.0), (0.4, 0.8), (1.0, 0.5), (1.3, 0.1), (1.5, -0.2)]
PREDICTED = [
    [(0.1, 1.1), (0.5, 0.8), (1.0, 0.6), (1.2, 0.2), (1.6, -0.1)],
    [(-0.5, 0.5), (0.0, 0.2), (0.3, 0.0), (0.9, -0.4), (1.0, -0.6)],
    [(0.0, 1.0), (0.4, 0.8), (1.0, 0.5), (1.3, 0.1), (1.5, -0.2)],
]
SSF = [[600.0, 610.0, 625.0, 640.0, 650.0], [590.0, 605.0, 615.0, 630.0, 655.0], [602.0, 611.0, 623.0, 641.0, 652.0]]
DT = 0.5


def oracle_chain(measured, predicted, ssf, dt, a=10.0, b=0.5, c=0.8, omega=(0.5, 0.8), eps=1e-9):
    """Spreadsheet-style recomputation of errors, weights and aggregate."""
    k = len(predicted)
    integ = [[0.0, 0.0] for _ in range(k)]
    rows = []
    for t in range(len(measured)):
        errs = []
        for j in range(k):
            d = [measured[t][s] - predicted[j][t][s] for s in range(2)]
            for s in range(2):
                integ[j][s] += d[s] * dt
            if t == 0:
                slope = [0.0, 0.0]
            else:
                slope = [((measured[t][s] - measured[t - 1][s]) - (predicted[j][t][s] - predicted[j][t - 1][s])) / dt for s in range(2)]
            ep = omega[0] * d[0] + omega[1] * d[1]
            ei = omega[0] * integ[j][0] + omega[1] * integ[j][1]
            ed = omega[0] * slope[0] + omega[1] * slope[1]
            errs.append(a * ep + b * ei + c * ed)
        mags = [max(abs(e), eps) for e in errs]
        tot = sum(mags)
        raws = [-math.log(m / tot) for m in mags]
        if all(m == mags[0] for m in mags):
            w = [1.0 / k] * k
        else:
            w = [r / sum(raws) for r in raws]
        y = sum(w[j] * ssf[j][t] for j in range(k))
        rows.append((errs, w, y))
    return rows


def test_weights_hand_example():
    p = weights_from_errors([1.0, 2.0, 7.0])
    assert p == pytest.approx([0.53941158, 0.37703251, 0.08355591], abs=1e-8)
    # the quoted 0.3771 is 0.37703 rounded up; the stated approximation holds to 1e-4
    assert p == pytest.approx([0.5394, 0.3771, 0.0836], abs=1e-4)


def test_weights_trivial_cases():
    assert weights_from_errors([123.0]).tolist() == [1.0]
    assert weights_from_errors([-4.0, 4.0]).tolist() == [0.5, 0.5]
    assert weights_from_errors([0.0, 0.0, 0.0]) == pytest.approx([1 / 3] * 3)


def test_weights_reject_bad_input():
    with pytest.raises(ValueError):
        weights_from_errors([])
    with pytest.raises(ValueError):
        weights_from_errors([1.0, math.inf])


def test_perfect_tracker_dominates_as_others_grow():
    w_small = weights_from_errors([0.0, 1.0, 1.0])
    w_big = weights_from_errors([0.0, 1e6, 1e6])
    assert w_big[0] > w_small[0] > 1 / 3


error_vectors = st.lists(st.floats(0.0, 1e6), min_size=1, max_size=20)


@given(error_vectors)
def test_weights_on_simplex(errors):
    w = weights_from_errors(errors)
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) <= 1e-9


@given(error_vectors, st.floats(1e-3, 1e3))
def test_weights_scale_invariant(errors, factor):
    assume(min(errors) > 1e-6)
    scaled = weights_from_errors([e * factor for e in errors])
    assert np.allclose(scaled, weights_from_errors(errors), atol=1e-9)


@given(st.lists(st.floats(1e-12, 1e6), min_size=2, max_size=20), st.data())
def test_weights_decrease_in_own_error(errors, data):
    k = data.draw(st.integers(0, len(errors) - 1))
    bigger = list(errors)
    bigger[k] = max(errors[k] * data.draw(st.floats(1.01, 100.0)), 1e-8)
    assume(max(errors) > 2e-9 or bigger[k] > 2e-9)
    assert weights_from_errors(bigger)[k] < weights_from_errors(errors)[k]


def test_component_errors_constant_offset():
    state = TrackingState(1, 2)
    e = component_errors(state, np.array([1.0, 1.0]), np.array([0.0, 0.0]), 1.0, DEFAULT)
    assert e == pytest.approx((1.3, 1.3, 0.0), abs=1e-15)


def test_component_errors_perfect_tracking_is_zero():
    state = TrackingState(1, 2)
    for v in ([0.2, 1.0], [0.5, 0.9], [0.9, 0.4]):
        assert component_errors(state, np.array(v), np.array(v), 0.5, DEFAULT) == (0.0, 0.0, 0.0)


def test_masked_surrogate_ignored():
    cfg = TrackingConfig(omega=(0.5, 0.0))
    a = component_errors(TrackingState(1, 2), np.array([1.0, 5.0]), np.array([0.0, 0.0]), 1.0, cfg)
    b = component_errors(TrackingState(1, 2), np.array([1.0, -7.0]), np.array([0.0, 3.0]), 1.0, cfg)
    assert a == b


def test_total_error_example():
    assert total_error(0, 0, 0, DEFAULT) == 0
    assert total_error(1, 2, 3, DEFAULT) == pytest.approx(13.4, abs=1e-12)


def test_aggregate_examples():
    assert aggregate([512.0] * 4, [0.1, 0.2, 0.3, 0.4]) == 512.0
    assert aggregate([500.0, 600.0], [0.75, 0.25]) == pytest.approx(525.0, abs=1e-12)
    assert aggregate([500.0, 600.0, 700.0], [0.0, 1.0, 0.0]) == 600.0


def _scripted_run():
    twins = [stub_twin(f"t{j}") for j in range(3)]
    ep = scripted_episode([m[0] for m in MEASURED], [m[1] for m in MEASURED], [0.0] * 5, dt=DT)
    preds = np.array([[(SSF[j][t], *PREDICTED[j][t]) for t in range(5)] for j in range(3)])
    return run_ensemble(twins, ep, DEFAULT, preds)


def test_three_twin_five_step_oracle():
    steps = _scripted_run()
    for step, (errs, w, y) in zip(steps, oracle_chain(MEASURED, PREDICTED, SSF, DT)):
        assert np.allclose(step.errors, errs, atol=1e-9, rtol=0)
        assert np.allclose(step.weights, w, atol=1e-9, rtol=0)
        assert abs(step.y_hat - y) <= 1e-9


def test_echo_twin_outweighs_offset_twins():
    steps = _scripted_run()
    # twin 2 echoes the measurements exactly
    for s in steps:
        assert s.weights[2] > max(s.weights[0], s.weights[1])


def test_identical_twins_uniform():
    twins = [stub_twin() for _ in range(4)]
    ep = scripted_episode([0.1, 0.2, 0.3], [1.0, 0.9, 0.7], [0.0] * 3)
    preds = np.tile(np.array([[500.0, 0.0, 1.0], [501.0, 0.3, 0.8], [503.0, 0.2, 0.5]]), (4, 1, 1))
    for i, s in enumerate(run_ensemble(twins, ep, DEFAULT, preds)):
        assert np.allclose(s.weights, 0.25)
        assert s.y_hat == preds[0, i, 0]


def test_one_step_episode():
    ep = scripted_episode([1.0], [2.0], [600.0], dt=0.5)
    preds = np.array([[[610.0, 0.0, 0.0]], [[590.0, 0.5, 1.0]]])
    (s,) = run_ensemble([stub_twin(), stub_twin()], ep, DEFAULT, preds)
    assert np.allclose(s.e_i, s.e_p * 0.5)
    assert np.all(s.e_d == 0.0)
    assert 590.0 <= s.y_hat <= 610.0


def test_orientation_flips_flow_discrepancy():
    ep = scripted_episode([0.0], [0.0], [0.0])
    preds = np.array([[[0.0, 1.0, -1.0]]])
    plain = run_ensemble([stub_twin()], ep, DEFAULT, preds)[0]
    oriented = run_ensemble([stub_twin(signs={"core_flow": -1.0})], ep, DEFAULT, preds)[0]
    assert plain.e_p[0] == pytest.approx(-0.5 + 0.8)
    assert oriented.e_p[0] == pytest.approx(-0.5 - 0.8)


def test_twins_must_share_scaling():
    ep = scripted_episode([0.0], [0.0], [0.0])
    with pytest.raises(ValueError):
        run_ensemble([stub_twin(), stub_twin(signs={"core_flow": -1.0})], ep, DEFAULT, np.zeros((2, 1, 3)))


@given(st.integers(1, 8), st.integers(0, 2**31))
def test_convex_and_causal(n_twins, seed):
    rng = np.random.default_rng(seed)
    n = 12
    ep = scripted_episode(rng.normal(size=n), rng.normal(size=n), rng.normal(600, 20, size=n))
    preds = rng.normal(size=(n_twins, n, 3)) * [30.0, 1.0, 1.0] + [600.0, 0.0, 0.0]
    steps = run_ensemble([stub_twin() for _ in range(n_twins)], ep, DEFAULT, preds)
    for s in steps:
        assert s.ssf_preds.min() - 1e-12 <= s.y_hat <= s.ssf_preds.max() + 1e-12
        assert abs(s.weights.sum() - 1.0) <= 1e-9
    # scrambling the future leaves the past untouched
    cut = 6
    perm = np.concatenate([np.arange(cut), cut + rng.permutation(n - cut)])
    ep2 = scripted_episode(ep.channels["upper_plenum_temp"][perm], ep.channels["core_flow"][perm], ep.ssf[perm])
    steps2 = run_ensemble([stub_twin() for _ in range(n_twins)], ep2, DEFAULT, preds[:, perm])
    for a, b in zip(steps[:cut], steps2[:cut]):
        assert np.array_equal(a.weights, b.weights) and a.y_hat == b.y_hat


def test_trace_columns(tmp_path):
    path = export_trace(_scripted_run(), tmp_path / "trace.csv")
    rows = path.read_text().splitlines()
    assert rows[0].split(",") == ["t", "e_0", "e_1", "e_2", "P_0", "P_1", "P_2", "y_0", "y_1", "y_2", "y_hat", "ssf_true"]
    assert len(rows) == 6


def test_config_validation():
    with pytest.raises(ValueError):
        TrackingConfig(a=-1)
    with pytest.raises(ValueError):
        TrackingConfig(omega=(0.0, 0.0))
    with pytest.raises(ValueError):
        TrackingConfig(epsilon=0)
