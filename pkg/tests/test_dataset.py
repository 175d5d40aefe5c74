import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eddm.dataset import (
    EXTP_PLAN,
    INTP_PLAN,
    OUTPUTS,
    TRAIN_PLAN,
    ConstantChannelError,
    RegimePartition,
    SamplingPlan,
    UndefinedCorrelationError,
    build_dataset,
    compute_norm_stats,
    denormalize,
    load_dataset,
    normalize,
    partition_regimes,
    pearson,
    pooled_correlations,
    prepare,
    save_dataset,
    select_features,
    supervised_arrays,
)
from eddm.plant import CHANNELS, CORE_FLOW, UPPER_PLENUM, PlantConfig

SMALL = PlantConfig(dt=2.0, n_steps=300)


def two_pass_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    vx = sum((a - mx) ** 2 for a in x) / n
    vy = sum((b - my) ** 2 for b in y) / n
    return cov / math.sqrt(vx * vy)


@pytest.fixture(scope="module")
def train():
    return build_dataset(replace(TRAIN_PLAN, sample_count=40), SMALL)


@pytest.fixture(scope="module")
def extp():
    return build_dataset(replace(EXTP_PLAN, sample_count=10), SMALL)


def test_table1_plans():
    assert (TRAIN_PLAN.sample_count, TRAIN_PLAN.w_end_range) == (1024, (51.6, 100.0))
    assert (INTP_PLAN.sample_count, INTP_PLAN.w_end_range) == (250, (51.6, 100.0))
    assert (EXTP_PLAN.sample_count, EXTP_PLAN.w_end_range) == (250, (0.0, 38.7))
    assert TRAIN_PLAN.T_ramp == INTP_PLAN.T_ramp == EXTP_PLAN.T_ramp == 467.81


def test_full_train_plan_size():
    ds = build_dataset(TRAIN_PLAN, PlantConfig(dt=5.0, n_steps=20))
    assert len(ds) == 1024
    assert np.all((ds.w_ends() >= 51.6) & (ds.w_ends() <= 100.0))


def test_extp_within_range(extp):
    assert len(extp) == 10
    assert np.all(extp.w_ends() <= 38.7)


def test_degenerate_range_is_steady():
    ds = build_dataset(SamplingPlan("flat", 3, w_end_range=(100.0, 100.0)), replace(SMALL, noise_sigma=0.0))
    for ep in ds.episodes:
        assert np.ptp(ep.ssf) < 1e-9


def test_build_is_deterministic(train):
    again = build_dataset(replace(TRAIN_PLAN, sample_count=40), SMALL)
    assert all(a == b for a, b in zip(train.episodes, again.episodes))


@pytest.mark.parametrize(
    "y, expected",
    [((1, 2, 3, 4), 1.0), ((-1, -2, -3, -4), -1.0), ((2, 1, 4, 3), 0.6)],
)
def test_pearson_examples(y, expected):
    assert pearson([1, 2, 3, 4], y) == pytest.approx(expected, abs=1e-15)


def test_pearson_zero_variance():
    with pytest.raises(UndefinedCorrelationError):
        pearson([1, 1, 1], [1, 2, 3])


@given(
    arrays(float, 20, elements=st.floats(-1e3, 1e3)),
    arrays(float, 20, elements=st.floats(-1e3, 1e3)),
)
def test_pearson_matches_two_pass(x, y):
    if np.ptp(x) < 1e-3 or np.ptp(y) < 1e-3:
        return
    assert pearson(x, y) == pytest.approx(two_pass_pearson(list(x), list(y)), abs=1e-12)


@given(
    arrays(float, 15, elements=st.floats(-100, 100)),
    arrays(float, 15, elements=st.floats(-100, 100)),
    st.floats(0.1, 10.0),
    st.floats(-50.0, 50.0),
)
def test_pearson_symmetric_and_affine_invariant(x, y, scale, shift):
    if np.ptp(x) < 1e-2 or np.ptp(y) < 1e-2:
        return
    r = pearson(x, y)
    assert -1.0 <= r <= 1.0
    assert pearson(y, x) == pytest.approx(r, abs=1e-12)
    assert pearson(scale * x + shift, y) == pytest.approx(r, abs=1e-9)


def test_surrogates_strongly_correlated(train):
    rho = pooled_correlations(train)
    assert abs(rho[UPPER_PLENUM]) >= 0.7 and abs(rho[CORE_FLOW]) >= 0.7
    assert rho[CORE_FLOW] < 0 < rho[UPPER_PLENUM]
    feats = select_features(train, threshold=0.7)
    assert UPPER_PLENUM in feats and CORE_FLOW in feats


def test_selection_threshold_edges(train):
    rho = pooled_correlations(train)
    assert set(select_features(train, threshold=0.0, expert_includes=())) == set(rho)
    assert select_features(train, threshold=1.0, expert_includes=(CORE_FLOW,)) == [CORE_FLOW]
    assert select_features(train, threshold=0.7) == select_features(train, threshold=0.7)


def test_selection_rejects_empty_and_unknown(train):
    with pytest.raises(ValueError):
        select_features(train, threshold=1.0, expert_includes=())
    with pytest.raises(KeyError):
        select_features(train, expert_includes=("nope",))


@given(arrays(float, (30, 3), elements=st.floats(-1e4, 1e4)))
def test_normalize_round_trip(values):
    stats = {"a": (3.0, 2.0), "b": (-100.0, 0.5), "c": (0.0, 1e3)}
    back = denormalize(normalize(values, stats, "abc"), stats, "abc")
    assert np.allclose(back, values, rtol=1e-12, atol=1e-9)


def test_normalize_shifted_channel_zero_mean(train):
    stats = compute_norm_stats(train, [UPPER_PLENUM])
    z = normalize(np.concatenate([ep.channels[UPPER_PLENUM] for ep in train.episodes])[:, None], stats, [UPPER_PLENUM])
    assert abs(z.mean()) < 1e-9 and z.std() == pytest.approx(1.0)


def test_constant_channel_rejected():
    quiet = build_dataset(SamplingPlan("q", 2), replace(SMALL, noise_sigma=0.0))
    with pytest.raises(ConstantChannelError):
        compute_norm_stats(quiet, ["secondary_flow"])
    with pytest.raises(ConstantChannelError):
        normalize(np.zeros((1, 1)), {"x": (0.0, 0.0)}, ["x"])


def test_extrapolation_leaves_training_range(train, extp):
    tr, ex = prepare(train, [extp])
    X, _, _ = supervised_arrays(ex, ["pump1_speed"])
    assert np.abs(X).max() > 3.0


def test_prepare_stamps_train_stats(train, extp):
    tr, ex = prepare(train, [extp])
    assert ex.norm_stats == tr.norm_stats and ex.feature_names == tr.feature_names
    assert set(OUTPUTS) <= set(tr.norm_stats)
    assert tr.surrogate_signs == {UPPER_PLENUM: 1.0, CORE_FLOW: -1.0}


def test_supervised_arrays_groups(train):
    (tr,) = prepare(train)
    X, Y, groups = supervised_arrays(tr, ["pump1_speed"], stride=3)
    assert X.shape[0] == Y.shape[0] == len(groups) == 40 * 100
    assert np.array_equal(np.unique(groups), np.arange(40))


def test_eighteen_training_jobs(train):
    part = RegimePartition.overlapping(51.6, 100.0, n=6, overlap=0.5, seeds_per_range=3)
    assert len(part.sub_ranges) * part.seeds_per_range == 18
    assert part.sub_ranges[0][0] == 51.6 and part.sub_ranges[-1][1] == 100.0


def test_single_range_is_whole_train(train):
    (sub,) = partition_regimes(train, RegimePartition(((51.6, 100.0),)))
    assert sub.episodes == train.episodes


def test_disjoint_split_counts(train):
    subs = partition_regimes(train, RegimePartition.disjoint(51.6, 100.0, 3))
    # episodes on a shared edge could be counted twice; none land there
    assert sum(len(s) for s in subs) == len(train)


def test_overlapping_subsets_cover_train(train):
    subs = partition_regimes(train, RegimePartition.overlapping(51.6, 100.0, 3, 0.5))
    ids = {ep.tags["index"] for s in subs for ep in s.episodes}
    assert ids == set(range(len(train)))


def test_empty_regime_rejected(train):
    with pytest.raises(ValueError):
        partition_regimes(train, RegimePartition(((0.0, 1.0), (51.6, 100.0))))


def test_dataset_round_trip(tmp_path, extp):
    (ex,) = prepare(extp)
    save_dataset(ex, tmp_path)
    back = load_dataset(tmp_path)
    assert back.plan == ex.plan and back.norm_stats == ex.norm_stats
    assert back.surrogate_signs == ex.surrogate_signs
    assert all(a == b for a, b in zip(back.episodes, ex.episodes))
