import math

import numpy as np
import pytest

from analysis import (
    binomial_overflow_tail,
    bucket_osort_bound,
    chernoff_bucket_bound,
    chi_square_critical,
    chi_square_statistic,
    choose_bucket_size,
    cost_frame,
    epsilon_bound,
    extrapolated_ratio,
    load_histogram,
    loads_oracle,
    locality_report,
    overflow_monte_carlo,
    permutation_counts,
    predict_costs,
    total_variation,
)
from bitonic import comparator_count, network_comparators
from config import BENCH_COLUMNS
from osort import merge_sort_baseline


def test_epsilon_for_a_single_level():
    bound = epsilon_bound(6, 6)
    assert bound.B == 2 and bound.levels == 1
    assert bound.value == pytest.approx(2 * math.exp(-1), rel=1e-4)


def test_epsilon_is_clamped():
    bound = epsilon_bound(64, 8)
    assert bound.B == 16
    assert bound.value == 1.0
    assert bound.raw == pytest.approx(16.87, abs=0.01)


def test_default_bucket_size_is_small_enough():
    assert epsilon_bound(1 << 20, 512).log2_raw < -80


def test_epsilon_shrinks_with_z():
    values = [epsilon_bound(1 << 16, Z).raw for Z in (64, 128, 256, 512)]
    assert values == sorted(values, reverse=True)


@pytest.mark.parametrize("Z", [16, 32, 64, 512])
def test_epsilon_grows_with_n(Z):
    bounds = [epsilon_bound(1 << log2_n, Z) for log2_n in range(8, 21)]
    for smaller, larger in zip(bounds, bounds[1:]):
        assert smaller.raw <= larger.raw
        assert smaller.value <= larger.value


@pytest.mark.parametrize("log2_n", range(8, 21))
def test_epsilon_shrinks_with_z_on_every_size(log2_n):
    bounds = [epsilon_bound(1 << log2_n, Z) for Z in (16, 32, 64, 512)]
    for smaller_z, larger_z in zip(bounds, bounds[1:]):
        assert smaller_z.raw >= larger_z.raw
        assert smaller_z.value >= larger_z.value


def test_no_levels_no_overflow():
    assert epsilon_bound(4, 8).value == 0.0


def test_choose_bucket_size():
    Z = choose_bucket_size(1 << 20)
    assert Z % 2 == 0
    assert epsilon_bound(1 << 20, Z).log2_raw < -80
    assert epsilon_bound(1 << 20, Z - 2).log2_raw >= -80


@pytest.mark.parametrize("df, critical", [(23, 49.73), (119, 173.6), (5, 20.52)])
def test_chi_square_critical(df, critical):
    assert chi_square_critical(df) == pytest.approx(critical, rel=1e-2)


def test_chi_square_statistic():
    assert chi_square_statistic([10, 10, 10]) == 0.0
    assert chi_square_statistic([20, 0], [10, 10]) == pytest.approx(20.0)


def test_permutation_counts():
    counts = permutation_counts([[0, 1, 2], [2, 1, 0], [0, 1, 2]], 3)
    assert counts[0] == 2 and counts[-1] == 1
    assert counts.sum() == 3


def test_binomial_tail():
    tail = binomial_overflow_tail(96, 16, 12)
    assert 0.005 < tail < 0.012
    assert tail < chernoff_bucket_bound(12)
    assert chernoff_bucket_bound(12) == pytest.approx(math.exp(-2))


def test_monte_carlo_final_buckets_follow_the_binomial():
    stats = overflow_monte_carlo(96, 12, 10000, seed=5)
    assert stats.B == 16
    assert stats.bucket_overflows.shape == (5, 16)
    assert abs(stats.final_bucket_rate - binomial_overflow_tail(96, 16, 12)) < 0.003
    assert stats.any_overflow_rate >= stats.max_bucket_rate


@pytest.mark.slow
def test_monte_carlo_final_buckets_follow_the_binomial_closely():
    stats = overflow_monte_carlo(96, 12, 100000, seed=5)
    assert stats.trials == 100000
    assert abs(stats.final_bucket_rate - binomial_overflow_tail(96, 16, 12)) < 0.001


def test_monte_carlo_does_not_depend_on_workers():
    single = overflow_monte_carlo(2048, 64, 1200, seed=3)
    pooled = overflow_monte_carlo(2048, 64, 1200, seed=3, workers=2)
    assert single.overflow_runs == pooled.overflow_runs
    np.testing.assert_array_equal(single.bucket_overflows, pooled.bucket_overflows)


def test_monte_carlo_single_bucket():
    stats = overflow_monte_carlo(4, 8, 100)
    assert stats.B == 1
    assert stats.any_overflow_rate == 0.0


@pytest.mark.slow
@pytest.mark.parametrize("log2_n", [8, 9, 10, 11, 12])
@pytest.mark.parametrize("Z", [16, 24, 32])
def test_overflow_rates_respect_the_bounds(log2_n, Z):
    n = 1 << log2_n
    stats = overflow_monte_carlo(n, Z, 100000, seed=log2_n)
    assert stats.max_bucket_rate <= chernoff_bucket_bound(Z)
    bound = epsilon_bound(n, Z)
    if bound.value < 1:
        assert stats.any_overflow_rate <= bound.value


def test_loads_oracle():
    histogram = loads_oracle(2, 2, 20000, seed=1)
    assert set(histogram) == {(2, 0), (1, 1), (0, 2)}
    assert histogram[(1, 1)] == pytest.approx(0.5, abs=0.02)
    assert histogram[(2, 0)] == pytest.approx(0.25, abs=0.02)
    assert loads_oracle(0, 3, 10) == {(0, 0, 0): 1.0}


def test_load_histogram_and_total_variation():
    histogram = load_histogram([[1, 1], [2, 0], [1, 1], [0, 2]])
    assert histogram == {(0, 2): 0.25, (1, 1): 0.5, (2, 0): 0.25}
    assert total_variation(histogram, histogram) == 0.0
    assert total_variation({(1,): 1.0}, {(2,): 1.0}) == 1.0


def test_bucket_client_routing_prediction():
    report = predict_costs("bin_assign", 1024, 512)
    assert report.B == 4
    assert report.predicted_routing == 8192
    assert report.predicted["placement"] == 1024 + 2048


def test_const_client_prediction():
    report = predict_costs("orp", 1024, 32, "const")
    assert report.B == 64
    assert report.predicted_routing == 6 * 32 * (8 * 32 + 4 * comparator_count(64))
    assert report.predicted["permutation"] == 64 * (3 * 32 + 4 * comparator_count(32))
    assert report.predicted["emission"] == 64 * 32 + 1024


def test_const_client_prediction_on_three_disks():
    report = predict_costs("orp", 1024, 32, "const", disks=3)
    assert report.B == 64
    assert report.predicted_routing == 1089536
    assert report.predicted["permutation"] == 129024
    assert report.predicted["emission"] == 64 * 32 + 1024
    # bucket clients route the same way on any disk count
    assert predict_costs("bin_assign", 1024, 512, disks=3).predicted_routing == 8192


def test_const_client_prediction_for_even_z():
    report = predict_costs("orp", 24, 6, "const")
    assert report.B == 8
    assert report.predicted_routing == 3 * 4 * (8 * 6 + 4 * network_comparators(12))
    assert report.predicted["permutation"] == 8 * (3 * 6 + 4 * network_comparators(6))


def test_baseline_predictions():
    assert predict_costs("merge", 1024).predicted_total == 20480
    three_disks = predict_costs("merge", 1024, disks=3)
    assert three_disks.predicted["sort"] == 20480
    assert three_disks.predicted["distribution"] == 2 * 1024 * 8
    assert "distribution" not in predict_costs("merge", 1024, disks=2).predicted
    assert predict_costs("bitonic", 1024).predicted_total == 4 * comparator_count(1024)
    with pytest.raises(ValueError):
        predict_costs("quicksort", 16)


def test_bucket_osort_stays_under_its_bound():
    for log2_n in (10, 16, 20, 30):
        n = 1 << log2_n
        assert predict_costs("bucket", n).predicted_total <= bucket_osort_bound(n)
    assert bucket_osort_bound(1024) == 61440


def test_headline_ratio():
    assert extrapolated_ratio(30) > 5
    assert extrapolated_ratio(20) < extrapolated_ratio(30)


def test_cost_frame_columns():
    reports = [predict_costs("bucket", 4096), predict_costs("merge", 4096)]
    frame = cost_frame(reports)
    assert list(frame.columns) == BENCH_COLUMNS
    assert frame["predicted_accesses"].tolist() == [r.predicted_total for r in reports]


def test_reference_cost():
    report = predict_costs("bitonic", 1024)
    assert report.reference_cost("randomized_shellsort") == 24 * 1024 * 10


def test_locality_report():
    result = merge_sort_baseline(np.arange(64)[::-1], disks=2)
    report = locality_report(result.trace)
    assert report.disks == 2
    assert report.moves == sum(report.per_disk) == result.memory.moves
    assert report.moves > 0
