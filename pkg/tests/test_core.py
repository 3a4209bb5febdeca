import numpy as np
import pytest
from numpy.testing import assert_array_equal

from core import (
    ClientMode,
    InvalidParams,
    RoutingEngine,
    as_elements,
    bucket_count,
    butterfly_wiring,
    canonical,
    derive_params,
    dummies,
    element_dtype,
    is_semi_sorted,
    label_bit,
    label_prefix,
    merge_split_indices,
    next_power_of_two,
    reals_first,
    route_bucket,
)


@pytest.mark.parametrize("n, Z, B", [(4, 4, 2), (1024, 512, 4), (5, 4, 4), (2, 4, 1), (96, 12, 16)])
def test_bucket_count(n, Z, B):
    params = derive_params(n, Z)
    assert params.B == B
    assert bucket_count(n, Z) == B
    assert params.B * params.Z >= 2 * n


def test_uneven_groups_take_the_extra_elements_first():
    params = derive_params(5, 4)
    assert params.groups == (2, 1, 1, 1)
    assert sum(params.groups) == 5
    assert max(params.groups) <= params.Z // 2


def test_derive_params_is_deterministic():
    assert derive_params(1000, 16, seed=3) == derive_params(1000, 16, seed=3)


@pytest.mark.parametrize("n, Z", [(4, 3), (4, 0), (4, 1), (0, 4), (-1, 4)])
def test_derive_params_rejects_bad_sizes(n, Z):
    with pytest.raises(InvalidParams):
        derive_params(n, Z)


@pytest.mark.parametrize("Z", [6, 12])
def test_const_client_accepts_even_z_that_is_not_a_power_of_two(Z):
    params = derive_params(48, Z, client_mode=ClientMode.CONST)
    assert params.Z == Z
    assert params.engine is RoutingEngine.BITONIC
    assert derive_params(8, Z).engine is RoutingEngine.BUCKET


def test_const_client_on_three_disks_routes_striped():
    params = derive_params(64, 8, client_mode="const", disks=3)
    assert params.engine is RoutingEngine.STRIPED
    assert derive_params(64, 6, client_mode="const", disks=4).engine is RoutingEngine.STRIPED


@pytest.mark.parametrize("disks", [1, 2, 3, 4])
def test_bucket_client_routes_in_the_client_on_any_disk_count(disks):
    assert derive_params(64, 8, disks=disks).engine is RoutingEngine.BUCKET


def test_routing_engine_selection():
    assert derive_params(64, 8).engine is RoutingEngine.BUCKET
    assert derive_params(64, 8, client_mode="const").engine is RoutingEngine.BITONIC
    assert derive_params(64, 8, client_mode="const", disks=2).engine is RoutingEngine.BITONIC


def test_invalid_params_is_a_value_error():
    with pytest.raises(ValueError):
        derive_params(4, 3)


@pytest.mark.parametrize("i, j, expected", [
    (0, 1, (2, 3, 2, 3)),
    (1, 2, (4, 6, 4, 5)),
    (2, 3, (3, 7, 6, 7)),
])
def test_merge_split_indices(i, j, expected):
    assert merge_split_indices(i, j, 8) == expected


@pytest.mark.parametrize("B", [2, 4, 8, 16, 32])
def test_butterfly_levels_are_perfect_matchings(B):
    levels = B.bit_length() - 1
    for i in range(levels):
        pairs = [merge_split_indices(i, j, B) for j in range(B // 2)]
        inputs = sorted(b for p in pairs for b in p[:2])
        outputs = sorted(b for p in pairs for b in p[2:])
        assert inputs == list(range(B))
        assert outputs == list(range(B))
        assert all(in1 - in0 == 1 << i for in0, in1, _, _ in pairs)
        assert all(out1 == out0 + 1 and out0 % 2 == 0 for _, _, out0, out1 in pairs)

        in0, in1, out0, out1 = butterfly_wiring(i, B)
        assert_array_equal(in0, [p[0] for p in pairs])
        assert_array_equal(in1, [p[1] for p in pairs])


@pytest.mark.parametrize("B", [2, 8, 32])
def test_route_bucket_follows_the_wiring(B):
    levels = B.bit_length() - 1
    for i in range(levels):
        in0, in1, out0, out1 = butterfly_wiring(i, B)
        for source in (in0, in1):
            assert_array_equal(route_bucket(source, 0, i), out0)
            assert_array_equal(route_bucket(source, 1, i), out1)


def test_label_bits_count_from_the_most_significant():
    labels = np.array([0b10, 0b01, 0b11], dtype=np.uint64)
    assert_array_equal(label_bit(labels, 0, 2), [1, 0, 1])
    assert_array_equal(label_bit(labels, 1, 2), [0, 1, 1])
    assert_array_equal(label_prefix(labels, 1, 2), [1, 0, 1])
    assert_array_equal(label_prefix(labels, 0, 2), [0, 0, 0])


def test_element_dtype_payload_field():
    assert "payload" not in element_dtype(0).names
    assert element_dtype(16).fields["payload"][0].itemsize == 16


def test_as_elements_marks_reals():
    records = as_elements([5, 3, 1])
    assert_array_equal(records["sort_key"], [5, 3, 1])
    assert records["is_real"].all()


def test_canonical_clears_dummies_and_scratch():
    records = as_elements([7, 8])
    records["rank"] = [4, 5]
    junk = dummies(2)
    junk["sort_key"] = 99
    junk["label"] = 3
    cleaned = canonical(np.concatenate([records, junk]))
    assert_array_equal(cleaned["rank"], [0, 0, 0, 0])
    assert_array_equal(cleaned["sort_key"], [7, 8, 0, 0])
    assert_array_equal(cleaned["label"], [0, 0, 0, 0])


def test_reals_first():
    bucket = dummies(4)
    bucket["is_real"][:2] = True
    assert reals_first(bucket.reshape(1, 4))
    bucket["is_real"][3] = True
    assert not reals_first(bucket.reshape(1, 4))


def test_semi_sorted_by_label_prefix():
    level = dummies(8).reshape(4, 2)
    # level 1 of B=4: within each block of two buckets the top label bit is the position
    level["is_real"][:, 0] = True
    level["label"][:, 0] = [0b01, 0b10, 0b00, 0b11]
    assert is_semi_sorted(level, 1, 2)
    level["label"][0, 0] = 0b11
    assert not is_semi_sorted(level, 1, 2)
    assert is_semi_sorted(level, 0, 2)


@pytest.mark.parametrize("value, expected", [(1, 1), (2, 2), (3, 4), (12, 16), (64, 64), (65, 128)])
def test_next_power_of_two(value, expected):
    assert next_power_of_two(value) == expected
