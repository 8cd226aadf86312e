import pytest
from hypothesis import given, strategies as st

from mbpath.seeds import MASK64, derive_seed, derive_seeds, splitmix64_mix

# Reference outputs of SplitMix64 seeded with 0 (Vigna's splitmix64.c).
SPLITMIX64_ZERO = [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F,
                   0xF88BB8A8724C81EC]


def test_reference_vectors():
    assert derive_seeds(0, 4) == SPLITMIX64_ZERO


def test_mix_is_a_pure_function():
    assert splitmix64_mix(12345) == splitmix64_mix(12345)
    assert splitmix64_mix(1 << 64) == splitmix64_mix(0)


@given(st.integers(0, MASK64), st.integers(0, 10_000))
def test_children_are_64_bit(master, i):
    s = derive_seed(master, i)
    assert 0 <= s <= MASK64
    assert s == derive_seed(master, i)


@given(st.integers(0, MASK64))
def test_siblings_differ(master):
    seeds = derive_seeds(master, 50)
    assert len(set(seeds)) == 50


def test_negative_index_rejected():
    with pytest.raises(ValueError):
        derive_seed(0, -1)
