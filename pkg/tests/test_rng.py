import numpy as np

from nudg.rng import derive_seed, evaluation_seed, splitmix64, uniforms
from oracles import splitmix64_scalar

# published SplitMix64 outputs for seed 1234567, also produced by oracles.splitmix64_scalar
REFERENCE_1234567 = [6457827717110365317, 3203168211198807973, 9817491932198370423]


def test_reference_vector():
    out = splitmix64(1234567, np.arange(1, 4, dtype=np.uint64))
    assert [int(v) for v in out] == REFERENCE_1234567


def test_matches_scalar_oracle_for_large_keys():
    key = derive_seed(99, "anything")
    counters = np.array([1, 2, 10**12, 2**63 - 1], dtype=np.uint64)
    got = [int(v) for v in splitmix64(key, counters)]
    assert got == [splitmix64_scalar(key, int(c)) for c in counters]


def test_uniforms_open_interval_and_blocks_agree():
    key = derive_seed(3, "x")
    whole = uniforms(key, 0, 100, 7)
    assert np.all((whole > 0) & (whole < 1))
    np.testing.assert_array_equal(whole[40:70], uniforms(key, 40, 30, 7))


def test_derive_seed_is_stable_and_purpose_specific():
    assert derive_seed(0, "init") == derive_seed(0, "init")
    assert derive_seed(0, "init") != derive_seed(0, "theory/ID")
    assert derive_seed(0, "init") != derive_seed(1, "init")
    assert evaluation_seed(5) != 5 and 0 <= evaluation_seed(5) < 2**63


def test_uniform_moments():
    u = uniforms(derive_seed(1, "moments"), 0, 200_000, 1).ravel()
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / u.size)
    assert abs(u.var() - 1 / 12) < 4 * np.sqrt(1 / 180 / u.size)
