import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from branchlab.rng import (
    RandomStream,
    derive_key,
    draw_u64,
    mix64,
    slot_hash,
    slot_uniform,
    stream,
    uniform_at,
    uniform_from_u64,
)


def test_mix64_frozen_values():
    # pin the hash so serialized seeds stay meaningful across releases
    assert int(mix64(0)[0]) == 16294208416658607535
    assert int(mix64(1)[0]) == 10451216379200822465
    assert int(mix64(2**64 - 1)[0]) == 16490336266968443936


def test_mix64_vector_matches_scalar():
    xs = np.arange(100, dtype=np.uint64)
    vec = mix64(xs)
    for i in range(100):
        assert vec[i] == mix64(int(xs[i]))[0]


def test_same_seed_same_stream():
    a = stream(42).uniform(size=50)
    b = stream(42).uniform(size=50)
    assert np.array_equal(a, b)


def test_different_seeds_differ():
    assert not np.array_equal(stream(1).uniform(size=10), stream(2).uniform(size=10))


def test_sequential_matches_batch():
    s1 = stream(7)
    singles = [s1.uniform() for _ in range(20)]
    s2 = stream(7)
    batch = s2.uniform(size=20)
    assert np.allclose(singles, batch, rtol=0, atol=0)


def test_child_streams_are_independent_of_parent_consumption():
    parent = stream(3)
    child_before = parent.child(5).uniform(size=8)
    parent.uniform(size=100)
    child_after = parent.child(5).uniform(size=8)
    assert np.array_equal(child_before, child_after)


def test_uniform_open_interval():
    u = stream(11).uniform(size=100_000)
    assert np.all(u > 0.0) and np.all(u < 1.0)


def test_uniform_moments():
    u = stream(13).uniform(size=200_000)
    assert abs(u.mean() - 0.5) < 4 * 0.2887 / np.sqrt(u.size)
    assert abs(u.var() - 1 / 12) < 4 * 0.1 / np.sqrt(u.size)


def test_normal_moments():
    z = stream(17).normal(size=200_000)
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1.0) < 4 * np.sqrt(2 / z.size)


def test_slot_uniform_matches_uniform_at():
    keys = mix64(np.arange(64, dtype=np.uint64))
    h = slot_hash(2)
    assert np.array_equal(slot_uniform(keys, h), uniform_from_u64(draw_u64(keys, 2)))


def test_draw_and_child_domains_are_separated():
    key = int(mix64(9)[0])
    assert int(derive_key(key, 4)[0]) != int(draw_u64(key, 4)[0])


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**32), st.integers(0, 2**32))
@settings(max_examples=50, deadline=None)
def test_derive_key_injective_in_practice(seed, i, j):
    k = mix64(seed)
    if i != j:
        assert int(derive_key(k, i)[0]) != int(derive_key(k, j)[0])


def test_stream_path_provenance():
    s = stream(5, 2, 3)
    assert s.path == (5, 2, 3)
    assert s.child(1).path == (5, 2, 3, 1)


def test_uniform_at_broadcasts_slots():
    key = np.uint64(stream(1).key)
    many = uniform_at(key, np.arange(10, dtype=np.uint64))
    for j in range(10):
        assert many[j] == uniform_at(key, j)[0]
