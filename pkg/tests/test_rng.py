import numpy as np
import pytest

from wienergmc.rng import STREAMS, SeedLedger, child_rng, stream_rng, stream_seed, stream_seed32


def test_stream_seed_is_deterministic():
    assert stream_seed(7, "noise", 3) == stream_seed(7, "noise", 3)
    assert stream_seed32(7, "noise", 3) < 2**32


def test_streams_are_distinct():
    seeds = {stream_seed(0, label, i) for label in STREAMS for i in range(20)}
    assert len(seeds) == 20 * len(STREAMS)


def test_unknown_label():
    with pytest.raises(KeyError):
        stream_seed(0, "nope")


def test_child_rng_index_independent_of_order():
    a = child_rng(99, 4).standard_normal(5)
    child_rng(99, 3).standard_normal(100)
    b = child_rng(99, 4).standard_normal(5)
    assert np.array_equal(a, b)
    assert np.array_equal(stream_rng(1, "misc", 2).random(3), stream_rng(1, "misc", 2).random(3))


def test_ledger_lineage():
    led = SeedLedger(5)
    led.seed("noise", 0)
    led.seed("noise", 1)
    led.rng("paths", 0)
    lin = led.lineage()
    assert lin["master_seed"] == 5
    assert lin["streams"]["noise"] == {"id": 1, "draws": 2}
    assert lin["streams"]["paths"]["draws"] == 1
