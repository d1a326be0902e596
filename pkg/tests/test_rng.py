import numpy as np

from intentrec.rng import RngHub, SeededRng


def test_same_seed_and_stream_reproduce_bitwise():
    a = SeededRng(42, "dropout").random(1000)
    b = SeededRng(42, "dropout").random(1000)
    assert np.array_equal(a, b)


def test_streams_are_independent():
    a = SeededRng(42, "dropout").random(100)
    b = SeededRng(42, "negatives").random(100)
    assert not np.array_equal(a, b)


def test_seeds_differ():
    a = SeededRng(1, "init").random(100)
    b = SeededRng(2, "init").random(100)
    assert not np.array_equal(a, b)


def test_hub_caches_streams():
    hub = RngHub(7)
    assert hub.stream("init") is hub.stream("init")


def test_state_roundtrip_resumes_sequence():
    hub = RngHub(3)
    hub.stream("negatives").random(17)
    state = hub.state_dict()
    expected = hub.stream("negatives").random(50)

    fresh = RngHub(0)
    fresh.load_state_dict(state)
    assert np.array_equal(fresh.stream("negatives").random(50), expected)


def test_state_dict_is_json_serializable():
    import json

    hub = RngHub(5)
    hub.stream("dropout").random(3)
    blob = json.dumps(hub.state_dict())
    assert "dropout" in blob
