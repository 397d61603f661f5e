import numpy as np
import pytest

from conftest import sir_spec
from statetrans import io
from statetrans.continuous import ctmc_log_prob, ctmc_sample
from statetrans.discrete import EventTensor, dtmc_log_prob, dtmc_sample
from statetrans.errors import ValidationError
from statetrans.inference import BootstrapResult


def test_fmt():
    assert io.fmt(3) == "3"
    assert io.fmt(np.int64(-2)) == "-2"
    assert io.fmt(0.1) == "0.10000000000000001"
    assert io.fmt(float("-inf")) == "-inf"
    assert io.json_number(float("-inf")) == "-inf" and io.json_number(1.5) == 1.5


def test_event_list_round_trip(tmp_path):
    spec = sir_spec(beta=1.5, gamma=0.5, state=(20, 3, 0), num_steps=40)
    ev = ctmc_sample(spec, 4)
    path = tmp_path / "events.csv"
    io.write_event_list(path, ev)
    back = io.read_event_list(path, length=len(ev))
    assert np.array_equal(back.times, ev.times, equal_nan=True)
    assert np.array_equal(back.transitions, ev.transitions)
    assert np.array_equal(back.units, ev.units)
    assert ctmc_log_prob(spec, back) == ctmc_log_prob(spec, ev)


def test_event_tensor_round_trip(tmp_path):
    spec = sir_spec("discrete", beta=0.8, gamma=0.3, state=(50, 5, 0), num_steps=15, time_delta=0.5)
    ev = dtmc_sample(spec, 2)
    for name in ("t.csv", "t.npz"):
        io.write_event_tensor(tmp_path / name, ev)
        back = io.read_event_tensor(tmp_path / name, 1, 2)
        assert np.array_equal(back.counts, ev.counts)
    assert dtmc_log_prob(spec, back) == dtmc_log_prob(spec, ev)


def test_event_tensor_sparse_rows(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("step,stratum,transition,count\n2,0,1,4\n")
    back = io.read_event_tensor(path, 1, 2)
    assert isinstance(back, EventTensor) and back.counts.shape == (3, 1, 2)
    assert back.counts.sum() == 4 and back.counts[2, 0, 1] == 4


@pytest.mark.parametrize("body", [
    "",
    "step,stratum,count\n0,0,1\n",
    "step,stratum,transition,count\n0,0,5,1\n",
    "step,stratum,transition,count\n0,0,0,-1\n",
    "step,stratum,transition,count\n0,0,0,1.5\n",
    "step,stratum,transition,count\n0,0,0,1\n0,0,0,2\n",
    "step,stratum,transition,count\n0,0,0\n",
])
def test_event_tensor_rejects(tmp_path, body):
    path = tmp_path / "t.csv"
    path.write_text(body)
    with pytest.raises(ValidationError):
        io.read_event_tensor(path, 1, 2)


def test_missing_file(tmp_path):
    with pytest.raises(ValidationError):
        io.read_event_list(tmp_path / "nope.csv")
    with pytest.raises(ValidationError):
        io.read_json(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ValidationError):
        io.read_json(tmp_path / "bad.json")


def test_states_and_summary(tmp_path):
    times = np.array([0.0, 1.0])
    states = np.arange(12, dtype=float).reshape(2, 2, 3)
    io.write_states(tmp_path / "s.csv", times, states, ("S", "I", "R"))
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "time,S_0,I_0,R_0,S_1,I_1,R_1"
    t, back = io.read_states(tmp_path / "s.csv", ("S", "I", "R"), 2)
    assert np.array_equal(t, times) and np.array_equal(back, states)
    header, rows = io.summarize(times, np.stack([states, states + 2]), ("S", "I", "R"))
    assert header[:4] == ["time", "S_mean", "S_p05", "S_p95"]
    assert rows[0][1] == pytest.approx((0 + 3 + 2 + 5) / 2)


def test_counts_and_bootstrap(tmp_path):
    counts = np.array([[1, 0], [3, 2]])
    io.write_counts(tmp_path / "c.csv", counts)
    assert np.array_equal(io.read_counts(tmp_path / "c.csv", 2, 2), counts)
    (tmp_path / "e.csv").write_text("step,stratum,count\n")
    with pytest.raises(ValidationError):
        io.read_counts(tmp_path / "e.csv", 2, 2)
    res = BootstrapResult(("a", "b"), np.array([[0.1, 2.0], [0.3, 1.0]]), np.array([True, False]))
    io.write_bootstrap(tmp_path / "b.csv", res)
    samples, ok = io.read_bootstrap(tmp_path / "b.csv", ("a", "b"))
    assert np.array_equal(samples, res.samples) and ok.tolist() == [True, False]
    io.write_json(tmp_path / "f.json", {"x": io.json_number(float("inf"))})
    assert io.read_json(tmp_path / "f.json") == {"x": "inf"}
