"""Log-format contracts: JSONL round-trips, corpus layout, event logs, and
demonstration reconstruction from service event streams."""
import json

import pytest
from hypothesis import given, strategies as st

from dronesar.operators import build_operator
from dronesar.scenarios import build_tiny_scenario
from dronesar.session import run_mission
from dronesar.trajlog import (
    EVENTS_FORMAT,
    TRAJECTORY_FORMAT,
    Trajectory,
    TrajectoryRecord,
    dumps,
    load_corpus,
    load_events,
    save_corpus,
    save_events,
    trajectory_from_events,
)

SCN = build_tiny_scenario(3)


@pytest.fixture(scope="module")
def result():
    return run_mission(SCN, 7, build_operator("by_the_book"))


# ---------------------------------------------------------------------------
# canonical encoding
# ---------------------------------------------------------------------------


def test_dumps_is_canonical():
    assert dumps({"b": 1, "a": [1.5, None]}) == '{"a":[1.5,null],"b":1}'


def test_dumps_rejects_non_finite():
    with pytest.raises(ValueError):
        dumps({"x": float("nan")})


json_scalars = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(min_value=-(2**53), max_value=2**53),
    st.floats(allow_nan=False, allow_infinity=False),
    st.text(max_size=20),
)


@given(st.dictionaries(st.text(max_size=10), json_scalars, max_size=6))
def test_dumps_round_trips_through_json(d):
    assert json.loads(dumps(d)) == d


# ---------------------------------------------------------------------------
# trajectory files
# ---------------------------------------------------------------------------


def test_trajectory_save_load_round_trip(result, tmp_path):
    path = tmp_path / "demo.jsonl"
    t = result.trajectory
    t.save(path)
    back = Trajectory.load(path)
    assert back.scenario == t.scenario
    assert back.seed == t.seed and back.operator == t.operator
    assert back.initial_config == t.initial_config
    assert back.summary == t.summary
    assert back.label == t.label and back.meta == t.meta
    assert [r.to_dict() for r in back.records] == [r.to_dict() for r in t.records]


def test_trajectory_file_layout(result, tmp_path):
    path = tmp_path / "demo.jsonl"
    result.trajectory.save(path)
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert lines[0]["kind"] == "header" and lines[0]["format"] == TRAJECTORY_FORMAT
    assert lines[-1]["kind"] == "summary"
    assert all(l["kind"] == "record" for l in lines[1:-1])
    assert len(lines) == len(result.trajectory.records) + 2


def test_save_is_byte_stable(result, tmp_path):
    pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    result.trajectory.save(pa)
    result.trajectory.save(pb)
    assert pa.read_bytes() == pb.read_bytes()
    # and a loaded copy re-saves to the same bytes
    Trajectory.load(pa).save(pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_unknown_format_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(dumps({"kind": "header", "format": "sar-trajectory/999"}) + "\n")
    with pytest.raises(ValueError, match="format"):
        Trajectory.load(path)


def test_missing_header_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(dumps({"kind": "summary"}) + "\n")
    with pytest.raises(ValueError, match="header"):
        Trajectory.load(path)


def test_label_and_meta_survive(result, tmp_path):
    t = result.trajectory
    t.label = "increase"
    t.meta = {"origin": "by_the_book", "synthetic_index": 3}
    path = tmp_path / "labeled.jsonl"
    t.save(path)
    back = Trajectory.load(path)
    assert back.label == "increase"
    assert back.meta == {"origin": "by_the_book", "synthetic_index": 3}


def test_record_from_dict_tolerates_missing_digest():
    r = TrajectoryRecord.from_dict(
        {"t": 1.0, "action": {"type": "init"}, "action_class": None,
         "elapsed": 0.0, "features": [], "metrics": {}}
    )
    assert r.digest == ""


# ---------------------------------------------------------------------------
# features_at_fraction
# ---------------------------------------------------------------------------


def synthetic_traj(times):
    records = [
        TrajectoryRecord(t=t, action={"type": "checkpoint"}, action_class=None,
                         elapsed=0.0, features=[t], metrics={})
        for t in times
    ]
    return Trajectory(scenario={"duration": 100.0}, seed=0, operator="x",
                      initial_config=[], records=records)


def test_features_at_fraction_picks_last_at_or_before():
    traj = synthetic_traj([0.0, 10.0, 50.0, 90.0])
    assert traj.features_at_fraction(0.5)[0] == 50.0  # exactly on a record
    assert traj.features_at_fraction(0.49)[0] == 10.0
    assert traj.features_at_fraction(1.0)[0] == 90.0
    assert traj.features_at_fraction(0.0)[0] == 0.0


# ---------------------------------------------------------------------------
# corpus directories
# ---------------------------------------------------------------------------


def test_corpus_round_trip(tmp_path):
    trajs = [run_mission(SCN, s, build_operator("by_the_book")).trajectory for s in (1, 2, 3)]
    paths = save_corpus(trajs, tmp_path / "corpus", prefix="demo")
    assert [p.name for p in paths] == ["demo_0000.jsonl", "demo_0001.jsonl", "demo_0002.jsonl"]
    back = load_corpus(tmp_path / "corpus")
    assert [t.seed for t in back] == [1, 2, 3]
    assert [len(t.records) for t in back] == [len(t.records) for t in trajs]


def test_load_corpus_orders_by_filename(tmp_path, result):
    d = tmp_path / "corpus"
    d.mkdir()
    t = result.trajectory
    t.save(d / "b_0001.jsonl")
    t.save(d / "a_0000.jsonl")
    assert len(load_corpus(d)) == 2


# ---------------------------------------------------------------------------
# event logs
# ---------------------------------------------------------------------------


def test_events_round_trip(result, tmp_path):
    path = tmp_path / "events.jsonl"
    save_events(result.events, path)
    assert load_events(path) == result.events
    first = json.loads(path.read_text().splitlines()[0])
    assert first == {"format": EVENTS_FORMAT, "kind": "header"}


def test_events_save_is_byte_stable(result, tmp_path):
    pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_events(result.events, pa)
    save_events(result.events, pb)
    assert pa.read_bytes() == pb.read_bytes()


# ---------------------------------------------------------------------------
# demonstration reconstruction from a service stream
# ---------------------------------------------------------------------------


def service_stream(result):
    """The slice of the wire protocol trajectory_from_events relies on."""
    t = result.trajectory
    events = [
        {"type": "session_created", "scenario": t.scenario, "seed": t.seed,
         "operator": t.operator},
        {"type": "phase", "phase": "scanning", "initial_config": t.initial_config},
    ]
    events += [{"type": "action_record", "record": r.to_dict()} for r in t.records]
    events.append({"type": "mission_end", "summary": t.summary})
    return events


def test_trajectory_from_events_rebuilds_the_demo(result):
    t = result.trajectory
    back = trajectory_from_events(service_stream(result))
    assert back.scenario == t.scenario
    assert back.seed == t.seed
    assert back.operator == t.operator
    assert back.initial_config == t.initial_config
    assert back.summary == t.summary
    assert [r.to_dict() for r in back.records] == [r.to_dict() for r in t.records]
    assert back.meta == {"source": "service"}


def test_trajectory_from_events_without_end_or_phase(result):
    t = result.trajectory
    events = [e for e in service_stream(result)
              if e["type"] not in ("mission_end", "phase")]
    back = trajectory_from_events(events)
    assert back.summary == {}
    assert back.initial_config == []
    assert len(back.records) == len(t.records)


def test_trajectory_from_events_defaults_operator_to_live(result):
    events = service_stream(result)
    del events[0]["operator"]
    assert trajectory_from_events(events).operator == "live"
