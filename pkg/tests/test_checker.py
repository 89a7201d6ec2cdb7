"""Engine behaviour: exploration, verdicts, witnesses, budgets, query plumbing."""

import random

import pytest

from lanecheck import checker, traffic
from lanecheck.automata import Constants
from lanecheck.checker import (
    BUDGET_ENV_VAR,
    CheckerError,
    Delay,
    Engine,
    Fire,
    LivenessAny,
    LivenessCar,
    NoDeadlock,
    SafetyNoCollision,
    Trace,
    run_query,
)
from lanecheck.scenario import Scenario, ScenarioCar

import oracles
from support import fig1, replay


def tiny(variant="original", lanes=2, constants=None):
    return Scenario(
        lane_count=lanes,
        cars=(ScenarioCar("A", 0, 0, 4), ScenarioCar("B", 1, 2, 4)),
        variant=variant,
        constants=constants or Constants(),
    )


ALL_QUERIES = (NoDeadlock(), SafetyNoCollision(), LivenessAny(), LivenessCar("A"))


# --- state plumbing ------------------------------------------------------------


def test_initial_state_matches_scenario():
    sc = fig1()
    eng = Engine.for_query(sc, NoDeadlock())
    init = eng.initial_state()
    assert init.snapshot == sc.snapshot()
    for name in sc.car_names():
        assert init.location(name) == "cruising"
        assert init.clock(name) == 0
        lane = next(c.lane for c in sc.cars if c.name == name)
        assert init.lanes_of(name) == (lane, lane)


def test_initial_state_observer_digits():
    sc = fig1()
    safety = Engine.for_query(sc, SafetyNoCollision()).initial_state()
    assert safety.location("collision-observer") == "watching"
    live = Engine.for_query(sc, LivenessAny()).initial_state()
    for name in sc.car_names():
        assert live.location(f"observer({name})") == "tracking"


def test_successors_from_start():
    eng = Engine.for_query(fig1(), NoDeadlock())
    succs = eng.successors(eng.initial_state())
    fires = {str(step) for step, _ in succs if isinstance(step, Fire)}
    # A on lane 2 and B on lane 0 and E on lane 3 of a 4-lane road
    assert "fire A claim-up claim(3)" in fires
    assert "fire A claim-down claim(1)" in fires
    assert "fire B claim-up claim(1)" in fires
    assert "fire E claim-down claim(2)" in fires
    assert not any("B claim-down" in s for s in fires)
    assert not any("E claim-up" in s for s in fires)
    delays = [step for step, _ in succs if isinstance(step, Delay)]
    assert len(delays) == 1 and delays[0].amount == 1


def test_successor_states_are_live_engine_states():
    eng = Engine.for_query(fig1(), NoDeadlock())
    for _, s2 in eng.successors(eng.initial_state()):
        eng.successors(s2)   # packs back without error


def test_module_level_wrappers():
    eng = Engine.for_query(fig1(), NoDeadlock())
    init = eng.initial_state()
    assert checker.successors(eng, init) == eng.successors(init)
    assert checker.deadlock(eng, init) == eng.deadlock(init)


def test_random_walks_replay_through_traffic_rules():
    rng = random.Random(7)
    for variant in ("original", "live"):
        eng = Engine.for_query(fig1(variant), LivenessAny())
        state = eng.initial_state()
        steps = []
        for _ in range(80):
            succs = eng.successors(state)
            if not succs:
                break
            step, state = rng.choice(succs)
            steps.append((step, state))
        replay(Trace(initial=eng.initial_state(), steps=tuple(steps), cycle_start=None))


def test_foreign_state_is_rejected():
    state = Engine.for_query(fig1(), NoDeadlock()).initial_state()
    narrow = Engine(2, [("A", 0, 0, 5)])
    with pytest.raises(CheckerError) as err:
        narrow.successors(state)
    assert "not an engine configuration" in str(err.value)


def test_state_and_trace_documents():
    eng = Engine.for_query(fig1(), SafetyNoCollision())
    init = eng.initial_state()
    doc = init.to_dict()
    assert doc["cars"]["A"]["res"] == [2]
    assert doc["locations"]["A"] == "cruising"
    assert doc["locations"]["collision-observer"] == "watching"
    assert doc["clocks"]["A"] == 0
    assert doc["registers"]["A"] == [2, 2]
    step, s2 = eng.successors(init)[0]
    tr = Trace(initial=init, steps=((step, s2),), cycle_start=None)
    tdoc = tr.to_dict()
    assert len(tdoc["steps"]) == 1
    assert tdoc["cycle_start"] is None
    assert "fire" in tr.format() or "delay" in tr.format()


# --- deadlock ------------------------------------------------------------------


def test_lone_car_on_one_lane_is_deadlocked():
    eng = Engine(1, [("A", 0, 0, 5)])
    assert eng.deadlock(eng.initial_state())
    v = eng.run_query(NoDeadlock())
    assert v.outcome == "fails"
    assert v.witness is not None and v.witness.steps == ()


def test_fig1_start_is_not_deadlocked():
    eng = Engine.for_query(fig1(), NoDeadlock())
    assert not eng.deadlock(eng.initial_state())


def test_delay_chain_deadlock_is_detected():
    # plus-tw claim: the claim must be held t_w long before withdrawing,
    # so the car sits in claimed for a while; waiting never unblocks a
    # lone car on its way to nowhere, but claimed is not itself stuck
    eng = Engine(2, [("A", 0, 0, 5)], variant="original-plus-tw")
    init = eng.initial_state()
    succs = eng.successors(init)
    assert any(isinstance(s, Fire) for s, _ in succs)
    assert not eng.deadlock(init)


# --- reachability --------------------------------------------------------------


def test_check_ag_trivial_predicates():
    eng = Engine.for_query(tiny(), NoDeadlock())
    held = eng.check_ag(lambda s: False)
    assert held.outcome == "holds" and held.witness is None
    failed = eng.check_ag(lambda s: True)
    assert failed.outcome == "fails"
    assert failed.witness is not None and failed.witness.steps == ()
    assert failed.states == 1


def test_check_ag_witness_is_shortest_and_replays():
    eng = Engine.for_query(fig1(), NoDeadlock())
    v = eng.check_ag(lambda s: s.location("A") == "confirming")
    assert v.outcome == "fails"
    trace = v.witness
    assert trace.states()[-1].location("A") == "confirming"
    # cruising -> claimed -> confirming plus the t_w wait is not needed
    # in the plain variant, so two fires suffice
    assert len(trace.steps) == 2
    replay(trace)


def test_check_ag_explicit_initial():
    eng = Engine.for_query(fig1(), NoDeadlock())
    init = eng.initial_state()
    _, mid = next(
        (st, s2) for st, s2 in eng.successors(init)
        if isinstance(st, Fire) and st.actor == "A")
    v = eng.check_ag(lambda s: s.location("A") == "cruising", initial=mid)
    assert v.outcome == "fails"
    assert v.witness.initial == mid


def test_reachable_state_count_matches_reference():
    sc = tiny()
    eng = Engine.for_query(sc, NoDeadlock())
    v = eng.check_ag(lambda s: False)
    _, adj = oracles.explore(eng)
    assert v.states == len(adj)


# --- safety --------------------------------------------------------------------


def test_unsafe_start_produces_immediate_witness():
    eng = Engine(2, [("A", 0, 0, 5), ("B", 0, 3, 5)], collision_observer=True)
    v = eng.run_query(SafetyNoCollision())
    assert v.outcome == "fails"
    (step, last) = v.witness.steps[-1]
    assert step == Fire("collision-observer", "collision", "tau")
    assert last.location("collision-observer") == "unsafe"
    assert len(v.witness.steps) == 1


def test_safety_needs_the_observer():
    eng = Engine(2, [("A", 0, 0, 5)])
    with pytest.raises(CheckerError) as err:
        eng.run_query(SafetyNoCollision())
    assert "collision observer" in str(err.value)


def test_fig1_is_safe():
    v = run_query(fig1(), SafetyNoCollision())
    assert v.outcome == "holds"


# --- liveness plumbing -----------------------------------------------------------


def test_liveness_unknown_car():
    with pytest.raises(CheckerError):
        run_query(fig1(), LivenessCar("Z"))
    with pytest.raises(CheckerError) as err:
        run_query(fig1(), LivenessAny(cars=("A", "Z")))
    assert "unknown cars" in str(err.value)


def test_liveness_empty_watch_set():
    with pytest.raises(CheckerError) as err:
        run_query(fig1(), LivenessAny(cars=()))
    assert "watches no cars" in str(err.value)


def test_liveness_needs_observers():
    eng = Engine.for_query(fig1(), NoDeadlock())   # no live observers built
    with pytest.raises(CheckerError) as err:
        eng.run_query(LivenessCar("A"))
    assert "progress observer" in str(err.value)


def test_unknown_query_type():
    eng = Engine.for_query(fig1(), NoDeadlock())
    with pytest.raises(CheckerError):
        eng.run_query("liveness")


def test_check_af_trivial_goal():
    eng = Engine.for_query(tiny(), NoDeadlock())
    v = eng.check_af(lambda s: True)
    assert v.outcome == "holds" and v.states == 1


def test_check_af_unreachable_goal_reports_a_cycle():
    eng = Engine.for_query(tiny(), NoDeadlock())
    v = eng.check_af(lambda s: False)
    assert v.outcome == "fails"
    assert v.witness is not None and v.witness.cycle_start is not None
    replay(v.witness)


# --- liveness verdicts ----------------------------------------------------------


def test_liveness_by_variant():
    # boxed-in neighbours can never swap lanes, so per-variant differences
    # need the three-car road where only the two claimants conflict
    assert run_query(fig1("original"), LivenessAny()).outcome == "fails"
    assert run_query(fig1("original-plus-tw"), LivenessAny()).outcome == "holds"
    assert run_query(fig1("live"), LivenessCar("A")).outcome == "holds"


def test_boxed_in_cars_deadlock_under_guarded_claims():
    # in the live variant a claim needs unclaimed unreserved space; two
    # overlapping neighbours block each other completely and never fire
    v = run_query(tiny("live"), NoDeadlock())
    assert v.outcome == "fails"
    assert v.states == 1


def test_livelock_witness_is_a_zero_delay_lasso():
    v = run_query(tiny("original"), LivenessAny())
    assert v.outcome == "fails"
    trace = v.witness
    assert trace.cycle_start is not None
    cycle = trace.steps[trace.cycle_start:]
    assert cycle and all(isinstance(step, Fire) for step, _ in cycle)
    assert "zero-delay" in v.note
    replay(trace)


def test_starvation_witness_is_a_fair_cycle():
    sc = fig1("original-plus-tw")
    v = run_query(sc, LivenessCar("A"))
    assert v.outcome == "fails"
    assert "fair cycle" in v.note
    trace = v.witness
    cycle = trace.steps[trace.cycle_start:]
    assert any(isinstance(step, Delay) for step, _ in cycle)
    # the cycle makes progress for someone, just never for A
    assert all(s.location("observer(A)") != "success" for s in trace.states())
    replay(trace)


# --- verdict equality against the reference implementation -------------------------


@pytest.mark.parametrize("variant", ["original", "live"])
@pytest.mark.parametrize("query", ALL_QUERIES, ids=lambda q: type(q).__name__)
def test_engine_matches_reference(variant, query):
    sc = tiny(variant)
    eng = Engine.for_query(sc, query)
    got = eng.run_query(query).outcome
    if isinstance(query, NoDeadlock):
        want = oracles.naive_no_deadlock(eng)
    elif isinstance(query, SafetyNoCollision):
        want = oracles.naive_ag(eng, oracles.collision_bad)
    elif isinstance(query, LivenessCar):
        want = oracles.naive_af(eng, oracles.success_goal([query.car]))
    else:
        want = oracles.naive_af(eng, oracles.success_goal(sc.car_names()))
    assert got == want


# --- determinism and engine options -------------------------------------------------


def test_repeated_runs_are_identical():
    for query in (SafetyNoCollision(), LivenessAny()):
        first = run_query(fig1(), query)
        second = run_query(fig1(), query)
        assert first == second


def test_guard_modes_agree():
    for variant in ("original", "live"):
        sc = tiny(variant)
        for query in ALL_QUERIES:
            fast = run_query(sc, query, guard_mode="interval")
            slow = run_query(sc, query, guard_mode="mlsl")
            assert fast.outcome == slow.outcome, (variant, query)
            assert fast.states == slow.states, (variant, query)


def test_bad_guard_mode():
    with pytest.raises(CheckerError):
        run_query(tiny(), NoDeadlock(), guard_mode="fast")


def test_unnormalized_clocks_keep_verdicts():
    sc = tiny("original-plus-tw")
    for query in ALL_QUERIES:
        base = run_query(sc, query)
        raw = run_query(sc, query, normalize=False, clock_cap=6)
        assert base.outcome == raw.outcome, query
        assert base.states <= raw.states


def test_unbounded_clock_needs_a_cap():
    with pytest.raises(CheckerError) as err:
        run_query(tiny(), NoDeadlock(), normalize=False)
    assert "clock_cap" in str(err.value)


# --- budgets -------------------------------------------------------------------------


def test_budget_makes_searches_inconclusive():
    v = run_query(fig1(), SafetyNoCollision(), budget=50)
    assert v.outcome == "inconclusive"
    assert not v.holds
    assert "state budget 50 exhausted" in v.note
    va = run_query(fig1("original-plus-tw"), LivenessCar("A"), budget=50)
    assert va.outcome == "inconclusive"


def test_budget_env_var(monkeypatch):
    monkeypatch.setenv(BUDGET_ENV_VAR, "60")
    v = run_query(fig1(), SafetyNoCollision())
    assert v.outcome == "inconclusive"
    assert "60" in v.note
    # an explicit budget beats the environment
    assert run_query(fig1(), SafetyNoCollision(), budget=10 ** 9).outcome == "holds"


@pytest.mark.parametrize("raw", ["zero", "-5", "0", "1.5"])
def test_budget_env_var_garbage(monkeypatch, raw):
    monkeypatch.setenv(BUDGET_ENV_VAR, raw)
    with pytest.raises(CheckerError):
        run_query(tiny(), NoDeadlock())


@pytest.mark.parametrize("budget", [0, -1])
def test_explicit_budget_must_be_positive(budget):
    with pytest.raises(CheckerError, match="positive"):
        run_query(tiny(), NoDeadlock(), budget=budget)


def test_engine_construction_errors():
    with pytest.raises(CheckerError):
        Engine(0, [("A", 0, 0, 5)])
    with pytest.raises(CheckerError):
        Engine(2, [])
    with pytest.raises(CheckerError):
        Engine(2, [("A", 0, 0, 5), ("A", 1, 9, 5)])
    with pytest.raises(CheckerError):
        Engine(2, [("A", 7, 0, 5)])
    with pytest.raises(CheckerError):
        Engine(2, [("A", 0, 0, 0)])
    with pytest.raises(CheckerError):
        Engine(2, [("A", 0, 0, 5)], live_observers=("B",))
    with pytest.raises(CheckerError):
        Engine(2, [("A", 0, 0, 5)], live_observers=("A", "A"))
    with pytest.raises(CheckerError):
        Engine(2, [("A", 0, 0, 5)], horizon=0)
