"""Slow reference checkers the engine's verdicts are compared against.

Everything here recomputes verdicts from the engine's successor relation
only, using plain dictionaries over rich SystemState objects and networkx
graph algorithms: a different traversal (iterative DFS vs the checker's
BFS), different cycle machinery (networkx SCCs vs hand-rolled Tarjan) and
a different state representation (structured states vs packed integers).
"""

from typing import Callable, Dict, List, Tuple

import networkx as nx

from lanecheck.checker import Delay, Engine, Fire, Step, SystemState

Adjacency = Dict[SystemState, List[Tuple[Step, SystemState]]]


def explore(engine: Engine, limit: int = 200_000) -> Tuple[SystemState, Adjacency]:
    """All reachable states with their successor lists, by DFS."""
    init = engine.initial_state()
    adj: Adjacency = {}
    stack = [init]
    while stack:
        s = stack.pop()
        if s in adj:
            continue
        succ = engine.successors(s)
        adj[s] = succ
        if len(adj) > limit:
            raise RuntimeError(f"oracle exploration exceeded {limit} states")
        for _, s2 in succ:
            if s2 not in adj:
                stack.append(s2)
    return init, adj


def is_deadlock(adj: Adjacency, state: SystemState) -> bool:
    """No fire possible now or after waiting any amount of time."""
    seen = []
    cur = state
    while cur not in seen:
        seen.append(cur)
        succs = adj[cur]
        if any(isinstance(step, Fire) for step, _ in succs):
            return False
        if not succs:
            return True
        cur = next(s2 for step, s2 in succs if isinstance(step, Delay))
    return True  # waiting loops forever without a fire


def naive_ag(engine: Engine, bad: Callable[[SystemState], bool]) -> str:
    init, adj = explore(engine)
    return "fails" if any(bad(s) for s in adj) else "holds"


def naive_no_deadlock(engine: Engine) -> str:
    init, adj = explore(engine)
    return "fails" if any(is_deadlock(adj, s) for s in adj) else "holds"


def naive_af(engine: Engine, good: Callable[[SystemState], bool]) -> str:
    """AF good under the checker's path rules, recomputed with networkx.

    A counterexample is a reachable good-free run that is infinite and
    fair, or that gets stuck.  Concretely, inside the region reachable
    without touching a good state: a dead end; a cycle of fires only
    (time never advances); or a cycle on which every controller enabled
    anywhere around it actually fires (nobody is merely starved by the
    scheduler).
    """
    init, adj = explore(engine)
    controllers = set(engine.car_names)

    if good(init):
        return "holds"
    region = set()
    frontier = [init]
    while frontier:
        s = frontier.pop()
        if s in region:
            continue
        region.add(s)
        for _, s2 in adj[s]:
            if not good(s2) and s2 not in region:
                frontier.append(s2)

    if any(not adj[s] for s in region):
        return "fails"  # stuck without reaching the goal

    fire_graph = nx.DiGraph()
    full_graph = nx.DiGraph()
    fired_on: Dict[Tuple[SystemState, SystemState], set] = {}
    for s in region:
        fire_graph.add_node(s)
        full_graph.add_node(s)
        for step, s2 in adj[s]:
            if s2 not in region:
                continue
            full_graph.add_edge(s, s2)
            if isinstance(step, Fire):
                fire_graph.add_edge(s, s2)
                if step.actor in controllers:
                    fired_on.setdefault((s, s2), set()).add(step.actor)

    for comp in nx.strongly_connected_components(fire_graph):
        if len(comp) > 1 or any(fire_graph.has_edge(s, s) for s in comp):
            return "fails"  # zeno loop

    for comp in nx.strongly_connected_components(full_graph):
        internal = [(u, v) for u in comp for v in full_graph.successors(u) if v in comp]
        if not internal:
            continue
        fired = set()
        for u, v in internal:
            fired |= fired_on.get((u, v), set())
        enabled = {
            step.actor
            for u in comp
            for step, _ in adj[u]
            if isinstance(step, Fire) and step.actor in controllers
        }
        if enabled <= fired:
            return "fails"  # fair cycle that never reaches the goal
    return "holds"


def collision_bad(state: SystemState) -> bool:
    return state.location("collision-observer") == "unsafe"


def success_goal(cars) -> Callable[[SystemState], bool]:
    names = [f"observer({c})" for c in cars]

    def good(state: SystemState) -> bool:
        return any(state.location(n) == "success" for n in names)

    return good
