"""Explicit-state checking of lane-change controllers over a static road.

The network under check is one timed controller per car (plus optional
observers) running over a shared traffic snapshot.  Positions never move,
so the reachable space is finite: each car contributes a small set of
configurations (location, clock value, current lane n, target lane l) and
a system state is one configuration per car plus observer locations.

Time is discrete.  A step is either ``delay 1`` (every clock advances by
one, permitted only if no location's clock bound would be exceeded) or a
single edge firing (one automaton moves, instantaneously).  Location
invariants are global: a fire or delay whose target state violates any
automaton's clock bound or spatial invariant is disabled.

Two query styles are supported:

* ``check_ag``: no reachable state satisfies ``bad``; counterexamples are
  shortest paths.
* ``check_af``: every divergence-free, fair run eventually satisfies
  ``good``; counterexamples are lassos (or finite runs into a stuck
  state).  A cycle avoiding ``good`` counts as a counterexample when it is
  zero-delay (time never advances), or when every controller enabled
  somewhere on the cycle's strongly connected component also fires inside
  it, so no controller is starved by the scheduler.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import (Callable, Dict, FrozenSet, List, Mapping,
                    Optional, Sequence, Set, Tuple, Union)

from . import mlsl, traffic
from .automata import (ActClaim, ActReserve, ActTau, ActWithdrawClaim,
                       ActWithdrawReservation, Automaton, ClockConstraint,
                       Constants, LaneExists, SpatialGuard, build_controller,
                       build_observer_collision, build_observer_live,
                       canonical_variant)
from .mlsl import And, ExistsCar, Not, Re, VarEq, somewhere
from .scenario import Scenario
from .traffic import CarState, Claim, Extent, Reserve, Tau, TrafficSnapshot, \
    View, WithdrawClaim, WithdrawReservation

BUDGET_ENV_VAR = "LANECHECK_STATE_BUDGET"
DEFAULT_STATE_BUDGET = 10_000_000

# dense visited bitmaps up to this many addressable states (32 MB)
_BITMAP_LIMIT = 1 << 28
# beyond this many stored parents, give up on materializing a witness
_WITNESS_LIMIT = 4_000_000


class CheckerError(Exception):
    pass


# ---------------------------------------------------------------------------
# queries

@dataclass(frozen=True)
class NoDeadlock:
    """No reachable state is stuck with every action disabled forever."""


@dataclass(frozen=True)
class SafetyNoCollision:
    """No reachable state has two cars with overlapping reservations."""


@dataclass(frozen=True)
class LivenessAny:
    """Some watched car eventually completes a lane change (None = all cars)."""

    cars: Optional[FrozenSet[str]] = None

    def __post_init__(self):
        if self.cars is not None:
            object.__setattr__(self, "cars", frozenset(self.cars))


@dataclass(frozen=True)
class LivenessCar:
    """The given car eventually completes a lane change."""

    car: str


Query = Union[NoDeadlock, SafetyNoCollision, LivenessAny, LivenessCar]


# ---------------------------------------------------------------------------
# states, steps, traces, verdicts

@dataclass(frozen=True)
class Delay:
    amount: int = 1

    def __str__(self) -> str:
        return f"delay {self.amount}"


@dataclass(frozen=True)
class Fire:
    actor: str
    edge: str
    action: str

    def __str__(self) -> str:
        return f"fire {self.actor} {self.edge} {self.action}"


Step = Union[Delay, Fire]


@dataclass(frozen=True, eq=False)
class SystemState:
    """One global state: traffic snapshot plus automaton bookkeeping.

    locations lists (automaton name, location) pairs for controllers and
    observers; clocks and registers cover controllers only, with registers
    holding the (current lane, target lane) pair of each car.
    """

    snapshot: TrafficSnapshot
    locations: Tuple[Tuple[str, str], ...]
    clocks: Tuple[Tuple[str, int], ...]
    registers: Tuple[Tuple[str, Tuple[int, int]], ...]

    def _key(self):
        return (self.snapshot.lane_count, self.locations, self.clocks, self.registers)

    def __eq__(self, other) -> bool:
        return isinstance(other, SystemState) and self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def location(self, name: str) -> str:
        for auto, loc in self.locations:
            if auto == name:
                return loc
        raise KeyError(name)

    def clock(self, name: str) -> int:
        for auto, x in self.clocks:
            if auto == name:
                return x
        raise KeyError(name)

    def lanes_of(self, name: str) -> Tuple[int, int]:
        """(current lane n, target lane l) of a controller."""
        for auto, nl in self.registers:
            if auto == name:
                return nl
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "cars": {
                name: {
                    "pos": c.pos,
                    "size": c.size,
                    "res": sorted(c.res),
                    "clm": sorted(c.clm),
                }
                for name, c in sorted(self.snapshot.cars.items())
            },
            "locations": dict(self.locations),
            "clocks": dict(self.clocks),
            "registers": {name: list(nl) for name, nl in self.registers},
        }


@dataclass(frozen=True)
class Trace:
    """A run: initial state, then steps with the state reached after each.

    For lasso counterexamples cycle_start is the index (into the state
    sequence, 0 = initial) the run loops back to: the state after the last
    step equals the state at cycle_start.
    """

    initial: SystemState
    steps: Tuple[Tuple[Step, SystemState], ...]
    cycle_start: Optional[int] = None

    def states(self) -> List[SystemState]:
        return [self.initial] + [s for _, s in self.steps]

    def format(self) -> str:
        lines = []
        for k, (step, _) in enumerate(self.steps):
            if self.cycle_start is not None and k == self.cycle_start:
                lines.append("# cycle:")
            lines.append(str(step))
        if not lines:
            lines.append("# initial state is already a witness")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        steps = []
        for step, state in self.steps:
            if isinstance(step, Delay):
                d = {"kind": "delay", "amount": step.amount}
            else:
                d = {"kind": "fire", "actor": step.actor,
                     "edge": step.edge, "action": step.action}
            steps.append({"step": d, "state": state.to_dict()})
        return {
            "initial": self.initial.to_dict(),
            "steps": steps,
            "cycle_start": self.cycle_start,
        }


@dataclass(frozen=True)
class Verdict:
    outcome: str                      # "holds" | "fails" | "inconclusive"
    witness: Optional[Trace] = None
    states: int = 0
    note: str = ""

    def __post_init__(self):
        if self.outcome not in ("holds", "fails", "inconclusive"):
            raise CheckerError(f"bad outcome {self.outcome!r}")

    @property
    def holds(self) -> bool:
        return self.outcome == "holds"

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "states": self.states,
            "note": self.note,
            "witness": None if self.witness is None else self.witness.to_dict(),
        }


# ---------------------------------------------------------------------------
# per-car configuration tables

_INV_NONE, _INV_CC, _INV_PCNONE = 0, 1, 2
_REQ_NONE, _REQ_PCSOME, _REQ_PCNONE, _REQ_CLAIMFREE = 0, 1, 2, 3
_EMIT_CODE = {None: 0, "claiming": 1, "reserving": 2, "withdrawing": 3}
# live observer transition table, indexed [emit code][current location]
_LIVE_NEXT = {1: (1, 1, 1), 2: (0, 2, 2), 3: (0, 0, 2)}

_INV_KIND = {None: _INV_NONE, "cc": _INV_CC, "pc-none": _INV_PCNONE}

# lanes a config holds, by location name: (reserved, claimed) as n/l picks
_L_DEAD_LOCS = ("cruising", "backoff")


def _loc_masks(loc_name: str, n: int, l: int) -> Tuple[int, int]:
    if loc_name in ("cruising", "backoff"):
        return 1 << n, 0
    if loc_name in ("claimed", "confirming"):
        return 1 << n, 1 << l
    if loc_name == "changing":
        return (1 << n) | (1 << l), 0
    raise CheckerError(f"unknown controller location {loc_name!r}")


@dataclass(frozen=True)
class _FireDesc:
    slot: int
    edge_name: str
    action: traffic.Action
    action_str: str
    req: int                 # spatial guard kind
    req_lane: int            # lane for claim-free guards
    req_bit: int             # 1 << req_lane (0 when unused)
    emit: int
    target: int              # target config id


class _CarTable:
    """All reachable configurations of one controller, with static guards
    already evaluated and per-config successor material precomputed."""

    def __init__(self, name: str, lane: int, pos: int, size: int,
                 autom: Automaton, lane_count: int,
                 normalize: bool, clock_cap: Optional[int]):
        self.name = name
        self.lane0 = lane
        self.pos = pos
        self.size = size
        self.autom = autom
        loc_names = [loc.name for loc in autom.locations]
        self.loc_names = loc_names
        loc_idx = {nm: k for k, nm in enumerate(loc_names)}

        configs: List[Tuple[int, int, int, int]] = []
        for loc in autom.locations:
            out = autom.edges_from(loc.name)
            reads_clock = any(
                isinstance(g, ClockConstraint) for e in out for g in e.guards
            )
            x_dead = normalize and loc.clock_bound is None and not reads_clock
            if x_dead:
                xs: Sequence[int] = (0,)
            else:
                hi = loc.clock_bound
                if clock_cap is not None:
                    hi = clock_cap if hi is None else min(hi, clock_cap)
                if hi is None:
                    raise CheckerError(
                        f"location {loc.name!r} has an unbounded live clock; "
                        f"pass clock_cap to explore it"
                    )
                xs = range(hi + 1)
            l_dead = loc.name in _L_DEAD_LOCS
            for x in xs:
                for n in range(lane_count):
                    if l_dead and normalize:
                        ls: Sequence[int] = (n,)
                    elif l_dead:
                        # stale targets are always within one lane of n
                        ls = [l for l in (n - 1, n, n + 1) if 0 <= l < lane_count]
                    else:
                        ls = [l for l in (n - 1, n + 1) if 0 <= l < lane_count]
                    for l in ls:
                        configs.append((loc_idx[loc.name], x, n, l))

        self.configs = configs
        self.cfg_id = {c: k for k, c in enumerate(configs)}
        count = len(configs)
        self.count = count
        self.res_mask = [0] * count
        self.clm_mask = [0] * count
        self.occ_mask = [0] * count
        self.inv = [0] * count
        self.delay_next = [-1] * count
        self.fires: List[Tuple[_FireDesc, ...]] = [()] * count
        self.loc_of = [0] * count

        dead_x = set()
        for loc in autom.locations:
            out = autom.edges_from(loc.name)
            reads_clock = any(
                isinstance(g, ClockConstraint) for e in out for g in e.guards
            )
            if normalize and loc.clock_bound is None and not reads_clock:
                dead_x.add(loc.name)

        for ci, (li, x, n, l) in enumerate(configs):
            loc = autom.locations[li]
            self.loc_of[ci] = li
            r, c = _loc_masks(loc.name, n, l)
            self.res_mask[ci] = r
            self.clm_mask[ci] = c
            self.occ_mask[ci] = r | c
            self.inv[ci] = _INV_KIND[None if loc.spatial_inv is None
                                     else loc.spatial_inv.kind]

            # delay: x advances unless the location's bound forbids it
            if loc.name in dead_x:
                self.delay_next[ci] = ci
            else:
                nx = x + 1
                if clock_cap is not None:
                    nx = min(nx, clock_cap)
                if loc.clock_bound is not None and nx > loc.clock_bound:
                    self.delay_next[ci] = -1
                else:
                    self.delay_next[ci] = self.cfg_id[(li, nx, n, l)]

            fires = []
            for edge in autom.edges_from(loc.name):
                req, req_lane = _REQ_NONE, -1
                ok = True
                for g in edge.guards:
                    if isinstance(g, ClockConstraint):
                        if not g.holds(x):
                            ok = False
                            break
                    elif isinstance(g, LaneExists):
                        if not 0 <= n + g.delta < lane_count:
                            ok = False
                            break
                    elif isinstance(g, SpatialGuard):
                        if g.kind == "pc-some":
                            req = _REQ_PCSOME
                        elif g.kind == "pc-none":
                            req = _REQ_PCNONE
                        elif g.kind == "claim-free":
                            req = _REQ_CLAIMFREE
                            req_lane = n + g.delta
                        else:
                            raise CheckerError(f"unexpected guard {g.kind!r} on edge")
                    else:
                        raise CheckerError(f"unknown guard {g!r}")
                if not ok:
                    continue
                n2, l2 = n, l
                for var, expr in edge.assigns:
                    val = expr.resolve(n, l)
                    if var == "n":
                        n2 = val
                    elif var == "l":
                        l2 = val
                    else:
                        raise CheckerError(f"unknown register {var!r}")
                tgt = autom.location(edge.target)
                x2 = 0 if edge.reset_clock else x
                if normalize and tgt.name in dead_x:
                    x2 = 0
                if normalize and tgt.name in _L_DEAD_LOCS:
                    l2 = n2
                ti = loc_idx[tgt.name]
                target = self.cfg_id.get((ti, x2, n2, l2))
                if target is None:
                    # target clock bound below the carried clock value, or a
                    # lane pair that cannot arise: edge statically disabled
                    continue
                act = self._concrete_action(edge.action, n, l)
                fires.append(_FireDesc(
                    slot=len(fires),
                    edge_name=edge.name,
                    action=act,
                    action_str=str(act),
                    req=req,
                    req_lane=req_lane,
                    req_bit=0 if req_lane < 0 else 1 << req_lane,
                    emit=_EMIT_CODE[edge.emit],
                    target=target,
                ))
            self.fires[ci] = tuple(fires)

        init = (loc_idx[autom.initial], 0, lane, lane)
        if init not in self.cfg_id:
            raise CheckerError(f"initial configuration of {name!r} not enumerable")
        self.initial = self.cfg_id[init]

    @staticmethod
    def _concrete_action(action, n: int, l: int) -> traffic.Action:
        if isinstance(action, ActClaim):
            return Claim(action.lane.resolve(n, l))
        if isinstance(action, ActWithdrawClaim):
            return WithdrawClaim()
        if isinstance(action, ActReserve):
            return Reserve()
        if isinstance(action, ActWithdrawReservation):
            return WithdrawReservation(action.lane.resolve(n, l))
        if isinstance(action, ActTau):
            return Tau()
        raise CheckerError(f"unknown action {action!r}")

    def car_state(self, ci: int) -> CarState:
        return CarState(
            pos=self.pos,
            size=self.size,
            res=_mask_lanes(self.res_mask[ci]),
            clm=_mask_lanes(self.clm_mask[ci]),
        )


def _mask_lanes(mask: int) -> FrozenSet[int]:
    lanes = set()
    lane = 0
    while mask:
        if mask & 1:
            lanes.add(lane)
        mask >>= 1
        lane += 1
    return frozenset(lanes)


# ---------------------------------------------------------------------------
# engine

def _state_budget(budget: Optional[int]) -> int:
    if budget is not None:
        if budget < 1:
            raise CheckerError(f"state budget must be positive, got {budget}")
        return budget
    raw = os.environ.get(BUDGET_ENV_VAR)
    if raw is None:
        return DEFAULT_STATE_BUDGET
    try:
        value = int(raw)
        if value < 1:
            raise ValueError
    except ValueError:
        raise CheckerError(f"{BUDGET_ENV_VAR} must be a positive integer, got {raw!r}")
    return value


class Engine:
    """State-space explorer for one road, one protocol variant.

    cars is a sequence of (name, lane, pos, size) tuples.  The initial
    snapshot is not collision-checked here (scenario loading does that),
    so deliberately unsafe starting points can be built for testing.
    """

    def __init__(self, lane_count: int, cars: Sequence[Tuple[str, int, int, int]],
                 variant: str = "original", constants: Optional[Constants] = None,
                 *, collision_observer: bool = False,
                 live_observers: Sequence[str] = (),
                 guard_mode: str = "interval",
                 budget: Optional[int] = None,
                 normalize: bool = True,
                 clock_cap: Optional[int] = None,
                 horizon: Optional[int] = None):
        if lane_count < 1:
            raise CheckerError(f"need at least one lane, got {lane_count}")
        if not cars:
            raise CheckerError("no cars")
        if guard_mode not in ("interval", "mlsl"):
            raise CheckerError(f"guard_mode must be 'interval' or 'mlsl', got {guard_mode!r}")
        self.lane_count = lane_count
        self.variant = canonical_variant(variant)
        self.constants = constants or Constants()
        self.guard_mode = guard_mode
        self.budget = _state_budget(budget)

        seen = set()
        tables = []
        for entry in cars:
            name, lane, pos, size = entry[0], entry[1], entry[2], entry[3]
            if name in seen:
                raise CheckerError(f"duplicate car {name!r}")
            seen.add(name)
            if not 0 <= lane < lane_count:
                raise CheckerError(f"car {name!r} starts off the road (lane {lane})")
            if size < 1:
                raise CheckerError(f"car {name!r} needs positive size")
            autom = build_controller(self.variant, name, self.constants)
            tables.append(_CarTable(name, lane, pos, size, autom, lane_count,
                                    normalize, clock_cap))
        self._cars = tables
        self._ncars = len(tables)
        self.car_names = tuple(t.name for t in tables)

        if horizon is None:
            lo = min(t.pos for t in tables)
            hi = max(t.pos + t.size for t in tables)
            horizon = (hi - lo) + 1
        if horizon < 1:
            raise CheckerError("horizon must be positive")
        self.horizon = horizon

        # pairwise extent overlaps; _ovl_view[i][j] clips both cars to car
        # i's view before testing, _ovl_global ignores views entirely
        n = self._ncars
        self._ovl_view = [[False] * n for _ in range(n)]
        self._ovl_global = [[False] * n for _ in range(n)]
        for i, a in enumerate(tables):
            vlo, vhi = a.pos - horizon, a.pos + horizon
            for j, b in enumerate(tables):
                if i == j:
                    continue
                self._ovl_global[i][j] = (a.pos < b.pos + b.size
                                          and b.pos < a.pos + a.size)
                ai, bi = max(a.pos, vlo), min(a.pos + a.size, vhi)
                aj, bj = max(b.pos, vlo), min(b.pos + b.size, vhi)
                self._ovl_view[i][j] = max(ai, aj) < min(bi, bj)

        # observers: collision first, then per-car trackers in cars order
        self._coll_obs = build_observer_collision() if collision_observer else None
        self._live_cars: Tuple[str, ...] = tuple(live_observers)
        for w in self._live_cars:
            if w not in self.car_names:
                raise CheckerError(f"live observer watches unknown car {w!r}")
        if len(set(self._live_cars)) != len(self._live_cars):
            raise CheckerError("duplicate live observer")
        self._live_obs = tuple(build_observer_live(w) for w in self._live_cars)
        self._live_index = {w: k for k, w in enumerate(self._live_cars)}

        radices = [t.count for t in tables]
        if self._coll_obs is not None:
            radices.append(2)
        radices.extend(3 for _ in self._live_obs)
        self._radices = radices
        mults = [1] * len(radices)
        for k in range(len(radices) - 2, -1, -1):
            mults[k] = mults[k + 1] * radices[k + 1]
        self._mults = mults
        self.state_space = mults[0] * radices[0] if radices else 1
        self._coll_digit = self._ncars if collision_observer else -1
        self._live_digit0 = self._ncars + (1 if collision_observer else 0)
        self._collide_code = self._ncars << 8

        # fast-path helpers: per-car observer digit index, differential
        # delay deltas (None where the clock bound blocks waiting)
        self._live_k = [
            self._live_digit0 + self._live_index[t.name]
            if t.name in self._live_index else -1
            for t in tables
        ]
        self._delay_delta = [
            [None if nx < 0 else (nx - ci) * mults[i]
             for ci, nx in enumerate(t.delay_next)]
            for i, t in enumerate(tables)
        ]

        if guard_mode == "mlsl":
            self._formula_pc = mlsl.exists_pc_formula()
            self._formula_cc = mlsl.cc_formula()
            self._formula_collision = ExistsCar("c", ExistsCar("d", And(
                Not(VarEq("c", "d")), somewhere(And(Re("c"), Re("d"))))))
            self._mlsl_cache: Dict[tuple, bool] = {}

        init_digits = [t.initial for t in tables] + [0] * (len(radices) - n)
        self._initial_sid = self._pack_digits(init_digits)

    # -- packing ------------------------------------------------------------

    def _pack_digits(self, digits: Sequence[int]) -> int:
        sid = 0
        for d, r in zip(digits, self._radices):
            sid = sid * r + d
        return sid

    def _unpack(self, sid: int) -> List[int]:
        digits = []
        for m, r in zip(self._mults, self._radices):
            digits.append((sid // m) % r)
        return digits

    # -- spatial predicates ---------------------------------------------------

    def _pc_some(self, i: int, cfgs: Sequence[int]) -> bool:
        """Car i's claim overlaps someone's reservation or claim, in i's view."""
        if self.guard_mode == "mlsl":
            return self._mlsl_pc_some(i, cfgs)
        clm = self._cars[i].clm_mask[cfgs[i]]
        if not clm:
            return False
        ovl = self._ovl_view[i]
        for j in range(self._ncars):
            if j != i and ovl[j] and clm & self._cars[j].occ_mask[cfgs[j]]:
                return True
        return False

    def _cc_ok(self, i: int, cfgs: Sequence[int]) -> bool:
        """No reservation of another car overlaps car i's, in i's view."""
        if self.guard_mode == "mlsl":
            return self._mlsl_cc_ok(i, cfgs)
        res = self._cars[i].res_mask[cfgs[i]]
        ovl = self._ovl_view[i]
        for j in range(self._ncars):
            if j != i and ovl[j] and res & self._cars[j].res_mask[cfgs[j]]:
                return False
        return True

    def _claim_blocked(self, i: int, lane: int, cfgs: Sequence[int]) -> bool:
        """Someone already holds the lane car i wants to claim, in i's view."""
        if self.guard_mode == "mlsl":
            return self._mlsl_claim_blocked(i, lane, cfgs)
        bit = 1 << lane
        ovl = self._ovl_view[i]
        for j in range(self._ncars):
            if j != i and ovl[j] and bit & self._cars[j].occ_mask[cfgs[j]]:
                return True
        return False

    def _collision_some(self, cfgs: Sequence[int]) -> bool:
        """Two overlapping cars share a reserved lane (road-global)."""
        if self.guard_mode == "mlsl":
            return self._mlsl_collision(cfgs)
        n = self._ncars
        for i in range(n):
            ri = self._cars[i].res_mask[cfgs[i]]
            ovl = self._ovl_global[i]
            for j in range(i + 1, n):
                if ovl[j] and ri & self._cars[j].res_mask[cfgs[j]]:
                    return True
        return False

    # the mlsl-backed versions answer the same questions by evaluating the
    # corresponding spatial formulas on the derived snapshot (slow; used to
    # cross-validate the interval shortcuts)

    def _spatial_sig(self, cfgs: Sequence[int]) -> tuple:
        return tuple((t.res_mask[c], t.clm_mask[c]) for t, c in zip(self._cars, cfgs))

    def _snapshot_of(self, cfgs: Sequence[int]) -> TrafficSnapshot:
        return TrafficSnapshot(
            self.lane_count,
            {t.name: t.car_state(c) for t, c in zip(self._cars, cfgs)},
        )

    def _mlsl_pc_some(self, i: int, cfgs) -> bool:
        key = ("pc", i, self._spatial_sig(cfgs))
        hit = self._mlsl_cache.get(key)
        if hit is None:
            ts = self._snapshot_of(cfgs)
            ego = self._cars[i].name
            view = traffic.standard_view(ts, ego, self.horizon)
            hit = mlsl.eval(ts, view, {"ego": ego}, self._formula_pc)
            self._mlsl_cache[key] = hit
        return hit

    def _mlsl_cc_ok(self, i: int, cfgs) -> bool:
        key = ("cc", i, self._spatial_sig(cfgs))
        hit = self._mlsl_cache.get(key)
        if hit is None:
            ts = self._snapshot_of(cfgs)
            ego = self._cars[i].name
            view = traffic.standard_view(ts, ego, self.horizon)
            hit = mlsl.eval(ts, view, {"ego": ego}, self._formula_cc)
            self._mlsl_cache[key] = hit
        return hit

    def _mlsl_claim_blocked(self, i: int, lane: int, cfgs) -> bool:
        key = ("cf", i, lane, self._spatial_sig(cfgs))
        hit = self._mlsl_cache.get(key)
        if hit is None:
            ts = self._snapshot_of(cfgs)
            ego = self._cars[i].name
            car = ts.car(ego)
            ts2 = ts.with_car(ego, CarState(car.pos, car.size, car.res,
                                            frozenset({lane})))
            view = traffic.standard_view(ts2, ego, self.horizon)
            hit = mlsl.eval(ts2, view, {"ego": ego}, self._formula_pc)
            self._mlsl_cache[key] = hit
        return hit

    def _mlsl_collision(self, cfgs) -> bool:
        key = ("coll", self._spatial_sig(cfgs))
        hit = self._mlsl_cache.get(key)
        if hit is None:
            ts = self._snapshot_of(cfgs)
            lo = min(t.pos for t in self._cars) - 1
            hi = max(t.pos + t.size for t in self._cars) + 1
            view = View(0, self.lane_count - 1, Extent(lo, hi))
            ego = self._cars[0].name
            hit = mlsl.eval(ts, view, {"ego": ego}, self._formula_collision)
            self._mlsl_cache[key] = hit
        return hit

    # -- successor generation -------------------------------------------------

    def _expand(self, sid: int):
        """Successors of a packed state.

        Returns (succs, enabled_mask, any_fire) where succs is a list of
        (code, successor sid); code is -1 for the delay step, i<<8|slot for
        a fire of controller i, and ncars<<8 for the collision observer.
        enabled_mask has bit i set when controller i can fire here.
        """
        if self.guard_mode == "mlsl":
            return self._expand_generic(sid)
        return self._expand_fast(sid)

    def _expand_fast(self, sid: int):
        cars = self._cars
        mults = self._mults
        n = self._ncars
        digits = self._unpack(sid)
        cfgs = digits[:n]
        res = [cars[j].res_mask[cfgs[j]] for j in range(n)]
        clm = [cars[j].clm_mask[cfgs[j]] for j in range(n)]
        occ = [cars[j].occ_mask[cfgs[j]] for j in range(n)]
        inv = [cars[j].inv[cfgs[j]] for j in range(n)]
        ovl = self._ovl_view
        succs: List[Tuple[int, int]] = []
        enabled = 0

        for i in range(n):
            table = cars[i]
            fires = table.fires[cfgs[i]]
            if not fires:
                continue
            ovl_i = ovl[i]
            mult_i = mults[i]
            ci = cfgs[i]
            for fd in fires:
                req = fd.req
                if req:
                    if req == _REQ_PCSOME or req == _REQ_PCNONE:
                        c = clm[i]
                        hit = False
                        if c:
                            for j in range(n):
                                if j != i and ovl_i[j] and c & occ[j]:
                                    hit = True
                                    break
                        if hit != (req == _REQ_PCSOME):
                            continue
                    else:   # claim-free
                        bit = fd.req_bit
                        blocked = False
                        for j in range(n):
                            if j != i and ovl_i[j] and bit & occ[j]:
                                blocked = True
                                break
                        if blocked:
                            continue
                tgt = fd.target
                tr = table.res_mask[tgt]
                tc = table.clm_mask[tgt]
                tocc = tr | tc
                ok = True
                for j in range(n):
                    if j == i:
                        inv_j = table.inv[tgt]
                        if inv_j == _INV_CC:
                            for k in range(n):
                                if k != i and ovl_i[k] and tr & res[k]:
                                    ok = False
                                    break
                        elif inv_j == _INV_PCNONE and tc:
                            for k in range(n):
                                if k != i and ovl_i[k] and tc & occ[k]:
                                    ok = False
                                    break
                    else:
                        inv_j = inv[j]
                        if inv_j == _INV_CC:
                            if ovl[j][i] and res[j] & tr:
                                ok = False
                        elif inv_j == _INV_PCNONE:
                            if ovl[j][i] and clm[j] & tocc:
                                ok = False
                    if not ok:
                        break
                if not ok:
                    continue
                enabled |= 1 << i
                delta = (tgt - ci) * mult_i
                if fd.emit:
                    k = self._live_k[i]
                    if k >= 0:
                        cur = digits[k]
                        nxt = _LIVE_NEXT[fd.emit][cur]
                        if nxt != cur:
                            delta += (nxt - cur) * mults[k]
                succs.append(((i << 8) | fd.slot, sid + delta))

        any_fire = bool(succs)
        cd = self._coll_digit
        if cd >= 0 and digits[cd] == 0:
            ovg = self._ovl_global
            found = False
            for i in range(n):
                ri = res[i]
                ovg_i = ovg[i]
                for j in range(i + 1, n):
                    if ovg_i[j] and ri & res[j]:
                        found = True
                        break
                if found:
                    break
            if found:
                succs.append((self._collide_code, sid + mults[cd]))
                any_fire = True

        ddelta = 0
        for i in range(n):
            d = self._delay_delta[i][cfgs[i]]
            if d is None:
                ddelta = None
                break
            ddelta += d
        if ddelta is not None:
            succs.append((-1, sid + ddelta))

        return succs, enabled, any_fire

    def _expand_generic(self, sid: int):
        digits = self._unpack(sid)
        n = self._ncars
        cfgs = digits[:n]
        succs: List[Tuple[int, int]] = []
        enabled = 0

        for i in range(n):
            table = self._cars[i]
            for fd in table.fires[cfgs[i]]:
                req = fd.req
                if req == _REQ_PCSOME:
                    if not self._pc_some(i, cfgs):
                        continue
                elif req == _REQ_PCNONE:
                    if self._pc_some(i, cfgs):
                        continue
                elif req == _REQ_CLAIMFREE:
                    if self._claim_blocked(i, fd.req_lane, cfgs):
                        continue
                # global invariant check on the target state
                old = cfgs[i]
                cfgs[i] = fd.target
                ok = True
                for j in range(n):
                    inv = self._cars[j].inv[cfgs[j]]
                    if inv == _INV_CC:
                        if not self._cc_ok(j, cfgs):
                            ok = False
                            break
                    elif inv == _INV_PCNONE:
                        if self._pc_some(j, cfgs):
                            ok = False
                            break
                cfgs[i] = old
                if not ok:
                    continue
                enabled |= 1 << i
                new_digits = list(digits)
                new_digits[i] = fd.target
                if fd.emit:
                    oi = self._live_index.get(table.name)
                    if oi is not None:
                        k = self._live_digit0 + oi
                        new_digits[k] = _LIVE_NEXT[fd.emit][digits[k]]
                succs.append(((i << 8) | fd.slot, self._pack_digits(new_digits)))

        any_fire = bool(succs)
        if self._coll_digit >= 0 and digits[self._coll_digit] == 0 \
                and self._collision_some(cfgs):
            new_digits = list(digits)
            new_digits[self._coll_digit] = 1
            succs.append((self._collide_code, self._pack_digits(new_digits)))
            any_fire = True

        delayed = []
        for i in range(n):
            nx = self._cars[i].delay_next[cfgs[i]]
            if nx < 0:
                delayed = None
                break
            delayed.append(nx)
        if delayed is not None:
            new_digits = delayed + digits[n:]
            succs.append((-1, self._pack_digits(new_digits)))

        return succs, enabled, any_fire

    def _step_of(self, sid: int, code: int) -> Step:
        if code == -1:
            return Delay(1)
        i = code >> 8
        if i == self._ncars:
            return Fire("collision-observer", "collision", "tau")
        table = self._cars[i]
        ci = self._unpack(sid)[i]
        fd = table.fires[ci][code & 0xFF]
        return Fire(table.name, fd.edge_name, fd.action_str)

    # -- presentation ---------------------------------------------------------

    def _to_state(self, sid: int) -> SystemState:
        digits = self._unpack(sid)
        n = self._ncars
        locations = []
        clocks = []
        registers = []
        for i, table in enumerate(self._cars):
            li, x, cn, cl = table.configs[digits[i]]
            locations.append((table.name, table.loc_names[li]))
            clocks.append((table.name, x))
            registers.append((table.name, (cn, cl)))
        if self._coll_obs is not None:
            locations.append((self._coll_obs.name,
                              self._coll_obs.locations[digits[self._coll_digit]].name))
        for k, obs in enumerate(self._live_obs):
            locations.append((obs.name,
                              obs.locations[digits[self._live_digit0 + k]].name))
        return SystemState(
            snapshot=self._snapshot_of(digits[:n]),
            locations=tuple(locations),
            clocks=tuple(clocks),
            registers=tuple(registers),
        )

    def _pack_state(self, state: SystemState) -> int:
        digits = []
        for table in self._cars:
            loc = state.location(table.name)
            x = state.clock(table.name)
            cn, cl = state.lanes_of(table.name)
            li = table.loc_names.index(loc) if loc in table.loc_names else -1
            ci = table.cfg_id.get((li, x, cn, cl))
            if ci is None:
                raise CheckerError(
                    f"state of {table.name!r} ({loc}, x={x}, n={cn}, l={cl}) "
                    f"is not an engine configuration"
                )
            digits.append(ci)
        if self._coll_obs is not None:
            loc = state.location(self._coll_obs.name)
            digits.append([l.name for l in self._coll_obs.locations].index(loc))
        for obs in self._live_obs:
            loc = state.location(obs.name)
            digits.append([l.name for l in obs.locations].index(loc))
        return self._pack_digits(digits)

    def initial_state(self) -> SystemState:
        return self._to_state(self._initial_sid)

    def successors(self, state: SystemState) -> List[Tuple[Step, SystemState]]:
        sid = self._pack_state(state)
        succs, _, _ = self._expand(sid)
        return [(self._step_of(sid, code), self._to_state(s2)) for code, s2 in succs]

    def deadlock(self, state: SystemState) -> bool:
        return self._deadlock_sid(self._pack_state(state))

    def _deadlock_sid(self, sid: int) -> bool:
        """True when no fire is possible here or after any amount of waiting."""
        seen = set()
        cur = sid
        while cur not in seen:
            seen.add(cur)
            succs, _, any_fire = self._expand(cur)
            if any_fire:
                return False
            if not succs:
                return True
            cur = succs[-1][1]     # the delay successor is last
        return True

    # -- reachability (AG) ----------------------------------------------------

    def check_ag(self, bad: Callable[[SystemState], bool],
                 initial: Optional[SystemState] = None) -> Verdict:
        """No reachable state satisfies bad; witness is a shortest bad path."""
        init = self._initial_sid if initial is None else self._pack_state(initial)
        return self._ag(lambda sid, exp: bad(self._to_state(sid)),
                        needs_expansion=False, initial_sid=init)

    def _ag(self, bad, *, needs_expansion: bool, initial_sid: Optional[int] = None,
            force_parents: bool = False) -> Verdict:
        init = self._initial_sid if initial_sid is None else initial_sid
        track = force_parents or self.state_space <= _WITNESS_LIMIT
        parents: Optional[Dict[int, Tuple[int, int]]] = {} if track else None

        def conclude_fail(found: int, states: int) -> Verdict:
            if parents is not None:
                return Verdict("fails", states=states,
                               witness=self._path_trace(init, parents, found))
            if not force_parents:
                # the bad state is usually shallow; redo the search keeping
                # parent links so a witness can be materialized
                return self._ag(bad, needs_expansion=needs_expansion,
                                initial_sid=init, force_parents=True)
            return Verdict("fails", states=states,
                           note="witness suppressed: state space too large")

        if not needs_expansion and bad(init, None):
            return Verdict("fails", witness=self._path_trace(init, {}, init), states=1)

        visited = _Visited(self.state_space)
        visited.add(init)
        states = 1
        frontier = [init]
        while frontier:
            nxt = []
            for sid in frontier:
                expansion = self._expand(sid)
                if needs_expansion and bad(sid, expansion):
                    return conclude_fail(sid, states)
                for code, s2 in expansion[0]:
                    if visited.add(s2):
                        states += 1
                        if states > self.budget:
                            return Verdict(
                                "inconclusive", states=states,
                                note=f"state budget {self.budget} exhausted")
                        if parents is not None:
                            parents[s2] = (sid, code)
                            if len(parents) > _WITNESS_LIMIT:
                                parents = None
                        if not needs_expansion and bad(s2, None):
                            return conclude_fail(s2, states)
                        nxt.append(s2)
            frontier = nxt
        return Verdict("holds", states=states)

    def _path_trace(self, init: int, parents: Mapping[int, Tuple[int, int]],
                    goal: int) -> Trace:
        chain = []
        cur = goal
        while cur != init:
            psid, code = parents[cur]
            chain.append((psid, code, cur))
            cur = psid
        chain.reverse()
        return self._materialize(init, chain, cycle_start=None)

    def _materialize(self, init: int, edges: Sequence[Tuple[int, int, int]],
                     cycle_start: Optional[int]) -> Trace:
        steps = []
        for sid, code, s2 in edges:
            steps.append((self._step_of(sid, code), self._to_state(s2)))
        return Trace(initial=self._to_state(init), steps=tuple(steps),
                     cycle_start=cycle_start)

    # -- inevitability (AF) ---------------------------------------------------

    def check_af(self, good: Callable[[SystemState], bool],
                 initial: Optional[SystemState] = None) -> Verdict:
        """Every fair, non-zeno run eventually satisfies good."""
        init = self._initial_sid if initial is None else self._pack_state(initial)
        return self._af(lambda sid: good(self._to_state(sid)), initial_sid=init)

    def _af(self, good, *, initial_sid: Optional[int] = None) -> Verdict:
        init = self._initial_sid if initial_sid is None else initial_sid
        if good(init):
            return Verdict("holds", states=1)

        # region: all states reachable without passing through a good state
        edges: Dict[int, List[Tuple[int, int]]] = {}
        enabled: Dict[int, int] = {}
        parents: Dict[int, Tuple[int, int]] = {}
        frontier = [init]
        edges[init] = []
        while frontier:
            nxt = []
            for sid in frontier:
                succs, en, _ = self._expand(sid)
                enabled[sid] = en
                if not succs:
                    # stuck state: no run from here can reach good
                    return Verdict(
                        "fails", states=len(edges),
                        witness=self._path_trace(init, parents, sid),
                        note="run reaches a stuck state")
                kept = []
                for code, s2 in succs:
                    if s2 not in edges and not good(s2):
                        if len(edges) >= self.budget:
                            return Verdict(
                                "inconclusive", states=len(edges),
                                note=f"state budget {self.budget} exhausted")
                        edges[s2] = []
                        parents[s2] = (sid, code)
                        nxt.append(s2)
                    if s2 in edges:
                        kept.append((code, s2))
                edges[sid] = kept
            frontier = nxt

        # zeno counterexample: a cycle of fires, time never advancing
        fire_adj = {
            sid: [s2 for code, s2 in out if code != -1]
            for sid, out in edges.items()
        }
        for scc in _tarjan(fire_adj):
            comp = set(scc)
            if not _has_internal_edge(comp, fire_adj):
                continue
            fired = 0
            for sid in scc:
                for code, s2 in edges[sid]:
                    if code != -1 and (code >> 8) < self._ncars and s2 in comp:
                        fired |= 1 << (code >> 8)
            cyc = self._cover_cycle(scc[0], comp, edges, fired, fire_only=True)
            return self._lasso(init, parents, cyc, len(edges),
                               note="zero-delay cycle avoids the goal")

        # fair counterexample: an SCC where every controller that is ever
        # enabled also fires, so no fairness assumption rules the loop out
        full_adj = {sid: [s2 for _, s2 in out] for sid, out in edges.items()}
        for scc in _tarjan(full_adj):
            comp = set(scc)
            if not _has_internal_edge(comp, full_adj):
                continue
            en = 0
            for sid in scc:
                en |= enabled[sid]
            fired = 0
            for sid in scc:
                for code, s2 in edges[sid]:
                    if code != -1 and (code >> 8) < self._ncars and s2 in comp:
                        fired |= 1 << (code >> 8)
            if en & ~fired:
                continue
            cyc = self._cover_cycle(scc[0], comp, edges, en, fire_only=False)
            return self._lasso(init, parents, cyc, len(edges),
                               note="fair cycle avoids the goal")

        return Verdict("holds", states=len(edges))

    def _lasso(self, init, parents, cycle_edges, states, note) -> Verdict:
        entry = cycle_edges[0][0]
        stem = []
        cur = entry
        while cur != init:
            psid, code = parents[cur]
            stem.append((psid, code, cur))
            cur = psid
        stem.reverse()
        trace = self._materialize(init, stem + list(cycle_edges),
                                  cycle_start=len(stem))
        return Verdict("fails", witness=trace, states=states, note=note)

    def _cover_cycle(self, start: int, comp: Set[int], edges,
                     needed_mask: int, *, fire_only: bool) -> List[Tuple[int, int, int]]:
        """A closed walk from start inside the SCC that fires every
        controller in needed_mask at least once."""
        walk: List[Tuple[int, int, int]] = []
        cur = start
        for i in range(self._ncars):
            if not needed_mask & (1 << i):
                continue
            leg = self._bfs_to_fire(cur, comp, edges, i, fire_only)
            walk.extend(leg)
            cur = leg[-1][2]
        if cur != start or not walk:
            walk.extend(self._bfs_to_node(cur, comp, edges, start,
                                          need_step=not walk,
                                          fire_only=fire_only))
        return walk

    def _bfs_to_fire(self, start: int, comp: Set[int], edges, actor: int,
                     fire_only: bool):
        """Shortest walk inside the SCC ending with a fire of the actor."""
        prev: Dict[int, Tuple[int, int, int]] = {}
        frontier = [start]
        seen = {start}
        while frontier:
            nxt = []
            for sid in frontier:
                for code, s2 in edges[sid]:
                    if s2 not in comp or (fire_only and code == -1):
                        continue
                    if code != -1 and (code >> 8) == actor:
                        path = self._unwind(prev, start, sid)
                        return path + [(sid, code, s2)]
                    if s2 not in seen:
                        seen.add(s2)
                        prev[s2] = (sid, code, s2)
                        nxt.append(s2)
            frontier = nxt
        raise CheckerError("controller lost inside its own component")

    def _bfs_to_node(self, start: int, comp: Set[int], edges, goal: int,
                     *, need_step: bool, fire_only: bool):
        """Shortest walk inside the SCC from start to goal (>=1 step if asked)."""
        if start == goal and not need_step:
            return []
        prev: Dict[int, Tuple[int, int, int]] = {}
        frontier = [start]
        seen = {start}
        while frontier:
            nxt = []
            for sid in frontier:
                for code, s2 in edges[sid]:
                    if s2 not in comp or (fire_only and code == -1):
                        continue
                    if s2 == goal:
                        return self._unwind(prev, start, sid) + [(sid, code, s2)]
                    if s2 not in seen:
                        seen.add(s2)
                        prev[s2] = (sid, code, s2)
                        nxt.append(s2)
            frontier = nxt
        raise CheckerError("SCC walk failed to close")

    @staticmethod
    def _unwind(prev, start, end):
        path = []
        cur = end
        while cur != start:
            edge = prev[cur]
            path.append(edge)
            cur = edge[0]
        path.reverse()
        return path

    # -- query dispatch ---------------------------------------------------------

    def run_query(self, query: Query) -> Verdict:
        if isinstance(query, NoDeadlock):
            return self._ag(lambda sid, exp: self._deadlock_from(sid, exp),
                            needs_expansion=True)
        if isinstance(query, SafetyNoCollision):
            if self._coll_obs is None:
                raise CheckerError("engine was built without the collision observer")
            digit = self._coll_digit

            def bad(sid, exp):
                return (sid // self._mults[digit]) % 2 == 1

            return self._ag(bad, needs_expansion=False)
        if isinstance(query, (LivenessAny, LivenessCar)):
            watched = self._liveness_targets(query)
            ks = [self._live_digit0 + self._live_index[w] for w in watched]
            mults = self._mults

            def goal(sid):
                return any((sid // mults[k]) % 3 == 2 for k in ks)

            return self._af(goal)
        raise CheckerError(f"unknown query {query!r}")

    def _liveness_targets(self, query) -> Tuple[str, ...]:
        if isinstance(query, LivenessCar):
            wanted: Tuple[str, ...] = (query.car,)
        else:
            wanted = self.car_names if query.cars is None else tuple(
                w for w in self.car_names if w in query.cars)
            if isinstance(query, LivenessAny) and query.cars is not None:
                missing = set(query.cars) - set(self.car_names)
                if missing:
                    raise CheckerError(f"liveness query names unknown cars {sorted(missing)}")
        if not wanted:
            raise CheckerError("liveness query watches no cars")
        for w in wanted:
            if w not in self._live_index:
                raise CheckerError(f"engine has no progress observer for {w!r}")
        return wanted

    def _deadlock_from(self, sid: int, expansion) -> bool:
        succs, _, any_fire = expansion
        if any_fire:
            return False
        if not succs:
            return True
        # only delays from here on; follow them until a fire shows up
        seen = {sid}
        cur = succs[-1][1]
        while cur not in seen:
            seen.add(cur)
            succs, _, any_fire = self._expand(cur)
            if any_fire:
                return False
            if not succs:
                return True
            cur = succs[-1][1]
        return True

    @classmethod
    def for_query(cls, sc: Scenario, query: Query, **kwargs) -> "Engine":
        collision = isinstance(query, SafetyNoCollision)
        if isinstance(query, LivenessCar):
            live: Tuple[str, ...] = (query.car,)
        elif isinstance(query, LivenessAny):
            names = sc.car_names()
            live = names if query.cars is None else tuple(
                w for w in names if w in query.cars)
        else:
            live = ()
        kwargs.setdefault("horizon", sc.effective_horizon())
        return cls(
            sc.lane_count,
            [(c.name, c.lane, c.pos, c.size) for c in sc.cars],
            variant=sc.variant,
            constants=sc.constants,
            collision_observer=collision,
            live_observers=live,
            **kwargs,
        )


class _Visited:
    """Visited-set: dense bitmap when the address space is small enough."""

    def __init__(self, space: int):
        if space <= _BITMAP_LIMIT:
            self._bits = bytearray((space + 7) // 8)
            self._set = None
        else:
            self._bits = None
            self._set: Optional[Set[int]] = set()

    def add(self, sid: int) -> bool:
        """Insert; True when the state was new."""
        if self._bits is not None:
            byte, bit = sid >> 3, 1 << (sid & 7)
            if self._bits[byte] & bit:
                return False
            self._bits[byte] |= bit
            return True
        if sid in self._set:
            return False
        self._set.add(sid)
        return True


def _tarjan(adj: Mapping[int, List[int]]) -> List[List[int]]:
    """Strongly connected components, iterative, in a deterministic order."""
    index: Dict[int, int] = {}
    low: Dict[int, int] = {}
    onstack: Set[int] = set()
    stack: List[int] = []
    sccs: List[List[int]] = []
    counter = 0

    for root in adj:
        if root in index:
            continue
        work = [(root, iter(adj[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        onstack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    onstack.add(w)
                    work.append((w, iter(adj[w])))
                    advanced = True
                    break
                if w in onstack and index[w] < low[v]:
                    low[v] = index[w]
            if not advanced:
                work.pop()
                if work:
                    u = work[-1][0]
                    if low[v] < low[u]:
                        low[u] = low[v]
                if low[v] == index[v]:
                    comp = []
                    while True:
                        w = stack.pop()
                        onstack.discard(w)
                        comp.append(w)
                        if w == v:
                            break
                    sccs.append(comp)
    return sccs


def _has_internal_edge(comp: Set[int], adj: Mapping[int, List[int]]) -> bool:
    return any(s2 in comp for sid in comp for s2 in adj[sid])


# ---------------------------------------------------------------------------
# module-level entry points

def successors(engine: Engine, state: SystemState) -> List[Tuple[Step, SystemState]]:
    return engine.successors(state)


def deadlock(engine: Engine, state: SystemState) -> bool:
    return engine.deadlock(state)


def check_ag(engine: Engine, bad: Callable[[SystemState], bool],
             initial: Optional[SystemState] = None) -> Verdict:
    return engine.check_ag(bad, initial)


def check_af(engine: Engine, good: Callable[[SystemState], bool],
             initial: Optional[SystemState] = None) -> Verdict:
    return engine.check_af(good, initial)


def run_query(sc: Scenario, query: Query, **kwargs) -> Verdict:
    """Build the right engine for the query and run it."""
    return Engine.for_query(sc, query, **kwargs).run_query(query)
