"""Spatial interval logic over lane/road views.

Formulas talk about a view (a lane band crossed with a road extent): `free`
says the single-lane sub-extent is unoccupied, `re(c)`/`cl(c)` say the
sub-extent is exactly car c's visible interval on a lane it has reserved
resp. claimed.  A horizontal chop `phi ; psi` splits the extent at some
point, a vertical chop `[upper / lower]` splits the lane band, and
`<phi>` ("somewhere") is the derived pattern embedding phi in an arbitrary
sub-view.

Two evaluation strategies are provided for horizontal chops: `fast` tries
only chop points near extent boundaries and visible car endpoints (widened
enough to cover nested chops over free space), `sweep` tries every integer
point and serves as the reference oracle in tests.

The module also carries the interval-arithmetic collision checks used by
the controllers (`cc`, `pc`, `intersect`) and builders for their formula
counterparts, so tests can cross-validate the two.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple, Union

from .traffic import Extent, TrafficSnapshot, View


class MlslError(Exception):
    pass


class ParseError(MlslError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


class EvalError(MlslError):
    pass


# ---------------------------------------------------------------------------
# Formula AST


class Formula:
    __slots__ = ()

    def __str__(self) -> str:
        return format_formula(self)


@dataclass(frozen=True)
class TrueF(Formula):
    pass


@dataclass(frozen=True)
class VarEq(Formula):
    left: str
    right: str


@dataclass(frozen=True)
class Free(Formula):
    pass


@dataclass(frozen=True)
class Re(Formula):
    car: str


@dataclass(frozen=True)
class Cl(Formula):
    car: str


@dataclass(frozen=True)
class Not(Formula):
    sub: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class ExistsCar(Formula):
    var: str
    sub: Formula


@dataclass(frozen=True)
class HChop(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class VChop(Formula):
    lower: Formula
    upper: Formula


def or_(a: Formula, b: Formula) -> Formula:
    """Disjunction, desugared: the core syntax has no or node."""
    return Not(And(Not(a), Not(b)))


def somewhere(phi: Formula) -> Formula:
    """phi holds in some sub-view: true lane bands around (true ; phi ; true)."""
    middle = HChop(TrueF(), HChop(phi, TrueF()))
    return VChop(lower=TrueF(), upper=VChop(lower=middle, upper=TrueF()))


def _somewhere_payload(f: Formula) -> Optional[Formula]:
    # recognise the somewhere() shape so the printer can fold it back
    if not (isinstance(f, VChop) and f.lower == TrueF() and isinstance(f.upper, VChop)):
        return None
    inner = f.upper
    if inner.upper != TrueF() or not isinstance(inner.lower, HChop):
        return None
    mid = inner.lower
    if mid.left != TrueF() or not isinstance(mid.right, HChop) or mid.right.right != TrueF():
        return None
    return mid.right.left


# ---------------------------------------------------------------------------
# Concrete syntax

_KEYWORDS = {"true", "free", "re", "cl", "exists"}

# precedence levels: exists 0 < chop 1 < and 2 < not 3 < atoms 4


def format_formula(f: Formula) -> str:
    def prec(g: Formula) -> int:
        if isinstance(g, ExistsCar):
            return 0
        if isinstance(g, HChop):
            return 1
        if isinstance(g, And):
            return 2
        if isinstance(g, Not):
            return 3
        return 4

    def fmt(g: Formula, min_prec: int) -> str:
        payload = _somewhere_payload(g)
        if payload is not None:
            return f"<{fmt(payload, 0)}>"
        if isinstance(g, TrueF):
            return "true"
        if isinstance(g, Free):
            return "free"
        if isinstance(g, Re):
            return f"re({g.car})"
        if isinstance(g, Cl):
            return f"cl({g.car})"
        if isinstance(g, VarEq):
            return f"{g.left} = {g.right}"
        if isinstance(g, VChop):
            return f"[{fmt(g.upper, 0)} / {fmt(g.lower, 0)}]"
        if isinstance(g, Not):
            return _wrap(f"!{fmt(g.sub, 3)}", 3, min_prec)
        if isinstance(g, And):
            return _wrap(f"{fmt(g.left, 2)} & {fmt(g.right, 3)}", 2, min_prec)
        if isinstance(g, HChop):
            return _wrap(f"{fmt(g.left, 1)} ; {fmt(g.right, 2)}", 1, min_prec)
        if isinstance(g, ExistsCar):
            return _wrap(f"exists {g.var}. {fmt(g.sub, 0)}", 0, min_prec)
        raise MlslError(f"unknown formula node {g!r}")

    def _wrap(text: str, p: int, min_prec: int) -> str:
        return text if p >= min_prec else f"({text})"

    return fmt(f, 0)


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.tokens: List[Tuple[str, str, int]] = []
        self._run()
        self.idx = 0

    def _run(self):
        text, i, n = self.text, 0, len(self.text)
        while i < n:
            ch = text[i]
            if ch.isspace():
                i += 1
                continue
            if ch.isalpha() or ch == "_":
                j = i
                while j < n and (text[j].isalnum() or text[j] == "_"):
                    j += 1
                word = text[i:j]
                kind = word if word in _KEYWORDS else "ident"
                self.tokens.append((kind, word, i))
                i = j
                continue
            if ch in "=!&;.()<>[]/":
                self.tokens.append((ch, ch, i))
                i += 1
                continue
            raise ParseError(f"unexpected character {ch!r}", i)
        self.tokens.append(("eof", "", n))

    def peek(self) -> Tuple[str, str, int]:
        return self.tokens[self.idx]

    def next(self) -> Tuple[str, str, int]:
        tok = self.tokens[self.idx]
        self.idx += 1
        return tok

    def expect(self, kind: str) -> Tuple[str, str, int]:
        tok = self.next()
        if tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        return tok


def parse(text: str, lane_vars: Iterable[str] = ()) -> Formula:
    """Parse the concrete formula syntax.

    Grammar: `true`, `free`, `re(c)`, `cl(c)`, `u = v`, `!phi`,
    `phi & phi`, `phi ; phi` (horizontal chop), `exists c. phi`,
    `[upper / lower]` (vertical chop, upper half written first),
    `<phi>` (somewhere), parentheses.  Precedence `!` > `&` > `;`,
    `exists` reaches right as far as possible.

    `lane_vars` declares identifiers of lane sort; equating a lane-sort
    variable with a car-sort one (or using it inside re/cl) is an error.
    """
    tz = _Tokenizer(text)
    vareqs: List[Tuple[str, str, int]] = []
    recl_args: List[Tuple[str, int]] = []

    def p_formula() -> Formula:
        if tz.peek()[0] == "exists":
            tz.next()
            var = tz.expect("ident")[1]
            tz.expect(".")
            return ExistsCar(var, p_formula())
        return p_chop()

    def p_chop() -> Formula:
        f = p_and()
        while tz.peek()[0] == ";":
            tz.next()
            f = HChop(f, p_and())
        return f

    def p_and() -> Formula:
        f = p_unary()
        while tz.peek()[0] == "&":
            tz.next()
            f = And(f, p_unary())
        return f

    def p_unary() -> Formula:
        if tz.peek()[0] == "!":
            tz.next()
            return Not(p_unary())
        return p_atom()

    def p_atom() -> Formula:
        kind, word, pos = tz.next()
        if kind == "true":
            return TrueF()
        if kind == "free":
            return Free()
        if kind in ("re", "cl"):
            tz.expect("(")
            _, arg, argpos = tz.expect("ident")
            tz.expect(")")
            recl_args.append((arg, argpos))
            return Re(arg) if kind == "re" else Cl(arg)
        if kind == "ident":
            if tz.peek()[0] == "=":
                tz.next()
                rkind, rword, rpos = tz.next()
                if rkind != "ident":
                    raise ParseError(f"expected identifier after '=', found {rword!r}", rpos)
                vareqs.append((word, rword, pos))
                return VarEq(word, rword)
            raise ParseError(f"bare identifier {word!r} is not a formula", pos)
        if kind == "(":
            f = p_formula()
            tz.expect(")")
            return f
        if kind == "<":
            f = p_formula()
            tz.expect(">")
            return somewhere(f)
        if kind == "[":
            upper = p_formula()
            tz.expect("/")
            lower = p_formula()
            tz.expect("]")
            return VChop(lower=lower, upper=upper)
        raise ParseError(f"unexpected token {word!r}", pos)

    f = p_formula()
    tz.expect("eof")
    _check_sorts(f, frozenset(lane_vars), vareqs, recl_args)
    return f


def _check_sorts(
    f: Formula,
    lane_vars: FrozenSet[str],
    vareqs: List[Tuple[str, str, int]],
    recl_args: List[Tuple[str, int]],
) -> None:
    car_vars = {"ego"}

    def walk(g: Formula):
        if isinstance(g, (Re, Cl)):
            car_vars.add(g.car)
        elif isinstance(g, ExistsCar):
            car_vars.add(g.var)
            walk(g.sub)
        elif isinstance(g, Not):
            walk(g.sub)
        elif isinstance(g, (And, HChop)):
            walk(g.left)
            walk(g.right)
        elif isinstance(g, VChop):
            walk(g.lower)
            walk(g.upper)

    walk(f)
    for arg, pos in recl_args:
        if arg in lane_vars:
            raise ParseError(f"lane variable {arg!r} used as a car", pos)
    for u, v, pos in vareqs:
        u_car, v_car = u in car_vars, v in car_vars
        u_lane, v_lane = u in lane_vars, v in lane_vars
        if (u_car and v_lane) or (u_lane and v_car):
            raise ParseError(f"comparing variables of different sorts: {u} = {v}", pos)


# ---------------------------------------------------------------------------
# Evaluation (Definition-4 style satisfaction)

Valuation = Mapping[str, Union[str, int]]


@functools.lru_cache(maxsize=None)
def _hchop_count(f: Formula) -> int:
    if isinstance(f, HChop):
        return 1 + _hchop_count(f.left) + _hchop_count(f.right)
    if isinstance(f, Not):
        return _hchop_count(f.sub)
    if isinstance(f, ExistsCar):
        return _hchop_count(f.sub)
    if isinstance(f, And):
        return _hchop_count(f.left) + _hchop_count(f.right)
    if isinstance(f, VChop):
        return _hchop_count(f.lower) + _hchop_count(f.upper)
    return 0


@functools.lru_cache(maxsize=None)
def _free_vars(f: Formula) -> Tuple[str, ...]:
    if isinstance(f, (Re, Cl)):
        return (f.car,)
    if isinstance(f, VarEq):
        return tuple(sorted({f.left, f.right}))
    if isinstance(f, Not):
        return _free_vars(f.sub)
    if isinstance(f, ExistsCar):
        return tuple(v for v in _free_vars(f.sub) if v != f.var)
    if isinstance(f, (And, HChop)):
        return tuple(sorted(set(_free_vars(f.left)) | set(_free_vars(f.right))))
    if isinstance(f, VChop):
        return tuple(sorted(set(_free_vars(f.lower)) | set(_free_vars(f.upper))))
    return ()


class _Ctx:
    __slots__ = ("names", "ext", "res", "clm", "mode", "memo")

    def __init__(self, ts: TrafficSnapshot, mode: str):
        self.names = tuple(sorted(ts.cars))
        self.ext = {n: (ts.cars[n].pos, ts.cars[n].pos + ts.cars[n].size) for n in self.names}
        self.res = {n: ts.cars[n].res for n in self.names}
        self.clm = {n: ts.cars[n].clm for n in self.names}
        self.mode = mode
        # nested chops revisit the same node on the same subview many
        # times, once per split combination above it; results only depend
        # on the subview and the node's free-variable bindings
        self.memo: Dict[tuple, bool] = {}

    def visible(self, r: int, t: int) -> Tuple[str, ...]:
        ext = self.ext
        return tuple(n for n in self.names if ext[n][0] <= t and ext[n][1] >= r)


def _chop_points(ctx: _Ctx, f: HChop, r: int, t: int) -> List[int]:
    if ctx.mode == "sweep":
        return list(range(r, t + 1))
    anchors = {r, t}
    for n in ctx.names:
        a, b = ctx.ext[n]
        if a <= t and b >= r:
            anchors.add(max(a, r))
            anchors.add(min(b, t))
    # split points are not always car endpoints: chopping free space, or a
    # car's extent into several atom pieces, needs interior points, one per
    # chop below this one; widening every anchor by the chop count restores
    # completeness (tests cross-check against the sweep mode)
    k = _hchop_count(f.left) + _hchop_count(f.right) + 1
    pts = set()
    for a in anchors:
        for d in range(-k, k + 1):
            s = a + d
            if r <= s <= t:
                pts.add(s)
    return sorted(pts)


def _eval(ctx: _Ctx, ll: int, ln: int, r: int, t: int, nu: Dict[str, Union[str, int]], f: Formula) -> bool:
    if isinstance(f, TrueF):
        return True
    if isinstance(f, VarEq):
        return _lookup(nu, f.left) == _lookup(nu, f.right)
    if isinstance(f, Free):
        if ln != ll or t <= r:
            return False
        for n in ctx.names:
            a, b = ctx.ext[n]
            if a <= t and b >= r and max(a, r) < t and min(b, t) > r:
                return False
        return True
    if isinstance(f, (Re, Cl)):
        if ln != ll or t <= r:
            return False
        alpha = _lookup(nu, f.car)
        ext = ctx.ext.get(alpha)
        if ext is None:
            raise EvalError(f"variable {f.car!r} valuates to unknown car {alpha!r}")
        a, b = ext
        if a > t or b < r:
            return False  # invisible here
        lanes = ctx.res[alpha] if isinstance(f, Re) else ctx.clm[alpha]
        # the single view lane must be exactly the car's lane set within the
        # band, and the visible part of the car must fill the extent
        return ll in lanes and a <= r and b >= t
    if isinstance(f, Not):
        return not _eval(ctx, ll, ln, r, t, nu, f.sub)
    if isinstance(f, And):
        return _eval(ctx, ll, ln, r, t, nu, f.left) and _eval(ctx, ll, ln, r, t, nu, f.right)
    if isinstance(f, ExistsCar):
        key = (id(f), ll, ln, r, t, tuple(nu.get(v) for v in _free_vars(f)))
        hit = ctx.memo.get(key, _MISSING)
        if hit is not _MISSING:
            return hit
        shadowed = nu.get(f.var, _MISSING)
        result = False
        for alpha in ctx.visible(r, t):
            nu[f.var] = alpha
            if _eval(ctx, ll, ln, r, t, nu, f.sub):
                result = True
                break
        _restore(nu, f.var, shadowed)
        ctx.memo[key] = result
        return result
    if isinstance(f, HChop):
        key = (id(f), ll, ln, r, t, tuple(nu.get(v) for v in _free_vars(f)))
        hit = ctx.memo.get(key, _MISSING)
        if hit is not _MISSING:
            return hit
        result = False
        for s in _chop_points(ctx, f, r, t):
            if _eval(ctx, ll, ln, r, s, nu, f.left) and _eval(ctx, ll, ln, s, t, nu, f.right):
                result = True
                break
        ctx.memo[key] = result
        return result
    if isinstance(f, VChop):
        key = (id(f), ll, ln, r, t, tuple(nu.get(v) for v in _free_vars(f)))
        hit = ctx.memo.get(key, _MISSING)
        if hit is not _MISSING:
            return hit
        result = False
        for m in range(ll - 1, ln + 1):
            if _eval(ctx, ll, m, r, t, nu, f.lower) and _eval(ctx, m + 1, ln, r, t, nu, f.upper):
                result = True
                break
        ctx.memo[key] = result
        return result
    raise MlslError(f"unknown formula node {f!r}")


_MISSING = object()


def _restore(nu: Dict[str, Union[str, int]], var: str, old):
    if old is _MISSING:
        nu.pop(var, None)
    else:
        nu[var] = old


def _lookup(nu: Mapping[str, Union[str, int]], var: str):
    try:
        return nu[var]
    except KeyError:
        raise EvalError(f"unbound variable {var!r}") from None


def eval(ts: TrafficSnapshot, view: View, nu: Valuation, phi: Formula,
         chop_mode: str = "fast") -> bool:  # noqa: A001 — name fixed by the API
    """Satisfaction of phi over the view, under valuation nu.

    nu must bind `ego` (and every other free variable of phi).  chop_mode
    selects the horizontal chop strategy: "fast" (candidate points) or
    "sweep" (every integer in the extent, slow reference).
    """
    if chop_mode not in ("fast", "sweep"):
        raise ValueError(f"chop_mode must be 'fast' or 'sweep', got {chop_mode!r}")
    if "ego" not in nu:
        raise EvalError("valuation must bind 'ego'")
    ctx = _Ctx(ts, chop_mode)
    return _eval(ctx, view.lane_lo, view.lane_hi, view.extent.lo, view.extent.hi,
                 dict(nu), phi)


def hchop_candidates(ts: TrafficSnapshot, view: View, f: HChop,
                     chop_mode: str = "fast") -> Tuple[int, ...]:
    """The chop points eval would try for f at the top of this view."""
    ctx = _Ctx(ts, chop_mode)
    return tuple(_chop_points(ctx, f, view.extent.lo, view.extent.hi))


# ---------------------------------------------------------------------------
# Interval-arithmetic collision checks (the controllers' fast guards)


@dataclass(frozen=True)
class Footprint:
    """Lane set plus occupied interval, as used by the pairwise checks."""

    lanes: FrozenSet[int]
    pos: int
    size: int


def res_footprint(ts: TrafficSnapshot, c: str) -> Footprint:
    car = ts.car(c)
    return Footprint(car.res, car.pos, car.size)


def clm_footprint(ts: TrafficSnapshot, c: str) -> Footprint:
    car = ts.car(c)
    return Footprint(car.clm, car.pos, car.size)


def intersect(p1: Footprint, p2: Footprint) -> bool:
    """Shared lane and overlapping intervals.

    The interval test is strict (merely touching endpoints do not count):
    a car whose visible part has zero length can never satisfy a re/cl
    atom, so the formula side never sees touching as overlap either.
    """
    if not (p1.lanes & p2.lanes):
        return False
    return p1.pos < p2.pos + p2.size and p2.pos < p1.pos + p1.size


def cc(ts: TrafficSnapshot, ego: str) -> bool:
    """No other car's reservation intersects ego's reservation."""
    mine = res_footprint(ts, ego)
    return not any(
        intersect(mine, res_footprint(ts, c)) for c in ts.cars if c != ego
    )


def pc(ts: TrafficSnapshot, ego: str, c: str) -> bool:
    """c's claim or reservation intersects ego's claim."""
    if c == ego:
        return False
    ts.car(c)
    mine = clm_footprint(ts, ego)
    return intersect(mine, res_footprint(ts, c)) or intersect(mine, clm_footprint(ts, c))


def cc_formula() -> Formula:
    """No car distinct from ego has a reservation overlapping ego's, anywhere."""
    return Not(
        ExistsCar(
            "c",
            And(Not(VarEq("c", "ego")), somewhere(And(Re("ego"), Re("c")))),
        )
    )


def safe_formula() -> Formula:
    """Collision freedom for ego; same shape as the collision check."""
    return cc_formula()


def pc_formula(c: str = "c") -> Formula:
    """Car c's claim or reservation overlaps ego's claim somewhere."""
    return And(
        Not(VarEq(c, "ego")),
        somewhere(And(Cl("ego"), or_(Re(c), Cl(c)))),
    )


def exists_pc_formula(var: str = "c") -> Formula:
    """Some car potentially collides with ego's claim."""
    return ExistsCar(var, pc_formula(var))
