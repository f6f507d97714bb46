"""The closed term universe that set-family fibers are populated with.

Finite values are Unit, named atoms, pairs, tuples, tagged constructor
applications and finite function graphs. Coinductive values are CoVal:
a state of a transition system whose observation is again a value (with
CoVal leaves for the next states). Equality on CoVals is bisimulation:
decided exactly when both sides close into a finite (rational) system
within the state budget, and a depth-bounded semi-decision otherwise.

Deep values (unary numerals of depth 10^5 are legitimate here) mean every
structural traversal in this module is iterative, never recursive.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Optional

from .config import DEFAULT
from .errors import KernelError, SyntaxErrorWithPos


class Value:
    __slots__ = ("_h", "_has_co", "_ik")

    def observe(self):
        raise KernelError("only coinductive values have observations")

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Value):
            return NotImplemented
        return eq_values(self, other)

    def __ne__(self, other):
        result = self.__eq__(other)
        if result is NotImplemented:
            return result
        return not result

    def __hash__(self):
        return value_hash(self)

    def __repr__(self):
        return to_text(self)


class _Unit(Value):
    __slots__ = ()

    def __init__(self):
        self._h = None
        self._ik = None
        self._has_co = False


UNIT = _Unit()


class Atom(Value):
    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name
        self._h = None
        self._ik = None
        self._has_co = False


class Pair(Value):
    __slots__ = ("fst", "snd")

    def __init__(self, fst: Value, snd: Value):
        self.fst = fst
        self.snd = snd
        self._h = None
        self._ik = None
        self._has_co = fst._has_co or snd._has_co


class Tup(Value):
    """Fixed-arity row, used for multi-component observation structures."""

    __slots__ = ("items",)

    def __init__(self, items: Iterable[Value]):
        self.items = tuple(items)
        self._h = None
        self._ik = None
        self._has_co = any(x._has_co for x in self.items)


class Tag(Value):
    __slots__ = ("name", "arg")

    def __init__(self, name: str, arg: Value):
        self.name = name
        self.arg = arg
        self._h = None
        self._ik = None
        self._has_co = arg._has_co


class FunVal(Value):
    """Finite function graph; entries are canonically sorted and keys distinct."""

    __slots__ = ("entries",)

    def __init__(self, entries: Iterable[tuple[Value, Value]]):
        entries = list(entries)
        entries.sort(key=_cmp_key)
        for (k1, _), (k2, _) in zip(entries, entries[1:]):
            if eq_values(k1, k2):
                raise KernelError(f"duplicate key in function graph: {to_text(k1)}")
        self.entries = tuple(entries)
        self._h = None
        self._ik = None
        self._has_co = any(k._has_co or v._has_co for k, v in self.entries)

    def apply(self, key: Value) -> Value:
        for k, v in self.entries:
            if eq_values(k, key):
                return v
        raise KernelError(f"key {to_text(key)} not in function graph")

    def keys(self):
        return [k for k, _ in self.entries]


_SYSTEMS: list = []  # strong refs: node keys embed id(system), so no id reuse


class CoSystem:
    """Deterministic transition system; states must be hashable."""

    def __init__(self, label: str = "sys"):
        self.label = label
        self._memo: dict = {}
        self._rat_cache: dict = {}
        self._lock = threading.Lock()
        _SYSTEMS.append(self)

    def step(self, state) -> Value:
        raise NotImplementedError

    def observe(self, state) -> Value:
        key = state_key(state)
        with self._lock:
            if key in self._memo:
                return self._memo[key]
        out = self.step(state)
        if not isinstance(out, Value):
            raise KernelError(f"system {self.label} produced a non-value observation")
        with self._lock:
            return self._memo.setdefault(key, out)


class FnSystem(CoSystem):
    def __init__(self, step_fn: Callable, label: str = "sys"):
        super().__init__(label)
        self._step_fn = step_fn

    def step(self, state) -> Value:
        return self._step_fn(state)


class ExplicitSystem(CoSystem):
    """Finite table of observations; back-references make rational values."""

    def __init__(self, table: dict, label: str = "rat"):
        super().__init__(label)
        self.table = dict(table)

    def step(self, state) -> Value:
        if state not in self.table:
            raise KernelError(f"state {state!r} not in explicit system {self.label}")
        return self.table[state]


class CoVal(Value):
    __slots__ = ("system", "state")

    def __init__(self, system: CoSystem, state):
        self.system = system
        self.state = state
        self._h = None
        self._ik = None
        self._has_co = True

    def observe(self) -> Value:
        return self.system.observe(self.state)

    def node_key(self):
        return (id(self.system), state_key(self.state))


_LITERAL = None


def co_literal(obs: Value) -> CoVal:
    """A coinductive value whose state is its own observation (finite trees)."""
    global _LITERAL
    if _LITERAL is None:
        _LITERAL = FnSystem(lambda s: s, label="literal")
    return CoVal(_LITERAL, obs)


# ---------------------------------------------------------------------------
# hashing / interning

_KIND = {_Unit: 0, Atom: 1, Pair: 2, Tup: 3, Tag: 4, FunVal: 5, CoVal: 6}

_intern_lock = threading.Lock()
_intern_table: dict = {}
_intern_next = itertools.count()


def _intern(v: Value) -> int:
    """Stable id for a CoVal-free value; equal values share the id."""
    assert not v._has_co
    with _intern_lock:
        got = _intern_table.get(v)
        if got is None:
            got = next(_intern_next)
            _intern_table[v] = got
        return got


# Intensional fingerprints: hash-consed integers identifying a value up to
# structural identity with CoVals compared by (system, state). These never
# invoke semantic equality, so every internal cache/assumption set of the
# bisimulation engine can use them without re-entering it.

_ikey_lock = threading.Lock()
_ikey_table: dict = {}
_ikey_next = itertools.count()


def _ikey_local(shape: tuple) -> int:
    with _ikey_lock:
        got = _ikey_table.get(shape)
        if got is None:
            got = next(_ikey_next)
            _ikey_table[shape] = got
        return got


def ikey(v: Value) -> int:
    if v._ik is not None:
        return v._ik
    stack = [v]
    while stack:
        t = stack[-1]
        if t._ik is not None:
            stack.pop()
            continue
        if isinstance(t, CoVal):
            t._ik = _ikey_local(("co", id(t.system), state_key(t.state)))
            stack.pop()
            continue
        kids = _children(t)
        pending = [c for c in kids if c._ik is None]
        if pending:
            stack.extend(pending)
            continue
        if isinstance(t, _Unit):
            t._ik = _ikey_local(("u",))
        elif isinstance(t, Atom):
            t._ik = _ikey_local(("a", t.name))
        elif isinstance(t, Pair):
            t._ik = _ikey_local(("p", t.fst._ik, t.snd._ik))
        elif isinstance(t, Tup):
            t._ik = _ikey_local(("t",) + tuple(x._ik for x in t.items))
        elif isinstance(t, Tag):
            t._ik = _ikey_local(("g", t.name, t.arg._ik))
        elif isinstance(t, FunVal):
            t._ik = _ikey_local(("f",) + tuple(
                (k._ik, w._ik) for k, w in t.entries))
        else:  # pragma: no cover
            raise KernelError(f"unknown value kind {type(t)}")
        stack.pop()
    return v._ik


def state_key(state):
    """Hashable intensional key for a system state (plain data or values)."""
    if isinstance(state, Value):
        return ("v", ikey(state))
    if isinstance(state, tuple):
        return ("t",) + tuple(state_key(x) for x in state)
    return state


def value_hash(v: Value) -> int:
    if v._h is not None:
        return v._h
    stack = [v]
    while stack:
        t = stack[-1]
        if t._h is not None:
            stack.pop()
            continue
        if isinstance(t, CoVal):
            # Bounded observation skeleton: bisimilar values agree on it.
            t._h = hash(("co", repr(skeleton(t))))
            stack.pop()
            continue
        kids = _children(t)
        pending = [c for c in kids if c._h is None]
        if pending:
            stack.extend(pending)
            continue
        if isinstance(t, _Unit):
            t._h = hash(("unit",))
        elif isinstance(t, Atom):
            t._h = hash(("atom", t.name))
        elif isinstance(t, Pair):
            t._h = hash(("pair", t.fst._h, t.snd._h))
        elif isinstance(t, Tup):
            t._h = hash(("tup", tuple(x._h for x in t.items)))
        elif isinstance(t, Tag):
            t._h = hash(("tag", t.name, t.arg._h))
        elif isinstance(t, FunVal):
            t._h = hash(("fun", len(t.entries),
                         frozenset((k._h, w._h) for k, w in t.entries)))
        else:  # pragma: no cover
            raise KernelError(f"unhashable value kind {type(t)}")
        stack.pop()
    return v._h


def _children(v: Value) -> list[Value]:
    if isinstance(v, Pair):
        return [v.fst, v.snd]
    if isinstance(v, Tup):
        return list(v.items)
    if isinstance(v, Tag):
        return [v.arg]
    if isinstance(v, FunVal):
        out = []
        for k, w in v.entries:
            out.append(k)
            out.append(w)
        return out
    return []


def skeleton(v: Value, co_depth: int = 2, node_budget: int = 64):
    """Bounded structural summary: CoVals are cut at ``co_depth`` rounds of
    observation and big finite values at ``node_budget`` nodes. Deterministic
    and identical for bisimilar values."""

    budget = [node_budget]

    def walk(t: Value, d: int):
        if budget[0] <= 0:
            return ("cut",)
        budget[0] -= 1
        if isinstance(t, _Unit):
            return ("u",)
        if isinstance(t, Atom):
            return ("a", t.name)
        if isinstance(t, Pair):
            return ("p", walk(t.fst, d), walk(t.snd, d))
        if isinstance(t, Tup):
            return ("t",) + tuple(walk(x, d) for x in t.items)
        if isinstance(t, Tag):
            return ("g", t.name, walk(t.arg, d))
        if isinstance(t, FunVal):
            parts = sorted(
                (walk(k, d), walk(w, d)) for k, w in t.entries
            )
            return ("f", len(t.entries)) + tuple(parts)
        if isinstance(t, CoVal):
            if d <= 0:
                return ("co",)
            return ("co", walk(t.observe(), d - 1))
        raise KernelError(f"unknown value kind {type(t)}")

    return walk(v, co_depth)


# ---------------------------------------------------------------------------
# deterministic total preorder (for canonical enumeration and FunVal sorting)

def _tokens(v: Value):
    """Iterative DFS token stream; comparing streams compares values."""
    stack = [v]
    while stack:
        t = stack.pop()
        if isinstance(t, _Unit):
            yield (0, "")
        elif isinstance(t, Atom):
            yield (1, t.name)
        elif isinstance(t, Pair):
            yield (2, "")
            stack.append(t.snd)
            stack.append(t.fst)
        elif isinstance(t, Tup):
            yield (3, str(len(t.items)))
            stack.extend(reversed(t.items))
        elif isinstance(t, Tag):
            yield (4, t.name)
            stack.append(t.arg)
        elif isinstance(t, FunVal):
            yield (5, str(len(t.entries)))
            for k, w in reversed(t.entries):
                stack.append(w)
                stack.append(k)
        elif isinstance(t, CoVal):
            yield (6, _co_order_key(t))
        else:
            raise KernelError(f"unknown value kind {type(t)}")


def _co_order_key(v: CoVal) -> str:
    form = rational_form(v)
    if form is not None:
        return "r" + repr(form)
    return "g" + repr(skeleton(v, co_depth=4))


def cmp_values(a: Value, b: Value) -> int:
    """-1/0/+1; 0 coincides with equality except for generator-backed
    CoVals that only agree up to the comparison horizon."""
    for ta, tb in itertools.zip_longest(_tokens(a), _tokens(b)):
        if ta is None:
            return -1
        if tb is None:
            return 1
        if ta < tb:
            return -1
        if ta > tb:
            return 1
    return 0


def _cmp_key(entry):
    return _CmpWrap(entry[0])


class _CmpWrap:
    __slots__ = ("v",)

    def __init__(self, v):
        self.v = v

    def __lt__(self, other):
        return cmp_values(self.v, other.v) < 0


def sort_values(vs: Iterable[Value]) -> list[Value]:
    return sorted(vs, key=lambda v: _CmpWrap(v))


# ---------------------------------------------------------------------------
# rational closure and canonical minimized form

def _co_leaves(v: Value) -> list[CoVal]:
    """CoVal leaves of a value in deterministic traversal order."""
    out: list[CoVal] = []
    stack = [v]
    while stack:
        t = stack.pop()
        if isinstance(t, CoVal):
            out.append(t)
        elif t._has_co:
            stack.extend(reversed(_children(t)))
    return out


def _shape(v: Value, refs: dict) -> tuple:
    """Structure of an observation with CoVal leaves replaced by successor
    positions; CoVal-free subvalues are interned whole."""
    if not v._has_co:
        return ("leaf", _intern(v))
    if isinstance(v, CoVal):
        key = v.node_key()
        return ("ref", refs[key])
    if isinstance(v, Pair):
        return ("pair", _shape(v.fst, refs), _shape(v.snd, refs))
    if isinstance(v, Tup):
        return ("tup",) + tuple(_shape(x, refs) for x in v.items)
    if isinstance(v, Tag):
        return ("tag", v.name, _shape(v.arg, refs))
    if isinstance(v, FunVal):
        return ("fun",) + tuple(
            (_shape(k, refs), _shape(w, refs)) for k, w in v.entries
        )
    raise KernelError(f"unknown value kind {type(v)}")


def _explore(v: CoVal, max_states: int):
    """Reachable transition graph of ``v``: node -> (shape, successor nodes).

    Returns None when more than ``max_states`` nodes are reachable (the
    value then stays generator-backed)."""
    nodes: dict = {}
    order: list = []
    frontier = [v]
    seen = {v.node_key(): v}
    while frontier:
        cur = frontier.pop(0)
        key = cur.node_key()
        if key in nodes:
            continue
        if len(nodes) >= max_states:
            return None
        obs = cur.observe()
        succs = _co_leaves(obs)
        refs = {}
        ordered_succs = []
        for s in succs:
            skey = s.node_key()
            if skey not in refs:
                refs[skey] = len(ordered_succs)
                ordered_succs.append(s)
        nodes[key] = (_shape(obs, refs), [s.node_key() for s in ordered_succs])
        order.append(key)
        for s in ordered_succs:
            if s.node_key() not in seen:
                seen[s.node_key()] = s
                frontier.append(s)
    return nodes, order


def _subst_shape(shape, blocks: list):
    """Replace positional ('ref', i) leaves by ('blk', block-id) so that the
    signature is insensitive to sharing between equal successors."""
    if not isinstance(shape, tuple):
        return shape
    if shape and shape[0] == "ref":
        return ("blk", blocks[shape[1]])
    if shape and shape[0] == "leaf":
        return shape
    return tuple(_subst_shape(x, blocks) if isinstance(x, tuple) else x
                 for x in shape)


def _blocks_in_order(shape) -> list:
    out = []
    stack = [shape]
    while stack:
        t = stack.pop(0)
        if not isinstance(t, tuple):
            continue
        if t and t[0] == "blk":
            if t[1] not in out:
                out.append(t[1])
            continue
        stack = [x for x in t if isinstance(x, tuple)] + stack
    return out


def _minimize(nodes: dict, root):
    """Partition refinement + canonical numbering from the root."""
    block = {k: 0 for k in nodes}
    while True:
        sigs = {}
        for k, (shape, succs) in nodes.items():
            sigs[k] = _subst_shape(shape, [block[s] for s in succs])
        mapping = {}
        newblock = {}
        for k in nodes:
            s = sigs[k]
            if s not in mapping:
                mapping[s] = len(mapping)
            newblock[k] = mapping[s]
        if newblock == block:
            break
        block = newblock
    # canonical numbering: DFS over blocks from the root, in the order
    # successor blocks appear in the (substituted) observation shape
    rep = {}
    for k in nodes:
        rep.setdefault(block[k], k)
    sig_of = {}
    for b, k in rep.items():
        shape, succs = nodes[k]
        sig_of[b] = _subst_shape(shape, [block[s] for s in succs])
    number = {}
    order = []
    stack = [block[root]]
    while stack:
        b = stack.pop()
        if b in number:
            continue
        number[b] = len(number)
        order.append(b)
        for s in reversed(_blocks_in_order(sig_of[b])):
            if s not in number:
                stack.append(s)
    canon = []

    def renumber(shape):
        if not isinstance(shape, tuple):
            return shape
        if shape and shape[0] == "blk":
            return ("blk", number[shape[1]])
        return tuple(renumber(x) if isinstance(x, tuple) else x for x in shape)

    for b in order:
        canon.append(renumber(sig_of[b]))
    return tuple(canon)


def rational_form(v: CoVal, max_states: Optional[int] = None):
    """Canonical minimized form of ``v`` if its reachable state space is
    finite within the budget, else None. Bisimilar values have equal forms."""
    max_states = max_states if max_states is not None else DEFAULT.rational_state_budget
    cache = v.system._rat_cache
    skey = state_key(v.state)
    with v.system._lock:
        if skey in cache:
            return cache[skey]
    explored = _explore(v, max_states)
    form = None
    if explored is not None:
        nodes, _ = explored
        form = _minimize(nodes, v.node_key())
    with v.system._lock:
        cache.setdefault(skey, form)
    return form


def is_rational(v: Value) -> bool:
    return isinstance(v, CoVal) and rational_form(v) is not None


# ---------------------------------------------------------------------------
# bisimulation / equality

class Verdict:
    """Three-valued result: True, False (with witness), or None (inconclusive)."""

    __slots__ = ("result", "witness")

    def __init__(self, result, witness: str = ""):
        self.result = result
        self.witness = witness

    def __bool__(self):
        return self.result is True

    def __repr__(self):
        if self.result is True:
            return "Verdict(equal)"
        if self.result is False:
            return f"Verdict(different at {self.witness})"
        return "Verdict(inconclusive)"


def bisim(a: Value, b: Value, depth: Optional[int] = None) -> Verdict:
    """Bisimulation check. Exact whenever both sides are rational; otherwise
    observations are compared ``depth`` rounds deep (default from config)."""
    depth = depth if depth is not None else DEFAULT.index_equality_depth
    unknown = [False]
    assumed: set = set()

    # Work items: (a, b, remaining_depth, exact_mode, path)
    stack = [(a, b, depth, None, "")]
    while stack:
        x, y, d, exact, path = stack.pop()
        if x is y:
            continue
        if isinstance(x, CoVal) != isinstance(y, CoVal):
            return Verdict(False, path or "<root>")
        if isinstance(x, CoVal):
            pair = (x.node_key(), y.node_key())
            if pair[0] == pair[1] or pair in assumed:
                continue
            if exact is None:
                fx, fy = rational_form(x), rational_form(y)
                if fx is not None and fy is not None:
                    if fx == fy:
                        continue
                    # Minimal canonical forms are complete for rational values.
                    return Verdict(False, path or "<root>")
                exact = False
            if d <= 0:
                unknown[0] = True
                continue
            assumed.add(pair)
            stack.append((x.observe(), y.observe(), d - 1, exact, path + "."))
            continue
        if type(x) is not type(y):
            return Verdict(False, path or "<root>")
        if isinstance(x, _Unit):
            continue
        if isinstance(x, Atom):
            if x.name != y.name:
                return Verdict(False, path or "<root>")
            continue
        if isinstance(x, Pair):
            stack.append((x.snd, y.snd, d, exact, path + "/2"))
            stack.append((x.fst, y.fst, d, exact, path + "/1"))
            continue
        if isinstance(x, Tup):
            if len(x.items) != len(y.items):
                return Verdict(False, path or "<root>")
            for i in range(len(x.items) - 1, -1, -1):
                stack.append((x.items[i], y.items[i], d, exact, f"{path}/{i}"))
            continue
        if isinstance(x, Tag):
            if x.name != y.name:
                return Verdict(False, f"{path}:{x.name}!={y.name}")
            stack.append((x.arg, y.arg, d, exact, path + "/" + x.name))
            continue
        if isinstance(x, FunVal):
            if len(x.entries) != len(y.entries):
                return Verdict(False, path or "<root>")
            matched = _match_funvals(x, y, d)
            if matched is None:
                return Verdict(False, path + "/keys")
            for vx, vy, klabel in reversed(matched):
                stack.append((vx, vy, d, exact, f"{path}@{klabel}"))
            continue
        raise KernelError(f"unknown value kind {type(x)}")
    if unknown[0]:
        return Verdict(None)
    return Verdict(True)


def _match_funvals(x: FunVal, y: FunVal, depth: int):
    """Bijective key matching; keys are index/position values and stay shallow."""
    used = [False] * len(y.entries)
    out = []
    for k, vx in x.entries:
        hit = -1
        for j, (k2, _) in enumerate(y.entries):
            if used[j]:
                continue
            if bisim(k, k2, depth=depth).result is True:
                hit = j
                break
        if hit < 0:
            return None
        used[hit] = True
        out.append((vx, y.entries[hit][1], to_text(k)))
    return out


def eq_values(a: Value, b: Value, depth: Optional[int] = None) -> bool:
    """Equality; a semi-decision on generator-backed values: inconclusive
    comparisons (no difference within the horizon) count as equal."""
    if a is b:
        return True
    if not a._has_co and not b._has_co:
        for ta, tb in itertools.zip_longest(_tokens(a), _tokens(b)):
            if ta != tb:
                return False
        return True
    return bisim(a, b, depth=depth).result is not False


# ---------------------------------------------------------------------------
# text form: deterministic, round-trippable

def to_text(v: Value) -> str:
    pieces: list[str] = []
    _emit(v, pieces, {}, [0])
    return "".join(pieces)


def _emit(v: Value, out: list[str], labels: dict, counter: list[int]):
    # Iterative with an instruction stack; labels assign @n names to CoVals.
    stack: list = [("v", v)]
    while stack:
        op = stack.pop()
        if op[0] == "s":
            out.append(op[1])
            continue
        t = op[1]
        if isinstance(t, _Unit):
            out.append("*")
        elif isinstance(t, Atom):
            out.append(t.name)
        elif isinstance(t, Pair):
            out.append("(")
            stack.append(("s", ")"))
            stack.append(("v", t.snd))
            stack.append(("s", ", "))
            stack.append(("v", t.fst))
        elif isinstance(t, Tup):
            out.append("<")
            stack.append(("s", ">"))
            for i, x in enumerate(reversed(t.items)):
                stack.append(("v", x))
                if i != len(t.items) - 1:
                    stack.append(("s", ", "))
        elif isinstance(t, Tag):
            out.append(t.name)
            out.append("(")
            stack.append(("s", ")"))
            stack.append(("v", t.arg))
        elif isinstance(t, FunVal):
            out.append("{")
            stack.append(("s", "}"))
            entries = list(t.entries)
            for i, (k, w) in enumerate(reversed(entries)):
                stack.append(("v", w))
                stack.append(("s", " -> "))
                stack.append(("v", k))
                if i != len(entries) - 1:
                    stack.append(("s", ", "))
        elif isinstance(t, CoVal):
            key = t.node_key()
            if key in labels:
                out.append(f"^{labels[key]}")
                continue
            form = rational_form(t)
            if form is None:
                # generator-backed: bounded, not round-trippable
                labels[key] = counter[0]
                counter[0] += 1
                out.append(f"~{labels[key]}:")
                stack.append(("v", _truncate_obs(t.observe(), 3)))
            else:
                labels[key] = counter[0]
                counter[0] += 1
                out.append(f"@{labels[key]}:")
                stack.append(("v", t.observe()))
        else:
            raise KernelError(f"unknown value kind {type(t)}")


def _truncate_obs(v: Value, depth: int) -> Value:
    if isinstance(v, CoVal):
        if depth <= 0:
            return Atom("...")
        return co_literal(_truncate_obs(v.observe(), depth - 1))
    if isinstance(v, Pair):
        return Pair(_truncate_obs(v.fst, depth), _truncate_obs(v.snd, depth))
    if isinstance(v, Tup):
        return Tup(_truncate_obs(x, depth) for x in v.items)
    if isinstance(v, Tag):
        return Tag(v.name, _truncate_obs(v.arg, depth))
    if isinstance(v, FunVal):
        return FunVal((k, _truncate_obs(w, depth)) for k, w in v.entries)
    return v


class _TermParser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def error(self, msg):
        raise SyntaxErrorWithPos(msg, self.line, self.col)

    def _advance(self, n):
        for ch in self.text[self.pos:self.pos + n]:
            if ch == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
        self.pos += n

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self._advance(1)

    def peek(self):
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def eat(self, s: str):
        self.skip_ws()
        if not self.text.startswith(s, self.pos):
            self.error(f"expected {s!r}")
        self._advance(len(s))

    def ident(self) -> str:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and (
            self.text[self.pos].isalnum() or self.text[self.pos] in "_'"
        ):
            self._advance(1)
        if start == self.pos:
            self.error("expected identifier")
        return self.text[start:self.pos]

    def number(self) -> int:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self._advance(1)
        if start == self.pos:
            self.error("expected number")
        return int(self.text[start:self.pos])

    def term(self, env: dict) -> Value:
        c = self.peek()
        if c == "*":
            self.eat("*")
            return UNIT
        if c == "(":
            self.eat("(")
            a = self.term(env)
            self.eat(",")
            b = self.term(env)
            self.eat(")")
            return Pair(a, b)
        if c == "<":
            self.eat("<")
            items = []
            if self.peek() != ">":
                items.append(self.term(env))
                while self.peek() == ",":
                    self.eat(",")
                    items.append(self.term(env))
            self.eat(">")
            return Tup(items)
        if c == "{":
            self.eat("{")
            entries = []
            if self.peek() != "}":
                while True:
                    k = self.term(env)
                    self.eat("->")
                    w = self.term(env)
                    entries.append((k, w))
                    if self.peek() != ",":
                        break
                    self.eat(",")
            self.eat("}")
            return FunVal(entries)
        if c == "@":
            self.eat("@")
            label = self.number()
            self.eat(":")
            if label in env:
                self.error(f"duplicate label @{label}")
            env[label] = True
            body = self.term(env)
            return Tag(f"__lbl_{label}__", body)
        if c == "^":
            self.eat("^")
            label = self.number()
            if label not in env:
                self.error(f"unbound back-reference ^{label}")
            return Atom(f"__ref_{label}__")
        if c == "":
            self.error("unexpected end of input")
        name = self.ident()
        if self.peek() == "(":
            self.eat("(")
            arg = self.term(env)
            self.eat(")")
            return Tag(name, arg)
        return Atom(name)


def _tie_knots(v: Value) -> Value:
    """Replace the parser's @label/^label markers by one shared explicit
    system, so cross- and back-references all resolve together."""
    system = ExplicitSystem({}, label="parsed")

    def build(t: Value) -> Value:
        if isinstance(t, Atom) and t.name.startswith("__ref_"):
            return CoVal(system, int(t.name[6:-2]))
        if isinstance(t, Tag) and t.name.startswith("__lbl_"):
            label = int(t.name[6:-2])
            me = CoVal(system, label)
            system.table[label] = build(t.arg)
            return me
        if isinstance(t, Pair):
            return Pair(build(t.fst), build(t.snd))
        if isinstance(t, Tup):
            return Tup(build(x) for x in t.items)
        if isinstance(t, Tag):
            return Tag(t.name, build(t.arg))
        if isinstance(t, FunVal):
            return FunVal((build(k), build(w)) for k, w in t.entries)
        return t

    return build(v)


def parse_term(text: str) -> Value:
    p = _TermParser(text)
    v = p.term({})
    p.skip_ws()
    if p.pos != len(p.text):
        p.error("trailing input after term")
    return _tie_knots(v)
