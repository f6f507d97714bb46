"""Set families indexed by enumerable index sets, and their morphisms.

This is the concrete model everything else is interpreted into: fibers are
(budgeted) enumerable sets of values, reindexing relabels fibers along a
base map, comprehension flattens a family into a new index set of pairs.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional

from .config import DEFAULT
from .errors import BudgetExceeded, IndexMismatch, KernelError, NotFinite
from .values import UNIT, Pair, Tag, Value, eq_values, sort_values, to_text


# ---------------------------------------------------------------------------
# fair enumeration helpers

def fair_interleave(factories: list[Callable[[], Iterator[Value]]]) -> Iterator[Value]:
    """Round-robin over possibly infinite iterators."""
    iters = [f() for f in factories]
    while iters:
        nxt = []
        for it in iters:
            try:
                yield next(it)
            except StopIteration:
                continue
            nxt.append(it)
        iters = nxt


def fair_pairs(fa: Callable[[], Iterator[Value]],
               fb: Callable[[], Iterator[Value]]) -> Iterator[tuple]:
    """Dovetailed cartesian product, complete even when both sides are infinite."""
    xs: list = []
    ys: list = []
    ita, itb = fa(), fb()
    a_done = b_done = False
    n = 0
    while True:
        if not a_done:
            try:
                xs.append(next(ita))
            except StopIteration:
                a_done = True
        if not b_done:
            try:
                ys.append(next(itb))
            except StopIteration:
                b_done = True
        if (a_done and not xs) or (b_done and not ys):
            return
        # anti-diagonal n: every pair (i, j) with i + j = n is ready by step n
        for i in range(len(xs)):
            j = n - i
            if 0 <= j < len(ys):
                yield (xs[i], ys[j])
        if a_done and b_done and n >= len(xs) + len(ys) - 2:
            return
        n += 1


class _Dedup:
    """Duplicate filter under value equality (hash-bucketed)."""

    def __init__(self):
        self.buckets: dict = {}

    def add(self, v: Value) -> bool:
        h = hash(v)
        bucket = self.buckets.setdefault(h, [])
        for w in bucket:
            if eq_values(w, v):
                return False
        bucket.append(v)
        return True


def dedup(it: Iterator[Value]) -> Iterator[Value]:
    seen = _Dedup()
    for v in it:
        if seen.add(v):
            yield v


# ---------------------------------------------------------------------------
# index sets

class IndexSet:
    name: str = "?"

    def iter_values(self) -> Iterator[Value]:
        raise NotImplementedError

    def contains(self, v: Value, budget: Optional[int] = None) -> bool:
        budget = budget if budget is not None else DEFAULT.enumeration_budget
        for w in itertools.islice(self.iter_values(), budget):
            if eq_values(w, v):
                return True
        return False

    def eq(self, a: Value, b: Value) -> bool:
        return eq_values(a, b)

    def try_list(self, budget: Optional[int] = None) -> Optional[list[Value]]:
        """Complete enumeration if it exhausts within the budget, else None."""
        budget = budget if budget is not None else DEFAULT.enumeration_budget
        out = []
        try:
            for v in self.iter_values():
                out.append(v)
                if len(out) > budget:
                    return None
        except BudgetExceeded:
            return None
        return out

    def list(self, budget: Optional[int] = None) -> list[Value]:
        got = self.try_list(budget)
        if got is None:
            raise NotFinite(f"index set {self.name} has no finite enumeration "
                            f"within budget")
        return got

    def sample(self, n: int) -> list[Value]:
        return list(itertools.islice(self.iter_values(), n))

    def size(self, budget: Optional[int] = None) -> int:
        return len(self.list(budget))

    def same(self, other: "IndexSet") -> bool:
        if self is other:
            return True
        a = self.try_list(64)
        b = other.try_list(64)
        if a is None or b is None:
            return False
        if len(a) != len(b):
            return False
        return all(any(eq_values(x, y) for y in b) for x in a)

    def __repr__(self):
        return f"IndexSet({self.name})"


class FiniteIndexSet(IndexSet):
    def __init__(self, name: str, values: Iterable[Value]):
        self.name = name
        vals = list(values)
        seen = _Dedup()
        for v in vals:
            if not seen.add(v):
                raise KernelError(f"duplicate element {to_text(v)} in {name}")
        self.values = vals

    def iter_values(self):
        return iter(self.values)

    def contains(self, v, budget=None):
        return any(eq_values(w, v) for w in self.values)


class UnitIndexSet(FiniteIndexSet):
    def __init__(self):
        super().__init__("Unit", [UNIT])


UNIT_SET = UnitIndexSet()


def fin(n: int, prefix: str = "a") -> FiniteIndexSet:
    from .values import Atom
    return FiniteIndexSet(f"{prefix}{n}", [Atom(f"{prefix}{i}") for i in range(n)])


class ComprehensionIndexSet(IndexSet):
    """Total space of a family: pairs (i, x) with x in the fiber at i."""

    def __init__(self, fam: "FamObject", name: Optional[str] = None):
        self.fam = fam
        self.name = name or f"[{fam.name}]"

    def iter_values(self):
        def per_index(i):
            return (Pair(i, x) for x in self.fam.fiber(i).iter_values())

        # grow the set of per-index iterators fairly as the base enumerates;
        # the spin guard turns a provably-unproductive walk over an infinite
        # base into a budget error instead of a hang
        active: list[Iterator[Value]] = []
        base_iter = self.fam.base.iter_values()
        base_done = False
        spins = 0
        spin_limit = DEFAULT.enumeration_budget * 4
        while True:
            if not base_done:
                try:
                    active.append(per_index(next(base_iter)))
                except StopIteration:
                    base_done = True
            if base_done and not active:
                return
            nxt = []
            for it in active:
                try:
                    yield next(it)
                    spins = 0
                    nxt.append(it)
                except StopIteration:
                    pass
            active = nxt
            spins += 1
            if spins > spin_limit:
                raise BudgetExceeded(
                    f"comprehension of {self.fam.name}: enumeration made no "
                    f"progress within budget")

    def contains(self, v, budget=None):
        if not isinstance(v, Pair):
            return False
        if not self.fam.base.contains(v.fst, budget):
            return False
        got = self.fam.fiber(v.fst).contains(v.snd, budget)
        return bool(got)


class ProductIndexSet(IndexSet):
    def __init__(self, left: IndexSet, right: IndexSet):
        self.left = left
        self.right = right
        self.name = f"({left.name} x {right.name})"

    def iter_values(self):
        for a, b in fair_pairs(self.left.iter_values, self.right.iter_values):
            yield Pair(a, b)

    def contains(self, v, budget=None):
        return (isinstance(v, Pair) and self.left.contains(v.fst, budget)
                and self.right.contains(v.snd, budget))


class SumIndexSet(IndexSet):
    def __init__(self, parts: list[tuple[str, IndexSet]], name: Optional[str] = None):
        self.parts = parts
        self.name = name or "+".join(s.name for _, s in parts)

    def iter_values(self):
        def mk(tag, s):
            return lambda: (Tag(tag, v) for v in s.iter_values())

        return fair_interleave([mk(tag, s) for tag, s in self.parts])

    def contains(self, v, budget=None):
        if not isinstance(v, Tag):
            return False
        for tag, s in self.parts:
            if tag == v.name:
                return s.contains(v.arg, budget)
        return False


class FilteredIndexSet(IndexSet):
    """Budget-enumerated subset of another index set."""

    def __init__(self, base: IndexSet, pred: Callable[[Value], bool], name: str):
        self.base = base
        self.pred = pred
        self.name = name

    def iter_values(self):
        return (v for v in self.base.iter_values() if self.pred(v))

    def contains(self, v, budget=None):
        return self.base.contains(v, budget) and self.pred(v)


# ---------------------------------------------------------------------------
# base maps

class BaseMap:
    """Total map between index sets; may carry an exact preimage procedure."""

    def __init__(self, name: str, dom: IndexSet, cod: IndexSet,
                 fn: Callable[[Value], Value],
                 preimage_fn: Optional[Callable[[Value], list[Value]]] = None):
        self.name = name
        self.dom = dom
        self.cod = cod
        self.fn = fn
        self.preimage_fn = preimage_fn
        self._pre_cache: dict = {}
        self._lock = threading.Lock()

    def __call__(self, v: Value) -> Value:
        return self.fn(v)

    def apply_checked(self, v: Value) -> Value:
        out = self.fn(v)
        if not self.cod.contains(out, 4096):
            raise IndexMismatch(
                f"{self.name} maps {to_text(v)} to {to_text(out)} outside {self.cod.name}")
        return out

    def preimage(self, j: Value, budget: Optional[int] = None) -> list[Value]:
        """All i with fn(i) = j; exact. Falls back to enumerating the domain,
        which is only complete when the enumeration exhausts."""
        with self._lock:
            for key, got in self._pre_cache.items():
                if eq_values(key, j):
                    return got
        if self.preimage_fn is not None:
            out = self.preimage_fn(j)
        else:
            dom = self.dom.try_list(budget)
            if dom is None:
                raise BudgetExceeded(
                    f"cannot enumerate complete preimage of {to_text(j)} under "
                    f"{self.name}: domain {self.dom.name} exceeds budget")
            out = [i for i in dom if eq_values(self.fn(i), j)]
        with self._lock:
            self._pre_cache[j] = out
        return out

    def then(self, other: "BaseMap") -> "BaseMap":
        """self ; other (apply self first)."""
        if not self.cod.same(other.dom):
            raise IndexMismatch(
                f"cannot compose {other.name} after {self.name}: "
                f"{self.cod.name} != {other.dom.name}")
        pre = None
        if self.preimage_fn is not None and other.preimage_fn is not None:
            def pre(k, _s=self, _o=other):
                out = []
                for j in _o.preimage(k):
                    out.extend(_s.preimage(j))
                return out
        return BaseMap(f"({other.name} . {self.name})", self.dom, other.cod,
                       lambda v: other.fn(self.fn(v)), pre)

    @staticmethod
    def identity(s: IndexSet) -> "BaseMap":
        return BaseMap(f"id_{s.name}", s, s, lambda v: v, lambda j: [j])

    @staticmethod
    def from_graph(name: str, dom: IndexSet, cod: IndexSet,
                   graph: list[tuple[Value, Value]]) -> "BaseMap":
        def fn(v):
            for k, w in graph:
                if eq_values(k, v):
                    return w
            raise IndexMismatch(f"{name} undefined at {to_text(v)}")

        def pre(j):
            return [k for k, w in graph if eq_values(w, j)]

        return BaseMap(name, dom, cod, fn, pre)

    @staticmethod
    def constant(name: str, dom: IndexSet, cod: IndexSet, value: Value) -> "BaseMap":
        return BaseMap(name, dom, cod, lambda _v: value,
                       lambda j: dom.list() if eq_values(j, value) else [])

    def __repr__(self):
        return f"BaseMap({self.name}: {self.dom.name} -> {self.cod.name})"


def bang(s: IndexSet) -> BaseMap:
    """The unique map into the unit index set."""
    return BaseMap(f"!_{s.name}", s, UNIT_SET, lambda _v: UNIT,
                   lambda j: s.list())


# ---------------------------------------------------------------------------
# fibers and families

class FiberSet:
    def iter_values(self) -> Iterator[Value]:
        raise NotImplementedError

    def contains(self, v: Value, budget: Optional[int] = None):
        budget = budget if budget is not None else DEFAULT.enumeration_budget
        count = 0
        for w in self.iter_values():
            if eq_values(w, v):
                return True
            count += 1
            if count >= budget:
                return None
        return False

    def try_list(self, budget: Optional[int] = None) -> Optional[list[Value]]:
        budget = budget if budget is not None else DEFAULT.enumeration_budget
        out = []
        for v in self.iter_values():
            out.append(v)
            if len(out) > budget:
                return None
        return out

    def list(self, budget: Optional[int] = None) -> list[Value]:
        got = self.try_list(budget)
        if got is None:
            raise BudgetExceeded("fiber enumeration exceeded budget",
                                 partial=self.sample(budget or DEFAULT.enumeration_budget))
        return got

    def sample(self, n: int) -> list[Value]:
        return list(itertools.islice(self.iter_values(), n))

    def card(self, budget: Optional[int] = None) -> int:
        return len(self.list(budget))


class FiniteFiber(FiberSet):
    def __init__(self, values: Iterable[Value], *, sort: bool = True):
        vals = list(values)
        seen = _Dedup()
        vals = [v for v in vals if seen.add(v)]
        self.values = sort_values(vals) if sort else vals

    def iter_values(self):
        return iter(self.values)

    def contains(self, v, budget=None):
        return any(eq_values(w, v) for w in self.values)


EMPTY_FIBER = FiniteFiber([])


class LazyFiber(FiberSet):
    """Fiber given by a fair iterator factory, with optional exact membership."""

    def __init__(self, factory: Callable[[], Iterator[Value]],
                 membership: Optional[Callable[[Value], Optional[bool]]] = None):
        self.factory = factory
        self.membership = membership

    def iter_values(self):
        return self.factory()

    def contains(self, v, budget=None):
        if self.membership is not None:
            return self.membership(v)
        return super().contains(v, budget)


class FamObject:
    """A set family: an index set plus a fiber procedure."""

    def __init__(self, base: IndexSet, fiber_fn: Callable[[Value], FiberSet],
                 name: str = "X"):
        self.base = base
        self._fiber_fn = fiber_fn
        self.name = name
        self._cache: dict = {}
        self._lock = threading.Lock()

    def fiber(self, i: Value) -> FiberSet:
        h = hash(i)
        with self._lock:
            bucket = self._cache.setdefault(h, [])
            for k, f in bucket:
                if eq_values(k, i):
                    return f
        f = self._fiber_fn(i)
        with self._lock:
            bucket = self._cache.setdefault(h, [])
            for k, g in bucket:
                if eq_values(k, i):
                    return g
            bucket.append((i, f))
        return f

    @staticmethod
    def from_dict(base: IndexSet, fibers: dict, name: str = "X") -> "FamObject":
        table = [(k, FiniteFiber(vs)) for k, vs in fibers.items()]

        def fiber_fn(i):
            for k, f in table:
                if eq_values(k, i):
                    return f
            return EMPTY_FIBER

        return FamObject(base, fiber_fn, name)

    @staticmethod
    def constant(base: IndexSet, values: Iterable[Value], name: str = "K") -> "FamObject":
        f = FiniteFiber(values)
        return FamObject(base, lambda _i: f, name)

    def total_card(self, budget: Optional[int] = None) -> int:
        return sum(self.fiber(i).card(budget) for i in self.base.list(budget))

    def __repr__(self):
        return f"FamObject({self.name} over {self.base.name})"


def unit_fam(base: IndexSet, name: str = "1") -> FamObject:
    return FamObject.constant(base, [UNIT], name)


def empty_fam(base: IndexSet, name: str = "0") -> FamObject:
    return FamObject(base, lambda _i: EMPTY_FIBER, name)


class FamMorphism:
    """(u, {f_i}) : components f_i : X_i -> Y_{u(i)}."""

    def __init__(self, dom: FamObject, cod: FamObject, base: BaseMap,
                 component: Callable[[Value, Value], Value], name: str = "f"):
        if not base.dom.same(dom.base) or not base.cod.same(cod.base):
            raise IndexMismatch(
                f"morphism {name}: base map {base.name} does not match "
                f"{dom.base.name} -> {cod.base.name}")
        self.dom = dom
        self.cod = cod
        self.base = base
        self.component = component
        self.name = name

    def apply(self, i: Value, x: Value) -> Value:
        return self.component(i, x)

    def apply_checked(self, i: Value, x: Value) -> Value:
        y = self.component(i, x)
        j = self.base(i)
        member = self.cod.fiber(j).contains(y, 4096)
        if member is False:
            raise IndexMismatch(
                f"{self.name} sends {to_text(x)} at {to_text(i)} to "
                f"{to_text(y)} outside the fiber at {to_text(j)}")
        return y

    def then(self, other: "FamMorphism") -> "FamMorphism":
        return compose(other, self)

    def __repr__(self):
        return f"FamMorphism({self.name}: {self.dom.name} -> {self.cod.name})"


def identity(x: FamObject) -> FamMorphism:
    return FamMorphism(x, x, BaseMap.identity(x.base), lambda _i, v: v,
                       name=f"id_{x.name}")


def compose(g: FamMorphism, f: FamMorphism) -> FamMorphism:
    """g after f, composing base maps and components pointwise."""
    if not f.cod.base.same(g.dom.base):
        raise IndexMismatch(
            f"cannot compose {g.name} after {f.name}: codomain base "
            f"{f.cod.base.name} != domain base {g.dom.base.name}")

    def component(i, x):
        return g.component(f.base(i), f.component(i, x))

    return FamMorphism(f.dom, g.cod, f.base.then(g.base), component,
                       name=f"({g.name} . {f.name})")


def reindex(u: BaseMap, y: FamObject) -> tuple[FamObject, FamMorphism]:
    """u*Y together with its cartesian lifting (u, identities)."""
    if not u.cod.same(y.base):
        raise IndexMismatch(
            f"reindex: {u.name} has codomain {u.cod.name}, family is over "
            f"{y.base.name}")
    star = FamObject(u.dom, lambda i: y.fiber(u(i)), name=f"{u.name}*{y.name}")
    lift = FamMorphism(star, y, u, lambda _i, x: x, name=f"lift_{u.name}({y.name})")
    return star, lift


def comprehension(x: FamObject) -> tuple[ComprehensionIndexSet, BaseMap]:
    """Total index set of pairs (i, v) with the projection to the base.

    Cached per family so repeated comprehensions share one index set object.
    """
    cached = getattr(x, "_compr", None)
    if cached is not None:
        return cached
    total = ComprehensionIndexSet(x)
    proj = BaseMap(
        f"pi_{x.name}", total, x.base,
        lambda p: p.fst,
        lambda i: [Pair(i, v) for v in x.fiber(i).list()],
    )
    x._compr = (total, proj)
    return total, proj


def comprehension_map(f: FamMorphism) -> Callable[[Value], Value]:
    """Action of comprehension on a morphism: (i, x) -> (u i, f_i x)."""
    return lambda p: Pair(f.base(p.fst), f.component(p.fst, p.snd))


# ---------------------------------------------------------------------------
# exhaustive machinery for finite probes

def all_functions(dom: list[Value], cod: list[Value]) -> Iterator[dict]:
    """All functions dom -> cod as lists of index pairs (by position)."""
    if not dom:
        yield {}
        return
    for assignment in itertools.product(range(len(cod)), repeat=len(dom)):
        yield {k: cod[assignment[k]] for k in range(len(dom))}


def all_morphisms_over(u: BaseMap, x: FamObject, y: FamObject,
                       budget: Optional[int] = None) -> Iterator[FamMorphism]:
    """Every FamMorphism from x to y over the base map u (finite data only)."""
    indices = x.base.list(budget)
    fibers = [x.fiber(i).list(budget) for i in indices]
    cods = [y.fiber(u(i)).list(budget) for i in indices]
    per_index_choices = []
    for dom_f, cod_f in zip(fibers, cods):
        if dom_f and not cod_f:
            return
        per_index_choices.append(list(all_functions(dom_f, cod_f)))
    for combo in itertools.product(*per_index_choices):
        tables = []
        for i, dom_f, table in zip(indices, fibers, combo):
            tables.append((i, dom_f, table))

        def component(i, v, _tables=tables):
            for j, dom_f, table in _tables:
                if eq_values(j, i):
                    for pos, w in enumerate(dom_f):
                        if eq_values(w, v):
                            return table[pos]
                    raise KernelError(f"{to_text(v)} not in fiber at {to_text(i)}")
            raise KernelError(f"index {to_text(i)} not enumerated")

        yield FamMorphism(x, y, u, component, name="search")


def count_morphisms(u: BaseMap, x: FamObject, y: FamObject,
                    budget: Optional[int] = None) -> int:
    """|Hom_u(x, y)| by per-fiber brute-force counting."""
    total = 1
    for i in x.base.list(budget):
        nx = x.fiber(i).card(budget)
        ny = y.fiber(u(i)).card(budget)
        if nx > 0 and ny == 0:
            return 0
        total *= ny ** nx
    return total


def all_base_maps(dom: IndexSet, cod: IndexSet) -> Iterator[BaseMap]:
    ds = dom.list()
    cs = cod.list()
    if ds and not cs:
        return
    for table in all_functions(ds, cs):
        graph = [(ds[k], w) for k, w in table.items()]
        yield BaseMap.from_graph(f"{dom.name}->{cod.name}", dom, cod, graph)


def morphisms_equal(f: FamMorphism, g: FamMorphism,
                    budget: Optional[int] = None) -> bool:
    """Pointwise equality on the enumerable part of the common domain."""
    for i in f.dom.base.list(budget):
        if not eq_values(f.base(i), g.base(i)):
            return False
        for x in f.dom.fiber(i).list(budget):
            if not eq_values(f.component(i, x), g.component(i, x)):
                return False
    return True


@dataclass
class Report:
    ok: bool
    lines: list[str] = field(default_factory=list)
    verdict: str = ""

    def add(self, line: str):
        self.lines.append(line)

    def __bool__(self):
        return self.ok


def verify_cartesian(u: BaseMap, y: FamObject,
                     candidates: list[tuple[FamMorphism, BaseMap]],
                     budget: Optional[int] = None) -> Report:
    """Check the universal property of the lifting (u, id) against candidates.

    Each candidate is (g, v) with g : (K, Z) -> (J, Y) and u . v = base(g);
    exhaustive search must find exactly one h over v with lift . h = g.
    """
    star, lift = reindex(u, y)
    report = Report(ok=True)
    for idx, (g, v) in enumerate(candidates):
        for k in v.dom.list(budget):
            if not eq_values(u(v(k)), g.base(k)):
                raise IndexMismatch(
                    f"candidate {idx}: factorization u.v != Pg at {to_text(k)}")
        found = 0
        for h in all_morphisms_over(v, g.dom, star, budget):
            if morphisms_equal(compose(lift, h), g, budget):
                found += 1
        if found != 1:
            report.ok = False
            report.add(f"candidate {idx}: {found} mediators over {v.name} "
                       f"(expected exactly 1)")
        else:
            report.add(f"candidate {idx}: unique mediator found")
    return report
