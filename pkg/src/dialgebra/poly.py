"""Dependent polynomials, their tree fixed points, and the corecursion
toolkit: primitive corecursion, one-step extension, internal bisimulations,
the equalizer construction of dependent final coalgebras, and parametric
fixed points.

Trees of a polynomial live over labels a with child slots f^-1(a): a tree
value observes to (a, children) where children is a finite function graph.
Finite trees are literal transition systems, cyclic trees are explicit
systems with back-edges, and corecursively defined trees are
generator-backed systems.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional

from .config import DEFAULT
from .dialg import (DataType, Dialgebra, build_coinductive, build_inductive,
                    dep_prod, dep_sum)
from .errors import (BudgetExceeded, IndexMismatch, KernelError, NotFinite,
                     Unsupported)
from .fam import (BaseMap, FamMorphism, FamObject, FiberSet, FiniteFiber,
                  FilteredIndexSet, IndexSet, LazyFiber, ProductIndexSet,
                  Report, SumIndexSet, UNIT_SET, comprehension, dedup,
                  fair_interleave, reindex, unit_fam)
from .values import (UNIT, CoSystem, CoVal, FnSystem, FunVal, Pair, Tag, Tup,
                     Value, Verdict, bisim, co_literal, eq_values, ikey,
                     sort_values, state_key, to_text)


@dataclass
class DepPolynomial:
    """A span J <-s- B -f-> A -t-> I; its extension is Sigma_t Pi_f s*."""

    s: BaseMap
    f: BaseMap
    t: BaseMap
    name: str = "P"

    def __post_init__(self):
        if not self.s.dom.same(self.f.dom):
            raise IndexMismatch(f"polynomial {self.name}: s and f must share "
                                f"their domain")
        if not self.f.cod.same(self.t.dom):
            raise IndexMismatch(f"polynomial {self.name}: f's codomain must "
                                f"be t's domain")

    @property
    def positions(self) -> IndexSet:
        return self.f.cod

    @property
    def directions(self) -> IndexSet:
        return self.f.dom


def extension_apply(p: DepPolynomial, x: FamObject,
                    budget: Optional[int] = None) -> FamObject:
    """The composite Sigma_t . Pi_f . s* using the kernel's own formers.

    Fiber at i: pairs (a, v) with t(a) = i and v a function graph on
    f^-1(a) with v(b) in X at s(b)."""
    if not p.s.cod.same(x.base):
        raise IndexMismatch(f"extension of {p.name} needs a family over "
                            f"{p.s.cod.name}")
    sstar, _ = reindex(p.s, x)
    pi = dep_prod(p.f, sstar)
    sg = dep_sum(p.t, pi.carrier)
    return FamObject(p.t.cod, lambda i: sg.carrier.fiber(i),
                     name=f"[{p.name}]({x.name})")


def extension_fiber_oracle(p: DepPolynomial, x: FamObject, i: Value,
                           budget: Optional[int] = None) -> list[Value]:
    """Direct set-comprehension oracle for the extension fiber."""
    out = []
    for a in p.t.preimage(i):
        bs = p.f.preimage(a)
        value_lists = [x.fiber(p.s(b)).list(budget) for b in bs]
        for combo in itertools.product(*value_lists):
            out.append(Pair(a, FunVal(list(zip(bs, combo)))))
    return out


# ---------------------------------------------------------------------------
# tree values

def tree_node(a: Value, children: Iterable[tuple[Value, Value]]) -> Value:
    """A finite tree node: label a with the given child graph."""
    return co_literal(Pair(a, FunVal(children)))


def tree_root(v: Value) -> Value:
    return v.observe().fst


def tree_children(v: Value) -> FunVal:
    return v.observe().snd


def tree_unfold(f: BaseMap, step: Callable, state) -> CoVal:
    """Corecursive tree: step(state) -> (label, child_state_fn) where
    child_state_fn maps each b in f^-1(label) to a successor state."""
    sys_ = FnSystem(lambda st: _tree_step(f, step, st), label="tree")
    return CoVal(sys_, state)


def _tree_step(f: BaseMap, step: Callable, st) -> Value:
    a, child_fn = step(st)
    entries = []
    for b in f.preimage(a):
        entries.append((b, CoVal(_tree_sys(f, step), child_fn(b))))
    return Pair(a, FunVal(entries))


_tree_sys_cache: dict = {}


def _tree_sys(f: BaseMap, step: Callable) -> CoSystem:
    key = (id(f), id(step))
    if key not in _tree_sys_cache:
        _tree_sys_cache[key] = FnSystem(
            lambda st: _tree_step(f, step, st), label="tree")
    return _tree_sys_cache[key]


class _TreeMembership:
    """Coinductive conformance of values to M_f, assume-and-verify."""

    def __init__(self, f: BaseMap):
        self.f = f

    def check(self, v: Value, depth: Optional[int] = None):
        depth = depth if depth is not None else DEFAULT.observation_depth
        return self._check(v, depth, set())

    def _check(self, v: Value, depth: int, assumed: set):
        if not isinstance(v, CoVal):
            return False
        key = v.node_key()
        if key in assumed:
            return True
        if depth <= 0:
            return None
        assumed.add(key)
        obs = v.observe()
        if not isinstance(obs, Pair) or not isinstance(obs.snd, FunVal):
            return False
        a = obs.fst
        if not self.f.cod.contains(a, 4096):
            return False
        bs = self.f.preimage(a)
        if len(bs) != len(obs.snd.entries):
            return False
        result = True
        for b in bs:
            try:
                child = obs.snd.apply(b)
            except KernelError:
                return False
            got = self._check(child, depth - 1, assumed)
            if got is False:
                return False
            if got is None:
                result = None
        return result


def w_type(f: BaseMap, name: Optional[str] = None) -> DataType:
    """Well-founded trees of a non-dependent polynomial, by rounds."""
    name = name or f"W({f.name})"

    def fiber(_i: Value) -> FiberSet:
        def gen():
            prev: list[Value] = []
            emitted: set = set()
            while True:
                nxt: list[Value] = []
                for a in f.cod.list():
                    bs = f.preimage(a)
                    for combo in itertools.product(prev, repeat=len(bs)):
                        nxt.append(tree_node(a, list(zip(bs, combo))))
                fresh = [v for v in nxt if v not in emitted]
                for v in sort_values(fresh):
                    emitted.add(v)
                    yield v
                if not fresh:
                    return
                prev = list(emitted)

        def member(v, _depth=[0]):
            if not isinstance(v, CoVal):
                return False
            obs = v.observe()
            if not isinstance(obs, Pair) or not isinstance(obs.snd, FunVal):
                return False
            bs = f.preimage(obs.fst)
            if len(bs) != len(obs.snd.entries):
                return False
            for b in bs:
                try:
                    child = obs.snd.apply(b)
                except KernelError:
                    return False
                got = member(child)
                if got is not True:
                    return got
            return True

        return LazyFiber(gen, membership=member)

    carrier = FamObject(UNIT_SET, fiber, name=name)
    dt = DataType(None, (), "inductive", carrier, None, None, name)
    return dt


def m_type(f: BaseMap, name: Optional[str] = None) -> DataType:
    """All (possibly infinite) trees of a non-dependent polynomial."""
    name = name or f"M({f.name})"
    membership = _TreeMembership(f)

    def fiber(_i: Value) -> FiberSet:
        def gen():
            # well-founded trees enumerate fairly; cyclic ones have no fair
            # enumeration, so only the finite fragment is listed
            yield from w_type(f).carrier.fiber(UNIT).iter_values()

        return LazyFiber(gen, membership=lambda v: membership.check(v))

    carrier = FamObject(UNIT_SET, fiber, name=name)
    dt = DataType(None, (), "coinductive", carrier, None, None, name)
    dt.polynomial_map = f
    dt.membership = membership
    return dt


def w_fold(f: BaseMap, alg: Callable[[Value, FunVal], Value]) -> Callable[[Value], Value]:
    """Structural recursion on well-founded trees."""

    def go(v: Value) -> Value:
        obs = v.observe()
        results = FunVal((b, go(c)) for b, c in obs.snd.entries)
        return alg(obs.fst, results)

    return go


# ---------------------------------------------------------------------------
# primitive corecursion and one-step extension

def _inl(x: Value) -> Value:
    return Tag("inl", x)


def _inr(m: Value) -> Value:
    return Tag("inr", m)


def primitive_corecursion(f: BaseMap, c: Callable[[Value], Value]):
    """Given c : X -> [f](X + M_f) (values Pair(a, graph of inl/inr)), the
    unique h : X + M_f -> M_f with h . inr = id and xi . (h . inl) = [f](h) . c.

    Returns h as a function on tagged values."""

    sys_ = FnSystem(lambda x: _pc_step(f, c, sys_, x), label="corec")

    def h(v: Value) -> Value:
        if isinstance(v, Tag) and v.name == "inr":
            return v.arg
        if isinstance(v, Tag) and v.name == "inl":
            return CoVal(sys_, v.arg)
        raise KernelError("primitive corecursion expects inl/inr tagged input")

    return h


def _pc_step(f: BaseMap, c: Callable, sys_: CoSystem, x: Value) -> Value:
    out = c(x)
    a, graph = out.fst, out.snd
    entries = []
    for b, w in graph.entries:
        if w.name == "inl":
            entries.append((b, CoVal(sys_, w.arg)))
        elif w.name == "inr":
            entries.append((b, w.arg))
        else:
            raise KernelError("corecursion step must produce inl/inr children")
    return Pair(a, FunVal(entries))


def one_step_extension(f: BaseMap, m: Callable[[Value], Value]):
    """Unique g : M_f -> M_f with xi . g = m, by primitive corecursion of
    [f](inr) . m."""

    def c(x: Value) -> Value:
        out = m(x)
        return Pair(out.fst, FunVal((b, _inr(w)) for b, w in out.snd.entries))

    h = primitive_corecursion(f, c)
    return lambda x: h(_inl(x))


# ---------------------------------------------------------------------------
# internal relations and bisimulations

@dataclass
class InternalRelation:
    carrier: IndexSet
    legs: Callable[[Value], tuple[Value, Value]]
    f: BaseMap
    name: str = "R"


def internal_bisim_check(rel: InternalRelation,
                         budget: Optional[int] = None) -> Report:
    """Root equality and child closure for every enumerated carrier element.

    verdicts: 'bisimulation' | 'counterexample' | 'inconclusive'."""
    budget = budget if budget is not None else DEFAULT.enumeration_budget
    f = rel.f
    elems = rel.carrier.try_list(budget)
    inconclusive = elems is None
    if elems is None:
        elems = rel.carrier.sample(min(budget, 256))
    pair_index: set = set()
    pairs = []
    for z in elems:
        x1, x2 = rel.legs(z)
        pair_index.add((ikey(x1), ikey(x2)))
        pairs.append((z, x1, x2))

    def related(a: Value, b: Value):
        if (ikey(a), ikey(b)) in pair_index:
            return True
        # fall back to exact bisimulation against the enumerated pairs
        for _, x1, x2 in pairs:
            r1 = bisim(a, x1)
            r2 = bisim(b, x2)
            if r1.result is True and r2.result is True:
                return True
            if r1.result is None or r2.result is None:
                return None
        return False

    report = Report(ok=True, verdict="bisimulation")
    for z, x1, x2 in pairs:
        o1, o2 = x1.observe(), x2.observe()
        roots = bisim(o1.fst, o2.fst)
        if roots.result is False:
            report.ok = False
            report.verdict = "counterexample"
            report.add(f"roots differ at {to_text(z)}: {to_text(o1.fst)} vs "
                       f"{to_text(o2.fst)}")
            return report
        if roots.result is None:
            inconclusive = True
        for b in f.preimage(o1.fst):
            try:
                c1, c2 = o1.snd.apply(b), o2.snd.apply(b)
            except KernelError:
                report.ok = False
                report.verdict = "counterexample"
                report.add(f"child graphs disagree at {to_text(z)}, slot {to_text(b)}")
                return report
            got = related(c1, c2)
            if got is False:
                report.ok = False
                report.verdict = "counterexample"
                report.add(f"children at {to_text(z)}, slot {to_text(b)} are "
                           f"not related")
                return report
            if got is None:
                inconclusive = True
    if inconclusive:
        report.ok = False
        report.verdict = "inconclusive"
        report.add("budget exhausted before the relation was fully checked")
    else:
        report.add(f"closed under observation on {len(pairs)} pairs")
    return report


# ---------------------------------------------------------------------------
# the equalizer construction of dependent final coalgebras

class EqualizerCoalgebra:
    """The final coalgebra V of a dependent polynomial, carved out of M_f as
    the equalizer of u1 and u2, with the membership characterisation."""

    def __init__(self, p: DepPolynomial):
        self.p = p
        self.f = p.f
        self.index = p.t.cod
        # f x I : B x I -> A x I
        bxi = ProductIndexSet(p.f.dom, self.index)
        axi = ProductIndexSet(p.f.cod, self.index)
        self.fxi = BaseMap(
            f"{p.f.name}xI", bxi, axi,
            lambda v: Pair(p.f(v.fst), v.snd),
            lambda w: [Pair(b, w.snd) for b in p.f.preimage(w.fst)])
        self.m = m_type(p.f)
        self.mxi = m_type(self.fxi)
        self._u1_sys = FnSystem(self._u1_step, label="u1")
        self._phi_sys = FnSystem(self._phi_step, label="phi")
        self.psi = one_step_extension(self.fxi, self._psi_row)

    # u1: coinductive extension of p_M . xi_f; maps (a, v) to (a, t a, v)
    def u1(self, x: Value) -> Value:
        return CoVal(self._u1_sys, ("u1", x))

    def _u1_step(self, st) -> Value:
        _, x = st
        obs = x.observe()
        a, v = obs.fst, obs.snd
        ta = self.p.t(a)
        entries = [(Pair(b, ta), self.u1(v.apply(b)))
                   for b in self.p.f.preimage(a)]
        return Pair(Pair(a, ta), FunVal(entries))

    # phi: M_{fxI} x B -> M_{fxI} with step e((a, i, v), b)
    def phi(self, y: Value, b: Value) -> Value:
        return CoVal(self._phi_sys, ("phi", y, b))

    def _phi_step(self, st) -> Value:
        _, y, b = st
        obs = y.observe()
        (a, i), v = (obs.fst.fst, obs.fst.snd), obs.snd
        sb = self.p.s(b)
        entries = []
        for b2 in self.p.f.preimage(a):
            child = v.apply(Pair(b2, i))
            entries.append((Pair(b2, sb), self.phi(child, b2)))
        return Pair(Pair(a, sb), FunVal(entries))

    # psi's defining row: [fxI](phi) . Sigma K . xi
    def _psi_row(self, y: Value) -> Value:
        obs = y.observe()
        (a, i), v = (obs.fst.fst, obs.fst.snd), obs.snd
        entries = []
        for b in self.p.f.preimage(a):
            child = v.apply(Pair(b, i))
            entries.append((Pair(b, i), self.phi(child, b)))
        return Pair(Pair(a, i), FunVal(entries))

    def u2(self, x: Value) -> Value:
        return self.psi(self.u1(x))

    def q(self, x: Value) -> Value:
        """Index of a tree: t applied to its root label."""
        return self.p.t(tree_root(x))

    # -- membership -------------------------------------------------------

    def member(self, x: Value, i: Value, depth: Optional[int] = None):
        """Characterisation clause (3): the root matches the index and every
        child belongs at its slot's index, coinductively."""
        depth = depth if depth is not None else DEFAULT.observation_depth
        return self._member(x, i, depth, set())

    def _member(self, x: Value, i: Value, depth: int, assumed: set):
        if not isinstance(x, CoVal):
            return False
        key = (x.node_key(), ikey(i))
        if key in assumed:
            return True
        if depth <= 0:
            return None
        assumed.add(key)
        obs = x.observe()
        if not isinstance(obs, Pair) or not isinstance(obs.snd, FunVal):
            return False
        a, v = obs.fst, obs.snd
        if not eq_values(self.p.t(a), i):
            return False
        bs = self.p.f.preimage(a)
        if len(bs) != len(v.entries):
            return False
        result = True
        for b in bs:
            try:
                child = v.apply(b)
            except KernelError:
                return False
            got = self._member(child, self.p.s(b), depth - 1, assumed)
            if got is False:
                return False
            if got is None:
                result = None
        return result

    def member_by_equalizer(self, x: Value, i: Value,
                            depth: Optional[int] = None):
        """Characterisation clause (2): u1 x = u2 x and q x = i."""
        if bisim(self.q(x), i, depth=depth).result is not True:
            return False
        return bisim(self.u1(x), self.u2(x), depth=depth).result

    # -- the appendix's witnessing relation --------------------------------

    def witness_relation(self, x: Value, budget: int = 512) -> InternalRelation:
        """R = 1 + Sigma_B s*V relating u1 y with phi(u1 y, b), restricted to
        the part reachable from x."""
        elems: list[Value] = [Tag("stop", UNIT)]
        legs_map: dict = {}
        legs_map[ikey(elems[0])] = (self.u1(x), self.u2(x))
        seen = {x.node_key()}
        frontier = [x]
        count = 0
        while frontier and count < budget:
            y = frontier.pop(0)
            obs = y.observe()
            for b in self.p.f.preimage(obs.fst):
                child = obs.snd.apply(b)
                z = Tag("go", Pair(b, child))
                if ikey(z) not in legs_map:
                    elems.append(z)
                    legs_map[ikey(z)] = (self.u1(child),
                                         self.phi(self.u1(child), b))
                count += 1
                if child.node_key() not in seen:
                    seen.add(child.node_key())
                    frontier.append(child)
        carrier = _ValueIndexSet(f"R({to_text(tree_root(x))})", elems)
        return InternalRelation(carrier, lambda z: legs_map[ikey(z)],
                                self.fxi, name="R")

    # -- the restricted coalgebra and carrier ------------------------------

    def carrier(self) -> FamObject:
        def fiber(i: Value) -> FiberSet:
            return LazyFiber(lambda: self._enumerate(i),
                             membership=lambda v: self.member(v, i))

        return FamObject(self.index, fiber, name=f"V({self.p.name})")

    def _enumerate(self, i: Value) -> Iterator[Value]:
        order = self._acyclic_order(i)
        if order is None:
            raise NotFinite(f"V fiber at {to_text(i)} is cyclic; use membership")
        cache: dict = {}
        for j in order:
            out = []
            for a in self.p.t.preimage(j):
                bs = self.p.f.preimage(a)
                lists = [cache[ikey(self.p.s(b))] for b in bs]
                for combo in itertools.product(*lists):
                    out.append(tree_node(a, list(zip(bs, combo))))
            cache[ikey(j)] = out
        yield from cache[ikey(i)]

    def _acyclic_order(self, i: Value, cap: int = 2048) -> Optional[list[Value]]:
        seen = {ikey(i): i}
        edges: dict = {}
        frontier = [i]
        while frontier:
            cur = frontier.pop(0)
            ds = []
            for a in self.p.t.preimage(cur):
                for b in self.p.f.preimage(a):
                    ds.append(self.p.s(b))
            edges[ikey(cur)] = ds
            for d in ds:
                if ikey(d) not in seen:
                    if len(seen) >= cap:
                        return None
                    seen[ikey(d)] = d
                    frontier.append(d)
        indeg = {k: 0 for k in seen}
        for k, ds in edges.items():
            for d in ds:
                indeg[ikey(d)] += 1
        topo = [k for k in seen if indeg[k] == 0]
        pos = 0
        while pos < len(topo):
            cur = topo[pos]
            pos += 1
            for d in edges[cur]:
                indeg[ikey(d)] -= 1
                if indeg[ikey(d)] == 0:
                    topo.append(ikey(d))
        if len(topo) != len(seen):
            return None
        return [seen[k] for k in reversed(topo)]

    def restricted_destructor_check(self, x: Value, i: Value,
                                    depth: int = 8) -> bool:
        """xi' is a [P]-coalgebra on members: the destructed pair keeps the
        index discipline and all children are members."""
        if self.member(x, i, depth) is not True:
            return False
        obs = x.observe()
        if not eq_values(self.p.t(obs.fst), i):
            return False
        for b in self.p.f.preimage(obs.fst):
            if self.member(obs.snd.apply(b), self.p.s(b), depth) is False:
                return False
        return True


class _ValueIndexSet(IndexSet):
    def __init__(self, name: str, values: list[Value]):
        self.name = name
        self.values = values

    def iter_values(self):
        return iter(self.values)

    def contains(self, v, budget=None):
        return any(eq_values(w, v) for w in self.values)


def dep_final_via_equalizer(p: DepPolynomial) -> tuple[DataType, EqualizerCoalgebra]:
    eq = EqualizerCoalgebra(p)
    carrier = eq.carrier()
    dt = DataType(None, (), "coinductive", carrier, None, None,
                  name=f"V({p.name})")
    dt.equalizer = eq
    return dt, eq


def check_characterisation(p: DepPolynomial, samples: list[tuple[Value, Value]],
                           depth: int = 8) -> Report:
    """Clause (2) (equalizer route) against clause (3) (coinductive
    membership) on (tree, index) samples; the appendix relation certifies
    accepted samples."""
    eq = EqualizerCoalgebra(p)
    report = Report(ok=True)
    for x, i in samples:
        via_eq = eq.member_by_equalizer(x, i, depth=depth)
        via_co = eq.member(x, i, depth=depth)
        if via_eq is None or via_co is None:
            if (via_eq is None) != (via_co is None):
                report.ok = False
                report.add(f"inconsistent inconclusiveness at {to_text(i)}")
            else:
                report.add(f"sample at {to_text(i)}: both routes inconclusive")
            continue
        if bool(via_eq) != bool(via_co):
            report.ok = False
            report.add(f"DISAGREEMENT at index {to_text(i)}: equalizer says "
                       f"{via_eq}, coinductive says {via_co}")
            continue
        if via_co is True:
            rel = eq.witness_relation(x)
            got = internal_bisim_check(rel)
            if got.verdict == "counterexample":
                report.ok = False
                report.add(f"witness relation failed on an accepted sample "
                           f"at {to_text(i)}")
                continue
        report.add(f"sample at {to_text(i)}: agree ({'member' if via_co else 'rejected'})")
    return report


# ---------------------------------------------------------------------------
# translating strictly positive signatures to polynomials

def poly_identity(index: IndexSet) -> DepPolynomial:
    ident = BaseMap.identity(index)
    return DepPolynomial(ident, ident, ident, name=f"id_{index.name}")


def poly_const(fam: FamObject, source: IndexSet) -> DepPolynomial:
    total, proj = comprehension(fam)
    empty = _ValueIndexSet(f"0", [])
    s = BaseMap("s0", empty, source, _never, lambda j: [])
    f = BaseMap("f0", empty, total, _never, lambda a: [])
    return DepPolynomial(s, f, proj, name=f"K({fam.name})")


def _never(_v):
    raise KernelError("empty index set has no elements")


def poly_reindex(u: BaseMap) -> DepPolynomial:
    ident = BaseMap.identity(u.dom)
    return DepPolynomial(u, ident, ident, name=f"reidx({u.name})")


def poly_sum_along(u: BaseMap) -> DepPolynomial:
    ident = BaseMap.identity(u.dom)
    return DepPolynomial(ident, ident, u, name=f"Sum({u.name})")


def poly_prod_along(u: BaseMap) -> DepPolynomial:
    ident_d = BaseMap.identity(u.dom)
    ident_c = BaseMap.identity(u.cod)
    return DepPolynomial(ident_d, u, ident_c, name=f"Prod({u.name})")


def poly_compose(p2: DepPolynomial, p1: DepPolynomial,
                 budget: Optional[int] = None) -> DepPolynomial:
    """Normal form of [p2] . [p1] (Gambino-Kock composition, computed
    concretely with enumerable index sets)."""
    if not p1.t.cod.same(p2.s.cod):
        raise IndexMismatch("polynomials do not compose")

    def shapes_fiber(a2: Value) -> FiberSet:
        b2s = p2.f.preimage(a2)
        lists = [p1.t.preimage(p2.s(b2)) for b2 in b2s]

        def gen():
            for combo in itertools.product(*lists):
                yield FunVal(list(zip(b2s, combo)))

        return LazyFiber(gen)

    shapes = FamObject(p2.f.cod, shapes_fiber, name="shapes")
    a_new, proj_a = comprehension(shapes)

    def t_new_fn(aw: Value) -> Value:
        return p2.t(aw.fst)

    def t_new_pre(i: Value):
        out = []
        for a2 in p2.t.preimage(i):
            for w in shapes.fiber(a2).list(budget):
                out.append(Pair(a2, w))
        return out

    t_new = BaseMap(f"t({p2.name}.{p1.name})", a_new, p2.t.cod, t_new_fn, t_new_pre)

    def dirs_fiber(aw: Value) -> FiberSet:
        a2, w = aw.fst, aw.snd

        def gen():
            for b2 in p2.f.preimage(a2):
                a1 = w.apply(b2)
                for b1 in p1.f.preimage(a1):
                    yield Pair(b2, b1)

        return LazyFiber(gen)

    dirs = FamObject(a_new, dirs_fiber, name="dirs")
    b_new, proj_b = comprehension(dirs)

    def s_new_fn(v: Value) -> Value:
        return p1.s(v.snd.snd)

    s_new = BaseMap(f"s({p2.name}.{p1.name})", b_new, p1.s.cod, s_new_fn)

    def f_new_pre(aw: Value):
        return [Pair(aw, d) for d in dirs.fiber(aw).list(budget)]

    f_new = BaseMap(f"f({p2.name}.{p1.name})", b_new, a_new,
                    lambda v: v.fst, f_new_pre)
    return DepPolynomial(s_new, f_new, t_new, name=f"({p2.name}.{p1.name})")


def poly_fib_product(p1: DepPolynomial, p2: DepPolynomial,
                     budget: Optional[int] = None) -> DepPolynomial:
    """[p1] x_I [p2]: labels are t-compatible label pairs, slots are summed."""
    if not p1.t.cod.same(p2.t.cod) or not p1.s.cod.same(p2.s.cod):
        raise IndexMismatch("fibrewise product needs matching endpoints")
    prod = ProductIndexSet(p1.f.cod, p2.f.cod)
    apex = FilteredIndexSet(
        prod, lambda v: eq_values(p1.t(v.fst), p2.t(v.snd)),
        name=f"({p1.name}x{p2.name})")

    def t_pre(i: Value):
        return [Pair(a1, a2) for a1 in p1.t.preimage(i)
                for a2 in p2.t.preimage(i)]

    t = BaseMap("t", apex, p1.t.cod, lambda v: p1.t(v.fst), t_pre)

    def dirs_fiber(aa: Value) -> FiberSet:
        def gen():
            for b1 in p1.f.preimage(aa.fst):
                yield Tag("inl", b1)
            for b2 in p2.f.preimage(aa.snd):
                yield Tag("inr", b2)

        return LazyFiber(gen)

    dirs = FamObject(apex, dirs_fiber, name="dirs")
    b_new, _ = comprehension(dirs)

    def s_fn(v: Value) -> Value:
        d = v.snd
        return p1.s(d.arg) if d.name == "inl" else p2.s(d.arg)

    s = BaseMap("s", b_new, p1.s.cod, s_fn)

    def f_pre(aa: Value):
        return [Pair(aa, d) for d in dirs.fiber(aa).list(budget)]

    f = BaseMap("f", b_new, apex, lambda v: v.fst, f_pre)
    return DepPolynomial(s, f, t, name=f"({p1.name}x{p2.name})")


def poly_fib_sum(p1: DepPolynomial, p2: DepPolynomial) -> DepPolynomial:
    if not p1.t.cod.same(p2.t.cod) or not p1.s.cod.same(p2.s.cod):
        raise IndexMismatch("fibrewise sum needs matching endpoints")
    apex = SumIndexSet([("inl", p1.f.cod), ("inr", p2.f.cod)])
    b_new = SumIndexSet([("inl", p1.f.dom), ("inr", p2.f.dom)])

    def t_pre(i: Value):
        return ([Tag("inl", a) for a in p1.t.preimage(i)]
                + [Tag("inr", a) for a in p2.t.preimage(i)])

    t = BaseMap("t", apex, p1.t.cod,
                lambda v: p1.t(v.arg) if v.name == "inl" else p2.t(v.arg),
                t_pre)
    s = BaseMap("s", b_new, p1.s.cod,
                lambda v: p1.s(v.arg) if v.name == "inl" else p2.s(v.arg))

    def f_pre(a: Value):
        if a.name == "inl":
            return [Tag("inl", b) for b in p1.f.preimage(a.arg)]
        return [Tag("inr", b) for b in p2.f.preimage(a.arg)]

    f = BaseMap("f", b_new, apex,
                lambda v: Tag("inl", p1.f(v.arg)) if v.name == "inl"
                else Tag("inr", p2.f(v.arg)),
                f_pre)
    return DepPolynomial(s, f, t, name=f"({p1.name}+{p2.name})")


def _instantiate(functor, params: tuple[FamObject, ...]):
    """Rewrite parameter projections to constants, leaving one variable."""
    from .sig import Compose, Const, PairF, Proj, Reindex

    def go(f):
        if isinstance(f, Proj):
            if f.k < len(params):
                return Const(params[f.k], f.source)
            return f
        if isinstance(f, Compose):
            return Compose(go(f.outer), go(f.inner))
        if isinstance(f, PairF):
            return PairF([go(p) for p in f.parts])
        return f

    return go(functor)


def signature_to_polynomial(s, params: tuple[FamObject, ...] = (),
                            polarity: str = "coinductive") -> DepPolynomial:
    """Translate a strictly positive signature (instantiated at its
    parameters) into one dependent polynomial whose extension is the
    signature's (co)algebra functor. Unsupported shapes raise."""
    from .sig import Compose, Const, Mu, Nu, PairF, Proj, Reindex, prod_sig, coprod_sig

    functor = _instantiate(s.functor, params)

    def translate(f) -> DepPolynomial:
        if isinstance(f, Const):
            return poly_const(f.fam, f.source[-1])
        if isinstance(f, Proj):
            # only the carrier variable remains after instantiation
            return poly_identity(f.source[-1])
        if isinstance(f, Reindex):
            return poly_reindex(f.f)
        if isinstance(f, Compose):
            if isinstance(f.outer, Nu) and isinstance(f.inner, PairF) \
                    and len(f.inner.parts) == 2 and _is_former(f.outer.sig, "prod"):
                return poly_fib_product(translate(f.inner.parts[0]),
                                        translate(f.inner.parts[1]))
            if isinstance(f.outer, Mu) and isinstance(f.inner, PairF) \
                    and len(f.inner.parts) == 2 and _is_former(f.outer.sig, "coprod"):
                return poly_fib_sum(translate(f.inner.parts[0]),
                                    translate(f.inner.parts[1]))
            return poly_compose(translate(f.outer), translate(f.inner))
        if isinstance(f, (Mu, Nu)):
            raise Unsupported("nested fixed points require "
                              "parametric_fixed_point")
        raise Unsupported(f"untranslatable node {type(f).__name__}")

    if isinstance(functor, PairF):
        components = [translate(p) for p in functor.parts]
    else:
        components = [translate(functor)]
    if len(components) == 1:
        combined = components[0]
        u = s.maps[0]
    else:
        combined, target_sum = _poly_disjoint(components)
        u = _cotuple(list(s.maps), target_sum, s.index)
    if polarity == "inductive":
        outer = poly_sum_along(u)
    else:
        outer = poly_prod_along(u)
    return poly_compose(outer, combined)


def _is_former(sg, kind: str) -> bool:
    return sg.name.startswith(f"{kind}_")


def _poly_disjoint(ps: list[DepPolynomial]) -> tuple[DepPolynomial, SumIndexSet]:
    """<F1, ..., Fn> into the disjoint sum of the target fibres."""
    tags = [f"in{k+1}" for k in range(len(ps))]
    target = SumIndexSet([(tag, p.t.cod) for tag, p in zip(tags, ps)])
    sum_a = SumIndexSet([(tag, p.f.cod) for tag, p in zip(tags, ps)])
    sum_b = SumIndexSet([(tag, p.f.dom) for tag, p in zip(tags, ps)])
    by_tag = dict(zip(tags, ps))

    def t_pre(i: Value):
        return [Tag(i.name, a) for a in by_tag[i.name].t.preimage(i.arg)]

    t = BaseMap("t", sum_a, target,
                lambda v: Tag(v.name, by_tag[v.name].t(v.arg)), t_pre)
    s = BaseMap("s", sum_b, ps[0].s.cod,
                lambda v: by_tag[v.name].s(v.arg))

    def f_pre(a: Value):
        return [Tag(a.name, b) for b in by_tag[a.name].f.preimage(a.arg)]

    f = BaseMap("f", sum_b, sum_a,
                lambda v: Tag(v.name, by_tag[v.name].f(v.arg)), f_pre)
    return DepPolynomial(s, f, t, name="<" + ",".join(p.name for p in ps) + ">"), target


def _cotuple(maps: list[BaseMap], dom: SumIndexSet, cod: IndexSet) -> BaseMap:
    names = {f"in{k+1}": u for k, u in enumerate(maps)}

    def fn(v: Value) -> Value:
        return names[v.name](v.arg)

    def pre(i: Value):
        out = []
        for tag, u in names.items():
            out.extend(Tag(tag, j) for j in u.preimage(i))
        return out

    return BaseMap("[u]", dom, cod, fn, pre)


# ---------------------------------------------------------------------------
# parametric fixed points

def parametric_fixed_point(p: DepPolynomial, polarity: str,
                           budget: Optional[int] = None) -> DepPolynomial:
    """Solve X |-> [p](V + X) for the polynomial representing the fixed
    point: positions are the trees of the recursive part, parameter slots
    are the paths to parameter positions inside such a tree.

    The input's s must land in a sum index set tagged 'par'/'rec'
    (K + I <- B -> A -> I)."""
    kplusi = p.s.cod
    if not isinstance(kplusi, SumIndexSet) or \
            [tag for tag, _ in kplusi.parts] != ["par", "rec"]:
        raise Unsupported("parametric polynomial needs s : B -> par(K)+rec(I)")
    kset = kplusi.parts[0][1]
    iset = kplusi.parts[1][1]

    rec_b = FilteredIndexSet(p.s.dom,
                             lambda b: p.s(b).name == "rec", name="Brec")
    s_rec = BaseMap("srec", rec_b, iset, lambda b: p.s(b).arg)
    f_rec = BaseMap("frec", rec_b, p.f.cod, p.f.fn,
                    lambda a: [b for b in p.f.preimage(a)
                               if p.s(b).name == "rec"])
    g_rec = DepPolynomial(s_rec, f_rec, p.t, name="Grec")

    if polarity == "inductive":
        positions = _dep_w_family(g_rec)
    else:
        positions = dep_final_via_equalizer(g_rec)[0].carrier

    pos_index, pos_proj = comprehension(positions)
    pos_index.name = f"Pos({p.name})"
    y = pos_proj  # Pos -> I

    def par_slots(tree: Value) -> Iterator[Value]:
        """Paths from the root of a position tree to its parameter slots,
        by increasing depth (fair for infinite trees)."""
        layer = [((), tree)]
        while layer:
            nxt = []
            for path, node in layer:
                obs = node.observe()
                a = obs.fst
                for b in p.f.preimage(a):
                    if p.s(b).name == "par":
                        yield _path_value(path + (b,))
                for b in f_rec.preimage(a):
                    nxt.append((path + (b,), obs.snd.apply(b)))
            layer = nxt

    def slot_fam_fiber(pos: Value) -> FiberSet:
        return LazyFiber(lambda: par_slots(pos.snd))

    slots = FamObject(pos_index, slot_fam_fiber, name="Slots")
    q_index, q_proj = comprehension(slots)
    q_index.name = f"Q({p.name})"
    h = q_proj  # Q -> Pos

    def x_fn(qv: Value) -> Value:
        # follow the path through the tree to the parameter slot
        tree = qv.fst.snd
        path = _path_list(qv.snd)
        for b in path[:-1]:
            tree = tree_children(tree).apply(b)
        return p.s(path[-1]).arg

    x_map = BaseMap("x", q_index, kset, x_fn)
    return DepPolynomial(x_map, h, y, name=f"fix({p.name})")


def _path_value(path: tuple) -> Value:
    v: Value = Tag("here", UNIT)
    for b in reversed(path):
        v = Tag("step", Pair(b, v))
    return v


def _path_list(v: Value) -> list[Value]:
    out = []
    while v.name == "step":
        out.append(v.arg.fst)
        v = v.arg.snd
    return out


def _dep_w_family(p: DepPolynomial) -> FamObject:
    """Well-founded trees of a dependent polynomial, per-index by rounds."""

    def fiber(i: Value) -> FiberSet:
        def gen():
            prev: dict = {}
            emitted: set = set()
            while True:
                nxt: dict = {}
                newly = []
                frontier_indices = _reachable_indices(p, i)
                for j in frontier_indices:
                    rows = []
                    for a in p.t.preimage(j):
                        bs = p.f.preimage(a)
                        lists = [prev.get(ikey(p.s(b)), []) for b in bs]
                        for combo in itertools.product(*lists):
                            rows.append(tree_node(a, list(zip(bs, combo))))
                    nxt[ikey(j)] = rows
                for v in nxt.get(ikey(i), []):
                    if v not in emitted:
                        emitted.add(v)
                        newly.append(v)
                for v in sort_values(newly):
                    yield v
                if all(len(nxt.get(ikey(j), [])) == len(prev.get(ikey(j), []))
                       for j in frontier_indices):
                    return
                prev = nxt

        return LazyFiber(gen)

    return FamObject(p.t.cod, fiber, name=f"W({p.name})")


def _reachable_indices(p: DepPolynomial, i: Value, cap: int = 2048) -> list[Value]:
    seen = {ikey(i): i}
    frontier = [i]
    order = [i]
    while frontier:
        cur = frontier.pop(0)
        for a in p.t.preimage(cur):
            for b in p.f.preimage(a):
                d = p.s(b)
                if ikey(d) not in seen:
                    if len(seen) >= cap:
                        raise BudgetExceeded("index closure too large")
                    seen[ikey(d)] = d
                    order.append(d)
                    frontier.append(d)
    return order
