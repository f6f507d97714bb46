"""Dialgebras and their initial/final fixed points over set families.

Inductive carriers are built by demand-driven constructor closure: the
fiber at an index iterates rounds of the signature functor restricted to
the indices it actually pulls on, stopping when the reachable part of the
approximation is stable for a full round. Coinductive carriers are sets of
transition-system values; fibers materialize exactly when the index demand
graph is acyclic and otherwise stay intensional (membership by
assume-and-verify, enumeration refused).

Recognized adjoint-former signatures (projection-shaped functors) get
canonical concrete carriers: dependent sums are index/value pairs,
dependent products are function graphs, fibrewise sums are tagged values,
fibrewise products are pairs, terminal objects are unit fibers. A codec
mediates between these representations and the generic machinery so that
fold/unfold work uniformly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional

from .config import DEFAULT
from .errors import (BudgetExceeded, IndexMismatch, KernelError, NotFinite)
from .fam import (BaseMap, FamMorphism, FamObject, FiberSet, FiniteFiber,
                  IndexSet, LazyFiber, all_morphisms_over, compose, dedup,
                  fair_interleave, identity, reindex, unit_fam)
from .sig import (PairF, Proj, SPSignature, coprod_sig, dep_prod_sig,
                  dep_sum_sig, initial_sig, prod_sig, terminal_sig,
                  validate_strict)
from .values import (UNIT, CoSystem, CoVal, FnSystem, FunVal, Pair, Tag, Tup,
                     Value, Verdict, bisim, co_literal, eq_values, sort_values,
                     to_text)


@dataclass
class Dialgebra:
    """Structure morphism of a (co)inductive carrier: one component per
    target fibre. Direction 'ind' types components F_k(A) -> u_k*(A),
    'coind' types them u_k*(A) -> F_k(A)."""

    sig: SPSignature
    params: tuple[FamObject, ...]
    carrier: FamObject
    components: tuple[FamMorphism, ...]
    direction: str


@dataclass
class DataType:
    sig: SPSignature
    params: tuple[FamObject, ...]
    polarity: str  # "inductive" | "coinductive"
    carrier: FamObject
    structure: Dialgebra
    codec: object
    name: str = "dt"

    def fiber(self, i: Value) -> FiberSet:
        return self.carrier.fiber(i)

    def card(self, i: Value, budget: Optional[int] = None) -> int:
        return self.fiber(i).card(budget)

    def construct(self, name: str, j: Value, payload: Value) -> Value:
        k = self.sig.names.index(name)
        return self.codec.mk(k, j, payload)

    def destruct(self, name: str, j: Value, x: Value) -> Value:
        k = self.sig.names.index(name)
        return self.structure.components[k].component(j, x)


# ---------------------------------------------------------------------------
# signature recognizers

def _pi1_shape(s: SPSignature) -> bool:
    """F projects the parameter tuple: F(V1..Vn; X) = (V1..Vn)."""
    f = s.functor
    n = s.arity
    if len(s.params) != n:
        return False
    src = s.params + (s.index,)
    if n == 1:
        return isinstance(f, Proj) and f.k == 0 and len(f.source) == len(src)
    return (isinstance(f, PairF) and len(f.parts) == n
            and all(isinstance(p, Proj) and p.k == i for i, p in enumerate(f.parts)))


def _identity_shape(s: SPSignature) -> bool:
    """F is the carrier variable itself and u = (id)."""
    f = s.functor
    return (not s.params and s.arity == 1 and isinstance(f, Proj) and f.k == 0
            and _is_identity(s.maps[0]))


def _is_identity(u: BaseMap) -> bool:
    return u.name.startswith("id_")


# ---------------------------------------------------------------------------
# codecs: representation of carrier elements

class GenericIndCodec:
    def __init__(self, names: list[str]):
        self.names = names

    def mk(self, k: int, j: Value, x: Value) -> Value:
        return Tag(self.names[k], Pair(j, x))

    def un(self, i: Value, v: Value):
        if not isinstance(v, Tag) or not isinstance(v.arg, Pair):
            return None
        if v.name not in self.names:
            return None
        return self.names.index(v.name), v.arg.fst, v.arg.snd


class DepSumCodec:
    """Single constructor along f: elements are bare pairs (j, x)."""

    def mk(self, k: int, j: Value, x: Value) -> Value:
        return Pair(j, x)

    def un(self, i: Value, v: Value):
        if not isinstance(v, Pair):
            return None
        return 0, v.fst, v.snd


class FibSumCodec:
    """Fibrewise sum: u_k = id, so the J-index is the fiber index itself."""

    def __init__(self, names: list[str]):
        self.names = names

    def mk(self, k: int, j: Value, x: Value) -> Value:
        return Tag(self.names[k], x)

    def un(self, i: Value, v: Value):
        if not isinstance(v, Tag) or v.name not in self.names:
            return None
        return self.names.index(v.name), i, v.arg


class GenericCoCodec:
    """Elements are CoVals observing a Tup of function graphs, one per
    destructor, keyed by the u_k-preimage of the element's index."""

    arity: int

    def __init__(self, arity: int):
        self.arity = arity

    def obs_at(self, i: Value, x: Value, k: int, j: Value) -> Value:
        obs = x.observe()
        return obs.items[k].apply(j)

    def make(self, row: Value) -> Value:
        return co_literal(row)

    def row_of(self, x: Value) -> Value:
        return x.observe()


class ProdRowCodec:
    """Non-recursive product-of-dependent-products: elements are the rows."""

    def __init__(self, arity: int):
        self.arity = arity

    def obs_at(self, i: Value, x: Value, k: int, j: Value) -> Value:
        return x.items[k].apply(j)

    def make(self, row: Value) -> Value:
        return row

    def row_of(self, x: Value) -> Value:
        return x


class DepProdCodec:
    """Single destructor along f: elements are bare function graphs."""

    arity = 1

    def obs_at(self, i: Value, x: Value, k: int, j: Value) -> Value:
        return x.apply(j)

    def make(self, row: Value) -> Value:
        return row.items[0]

    def row_of(self, x: Value) -> Value:
        return Tup([x])


class FibProdCodec:
    """Binary fibrewise product: elements are pairs."""

    arity = 2

    def obs_at(self, i: Value, x: Value, k: int, j: Value) -> Value:
        return x.fst if k == 0 else x.snd

    def make(self, row: Value) -> Value:
        return Pair(row.items[0].apply(_only_key(row.items[0])),
                    row.items[1].apply(_only_key(row.items[1])))

    def row_of(self, x: Value) -> Value:
        raise KernelError("row_of is index-dependent for fibrewise products")


class TerminalCodec:
    arity = 1

    def obs_at(self, i: Value, x: Value, k: int, j: Value) -> Value:
        return UNIT

    def make(self, row: Value) -> Value:
        return UNIT

    def row_of(self, x: Value) -> Value:
        raise KernelError("row_of is index-dependent for terminal objects")


def _only_key(fv: FunVal) -> Value:
    if len(fv.entries) != 1:
        raise KernelError("expected a singleton function graph")
    return fv.entries[0][0]


# ---------------------------------------------------------------------------
# the observation-row family H(Y)_i = prod_k Pi_{u_k} F_k(params, Y)

def _row_fiber(s: SPSignature, params: tuple[FamObject, ...], y: FamObject,
               i: Value, budget: Optional[int] = None) -> list[Value]:
    fy = s.apply_f(params, y)
    per_k: list[list[FunVal]] = []
    for k, u in enumerate(s.maps):
        js = u.preimage(i)
        value_lists = [fy[k].fiber(j).list(budget) for j in js]
        funvals = []
        for combo in itertools.product(*value_lists):
            funvals.append(FunVal(list(zip(js, combo))))
        per_k.append(funvals)
    return [Tup(row) for row in itertools.product(*per_k)]


def row_fam(s: SPSignature, params: tuple[FamObject, ...], y: FamObject,
            name: str = "H") -> FamObject:
    return FamObject(
        s.index,
        lambda i: FiniteFiber(_row_fiber(s, params, y, i)),
        name=f"{name}({y.name})")


def observation_classes(dt: "DataType", i: Value, depth: int,
                        budget: Optional[int] = None) -> list[Value]:
    """Depth-d observation classes of a coinductive carrier: the fiber of
    the d-fold functor iterate applied to the terminal family."""
    y = unit_fam(dt.sig.index)
    for _ in range(depth):
        y = row_fam(dt.sig, dt.params, y)
    return y.fiber(i).list(budget)


# ---------------------------------------------------------------------------
# inductive carriers

class _DelegatingRecorder(FamObject):
    """Wraps a family and records which fibers get pulled."""

    def __init__(self, inner: FamObject, record: set):
        self._inner = inner
        self._record = record
        super().__init__(inner.base, inner._fiber_fn, inner.name)

    def fiber(self, i):
        self._record.add(i)
        return self._inner.fiber(i)


class _MuFibers:
    def __init__(self, sig: SPSignature, params: tuple[FamObject, ...],
                 codec, name: str):
        self.sig = sig
        self.params = params
        self.codec = codec
        self.name = name
        self._elems: dict = {}    # (round, index) -> list of elements
        self._demand: dict = {}   # (round, index) -> set of demanded indices
        self.carrier = FamObject(sig.index, self._fiber, name=name)

    def _approx_fam(self, r: int) -> FamObject:
        return FamObject(self.sig.index,
                         lambda i: FiniteFiber(self.elems(r, i), sort=False),
                         name=f"{self.name}@{r}")

    def elems(self, r: int, i: Value) -> list[Value]:
        key = (r, i)
        if key in self._elems:
            return self._elems[key]
        if r <= 0:
            self._elems[key] = []
            self._demand[key] = set()
            return []
        record: set = set()
        wrapped = _DelegatingRecorder(self._approx_fam(r - 1), record)
        fx = self.sig.apply_f(self.params, wrapped)
        out: list[Value] = []
        seen: set = set()
        for k, u in enumerate(self.sig.maps):
            for j in u.preimage(i):
                for x in fx[k].fiber(j).list():
                    v = self.codec.mk(k, j, x)
                    if v not in seen:
                        seen.add(v)
                        out.append(v)
        self._elems[key] = out
        self._demand[key] = record
        return out

    def _closure(self, r: int, i: Value) -> list[Value]:
        seen = {i}
        frontier = [i]
        order = [i]
        while frontier:
            cur = frontier.pop(0)
            self.elems(r, cur)
            for nxt in self._demand[(r, cur)]:
                if nxt not in seen:
                    seen.add(nxt)
                    order.append(nxt)
                    frontier.append(nxt)
        return order

    def _stable(self, r: int, i: Value) -> bool:
        if r < 2:
            return False
        cl_now = self._closure(r, i)
        cl_prev = self._closure(r - 1, i)
        if {*cl_now} != {*cl_prev}:
            return False
        for j in cl_now:
            if len(self.elems(r, j)) != len(self.elems(r - 1, j)):
                return False
        return True

    def _fiber(self, i: Value) -> FiberSet:
        def gen() -> Iterator[Value]:
            emitted: set = set()
            r = 1
            while True:
                fresh = [v for v in self.elems(r, i) if v not in emitted]
                for v in sort_values(fresh):
                    emitted.add(v)
                    yield v
                if self._stable(r, i):
                    return
                r += 1

        return LazyFiber(gen, membership=lambda v: self._member(i, v))

    def _member(self, i: Value, v: Value):
        got = self.codec.un(i, v)
        if got is None:
            return False
        k, j, x = got
        u = self.sig.maps[k]
        if not eq_values(u(j), i):
            return False
        fx = self.sig.apply_f(self.params, self.carrier)
        return fx[k].fiber(j).contains(x)


def build_inductive(sig: SPSignature, params: tuple[FamObject, ...] = (),
                    name: Optional[str] = None) -> DataType:
    validate_strict(sig)
    if len(params) != len(sig.params):
        raise IndexMismatch(
            f"{sig.name} takes {len(sig.params)} parameters, got {len(params)}")
    name = name or f"mu({sig.name})"
    if _pi1_shape(sig):
        if sig.arity == 1:
            codec = DepSumCodec()
        elif sig.arity == 2 and all(_is_identity(u) for u in sig.maps):
            codec = FibSumCodec(sig.names)
        else:
            codec = GenericIndCodec(sig.names)
        carrier = FamObject(
            sig.index,
            lambda i: _former_sum_fiber(sig, params, codec, i),
            name=name)
        dt = DataType(sig, params, "inductive", carrier, None, codec, name)
    else:
        mu = _MuFibers(sig, params, GenericIndCodec(sig.names), name)
        dt = DataType(sig, params, "inductive", mu.carrier, None, mu.codec, name)
    dt.structure = _constructors(dt)
    return dt


def _former_sum_fiber(sig: SPSignature, params, codec, i: Value) -> FiberSet:
    def gen():
        def part(k, j):
            return lambda: (codec.mk(k, j, x)
                            for x in params[k].fiber(j).iter_values())

        parts = [part(k, j)
                 for k, u in enumerate(sig.maps) for j in u.preimage(i)]
        yield from dedup(fair_interleave(parts))

    def member(v):
        got = codec.un(i, v)
        if got is None:
            return False
        k, j, x = got
        if not eq_values(sig.maps[k](j), i):
            return False
        return params[k].fiber(j).contains(x)

    return LazyFiber(gen, membership=member)


def _constructors(dt: DataType) -> Dialgebra:
    fx = dt.sig.apply_f(dt.params, dt.carrier)
    comps = []
    for k, u in enumerate(dt.sig.maps):
        star, _ = reindex(u, dt.carrier)
        comps.append(FamMorphism(
            fx[k], star, BaseMap.identity(u.dom),
            lambda j, x, _k=k: dt.codec.mk(_k, j, x),
            name=f"{dt.sig.names[k]}"))
    return Dialgebra(dt.sig, dt.params, dt.carrier, tuple(comps), "ind")


def fold(dt: DataType, d: Dialgebra) -> FamMorphism:
    """The inductive extension: structural recursion over constructor
    derivations. d must be an (F, G_u)-dialgebra for the same signature."""
    if dt.polarity != "inductive":
        raise IndexMismatch("fold needs an inductive data type")
    if d.direction != "ind":
        raise IndexMismatch("fold needs an algebra-side dialgebra")

    h_holder: list = []

    def component(i: Value, v: Value) -> Value:
        got = dt.codec.un(i, v)
        if got is None:
            raise KernelError(f"{to_text(v)} is not an element of {dt.name} "
                              f"at {to_text(i)}")
        k, j, x = got
        fh = dt.sig.apply_f_mor(d.params, h_holder[0])[k]
        return d.components[k].component(j, fh.component(j, x))

    h = FamMorphism(dt.carrier, d.carrier, BaseMap.identity(dt.sig.index),
                    component, name=f"fold({dt.name})")
    h_holder.append(h)
    return h


def mu_action(sig: SPSignature, fs: tuple[FamMorphism, ...]) -> FamMorphism:
    """Functorial action of mu on parameter morphisms: the inductive
    extension of alpha_W . F(f, id)."""
    dt_v = build_inductive(sig, tuple(f.dom for f in fs))
    dt_w = build_inductive(sig, tuple(f.cod for f in fs))
    fw = sig.functor.on_morphisms(tuple(fs) + (identity(dt_w.carrier),))
    comps = []
    for k in range(sig.arity):
        comps.append(compose(dt_w.structure.components[k], fw[k]))
    # components accept F_k(V, mu W) elements, so the dialgebra's parameters
    # are the domains of fs
    d = Dialgebra(sig, tuple(f.dom for f in fs), dt_w.carrier, tuple(comps), "ind")
    return fold(dt_v, d)


# ---------------------------------------------------------------------------
# coinductive carriers

class _PairKeySet:
    """Set of (hashable, Value) pairs with value equality on the second slot."""

    def __init__(self):
        self._buckets: dict = {}

    def key(self, a, i: Value):
        return (a, hash(i))

    def has(self, a, i: Value) -> bool:
        for j in self._buckets.get(self.key(a, i), ()):
            if eq_values(i, j):
                return True
        return False

    def add(self, a, i: Value):
        self._buckets.setdefault(self.key(a, i), []).append(i)


class _NuCarrier:
    def __init__(self, sig: SPSignature, params: tuple[FamObject, ...],
                 name: str):
        self.sig = sig
        self.params = params
        self.name = name
        self.codec = GenericCoCodec(sig.arity)
        self._mat_cache: dict = {}
        self.carrier = FamObject(sig.index, self._fiber, name=name)
        self.enumerator_override: Optional[Callable[[Value], Iterator[Value]]] = None

    # -- demand analysis ----------------------------------------------------

    def _demands(self, i: Value) -> set:
        record: set = set()
        probe = _RecorderFamWrap(self.sig.index, record)
        fx = self.sig.apply_f(self.params, probe)
        for k, u in enumerate(self.sig.maps):
            for j in u.preimage(i):
                try:
                    fx[k].fiber(j).sample(1)
                    fx[k].fiber(j).try_list(64)
                except (BudgetExceeded, NotFinite):
                    pass
        return record

    def _demand_closure(self, i: Value, cap: int = 4096):
        seen = {i}
        order = [i]
        frontier = [i]
        edges = {}
        while frontier:
            cur = frontier.pop(0)
            ds = self._demands(cur)
            edges[cur] = ds
            for nxt in ds:
                if nxt not in seen:
                    if len(seen) >= cap:
                        return None
                    seen.add(nxt)
                    order.append(nxt)
                    frontier.append(nxt)
        return order, edges

    def _acyclic_order(self, i: Value) -> Optional[list[Value]]:
        got = self._demand_closure(i)
        if got is None:
            return None
        order, edges = got
        # Kahn's algorithm; any leftover means a cycle through i's closure
        indeg = {j: 0 for j in order}
        for j in order:
            for d in edges[j]:
                if d in indeg:
                    indeg[d] += 1
        topo = [j for j in order if indeg[j] == 0]
        pos = 0
        while pos < len(topo):
            cur = topo[pos]
            pos += 1
            for d in edges[cur]:
                indeg[d] -= 1
                if indeg[d] == 0:
                    topo.append(d)
        if len(topo) != len(order):
            return None
        topo.reverse()  # children first
        return topo

    # -- fibers ---------------------------------------------------------------

    def _materialize(self, order: list[Value]) -> None:
        # children come first in the order, so each row only pulls fibers
        # that are already in the cache
        done = FamObject(self.sig.index,
                         lambda j: FiniteFiber(self._mat_cache[j]),
                         name=self.name)
        for j in order:
            if j in self._mat_cache:
                continue
            rows = _row_fiber(self.sig, self.params, done, j)
            self._mat_cache[j] = [self.codec.make(r) for r in rows]

    def _fiber(self, i: Value) -> FiberSet:
        if i in self._mat_cache:
            return FiniteFiber(self._mat_cache[i])
        order = self._acyclic_order(i)
        if order is not None:
            try:
                self._materialize(order)
                return FiniteFiber(self._mat_cache[i])
            except (BudgetExceeded, NotFinite):
                pass

        def gen():
            if self.enumerator_override is not None:
                yield from self.enumerator_override(i)
            else:
                raise NotFinite(
                    f"{self.name}: fiber at {to_text(i)} is a cyclic "
                    f"coinductive set; enumerate observation classes instead")

        return LazyFiber(gen, membership=lambda v: self.member(i, v))

    # -- membership -----------------------------------------------------------

    def member(self, i: Value, v: Value, depth: Optional[int] = None):
        depth = depth if depth is not None else DEFAULT.observation_depth
        assumed = _PairKeySet()
        return self._member(i, v, depth, assumed)

    def _member(self, i: Value, v: Value, depth: int, assumed) :
        if not isinstance(v, CoVal):
            return False
        key = v.node_key()
        if assumed.has(key, i):
            return True
        if depth <= 0:
            return None
        assumed.add(key, i)
        row = v.observe()
        if not isinstance(row, Tup) or len(row.items) != self.sig.arity:
            return False
        fx = self.sig.apply_f(self.params, self._probe(depth - 1, assumed))
        for k, u in enumerate(self.sig.maps):
            comp = row.items[k]
            if not isinstance(comp, FunVal):
                return False
            js = u.preimage(i)
            if len(js) != len(comp.entries):
                return False
            for j in js:
                try:
                    w = comp.apply(j)
                except KernelError:
                    return False
                got = fx[k].fiber(j).contains(w)
                if got is False:
                    return False
                if got is None:
                    return None
        return True

    def _probe(self, depth: int, assumed) -> FamObject:
        return FamObject(
            self.sig.index,
            lambda j: LazyFiber(
                lambda: iter(()),
                membership=lambda w, _j=j: self._member(_j, w, depth, assumed)),
            name=f"{self.name}?")


class _RecorderFamWrap(FamObject):
    def __init__(self, base: IndexSet, record: set):
        self._record = record
        super().__init__(base, lambda i: FiniteFiber([]), name="recorder")

    def fiber(self, i):
        self._record.add(i)
        return super().fiber(i)


def build_coinductive(sig: SPSignature, params: tuple[FamObject, ...] = (),
                      name: Optional[str] = None) -> DataType:
    validate_strict(sig)
    if len(params) != len(sig.params):
        raise IndexMismatch(
            f"{sig.name} takes {len(sig.params)} parameters, got {len(params)}")
    name = name or f"nu({sig.name})"
    if _identity_shape(sig):
        carrier = unit_fam(sig.index, name)
        dt = DataType(sig, params, "coinductive", carrier, None,
                      TerminalCodec(), name)
    elif _pi1_shape(sig):
        if sig.arity == 1:
            codec = DepProdCodec()
        elif sig.arity == 2 and all(_is_identity(u) for u in sig.maps):
            codec = FibProdCodec()
        else:
            codec = ProdRowCodec(sig.arity)
        carrier = FamObject(
            sig.index,
            lambda i: _former_prod_fiber(sig, params, codec, i),
            name=name)
        dt = DataType(sig, params, "coinductive", carrier, None, codec, name)
    else:
        nu = _NuCarrier(sig, params, name)
        dt = DataType(sig, params, "coinductive", nu.carrier, None, nu.codec, name)
        dt.intensional = nu
    dt.structure = _destructors(dt)
    return dt


def _former_prod_fiber(sig: SPSignature, params, codec, i: Value) -> FiberSet:
    def rows():
        for row in _row_fiber_params(sig, params, i):
            yield codec.make(row)

    def member(v):
        row = _codec_row(codec, sig, i, v)
        if row is None:
            return False
        for k, u in enumerate(sig.maps):
            comp = row.items[k]
            js = u.preimage(i)
            if not isinstance(comp, FunVal) or len(js) != len(comp.entries):
                return False
            for j in js:
                try:
                    w = comp.apply(j)
                except KernelError:
                    return False
                got = params[k].fiber(j).contains(w)
                if got is not True:
                    return got
        return True

    return LazyFiber(rows, membership=member)


def _row_fiber_params(sig: SPSignature, params, i: Value) -> list[Value]:
    per_k = []
    for k, u in enumerate(sig.maps):
        js = u.preimage(i)
        value_lists = [params[k].fiber(j).list() for j in js]
        funvals = [FunVal(list(zip(js, combo)))
                   for combo in itertools.product(*value_lists)]
        per_k.append(funvals)
    return [Tup(row) for row in itertools.product(*per_k)]


def _codec_row(codec, sig: SPSignature, i: Value, v: Value):
    """Recover the observation row from a former's concrete element."""
    if isinstance(codec, DepProdCodec):
        if not isinstance(v, FunVal):
            return None
        return Tup([v])
    if isinstance(codec, FibProdCodec):
        if not isinstance(v, Pair):
            return None
        return Tup([FunVal([(i, v.fst)]), FunVal([(i, v.snd)])])
    if isinstance(codec, TerminalCodec):
        return Tup([FunVal([(i, UNIT)])]) if eq_values(v, UNIT) else None
    if not isinstance(v, Tup):
        return None
    return v


def _destructors(dt: DataType) -> Dialgebra:
    fx = dt.sig.apply_f(dt.params, dt.carrier)
    comps = []
    for k, u in enumerate(dt.sig.maps):
        star, _ = reindex(u, dt.carrier)
        comps.append(FamMorphism(
            star, fx[k], BaseMap.identity(u.dom),
            lambda j, x, _k=k, _u=u: dt.codec.obs_at(_u(j), x, _k, j),
            name=f"{dt.sig.names[k]}"))
    return Dialgebra(dt.sig, dt.params, dt.carrier, tuple(comps), "coind")


class _UnfoldSystem(CoSystem):
    def __init__(self, dt: DataType, d: Dialgebra):
        super().__init__(label=f"unfold({dt.name})")
        self.dt = dt
        self.d = d
        self._h: Optional[FamMorphism] = None

    def step(self, state) -> Value:
        i, x = state
        sig = self.dt.sig
        fh = sig.apply_f_mor(self.d.params, self._h)
        row = []
        for k, u in enumerate(sig.maps):
            entries = []
            for j in u.preimage(i):
                w = self.d.components[k].component(j, x)
                entries.append((j, fh[k].component(j, w)))
            row.append(FunVal(entries))
        return Tup(row)


def unfold(dt: DataType, d: Dialgebra) -> FamMorphism:
    """The coinductive extension of a (G_u, F)-dialgebra d into the CDT."""
    if dt.polarity != "coinductive":
        raise IndexMismatch("unfold needs a coinductive data type")
    if d.direction != "coind":
        raise IndexMismatch("unfold needs a coalgebra-side dialgebra")
    codec = dt.codec
    if isinstance(codec, GenericCoCodec):
        sys_ = _UnfoldSystem(dt, d)

        def component(i: Value, x: Value) -> Value:
            return CoVal(sys_, (i, x))

        h = FamMorphism(d.carrier, dt.carrier, BaseMap.identity(dt.sig.index),
                        component, name=f"unfold({dt.name})")
        sys_._h = h
        return h

    # former codecs: elements are finite rows; build them directly
    def component(i: Value, x: Value) -> Value:
        row = []
        fh = dt.sig.apply_f_mor(d.params, h_holder[0])
        for k, u in enumerate(dt.sig.maps):
            entries = []
            for j in u.preimage(i):
                w = d.components[k].component(j, x)
                entries.append((j, fh[k].component(j, w)))
            row.append(FunVal(entries))
        return codec.make(Tup(row))

    h_holder: list = []
    h = FamMorphism(d.carrier, dt.carrier, BaseMap.identity(dt.sig.index),
                    component, name=f"unfold({dt.name})")
    h_holder.append(h)
    return h


def nu_action(sig: SPSignature, fs: tuple[FamMorphism, ...]) -> FamMorphism:
    """Functorial action of nu: the coinductive extension of F(f, id) . xi_V."""
    dt_v = build_coinductive(sig, tuple(f.dom for f in fs))
    dt_w = build_coinductive(sig, tuple(f.cod for f in fs))
    fv = sig.functor.on_morphisms(tuple(fs) + (identity(dt_v.carrier),))
    comps = []
    for k in range(sig.arity):
        comps.append(compose(fv[k], dt_v.structure.components[k]))
    d = Dialgebra(sig, tuple(f.cod for f in fs), dt_v.carrier, tuple(comps), "coind")
    return unfold(dt_w, d)


def one_step_coinductive(dt: DataType, rows: Callable[[Value, Value], Value]) -> FamMorphism:
    """Unique g with xi(g x) = rows(i, x): the one-step extension at the
    carrier, realized as the system whose observation is the row itself."""
    sys_ = FnSystem(lambda st: rows(st[0], st[1]), label=f"onestep({dt.name})")

    def component(i: Value, x: Value) -> Value:
        if isinstance(dt.codec, GenericCoCodec):
            return CoVal(sys_, (i, x))
        return dt.codec.make(rows(i, x))

    return FamMorphism(dt.carrier, dt.carrier, BaseMap.identity(dt.sig.index),
                       component, name=f"onestep({dt.name})")


# ---------------------------------------------------------------------------
# homomorphisms

def is_homomorphism(h: FamMorphism, c: Dialgebra, d: Dialgebra,
                    budget: Optional[int] = None,
                    depth: Optional[int] = None) -> Verdict:
    """Checks G h . c = d . F h (or the coinductive dual) pointwise on every
    element within budget; BudgetExceeded reports as inconclusive."""
    budget = budget if budget is not None else DEFAULT.enumeration_budget
    if c.direction != d.direction:
        raise IndexMismatch("cannot compare dialgebras of opposite direction")
    sig = c.sig
    inconclusive = False
    fh = sig.apply_f_mor(c.params, h)
    gh = sig.apply_g_mor(h)
    for k, u in enumerate(sig.maps):
        js = u.dom.try_list(budget)
        if js is None:
            js = u.dom.sample(min(budget, 64))
            inconclusive = True
        for j in js:
            if c.direction == "ind":
                dom_fiber = c.sig.apply_f(c.params, c.carrier)[k].fiber(j)
            else:
                dom_fiber = c.carrier.fiber(u(j))
            elems = dom_fiber.try_list(budget)
            if elems is None:
                elems = dom_fiber.sample(min(budget, 64))
                inconclusive = True
            for x in elems:
                if c.direction == "ind":
                    lhs = gh[k].component(j, c.components[k].component(j, x))
                    rhs = d.components[k].component(j, fh[k].component(j, x))
                else:
                    lhs = d.components[k].component(j, h.component(u(j), x))
                    rhs = fh[k].component(j, c.components[k].component(j, x))
                v = bisim(lhs, rhs, depth=depth)
                if v.result is False:
                    return Verdict(False,
                                   f"square fails at k={k} j={to_text(j)} "
                                   f"x={to_text(x)}: {to_text(lhs)} != {to_text(rhs)}")
                if v.result is None:
                    inconclusive = True
    return Verdict(None) if inconclusive else Verdict(True)


def exhaustive_homomorphisms(c: Dialgebra, d: Dialgebra,
                             budget: Optional[int] = None) -> list[FamMorphism]:
    """All homomorphisms between two fully finite dialgebras, by brute force."""
    out = []
    ident = BaseMap.identity(c.sig.index)
    for h in all_morphisms_over(ident, c.carrier, d.carrier, budget):
        if is_homomorphism(h, c, d, budget).result is True:
            out.append(h)
    return out


# ---------------------------------------------------------------------------
# dialgebra <-> (co)algebra transposes

def alg_functor(sig: SPSignature, params: tuple[FamObject, ...],
                x: FamObject) -> FamObject:
    """T(X) = coprod_k coprod_{u_k} F_k(X), the algebra side of the
    dialgebra-to-algebra isomorphism."""
    fx = sig.apply_f(params, x)

    def fiber(i: Value) -> FiberSet:
        def gen():
            def part(k, j):
                return lambda: (Tag(sig.names[k], Pair(j, w))
                                for w in fx[k].fiber(j).iter_values())

            parts = [part(k, j)
                     for k, u in enumerate(sig.maps) for j in u.preimage(i)]
            yield from fair_interleave(parts)

        def member(v):
            if not isinstance(v, Tag) or v.name not in sig.names:
                return False
            if not isinstance(v.arg, Pair):
                return False
            k = sig.names.index(v.name)
            j, w = v.arg.fst, v.arg.snd
            if not eq_values(sig.maps[k](j), i):
                return False
            return fx[k].fiber(j).contains(w)

        return LazyFiber(gen, membership=member)

    return FamObject(sig.index, fiber, name=f"T({x.name})")


def coalg_functor(sig: SPSignature, params: tuple[FamObject, ...],
                  x: FamObject) -> FamObject:
    """C(X) = prod_k prod_{u_k} F_k(X), the coalgebra side."""
    return row_fam(sig, params, x, name="C")


def dialg_to_alg(d: Dialgebra) -> FamMorphism:
    t = alg_functor(d.sig, d.params, d.carrier)

    def component(i: Value, v: Value) -> Value:
        k = d.sig.names.index(v.name)
        return d.components[k].component(v.arg.fst, v.arg.snd)

    return FamMorphism(t, d.carrier, BaseMap.identity(d.sig.index), component,
                       name="alg")


def alg_to_dialg(sig: SPSignature, params: tuple[FamObject, ...],
                 carrier: FamObject, a: FamMorphism) -> Dialgebra:
    fx = sig.apply_f(params, carrier)
    comps = []
    for k, u in enumerate(sig.maps):
        star, _ = reindex(u, carrier)
        comps.append(FamMorphism(
            fx[k], star, BaseMap.identity(u.dom),
            lambda j, w, _k=k, _u=u: a.component(_u(j), Tag(sig.names[_k], Pair(j, w))),
            name=f"d{k}"))
    return Dialgebra(sig, params, carrier, tuple(comps), "ind")


def dialg_to_coalg(d: Dialgebra) -> FamMorphism:
    c = coalg_functor(d.sig, d.params, d.carrier)

    def component(i: Value, x: Value) -> Value:
        row = []
        for k, u in enumerate(d.sig.maps):
            entries = [(j, d.components[k].component(j, x)) for j in u.preimage(i)]
            row.append(FunVal(entries))
        return Tup(row)

    return FamMorphism(d.carrier, c, BaseMap.identity(d.sig.index), component,
                       name="coalg")


def coalg_to_dialg(sig: SPSignature, params: tuple[FamObject, ...],
                   carrier: FamObject, c: FamMorphism) -> Dialgebra:
    fx = sig.apply_f(params, carrier)
    comps = []
    for k, u in enumerate(sig.maps):
        star, _ = reindex(u, carrier)
        comps.append(FamMorphism(
            star, fx[k], BaseMap.identity(u.dom),
            lambda j, x, _k=k, _u=u: c.component(_u(j), x).items[_k].apply(j),
            name=f"d{k}"))
    return Dialgebra(sig, params, carrier, tuple(comps), "coind")


# ---------------------------------------------------------------------------
# adjoint formers

def coproduct(x: FamObject, y: FamObject) -> DataType:
    if not x.base.same(y.base):
        raise IndexMismatch("fibrewise coproduct needs families over one base")
    return build_inductive(coprod_sig(x.base), (x, y), name=f"({x.name}+{y.name})")


def product(x: FamObject, y: FamObject) -> DataType:
    if not x.base.same(y.base):
        raise IndexMismatch("fibrewise product needs families over one base")
    return build_coinductive(prod_sig(x.base), (x, y), name=f"({x.name}x{y.name})")


def dep_sum(f: BaseMap, x: FamObject) -> DataType:
    if not f.dom.same(x.base):
        raise IndexMismatch(f"dependent sum along {f.name} needs a family over "
                            f"{f.dom.name}")
    return build_inductive(dep_sum_sig(f), (x,), name=f"Sum_{f.name}({x.name})")


def dep_prod(f: BaseMap, x: FamObject) -> DataType:
    if not f.dom.same(x.base):
        raise IndexMismatch(f"dependent product along {f.name} needs a family "
                            f"over {f.dom.name}")
    return build_coinductive(dep_prod_sig(f), (x,), name=f"Prod_{f.name}({x.name})")


def terminal(index: IndexSet) -> DataType:
    return build_coinductive(terminal_sig(index), (), name=f"Top_{index.name}")


def initial(index: IndexSet) -> DataType:
    return build_inductive(initial_sig(index), (), name=f"Bot_{index.name}")


def diagonal_map(index: IndexSet) -> BaseMap:
    from .fam import ProductIndexSet
    prod_idx = ProductIndexSet(index, index)

    def pre(p: Value):
        if isinstance(p, Pair) and eq_values(p.fst, p.snd):
            return [p.fst]
        return []

    return BaseMap(f"delta_{index.name}", index, prod_idx,
                   lambda i: Pair(i, i), pre)


def eq_type(x: FamObject) -> DataType:
    """Propositional equality: the dependent sum along the diagonal."""
    return dep_sum(diagonal_map(x.base), x)


def refl(x: FamObject, eq_dt: DataType) -> FamMorphism:
    """x -> delta*(Eq x), the constructor of propositional equality."""
    delta = diagonal_map(x.base)
    star, _ = reindex(delta, eq_dt.carrier)
    return FamMorphism(x, star, BaseMap.identity(x.base),
                       lambda i, v: Pair(i, v), name="refl")


def sum_transpose(f: BaseMap, y: FamObject, g: FamMorphism,
                  sum_dt: DataType) -> FamMorphism:
    """Hom(X, f*Y) -> Hom(Sum_f X, Y): (j, (i, x)) -> g_i(x)."""
    return FamMorphism(sum_dt.carrier, y, BaseMap.identity(f.cod),
                       lambda j, v: g.component(v.fst, v.snd),
                       name=f"transp({g.name})")


def sum_untranspose(f: BaseMap, y: FamObject, h: FamMorphism,
                    x: FamObject) -> FamMorphism:
    """Hom(Sum_f X, Y) -> Hom(X, f*Y)."""
    star, _ = reindex(f, y)
    return FamMorphism(x, star, BaseMap.identity(f.dom),
                       lambda i, v: h.component(f(i), Pair(i, v)),
                       name=f"untransp({h.name})")


def prod_transpose(f: BaseMap, x: FamObject, g: FamMorphism,
                   prod_dt: DataType) -> FamMorphism:
    """Hom(f*X, Y) -> Hom(X, Prod_f Y)."""
    return FamMorphism(x, prod_dt.carrier, BaseMap.identity(f.cod),
                       lambda j, v: FunVal([(i, g.component(i, v))
                                            for i in f.preimage(j)]),
                       name=f"transp({g.name})")


def prod_untranspose(f: BaseMap, x: FamObject, h: FamMorphism,
                     y: FamObject) -> FamMorphism:
    """Hom(X, Prod_f Y) -> Hom(f*X, Y)."""
    star, _ = reindex(f, x)
    return FamMorphism(star, y, BaseMap.identity(f.dom),
                       lambda i, v: h.component(f(i), v).apply(i),
                       name=f"untransp({h.name})")
