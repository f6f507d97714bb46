"""Standard constructions used throughout tests and the CLI prelude:
natural numbers, lists over the unit set, conatural numbers with the
successor, vectors, streams and partial streams.

Everything here is produced by the kernel's own builders; this module only
fixes names, index sets and the structural preimages of the base maps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import dialg
from .dialg import DataType, Dialgebra, build_coinductive, build_inductive
from .errors import KernelError
from .fam import (BaseMap, ComprehensionIndexSet, FamMorphism, FamObject,
                  IndexSet, UNIT_SET, bang, comprehension, fin, unit_fam)
from .sig import (Compose, Const, Mu, PairF, Proj, Reindex, SPSignature,
                  coprod_sig, fprod, fsum)
from .values import (UNIT, CoVal, ExplicitSystem, FunVal, Pair, Tag, Tup,
                     Value, eq_values)


@dataclass
class NatKit:
    dt: DataType
    index: IndexSet       # comprehension of the carrier
    z: BaseMap            # Unit -> N
    s: BaseMap            # N -> N

    def lit(self, n: int) -> Value:
        v = Tag("z", Pair(UNIT, UNIT))
        for _ in range(n):
            v = Tag("s", Pair(UNIT, v))
        return Pair(UNIT, v)

    def to_int(self, idx: Value) -> int:
        v = idx.snd
        n = 0
        while v.name == "s":
            v = v.arg.snd
            n += 1
        return n


def nat_signature() -> SPSignature:
    src = (UNIT_SET,)
    f = PairF([Const(unit_fam(UNIT_SET), src), Proj(0, src)])
    ident = BaseMap.identity(UNIT_SET)
    return SPSignature(f, [ident, ident], UNIT_SET, params=(),
                       names=["z", "s"], name="Nat")


def nat() -> NatKit:
    dt = build_inductive(nat_signature(), (), name="Nat")
    index, _ = comprehension(dt.carrier)
    index.name = "Nat"

    def z_fn(_v: Value) -> Value:
        return Pair(UNIT, Tag("z", Pair(UNIT, UNIT)))

    def s_fn(v: Value) -> Value:
        return Pair(UNIT, Tag("s", Pair(UNIT, v.snd)))

    def s_pre(v: Value):
        inner = v.snd
        if isinstance(inner, Tag) and inner.name == "s":
            return [Pair(UNIT, inner.arg.snd)]
        return []

    z = BaseMap("z", UNIT_SET, index, z_fn,
                lambda v: [UNIT] if isinstance(v.snd, Tag) and v.snd.name == "z" else [])
    s = BaseMap("s", index, index, s_fn, s_pre)
    return NatKit(dt, index, z, s)


@dataclass
class ListKit:
    dt: DataType
    index: IndexSet
    nil: BaseMap          # Unit -> List
    cons: BaseMap         # List -> List

    def lit(self, n: int) -> Value:
        v = Tag("nil", Pair(UNIT, UNIT))
        for _ in range(n):
            v = Tag("cons", Pair(UNIT, v))
        return Pair(UNIT, v)

    def length(self, idx: Value) -> int:
        v = idx.snd
        n = 0
        while v.name == "cons":
            v = v.arg.snd
            n += 1
        return n


def list_unit() -> ListKit:
    src = (UNIT_SET,)
    f = PairF([Const(unit_fam(UNIT_SET), src), Proj(0, src)])
    ident = BaseMap.identity(UNIT_SET)
    sig = SPSignature(f, [ident, ident], UNIT_SET, params=(),
                      names=["nil", "cons"], name="ListU")
    dt = build_inductive(sig, (), name="ListU")
    index, _ = comprehension(dt.carrier)
    index.name = "ListU"

    nil = BaseMap("nil", UNIT_SET, index,
                  lambda _v: Pair(UNIT, Tag("nil", Pair(UNIT, UNIT))),
                  lambda v: [UNIT] if v.snd.name == "nil" else [])
    cons = BaseMap("cons", index, index,
                   lambda v: Pair(UNIT, Tag("cons", Pair(UNIT, v.snd))),
                   lambda v: [Pair(UNIT, v.snd.arg.snd)] if v.snd.name == "cons" else [])
    return ListKit(dt, index, nil, cons)


def list_to_nat_iso(lists: ListKit, nats: NatKit) -> BaseMap:
    """The dialgebra isomorphism g : List(Unit) -> Nat (fold of (z, s))."""

    def fn(v: Value) -> Value:
        n = lists.length(v)
        return nats.lit(n)

    def pre(w: Value):
        return [lists.lit(nats.to_int(w))]

    return BaseMap("g", lists.index, nats.index, fn, pre)


# ---------------------------------------------------------------------------
# conatural numbers

@dataclass
class ConatKit:
    dt: DataType
    index: IndexSet
    s_inf: BaseMap
    zero: Value           # index values (comprehension pairs)
    infinity: Value

    def lit(self, n: int) -> Value:
        return Pair(UNIT, conat_value(n))

    def index_of(self, v: Value) -> Value:
        return Pair(UNIT, v)


def conat_signature() -> SPSignature:
    src = (UNIT_SET,)
    f = fsum(Const(unit_fam(UNIT_SET), src), Proj(0, src))
    return SPSignature(f, [BaseMap.identity(UNIT_SET)], UNIT_SET, params=(),
                       names=["pred"], name="Conat")


def conat_value(n: Optional[int]) -> Value:
    """The conatural n as a carrier element; None builds infinity."""
    sys_ = ExplicitSystem({}, label="conat")
    if n is None:
        me = CoVal(sys_, 0)
        sys_.table[0] = Tup([FunVal([(UNIT, Tag("inr", me))])])
        return me
    for k in range(n):
        sys_.table[k] = Tup([FunVal([(UNIT, Tag("inr", CoVal(sys_, k + 1)))])])
    sys_.table[n] = Tup([FunVal([(UNIT, Tag("inl", UNIT))])])
    return CoVal(sys_, 0)


def conat_pred(v: Value) -> Value:
    """pred observation of a carrier element: inl(*) or inr(previous)."""
    return v.observe().items[0].apply(UNIT)


def conat() -> ConatKit:
    dt = build_coinductive(conat_signature(), (), name="Conat")
    index, _ = comprehension(dt.carrier)
    index.name = "Conat"
    numerals = [conat_value(n) for n in range(0, 24)]
    inf = conat_value(None)

    def enum(_i: Value):
        yield from (v for v in numerals)
        k = len(numerals)
        while True:
            yield conat_value(k)
            k += 1

    if hasattr(dt, "intensional"):
        # fair library enumerator: infinity first, then the numerals
        def override(_i: Value):
            yield inf
            k = 0
            while True:
                yield conat_value(k)
                k += 1

        dt.intensional.enumerator_override = override

    s_inf_mor = dialg.one_step_coinductive(
        dt, lambda i, x: Tup([FunVal([(UNIT, Tag("inr", x))])]))

    def s_fn(v: Value) -> Value:
        return Pair(UNIT, s_inf_mor.component(UNIT, v.snd))

    def s_pre(v: Value):
        obs = conat_pred(v.snd)
        if obs.name == "inr":
            return [Pair(UNIT, obs.arg)]
        return []

    s_inf = BaseMap("sInf", index, index, s_fn, s_pre)
    return ConatKit(dt, index, s_inf, Pair(UNIT, numerals[0]),
                    Pair(UNIT, inf))


# ---------------------------------------------------------------------------
# vectors

@dataclass
class VecKit:
    dt: DataType
    sig: SPSignature
    nats: NatKit
    elem: FamObject

    def nil(self) -> Value:
        return self.dt.construct("nil", UNIT, UNIT)

    def cons(self, n_idx: Value, a: Value, v: Value) -> Value:
        return self.dt.construct("cons", n_idx, Pair(a, v))

    def from_list(self, items: list[Value]) -> tuple[Value, Value]:
        """Build a vector from a python list; returns (index, vector)."""
        idx = self.nats.lit(0)
        v = self.nil()
        for a in reversed(items):
            v = self.cons(idx, a, v)
            idx = self.nats.s(idx)
        return idx, v


def vec_signature(nats: NatKit, elem: FamObject) -> SPSignature:
    """F = <K_1, K_{A-weakened} x Id>, u = (z, s) over the Nat index."""
    src = (UNIT_SET, nats.index)
    f1 = Const(unit_fam(UNIT_SET), src)
    abar = Compose(Reindex(bang(nats.index)), Proj(0, src))
    f2 = fprod(abar, Proj(1, src))
    f = PairF([f1, f2])
    return SPSignature(f, [nats.z, nats.s], nats.index, params=(UNIT_SET,),
                       names=["nil", "cons"], name="Vec")


def vec(nats: NatKit, elem: FamObject) -> VecKit:
    sig = vec_signature(nats, elem)
    dt = build_inductive(sig, (elem,), name="Vec")
    return VecKit(dt, sig, nats, elem)


def vec_to_list(v: Value) -> list[Value]:
    out = []
    while True:
        if v.name == "nil":
            return out
        _, payload = v.arg.fst, v.arg.snd
        out.append(payload.fst)
        v = payload.snd


# ---------------------------------------------------------------------------
# streams

@dataclass
class StreamKit:
    dt: DataType
    sig: SPSignature
    elem: FamObject

    def head(self, s: Value) -> Value:
        return self.dt.destruct("head", UNIT, s)

    def tail(self, s: Value) -> Value:
        return self.dt.destruct("tail", UNIT, s)

    def prefix(self, s: Value, n: int) -> list[Value]:
        out = []
        for _ in range(n):
            out.append(self.head(s))
            s = self.tail(s)
        return out

    def periodic(self, items: list[Value]) -> Value:
        sys_ = ExplicitSystem({}, label="periodic")
        n = len(items)
        for k, a in enumerate(items):
            sys_.table[k] = Tup([
                FunVal([(UNIT, a)]),
                FunVal([(UNIT, CoVal(sys_, (k + 1) % n))]),
            ])
        return CoVal(sys_, 0)


def stream_signature(elem: FamObject) -> SPSignature:
    src = (UNIT_SET, UNIT_SET)
    f = PairF([Proj(0, src), Proj(1, src)])
    ident = BaseMap.identity(UNIT_SET)
    return SPSignature(f, [ident, ident], UNIT_SET, params=(UNIT_SET,),
                       names=["head", "tail"], name="Str")


def streams(elem: FamObject) -> StreamKit:
    sig = stream_signature(elem)
    dt = build_coinductive(sig, (elem,), name="Str")
    return StreamKit(dt, sig, elem)


# ---------------------------------------------------------------------------
# partial streams

@dataclass
class PStrKit:
    dt: DataType
    sig: SPSignature
    conats: ConatKit
    elem: FamObject

    def head(self, n_idx: Value, s: Value) -> Value:
        return self.dt.destruct("hd", n_idx, s)

    def tail(self, n_idx: Value, s: Value) -> Value:
        return self.dt.destruct("tl", n_idx, s)


def pstr_signature(conats: ConatKit, elem: FamObject) -> SPSignature:
    """F = <K_{A-weakened}, Id>, u = (s_inf, s_inf)."""
    src = (UNIT_SET, conats.index)
    abar = Compose(Reindex(bang(conats.index)), Proj(0, src))
    f = PairF([abar, Proj(1, src)])
    return SPSignature(f, [conats.s_inf, conats.s_inf], conats.index,
                       params=(UNIT_SET,), names=["hd", "tl"], name="PStr")


def pstr(conats: ConatKit, elem: FamObject) -> PStrKit:
    sig = pstr_signature(conats, elem)
    dt = build_coinductive(sig, (elem,), name="PStr")
    return PStrKit(dt, sig, conats, elem)


def set_over_unit(n: int, prefix: str = "a") -> FamObject:
    """A finite parameter set as a family over the unit index set."""
    return FamObject.constant(UNIT_SET, fin(n, prefix).values, name=f"{prefix}{n}")
