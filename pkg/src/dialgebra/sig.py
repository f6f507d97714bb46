"""Abstract syntax and evaluation of strictly positive functors between
products of fibres, and data type signatures (a functor plus index maps).

A functor node maps a tuple of families (one per source fibre) to a tuple
of families (one per target fibre). Fixed-point nodes delegate to the
dialgebra builder, so evaluating an AST may construct data types.
"""

from __future__ import annotations

import json
from typing import Callable, Iterable, Optional

from .errors import IndexMismatch, KernelError, StratificationError
from .fam import (BaseMap, FamMorphism, FamObject, IndexSet, Report,
                  UNIT_SET, identity, reindex, unit_fam)
from .values import Value


class SPFunctor:
    source: tuple[IndexSet, ...]
    target: tuple[IndexSet, ...]

    def on_objects(self, args: tuple[FamObject, ...]) -> tuple[FamObject, ...]:
        raise NotImplementedError

    def on_morphisms(self, args: tuple[FamMorphism, ...]) -> tuple[FamMorphism, ...]:
        raise NotImplementedError

    def kind(self) -> str:
        return type(self).__name__


def _check_args(f: SPFunctor, args: tuple) -> None:
    if len(args) != len(f.source):
        raise IndexMismatch(
            f"{f.kind()} expects {len(f.source)} arguments, got {len(args)}")


class Const(SPFunctor):
    def __init__(self, fam: FamObject, source: tuple[IndexSet, ...] = ()):
        self.fam = fam
        self.source = tuple(source)
        self.target = (fam.base,)

    def on_objects(self, args):
        _check_args(self, args)
        return (self.fam,)

    def on_morphisms(self, args):
        return (identity(self.fam),)


class Proj(SPFunctor):
    def __init__(self, k: int, source: tuple[IndexSet, ...]):
        if not (0 <= k < len(source)):
            raise IndexMismatch(f"projection {k} out of range for {len(source)} fibres")
        self.k = k
        self.source = tuple(source)
        self.target = (source[k],)

    def on_objects(self, args):
        _check_args(self, args)
        return (args[self.k],)

    def on_morphisms(self, args):
        return (args[self.k],)


class Reindex(SPFunctor):
    """Reindexing along f : J -> I as a functor between fibres P_I -> P_J."""

    def __init__(self, f: BaseMap):
        self.f = f
        self.source = (f.cod,)
        self.target = (f.dom,)

    def on_objects(self, args):
        _check_args(self, args)
        star, _ = reindex(self.f, args[0])
        return (star,)

    def on_morphisms(self, args):
        h = args[0]
        dom_star, _ = reindex(self.f, h.dom)
        cod_star, _ = reindex(self.f, h.cod)
        f = self.f
        return (FamMorphism(dom_star, cod_star, BaseMap.identity(f.dom),
                            lambda j, x: h.component(f(j), x),
                            name=f"{f.name}*{h.name}"),)


class Compose(SPFunctor):
    def __init__(self, outer: SPFunctor, inner: SPFunctor):
        self.outer = outer
        self.inner = inner
        self.source = inner.source
        self.target = outer.target

    def on_objects(self, args):
        return self.outer.on_objects(self.inner.on_objects(args))

    def on_morphisms(self, args):
        return self.outer.on_morphisms(self.inner.on_morphisms(args))


class PairF(SPFunctor):
    """Tupling of functors with a common source."""

    def __init__(self, parts: Iterable[SPFunctor]):
        self.parts = list(parts)
        if not self.parts:
            raise KernelError("empty functor tuple")
        self.source = self.parts[0].source
        self.target = tuple(t for p in self.parts for t in p.target)

    def on_objects(self, args):
        out = []
        for p in self.parts:
            out.extend(p.on_objects(args))
        return tuple(out)

    def on_morphisms(self, args):
        out = []
        for p in self.parts:
            out.extend(p.on_morphisms(args))
        return tuple(out)


class Mu(SPFunctor):
    def __init__(self, sig: "SPSignature"):
        self.sig = sig
        self.source = sig.params
        self.target = (sig.index,)

    def on_objects(self, args):
        from . import dialg
        _check_args(self, args)
        return (dialg.build_inductive(self.sig, tuple(args)).carrier,)

    def on_morphisms(self, args):
        from . import dialg
        return (dialg.mu_action(self.sig, tuple(args)),)


class Nu(SPFunctor):
    def __init__(self, sig: "SPSignature"):
        self.sig = sig
        self.source = sig.params
        self.target = (sig.index,)

    def on_objects(self, args):
        from . import dialg
        _check_args(self, args)
        return (dialg.build_coinductive(self.sig, tuple(args)).carrier,)

    def on_morphisms(self, args):
        from . import dialg
        return (dialg.nu_action(self.sig, tuple(args)),)


class SPSignature:
    """A strictly positive functor F : C x P_I -> prod_k P_{J_k} together
    with index maps u_k : J_k -> I, one per target fibre."""

    def __init__(self, functor: SPFunctor, maps: list[BaseMap], index: IndexSet,
                 params: tuple[IndexSet, ...] = (), names: Optional[list[str]] = None,
                 name: str = "sig"):
        self.functor = functor
        self.maps = list(maps)
        self.index = index
        self.params = tuple(params)
        self.names = list(names) if names else [f"c{k}" for k in range(len(maps))]
        self.name = name

    @property
    def arity(self) -> int:
        return len(self.maps)

    def apply_f(self, params: tuple[FamObject, ...], x: FamObject) -> tuple[FamObject, ...]:
        return self.functor.on_objects(tuple(params) + (x,))

    def apply_f_mor(self, params: tuple[FamObject, ...],
                    h: FamMorphism) -> tuple[FamMorphism, ...]:
        param_ids = tuple(identity(p) for p in params)
        return self.functor.on_morphisms(param_ids + (h,))

    def apply_g(self, x: FamObject) -> tuple[FamObject, ...]:
        return tuple(reindex(u, x)[0] for u in self.maps)

    def apply_g_mor(self, h: FamMorphism) -> tuple[FamMorphism, ...]:
        out = []
        for u in self.maps:
            dom_star, _ = reindex(u, h.dom)
            cod_star, _ = reindex(u, h.cod)
            out.append(FamMorphism(dom_star, cod_star, BaseMap.identity(u.dom),
                                   lambda j, x, _u=u: h.component(_u(j), x),
                                   name=f"{u.name}*{h.name}"))
        return tuple(out)

    def __repr__(self):
        return f"SPSignature({self.name}, n={self.arity})"


# ---------------------------------------------------------------------------
# validation

def _same_tuple(a: tuple[IndexSet, ...], b: tuple[IndexSet, ...]) -> bool:
    return len(a) == len(b) and all(x.same(y) for x, y in zip(a, b))


def validate(sig: SPSignature) -> Report:
    """Well-formedness: index bookkeeping of every node, map typing, and
    stratified fixed-point nesting. Collects diagnostics, never raises."""
    report = Report(ok=True)

    def bad(path: str, msg: str):
        report.ok = False
        report.add(f"{path}: {msg}")

    def walk(f: SPFunctor, path: str, stack: tuple):
        if isinstance(f, Const):
            pass
        elif isinstance(f, Proj):
            if not (0 <= f.k < len(f.source)):
                bad(path, f"projection index {f.k} out of range")
        elif isinstance(f, Reindex):
            if not f.f.dom.same(f.target[0]) or not f.f.cod.same(f.source[0]):
                bad(path, f"reindex along {f.f.name} has inconsistent annotation")
        elif isinstance(f, Compose):
            if not _same_tuple(f.inner.target, f.outer.source):
                bad(path, "IndexMismatch: inner target differs from outer source")
            walk(f.inner, path + ".inner", stack)
            walk(f.outer, path + ".outer", stack)
        elif isinstance(f, PairF):
            for i, p in enumerate(f.parts):
                if not _same_tuple(p.source, f.source):
                    bad(f"{path}[{i}]", "IndexMismatch: tupled functors disagree on source")
                walk(p, f"{path}[{i}]", stack)
        elif isinstance(f, (Mu, Nu)):
            if any(f.sig is s for s in stack):
                bad(path, "StratificationError: signature refers to itself "
                          "through its own fixed point")
                return
            check_sig(f.sig, path + f".{f.kind().lower()}", stack + (f.sig,))
        else:
            bad(path, f"unknown node {type(f).__name__}")

    def check_sig(s: SPSignature, path: str, stack: tuple):
        expected_source = s.params + (s.index,)
        if not _same_tuple(s.functor.source, expected_source):
            bad(path, "IndexMismatch: functor source is not params x index fibre")
        if len(s.functor.target) != len(s.maps):
            bad(path, f"functor has {len(s.functor.target)} components but "
                      f"{len(s.maps)} index maps")
        for k, u in enumerate(s.maps):
            if k < len(s.functor.target) and not u.dom.same(s.functor.target[k]):
                bad(f"{path}.u[{k}]", f"IndexMismatch: {u.name} domain is "
                                      f"{u.dom.name}, component lives over "
                                      f"{s.functor.target[k].name}")
            if not u.cod.same(s.index):
                bad(f"{path}.u[{k}]", f"IndexMismatch: {u.name} codomain is "
                                      f"{u.cod.name}, expected {s.index.name}")
        walk(s.functor, path + ".F", stack)

    check_sig(sig, sig.name, (sig,))
    if report.ok:
        report.add("well-formed")
    return report


def validate_strict(sig: SPSignature) -> None:
    rep = validate(sig)
    if not rep.ok:
        raise StratificationError("; ".join(rep.lines)) \
            if any("Stratification" in l for l in rep.lines) \
            else IndexMismatch("; ".join(rep.lines))


# ---------------------------------------------------------------------------
# canonical former signatures and derived shapes

def prod_sig(index: IndexSet) -> SPSignature:
    src = (index, index, index)
    f = PairF([Proj(0, src), Proj(1, src)])
    ident = BaseMap.identity(index)
    return SPSignature(f, [ident, ident], index, params=(index, index),
                       names=["outl", "outr"], name=f"prod_{index.name}")


def coprod_sig(index: IndexSet) -> SPSignature:
    src = (index, index, index)
    f = PairF([Proj(0, src), Proj(1, src)])
    ident = BaseMap.identity(index)
    return SPSignature(f, [ident, ident], index, params=(index, index),
                       names=["inl", "inr"], name=f"coprod_{index.name}")


def dep_sum_sig(f: BaseMap) -> SPSignature:
    src = (f.dom, f.cod)
    return SPSignature(Proj(0, src), [f], f.cod, params=(f.dom,),
                       names=["in"], name=f"sum_{f.name}")


def dep_prod_sig(f: BaseMap) -> SPSignature:
    src = (f.dom, f.cod)
    return SPSignature(Proj(0, src), [f], f.cod, params=(f.dom,),
                       names=["ev"], name=f"prod_{f.name}")


def terminal_sig(index: IndexSet) -> SPSignature:
    src = (index,)
    return SPSignature(Proj(0, src), [BaseMap.identity(index)], index,
                       params=(), names=["out"], name=f"top_{index.name}")


def initial_sig(index: IndexSet) -> SPSignature:
    src = (index,)
    return SPSignature(Proj(0, src), [BaseMap.identity(index)], index,
                       params=(), names=["absurd"], name=f"bot_{index.name}")


def fprod(f1: SPFunctor, f2: SPFunctor) -> SPFunctor:
    """Fibrewise binary product of two functors into the same fibre."""
    if not f1.target[0].same(f2.target[0]) or len(f1.target) != 1 or len(f2.target) != 1:
        raise IndexMismatch("fibrewise product needs two single-fibre functors "
                            "with equal targets")
    return Compose(Nu(prod_sig(f1.target[0])), PairF([f1, f2]))


def fsum(f1: SPFunctor, f2: SPFunctor) -> SPFunctor:
    if not f1.target[0].same(f2.target[0]) or len(f1.target) != 1 or len(f2.target) != 1:
        raise IndexMismatch("fibrewise sum needs two single-fibre functors "
                            "with equal targets")
    return Compose(Mu(coprod_sig(f1.target[0])), PairF([f1, f2]))


def sp_equal(a: SPFunctor, b: SPFunctor) -> bool:
    """Structural equality of functor ASTs (index sets up to .same)."""
    if type(a) is not type(b):
        return False
    if not _same_tuple(a.source, b.source) or not _same_tuple(a.target, b.target):
        return False
    if isinstance(a, Const):
        return a.fam is b.fam or (
            a.fam.base.same(b.fam.base))
    if isinstance(a, Proj):
        return a.k == b.k
    if isinstance(a, Reindex):
        return a.f is b.f or a.f.name == b.f.name
    if isinstance(a, Compose):
        return sp_equal(a.outer, b.outer) and sp_equal(a.inner, b.inner)
    if isinstance(a, PairF):
        return len(a.parts) == len(b.parts) and all(
            sp_equal(x, y) for x, y in zip(a.parts, b.parts))
    if isinstance(a, (Mu, Nu)):
        return sig_equal(a.sig, b.sig)
    return False


def sig_equal(a: SPSignature, b: SPSignature) -> bool:
    return (len(a.maps) == len(b.maps)
            and a.index.same(b.index)
            and all(u.name == v.name or _maps_agree(u, v) for u, v in zip(a.maps, b.maps))
            and sp_equal(a.functor, b.functor))


def _maps_agree(u: BaseMap, v: BaseMap) -> bool:
    got = u.dom.try_list(64)
    if got is None or not u.dom.same(v.dom):
        return False
    from .values import eq_values
    return all(eq_values(u(i), v(i)) for i in got)


# ---------------------------------------------------------------------------
# JSON serialization (golden tests); index sets, maps and constant families
# are referenced by name through a registry

class Registry:
    def __init__(self):
        self.index_sets: dict[str, IndexSet] = {}
        self.base_maps: dict[str, BaseMap] = {}
        self.families: dict[str, FamObject] = {}
        self.signatures: dict[str, SPSignature] = {}

    def add_index(self, s: IndexSet) -> IndexSet:
        self.index_sets[s.name] = s
        return s

    def add_map(self, m: BaseMap) -> BaseMap:
        self.base_maps[m.name] = m
        return m

    def add_family(self, f: FamObject) -> FamObject:
        self.families[f.name] = f
        return f

    def add_signature(self, s: SPSignature) -> SPSignature:
        self.signatures[s.name] = s
        return s


def to_json(f: SPFunctor) -> dict:
    if isinstance(f, Const):
        return {"node": "const", "family": f.fam.name,
                "source": [s.name for s in f.source]}
    if isinstance(f, Proj):
        return {"node": "proj", "k": f.k, "source": [s.name for s in f.source]}
    if isinstance(f, Reindex):
        return {"node": "reindex", "map": f.f.name}
    if isinstance(f, Compose):
        return {"node": "compose", "outer": to_json(f.outer), "inner": to_json(f.inner)}
    if isinstance(f, PairF):
        return {"node": "pair", "parts": [to_json(p) for p in f.parts]}
    if isinstance(f, (Mu, Nu)):
        return {"node": f.kind().lower(), "sig": sig_to_json(f.sig)}
    raise KernelError(f"cannot serialize {type(f).__name__}")


def sig_to_json(s: SPSignature) -> dict:
    return {
        "name": s.name,
        "index": s.index.name,
        "params": [p.name for p in s.params],
        "maps": [u.name for u in s.maps],
        "names": list(s.names),
        "functor": to_json(s.functor),
    }


def from_json(data: dict, reg: Registry) -> SPFunctor:
    node = data["node"]
    if node == "const":
        return Const(reg.families[data["family"]],
                     tuple(reg.index_sets[n] for n in data["source"]))
    if node == "proj":
        return Proj(data["k"], tuple(reg.index_sets[n] for n in data["source"]))
    if node == "reindex":
        return Reindex(reg.base_maps[data["map"]])
    if node == "compose":
        return Compose(from_json(data["outer"], reg), from_json(data["inner"], reg))
    if node == "pair":
        return PairF([from_json(p, reg) for p in data["parts"]])
    if node in ("mu", "nu"):
        s = sig_from_json(data["sig"], reg)
        return Mu(s) if node == "mu" else Nu(s)
    raise KernelError(f"unknown serialized node {node!r}")


def sig_from_json(data: dict, reg: Registry) -> SPSignature:
    return SPSignature(
        from_json(data["functor"], reg),
        [reg.base_maps[n] for n in data["maps"]],
        reg.index_sets[data["index"]],
        params=tuple(reg.index_sets[n] for n in data["params"]),
        names=data.get("names"),
        name=data.get("name", "sig"),
    )


def dumps(sig: SPSignature) -> str:
    return json.dumps({"schema": 1, "signature": sig_to_json(sig)},
                      indent=2, sort_keys=True)
