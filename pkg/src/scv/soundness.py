"""Executable soundness harness.

The verifier's guarantee is blame soundness: if any instantiation of a
program's holes can make a transparent label blamed, the symbolic run of
the holed program reports that blame.  This module makes the guarantee
testable: it defines the approximation order between an instantiated
program and its holed original, generates random hole instantiations
(literal base values, primitives, or syntactically closed lambdas whose
applications carry the unknown-context label), runs them concretely, and
checks every transparent concrete blame against the symbolic blame set.

The per-step preservation lemma behind the theorem is exercised
indirectly through these end-to-end runs; the structural approximation
checker is kept for direct use on expressions, values, and whole states.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .abstraction import run_concrete, run_fixpoint
from .config import ABSTRACT, Config
from .machine import (
    Cache,
    CBlame,
    CEval,
    Control,
    CVal,
    Env,
    FAppFn,
    GlobalStores,
    INVALIDATED,
    LEAK_ADDR,
    MachineState,
    PostValue,
    VArr,
    VClo,
    VGrd,
    VNum,
    VOpq,
    VPrim,
    Value,
)
from .primitives import satisfies, surface_prims
from .syntax import (
    App,
    DepCon,
    Definition,
    Expr,
    If,
    Lam,
    Mon,
    Num,
    OPAQUE_LABEL,
    Opq,
    Prim,
    Ref,
    Set,
    SurfaceProgram,
    alpha_rename,
    desugar,
)

__all__ = [
    "is_oexpr",
    "approx_expr",
    "approx_value",
    "approx_state",
    "restricted_env",
    "instantiate_expr",
    "instantiate_program",
    "generate_hole_program",
    "differential_check",
    "DifferentialReport",
]


# --------------------------------------------------------------------------
# The instantiation grammar and expression approximation
# --------------------------------------------------------------------------


def is_oexpr(e: Expr, scope: frozenset) -> bool:
    """Instantiation-grammar membership: no holes, monitors, or contracts;
    every application labeled with the unknown-context party; variables
    drawn from the given scope only."""
    if isinstance(e, (Num, Prim)):
        return True
    if isinstance(e, Ref):
        return e.x in scope
    if isinstance(e, Lam):
        return is_oexpr(e.body, scope | {e.x})
    if isinstance(e, App):
        return e.label == OPAQUE_LABEL and is_oexpr(e.fn, scope) and is_oexpr(e.arg, scope)
    if isinstance(e, If):
        return all(is_oexpr(x, scope) for x in (e.cond, e.then, e.orelse))
    if isinstance(e, Set):
        return e.x in scope and is_oexpr(e.expr, scope)
    return False


def approx_expr(a: Expr, b: Expr) -> bool:
    """Does `b` approximate `a`?  Structural congruence, except a hole on
    the right covers literal base values and syntactically closed lambdas
    built from the instantiation grammar."""
    if isinstance(b, Opq):
        if isinstance(a, (Num, Prim, Opq)):
            return True
        if isinstance(a, Lam):
            return is_oexpr(a.body, frozenset({a.x}))
        return False
    if isinstance(a, Num) and isinstance(b, Num):
        return a.n == b.n
    if isinstance(a, Prim) and isinstance(b, Prim):
        return a.op == b.op
    if isinstance(a, Ref) and isinstance(b, Ref):
        return a.x == b.x
    if isinstance(a, Lam) and isinstance(b, Lam):
        return a.x == b.x and approx_expr(a.body, b.body)
    if isinstance(a, App) and isinstance(b, App):
        return (
            a.label == b.label
            and a.label != OPAQUE_LABEL
            and approx_expr(a.fn, b.fn)
            and approx_expr(a.arg, b.arg)
        )
    if isinstance(a, If) and isinstance(b, If):
        return (
            approx_expr(a.cond, b.cond)
            and approx_expr(a.then, b.then)
            and approx_expr(a.orelse, b.orelse)
        )
    if isinstance(a, Set) and isinstance(b, Set):
        return a.x == b.x and approx_expr(a.expr, b.expr)
    if isinstance(a, DepCon) and isinstance(b, DepCon):
        return a.x == b.x and approx_expr(a.dom, b.dom) and approx_expr(a.rng, b.rng)
    if isinstance(a, Mon) and isinstance(b, Mon):
        return (
            a.pos_label == b.pos_label
            and a.neg_label == b.neg_label
            and OPAQUE_LABEL not in (a.pos_label, a.neg_label)
            and approx_expr(a.contract, b.contract)
            and approx_expr(a.expr, b.expr)
        )
    return False


# --------------------------------------------------------------------------
# Runtime approximation, indexed by an address map
# --------------------------------------------------------------------------


def restricted_env(F: dict, env: Env) -> bool:
    """Every address the environment reaches is simulated by the leak
    address: the closure lives entirely in unknown code."""
    return all(F.get(addr) == LEAK_ADDR for _, addr in env.items())


def _restricted_value(F: dict, v: Value) -> bool:
    if isinstance(v, (VNum,)):
        return True
    if isinstance(v, VPrim):
        return v.arg0 is None or _restricted_value(F, v.arg0)
    if isinstance(v, VClo):
        return is_oexpr(v.body, frozenset({v.x}) | frozenset(v.env)) and restricted_env(F, v.env)
    return False


def approx_sym(s, s2) -> bool:
    return s2 is None or s == s2


def approx_value(F: dict, v: Value, v2: Value) -> bool:
    """`v2` covers `v` under address translation F."""
    if isinstance(v2, VOpq):
        if not all(satisfies(v, p) for p in v2.refinements):
            return False
        if isinstance(v, (VNum, VOpq)):
            return True
        if isinstance(v, VPrim):
            return v.arg0 is None or approx_value(F, v.arg0, VOpq())
        if isinstance(v, VClo):
            return _restricted_value(F, v)
        return False
    if isinstance(v, VNum) and isinstance(v2, VNum):
        return v.n == v2.n
    if isinstance(v, VPrim) and isinstance(v2, VPrim):
        if v.op != v2.op:
            return False
        if (v.arg0 is None) != (v2.arg0 is None):
            return False
        return v.arg0 is None or approx_value(F, v.arg0, v2.arg0)
    if isinstance(v, VClo) and isinstance(v2, VClo):
        return (
            v.x == v2.x
            and approx_expr(v.body, v2.body)
            and _approx_env(F, v.env, v2.env)
            and _approx_pc(v.pc, v2.pc)
        )
    if isinstance(v, VGrd) and isinstance(v2, VGrd):
        return F.get(v.a_dom) == v2.a_dom and F.get(v.a_rng) == v2.a_rng
    if isinstance(v, VArr) and isinstance(v2, VArr):
        return (
            v.pos_label == v2.pos_label
            and v.neg_label == v2.neg_label
            and F.get(v.a_con) == v2.a_con
            and F.get(v.a_fn) == v2.a_fn
        )
    return False


def _approx_env(F: dict, env: Env, env2: Env) -> bool:
    if set(env) != set(env2):
        return False
    return all(F.get(env[x]) == env2[x] for x in env)


def _approx_pc(pc: frozenset, pc2: frozenset) -> bool:
    # the approximating side may assume fewer facts; each fact it does
    # assume must be one of the approximated side's
    return all(any(approx_expr(e, e2) for e in pc) for e2 in pc2)


def _approx_cache(F: dict, m: Cache, m2: Cache) -> bool:
    for x, w2 in m2.items():
        if w2 is INVALIDATED:
            continue
        w = m.get(x)
        if w is None or w is INVALIDATED:
            return False
        if not (approx_value(F, w.value, w2.value) and approx_sym(w.sym, w2.sym)):
            return False
    return True


def approx_store(F: dict, stores: GlobalStores, stores2: GlobalStores) -> bool:
    for addr, values in stores.values.items():
        target = F.get(addr)
        if target is None:
            return False
        covering = stores2.lookup(target)
        for v in values:
            if not any(approx_value(F, v, v2) for v2 in covering):
                return False
    return True


def _approx_postvalue(F: dict, w: PostValue, w2: PostValue) -> bool:
    return approx_value(F, w.value, w2.value) and approx_sym(w.sym, w2.sym)


def _approx_control(F: dict, c: Control, c2: Control) -> bool:
    if isinstance(c, CEval) and isinstance(c2, CEval):
        return approx_expr(c.expr, c2.expr) and _approx_env(F, c.env, c2.env)
    if isinstance(c, CVal) and isinstance(c2, CVal):
        return _approx_postvalue(F, c.w, c2.w)
    if isinstance(c, CBlame) and isinstance(c2, CBlame):
        return (
            c.pos_label == c2.pos_label
            and c.neg_label == c2.neg_label
            and c.pos_label != OPAQUE_LABEL
        )
    return False


def _restricted_control(F: dict, c: Control) -> bool:
    if isinstance(c, CEval):
        return is_oexpr(c.expr, frozenset(c.env)) and restricted_env(F, c.env)
    if isinstance(c, CVal):
        return _restricted_value(F, c.w.value)
    return False


def approx_state(
    F: dict,
    state: MachineState,
    stores: GlobalStores,
    state2: MachineState,
    stores2: GlobalStores,
) -> bool:
    """Component-wise approximation of two states, or the non-structural
    case: the approximated state runs purely instantiated code while the
    approximating one sits at an unknown-function application."""
    if not (_approx_cache(F, state.cache, state2.cache) and _approx_pc(state.pc, state2.pc)):
        return False
    if not approx_store(F, stores, stores2):
        return False
    if _approx_control(F, state.control, state2.control):
        if _approx_frames(F, state.frames, state2.frames):
            return True
    # non-structural: strip restricted frames above an opaque application
    if _restricted_control(F, state.control):
        frames = state.frames
        while frames and _restricted_frame(F, frames[0]):
            frames = frames[1:]
        if (
            state2.frames
            and isinstance(state2.frames[0], FAppFn)
            and isinstance(state2.frames[0].fn.value, VOpq)
        ):
            return _approx_frames(F, frames, state2.frames[1:])
    return False


def _restricted_frame(F: dict, f) -> bool:
    if isinstance(f, FAppFn):
        return _restricted_value(F, f.fn.value)
    return False


def _approx_frames(F: dict, frames: tuple, frames2: tuple) -> bool:
    # conservative structural comparison of the intraprocedural segments;
    # stored continuations are not chased (the end-to-end differential runs
    # carry the real weight of state-level soundness)
    if len(frames) != len(frames2):
        return False
    for f, f2 in zip(frames, frames2):
        if type(f) is not type(f2):
            return False
        if isinstance(f, FAppFn) and not _approx_postvalue(F, f.fn, f2.fn):
            return False
    return True


# --------------------------------------------------------------------------
# Hole instantiation
# --------------------------------------------------------------------------

_GEN_PRIMS = tuple(sorted(surface_prims()))


def _gen_oexpr(rng: random.Random, scope: tuple, budget: int) -> Expr:
    """Random instantiation-grammar expression over the given scope."""
    if budget <= 1 or rng.random() < 0.35:
        kind = rng.random()
        if kind < 0.45:
            return Num(rng.randint(-3, 3))
        if kind < 0.6 and scope:
            return Ref(rng.choice(scope))
        if kind < 0.75:
            return Prim(rng.choice(_GEN_PRIMS))
        return Num(rng.randint(-3, 3))
    roll = rng.random()
    if roll < 0.4:
        fn = _gen_oexpr(rng, scope, budget // 2)
        arg = _gen_oexpr(rng, scope, budget // 2)
        return App(fn, arg, OPAQUE_LABEL)
    if roll < 0.6:
        return If(
            _gen_oexpr(rng, scope, budget // 3),
            _gen_oexpr(rng, scope, budget // 3),
            _gen_oexpr(rng, scope, budget // 3),
        )
    if roll < 0.75 and scope:
        return Set(rng.choice(scope), _gen_oexpr(rng, scope, budget - 1))
    x = f"h{rng.randint(0, 999)}"
    return Lam(x, _gen_oexpr(rng, scope + (x,), budget - 1))


def _gen_instantiation(rng: random.Random, budget: int) -> Expr:
    roll = rng.random()
    if roll < 0.4:
        return Num(rng.randint(-3, 3))
    if roll < 0.55:
        return Prim(rng.choice(_GEN_PRIMS))
    x = f"h{rng.randint(0, 999)}"
    return Lam(x, _gen_oexpr(rng, (x,), budget))


def instantiate_expr(e: Expr, rng: random.Random, budget: int = 12) -> Expr:
    """Replace every hole with a generated closed value."""
    if isinstance(e, Opq):
        return _gen_instantiation(rng, budget)
    if isinstance(e, (Num, Prim, Ref)):
        return e
    if isinstance(e, Lam):
        return Lam(e.x, instantiate_expr(e.body, rng, budget), e.pos)
    if isinstance(e, App):
        return App(
            instantiate_expr(e.fn, rng, budget),
            instantiate_expr(e.arg, rng, budget),
            e.label,
            e.pos,
        )
    if isinstance(e, If):
        return If(
            instantiate_expr(e.cond, rng, budget),
            instantiate_expr(e.then, rng, budget),
            instantiate_expr(e.orelse, rng, budget),
            e.pos,
        )
    if isinstance(e, Set):
        return Set(e.x, instantiate_expr(e.expr, rng, budget), e.pos)
    if isinstance(e, DepCon):
        return DepCon(
            instantiate_expr(e.dom, rng, budget),
            e.x,
            instantiate_expr(e.rng, rng, budget),
            e.pos,
        )
    if isinstance(e, Mon):
        return Mon(
            e.pos_label,
            e.neg_label,
            instantiate_expr(e.contract, rng, budget),
            instantiate_expr(e.expr, rng, budget),
            e.pos,
        )
    raise AssertionError(f"unexpected node {type(e).__name__}")


def instantiate_program(program: SurfaceProgram, rng: random.Random, budget: int = 12) -> SurfaceProgram:
    defs = tuple(
        Definition(
            d.name,
            instantiate_expr(d.expr, rng, budget),
            None if d.contract is None else instantiate_expr(d.contract, rng, budget),
            d.pos,
        )
        for d in program.definitions
    )
    return SurfaceProgram(defs, instantiate_expr(program.main, rng, budget))


# --------------------------------------------------------------------------
# Random programs with holes
# --------------------------------------------------------------------------

_FLAT_CONTRACTS = ("int?", "even?", "odd?", "positive?", "proc?")


def _gen_expr(rng: random.Random, scope: tuple, budget: int, holes: bool) -> Expr:
    """Random surface-level expression; primitive references resolve to
    their guarded versions during desugaring."""
    if budget <= 1 or rng.random() < 0.3:
        roll = rng.random()
        if roll < 0.35:
            return Num(rng.randint(-3, 3))
        if roll < 0.6 and scope:
            return Ref(rng.choice(scope))
        if roll < 0.75:
            return Ref(rng.choice(("add1", "sub1", "+", "-", "*", "/", "<", "<=", "=", "int?", "zero?", "even?", "positive?", "proc?")))
        if holes and roll < 0.9:
            return Opq()
        return Num(rng.randint(-3, 3))
    roll = rng.random()
    if roll < 0.45:
        return App(
            _gen_expr(rng, scope, budget // 2, holes),
            _gen_expr(rng, scope, budget // 2, holes),
            _fresh_site(rng),
        )
    if roll < 0.65:
        return If(
            _gen_expr(rng, scope, budget // 3, holes),
            _gen_expr(rng, scope, budget // 3, holes),
            _gen_expr(rng, scope, budget // 3, holes),
        )
    if roll < 0.75 and scope:
        return Set(rng.choice(scope), _gen_expr(rng, scope, budget - 1, holes))
    if roll < 0.83:
        x = f"v{rng.randint(0, 99)}"
        body = _gen_expr(rng, scope + (x,), budget - 2, holes)
        rhs = _gen_expr(rng, scope, budget // 2, holes)
        return App(Lam(x, body), rhs, _fresh_site(rng))
    if roll < 0.9:
        from .syntax import Label

        pos = Label(f"p{rng.randint(0, 9)}", "transparent")
        neg = Label(f"q{rng.randint(0, 9)}", "transparent")
        return Mon(pos, neg, _gen_contract(rng), _gen_expr(rng, scope, budget - 2, holes))
    x = f"v{rng.randint(0, 99)}"
    return Lam(x, _gen_expr(rng, scope + (x,), budget - 1, holes))


_site_counter = [0]


def _fresh_site(rng: random.Random):
    from .syntax import Label, Position

    _site_counter[0] += 1
    n = _site_counter[0]
    return Label(f"gen@{n}", "transparent", Position(900 + n // 80, n % 80))


def _gen_contract(rng: random.Random) -> Expr:
    if rng.random() < 0.6:
        return Prim(rng.choice(_FLAT_CONTRACTS))
    return DepCon(Prim(rng.choice(_FLAT_CONTRACTS)), "_c", Prim(rng.choice(_FLAT_CONTRACTS)))


def generate_hole_program(rng: random.Random, size: int = 14, holes: bool = True) -> SurfaceProgram:
    """A small random program: up to two definitions (possibly contracted)
    plus a main expression, with holes sprinkled through transparent code."""
    from .syntax import Position

    defs = []
    names: tuple = ()
    for i in range(rng.randint(0, 2)):
        name = f"d{i}"
        body = Lam(f"p{i}", _gen_expr(rng, names + (f"p{i}",), size // 2, holes))
        contract = _gen_contract(rng) if rng.random() < 0.6 else None
        defs.append(Definition(name, body, contract, Position(1 + i, 1)))
        names = names + (name,)
    main = _gen_expr(rng, names, size, holes)
    return SurfaceProgram(tuple(defs), main)


# --------------------------------------------------------------------------
# Differential checking
# --------------------------------------------------------------------------


@dataclass
class DifferentialReport:
    program: SurfaceProgram
    symbolic_blames: frozenset
    trials: int = 0
    skipped: int = 0
    inconclusive: bool = False
    violations: list = field(default_factory=list)

    def ok(self) -> bool:
        return not self.violations and not self.inconclusive


def differential_check(
    program: SurfaceProgram,
    trials: int,
    rng: random.Random,
    config: Optional[Config] = None,
    step_cap: int = 50_000,
) -> DifferentialReport:
    """Run the holed program symbolically, then concretely under `trials`
    random instantiations.  Every transparent blame reached concretely must
    be in the symbolic blame set; diverging instantiations are skipped."""
    config = config or Config(mode=ABSTRACT, step_budget=300_000)
    core = alpha_rename(desugar(program))
    result = run_fixpoint(core, config)
    blames = result.blame_pairs()
    report = DifferentialReport(program, blames, inconclusive=result.inconclusive)
    if result.inconclusive:
        return report
    for _ in range(trials):
        report.trials += 1
        inst = instantiate_program(program, rng)
        inst_core = alpha_rename(desugar(inst))
        outcome = run_concrete(inst_core, max_steps=step_cap)
        if outcome.kind == "timeout":
            report.skipped += 1
            continue
        if outcome.kind == "blame" and outcome.transparent:
            if (outcome.positive, outcome.negative) not in blames:
                report.violations.append((inst, outcome.positive, outcome.negative))
    return report
