import random

import pytest

from conftest import compile_text, fresh_config
from reference_eval import BlameSignal, OutOfFuel, evaluate
from scv.abstraction import run_concrete, run_fixpoint
from scv.config import CONCRETE, Config, RunCtx
from scv.machine import (
    CBlame,
    CEval,
    CVal,
    Env,
    FAppArg,
    FIf,
    FMonC,
    FSet,
    LEAK_ADDR,
    PostValue,
    VClo,
    VNum,
    VOpq,
    VPrim,
    load,
)
from scv.semantics import ap_sym, distr, effective_sym, lit, lookup, step
from scv.soundness import generate_hole_program
from scv.syntax import (
    App,
    Lam,
    Num,
    Opq,
    Prim,
    Ref,
    SYM_LABEL,
    alpha_rename,
    desugar,
    parse,
    parse_expr,
    print_expr,
)


def test_distr_application_focuses_function():
    e = parse_expr("(f x)")
    control, frames = distr(e, Env({"f": ("a",), "x": ("b",)}))
    assert isinstance(control, CEval) and control.expr == Ref("f")
    assert isinstance(frames[0], FAppArg)
    assert frames[0].label == e.label


def test_distr_if_and_mon_order():
    control, frames = distr(parse_expr("(if c a b)"), Env({"c": ("x",), "a": ("y",), "b": ("z",)}))
    assert isinstance(frames[0], FIf)
    control, frames = distr(parse_expr("(mon p q int? 5)"), Env({"int?": ("a",)}))
    # contracts evaluate before monitored expressions
    assert isinstance(control, CEval) and control.expr == Ref("int?")
    assert isinstance(frames[0], FMonC)


def test_lit_value_shapes():
    env, pc = Env(), frozenset()
    assert lit(Num(5), env, pc) == PostValue(VNum(5), Num(5))
    assert lit(Opq(), env, pc) == PostValue(VOpq(), None)
    lam = parse_expr("(λ (x) x)")
    w = lit(lam, env, pc)
    assert isinstance(w.value, VClo) and w.sym == lam
    assert lit(Prim("add1"), env, pc).sym == Prim("add1")


def test_lookup_cache_hit_and_store_fallback():
    from scv.machine import Cache, GlobalStores

    stores = GlobalStores()
    stores.values[("var", "x", frozenset())] = frozenset({VNum(2), VNum(4)})
    env = Env({"x": ("var", "x", frozenset())})
    hit = lookup(stores, env, Cache({"x": PostValue(VNum(5), Ref("x"))}), "x")
    assert hit == [PostValue(VNum(5), Ref("x"))]
    miss = lookup(stores, env, Cache(), "x")
    assert {w.value for w in miss} == {VNum(2), VNum(4)}
    assert all(w.sym is None for w in miss)


def test_ap_sym_rules():
    assert ap_sym(Prim("add1"), Ref("x"), 4) == App(Prim("add1"), Ref("x"), SYM_LABEL)
    assert ap_sym(None, Ref("x"), 4) is None
    # depth bound
    deep = Ref("x")
    for _ in range(5):
        deep = App(Prim("add1"), deep, SYM_LABEL)
    assert ap_sym(Prim("add1"), deep, 4) is None
    # non-primitive operators never name their results
    assert ap_sym(parse_expr("(λ (x) x)"), Num(1), 4) is None


def test_effective_sym_self_naming():
    assert effective_sym(PostValue(VNum(3), None), 4) == Num(3)
    assert effective_sym(PostValue(VPrim("add1"), None), 4) == Prim("add1")
    partial = VPrim("<", VNum(0))
    assert effective_sym(PostValue(partial, None), 4) == App(Prim("<"), Num(0), SYM_LABEL)
    assert effective_sym(PostValue(VOpq(), None), 4) is None


def run_all(text, escapes=False, **cfg):
    from scv.feasibility import open_solver

    core = compile_text(text, escapes=escapes)
    config = fresh_config(**cfg)
    solver = open_solver(config.resolved_solver())
    try:
        return run_fixpoint(core, config, solver=solver)
    finally:
        if solver:
            solver.close()


def test_mon_flat_pass_and_blame_parties():
    assert run_concrete(compile_text("(mon f g int? 5)")).value.value == VNum(5)
    out = run_concrete(compile_text("(mon f g int? add1)"))
    assert (out.positive, out.negative) == ("f", "g")
    out = run_concrete(compile_text("((mon f g (->d int? _ int?) add1) proc?)"))
    assert (out.positive, out.negative) == ("g", "f")


def test_if_on_unknown_explores_both_branches():
    res = run_all("(if • 1 2)")
    assert {v for v in res.final_values} == {"n:1", "n:2"}


def test_opaque_application_leaks_argument():
    core = compile_text("(• 5)")
    state, stores = load(core)
    config = fresh_config()
    ctx = RunCtx(config=config)
    todo = [state]
    seen = set()
    while todo:
        s = todo.pop()
        if s in seen or len(seen) > 500:
            break
        seen.add(s)
        todo.extend(step(s, stores, ctx))
    leaked = stores.lookup(LEAK_ADDR)
    # the concrete argument joins the escaped set (widening may fold it into
    # the unknown member, so check coverage rather than membership)
    from scv.primitives import satisfies

    assert any(
        v == VNum(5) or (isinstance(v, VOpq) and all(satisfies(VNum(5), p) for p in v.refinements))
        for v in leaked
    )


def test_set_result_is_one():
    out = run_concrete(compile_text("(let ([x 1]) (set! x 9))"))
    assert out.value.value == VNum(1)


def test_pc_refinement_monotone_along_branches():
    core = compile_text("(λ (x) (if (< 0 x) (if (even? x) 1 2) 3))")
    # drive the closure through verification and watch every successor's pc
    from scv.feasibility import open_solver

    config = fresh_config()
    solver = open_solver(config.resolved_solver())
    state, stores = load(compile_text("(define/contract f (->d int? x int?) (λ (x) (if (< 0 x) 1 0))) 0", escapes=True))
    ctx = RunCtx(config=config, solver=solver, toplevel=frozenset())
    todo, seen = [state], set()
    ok = True
    while todo and len(seen) < 3000:
        s = todo.pop()
        if s in seen:
            continue
        seen.add(s)
        for t in step(s, stores, ctx):
            if not (t.pc >= s.pc or t.kaddr != s.kaddr or t.pc == frozenset()):
                ok = False
            todo.append(t)
    solver.close()
    assert ok


# ---------------------------------------------------------------------------
# Concrete-mode determinism and agreement with the reference evaluator
# ---------------------------------------------------------------------------


_KIND_TAGS = {
    "VClo": "closure", "CloV": "closure",
    "VPrim": "prim", "PrimV": "prim",
    "VArr": "guarded", "ArrV": "guarded",
    "VGrd": "contract", "GrdV": "contract",
}


def _as_reference_result(outcome):
    if outcome.kind == "value":
        v = outcome.value.value
        return ("num", v.n) if isinstance(v, VNum) else ("other", _KIND_TAGS[type(v).__name__])
    if outcome.kind == "blame":
        return ("blame", outcome.positive, outcome.negative)
    return ("timeout",)


def _reference_run(core, fuel=200_000):
    try:
        v = evaluate(core, fuel)
    except BlameSignal as b:
        return ("blame", b.pos.name, b.neg.name)
    except (OutOfFuel, RecursionError):
        return ("timeout",)
    return ("num", v) if isinstance(v, int) else ("other", _KIND_TAGS[type(v).__name__])


def test_concrete_agrees_with_reference_on_random_corpus():
    rng = random.Random(42)
    agreements = 0
    for i in range(200):
        program = generate_hole_program(rng, size=14, holes=False)
        core = alpha_rename(desugar(program))
        ours = _as_reference_result(run_concrete(core, max_steps=60_000))
        theirs = _reference_run(core, fuel=600_000)
        if ours[0] == "timeout" or theirs[0] == "timeout":
            continue
        assert ours == theirs, (ours, theirs, print_expr(core)[:400])
        agreements += 1
    assert agreements >= 150


def test_concrete_corpus_programs_agree_with_reference():
    import os

    from conftest import CORPUS_DIR, corpus_text

    for name in sorted(os.listdir(CORPUS_DIR)):
        core = compile_text(corpus_text(name))
        ours = _as_reference_result(run_concrete(core))
        theirs = _reference_run(core)
        assert ours == theirs, name


def test_concrete_determinism_is_enforced():
    # every hole-free concrete state has exactly one successor until done
    core = compile_text("(define f (λ (x) (if (zero? x) 7 (f (- x 1))))) (f 5)")
    out = run_concrete(core)
    assert out.kind == "value" and out.value.value == VNum(7)


def test_cache_soundness_instrumented_concrete_runs():
    """In a concrete run, whenever the cache claims a precise value for a
    variable in scope, the store cell it names holds exactly that value."""
    import os

    from conftest import CORPUS_DIR, corpus_text
    from scv.machine import GlobalStores, INVALIDATED

    for name in ("factorial.lms", "countdown-divider.lms", "callback-counter.lms"):
        core = compile_text(corpus_text(name))
        config = Config(mode=CONCRETE)
        ctx = RunCtx(config=config)
        state, stores = load(core)
        for _ in range(20_000):
            if state.is_terminal() or isinstance(state.control, CBlame):
                break
            if isinstance(state.control, CEval):
                env = state.control.env
                for x, w in state.cache.items():
                    if w is INVALIDATED or x not in env:
                        continue
                    cell = stores.lookup(env[x])
                    assert cell == frozenset({w.value}), (name, x, w, cell)
            (state,) = step(state, stores, ctx)


def test_dependent_range_uses_argument():
    """The computed range contract closes over the checked argument."""
    good = "((mon a b (->d int? n (λ (r) (= r n))) (λ (x) (* x 1))) 5)"
    out = run_concrete(compile_text(good))
    assert out.kind == "value" and out.value.value == VNum(5)
    bad = "((mon a b (->d int? n (λ (r) (= r n))) (λ (x) (* x 2))) 5)"
    out = run_concrete(compile_text(bad))
    assert out.kind == "blame" and (out.positive, out.negative) == ("a", "b")


def test_recursive_contract_violation_found_both_ways():
    text = "(define/contract f (->d int? x positive?) (λ (x) 0)) 0"
    res = run_all(text, escapes=True)
    assert ("f", "•ctx") in res.blame_pairs()
    concrete = run_concrete(compile_text("(define/contract f (->d int? x positive?) (λ (x) 0)) (f 3)"))
    assert concrete.kind == "blame" and concrete.positive == "f"


def test_shadowing_with_mutation():
    text = "(let ([x 1]) ((λ (x) (begin (set! x 9) x)) 5))"
    out = run_concrete(compile_text(text))
    assert out.value.value == VNum(9)


def test_opaque_dividend_blames_use_site():
    res = run_all("(/ • 2)")
    pairs = res.blame_pairs()
    assert any(pos.startswith("/@") and neg == "Λ" for pos, neg in pairs)


def test_contract_purity_classification():
    from scv.machine import VClo
    from scv.semantics import _pure_contract
    from scv.syntax import desugar, parse

    def clo_of(text):
        core = compile_text(f"(define c {text}) 0")
        # walk to the define's right-hand side lambda
        found = []

        def walk(e):
            if isinstance(e, Lam) and e.x.startswith("r"):
                found.append(e)
            for attr in ("fn", "arg", "body", "cond", "then", "orelse", "expr", "contract", "dom", "rng"):
                child = getattr(e, attr, None)
                if child is not None and hasattr(child, "_key"):
                    walk(child)

        walk(core)
        lam = found[0]
        return VClo(lam.x, lam.body, Env(), frozenset())

    assert _pure_contract(clo_of("(λ (r) (if (int? r) (if (<= r 2) 1 0) 0))"))
    assert not _pure_contract(clo_of("(λ (r) (begin (set! r 1) 1))"))
    # free variables disqualify: the verdict could change between checks
    core = compile_text("(define lo 1) (define c (λ (r) (< lo r))) 0")
    lams = []

    def walk2(e):
        if isinstance(e, Lam) and e.x.startswith("r"):
            lams.append(e)
        for attr in ("fn", "arg", "body", "cond", "then", "orelse", "expr", "contract", "dom", "rng"):
            child = getattr(e, attr, None)
            if child is not None and hasattr(child, "_key"):
                walk2(child)

    walk2(core)
    clo = VClo(lams[0].x, lams[0].body, Env(), frozenset())
    assert not _pure_contract(clo)
