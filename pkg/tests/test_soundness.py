import random

from conftest import compile_text, corpus_text, fresh_config
from scv.abstraction import run_concrete, run_fixpoint
from scv.machine import LEAK_ADDR, load
from scv.soundness import (
    approx_expr,
    approx_state,
    differential_check,
    generate_hole_program,
    instantiate_expr,
    instantiate_program,
    is_oexpr,
)
from scv.syntax import (
    Num,
    OPAQUE_LABEL,
    Opq,
    alpha_rename,
    desugar,
    node_kinds,
    parse,
    parse_expr,
    print_expr,
)


def test_approx_expr_hole_rules():
    assert approx_expr(parse_expr("(λ (x) x)"), Opq())
    assert not approx_expr(parse_expr("(λ (x) y)"), Opq())  # y is free
    assert approx_expr(Num(3), Num(3))
    assert not approx_expr(Num(3), Num(4))
    assert approx_expr(Num(3), Opq())


def test_approx_expr_structural_with_labels():
    a = parse("(define f (λ (x) (f x))) (f 1)")
    b = parse("(define f (λ (x) (f x))) (f 1)")
    assert approx_expr(desugar(a), desugar(b))
    # mismatched call labels break approximation
    c = parse("(define f (λ (x) (f  x))) (f 1)")  # shifted position
    assert not approx_expr(desugar(a), desugar(c))


def test_is_oexpr_accepts_grammar_and_rejects_monitors():
    from scv.syntax import App, Lam, Ref

    self_app = Lam("x", App(Ref("x"), Ref("x"), OPAQUE_LABEL))
    assert is_oexpr(self_app, frozenset())
    assert not is_oexpr(parse_expr("(mon p q int? 5)"), frozenset())
    assert not is_oexpr(parse_expr("(f x)"), frozenset({"f", "x"}))  # transparent label


def test_instantiate_postconditions():
    rng = random.Random(4)
    for _ in range(150):
        program = generate_hole_program(rng, size=14)
        inst = instantiate_program(program, rng)
        for a, b in [(inst.main, program.main)] + [
            (x.expr, y.expr) for x, y in zip(inst.definitions, program.definitions)
        ]:
            assert "Opq" not in node_kinds(a)
            assert approx_expr(a, b), (print_expr(a), print_expr(b))


def test_approx_state_reflexive_on_loaded_programs():
    core = compile_text("(add1 (quotient-free 1))".replace("(quotient-free 1)", "1"))
    state, stores = load(core)
    F = {addr: addr for addr in stores.values}
    assert approx_state(F, state, stores, state, stores)


def test_approx_state_load_of_approximated_programs():
    holed = compile_text("(add1 •)")
    inst = compile_text("(add1 7)")
    s_inst, st_inst = load(inst)
    s_holed, st_holed = load(holed)
    F = {LEAK_ADDR: LEAK_ADDR}
    assert approx_state(F, s_inst, st_inst, s_holed, st_holed)
    # and not the other way round
    assert not approx_state(F, s_holed, st_holed, s_inst, st_inst)


def test_differential_on_unsafe_corpus_program():
    """A hand-built context triggers the callback-counter range blame; the
    symbolic analysis of the holed program must already report it."""
    program = parse(corpus_text("callback-counter.lms"))
    core_holed = alpha_rename(desugar(program))
    res = run_fixpoint(core_holed, fresh_config())
    holed_with_escapes = compile_text(corpus_text("callback-counter.lms"), escapes=True)
    res_escaped = run_fixpoint(holed_with_escapes, fresh_config())
    assert ("f", "•ctx") in res_escaped.blame_pairs()

    trigger = """
    (define/contract f
      (->d (->d (->d int? _ int?) _ int?) _ (λ (r) (if (int? r) (if (<= r 2) 1 0) 0)))
      (λ (g)
        (let ([n 0])
          (let ([inc! (λ (u) (begin (set! n (+ 1 n)) 0))])
            (begin
              (g inc!)
              (if (< n 2)
                  (begin (g (λ (u) 0)) n)
                  2))))))
    (define saved (λ (z) z))
    (define first-time (λ (z) z))
    (let ([st (box 0)])
      (let ([cb (box (λ (u) 0))])
        (f (λ (k)
             (if (unbox st)
                 (begin ((unbox cb) 0) (begin ((unbox cb) 0) (begin ((unbox cb) 0) 0)))
                 (begin (set-box! cb k) (begin (set-box! st 1) 0)))))))
    """
    concrete = run_concrete(compile_text(trigger))
    assert concrete.kind == "blame"
    assert (concrete.positive, concrete.negative) == ("f", "•ctx")
    assert (concrete.positive, concrete.negative) in res_escaped.blame_pairs()


def test_differential_no_holes_agrees_exactly():
    rng = random.Random(17)
    program = generate_hole_program(rng, size=12, holes=False)
    rep = differential_check(program, trials=5, rng=rng, config=fresh_config(step_budget=300_000))
    assert rep.ok()


def test_differential_random_sweep():
    rng = random.Random(2024)
    for _ in range(40):
        program = generate_hole_program(rng, size=15)
        rep = differential_check(program, trials=8, rng=rng, config=fresh_config(step_budget=300_000))
        assert not rep.violations, [
            (pos, neg, print_expr(inst.main)[:200]) for inst, pos, neg in rep.violations
        ]
        assert not rep.inconclusive


def test_approx_value_restricted_closure_under_unknown():
    """A closure whose body is instantiation-grammar code and whose
    environment lives entirely in unknown territory is covered by the
    unknown value."""
    from scv.machine import Env, VClo, VNum, VOpq
    from scv.soundness import approx_value
    from scv.syntax import App, Lam, Ref

    addr = ("fresh", "y", 1)
    F = {addr: LEAK_ADDR}
    body = App(Ref("x"), Ref("y"), OPAQUE_LABEL)
    clo = VClo("x", body, Env({"y": addr}), frozenset())
    assert approx_value(F, clo, VOpq())
    # same closure with a transparent-labeled body is not covered
    from scv.syntax import Label

    body_t = App(Ref("x"), Ref("y"), Label("site", "transparent"))
    clo_t = VClo("x", body_t, Env({"y": addr}), frozenset())
    assert not approx_value(F, clo_t, VOpq())
    # nor if the environment escapes the leak map
    F_bad = {addr: ("var", "y", frozenset())}
    assert not approx_value(F_bad, clo, VOpq())
    # refinements must be honored
    assert approx_value({}, VNum(4), VOpq(frozenset({"int?", "even?"})))
    assert not approx_value({}, VNum(3), VOpq(frozenset({"int?", "even?"})))


def test_approx_state_mismatched_blame_labels():
    from scv.machine import CBlame, Cache, GlobalStores, HALT, MachineState
    from scv.syntax import Label

    def blame_state(pos):
        return MachineState(
            CBlame(Label(pos, "transparent"), Label("q", "transparent")),
            Cache(), frozenset(), (), HALT, frozenset(),
        )

    stores = GlobalStores()
    assert approx_state({}, blame_state("p"), stores, blame_state("p"), stores)
    assert not approx_state({}, blame_state("p"), stores, blame_state("r"), stores)
