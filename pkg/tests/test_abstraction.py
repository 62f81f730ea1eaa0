import itertools
import random

from conftest import compile_text, corpus_text, fresh_config
from reference_eval import BlameSignal, OutOfFuel, evaluate
from scv.abstraction import alloc, kont_alloc, run_concrete, run_fixpoint, widen
from scv.config import ABSTRACT, CONCRETE, Config, RunCtx
from scv.machine import Env, VClo, VNum, VOpq, VPrim
from scv.primitives import BASE_VOCAB, satisfies
from scv.soundness import generate_hole_program
from scv.syntax import Label, Num, alpha_rename, desugar, parse_expr


def test_abstract_alloc_deterministic():
    h = frozenset({(Label("l1"), Num(1))})
    assert alloc("z", h, ABSTRACT) == alloc("z", h, ABSTRACT)
    assert alloc("z", h, ABSTRACT) != alloc("z", frozenset(), ABSTRACT)


def test_concrete_alloc_fresh():
    ctx = RunCtx(config=Config(mode=CONCRETE))
    assert alloc("z", frozenset(), CONCRETE, ctx) != alloc("z", frozenset(), CONCRETE, ctx)


def test_kont_alloc_keys_on_body_and_env():
    body = parse_expr("(add1 x)")
    e1 = Env({"x": ("var", "x", frozenset())})
    e2 = Env({"x": ("var", "y", frozenset())})
    assert kont_alloc(body, e1, ABSTRACT) == kont_alloc(body, e1, ABSTRACT)
    assert kont_alloc(body, e1, ABSTRACT) != kont_alloc(body, e2, ABSTRACT)


def test_loop_reuses_addresses_and_widens():
    """Recursion stabilizes the transfer set, so the recursive binding
    reuses one address whose content widens."""
    from scv.machine import GlobalStores, load
    core = compile_text(corpus_text("factorial.lms"), escapes=True)
    res = run_fixpoint(core, fresh_config(no_solver=True))
    assert res.verified and not res.inconclusive


def test_widen_collapse_cases():
    w24, rep = widen(frozenset({VNum(2)}), VNum(4))
    assert w24 == frozenset({VOpq(frozenset({"int?", "even?", "positive?"}))})
    stable, rep = widen(frozenset({VOpq(frozenset({"int?", "even?"}))}), VNum(6))
    assert stable == frozenset({VOpq(frozenset({"int?", "even?"}))})
    assert rep == VOpq(frozenset({"int?", "even?"}))


def test_widen_monotone_under_repeated_joins():
    rng = random.Random(3)
    values = [VNum(n) for n in range(-3, 4)] + [
        VOpq(), VOpq(frozenset({"int?"})), VOpq(frozenset({"proc?"})),
        VPrim("+", VNum(1)), VPrim("+", VNum(2)), VPrim("add1"),
        VClo("x", Num(0), Env(), frozenset()),
    ]
    for _ in range(200):
        vs = frozenset()
        for _ in range(8):
            v = rng.choice(values)
            vs2, rep = widen(vs, v)
            # joining the representative back must be a no-op
            vs3, _ = widen(vs2, rep)
            assert vs3 == vs2
            # and rejoining the original value must also be stable now
            vs4, _ = widen(vs2, v)
            assert vs4 == vs2
            vs = vs2


def _concretization_holds(members, witness) -> bool:
    """Is `witness` covered by some member of the widened set?"""
    for m in members:
        if m == witness:
            return True
        if isinstance(m, VOpq) and all(satisfies(witness, p) for p in m.refinements):
            return True
    return False


def test_widening_concretization_sound_exhaustive():
    universe = [VNum(n) for n in range(-3, 4)] + [VPrim("add1"), VClo("x", Num(0), Env(), frozenset())]
    violations = []
    for size in (1, 2, 3):
        for combo in itertools.combinations(universe, size):
            vs = frozenset()
            for v in combo:
                vs, _ = widen(vs, v)
            for v in combo:
                if not _concretization_holds(vs, v):
                    violations.append((combo, v, vs))
    assert not violations, violations[:3]


def test_straight_line_program_single_answer():
    res = run_fixpoint(compile_text("(+ (add1 1) (* 2 3))"), fresh_config(no_solver=True))
    assert res.verified
    assert res.final_values == ("n:8",)


def test_budget_exhaustion_is_inconclusive_never_verified():
    core = compile_text(corpus_text("factorial.lms"), escapes=True)
    res = run_fixpoint(core, fresh_config(no_solver=True, step_budget=20))
    assert res.inconclusive and not res.verified


def test_abstract_covers_concrete_blames_on_random_programs():
    """On hole-free programs, abstract-mode blames include the concrete
    outcome's blame, and concrete equals the reference evaluator."""
    rng = random.Random(99)
    checked = 0
    for _ in range(60):
        program = generate_hole_program(rng, size=12, holes=False)
        core = alpha_rename(desugar(program))
        concrete = run_concrete(core, max_steps=40_000)
        if concrete.kind == "timeout":
            continue
        abstract = run_fixpoint(core, fresh_config(no_solver=True, step_budget=300_000))
        if abstract.inconclusive:
            continue
        checked += 1
        if concrete.kind == "blame" and concrete.transparent:
            assert (concrete.positive, concrete.negative) in abstract.blame_pairs()
    assert checked >= 40


def test_sym_truncation_is_sound_on_corpus():
    """Cutting symbolic names to depth 1 only loses pruning power: every
    blame found at the default depth is still found."""
    from conftest import CORPUS_EXPECTED, corpus_text

    for name in sorted(CORPUS_EXPECTED):
        core = compile_text(corpus_text(name), escapes=True)
        deep = run_fixpoint(core, fresh_config())
        shallow = run_fixpoint(core, fresh_config(max_sym_depth=1))
        assert not shallow.inconclusive, name
        assert deep.blame_pairs() <= shallow.blame_pairs(), name


def test_concrete_mode_finds_bugs_without_abstraction():
    """Fresh-allocation exploration is plain bug-finding: no widening, no
    termination guarantee, but reachable blames surface."""
    text = """
(define n 1)
(define/contract f (->d int? _ int?)
  (λ (u) (begin (set! n (- n 1)) (/ 100 n))))
0
"""
    core = compile_text(text, escapes=True)
    res = run_fixpoint(core, Config(mode=CONCRETE, step_budget=40_000, no_solver=True))
    assert any(pos.startswith("/@") for pos, _ in res.blame_pairs())
