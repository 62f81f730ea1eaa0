import itertools

from scv.machine import Env, VClo, VNum, VOpq, VPrim
from scv.primitives import (
    BASE_VOCAB,
    PRIM_TABLE,
    concrete_refinements,
    delta,
    refinement_excludes,
    refinement_implies,
    satisfies,
    standard_env,
    surface_prims,
)
from scv.syntax import Num

ONE = VNum(1)
ZERO = VNum(0)

# a small value universe for brute-force checks: integers, a primitive, and
# a closure
UNIVERSE = [VNum(n) for n in range(-3, 4)] + [
    VPrim("add1"),
    VClo("x", Num(0), Env(), frozenset()),
]

PREDICATES = ["int?", "proc?", "zero?", "even?", "odd?", "positive?", "nonzero?", "nonproc?"]


def test_delta_int_concrete():
    assert delta(VPrim("int?"), VNum(5)) == frozenset({ONE})
    assert delta(VPrim("int?"), VPrim("add1")) == frozenset({ZERO})


def test_delta_int_on_unknown_is_undetermined():
    assert delta(VPrim("int?"), VOpq()) == frozenset({ZERO, ONE})


def test_delta_add1():
    assert delta(VPrim("add1"), VNum(3)) == frozenset({VNum(4)})


def test_delta_add1_refinement_transfer():
    (res,) = delta(VPrim("add1"), VOpq(frozenset({"int?"})))
    assert isinstance(res, VOpq)
    assert "int?" in res.refinements


def test_delta_parity_and_sign_transfer():
    (res,) = delta(VPrim("add1"), VOpq(frozenset({"int?", "even?", "positive?"})))
    assert res.refinements >= {"int?", "odd?", "positive?"}
    (res,) = delta(VPrim(("*"), VNum(2)), VOpq(frozenset({"int?", "positive?"})))
    assert res.refinements >= {"int?", "even?", "positive?"}


def test_delta_two_arg_currying():
    (partial,) = delta(VPrim("+"), VNum(2))
    assert partial == VPrim("+", VNum(2))
    assert delta(partial, VNum(3)) == frozenset({VNum(5)})


def test_delta_compare_on_known_non_int_is_false():
    partial = VPrim("<", VOpq(frozenset({"proc?"})))
    assert delta(partial, VNum(1)) == frozenset({ZERO})


def test_unsafe_division_total():
    (q,) = delta(VPrim("/", VNum(7)), VNum(2))
    assert q == VNum(3)
    (q,) = delta(VPrim("/", VNum(7)), VNum(0))
    assert q == VNum(0)
    (q,) = delta(VPrim("/", VNum(-7)), VNum(2))
    assert q == VNum(-3)  # truncation toward zero


def test_delta_concrete_is_singleton():
    for spec_name in surface_prims():
        spec = PRIM_TABLE[spec_name]
        for v in UNIVERSE:
            out = delta(VPrim(spec_name), v)
            assert len(out) == 1, (spec_name, v)
            if spec.arity == 2:
                (partial,) = out
                for w in UNIVERSE:
                    assert len(delta(partial, w)) == 1


def test_refinement_implications():
    assert refinement_implies(frozenset({"even?"}), "int?")
    assert refinement_implies(frozenset({"zero?"}), "even?")
    assert refinement_excludes(frozenset({"positive?"}), "zero?")
    assert refinement_excludes(frozenset({"proc?"}), "int?")
    assert refinement_excludes(frozenset({"even?"}), "proc?")
    assert not refinement_implies(frozenset({"int?"}), "even?")


def all_refinement_sets():
    for r in range(len(BASE_VOCAB) + 1):
        for combo in itertools.combinations(BASE_VOCAB, r):
            yield frozenset(combo)


def test_delta_sound_on_unknowns_exhaustive():
    """For every predicate, concrete value, and refinement set the value
    satisfies, the concrete answer is covered by the unknown answer."""
    violations = []
    for p in PREDICATES:
        for v in UNIVERSE:
            for refs in all_refinement_sets():
                if not all(satisfies(v, q) for q in refs):
                    continue
                concrete = delta(VPrim(p), v)
                abstract = delta(VPrim(p), VOpq(refs))
                if not concrete <= abstract:
                    violations.append((p, v, refs))
    assert not violations, violations[:5]


def test_arith_transfer_sound_on_unknowns_exhaustive():
    ops1 = ["add1", "sub1"]
    ops2 = ["+", "-", "*", "/"]
    violations = []
    for refs in all_refinement_sets():
        witnesses = [v for v in UNIVERSE if all(satisfies(v, q) for q in refs)]
        for op in ops1:
            (abstract,) = delta(VPrim(op), VOpq(refs))
            for v in witnesses:
                (concrete,) = delta(VPrim(op), v)
                if not all(satisfies(concrete, q) for q in abstract.refinements):
                    violations.append((op, v, refs))
        for op in ops2:
            for refs2 in all_refinement_sets():
                witnesses2 = [v for v in UNIVERSE if all(satisfies(v, q) for q in refs2)]
                (abstract,) = delta(VPrim(op, VOpq(refs)), VOpq(refs2))
                for a in witnesses:
                    for b in witnesses2:
                        (concrete,) = delta(VPrim(op, a), b)
                        if not all(satisfies(concrete, q) for q in abstract.refinements):
                            violations.append((op, a, b, refs, refs2))
    assert not violations, violations[:5]


def test_concrete_refinements():
    assert concrete_refinements(VNum(4)) == frozenset({"int?", "even?", "positive?"})
    assert concrete_refinements(VNum(0)) == frozenset({"int?", "zero?", "even?"})
    assert concrete_refinements(VPrim("add1")) == frozenset({"proc?"})


def test_standard_env_guards_partial_ops_only():
    env = standard_env()
    assert env["add1"] is not None
    assert env["/"] is not None
    assert env["int?"] is None
    assert env["flat-contract?"] is None
    assert "nonzero?" not in env  # internal predicate, not surface


def test_guarded_prims_behavior():
    from conftest import compile_text
    from scv.abstraction import run_concrete

    out = run_concrete(compile_text("(add1 proc?)"))
    assert out.kind == "blame" and out.positive.startswith("add1@") and out.negative == "Λ"
    out = run_concrete(compile_text("(/ 6 2)"))
    assert out.kind == "value" and out.value.value == VNum(3)
    out = run_concrete(compile_text("(/ 6 0)"))
    assert out.kind == "blame" and out.positive.startswith("/@") and out.negative == "Λ"
