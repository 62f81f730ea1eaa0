from conftest import compile_text, corpus_text, fresh_config
from scv.abstraction import run_fixpoint, widen
from scv.config import Config, RunCtx
from scv.havoc import (
    HavocMemo,
    context_mutable_vars,
    fingerprint,
    leak,
    reachable_addrs,
    should_rerun,
    value_key,
)
from scv.machine import Env, GlobalStores, LEAK_ADDR, VClo, VNum, VOpq, load
from scv.syntax import Num, Set, parse_expr


def fresh_stores() -> GlobalStores:
    stores = GlobalStores()
    stores.values[LEAK_ADDR] = frozenset({VOpq()})
    return stores


def test_leak_concrete_keeps_value():
    stores = fresh_stores()
    leak(stores, VNum(5), None)  # concrete mode: plain set union
    assert VNum(5) in stores.lookup(LEAK_ADDR)
    size = len(stores.lookup(LEAK_ADDR))
    leak(stores, VNum(5), None)
    assert len(stores.lookup(LEAK_ADDR)) == size  # set semantics


def test_leak_abstract_widens_numbers_into_unknown():
    stores = fresh_stores()
    leak(stores, VNum(5), widen)
    covered = stores.lookup(LEAK_ADDR)
    assert any(isinstance(v, VOpq) for v in covered)


def test_closure_reachability_enters_fingerprint():
    stores = fresh_stores()
    a1, a2, a3 = ("var", "a", frozenset()), ("var", "b", frozenset()), ("var", "c", frozenset())
    inner = VClo("y", Num(0), Env({"c": a3}), frozenset())
    stores.values[a1] = frozenset({VNum(1)})
    stores.values[a2] = frozenset({inner})
    stores.values[a3] = frozenset({VNum(7)})
    clo = VClo("x", Num(0), Env({"a": a1, "b": a2}), frozenset())
    assert reachable_addrs(clo, stores) == {a1, a2, a3}
    fp1 = fingerprint(clo, stores)
    stores.values[a3] = frozenset({VNum(8)})
    assert fingerprint(clo, stores) != fp1


def test_should_rerun_first_then_memoized():
    stores = fresh_stores()
    memo = HavocMemo()
    clo = VClo("x", Num(0), Env(), frozenset())
    assert should_rerun(clo, stores, memo)
    assert not should_rerun(clo, stores, memo)


def test_should_rerun_after_reachable_mutation():
    stores = fresh_stores()
    memo = HavocMemo()
    addr = ("var", "n", frozenset())
    stores.values[addr] = frozenset({VNum(1)})
    clo = VClo("x", Num(0), Env({"n": addr}), frozenset())
    assert should_rerun(clo, stores, memo)
    assert not should_rerun(clo, stores, memo)
    stores.join_value(addr, VNum(0), widen)  # a mutation widened the cell
    assert should_rerun(clo, stores, memo)


def test_context_mutable_vars_follows_reachable_bodies():
    stores = fresh_stores()
    mutator = VClo("u", Set("n", Num(1)), Env({"n": ("var", "n", frozenset())}), frozenset())
    leak(stores, mutator, None)
    assert "n" in context_mutable_vars(stores)


def test_corpus_havoc_blames():
    for name, expected in (("countdown-divider.lms", {("/@5:35", "Λ")}),
                           ("divider-and-stepper.lms", {("/@5:16", "Λ")})):
        core = compile_text(corpus_text(name), escapes=True)
        res = run_fixpoint(core, fresh_config(no_solver=True))
        assert res.blame_pairs() == expected, name
        assert not res.inconclusive


def test_no_opaque_positive_blame_reported():
    # applying a bare unknown context is full of sentinel-party blames, none
    # of which may surface
    core = compile_text(corpus_text("callback-doubler.lms"), escapes=True)
    res = run_fixpoint(core, fresh_config(no_solver=True))
    assert all(pos != "•ctx" for pos, _ in res.blame_pairs())
    assert res.verified


def test_memo_is_a_pure_filter_on_corpus():
    import os

    from conftest import CORPUS_DIR

    for name in sorted(os.listdir(CORPUS_DIR)):
        core = compile_text(corpus_text(name), escapes=True)
        with_memo = run_fixpoint(core, fresh_config(no_solver=True, havoc_memo=True))
        without = run_fixpoint(core, fresh_config(no_solver=True, havoc_memo=False, step_budget=2_000_000))
        assert with_memo.blame_pairs() == without.blame_pairs(), name
        assert with_memo.explored_states <= without.explored_states, name
