"""Allocation policies, value widening, and the fixpoint exploration engine.

Concrete allocation is always-fresh and yields plain execution.  Abstract
allocation keys every address on the syntactic component plus the set of
call transfers taken so far, so values recurring across iterations of the
same loop share an address and get widened there; continuation addresses
are keyed on the callee's body and environment, which gives exact
call/return matching.  Exploration runs a worklist against globally
widened stores, revisiting a state only when the stores have grown since
it was last processed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

from .config import ABSTRACT, CONCRETE, Config, RunCtx
from .havoc import HavocMemo, value_key
from .machine import (
    Addr,
    CBlame,
    Env,
    HALT,
    KontAddr,
    MachineState,
    PostValue,
    VNum,
    VOpq,
    VPrim,
    Value,
    load,
    state_to_dict,
)
from .primitives import BASE_VOCAB, satisfies
from .syntax import Expr, print_expr, toplevel_names

__all__ = [
    "alloc",
    "kont_alloc",
    "widen",
    "run_fixpoint",
    "run_concrete",
    "AnalysisResult",
    "BlameInfo",
    "ConcreteOutcome",
]


# --------------------------------------------------------------------------
# Allocation
# --------------------------------------------------------------------------


def alloc(tag, history: frozenset, mode: str, ctx: Optional[RunCtx] = None) -> Addr:
    """Address for a binding or wrapper allocation; concrete mode is fresh.

    Abstract variable bindings pair the variable with the transfer set, so
    values recurring across iterations of the same loop share an address.
    Contract-wrapper cells are keyed on their syntactic node alone: they
    carry no loop structure, and history-indexing them would mint a fresh
    wrapper identity per context interleaving.
    """
    if mode == ABSTRACT:
        return ("var", tag, history) if isinstance(tag, str) else ("node", tag)
    assert ctx is not None, "concrete allocation needs the run context"
    return ctx.fresh_addr(tag if isinstance(tag, str) else "node")


def kont_alloc(body: Expr, env: Env, mode: str, ctx: Optional[RunCtx] = None) -> KontAddr:
    """Continuation address for entering a closure body."""
    if mode == ABSTRACT:
        return ("kont", body, env)
    assert ctx is not None
    return ("kont", ctx.fresh_addr("k"))


# --------------------------------------------------------------------------
# Widening
# --------------------------------------------------------------------------


def _common_refinements(pool: list[Value]) -> frozenset:
    out = {p for p in BASE_VOCAB if all(satisfies(m, p) for m in pool)}
    tokens: Optional[set] = None
    for m in pool:
        toks = (
            {t for t in m.refinements if not isinstance(t, str)}
            if isinstance(m, VOpq)
            else set()
        )
        tokens = toks if tokens is None else tokens & toks
    if tokens:
        out |= tokens
    return frozenset(out)


def _absorbable(v: Value) -> bool:
    # Closures, contracts, and guarded functions carry behavior an unknown
    # value cannot stand in for (their internal blames would be lost), so
    # they are never widened away.  Numbers, unknowns, and partially
    # applied primitives are pure data to the analysis.
    return isinstance(v, (VNum, VOpq)) or (isinstance(v, VPrim) and v.arg0 is not None)


def widen(vs: frozenset, v: Value) -> tuple[frozenset, Value]:
    """Join `v` into a value set, monotonically.

    A number-like newcomer covered by an unknown already present is
    absorbed into it.  Two distinct number-like members collapse into one
    unknown refined by every vocabulary predicate all of them satisfy.
    Everything with behavior stays a distinct member.
    """
    if _absorbable(v):
        for m in vs:
            if isinstance(m, VOpq) and all(satisfies(v, p) for p in m.refinements):
                return vs, m

    members = set(vs)
    members.add(v)
    pool = [m for m in members if isinstance(m, (VNum, VOpq))]
    keep = [m for m in members if not isinstance(m, (VNum, VOpq))]

    # same-operation partial applications over different captured values
    # collapse to one unknown procedure
    by_op: dict[str, list] = {}
    for m in keep:
        if isinstance(m, VPrim) and m.arg0 is not None:
            by_op.setdefault(m.op, []).append(m)
    for group in by_op.values():
        if len(group) > 1:
            for m in group:
                keep.remove(m)
            pool.append(VOpq(frozenset({"proc?"})))

    if len(pool) <= 1:
        new = frozenset(keep) | frozenset(pool)
        rep = v if v in new else pool[0]
        return new, rep
    merged = VOpq(_common_refinements(pool))
    new = frozenset(keep) | {merged}
    rep = v if v in new else merged
    return new, rep


# --------------------------------------------------------------------------
# Results
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BlameInfo:
    positive: str
    negative: str
    position: str
    pc_sample: tuple

    def key(self) -> tuple:
        return (self.positive, self.negative, self.position)


@dataclass(frozen=True)
class AnalysisResult:
    blames: tuple
    explored_states: int
    verified: bool
    inconclusive: bool
    final_values: tuple

    def blame_pairs(self) -> frozenset:
        return frozenset((b.positive, b.negative) for b in self.blames)


@dataclass(frozen=True)
class ConcreteOutcome:
    kind: str  # "value" | "blame" | "timeout"
    value: Optional[PostValue] = None
    positive: Optional[str] = None
    negative: Optional[str] = None
    transparent: bool = False  # blame only: positive party is program code
    steps: int = 0


# --------------------------------------------------------------------------
# Drivers
# --------------------------------------------------------------------------


def _make_ctx(expr: Expr, config: Config, solver) -> RunCtx:
    return RunCtx(
        config=config,
        solver=solver,
        toplevel=toplevel_names(expr),
        memo=HavocMemo(),
    )


def run_fixpoint(expr: Expr, config: Config, solver=None, ctx: Optional[RunCtx] = None) -> AnalysisResult:
    """Explore every reachable state under global-store widening, collecting
    blames whose positive party is transparent.  Exceeding the step budget
    marks the result inconclusive (never verified)."""
    from .feasibility import open_solver
    from .semantics import step

    own_solver = False
    if solver is None and ctx is None:
        solver = open_solver(config.resolved_solver())
        own_solver = solver is not None
    if ctx is None:
        ctx = _make_ctx(expr, config, solver)

    state0, stores = load(expr)
    trace = open(config.trace_path, "w") if config.trace_path else None
    todo: list[MachineState] = [state0]
    queued: set[MachineState] = {state0}
    processed_set: set[MachineState] = set()
    deps: dict = {}
    blames: dict[tuple, BlameInfo] = {}
    finals: set[str] = set()
    processed = 0
    inconclusive = False

    try:
        while todo:
            state = todo.pop()
            queued.discard(state)
            if state in processed_set:
                continue
            if processed >= config.step_budget:
                inconclusive = True
                break
            processed += 1
            processed_set.add(state)
            if trace is not None:
                trace.write(json.dumps(state_to_dict(state), ensure_ascii=False) + "\n")

            control = state.control
            if isinstance(control, CBlame):
                if control.pos_label.is_transparent():
                    info = BlameInfo(
                        positive=control.pos_label.name,
                        negative=control.neg_label.name,
                        position=str(control.pos_label.pos),
                        pc_sample=tuple(sorted(print_expr(e) for e in state.pc)[:8]),
                    )
                    blames.setdefault(info.key(), info)
                continue
            if state.is_terminal():
                if state.kaddr == HALT:
                    finals.add(value_key(control.w.value))
                continue

            stores.reads = set()
            succs = step(state, stores, ctx)
            for addr in stores.reads:
                deps.setdefault(addr, set()).add(state)
            stores.reads = None
            # a store change invalidates everything that read the address
            if stores.changed:
                for addr in stores.changed:
                    for stale in deps.get(addr, ()):
                        processed_set.discard(stale)
                        if stale not in queued:
                            queued.add(stale)
                            todo.append(stale)
                stores.changed.clear()
            for succ in succs:
                if succ not in processed_set and succ not in queued:
                    queued.add(succ)
                    todo.append(succ)
    finally:
        if trace is not None:
            trace.close()
        if own_solver and solver is not None:
            solver.close()

    ordered = tuple(sorted(blames.values(), key=lambda b: b.key()))
    return AnalysisResult(
        blames=ordered,
        explored_states=processed,
        verified=(not ordered) and (not inconclusive),
        inconclusive=inconclusive,
        final_values=tuple(sorted(finals)),
    )


def run_concrete(expr: Expr, config: Optional[Config] = None, max_steps: int = 200_000) -> ConcreteOutcome:
    """Deterministic reference execution with fresh allocation.  The program
    must contain no holes; every state then has at most one successor."""
    from .semantics import InternalError, step

    config = config or Config(mode=CONCRETE)
    if config.mode != CONCRETE:
        config = Config(
            mode=CONCRETE,
            max_sym_depth=config.max_sym_depth,
            step_budget=config.step_budget,
            no_solver=True,
            trace_path=config.trace_path,
        )
    ctx = _make_ctx(expr, config, None)
    state, stores = load(expr)
    trace = open(config.trace_path, "w") if config.trace_path else None
    steps = 0
    try:
        while steps < max_steps:
            if trace is not None:
                trace.write(json.dumps(state_to_dict(state), ensure_ascii=False) + "\n")
            control = state.control
            if isinstance(control, CBlame):
                return ConcreteOutcome(
                    "blame",
                    positive=control.pos_label.name,
                    negative=control.neg_label.name,
                    transparent=control.pos_label.is_transparent(),
                    steps=steps,
                )
            if state.is_terminal():
                return ConcreteOutcome("value", value=control.w, steps=steps)
            succs = step(state, stores, ctx)
            if len(succs) != 1:
                raise InternalError(
                    f"concrete execution must be deterministic, got {len(succs)} successors"
                )
            state = succs[0]
            steps += 1
        return ConcreteOutcome("timeout", steps=steps)
    finally:
        if trace is not None:
            trace.close()
