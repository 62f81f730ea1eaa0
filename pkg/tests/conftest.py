import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from scv.config import ABSTRACT, Config
from scv.feasibility import open_solver
from scv.syntax import alpha_rename, desugar, parse, with_escapes

CORPUS_DIR = os.path.join(os.path.dirname(__file__), "corpus")

CORPUS_EXPECTED = {
    # file -> exact set of (positive, negative) blame-party name pairs
    "callback-doubler.lms": set(),
    "callback-counter.lms": {("f", "•ctx")},
    "factorial.lms": set(),
    "countdown-divider.lms": {("/@5:35", "Λ")},
    "divider-and-stepper.lms": {("/@5:16", "Λ")},
    "alias-then-clobber.lms": set(),
    "micro-flat.lms": {("f", "g")},
    "micro-arrow.lms": {("g", "f")},
}

# files whose verification is expected to degrade without a solver, and the
# blame pairs they may then additionally report
NO_SOLVER_DEGRADATIONS = {
    "alias-then-clobber.lms": {("/@9:22", "Λ")},
}


def corpus_path(name: str) -> str:
    return os.path.join(CORPUS_DIR, name)


def corpus_text(name: str) -> str:
    with open(corpus_path(name), encoding="utf-8") as fh:
        return fh.read()


def compile_text(text: str, escapes: bool = False):
    program = parse(text)
    if escapes:
        program = with_escapes(program)
    return alpha_rename(desugar(program))


@pytest.fixture(scope="session")
def solver():
    client = open_solver("builtin")
    assert client is not None
    yield client
    client.close()


def fresh_config(**kw) -> Config:
    defaults = dict(mode=ABSTRACT, step_budget=1_000_000)
    defaults.update(kw)
    return Config(**defaults)
