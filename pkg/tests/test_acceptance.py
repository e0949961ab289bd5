"""Acceptance criteria, one test per registered criterion.

Each test records a one-line verdict that is printed in the terminal
summary under "acceptance criteria".
"""
import pytest

from bsde_smp.acceptance import EXPECTED_IDS, REGISTRY, SuiteContext, run_criterion
from bsde_smp.cli import main

from conftest import ACCEPTANCE_LINES

SEED = 7


@pytest.fixture(scope="module")
def ctx():
    return SuiteContext(seed=SEED)


def test_registry_is_complete():
    ids = [c.id for c in REGISTRY]
    assert ids == sorted(set(ids))
    assert tuple(ids) == EXPECTED_IDS


@pytest.mark.parametrize("crit", REGISTRY, ids=lambda c: f"criterion_{c.id:02d}")
def test_criterion(crit, ctx):
    res = run_criterion(crit, ctx)
    ACCEPTANCE_LINES[crit.id] = res.line()
    print(res.line())
    assert res.passed, res.details


def test_suite_artifacts_byte_identical(tmp_path):
    codes = []
    for run, workers in (("a", "1"), ("b", "4")):
        codes.append(main(["suite", "--seed", str(SEED), "--workers", workers,
                           "--out", str(tmp_path / run)]))
    assert codes[0] == codes[1]
    for name in ("suite.json", "suite.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
