"""The thirteen acceptance criteria, each run from its config under configs/.

Every criterion prints one PASS/FAIL line; the lines are repeated in the
terminal summary.
"""

import json

import pytest

from artifact.cli import CONFIG_DIR
from artifact.experiments import run_criterion

from conftest import ACCEPTANCE_LINES

CONFIGS = sorted(CONFIG_DIR.glob("criterion_*.json"))


@pytest.mark.parametrize("path", CONFIGS, ids=[p.stem for p in CONFIGS])
def test_criterion(path):
    cfg = json.loads(path.read_text())
    res = run_criterion(int(cfg["criterion"]), cfg.get("params", {}))
    line = res.line()
    ACCEPTANCE_LINES[res.number] = line
    print(line)
    assert res.passed, line
    assert res.runtime <= res.runtime_limit, f"runtime {res.runtime:.1f}s exceeds {res.runtime_limit}s"


def test_all_criteria_configured():
    assert len(CONFIGS) == 13
