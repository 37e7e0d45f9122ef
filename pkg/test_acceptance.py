"""
Acceptance suite: every bundled scenario must pass end to end.
"""

import pytest

from renewal import config, harness

CATALOGUE = sorted(p.name for p in config.CATALOGUE_DIR.glob("*.json"))


def _scenarios(file_name):
    return config.build_scenarios(config.load_config(str(config.catalogue_path(file_name))))


@pytest.mark.parametrize("file_name", CATALOGUE)
def test_bundled_scenarios_pass(file_name):
    """Test that each scenario of a bundled file reports pass."""
    reports = harness.run_all(_scenarios(file_name))
    failed = {r.scenario: r.summary for r in reports if not r.passed}
    assert not failed, failed


@pytest.mark.parametrize("file_name", CATALOGUE)
def test_window_count_inequalities_hold(file_name):
    """Test that no lattice walk of a bundled file violates the window-count inequalities."""
    for sc in _scenarios(file_name):
        if not sc.model.is_lattice:
            continue
        span = sc.model.span
        for n, x in ((0, 0.0), (20, 30.0 * span), (60, 90.0 * span)):
            record = harness.lemma3_check(sc.model, n, x, span, seed=sc.seed)
            assert record["holds"], (sc.name, n, x, record)


def test_comparisons_check_window_counts():
    """Test that every lattice comparison scenario runs the window-count inequalities."""
    missing = [
        sc.name
        for file_name in CATALOGUE
        for sc in _scenarios(file_name)
        if sc.kind == harness.ScenarioKind.COMPARISON and sc.model.is_lattice and not sc.lemma3
    ]
    assert not missing, missing


def test_catalogue_is_not_empty():
    """Test that the scenario catalogue ships with the package."""
    assert len(CATALOGUE) >= 11
