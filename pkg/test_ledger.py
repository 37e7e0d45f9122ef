"""
Test suite for the hash-chained run ledger
"""

import math

import numpy as np
import pytest

from renewal import ledger
from renewal.ledger import GENESIS_HASH, RunLedger


@pytest.fixture
def run_ledger(tmp_path):
    """Fixture providing a ledger with three entries."""
    book = RunLedger(str(tmp_path / "out" / "ledger.jsonl"))
    book.append("start", {"seed": 0})
    book.append("exact", {"x": 10, "value": 0.625})
    book.append("end", {"passed": True})
    return book


@pytest.fixture
def active(run_ledger):
    ledger.activate(run_ledger)
    yield run_ledger
    ledger.activate(None)


class TestRunLedger:
    """Test suite for chain construction and verification."""

    def test_chain_links_entries(self, run_ledger):
        """Test that each entry points at the hash of the previous one."""
        first, second, _ = run_ledger.entries
        assert first["previous_hash"] == GENESIS_HASH
        assert second["previous_hash"] == first["entry_hash"]
        assert [e["sequence"] for e in run_ledger.entries] == [0, 1, 2]

    def test_untouched_chain_verifies(self, run_ledger):
        """Test that a fresh ledger verifies."""
        result = run_ledger.verify_integrity_chain()
        assert result == {"status": "verified", "entries": 3, "integrity_issues": []}

    def test_tampered_data_is_detected(self, run_ledger):
        """Test that editing recorded data breaks the entry hash."""
        run_ledger.entries[1]["data"]["value"] = 0.7
        result = run_ledger.verify_integrity_chain()
        assert result["status"] == "compromised"
        assert {"sequence": 1, "issue": "hash_mismatch"} in result["integrity_issues"]

    def test_relinked_entry_is_detected(self, run_ledger):
        """Test that rewriting a previous-hash pointer is reported as a chain break."""
        run_ledger.entries[2]["previous_hash"] = GENESIS_HASH
        issues = run_ledger.verify_integrity_chain()["integrity_issues"]
        assert {"sequence": 2, "issue": "chain_break"} in issues

    def test_flushed_file_verifies(self, run_ledger):
        """Test that the written ledger verifies from disk."""
        run_ledger.flush()
        result = ledger.verify_ledger_file(run_ledger.path)
        assert result["status"] == "verified"
        assert result["entries"] == 3

    def test_flush_is_deterministic(self, tmp_path):
        """Test that identical appends give identical bytes."""
        paths = []
        for name in ("a", "b"):
            book = RunLedger(str(tmp_path / name / "ledger.jsonl"))
            book.append("exact", {"x": 1.5, "values": [1, 2]})
            book.flush()
            paths.append(book.path)
        with open(paths[0], "rb") as f0, open(paths[1], "rb") as f1:
            assert f0.read() == f1.read()

    def test_missing_file(self, tmp_path):
        """Test that verifying a missing ledger reports an error."""
        result = ledger.verify_ledger_file(str(tmp_path / "absent.jsonl"))
        assert result == {"status": "error", "reason": "ledger_not_found"}


class TestCanonicalJson:
    """Test suite for canonical serialization."""

    def test_digest_ignores_key_order(self):
        """Test that key order does not change the digest."""
        assert ledger.digest({"a": 1, "b": 2}) == ledger.digest({"b": 2, "a": 1})

    def test_non_finite_floats(self):
        """Test that inf and nan serialize as strings."""
        assert ledger.canonical_json({"v": math.inf}) == '{"v":"inf"}'
        assert ledger.canonical_json([-math.inf]) == '["-inf"]'

    def test_numpy_values(self):
        """Test that arrays and numpy scalars become plain JSON."""
        text = ledger.canonical_json({"a": np.arange(3), "b": np.float64(0.5), "c": (1, 2)})
        assert text == '{"a":[0,1,2],"b":0.5,"c":[1,2]}'


class TestLogEvent:
    """Test suite for structured events."""

    def test_without_active_ledger(self):
        """Test that events are only logged when no ledger is active."""
        ledger.activate(None)
        assert ledger.log_event("tick", {"k": 1}) is None

    def test_events_are_appended(self, active):
        """Test that events reach the active ledger and return its hash."""
        entry_hash = ledger.log_event("tick", {"k": 1})
        assert entry_hash == active.entries[-1]["entry_hash"]
        assert active.entries[-1]["type"] == "tick"

    def test_non_dict_payloads_are_wrapped(self, active):
        """Test that strings and other values are wrapped in a record."""
        ledger.log_event("note", "hello")
        ledger.log_event("count", 3)
        assert active.entries[-2]["data"] == {"message": "hello"}
        assert active.entries[-1]["data"] == {"data": 3}

    def test_buffered_events_wait_for_replay(self, active):
        """Test that buffered events reach the ledger only when replayed, in order."""
        before = len(active.entries)
        with ledger.buffered_events() as events:
            assert ledger.log_event("first", {"k": 1}) is None
            ledger.log_event("second", {"k": 2})
        assert len(active.entries) == before
        ledger.replay(events)
        assert [e["type"] for e in active.entries[before:]] == ["first", "second"]
        assert active.verify_integrity_chain()["status"] == "verified"

    def test_buffer_is_released_on_exit(self, active):
        """Test that events after the buffered block go straight to the ledger."""
        with ledger.buffered_events():
            ledger.log_event("held", {})
        assert ledger.log_event("direct", {}) == active.entries[-1]["entry_hash"]
