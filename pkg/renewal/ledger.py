"""
Run ledger - hash-chained record of every computation a run performs.

Each entry is a JSON line holding the event type, its data, a sequence number
and the SHA-256 hash of the previous entry. The hashed payload carries no
wall-clock fields, so two runs with the same configuration and seed produce
byte-identical ledgers and digests.
"""

import hashlib
import json
import os
import sys
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np
from loguru import logger

GENESIS_HASH = hashlib.sha256("GENESIS_BLOCK".encode()).hexdigest()

_log = logger.bind(component="ledger")


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return repr(value)
    return value


def canonical_json(data: Any) -> str:
    """Deterministic serialization: sorted keys, no whitespace, repr floats."""
    return json.dumps(_to_jsonable(data), sort_keys=True, separators=(",", ":"))


def digest(data: Any) -> str:
    """SHA-256 of the canonical JSON form of ``data``."""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


class RunLedger:
    """Append-only hash-chained ledger for one CLI run."""

    def __init__(self, path: str):
        self.path = path
        self.lock = threading.Lock()
        self.sequence = 0
        self.last_hash = GENESIS_HASH
        self.entries: List[Dict[str, Any]] = []

        Path(self.path).parent.mkdir(parents=True, exist_ok=True)

    def append(self, event_type: str, data: Dict[str, Any]) -> str:
        """Append an entry and return its hash."""
        with self.lock:
            entry = {
                "type": event_type,
                "data": _to_jsonable(data),
                "sequence": self.sequence,
                "previous_hash": self.last_hash,
            }
            entry["entry_hash"] = digest(entry)
            self.entries.append(entry)
            self.sequence += 1
            self.last_hash = entry["entry_hash"]
            return entry["entry_hash"]

    def flush(self) -> None:
        """Write all entries atomically (temp file + rename)."""
        tmp = f"{self.path}.tmp"
        with self.lock:
            with open(tmp, "w", encoding="utf-8") as f:
                for entry in self.entries:
                    f.write(canonical_json(entry) + "\n")
            os.replace(tmp, self.path)

    def verify_integrity_chain(self) -> Dict[str, Any]:
        """Verify entry hashes and chain linkage of the in-memory entries."""
        issues = []
        previous = GENESIS_HASH
        for i, entry in enumerate(self.entries):
            body = dict(entry)
            expected = body.pop("entry_hash", "")
            if digest(body) != expected:
                issues.append({"sequence": i, "issue": "hash_mismatch"})
            if entry.get("previous_hash") != previous:
                issues.append({"sequence": i, "issue": "chain_break"})
            previous = expected
        return {
            "status": "verified" if not issues else "compromised",
            "entries": len(self.entries),
            "integrity_issues": issues,
        }


def verify_ledger_file(path: str) -> Dict[str, Any]:
    """Re-check a ledger written by ``RunLedger.flush``."""
    if not os.path.exists(path):
        return {"status": "error", "reason": "ledger_not_found"}
    ledger = RunLedger(path)
    with open(path, "r", encoding="utf-8") as f:
        ledger.entries = [json.loads(line) for line in f if line.strip()]
    return ledger.verify_integrity_chain()


_active_ledger: Optional[RunLedger] = None
_buffers = threading.local()


def activate(ledger: Optional[RunLedger]) -> None:
    """Route ``log_event`` entries into ``ledger`` (None detaches)."""
    global _active_ledger
    _active_ledger = ledger


@contextmanager
def buffered_events() -> Iterator[List[Tuple[str, Dict[str, Any]]]]:
    """Hold back the current thread's events; ``replay`` appends them later."""
    events: List[Tuple[str, Dict[str, Any]]] = []
    previous = getattr(_buffers, "events", None)
    _buffers.events = events
    try:
        yield events
    finally:
        _buffers.events = previous


def replay(events: List[Tuple[str, Dict[str, Any]]]) -> None:
    """Append buffered events to the active ledger in their recorded order."""
    for event_type, data in events:
        if _active_ledger is not None:
            _active_ledger.append(event_type, data)


def log_event(event_type: str, data: Any = None) -> Optional[str]:
    """Log a structured event; append it to the active ledger if any."""
    if isinstance(data, str):
        data = {"message": data}
    elif not isinstance(data, dict):
        data = {"data": data}
    _log.bind(event=event_type).debug("{} {}", event_type, canonical_json(data))
    buffer = getattr(_buffers, "events", None)
    if buffer is not None:
        buffer.append((event_type, data))
        return None
    if _active_ledger is not None:
        return _active_ledger.append(event_type, data)
    return None


def configure_logging(level: str = "INFO") -> None:
    """Install a single stderr sink at ``level``."""
    logger.remove()
    logger.add(
        lambda message: sys.stderr.write(message),
        level=level.upper(),
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | "
        "{extra[component]} | {message}",
        filter=lambda record: record["extra"].setdefault("component", "renewal") is not None,
    )
