"""Clock and timestamp helpers.

All internal clocks are integer milliseconds since the Unix epoch (UTC).
Ledger records downsample to whole seconds; wire events keep milliseconds.
"""
from __future__ import annotations

import time
from datetime import datetime, timezone

LEDGER_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
WIRE_FORMAT = "%Y-%m-%dT%H:%M:%S.%fZ"


def now_ms() -> int:
    """Current wall-clock time in epoch milliseconds."""
    return time.time_ns() // 1_000_000


def iso_seconds(ms: int) -> str:
    """Epoch milliseconds -> second-resolution UTC timestamp string."""
    return datetime.fromtimestamp(ms // 1000, tz=timezone.utc).strftime(LEDGER_FORMAT)


def iso_millis(ms: int) -> str:
    """Epoch milliseconds -> millisecond-resolution UTC timestamp string."""
    dt = datetime.fromtimestamp(ms / 1000.0, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S.") + f"{dt.microsecond // 1000:03d}Z"


def parse_iso_ms(text: str) -> int:
    """Parse an ISO-8601 UTC timestamp (with or without fraction) to epoch ms.

    Raises ValueError when the text is not a recognized timestamp.
    """
    cleaned = text.strip()
    if cleaned.endswith("Z"):
        cleaned = cleaned[:-1] + "+00:00"
    dt = datetime.fromisoformat(cleaned)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)


def parse_since(value: str) -> int:
    """Parse a user-supplied "since" filter to epoch milliseconds.

    Accepts ISO-8601 timestamps or a bare epoch-seconds number.
    """
    try:
        return parse_iso_ms(value)
    except ValueError:
        pass
    try:
        return int(float(value) * 1000)
    except ValueError:
        raise ValueError(f"not a timestamp: {value!r}") from None
