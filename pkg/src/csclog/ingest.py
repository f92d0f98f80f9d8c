"""Raw log readers, sessionization, and temporal dataset splits.

Supported formats: hdfs, bgl, thunderbird, openstack, and a generic
regex-configured format with named groups. Readers yield RawRecord in
file order; unparseable lines are counted and reported, and more than
10% of them aborts the read.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError

log = logging.getLogger(__name__)

LABEL_NORMAL = "normal"
LABEL_ANOMALY = "anomaly"

MAX_UNPARSEABLE_FRACTION = 0.10

FORMATS = ("hdfs", "bgl", "thunderbird", "openstack", "generic")


@dataclass(frozen=True)
class RawRecord:
    timestamp: int
    component: str
    content: str
    label: str | None = None
    session_key: str | None = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")
        if not self.component:
            raise ValueError("component must be non-empty")
        if not self.content:
            raise ValueError("content must be non-empty")


@dataclass
class Session:
    id: str
    messages: list[RawRecord]
    label: str

    def __post_init__(self):
        if not self.messages:
            raise ValueError(f"session {self.id} has no messages")

    @property
    def start(self) -> int:
        return self.messages[0].timestamp


# ---------------------------------------------------------------------------
# format-specific line parsers

_HDFS_LINE = re.compile(
    r"^(?P<date>\d{6})\s+(?P<time>\d{6})\s+\d+\s+\w+\s+(?P<component>\S+?):?\s+(?P<content>.*\S)\s*$"
)
_HDFS_BLOCK = re.compile(r"blk_-?\d+")

_TB_COMPONENT = re.compile(r"^(?P<name>.+?)(\[\d+\])?:?$")


def _hdfs_epoch(date: str, time_: str) -> int:
    dt = datetime.strptime(f"{date} {time_}", "%y%m%d %H%M%S").replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _parse_hdfs(line: str, block_labels: dict[str, str] | None) -> RawRecord | None:
    m = _HDFS_LINE.match(line)
    if not m:
        return None
    blk = _HDFS_BLOCK.search(line)
    if not blk:
        return None
    key = blk.group()
    label = (block_labels or {}).get(key)
    return RawRecord(
        timestamp=_hdfs_epoch(m.group("date"), m.group("time")),
        component=m.group("component").rstrip(":"),
        content=m.group("content"),
        label=label,
        session_key=key,
    )


def _parse_bgl(line: str) -> RawRecord | None:
    # ALERT_FLAG EPOCH DATE NODE FULLTIME NODE TYPE COMPONENT LEVEL CONTENT...
    parts = line.split(None, 9)
    if len(parts) < 10 or not parts[1].isdigit():
        return None
    label = LABEL_NORMAL if parts[0] == "-" else LABEL_ANOMALY
    return RawRecord(
        timestamp=int(parts[1]),
        component=parts[7],
        content=parts[9],
        label=label,
    )


def _parse_thunderbird(line: str) -> RawRecord | None:
    # ALERT_FLAG EPOCH DATE USER MONTH DAY TIME LOCATION COMPONENT(PID): CONTENT...
    parts = line.split(None, 9)
    if len(parts) < 10 or not parts[1].isdigit():
        return None
    label = LABEL_NORMAL if parts[0] == "-" else LABEL_ANOMALY
    comp_match = _TB_COMPONENT.match(parts[8])
    component = comp_match.group("name") if comp_match else parts[8]
    return RawRecord(
        timestamp=int(parts[1]),
        component=component,
        content=parts[9],
        label=label,
    )


def _parse_openstack(line: str, default_label: str | None) -> RawRecord | None:
    # LOGFILE DATE TIME PID LEVEL COMPONENT CONTENT...
    parts = line.split(None, 6)
    if len(parts) < 7:
        return None
    try:
        dt = datetime.strptime(f"{parts[1]} {parts[2].split('.')[0]}", "%Y-%m-%d %H:%M:%S")
    except ValueError:
        return None
    return RawRecord(
        timestamp=int(dt.replace(tzinfo=timezone.utc).timestamp()),
        component=parts[5],
        content=parts[6],
        label=default_label,
    )


def _parse_generic(line: str, pattern: re.Pattern, default_label: str | None) -> RawRecord | None:
    m = pattern.match(line)
    if not m:
        return None
    groups = m.groupdict()
    return RawRecord(
        timestamp=int(groups["timestamp"]),
        component=groups["component"],
        content=groups["content"],
        label=groups.get("label") or default_label,
        session_key=groups.get("session_key"),
    )


def read_raw_log(
    path,
    format: str,
    *,
    pattern: str | None = None,
    block_labels: dict[str, str] | None = None,
    default_label: str | None = None,
) -> list[RawRecord]:
    """Read one log file into RawRecords, in file order.

    hdfs takes an optional block->label map; openstack and generic take a
    per-file default label. The generic format needs a regex with named
    groups timestamp/component/content (label and session_key optional).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"log file not found: {path}")
    if format not in FORMATS:
        raise DataError(f"unknown log format {format!r}; expected one of {FORMATS}")
    compiled = None
    if format == "generic":
        if not pattern:
            raise DataError("generic format requires a line regex")
        compiled = re.compile(pattern)
        required = {"timestamp", "component", "content"}
        missing = required - set(compiled.groupindex)
        if missing:
            raise DataError(f"generic regex lacks named groups: {sorted(missing)}")

    records: list[RawRecord] = []
    total = 0
    bad = 0
    with open(path, encoding="utf-8", errors="replace") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            total += 1
            try:
                if format == "hdfs":
                    rec = _parse_hdfs(line, block_labels)
                elif format == "bgl":
                    rec = _parse_bgl(line)
                elif format == "thunderbird":
                    rec = _parse_thunderbird(line)
                elif format == "openstack":
                    rec = _parse_openstack(line, default_label)
                else:
                    rec = _parse_generic(line, compiled, default_label)
            except (ValueError, KeyError):
                rec = None
            if rec is None:
                bad += 1
            else:
                records.append(rec)
    if bad:
        log.warning("%s: %d of %d lines unparseable", path.name, bad, total)
    if total and bad / total > MAX_UNPARSEABLE_FRACTION:
        raise DataError(
            f"{path}: {bad}/{total} lines unparseable "
            f"(> {MAX_UNPARSEABLE_FRACTION:.0%}); wrong format selected?"
        )
    return records


def read_block_labels(path) -> dict[str, str]:
    """CSV of BlockId,Label rows (header optional); Label is Anomaly/Normal."""
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.lower().startswith("blockid"):
                continue
            key, _, value = line.partition(",")
            labels[key.strip()] = (
                LABEL_ANOMALY if value.strip().lower() == "anomaly" else LABEL_NORMAL
            )
    return labels


# ---------------------------------------------------------------------------
# sessionization and splits


def _session_label(records: Sequence[RawRecord]) -> str:
    return LABEL_ANOMALY if any(r.label == LABEL_ANOMALY for r in records) else LABEL_NORMAL


def _sorted_by_time(records: Sequence[RawRecord]) -> list[RawRecord]:
    return sorted(records, key=lambda r: r.timestamp)  # stable: ties keep file order


def sessionize(
    records: Iterable[RawRecord],
    strategy: str,
    *,
    window_seconds: int = 10,
) -> list[Session]:
    """Partition records into labeled sessions.

    by_key groups on session_key; time_window buckets the time axis into
    consecutive width-second windows anchored at the first record's
    timestamp. A session is anomalous iff any member record is.
    """
    records = list(records)
    if not records:
        return []
    if strategy == "by_key":
        groups: dict[str, list[RawRecord]] = {}
        for r in records:
            if r.session_key is None:
                raise DataError("by_key sessionization requires session_key on every record")
            groups.setdefault(r.session_key, []).append(r)
        sessions = [
            Session(id=key, messages=_sorted_by_time(grp), label=_session_label(grp))
            for key, grp in groups.items()
        ]
    elif strategy == "time_window":
        if window_seconds <= 0:
            raise DataError(f"time_window width must be > 0, got {window_seconds}")
        origin = min(r.timestamp for r in records)
        buckets: dict[int, list[RawRecord]] = {}
        for r in records:
            buckets.setdefault((r.timestamp - origin) // window_seconds, []).append(r)
        sessions = [
            Session(
                id=f"w{idx:08d}",
                messages=_sorted_by_time(grp),
                label=_session_label(grp),
            )
            for idx, grp in buckets.items()
        ]
    else:
        raise DataError(f"unknown sessionization strategy {strategy!r}")
    order = {id(s): i for i, s in enumerate(sessions)}
    sessions.sort(key=lambda s: (s.start, order[id(s)]))
    return sessions


def split_dataset(sessions: Sequence[Session]) -> tuple[list[Session], list[Session], list[Session]]:
    """Temporal 70/10/20 split; train and validation sizes floor, test takes the rest."""
    n = len(sessions)
    if n < 10:
        raise DataError(f"need at least 10 sessions to split, got {n}")
    starts = [s.start for s in sessions]
    if starts != sorted(starts):
        raise DataError("sessions must be ordered by start timestamp before splitting")
    n_train = int(n * 0.7)
    n_val = int(n * 0.1)
    return (
        list(sessions[:n_train]),
        list(sessions[n_train : n_train + n_val]),
        list(sessions[n_train + n_val :]),
    )


def filter_normal(sessions: Sequence[Session]) -> list[Session]:
    kept = [s for s in sessions if s.label == LABEL_NORMAL]
    if not kept:
        raise DataError("no normal sessions left to train on")
    return kept


# ---------------------------------------------------------------------------
# session JSONL serialization


def session_to_dict(session: Session) -> dict:
    return {
        "id": session.id,
        "label": session.label,
        "messages": [
            {"t": m.timestamp, "component": m.component, "content": m.content}
            for m in session.messages
        ],
    }


def session_from_dict(rec: dict) -> Session:
    return Session(
        id=rec["id"],
        label=rec["label"],
        messages=[
            RawRecord(timestamp=m["t"], component=m["component"], content=m["content"],
                      label=rec["label"] if rec["label"] == LABEL_ANOMALY else LABEL_NORMAL)
            for m in rec["messages"]
        ],
    )


def save_sessions(sessions: Iterable[Session], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            fh.write(json.dumps(session_to_dict(s), sort_keys=True) + "\n")


def load_sessions(path) -> list[Session]:
    sessions = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                sessions.append(session_from_dict(json.loads(line)))
    return sessions
