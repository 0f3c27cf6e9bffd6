"""Interaction data ingestion, density filtering, splitting and padding.

The raw input is a flat event list (user, item, title, timestamp). From it we
build an item catalog with contiguous 1-based indices (0 is reserved for
padding), filter out sparse users/items, hold out each user's last two events
for validation/test, and turn index lists into fixed-length left-padded
sequences.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IntegrityError, ParseError


@dataclass(frozen=True)
class Event:
    user_id: str
    item_id: str
    timestamp: int


@dataclass(frozen=True)
class InteractionLog:
    """Timestamped (user, item) events in stable input order."""

    events: tuple[Event, ...]

    def user_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for e in self.events:
            seen.setdefault(e.user_id, None)
        return list(seen)

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class CatalogItem:
    item_index: int
    item_id: str
    title: str


@dataclass(frozen=True)
class ItemCatalog:
    """Items in first-seen order; item_index is contiguous from 1."""

    items: tuple[CatalogItem, ...]

    def __post_init__(self):
        for pos, it in enumerate(self.items, start=1):
            if it.item_index != pos:
                raise IntegrityError(
                    f"catalog indices must be contiguous from 1, got {it.item_index} at position {pos}"
                )
            if not it.title:
                raise IntegrityError(f"item {it.item_id!r} has an empty title")

    @property
    def index_of(self) -> dict[str, int]:
        return {it.item_id: it.item_index for it in self.items}

    def title_of(self, item_index: int) -> str:
        return self.items[item_index - 1].title

    def titles(self) -> list[str]:
        return [it.title for it in self.items]

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class UserSplit:
    train: tuple[int, ...]
    valid: int | None
    test: int | None

    def all_items(self) -> tuple[int, ...]:
        out = self.train
        if self.valid is not None:
            out = out + (self.valid,)
        if self.test is not None:
            out = out + (self.test,)
        return out


@dataclass(frozen=True)
class SplitDataset:
    """Per-user leave-one-out split over catalog indices."""

    users: dict[str, UserSplit] = field(default_factory=dict)

    def eval_users(self) -> list[str]:
        return [u for u, s in self.users.items() if s.test is not None]


@dataclass(frozen=True)
class PaddedSequence:
    """Fixed-length index sequence, left-padded with 0."""

    indices: np.ndarray
    valid_mask: np.ndarray


def load_interactions(path: str | Path, format: str = "tsv") -> tuple[InteractionLog, ItemCatalog]:
    """Read an event file and build the log plus a first-seen-order catalog.

    TSV rows are user_id<TAB>item_id<TAB>title<TAB>timestamp; JSONL records
    carry the same four keys. Malformed rows raise ParseError with the line
    number; one item id with two different titles raises IntegrityError.
    """
    path = Path(path)
    events: list[Event] = []
    titles: dict[str, str] = {}
    order: list[str] = []

    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if format == "tsv":
                parts = line.split("\t")
                if len(parts) != 4:
                    raise ParseError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
                user_id, item_id, title, ts_raw = parts
            elif format == "jsonl":
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
                missing = {"user_id", "item_id", "title", "timestamp"} - rec.keys()
                if missing:
                    raise ParseError(f"{path}:{lineno}: missing fields {sorted(missing)}")
                user_id, item_id, title = rec["user_id"], rec["item_id"], rec["title"]
                ts_raw = rec["timestamp"]
            else:
                raise ValueError(f"unknown format {format!r}")

            if not str(user_id) or not str(item_id):
                raise ParseError(f"{path}:{lineno}: empty user_id or item_id")
            if not str(title):
                raise ParseError(f"{path}:{lineno}: empty title")
            try:
                timestamp = int(ts_raw)
            except (TypeError, ValueError):
                raise ParseError(f"{path}:{lineno}: timestamp {ts_raw!r} is not an integer") from None

            user_id, item_id, title = str(user_id), str(item_id), str(title)
            if item_id in titles:
                if titles[item_id] != title:
                    raise IntegrityError(
                        f"{path}:{lineno}: item {item_id!r} seen with conflicting titles "
                        f"{titles[item_id]!r} and {title!r}"
                    )
            else:
                titles[item_id] = title
                order.append(item_id)
            events.append(Event(user_id, item_id, timestamp))

    catalog = ItemCatalog(
        tuple(CatalogItem(i, item_id, titles[item_id]) for i, item_id in enumerate(order, start=1))
    )
    return InteractionLog(tuple(events)), catalog


def kcore_filter(log: InteractionLog, min_interactions: int) -> InteractionLog:
    """Drop users and items with fewer than `min_interactions` events.

    Removal alternates between users and items until a fixpoint, so every
    surviving user and item meets the threshold. Event order is preserved.
    """
    if min_interactions < 1:
        raise ValueError("min_interactions must be >= 1")
    events = list(log.events)
    while True:
        before = len(events)
        user_counts = Counter(e.user_id for e in events)
        events = [e for e in events if user_counts[e.user_id] >= min_interactions]
        item_counts = Counter(e.item_id for e in events)
        events = [e for e in events if item_counts[e.item_id] >= min_interactions]
        if len(events) == before:
            return InteractionLog(tuple(events))


def restrict_catalog(catalog: ItemCatalog, log: InteractionLog) -> ItemCatalog:
    """Reindex the catalog to the items present in `log`, keeping catalog order."""
    present = {e.item_id for e in log.events}
    kept = [it for it in catalog.items if it.item_id in present]
    return ItemCatalog(
        tuple(CatalogItem(i, it.item_id, it.title) for i, it in enumerate(kept, start=1))
    )


def leave_one_out_split(log: InteractionLog, catalog: ItemCatalog) -> SplitDataset:
    """Hold out each user's most recent event for test and the second most
    recent for validation; everything earlier is training.

    Users with fewer than 3 events keep all events in train and are excluded
    from validation/test. Timestamp ties keep stable input order.
    """
    index_of = catalog.index_of
    per_user: dict[str, list[tuple[int, int]]] = {}
    for e in log.events:
        per_user.setdefault(e.user_id, []).append((e.timestamp, index_of[e.item_id]))

    users: dict[str, UserSplit] = {}
    for user_id, rows in per_user.items():
        rows = sorted(rows, key=lambda r: r[0])  # stable: ties keep input order
        items = tuple(idx for _, idx in rows)
        if len(items) >= 3:
            users[user_id] = UserSplit(train=items[:-2], valid=items[-2], test=items[-1])
        else:
            users[user_id] = UserSplit(train=items, valid=None, test=None)
    return SplitDataset(users)


def build_fixed_sequence(indices: list[int], n: int) -> PaddedSequence:
    """Keep the last `n` indices, or left-pad with 0 up to length `n`."""
    if not indices:
        raise ValueError("indices must be nonempty")
    if n < 1:
        raise ValueError("n must be positive")
    tail = list(indices[-n:])
    pad = n - len(tail)
    arr = np.zeros(n, dtype=np.int64)
    arr[pad:] = tail
    mask = np.zeros(n, dtype=bool)
    mask[pad:] = True
    return PaddedSequence(indices=arr, valid_mask=mask)


# -- JSONL inspection artifacts ------------------------------------------------


def write_log_jsonl(log: InteractionLog, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for e in log.events:
            fh.write(json.dumps({"user_id": e.user_id, "item_id": e.item_id, "timestamp": e.timestamp}) + "\n")


def write_catalog_jsonl(catalog: ItemCatalog, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for it in catalog.items:
            fh.write(json.dumps({"item_index": it.item_index, "item_id": it.item_id, "title": it.title}) + "\n")


def read_catalog_jsonl(path: str | Path) -> ItemCatalog:
    items = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                items.append(CatalogItem(rec["item_index"], rec["item_id"], rec["title"]))
    return ItemCatalog(tuple(items))


def write_split_jsonl(split: SplitDataset, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for user_id, s in split.users.items():
            fh.write(
                json.dumps(
                    {"user_id": user_id, "train": list(s.train), "valid": s.valid, "test": s.test}
                )
                + "\n"
            )


def read_split_jsonl(path: str | Path) -> SplitDataset:
    users: dict[str, UserSplit] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                users[rec["user_id"]] = UserSplit(
                    train=tuple(rec["train"]), valid=rec["valid"], test=rec["test"]
                )
    return SplitDataset(users)
