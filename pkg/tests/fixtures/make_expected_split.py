#!/usr/bin/env python3
"""Standalone slicing script that computes the expected preprocessing output
for ten_users.tsv: 5-core filtering by simultaneous removal to a fixpoint,
then a per-user sort-and-slice split (last event test, second-to-last valid).

Deliberately shares no code with the package. Run it to regenerate
expected_split.json after editing the fixture:

    python3 tests/fixtures/make_expected_split.py
"""

import json
from collections import Counter
from pathlib import Path

HERE = Path(__file__).parent
MIN_INTERACTIONS = 5


def main() -> None:
    events = []
    for line in (HERE / "ten_users.tsv").read_text().splitlines():
        user, item, _title, ts = line.split("\t")
        events.append((user, item, int(ts)))

    # k-core by simultaneous removal until nothing changes
    while True:
        users = Counter(e[0] for e in events)
        items = Counter(e[1] for e in events)
        kept = [e for e in events if users[e[0]] >= MIN_INTERACTIONS and items[e[1]] >= MIN_INTERACTIONS]
        if len(kept) == len(events):
            break
        events = kept

    # per-user stable sort by timestamp, slice off the last two
    per_user = {}
    for user, item, ts in events:
        per_user.setdefault(user, []).append((ts, item))
    split = {}
    for user, rows in sorted(per_user.items()):
        items_sorted = [item for _, item in sorted(rows, key=lambda r: r[0])]
        if len(items_sorted) >= 3:
            split[user] = {"train": items_sorted[:-2], "valid": items_sorted[-2], "test": items_sorted[-1]}
        else:
            split[user] = {"train": items_sorted, "valid": None, "test": None}

    surviving_items = sorted({e[1] for e in events})
    out = {
        "min_interactions": MIN_INTERACTIONS,
        "events": len(events),
        "users": sorted(per_user),
        "items": surviving_items,
        "split": split,
    }
    (HERE / "expected_split.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(f"{len(events)} events, {len(per_user)} users, {len(surviving_items)} items")


if __name__ == "__main__":
    main()
