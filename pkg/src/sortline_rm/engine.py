"""Event queue and trace recorder shared by the plant and the resilience layer."""

from __future__ import annotations

import heapq
import itertools
import json

# Same-timestamp ordering classes: environment changes, then belt motion,
# then everything computational (jobs, messages, arrivals).
RANK_FAULT = 0
RANK_PULSE = 1
RANK_DEFAULT = 2


class EventQueue:
    """Priority queue keyed by ``(time, rank, seq)`` with a monotone ``seq``."""

    def __init__(self):
        self._heap = []
        self._seq = itertools.count()
        self.now = 0

    def __len__(self):
        return len(self._heap)

    def schedule(self, time, callback, *args, rank=RANK_DEFAULT):
        if time < self.now:
            raise ValueError(f"cannot schedule at {time} before now={self.now}")
        heapq.heappush(self._heap, (time, rank, next(self._seq), callback, args))

    def peek_time(self):
        return self._heap[0][0] if self._heap else None

    def run_until(self, until):
        """Process every event with ``time <= until``; leave the clock at ``until``."""
        while self._heap and self._heap[0][0] <= until:
            time, _, _, callback, args = heapq.heappop(self._heap)
            self.now = time
            callback(*args)
        self.now = max(self.now, until)


def _dump(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class Trace:
    """Append-only list of timestamped records with a dense sequence number."""

    def __init__(self):
        self.records = []

    def emit(self, t, kind, /, **payload):
        rec = {"t": t, "seq": len(self.records), "kind": kind, "payload": payload}
        self.records.append(rec)
        return rec

    def of_kind(self, *kinds):
        return [r for r in self.records if r["kind"] in kinds]

    @staticmethod
    def format_record(rec) -> str:
        return '{"t":%d,"seq":%d,"kind":%s,"payload":%s}' % (
            rec["t"], rec["seq"], _dump(rec["kind"]), _dump(rec["payload"]))

    def lines(self):
        return [self.format_record(r) for r in self.records]

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    @staticmethod
    def parse(text: str):
        return [json.loads(line) for line in text.splitlines() if line.strip()]
