"""Virtual-time discrete-event core.

All simulator activity is ordered by a single queue of (fire_at, seq)
keys. Time is integer nanoseconds, seq is a global insertion counter, so
the pop order is a deterministic total order: no floats, no wall clock,
no dependence on hash seeds.
"""

import heapq

from .errors import SchedulingInPast


class SimulationComplete(Exception):
    """Raised by advance() on an empty queue; normal termination."""


class EventQueue:
    """Passive min-queue over (fire_at, seq). Callers pull via advance().

    The engine never runs handlers itself; a single driver loop owns all
    dispatch so determinism stays auditable in one place.
    """

    __slots__ = ("_heap", "_seq", "_now", "_pending")

    def __init__(self):
        self._heap = []
        self._seq = 0
        self._now = 0
        self._pending = set()

    def now(self):
        return self._now

    def __len__(self):
        return len(self._pending)

    def schedule(self, payload, fire_at):
        """Queue `payload` to fire at `fire_at`; returns an event id.

        Scheduling before now() is a logic bug in the caller and aborts
        the run.
        """
        if fire_at < self._now:
            raise SchedulingInPast(
                f"schedule at t={fire_at} but now={self._now}"
            )
        seq = self._seq
        self._seq = seq + 1
        heapq.heappush(self._heap, (fire_at, seq, payload))
        self._pending.add(seq)
        return seq

    def cancel(self, event_id):
        """Remove a pending event. True if it was pending, else False."""
        if event_id in self._pending:
            self._pending.discard(event_id)
            return True
        return False

    def next_fire_at(self):
        """Fire time of the next live event, or None if the queue is empty.

        Lets a driver drain every event at one instant before making
        dispatch decisions there.
        """
        heap = self._heap
        pending = self._pending
        while heap and heap[0][1] not in pending:
            heapq.heappop(heap)  # shed cancelled heads
        return heap[0][0] if heap else None

    def advance(self):
        """Pop the minimum-(fire_at, seq) event and advance the clock.

        Returns (fire_at, event_id, payload). Raises SimulationComplete
        when nothing is pending.
        """
        heap = self._heap
        pending = self._pending
        while heap:
            fire_at, seq, payload = heapq.heappop(heap)
            if seq not in pending:
                continue  # cancelled; entry stays lazily in the heap
            pending.discard(seq)
            self._now = fire_at
            return fire_at, seq, payload
        raise SimulationComplete
