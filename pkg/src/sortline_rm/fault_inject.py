"""Declarative faults and deterministic token arrivals.

Arrival generation is bit-exact and uses integer arithmetic only, so the
same seed yields the same arrivals on any platform. See ``docs/formats.md``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import UsageError
from .plant_sim import COLORS

ADDED_LATENCY = "added_latency"
COLOR_MISREAD = "color_misread"

MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class FaultSpec:
    """A fault on one component.

    ``duration=None`` is permanent. With ``period`` set the fault is
    intermittent: within each period starting at ``onset`` it is active for
    the first ``period * duty_num // duty_den`` microseconds.
    """

    target: str
    kind: str = ADDED_LATENCY
    magnitude: int = 0
    wrong_color: Optional[str] = None
    onset: int = 0
    duration: Optional[int] = None
    period: Optional[int] = None
    duty_num: int = 1
    duty_den: int = 1

    def __post_init__(self):
        if self.kind not in (ADDED_LATENCY, COLOR_MISREAD):
            raise UsageError(f"unknown fault kind {self.kind!r}")
        if self.onset < 0 or self.magnitude < 0:
            raise UsageError("fault onset and magnitude must be >= 0")
        if self.duration is not None and self.duration < 0:
            raise UsageError("fault duration must be >= 0")
        if self.kind == COLOR_MISREAD and self.wrong_color not in COLORS:
            raise UsageError(f"misread colour must be one of {COLORS}")
        if self.period is not None:
            if self.period <= 0:
                raise UsageError("intermittent period must be > 0")
            if not (0 < self.duty_num <= self.duty_den):
                raise UsageError("duty cycle must lie in (0, 1]")

    @property
    def on_time(self) -> int:
        return self.period * self.duty_num // self.duty_den

    def active_at(self, t: int) -> bool:
        if t < self.onset:
            return False
        if self.duration is not None and t >= self.onset + self.duration:
            return False
        if self.period is None:
            return True
        return (t - self.onset) % self.period < self.on_time

    def transitions(self, horizon: int) -> list:
        """Times in ``[onset, horizon]`` at which the activity state may change."""
        end = horizon if self.duration is None else min(horizon, self.onset + self.duration)
        times = []
        if self.period is None:
            times.append(self.onset)
        else:
            t = self.onset
            while t <= end:
                times.append(t)
                off = t + self.on_time
                if off <= end:
                    times.append(off)
                t += self.period
        if self.duration is not None and self.onset + self.duration <= horizon:
            times.append(self.onset + self.duration)
        return sorted(set(x for x in times if x <= horizon))


def fault_state(faults, target: str, now: int):
    """Combined ``(fault_delay, misread_colour)`` of a component at ``now``.

    Concurrent latency faults add; the last active misread in list order wins.
    """
    delay, misread = 0, None
    for f in faults:
        if f.target == target and f.active_at(now):
            if f.kind == ADDED_LATENCY:
                delay += f.magnitude
            else:
                misread = f.wrong_color
    return delay, misread


def apply_faults(faults, plant, now: int, active=None) -> list:
    """Bring component fault state in line with ``faults`` at ``now``.

    ``active`` is the set of fault indices previously active; it is updated
    in place. Returns the fault_on/fault_off trace records emitted.
    """
    active = set() if active is None else active
    records = []
    for i, f in enumerate(faults):
        on = f.active_at(now)
        if on and i not in active:
            active.add(i)
            records.append(plant.trace.emit(now, "fault_on", fault=i, target=f.target,
                                            fault_kind=f.kind, magnitude=f.magnitude))
        elif not on and i in active:
            active.discard(i)
            records.append(plant.trace.emit(now, "fault_off", fault=i, target=f.target,
                                            fault_kind=f.kind, magnitude=f.magnitude))
    for name, comp in plant.components.items():
        comp.fault_delay, comp.misread = fault_state(faults, name, now)
    return records


# -- arrivals -------------------------------------------------------------

class SplitMix64:
    """Steele/Lea/Flood SplitMix64 stream."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


FRAC_BITS = 32
ONE = 1 << FRAC_BITS
# round(ln 2 * 2**32)
LN2_Q32 = 2977044472


def log2_q32(k: int) -> int:
    """log2(k) for integer k >= 1 in unsigned Q32 fixed point (floor per step)."""
    if k < 1:
        raise UsageError("log2 of non-positive value")
    n = k.bit_length() - 1
    m = (k << FRAC_BITS) >> n  # mantissa in [1, 2) as Q32
    frac = 0
    for bit in range(FRAC_BITS - 1, -1, -1):
        m = (m * m) >> FRAC_BITS
        if m >= 2 * ONE:
            m >>= 1
            frac |= 1 << bit
    return (n << FRAC_BITS) | frac


def exp_interarrival(u32: int, mean: int) -> int:
    """Inverse-CDF exponential sample for the 32-bit uniform ``u32``; at least 1 µs."""
    k = u32 + 1  # v = k / 2**32 in (0, 1]
    neg_log2 = (32 << FRAC_BITS) - log2_q32(k)
    neg_ln = (neg_log2 * LN2_Q32) >> FRAC_BITS
    return max(1, (mean * neg_ln) >> FRAC_BITS)


def generate_arrivals(seed: int, mean_interarrival: int, duration: int) -> list:
    """Arrivals ``(time, colour)`` with ``time < duration``, strictly increasing.

    Each arrival draws two words: the gap from the high 32 bits of the
    first, the colour index ``(hi32 * 3) >> 32`` from the second.
    """
    if mean_interarrival <= 0:
        raise UsageError("mean inter-arrival must be > 0")
    rng = SplitMix64(seed)
    out, t = [], 0
    while True:
        t += exp_interarrival(rng.next() >> 32, mean_interarrival)
        color = COLORS[((rng.next() >> 32) * 3) >> 32]
        if t >= duration:
            return out
        out.append((t, color))
