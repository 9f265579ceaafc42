"""Discrete-event model of the colour sorting line.

Tokens are placed at the loader, detected at LS1, carried by the belt
(position measured in pulses since entry), classified at the colour sensor
and pushed into a bin by one of three ejectors. The processing chain per
token is CP -> BS -> EC; the pulse counter (PC) turns every belt pulse into
a job whose completion tells EC the new count. Each component is a FIFO
single server, so queueing delay counts toward its response time.

This module contains no fault handling: job completions and speed changes
are published to listeners, and commands (mode, speed, halt) come in
through plain methods.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .engine import RANK_PULSE, EventQueue, Trace
from .errors import ConfigurationError

COLORS = ("white", "red", "blue")
BIN_OF_COLOR = {"white": 1, "red": 2, "blue": 3}

ON_BELT = "on_belt"
EJECTED = "ejected"
MISSED = "missed"

PIPELINE = ("CP", "BS", "EC")
COMPONENTS = ("PC",) + PIPELINE


@dataclass(frozen=True)
class SpeedLevel:
    index: int
    period_multiplier_num: int
    period_multiplier_den: int

    def period(self, base_period: int) -> int:
        return base_period * self.period_multiplier_num // self.period_multiplier_den


DEFAULT_SPEED_LEVELS = (SpeedLevel(0, 1, 1), SpeedLevel(1, 3, 2), SpeedLevel(2, 2, 1))


def validate_speed_levels(levels):
    if not levels or levels[0].index != 0:
        raise ConfigurationError("speed levels must start at index 0")
    for i, lv in enumerate(levels):
        if lv.index != i or lv.period_multiplier_den <= 0:
            raise ConfigurationError(f"speed level {i} malformed")
        if i and (lv.period_multiplier_num * levels[i - 1].period_multiplier_den
                  <= levels[i - 1].period_multiplier_num * lv.period_multiplier_den):
            raise ConfigurationError("speed multipliers must strictly increase")


@dataclass(frozen=True)
class LineGeometry:
    sensor_pulse: int = 20
    ejector_pulses: tuple = (24, 28, 32)
    eject_window: int = 10_000
    actuation_margin: int = 20_000
    base_period: int = 25_000
    entry_spacing: int = 4

    def __post_init__(self):
        e = self.ejector_pulses
        if len(e) != 3 or not (0 < self.sensor_pulse < e[0] < e[1] < e[2]):
            raise ConfigurationError(
                f"geometry needs 0 < sensor_pulse < E1 < E2 < E3, got S={self.sensor_pulse}, E={e}")
        if self.base_period <= 0 or self.eject_window < 0 or self.actuation_margin < 0:
            raise ConfigurationError("geometry durations must be positive")
        if self.entry_spacing < 1:
            raise ConfigurationError("entry_spacing must be >= 1")

    @property
    def end_pulse(self) -> int:
        """Relative position of LS2, one pulse past the last ejector."""
        return self.ejector_pulses[2] + 1


def end_to_end_budget(geometry: LineGeometry, level: SpeedLevel) -> int:
    """Time available to CP->BS->EC between colour read and the first ejector."""
    travel = geometry.ejector_pulses[0] - geometry.sensor_pulse
    budget = travel * level.period(geometry.base_period) - geometry.actuation_margin
    if budget < 0:
        raise ConfigurationError(f"geometry leaves negative processing budget {budget}")
    return budget


@dataclass
class BeltState:
    pulse_period: int
    pulse_count: int = 0
    running: bool = True
    level: int = 0


@dataclass
class Token:
    id: int
    color: str
    entry_pulse: int = -1
    entry_time: int = -1
    state: str = ON_BELT
    perceived: Optional[str] = None
    misread: bool = False
    bin: Optional[int] = None
    decided: bool = False
    fired: bool = False
    exit_time: Optional[int] = None

    def position(self, pulse_count: int) -> int:
        return pulse_count - self.entry_pulse


@dataclass
class ComponentProc:
    name: str
    modes: dict
    active_mode: str
    fault_delay: int = 0
    misread: Optional[str] = None
    busy: bool = field(default=False, repr=False)
    backlog: deque = field(default_factory=deque, repr=False)

    def __post_init__(self):
        if self.active_mode not in self.modes:
            raise ConfigurationError(f"{self.name}: unknown mode {self.active_mode!r}")
        if any(v < 0 for v in self.modes.values()):
            raise ConfigurationError(f"{self.name}: negative mode latency")

    @property
    def nominal(self) -> int:
        return self.modes[self.active_mode]

    @property
    def effective_latency(self) -> int:
        return self.modes[self.active_mode] + self.fault_delay


def default_components() -> dict:
    return {
        "PC": ComponentProc("PC", {"accurate": 8_000, "fast": 3_000}, "accurate"),
        "CP": ComponentProc("CP", {"normal": 25_000}, "normal"),
        "BS": ComponentProc("BS", {"normal": 10_000}, "normal"),
        "EC": ComponentProc("EC", {"normal": 10_000}, "normal"),
    }


class Plant:
    """The sorting line. Drive it with :meth:`start` and :meth:`advance`."""

    def __init__(self, geometry: LineGeometry, components: dict, queue: EventQueue,
                 trace: Trace, speed_levels=DEFAULT_SPEED_LEVELS):
        validate_speed_levels(speed_levels)
        self.geometry = geometry
        self.components = components
        self.queue = queue
        self.trace = trace
        self.speed_levels = tuple(speed_levels)
        self.belt = BeltState(pulse_period=geometry.base_period)
        self.tokens: dict = {}
        self.loader: deque = deque()
        self.tick_times = {0: 0}
        self.last_entry_pulse: Optional[int] = None
        self.latest_reported = 0
        self.not_admitted = 0
        self.job_listeners = []
        self.speed_listeners = []

    # -- plumbing -------------------------------------------------------

    @property
    def now(self) -> int:
        return self.queue.now

    def _emit(self, kind, **payload):
        return self.trace.emit(self.now, kind, **payload)

    def start(self):
        self.queue.schedule(self.belt.pulse_period, self._tick, rank=RANK_PULSE)

    def advance(self, until: int) -> list:
        """Process events up to and including ``until``; returns new trace records."""
        if until < self.now:
            raise ValueError(f"advance target {until} is before now={self.now}")
        mark = len(self.trace.records)
        self.queue.run_until(until)
        return self.trace.records[mark:]

    def schedule_arrival(self, time: int, token_id: int, color: str):
        self.queue.schedule(time, self._arrive, token_id, color)

    # -- belt -----------------------------------------------------------

    def _tick(self):
        if not self.belt.running:
            return
        belt = self.belt
        belt.pulse_count += 1
        count = belt.pulse_count
        self.tick_times[count] = self.now
        self._emit("pulse", count=count, period=belt.pulse_period)
        self.queue.schedule(self.now + belt.pulse_period, self._tick, rank=RANK_PULSE)
        self._submit("PC", count, self.now)

        g = self.geometry
        for token in list(self.tokens.values()):
            if token.state != ON_BELT:
                continue
            pos = token.position(count)
            if pos == g.sensor_pulse:
                self._color_read(token)
            elif pos == g.end_pulse:
                self._finish(token, MISSED, reason="passed_end")
        self._admit_from_loader()

    def set_speed(self, level: int):
        if level == self.belt.level:
            return self._emit("speed_change", level=level, previous=level,
                              period=self.belt.pulse_period, noop=True)
        previous = self.belt.level
        lv = self.speed_levels[level]
        self.belt.level = level
        self.belt.pulse_period = lv.period(self.geometry.base_period)
        rec = self._emit("speed_change", level=level, previous=previous,
                         period=self.belt.pulse_period, noop=False)
        for listener in self.speed_listeners:
            listener(level)
        return rec

    def halt(self):
        if not self.belt.running:
            return
        self.belt.running = False
        self._emit("belt_stop", pulse=self.belt.pulse_count)
        while self.loader:
            tid, color = self.loader.popleft()
            self.not_admitted += 1
            self._emit("not_admitted", token=tid, color=color, reason="stopped")

    # -- tokens ---------------------------------------------------------

    def _arrive(self, token_id, color):
        self._emit("arrival", token=token_id, color=color)
        if not self.belt.running:
            self.not_admitted += 1
            self._emit("not_admitted", token=token_id, color=color, reason="stopped")
            return
        self.loader.append((token_id, color))
        self._admit_from_loader()

    def _admit_from_loader(self):
        if not self.loader or not self.belt.running:
            return
        count = self.belt.pulse_count
        if (self.last_entry_pulse is not None
                and count - self.last_entry_pulse < self.geometry.entry_spacing):
            return
        tid, color = self.loader.popleft()
        token = Token(tid, color, entry_pulse=count, entry_time=self.now)
        self.tokens[tid] = token
        self.last_entry_pulse = count
        self._emit("token_enter", token=tid, color=color, entry_pulse=count)

    def _color_read(self, token: Token):
        self._emit("color_read", token=token.id, color=token.color)
        self._submit("CP", token.id, self.now)

    def _finish(self, token: Token, state: str, **info):
        token.state = state
        token.exit_time = self.now
        payload = dict(token=token.id, state=state, color=token.color, **info)
        if state == EJECTED:
            payload["correct"] = token.bin == BIN_OF_COLOR[token.color]
        self._emit("token_state", **payload)

    # -- component servers ----------------------------------------------

    def _submit(self, name, job, arrival):
        comp = self.components[name]
        if comp.busy:
            comp.backlog.append((job, arrival))
        else:
            self._start_job(comp, job, arrival)

    def _start_job(self, comp: ComponentProc, job, arrival):
        comp.busy = True
        latency = comp.effective_latency
        misread = comp.misread
        self.queue.schedule(self.now + latency, self._end_job, comp, job, arrival,
                            self.now, comp.active_mode, misread)

    def _end_job(self, comp: ComponentProc, job, arrival, start, mode, misread):
        end = self.now
        input_valid = True
        if comp.name in ("BS", "EC"):
            input_valid = not self.tokens[job].misread
        self._emit("job", component=comp.name, job=job, arrival=arrival, start=start,
                   end=end, mode=mode, input_valid=input_valid)
        comp.busy = False
        if comp.backlog:
            self._start_job(comp, *comp.backlog.popleft())

        if comp.name == "PC":
            self._pc_report(job)
        elif comp.name == "CP":
            token = self.tokens[job]
            token.perceived = token.color
            if misread is not None and misread != token.color:
                token.perceived, token.misread = misread, True
            self._submit("BS", job, end)
        elif comp.name == "BS":
            token = self.tokens[job]
            token.bin = BIN_OF_COLOR[token.perceived]
            self._emit("bin_select", token=job, bin=token.bin, perceived=token.perceived)
            self._submit("EC", job, end)
        else:
            self._ec_decision(self.tokens[job])

        for listener in self.job_listeners:
            listener(comp.name, job, arrival, start, end, input_valid)

    # -- ejection -------------------------------------------------------

    def _target_pulse(self, token: Token) -> int:
        return token.entry_pulse + self.geometry.ejector_pulses[token.bin - 1]

    def _pc_report(self, count):
        self.latest_reported = max(self.latest_reported, count)
        for token in list(self.tokens.values()):
            if (token.state == ON_BELT and token.decided and not token.fired
                    and self._target_pulse(token) == count):
                self.attempt_eject(token, token.bin, self.now)

    def _ec_decision(self, token: Token):
        token.decided = True
        if token.state != ON_BELT:
            return
        target = self._target_pulse(token)
        if self.latest_reported == target:
            self.attempt_eject(token, token.bin, self.now)
        elif self.latest_reported > target:
            self._emit("eject_late", token=token.id, bin=token.bin, target=target,
                       reported=self.latest_reported)

    def t_align(self, token: Token, bin_: int) -> Optional[int]:
        return self.tick_times.get(token.entry_pulse + self.geometry.ejector_pulses[bin_ - 1])

    def attempt_eject(self, token: Token, bin_: int, fire_time: int) -> Optional[str]:
        """Fire the ejector of ``bin_`` at ``fire_time``; returns the token's new state.

        Actuators are inhibited while the belt is halted (returns None).
        """
        if not self.belt.running:
            return None
        token.fired = True
        align = self.t_align(token, bin_)
        ok = align is not None and align <= fire_time <= align + self.geometry.eject_window
        self._emit("eject", token=token.id, bin=bin_, fire=fire_time, align=align, ok=ok)
        if ok:
            self._finish(token, EJECTED, bin=bin_)
            return EJECTED
        self._finish(token, MISSED, reason="eject_window")
        return MISSED
