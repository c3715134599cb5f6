"""Operation counters shared by the crypto layers.

Counting is off unless a :func:`counting` block is active.  Each recorded
operation is attributed to the party and protocol phase that are current in
the calling context, so one run can be audited row by row afterwards.
"""

from __future__ import annotations

import contextlib
from collections import Counter
from contextvars import ContextVar
from dataclasses import dataclass, field

OPS = (
    "encryptions",
    "decryptions",
    "hom_adds",
    "plain_adds",
    "scalar_muls",
    "prf_calls",
    "ot_base_calls",
)

_current: ContextVar["OpCounters | None"] = ContextVar("forestveil_counters", default=None)
_party: ContextVar[str] = ContextVar("forestveil_party", default="-")
_phase: ContextVar[str] = ContextVar("forestveil_phase", default="-")


@dataclass
class OpCounters:
    """Per-party, per-phase tallies of cryptographic operations and bytes."""

    ops: Counter = field(default_factory=Counter)
    bytes_sent: Counter = field(default_factory=Counter)

    def get(self, party: str, op: str, phase: str | None = None) -> int:
        if op not in OPS:
            raise KeyError(op)
        return sum(
            v for (p, ph, o), v in self.ops.items()
            if p == party and o == op and (phase is None or ph == phase)
        )

    def total(self, op: str) -> int:
        return sum(v for (_, _, o), v in self.ops.items() if o == op)

    def add_bytes(self, direction: str, n: int) -> None:
        self.bytes_sent[direction] += n

    def reset(self) -> None:
        self.ops.clear()
        self.bytes_sent.clear()

    def as_rows(self):
        for (party, phase, op), v in sorted(self.ops.items()):
            yield party, phase, op, v


def record(op: str, k: int = 1) -> None:
    c = _current.get()
    if c is not None:
        c.ops[(_party.get(), _phase.get(), op)] += k


def current() -> "OpCounters | None":
    return _current.get()


@contextlib.contextmanager
def counting(counters: OpCounters | None = None):
    counters = counters if counters is not None else OpCounters()
    token = _current.set(counters)
    try:
        yield counters
    finally:
        _current.reset(token)


@contextlib.contextmanager
def acting(party: str, phase: str | None = None):
    """Attribute operations in this block to ``party`` (and ``phase``)."""
    t1 = _party.set(party)
    t2 = _phase.set(phase) if phase is not None else None
    try:
        yield
    finally:
        if t2 is not None:
            _phase.reset(t2)
        _party.reset(t1)


@contextlib.contextmanager
def phase(name: str):
    token = _phase.set(name)
    try:
        yield
    finally:
        _phase.reset(token)
