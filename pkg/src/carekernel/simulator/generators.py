"""Deterministic signal generators for simulated device data.

Every generator yields (timestamp, value) pairs on a fixed cadence over the
scenario timeline. Seeded kinds (random_walk) derive their RNG from the
scenario seed plus the participant ref and generator index, so a rerun with
the same seed produces identical points.
"""

from __future__ import annotations

import math
import random
from datetime import datetime, timedelta

from ..util import parse_duration, parse_ts


class GeneratorError(ValueError):
    pass


def generate_points(spec: dict, start: datetime, end: datetime,
                    seed_key: str) -> list[tuple[datetime, float]]:
    kind = spec.get("kind")
    try:
        cadence = parse_duration(spec.get("cadence"))
    except ValueError as exc:
        raise GeneratorError(f"bad cadence: {exc}")

    ticks: list[datetime] = []
    t = start
    while t < end:
        ticks.append(t)
        t = t + cadence

    if kind == "constant":
        value = spec["value"]
        return [(t, value) for t in ticks]

    if kind == "sine":
        base = spec["base"]
        amplitude = spec["amplitude"]
        period = parse_duration(spec.get("period", "24h")).total_seconds()
        return [
            (t, base + amplitude * math.sin(2 * math.pi * ((t - start).total_seconds() / period)))
            for t in ticks
        ]

    if kind == "random_walk":
        rng = random.Random(seed_key)
        value = spec.get("start", 0.0)
        step_sd = spec.get("step_sd", 1.0)
        out = []
        for t in ticks:
            out.append((t, value))
            value += rng.gauss(0.0, step_sd)
        return out

    if kind == "step":
        at = parse_ts(spec["at"])
        before = spec["before"]
        after = spec["after"]
        return [(t, before if t < at else after) for t in ticks]

    raise GeneratorError(f"unknown generator kind {kind!r}")
