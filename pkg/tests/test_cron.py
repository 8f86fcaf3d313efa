"""Cron parser tests, including equality against a brute-force reference.

The reference matcher below is written directly from the documented field
semantics and shares no code with the engine's parser: it re-derives the
value sets with simple loops and checks a civil minute against them.
"""

from __future__ import annotations

import random
from datetime import datetime, timedelta

import pytest

from carekernel.cron import CronExpression, CronSyntaxError, validate_cron


# -- independent reference ----------------------------------------------------

def _ref_values(field: str, lo: int, hi: int, names=None) -> set[int]:
    names = names or {}
    out = set()
    for part in field.lower().split(","):
        step = 1
        if "/" in part:
            part, s = part.split("/")
            step = int(s)
        if part == "*":
            lo2, hi2 = lo, hi
        elif "-" in part and not part.lstrip("-").isdigit():
            a, b = part.split("-")
            lo2 = names.get(a, None) if a in names else int(a)
            hi2 = names.get(b, None) if b in names else int(b)
        else:
            v = names[part] if part in names else int(part)
            lo2 = hi2 = v
        n = lo2
        while n <= hi2:
            out.add(n)
            n += step
    return out


MONTHS = {"jan": 1, "feb": 2, "mar": 3, "apr": 4, "may": 5, "jun": 6,
          "jul": 7, "aug": 8, "sep": 9, "oct": 10, "nov": 11, "dec": 12}
DAYS = {"sun": 0, "mon": 1, "tue": 2, "wed": 3, "thu": 4, "fri": 5, "sat": 6}


def ref_matches(expr: str, dt: datetime) -> bool:
    f = expr.split()
    minutes = _ref_values(f[0], 0, 59)
    hours = _ref_values(f[1], 0, 23)
    dom = _ref_values(f[2], 1, 31)
    months = _ref_values(f[3], 1, 12, MONTHS)
    dow = _ref_values(f[4], 0, 7, DAYS)
    if 7 in dow:
        dow.discard(7)
        dow.add(0)
    if dt.minute not in minutes or dt.hour not in hours or dt.month not in months:
        return False
    # cron Sunday=0; Python Monday=0
    cron_dow = (dt.weekday() + 1) % 7
    dom_restricted = not f[2].startswith("*")
    dow_restricted = not f[4].startswith("*")
    dom_ok = dt.day in dom
    dow_ok = cron_dow in dow
    if dom_restricted and dow_restricted:
        return dom_ok or dow_ok
    if dom_restricted:
        return dom_ok
    if dow_restricted:
        return dow_ok
    return True


# -- syntax ------------------------------------------------------------------

def test_parses_common_forms():
    for text in ["* * * * *", "0 9 * * *", "*/15 * * * *", "0 0 1 1 *",
                 "30 8 * * mon-fri", "0 12 1,15 * *", "5-10/2 * * * *",
                 "0 21 * * 0", "0 21 * * 7"]:
        assert validate_cron(text) is None, text


@pytest.mark.parametrize("bad", [
    "* * * *",            # four fields
    "60 * * * *",         # minute out of range
    "* 24 * * *",         # hour out of range
    "* * 0 * *",          # day-of-month zero
    "* * * 13 *",         # month out of range
    "* * * * 8",          # day-of-week out of range
    "*/0 * * * *",        # zero step
    "a * * * *",          # garbage
    "10-5 * * * *",       # descending range
])
def test_rejects_bad_expressions(bad):
    assert validate_cron(bad) is not None, bad


def test_sunday_aliases():
    zero = CronExpression("0 0 * * 0")
    seven = CronExpression("0 0 * * 7")
    sunday = datetime(2026, 1, 4)  # a Sunday
    assert zero.matches(sunday) and seven.matches(sunday)


def test_dom_dow_or_rule():
    # Both restricted: fires on the 15th OR on Mondays.
    expr = CronExpression("0 0 15 * 1")
    assert expr.matches(datetime(2026, 1, 15))      # Thursday the 15th
    assert expr.matches(datetime(2026, 1, 5))       # a Monday, not the 15th
    assert not expr.matches(datetime(2026, 1, 6))   # Tuesday the 6th


def test_step_with_star_is_unrestricted_day():
    # */2 in dom keeps the vixie star flag: dow alone decides.
    expr = CronExpression("0 0 */2 * 1")
    assert expr.matches(datetime(2026, 1, 5))   # Monday the 5th (odd day)


# -- oracle equality -----------------------------------------------------------

def _random_field(rng, lo, hi, allow_star=True):
    roll = rng.random()
    if allow_star and roll < 0.35:
        return "*" if rng.random() < 0.7 else f"*/{rng.randint(2, 10)}"
    if roll < 0.6:
        return str(rng.randint(lo, hi))
    if roll < 0.8:
        a = rng.randint(lo, hi - 1)
        b = rng.randint(a + 1, hi)
        field = f"{a}-{b}"
        if rng.random() < 0.3:
            field += f"/{rng.randint(1, 5)}"
        return field
    return ",".join(str(rng.randint(lo, hi)) for _ in range(rng.randint(2, 4)))


def random_cron(rng) -> str:
    return " ".join([
        _random_field(rng, 0, 59),
        _random_field(rng, 0, 23),
        _random_field(rng, 1, 31),
        _random_field(rng, 1, 12),
        _random_field(rng, 0, 6),
    ])


def test_matches_equals_reference_over_random_windows():
    rng = random.Random(42)
    for _ in range(60):
        text = random_cron(rng)
        expr = CronExpression(text)
        start = datetime(2026, 1, 1) + timedelta(minutes=rng.randint(0, 2 * 365 * 1440))
        for k in range(0, 36 * 60, 7):  # sample a 36h window at 7min strides
            dt = start + timedelta(minutes=k)
            assert expr.matches(dt) == ref_matches(text, dt), (text, dt)


def test_every_15_minutes_count_over_one_day():
    expr = CronExpression("*/15 * * * *")
    day = datetime(2026, 3, 3)
    fires = sum(
        expr.matches(day + timedelta(minutes=m)) for m in range(24 * 60)
    )
    assert fires == 96
