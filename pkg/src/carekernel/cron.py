"""Five-field cron expressions: minute hour day-of-month month day-of-week.

Standard semantics, no seconds field. Supports wildcards, lists, ranges,
steps (*/5, 1-10/2), month names (jan-dec) and day names (sun-sat).
Day-of-week runs 0-7 where both 0 and 7 are Sunday. When both day-of-month
and day-of-week are restricted, a date matches if either does (the
widespread convention).
"""

from __future__ import annotations

from datetime import datetime

MONTH_NAMES = {
    "jan": 1, "feb": 2, "mar": 3, "apr": 4, "may": 5, "jun": 6,
    "jul": 7, "aug": 8, "sep": 9, "oct": 10, "nov": 11, "dec": 12,
}
DAY_NAMES = {"sun": 0, "mon": 1, "tue": 2, "wed": 3, "thu": 4, "fri": 5, "sat": 6}


class CronSyntaxError(ValueError):
    pass


def _parse_field(field: str, lo: int, hi: int, names: dict[str, int] | None = None,
                 wrap_seven: bool = False) -> frozenset[int]:
    values: set[int] = set()
    for part in field.split(","):
        part = part.strip().lower()
        if not part:
            raise CronSyntaxError(f"empty list item in {field!r}")
        step = 1
        if "/" in part:
            part, step_text = part.split("/", 1)
            try:
                step = int(step_text)
            except ValueError:
                raise CronSyntaxError(f"bad step {step_text!r}")
            if step < 1:
                raise CronSyntaxError(f"step must be >= 1, got {step}")

        def resolve(token: str) -> int:
            if names and token in names:
                return names[token]
            try:
                n = int(token)
            except ValueError:
                raise CronSyntaxError(f"bad value {token!r}")
            if n < lo or n > hi:
                raise CronSyntaxError(f"value {n} out of range {lo}-{hi}")
            return n

        if part == "*":
            values.update(range(lo, hi + 1, step))
        elif "-" in part:
            a_text, b_text = part.split("-", 1)
            a, b = resolve(a_text), resolve(b_text)
            if a > b:
                raise CronSyntaxError(f"descending range {part!r}")
            values.update(range(a, b + 1, step))
        else:
            if step != 1:
                raise CronSyntaxError(f"step on a single value: {part!r}/{step}")
            values.add(resolve(part))
    if not values:
        raise CronSyntaxError(f"field {field!r} matches nothing")
    if wrap_seven and 7 in values:
        values.discard(7)
        values.add(0)
    return frozenset(values)


class CronExpression:
    """Parsed expression with per-minute matching."""

    def __init__(self, text: str):
        fields = text.split()
        if len(fields) != 5:
            raise CronSyntaxError(
                f"expected 5 fields (minute hour dom month dow), got {len(fields)}"
            )
        self.text = text
        self.minutes = _parse_field(fields[0], 0, 59)
        self.hours = _parse_field(fields[1], 0, 23)
        self.days_of_month = _parse_field(fields[2], 1, 31)
        self.months = _parse_field(fields[3], 1, 12, MONTH_NAMES)
        self.days_of_week = _parse_field(fields[4], 0, 7, DAY_NAMES, wrap_seven=True)
        # A field counts as restricted unless it is "*" or "*/n" (the vixie
        # star-flag convention; decides whether the dom/dow OR rule applies).
        self.dom_restricted = fields[2].split("/")[0] != "*"
        self.dow_restricted = fields[4].split("/")[0] != "*"

    def matches(self, local: datetime) -> bool:
        """Does this civil minute match? Seconds are ignored."""
        if local.minute not in self.minutes:
            return False
        if local.hour not in self.hours:
            return False
        if local.month not in self.months:
            return False
        # Python weekday(): Monday=0; cron: Sunday=0.
        dow = (local.weekday() + 1) % 7
        dom_ok = local.day in self.days_of_month
        dow_ok = dow in self.days_of_week
        if self.dom_restricted and self.dow_restricted:
            return dom_ok or dow_ok
        if self.dom_restricted:
            return dom_ok
        if self.dow_restricted:
            return dow_ok
        return True

    def __repr__(self) -> str:
        return f"CronExpression({self.text!r})"


def validate_cron(text: str) -> str | None:
    """None when valid, else the syntax problem."""
    try:
        CronExpression(text)
        return None
    except CronSyntaxError as exc:
        return str(exc)
