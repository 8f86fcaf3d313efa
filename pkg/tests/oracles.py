"""Independent reference implementations used by the acceptance suite.

The rule-generation scheme pairs every generated expression with a plain
Python closure built alongside the text, so the reference interpreter never
touches the engine's parser or evaluator: the engine runs the text, the
oracle runs the closure, and the two must agree on bindings, branch
decisions, and rendered actions.
"""

from __future__ import annotations

import random
from datetime import datetime, timedelta, timezone

from carekernel.util import iso, parse_ts

# ---------------------------------------------------------------------------
# Cron reference (shares nothing with carekernel.cron)
# ---------------------------------------------------------------------------

MONTHS = {"jan": 1, "feb": 2, "mar": 3, "apr": 4, "may": 5, "jun": 6,
          "jul": 7, "aug": 8, "sep": 9, "oct": 10, "nov": 11, "dec": 12}
DAYS = {"sun": 0, "mon": 1, "tue": 2, "wed": 3, "thu": 4, "fri": 5, "sat": 6}


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
            lo2 = names[a] if a in names else int(a)
            hi2 = names[b] if b in names else int(b)
        else:
            v = names[part] if part in names else int(part)
            lo2 = hi2 = v
        n = lo2
        while n <= hi2:
            out.add(n)
            n += step
    return out


def cron_ref_matches(expr: str, local: datetime) -> bool:
    f = expr.split()
    minutes = _ref_values(f[0], 0, 59)
    hours = _ref_values(f[1], 0, 23)
    dom = _ref_values(f[2], 1, 31)
    months = _ref_values(f[3], 1, 12, MONTHS)
    dow = _ref_values(f[4], 0, 7, DAYS)
    if 7 in dow:
        dow.discard(7)
        dow.add(0)
    if (local.minute not in minutes or local.hour not in hours
            or local.month not in months):
        return False
    cron_dow = (local.weekday() + 1) % 7
    dom_ok = local.day in dom
    dow_ok = cron_dow in dow
    dom_restricted = not f[2].startswith("*")
    dow_restricted = not f[4].startswith("*")
    if dom_restricted and dow_restricted:
        return dom_ok or dow_ok
    if dom_restricted:
        return dom_ok
    if dow_restricted:
        return dow_ok
    return True


def random_cron_field(rng, lo, hi):
    roll = rng.random()
    if roll < 0.35:
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
        random_cron_field(rng, 0, 59),
        random_cron_field(rng, 0, 23),
        random_cron_field(rng, 1, 31),
        random_cron_field(rng, 1, 12),
        random_cron_field(rng, 0, 6),
    ])


# ---------------------------------------------------------------------------
# Rule generator: text plus closure for every expression
# ---------------------------------------------------------------------------

STREAMS = {"s0": ["f0", "f1"], "s1": ["g0"]}
NUM_PROFILE_KEYS = ["n0", "n1"]


class Expr:
    """A generated expression: its text form and its direct evaluation."""

    def __init__(self, text: str, fn):
        self.text = text
        self.fn = fn


def _lit(rng) -> Expr:
    v = round(rng.uniform(-10, 10), 2)
    return Expr(repr(v), lambda env, v=v: v)


def _null_cmp(op, a, b):
    if a is None or b is None:
        return None
    return {
        ">": a > b, ">=": a >= b, "<": a < b, "<=": a <= b,
        "==": a == b, "!=": a != b,
    }[op]


def _null_arith(op, a, b):
    if a is None or b is None:
        return None
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    return None if b == 0 else a / b


def _agg(rows, fn, field):
    if fn == "count":
        return len(rows)
    vals = [r[field] for r in rows if r.get(field) is not None]
    if not vals:
        return None
    if fn == "last":
        return vals[-1]
    if fn == "mean":
        return sum(vals) / len(vals)
    if fn == "min":
        return min(vals)
    if fn == "max":
        return max(vals)
    return sum(vals)


def _numeric_ref(rng, ctx) -> Expr:
    """A numeric-valued reference valid in the generated rule's scope."""
    options = []
    if ctx["has_point"]:
        field = rng.choice(STREAMS[ctx["trigger_stream"]])
        options.append(Expr(
            f"point.{field}",
            lambda env, f=field: env["point"].get(f)))
    key = rng.choice(NUM_PROFILE_KEYS)
    options.append(Expr(
        f"profile.{key}", lambda env, k=key: env["profile"].get(k)))
    for var, fields in ctx["vars"].items():
        options.append(Expr(
            f"{var}.count", lambda env, v=var: len(env["vars"][v])))
        numeric_fields = [f for f in fields if f != "timestamp"]
        if numeric_fields:
            field = rng.choice(numeric_fields)
            agg = rng.choice(["mean", "min", "max", "sum", "last"])
            options.append(Expr(
                f"{var}.{agg}({field})",
                lambda env, v=var, a=agg, f=field: _agg(env["vars"][v], a, f)))
    return rng.choice(options)


def _numeric_expr(rng, ctx, depth=0) -> Expr:
    if depth >= 2 or rng.random() < 0.45:
        return _lit(rng) if rng.random() < 0.4 else _numeric_ref(rng, ctx)
    op = rng.choice(["+", "-", "*", "/"])
    a = _numeric_expr(rng, ctx, depth + 1)
    b = _numeric_expr(rng, ctx, depth + 1)
    return Expr(f"({a.text} {op} {b.text})",
                lambda env, a=a, b=b, op=op: _null_arith(op, a.fn(env), b.fn(env)))


def _bool_expr(rng, ctx, depth=0) -> Expr:
    if depth >= 2 or rng.random() < 0.5:
        op = rng.choice([">", ">=", "<", "<=", "==", "!="])
        a = _numeric_expr(rng, ctx)
        b = _numeric_expr(rng, ctx)
        return Expr(f"({a.text} {op} {b.text})",
                    lambda env, a=a, b=b, op=op: _null_cmp(op, a.fn(env), b.fn(env)))
    if rng.random() < 0.15:
        inner = _bool_expr(rng, ctx, depth + 1)
        return Expr(f"!({inner.text})",
                    lambda env, e=inner: (None if e.fn(env) is None else not e.fn(env)))
    op = rng.choice(["&&", "||"])
    a = _bool_expr(rng, ctx, depth + 1)
    b = _bool_expr(rng, ctx, depth + 1)

    def logic(env, a=a, b=b, op=op):
        av = a.fn(env)
        if op == "&&" and av is False:
            return False
        if op == "||" and av is True:
            return True
        bv = b.fn(env)
        if op == "&&":
            if bv is False:
                return False
            return True if (av is True and bv is True) else None
        if bv is True:
            return True
        return False if (av is False and bv is False) else None

    return Expr(f"(({a.text}) {op} ({b.text}))", logic)


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def _template(rng, ctx):
    """(text, fn) for an interpolated action string."""
    parts = []
    for _ in range(rng.randint(1, 2)):
        parts.append(rng.choice(["v=", "hr ", "x", "| "]))
        parts.append(_numeric_expr(rng, ctx))
    text = "".join(p if isinstance(p, str) else "{{" + p.text + "}}"
                   for p in parts)

    def fn(env, parts=parts):
        return "".join(p if isinstance(p, str) else _render(p.fn(env))
                       for p in parts)

    return text, fn


def generate_rule_and_oracle(rng):
    """One random rule doc plus closures describing its exact semantics."""
    has_point = rng.random() < 0.7
    trigger_stream = rng.choice(list(STREAMS)) if has_point else None
    ctx = {"has_point": has_point, "trigger_stream": trigger_stream, "vars": {}}
    doc = {
        "format": 1, "enabled": True, "target": "each_participant",
        "trigger": ({"kind": "data", "stream": trigger_stream} if has_point
                    else {"kind": "cron", "expr": "0 12 * * *",
                          "timezone_mode": "study"}),
        "pipeline": [],
        "actions": [],
    }
    oracle_steps = []
    var_index = 0

    for _ in range(rng.randint(0, 4)):
        kind = rng.choice(["fetch", "fetch", "filter", "branch"])
        if kind == "filter" and not ctx["vars"]:
            kind = "fetch"
        if kind == "fetch":
            name = f"v{var_index}"
            var_index += 1
            if rng.random() < 0.75:
                stream = rng.choice(list(STREAMS))
                if rng.random() < 0.6:
                    window = rng.choice(["30m", "2h", "6h", "24h"])
                    source = {"stream": stream, "window": window}
                    oracle_steps.append(("fetch_window", name, stream, window))
                else:
                    count = rng.randint(1, 5)
                    source = {"stream": stream, "count": count}
                    oracle_steps.append(("fetch_count", name, stream, count))
                ctx["vars"][name] = STREAMS[stream] + ["timestamp"]
            else:
                scope = rng.choice(["participant", "group"])
                key = rng.choice(NUM_PROFILE_KEYS)
                source = {"profile": {"scope": scope, "key": key}}
                oracle_steps.append(("fetch_profile", name, scope, key))
                ctx["vars"][name] = ["value", "version"]
            doc["pipeline"].append({"step": "fetch", "source": source,
                                    "into": name})
        elif kind == "filter":
            over = rng.choice(list(ctx["vars"]))
            fields = [f for f in ctx["vars"][over]
                      if f not in ("timestamp", "version")]
            if not fields:
                continue
            field = rng.choice(fields)
            cutoff = round(rng.uniform(-5, 5), 2)
            op = rng.choice([">", ">=", "<", "<="])
            name = f"v{var_index}"
            var_index += 1
            doc["pipeline"].append({
                "step": "filter", "over": over,
                "predicate": f"{field} {op} {cutoff!r}", "into": name})
            oracle_steps.append(("filter", name, over, field, op, cutoff))
            ctx["vars"][name] = ctx["vars"][over]
        else:
            cond = _bool_expr(rng, ctx)
            then_actions, then_oracle = _random_actions(rng, ctx)
            else_actions, else_oracle = _random_actions(rng, ctx)
            doc["pipeline"].append({"step": "branch", "cond": cond.text,
                                    "then": then_actions,
                                    "else": else_actions})
            oracle_steps.append(("branch", cond, then_oracle, else_oracle))

    default_actions, default_oracle = _random_actions(rng, ctx)
    doc["actions"] = default_actions
    return doc, oracle_steps, default_oracle


def _random_actions(rng, ctx):
    specs = []
    oracle = []
    for _ in range(rng.randint(0, 2)):
        roll = rng.random()
        if roll < 0.45:
            title_text, title_fn = _template(rng, ctx)
            body_text, body_fn = _template(rng, ctx)
            specs.append({"action": "send_push", "channel": "internal",
                          "title": title_text, "body": body_text})
            oracle.append(("push", title_fn, body_fn))
        elif roll < 0.8:
            key = rng.choice(NUM_PROFILE_KEYS)
            value = _numeric_expr(rng, ctx)
            specs.append({"action": "write_profile", "scope": "participant",
                          "key": key, "value_expr": value.text})
            oracle.append(("write_profile", key, value.fn))
        else:
            payload_text, payload_fn = _template(rng, ctx)
            raw = _numeric_expr(rng, ctx)
            specs.append({"action": "webhook", "url": "http://127.0.0.1:9/x",
                          "payload": {"msg": payload_text,
                                      "value": "{{" + raw.text + "}}"}})
            oracle.append(("webhook", payload_fn, raw.fn))
    return specs, oracle


def generate_dataset(rng, now: datetime):
    streams = {}
    total = 0
    budget = rng.randint(0, 500)
    for stream, fields in STREAMS.items():
        n = rng.randint(0, max(0, budget - total))
        total += n
        offsets = rng.sample(range(1, 30 * 3600), n) if n else []
        rows = []
        for off in sorted(offsets, reverse=True):  # ascending timestamps
            values = {
                f: (None if rng.random() < 0.12 else round(rng.uniform(-20, 120), 3))
                for f in fields
            }
            rows.append({"timestamp": iso(now - timedelta(seconds=off)),
                         "values": values})
        streams[stream] = rows
    profile = {}
    group_profile = {}
    for key in NUM_PROFILE_KEYS:
        if rng.random() < 0.8:
            profile[key] = round(rng.uniform(-10, 100), 2)
        if rng.random() < 0.6:
            group_profile[key] = round(rng.uniform(-10, 100), 2)
    point = None
    if rng.random() < 1.0:  # always generated; used only for data triggers
        point = {
            "stream": None,  # filled by caller with the trigger stream
            "timestamp": iso(now - timedelta(seconds=rng.randint(0, 60))),
            "values": {},
        }
    return {"streams": streams, "profile": profile,
            "group_profile": group_profile, "point": point}


def reference_run(doc, oracle_steps, default_oracle, dataset, now, participant):
    """Single-pass interpretation of the generated rule over the dataset."""
    point_env = None
    trigger = doc["trigger"]
    if trigger["kind"] == "data":
        p = dataset["point"]
        ts = parse_ts(p["timestamp"])
        point_env = {
            "stream": p["stream"], "participant": participant,
            "timestamp": iso(ts),
            "date": ts.astimezone(timezone.utc).date().isoformat(),
        }
        point_env.update(p["values"])

    env = {"point": point_env or {}, "profile": dict(dataset["profile"]),
           "vars": {}}
    bindings = {}
    branch_decisions = []
    actions = []
    branch_ran = False

    def run_actions(oracle_actions):
        for entry in oracle_actions:
            if entry[0] == "push":
                _, title_fn, body_fn = entry
                actions.append(("push", title_fn(env), body_fn(env)))
            elif entry[0] == "write_profile":
                _, key, value_fn = entry
                actions.append(("write_profile", key, value_fn(env)))
            else:
                _, payload_fn, raw_fn = entry
                actions.append(("webhook", payload_fn(env), raw_fn(env)))

    for step in oracle_steps:
        kind = step[0]
        if kind == "fetch_window":
            _, name, stream, window = step
            seconds = {"30m": 1800, "2h": 7200, "6h": 21600, "24h": 86400}[window]
            start = now - timedelta(seconds=seconds)
            rows = [
                {**r["values"], "timestamp": r["timestamp"]}
                for r in dataset["streams"][stream]
                if start <= parse_ts(r["timestamp"]) < now
            ]
            bindings[name] = rows
            env["vars"][name] = rows
        elif kind == "fetch_count":
            _, name, stream, count = step
            rows = [
                {**r["values"], "timestamp": r["timestamp"]}
                for r in dataset["streams"][stream]
                if parse_ts(r["timestamp"]) < now
            ][-count:]
            bindings[name] = rows
            env["vars"][name] = rows
        elif kind == "fetch_profile":
            _, name, scope, key = step
            source = (dataset["profile"] if scope == "participant"
                      else dataset["group_profile"])
            rows = ([{"value": source[key], "version": 1}]
                    if source.get(key) is not None else [])
            bindings[name] = rows
            env["vars"][name] = rows
        elif kind == "filter":
            _, name, over, field, op, cutoff = step
            rows = [
                r for r in env["vars"].get(over, [])
                if _null_cmp(op, r.get(field), cutoff) is True
            ]
            bindings[name] = rows
            env["vars"][name] = rows
        else:  # branch
            _, cond, then_oracle, else_oracle = step
            decision = cond.fn(env) is True
            branch_decisions.append(decision)
            branch_ran = True
            run_actions(then_oracle if decision else else_oracle)

    if not branch_ran:
        run_actions(default_oracle)

    return {"bindings": bindings, "branch_decisions": branch_decisions,
            "actions": actions}


def engine_actions_view(trace):
    """Project the engine's dry-run actions into the oracle's tuple form."""
    out = []
    for action in trace["actions"]:
        outcome = action["outcome"]
        kind = action["action"]
        if kind == "send_push":
            out.append(("push", outcome["title"], outcome["body"]))
        elif kind == "write_profile":
            out.append(("write_profile", outcome["key"], outcome["value"]))
        else:
            out.append(("webhook", outcome["payload"]["msg"],
                        outcome["payload"]["value"]))
    return out
