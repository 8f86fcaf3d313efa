"""Shared condition/expression mini-language.

One evaluator serves rule pipelines (branch conditions, filter predicates,
action interpolation) and interaction documents (show_if, variables,
availability windows).

Grammar
    expr    := or
    or      := and ("||" and)*
    and     := not ("&&" not)*
    not     := "!" not | cmp
    cmp     := add (("=="|"!="|"<"|"<="|">"|">=") add)?
    add     := mul (("+"|"-") mul)*
    mul     := unary (("*"|"/") unary)*
    unary   := "-" unary | primary
    primary := NUMBER | STRING | true | false | null | ref | "(" expr ")"
    ref     := IDENT ("." IDENT ("(" IDENT? ")")?)?

References
    profile.K        profile value of the context participant
    point.F          field of the triggering data point
    answers.C        answer to component C (interactions)
    V.count          row count of a bound variable
    V.last(f) V.mean(f) V.min(f) V.max(f) V.sum(f)
    bare IDENT       row field inside a filter predicate, or an interaction
                     variable

Null semantics: any comparison or arithmetic with null yields null; "!" of
null is null; "&&"/"||" follow three-valued logic so they stay total.
Division by zero yields null for the same reason. Aggregates skip rows
missing the field; count of an empty set is 0, every other aggregate of an
empty set is null. Equality across mismatched types is false rather than an
error; arithmetic or ordering on non-matching types raises EvalError, which
a rule execution records as a failed step.
"""

from __future__ import annotations

import re
from typing import Any, Callable

AGGREGATES = {"count", "last", "mean", "min", "max", "sum"}

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<number>\d+\.\d+|\d+)
      | (?P<string>'(?:[^'\\]|\\.)*'|"(?:[^"\\]|\\.)*")
      | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<op>==|!=|<=|>=|&&|\|\||[-+*/()<>!.])
    )""",
    re.VERBOSE,
)


class ExpressionError(ValueError):
    """Raised when an expression does not parse."""


class EvalError(Exception):
    """Runtime type error during evaluation (e.g. text in arithmetic)."""


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            rest = text[pos:].strip()
            if not rest:
                break
            raise ExpressionError(f"bad token at {pos}: {rest[:20]!r}")
        pos = m.end()
        for kind in ("number", "string", "ident", "op"):
            value = m.group(kind)
            if value is not None:
                tokens.append((kind, value))
                break
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, str]]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> tuple[str, str] | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise ExpressionError("unexpected end of expression")
        self.i += 1
        return tok

    def accept_op(self, *ops: str) -> str | None:
        tok = self.peek()
        if tok is not None and tok[0] == "op" and tok[1] in ops:
            self.i += 1
            return tok[1]
        return None

    def expect_op(self, op: str) -> None:
        if self.accept_op(op) is None:
            raise ExpressionError(f"expected {op!r} at token {self.i}")

    # precedence-climbing

    def parse(self):
        node = self.parse_or()
        if self.peek() is not None:
            raise ExpressionError(f"trailing input at token {self.i}")
        return node

    def parse_or(self):
        node = self.parse_and()
        while self.accept_op("||"):
            node = ("bin", "||", node, self.parse_and())
        return node

    def parse_and(self):
        node = self.parse_not()
        while self.accept_op("&&"):
            node = ("bin", "&&", node, self.parse_not())
        return node

    def parse_not(self):
        if self.accept_op("!"):
            return ("unary", "!", self.parse_not())
        return self.parse_cmp()

    def parse_cmp(self):
        node = self.parse_add()
        op = self.accept_op("==", "!=", "<", "<=", ">", ">=")
        if op:
            node = ("bin", op, node, self.parse_add())
        return node

    def parse_add(self):
        node = self.parse_mul()
        while True:
            op = self.accept_op("+", "-")
            if not op:
                return node
            node = ("bin", op, node, self.parse_mul())

    def parse_mul(self):
        node = self.parse_unary()
        while True:
            op = self.accept_op("*", "/")
            if not op:
                return node
            node = ("bin", op, node, self.parse_unary())

    def parse_unary(self):
        if self.accept_op("-"):
            return ("unary", "-", self.parse_unary())
        return self.parse_primary()

    def parse_primary(self):
        if self.accept_op("("):
            node = self.parse_or()
            self.expect_op(")")
            return node
        kind, value = self.take()
        if kind == "number":
            return ("lit", float(value) if "." in value else int(value))
        if kind == "string":
            body = value[1:-1]
            body = re.sub(r"\\(.)", r"\1", body)
            return ("lit", body)
        if kind == "ident":
            if value == "true":
                return ("lit", True)
            if value == "false":
                return ("lit", False)
            if value == "null":
                return ("lit", None)
            return self.parse_ref(value)
        raise ExpressionError(f"unexpected token {value!r}")

    def parse_ref(self, base: str):
        if not self.accept_op("."):
            return ("ref", base, None, None)
        kind, attr = self.take()
        if kind != "ident":
            raise ExpressionError(f"expected name after {base}.")
        if self.accept_op("("):
            arg = None
            tok = self.peek()
            if tok is not None and tok[0] == "ident":
                arg = self.take()[1]
            self.expect_op(")")
            return ("ref", base, attr, arg)
        return ("ref", base, attr, None)


def parse(text: str):
    """Parse to an AST; raises ExpressionError."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression")
    return _Parser(_tokenize(text)).parse()


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


class EvalContext:
    """Name resolution for one evaluation.

    bare:      callable name -> value, for row fields / interaction variables
    dotted:    mapping base -> mapping of fields (profile, point, answers)
    var_rows:  mapping variable name -> list of row dicts (rule bindings)
    """

    def __init__(self,
                 bare: Callable[[str], Any] | None = None,
                 dotted: dict[str, dict] | None = None,
                 var_rows: dict[str, list[dict]] | None = None):
        self._bare = bare
        self.dotted = dotted or {}
        self.var_rows = var_rows or {}

    def lookup_bare(self, name: str) -> Any:
        if self._bare is None:
            raise EvalError(f"name {name!r} is not bound in this context")
        return self._bare(name)


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _aggregate(rows: list[dict], fn: str, field: str | None) -> Any:
    if fn == "count":
        return len(rows)
    if field is None:
        raise EvalError(f"aggregate {fn} requires a field argument")
    values = [r[field] for r in rows if isinstance(r, dict) and r.get(field) is not None]
    if not values:
        return None
    if fn == "last":
        return values[-1]
    if fn in ("mean", "sum"):
        if not all(_is_number(v) for v in values):
            raise EvalError(f"aggregate {fn}({field}) over non-numeric values")
        total = sum(values)
        return total / len(values) if fn == "mean" else total
    if fn in ("min", "max"):
        if all(_is_number(v) for v in values):
            return min(values) if fn == "min" else max(values)
        if all(isinstance(v, str) for v in values):
            return min(values) if fn == "min" else max(values)
        raise EvalError(f"aggregate {fn}({field}) over mixed types")
    raise EvalError(f"unknown aggregate {fn}")


def evaluate(node, ctx: EvalContext) -> Any:
    kind = node[0]
    if kind == "lit":
        return node[1]
    if kind == "ref":
        return _eval_ref(node, ctx)
    if kind == "unary":
        _, op, operand = node
        v = evaluate(operand, ctx)
        if op == "-":
            if v is None:
                return None
            if not _is_number(v):
                raise EvalError("unary minus on non-number")
            return -v
        if op == "!":
            if v is None:
                return None
            if not isinstance(v, bool):
                raise EvalError("negation of non-boolean")
            return not v
    if kind == "bin":
        _, op, left, right = node
        if op in ("&&", "||"):
            return _eval_logic(op, left, right, ctx)
        lv = evaluate(left, ctx)
        rv = evaluate(right, ctx)
        if lv is None or rv is None:
            return None
        if op in ("+", "-", "*", "/"):
            if not (_is_number(lv) and _is_number(rv)):
                raise EvalError(f"arithmetic {op} on non-numbers")
            if op == "+":
                return lv + rv
            if op == "-":
                return lv - rv
            if op == "*":
                return lv * rv
            if rv == 0:
                return None
            return lv / rv
        if op == "==":
            return _loose_eq(lv, rv)
        if op == "!=":
            return not _loose_eq(lv, rv)
        # ordering
        if _is_number(lv) and _is_number(rv):
            pass
        elif isinstance(lv, str) and isinstance(rv, str):
            pass
        else:
            raise EvalError(f"ordering {op} on incomparable types")
        if op == "<":
            return lv < rv
        if op == "<=":
            return lv <= rv
        if op == ">":
            return lv > rv
        if op == ">=":
            return lv >= rv
    raise EvalError(f"bad node {node!r}")


def _loose_eq(a: Any, b: Any) -> bool:
    if _is_number(a) and _is_number(b):
        return a == b
    if type(a) is not type(b):
        return False
    return a == b


def _eval_logic(op: str, left, right, ctx: EvalContext) -> Any:
    # Three-valued logic keeps && and || total under nulls.
    lv = evaluate(left, ctx)
    if lv is not None and not isinstance(lv, bool):
        raise EvalError(f"{op} on non-boolean")
    if op == "&&" and lv is False:
        return False
    if op == "||" and lv is True:
        return True
    rv = evaluate(right, ctx)
    if rv is not None and not isinstance(rv, bool):
        raise EvalError(f"{op} on non-boolean")
    if op == "&&":
        if rv is False:
            return False
        if lv is True and rv is True:
            return True
        return None
    if rv is True:
        return True
    if lv is False and rv is False:
        return False
    return None


def _eval_ref(node, ctx: EvalContext) -> Any:
    _, base, attr, arg = node
    if attr is None:
        return ctx.lookup_bare(base)
    if base in ctx.dotted:
        if arg is not None:
            raise EvalError(f"{base}.{attr} does not take arguments")
        return ctx.dotted[base].get(attr)
    if base in ctx.var_rows:
        if attr not in AGGREGATES:
            raise EvalError(f"unknown aggregate {attr!r} on variable {base!r}")
        return _aggregate(ctx.var_rows[base], attr, arg)
    raise EvalError(f"unknown reference base {base!r}")


def truthy(value: Any) -> bool:
    """Branch/Filter rule: anything but exactly true counts as false."""
    return value is True


def evaluate_text(text: str, ctx: EvalContext) -> Any:
    return evaluate(parse(text), ctx)


# ---------------------------------------------------------------------------
# Static validation
# ---------------------------------------------------------------------------


class StaticScope:
    """Declared names an expression may reference.

    dotted_fields: base -> set of field names, or None meaning any field.
    variables:     bound rule variables usable via aggregates.
    bare_names:    row fields / interaction variable names; None means bare
                   references are not allowed at all in this position.
    """

    def __init__(self,
                 dotted_fields: dict[str, set | None] | None = None,
                 variables: set[str] | None = None,
                 bare_names: set | None = None,
                 allow_bare: bool = False):
        self.dotted_fields = dotted_fields or {}
        self.variables = variables or set()
        self.bare_names = bare_names
        self.allow_bare = allow_bare or bare_names is not None


def validate(text: str, scope: StaticScope) -> list[str]:
    """All static problems with the expression; empty list when fine."""
    try:
        node = parse(text)
    except ExpressionError as exc:
        return [str(exc)]
    problems: list[str] = []
    _walk_refs(node, scope, problems)
    return problems


def _walk_refs(node, scope: StaticScope, problems: list[str]) -> None:
    kind = node[0]
    if kind == "lit":
        return
    if kind == "unary":
        _walk_refs(node[2], scope, problems)
        return
    if kind == "bin":
        _walk_refs(node[2], scope, problems)
        _walk_refs(node[3], scope, problems)
        return
    _, base, attr, arg = node
    if attr is None:
        if not scope.allow_bare:
            problems.append(f"name {base!r} is not available here")
        elif scope.bare_names is not None and base not in scope.bare_names:
            problems.append(f"unknown name {base!r}")
        return
    if base in scope.dotted_fields:
        fields = scope.dotted_fields[base]
        if arg is not None:
            problems.append(f"{base}.{attr} does not take arguments")
        if fields is not None and attr not in fields:
            problems.append(f"unknown field {base}.{attr}")
        return
    if base in scope.variables:
        if attr not in AGGREGATES:
            problems.append(f"unknown aggregate {attr!r} on {base!r}")
        elif attr == "count":
            if arg is not None:
                problems.append("count takes no field argument")
        elif arg is None:
            problems.append(f"aggregate {attr} requires a field argument")
        return
    problems.append(f"unknown reference {base!r}")


def references(node, out: set | None = None) -> set[tuple]:
    """All (base, attr) pairs referenced by an AST; attr None for bare names."""
    if out is None:
        out = set()
    kind = node[0]
    if kind == "unary":
        references(node[2], out)
    elif kind == "bin":
        references(node[2], out)
        references(node[3], out)
    elif kind == "ref":
        out.add((node[1], node[2]))
    return out


# ---------------------------------------------------------------------------
# Text interpolation for action bodies: "HR was {{point.bpm}}"
# ---------------------------------------------------------------------------

_INTERP_RE = re.compile(r"\{\{(.*?)\}\}")


def interpolate(template: str, ctx: EvalContext, warn=None) -> str:
    """Replace each {{expr}} with its evaluated value.

    Null renders as empty text (with a warning callback when provided);
    evaluation errors propagate to the caller.
    """

    def repl(m: re.Match) -> str:
        value = evaluate_text(m.group(1), ctx)
        if value is None:
            if warn is not None:
                warn(f"interpolation {m.group(1).strip()!r} evaluated to null")
            return ""
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float) and value.is_integer():
            return str(int(value))
        return str(value)

    return _INTERP_RE.sub(repl, template)


def validate_template(template: str, scope: StaticScope) -> list[str]:
    problems = []
    for m in _INTERP_RE.finditer(template):
        problems.extend(validate(m.group(1), scope))
    return problems
