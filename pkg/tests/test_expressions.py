import random

import pytest

from carekernel import expressions as ex


def ev(text, bare=None, dotted=None, var_rows=None):
    ctx = ex.EvalContext(bare=bare, dotted=dotted or {}, var_rows=var_rows or {})
    return ex.evaluate_text(text, ctx)


class TestLiteralsAndOperators:
    def test_numbers(self):
        assert ev("1 + 2 * 3") == 7
        assert ev("(1 + 2) * 3") == 9
        assert ev("10 / 4") == 2.5
        assert ev("-3 + 1") == -2

    def test_strings(self):
        assert ev("'yes'") == "yes"
        assert ev('"a b"') == "a b"
        assert ev("'it\\'s'") == "it's"

    def test_comparisons(self):
        assert ev("2 < 3") is True
        assert ev("2 >= 3") is False
        assert ev("'a' < 'b'") is True
        assert ev("'x' == 'x'") is True
        assert ev("1 == 1.0") is True

    def test_logic(self):
        assert ev("true && false") is False
        assert ev("true || false") is True
        assert ev("!true") is False

    def test_cross_type_equality_is_false(self):
        assert ev("1 == 'one'") is False
        assert ev("1 != 'one'") is True

    def test_type_errors(self):
        with pytest.raises(ex.EvalError):
            ev("'a' + 1")
        with pytest.raises(ex.EvalError):
            ev("true < false")
        with pytest.raises(ex.EvalError):
            ev("1 && true")


class TestNullSemantics:
    def test_arithmetic_with_null(self):
        assert ev("null + 1") is None
        assert ev("2 * null") is None

    def test_comparison_with_null(self):
        assert ev("null == null") is None
        assert ev("null != 3") is None
        assert ev("null < 1") is None

    def test_not_null(self):
        assert ev("!null") is None

    def test_three_valued_logic(self):
        assert ev("false && null") is False
        assert ev("null && false") is False
        assert ev("true && null") is None
        assert ev("true || null") is True
        assert ev("null || true") is True
        assert ev("false || null") is None

    def test_division_by_zero_is_null(self):
        assert ev("1 / 0") is None

    def test_truthy_rule(self):
        assert ex.truthy(True) is True
        for value in (False, None, 0, 1, "yes"):
            assert ex.truthy(value) is (value is True)


class TestReferences:
    def test_dotted(self):
        dotted = {"profile": {"weight": 61.5}, "point": {"bpm": 130}}
        assert ev("profile.weight + 0.5", dotted=dotted) == 62.0
        assert ev("point.bpm > 120", dotted=dotted) is True

    def test_missing_dotted_field_is_null(self):
        assert ev("profile.nothing", dotted={"profile": {}}) is None

    def test_bare_row_fields(self):
        row = {"bpm": 99}
        assert ev("bpm > 100", bare=row.get) is False

    def test_unknown_base_raises(self):
        with pytest.raises(ex.EvalError):
            ev("mystery.field")


class TestAggregates:
    ROWS = [{"bpm": 80, "t": "a"}, {"bpm": 100, "t": "b"}, {"bpm": 120, "t": "c"}]

    def test_count(self):
        assert ev("hr.count", var_rows={"hr": self.ROWS}) == 3
        assert ev("hr.count", var_rows={"hr": []}) == 0

    def test_numeric_aggregates(self):
        rows = {"hr": self.ROWS}
        assert ev("hr.mean(bpm)", var_rows=rows) == 100
        assert ev("hr.min(bpm)", var_rows=rows) == 80
        assert ev("hr.max(bpm)", var_rows=rows) == 120
        assert ev("hr.sum(bpm)", var_rows=rows) == 300
        assert ev("hr.last(bpm)", var_rows=rows) == 120

    def test_empty_set_aggregates_are_null(self):
        rows = {"hr": []}
        for fn in ("mean", "min", "max", "sum", "last"):
            assert ev(f"hr.{fn}(bpm)", var_rows=rows) is None

    def test_rows_missing_field_are_skipped(self):
        rows = {"hr": [{"bpm": 10}, {"other": 1}, {"bpm": None}]}
        assert ev("hr.mean(bpm)", var_rows=rows) == 10

    def test_text_min_max(self):
        rows = {"v": [{"d": "2026-01-02"}, {"d": "2026-01-01"}]}
        assert ev("v.min(d)", var_rows=rows) == "2026-01-01"


class TestInterpolation:
    def test_values_render(self):
        ctx = ex.EvalContext(dotted={"point": {"bpm": 130.0}})
        assert ex.interpolate("HR was {{point.bpm}} bpm", ctx) == "HR was 130 bpm"

    def test_null_renders_empty_with_warning(self):
        warnings = []
        ctx = ex.EvalContext(dotted={"point": {}})
        out = ex.interpolate("x={{point.gone}}!", ctx, warn=warnings.append)
        assert out == "x=!"
        assert len(warnings) == 1

    def test_booleans(self):
        ctx = ex.EvalContext(dotted={"profile": {"on": True}})
        assert ex.interpolate("{{profile.on}}", ctx) == "true"


class TestStaticValidation:
    def test_parse_error_reported(self):
        assert ex.validate("1 +", ex.StaticScope())

    def test_unknown_profile_key(self):
        scope = ex.StaticScope(dotted_fields={"profile": {"weight"}})
        assert ex.validate("profile.weight > 1", scope) == []
        assert ex.validate("profile.height > 1", scope)

    def test_variable_aggregates(self):
        scope = ex.StaticScope(variables={"hr"})
        assert ex.validate("hr.count == 0", scope) == []
        assert ex.validate("hr.mean(bpm) > 1", scope) == []
        assert ex.validate("hr.median(bpm)", scope)
        assert ex.validate("hr.mean", scope)  # missing field arg
        assert ex.validate("hr.count(bpm)", scope)  # count takes no arg

    def test_bare_names_gated(self):
        assert ex.validate("bpm > 1", ex.StaticScope())
        scope = ex.StaticScope(bare_names={"bpm"})
        assert ex.validate("bpm > 1", scope) == []
        assert ex.validate("spm > 1", scope)


class TestTotalityFuzz:
    """Expressions that pass static validation never raise on well-typed
    contexts, however the nulls fall (the null-propagation property)."""

    NUMERIC_FIELDS = ["a", "b", "c"]

    def _random_numeric(self, rng, depth=0):
        """Well-typed numeric subtree: only arithmetic over numeric refs."""
        if depth > 3 or rng.random() < 0.3:
            choice = rng.random()
            if choice < 0.4:
                return str(rng.randint(-5, 5))
            if choice < 0.8:
                return f"point.{rng.choice(self.NUMERIC_FIELDS)}"
            return rng.choice(["hr.count", "hr.mean(v)", "hr.sum(v)", "hr.last(v)"])
        op = rng.choice(["+", "-", "*", "/"])
        return f"(({self._random_numeric(rng, depth + 1)}) {op} ({self._random_numeric(rng, depth + 1)}))"

    def _random_bool_expr(self, rng):
        cmp_ops = ["<", "<=", ">", ">=", "==", "!="]
        parts = [
            f"({self._random_numeric(rng)}) {rng.choice(cmp_ops)} ({self._random_numeric(rng)})"
            for _ in range(rng.randint(1, 3))
        ]
        out = parts[0]
        for part in parts[1:]:
            out = f"({out}) {rng.choice(['&&', '||'])} ({part})"
        if rng.random() < 0.3:
            out = f"!({out})"
        return out

    def test_fuzz_no_runtime_errors(self):
        rng = random.Random(20260105)
        scope = ex.StaticScope(
            dotted_fields={"point": set(self.NUMERIC_FIELDS)},
            variables={"hr"},
        )
        for trial in range(500):
            text = self._random_bool_expr(rng)
            assert ex.validate(text, scope) == [], text
            point = {
                f: (None if rng.random() < 0.3 else rng.uniform(-10, 10))
                for f in self.NUMERIC_FIELDS
            }
            rows = [
                {"v": (None if rng.random() < 0.2 else rng.uniform(0, 5))}
                for _ in range(rng.randint(0, 4))
            ]
            ctx = ex.EvalContext(dotted={"point": point}, var_rows={"hr": rows})
            value = ex.evaluate_text(text, ctx)  # must not raise
            assert value in (True, False, None)
