import pytest
from hypothesis import given
from hypothesis import strategies as st

from cookiewalk.env import CustomEnvironment, FiniteEnvironment, GeometricTail, TransientExample
from cookiewalk.errors import SpecParseError
from cookiewalk.specfile import (
    parse_env_text,
    parse_float_grid,
    parse_inline_env,
    parse_int_grid,
    parse_key_values,
)


def test_finite_file():
    env = parse_env_text("# two cookies\nkind = finite\nstrengths = 0.9, 1/5  # trailing\n")
    assert env == FiniteEnvironment((0.9, 0.2))


def test_other_kinds():
    assert parse_env_text("kind = transient-example") == TransientExample()
    assert parse_env_text("kind=transient-example\nreflect=yes") == TransientExample().reflect()
    g = parse_env_text("kind = geometric-tail\nhead = 0.7 0.6\nratio = 1/3\nscale = 1")
    assert g == GeometricTail((0.7, 0.6), 1 / 3, 1.0)
    assert parse_env_text("kind = custom\nrule = inverse-square") == CustomEnvironment(rule="inverse-square")
    assert parse_env_text("kind = finite") == FiniteEnvironment(())


@pytest.mark.parametrize(
    "text, line, key",
    [
        ("strengths = 0.5", None, "kind"),
        ("kind = finite\nstrengths = 0.9, 1.2", 2, "strengths"),
        ("kind = finite\nstrengths = 0.9, abc", 2, "strengths"),
        ("kind = finite\nratio = 0.5", 2, "ratio"),
        ("kind = circle", 1, "kind"),
        ("kind = finite\n\njunk", 3, None),
        ("kind = finite\nkind = finite", 2, "kind"),
        ("kind = geometric-tail\nratio = 2\nscale = 1", 2, "ratio"),
        ("kind = geometric-tail\nratio = 0.5", None, "scale"),
        ("kind = custom", None, "rule"),
        ("kind = custom\nrule = nothing-registered", 1, "kind"),
        ("kind = finite\nreflect = maybe", 2, "reflect"),
    ],
)
def test_errors_name_line_and_key(text, line, key):
    with pytest.raises(SpecParseError) as info:
        parse_env_text(text)
    assert info.value.line == line and info.value.key == key
    if line is not None:
        assert str(info.value).startswith(f"line {line}")


def test_key_values_keep_lines():
    kv = parse_key_values("\n# c\na = 1\nb-c = x y\n")
    assert kv == {"a": "1", "b_c": "x y"} and kv.line("b_c") == 4


@pytest.mark.parametrize(
    "text, env",
    [
        ("finite:0.9,0.2", FiniteEnvironment((0.9, 0.2))),
        ("finite:", FiniteEnvironment(())),
        ("transient-example", TransientExample()),
        ("geometric-tail:ratio=1/3,scale=1,head=0.7 0.6", GeometricTail((0.7, 0.6), 1 / 3, 1.0)),
        ("geometric-tail:head=0.7,0.6,ratio=0.5,scale=-0.2", GeometricTail((0.7, 0.6), 0.5, -0.2)),
        ("custom:inverse-square", CustomEnvironment(rule="inverse-square")),
        ("reflect(finite:3/4)", FiniteEnvironment((0.75,)).reflect()),
    ],
)
def test_inline(text, env):
    assert parse_inline_env(text) == env
    assert parse_inline_env(env.describe()) == env


def test_inline_errors():
    for bad in ("transient-example:3", "finite:2", "geometric-tail:ratio", "bogus:1"):
        with pytest.raises(SpecParseError):
            parse_inline_env(bad)


@given(st.lists(st.floats(0.001, 0.999), max_size=6), st.booleans())
def test_describe_roundtrip(strengths, flip):
    env = FiniteEnvironment(tuple(strengths))
    env = env.reflect() if flip else env
    assert parse_inline_env(env.describe()) == env


def test_grids():
    assert parse_int_grid("2^7..2^10") == [128, 256, 512, 1024]
    assert parse_int_grid("1..3") == [1, 2, 3]
    assert parse_int_grid("50, 200 10^3") == [50, 200, 1000]
    assert parse_float_grid("0.2,1/2 1") == [0.2, 0.5, 1.0]
    for bad in ("", "5,3", "2^3..3^4", "x"):
        with pytest.raises(ValueError):
            parse_int_grid(bad)
