"""Key-value documents for environments and experiment configs.

Format: one ``key = value`` per line, ``#`` starts a comment, blank lines
are ignored.  List values are separated by commas and/or whitespace.
Inline environments use ``kind:args``, e.g. ``finite:0.9,0.2``,
``transient-example``, ``geometric-tail:ratio=1/3,scale=1,head=0.7 0.6``,
``custom:inverse-square``; ``reflect(...)`` wraps any of them.
"""

from __future__ import annotations

import re
from pathlib import Path

from .env import (
    CookieEnvironment,
    CustomEnvironment,
    FiniteEnvironment,
    GeometricTail,
    Kind,
    TransientExample,
    parse_strength,
)
from .errors import CookieWalkError, SpecParseError

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class KeyValues(dict):
    """``key -> value`` with the source line of each key kept in ``lines``."""

    def __init__(self):
        super().__init__()
        self.lines = {}

    def line(self, key):
        return self.lines.get(key)


def parse_key_values(text: str) -> KeyValues:
    kv = KeyValues()
    for no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise SpecParseError("expected 'key = value'", line=no)
        key, value = (part.strip() for part in body.split("=", 1))
        if not _KEY.match(key):
            raise SpecParseError("malformed key", line=no, key=key or None)
        key = key.replace("-", "_")
        if key in kv:
            raise SpecParseError(
                f"duplicate key (first set on line {kv.lines[key]})", line=no, key=key
            )
        kv[key] = value
        kv.lines[key] = no
    return kv


def split_list(value: str) -> list:
    return [tok for tok in re.split(r"[,\s]+", value.strip()) if tok]


def parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _field(kv, key, convert):
    try:
        return convert(kv[key])
    except SpecParseError:
        raise
    except (ValueError, CookieWalkError) as exc:
        raise SpecParseError(str(exc), line=kv.line(key), key=key) from None


def _strength_list(value):
    return tuple(parse_strength(tok) for tok in split_list(value))


_ENV_KEYS = {
    Kind.FINITE: {"strengths"},
    Kind.TRANSIENT_EXAMPLE: set(),
    Kind.GEOMETRIC_TAIL: {"head", "ratio", "scale"},
    Kind.CUSTOM: {"rule"},
}


def env_from_key_values(kv: KeyValues, extra_keys=()) -> CookieEnvironment:
    """Build an environment from parsed keys; unknown keys are errors."""
    if "kind" not in kv:
        raise SpecParseError("missing required key", key="kind")
    try:
        kind = Kind(kv["kind"].strip().lower())
    except ValueError:
        choices = ", ".join(k.value for k in Kind)
        raise SpecParseError(
            f"unknown kind {kv['kind']!r} (expected one of {choices})",
            line=kv.line("kind"), key="kind",
        ) from None
    allowed = _ENV_KEYS[kind] | {"kind", "reflect"} | set(extra_keys)
    for key in kv:
        if key not in allowed:
            raise SpecParseError(
                f"not a valid key for kind {kind.value}", line=kv.line(key), key=key
            )
    reflect = _field(kv, "reflect", parse_bool) if "reflect" in kv else False

    def build():
        if kind is Kind.FINITE:
            if "strengths" not in kv:
                return FiniteEnvironment(())
            return _field(kv, "strengths", lambda v: FiniteEnvironment(_strength_list(v)))
        if kind is Kind.TRANSIENT_EXAMPLE:
            return TransientExample()
        if kind is Kind.GEOMETRIC_TAIL:
            for key in ("ratio", "scale"):
                if key not in kv:
                    raise SpecParseError("missing required key", key=key)
            head = _field(kv, "head", _strength_list) if "head" in kv else ()
            ratio = _field(kv, "ratio", parse_strength)
            scale = _field(kv, "scale", parse_strength)
            try:
                return GeometricTail(head, ratio, scale)
            except CookieWalkError as exc:
                msg = str(exc)
                key = "ratio" if "ratio" in msg else "head" if "head" in msg else "scale"
                raise SpecParseError(msg, line=kv.line(key), key=key) from None
        if "rule" not in kv:
            raise SpecParseError("missing required key", key="rule")
        return CustomEnvironment(rule=kv["rule"].strip())

    try:
        env = build()
    except SpecParseError:
        raise
    except CookieWalkError as exc:
        raise SpecParseError(str(exc), line=kv.line("kind"), key="kind") from None
    return env.reflect() if reflect else env


def parse_env_text(text: str) -> CookieEnvironment:
    return env_from_key_values(parse_key_values(text))


def load_env(path) -> CookieEnvironment:
    return parse_env_text(Path(path).read_text())


def parse_inline_env(spec: str) -> CookieEnvironment:
    spec = spec.strip()
    m = re.fullmatch(r"reflect\((.*)\)", spec)
    if m:
        return parse_inline_env(m.group(1)).reflect()
    kind_text, _, args = spec.partition(":")
    kv = KeyValues()
    kv["kind"] = kind_text
    kind = kind_text.strip().lower()
    if kind == "finite":
        kv["strengths"] = args
    elif kind == "geometric-tail":
        for part in filter(None, (a.strip() for a in re.split(r",(?=\s*[A-Za-z_]+\s*=)", args))):
            key, eq, value = part.partition("=")
            if not eq:
                raise SpecParseError(f"expected key=value in {part!r}", key=kind)
            kv[key.strip()] = value
    elif kind == "custom":
        kv["rule"] = args
    elif args.strip():
        raise SpecParseError(f"unexpected arguments {args!r}", key=kind_text)
    return env_from_key_values(kv)


_POW_RANGE = re.compile(r"^(\d+)\^(\d+)\s*\.\.\s*(\d+)\^(\d+)$")
_INT_RANGE = re.compile(r"^(\d+)\s*\.\.\s*(\d+)$")


def _grid_item(tok: str) -> int:
    base, caret, exp = tok.partition("^")
    return int(base) ** int(exp) if caret else int(tok)


def parse_int_grid(text: str) -> list:
    """``2^7..2^17`` (powers of one base), ``1..50`` or ``50, 200, 10^3``."""
    text = text.strip()
    m = _POW_RANGE.match(text)
    if m:
        b1, e1, b2, e2 = map(int, m.groups())
        if b1 != b2:
            raise ValueError(f"power range needs one base: {text!r}")
        grid = [b1**e for e in range(e1, e2 + 1)]
    else:
        m = _INT_RANGE.match(text)
        if m:
            grid = list(range(int(m.group(1)), int(m.group(2)) + 1))
        else:
            grid = [_grid_item(tok) for tok in split_list(text)]
    _check_sorted(grid, text)
    return grid


def parse_float_grid(text: str) -> list:
    grid = [parse_strength(tok) for tok in split_list(text)]
    _check_sorted(grid, text)
    return grid


def _check_sorted(grid, text):
    if not grid:
        raise ValueError(f"empty grid: {text!r}")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError(f"grid must be strictly increasing: {text!r}")
