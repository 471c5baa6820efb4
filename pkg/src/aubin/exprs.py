"""Polynomial expressions: parsing, symbolic differentiation, evaluation.

Problems are defined by polynomial maps H(p, x) and g(x).  Expressions are
immutable trees with exact rational constants, so derivatives and the
evaluated reference matrices are bit-stable.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cones import ConeSpec, cone_from_json, cone_to_json

__all__ = [
    "Expression",
    "Const",
    "Var",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Pow",
    "ExprSyntaxError",
    "UndeclaredIdentifierError",
    "UnboundIdentifierError",
    "ProblemFormatError",
    "ProblemSpec",
    "ReferenceData",
    "parse_expr",
    "derivative_expr",
    "eval_expr",
    "eval_exact",
    "to_polynomial",
    "compile_vector",
    "load_problem",
    "problem_from_dict",
    "problem_to_dict",
    "assemble_reference",
]


class ExprSyntaxError(ValueError):
    """Malformed expression text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UndeclaredIdentifierError(ValueError):
    def __init__(self, name: str):
        super().__init__(f"undeclared identifier {name!r}")
        self.name = name


class UnboundIdentifierError(ValueError):
    def __init__(self, name: str):
        super().__init__(f"no value bound for identifier {name!r}")
        self.name = name


class ProblemFormatError(ValueError):
    """A problem file that cannot be loaded."""


# --------------------------------------------------------------------------
# AST

class Expression:
    """Base class of expression nodes."""

    __slots__ = ()

    def identifiers(self) -> frozenset[str]:
        raise NotImplementedError

    def __str__(self) -> str:
        return _format(self, 0)


@dataclass(frozen=True, slots=True)
class Const(Expression):
    value: Fraction

    def identifiers(self) -> frozenset[str]:
        return frozenset()


@dataclass(frozen=True, slots=True)
class Var(Expression):
    name: str

    def identifiers(self) -> frozenset[str]:
        return frozenset((self.name,))


@dataclass(frozen=True, slots=True)
class Neg(Expression):
    arg: Expression

    def identifiers(self) -> frozenset[str]:
        return self.arg.identifiers()


@dataclass(frozen=True, slots=True)
class Add(Expression):
    left: Expression
    right: Expression

    def identifiers(self) -> frozenset[str]:
        return self.left.identifiers() | self.right.identifiers()


@dataclass(frozen=True, slots=True)
class Sub(Expression):
    left: Expression
    right: Expression

    def identifiers(self) -> frozenset[str]:
        return self.left.identifiers() | self.right.identifiers()


@dataclass(frozen=True, slots=True)
class Mul(Expression):
    left: Expression
    right: Expression

    def identifiers(self) -> frozenset[str]:
        return self.left.identifiers() | self.right.identifiers()


@dataclass(frozen=True, slots=True)
class Pow(Expression):
    base: Expression
    exponent: int

    def identifiers(self) -> frozenset[str]:
        return self.base.identifiers()


ZERO = Const(Fraction(0))
ONE = Const(Fraction(1))


# Smart constructors: constant folding and the neutral/absorbing elements.

def _const(e: Expression) -> Fraction | None:
    return e.value if isinstance(e, Const) else None


def neg(a: Expression) -> Expression:
    ca = _const(a)
    if ca is not None:
        return Const(-ca)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expression, b: Expression) -> Expression:
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        return Const(ca + cb)
    if ca == 0:
        return b
    if cb == 0:
        return a
    return Add(a, b)


def sub(a: Expression, b: Expression) -> Expression:
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        return Const(ca - cb)
    if cb == 0:
        return a
    if ca == 0:
        return neg(b)
    return Sub(a, b)


def mul(a: Expression, b: Expression) -> Expression:
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        return Const(ca * cb)
    if ca == 0 or cb == 0:
        return ZERO
    if ca == 1:
        return b
    if cb == 1:
        return a
    return Mul(a, b)


def power(a: Expression, k: int) -> Expression:
    ca = _const(a)
    if ca is not None:
        return Const(ca**k)
    if k == 0:
        return ONE
    if k == 1:
        return a
    return Pow(a, k)


# --------------------------------------------------------------------------
# Printing

_PREC = {Add: 1, Sub: 1, Mul: 2, Neg: 3, Pow: 4}


def _format_const(c: Fraction) -> str:
    if c.denominator == 1:
        return str(c.numerator)
    return f"{c.numerator}/{c.denominator}"


def _format(e: Expression, parent: int, right: bool = False) -> str:
    if isinstance(e, Const):
        text = _format_const(abs(e.value))
        # Fraction literals bind like a product; negative constants like unary minus.
        if e.value < 0:
            text = "-" + text
            prec = 3 if e.value.denominator == 1 else 2
        else:
            prec = 5 if e.value.denominator == 1 else 2
        return f"({text})" if prec < parent or (right and prec == parent) else text
    if isinstance(e, Var):
        return e.name
    prec = _PREC[type(e)]
    if isinstance(e, Neg):
        text = "-" + _format(e.arg, prec)
    elif isinstance(e, Pow):
        text = f"{_format(e.base, prec + 1)}^{e.exponent}"
    else:
        op = {Add: " + ", Sub: " - ", Mul: "*"}[type(e)]
        text = _format(e.left, prec) + op + _format(e.right, prec, right=True)
    if prec < parent or (right and prec == parent):
        return f"({text})"
    return text


# --------------------------------------------------------------------------
# Parsing

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?(?:/\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*^()])"
    r")"
)


@dataclass
class _Token:
    kind: str
    text: str
    offset: int  # byte offset


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    byte_pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            skipped = len(text[pos:]) - len(text[pos:].lstrip())
            start = pos + skipped
            raise ExprSyntaxError(
                f"unexpected character {text[start]!r}",
                byte_pos + len(text[pos:start].encode()),
            )
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(_Token(kind, m.group(kind), byte_pos + len(text[pos:start].encode())))
        byte_pos += len(text[pos:m.end()].encode())
        pos = m.end()
    tokens.append(_Token("end", "", len(text.encode())))
    return tokens


class _Parser:
    def __init__(self, text: str, symbols: frozenset[str] | None):
        self.tokens = _tokenize(text)
        self.i = 0
        self.symbols = symbols

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> None:
        tok = self.take()
        if tok.text != text:
            raise ExprSyntaxError(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok.offset)

    def parse(self) -> Expression:
        e = self.sum()
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.offset)
        return e

    def sum(self) -> Expression:
        e = self.product()
        while self.peek().text in ("+", "-"):
            op = self.take().text
            rhs = self.product()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def product(self) -> Expression:
        e = self.unary()
        while self.peek().text == "*":
            self.take()
            e = Mul(e, self.unary())
        return e

    def unary(self) -> Expression:
        if self.peek().text == "-":
            self.take()
            return Neg(self.unary())
        if self.peek().text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expression:
        e = self.atom()
        while self.peek().text == "^":
            self.take()
            tok = self.take()
            if tok.kind != "num" or not tok.text.isdigit():
                raise ExprSyntaxError("exponent must be a nonnegative integer literal", tok.offset)
            e = Pow(e, int(tok.text))
        return e

    def atom(self) -> Expression:
        tok = self.take()
        if tok.kind == "num":
            return Const(Fraction(tok.text))
        if tok.kind == "ident":
            if self.symbols is not None and tok.text not in self.symbols:
                raise UndeclaredIdentifierError(tok.text)
            return Var(tok.text)
        if tok.text == "(":
            e = self.sum()
            self.expect(")")
            return e
        raise ExprSyntaxError(f"unexpected {tok.text or 'end of input'!r}", tok.offset)


def parse_expr(text: str, symbols: Iterable[str] | None = None) -> Expression:
    """Parse ``text`` into an expression tree.

    ``symbols`` lists the declared identifiers; any other identifier raises
    :class:`UndeclaredIdentifierError`.  ``None`` accepts every identifier.
    """
    return _Parser(text, None if symbols is None else frozenset(symbols)).parse()


# --------------------------------------------------------------------------
# Calculus and evaluation

def derivative_expr(e: Expression, var: str) -> Expression:
    """Symbolic partial derivative of ``e`` with respect to ``var``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return neg(derivative_expr(e.arg, var))
    if isinstance(e, Add):
        return add(derivative_expr(e.left, var), derivative_expr(e.right, var))
    if isinstance(e, Sub):
        return sub(derivative_expr(e.left, var), derivative_expr(e.right, var))
    if isinstance(e, Mul):
        return add(
            mul(derivative_expr(e.left, var), e.right),
            mul(e.left, derivative_expr(e.right, var)),
        )
    if isinstance(e, Pow):
        if e.exponent == 0:
            return ZERO
        inner = derivative_expr(e.base, var)
        return mul(mul(Const(Fraction(e.exponent)), power(e.base, e.exponent - 1)), inner)
    raise TypeError(f"not an expression: {e!r}")


def _evaluate(e: Expression, env: Mapping[str, object], one):
    if isinstance(e, Const):
        return e.value if one == 1 and isinstance(one, Fraction) else float(e.value)
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnboundIdentifierError(e.name) from None
    if isinstance(e, Neg):
        return -_evaluate(e.arg, env, one)
    if isinstance(e, Add):
        return _evaluate(e.left, env, one) + _evaluate(e.right, env, one)
    if isinstance(e, Sub):
        return _evaluate(e.left, env, one) - _evaluate(e.right, env, one)
    if isinstance(e, Mul):
        return _evaluate(e.left, env, one) * _evaluate(e.right, env, one)
    if isinstance(e, Pow):
        base = _evaluate(e.base, env, one)
        return one if e.exponent == 0 else base**e.exponent
    raise TypeError(f"not an expression: {e!r}")


def eval_expr(e: Expression, bindings: Mapping[str, float]) -> float:
    """Evaluate in floating point."""
    env = {k: float(v) for k, v in bindings.items()}
    return float(_evaluate(e, env, 1.0))


def eval_exact(e: Expression, bindings: Mapping[str, Fraction | float | int]) -> Fraction:
    """Evaluate with exact rational arithmetic (floats are converted exactly)."""
    env = {k: Fraction(v) for k, v in bindings.items()}
    return Fraction(_evaluate(e, env, Fraction(1)))


def to_polynomial(e: Expression, order: Sequence[str]) -> dict[tuple[int, ...], Fraction]:
    """Expanded monomial form ``{exponent tuple: coefficient}`` over ``order``."""
    index = {name: i for i, name in enumerate(order)}
    n = len(order)

    def p_add(a, b, sign=1):
        out = dict(a)
        for k, c in b.items():
            out[k] = out.get(k, Fraction(0)) + sign * c
            if out[k] == 0:
                del out[k]
        return out

    def p_mul(a, b):
        out: dict[tuple[int, ...], Fraction] = {}
        for ka, ca in a.items():
            for kb, cb in b.items():
                k = tuple(x + y for x, y in zip(ka, kb))
                out[k] = out.get(k, Fraction(0)) + ca * cb
                if out[k] == 0:
                    del out[k]
        return out

    def walk(node):
        if isinstance(node, Const):
            return {(0,) * n: node.value} if node.value != 0 else {}
        if isinstance(node, Var):
            if node.name not in index:
                raise UndeclaredIdentifierError(node.name)
            k = [0] * n
            k[index[node.name]] = 1
            return {tuple(k): Fraction(1)}
        if isinstance(node, Neg):
            return {k: -c for k, c in walk(node.arg).items()}
        if isinstance(node, Add):
            return p_add(walk(node.left), walk(node.right))
        if isinstance(node, Sub):
            return p_add(walk(node.left), walk(node.right), -1)
        if isinstance(node, Mul):
            return p_mul(walk(node.left), walk(node.right))
        if isinstance(node, Pow):
            base = walk(node.base)
            out = {(0,) * n: Fraction(1)}
            for _ in range(node.exponent):
                out = p_mul(out, base)
            return out
        raise TypeError(f"not an expression: {node!r}")

    return walk(e)


def _python_source(e: Expression, index: Mapping[str, int]) -> str:
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return f"v[{index[e.name]}]"
    if isinstance(e, Neg):
        return f"(-{_python_source(e.arg, index)})"
    if isinstance(e, Pow):
        return f"({_python_source(e.base, index)}**{e.exponent})"
    op = {Add: "+", Sub: "-", Mul: "*"}[type(e)]
    return f"({_python_source(e.left, index)}{op}{_python_source(e.right, index)})"


def compile_vector(exprs: Sequence[Expression], order: Sequence[str], shape: tuple[int, ...] | None = None):
    """Compile expressions into ``f(v) -> ndarray`` with ``v`` ordered as ``order``."""
    index = {name: i for i, name in enumerate(order)}
    body = ", ".join(_python_source(e, index) for e in exprs)
    fn = eval(f"lambda v: ({body}{',' if len(exprs) == 1 else ''})", {})  # noqa: S307
    target = shape if shape is not None else (len(exprs),)

    def f(v):
        return np.array(fn(v), dtype=float).reshape(target)

    return f


# --------------------------------------------------------------------------
# Problems

@dataclass(frozen=True)
class ProblemSpec:
    """A parametric variational system 0 ∈ H(p, x) + N̂_Γ(x), Γ = g⁻¹(D)."""

    name: str
    parameters: tuple[str, ...]
    variables: tuple[str, ...]
    H: tuple[Expression, ...]
    g: tuple[Expression, ...]
    cone: ConeSpec
    p_ref: tuple[float, ...]
    x_ref: tuple[float, ...]

    def __post_init__(self):
        l, n, s = len(self.parameters), len(self.variables), len(self.g)
        names = self.parameters + self.variables
        if len(set(names)) != len(names):
            raise ProblemFormatError("parameter and variable names must be distinct")
        if len(self.H) != n:
            raise ProblemFormatError(f"H has {len(self.H)} components, expected {n} (one per variable)")
        if self.cone.dim != s:
            raise ProblemFormatError(f"cone dimension {self.cone.dim} does not match {s} components of g")
        if len(self.p_ref) != l or len(self.x_ref) != n:
            raise ProblemFormatError("reference point dimensions do not match parameters/variables")
        declared = set(names)
        for e in self.H:
            for name in e.identifiers() - declared:
                raise UndeclaredIdentifierError(name)
        for e in self.g:
            for name in e.identifiers():
                if name not in self.variables:
                    if name in self.parameters:
                        raise ProblemFormatError(f"g may depend on variables only; found parameter {name!r}")
                    raise UndeclaredIdentifierError(name)

    @property
    def l(self) -> int:
        return len(self.parameters)

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def s(self) -> int:
        return len(self.g)


def _require(data: Mapping, key: str, kind: type):
    if key not in data:
        raise ProblemFormatError(f"missing key {key!r}")
    value = data[key]
    if not isinstance(value, kind):
        raise ProblemFormatError(f"key {key!r} must be of type {kind.__name__}")
    return value


def _numbers(values, key: str) -> tuple[float, ...]:
    if not isinstance(values, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in values
    ):
        raise ProblemFormatError(f"{key} must be an array of numbers")
    return tuple(float(v) for v in values)


def problem_from_dict(data: Mapping) -> ProblemSpec:
    if not isinstance(data, Mapping):
        raise ProblemFormatError("problem must be a JSON object")
    name = _require(data, "name", str)
    params = tuple(_require(data, "parameters", list))
    variables = tuple(_require(data, "variables", list))
    for ident in params + variables:
        if not isinstance(ident, str) or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", ident):
            raise ProblemFormatError(f"invalid identifier {ident!r}")
    symbols = params + variables

    def parse_all(key: str, allowed) -> tuple[Expression, ...]:
        out = []
        for i, text in enumerate(_require(data, key, list)):
            if not isinstance(text, str):
                raise ProblemFormatError(f"{key}[{i}] must be a string")
            try:
                out.append(parse_expr(text, allowed))
            except (ExprSyntaxError, UndeclaredIdentifierError) as exc:
                raise ProblemFormatError(f"{key}[{i}]: {exc}") from exc
        return tuple(out)

    H = parse_all("H", symbols)
    g = parse_all("g", symbols)
    try:
        cone = cone_from_json(_require(data, "cone", dict))
    except ValueError as exc:
        raise ProblemFormatError(f"cone: {exc}") from exc
    ref = _require(data, "reference", dict)
    p_ref = _numbers(ref.get("p"), "reference.p")
    x_ref = _numbers(ref.get("x"), "reference.x")
    try:
        return ProblemSpec(name, params, variables, H, g, cone, p_ref, x_ref)
    except UndeclaredIdentifierError as exc:
        raise ProblemFormatError(str(exc)) from exc


def problem_to_dict(spec: ProblemSpec) -> dict:
    return {
        "name": spec.name,
        "parameters": list(spec.parameters),
        "variables": list(spec.variables),
        "H": [str(e) for e in spec.H],
        "g": [str(e) for e in spec.g],
        "cone": cone_to_json(spec.cone),
        "reference": {"p": list(spec.p_ref), "x": list(spec.x_ref)},
    }


def load_problem(path) -> ProblemSpec:
    """Read a problem file; malformed JSON is reported with line and column."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ProblemFormatError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return problem_from_dict(data)
    except ProblemFormatError as exc:
        raise ProblemFormatError(f"{path}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class ReferenceData:
    """Derivatives of H and g at the reference point (p̄, x̄).

    ``multiplier`` and ``reduction`` stay ``None`` until the chain rules fill
    them in (see :func:`aubin.chain.prepare_reference`).
    """

    name: str
    p: np.ndarray
    x: np.ndarray
    H_value: np.ndarray
    dHp: np.ndarray  # n × l
    dHx: np.ndarray  # n × n
    g_value: np.ndarray  # s
    jac_g: np.ndarray  # s × n
    hess_g: np.ndarray  # s × n × n
    cone: ConeSpec
    multiplier: np.ndarray | None = None
    reduction: object | None = None
    extra: dict = field(default_factory=dict)

    @property
    def x_star(self) -> np.ndarray:
        return -self.H_value

    @property
    def l(self) -> int:
        return self.dHp.shape[1]

    @property
    def n(self) -> int:
        return self.dHx.shape[0]

    @property
    def s(self) -> int:
        return self.jac_g.shape[0]

    def hess_contraction(self, lam) -> np.ndarray:
        """∇²⟨λ, g⟩(x̄)."""
        lam = np.asarray(lam, dtype=float)
        if self.s == 0:
            return np.zeros((self.n, self.n))
        return np.tensordot(lam, self.hess_g, axes=1)

    @property
    def lagrangian_hessian(self) -> np.ndarray:
        """∇ₓ𝓛 = ∇ₓH + ∇²⟨λ̄, g⟩ at the reference point."""
        if self.multiplier is None:
            raise ValueError("multiplier not recovered yet")
        return self.dHx + self.hess_contraction(self.multiplier)


def assemble_reference(spec: ProblemSpec) -> ReferenceData:
    """Evaluate H, g and their first and second derivatives exactly at the reference point."""
    env = {name: Fraction(v) for name, v in zip(spec.parameters, spec.p_ref)}
    env.update({name: Fraction(v) for name, v in zip(spec.variables, spec.x_ref)})
    ev = lambda e: float(eval_exact(e, env))  # noqa: E731
    l, n, s = spec.l, spec.n, spec.s

    H_value = np.array([ev(h) for h in spec.H], dtype=float)
    dHp = np.array([[ev(derivative_expr(h, p)) for p in spec.parameters] for h in spec.H], dtype=float).reshape(n, l)
    dHx = np.array([[ev(derivative_expr(h, x)) for x in spec.variables] for h in spec.H], dtype=float).reshape(n, n)
    g_value = np.array([ev(gj) for gj in spec.g], dtype=float)
    grads = [[derivative_expr(gj, x) for x in spec.variables] for gj in spec.g]
    jac_g = np.array([[ev(d) for d in row] for row in grads], dtype=float).reshape(s, n)
    hess_g = np.array(
        [[[ev(derivative_expr(d, y)) for y in spec.variables] for d in row] for row in grads],
        dtype=float,
    ).reshape(s, n, n)
    return ReferenceData(
        name=spec.name,
        p=np.array(spec.p_ref, dtype=float),
        x=np.array(spec.x_ref, dtype=float),
        H_value=H_value,
        dHp=dHp,
        dHx=dHx,
        g_value=g_value,
        jac_g=jac_g,
        hess_g=hess_g,
        cone=spec.cone,
    )
