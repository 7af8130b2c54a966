"""Minimal arithmetic expression parser for mobility and kernel formulas.

Grammar (infix, usual precedence, ``^`` is right-associative power)::

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Allowed functions: ``min``, ``max``, ``exp``, ``sqrt``, ``abs``.  Variable
names are restricted to the whitelist passed at compile time (``r``, ``s``
for mobilities, ``d`` for kernels).  All operations are numpy-vectorized.
"""

import re

import numpy as np

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?|([A-Za-z_]\w*)|(\*\*|[()+\-*/^,]))")

_FUNCTIONS = {
    "min": lambda *a: np.minimum.reduce(np.broadcast_arrays(*a)) if len(a) > 1 else a[0],
    "max": lambda *a: np.maximum.reduce(np.broadcast_arrays(*a)) if len(a) > 1 else a[0],
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
}


class ExpressionError(ValueError):
    """Raised for malformed or disallowed expressions."""


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None or match.end() == pos:
            if text[pos:].strip():
                raise ExpressionError(f"unexpected character at position {pos}: {text[pos:]!r}")
            break
        number, name, op = match.group(1), match.group(2), match.group(3)
        if number is not None:
            tokens.append(("num", float(match.group(0))))
        elif name is not None:
            tokens.append(("name", name))
        elif op is not None:
            tokens.append(("op", "^" if op == "**" else op))
        pos = match.end()
    tokens.append(("end", ""))
    return tokens


class _Parser:
    def __init__(self, tokens, variables):
        self.tokens = tokens
        self.pos = 0
        self.variables = variables

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, op):
        kind, value = self.advance()
        if kind != "op" or value != op:
            raise ExpressionError(f"expected {op!r}, got {value!r}")

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise ExpressionError(f"trailing input near {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            op = self.advance()[1]
            rhs = self.term()
            node = (np.add if op == "+" else np.subtract, node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            op = self.advance()[1]
            rhs = self.unary()
            node = (np.multiply if op == "*" else np.divide, node, rhs)
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.advance()
            return (np.negative, self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.advance()
            exponent = self.unary()
            return (np.power, base, exponent)
        return base

    def atom(self):
        kind, value = self.advance()
        if kind == "num":
            return ("const", value)
        if kind == "name":
            if self.peek() == ("op", "("):
                if value not in _FUNCTIONS:
                    raise ExpressionError(f"unknown function {value!r}")
                self.advance()
                args = [self.expr()]
                while self.peek() == ("op", ","):
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                return ("call", value, args)
            if value not in self.variables:
                raise ExpressionError(f"unknown variable {value!r} (allowed: {sorted(self.variables)})")
            return ("var", value)
        if (kind, value) == ("op", "("):
            node = self.expr()
            self.expect(")")
            return node
        raise ExpressionError(f"unexpected token {value!r}")


def _evaluate(node, env):
    tag = node[0]
    if tag == "const":
        return node[1]
    if tag == "var":
        return env[node[1]]
    if tag == "call":
        args = [_evaluate(arg, env) for arg in node[2]]
        return _FUNCTIONS[node[1]](*args)
    func = node[0]
    return func(*[_evaluate(child, env) for child in node[1:]])


def compile_expression(text, variables):
    """Compile ``text`` into a vectorized function of the named ``variables``.

    Parameters
    ----------
    text : str
        Expression using ``+ - * / ^``, ``min``/``max``/``exp``/``sqrt``/``abs``
        and the given variable names.
    variables : sequence of str
        Positional argument names, e.g. ``("r", "s")``.

    Returns
    -------
    callable
        Function taking one array per variable.
    """
    names = tuple(variables)
    tree = _Parser(_tokenize(text), set(names)).parse()

    def fn(*args):
        if len(args) != len(names):
            raise TypeError(f"expected {len(names)} arguments {names}, got {len(args)}")
        env = dict(zip(names, (np.asarray(a, dtype=float) for a in args)))
        out = _evaluate(tree, env)
        return np.asarray(out, dtype=float)

    fn.expression = text
    fn.variables = names
    return fn
