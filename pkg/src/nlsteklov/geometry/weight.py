"""Positive weight fields a(x) for the operator div(a grad u)."""
from __future__ import annotations

import ast

import numpy as np


class WeightError(ValueError):
    pass


_FUNCS = {
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt,
    "sin": np.sin, "cos": np.cos, "tanh": np.tanh, "cosh": np.cosh, "sinh": np.sinh,
}
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_UNARY = (ast.UAdd, ast.USub)


def _validate(node):
    if isinstance(node, ast.Expression):
        return _validate(node.body)
    if isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
        _validate(node.left)
        _validate(node.right)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, _UNARY):
        _validate(node.operand)
    elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        pass
    elif isinstance(node, ast.Name) and node.id in ("x1", "x2", "pi"):
        pass
    elif (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
          and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
        _validate(node.args[0])
    else:
        raise WeightError(f"disallowed syntax in weight expression: {ast.dump(node)[:60]}")


def _compile(expr: str):
    try:
        tree = ast.parse(expr.strip(), mode="eval")
    except SyntaxError as exc:
        raise WeightError(f"cannot parse weight expression {expr!r}: {exc.msg}") from None
    _validate(tree)
    code = compile(tree, "<weight>", "eval")
    env = {"__builtins__": {}, "pi": np.pi, **_FUNCS}

    def f(x1, x2):
        return eval(code, env, {"x1": x1, "x2": x2})

    return f


class WeightField:
    """a(x) with gradient and declared bounds a0 <= a <= a1.

    ``func`` maps coordinate arrays (x1, x2) to values. If ``grad`` is not
    given the gradient is computed by complex-step differentiation, which is
    exact to rounding for the analytic expressions accepted here.
    """

    def __init__(self, func, grad=None, a0=None, a1=None, name="custom"):
        self._f = func
        self._g = grad
        self.a0 = a0
        self.a1 = a1
        self.name = name

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        v = self._f(x[..., 0], x[..., 1])
        return np.broadcast_to(np.asarray(v, dtype=float), x.shape[:-1]).copy()

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if self._g is not None:
            g1, g2 = self._g(x[..., 0], x[..., 1])
        else:
            h = 1e-30
            g1 = np.imag(self._f(x[..., 0] + 1j * h, x[..., 1] + 0j)) / h
            g2 = np.imag(self._f(x[..., 0] + 0j, x[..., 1] + 1j * h)) / h
        shape = x.shape[:-1]
        return np.stack([np.broadcast_to(g1, shape), np.broadcast_to(g2, shape)], axis=-1).astype(float)

    def grad_log(self, x):
        return self.grad(x) / self(x)[..., None]

    @property
    def is_constant(self):
        return self.name.startswith("const")

    def with_bounds(self, points):
        """Copy with a0, a1 measured on a point sample (e.g. mesh nodes)."""
        v = self(points)
        return WeightField(self._f, self._g, float(v.min()), float(v.max()), self.name)

    def check_bounds(self, points):
        v = self(points)
        if not np.all(np.isfinite(v)) or v.min() <= 0:
            raise WeightError(f"weight {self.name} not positive on sample (min {v.min():.3e})")
        if self.a0 is not None and v.min() < self.a0 * (1 - 1e-12):
            raise WeightError(f"a < a0 on sample: {v.min()} < {self.a0}")
        if self.a1 is not None and v.max() > self.a1 * (1 + 1e-12):
            raise WeightError(f"a > a1 on sample: {v.max()} > {self.a1}")
        return float(v.min()), float(v.max())

    def grad_defect(self, points, h=1e-6):
        """Max deviation between grad and central differences of a."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        e1, e2 = np.array([h, 0.0]), np.array([0.0, h])
        fd = np.stack([(self(x + e1) - self(x - e1)) / (2 * h),
                       (self(x + e2) - self(x - e2)) / (2 * h)], axis=-1)
        return float(np.max(np.abs(fd - self.grad(x))))

    def shifted(self, d):
        """Weight translated with the domain: x -> a(x - d)."""
        d = np.asarray(d, dtype=float)
        f, g = self._f, self._g

        def fs(x1, x2):
            return f(x1 - d[0], x2 - d[1])

        gs = None if g is None else (lambda x1, x2: g(x1 - d[0], x2 - d[1]))
        return WeightField(fs, gs, self.a0, self.a1, self.name)

    def __repr__(self):
        return f"WeightField({self.name}, a0={self.a0}, a1={self.a1})"


def constant(c=1.0) -> WeightField:
    c = float(c)
    if c <= 0:
        raise WeightError("constant weight must be positive")
    return WeightField(lambda x1, x2: c + 0 * x1,
                       lambda x1, x2: (0 * x1, 0 * x1), c, c, name=f"const:{c!r}")


def linear_x1() -> WeightField:
    """a(x) = x1, the axisymmetric reduction weight."""
    return WeightField(lambda x1, x2: x1 + 0 * x2,
                       lambda x1, x2: (1 + 0 * x1, 0 * x1), name="x1")


def from_expression(expr: str) -> WeightField:
    """Weight from a restricted arithmetic expression in x1, x2.

    >>> from_expression("1 + 0.5*x1**2")(np.array([2.0, 0.0]))
    array(3.)
    """
    key = expr.strip().lower()
    if key in ("one", "1", "1.0"):
        return constant(1.0)
    if key == "x1":
        return linear_x1()
    return WeightField(_compile(expr), name=f"expr:{expr.strip()}")
