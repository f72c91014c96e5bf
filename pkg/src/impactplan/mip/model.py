"""Mixed-integer model building: linear expressions, constraints, big-M helpers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

INF = math.inf


class MipError(ValueError):
    pass


class Expr:
    """Affine expression sum_i a_i x_i + const over model variables."""
    __slots__ = ("terms", "const")
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, terms=None, const: float = 0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def lift(x) -> "Expr":
        if isinstance(x, Expr):
            return x
        return Expr(None, float(x))

    def copy(self):
        return Expr(self.terms, self.const)

    def _add(self, other, sign):
        if isinstance(other, np.ndarray):
            return _elementwise(other, lambda o: self._add(o, sign))
        out = Expr(self.terms, self.const)
        if isinstance(other, Expr):
            t = out.terms
            for k, v in other.terms.items():
                t[k] = t.get(k, 0.0) + sign * v
            out.const += sign * other.const
        else:
            out.const += sign * float(other)
        return out

    def __add__(self, other):
        return self._add(other, 1.0)

    def __radd__(self, other):
        return self._add(other, 1.0)

    def __sub__(self, other):
        return self._add(other, -1.0)

    def __rsub__(self, other):
        return (-self)._add(other, 1.0)

    def __neg__(self):
        return Expr({k: -v for k, v in self.terms.items()}, -self.const)

    def __pos__(self):
        return self

    def __mul__(self, k):
        if isinstance(k, np.ndarray):
            return _elementwise(k, lambda o: self * o)
        if isinstance(k, Expr):
            if k.terms and self.terms:
                raise MipError("product of two variable expressions is not linear")
            if not k.terms:
                k = k.const
            else:
                return k * self.const
        k = float(k)
        if k == 0.0:
            return Expr(None, 0.0)
        return Expr({i: k * v for i, v in self.terms.items()}, k * self.const)

    __rmul__ = __mul__

    def __truediv__(self, k):
        return self * (1.0 / float(k))

    def __le__(self, other):
        return Constraint(self - other, "<=")

    def __ge__(self, other):
        return Constraint(self - other, ">=")

    def __eq__(self, other):
        return Constraint(self - other, "==")

    __hash__ = None

    def value(self, x) -> float:
        return self.const + sum(v * x[i] for i, v in self.terms.items())

    def __repr__(self):
        parts = [f"{v:+g}*x{i}" for i, v in sorted(self.terms.items())]
        return " ".join(parts + [f"{self.const:+g}"])


def _elementwise(arr, fn):
    out = np.empty(arr.shape, dtype=object)
    for idx in np.ndindex(arr.shape):
        out[idx] = fn(arr[idx])
    return out


def lin_sum(items: Iterable) -> Expr:
    terms, const = {}, 0.0
    for e in items:
        if isinstance(e, Expr):
            for k, v in e.terms.items():
                terms[k] = terms.get(k, 0.0) + v
            const += e.const
        else:
            const += float(e)
    return Expr(terms, const)


@dataclass
class Constraint:
    """expr (sense) 0."""
    expr: Expr
    sense: str

    def __post_init__(self):
        if self.sense not in ("<=", ">=", "=="):
            raise MipError(f"bad constraint sense {self.sense!r}")
        self.expr = Expr.lift(self.expr)

    def normalized(self):
        """Split into a list of 'a.x <= b' pieces (a dict, b float)."""
        e = self.expr
        if self.sense == "<=":
            return [(e.terms, -e.const)]
        if self.sense == ">=":
            return [({k: -v for k, v in e.terms.items()}, e.const)]
        return [(e.terms, -e.const), ({k: -v for k, v in e.terms.items()}, e.const)]

    def violation(self, x) -> float:
        v = self.expr.value(x)
        if self.sense == "<=":
            return max(v, 0.0)
        if self.sense == ">=":
            return max(-v, 0.0)
        return abs(v)


@dataclass
class MipSolution:
    status: str                     # optimal | infeasible | unbounded | time_limit | error
    x: np.ndarray | None = None
    objective: float = math.nan
    bound: float = math.nan
    gap: float = math.nan
    nodes: int = 0
    warnings: int = 0
    message: str = ""
    node_log: list = field(default_factory=list)

    @property
    def has_solution(self) -> bool:
        return self.x is not None

    def value(self, e) -> float:
        if self.x is None:
            raise MipError("solution has no assignment")
        if isinstance(e, np.ndarray):
            return np.vectorize(lambda z: self.value(z), otypes=[float])(e)
        return Expr.lift(e).value(self.x)

    @property
    def assignment(self) -> dict:
        return {} if self.x is None else {i: float(v) for i, v in enumerate(self.x)}


class MipModel:
    """Variables with bounds, linear rows, objective c.x + 1/2 x.Q.x + c0."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.lb: list = []
        self.ub: list = []
        self.kind: list = []
        self.names: list = []
        self.rows: list = []            # (terms dict, sense, rhs, name)
        self.c: dict = {}
        self.c0 = 0.0
        self.Q: dict = {}               # (i, j) with i <= j -> Q_ij
        self.sense = "min"

    # ---- variables
    @property
    def n_vars(self) -> int:
        return len(self.lb)

    def add_var(self, lb: float = 0.0, ub: float = INF, kind: str = "continuous", name=None) -> Expr:
        if kind not in ("continuous", "binary"):
            raise MipError(f"unknown variable kind {kind!r}")
        if kind == "binary":
            lb, ub = max(0.0, lb), min(1.0, ub)
        if lb > ub:
            raise MipError(f"variable bounds [{lb}, {ub}] are empty")
        i = len(self.lb)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.kind.append(kind)
        self.names.append(name or f"x{i}")
        return Expr({i: 1.0})

    def add_binary(self, name=None) -> Expr:
        return self.add_var(0.0, 1.0, "binary", name)

    def add_vars(self, shape, lb=0.0, ub=INF, kind="continuous", name=None) -> np.ndarray:
        out = np.empty(shape, dtype=object)
        for k, idx in enumerate(np.ndindex(out.shape)):
            nm = None if name is None else f"{name}{'_'.join(map(str, idx)) if idx else ''}"
            out[idx] = self.add_var(lb, ub, kind, nm)
        return out

    @property
    def binaries(self) -> list:
        return [i for i, k in enumerate(self.kind) if k == "binary"]

    @staticmethod
    def var_index(e: Expr) -> int:
        if len(e.terms) != 1 or e.const != 0.0 or next(iter(e.terms.values())) != 1.0:
            raise MipError("expression is not a single variable")
        return next(iter(e.terms))

    # ---- constraints
    def add(self, cons, name=None):
        if isinstance(cons, (list, tuple, np.ndarray)):
            for c in np.ravel(np.asarray(cons, dtype=object)):
                self.add(c, name)
            return
        if isinstance(cons, (bool, np.bool_)):
            if not cons:
                raise MipError("trivially false constraint")
            return
        if not isinstance(cons, Constraint):
            raise MipError(f"not a constraint: {cons!r}")
        terms = {k: v for k, v in cons.expr.terms.items() if v != 0.0}
        for k in terms:
            if not 0 <= k < self.n_vars:
                raise MipError(f"constraint references undeclared variable {k}")
        rhs = -cons.expr.const
        if not terms:
            ok = {"<=": 0.0 <= rhs + 1e-12, ">=": 0.0 >= rhs - 1e-12, "==": abs(rhs) <= 1e-12}[cons.sense]
            if not ok:
                raise MipError(f"constant constraint is infeasible ({name or 'unnamed'})")
            return
        self.rows.append((terms, cons.sense, rhs, name))

    def le(self, lhs, rhs, name=None):
        self.add(Expr.lift(lhs) <= rhs, name)

    def ge(self, lhs, rhs, name=None):
        self.add(Expr.lift(lhs) >= rhs, name)

    def eq(self, lhs, rhs, name=None):
        self.add(Expr.lift(lhs) == rhs, name)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    # ---- objective
    def set_objective(self, expr, sense: str = "min"):
        if sense not in ("min", "max"):
            raise MipError(f"bad objective sense {sense!r}")
        e = Expr.lift(expr)
        self.c = dict(e.terms)
        self.c0 = e.const
        self.Q = {}
        self.sense = sense

    def add_objective(self, expr):
        e = Expr.lift(expr)
        for k, v in e.terms.items():
            self.c[k] = self.c.get(k, 0.0) + v
        self.c0 += e.const

    def add_squares(self, exprs, weight: float = 1.0):
        """Add weight * sum e^2 to the objective (a convex term when
        minimizing)."""
        w = float(weight)
        if w < 0:
            raise MipError("square weight must be non-negative")
        for e in np.ravel(np.asarray(exprs, dtype=object)):
            e = Expr.lift(e)
            items = sorted(e.terms.items())
            for a, (i, vi) in enumerate(items):
                for j, vj in items[a:]:
                    self.Q[(i, j)] = self.Q.get((i, j), 0.0) + 2 * w * vi * vj
                self.c[i] = self.c.get(i, 0.0) + 2 * w * e.const * vi
            self.c0 += w * e.const ** 2

    def add_quadratic(self, i: int, j: int, q: float):
        """Add q to Q_ij (and Q_ji) of the 1/2 x.Q.x term."""
        key = (min(i, j), max(i, j))
        self.Q[key] = self.Q.get(key, 0.0) + float(q)

    @property
    def is_quadratic(self) -> bool:
        return any(v != 0.0 for v in self.Q.values())

    def objective_value(self, x) -> float:
        x = np.asarray(x, float)
        v = self.c0 + sum(c * x[i] for i, c in self.c.items())
        for (i, j), q in self.Q.items():
            v += 0.5 * q * x[i] * x[j] * (1.0 if i == j else 2.0)
        return float(v)

    def check_psd(self, tol: float = 1e-9):
        """Cholesky test of sign*Q (min: Q, max: -Q) with a pivot tolerance."""
        if not self.Q:
            return
        idx = sorted({i for k in self.Q for i in k})
        pos = {v: k for k, v in enumerate(idx)}
        M = np.zeros((len(idx), len(idx)))
        for (i, j), q in self.Q.items():
            M[pos[i], pos[j]] += q
            if i != j:
                M[pos[j], pos[i]] += q
        if self.sense == "max":
            M = -M
        shift = tol * max(1.0, float(np.max(np.abs(np.diag(M)))))
        try:
            np.linalg.cholesky(M + shift * np.eye(len(idx)))
        except np.linalg.LinAlgError as exc:
            raise MipError("objective Hessian is not positive semidefinite for its sense") from exc

    # ---- dense/sparse views
    def arrays(self, dense: bool = True):
        """Return dict with c, c0, Q, A_ub, b_ub, A_eq, b_eq, lb, ub, integrality.
        The objective is always for minimization (negated for max)."""
        n = self.n_vars
        sgn = -1.0 if self.sense == "max" else 1.0
        c = np.zeros(n)
        for k, v in self.c.items():
            c[k] += sgn * v
        ub_r, ub_c, ub_v, b_ub = [], [], [], []
        eq_r, eq_c, eq_v, b_eq = [], [], [], []
        for terms, sense, rhs, _ in self.rows:
            if sense == "==":
                r = len(b_eq)
                eq_r += [r] * len(terms)
                eq_c += list(terms.keys())
                eq_v += list(terms.values())
                b_eq.append(rhs)
            else:
                s = 1.0 if sense == "<=" else -1.0
                r = len(b_ub)
                ub_r += [r] * len(terms)
                ub_c += list(terms.keys())
                ub_v += [s * v for v in terms.values()]
                b_ub.append(s * rhs)
        A_ub = sp.csr_matrix((ub_v, (ub_r, ub_c)), shape=(len(b_ub), n))
        A_eq = sp.csr_matrix((eq_v, (eq_r, eq_c)), shape=(len(b_eq), n))
        qi, qj, qv = [], [], []
        for (i, j), q in self.Q.items():
            qi.append(i); qj.append(j); qv.append(sgn * q)
            if i != j:
                qi.append(j); qj.append(i); qv.append(sgn * q)
        Q = sp.csr_matrix((qv, (qi, qj)), shape=(n, n))
        out = dict(c=c, c0=sgn * self.c0, Q=Q, A_ub=A_ub, b_ub=np.array(b_ub, float),
                   A_eq=A_eq, b_eq=np.array(b_eq, float), lb=np.array(self.lb, float),
                   ub=np.array(self.ub, float),
                   integrality=np.array([k == "binary" for k in self.kind], dtype=bool),
                   sign=sgn)
        if dense:
            for k in ("A_ub", "A_eq", "Q"):
                out[k] = out[k].toarray()
        return out

    def copy(self) -> "MipModel":
        m = MipModel(self.name)
        m.lb, m.ub, m.kind, m.names = list(self.lb), list(self.ub), list(self.kind), list(self.names)
        m.rows = list(self.rows)
        m.c, m.c0, m.Q, m.sense = dict(self.c), self.c0, dict(self.Q), self.sense
        return m

    def fix(self, values: dict) -> "MipModel":
        """Copy with the given variables fixed (lb = ub = value)."""
        m = self.copy()
        for i, v in values.items():
            m.lb[i] = m.ub[i] = float(v)
        return m

    # ---- interval arithmetic
    def expr_bounds(self, e: Expr):
        lo = hi = e.const
        for k, v in e.terms.items():
            a, b = v * self.lb[k], v * self.ub[k]
            if v < 0:
                a, b = b, a
            lo += a if v != 0 else 0.0
            hi += b if v != 0 else 0.0
        return lo, hi


def check_solution(model: MipModel, x, tol: float = 1e-6):
    """Independent feasibility re-check; returns list of (what, violation)."""
    x = np.asarray(x, float)
    bad = []
    for i in range(model.n_vars):
        if x[i] < model.lb[i] - tol or x[i] > model.ub[i] + tol:
            bad.append((f"bound {model.names[i]}", max(model.lb[i] - x[i], x[i] - model.ub[i])))
        if model.kind[i] == "binary" and abs(x[i] - round(x[i])) > tol:
            bad.append((f"integrality {model.names[i]}", abs(x[i] - round(x[i]))))
    for r, (terms, sense, rhs, name) in enumerate(model.rows):
        lhs = sum(v * x[k] for k, v in terms.items())
        viol = {"<=": lhs - rhs, ">=": rhs - lhs, "==": abs(lhs - rhs)}[sense]
        scale = max(1.0, abs(rhs))
        if viol > tol * scale:
            bad.append((name or f"row {r}", viol))
    return bad


def add_implication(model: MipModel, gate, cons: Constraint, M: float | None = None, name=None):
    """gate = 1 forces cons; gate is a binary or an affine expression with
    values in [0, 1]. Big-M defaults to the interval-arithmetic bound of the
    violation over the variable box."""
    gate = Expr.lift(gate)
    pieces = cons.normalized()
    for terms, rhs in pieces:
        e = Expr(terms, -rhs)
        if M is None:
            _, hi = model.expr_bounds(e)
            if not math.isfinite(hi):
                raise MipError("cannot derive big-M from unbounded variables; pass M explicitly")
            Mi = max(hi, 0.0)
        else:
            Mi = float(M)
            if not Mi > 0:
                raise MipError(f"big-M must be positive, got {M}")
        # a.x - b <= M (1 - gate)
        model.add(e + Mi * gate <= Mi, name)


def add_disjunction(model: MipModel, groups: Sequence, M: float | None = None, name=None) -> list:
    """At least one constraint group holds. Returns one binary per group."""
    if len(groups) == 0:
        raise MipError("disjunction needs at least one group")
    zs = []
    for k, g in enumerate(groups):
        z = model.add_binary(None if name is None else f"{name}_d{k}")
        for cons in (g if isinstance(g, (list, tuple)) else [g]):
            add_implication(model, z, cons, M, name)
        zs.append(z)
    model.add(lin_sum(zs) >= 1, name)
    return zs
