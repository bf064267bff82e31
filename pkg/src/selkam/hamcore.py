"""Symbolic Hamiltonians on T*T^n (n = 1, 2): parsing, derivatives, stepping.

The expression grammar is deliberately small so that evaluation is total on
phase space:

    expr   := ["+"|"-"] term (("+"|"-") term)*
    term   := factor (("*"|"/") factor)*
    factor := base ("^" integer)?
    base   := number | "pi" | ident | func "(" expr ")" | "(" expr ")"
    func   := "sin" | "cos" | "exp"
    ident  := "q" | "p" | "q1" | "q2" | "p1" | "p2"

Division is only allowed by constant subexpressions (no q- or p-dependence
in a denominator).  Analytic partial derivatives come from sympy; fast
vectorized evaluators are lambdified once at construction.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import sympy as sp

from .torus import wrap

__all__ = [
    "ExpressionError",
    "IntegratorError",
    "CotangentPoint",
    "HamiltonianSpec",
    "TonelliReport",
    "parse_hamiltonian",
    "tonelli_check",
    "flow_step",
    "shift_momentum",
]

MIDPOINT_TOL = 1e-12
MIDPOINT_MAX_ITERS = 50

_FUNCS = ("sin", "cos", "exp")
_IDENTS = {1: ("q", "p"), 2: ("q1", "q2", "p1", "p2")}


class ExpressionError(ValueError):
    """Parse or validation failure; carries the source offset."""

    def __init__(self, message, position):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class IntegratorError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float
    text: str


@dataclass(frozen=True)
class Pi:
    pass


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Bin:
    op: str
    lhs: object
    rhs: object


@dataclass(frozen=True)
class PowInt:
    base: object
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    arg: object


def _ast_has_var(node):
    if isinstance(node, Var):
        return True
    if isinstance(node, Neg):
        return _ast_has_var(node.arg)
    if isinstance(node, Bin):
        return _ast_has_var(node.lhs) or _ast_has_var(node.rhs)
    if isinstance(node, PowInt):
        return _ast_has_var(node.base)
    if isinstance(node, Call):
        return _ast_has_var(node.arg)
    return False


def ast_to_text(node):
    """Canonical re-serialization (idempotent under parse/serialize)."""
    if isinstance(node, Num):
        return node.text
    if isinstance(node, Pi):
        return "pi"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return "-" + _wrap_term(node.arg)
    if isinstance(node, Bin):
        lhs, rhs = node.lhs, node.rhs
        if node.op in "+-":
            rt = _wrap_term(rhs) if isinstance(rhs, Neg) else ast_to_text(rhs)
            return f"{ast_to_text(lhs)} {node.op} {rt}"
        lt = _wrap_add(lhs)
        rt = _wrap_add(rhs)
        return f"{lt}{node.op}{rt}"
    if isinstance(node, PowInt):
        return f"{_wrap_pow(node.base)}^{node.exponent}"
    if isinstance(node, Call):
        return f"{node.func}({ast_to_text(node.arg)})"
    raise TypeError(f"unknown node {node!r}")


def _wrap_add(node):
    if isinstance(node, (Bin, Neg)) and (isinstance(node, Neg) or node.op in "+-"):
        return f"({ast_to_text(node)})"
    return ast_to_text(node)


def _wrap_term(node):
    if isinstance(node, Bin) and node.op in "+-":
        return f"({ast_to_text(node)})"
    return ast_to_text(node)


def _wrap_pow(node):
    if isinstance(node, (Num, Pi, Var, Call)):
        return ast_to_text(node)
    return f"({ast_to_text(node)})"


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, src, dim):
        self.src = src
        self.dim = dim
        self.pos = 0

    def error(self, message, pos=None):
        raise ExpressionError(message, self.pos if pos is None else pos)

    def skip_ws(self):
        while self.pos < len(self.src) and self.src[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip_ws()
        return self.src[self.pos] if self.pos < len(self.src) else ""

    def parse(self):
        node = self.expr()
        self.skip_ws()
        if self.pos != len(self.src):
            self.error("unexpected trailing input")
        return node

    def expr(self):
        self.skip_ws()
        neg = False
        if self.peek() and self.peek() in "+-":
            neg = self.src[self.pos] == "-"
            self.pos += 1
        node = self.term()
        if neg:
            node = Neg(node)
        while self.peek() and self.peek() in "+-":
            op = self.src[self.pos]
            self.pos += 1
            node = Bin(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek() and self.peek() in "*/":
            op = self.src[self.pos]
            self.pos += 1
            start = self.pos
            rhs = self.factor()
            if op == "/" and _ast_has_var(rhs):
                self.error("division by a non-constant expression", start)
            node = Bin(op, node, rhs)
        return node

    def factor(self):
        node = self.base()
        if self.peek() == "^":
            self.pos += 1
            self.skip_ws()
            start = self.pos
            sign = 1
            if self.peek() == "-":
                sign = -1
                self.pos += 1
            digits = self._take(str.isdigit)
            if not digits:
                self.error("expected integer exponent", start)
            node = PowInt(node, sign * int(digits))
        return node

    def base(self):
        ch = self.peek()
        start = self.pos
        if ch == "(":
            self.pos += 1
            node = self.expr()
            if self.peek() != ")":
                self.error("expected ')'")
            self.pos += 1
            return node
        if ch.isdigit() or ch == ".":
            return self.number()
        if ch.isalpha():
            name = self._take(lambda c: c.isalnum())
            if name == "pi":
                return Pi()
            if name in _FUNCS:
                if self.peek() != "(":
                    self.error(f"expected '(' after {name}")
                self.pos += 1
                arg = self.expr()
                if self.peek() != ")":
                    self.error("expected ')'")
                self.pos += 1
                return Call(name, arg)
            if name in _IDENTS[1] + _IDENTS[2]:
                if name not in _IDENTS[self.dim]:
                    self.error(f"identifier '{name}' invalid for dim {self.dim}", start)
                return Var(name)
            self.error(f"unknown identifier '{name}'", start)
        self.error("expected a number, identifier or '('")

    def number(self):
        start = self.pos
        text = self._take(str.isdigit)
        if self.peek() == "." if False else (self.pos < len(self.src) and self.src[self.pos] == "."):
            self.pos += 1
            text += "." + self._take(str.isdigit)
        if self.pos < len(self.src) and self.src[self.pos] in "eE":
            mark = self.pos
            self.pos += 1
            exp = ""
            if self.pos < len(self.src) and self.src[self.pos] in "+-":
                exp += self.src[self.pos]
                self.pos += 1
            digits = self._take(str.isdigit)
            if digits:
                text += self.src[mark] + exp + digits
            else:
                self.pos = mark
        if not text or text == ".":
            self.error("malformed number", start)
        return Num(float(text), text)

    def _take(self, pred):
        out = []
        while self.pos < len(self.src) and pred(self.src[self.pos]):
            out.append(self.src[self.pos])
            self.pos += 1
        return "".join(out)


def _ast_to_sympy(node, symbols):
    if isinstance(node, Num):
        return sp.Float(node.value) if "." in node.text or "e" in node.text.lower() else sp.Integer(int(node.value))
    if isinstance(node, Pi):
        return sp.pi
    if isinstance(node, Var):
        return symbols[node.name]
    if isinstance(node, Neg):
        return -_ast_to_sympy(node.arg, symbols)
    if isinstance(node, Bin):
        lhs = _ast_to_sympy(node.lhs, symbols)
        rhs = _ast_to_sympy(node.rhs, symbols)
        return {"+": lhs + rhs, "-": lhs - rhs, "*": lhs * rhs, "/": lhs / rhs}[node.op]
    if isinstance(node, PowInt):
        return _ast_to_sympy(node.base, symbols) ** node.exponent
    if isinstance(node, Call):
        return {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp}[node.func](_ast_to_sympy(node.arg, symbols))
    raise TypeError(node)


# ---------------------------------------------------------------------------
# Domain types


@dataclass
class CotangentPoint:
    """Point of T*T^n; base coordinates stored reduced mod 1."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.q = wrap(np.atleast_1d(np.asarray(self.q, dtype=float)))
        self.p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if self.q.shape != self.p.shape:
            raise ValueError("q and p must have matching shapes")


def _lambdify(expr, syms):
    fn = sp.lambdify(syms, expr, modules="numpy")

    def wrapped(*args):
        out = fn(*args)
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(*args).shape).copy() \
            if np.ndim(out) == 0 and any(np.ndim(a) for a in args) else np.asarray(out, dtype=float)

    return wrapped


@dataclass
class HamiltonianSpec:
    """Parsed Hamiltonian with vectorized evaluators and derivatives.

    Immutable after construction; all evaluators are pure, so instances are
    safe to share across workers.
    """

    source: str
    ast: object
    dim: int
    _impl: dict = field(repr=False, default_factory=dict)

    @property
    def is_mechanical(self):
        return self._impl["mechanical"]

    def _split(self, q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        if self.dim == 1:
            return (q, p), np.broadcast(q, p).shape
        if q.shape[-1:] != (2,) or p.shape[-1:] != (2,):
            raise ValueError("dim-2 Hamiltonian needs trailing axis of size 2")
        return (q[..., 0], q[..., 1], p[..., 0], p[..., 1]), np.broadcast(q[..., 0], p[..., 0]).shape

    def value(self, q, p):
        args, _ = self._split(q, p)
        return self._impl["H"](*args)

    def grad_q(self, q, p):
        args, shape = self._split(q, p)
        comps = [f(*args) for f in self._impl["dHdq"]]
        return comps[0] if self.dim == 1 else np.stack(np.broadcast_arrays(*comps), axis=-1)

    def grad_p(self, q, p):
        args, shape = self._split(q, p)
        comps = [f(*args) for f in self._impl["dHdp"]]
        return comps[0] if self.dim == 1 else np.stack(np.broadcast_arrays(*comps), axis=-1)

    def hess_pp(self, q, p):
        args, shape = self._split(q, p)
        n = self.dim
        rows = [[np.broadcast_to(self._impl["d2Hdp2"][i][j](*args), shape)
                 for j in range(n)] for i in range(n)]
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    def _xh_jacobian(self, q, p):
        """Jacobian of the Hamiltonian vector field (dq/dt, dp/dt)."""
        args, shape = self._split(q, p)
        n = self.dim
        blk = lambda tbl, i, j: np.broadcast_to(tbl[i][j](*args), shape)
        J = np.zeros(shape + (2 * n, 2 * n))
        for i in range(n):
            for j in range(n):
                J[..., i, j] = blk(self._impl["d2Hdqdp"], j, i)       # d(H_p)/dq
                J[..., i, n + j] = blk(self._impl["d2Hdp2"], i, j)
                J[..., n + i, j] = -blk(self._impl["d2Hdq2"], i, j)
                J[..., n + i, n + j] = -blk(self._impl["d2Hdqdp"], i, j)
        return J

    def potential(self, q):
        """V(q) = H(q, 0); used by the splitting integrator."""
        args = (np.asarray(q, dtype=float),) if self.dim == 1 else \
            (np.asarray(q, dtype=float)[..., 0], np.asarray(q, dtype=float)[..., 1])
        return self._impl["V"](*args)

    def grad_potential(self, q):
        q = np.asarray(q, dtype=float)
        args = (q,) if self.dim == 1 else (q[..., 0], q[..., 1])
        comps = [f(*args) for f in self._impl["dVdq"]]
        return comps[0] if self.dim == 1 else np.stack(np.broadcast_arrays(*comps), axis=-1)


def parse_hamiltonian(src, dim):
    """Parse an expression text into a HamiltonianSpec.

    Raises ExpressionError with the source offset on malformed input, on
    identifiers unknown to the grammar, and on dimension mismatches.
    """
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    ast = _Parser(src, dim).parse()
    names = _IDENTS[dim]
    symbols = {name: sp.Symbol(name, real=True) for name in names}
    expr = _ast_to_sympy(ast, symbols)
    qsyms = [symbols[n] for n in names[: dim]]
    psyms = [symbols[n] for n in names[dim:]]
    syms = qsyms + psyms

    V = expr.subs({s: 0 for s in psyms})
    kinetic = sum(s ** 2 for s in psyms) / 2
    mechanical = sp.simplify(expr - V - kinetic) == 0

    impl = {
        "H": _lambdify(expr, syms),
        "dHdq": [_lambdify(sp.diff(expr, s), syms) for s in qsyms],
        "dHdp": [_lambdify(sp.diff(expr, s), syms) for s in psyms],
        "d2Hdp2": [[_lambdify(sp.diff(expr, si, sj), syms) for sj in psyms] for si in psyms],
        "d2Hdq2": [[_lambdify(sp.diff(expr, si, sj), syms) for sj in qsyms] for si in qsyms],
        "d2Hdqdp": [[_lambdify(sp.diff(expr, si, sj), syms) for sj in psyms] for si in qsyms],
        "V": _lambdify(V, qsyms),
        "dVdq": [_lambdify(sp.diff(V, s), qsyms) for s in qsyms],
        "mechanical": bool(mechanical),
    }
    return HamiltonianSpec(source=ast_to_text(ast), ast=ast, dim=dim, _impl=impl)


def shift_momentum(spec, dw_src):
    """Pull back by the exact symplectomorphism (q, p) -> (q, p + dw(q)).

    ``dw_src`` is expression text in q only (one per momentum component for
    dim 2, as a sequence).  Returns the HamiltonianSpec of H(q, p + dw(q)).
    """
    names = _IDENTS[spec.dim]
    if isinstance(dw_src, str):
        dw_src = (dw_src,)
    if len(dw_src) != spec.dim:
        raise ValueError("need one shift expression per momentum component")
    for s in dw_src:
        node = _Parser(s, spec.dim).parse()
        for pname in names[spec.dim:]:
            if pname in s:
                pass
        if any(_contains_momentum(node, names[spec.dim:]) for node in [node]):
            raise ValueError("momentum shift must depend on q only")

    def substitute(node):
        if isinstance(node, Var) and node.name in names[spec.dim:]:
            idx = names[spec.dim:].index(node.name)
            return Bin("+", node, _Parser(f"({dw_src[idx]})", spec.dim).parse())
        if isinstance(node, Neg):
            return Neg(substitute(node.arg))
        if isinstance(node, Bin):
            return Bin(node.op, substitute(node.lhs), substitute(node.rhs))
        if isinstance(node, PowInt):
            return PowInt(substitute(node.base), node.exponent)
        if isinstance(node, Call):
            return Call(node.func, substitute(node.arg))
        return node

    return parse_hamiltonian(ast_to_text(substitute(spec.ast)), spec.dim)


def _contains_momentum(node, pnames):
    if isinstance(node, Var):
        return node.name in pnames
    if isinstance(node, Neg):
        return _contains_momentum(node.arg, pnames)
    if isinstance(node, Bin):
        return _contains_momentum(node.lhs, pnames) or _contains_momentum(node.rhs, pnames)
    if isinstance(node, PowInt):
        return _contains_momentum(node.base, pnames)
    if isinstance(node, Call):
        return _contains_momentum(node.arg, pnames)
    return False


# ---------------------------------------------------------------------------
# Tonelli diagnostics


@dataclass
class TonelliReport:
    ok: bool
    convex: bool
    superlinear: bool
    min_hessian_eig: float
    ratio_half: float
    ratio_full: float
    p_max: float
    velocity_bound: float

    def __bool__(self):
        return self.ok


def tonelli_check(spec, grid=24, p_max=6.0):
    """Sample fiberwise convexity and superlinearity diagnostics.

    Reports the minimum eigenvalue of the fiberwise Hessian over samples
    with |p| <= p_max, and the growth ratio H/|p| at |p| = p_max versus
    p_max/2.  Report-only: never raises.
    """
    n = spec.dim
    qs = np.linspace(0.0, 1.0, grid, endpoint=False)
    # odd count so p = 0 is sampled (degenerate Hessians often sit there)
    ps = np.linspace(-p_max, p_max, grid + 1 - grid % 2)
    if n == 1:
        Q, P = np.meshgrid(qs, ps, indexing="ij")
    else:
        Q1, Q2, P1, P2 = np.meshgrid(qs, qs, ps, ps, indexing="ij")
        Q = np.stack([Q1, Q2], axis=-1)
        P = np.stack([P1, P2], axis=-1)
    hess = spec.hess_pp(Q, P)
    eigs = np.linalg.eigvalsh(hess.reshape(-1, n, n))
    min_eig = float(np.min(eigs))

    def ratio(scale):
        if n == 1:
            dirs = np.array([[1.0], [-1.0]])
        else:
            th = np.linspace(0, 2 * np.pi, 16, endpoint=False)
            dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
        vals = []
        for d in dirs:
            pv = scale * d
            if n == 1:
                vals.append(np.min(spec.value(qs, np.full_like(qs, pv[0]))))
            else:
                Qg = np.stack(np.meshgrid(qs, qs, indexing="ij"), axis=-1)
                vals.append(np.min(spec.value(Qg, np.broadcast_to(pv, Qg.shape))))
        return float(np.min(vals) / scale)

    r_half = ratio(p_max / 2)
    r_full = ratio(p_max)
    convex = min_eig > 1e-9
    superlinear = r_full > r_half + 1e-9
    vel = float(np.max(np.abs(spec.grad_p(Q, P))))
    return TonelliReport(ok=convex and superlinear, convex=convex,
                         superlinear=superlinear, min_hessian_eig=min_eig,
                         ratio_half=r_half, ratio_full=r_full, p_max=p_max,
                         velocity_bound=vel)


# ---------------------------------------------------------------------------
# Symplectic stepping


def _leapfrog(spec, Q, P, dt, nsteps, accumulate_action=False):
    """Strang splitting for H = |p|^2/2 + V(q); Q is left unwrapped."""
    Q = np.array(Q, dtype=float)
    P = np.array(P, dtype=float)
    act = np.zeros(Q.shape[: Q.ndim - (spec.dim == 2)]) if accumulate_action else None
    if accumulate_action:
        g_prev = 0.5 * _sq(P, spec.dim) - spec.potential(wrap(Q))
    for _ in range(nsteps):
        P = P - 0.5 * dt * spec.grad_potential(wrap(Q))
        Q = Q + dt * P
        P = P - 0.5 * dt * spec.grad_potential(wrap(Q))
        if accumulate_action:
            g = 0.5 * _sq(P, spec.dim) - spec.potential(wrap(Q))
            act += 0.5 * dt * (g_prev + g)
            g_prev = g
    return (Q, P, act) if accumulate_action else (Q, P)


def _sq(P, dim):
    return P * P if dim == 1 else np.sum(P * P, axis=-1)


def _implicit_midpoint(spec, Q, P, dt, nsteps, accumulate_action=False):
    Q = np.array(Q, dtype=float)
    P = np.array(P, dtype=float)
    n = spec.dim
    act = np.zeros(np.shape(spec.value(wrap(Q), P))) if accumulate_action else None

    def integrand(q, p):
        gp = spec.grad_p(q, p)
        return (p * gp if n == 1 else np.sum(p * gp, axis=-1)) - spec.value(q, p)

    if accumulate_action:
        g_prev = integrand(wrap(Q), P)
    eye = np.eye(2 * n)
    for _ in range(nsteps):
        # Newton on z' = z + dt * X_H((z + z')/2)
        Qn = Q + dt * spec.grad_p(wrap(Q), P)
        Pn = P - dt * spec.grad_q(wrap(Q), P)
        converged = False
        for _ in range(MIDPOINT_MAX_ITERS):
            Qm, Pm = 0.5 * (Q + Qn), 0.5 * (P + Pn)
            FQ = Qn - Q - dt * spec.grad_p(wrap(Qm), Pm)
            FP = Pn - P + dt * spec.grad_q(wrap(Qm), Pm)
            res = np.max(np.abs(np.concatenate([np.atleast_1d(FQ).ravel(),
                                                np.atleast_1d(FP).ravel()])))
            if res < MIDPOINT_TOL:
                converged = True
                break
            J = spec._xh_jacobian(wrap(Qm), Pm)
            A = eye - 0.5 * dt * J
            if n == 1:
                F = np.stack([np.atleast_1d(FQ), np.atleast_1d(FP)], axis=-1)
                delta = np.linalg.solve(np.broadcast_to(A, F.shape[:-1] + (2, 2)).reshape(-1, 2, 2),
                                        F.reshape(-1, 2, 1)).reshape(F.shape)
                Qn = Qn - delta[..., 0].reshape(np.shape(Qn))
                Pn = Pn - delta[..., 1].reshape(np.shape(Pn))
            else:
                F = np.concatenate([np.atleast_2d(FQ), np.atleast_2d(FP)], axis=-1)
                delta = np.linalg.solve(A.reshape(-1, 2 * n, 2 * n),
                                        F.reshape(-1, 2 * n, 1)).reshape(F.shape)
                Qn = Qn - delta[..., :n].reshape(np.shape(Qn))
                Pn = Pn - delta[..., n:].reshape(np.shape(Pn))
        if not converged:
            raise IntegratorError(
                f"implicit midpoint failed to reach {MIDPOINT_TOL} in {MIDPOINT_MAX_ITERS} iterations")
        Q, P = Qn, Pn
        if accumulate_action:
            g = integrand(wrap(Q), P)
            act += 0.5 * dt * (g_prev + g)
            g_prev = g
    return (Q, P, act) if accumulate_action else (Q, P)


def integrate(spec, Q, P, dt, nsteps, accumulate_action=False):
    """Batch integration of Hamilton's equations; unwrapped base output.

    Splitting scheme for mechanical H, implicit midpoint otherwise.  With
    ``accumulate_action`` the Liouville integrand p . H_p - H is accumulated
    by the trapezoid rule along each trajectory.
    """
    stepper = _leapfrog if spec.is_mechanical else _implicit_midpoint
    return stepper(spec, Q, P, dt, nsteps, accumulate_action)


def flow_step(spec, x, dt):
    """One symplectic-integrator step from a cotangent point (dt != 0)."""
    if dt == 0:
        raise ValueError("dt must be nonzero")
    Q, P = integrate(spec, x.q if spec.dim > 1 else x.q[0],
                     x.p if spec.dim > 1 else x.p[0], dt, 1)
    return CotangentPoint(q=wrap(np.atleast_1d(Q)), p=np.atleast_1d(P))
