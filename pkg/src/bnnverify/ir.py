"""Variable registry, penalty polynomials, and QUBO/Ising assembly.

Every constraint is stored in satisfaction-indicator form: its polynomial
evaluates to 0 on satisfying assignments and to an integer >= 1 otherwise.
Gate penalties are already indicators; linear equalities are squared.
Coefficients stay exact (int / Fraction) until a solver needs floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np


class VarRole(str, Enum):
    TAU = "tau"                 # input perturbation bit
    NEURON = "neuron"           # sign-neuron output bit
    PRODUCT = "product"         # weight*activation product bit
    SIGN_AUX = "sign_aux"       # low bits of a binary-encoded neuron sum
    TWOS_BIT = "twos_bit"       # two's-complement bit of a score difference
    ARGMAX_FLAG = "argmax_flag" # class-beats-label flag
    SLACK = "slack"             # inequality slack bit


class GateKind(str, Enum):
    BUFFER = "buffer"
    NOT = "not"
    LINEAR_EQ = "linear_eq"


class QuadPoly:
    """Sparse polynomial c + sum l_i q_i + sum q_{ij} q_i q_j (i < j).

    Diagonal quadratic terms are folded into the linear part via q*q = q.
    Zero coefficients are never stored.
    """

    __slots__ = ("constant", "linear", "quadratic")

    def __init__(self, constant=0, linear=None, quadratic=None):
        self.constant = constant
        self.linear: dict[int, object] = dict(linear or {})
        self.quadratic: dict[tuple[int, int], object] = dict(quadratic or {})

    def add_linear(self, var: int, coeff) -> None:
        if coeff == 0:
            return
        c = self.linear.get(var, 0) + coeff
        if c == 0:
            self.linear.pop(var, None)
        else:
            self.linear[var] = c

    def add_quadratic(self, i: int, j: int, coeff) -> None:
        if coeff == 0:
            return
        if i == j:
            self.add_linear(i, coeff)
            return
        key = (i, j) if i < j else (j, i)
        c = self.quadratic.get(key, 0) + coeff
        if c == 0:
            self.quadratic.pop(key, None)
        else:
            self.quadratic[key] = c

    def add_poly(self, other: "QuadPoly", weight=1) -> None:
        if weight == 0:
            return
        self.constant += weight * other.constant
        for v, c in other.linear.items():
            self.add_linear(v, weight * c)
        for (i, j), c in other.quadratic.items():
            self.add_quadratic(i, j, weight * c)

    def evaluate(self, assignment) -> object:
        a = assignment
        total = self.constant
        for v, c in self.linear.items():
            if a[v]:
                total += c
        for (i, j), c in self.quadratic.items():
            if a[i] and a[j]:
                total += c
        return total

    def variables(self) -> set[int]:
        out = set(self.linear)
        for i, j in self.quadratic:
            out.add(i)
            out.add(j)
        return out

    def copy(self) -> "QuadPoly":
        return QuadPoly(self.constant, self.linear, self.quadratic)

    @staticmethod
    def squared_linear(terms: dict[int, int], constant: int) -> "QuadPoly":
        """(sum c_i q_i + constant)**2 expanded and reduced via q*q = q."""
        poly = QuadPoly(constant * constant)
        items = [(v, c) for v, c in terms.items() if c != 0]
        for v, c in items:
            poly.add_linear(v, c * c + 2 * constant * c)
        for idx, (v, c) in enumerate(items):
            for w, d in items[idx + 1:]:
                poly.add_quadratic(v, w, 2 * c * d)
        return poly


@dataclass
class Constraint:
    """One constraint with its indicator polynomial and provenance label."""

    kind: GateKind
    vars: tuple[int, ...]
    poly: QuadPoly
    label: str

    def penalty(self, assignment) -> object:
        return self.poly.evaluate(assignment)


@dataclass
class VarInfo:
    index: int
    role: VarRole | None
    meta: dict = field(default_factory=dict)


class ConstraintSystem:
    """Dense variable registry plus a growing constraint list."""

    def __init__(self):
        self.vars: list[VarInfo] = []
        self.constraints: list[Constraint] = []

    @property
    def num_vars(self) -> int:
        return len(self.vars)

    def new_var(self, role: VarRole, **meta) -> int:
        idx = len(self.vars)
        self.vars.append(VarInfo(idx, role, meta))
        return idx

    def add(self, constraint: Constraint) -> Constraint:
        self.constraints.append(constraint)
        return constraint


def gate_penalty(kind: GateKind, in_var: int, out_var: int, label: str = "") -> Constraint:
    """Buffer/Not gate as an indicator polynomial.

    Buffer keeps the tabulated form q_i + q_k - 2 q_i q_k.  The raw Not
    entry attains -1 when satisfied, so it is shifted by +1 to meet the
    0-satisfied / 1-violated contract.
    """
    if in_var == out_var:
        raise ValueError("gate input and output must differ")
    poly = QuadPoly()
    poly.add_linear(in_var, 1)
    poly.add_linear(out_var, 1)
    poly.add_quadratic(in_var, out_var, -2)
    if kind == GateKind.NOT:
        neg = QuadPoly(1)
        neg.add_poly(poly, -1)
        poly = neg
    elif kind != GateKind.BUFFER:
        raise ValueError("unsupported gate kind %r" % (kind,))
    return Constraint(kind, (in_var, out_var), poly, label)


def linear_eq_penalty(terms: dict[int, int], constant: int, label: str = "") -> Constraint:
    """Equality sum c_i q_i + constant = 0 as a squared penalty.

    Integer coefficients guarantee the violation gap of at least 1.
    """
    for c in terms.values():
        if c != int(c):
            raise ValueError("linear equality needs integer coefficients")
    if not terms and constant != 0:
        raise ValueError("unsatisfiable constant-only equality")
    poly = QuadPoly.squared_linear(terms, constant)
    return Constraint(GateKind.LINEAR_EQ, tuple(terms), poly, label)


def signb_penalty(input_vars, out_var: int, aux_vars, *, fixed_ones: int = 0,
                  fixed_zeros: int = 0, label: str = "") -> Constraint:
    """Boolean sign of a sum of 2**N - 1 bits via its binary encoding.

    The output bit is the most significant bit of the encoded sum; aux
    bits carry the N-1 low bits.  Inputs folded to constants at encode
    time enter through ``fixed_ones``/``fixed_zeros``.
    """
    input_vars = list(input_vars)
    aux_vars = list(aux_vars)
    n_bits = len(aux_vars) + 1
    fan_in = len(input_vars) + fixed_ones + fixed_zeros
    if fan_in != 2**n_bits - 1:
        raise ValueError("fan-in %d does not match %d aux bits" % (fan_in, len(aux_vars)))
    terms = {v: 1 for v in input_vars}
    for i, a in enumerate(aux_vars):
        terms[a] = -(2**i)
    terms[out_var] = -(2 ** (n_bits - 1))
    return Constraint(GateKind.LINEAR_EQ,
                      tuple(input_vars) + tuple(aux_vars) + (out_var,),
                      QuadPoly.squared_linear(terms, fixed_ones), label)


def slack_encode_leq(term_vars, bound: int, cs: ConstraintSystem,
                     label: str = "") -> tuple[Constraint, list[int]]:
    """Rewrite sum q_i <= bound as an equality with binary slack bits.

    Uses ceil(log2(bound+1)) slack bits; the slack range may overshoot
    the bound, which is harmless because the left side is nonnegative.
    """
    if bound < 0:
        raise ValueError("negative bound")
    term_vars = list(term_vars)
    n_slack = max(0, (bound).bit_length())
    slack = [cs.new_var(VarRole.SLACK, purpose=label or "leq", bit=j)
             for j in range(n_slack)]
    terms = {v: 1 for v in term_vars}
    for j, s in enumerate(slack):
        terms[s] = 2**j
    con = linear_eq_penalty(terms, -bound, label=label)
    cs.add(con)
    return con, slack


@dataclass
class QuboInstance:
    """Assembled QUBO: objective + weighted indicator penalties."""

    num_vars: int
    poly: QuadPoly
    objective: QuadPoly
    constraints: list[Constraint]
    var_info: list[VarInfo]

    def evaluate(self, assignment) -> object:
        assignment = np.asarray(assignment)
        if assignment.shape != (self.num_vars,):
            raise ValueError("assignment length %s != %d" % (assignment.shape, self.num_vars))
        return self.poly.evaluate(assignment)

    def audit(self, assignment):
        """(satisfied_count, violations) where violations carry labels."""
        assignment = np.asarray(assignment)
        if assignment.shape != (self.num_vars,):
            raise ValueError("assignment length %s != %d" % (assignment.shape, self.num_vars))
        violations = []
        for con in self.constraints:
            p = con.penalty(assignment)
            if p != 0:
                violations.append((con.label, p))
        return len(self.constraints) - len(violations), violations

    def to_dense(self):
        """(linear, coupling, constant) float arrays for solver kernels."""
        diag = np.zeros(self.num_vars)
        quad = np.zeros((self.num_vars, self.num_vars))
        for v, c in self.poly.linear.items():
            diag[v] = float(c)
        for (i, j), c in self.poly.quadratic.items():
            quad[i, j] = quad[j, i] = float(c)
        return diag, quad, float(self.poly.constant)


def assemble_qubo(objective: QuadPoly, constraints, cs: ConstraintSystem,
                  weights=None) -> QuboInstance:
    """Objective plus lambda-weighted penalties, default lambda = 1.

    Constraints are already indicators, so no further squaring happens
    here.  ``weights`` may be a scalar or a per-constraint sequence.
    """
    constraints = list(constraints)
    if weights is None:
        weights = [1] * len(constraints)
    elif not hasattr(weights, "__len__"):
        weights = [weights] * len(constraints)
    if len(weights) != len(constraints):
        raise ValueError("one weight per constraint required")
    known = set(range(cs.num_vars))
    poly = objective.copy()
    for con, lam in zip(constraints, weights):
        if not set(con.vars) <= known:
            raise ValueError("constraint %r uses unregistered variables" % con.label)
        poly.add_poly(con.poly, lam)
    if not objective.variables() <= known:
        raise ValueError("objective uses unregistered variables")
    return QuboInstance(cs.num_vars, poly, objective.copy(), constraints, list(cs.vars))


@dataclass
class IsingInstance:
    """Spin-domain equivalent: E(s) = -h.s - 1/2 s.J.s + offset, s = 2x - 1."""

    num_vars: int
    h: dict[int, Fraction]
    j: dict[tuple[int, int], Fraction]
    offset: Fraction

    def energy(self, spins) -> Fraction:
        e = self.offset
        for i, c in self.h.items():
            e -= c * int(spins[i])
        for (i, k), c in self.j.items():
            e -= c * int(spins[i]) * int(spins[k])
        return e

    def to_dense(self):
        h = np.zeros(self.num_vars)
        j = np.zeros((self.num_vars, self.num_vars))
        for i, c in self.h.items():
            h[i] = float(c)
        for (a, b), c in self.j.items():
            j[a, b] = j[b, a] = float(c)
        return h, j, float(self.offset)


def qubo_to_ising(q: QuboInstance) -> IsingInstance:
    """Exact change of variables x = (s + 1) / 2.

    The offset absorbs the constant so that for every Boolean assignment
    ising_energy(2x - 1) == qubo_energy(x).
    """
    h: dict[int, Fraction] = {}
    j: dict[tuple[int, int], Fraction] = {}
    offset = Fraction(q.poly.constant)

    def bump(d, key, val):
        c = d.get(key, Fraction(0)) + val
        if c == 0:
            d.pop(key, None)
        else:
            d[key] = c

    for v, c in q.poly.linear.items():
        c = Fraction(c)
        offset += c / 2
        bump(h, v, -c / 2)
    for (a, b), c in q.poly.quadratic.items():
        c = Fraction(c)
        offset += c / 4
        bump(h, a, -c / 4)
        bump(h, b, -c / 4)
        bump(j, (a, b), -c / 4)
    # the pair term of -1/2 s.J.s with symmetric J is -sum_{a<b} J_ab s_a s_b,
    # and j above already holds that per-pair coefficient
    return IsingInstance(q.num_vars, h, j, offset)


# ---------------------------------------------------------------------------
# COO text format

def _fmt(value) -> str:
    f = Fraction(value)
    if f.denominator == 1:
        return str(f.numerator)
    return repr(float(f))


def write_qubo_coo(q: QuboInstance, fh) -> None:
    """Header ``p qubo n nnz offset`` then row-major ``i j coeff`` lines.

    Linear terms sit on the diagonal; i <= j throughout; deterministic
    ordering so golden files are byte-stable.
    """
    entries = {}
    for v, c in q.poly.linear.items():
        entries[(v, v)] = c
    for (a, b), c in q.poly.quadratic.items():
        entries[(a, b)] = c
    keys = sorted(entries)
    fh.write("p qubo %d %d %s\n" % (q.num_vars, len(keys), _fmt(q.poly.constant)))
    for i, j in keys:
        fh.write("%d %d %s\n" % (i, j, _fmt(entries[(i, j)])))


def read_qubo_coo(fh) -> QuboInstance:
    header = fh.readline().split()
    if len(header) != 5 or header[:2] != ["p", "qubo"]:
        raise ValueError("bad QUBO COO header")
    num_vars, nnz = int(header[2]), int(header[3])
    poly = QuadPoly(_parse_num(header[4]))
    count = 0
    for line in fh:
        if not line.strip():
            continue
        i_s, j_s, c_s = line.split()
        i, j, c = int(i_s), int(j_s), _parse_num(c_s)
        if j < i:
            raise ValueError("COO entries must have i <= j")
        if i == j:
            poly.add_linear(i, c)
        else:
            poly.add_quadratic(i, j, c)
        count += 1
    if count != nnz:
        raise ValueError("expected %d entries, found %d" % (nnz, count))
    # roles are not part of the COO format
    info = [VarInfo(i, None, {}) for i in range(num_vars)]
    return QuboInstance(num_vars, poly, QuadPoly(), [], info)


def _parse_num(token: str):
    try:
        return int(token)
    except ValueError:
        return Fraction(float(token))


def write_ising_coo(ising: IsingInstance, fh) -> None:
    """Same COO grammar with header ``p ising``; fields on the diagonal."""
    entries = {(i, i): c for i, c in ising.h.items()}
    for (a, b), c in ising.j.items():
        entries[(a, b) if a < b else (b, a)] = c
    keys = sorted(entries)
    fh.write("p ising %d %d %s\n" % (ising.num_vars, len(keys), _fmt(ising.offset)))
    for i, j in keys:
        fh.write("%d %d %s\n" % (i, j, _fmt(entries[(i, j)])))


def constraints_to_json(constraints) -> list:
    out = []
    for con in constraints:
        out.append({
            "kind": con.kind.value,
            "vars": list(con.vars),
            "label": con.label,
            "poly": {
                "constant": _num_json(con.poly.constant),
                "linear": {str(v): _num_json(c) for v, c in sorted(con.poly.linear.items())},
                "quadratic": [[i, j, _num_json(c)]
                              for (i, j), c in sorted(con.poly.quadratic.items())],
            },
        })
    return out


def constraints_from_json(doc: list) -> list[Constraint]:
    out = []
    for item in doc:
        poly = QuadPoly(item["poly"]["constant"])
        for v, c in item["poly"]["linear"].items():
            poly.add_linear(int(v), c)
        for i, j, c in item["poly"]["quadratic"]:
            poly.add_quadratic(i, j, c)
        out.append(Constraint(GateKind(item["kind"]), tuple(item["vars"]), poly,
                              item["label"]))
    return out


def _num_json(value):
    f = Fraction(value)
    return f.numerator if f.denominator == 1 else float(f)
