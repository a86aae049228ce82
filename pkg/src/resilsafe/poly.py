"""Exact sparse multivariate polynomial arithmetic over float coefficients.

A polynomial is a mapping from monomials to nonzero coefficients together with
an explicit variable scope.  Variables live in two namespaces, ``x`` (states)
and ``u`` (inputs), and are identified by a dense nonnegative index within the
namespace:

    Var('x', 2)         the third state variable
    Monomial            sorted tuple of (Var, positive exponent) pairs
    Polynomial          {Monomial: coefficient} plus a declared scope

Coefficients below ``COEF_PRUNE`` (1e-12) are dropped, so two polynomials
compare equal exactly when their pruned term maps agree.  Scopes are declared
rather than inferred: arithmetic between polynomials requires identical
scopes, which catches e.g. a safety function accidentally referencing an
input variable.  All values are immutable after construction and safe to
share between threads.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Iterable, Mapping

COEF_PRUNE = 1e-12


class ScopeError(ValueError):
    """Raised when an operation mixes polynomials with mismatched scopes."""

    def __init__(self, message, offending=()):
        super().__init__(message)
        self.offending = tuple(offending)


class EvaluationError(ValueError):
    """Raised when an evaluation point misses variables of the scope."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = tuple(missing)


@dataclass(frozen=True)
class Var:
    """One scalar variable: namespace 'x' (state) or 'u' (input) plus index.

    Ordering is states first, then inputs, each by index; this fixes the
    lexicographic monomial order used everywhere for determinism.
    """

    ns: str
    idx: int

    def __post_init__(self):
        if self.ns not in ("x", "u"):
            raise ValueError(f"variable namespace must be 'x' or 'u', got {self.ns!r}")
        if self.idx < 0:
            raise ValueError(f"variable index must be nonnegative, got {self.idx}")
        # make 'x' sort before 'u' despite the alphabet
        object.__setattr__(self, "_key", (0 if self.ns == "x" else 1, self.idx))

    def __lt__(self, other):
        return self._key < other._key

    def __le__(self, other):
        return self._key <= other._key

    def __gt__(self, other):
        return self._key > other._key

    def __ge__(self, other):
        return self._key >= other._key

    def __str__(self):
        return f"{self.ns}{self.idx}"

    @staticmethod
    def parse(name: str) -> "Var":
        ns, idx = name[0], name[1:]
        return Var(ns, int(idx))


def xvar(i: int) -> Var:
    return Var("x", i)


def uvar(i: int) -> Var:
    return Var("u", i)


class Monomial:
    """Product of variables with positive integer exponents; empty = 1."""

    __slots__ = ("exps", "_hash")

    def __init__(self, exps: Mapping[Var, int] | Iterable[tuple[Var, int]] = ()):
        items = dict(exps)
        for v, e in items.items():
            if not isinstance(e, int) or e <= 0:
                raise ValueError(f"exponent of {v} must be a positive integer, got {e}")
        object.__setattr__(self, "exps", tuple(sorted(items.items(), key=lambda kv: kv[0]._key)))
        object.__setattr__(self, "_hash", hash(self.exps))

    def __setattr__(self, *a):
        raise AttributeError("Monomial is immutable")

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return isinstance(other, Monomial) and self.exps == other.exps

    def __lt__(self, other):
        return self.sort_key() < other.sort_key()

    def sort_key(self):
        # graded lexicographic: total degree first, then variable-wise
        return (self.degree(), tuple((v._key, e) for v, e in self.exps))

    def degree(self) -> int:
        return sum(e for _, e in self.exps)

    def degree_of(self, v: Var) -> int:
        for w, e in self.exps:
            if w == v:
                return e
        return 0

    def variables(self) -> frozenset[Var]:
        return frozenset(v for v, _ in self.exps)

    def __mul__(self, other: "Monomial") -> "Monomial":
        out = dict(self.exps)
        for v, e in other.exps:
            out[v] = out.get(v, 0) + e
        return Monomial(out)

    def exponent_vector(self, variables: list[Var]) -> tuple[int, ...]:
        return tuple(self.degree_of(v) for v in variables)

    def __str__(self):
        if not self.exps:
            return "1"
        return "*".join(f"{v}^{e}" if e > 1 else str(v) for v, e in self.exps)

    def __repr__(self):
        return f"Monomial({self})"


ONE = Monomial()


class Polynomial:
    """Immutable sparse polynomial with a declared variable scope."""

    __slots__ = ("terms", "scope")

    def __init__(self, terms: Mapping[Monomial, float], scope: Iterable[Var]):
        scope = frozenset(scope)
        pruned = {}
        for m, c in terms.items():
            c = float(c)
            if abs(c) < COEF_PRUNE:
                continue
            bad = m.variables() - scope
            if bad:
                raise ScopeError(
                    f"monomial {m} uses variables outside the declared scope: "
                    + ", ".join(str(v) for v in sorted(bad)),
                    offending=sorted(bad),
                )
            pruned[m] = c
        object.__setattr__(self, "terms", pruned)
        object.__setattr__(self, "scope", scope)

    def __setattr__(self, *a):
        raise AttributeError("Polynomial is immutable")

    # -- constructors -------------------------------------------------------

    @staticmethod
    def zero(scope: Iterable[Var] = ()) -> "Polynomial":
        return Polynomial({}, scope)

    @staticmethod
    def constant(c: float, scope: Iterable[Var] = ()) -> "Polynomial":
        return Polynomial({ONE: c}, scope)

    @staticmethod
    def variable(v: Var, scope: Iterable[Var] | None = None) -> "Polynomial":
        return Polynomial({Monomial({v: 1}): 1.0}, scope if scope is not None else [v])

    # -- basic queries -------------------------------------------------------

    def degree(self) -> int:
        return max((m.degree() for m in self.terms), default=0)

    def coefficient(self, m: Monomial) -> float:
        return self.terms.get(m, 0.0)

    def variables(self) -> frozenset[Var]:
        out = set()
        for m in self.terms:
            out |= m.variables()
        return frozenset(out)

    def is_zero(self) -> bool:
        return not self.terms

    def sorted_terms(self) -> list[tuple[Monomial, float]]:
        return sorted(self.terms.items(), key=lambda kv: kv[0].sort_key())

    def __eq__(self, other):
        """Term maps agree after pruning: coefficients match to within 1e-12."""
        if not isinstance(other, Polynomial):
            return NotImplemented
        for m in self.terms.keys() | other.terms.keys():
            if abs(self.terms.get(m, 0.0) - other.terms.get(m, 0.0)) >= COEF_PRUNE:
                return False
        return True

    __hash__ = None  # tolerance-based equality is incompatible with hashing

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for m, c in self.sorted_terms():
            parts.append(f"{c:+g}" if m == ONE else f"{c:+g}*{m}")
        return " ".join(parts)

    def __repr__(self):
        return f"Polynomial({self})"

    # -- scope handling ------------------------------------------------------

    def with_scope(self, scope: Iterable[Var]) -> "Polynomial":
        """Re-declare the scope; it must cover every variable in use."""
        return Polynomial(self.terms, scope)

    def _require_same_scope(self, other: "Polynomial", op: str):
        if self.scope != other.scope:
            diff = sorted(self.scope.symmetric_difference(other.scope))
            raise ScopeError(
                f"{op}: operand scopes differ on " + ", ".join(str(v) for v in diff),
                offending=diff,
            )

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(other, self.scope)
        self._require_same_scope(other, "add")
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(out, self.scope)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({m: -c for m, c in self.terms.items()}, self.scope)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(other, self.scope)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        self._require_same_scope(other, "mul")
        out: dict[Monomial, float] = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                m = ma * mb
                out[m] = out.get(m, 0.0) + ca * cb
        return Polynomial(out, self.scope)

    def __rmul__(self, other):
        return self.__mul__(other)

    def scale(self, c: float) -> "Polynomial":
        return Polynomial({m: c * v for m, v in self.terms.items()}, self.scope)

    def __pow__(self, n: int) -> "Polynomial":
        if not isinstance(n, int) or n < 0:
            raise ValueError("polynomial powers must be nonnegative integers")
        out = Polynomial.constant(1.0, self.scope)
        for _ in range(n):
            out = out * self
        return out

    # -- calculus and evaluation ----------------------------------------------

    def differentiate(self, v: Var) -> "Polynomial":
        """Formal partial derivative with respect to ``v`` (must be in scope)."""
        if v not in self.scope:
            raise ScopeError(f"cannot differentiate in {v}: not in scope", offending=[v])
        out: dict[Monomial, float] = {}
        for m, c in self.terms.items():
            e = m.degree_of(v)
            if e == 0:
                continue
            rest = {w: k for w, k in m.exps if w != v}
            if e > 1:
                rest[v] = e - 1
            mm = Monomial(rest)
            out[mm] = out.get(mm, 0.0) + c * e
        return Polynomial(out, self.scope)

    def evaluate(self, point: Mapping[Var, float]) -> float:
        """Evaluate at a point assigning every scope variable.

        Terms are summed in lexicographic monomial order so results are
        bit-reproducible across runs.
        """
        missing = [v for v in sorted(self.scope) if v not in point]
        if missing:
            raise EvaluationError(
                "evaluation point is missing " + ", ".join(str(v) for v in missing),
                missing=missing,
            )
        total = 0.0
        for m, c in self.sorted_terms():
            val = c
            for v, e in m.exps:
                val *= float(point[v]) ** e
            total += val
        return total

    def compose(self, mapping: Mapping[Var, "Polynomial"]) -> "Polynomial":
        """Substitute polynomials for variables; unmapped variables stay put."""
        scope = set(self.scope)
        for p in mapping.values():
            scope |= p.scope
        images = {}
        for v in self.scope:
            images[v] = mapping.get(v, Polynomial.variable(v, scope)).with_scope(scope)
        out = Polynomial.zero(scope)
        for m, c in self.terms.items():
            term = Polynomial.constant(c, scope)
            for v, e in m.exps:
                term = term * images[v] ** e
            out = out + term
        return out

    def substitute(self, assignment: Mapping[Var, float]) -> "Polynomial":
        """Replace a subset of variables by constants; scope shrinks accordingly."""
        out: dict[Monomial, float] = {}
        for m, c in self.terms.items():
            val = c
            rest = {}
            for v, e in m.exps:
                if v in assignment:
                    val *= float(assignment[v]) ** e
                else:
                    rest[v] = e
            mm = Monomial(rest)
            out[mm] = out.get(mm, 0.0) + val
        return Polynomial(out, self.scope - set(assignment))


def monomial_basis(variables: Iterable[Var], max_degree: int) -> list[Monomial]:
    """All monomials of total degree <= max_degree, in graded lex order.

    The count equals C(n + d, d) for n variables and degree bound d.
    """
    if max_degree < 0:
        raise ValueError("max_degree must be >= 0")
    vs = sorted(set(variables))
    out = [ONE]
    for d in range(1, max_degree + 1):
        for combo in itertools.combinations_with_replacement(vs, d):
            exps: dict[Var, int] = {}
            for v in combo:
                exps[v] = exps.get(v, 0) + 1
            out.append(Monomial(exps))
    out.sort(key=Monomial.sort_key)
    assert len(out) == comb(len(vs) + max_degree, max_degree)
    return out


class PolyVector:
    """Fixed-length vector of polynomials sharing one scope."""

    __slots__ = ("entries",)

    def __init__(self, entries: Iterable[Polynomial]):
        entries = tuple(entries)
        if entries:
            scope = entries[0].scope
            for p in entries[1:]:
                if p.scope != scope:
                    raise ScopeError("PolyVector entries must share a scope")
        object.__setattr__(self, "entries", entries)

    def __setattr__(self, *a):
        raise AttributeError("PolyVector is immutable")

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __iter__(self):
        return iter(self.entries)

    def evaluate(self, point) -> list[float]:
        return [p.evaluate(point) for p in self.entries]


class PolyMatrix:
    """Rectangular array of polynomials with explicit shape and shared scope."""

    __slots__ = ("rows", "shape")

    def __init__(self, rows: Iterable[Iterable[Polynomial]], shape: tuple[int, int] | None = None):
        rows = tuple(tuple(r) for r in rows)
        if shape is None:
            shape = (len(rows), len(rows[0]) if rows else 0)
        if len(rows) != shape[0] or any(len(r) != shape[1] for r in rows):
            raise ValueError(f"ragged or mis-shaped PolyMatrix, expected {shape}")
        scopes = {p.scope for r in rows for p in r}
        if len(scopes) > 1:
            raise ScopeError("PolyMatrix entries must share a scope")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "shape", shape)

    def __setattr__(self, *a):
        raise AttributeError("PolyMatrix is immutable")

    def __getitem__(self, ij):
        i, j = ij
        return self.rows[i][j]

    def column(self, j) -> PolyVector:
        return PolyVector(r[j] for r in self.rows)


# -- canonical textual serialization ------------------------------------------


def poly_to_records(p: Polynomial) -> list[dict]:
    """Serialize to the canonical record list, one record per term.

    Each record is {"exps": {"x3": 2, "u1": 1}, "coef": -0.45}; terms appear
    in lexicographic monomial order.
    """
    out = []
    for m, c in p.sorted_terms():
        out.append({"exps": {str(v): e for v, e in m.exps}, "coef": c})
    return out


def poly_from_records(records: Iterable[Mapping], scope: Iterable[Var]) -> Polynomial:
    terms: dict[Monomial, float] = {}
    for rec in records:
        m = Monomial({Var.parse(name): int(e) for name, e in rec["exps"].items()})
        terms[m] = terms.get(m, 0.0) + float(rec["coef"])
    return Polynomial(terms, scope)
