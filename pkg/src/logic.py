""" Formulas, weakest preconditions and a finite-domain validity checker

Validity is decided over the bounded domain D = [-B, B]. Applications of
uninterpreted functions are replaced by fresh value variables plus
functional-consistency constraints, and the search for a counterexample joins
one variable at a time, filtering the candidate rows with numpy as soon as a
constraint has all of its variables assigned.
"""
import enum
import functools
import logging
import operator
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .lang import (
    And, App, Assert1, Assert2, Assign, Assume, BinOp, BoolConst, Call, Cmp,
    Const, FALSE, LPCopy, Nondet, Not, Or, Return, TRUE, Var, ret_var,
)

logger = logging.getLogger('lockweaver')

DEFAULT_BOUND = 4
DEFAULT_BUDGET = 10 ** 7

_NEGATED = {"==": "!=", "!=": "==", "<": ">=", ">=": "<", ">": "<=", "<=": ">"}
_COMPARE = {"==": operator.eq, "!=": operator.ne, "<": operator.lt,
            "<=": operator.le, ">": operator.gt, ">=": operator.ge}


@dataclass(frozen=True)
class Domain:
    """ The bounded integer domain and the enumeration budget

    Parameters
    ----------
    bound: int
        Variables range over [-bound, bound]
    budget: int
        Maximum number of candidate valuations materialised per query
    """
    bound: int = DEFAULT_BOUND
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        if self.bound < 1:
            raise ValueError("Domain bound must be at least 1")
        if self.budget < 1:
            raise ValueError("Enumeration budget must be positive")

    @property
    def values(self):
        """ Domain values ordered 0, 1, -1, 2, -2, ... """
        ordered = [0]
        for ii in range(1, self.bound + 1):
            ordered += [ii, -ii]
        return np.array(ordered, dtype=np.int64)


DEFAULT_DOMAIN = Domain()


@dataclass
class Valuation:
    """ Integer values for variables and finite tables for functions """
    values: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def __str__(self):
        parts = [f"{var}={val}" for var, val in
                 sorted(self.values.items(), key=lambda kv: str(kv[0]))]
        for fn in sorted(self.tables):
            for args, val in sorted(self.tables[fn].items()):
                parts.append(f"{fn}({', '.join(map(str, args))})={val}")
        return ", ".join(parts)

    def to_dict(self):
        return dict(values={str(k): v for k, v in self.values.items()},
                    tables={fn: {",".join(map(str, a)): v for a, v in t.items()}
                            for fn, t in self.tables.items()})


class Status(enum.Enum):
    VALID = "valid"
    INVALID = "invalid"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class TriState:
    """ Result of a validity query; Invalid carries a falsifying witness """
    status: Status
    witness: Valuation = None

    @property
    def valid(self):
        return self.status is Status.VALID

    @property
    def invalid(self):
        return self.status is Status.INVALID

    @property
    def unknown(self):
        return self.status is Status.UNKNOWN

    def __str__(self):
        if self.invalid:
            return f"invalid ({self.witness})"
        return self.status.value


VALID = TriState(Status.VALID)
UNKNOWN = TriState(Status.UNKNOWN)


# Normal form

def _sort_key(expr):
    return str(expr)


@functools.lru_cache(maxsize=None)
def normalize(expr):
    """ Syntactic normal form

    Folds constants, pushes negations into comparisons, flattens, sorts and
    deduplicates conjunctions and disjunctions, and orders the operands of
    ``==`` and ``!=``. The result never contains Not and is idempotent.
    """
    if isinstance(expr, (Var, Const, BoolConst, Nondet)):
        return expr
    if isinstance(expr, App):
        return App(expr.fn, tuple(normalize(a) for a in expr.args))
    if isinstance(expr, BinOp):
        left, right = normalize(expr.left), normalize(expr.right)
        if isinstance(left, Const) and isinstance(right, Const):
            value = left.value + right.value if expr.op == "+" else left.value - right.value
            return Const(value)
        if isinstance(right, Const) and right.value == 0:
            return left
        if expr.op == "+" and isinstance(left, Const) and left.value == 0:
            return right
        return BinOp(expr.op, left, right)
    if isinstance(expr, Cmp):
        left, right = normalize(expr.left), normalize(expr.right)
        if isinstance(left, Const) and isinstance(right, Const):
            return BoolConst(_COMPARE[expr.op](left.value, right.value))
        if left == right:
            return BoolConst(expr.op in ("==", "<=", ">="))
        if expr.op in ("==", "!=") and _sort_key(right) < _sort_key(left):
            left, right = right, left
        return Cmp(expr.op, left, right)
    if isinstance(expr, Not):
        return _push_not(normalize(expr.arg))
    if isinstance(expr, (And, Or)):
        absorbing, neutral = (FALSE, TRUE) if isinstance(expr, And) else (TRUE, FALSE)
        args = set()
        for arg in expr.args:
            arg = normalize(arg)
            if arg == absorbing:
                return absorbing
            if arg == neutral:
                continue
            if type(arg) is type(expr):
                args.update(arg.args)
            else:
                args.add(arg)
        if not args:
            return neutral
        if len(args) == 1:
            return args.pop()
        return type(expr)(tuple(sorted(args, key=_sort_key)))
    raise TypeError(f"Cannot normalize {expr!r}")


def _push_not(expr):
    if isinstance(expr, BoolConst):
        return BoolConst(not expr.value)
    if isinstance(expr, Cmp):
        return normalize(Cmp(_NEGATED[expr.op], expr.left, expr.right))
    if isinstance(expr, And):
        return normalize(Or(tuple(Not(a) for a in expr.args)))
    if isinstance(expr, Or):
        return normalize(And(tuple(Not(a) for a in expr.args)))
    raise TypeError(f"Cannot negate non-boolean {expr}")


def negate(expr):
    return normalize(Not(expr))


def implies(pre, post):
    return Or((Not(pre), post))


def conjuncts(expr):
    expr = normalize(expr)
    if isinstance(expr, And):
        return expr.args
    if expr == TRUE:
        return ()
    return (expr,)


def atoms(expr):
    """ Leaves of the positive and/or structure of a formula """
    expr = normalize(expr)
    if isinstance(expr, (And, Or)):
        out = set()
        for arg in expr.args:
            out |= atoms(arg)
        return out
    if isinstance(expr, BoolConst):
        return set()
    return {expr}


def is_positive(expr):
    """ True when no negation appears outside the atoms """
    if isinstance(expr, Not):
        return False
    if isinstance(expr, (And, Or)):
        return all(is_positive(a) for a in expr.args)
    return True


@functools.lru_cache(maxsize=None)
def free_vars(expr):
    if isinstance(expr, Var):
        return frozenset([expr])
    if isinstance(expr, (BinOp, Cmp)):
        return free_vars(expr.left) | free_vars(expr.right)
    if isinstance(expr, (And, Or, App)):
        return frozenset().union(*[free_vars(a) for a in expr.args])
    if isinstance(expr, Not):
        return free_vars(expr.arg)
    return frozenset()


def functions(expr):
    if isinstance(expr, App):
        return {expr.fn}.union(*[functions(a) for a in expr.args])
    if isinstance(expr, (BinOp, Cmp)):
        return functions(expr.left) | functions(expr.right)
    if isinstance(expr, (And, Or)):
        return set().union(*[functions(a) for a in expr.args])
    if isinstance(expr, Not):
        return functions(expr.arg)
    return set()


def subst(expr, mapping):
    """ Simultaneously replace variables according to mapping """
    if isinstance(expr, Var):
        return mapping.get(expr, expr)
    if isinstance(expr, App):
        return App(expr.fn, tuple(subst(a, mapping) for a in expr.args))
    if isinstance(expr, (BinOp, Cmp)):
        return type(expr)(expr.op, subst(expr.left, mapping), subst(expr.right, mapping))
    if isinstance(expr, (And, Or)):
        return type(expr)(tuple(subst(a, mapping) for a in expr.args))
    if isinstance(expr, Not):
        return Not(subst(expr.arg, mapping))
    return expr


def fresh_logical(stem, taken):
    """ A logical variable named stem plus primes, avoiding taken names """
    name = stem + "'"
    while name in taken:
        name += "'"
    return Var(name, "logical")


def _havoc(phi, variables):
    taken = {v.name for v in free_vars(phi)}
    mapping = {}
    for var in variables:
        fresh = fresh_logical(f"{var.name}#", taken)
        taken.add(fresh.name)
        mapping[var] = fresh
    return mapping


def wp(stmt, phi):
    """ Weakest precondition of phi with respect to a statement

    Parameters
    ----------
    stmt: Stmt
    phi: Expr

    Returns
    -------
    formula: Expr
        Normalized weakest precondition
    """
    if isinstance(stmt, Assign):
        if isinstance(stmt.rhs, Nondet):
            return normalize(subst(phi, _havoc(phi, [stmt.target])))
        return normalize(subst(phi, {stmt.target: stmt.rhs}))
    if isinstance(stmt, Assume):
        return normalize(implies(stmt.cond, phi))
    if isinstance(stmt, Return):
        return normalize(subst(phi, {ret_var(i): v for i, v in enumerate(stmt.values)}))
    if isinstance(stmt, LPCopy):
        return normalize(subst(phi, dict(stmt.copies)))
    if isinstance(stmt, Call):
        mapping = _havoc(phi, stmt.params)
        mapping.update({v: Const(0) for v in stmt.locals})
        return normalize(subst(phi, mapping))
    return normalize(phi)


def rename_locals(phi, taken=()):
    """ Replace thread-local variables by logical variables

    Locals and params ``v`` become ``v'``; shadows ``old(v)`` become
    ``v_in'``. Extra primes are added to avoid names in ``taken`` and logical
    variables already present, so ``ret' == ret`` becomes ``ret' == ret''``.

    Parameters
    ----------
    phi: Expr
    taken: iterable of str
        Names that must not be used for the new logical variables

    Returns
    -------
    formula: Expr
    """
    variables = free_vars(phi)
    names = set(taken) | {v.name for v in variables if v.kind == "logical"}
    mapping = {}
    for var in sorted((v for v in variables if v.is_thread_local),
                      key=lambda v: (v.kind == "shadow", v.name)):
        stem = f"{var.base}_in" if var.kind == "shadow" else var.name
        fresh = fresh_logical(stem, names)
        names.add(fresh.name)
        mapping[var] = fresh
    return normalize(subst(phi, mapping))


# Evaluation

def evaluate(expr, values, tables=None):
    """ Evaluate an expression on concrete values

    Parameters
    ----------
    expr: Expr
    values: dict
        Maps Var to int
    tables: dict, optional
        Maps function name to a dict from argument tuples to int

    Returns
    -------
    value: int or bool
    """
    if isinstance(expr, Var):
        return values[expr]
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, BoolConst):
        return expr.value
    if isinstance(expr, BinOp):
        left = evaluate(expr.left, values, tables)
        right = evaluate(expr.right, values, tables)
        return left + right if expr.op == "+" else left - right
    if isinstance(expr, Cmp):
        return _COMPARE[expr.op](evaluate(expr.left, values, tables),
                                 evaluate(expr.right, values, tables))
    if isinstance(expr, And):
        return all(evaluate(a, values, tables) for a in expr.args)
    if isinstance(expr, Or):
        return any(evaluate(a, values, tables) for a in expr.args)
    if isinstance(expr, Not):
        return not evaluate(expr.arg, values, tables)
    if isinstance(expr, App):
        args = tuple(evaluate(a, values, tables) for a in expr.args)
        try:
            return tables[expr.fn][args]
        except (KeyError, TypeError):
            raise KeyError(f"No table entry for {expr.fn}{args}")
    raise TypeError(f"Cannot evaluate {expr}")


def _np_eval(expr, cols):
    if isinstance(expr, Var):
        return cols[expr]
    if isinstance(expr, Const):
        return np.int64(expr.value)
    if isinstance(expr, BoolConst):
        return np.bool_(expr.value)
    if isinstance(expr, BinOp):
        left, right = _np_eval(expr.left, cols), _np_eval(expr.right, cols)
        return left + right if expr.op == "+" else left - right
    if isinstance(expr, Cmp):
        return _COMPARE[expr.op](_np_eval(expr.left, cols), _np_eval(expr.right, cols))
    if isinstance(expr, And):
        return functools.reduce(np.logical_and, [_np_eval(a, cols) for a in expr.args])
    if isinstance(expr, Or):
        return functools.reduce(np.logical_or, [_np_eval(a, cols) for a in expr.args])
    if isinstance(expr, Not):
        return np.logical_not(_np_eval(expr.arg, cols))
    raise TypeError(f"Cannot evaluate {expr} over a domain")


# Satisfiability over the bounded domain

class _OverBudget(Exception):
    pass


def _ackermannize(formulas):
    """ Replace function applications by value variables

    Returns the rewritten formulas, the consistency constraints and a list of
    (function, argument expressions, value variable).
    """
    table = {}

    def replace(expr):
        if isinstance(expr, App):
            key = App(expr.fn, tuple(replace(a) for a in expr.args))
            if key not in table:
                table[key] = Var(f"{expr.fn}#{len(table)}", "logical")
            return table[key]
        if isinstance(expr, (BinOp, Cmp)):
            return type(expr)(expr.op, replace(expr.left), replace(expr.right))
        if isinstance(expr, (And, Or)):
            return type(expr)(tuple(replace(a) for a in expr.args))
        if isinstance(expr, Not):
            return Not(replace(expr.arg))
        return expr

    rewritten = [replace(f) for f in formulas]
    apps = list(table.items())
    constraints = []
    for ii, (first, value_i) in enumerate(apps):
        for second, value_j in apps[ii + 1:]:
            if first.fn != second.fn:
                continue
            differ = [Cmp("!=", a, b) for a, b in zip(first.args, second.args)]
            constraints.append(normalize(Or(tuple(differ) + (Cmp("==", value_i, value_j),))))
    return rewritten, constraints, [(app.fn, app.args, var) for app, var in apps]


def _var_key(var):
    return (str(var), var.name, var.kind)


def _search(formulas, domain, spent):
    values = domain.values
    size = len(values)
    pending = [(f, free_vars(f)) for f in formulas]
    remaining = set().union(*[vs for _, vs in pending])
    cols = {}
    rows = 1
    while remaining:
        assigned = set(cols)

        def score(var):
            done = sum(1 for _, vs in pending if var in vs and vs <= assigned | {var})
            touching = sum(1 for _, vs in pending if var in vs)
            return (-done, -touching) + _var_key(var)

        var = min(remaining, key=score)
        remaining.discard(var)
        spent[0] += rows * size
        if spent[0] > domain.budget:
            raise _OverBudget()
        cols = {v: np.repeat(col, size) for v, col in cols.items()}
        cols[var] = np.tile(values, rows)
        rows *= size

        assigned = set(cols)
        ready = [f for f, vs in pending if vs <= assigned]
        pending = [(f, vs) for f, vs in pending if not vs <= assigned]
        if ready:
            mask = np.ones(rows, dtype=bool)
            for formula in ready:
                mask &= np.broadcast_to(_np_eval(formula, cols), (rows,))
            cols = {v: col[mask] for v, col in cols.items()}
            rows = int(mask.sum())
            if rows == 0:
                return None
    return {v: int(col[0]) for v, col in cols.items()}


def satisfy(formulas, domain=DEFAULT_DOMAIN):
    """ Find a valuation over the domain satisfying every formula

    Parameters
    ----------
    formulas: iterable of Expr
    domain: Domain

    Returns
    -------
    valuation: Valuation or None
        None when the conjunction is unsatisfiable over the domain

    Raises
    ------
    BudgetExceeded
        When the search needs more candidate rows than the budget allows
    """
    from .errors import BudgetExceeded
    parts = []
    for formula in formulas:
        parts += conjuncts(formula)
    if FALSE in parts:
        return None
    rewritten, constraints, apps = _ackermannize(parts)
    rewritten = [normalize(f) for f in rewritten] + constraints

    graph = nx.Graph()
    closed = []
    for formula in rewritten:
        variables = sorted(free_vars(formula), key=_var_key)
        if not variables:
            closed.append(formula)
            continue
        graph.add_nodes_from(variables)
        graph.add_edges_from(zip(variables, variables[1:]))
    if any(not bool(evaluate(f, {})) for f in closed):
        return None

    spent = [0]
    witness = {}
    components = sorted((sorted(c, key=_var_key) for c in nx.connected_components(graph)),
                        key=lambda c: _var_key(c[0]))
    for component in components:
        members = set(component)
        part = [f for f in rewritten if free_vars(f) and free_vars(f) <= members]
        try:
            found = _search(part, domain, spent)
        except _OverBudget:
            raise BudgetExceeded(f"Enumeration budget {domain.budget} exceeded")
        if found is None:
            return None
        witness.update(found)

    # variables occurring only under a single application are unconstrained
    default = int(domain.values[0])
    for _, args, var in apps:
        witness.setdefault(var, default)
        for arg in args:
            for free in free_vars(arg):
                witness.setdefault(free, default)

    app_vars = {var for _, _, var in apps}
    tables = {}
    for fn, args, var in apps:
        key = tuple(evaluate(a, witness) for a in args)
        tables.setdefault(fn, {})[key] = witness[var]
    return Valuation({v: x for v, x in witness.items() if v not in app_vars}, tables)


@functools.lru_cache(maxsize=1 << 16)
def is_valid(phi, domain=DEFAULT_DOMAIN):
    """ Decide validity of a quantifier-free formula over the domain

    Free logical variables are implicitly universally quantified.

    Parameters
    ----------
    phi: Expr
    domain: Domain

    Returns
    -------
    result: TriState
        Valid, Invalid with a falsifying valuation, or Unknown when the
        enumeration budget is exhausted
    """
    from .errors import BudgetExceeded
    goal = normalize(phi)
    if goal == TRUE:
        return VALID
    try:
        witness = satisfy([negate(goal)], domain)
    except BudgetExceeded:
        logger.debug(f"Validity of {goal} unknown within budget {domain.budget}")
        return UNKNOWN
    if witness is None:
        return VALID
    return TriState(Status.INVALID, witness)


def hoare_valid(pre, stmt, post, domain=DEFAULT_DOMAIN):
    """ Validity of the Hoare triple {pre} stmt {post} """
    return is_valid(normalize(implies(pre, wp(stmt, post))), domain)


# Coverage by positive combinations

def _positively_over(phi, members):
    if phi in members or isinstance(phi, BoolConst):
        return True
    if isinstance(phi, (And, Or)):
        return all(_positively_over(a, members) for a in phi.args)
    return False


def _symbols(expr):
    return {("var",) + _var_key(v) for v in free_vars(expr)} | \
        {("fn", fn) for fn in functions(expr)}


def _related(phi, predicates):
    graph = nx.Graph()
    for formula in (phi,) + tuple(predicates):
        symbols = sorted(_symbols(formula))
        graph.add_nodes_from(symbols)
        graph.add_edges_from(zip(symbols, symbols[1:]))
    component = set()
    for symbol in _symbols(phi):
        component |= nx.node_connected_component(graph, symbol)
    return [p for p in predicates if _symbols(p) & component]


def _copy(expr, tag):
    if isinstance(expr, Var):
        return Var(f"{expr.name}@{tag}", expr.kind, expr.base)
    if isinstance(expr, App):
        return App(f"{expr.fn}@{tag}", tuple(_copy(a, tag) for a in expr.args))
    if isinstance(expr, (BinOp, Cmp)):
        return type(expr)(expr.op, _copy(expr.left, tag), _copy(expr.right, tag))
    if isinstance(expr, (And, Or)):
        return type(expr)(tuple(_copy(a, tag) for a in expr.args))
    if isinstance(expr, Not):
        return Not(_copy(expr.arg, tag))
    return expr


def covers(phi, predicates, domain=DEFAULT_DOMAIN, exact=True):
    """ Whether phi is a positive combination of the given predicates

    A syntactic check runs first. Otherwise phi is covered iff no two
    valuations exist where phi holds in the first, fails in the second and
    every predicate true in the first is also true in the second.

    Parameters
    ----------
    phi: Expr
    predicates: iterable of Expr
    domain: Domain
    exact: bool
        When False only the syntactic check is made

    Returns
    -------
    covered: bool
        False when the enumeration budget is exhausted
    """
    from .errors import BudgetExceeded
    phi = normalize(phi)
    members = frozenset(normalize(p) for p in predicates)
    if _positively_over(phi, members):
        return True
    if not exact:
        return False
    relevant = sorted(_related(phi, members), key=_sort_key)
    query = [_copy(phi, 1), negate(_copy(phi, 2))]
    query += [Or((Not(_copy(p, 1)), _copy(p, 2))) for p in relevant]
    try:
        return satisfy(query, domain) is None
    except BudgetExceeded:
        logger.debug(f"Coverage of {phi} unknown within budget")
        return False


def equivalent(first, second, domain=DEFAULT_DOMAIN):
    """ Whether two predicates denote the same predicate family

    Non-symbolic predicates are compared by validity of the biconditional.
    Predicates with one logical variable each are equivalent when shifting
    that variable by a small constant makes them equivalent, as ``x == w``
    and ``x == w + 1`` are.
    """
    first, second = normalize(first), normalize(second)
    if first == second:
        return True
    program = [frozenset(v for v in free_vars(p) if v.kind != "logical")
               for p in (first, second)]
    logical = [sorted((v for v in free_vars(p) if v.kind == "logical"), key=_var_key)
               for p in (first, second)]
    if program[0] != program[1] or functions(first) != functions(second):
        return False
    if len(logical[0]) != len(logical[1]) or len(logical[0]) > 1:
        return False
    if not logical[0]:
        return is_valid(_iff(first, second), domain).valid
    a, b = logical[0][0], logical[1][0]
    for shift in (0, 1, -1, 2, -2):
        shifted = subst(second, {b: BinOp("+", a, Const(shift))})
        if is_valid(_iff(first, shifted), domain).valid:
            return True
    return False


def _iff(first, second):
    return And((implies(first, second), implies(second, first)))


def simplify_equivalent(predicates, domain=DEFAULT_DOMAIN, pinned=()):
    """ Drop predicates equivalent to a shorter one already kept

    Parameters
    ----------
    predicates: iterable of Expr
    domain: Domain
    pinned: iterable of Expr
        Predicates that are always kept

    Returns
    -------
    kept: list of Expr
    """
    pinned = {normalize(p) for p in pinned}
    ordered = sorted({normalize(p) for p in predicates},
                     key=lambda p: (p not in pinned, len(str(p)), str(p)))
    kept = []
    for pred in ordered:
        if pred in pinned or not any(equivalent(pred, other, domain) for other in kept):
            kept.append(pred)
    return kept
