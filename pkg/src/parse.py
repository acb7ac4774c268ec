""" Parser for ``.lcl`` library sources and their proof annotations """
import logging
from dataclasses import dataclass, field
from pathlib import Path

from lark import Lark, Transformer, v_args
from lark.exceptions import UnexpectedInput, VisitError

from .errors import LockweaverError, ParseError
from .lang import (
    Acquire, And, App, Assert1, Assert2, Assign, Assume, BinOp, BoolConst, Cmp,
    Const, If, Label, Library, LPCopy, Nondet, Not, Or, Procedure, Release,
    Return, Skip, Var, While, ret_var, shadow_of, walk,
)

logger = logging.getLogger('lockweaver')

GRAMMAR = r"""
    start: _item*
    _item: ufun | globals | proc | inv | basis | seed

    ufun: "ufun" NAME "/" INT ";"
    globals: "globals" "{" global_init* "}"
    global_init: NAME "=" expr ";"

    proc: "proc" NAME "(" [params] ")" [ensures] block
    params: NAME ("," NAME)*
    ensures: "ensures" expr
    block: "{" stmt* "}"

    ?stmt: "skip" ";"                              -> skip
         | NAME "=" "*" ";"                        -> havoc
         | NAME "=" expr ";"                       -> assign
         | if_stmt
         | "while" "(" expr ")" block              -> while_
         | "assert" expr ";"                       -> assert1
         | "assert2" expr ";"                      -> assert2
         | "assume" expr ";"                       -> assume
         | "return" expr ";"                       -> return_
         | "return" "(" expr ("," expr)+ ")" ";"   -> return_
         | "acquire" "(" NAME ")" ";"              -> acquire
         | "release" "(" NAME ")" ";"              -> release
         | "lp" ";"                                -> lp
         | "@" NAME ":"                            -> label

    if_stmt: "if" "(" expr ")" block ["else" (block | if_stmt)]

    inv: "@inv" "(" point ")" "{" expr "}"
    basis: "@basis" "(" point ")" "{" (expr ";")* "}"
    seed: "@seed" "{" (expr ";")* "}"
    point: NAME ("." NAME)?

    ?expr: or_expr
    ?or_expr: and_expr
            | and_expr ("||" and_expr)+            -> or_
    ?and_expr: not_expr
             | not_expr ("&&" not_expr)+           -> and_
    ?not_expr: "!" not_expr                        -> not_
             | cmp
    ?cmp: sum
        | sum CMPOP sum                            -> cmp
    ?sum: term
        | sum "+" term                             -> add
        | sum "-" term                             -> sub
    ?term: "-" term                                -> neg
         | atom
    ?atom: INT                                     -> const
         | "true"                                  -> true
         | "false"                                 -> false
         | "old" "(" NAME ")"                      -> old
         | NAME "(" expr ("," expr)* ")"           -> app
         | NAME                                    -> var
         | "(" expr ")"

    CMPOP: "==" | "!=" | "<=" | ">=" | "<" | ">"
    NAME: /[A-Za-z_][A-Za-z0-9_]*'*/
    INT: /[0-9]+/
    COMMENT: /\/\/[^\n]*/

    %import common.WS
    %ignore WS
    %ignore COMMENT
"""

_parser = Lark(GRAMMAR, parser="lalr", propagate_positions=True)


@dataclass
class Annotations:
    """ Proof annotations found in a source, keyed by program point text """
    inv: dict = field(default_factory=dict)
    basis: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)

    @property
    def empty(self):
        return not (self.inv or self.basis or self.seeds)


@v_args(inline=True)
class _ToAst(Transformer):
    """ Build statements and expressions with unresolved variables """

    def __init__(self):
        super().__init__()
        self.names = []

    def _seen(self, token):
        self.names.append((str(token), token.line, token.column))

    def _positions(self):
        """ First position of each name seen since the last call """
        positions = {}
        for name, line, column in self.names:
            positions.setdefault(name, (line, column))
        self.names = []
        return positions

    def const(self, token):
        return Const(int(token))

    def true(self):
        return BoolConst(True)

    def false(self):
        return BoolConst(False)

    def var(self, token):
        self._seen(token)
        return Var(str(token), "global")

    def old(self, token):
        self._seen(token)
        return shadow_of(Var(str(token)))

    def app(self, name, *args):
        self._seen(name)
        return App(str(name), tuple(args))

    def neg(self, expr):
        if isinstance(expr, Const):
            return Const(-expr.value)
        return BinOp("-", Const(0), expr)

    def add(self, left, right):
        return BinOp("+", left, right)

    def sub(self, left, right):
        return BinOp("-", left, right)

    def cmp(self, left, op, right):
        return Cmp(str(op), left, right)

    def not_(self, expr):
        return Not(expr)

    def and_(self, *args):
        return And(tuple(args))

    def or_(self, *args):
        return Or(tuple(args))

    def skip(self):
        return Skip()

    def havoc(self, name):
        self._seen(name)
        return Assign(Var(str(name)), Nondet())

    def assign(self, name, expr):
        self._seen(name)
        return Assign(Var(str(name)), expr)

    def if_stmt(self, cond, then, orelse=None):
        if orelse is None:
            orelse = ()
        elif isinstance(orelse, If):
            orelse = (orelse,)
        return If(cond, then, orelse)

    def while_(self, cond, body):
        return While(cond, body)

    def assert1(self, expr):
        return Assert1(expr)

    def assert2(self, expr):
        return Assert2(expr)

    def assume(self, expr):
        return Assume(expr)

    def return_(self, *values):
        return Return(tuple(values))

    def acquire(self, name):
        return Acquire(str(name))

    def release(self, name):
        return Release(str(name))

    def lp(self):
        return LPCopy(())

    def label(self, name):
        return Label(str(name))

    def block(self, *stmts):
        return tuple(stmts)

    def params(self, *names):
        return [str(n) for n in names]

    def ensures(self, expr):
        return expr

    def point(self, *names):
        return ".".join(str(n) for n in names)

    def ufun(self, name, arity):
        return ("ufun", str(name), int(arity), name.line, name.column)

    def global_init(self, name, expr):
        return (Var(str(name)), expr, name.line, name.column, self._positions())

    def globals(self, *inits):
        return ("globals", inits)

    def proc(self, name, params, ensures, body):
        return ("proc", str(name), params or [], ensures, body,
                name.line, name.column, self._positions())

    def inv(self, point, expr):
        self._positions()
        return ("inv", point, expr)

    def basis(self, point, *exprs):
        self._positions()
        return ("basis", point, list(exprs))

    def seed(self, *exprs):
        self._positions()
        return ("seed", list(exprs))

    def start(self, *items):
        return list(items)


class _Scope(object):
    """ Name resolution for one procedure (or the global scope) """

    def __init__(self, library_globals, ufuns, proc=None, allow_old=False,
                 positions=None):
        self.globals = {v.name: v for v in library_globals}
        self.ufuns = ufuns
        self.proc = proc
        self.allow_old = allow_old
        self.positions = positions or {}

    def error(self, message, name):
        return ParseError(message, *self.positions.get(name, (None, None)))

    def lookup(self, name):
        if self.proc is not None:
            var = self.proc.lookup(name)
            if var is not None:
                return var
        return self.globals.get(name)

    def bind(self, expr):
        if isinstance(expr, Var):
            if expr.kind == "shadow":
                if not self.allow_old:
                    raise self.error(f"old({expr.base}) outside a two-state context",
                                     expr.base)
                if self.lookup(expr.base) is None:
                    raise self.error(f"Undeclared identifier {expr.base} in old()",
                                     expr.base)
                return expr
            if expr.name.endswith("'"):
                return Var(expr.name, "logical")
            var = self.lookup(expr.name)
            if var is None:
                raise self.error(f"Undeclared identifier {expr.name}", expr.name)
            return var
        if isinstance(expr, App):
            if expr.fn not in self.ufuns:
                raise self.error(f"Undeclared function {expr.fn}", expr.fn)
            if self.ufuns[expr.fn] != len(expr.args):
                raise self.error(
                    f"{expr.fn} expects {self.ufuns[expr.fn]} arguments", expr.fn)
            return App(expr.fn, tuple(self.bind(a) for a in expr.args))
        if isinstance(expr, (BinOp, Cmp)):
            return type(expr)(expr.op, self.bind(expr.left), self.bind(expr.right))
        if isinstance(expr, (And, Or)):
            return type(expr)(tuple(self.bind(a) for a in expr.args))
        if isinstance(expr, Not):
            return Not(self.bind(expr.arg))
        return expr


def _assigned_names(stmts):
    names = []
    for stmt in walk(stmts):
        if isinstance(stmt, Assign) and stmt.target.name not in names:
            names.append(stmt.target.name)
    return names


def _count_returns(name, body):
    sizes = {len(s.values) for s in walk(body) if isinstance(s, Return)}
    if len(sizes) > 1:
        raise ParseError(f"Procedure {name} returns differing numbers of values")
    return sizes.pop() if sizes else 1


def _bind_body(stmts, scope, two_state, copies):
    """ Resolve the variables of a body; assert2 statements may use old() """
    out = []
    for stmt in stmts:
        if isinstance(stmt, Assign):
            target = scope.lookup(stmt.target.name)
            if target is None:
                raise scope.error(f"Cannot assign to {stmt.target.name}",
                                  stmt.target.name)
            rhs = stmt.rhs if isinstance(stmt.rhs, Nondet) else scope.bind(stmt.rhs)
            out.append(Assign(target, rhs))
        elif isinstance(stmt, If):
            out.append(If(scope.bind(stmt.cond),
                          _bind_body(stmt.then, scope, two_state, copies),
                          _bind_body(stmt.orelse, scope, two_state, copies)))
        elif isinstance(stmt, While):
            out.append(While(scope.bind(stmt.cond),
                             _bind_body(stmt.body, scope, two_state, copies)))
        elif isinstance(stmt, Assume):
            out.append(Assume(scope.bind(stmt.cond)))
        elif isinstance(stmt, Assert1):
            out.append(Assert1(scope.bind(stmt.pred)))
        elif isinstance(stmt, Assert2):
            out.append(Assert2(two_state.bind(stmt.pred)))
        elif isinstance(stmt, Return):
            out.append(Return(tuple(scope.bind(v) for v in stmt.values)))
        elif isinstance(stmt, LPCopy):
            out.append(LPCopy(copies))
        else:
            out.append(stmt)
    return tuple(out)



def lp_copies(global_vars, params):
    """ The (shadow, variable) pairs copied at a linearization point """
    return tuple((shadow_of(v), v) for v in tuple(global_vars) + tuple(params))


def _build_procedure(item, global_vars, ufuns, allow_locks):
    _, name, param_names, ensures, body, line, column, positions = item
    statements = list(walk(body))
    if not allow_locks:
        if any(isinstance(s, (Acquire, Release)) for s in statements):
            raise ParseError("locking statement in input", line, column)
        if any(isinstance(s, LPCopy) for s in statements):
            raise ParseError("lp statement in input", line, column)
    lps = [ii for ii, s in enumerate(body) if isinstance(s, LPCopy)]
    nested_lps = sum(isinstance(s, LPCopy) for s in statements) - len(lps)
    # woven sources may take locks before the linearization point
    leading = all(isinstance(s, (Acquire, Release)) for s in body[:lps[0]]) if lps else True
    if nested_lps or len(lps) > 1 or not leading:
        raise ParseError(f"lp must be the first statement of {name}", line, column)

    if len(set(param_names)) != len(param_names):
        raise ParseError(f"Duplicate parameter in {name}", line, column)
    global_names = {v.name for v in global_vars}
    params = tuple(Var(p, "param") for p in param_names)
    for var in params:
        if var.name in global_names or var.name.endswith("'"):
            raise ParseError(f"Parameter {var.name} shadows a global", line, column)

    nret = _count_returns(name, body)
    ret_vars = tuple(ret_var(i) for i in range(nret))
    ret_names = {v.name for v in ret_vars}
    local_names = [n for n in _assigned_names(body)
                   if n not in global_names and n not in param_names
                   and n not in ret_names]
    for local_name in local_names:
        if local_name.endswith("'"):
            raise ParseError(f"Logical variable {local_name} assigned in {name}",
                             line, column)
    locals_ = tuple(Var(n, "local") for n in local_names) + ret_vars
    copies = ()
    if lps:
        copies = lp_copies(global_vars, params)
        locals_ += tuple(shadow for shadow, _ in copies)

    skeleton = Procedure(name, params, locals_, (), None, nret)
    two_state = _Scope(global_vars, ufuns, skeleton, allow_old=True,
                       positions=positions)
    body_scope = two_state if lps else _Scope(global_vars, ufuns, skeleton,
                                              positions=positions)
    try:
        bound_body = _bind_body(body, body_scope, two_state, copies)
        bound_ensures = two_state.bind(ensures) if ensures is not None else None
    except ParseError as exc:
        if exc.line is not None:
            line, column = exc.line, exc.column
        raise ParseError(f"{exc.message} (in {name})", line, column)
    return Procedure(name, params, locals_, bound_body, bound_ensures, nret)


def parse_source(text, allow_locks=False):
    """ Parse a library source and its annotations

    Parameters
    ----------
    text: str
        Source in the ``.lcl`` grammar
    allow_locks: bool
        Accept acquire, release and lp statements (woven or transformed
        sources). Input libraries must not contain them.

    Returns
    -------
    library: Library
    annotations: Annotations
        Unresolved annotations, see `resolve_formula`
    """
    try:
        items = _ToAst().transform(_parser.parse(text))
    except UnexpectedInput as exc:
        raise ParseError(f"syntax error: {exc.__class__.__name__}",
                         exc.line, exc.column)
    except VisitError as exc:
        raise ParseError(f"malformed input: {exc.orig_exc}")

    ufuns = {}
    global_items = None
    procs = []
    annotations = Annotations()
    for item in items:
        kind = item[0]
        if kind == "ufun":
            _, name, arity, line, column = item
            if name in ufuns:
                raise ParseError(f"Duplicate declaration of ufun {name}", line, column)
            if arity not in (1, 2):
                raise ParseError(f"ufun {name} must be unary or binary", line, column)
            ufuns[name] = arity
        elif kind == "globals":
            if global_items is not None:
                raise ParseError("Duplicate globals block")
            global_items = item[1]
        elif kind == "proc":
            procs.append(item)
        elif kind == "inv":
            if item[1] in annotations.inv:
                raise ParseError(f"Duplicate @inv for {item[1]}")
            annotations.inv[item[1]] = item[2]
        elif kind == "basis":
            annotations.basis.setdefault(item[1], []).extend(item[2])
        elif kind == "seed":
            annotations.seeds.extend(item[1])
    if global_items is None:
        raise ParseError("Missing globals block")

    global_vars = []
    globals_ = []
    for var, init, line, column, positions in global_items:
        if any(var.name == g.name for g in global_vars):
            raise ParseError(f"Duplicate declaration of global {var.name}",
                             line, column)
        if var.name.endswith("'"):
            raise ParseError(f"Global {var.name} may not be primed", line, column)
        try:
            bound = _Scope(global_vars, ufuns, positions=positions).bind(init)
        except ParseError as exc:
            if exc.line is not None:
                line, column = exc.line, exc.column
            raise ParseError(f"{exc.message} in initialiser of {var.name}",
                             line, column)
        global_vars.append(var)
        globals_.append((var, bound))

    names = [p[1] for p in procs]
    for name in names:
        if names.count(name) > 1:
            raise ParseError(f"Duplicate declaration of procedure {name}")
    procedures = tuple(_build_procedure(p, global_vars, ufuns, allow_locks)
                       for p in procs)
    library = Library(tuple(ufuns.items()), tuple(globals_), procedures)
    logger.debug(f"Parsed library with {len(procedures)} procedures")
    return library, annotations


def parse_library(text, allow_locks=False):
    """ Parse a library source, ignoring annotations

    Parameters
    ----------
    text: str
    allow_locks: bool

    Returns
    -------
    library: Library
    """
    library, _ = parse_source(text, allow_locks=allow_locks)
    return library


def read_library(path, allow_locks=False):
    """ Read a ``.lcl`` file from disk """
    path = Path(path)
    if not path.is_file():
        raise LockweaverError(f"No such library file {path}")
    return parse_source(path.read_text(), allow_locks=allow_locks)


def resolve_formula(expr, library, proc=None, two_state=False):
    """ Resolve variable kinds in an annotation formula

    Parameters
    ----------
    expr: Expr
        A formula as produced by the parser
    library: Library
    proc: Procedure, optional
        The procedure whose locals are in scope; globals only when None
    two_state: bool
        Allow ``old(v)``

    Returns
    -------
    formula: Expr
    """
    return _Scope(library.global_vars, library.arity, proc, two_state).bind(expr)


def try_resolve(expr, library, proc=None, two_state=True):
    """ Like `resolve_formula` but returns None if a name is out of scope """
    try:
        return resolve_formula(expr, library, proc, two_state)
    except ParseError:
        return None
