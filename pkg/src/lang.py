""" The lockweaver input language

Expressions, statements, procedures and libraries, the lowering of
structured procedure bodies to control-flow graphs, the library-wide control
graph with its quiescent vertex, and a printer for the concrete syntax.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import networkx as nx

from .errors import LibraryError

logger = logging.getLogger('lockweaver')

VAR_KINDS = ("global", "local", "param", "shadow", "logical")
QUIESCENT = "quiescent"
INDENT = "    "


class Expr(object):
    """ Base class of expression and formula nodes """

    def __str__(self):
        return render(self)


@dataclass(frozen=True)
class Var(Expr):
    """ A variable reference

    Shadow variables keep the name of the variable they copy in ``base`` and
    print as ``old(base)``. Logical variables carry a prime in their name.
    """
    name: str
    kind: str = "global"
    base: Optional[str] = None

    def __post_init__(self):
        if self.kind not in VAR_KINDS:
            raise ValueError(f"Unknown variable kind {self.kind}")
        if self.kind == "shadow" and not self.base:
            raise ValueError("Shadow variables need a base variable")

    @property
    def is_thread_local(self):
        return self.kind in ("local", "param", "shadow")

    def __str__(self):
        return render(self)


@dataclass(frozen=True)
class Const(Expr):
    value: int

    def __str__(self):
        return render(self)


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def __str__(self):
        return render(self)


@dataclass(frozen=True)
class App(Expr):
    """ Application of an uninterpreted function symbol """
    fn: str
    args: Tuple[Expr, ...]

    def __str__(self):
        return render(self)


@dataclass(frozen=True)
class Nondet(Expr):
    def __str__(self):
        return "*"


@dataclass(frozen=True)
class BoolConst(Expr):
    value: bool

    def __str__(self):
        return render(self)


@dataclass(frozen=True)
class Cmp(Expr):
    op: str
    left: Expr
    right: Expr

    def __str__(self):
        return render(self)


@dataclass(frozen=True)
class And(Expr):
    args: Tuple[Expr, ...]

    def __str__(self):
        return render(self)


@dataclass(frozen=True)
class Or(Expr):
    args: Tuple[Expr, ...]

    def __str__(self):
        return render(self)


@dataclass(frozen=True)
class Not(Expr):
    arg: Expr

    def __str__(self):
        return render(self)


TRUE = BoolConst(True)
FALSE = BoolConst(False)


def render(expr, context=0):
    """ Render an expression in the concrete syntax

    Parameters
    ----------
    expr: Expr
        The expression to render
    context: int
        Binding strength of the enclosing operator; parentheses are added
        when the expression binds more loosely

    Returns
    -------
    text: str
    """
    if isinstance(expr, Var):
        if expr.kind == "shadow":
            return f"old({expr.base})"
        return expr.name
    if isinstance(expr, Const):
        return str(expr.value)
    if isinstance(expr, BoolConst):
        return "true" if expr.value else "false"
    if isinstance(expr, Nondet):
        return "*"
    if isinstance(expr, App):
        return f"{expr.fn}({', '.join(render(a) for a in expr.args)})"
    if isinstance(expr, BinOp):
        text = f"{render(expr.left, 5)} {expr.op} {render(expr.right, 6)}"
        strength = 5
    elif isinstance(expr, Cmp):
        text = f"{render(expr.left, 5)} {expr.op} {render(expr.right, 5)}"
        strength = 4
    elif isinstance(expr, Not):
        return "!" + render(expr.arg, 6)
    elif isinstance(expr, And):
        text = " && ".join(render(a, 3) for a in expr.args)
        strength = 2
    elif isinstance(expr, Or):
        text = " || ".join(render(a, 2) for a in expr.args)
        strength = 1
    else:
        raise TypeError(f"Cannot render {expr!r}")
    if context > strength:
        return f"({text})"
    return text


def ret_var(index=0):
    """ The distinguished local holding the index-th return value """
    return Var("ret" if index == 0 else f"ret{index + 1}", "local")


def shadow_of(var):
    return Var(var.name, "shadow", var.name)


# Statements

class Stmt(object):
    """ Base class of statements """


@dataclass(frozen=True)
class Skip(Stmt):
    def __str__(self):
        return "skip;"


@dataclass(frozen=True)
class Assign(Stmt):
    target: Var
    rhs: Expr

    def __str__(self):
        return f"{render(self.target)} = {render(self.rhs)};"


@dataclass(frozen=True)
class Assume(Stmt):
    cond: Expr

    def __str__(self):
        return f"assume {render(self.cond)};"


@dataclass(frozen=True)
class Assert1(Stmt):
    pred: Expr

    def __str__(self):
        return f"assert {render(self.pred)};"


@dataclass(frozen=True)
class Assert2(Stmt):
    pred: Expr

    def __str__(self):
        return f"assert2 {render(self.pred)};"


@dataclass(frozen=True)
class Return(Stmt):
    values: Tuple[Expr, ...]

    def __str__(self):
        if len(self.values) == 1:
            return f"return {render(self.values[0])};"
        return f"return ({', '.join(render(v) for v in self.values)});"


@dataclass(frozen=True)
class Acquire(Stmt):
    lock: str

    def __str__(self):
        return f"acquire({self.lock});"


@dataclass(frozen=True)
class Release(Stmt):
    lock: str

    def __str__(self):
        return f"release({self.lock});"


@dataclass(frozen=True)
class LPCopy(Stmt):
    """ Linearization point: copy every variable into its shadow """
    copies: Tuple[Tuple[Var, Var], ...]

    def __str__(self):
        return "lp;"


@dataclass(frozen=True)
class Call(Stmt):
    """ Label of a call edge: havoc params, zero locals """
    proc: str
    params: Tuple[Var, ...]
    locals: Tuple[Var, ...]

    def __str__(self):
        return f"call {self.proc};"


@dataclass(frozen=True)
class If(Stmt):
    cond: Expr
    then: Tuple[Stmt, ...]
    orelse: Tuple[Stmt, ...] = ()


@dataclass(frozen=True)
class While(Stmt):
    cond: Expr
    body: Tuple[Stmt, ...]


@dataclass(frozen=True)
class Label(Stmt):
    name: str

    def __str__(self):
        return f"@{self.name}:"


SIMPLE_STATEMENTS = (Skip, Assign, Assume, Assert1, Assert2, Return, Acquire,
                     Release, LPCopy)


def has_edges(stmts):
    return any(not isinstance(s, Label) for s in stmts)


def walk(stmts):
    """ Yield every statement of a structured body, depth first """
    for stmt in stmts:
        yield stmt
        if isinstance(stmt, If):
            yield from walk(stmt.then)
            yield from walk(stmt.orelse)
        elif isinstance(stmt, While):
            yield from walk(stmt.body)


@dataclass(frozen=True)
class Procedure:
    """ A library procedure

    Parameters
    ----------
    name: str
    params: tuple of Var
    locals: tuple of Var
        Every local including the return variables and shadows
    body: tuple of Stmt
        The structured body
    ensures: Expr, optional
        Two-state specification over old(g), globals, params and returns
    nret: int
        Number of returned values
    """
    name: str
    params: Tuple[Var, ...]
    locals: Tuple[Var, ...]
    body: Tuple[Stmt, ...]
    ensures: Optional[Expr] = None
    nret: int = 1

    @property
    def ret_vars(self):
        return tuple(ret_var(i) for i in range(self.nret))

    @property
    def shadows(self):
        return tuple(v for v in self.locals if v.kind == "shadow")

    @property
    def has_lp(self):
        return any(isinstance(s, LPCopy) for s in walk(self.body))

    def lookup(self, name):
        """ Return the parameter or local called name, or None """
        for var in self.params + self.locals:
            if var.name == name and var.kind != "shadow":
                return var
        return None


@dataclass(frozen=True)
class Library:
    """ A library: uninterpreted functions, globals and procedures """
    ufuns: Tuple[Tuple[str, int], ...]
    globals: Tuple[Tuple[Var, Expr], ...]
    procedures: Tuple[Procedure, ...]

    @property
    def global_vars(self):
        return tuple(var for var, _ in self.globals)

    @property
    def arity(self):
        return dict(self.ufuns)

    def procedure(self, name):
        for proc in self.procedures:
            if proc.name == name:
                return proc
        raise KeyError(f"No procedure named {name}")

    def replace(self, procedures):
        return Library(self.ufuns, self.globals, tuple(procedures))


@dataclass(frozen=True)
class Edge:
    """ A control-flow edge labelled with one statement

    ``key`` identifies the source statement in the structured body, so that
    woven statements can be placed back into it.
    """
    src: str
    dst: str
    stmt: Stmt
    key: tuple

    def __str__(self):
        return f"{self.src} -[{self.stmt}]-> {self.dst}"


class CFG(object):
    """ Control-flow graph of one procedure

    Vertices are named ``<proc>.entry``, ``<proc>.exit`` and ``<proc>.<n>``.
    ``labels`` maps each ``@label:`` of the body to its vertex.
    """

    def __init__(self, procedure):
        self.procedure = procedure
        self.name = procedure.name
        self.entry = f"{self.name}.entry"
        self.exit = f"{self.name}.exit"
        self.vertices = [self.entry]
        self.edges = []
        self.labels = {"entry": self.entry, "exit": self.exit}
        self._count = 0

        if has_edges(procedure.body):
            self._block(procedure.body, (self.name,), self.entry, self.exit)
        else:
            self._set_labels(procedure.body, self.entry)
            self._add(self.entry, self.exit, Skip(), (self.name, "empty"))
        self.vertices.append(self.exit)
        self._check()

    def _fresh(self):
        self._count += 1
        vertex = f"{self.name}.{self._count}"
        self.vertices.append(vertex)
        return vertex

    def _add(self, src, dst, stmt, key):
        self.edges.append(Edge(src, dst, stmt, key))

    def _set_labels(self, stmts, vertex):
        for stmt in stmts:
            if isinstance(stmt, Label):
                self._label(stmt.name, vertex)

    def _label(self, name, vertex):
        if name in self.labels:
            raise LibraryError(f"Duplicate label @{name} in {self.name}")
        if vertex is None:
            raise LibraryError(f"Label @{name} in {self.name} is unreachable")
        self.labels[name] = vertex

    def _block(self, stmts, path, cur, target):
        last = max(i for i, s in enumerate(stmts) if not isinstance(s, Label))
        for ii, stmt in enumerate(stmts):
            if isinstance(stmt, Label):
                self._label(stmt.name, cur)
                continue
            if cur is None:
                raise LibraryError(
                    f"Unreachable statement `{stmt}` in {self.name}")
            nxt = target if ii == last else self._fresh()
            cur = self._statement(stmt, path + (ii,), cur, nxt)
        return cur

    def _branch(self, stmts, key, cur, nxt, assume):
        if not has_edges(stmts):
            self._set_labels(stmts, nxt)
            self._add(cur, nxt, assume, key)
            return True
        start = self._fresh()
        self._add(cur, start, assume, key)
        return self._block(stmts, key, start, nxt) is not None

    def _statement(self, stmt, path, cur, nxt):
        if isinstance(stmt, Return):
            self._add(cur, self.exit, stmt, path)
            return None
        if isinstance(stmt, If):
            then_falls = self._branch(
                stmt.then, path + ("then",), cur, nxt, Assume(stmt.cond))
            else_falls = self._branch(
                stmt.orelse, path + ("else",), cur, nxt, Assume(Not(stmt.cond)))
            return nxt if (then_falls or else_falls) else None
        if isinstance(stmt, While):
            if cur == self.entry:
                head = self._fresh()
                self._add(cur, head, Skip(), path + ("pre",))
                cur = head
            if has_edges(stmt.body):
                start = self._fresh()
                self._add(cur, start, Assume(stmt.cond), path + ("body",))
                self._block(stmt.body, path + ("body",), start, cur)
            else:
                self._set_labels(stmt.body, cur)
                self._add(cur, cur, Assume(stmt.cond), path + ("body",))
            self._add(cur, nxt, Assume(Not(stmt.cond)), path + ("exit",))
            return nxt
        if isinstance(stmt, SIMPLE_STATEMENTS):
            self._add(cur, nxt, stmt, path)
            return nxt
        raise LibraryError(f"Unsupported statement {stmt!r}")

    def _check(self):
        graph = nx.MultiDiGraph()
        graph.add_nodes_from(self.vertices)
        graph.add_edges_from((e.src, e.dst) for e in self.edges)
        reachable = nx.descendants(graph, self.entry) | {self.entry}
        unreachable = [v for v in self.vertices if v not in reachable]
        if unreachable:
            raise LibraryError(
                f"Unreachable program points in {self.name}: {unreachable}")
        stuck = [v for v in self.vertices
                 if v != self.exit and self.exit not in nx.descendants(graph, v)]
        if stuck:
            raise LibraryError(
                f"Exit of {self.name} unreachable from {stuck}")


class ControlGraph(object):
    """ Union of the procedure CFGs with the quiescent vertex

    Call edges ``quiescent -> P.entry`` carry a Call statement, return edges
    ``P.exit -> quiescent`` carry Skip.
    """

    def __init__(self, library):
        self.library = library
        self.cfgs = {p.name: CFG(p) for p in library.procedures}
        self.vertices = [QUIESCENT]
        self.edges = []
        for proc in library.procedures:
            cfg = self.cfgs[proc.name]
            self.vertices += cfg.vertices
            self.edges.append(Edge(
                QUIESCENT, cfg.entry, Call(proc.name, proc.params, proc.locals),
                ("call", proc.name)))
            self.edges += cfg.edges
            self.edges.append(Edge(cfg.exit, QUIESCENT, Skip(),
                                   ("return", proc.name)))

        self.graph = nx.MultiDiGraph()
        self.graph.add_nodes_from(self.vertices)
        self._out = {v: [] for v in self.vertices}
        self._in = {v: [] for v in self.vertices}
        for edge in self.edges:
            self.graph.add_edge(edge.src, edge.dst, key=edge.key, edge=edge)
            self._out[edge.src].append(edge)
            self._in[edge.dst].append(edge)
        logger.debug(f"Control graph with {len(self.vertices)} vertices "
                     f"and {len(self.edges)} edges")

    def out_edges(self, vertex):
        return self._out[vertex]

    def in_edges(self, vertex):
        return self._in[vertex]

    def procedure_of(self, vertex):
        if vertex == QUIESCENT:
            return None
        return self.library.procedure(vertex.rsplit(".", 1)[0])

    def cfg_of(self, vertex):
        return self.cfgs[vertex.rsplit(".", 1)[0]]

    @property
    def entries(self):
        return [cfg.entry for cfg in self.cfgs.values()]

    @property
    def exits(self):
        return [cfg.exit for cfg in self.cfgs.values()]

    def is_call(self, edge):
        return edge.src == QUIESCENT

    def is_return(self, edge):
        return edge.dst == QUIESCENT

    def resolve(self, label):
        """ Map ``quiescent`` or ``Proc.label`` to a vertex """
        if label == QUIESCENT:
            return QUIESCENT
        proc, _, name = label.partition(".")
        if proc not in self.cfgs or name not in self.cfgs[proc].labels:
            raise LibraryError(f"Unknown program point {label}")
        return self.cfgs[proc].labels[name]


def build_control_graph(library):
    """ Build the library-wide control graph

    Parameters
    ----------
    library: Library

    Returns
    -------
    graph: ControlGraph
    """
    return ControlGraph(library)


def as_control_graph(obj):
    """ Accept a Library or an already built ControlGraph """
    if isinstance(obj, ControlGraph):
        return obj
    return ControlGraph(obj)


# Printing

def _print_block(stmts, depth, lines):
    pad = INDENT * depth
    for stmt in stmts:
        if isinstance(stmt, If):
            lines.append(f"{pad}if ({render(stmt.cond)}) {{")
            _print_block(stmt.then, depth + 1, lines)
            if stmt.orelse:
                lines.append(f"{pad}}} else {{")
                _print_block(stmt.orelse, depth + 1, lines)
            lines.append(f"{pad}}}")
        elif isinstance(stmt, While):
            lines.append(f"{pad}while ({render(stmt.cond)}) {{")
            _print_block(stmt.body, depth + 1, lines)
            lines.append(f"{pad}}}")
        else:
            lines.append(f"{pad}{stmt}")


def print_procedure(proc):
    params = ", ".join(p.name for p in proc.params)
    header = f"proc {proc.name}({params})"
    if proc.ensures is not None:
        header += f" ensures {render(proc.ensures)}"
    lines = [header + " {"]
    _print_block(proc.body, 1, lines)
    lines.append("}")
    return "\n".join(lines)


def print_library(library):
    """ Render a library in the concrete syntax

    Parameters
    ----------
    library: Library

    Returns
    -------
    text: str
        Source text that parses back to an equal library
    """
    chunks = []
    if library.ufuns:
        chunks.append("\n".join(f"ufun {name}/{arity};"
                                for name, arity in library.ufuns))
    lines = ["globals {"]
    lines += [f"{INDENT}{var.name} = {render(init)};"
              for var, init in library.globals]
    lines.append("}")
    chunks.append("\n".join(lines))
    chunks += [print_procedure(proc) for proc in library.procedures]
    return "\n\n".join(chunks) + "\n"
