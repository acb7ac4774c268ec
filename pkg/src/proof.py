""" Sequential proofs, positive bases and obligation maps

A proof annotation assigns a formula ``mu`` to every vertex of the control
graph, a positive basis ``pm`` from which ``mu`` is built with conjunction and
disjunction only, and an obligation map ``om`` holding the library invariants
a thread has broken and still owes.
"""
import dataclasses
import itertools
import logging
from dataclasses import dataclass, field

from .errors import AnnotationError, BudgetExceeded, ObligationError, ProofNotFound
from .lang import (
    QUIESCENT, And, Assert1, Assert2, Assign, Assume, Call, Cmp, LPCopy, Nondet,
    Return, TRUE, FALSE, Or, as_control_graph, ret_var,
)
from .logic import (
    DEFAULT_DOMAIN, Valuation, atoms, conjuncts, covers, free_vars, hoare_valid,
    implies, is_valid, negate, normalize, rename_locals, satisfy, subst, wp,
)
from .parse import resolve_formula
from .synth import may_falsify

logger = logging.getLogger('lockweaver')

RULES = ("hoare-a", "assert-b", "entry-exit", "basis-positivity",
         "obligation-a", "obligation-b")
MAX_CUBES = 64


@dataclass
class Violation:
    site: str
    rule: str
    detail: str
    witness: Valuation = None

    def __str__(self):
        text = f"[{self.rule}] {self.site}: {self.detail}"
        if self.witness is not None:
            text += f" (witness {self.witness})"
        return text

    def to_dict(self):
        out = dict(site=self.site, rule=self.rule, detail=self.detail)
        if self.witness is not None:
            out["witness"] = self.witness.to_dict()
        return out


@dataclass
class ProofReport:
    """ Outcome of a proof check; Rejected iff there are violations """
    violations: list = field(default_factory=list)

    @property
    def accepted(self):
        return not self.violations

    @property
    def status(self):
        return "Accepted" if self.accepted else "Rejected"

    @property
    def rules(self):
        return sorted({v.rule for v in self.violations})

    def add(self, site, rule, detail, result=None):
        witness = result.witness if result is not None else None
        if result is not None and result.unknown:
            detail += " (unknown within budget)"
        self.violations.append(Violation(str(site), rule, detail, witness))

    def extend(self, other):
        self.violations += other.violations
        return self

    def __str__(self):
        lines = [self.status]
        lines += [f"  {v}" for v in self.violations]
        return "\n".join(lines)

    def to_dict(self):
        return dict(status=self.status,
                    violations=[v.to_dict() for v in self.violations])


@dataclass
class ProofAnnotation:
    """ A sequential proof with its positive basis and obligation map

    Parameters
    ----------
    mu: dict
        Vertex to formula
    pm: dict
        Vertex to frozenset of predicates
    om: dict
        Vertex to frozenset of library invariants owed, empty until computed
    """
    mu: dict
    pm: dict
    om: dict = field(default_factory=dict)

    def basis(self, vertex):
        return self.pm.get(vertex, frozenset())

    def obligations(self, vertex):
        return self.om.get(vertex, frozenset())

    def m(self, vertex):
        """ Predicates that must be protected while a thread is at vertex """
        return self.basis(vertex) | self.obligations(vertex)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self, vertices=None):
        vertices = vertices or list(self.mu)

        def listing(preds):
            return sorted(str(p) for p in preds)
        return {v: dict(mu=str(self.mu[v]), pm=listing(self.basis(v)),
                        om=listing(self.obligations(v)))
                for v in vertices if v in self.mu}


def _library_invariants(graph, ann):
    found = set()
    for entry in graph.entries:
        found |= {rename_locals(p) for p in ann.basis(entry)}
    return sorted(found, key=str)


# Building annotations from source

def _strongest_post(stmt, pre):
    """ An exact postcondition when one is expressible without quantifiers """
    variables = free_vars(normalize(pre))
    if isinstance(stmt, Assume):
        return And((pre, stmt.cond))
    if isinstance(stmt, Assign):
        if stmt.target in variables:
            return None
        if isinstance(stmt.rhs, Nondet) or stmt.target in free_vars(stmt.rhs):
            return pre
        return And((pre, Cmp("==", stmt.target, stmt.rhs)))
    if isinstance(stmt, (Return, LPCopy)):
        if isinstance(stmt, Return):
            pairs = [(ret_var(i), v) for i, v in enumerate(stmt.values)]
        else:
            pairs = list(stmt.copies)
        facts = [pre]
        for target, value in pairs:
            if target in variables:
                return None
            if target not in free_vars(value):
                facts.append(Cmp("==", target, value))
        return And(tuple(facts))
    if isinstance(stmt, Call):
        return None
    return pre


def _resolve_point(graph, point):
    try:
        vertex = graph.resolve(point)
    except ValueError as exc:
        raise AnnotationError(f"Annotation at unknown point {point}: {exc}")
    proc = graph.procedure_of(vertex)
    return vertex, proc


def build_annotation(library, annotations):
    """ Turn parsed ``@inv``/``@basis`` annotations into a ProofAnnotation

    Vertices without an ``@inv`` receive a formula propagated from their
    predecessors where that is exact, the quiescent invariant at entries and
    exits, and ``true`` otherwise. Vertices without ``@basis`` use the atoms
    of their formula.

    Parameters
    ----------
    library: Library or ControlGraph
    annotations: parse.Annotations

    Returns
    -------
    annotation: ProofAnnotation
    """
    graph = as_control_graph(library)
    lib = graph.library

    def resolve(expr, proc):
        two_state = proc is not None and proc.has_lp
        try:
            return normalize(resolve_formula(expr, lib, proc, two_state))
        except ValueError as exc:
            raise AnnotationError(str(exc))

    mu = {}
    for point, expr in annotations.inv.items():
        vertex, proc = _resolve_point(graph, point)
        mu[vertex] = resolve(expr, proc)
    pm = {}
    for point, exprs in annotations.basis.items():
        vertex, proc = _resolve_point(graph, point)
        pm[vertex] = frozenset(resolve(e, proc) for e in exprs)

    mu.setdefault(QUIESCENT, TRUE)
    for entry in graph.entries:
        mu.setdefault(entry, mu[QUIESCENT])
    pending = [v for v in graph.vertices if v not in mu]
    while pending:
        progress = False
        for vertex in list(pending):
            edges = graph.in_edges(vertex)
            if not all(e.src in mu for e in edges):
                continue
            posts = [_strongest_post(e.stmt, mu[e.src]) for e in edges]
            if any(p is None for p in posts):
                continue
            mu[vertex] = normalize(Or(tuple(posts)))
            pending.remove(vertex)
            progress = True
        if not progress:
            vertex = pending.pop(0)
            fallback = mu[QUIESCENT] if vertex in graph.exits else TRUE
            logger.debug(f"No invariant derivable at {vertex}, using {fallback}")
            mu[vertex] = fallback

    for vertex in graph.vertices:
        pm.setdefault(vertex, frozenset(atoms(mu[vertex])))
    return ProofAnnotation(mu, pm)


# Checking

def _missing(graph, ann):
    missing = [v for v in graph.vertices if v not in ann.mu]
    if missing:
        raise AnnotationError(f"No invariant for vertices {missing}")


def check_proof(library, ann, domain=DEFAULT_DOMAIN):
    """ Check that an annotation is a sequential proof

    Parameters
    ----------
    library: Library or ControlGraph
    ann: ProofAnnotation
    domain: logic.Domain

    Returns
    -------
    report: ProofReport
    """
    graph = as_control_graph(library)
    _missing(graph, ann)
    report = ProofReport()

    initial = {}
    for var, init in graph.library.globals:
        initial[var] = subst(init, initial)
    result = is_valid(subst(ann.mu[QUIESCENT], initial), domain)
    if not result.valid:
        report.add(QUIESCENT, "entry-exit",
                   f"initial state does not satisfy {ann.mu[QUIESCENT]}", result)

    for edge in graph.edges:
        pre, post = ann.mu[edge.src], ann.mu[edge.dst]
        result = hoare_valid(pre, edge.stmt, post, domain)
        if not result.valid:
            rule = "entry-exit" if QUIESCENT in (edge.src, edge.dst) else "hoare-a"
            report.add(edge, rule, f"{{{pre}}} {edge.stmt} {{{post}}} is not valid",
                       result)
        if isinstance(edge.stmt, (Assert1, Assert2)):
            result = is_valid(implies(pre, edge.stmt.pred), domain)
            if not result.valid:
                report.add(edge, "assert-b",
                           f"{pre} does not imply {edge.stmt.pred}", result)
    logger.debug(f"Proof check: {report.status}, {len(report.violations)} violations")
    return report


def check_positive_basis(library, ann, domain=DEFAULT_DOMAIN):
    """ Check that every invariant is a positive combination of its basis

    Entry invariants must moreover be plain conjunctions of basis members.
    """
    graph = as_control_graph(library)
    _missing(graph, ann)
    report = ProofReport()
    for vertex in graph.vertices:
        if not covers(ann.mu[vertex], ann.basis(vertex), domain):
            report.add(vertex, "basis-positivity",
                       f"{ann.mu[vertex]} is not covered by "
                       f"{{{', '.join(sorted(map(str, ann.basis(vertex))))}}}")
    for entry in graph.entries:
        members = {normalize(p) for p in ann.basis(entry)}
        stray = [c for c in conjuncts(ann.mu[entry]) if c not in members]
        if stray:
            report.add(entry, "basis-positivity",
                       f"entry invariant is not a conjunction of basis predicates "
                       f"({', '.join(map(str, stray))})")
    return report


def infer_obligations(library, ann, domain=DEFAULT_DOMAIN, invariants=None):
    """ Least obligation map for the library invariants

    Parameters
    ----------
    library: Library or ControlGraph
    ann: ProofAnnotation
    domain: logic.Domain
    invariants: list of Expr, optional
        The library invariants; by default the renamed basis predicates of
        the procedure entry vertices

    Returns
    -------
    om: dict
        Vertex to frozenset of invariants

    Raises
    ------
    ObligationError
        If an invariant may still be broken when a procedure returns
    """
    graph = as_control_graph(library)
    if invariants is None:
        invariants = _library_invariants(graph, ann)
    om = {v: set() for v in graph.vertices}
    worklist = []
    for edge in graph.edges:
        if graph.is_call(edge):
            continue
        for phi in invariants:
            if may_falsify(edge, phi, ann, domain):
                if graph.is_return(edge):
                    raise ObligationError(
                        f"Invariant {phi} not re-established before exit of "
                        f"{graph.procedure_of(edge.src).name}")
                if phi not in om[edge.dst]:
                    om[edge.dst].add(phi)
                    worklist.append((edge.dst, phi))

    while worklist:
        vertex, phi = worklist.pop()
        for edge in graph.out_edges(vertex):
            if hoare_valid(ann.mu[vertex], edge.stmt, phi, domain).valid:
                continue
            if graph.is_return(edge):
                raise ObligationError(
                    f"Invariant {phi} not re-established before exit of "
                    f"{graph.procedure_of(vertex).name}")
            if phi not in om[edge.dst]:
                om[edge.dst].add(phi)
                worklist.append((edge.dst, phi))
    owed = sum(len(v) for v in om.values())
    logger.debug(f"Obligation map: {len(invariants)} invariants, {owed} entries")
    return {v: frozenset(om[v]) for v in graph.vertices}


def check_obligations(library, ann, domain=DEFAULT_DOMAIN, invariants=None):
    """ Re-check the two closure conditions of an obligation map """
    graph = as_control_graph(library)
    if invariants is None:
        invariants = _library_invariants(graph, ann)
    report = ProofReport()
    for edge in graph.edges:
        if graph.is_call(edge):
            continue
        for phi in invariants:
            if may_falsify(edge, phi, ann, domain) and phi not in ann.obligations(edge.dst):
                report.add(edge, "obligation-a", f"{phi} may be falsified but is not owed")
        for phi in ann.obligations(edge.src):
            established = hoare_valid(ann.mu[edge.src], edge.stmt, phi, domain).valid
            if not established and phi not in ann.obligations(edge.dst):
                report.add(edge, "obligation-b", f"{phi} is owed but dropped")
    if ann.obligations(QUIESCENT):
        report.add(QUIESCENT, "obligation-b", "obligations owed at the quiescent vertex")
    return report


# Inference by predicate abstraction

def _literals(seeds, cube):
    return tuple(s if value else negate(s) for s, value in zip(seeds, cube))


def _formula(seeds, cube):
    return normalize(And(_literals(seeds, cube)))


def _preimage(stmt, post):
    if isinstance(stmt, Assume):
        return normalize(And((stmt.cond, post)))
    return wp(stmt, post)


def _feasible(formulas, domain):
    try:
        return satisfy(formulas, domain) is not None
    except BudgetExceeded:
        return True


def _successors(source, stmt, seeds, domain):
    """ Full cubes over seeds reachable by stmt from states satisfying source """
    found = []

    def extend(prefix):
        if len(prefix) == len(seeds):
            found.append(tuple(prefix))
            return
        for value in (True, False):
            cube = prefix + [value]
            post = normalize(And(_literals(seeds[:len(cube)], cube)))
            if _feasible([source, _preimage(stmt, post)], domain):
                extend(cube)

    extend([])
    return found


def _merge_cubes(cubes):
    """ Combine cubes differing in one literal and drop subsumed ones """
    cubes = set(cubes)
    changed = True
    while changed:
        changed = False
        for first, second in itertools.combinations(sorted(cubes, key=str), 2):
            diff = [i for i, (a, b) in enumerate(zip(first, second)) if a != b]
            if len(diff) == 1 and None not in (first[diff[0]], second[diff[0]]):
                merged = first[:diff[0]] + (None,) + first[diff[0] + 1:]
                cubes -= {first, second}
                cubes.add(merged)
                changed = True
                break
    return [c for c in cubes
            if not any(o != c and all(a is None or a == b for a, b in zip(o, c))
                       for o in cubes)]


def _cube_formula(seeds, cube):
    return normalize(And(tuple(s if v else negate(s)
                               for s, v in zip(seeds, cube) if v is not None)))


def infer_proof(library, seeds, domain=DEFAULT_DOMAIN):
    """ Infer a sequential proof by predicate abstraction

    Abstract values are sets of full cubes over the seed predicates in scope
    at each vertex. Assertion predicates are always added to the seeds.

    Parameters
    ----------
    library: Library or ControlGraph
    seeds: list of Expr
        Unresolved seed formulas as parsed from ``@seed``
    domain: logic.Domain

    Returns
    -------
    annotation: ProofAnnotation

    Raises
    ------
    ProofNotFound
        If the fixpoint exceeds the cube cap or fails an assertion
    """
    graph = as_control_graph(library)
    lib = graph.library

    def scoped(proc):
        resolved = []
        for seed in seeds:
            try:
                two_state = proc is not None and proc.has_lp
                formula = normalize(resolve_formula(seed, lib, proc, two_state))
            except ValueError:
                continue
            if formula not in resolved:
                resolved.append(formula)
        if proc is not None:
            for edge in graph.cfgs[proc.name].edges:
                if isinstance(edge.stmt, (Assert1, Assert2)):
                    for atom in sorted(atoms(edge.stmt.pred), key=str):
                        if atom not in resolved and negate(atom) not in resolved:
                            resolved.append(atom)
        return tuple(resolved)

    scope = {QUIESCENT: scoped(None)}
    for proc in lib.procedures:
        proc_seeds = scoped(proc)
        for vertex in graph.cfgs[proc.name].vertices:
            scope[vertex] = proc_seeds

    values = {v: set() for v in graph.vertices}
    initial = normalize(And(tuple(Cmp("==", var, init) for var, init in lib.globals)))
    values[QUIESCENT] = set(_successors(initial, Assume(TRUE), scope[QUIESCENT], domain))
    worklist = [QUIESCENT]
    while worklist:
        vertex = worklist.pop(0)
        for edge in graph.out_edges(vertex):
            new = set()
            for cube in values[vertex]:
                source = _formula(scope[vertex], cube)
                new |= set(_successors(source, edge.stmt, scope[edge.dst], domain))
            if not new <= values[edge.dst]:
                values[edge.dst] |= new
                if len(values[edge.dst]) > MAX_CUBES:
                    raise ProofNotFound(
                        f"proof not found with given seeds: more than {MAX_CUBES} "
                        f"cubes at {edge.dst}")
                if edge.dst not in worklist:
                    worklist.append(edge.dst)

    mu = {}
    for vertex in graph.vertices:
        cubes = _merge_cubes(values[vertex])
        if not cubes:
            mu[vertex] = FALSE
        else:
            mu[vertex] = normalize(Or(tuple(_cube_formula(scope[vertex], c)
                                            for c in cubes)))
    pm = {v: frozenset(atoms(f)) for v, f in mu.items()}
    ann = ProofAnnotation(mu, pm)
    report = check_proof(graph, ann, domain)
    if not report.accepted:
        raise ProofNotFound(f"proof not found with given seeds:\n{report}")
    logger.info(f"Inferred proof over {len(graph.vertices)} vertices")
    return ann
