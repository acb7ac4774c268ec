""" Linearizable lock synthesis

Procedures are first given a linearization point at entry that copies every
global and parameter into a shadow local, turning two-state assertions into
ordinary ones. The positive basis is then closed under weakest
preconditions and negation, and locks are held from the linearization point
for as long as some later statement may still falsify a basis predicate.
"""
import dataclasses
import logging
from dataclasses import dataclass, field

from .errors import ClosureDiverged, LibraryError
from .lang import (
    Assert1, Assert2, Assume, Cmp, If, LPCopy, Return, QUIESCENT, Var, While,
    as_control_graph, walk,
)
from .logic import (
    DEFAULT_DOMAIN, atoms, covers, equivalent, is_valid, negate, normalize,
    rename_locals, simplify_equivalent, wp,
)
from .parse import lp_copies
from .proof import infer_obligations
from .synth import (
    compute_mbf, lock_predicates, needs_of, optimize, plan_locks, weave,
)

logger = logging.getLogger('lockweaver')

CLOSURE_BOUND = 128


def _to_assert1(stmts):
    out = []
    for stmt in stmts:
        if isinstance(stmt, Assert2):
            out.append(Assert1(stmt.pred))
        elif isinstance(stmt, If):
            out.append(dataclasses.replace(stmt, then=_to_assert1(stmt.then),
                                           orelse=_to_assert1(stmt.orelse)))
        elif isinstance(stmt, While):
            out.append(dataclasses.replace(stmt, body=_to_assert1(stmt.body)))
        else:
            out.append(stmt)
    return tuple(out)


def transform_two_state(library):
    """ Give every procedure a linearization point at entry

    Each global and parameter gets a shadow local, a ``lp;`` statement copying
    them is made the first statement, and two-state assertions become plain
    assertions over the shadows. Procedures already carrying ``lp;`` are left
    alone.

    Parameters
    ----------
    library: Library

    Returns
    -------
    transformed: Library
    """
    procedures = []
    for proc in library.procedures:
        if proc.has_lp:
            procedures.append(proc)
            continue
        copies = lp_copies(library.global_vars, proc.params)
        shadows = tuple(shadow for shadow, _ in copies)
        body = (LPCopy(copies),) + _to_assert1(proc.body)
        procedures.append(dataclasses.replace(
            proc, locals=proc.locals + shadows, body=body))
    logger.debug(f"Two-state transform of {len(procedures)} procedures")
    return library.replace(procedures)


def needs_two_state(library):
    """ Whether any procedure has a two-state assertion """
    return any(isinstance(s, Assert2) for p in library.procedures for s in walk(p.body))


# May be falsified after

def compute_mf(library, mbf):
    """ Predicates some linearization-point-free path to exit may falsify

    Parameters
    ----------
    library: Library or ControlGraph
    mbf: dict
        Edge to predicates it may falsify

    Returns
    -------
    mf: dict
        Vertex to frozenset of predicates; empty at the quiescent vertex,
        at exits, and at entries since every path from an entry crosses the
        linearization point
    """
    graph = as_control_graph(library)
    mf = {v: frozenset() for v in graph.vertices}
    changed = True
    while changed:
        changed = False
        for edge in graph.edges:
            if graph.is_call(edge) or graph.is_return(edge):
                continue
            if isinstance(edge.stmt, LPCopy):
                continue
            new = mf[edge.src] | mbf[edge] | mf[edge.dst]
            if new != mf[edge.src]:
                mf[edge.src] = new
                changed = True
    return mf


# Basis closure

@dataclass
class ClosedBasis:
    """ A positive basis closed for linearizable synthesis

    Parameters
    ----------
    pm: dict
        Vertex to frozenset of predicates
    flags: dict
        wp_closed, negation_closed, returns_covered, branches_covered
    trace: list of (vertex, predicate)
        Predicates in the order closure added them
    """
    pm: dict
    flags: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)

    @property
    def closed(self):
        return all(self.flags.values())

    def to_dict(self):
        return dict(flags=dict(self.flags),
                    trace=[dict(vertex=v, predicate=str(p)) for v, p in self.trace])


def return_target(index=0):
    """ The logical variable a return value is compared against """
    return Var("ret'" if index == 0 else f"ret{index + 1}'", "logical")


def _constant(pred, domain):
    return is_valid(pred, domain).valid or is_valid(negate(pred), domain).valid


class _Closure(object):

    def __init__(self, graph, ann, domain, bound):
        self.graph = graph
        self.domain = domain
        self.bound = bound
        self.pm = {v: set() for v in graph.vertices}
        self.pinned = {v: set(atoms(ann.mu[v])) for v in graph.vertices}
        self.trace = []
        for vertex in graph.vertices:
            for pred in ann.basis(vertex):
                self.add(vertex, pred, initial=True)

    def add(self, vertex, pred, initial=False):
        pred = normalize(pred)
        members = self.pm[vertex]
        if pred in members:
            return False
        if not initial:
            if _constant(pred, self.domain):
                return False
            if any(equivalent(pred, m, self.domain) for m in members):
                return False
        members.add(pred)
        self.trace.append((vertex, pred))
        opposite = negate(pred)
        if opposite not in members:
            members.add(opposite)
            self.trace.append((vertex, opposite))
        if len(members) > self.bound:
            grown = [str(p) for v, p in self.trace if v == vertex]
            raise ClosureDiverged(
                f"basis closure diverged at {vertex}: more than {self.bound} "
                f"predicates", grown)
        return True

    def seed(self):
        for cfg in self.graph.cfgs.values():
            proc = cfg.procedure
            for ii, var in enumerate(proc.ret_vars):
                self.add(cfg.exit, Cmp("==", return_target(ii), var))
            for edge in cfg.edges:
                if isinstance(edge.stmt, Assume):
                    for atom in atoms(edge.stmt.cond):
                        self.add(edge.src, atom)
                if isinstance(edge.stmt, (Assert1, Assert2)):
                    for atom in atoms(edge.stmt.pred):
                        self.add(edge.src, atom)

    def close(self):
        edges = [e for e in self.graph.edges
                 if not (self.graph.is_call(e) or self.graph.is_return(e))]
        changed = True
        while changed:
            changed = False
            for edge in edges:
                for pred in sorted(self.pm[edge.dst], key=str):
                    pre = wp(edge.stmt, pred)
                    if covers(pre, self.pm[edge.src], self.domain, exact=False):
                        continue
                    for leaf in sorted(atoms(pre), key=str):
                        changed |= self.add(edge.src, leaf)

    def covered(self, formula, members):
        if covers(formula, members, self.domain):
            return True
        return all(_constant(a, self.domain)
                   or any(equivalent(a, m, self.domain) for m in members)
                   for a in atoms(formula))

    def flags(self):
        wp_closed = negation_closed = returns_covered = branches_covered = True
        for vertex, members in self.pm.items():
            if any(negate(p) not in members for p in members):
                negation_closed = False
        for edge in self.graph.edges:
            if self.graph.is_call(edge) or self.graph.is_return(edge):
                continue
            source = self.pm[edge.src]
            for pred in self.pm[edge.dst]:
                if not self.covered(wp(edge.stmt, pred), source):
                    wp_closed = False
            if isinstance(edge.stmt, Return):
                for ii, value in enumerate(edge.stmt.values):
                    target = Cmp("==", return_target(ii), value)
                    if not covers(target, source, self.domain):
                        returns_covered = False
            if isinstance(edge.stmt, Assume):
                if not covers(edge.stmt.cond, source, self.domain):
                    branches_covered = False
        return dict(wp_closed=wp_closed, negation_closed=negation_closed,
                    returns_covered=returns_covered, branches_covered=branches_covered)


def close_basis(library, ann, domain=DEFAULT_DOMAIN, bound=CLOSURE_BOUND):
    """ Close a positive basis for linearizable synthesis

    The basis is seeded with ``ret' == ret`` at exits, branch conditions and
    assertion predicates, then repeatedly extended with the atoms of weakest
    preconditions and their negations. Predicates equivalent to one already
    present are not added, and the invariant atoms at each vertex are kept.

    Parameters
    ----------
    library: Library or ControlGraph
    ann: proof.ProofAnnotation
    domain: logic.Domain
    bound: int
        Maximum basis size at any vertex

    Returns
    -------
    ann: proof.ProofAnnotation
        The annotation with the closed basis
    basis: ClosedBasis

    Raises
    ------
    ClosureDiverged
        When some vertex grows past the bound, or the closed basis is not
        closed under weakest preconditions and negation or misses a return
        value or branch condition
    """
    graph = as_control_graph(library)
    closure = _Closure(graph, ann, domain, bound)
    closure.seed()
    closure.close()
    pm = {}
    for vertex in graph.vertices:
        kept = simplify_equivalent(closure.pm[vertex], domain,
                                   pinned=closure.pinned[vertex] | set(ann.basis(vertex)))
        pm[vertex] = frozenset(kept)
    pm[QUIESCENT] = frozenset(ann.basis(QUIESCENT))
    basis = ClosedBasis(pm, closure.flags(), closure.trace)
    sizes = [len(p) for p in pm.values()]
    logger.info(f"Closed basis: {sum(sizes)} predicates, at most {max(sizes)} per vertex")
    if not basis.closed:
        failed = sorted(name for name, ok in basis.flags.items() if not ok)
        raise ClosureDiverged(f"basis closure incomplete: {', '.join(failed)} failed",
                              [f"{v}: {p}" for v, p in closure.trace])
    return ann.replace(pm=pm), basis


def synthesize_linearizable(library, ann, domain=DEFAULT_DOMAIN, optimise=True,
                            bound=CLOSURE_BOUND):
    """ Lock synthesis that also preserves two-state specifications

    Parameters
    ----------
    library: Library or ControlGraph
        A library whose procedures all start with ``lp;``
    ann: proof.ProofAnnotation
        A proof of the transformed library
    domain: logic.Domain
    optimise: bool
    bound: int

    Returns
    -------
    instrumented: synth.InstrumentedLibrary
    """
    graph = as_control_graph(library)
    missing = [p.name for p in graph.library.procedures if not p.has_lp]
    if missing:
        raise LibraryError(
            f"Procedures {missing} lack a linearization point; "
            "apply transform_two_state first")
    invariants = sorted({rename_locals(p) for e in graph.entries for p in ann.basis(e)},
                        key=str)
    closed, basis = close_basis(graph, ann, domain, bound)
    closed = closed.replace(om=infer_obligations(graph, closed, domain, invariants))

    predicates = lock_predicates(graph, closed)
    mbf = compute_mbf(graph, closed, predicates, domain)
    mf = compute_mf(graph, mbf)
    base = needs_of(graph, closed)
    needs = {v: base[v] | mf[v] for v in graph.vertices}
    needs[QUIESCENT] = frozenset()
    plan = plan_locks(graph, needs, mbf, predicates)
    instrumented = weave(graph, plan)
    logger.info(f"Synthesised {len(plan.locks)} locks over {len(predicates)} predicates")
    if optimise:
        instrumented = optimize(instrumented)
    instrumented.extra = dict(
        mf={v: sorted(str(p) for p in mf[v]) for v in graph.vertices if mf[v]},
        closure=basis.to_dict())
    return instrumented
