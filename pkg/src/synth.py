""" Lock synthesis from a sequential proof

The pipeline runs in stages: the predicates each edge may falsify, a lock per
class of predicates that may be acquired while holding each other, the locks
each edge acquires, releases and briefly takes around its statement, and the
weaving of those locks back into the procedure bodies. Redundant locks are
removed at the end.
"""
import dataclasses
import logging
from collections import defaultdict
from dataclasses import dataclass, field

import networkx as nx

from .lang import (
    Acquire, And, Assign, Assume, If, Label, QUIESCENT, Release, Return, While,
    as_control_graph, ret_var,
)
from .logic import DEFAULT_DOMAIN, free_vars, hoare_valid, normalize, rename_locals, wp

logger = logging.getLogger('lockweaver')


@dataclass(frozen=True)
class LockId:
    """ A lock protecting a class of predicates

    Parameters
    ----------
    rank: int
        Position in the global acquisition order; also the lock's number
    members: tuple of Expr
        The predicates the lock protects, in text order
    """
    rank: int
    members: tuple

    @property
    def name(self):
        return f"l{self.rank}"

    def __str__(self):
        return self.name

    def to_dict(self):
        return dict(id=self.name, rank=self.rank,
                    members=[str(p) for p in self.members])


def _by_rank(locks, reverse=False):
    return sorted(locks, key=lambda lock: lock.rank, reverse=reverse)


@dataclass
class LockPlan:
    """ Locks, their predicates and the per-edge lock sets

    Parameters
    ----------
    graph: lang.ControlGraph
    predicates: list of Expr
        The renamed predicates protected by locks
    held: dict
        Vertex to the predicates protected while a thread is there
    mbf: dict
        Edge to the predicates it may falsify
    locks: list of LockId
        Ordered by rank
    lm: dict
        Predicate to LockId
    acq, rel, brk: dict
        Edge to tuples of LockId
    log: list of str
        Optimisation steps taken
    """
    graph: object
    predicates: list
    held: dict
    mbf: dict
    locks: list = field(default_factory=list)
    lm: dict = field(default_factory=dict)
    acq: dict = field(default_factory=dict)
    rel: dict = field(default_factory=dict)
    brk: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    def locks_of(self, predicates):
        return frozenset(self.lm[p] for p in predicates if p in self.lm)

    def held_locks(self, vertex):
        return self.locks_of(self.held[vertex])

    def to_dict(self):
        edges = []
        for edge in self.graph.edges:
            sets = {name: [lock.name for lock in getattr(self, name)[edge]]
                    for name in ("acq", "rel", "brk")}
            if any(sets.values()):
                edges.append(dict(edge=str(edge), **sets))
        return dict(locks=[lock.to_dict() for lock in self.locks],
                    predicates=[str(p) for p in self.predicates],
                    edges=edges,
                    optimisation=list(self.log))


@dataclass
class InstrumentedLibrary:
    """ A library with woven acquire and release statements

    ``provenance`` lists, for every inserted statement, the edge it came from,
    the lock, its reason and the predicates responsible.
    """
    library: object
    plan: LockPlan
    provenance: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def graph(self):
        return as_control_graph(self.library)

    @property
    def locks(self):
        return self.plan.locks

    def to_dict(self):
        out = self.plan.to_dict()
        out["provenance"] = list(self.provenance)
        out.update(self.extra)
        return out


# Predicates and falsification

def may_falsify(edge, phi, ann, domain=DEFAULT_DOMAIN):
    """ Whether executing edge from a state satisfying mu(src) may falsify phi

    Parameters
    ----------
    edge: lang.Edge
    phi: Expr
        A predicate whose locals have been renamed
    ann: proof.ProofAnnotation
    domain: logic.Domain

    Returns
    -------
    falsifies: bool
        True unless the triple {mu(src) and phi} stmt {phi} is valid
    """
    phi = normalize(phi)
    if wp(edge.stmt, phi) == phi:
        return False
    return not hoare_valid(And((ann.mu[edge.src], phi)), edge.stmt, phi, domain).valid


def lock_predicates(graph, ann):
    """ All basis and obligation predicates with locals renamed """
    found = set()
    for vertex in graph.vertices:
        found |= {rename_locals(p) for p in ann.m(vertex)}
    return sorted(found, key=str)


def needs_of(graph, ann):
    """ Renamed predicates to protect at each vertex; none at quiescence """
    needs = {v: frozenset(rename_locals(p) for p in ann.m(v)) for v in graph.vertices}
    needs[QUIESCENT] = frozenset()
    return needs


def compute_mbf(library, ann, predicates=None, domain=DEFAULT_DOMAIN):
    """ Map each edge to the predicates it may falsify

    Parameters
    ----------
    library: Library or ControlGraph
    ann: proof.ProofAnnotation
    predicates: list of Expr, optional
        Defaults to every renamed basis and obligation predicate
    domain: logic.Domain

    Returns
    -------
    mbf: dict
        Edge to frozenset of predicates
    """
    graph = as_control_graph(library)
    if predicates is None:
        predicates = lock_predicates(graph, ann)
    mbf = {}
    for edge in graph.edges:
        mbf[edge] = frozenset(p for p in predicates if may_falsify(edge, p, ann, domain))
        if mbf[edge]:
            logger.debug(f"{edge} may falsify {', '.join(map(str, mbf[edge]))}")
    return mbf


def compute_held(graph, needs):
    """ Extend needs so locks used on any branch are taken before the branch """
    held = dict(needs)
    changed = True
    while changed:
        changed = False
        for edge in graph.edges:
            if not isinstance(edge.stmt, Assume):
                continue
            extra = held[edge.dst] - held[edge.src]
            if extra and edge.src != QUIESCENT:
                held[edge.src] = held[edge.src] | extra
                changed = True
    return held


def acquisition_graph(graph, held, mbf, predicates):
    """ The may-acquire-while-holding relation between predicates """
    relation = nx.DiGraph()
    relation.add_nodes_from(predicates)
    for edge in graph.edges:
        before = held[edge.src]
        taken = (held[edge.dst] | mbf[edge]) - before
        for p in before:
            for r in taken:
                if p in relation and r in relation:
                    relation.add_edge(p, r)
    return relation


def allocate_locks(library, held, mbf, predicates):
    """ Allocate one lock per class of mutually acquirable predicates

    Predicates that may each be acquired while the other is held share a
    lock. Ranks follow a topological order of the remaining relation, ties
    broken by the text of the smallest member.

    Parameters
    ----------
    library: Library or ControlGraph
    held: dict
        Vertex to protected predicates
    mbf: dict
        Edge to predicates it may falsify
    predicates: list of Expr

    Returns
    -------
    lm: dict
        Predicate to LockId
    locks: list of LockId
    """
    graph = as_control_graph(library)
    relation = acquisition_graph(graph, held, mbf, predicates)
    condensed = nx.condensation(relation)
    members = {c: tuple(sorted(condensed.nodes[c]["members"], key=str))
               for c in condensed.nodes}
    order = nx.lexicographical_topological_sort(
        condensed, key=lambda c: str(members[c][0]))
    locks = []
    lm = {}
    for rank, component in enumerate(order):
        lock = LockId(rank, members[component])
        locks.append(lock)
        for pred in lock.members:
            lm[pred] = lock
    merged = [lock for lock in locks if len(lock.members) > 1]
    logger.debug(f"Allocated {len(locks)} locks, {len(merged)} merged")
    return lm, locks


def compute_lock_sets(library, held, lm, mbf):
    """ Per-edge acquire, release and break lock sets

    Returns
    -------
    acq, rel, brk: dict
        Edge to tuples of LockId ordered by rank
    """
    graph = as_control_graph(library)

    def locks_of(preds):
        return frozenset(lm[p] for p in preds if p in lm)

    acq, rel, brk = {}, {}, {}
    for edge in graph.edges:
        before, after = locks_of(held[edge.src]), locks_of(held[edge.dst])
        acq[edge] = tuple(_by_rank(after - before))
        rel[edge] = tuple(_by_rank(before - after))
        brk[edge] = tuple(_by_rank(locks_of(mbf[edge]) - before - after))
    return acq, rel, brk


def plan_locks(library, needs, mbf, predicates, log=()):
    """ Allocate locks and compute the lock sets for given needs """
    graph = as_control_graph(library)
    held = compute_held(graph, needs)
    lm, locks = allocate_locks(graph, held, mbf, predicates)
    acq, rel, brk = compute_lock_sets(graph, held, lm, mbf)
    return LockPlan(graph, list(predicates), held, mbf, locks, lm, acq, rel, brk,
                    list(log))


# Weaving

def _falls_through(stmts):
    body = [s for s in stmts if not isinstance(s, Label)]
    if not body:
        return True
    last = body[-1]
    if isinstance(last, Return):
        return False
    if isinstance(last, If):
        return _falls_through(last.then) or _falls_through(last.orelse)
    return True


class _Weaver(object):

    def __init__(self, plan):
        self.plan = plan
        self.ranks = {lock.name: lock.rank for lock in plan.locks}
        self.before = defaultdict(list)
        self.after = defaultdict(list)
        self.provenance = []
        for edge in plan.graph.edges:
            acquires = _by_rank(set(plan.acq[edge]) | set(plan.brk[edge]))
            releases = _by_rank(set(plan.brk[edge]) | set(plan.rel[edge]), reverse=True)
            self.before[edge.key] += [Acquire(lock.name) for lock in acquires]
            self.after[edge.key] += [Release(lock.name) for lock in releases]
            self._record(edge, plan.acq[edge], "basis-acq", plan.held[edge.dst])
            self._record(edge, plan.rel[edge], "basis-rel", plan.held[edge.src])
            self._record(edge, plan.brk[edge], "break", plan.mbf[edge])

    def _record(self, edge, locks, reason, preds):
        for lock in locks:
            responsible = sorted(str(p) for p in preds if self.plan.lm.get(p) == lock)
            self.provenance.append(dict(edge=str(edge), lock=lock.name,
                                        reason=reason, predicates=responsible))

    def decorations(self, key):
        return self.before[key] + self.after[key]

    def tail(self, releases):
        """ Releases owed at a return, highest rank first """
        return sorted(releases, key=lambda r: self.ranks[r.lock], reverse=True)

    def block(self, stmts, path, exit_releases):
        out = []
        for ii, stmt in enumerate(stmts):
            key = path + (ii,)
            if isinstance(stmt, Label):
                continue
            if isinstance(stmt, If):
                then = self.after[key + ("then",)] + self.block(
                    stmt.then, key + ("then",), exit_releases)
                orelse = self.after[key + ("else",)] + self.block(
                    stmt.orelse, key + ("else",), exit_releases)
                out.append(If(stmt.cond, tuple(then), tuple(orelse)))
            elif isinstance(stmt, While):
                out += self.decorations(key + ("pre",))
                body = self.after[key + ("body",)] + self.block(
                    stmt.body, key + ("body",), exit_releases)
                out.append(While(stmt.cond, tuple(body)))
                out += self.after[key + ("exit",)]
            elif isinstance(stmt, Return):
                out += self.before[key]
                tail = self.tail(self.after[key] + exit_releases)
                reads_globals = any(v.kind == "global" for value in stmt.values
                                    for v in free_vars(value))
                if tail and reads_globals:
                    rets = [ret_var(i) for i in range(len(stmt.values))]
                    out += [Assign(r, v) for r, v in zip(rets, stmt.values)]
                    out += tail
                    out.append(Return(tuple(rets)))
                else:
                    out += tail
                    out.append(stmt)
            else:
                out += self.before[key] + [stmt] + self.after[key]
        return out

    def procedure(self, proc):
        exit_releases = self.after[("return", proc.name)]
        body = list(self.before[("call", proc.name)])
        body += self.decorations((proc.name, "empty"))
        body += self.block(proc.body, (proc.name,), exit_releases)
        if _falls_through(proc.body):
            start = len(body)
            while start > 0 and isinstance(body[start - 1], Release):
                start -= 1
            body = body[:start] + self.tail(body[start:] + exit_releases)
        return dataclasses.replace(proc, body=tuple(body))


def weave(library, plan):
    """ Insert the plan's acquire and release statements into the library

    Acquires come before an edge's statement in rank order and releases
    follow it in reverse rank order. Releases owed on return are placed
    before every return statement and at the end of a body that falls through.

    Parameters
    ----------
    library: Library or ControlGraph
    plan: LockPlan

    Returns
    -------
    instrumented: InstrumentedLibrary
    """
    graph = as_control_graph(library)
    weaver = _Weaver(plan)
    procedures = [weaver.procedure(p) for p in graph.library.procedures]
    woven = graph.library.replace(procedures)
    return InstrumentedLibrary(woven, plan, weaver.provenance)


# Optimisation

def held_points(plan):
    """ The lock sets held at each point of the woven library

    A point is a vertex other than quiescence or a procedure exit, or the
    execution of an edge's statement, during which the locks of the source,
    the target and the edge's break set are all held. Locks owed at an
    exit are released before the return statement, so exits are no point
    of their own.

    Parameters
    ----------
    plan: LockPlan

    Returns
    -------
    points: list of frozenset of LockId
    """
    graph = plan.graph
    exits = set(graph.exits)
    points = [plan.held_locks(v) for v in graph.vertices
              if v != QUIESCENT and v not in exits]
    for edge in graph.edges:
        if graph.is_call(edge) or graph.is_return(edge):
            continue
        points.append(plan.locks_of(plan.held[edge.src] | plan.held[edge.dst]
                                    | plan.mbf[edge]))
    return points


def _dominated(plan):
    """ The dominated lock of highest rank and its lowest-ranked dominator """
    points = held_points(plan)
    for victim in reversed(plan.locks):
        holding = [p for p in points if victim in p]
        for lock in plan.locks:
            if lock == victim:
                continue
            if all(lock in p for p in holding):
                return victim, lock
    return None


def _rerank(plan, victim, keeper):
    """ Fold victim's predicates into keeper and renumber locks from zero """
    survivors = [lock for lock in plan.locks if lock != victim]
    renamed = {}
    for rank, lock in enumerate(survivors):
        members = lock.members
        if lock == keeper:
            members = tuple(sorted(set(members) | set(victim.members), key=str))
        renamed[lock] = LockId(rank, members)
    renamed[victim] = renamed[keeper]
    lm = {p: renamed[lock] for p, lock in plan.lm.items()}
    acq, rel, brk = compute_lock_sets(plan.graph, plan.held, lm, plan.mbf)
    log = plan.log + [f"{victim.name} dominated by {keeper.name}"]
    return dataclasses.replace(plan, locks=[renamed[lock] for lock in survivors],
                               lm=lm, acq=acq, rel=rel, brk=brk, log=log)


def drop_unfalsified(plan):
    """ Rebuild a plan without the predicates no edge may falsify """
    falsified = frozenset().union(*plan.mbf.values()) if plan.mbf else frozenset()
    kept = [p for p in plan.predicates if p in falsified]
    dropped = [p for p in plan.predicates if p not in falsified]
    if not dropped:
        return plan
    needs = {v: preds & falsified for v, preds in plan.held.items()}
    log = plan.log + [f"never falsified: {p}" for p in dropped]
    return plan_locks(plan.graph, needs, plan.mbf, kept, log)


def optimize(instrumented):
    """ Remove redundant locks

    Locks protecting only predicates no statement may falsify are removed.
    Then, repeatedly, a lock that is held only at points where another lock
    is also held is merged into that lock. The result is rewoven.

    Parameters
    ----------
    instrumented: InstrumentedLibrary

    Returns
    -------
    optimized: InstrumentedLibrary
    """
    plan = drop_unfalsified(instrumented.plan)
    while True:
        found = _dominated(plan)
        if found is None:
            break
        victim, keeper = found
        logger.debug(f"Merging {victim.name} into {keeper.name}")
        plan = _rerank(plan, victim, keeper)
    current = weave(plan.graph, plan)
    current.extra = dict(instrumented.extra)
    logger.info(f"Optimised from {len(instrumented.locks)} to {len(plan.locks)} locks")
    return current


def check_lock_balance(library, ranks=None):
    """ Static lock-balance and rank-order check over every path

    Parameters
    ----------
    library: Library, ControlGraph or InstrumentedLibrary
    ranks: dict, optional
        Lock name to rank; derived from ``l<rank>`` names when omitted

    Returns
    -------
    problems: list of str
        Empty when every path acquires and releases each lock in balance,
        never re-acquires a held lock, acquires in rank order and holds no
        lock at quiescence
    """
    if isinstance(library, InstrumentedLibrary):
        ranks = ranks or {lock.name: lock.rank for lock in library.locks}
        library = library.library
    graph = as_control_graph(library)
    if ranks is None:
        ranks = {}
        for edge in graph.edges:
            if isinstance(edge.stmt, Acquire) and edge.stmt.lock[1:].isdigit():
                ranks[edge.stmt.lock] = int(edge.stmt.lock[1:])

    problems = []
    states = {v: set() for v in graph.vertices}
    states[QUIESCENT].add(frozenset())
    worklist = [QUIESCENT]
    while worklist:
        vertex = worklist.pop()
        for edge in graph.out_edges(vertex):
            for held in list(states[vertex]):
                stmt = edge.stmt
                new = held
                if isinstance(stmt, Acquire):
                    if stmt.lock in held:
                        problems.append(f"{edge}: {stmt.lock} acquired while held")
                        continue
                    above = [l for l in held if ranks.get(l, -1) >= ranks.get(stmt.lock, 1 << 30)]
                    if above:
                        problems.append(f"{edge}: {stmt.lock} acquired while holding "
                                        f"{', '.join(sorted(above))}")
                    new = held | {stmt.lock}
                elif isinstance(stmt, Release):
                    if stmt.lock not in held:
                        problems.append(f"{edge}: {stmt.lock} released but not held")
                        continue
                    new = held - {stmt.lock}
                if edge.dst == QUIESCENT and new:
                    problems.append(f"{edge}: returns holding {', '.join(sorted(new))}")
                    continue
                if new not in states[edge.dst]:
                    states[edge.dst].add(new)
                    worklist.append(edge.dst)
    return sorted(set(problems))


def synthesize(library, ann, domain=DEFAULT_DOMAIN, optimise=True):
    """ Plain lock synthesis from an annotation with obligations filled in

    Parameters
    ----------
    library: Library or ControlGraph
    ann: proof.ProofAnnotation
    domain: logic.Domain
    optimise: bool

    Returns
    -------
    instrumented: InstrumentedLibrary
    """
    graph = as_control_graph(library)
    predicates = lock_predicates(graph, ann)
    mbf = compute_mbf(graph, ann, predicates, domain)
    plan = plan_locks(graph, needs_of(graph, ann), mbf, predicates)
    instrumented = weave(graph, plan)
    logger.info(f"Synthesised {len(plan.locks)} locks over {len(predicates)} predicates")
    if optimise:
        instrumented = optimize(instrumented)
    return instrumented
