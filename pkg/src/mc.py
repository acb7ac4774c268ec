""" Bounded exhaustive exploration of concurrent client runs

Each client thread performs one invocation. The explorer enumerates every
interleaving of thread steps depth first, pruning revisited states, and
reports assertion failures, deadlocks, lock misuse and, on request, histories
that are not linearizable with respect to the procedures' ``ensures``
specifications.
"""
import itertools
import json
import logging
import multiprocessing
from dataclasses import dataclass, field
from pathlib import Path

import tqdm

from .errors import LockweaverError
from .lang import (
    Acquire, Assert1, Assert2, Assign, Assume, LPCopy, Nondet, QUIESCENT, Release,
    Return, as_control_graph, shadow_of, walk,
)
from .logic import Domain, evaluate

logger = logging.getLogger('lockweaver')

DEFAULT_DEPTH = 60
CATEGORIES = ("assert", "lock-error", "deadlock", "nonlinearizable", "nonserializable")


# Client specifications

@dataclass(frozen=True)
class Invocation:
    proc: str
    args: tuple = ()

    def __str__(self):
        return f"{self.proc}({', '.join(map(str, self.args))})"


def table_from_json(entries):
    table = {}
    for key, value in entries.items():
        args = tuple(int(a) for a in str(key).split(","))
        table[args] = int(value)
    return table


def table_to_json(table):
    return {",".join(map(str, args)): value for args, value in sorted(table.items())}


@dataclass
class ClientSpec:
    """ A concurrent client: one invocation per thread

    Parameters
    ----------
    threads: list of Invocation
        Thread ``i`` performs ``threads[i]``
    tables: dict
        Function name to a dict from argument tuples to values
    init: dict
        Global name to initial value, overriding the library initialisers
    warmup: list of Invocation
        Invocations run sequentially before the threads start
    depth: int
        Maximum number of steps explored on any schedule
    bound: int
        Havoc statements choose from [-bound, bound]
    sweep: list of dict
        Alternative tables for `sweep_tables`
    name: str
    """
    threads: list
    tables: dict = field(default_factory=dict)
    init: dict = field(default_factory=dict)
    warmup: list = field(default_factory=list)
    depth: int = DEFAULT_DEPTH
    bound: int = 4
    sweep: list = field(default_factory=list)
    name: str = "client"

    def __post_init__(self):
        if self.depth < 1:
            raise LockweaverError("Client depth must be positive")

    @classmethod
    def from_dict(cls, data):
        def invocations(items):
            return [Invocation(i["proc"], tuple(int(a) for a in i.get("args", ())))
                    for i in items]
        try:
            return cls(
                threads=invocations(data["threads"]),
                tables={fn: table_from_json(t) for fn, t in data.get("tables", {}).items()},
                init={k: int(v) for k, v in data.get("init", {}).items()},
                warmup=invocations(data.get("warmup", [])),
                depth=int(data.get("depth", DEFAULT_DEPTH)),
                bound=int(data.get("bound", 4)),
                sweep=[{fn: table_from_json(t) for fn, t in tables.items()}
                       for tables in data.get("sweep", [])],
                name=data.get("name", "client"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise LockweaverError(f"Malformed client specification: {exc}")

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise LockweaverError(f"No such client file {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise LockweaverError(f"Client file {path} is not JSON: {exc}")
        data.setdefault("name", path.name.split(".")[0])
        return cls.from_dict(data)

    def to_dict(self):
        def invocations(items):
            return [dict(proc=i.proc, args=list(i.args)) for i in items]
        return dict(name=self.name, threads=invocations(self.threads),
                    warmup=invocations(self.warmup), init=dict(self.init),
                    tables={fn: table_to_json(t) for fn, t in self.tables.items()},
                    depth=self.depth, bound=self.bound)

    def with_tables(self, tables):
        data = dict(self.__dict__)
        data["tables"] = tables
        return ClientSpec(**data)


# States

@dataclass(frozen=True)
class ThreadState:
    """ One client thread

    ``frame`` holds the values of the procedure's params then locals;
    ``entry`` the globals and params when the call was made.
    """
    pc: str = QUIESCENT
    frame: tuple = ()
    entry: tuple = ()
    done: bool = False
    rets: tuple = ()


@dataclass(frozen=True)
class ConcState:
    """ Globals, lock holders (-1 when free), threads and optional history """
    globals: tuple
    locks: tuple
    threads: tuple
    history: tuple = ()

    @property
    def finished(self):
        return all(t.done for t in self.threads)


@dataclass(frozen=True)
class Move:
    kind: str
    edge: object
    state: ConcState = None
    detail: str = ""


@dataclass
class Witness:
    """ A schedule of (thread, choice) steps leading to a finding """
    kind: str
    schedule: list
    detail: str = ""
    history: tuple = ()

    def to_dict(self):
        return dict(kind=self.kind, schedule=[list(s) for s in self.schedule],
                    detail=self.detail, history=[list(e) for e in self.history])


def format_history(history):
    parts = []
    for event in history:
        if event[0] == "inv":
            parts.append(f"t{event[1]}:{event[2]}({', '.join(map(str, event[3]))})")
        elif event[0] == "res":
            parts.append(f"t{event[1]}:ret({', '.join(map(str, event[2]))})")
    return " ".join(parts)


class Machine(object):
    """ Small-step concurrent semantics of a library under a client """

    def __init__(self, library, client, record=False):
        self.graph = as_control_graph(library)
        self.library = self.graph.library
        self.client = client
        self.record = record
        self.global_vars = self.library.global_vars
        self.gindex = {v: i for i, v in enumerate(self.global_vars)}
        self.values = [int(v) for v in Domain(client.bound).values]
        self.procs = {p.name: p for p in self.library.procedures}
        self.frames = {p.name: p.params + p.locals for p in self.library.procedures}
        self.findex = {name: {v: i for i, v in enumerate(frame)}
                       for name, frame in self.frames.items()}
        self.calls = {e.stmt.proc: e for e in self.graph.out_edges(QUIESCENT)}
        names = set()
        for proc in self.library.procedures:
            for stmt in walk(proc.body):
                if isinstance(stmt, (Acquire, Release)):
                    names.add(stmt.lock)
        self.locks = sorted(names)
        self.lindex = {name: i for i, name in enumerate(self.locks)}
        for inv in client.threads + client.warmup:
            if inv.proc not in self.procs:
                raise LockweaverError(f"Client calls unknown procedure {inv.proc}")
            if len(inv.args) != len(self.procs[inv.proc].params):
                raise LockweaverError(f"{inv} has the wrong number of arguments")

    def eval(self, expr, env):
        try:
            return evaluate(expr, env, self.client.tables)
        except KeyError as exc:
            raise LockweaverError(f"Missing client value: {exc.args[0]}")

    def start_globals(self):
        values = []
        for var, init in self.library.globals:
            if var.name in self.client.init:
                values.append(self.client.init[var.name])
            else:
                # initialisers see the globals declared before them
                env = dict(zip(self.global_vars, values))
                values.append(self.eval(init, env))
        unknown = set(self.client.init) - {v.name for v in self.global_vars}
        if unknown:
            raise LockweaverError(f"Client initialises unknown globals {sorted(unknown)}")
        return tuple(values)

    def initial_state(self, globals_=None):
        if globals_ is None:
            globals_ = self.start_globals()
            if self.client.warmup:
                run = run_sequential(self.library, self.client.warmup, self.client.tables,
                                     self.named(globals_), self.client.bound)
                if run.violation:
                    raise LockweaverError(f"Warm-up failed: {run.violation}")
                globals_ = tuple(run.globals[v.name] for v in self.global_vars)
        threads = tuple(ThreadState() for _ in self.client.threads)
        return ConcState(tuple(globals_), tuple(-1 for _ in self.locks), threads)

    def named(self, globals_):
        return {v.name: val for v, val in zip(self.global_vars, globals_)}

    def env(self, state, tid):
        thread = state.threads[tid]
        proc = self.procs[self.client.threads[tid].proc]
        env = dict(zip(self.global_vars, state.globals))
        bases = self.global_vars + proc.params
        env.update({shadow_of(v): val for v, val in zip(bases, thread.entry)})
        env.update(zip(self.frames[proc.name], thread.frame))
        return env

    def _assign(self, state, tid, target, value):
        thread = state.threads[tid]
        proc = self.client.threads[tid].proc
        globals_ = state.globals
        frame = thread.frame
        if target in self.gindex:
            globals_ = _set(globals_, self.gindex[target], value)
        else:
            frame = _set(frame, self.findex[proc][target], value)
        return globals_, frame

    def _with(self, state, tid, globals_=None, locks=None, event=None, **thread_changes):
        thread = state.threads[tid]
        new_thread = ThreadState(**{**thread.__dict__, **thread_changes})
        history = state.history
        if self.record and event is not None:
            history = history + (event,)
        return ConcState(state.globals if globals_ is None else globals_,
                         state.locks if locks is None else locks,
                         _set(state.threads, tid, new_thread), history)

    def moves(self, state, tid):
        """ Possible steps of one thread, in a fixed order """
        thread = state.threads[tid]
        if thread.done:
            return []
        inv = self.client.threads[tid]
        proc = self.procs[inv.proc]
        if thread.pc == QUIESCENT:
            edge = self.calls[inv.proc]
            frame = tuple(inv.args) + tuple(0 for _ in proc.locals)
            entry = state.globals + tuple(inv.args)
            new = self._with(state, tid, event=("inv", tid, inv.proc, tuple(inv.args)),
                             pc=edge.dst, frame=frame, entry=entry)
            if self.record and not proc.has_lp:
                new = ConcState(new.globals, new.locks, new.threads,
                                new.history + (("lp", tid),))
            return [Move("step", edge, new)]

        out = []
        env = self.env(state, tid)
        for edge in self.graph.out_edges(thread.pc):
            stmt = edge.stmt
            if self.graph.is_return(edge):
                rets = tuple(env[v] for v in proc.ret_vars)
                out.append(Move("step", edge, self._with(
                    state, tid, event=("res", tid, rets), pc=QUIESCENT, done=True,
                    rets=rets)))
            elif isinstance(stmt, Assume):
                if self.eval(stmt.cond, env):
                    out.append(Move("step", edge, self._with(state, tid, pc=edge.dst)))
            elif isinstance(stmt, Assign):
                choices = self.values if isinstance(stmt.rhs, Nondet) else [
                    self.eval(stmt.rhs, env)]
                for value in choices:
                    globals_, frame = self._assign(state, tid, stmt.target, value)
                    out.append(Move("step", edge, self._with(
                        state, tid, globals_=globals_, pc=edge.dst, frame=frame)))
            elif isinstance(stmt, (Assert1, Assert2)):
                if self.eval(stmt.pred, env):
                    out.append(Move("step", edge, self._with(state, tid, pc=edge.dst)))
                else:
                    out.append(Move("assert", edge, None,
                                    f"t{tid} {edge.src}: {stmt} failed"))
            elif isinstance(stmt, Acquire):
                index = self.lindex[stmt.lock]
                holder = state.locks[index]
                if holder == tid:
                    out.append(Move("lock-error", edge, None,
                                    f"t{tid} re-acquires {stmt.lock}"))
                elif holder == -1:
                    locks = _set(state.locks, index, tid)
                    out.append(Move("step", edge, self._with(
                        state, tid, locks=locks, pc=edge.dst)))
            elif isinstance(stmt, Release):
                index = self.lindex[stmt.lock]
                if state.locks[index] != tid:
                    out.append(Move("lock-error", edge, None,
                                    f"t{tid} releases {stmt.lock} without holding it"))
                else:
                    locks = _set(state.locks, index, -1)
                    out.append(Move("step", edge, self._with(
                        state, tid, locks=locks, pc=edge.dst)))
            elif isinstance(stmt, Return):
                frame = thread.frame
                for ii, value in enumerate(stmt.values):
                    frame = _set(frame, self.findex[proc.name][proc.ret_vars[ii]],
                                 self.eval(value, env))
                out.append(Move("step", edge, self._with(
                    state, tid, pc=edge.dst, frame=frame)))
            elif isinstance(stmt, LPCopy):
                frame = thread.frame
                for shadow, base in stmt.copies:
                    frame = _set(frame, self.findex[proc.name][shadow], env[base])
                out.append(Move("step", edge, self._with(
                    state, tid, event=("lp", tid), pc=edge.dst, frame=frame)))
            else:
                out.append(Move("step", edge, self._with(state, tid, pc=edge.dst)))
        return out

    def outcome(self, state):
        return (state.globals, tuple(t.rets for t in state.threads))


def _set(values, index, value):
    return values[:index] + (value,) + values[index + 1:]


# Sequential runs

@dataclass
class SequentialRun:
    globals: dict
    returns: list
    violation: str = None


def _single(rets):
    return rets[0] if len(rets) == 1 else rets


def run_sequential(library, invocations, tables=None, init=None, bound=4):
    """ Execute invocations back to back

    Parameters
    ----------
    library: Library or ControlGraph
    invocations: list of Invocation
    tables: dict, optional
        Function tables
    init: dict, optional
        Global name to starting value
    bound: int

    Returns
    -------
    run: SequentialRun
        Final globals by name, the returned values and the first assertion
        violation if any
    """
    client = ClientSpec(list(invocations), dict(tables or {}), dict(init or {}),
                        bound=bound)
    machine = Machine(library, client)
    state = machine.initial_state()
    returns = []
    for tid in range(len(invocations)):
        steps = 0
        while not state.threads[tid].done:
            moves = machine.moves(state, tid)
            if not moves:
                raise LockweaverError(f"{invocations[tid]} blocked in a sequential run")
            if len(moves) > 1:
                raise LockweaverError(f"{invocations[tid]} is not deterministic")
            move = moves[0]
            if move.kind != "step":
                return SequentialRun(machine.named(state.globals), returns, move.detail)
            state = move.state
            steps += 1
            if steps > 10 * DEFAULT_DEPTH * max(1, len(machine.graph.edges)):
                raise LockweaverError(f"{invocations[tid]} does not terminate")
        returns.append(_single(state.threads[tid].rets))
    return SequentialRun(machine.named(state.globals), returns)


# Linearizability

@dataclass(frozen=True)
class Operation:
    ident: int
    proc: str
    args: tuple
    rets: tuple
    invoked: int
    responded: int = None


def _operations(history):
    ops = {}
    for index, event in enumerate(history):
        if event[0] == "inv":
            ops[event[1]] = Operation(event[1], event[2], tuple(event[3]), None, index)
        elif event[0] == "res":
            if event[1] not in ops or ops[event[1]].responded is not None:
                raise LockweaverError(f"Response without invocation in history: {event}")
            op = ops[event[1]]
            ops[event[1]] = Operation(op.ident, op.proc, op.args, tuple(event[2]),
                                      op.invoked, index)
    return [ops[k] for k in sorted(ops)]


def check_linearizable(history, library, tables, initial, values=None):
    """ Whether a history has a legal sequential reordering

    Operations are ordered consistently with real time: an operation that
    responded before another was invoked comes first. Each operation must
    satisfy its procedure's ``ensures`` between consecutive global states,
    which are searched over the domain values and every value seen in the
    history. Pending invocations may be dropped or completed with any
    return value.

    Parameters
    ----------
    history: sequence of events
        ``("inv", id, proc, args)``, ``("res", id, rets)``; other events are
        ignored
    library: Library
        Provides the procedures' ``ensures`` specifications
    tables: dict
        Function tables
    initial: dict
        Global name to value before the first operation
    values: list of int, optional
        Candidate values; the default domain when omitted

    Returns
    -------
    linearizable: bool
    """
    procs = {p.name: p for p in library.procedures}
    global_vars = library.global_vars
    ops = _operations(history)
    seen = set(values if values is not None else Domain().values.tolist())
    seen |= set(initial.values())
    for op in ops:
        seen |= set(op.args) | set(op.rets or ())
    candidates = sorted(int(v) for v in seen)

    def legal(op, before, after, rets):
        proc = procs[op.proc]
        if proc.ensures is None:
            return True
        env = {}
        for var, old, new in zip(global_vars, before, after):
            env[shadow_of(var)] = old
            env[var] = new
        for var, arg in zip(proc.params, op.args):
            env[shadow_of(var)] = arg
            env[var] = arg
        env.update(zip(proc.ret_vars, rets))
        try:
            return bool(evaluate(proc.ensures, env, tables))
        except KeyError:
            return False

    complete = frozenset(op.ident for op in ops if op.responded is not None)
    memo = {}

    def search(done, state):
        if complete <= done:
            return True
        key = (done, state)
        if key in memo:
            return memo[key]
        memo[key] = False
        for op in ops:
            if op.ident in done:
                continue
            if any(p.ident not in done and p.responded is not None
                   and p.responded < op.invoked for p in ops):
                continue
            nret = procs[op.proc].nret
            ret_options = [op.rets] if op.rets is not None else \
                itertools.product(candidates, repeat=nret)
            for rets in ret_options:
                for after in itertools.product(candidates, repeat=len(global_vars)):
                    if legal(op, state, after, rets) and search(done | {op.ident}, after):
                        memo[key] = True
                        return True
        return False

    start = tuple(initial[v.name] for v in global_vars)
    return search(frozenset(), start)


def check_serializability(history, final, library, client, initial):
    """ Compare a complete execution with its linearization-point order

    The invocations are replayed sequentially in the order their
    linearization points executed. The execution is serializable when that
    order respects real time and the sequential run returns the same values
    and reaches the same final globals.

    Parameters
    ----------
    history: sequence of events including ``("lp", id)`` markers
    final: dict
        Final global values by name
    library: Library
    client: ClientSpec
    initial: dict
        Globals by name when the threads started

    Returns
    -------
    ok: bool
    reason: str
    """
    order = [event[1] for event in history if event[0] == "lp"]
    ops = {op.ident: op for op in _operations(history)}
    if sorted(order) != sorted(ops):
        return False, "not every invocation passed its linearization point"
    position = {tid: i for i, tid in enumerate(order)}
    for a in ops.values():
        for b in ops.values():
            if a.responded is not None and a.responded < b.invoked \
                    and position[a.ident] > position[b.ident]:
                return False, f"t{a.ident} precedes t{b.ident} but linearizes after it"
    run = run_sequential(library, [client.threads[t] for t in order], client.tables,
                         initial, client.bound)
    if run.violation:
        return False, f"sequential run fails: {run.violation}"
    for tid, rets in zip(order, run.returns):
        if _single(ops[tid].rets) != rets:
            return False, f"t{tid} returned {ops[tid].rets}, sequentially {rets}"
    if run.globals != final:
        return False, f"final state {final} differs from sequential {run.globals}"
    return True, "ok"


# Exploration

@dataclass
class Verdict:
    """ Result of an exploration

    ``status`` is the most severe finding: assert, lock-error, deadlock,
    nonlinearizable, nonserializable, then depth when a path was cut off, else
    ok. Each finding keeps the lexicographically least schedule found.
    """
    witnesses: dict = field(default_factory=dict)
    states: int = 0
    executions: int = 0
    exhaustive: bool = True
    outcomes: set = field(default_factory=set)

    @property
    def status(self):
        for kind in CATEGORIES:
            if kind in self.witnesses:
                return kind
        return "ok" if self.exhaustive else "depth"

    @property
    def ok(self):
        return self.status == "ok"

    @property
    def witness(self):
        return self.witnesses.get(self.status)

    def finals(self, global_vars):
        """ Distinct final global valuations by name """
        found = {tuple(g) for g, _ in self.outcomes}
        return [dict(zip((v.name for v in global_vars), g)) for g in sorted(found)]

    def offer(self, kind, schedule, detail="", history=()):
        current = self.witnesses.get(kind)
        if current is None or schedule < current.schedule:
            self.witnesses[kind] = Witness(kind, list(schedule), detail, tuple(history))

    def merge(self, other):
        for kind, witness in other.witnesses.items():
            self.offer(kind, witness.schedule, witness.detail, witness.history)
        self.states += other.states
        self.executions += other.executions
        self.exhaustive &= other.exhaustive
        self.outcomes |= other.outcomes
        return self

    def to_dict(self):
        return dict(status=self.status, states=self.states, executions=self.executions,
                    exhaustive=self.exhaustive,
                    witnesses={k: w.to_dict() for k, w in sorted(self.witnesses.items())},
                    outcomes=sorted([list(g), [list(r) for r in rets]]
                                    for g, rets in self.outcomes))

    def __str__(self):
        text = (f"{self.status}: {self.states} states, {self.executions} executions"
                f"{'' if self.exhaustive else ', depth bound reached'}")
        if self.witness is not None:
            text += f"\n  {self.witness.detail}\n  schedule {self.witness.schedule}"
        return text


class _Explorer(object):

    def __init__(self, library, client, check_lin=False, check_serial=False):
        self.machine = Machine(library, client, record=check_lin or check_serial)
        self.library = self.machine.library
        self.client = client
        self.check_lin = check_lin
        self.check_serial = check_serial
        self.initial = self.machine.initial_state()
        self.initial_named = self.machine.named(self.initial.globals)
        self._lin = {}

    def linearizable(self, history):
        key = tuple(e for e in history if e[0] != "lp")
        if key not in self._lin:
            self._lin[key] = check_linearizable(
                key, self.library, self.client.tables, self.initial_named,
                self.machine.values)
        return self._lin[key]

    def finish(self, verdict, state, schedule):
        verdict.executions += 1
        verdict.outcomes.add(self.machine.outcome(state))
        if self.check_lin and not self.linearizable(state.history):
            verdict.offer("nonlinearizable", schedule,
                          f"history {format_history(state.history)} is not linearizable",
                          state.history)
        if self.check_serial:
            ok, reason = check_serializability(
                state.history, self.machine.named(state.globals), self.library,
                self.client, self.initial_named)
            if not ok:
                verdict.offer("nonserializable", schedule, reason, state.history)

    def expand(self, verdict, state, schedule):
        """ Children of a state; findings are offered to the verdict """
        children = []
        enabled = False
        for tid in range(len(state.threads)):
            for choice, move in enumerate(self.machine.moves(state, tid)):
                enabled = True
                step = schedule + [(tid, choice)]
                if move.kind == "step":
                    children.append((move.state, step))
                else:
                    verdict.offer(move.kind, step, move.detail, state.history)
        if not enabled and not state.finished:
            blocked = [f"t{t}" for t, th in enumerate(state.threads) if not th.done]
            verdict.offer("deadlock", schedule,
                          f"threads {', '.join(blocked)} blocked", state.history)
        return children

    def search(self, state, schedule):
        verdict = Verdict()
        visited = {state}
        stack = [(state, schedule)]
        while stack:
            state, schedule = stack.pop()
            if state.finished:
                self.finish(verdict, state, schedule)
                continue
            if len(schedule) >= self.client.depth:
                verdict.exhaustive = False
                continue
            for child in reversed(self.expand(verdict, state, schedule)):
                if child[0] not in visited:
                    visited.add(child[0])
                    stack.append(child)
        verdict.states = len(visited)
        return verdict


def _explore_partition(args):
    library, client, check_lin, check_serial, index = args
    explorer = _Explorer(library, client, check_lin, check_serial)
    state, schedule = explorer.expand(Verdict(), explorer.initial, [])[index]
    return explorer.search(state, schedule)


def explore(library, client, check_lin=False, check_serial=False, workers=1):
    """ Explore every interleaving of the client's threads

    The schedule tree is split by its first step and each part explored
    separately, so the verdict does not depend on the number of workers.

    Parameters
    ----------
    library: Library or ControlGraph
    client: ClientSpec
    check_lin: bool
        Check every complete history for linearizability
    check_serial: bool
        Compare every complete execution with its linearization-point order
    workers: int
        Number of worker processes

    Returns
    -------
    verdict: Verdict
    """
    graph = as_control_graph(library)
    explorer = _Explorer(graph, client, check_lin, check_serial)
    verdict = Verdict()
    initial = explorer.initial
    if initial.finished:
        explorer.finish(verdict, initial, [])
        verdict.states = 1
        return verdict
    children = explorer.expand(verdict, initial, [])
    jobs = [(graph.library, client, check_lin, check_serial, i)
            for i in range(len(children))]
    if workers > 1 and len(jobs) > 1:
        with multiprocessing.Pool(min(workers, len(jobs))) as pool:
            parts = pool.map(_explore_partition, jobs)
    else:
        parts = [explorer.search(state, schedule) for state, schedule in children]
    for part in parts:
        verdict.merge(part)
    verdict.states += 1
    logger.info(f"Explored {client.name}: {verdict}")
    return verdict


def check_deadlock(verdict):
    """ The deadlock witness of an exploration, or None """
    return verdict.witnesses.get("deadlock")


def sweep_tables(library, client, tables=None, **kwargs):
    """ Explore once per function table assignment

    Parameters
    ----------
    library: Library or ControlGraph
    client: ClientSpec
    tables: list of dict, optional
        Defaults to the client's sweep list
    kwargs:
        Passed to `explore`

    Returns
    -------
    verdict: Verdict
        The first failing verdict, or the last one when all pass
    index: int
        Position of that table in the sweep
    """
    tables = tables if tables is not None else client.sweep
    if not tables:
        tables = [client.tables]
    verdict = None
    for index, table in enumerate(tqdm.tqdm(tables, disable=len(tables) < 2)):
        verdict = explore(library, client.with_tables(table), **kwargs)
        if not verdict.ok:
            return verdict, index
    return verdict, len(tables) - 1


# Replay and projection

@dataclass
class Replay:
    steps: list
    outcome: str
    detail: str = ""
    state: ConcState = None


def replay(library, client, schedule, check_lin=False):
    """ Re-execute a schedule step by step

    Returns
    -------
    replay: Replay
        The executed edges and the outcome: the kind of the failing move,
        deadlock, nonlinearizable, done or incomplete
    """
    machine = Machine(library, client, record=True)
    state = machine.initial_state()
    steps = []
    for tid, choice in schedule:
        moves = machine.moves(state, tid)
        if choice >= len(moves):
            raise LockweaverError(f"Schedule step ({tid}, {choice}) is not enabled")
        move = moves[choice]
        steps.append(f"t{tid}: {move.edge.stmt}  [{move.edge.src}]")
        if move.kind != "step":
            return Replay(steps, move.kind, move.detail, state)
        state = move.state
    if state.finished:
        if check_lin:
            initial = machine.named(machine.initial_state().globals)
            if not check_linearizable(state.history, machine.library, client.tables,
                                      initial, machine.values):
                return Replay(steps, "nonlinearizable", format_history(state.history), state)
        return Replay(steps, "done", "", state)
    if not any(machine.moves(state, t) for t in range(len(state.threads))):
        return Replay(steps, "deadlock", "all unfinished threads blocked", state)
    return Replay(steps, "incomplete", "", state)


def erase_lock_steps(library, client, schedule):
    """ Drop the acquire and release steps from a schedule """
    machine = Machine(library, client)
    state = machine.initial_state()
    kept = []
    for tid, choice in schedule:
        move = machine.moves(state, tid)[choice]
        if not isinstance(move.edge.stmt, (Acquire, Release)):
            kept.append((tid, choice))
        if move.kind != "step":
            break
        state = move.state
    return kept


def _position(machine, vertex):
    """ The out-edge keys of a vertex, numbered as if no ``lp;`` led the body

    A vertex whose only move is the linearization point stands for the
    vertex after it, so a transformed procedure's entry lines up with the
    plain procedure's entry.
    """
    if vertex == QUIESCENT:
        return QUIESCENT
    edges = machine.graph.out_edges(vertex)
    if len(edges) == 1 and isinstance(edges[0].stmt, LPCopy):
        return _position(machine, edges[0].dst)
    body = machine.graph.procedure_of(vertex).body
    shift = 1 if body and isinstance(body[0], LPCopy) else 0
    keys = []
    for edge in edges:
        key = edge.key
        if shift and len(key) > 1 and isinstance(key[1], int):
            key = (key[0], key[1] - shift) + key[2:]
        keys.append(key)
    return tuple(sorted(keys, key=str))


def project_shadows(machine, state):
    """ A state with the shadow locals of every thread removed

    Program counters are replaced by their position in the procedure body,
    which the two-state transform leaves unchanged.
    """
    threads = []
    for tid, thread in enumerate(state.threads):
        frame = machine.frames[machine.client.threads[tid].proc]
        kept = tuple(val for var, val in zip(frame, thread.frame) if var.kind != "shadow")
        threads.append(ThreadState(_position(machine, thread.pc), kept, thread.entry,
                                   thread.done, thread.rets))
    return ConcState(state.globals, state.locks, tuple(threads))


def check_projection(plain, transformed, client):
    """ Check that the two-state transform only adds shadow state

    Both libraries are explored in lock step, the transformed one also
    taking its linearization-point steps alone. Every pair of states must
    agree once shadows are projected away.

    Returns
    -------
    ok: bool
    detail: str
    """
    left = Machine(transformed, client)
    right = Machine(plain, client)
    start = (left.initial_state(), right.initial_state())
    visited = {start}
    stack = [start]
    while stack:
        state, reference = stack.pop()
        if project_shadows(left, state) != project_shadows(right, reference):
            return False, f"states differ: {state} vs {reference}"
        for tid in range(len(state.threads)):
            ours = left.moves(state, tid)
            theirs = right.moves(reference, tid)
            for choice, move in enumerate(ours):
                if move.kind != "step":
                    continue
                if isinstance(move.edge.stmt, LPCopy):
                    pair = (move.state, reference)
                elif choice < len(theirs) and theirs[choice].kind == "step":
                    pair = (move.state, theirs[choice].state)
                else:
                    continue
                if pair not in visited:
                    visited.add(pair)
                    stack.append(pair)
    return True, f"{len(visited)} state pairs agree"
