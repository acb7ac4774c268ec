import dataclasses
import json
import shutil
import tempfile
import unittest
from pathlib import Path

from lockweaver.errors import LockweaverError
from lockweaver.lin import transform_two_state
from lockweaver.mc import (
    ClientSpec, Invocation, Machine, Verdict, check_deadlock, check_linearizable,
    check_projection, check_serializability, erase_lock_steps, explore, format_history,
    project_shadows, replay, run_sequential, sweep_tables, table_from_json,
    table_to_json,
)
from lockweaver.parse import parse_library, read_library

BENCHMARKS = Path(__file__).resolve().parent.parent / "benchmarks"
TABLES = {"f": {(0,): 1, (5,): 9, (7,): 3}}


def load(name, allow_locks=False):
    library, _ = read_library(BENCHMARKS / name, allow_locks=allow_locks)
    return library


def client(name):
    return ClientSpec.from_file(BENCHMARKS / f"{name}.client.json")


class Clients(unittest.TestCase):
    def setUp(self):
        self.outdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.outdir)

    def test_from_file(self):
        spec = client("compute")
        self.assertEqual(spec.name, "compute")
        self.assertEqual(spec.threads, [Invocation("Compute", (5,)), Invocation("Compute", (7,))])
        self.assertEqual(spec.tables, TABLES)
        self.assertEqual(len(spec.sweep), 2)

    def test_name_from_file_name(self):
        path = Path(self.outdir) / "counter.small.client.json"
        path.write_text(json.dumps({"threads": [{"proc": "P"}]}))
        self.assertEqual(ClientSpec.from_file(path).name, "counter")

    def test_malformed(self):
        with self.assertRaises(LockweaverError):
            ClientSpec.from_dict({"tables": {}})
        with self.assertRaises(LockweaverError):
            ClientSpec.from_dict({"threads": [{"proc": "P", "args": ["a"]}]})
        with self.assertRaises(LockweaverError):
            ClientSpec.from_dict({"threads": [], "depth": 0})

    def test_not_json(self):
        path = Path(self.outdir) / "broken.client.json"
        path.write_text("{")
        with self.assertRaises(LockweaverError):
            ClientSpec.from_file(path)
        with self.assertRaises(LockweaverError):
            ClientSpec.from_file(Path(self.outdir) / "missing.client.json")

    def test_tables(self):
        table = table_from_json({"0,1": 3, "2,2": 4})
        self.assertEqual(table, {(0, 1): 3, (2, 2): 4})
        self.assertEqual(table_to_json(table), {"0,1": 3, "2,2": 4})

    def test_to_dict_reloads(self):
        spec = client("compute")
        again = ClientSpec.from_dict(spec.to_dict())
        self.assertEqual(again.threads, spec.threads)
        self.assertEqual(again.warmup, spec.warmup)
        self.assertEqual(again.tables, spec.tables)

    def test_unknown_procedure(self):
        spec = ClientSpec([Invocation("Nothing")])
        with self.assertRaises(LockweaverError):
            Machine(load("compute.lcl"), spec)

    def test_wrong_arity(self):
        spec = ClientSpec([Invocation("Compute")], TABLES)
        with self.assertRaises(LockweaverError):
            Machine(load("compute.lcl"), spec)

    def test_unknown_global(self):
        spec = ClientSpec([Invocation("Compute", (5,))], TABLES, init={"z": 1})
        with self.assertRaises(LockweaverError):
            Machine(load("compute.lcl"), spec).initial_state()


class Sequential(unittest.TestCase):
    def test_compute(self):
        calls = [Invocation("Compute", (5,)), Invocation("Compute", (5,)),
                 Invocation("Compute", (7,))]
        run = run_sequential(load("compute.lcl"), calls, TABLES)
        self.assertEqual(run.returns, [9, 9, 3])
        self.assertEqual(run.globals, {"lastNum": 7, "lastRes": 3})
        self.assertIsNone(run.violation)

    def test_initial_values(self):
        run = run_sequential(load("increment.lcl"), [Invocation("Increment")] * 2,
                             init={"x": 3})
        self.assertEqual(run.returns, [4, 5])

    def test_chained_initialisers(self):
        library = parse_library("""
            globals { a = 2; b = a + 1; }
            proc P() { return b; }
        """)
        run = run_sequential(library, [Invocation("P")])
        self.assertEqual(run.returns, [3])
        self.assertEqual(run.globals, {"a": 2, "b": 3})

    def test_multiple_returns(self):
        run = run_sequential(load("incxy.lcl"), [Invocation("IncX"), Invocation("IncY")])
        self.assertEqual(run.returns, [(1, 0), (1, 1)])

    def test_missing_table_entry(self):
        with self.assertRaises(LockweaverError):
            run_sequential(load("compute.lcl"), [Invocation("Compute", (6,))], TABLES)

    def test_violation(self):
        library = parse_library("globals { x = 0; } proc P() { x = 1; assert x == 2; }")
        run = run_sequential(library, [Invocation("P")])
        self.assertIn("failed", run.violation)

    def test_havoc_rejected(self):
        library = parse_library("globals { x = 0; } proc P() { x = *; }")
        with self.assertRaises(LockweaverError):
            run_sequential(library, [Invocation("P")])


class Exploration(unittest.TestCase):
    def test_stale_cache_read(self):
        verdict = explore(load("compute.lcl"), client("compute"))
        self.assertEqual(verdict.status, "assert")
        self.assertFalse(verdict.ok)
        result = replay(load("compute.lcl"), client("compute"), verdict.witness.schedule)
        self.assertEqual(result.outcome, "assert")

    def test_instrumented_compute(self):
        golden = load("golden/compute.instr.lcl", allow_locks=True)
        verdict = explore(golden, client("compute"))
        self.assertTrue(verdict.ok, str(verdict))
        self.assertTrue(verdict.exhaustive)
        self.assertGreater(verdict.executions, 1)

    def test_unsynchronised_increment(self):
        verdict = explore(load("increment.lcl"), client("increment"))
        self.assertEqual(verdict.status, "assert")

    def test_unsynchronised_average(self):
        verdict = explore(load("average.lcl"), client("average"))
        self.assertEqual(verdict.status, "assert")

    def test_deadlock(self):
        library = load("abba.lcl", allow_locks=True)
        verdict = explore(library, client("abba"))
        self.assertEqual(verdict.status, "deadlock")
        witness = check_deadlock(verdict)
        self.assertIsNotNone(witness)
        result = replay(library, client("abba"), witness.schedule)
        self.assertEqual(result.outcome, "deadlock")

    def test_no_deadlock(self):
        self.assertIsNone(check_deadlock(explore(load("compute.lcl"), client("compute"))))

    def test_depth_bound(self):
        golden = load("golden/compute.instr.lcl", allow_locks=True)
        shallow = dataclasses.replace(client("compute"), depth=3)
        verdict = explore(golden, shallow)
        self.assertEqual(verdict.status, "depth")
        self.assertFalse(verdict.exhaustive)

    def test_workers_agree(self):
        library = load("compute.lcl")
        single = explore(library, client("compute"), workers=1)
        pooled = explore(library, client("compute"), workers=2)
        self.assertEqual(single.to_dict(), pooled.to_dict())

    def test_sweep(self):
        library = load("compute.lcl")
        verdict, index = sweep_tables(library, client("compute"))
        self.assertEqual((verdict.status, index), ("assert", 0))
        colliding = client("compute").sweep[1]
        verdict, index = sweep_tables(library, client("compute"), [colliding])
        self.assertTrue(verdict.ok, str(verdict))

    def test_lock_misuse(self):
        library = parse_library("globals { x = 0; } proc P() { release(l0); }",
                                allow_locks=True)
        verdict = explore(library, ClientSpec([Invocation("P")]))
        self.assertEqual(verdict.status, "lock-error")


class Verdicts(unittest.TestCase):
    def test_priority(self):
        verdict = Verdict()
        verdict.offer("deadlock", [(0, 0)])
        verdict.offer("assert", [(1, 0), (1, 0)])
        self.assertEqual(verdict.status, "assert")

    def test_least_schedule_kept(self):
        verdict = Verdict()
        verdict.offer("assert", [(1, 0)], "second")
        verdict.offer("assert", [(0, 1), (1, 0)], "first")
        self.assertEqual(verdict.witness.detail, "first")

    def test_merge(self):
        first, second = Verdict(states=3), Verdict(states=4, exhaustive=False)
        second.offer("deadlock", [(0, 0)])
        first.merge(second)
        self.assertEqual(first.states, 7)
        self.assertEqual(first.status, "deadlock")
        self.assertFalse(first.exhaustive)

    def test_ok(self):
        self.assertEqual(Verdict().status, "ok")
        self.assertEqual(Verdict(exhaustive=False).status, "depth")


class Linearizability(unittest.TestCase):
    def setUp(self):
        self.library = load("increment.lcl")

    def tearDown(self):
        del self.library

    def check(self, history):
        return check_linearizable(history, self.library, {}, {"x": 0})

    def test_sequential(self):
        self.assertTrue(self.check([("inv", 0, "Increment", ()), ("res", 0, (1,)),
                                    ("inv", 1, "Increment", ()), ("res", 1, (2,))]))

    def test_lost_update(self):
        self.assertFalse(self.check([("inv", 0, "Increment", ()), ("res", 0, (1,)),
                                     ("inv", 1, "Increment", ()), ("res", 1, (1,))]))
        self.assertFalse(self.check([("inv", 0, "Increment", ()), ("inv", 1, "Increment", ()),
                                     ("res", 0, (1,)), ("res", 1, (1,))]))

    def test_overlapping_reordered(self):
        self.assertTrue(self.check([("inv", 0, "Increment", ()), ("inv", 1, "Increment", ()),
                                    ("res", 0, (2,)), ("res", 1, (1,))]))

    def test_real_time_order(self):
        self.assertFalse(self.check([("inv", 0, "Increment", ()), ("res", 0, (2,)),
                                     ("inv", 1, "Increment", ()), ("res", 1, (1,))]))

    def test_pending(self):
        self.assertTrue(self.check([("inv", 0, "Increment", ()), ("inv", 1, "Increment", ()),
                                    ("res", 1, (1,))]))

    def test_response_without_invocation(self):
        with self.assertRaises(LockweaverError):
            self.check([("res", 0, (1,))])

    def test_serializability(self):
        spec = ClientSpec([Invocation("Increment")], init={"x": 0})
        history = [("inv", 0, "Increment", ()), ("lp", 0), ("res", 0, (1,))]
        ok, reason = check_serializability(history, {"x": 1}, self.library, spec, {"x": 0})
        self.assertTrue(ok, reason)
        ok, _ = check_serializability(history, {"x": 2}, self.library, spec, {"x": 0})
        self.assertFalse(ok)
        ok, _ = check_serializability(history[:1] + history[2:], {"x": 1}, self.library,
                                      spec, {"x": 0})
        self.assertFalse(ok)

    def test_format_history(self):
        text = format_history([("inv", 0, "Compute", (5,)), ("lp", 0), ("res", 0, (9,))])
        self.assertEqual(text, "t0:Compute(5) t0:ret(9)")


class Replays(unittest.TestCase):
    def setUp(self):
        self.golden = load("golden/compute.instr.lcl", allow_locks=True)
        self.client = client("compute")

    def tearDown(self):
        del self.golden
        del self.client

    def solo_schedule(self):
        machine = Machine(self.golden, self.client)
        state = machine.initial_state()
        schedule = []
        while not state.threads[0].done:
            state = machine.moves(state, 0)[0].state
            schedule.append((0, 0))
        return schedule

    def test_erase_lock_steps(self):
        schedule = self.solo_schedule()
        erased = erase_lock_steps(self.golden, self.client, schedule)
        self.assertEqual(len(erased), len(schedule) - 2)
        result = replay(load("compute.lcl"), self.client, erased)
        self.assertEqual(result.outcome, "incomplete")

    def test_replay_steps(self):
        schedule = self.solo_schedule()
        result = replay(self.golden, self.client, schedule)
        self.assertEqual(len(result.steps), len(schedule))
        self.assertIn("acquire(l0);", result.steps[1])

    def test_disabled_step(self):
        with self.assertRaises(LockweaverError):
            replay(self.golden, self.client, [(0, 3)])


class Projection(unittest.TestCase):
    def setUp(self):
        self.plain = load("increment.lcl")
        self.client = client("increment")
        self.machine = Machine(self.plain, self.client)

    def tearDown(self):
        del self.plain
        del self.client
        del self.machine

    def advance(self, state, label):
        target = self.machine.graph.resolve(label)
        while state.threads[0].pc != target:
            state = self.machine.moves(state, 0)[0].state
        return state

    def test_program_counter_kept(self):
        before = self.advance(self.machine.initial_state(), "Increment.check")
        after = self.machine.moves(before, 0)[0].state
        self.assertEqual(before.globals, after.globals)
        self.assertEqual(before.threads[0].frame, after.threads[0].frame)
        self.assertNotEqual(project_shadows(self.machine, before),
                            project_shadows(self.machine, after))

    def test_transformed_entry_matches_plain_entry(self):
        transformed = Machine(transform_two_state(self.plain), self.client)
        ours = transformed.moves(transformed.initial_state(), 0)[0].state
        theirs = self.machine.moves(self.machine.initial_state(), 0)[0].state
        self.assertEqual(project_shadows(transformed, ours),
                         project_shadows(self.machine, theirs))
        ours = transformed.moves(ours, 0)[0].state
        self.assertEqual(project_shadows(transformed, ours),
                         project_shadows(self.machine, theirs))

    def test_check_projection(self):
        ok, detail = check_projection(self.plain, transform_two_state(self.plain),
                                      self.client)
        self.assertTrue(ok, detail)



if __name__ == "__main__":
    unittest.main()
