import unittest

from lockweaver.errors import LibraryError, ParseError
from lockweaver.lang import (
    Assign, Assume, Call, Cmp, Const, LPCopy, QUIESCENT, Return, Skip, Var,
    build_control_graph, print_library, ret_var, shadow_of,
)
from lockweaver.parse import parse_library

SOURCE = """
ufun f/1;

globals {
    lastNum = 0;
    lastRes = f(0);
}

proc Compute(num) {
    if (lastNum == num) {
        res = lastRes;
    } else {
        res = f(num);
        lastNum = num;
        lastRes = res;
    }
    return res;
}
"""


class ControlGraph(unittest.TestCase):
    def setUp(self):
        self.library = parse_library(SOURCE)
        self.graph = build_control_graph(self.library)

    def tearDown(self):
        del self.library
        del self.graph

    def test_quiescent_vertex(self):
        self.assertIn(QUIESCENT, self.graph.vertices)
        calls = self.graph.out_edges(QUIESCENT)
        self.assertEqual(len(calls), 1)
        self.assertIsInstance(calls[0].stmt, Call)
        self.assertEqual(calls[0].dst, "Compute.entry")

    def test_return_edge(self):
        returns = self.graph.in_edges(QUIESCENT)
        self.assertEqual(len(returns), 1)
        self.assertEqual(returns[0].src, "Compute.exit")
        self.assertIsInstance(returns[0].stmt, Skip)

    def test_entry_has_no_incoming_procedure_edges(self):
        incoming = self.graph.in_edges("Compute.entry")
        self.assertTrue(all(self.graph.is_call(e) for e in incoming))

    def test_branches_are_assumes(self):
        branches = self.graph.out_edges("Compute.entry")
        self.assertEqual(len(branches), 2)
        self.assertTrue(all(isinstance(e.stmt, Assume) for e in branches))

    def test_return_statement_reaches_exit(self):
        edges = [e for e in self.graph.edges if isinstance(e.stmt, Return)]
        self.assertEqual(len(edges), 1)
        self.assertEqual(edges[0].dst, "Compute.exit")

    def test_edge_count(self):
        # call, two assumes, four assignments, return statement, return edge
        self.assertEqual(len(self.graph.edges), 9)

    def test_procedure_of(self):
        self.assertIsNone(self.graph.procedure_of(QUIESCENT))
        self.assertEqual(self.graph.procedure_of("Compute.exit").name, "Compute")

    def test_resolve_builtin_labels(self):
        self.assertEqual(self.graph.resolve("Compute.entry"), "Compute.entry")
        self.assertEqual(self.graph.resolve("quiescent"), QUIESCENT)
        with self.assertRaises(LibraryError):
            self.graph.resolve("Compute.nowhere")

    def test_locals_and_returns(self):
        proc = self.library.procedure("Compute")
        self.assertEqual(proc.params, (Var("num", "param"),))
        self.assertIn(Var("res", "local"), proc.locals)
        self.assertEqual(proc.ret_vars, (ret_var(0),))


class Structure(unittest.TestCase):
    def test_labels(self):
        library = parse_library("""
            globals { x = 0; }
            proc P() {
                @first:
                x = 1;
                @second:
                x = 2;
            }
        """)
        graph = build_control_graph(library)
        first = graph.resolve("P.first")
        second = graph.resolve("P.second")
        self.assertEqual(first, "P.entry")
        edge, = graph.out_edges(second)
        self.assertEqual(edge.stmt, Assign(Var("x"), Const(2)))

    def test_duplicate_label(self):
        library = parse_library("""
            globals { x = 0; }
            proc P() { @a: x = 1; @a: x = 2; }
        """)
        with self.assertRaises(LibraryError):
            build_control_graph(library)

    def test_unreachable_statement(self):
        library = parse_library("""
            globals { x = 0; }
            proc P() { return 1; x = 2; }
        """)
        with self.assertRaises(LibraryError):
            build_control_graph(library)

    def test_empty_body(self):
        library = parse_library("globals { x = 0; } proc P() { }")
        graph = build_control_graph(library)
        edge, = graph.out_edges("P.entry")
        self.assertEqual(edge.dst, "P.exit")
        self.assertIsInstance(edge.stmt, Skip)

    def test_while_loop(self):
        library = parse_library("""
            globals { x = 0; }
            proc Drain() {
                while (x > 0) {
                    x = x - 1;
                }
                return x;
            }
        """)
        graph = build_control_graph(library)
        # a loop at the start of a body gets a leading skip edge
        first, = graph.out_edges("Drain.entry")
        self.assertIsInstance(first.stmt, Skip)
        head = first.dst
        guards = graph.out_edges(head)
        self.assertEqual(len(guards), 2)
        self.assertTrue(all(isinstance(e.stmt, Assume) for e in guards))
        back = [e for e in graph.edges if e.dst == head and e.src != "Drain.entry"]
        self.assertEqual(len(back), 1)

    def test_multiple_returns(self):
        library = parse_library("""
            globals { x = 0; y = 0; }
            proc Both() { return (x, y); }
        """)
        proc = library.procedure("Both")
        self.assertEqual(proc.nret, 2)
        self.assertEqual([v.name for v in proc.ret_vars], ["ret", "ret2"])

    def test_shadow(self):
        shadow = shadow_of(Var("x"))
        self.assertEqual(shadow.kind, "shadow")
        self.assertEqual(str(shadow), "old(x)")
        self.assertTrue(shadow.is_thread_local)

    def test_bad_kind(self):
        with self.assertRaises(ValueError):
            Var("x", "register")


class Printing(unittest.TestCase):
    def test_round_trip(self):
        library = parse_library(SOURCE)
        self.assertEqual(parse_library(print_library(library)), library)

    def test_round_trip_with_locks(self):
        source = """
            globals { x = 0; }
            proc P() ensures x == old(x) + 1 {
                acquire(l0);
                lp;
                x = x + 1;
                assert x == old(x) + 1;
                release(l0);
            }
        """
        library = parse_library(source, allow_locks=True)
        printed = print_library(library)
        self.assertIn("acquire(l0);", printed)
        self.assertIn("lp;", printed)
        self.assertEqual(parse_library(printed, allow_locks=True), library)

    def test_lp_copies_globals(self):
        library = parse_library("""
            globals { x = 0; }
            proc P(v) { lp; x = v; }
        """, allow_locks=True)
        lp = library.procedure("P").body[0]
        self.assertIsInstance(lp, LPCopy)
        self.assertEqual([str(s) for s, _ in lp.copies], ["old(x)", "old(v)"])

    def test_precedence(self):
        library = parse_library("""
            globals { x = 0; }
            proc P() { x = x - (1 - 2); assume !(x == 1 || x == 2); }
        """)
        printed = print_library(library)
        self.assertIn("x = x - (1 - 2);", printed)
        self.assertIn("assume !(x == 1 || x == 2);", printed)
        self.assertEqual(parse_library(printed), library)

    def test_condition_rendering(self):
        self.assertEqual(str(Cmp("<=", Var("x"), Const(-1))), "x <= -1")

    def test_locking_statement_rejected_in_input(self):
        with self.assertRaises(ParseError):
            parse_library("globals { x = 0; } proc P() { acquire(l); }")


if __name__ == "__main__":
    unittest.main()
