import unittest
from pathlib import Path

from lockweaver.errors import AnnotationError, ObligationError, ProofNotFound
from lockweaver.lang import (
    And, App, BinOp, BoolConst, Cmp, Const, QUIESCENT, TRUE, Var, build_control_graph,
    shadow_of,
)
from lockweaver.lin import needs_two_state, transform_two_state
from lockweaver.logic import implies, is_valid, normalize
from lockweaver.parse import parse_source
from lockweaver.proof import (
    build_annotation, check_obligations, check_positive_basis, check_proof,
    infer_obligations, infer_proof,
)

BENCHMARKS = Path(__file__).resolve().parent.parent / "benchmarks"
INVARIANT = normalize(Cmp("==", Var("lastRes"), App("f", (Var("lastNum"),))))
INCREMENTED = Cmp("==", Var("x"), BinOp("+", shadow_of(Var("x")), Const(1)))


def compute_source():
    with open(BENCHMARKS / "compute.lcl") as f:
        return f.read()


def annotated(source):
    library, annotations = parse_source(source)
    graph = build_control_graph(library)
    return graph, build_annotation(graph, annotations)


def read_benchmark(name):
    return (BENCHMARKS / f"{name}.lcl").read_text()


def two_state(library):
    return transform_two_state(library) if needs_two_state(library) else library


def benchmark(source):
    library, annotations = parse_source(source)
    graph = build_control_graph(two_state(library))
    return graph, build_annotation(graph, annotations)


def seeds_of(annotations):
    """ The conjuncts of every @inv formula """
    seeds = []
    for expr in annotations.inv.values():
        for part in expr.args if isinstance(expr, And) else (expr,):
            if not isinstance(part, BoolConst) and part not in seeds:
                seeds.append(part)
    return seeds


class CheckProof(unittest.TestCase):
    def setUp(self):
        self.source = compute_source()
        self.graph, self.ann = annotated(self.source)

    def tearDown(self):
        del self.source
        del self.graph
        del self.ann

    def test_accepted(self):
        report = check_proof(self.graph, self.ann)
        self.assertTrue(report.accepted, str(report))
        self.assertEqual(report.status, "Accepted")

    def test_positive_basis(self):
        report = check_positive_basis(self.graph, self.ann)
        self.assertTrue(report.accepted, str(report))

    def test_unlabelled_vertices_filled(self):
        self.assertEqual(self.ann.mu[self.graph.resolve("Compute.entry")], INVARIANT)
        self.assertEqual(set(self.ann.mu), set(self.graph.vertices))

    def test_missing_assert_conjunct(self):
        source = self.source.replace(
            "@inv(Compute.done) { lastRes == f(lastNum) && res == f(num) }",
            "@inv(Compute.done) { lastRes == f(lastNum) }")
        graph, ann = annotated(source)
        report = check_proof(graph, ann)
        self.assertFalse(report.accepted)
        self.assertIn("assert-b", report.rules)

    def test_missing_hoare_conjunct(self):
        source = self.source.replace(
            "@inv(Compute.cached) { res == f(num) && lastNum == num }",
            "@inv(Compute.cached) { res == f(num) }")
        graph, ann = annotated(source)
        report = check_proof(graph, ann)
        self.assertIn("hoare-a", report.rules)
        violation = [v for v in report.violations if v.rule == "hoare-a"][0]
        self.assertIsNotNone(violation.witness)
        self.assertEqual(violation.to_dict()["rule"], "hoare-a")

    def test_initial_state(self):
        source = self.source.replace("lastRes = f(0);", "lastRes = 0;")
        graph, ann = annotated(source)
        self.assertIn("entry-exit", check_proof(graph, ann).rules)

    def test_basis_too_small(self):
        source = self.source + "\n@basis(Compute.hit) { lastNum == num; }\n"
        graph, ann = annotated(source)
        report = check_positive_basis(graph, ann)
        self.assertEqual(report.rules, ["basis-positivity"])

    def test_unknown_point(self):
        library, annotations = parse_source(self.source + "\n@inv(Compute.nowhere) { true }\n")
        with self.assertRaises(AnnotationError):
            build_annotation(library, annotations)

    def test_report_dict(self):
        out = check_proof(self.graph, self.ann).to_dict()
        self.assertEqual(out, dict(status="Accepted", violations=[]))


class Obligations(unittest.TestCase):
    def setUp(self):
        self.graph, self.ann = annotated(compute_source())

    def tearDown(self):
        del self.graph
        del self.ann

    def test_owed_only_while_cache_is_stale(self):
        om = infer_obligations(self.graph, self.ann)
        cached = self.graph.resolve("Compute.cached")
        self.assertEqual(om[cached], frozenset([INVARIANT]))
        owed = [v for v, preds in om.items() if preds]
        self.assertEqual(owed, [cached])
        self.assertEqual(om[QUIESCENT], frozenset())

    def test_check_obligations(self):
        om = infer_obligations(self.graph, self.ann)
        report = check_obligations(self.graph, self.ann.replace(om=om))
        self.assertTrue(report.accepted, str(report))

    def test_missing_obligation(self):
        report = check_obligations(self.graph, self.ann)
        self.assertEqual(report.rules, ["obligation-a"])

    def test_m_is_basis_and_obligations(self):
        ann = self.ann.replace(om=infer_obligations(self.graph, self.ann))
        cached = self.graph.resolve("Compute.cached")
        self.assertIn(INVARIANT, ann.m(cached))
        self.assertTrue(ann.basis(cached) <= ann.m(cached))

    def test_not_reestablished(self):
        graph, ann = annotated("""
            globals { a = 0; b = 0; }
            proc P() { a = a + 1; }
            @inv(quiescent) { a == b }
            @inv(P.exit) { true }
        """)
        with self.assertRaises(ObligationError):
            infer_obligations(graph, ann)


class InferProof(unittest.TestCase):
    def test_inferred_proof_accepted(self):
        source = compute_source() + """
            @seed { lastRes == f(lastNum); lastNum == num; res == f(num); }
        """
        library, annotations = parse_source(source)
        graph = build_control_graph(library)
        ann = infer_proof(graph, annotations.seeds)
        self.assertTrue(check_proof(graph, ann).accepted)
        self.assertEqual(ann.mu[QUIESCENT], INVARIANT)

    def test_seeds_too_weak(self):
        library, _ = parse_source(compute_source())
        with self.assertRaises(ProofNotFound):
            infer_proof(library, [])

    def test_no_seeds_needed(self):
        library, _ = parse_source("""
            globals { x = 0; }
            proc Set() { x = 1; }
        """)
        ann = infer_proof(library, [])
        self.assertEqual(ann.mu[QUIESCENT], TRUE)


class Benchmarks(unittest.TestCase):
    # one statement change per benchmark that breaks its proof
    MUTATIONS = dict(
        compute=("lastRes = res;", "lastRes = num;"),
        increment=("tmp = tmp + 1;", "tmp = tmp + 2;"),
        incxy=("x = x + 1;", "x = x + 2;"),
        reduce=("x = y - 1;", "x = y;"),
        average=("avg = div(sum, count);", "avg = div(sum, v);"),
    )

    def test_annotated_proofs_accepted(self):
        for name in self.MUTATIONS:
            graph, ann = benchmark(read_benchmark(name))
            report = check_proof(graph, ann)
            self.assertTrue(report.accepted, f"{name}: {report}")

    def test_mutations_rejected(self):
        for name, (original, mutated) in self.MUTATIONS.items():
            source = read_benchmark(name)
            self.assertEqual(source.count(original), 1, name)
            graph, ann = benchmark(source.replace(original, mutated))
            report = check_proof(graph, ann)
            self.assertFalse(report.accepted, name)
            self.assertTrue(report.rules, name)

    def test_inferred_from_invariants(self):
        for name in self.MUTATIONS:
            library, annotations = parse_source(read_benchmark(name))
            graph = build_control_graph(two_state(library))
            ann = infer_proof(graph, seeds_of(annotations))
            report = check_proof(graph, ann)
            self.assertTrue(report.accepted, f"{name}: {report}")

    def test_inferred_increment(self):
        library, annotations = parse_source(read_benchmark("increment"))
        graph = build_control_graph(two_state(library))
        ann = infer_proof(graph, seeds_of(annotations))
        check = ann.mu[graph.resolve("Increment.check")]
        self.assertTrue(is_valid(implies(check, INCREMENTED)).valid, str(check))
        self.assertEqual(ann.mu[QUIESCENT], TRUE)



if __name__ == "__main__":
    unittest.main()
