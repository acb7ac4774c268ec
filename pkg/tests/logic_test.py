import itertools
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from lockweaver.errors import BudgetExceeded
from lockweaver.lang import (
    And, App, Assign, Assume, BinOp, Call, Cmp, Const, FALSE, LPCopy, Nondet, Not,
    Or, Return, TRUE, Var, ret_var, shadow_of,
)
from lockweaver.logic import (
    Domain, atoms, conjuncts, covers, equivalent, evaluate, free_vars, hoare_valid,
    is_valid, negate, normalize, rename_locals, satisfy, simplify_equivalent, wp,
)

X = Var("x")
Y = Var("y")
W = Var("w'", "logical")
SMALL = Domain(bound=2)
OPS = ("==", "!=", "<", "<=", ">", ">=")


def brute_hoare(pre, stmt, post, domain):
    """ Decide {pre} stmt {post} over x, y by running the statement """
    values = [int(v) for v in domain.values]
    for x, y in itertools.product(values, repeat=2):
        state = {X: x, Y: y}
        if not evaluate(pre, state):
            continue
        if isinstance(stmt, Assume):
            outcomes = [state] if evaluate(stmt.cond, state) else []
        elif isinstance(stmt.rhs, Nondet):
            outcomes = [{**state, stmt.target: v} for v in values]
        else:
            outcomes = [{**state, stmt.target: evaluate(stmt.rhs, state)}]
        if not all(evaluate(post, s) for s in outcomes):
            return False
    return True


def random_term(rng):
    choice = rng.integers(4)
    if choice == 0:
        return Const(int(rng.integers(-2, 3)))
    var = X if rng.integers(2) else Y
    if choice == 1:
        return var
    return BinOp("+" if choice == 2 else "-", var, Const(int(rng.integers(1, 3))))


def random_formula(rng, depth=2):
    if depth == 0 or rng.random() < 0.4:
        return Cmp(OPS[rng.integers(len(OPS))], random_term(rng), random_term(rng))
    kind = rng.integers(3)
    if kind == 0:
        return Not(random_formula(rng, depth - 1))
    args = (random_formula(rng, depth - 1), random_formula(rng, depth - 1))
    return And(args) if kind == 1 else Or(args)


def random_statement(rng):
    kind = rng.integers(3)
    target = X if rng.integers(2) else Y
    if kind == 0:
        return Assign(target, random_term(rng))
    if kind == 1:
        return Assign(target, Nondet())
    return Assume(random_formula(rng, 1))


terms = st.one_of(
    st.integers(-2, 2).map(Const),
    st.sampled_from([X, Y]),
    st.tuples(st.sampled_from([X, Y]), st.integers(1, 2)).map(
        lambda t: BinOp("+", t[0], Const(t[1]))),
)
comparisons = st.builds(Cmp, st.sampled_from(OPS), terms, terms)
formulas = st.recursive(
    comparisons,
    lambda inner: st.one_of(
        inner.map(Not),
        st.tuples(inner, inner).map(And),
        st.tuples(inner, inner).map(Or),
    ),
    max_leaves=4,
)
statements = st.one_of(
    st.builds(Assign, st.sampled_from([X, Y]), terms),
    st.builds(Assign, st.sampled_from([X, Y]), st.just(Nondet())),
    st.builds(Assume, comparisons),
)


class Normalize(unittest.TestCase):
    def test_constant_folding(self):
        self.assertEqual(normalize(Cmp("<", Const(1), Const(2))), TRUE)
        self.assertEqual(normalize(BinOp("+", X, Const(0))), X)
        self.assertEqual(normalize(Cmp("==", X, X)), TRUE)

    def test_negation_pushed_into_comparisons(self):
        self.assertEqual(negate(Cmp("<", X, Y)), Cmp(">=", X, Y))
        self.assertEqual(negate(And((Cmp("<", X, Y), Cmp("==", X, Const(1))))),
                         normalize(Or((Cmp(">=", X, Y), Cmp("!=", X, Const(1))))))

    def test_equality_operands_ordered(self):
        self.assertEqual(normalize(Cmp("==", Y, X)), normalize(Cmp("==", X, Y)))

    def test_flattening(self):
        nested = And((Cmp("<", X, Y), And((Cmp("<", X, Y), Cmp(">", X, Const(0))))))
        self.assertEqual(len(conjuncts(nested)), 2)
        self.assertEqual(normalize(And((TRUE, FALSE))), FALSE)

    @given(formulas)
    def test_idempotent(self, formula):
        once = normalize(formula)
        self.assertEqual(normalize(once), once)

    @given(formulas, st.integers(-2, 2), st.integers(-2, 2))
    def test_normalize_preserves_meaning(self, formula, x, y):
        state = {X: x, Y: y}
        self.assertEqual(bool(evaluate(formula, state)),
                         bool(evaluate(normalize(formula), state)))

    def test_atoms(self):
        formula = Or((And((Cmp("<", X, Y), Cmp("==", X, Const(1)))), Cmp(">", Y, Const(2))))
        self.assertEqual(len(atoms(formula)), 3)
        self.assertEqual(atoms(TRUE), set())


class WeakestPrecondition(unittest.TestCase):
    def test_assignment(self):
        post = Cmp("==", X, Const(1))
        self.assertEqual(wp(Assign(X, BinOp("+", Y, Const(1))), post),
                         normalize(Cmp("==", BinOp("+", Y, Const(1)), Const(1))))

    def test_havoc_introduces_logical_variable(self):
        pre = wp(Assign(X, Nondet()), Cmp("<", X, Y))
        self.assertTrue(any(v.kind == "logical" for v in free_vars(pre)))
        self.assertFalse(is_valid(pre).valid)

    def test_assume(self):
        pre = wp(Assume(Cmp(">", X, Const(0))), Cmp(">=", X, Const(0)))
        self.assertTrue(is_valid(pre).valid)

    def test_return_binds_ret(self):
        post = Cmp("==", ret_var(0), Const(3))
        self.assertEqual(wp(Return((X,)), post), normalize(Cmp("==", X, Const(3))))

    def test_linearization_point_copies(self):
        old = shadow_of(X)
        pre = wp(LPCopy(((old, X),)), Cmp("==", X, old))
        self.assertEqual(pre, TRUE)

    def test_call_zeroes_locals(self):
        local = Var("t", "local")
        pre = wp(Call("P", (), (local,)), Cmp("==", local, Const(0)))
        self.assertEqual(pre, TRUE)

    def test_rename_locals(self):
        local = Var("t", "local")
        renamed = rename_locals(And((Cmp("==", local, X), Cmp("==", shadow_of(X), X))))
        names = {v.name for v in free_vars(renamed)}
        self.assertEqual(names, {"t'", "x_in'", "x"})

    def test_rename_avoids_existing_logical(self):
        ret = ret_var(0)
        renamed = rename_locals(Cmp("==", Var("ret'", "logical"), ret))
        self.assertEqual({v.name for v in free_vars(renamed)}, {"ret'", "ret''"})


class Validity(unittest.TestCase):
    def test_valid(self):
        self.assertTrue(is_valid(Or((Cmp("<", X, Y), Cmp(">=", X, Y)))).valid)

    def test_invalid_with_witness(self):
        result = is_valid(Cmp("<", X, Y))
        self.assertTrue(result.invalid)
        self.assertFalse(evaluate(Cmp("<", X, Y), result.witness.values))

    def test_functions_are_congruent(self):
        f_x = App("f", (X,))
        f_y = App("f", (Y,))
        formula = And((Cmp("==", X, Y), Cmp("!=", f_x, f_y)))
        self.assertIsNone(satisfy([formula]))

    def test_witness_tables(self):
        f_x = App("f", (X,))
        found = satisfy([Cmp("==", f_x, Const(2)), Cmp("==", X, Const(1))])
        self.assertEqual(found.tables["f"][(1,)], 2)

    def test_argument_only_under_application(self):
        formula = Cmp("==", App("f", (X,)), Const(0))
        result = is_valid(formula)
        self.assertTrue(result.invalid)
        self.assertFalse(evaluate(formula, result.witness.values, result.witness.tables))
        self.assertTrue(is_valid(Or((Cmp(">=", App("f", (X,)), Const(0)),
                                     Cmp("<", App("f", (X,)), Const(0))))).valid)

    def test_nested_application(self):
        formula = Cmp("==", App("g", (App("f", (X,)),)), Const(0))
        result = is_valid(formula)
        self.assertTrue(result.invalid)
        self.assertFalse(evaluate(formula, result.witness.values, result.witness.tables))

    def test_hoare_with_application_argument(self):
        post = Cmp("==", Y, App("f", (X,)))
        self.assertTrue(hoare_valid(TRUE, Assign(Y, App("f", (X,))), post).valid)
        self.assertTrue(hoare_valid(TRUE, Assign(X, Const(1)), post).invalid)

    def test_independent_components(self):
        formula = And(tuple(Cmp("==", Var(f"v{i}"), Const(1)) for i in range(12)))
        found = satisfy([formula])
        self.assertEqual(len(found.values), 12)

    def test_budget(self):
        chain = And(tuple(Cmp("!=", Var(f"v{i}"), Var(f"v{i + 1}")) for i in range(8)))
        with self.assertRaises(BudgetExceeded):
            satisfy([chain], Domain(bound=4, budget=50))
        self.assertTrue(is_valid(negate(chain), Domain(bound=4, budget=50)).unknown)

    def test_domain(self):
        self.assertEqual(list(Domain(bound=1).values), [0, 1, -1])
        with self.assertRaises(ValueError):
            Domain(bound=0)

    def test_evaluate_missing_table_entry(self):
        with self.assertRaises(KeyError):
            evaluate(App("f", (Const(1),)), {}, {"f": {(2,): 0}})

    def test_oracle_agreement(self):
        rng = np.random.default_rng(20)
        unknown = 0
        for _ in range(10000):
            pre, post = random_formula(rng), random_formula(rng)
            stmt = random_statement(rng)
            result = hoare_valid(pre, stmt, post, SMALL)
            if result.unknown:
                unknown += 1
                continue
            self.assertEqual(result.valid, brute_hoare(pre, stmt, post, SMALL),
                             f"{{{pre}}} {stmt} {{{post}}}")
        self.assertLess(unknown, 100)

    @settings(max_examples=300, deadline=None)
    @given(formulas, statements, formulas)
    def test_hoare_matches_execution(self, pre, stmt, post):
        result = hoare_valid(pre, stmt, post, SMALL)
        self.assertEqual(result.valid, brute_hoare(pre, stmt, post, SMALL))


class Coverage(unittest.TestCase):
    def test_member(self):
        self.assertTrue(covers(Cmp("<", X, Y), [Cmp("<", X, Y)]))

    def test_positive_combination(self):
        self.assertTrue(covers(Cmp("<=", X, Y), [Cmp("<", X, Y), Cmp("==", X, Y)]))

    def test_not_covered(self):
        self.assertFalse(covers(Cmp("==", X, Y), [Cmp("<=", X, Y)]))
        self.assertFalse(covers(Cmp("==", X, Y), [Cmp("<=", X, Y)], exact=False))

    def test_constants_always_covered(self):
        self.assertTrue(covers(TRUE, []))

    def test_equivalent_shift(self):
        self.assertTrue(equivalent(Cmp("==", X, W), Cmp("==", X, BinOp("+", W, Const(1)))))
        self.assertFalse(equivalent(Cmp("==", X, W), Cmp("<", X, W)))
        self.assertFalse(equivalent(Cmp("==", X, W), Cmp("==", Y, W)))

    def test_equivalent_without_logical(self):
        old = shadow_of(X)
        self.assertTrue(equivalent(Cmp("==", X, old),
                                   Cmp("==", BinOp("+", X, Const(1)),
                                       BinOp("+", old, Const(1)))))

    def test_simplify_equivalent(self):
        short = Cmp("==", X, W)
        shifted = Cmp("==", X, BinOp("+", W, Const(1)))
        kept = simplify_equivalent([short, shifted])
        self.assertEqual(kept, [normalize(short)])
        kept = simplify_equivalent([short, shifted], pinned=[shifted])
        self.assertEqual(kept, [normalize(shifted)])


if __name__ == "__main__":
    unittest.main()
