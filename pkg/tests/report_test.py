import json
import shutil
import tempfile
import unittest
from pathlib import Path

import pandas as pd

from lockweaver import cli
from lockweaver.errors import LockweaverError
from lockweaver.report import main, summarise

BENCHMARKS = Path(__file__).resolve().parent.parent / "benchmarks"

SIDECAR = dict(
    benchmark="counter",
    mode="lin",
    locks=[dict(id="l0", rank=0, members=["x == x_in'"])],
    predicates=["x == x_in'", "x == x_in' + 1"],
    provenance=[
        dict(edge="e0", lock="l0", reason="basis-acq", predicates=["x == x_in'"]),
        dict(edge="e1", lock="l0", reason="basis-rel", predicates=["x == x_in'"]),
        dict(edge="e2", lock="l0", reason="break", predicates=["x == x_in' + 1"]),
    ],
)
VERDICT = dict(benchmark="counter.lin", client="pair", status="ok", states=12,
               executions=3)


class Summary(unittest.TestCase):
    def setUp(self):
        self.outdir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.outdir)

    def write(self, name, data):
        (self.outdir / name).write_text(json.dumps(data))

    def test_empty_directory(self):
        with self.assertRaises(LockweaverError):
            summarise(self.outdir)
        self.assertEqual(main([str(self.outdir)]), 2)

    def test_rows(self):
        self.write("counter.lin.sidecar.json", SIDECAR)
        self.write("counter.lin.pair.verdict.json", VERDICT)
        df = summarise(self.outdir)
        self.assertEqual(len(df), 1)
        row = df.iloc[0]
        self.assertEqual(row["benchmark"], "counter")
        self.assertEqual(row["locks"], 1)
        self.assertEqual(row["predicates"], 2)
        self.assertEqual(row["acquire_sites"], 2)
        self.assertEqual(row["verdict"], "ok")
        self.assertEqual(row["states"], 12)

    def test_unverified(self):
        self.write("counter.lin.sidecar.json", SIDECAR)
        df = summarise(self.outdir)
        self.assertTrue(pd.isna(df.iloc[0]["verdict"]))

    def test_main_appends(self):
        self.write("counter.lin.sidecar.json", SIDECAR)
        self.write("counter.lin.pair.verdict.json", VERDICT)
        self.assertEqual(main([str(self.outdir)]), 0)
        self.assertEqual(main([str(self.outdir)]), 0)
        df = pd.read_csv(self.outdir / "lockweaver_summary.csv")
        self.assertEqual(len(df), 1)
        self.assertEqual(main([str(self.outdir), "--clean"]), 0)
        self.assertEqual(len(pd.read_csv(self.outdir / "lockweaver_summary.csv")), 1)

    def test_after_pipeline(self):
        code = cli.main(["pipeline", str(BENCHMARKS / "compute.lcl"),
                         "-o", str(self.outdir), "-q"])
        self.assertEqual(code, 0)
        df = summarise(self.outdir)
        self.assertEqual(list(df["verdict"]), ["ok"])
        self.assertEqual(list(df["mode"]), ["plain"])
        self.assertEqual(list(df["locks"]), [1])


if __name__ == "__main__":
    unittest.main()
