""" Command line tool for lock synthesis and verification """
import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import mc
from .errors import AnnotationError, LockweaverError
from .lang import as_control_graph, print_library
from .lin import needs_two_state, synthesize_linearizable, transform_two_state
from .logic import DEFAULT_BOUND, DEFAULT_BUDGET, Domain
from .parse import parse_source, read_library
from .proof import (
    ProofReport, build_annotation, check_positive_basis, check_proof,
    infer_obligations, infer_proof,
)
from .synth import check_lock_balance, synthesize

logger = logging.getLogger('lockweaver')

COMMANDS = ("parse", "check-proof", "infer-proof", "synth", "synth-lin", "verify",
            "pipeline")


@dataclass
class RunConfig:
    """ Settings of one command line run """
    command: str
    input: str
    bound: int = DEFAULT_BOUND
    budget: int = DEFAULT_BUDGET
    clients: list = field(default_factory=list)
    check_lin: bool = False
    replay: str = None
    seeds: str = None
    outdir: str = "outdir"
    sweep_tables: str = None
    workers: int = 1
    optimise: bool = True
    lin: bool = False

    @classmethod
    def from_args(cls, args):
        return cls(command=args.command, input=args.input, bound=args.bound,
                   budget=args.budget, clients=list(args.client or []),
                   check_lin=args.check_lin, replay=args.replay, seeds=args.seeds,
                   outdir=args.outdir, sweep_tables=args.sweep_tables,
                   workers=args.workers, optimise=not args.no_optimise, lin=args.lin)

    @property
    def domain(self):
        return Domain(self.bound, self.budget)

    @property
    def name(self):
        return Path(self.input).name.split(".")[0]

    def validate(self):
        if self.command not in COMMANDS:
            raise LockweaverError(f"Unknown command {self.command}")
        if self.bound < 1:
            raise LockweaverError("The domain bound -B must be at least 1")
        if self.budget < 1:
            raise LockweaverError("The budget must be positive")
        if self.workers < 1:
            raise LockweaverError("The number of workers must be positive")
        paths = [self.input] + self.clients
        paths += [p for p in (self.replay, self.seeds, self.sweep_tables) if p]
        for path in paths:
            if not Path(path).is_file():
                raise LockweaverError(f"No such file {path}")
        if self.command == "verify" and not (self.clients or self.replay):
            raise LockweaverError("verify needs --client or --replay")
        return self


def get_parser():
    parser = argparse.ArgumentParser(
        prog="lockweaver",
        description="Synthesise lock-based concurrency control from sequential proofs",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("command", type=str, choices=COMMANDS, help="What to do")
    parser.add_argument("input", type=str, help="The library source (.lcl)")

    output_parser = parser.add_argument_group("Output options")
    output_parser.add_argument("-o", "--outdir", type=str, default="outdir",
                               help="The output directory")
    output_parser.add_argument("-v", "--verbose", action="store_true", help="Debug output")
    output_parser.add_argument("-q", "--quiet", action="store_true", help="Warnings only")

    logic_parser = parser.add_argument_group("Logic options")
    logic_parser.add_argument(
        "-B", "--bound", type=int, default=DEFAULT_BOUND,
        help="Integers range over [-B, B] in validity queries and havocs")
    logic_parser.add_argument(
        "--budget", type=int, default=DEFAULT_BUDGET,
        help="Maximum number of candidate valuations per validity query")
    logic_parser.add_argument(
        "--seeds", type=str, default=None,
        help=("A file of seed predicates, one per line, for proof inference. "
              "If not given, @seed annotations in the input are used"))
    logic_parser.add_argument(
        "--lin", action="store_true",
        help="Synthesise for linearizability in the pipeline command")
    logic_parser.add_argument(
        "--no-optimise", action="store_true", help="Keep every synthesised lock")

    mc_parser = parser.add_argument_group("Model checking options")
    mc_parser.add_argument(
        "--client", type=str, action="append", default=None,
        help=("A client specification (JSON). May be given several times; "
              "the pipeline uses <input>*.client.json next to the input if none"))
    mc_parser.add_argument(
        "--check-lin", action="store_true",
        help="Check every complete history for linearizability")
    mc_parser.add_argument(
        "--replay", type=str, default=None, help="Replay a witness file")
    mc_parser.add_argument(
        "--sweep-tables", type=str, default=None,
        help="A JSON list of function tables to explore in turn")
    mc_parser.add_argument(
        "--workers", type=int, default=int(os.environ.get("LOCKWEAVER_WORKERS", 1)),
        help="Number of exploration worker processes")
    return parser


def get_args(argv=None):
    return get_parser().parse_args(argv)


# Stages

def load_seeds(cfg, annotations):
    """ Seed formulas from --seeds or the input's @seed annotations """
    if cfg.seeds is None:
        return list(annotations.seeds)
    lines = [line.strip().rstrip(";") for line in Path(cfg.seeds).read_text().splitlines()]
    lines = [line for line in lines if line and not line.startswith("//")]
    _, parsed = parse_source("globals { }\n@seed { " + "".join(f"{s}; " for s in lines) + "}")
    return parsed.seeds


def obtain_proof(cfg, library, annotations):
    """ The annotation from the source, or one inferred from seeds """
    graph = as_control_graph(library)
    if not (annotations.inv or annotations.basis):
        seeds = load_seeds(cfg, annotations)
        if not seeds:
            raise AnnotationError("No annotations and no seeds")
        logger.info(f"Inferring a proof from {len(seeds)} seeds")
        return infer_proof(graph, seeds, cfg.domain)
    return build_annotation(graph, annotations)


def two_state(library):
    """ Whether the library is analysed with a linearization point at entry """
    return needs_two_state(library) or any(p.ensures is not None for p in library.procedures)


def check_annotation(library, ann, domain):
    report = ProofReport()
    report.extend(check_proof(library, ann, domain))
    report.extend(check_positive_basis(library, ann, domain))
    return report


def write_json(path, data):
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    logger.info(f"Written {path}")


def outdir(cfg):
    path = Path(cfg.outdir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _clients(cfg):
    if cfg.clients:
        return [mc.ClientSpec.from_file(c) for c in cfg.clients]
    source = Path(cfg.input)
    found = sorted(source.parent.glob(f"{cfg.name}*.client.json"))
    if not found:
        raise LockweaverError(
            f"No clients to explore: pass --client or add {cfg.name}*.client.json "
            f"next to {source}")
    return [mc.ClientSpec.from_file(c) for c in found]


def _sweep(cfg):
    if cfg.sweep_tables is None:
        return None
    data = json.loads(Path(cfg.sweep_tables).read_text())
    return [{fn: mc.table_from_json(t) for fn, t in tables.items()} for tables in data]


def verify(cfg, library, label, check_lin=False, check_serial=False):
    """ Explore every client and write verdict and witness files

    Returns
    -------
    ok: bool
    """
    ok = True
    sweep = _sweep(cfg)
    for client in _clients(cfg):
        tables = sweep if sweep is not None else (client.sweep or None)
        if tables:
            verdict, index = mc.sweep_tables(
                library, client, tables, check_lin=check_lin,
                check_serial=check_serial, workers=cfg.workers)
            client = client.with_tables(tables[index])
        else:
            verdict = mc.explore(library, client, check_lin=check_lin,
                                 check_serial=check_serial, workers=cfg.workers)
        stem = f"{label}.{client.name}"
        data = verdict.to_dict()
        data.update(benchmark=label, client=client.name)
        write_json(outdir(cfg) / f"{stem}.verdict.json", data)
        if verdict.ok:
            logger.info(f"{client.name}: {verdict}")
            continue
        ok = False
        logger.warning(f"{client.name}: {verdict}")
        if verdict.witness is not None:
            witness = verdict.witness.to_dict()
            witness["client"] = client.to_dict()
            write_json(outdir(cfg) / f"{stem}.witness.json", witness)
    return ok


def replay_witness(cfg, library):
    data = json.loads(Path(cfg.replay).read_text())
    if cfg.clients:
        client = mc.ClientSpec.from_file(cfg.clients[0])
    else:
        client = mc.ClientSpec.from_dict(data["client"])
    schedule = [tuple(step) for step in data["schedule"]]
    result = mc.replay(library, client, schedule, check_lin=cfg.check_lin)
    for step in result.steps:
        print(step)
    print(f"{result.outcome}: {result.detail}" if result.detail else result.outcome)
    return 0 if result.outcome == "done" else 1


def synthesise(cfg, library, annotations, lin):
    """ Proof, synthesis and output files; returns the instrumented library """
    if lin or two_state(library):
        library = transform_two_state(library)
    graph = as_control_graph(library)
    ann = obtain_proof(cfg, graph, annotations)
    report = check_annotation(graph, ann, cfg.domain)
    if not report.accepted:
        print(report, file=sys.stderr)
        return None
    if lin:
        instrumented = synthesize_linearizable(graph, ann, cfg.domain, cfg.optimise)
    else:
        ann = ann.replace(om=infer_obligations(graph, ann, cfg.domain))
        instrumented = synthesize(graph, ann, cfg.domain, cfg.optimise)
    problems = check_lock_balance(instrumented)
    if problems:
        for problem in problems:
            logger.error(problem)
        raise LockweaverError("Woven library is not lock balanced")

    path = outdir(cfg)
    mode = "lin" if lin else "plain"
    suffix = ".lin" if lin else ""
    (path / f"{cfg.name}{suffix}.instr.lcl").write_text(print_library(instrumented.library))
    sidecar = instrumented.to_dict()
    sidecar.update(benchmark=cfg.name, mode=mode, proof=ann.to_dict(graph.vertices))
    write_json(path / f"{cfg.name}{suffix}.sidecar.json", sidecar)
    logger.info(f"Written {path / f'{cfg.name}{suffix}.instr.lcl'}")
    return instrumented


def run(cfg):
    """ Execute one command; returns the exit code """
    command = cfg.command
    allow_locks = command in ("parse", "verify")
    library, annotations = read_library(cfg.input, allow_locks=allow_locks)

    if command == "parse":
        print(print_library(library), end="")
        return 0

    if command == "verify":
        if cfg.replay:
            return replay_witness(cfg, library)
        return 0 if verify(cfg, library, cfg.name, check_lin=cfg.check_lin) else 1

    if command in ("check-proof", "infer-proof"):
        graph = as_control_graph(transform_two_state(library)
                                 if two_state(library) else library)
        if command == "check-proof":
            if not (annotations.inv or annotations.basis):
                raise AnnotationError("No @inv or @basis annotations to check")
            ann = build_annotation(graph, annotations)
        else:
            ann = infer_proof(graph, load_seeds(cfg, annotations), cfg.domain)
            write_json(outdir(cfg) / f"{cfg.name}.proof.json", ann.to_dict(graph.vertices))
        report = check_annotation(graph, ann, cfg.domain)
        print(report)
        return 0 if report.accepted else 1

    if command == "pipeline":
        # fail before synthesis when there is nothing to explore
        _clients(cfg)

    lin = command == "synth-lin" or (command == "pipeline" and cfg.lin)
    instrumented = synthesise(cfg, library, annotations, lin)
    if instrumented is None:
        return 1
    if command in ("synth", "synth-lin"):
        return 0
    label = f"{cfg.name}.lin" if lin else cfg.name
    ok = verify(cfg, instrumented.library, label, check_lin=lin or cfg.check_lin,
                check_serial=lin)
    return 0 if ok else 1


def main(argv=None):
    args = get_args(argv)
    level = logging.DEBUG if args.verbose else (
        logging.WARNING if args.quiet else logging.INFO)
    logging.basicConfig(
        level=level,
        datefmt="%H:%M",
        format="%(asctime)s %(levelname)-2s: %(message)s",
    )
    logger.setLevel(level)
    try:
        cfg = RunConfig.from_args(args).validate()
        return run(cfg)
    except LockweaverError as exc:
        logger.error(f"{exc.__class__.__name__}: {exc}")
        return exc.exit_code
    except OSError as exc:
        logger.error(str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
