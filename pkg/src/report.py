import argparse
import json
import logging
from pathlib import Path

import pandas as pd
import tqdm

from .errors import LockweaverError

logger = logging.getLogger('lockweaver')

COLUMNS = ["filename", "benchmark", "mode", "client", "locks", "predicates",
           "acquire_sites", "verdict", "states", "executions"]


def read_sidecar(filename):
    """ Summary numbers of one synthesis run """
    with open(filename) as f:
        sidecar = json.load(f)
    acquires = [p for p in sidecar.get("provenance", [])
                if p["reason"] in ("basis-acq", "break")]
    label = sidecar["benchmark"] + (".lin" if sidecar["mode"] == "lin" else "")
    return label, dict(
        filename=str(filename),
        benchmark=sidecar["benchmark"],
        mode=sidecar["mode"],
        locks=len(sidecar["locks"]),
        predicates=len(sidecar["predicates"]),
        acquire_sites=len(acquires),
    )


def summarise(directory, known=()):
    """ One row per verdict, joined with the synthesis run it checked

    Parameters
    ----------
    directory: str or Path
        Searched recursively for ``*.sidecar.json`` and ``*.verdict.json``
    known: iterable of str
        Sidecar filenames to skip

    Returns
    -------
    df: pandas.DataFrame
    """
    directory = Path(directory)
    sidecars = sorted(directory.glob("**/*.sidecar.json"))
    if len(sidecars) == 0:
        raise LockweaverError(f"No synthesis results found in {directory}")
    verdicts = {}
    for filename in sorted(directory.glob("**/*.verdict.json")):
        with open(filename) as f:
            verdict = json.load(f)
        verdicts.setdefault(verdict["benchmark"], []).append(verdict)

    rows = []
    known = set(known)
    for filename in tqdm.tqdm([s for s in sidecars if str(s) not in known]):
        label, row = read_sidecar(filename)
        checked = verdicts.get(label, [])
        if not checked:
            rows.append(dict(row, client=None, verdict=None, states=None,
                             executions=None))
        for verdict in checked:
            rows.append(dict(row, client=verdict["client"], verdict=verdict["status"],
                             states=verdict["states"], executions=verdict["executions"]))
    logger.info(f"Read {len(rows)} records")
    return pd.DataFrame(rows, columns=COLUMNS)


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="Summarise synthesis and verification results",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("directory", help="Directory containing sidecar and verdict files")
    parser.add_argument(
        "-f", "--filename", default="lockweaver_summary.csv", help="Summary filename"
    )
    parser.add_argument("-c", "--clean", action="store_true", help="Start clean")
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO,
        datefmt="%H:%M",
        format="%(asctime)s %(levelname)-2s: %(message)s",
    )

    directory = Path(args.directory)
    summary_file = directory.joinpath(args.filename)
    if args.clean is False and summary_file.exists():
        df = pd.read_csv(summary_file)
        logger.info(f"Read in summary with {len(df)} records")
    else:
        logger.info("Creating new summary")
        df = pd.DataFrame(columns=COLUMNS)

    try:
        new = summarise(directory, known=df["filename"].astype(str))
    except LockweaverError as exc:
        logger.error(str(exc))
        return exc.exit_code
    logger.info(f"Adding {len(new)} records to the summary")
    df = pd.concat([df, new], ignore_index=True) if len(df) else new
    df.to_csv(summary_file, index=False)
    return 0


if __name__ == "__main__":
    main()
