"""Shared argument handling for the experiment scripts."""

import argparse
import json
from pathlib import Path

from autocalib.evaluation import write_report


def parser(desc: str, scenes: int) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=desc)
    p.add_argument("--scenes", type=int, default=scenes)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results", help="output directory")
    return p


def save(report, out: str, name: str) -> dict:
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    write_report(report, d / f"{name}.csv", d / f"{name}.json")
    summary = report.summary()
    print(json.dumps(summary["solvers"], indent=1)[:4000])
    return summary
