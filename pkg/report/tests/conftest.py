"""Shared fixture paths and an independent CSV reading for equality checks."""

import csv
import pathlib

FIXTURE = pathlib.Path(__file__).parent / "data" / "sweep48.csv"


def fixture_lines() -> list[str]:
    return FIXTURE.read_text().splitlines()


def raw_cells() -> list[dict]:
    """The fixture parsed with the stdlib only: the ground truth the
    figure series must match exactly."""
    lines = fixture_lines()
    assert lines[0].startswith("#")
    return list(csv.DictReader(lines[1:]))
