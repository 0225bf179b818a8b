"""Report JSON validation against the schema shipped with the package."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema


@lru_cache(maxsize=1)
def report_schema() -> dict:
    text = resources.files("egoground").joinpath("report_schema.json").read_text("utf-8")
    return json.loads(text)


def validate_report(report: dict):
    """Raises jsonschema.ValidationError if the report violates the schema."""
    jsonschema.validate(report, report_schema())
