"""Shipped JSON schemas and artifact validation."""

from __future__ import annotations

import json
from importlib import resources

import jsonschema

SCHEMA_PACKAGE = "heomcal.schemas"

ARTIFACT_SCHEMAS = {
    "heom_L_sweep.json": "heom_L_sweep.schema.json",
    "ramsey_A_sweep.json": "ramsey_A_sweep.schema.json",
    "L5_sanity_refit.json": "L5_sanity_refit.schema.json",
    "t1_partial_trace_check.json": "t1_partial_trace_check.schema.json",
    "dag_timing.json": "dag_timing.schema.json",
    "bath_audit.json": "bath_audit.schema.json",
    "run_record.json": "run_record.schema.json",
}


def load_schema(name: str) -> dict:
    ref = resources.files(SCHEMA_PACKAGE).joinpath(name)
    with ref.open("r") as fh:
        return json.load(fh)


def validate_artifact(artifact_name: str, payload: dict) -> None:
    """Validate a payload against the schema shipped for that artifact.

    Raises jsonschema.ValidationError on mismatch and KeyError for an
    artifact with no registered schema.
    """
    schema = load_schema(ARTIFACT_SCHEMAS[artifact_name])
    jsonschema.validate(payload, schema)
