import os
import re

import singer
from jsonschema import Draft4Validator
from singer import utils as singer_utils

LOGGER = singer.get_logger()

SCHEMA_PATH = os.path.join(os.path.dirname(__file__), "schemas", "config.schema.json")

_REQUIRED = re.compile(r"^'(.+)' is a required property$")


def load_schema():
    return singer_utils.load_json(SCHEMA_PATH)


def experiment_names(schema):
    return list(schema["properties"]["experiment"]["enum"])


def _pointer(error, prefix=()):
    parts = [*prefix, *(str(p) for p in error.absolute_path)]
    if error.validator == "required":
        missing = _REQUIRED.match(error.message)
        if missing:
            parts.append(missing.group(1))
    return "".join("/" + p.replace("~", "~0").replace("/", "~1") for p in parts)


def _violations(validator, instance, prefix=()):
    return [{"path": _pointer(error, prefix), "message": error.message} for error in validator.iter_errors(instance)]


def validate_config(config, schema=None):
    """Every schema violation of ``config`` as ``{"path", "message"}``, sorted by path.

    The top level is checked first; the ``parameters`` block is then checked
    against the definition named by ``experiment``.
    """
    schema = schema or load_schema()
    if not isinstance(config, dict):
        return [{"path": "", "message": "Config must be a JSON object."}]
    violations = _violations(Draft4Validator(schema), config)
    experiment = config.get("experiment")
    parameters = config.get("parameters")
    if experiment in experiment_names(schema) and isinstance(parameters, dict):
        block = {"definitions": schema["definitions"], "$ref": f"#/definitions/{experiment}"}
        violations.extend(_violations(Draft4Validator(block), parameters, prefix=("parameters",)))
    violations.sort(key=lambda v: (v["path"], v["message"]))
    LOGGER.debug("Config validation found %s violation(s)", len(violations))
    return violations
