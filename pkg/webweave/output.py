"""Result files: CSV tables, plot-data series and the summary JSON.

Every file is written to a temporary sibling and renamed into place, and is
listed in the summary by relative path and sha256 of its content. The
summary's own ``hash`` covers everything except ``timestamps`` and the
execution-only config keys, so the thread count and the output directory
never change it.
"""

import csv
import hashlib
import io
import json
import math
import os
import tempfile

import numpy as np
import singer
from singer import utils as singer_utils

LOGGER = singer.get_logger()

SUMMARY_FILE = "summary.json"

# config keys that change how a run executes, never what it computes
EXECUTION_KEYS = ("threads", "output_dir", "memory_budget_sites")


def format_value(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _json_default(value):
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (tuple, set, frozenset)):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _clean(value):
    """Non-finite floats become strings so the summary stays strict JSON."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (float, np.floating)) and not math.isfinite(value):
        return str(float(value))
    return value


def dumps(document):
    return json.dumps(_clean(document), sort_keys=True, indent=2, default=_json_default, allow_nan=False) + "\n"


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def atomic_write(path, data: bytes) -> str:
    """Write ``data`` to ``path`` through a temp file and a rename; returns its sha256."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, temp_path = tempfile.mkstemp(dir=directory, prefix=".webweave-", suffix=".tmp")
    try:
        with os.fdopen(handle, "wb") as out:
            out.write(data)
            out.flush()
            os.fsync(out.fileno())
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.unlink(temp_path)
        raise
    LOGGER.debug("Wrote %s (%s bytes)", path, len(data))
    return sha256(data)


def csv_bytes(columns, rows) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        values = [row.get(c) for c in columns] if isinstance(row, dict) else list(row)
        writer.writerow([format_value(v) for v in values])
    return buffer.getvalue().encode("utf-8")


def plot_bytes(series) -> bytes:
    lines = ["# x y y_err"]
    lines.extend(" ".join(format_value(v) for v in point) for point in series)
    return ("\n".join(lines) + "\n").encode("utf-8")


class ResultBundle:
    """Collects the files of one run and writes the summary that references them."""

    def __init__(self, output_dir):
        self.output_dir = output_dir
        self.files = []
        self.started = singer_utils.strftime(singer_utils.now())

    def _add(self, name, data):
        digest = atomic_write(os.path.join(self.output_dir, name), data)
        self.files.append({"path": name, "sha256": digest})
        return name

    def add_table(self, name, columns, rows):
        """A CSV file; ``rows`` are dicts keyed by column or sequences in column order."""
        return self._add(name, csv_bytes(list(columns), rows))

    def add_plot(self, name, series):
        """A plot-data file of ``(x, y, y_err)`` triples."""
        return self._add(name, plot_bytes(series))

    def summary(self, config, results, version):
        document = {
            "config": config,
            "results": results,
            "files": sorted(self.files, key=lambda f: f["path"]),
            "version": version,
        }
        hashed = {**document, "config": {k: v for k, v in (config or {}).items() if k not in EXECUTION_KEYS}}
        document["hash"] = sha256(dumps(hashed).encode("utf-8"))
        document["timestamps"] = {
            "started": self.started,
            "finished": singer_utils.strftime(singer_utils.now()),
        }
        return document

    def finish(self, config, results, version):
        document = self.summary(config, results, version)
        atomic_write(os.path.join(self.output_dir, SUMMARY_FILE), dumps(document).encode("utf-8"))
        LOGGER.info("Wrote %s result file(s) and %s to %s", len(self.files), SUMMARY_FILE, self.output_dir)
        return document
