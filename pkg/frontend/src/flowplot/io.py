"""Reader for harness run artifacts: <name>.csv plus <name>.json sidecar.

The CSV conventions mirror the emitter: floats via repr(), list-valued
cells JSON-encoded, absent optionals as empty cells.  This module parses
the files directly so the plotting tool depends only on the published
file format, not on the simulator package.
"""

import csv
import json
import os

SUPPORTED_SCHEMA = 1


class SchemaVersionError(RuntimeError):
    pass


class RunData:
    def __init__(self, header, rows, metadata):
        self.header = header
        self.rows = rows
        self.metadata = metadata

    @property
    def bandwidth(self):
        return float(self.metadata.get("constants", {}).get("bandwidth", 50.0))

    def column(self, name):
        """Column as a list (None for empty cells), or None if absent."""
        if name not in self.header:
            return None
        return [r.get(name) for r in self.rows]


def _decode(key, cell):
    if cell == "":
        return None
    if cell.startswith("["):
        return json.loads(cell)
    if key in ("step", "k_unstable"):
        return int(cell)
    if key == "flags":
        return cell
    return float(cell)


def read_run(csv_path):
    json_path = os.path.splitext(csv_path)[0] + ".json"
    if not os.path.exists(json_path):
        raise FileNotFoundError(f"metadata sidecar missing: {json_path}")
    with open(json_path) as fh:
        metadata = json.load(fh)
    version = metadata.get("schema_version")
    if version != SUPPORTED_SCHEMA:
        raise SchemaVersionError(
            f"unsupported schema version {version!r} in {json_path} "
            f"(supported: {SUPPORTED_SCHEMA})")
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [{k: _decode(k, c) for k, c in zip(header, raw)}
                for raw in reader]
    return RunData(header, rows, metadata)
