# coding: utf-8
"""Run artifacts: CSV tables with the resolved config embedded, and a JSON summary."""
import csv
import json
import logging
import math
import os
import re
from itertools import chain

import numpy as np

logger = logging.getLogger(__name__)

SUMMARY_FILENAME = "summary.json"


def generate_filename(title, ends_with):
    title = re.sub(r"\W+", "_", title.split(".")[0]).strip("_")
    if not title.endswith(ends_with):
        title += ends_with
    return title


def format_value(value):
    """Text for one CSV cell; floats use their shortest round-tripping repr."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _jsonable(value):
    if isinstance(value, dict):
        return {key: _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(item) for item in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


def config_comments(cfg):
    return [
        "config: {}".format(json.dumps(_jsonable(cfg.as_dict(run_options=False)),
                                       sort_keys=True)),
        "master_seed: {}".format(cfg.master_seed),
    ]


def list_to_csv(path, data, header=None, comments=()):
    """Write rows to ``path``, preceded by ``#`` comment lines and the header."""
    with open(path, "w", newline="") as handle:
        for comment in comments:
            handle.write("# {}\n".format(comment))
        cw = csv.writer(handle, lineterminator="\n")
        for row in chain([header] if header else [], data):
            cw.writerow([format_value(s) for s in row])
    logger.info("wrote %s", path)
    return path


def write_table(out_dir, title, table, cfg, rows=None, header=None):
    """Write ``table`` (anything with ``header`` and ``rows()``) as a CSV artifact."""
    path = os.path.join(ensure_dir(out_dir), generate_filename(title, ".csv"))
    return list_to_csv(path, table.rows() if rows is None else rows,
                       header=table.header if header is None else header,
                       comments=config_comments(cfg))


def ensure_dir(path):
    if not os.path.isdir(path):
        os.makedirs(path)
    return path


def make_check(name, passed, value, threshold, informative=False):
    return {
        "name": name,
        "passed": bool(passed),
        "value": _jsonable(value),
        "threshold": _jsonable(threshold),
        "informative": bool(informative),
    }


def failed_checks(checks):
    """Names of the failing checks that decide the exit status."""
    return [check["name"] for check in checks if not check["passed"] and not check["informative"]]


def write_summary(out_dir, command, cfg, checks, version, extra=None):
    summary = {
        "command": command,
        "version": version,
        "master_seed": cfg.master_seed,
        "config": cfg.as_dict(),
        "checks": checks,
        "failed": failed_checks(checks),
    }
    if extra:
        summary.update(extra)
    path = os.path.join(ensure_dir(out_dir), SUMMARY_FILENAME)
    with open(path, "w") as handle:
        json.dump(_jsonable(summary), handle, indent=2, sort_keys=True)
        handle.write("\n")
    logger.info("wrote %s", path)
    return path
