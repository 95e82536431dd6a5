"""Reading and writing run outputs.

Tables are delimited text with one header row, UTF-8 and LF line endings.
Floats are written with ``repr`` so they parse back to the identical double.
Structured reports and run manifests are JSON.

Schemas::

    trajectories  path_id, step, p, x, group
    endpoints     path_id, p_final, group
    disparity     t, group_a, group_b, gap, se
    group_series  t, group, fraction_above, mean_p
    histogram     bin_lower, bin_upper, count, density, limit_density
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import __version__
from .cohort import CohortConfig, CohortResult, DisparityRecord, GroupSpec
from .limit import BetaParams, beta_pdf
from .urn import DefendantTrajectory, UrnParameters, derive_seed

TRAJECTORY_COLUMNS = ("path_id", "step", "p", "x", "group")
PATH_COLUMNS = ("path_id", "step", "p", "x")
ENDPOINT_COLUMNS = ("path_id", "p_final", "group")
DISPARITY_COLUMNS = ("t", "group_a", "group_b", "gap", "se")
GROUP_SERIES_COLUMNS = ("t", "group", "fraction_above", "mean_p")
HISTOGRAM_COLUMNS = ("bin_lower", "bin_upper", "count", "density", "limit_density")
MANIFEST = "manifest.json"


def delimiter_for(path) -> str:
    return "\t" if str(path).endswith(".tsv") else ","


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_table(path, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter_for(path), lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def read_table(path, columns: Optional[Sequence[str]] = None) -> List[Dict[str, str]]:
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter_for(path))
        if columns is not None and tuple(reader.fieldnames or ()) != tuple(columns):
            raise ValueError(f"{path}: expected columns {list(columns)}, got {reader.fieldnames}")
        return list(reader)


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_manifest(directory, command: str, seed, config: Dict[str, Any],
                   files: Sequence[str]) -> Path:
    return write_json(Path(directory) / MANIFEST, {
        "tool": "urnaudit",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "files": list(files),
    })


def write_paths(path, trajectories: Sequence[DefendantTrajectory]) -> Path:
    """Single-process paths: one row per (path, step)."""
    def rows():
        for pid, traj in enumerate(trajectories):
            for i in range(traj.horizon):
                yield pid, i + 1, traj.probabilities[i], traj.classifications[i]

    return write_table(path, PATH_COLUMNS, rows())


def write_trajectories(path, result: CohortResult) -> Path:
    result.require_full_paths()
    names = result.group_names

    def rows():
        for d in range(result.population):
            group = names[result.group_index[d]]
            p = result.scores[d]
            x = result.classifications[d]
            for i in range(result.horizon):
                yield d, i + 1, p[i], x[i], group

    return write_table(path, TRAJECTORY_COLUMNS, rows())


def read_trajectories(path):
    """Returns ``(path_ids, probabilities (N, T), classifications (N, T), groups)``."""
    rows = read_table(path)
    if not rows:
        raise ValueError(f"{path}: no trajectory rows")
    ids = sorted({int(r["path_id"]) for r in rows})
    horizon = max(int(r["step"]) for r in rows)
    index = {pid: j for j, pid in enumerate(ids)}
    p = np.full((len(ids), horizon), np.nan)
    x = np.zeros((len(ids), horizon), dtype=np.int8)
    groups = [""] * len(ids)
    for r in rows:
        j = index[int(r["path_id"])]
        step = int(r["step"]) - 1
        p[j, step] = float(r["p"])
        x[j, step] = int(r["x"])
        groups[j] = r.get("group", "")
    return ids, p, x, groups


def write_endpoints(path, result: CohortResult) -> Path:
    names = result.group_names
    return write_table(path, ENDPOINT_COLUMNS, (
        (d, result.endpoints[d], names[result.group_index[d]]) for d in range(result.population)
    ))


def read_endpoints(path):
    rows = read_table(path, ENDPOINT_COLUMNS)
    return ([int(r["path_id"]) for r in rows],
            np.array([float(r["p_final"]) for r in rows]),
            [r["group"] for r in rows])


def write_disparity(path, curve: Sequence[DisparityRecord]) -> Path:
    return write_table(path, DISPARITY_COLUMNS, (
        (rec.time, pg.group_a, pg.group_b, pg.gap, pg.se) for rec in curve for pg in rec.pairs
    ))


def read_disparity(path):
    return [
        (int(r["t"]), r["group_a"], r["group_b"], float(r["gap"]), float(r["se"]))
        for r in read_table(path, DISPARITY_COLUMNS)
    ]


def write_group_series(path, curve: Sequence[DisparityRecord]) -> Path:
    return write_table(path, GROUP_SERIES_COLUMNS, (
        (rec.time, g.name, g.fraction_above, g.mean_score) for rec in curve for g in rec.groups
    ))


def histogram_rows(values, bins: int, law: Optional[BetaParams] = None):
    """Equal-width histogram on [0, 1] with the limit density at bin centres."""
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins, range=(0.0, 1.0))
    width = 1.0 / bins
    total = counts.sum()
    rows = []
    for j, count in enumerate(counts):
        centre = (edges[j] + edges[j + 1]) / 2.0
        density = count / (total * width) if total else 0.0
        limit = beta_pdf(law, centre) if law is not None else math.nan
        rows.append((float(edges[j]), float(edges[j + 1]), int(count), float(density), limit))
    return rows


def write_histogram(path, values, bins: int, law: Optional[BetaParams] = None) -> Path:
    return write_table(path, HISTOGRAM_COLUMNS, histogram_rows(values, bins, law))


def cohort_config_from_dict(data: Dict[str, Any]) -> CohortConfig:
    cohort = data["cohort"]
    groups = tuple(
        GroupSpec(
            name=g["name"],
            fraction=g["fraction"],
            bias=g["bias"],
            initial_override=UrnParameters(**g["initial_override"]) if g.get("initial_override") else None,
        )
        for g in data["groups"]
    )
    return CohortConfig(
        population=cohort["population"],
        horizon=cohort["horizon"],
        params=UrnParameters(**data["urn"]),
        groups=groups,
        master_seed=cohort["master_seed"],
        record_full_paths=cohort["record_full_paths"],
    )


def load_cohort(directory) -> CohortResult:
    """Rebuild the :class:`CohortResult` of a ``cohort`` run directory."""
    directory = Path(directory)
    manifest = read_json(directory / MANIFEST)
    config = cohort_config_from_dict(manifest["config"])
    files = manifest["files"]
    endpoint_file = next(f for f in files if f.startswith("endpoints."))
    _, endpoints, group_labels = read_endpoints(directory / endpoint_file)
    names = [g.name for g in config.groups]
    group_index = np.array([names.index(g) for g in group_labels], dtype=np.int32)
    seeds = np.array([derive_seed(config.master_seed, d) for d in range(config.population)],
                     dtype=np.uint64)
    scores = classifications = None
    trajectory_file = next((f for f in files if f.startswith("trajectories.")), None)
    if trajectory_file is not None:
        _, p, x, _ = read_trajectories(directory / trajectory_file)
        scores = np.concatenate([p, endpoints[:, None]], axis=1)
        classifications = x
    for array in (seeds, group_index, endpoints, scores, classifications):
        if array is not None:
            array.flags.writeable = False
    return CohortResult(config, seeds, group_index, endpoints, scores, classifications)
