"""Serialization of ensembles, marginals and reports.

Text artifacts begin with ``#`` provenance lines carrying the spec hash and
seed; floats are written with ``repr`` so they round-trip exactly and the bytes
depend only on the values.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .simulate import Ensemble

ENSEMBLE_COLUMNS = ("stream_ids", "exit_times", "exploded", "explode_time", "occupation_steps")


def provenance(spec_hash: str, seed: int, **extra) -> dict:
    return {"spec_hash": spec_hash, "seed": int(seed), "degsde_version": __version__, **extra}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence], meta: Mapping) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for k in sorted(meta):
            fh.write(f"# {k}={meta[k]}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: str | Path) -> tuple[dict, list[dict]]:
    """Provenance lines and data rows (values left as strings)."""
    meta, lines = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k] = v
            else:
                lines.append(line)
    return meta, list(csv.DictReader(lines))


def write_rows(path: str | Path, rows: Sequence[Mapping], meta: Mapping) -> Path:
    header = list(rows[0]) if rows else []
    return write_csv(path, header, ([r[h] for h in header] for r in rows), meta)


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return obj


def write_json(path: str | Path, doc: Mapping) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_marginals_csv(path: str | Path, ens: Ensemble, times: Sequence[float]) -> Path:
    """Long format ``path_id, t, x_1..x_d`` for the requested grid times."""
    d = len(ens.config.y)
    cfg = ens.config

    def rows():
        for t in times:
            X = ens.state_at(cfg.step_index(t))
            grid_t = cfg.step_index(t) * cfg.dt
            for i, x in zip(ens.stream_ids, X):
                yield (int(i), grid_t, *x)

    return write_csv(path, ["path_id", "t"] + [f"x_{k + 1}" for k in range(d)], rows(),
                     provenance(ens.spec_hash, cfg.seed))


def save_ensemble(path: str | Path, ens: Ensemble) -> Path:
    """Columnar ``.npz``: a JSON header plus one array per per-path field."""
    header = provenance(ens.spec_hash, ens.config.seed, config=ens.config.describe(),
                        eps_ladder=list(ens.eps_ladder))
    arrays = {name: getattr(ens, name) for name in ENSEMBLE_COLUMNS}
    for k, v in ens.snapshots.items():
        arrays[f"snapshot_{k}"] = v
    for k, v in ens.functionals.items():
        arrays[f"functional_{k}"] = v
    if ens.paths is not None:
        arrays["paths"] = ens.paths
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez_compressed(fh, header=np.array(json.dumps(_jsonable(header), sort_keys=True)), **arrays)
    return path


def load_ensemble(path: str | Path) -> dict:
    """Header dict plus the stored arrays (the SdeSpec itself is not embedded)."""
    with np.load(path) as z:
        out = {k: z[k] for k in z.files if k != "header"}
        out["header"] = json.loads(str(z["header"]))
    return out
