"""Run artifacts: versioned CSV tables, checkpoints and the manifest.

Every CSV starts with ``# schema=1``; floats are written with ``repr`` so
that a value read back is bit-identical, missing values are ``nan`` and
absent bounds are empty cells.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os

import numpy as np

from . import __version__
from .config import parse_config, serialize
from .model import params_to_bytes

SCHEMA = 1
ROUNDS_COLUMNS = ("round", "n_sampled", "n_malicious_sampled", "benign_ac", "attack_sr", "dist_to_X",
                  "mean_benign_angle", "std_benign_angle", "mean_malicious_angle", "agg_norm")
CLIENTS_COLUMNS = ("client_id", "compromised", "benign_ac", "attack_sr", "score", "cluster", "cs_contribution")
BOUNDS_COLUMNS = ("round", "bound_name", "lower", "observed", "upper", "holds")
UPDATES_COLUMNS = ("round", "client_id", "malicious", "norm", "angle_to_malicious_mean", "background_angle")


def fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def to_csv(columns, rows):
    out = io.StringIO()
    out.write(f"# schema={SCHEMA}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return out.getvalue()


def read_csv(path):
    """Rows of a schema-1 CSV as dicts of strings."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"{path} not found")
    with open(path, encoding="utf-8") as f:
        first = f.readline().strip()
        if first != f"# schema={SCHEMA}":
            raise ValueError(f"{path}: expected '# schema={SCHEMA}' header, got {first!r}")
        rows = list(csv.DictReader(f))
    if rows and None in rows[0]:
        raise ValueError(f"{path}: row has more cells than the header")
    return rows


def num(s):
    return float(s) if s != "" else math.nan


def rounds_rows(records):
    for r in records:
        yield (r.round, r.n_sampled, r.n_malicious_sampled, r.benign_ac, r.attack_sr, r.dist_to_X,
               r.mean_benign_angle, r.std_benign_angle, r.mean_malicious_angle, r.agg_norm)


def clients_rows(clients):
    for c in clients:
        yield (c.client_id, c.compromised, c.benign_ac, c.attack_sr, c.score, c.cluster, c.cs_contribution)


def bounds_rows(records):
    for r in records:
        for b in r.bounds:
            yield (r.round, b.name, b.lower, b.observed, b.upper, b.holds)


def updates_rows(records):
    for r in records:
        mal = set(r.malicious_ids)
        for cid, norm, ang, bg in zip(r.sampled_ids, r.update_norms, r.update_angles, r.background_angles):
            yield (r.round, cid, cid in mal, norm, ang, bg)


def blob_sha1(data):
    """Content hash in the form git uses for blobs."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_run(result, directory):
    """Write every artifact of ``result`` into ``directory`` and return the manifest."""
    os.makedirs(directory, exist_ok=True)
    files = {
        "rounds.csv": to_csv(ROUNDS_COLUMNS, rounds_rows(result.records)).encode(),
        "clients.csv": to_csv(CLIENTS_COLUMNS, clients_rows(result.clients)).encode(),
        "bounds.csv": to_csv(BOUNDS_COLUMNS, bounds_rows(result.records)).encode(),
        "updates.csv": to_csv(UPDATES_COLUMNS, updates_rows(result.records)).encode(),
        "theta_final.bin": params_to_bytes(result.theta),
    }
    if result.X is not None:
        files["trojan_X.bin"] = params_to_bytes(result.X)
    for name, data in files.items():
        with open(os.path.join(directory, name), "wb") as f:
            f.write(data)
    text = serialize(result.config)
    manifest = {
        "schema": SCHEMA,
        "fedpois_version": __version__,
        "root_seed": result.config.root_seed,
        "config": text,
        "config_sha1": blob_sha1(text),
        "compromised": list(result.compromised),
        "files": {name: blob_sha1(data) for name, data in sorted(files.items())},
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def config_from_manifest(path):
    with open(path, encoding="utf-8") as f:
        manifest = json.load(f)
    cfg = parse_config(manifest["config"])
    if blob_sha1(manifest["config"]) != manifest.get("config_sha1"):
        raise ValueError(f"{path}: config hash does not match its content")
    return cfg
