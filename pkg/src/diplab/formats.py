"""Stable text formats: log.csv, summary.json, checkpoint.json and matrix CSV.

Reals are written with 17 significant digits so float64 values round-trip exactly.
"""
from __future__ import annotations

import csv
import json
import math

import numpy as np

from .errors import IntegrityError, ShapeError
from .prompt import DipPrompt, FullRankPrompt, matrix_hash

FORMAT_VERSION = 1


def fmt(x) -> str:
    if x is None:
        return "nan"
    return format(float(x), ".17g")


def write_log_csv(records, path, n_sigma=None) -> None:
    n_sigma = n_sigma or max(len(r.sigma) for r in records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "loss", "base_acc", "new_acc", "id1", "id2"]
                   + [f"sigma_{i + 1}" for i in range(n_sigma)])
        for r in records:
            w.writerow([r.iter, fmt(r.loss), fmt(r.base_acc), fmt(r.new_acc), fmt(r.id1), fmt(r.id2)]
                       + [fmt(s) for s in r.sigma])


def read_log_csv(path) -> dict:
    """Columns of a log.csv as float arrays (``iter`` as int)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {name: np.array([float(r[j]) for r in body]) for j, name in enumerate(header)}
    cols["iter"] = cols["iter"].astype(int)
    return cols


class _Raw(float):
    """A float that serializes with 17 significant digits."""

    def __repr__(self):
        return fmt(self)


def _encode(obj):
    if isinstance(obj, np.ndarray):
        return [_encode(x) for x in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_encode(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(obj) else _Raw(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dumps(obj) -> str:
    """JSON with 17-significant-digit reals (non-finite reals become null)."""
    return _Dumper(indent=1, sort_keys=False).encode(_encode(obj)) + "\n"


class _Dumper(json.JSONEncoder):
    def iterencode(self, o, _one_shot=False):
        # the C encoder calls float.__repr__ directly; the Python one honours floatstr
        return json.encoder._make_iterencode(
            {}, self.default, json.encoder.py_encode_basestring_ascii, self.indent,
            lambda x: repr(x) if isinstance(x, _Raw) else float.__repr__(x),
            self.key_separator, self.item_separator, self.sort_keys, self.skipkeys, _one_shot,
        )(o, 0)


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(obj))


def checkpoint_dict(prompts, placement, init, seed) -> dict:
    first = prompts[0]
    if isinstance(first, DipPrompt):
        out = {"format_version": FORMAT_VERSION, "kind": "dip", "placement": placement,
               "n": first.n, "d": first.d, "r": first.r, "dropout_p": first.dropout_p,
               "p_a": first.p_a, "p_b": first.p_b, "p_init_hash": matrix_hash(first.p_init),
               "init": init, "seed": seed}
        out["deep_layers"] = [{"p_a": p.p_a, "p_b": p.p_b, "p_init_hash": matrix_hash(p.p_init)}
                              for p in prompts[1:]]
    else:
        out = {"format_version": FORMAT_VERSION, "kind": "full", "placement": placement,
               "n": first.n, "d": first.d, "r": None, "dropout_p": 0.0, "p": first.p,
               "init": init, "seed": seed}
        out["deep_layers"] = [{"p": p.p} for p in prompts[1:]]
    return _encode(out)


def save_checkpoint(prompts, path, placement="text", init="template", seed=0) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(checkpoint_dict(prompts, placement, init, seed)))


def load_checkpoint(path) -> dict:
    """Parsed checkpoint with matrices as float64 arrays; shapes are checked against n, d, r."""
    with open(path) as fh:
        ck = json.load(fh)
    if ck.get("format_version") != FORMAT_VERSION:
        raise ShapeError(f"unsupported checkpoint format_version {ck.get('format_version')!r}")
    n, d = ck["n"], ck["d"]
    if ck["kind"] == "dip":
        r = ck["r"]
        ck["p_a"] = np.array(ck["p_a"], dtype=np.float64).reshape(n, r)
        ck["p_b"] = np.array(ck["p_b"], dtype=np.float64).reshape(r, d)
        for layer in ck.get("deep_layers", []):
            layer["p_a"] = np.array(layer["p_a"], dtype=np.float64).reshape(n, r)
            layer["p_b"] = np.array(layer["p_b"], dtype=np.float64).reshape(r, d)
    else:
        ck["p"] = np.array(ck["p"], dtype=np.float64).reshape(n, d)
        for layer in ck.get("deep_layers", []):
            layer["p"] = np.array(layer["p"], dtype=np.float64).reshape(n, d)
    return ck


def stored_param_count(ck) -> int:
    layers = 1 + len(ck.get("deep_layers", []))
    if ck["kind"] == "dip":
        return layers * (ck["p_a"].size + ck["p_b"].size)
    return layers * ck["p"].size


def restore_prompt(ck, p_init):
    """Rebuild the first-layer prompt, refusing an init whose hash differs from the stored one."""
    if ck["kind"] == "full":
        return FullRankPrompt(ck["p"])
    digest = matrix_hash(np.asarray(p_init, dtype=np.float64))
    if digest != ck["p_init_hash"]:
        raise IntegrityError(f"p_init hash mismatch: checkpoint has {ck['p_init_hash'][:12]}..., "
                             f"supplied init hashes to {digest[:12]}...")
    return DipPrompt(p_init, ck["p_a"], ck["p_b"], ck["dropout_p"])


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    try:
        m = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ShapeError(f"{path}: {exc}") from None
    if m.ndim != 2:
        raise ShapeError(f"{path}: rows have unequal lengths")
    return m


def write_matrix_csv(m, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(m):
            w.writerow([fmt(x) for x in row])
