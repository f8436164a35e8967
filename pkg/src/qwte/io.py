"""Profile files and CSV datasets.

A profile file is one header line followed by a JSON body::

    qwte-profile 1 sha256=<hex digest of the body>
    {"format_version": 1, "rho": 2, "basis_kind": "sqrt", ...}

Floats are written with 17 significant digits, so a save/load round trip is
bit-exact.  The digest covers the whole body, so truncation is detected.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .mesh import DensityProfile, Grid, TailClosure

MAGIC = "qwte-profile"
FORMAT_VERSION = 1


def _num(v):
    v = float(v)
    if math.isnan(v):
        return '"nan"'
    if math.isinf(v):
        return '"inf"' if v > 0 else '"-inf"'
    return f"{v:.17g}"


def _array(a):
    return "[" + ", ".join(_num(v) for v in np.asarray(a, dtype=float).ravel()) + "]"


def _float(v):
    # non-finite values are stored as strings; float() parses both forms
    return float(v)


def _jsonable(obj):
    """Plain JSON types with floats kept exact (numpy scalars/arrays converted)."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def dumps_config(config) -> str:
    """Deterministic one-line JSON of a configuration mapping."""
    return json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))


def save_profile(path, profile: DensityProfile, rho, metadata=None):
    """Write ``profile`` (with ``rho``, moments and solver metadata) to ``path``."""
    mom = {"mass": profile.mass(), "energy": profile.energy()}
    body = (
        "{\n"
        f'  "format_version": {FORMAT_VERSION},\n'
        f'  "rho": {_num(rho)},\n'
        f'  "basis_kind": {json.dumps(profile.basis)},\n'
        f'  "tail_closure": {{"kind": {json.dumps(profile.tail.kind)}, "value": {_num(profile.tail.value)}}},\n'
        f'  "moments": {{"mass": {_num(mom["mass"])}, "energy": {_num(mom["energy"])}}},\n'
        f'  "solver_metadata": {dumps_config(metadata or {})},\n'
        f'  "grid_nodes": {_array(profile.nodes)},\n'
        f'  "coefficients": {_array(profile.coeffs)}\n'
        "}\n"
    )
    digest = hashlib.sha256(body.encode()).hexdigest()
    Path(path).write_text(f"{MAGIC} {FORMAT_VERSION} sha256={digest}\n{body}")


def load_profile(path):
    """Read a profile file.

    Returns
    -------
    profile : DensityProfile
    info : dict
        ``rho``, ``moments`` and ``metadata``.

    Raises
    ------
    FormatError
        Unknown file type, unsupported version, or checksum mismatch.
    """
    text = Path(path).read_text()
    head, sep, body = text.partition("\n")
    parts = head.split()
    if len(parts) != 3 or parts[0] != MAGIC or not parts[2].startswith("sha256="):
        raise FormatError("not a qwte profile file")
    try:
        version = int(parts[1])
    except ValueError:
        raise FormatError(f"unreadable format version {parts[1]!r}") from None
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported profile format version {version} (this build reads {FORMAT_VERSION})")
    if hashlib.sha256(body.encode()).hexdigest() != parts[2][len("sha256="):]:
        raise FormatError("checksum mismatch: profile file is truncated or modified")
    try:
        data = json.loads(body)
        if data.get("format_version") != version:
            raise FormatError("format version in header and body disagree")
        tail = TailClosure(data["tail_closure"]["kind"], _float(data["tail_closure"]["value"]))
        prof = DensityProfile(Grid(np.array(data["grid_nodes"], dtype=float)),
                              np.array(data["coefficients"], dtype=float), data["basis_kind"], tail)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed profile body: {exc}") from None
    return prof, {"rho": _float(data["rho"]), "moments": data["moments"], "metadata": data["solver_metadata"]}


def write_csv(path, header, rows, config=None):
    """CSV with ``# config: {...}`` provenance lines and 17-digit floats."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        if config is not None:
            fh.write(f"# config: {dumps_config(config)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in np.asarray(rows, dtype=float):
            w.writerow([f"{v:.17g}" for v in row])


def read_csv(path):
    """Inverse of :func:`write_csv`: ``(config or None, header, rows)``."""
    config = None
    lines = Path(path).read_text().splitlines()
    body = []
    for line in lines:
        if line.startswith("# config: "):
            config = json.loads(line[len("# config: "):])
        elif not line.startswith("#"):
            body.append(line)
    reader = list(csv.reader(body))
    header, data = reader[0], reader[1:]
    return config, header, np.array([[float(v) for v in r] for r in data]).reshape(len(data), len(header))
