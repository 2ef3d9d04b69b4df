"""Operator files and CSV output.

Operator files are JSON documents::

    {"m": 2, "n": 1, "d": 2,
     "terms": [{"alpha": [0], "matrix": [[[0, 0], [1, 0]], [[0, 0], [0, 0]]]}, ...]}

Matrices are row-major with every entry a ``[re, im]`` pair.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InputError, NumericalInputError
from .symbol import OperatorSpec, order


def _int_field(doc, key, where="document"):
    if key not in doc:
        raise InputError(f"{where}: missing field {key!r}")
    val = doc[key]
    if isinstance(val, bool) or not isinstance(val, int):
        raise InputError(f"{where}: field {key!r} must be an integer, got {val!r}")
    return val


def _parse_entry(entry, where):
    if isinstance(entry, (int, float)) and not isinstance(entry, bool):
        return complex(entry)
    if (isinstance(entry, list) and len(entry) == 2
            and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in entry)):
        return complex(entry[0], entry[1])
    raise InputError(f"{where}: entry must be a [re, im] pair, got {entry!r}")


def parse_operator_file(text: str) -> OperatorSpec:
    """Parse and validate an operator document.

    Errors name the offending line (for JSON syntax) or field path.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise InputError("document: top level must be an object")
    m, n, d = (_int_field(doc, k) for k in ("m", "n", "d"))
    if m < 1 or n < 1 or d < 0:
        raise InputError(f"document: invalid sizes m={m}, n={n}, d={d}")
    terms_doc = doc.get("terms")
    if not isinstance(terms_doc, list):
        raise InputError("document: field 'terms' must be a list")
    terms = {}
    for i, term in enumerate(terms_doc):
        where = f"terms[{i}]"
        if not isinstance(term, dict):
            raise InputError(f"{where}: must be an object")
        alpha = term.get("alpha")
        if not isinstance(alpha, list) or not all(isinstance(a, int) and not isinstance(a, bool) for a in alpha):
            raise InputError(f"{where}.alpha: must be a list of integers")
        if len(alpha) != n:
            raise InputError(f"{where}.alpha: {alpha} has {len(alpha)} entries, expected n={n}")
        if any(a < 0 for a in alpha):
            raise InputError(f"{where}.alpha: {alpha} has negative entries")
        if order(alpha) > d:
            raise InputError(f"{where}.alpha: |alpha|={order(alpha)} exceeds declared d={d}")
        rows = term.get("matrix")
        if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
            raise InputError(f"{where}.matrix: must be a list of rows")
        shape = (len(rows), max((len(r) for r in rows), default=0))
        if shape != (m, m) or any(len(r) != m for r in rows):
            raise InputError(f"{where}.matrix for alpha={alpha}: shape {shape}, expected ({m}, {m})")
        mat = np.array([[_parse_entry(e, f"{where}.matrix[{r}][{c}]") for c, e in enumerate(row)]
                        for r, row in enumerate(rows)])
        if not np.all(np.isfinite(mat)):
            raise NumericalInputError(f"{where}.matrix for alpha={alpha}: non-finite entries")
        key = tuple(alpha)
        terms[key] = terms[key] + mat if key in terms else mat
    return OperatorSpec(m=m, n=n, d=d, terms=terms)


def load_operator(path) -> OperatorSpec:
    return parse_operator_file(Path(path).read_text())


def operator_to_json(op: OperatorSpec) -> str:
    terms = [{"alpha": list(alpha),
              "matrix": [[[float(z.real), float(z.imag)] for z in row] for row in mat]}
             for alpha, mat in op.terms.items()]
    return json.dumps({"m": op.m, "n": op.n, "d": op.d, "terms": terms}, indent=1)


def fmt(x) -> str:
    """17 significant digits; round-trips every double."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.17g}"


def write_csv(path, header: list[str], rows, meta: dict) -> None:
    """CSV with a leading ``# petrosem <version> key=value ...`` comment line."""
    buf = io.StringIO()
    stamp = " ".join(f"{k}={v}" for k, v in meta.items())
    buf.write(f"# petrosem {__version__} {stamp}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]
