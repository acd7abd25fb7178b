"""File formats: response CSVs, JSON artifacts and DOT graphs.

Attribute indices are 1-based in every file and 0-based in memory.  JSON
is written UTF-8 with sorted keys; floats use ``repr`` so values
round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .core import (
    AttributeProfileSet,
    HierCdmError,
    Hierarchy,
    IndicatorMatrix,
    LcmParams,
    QMatrix,
    ResponseData,
)
from .estimator import EmConfig, FitResult, e_step
from .recovery import PartialOrderDag, RecoveryResult
from .simulate import GroundTruth

SCHEMA_VERSION = 1
MISSING = "NA"


class DataFormatError(HierCdmError, ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.path = path
        self.line = line


def _fmt(x) -> str:
    if x is None:
        return MISSING
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_responses(data: ResponseData, path) -> None:
    """N rows of 0/1/NA under an ``item_1..item_J`` header."""
    vals = data.values
    obs = data.mask if data.mask is not None else None
    header = [f"item_{j + 1}" for j in range(data.n_items)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(data.n_subjects):
            if obs is None:
                cells = [str(int(v)) for v in vals[i]]
            else:
                cells = [str(int(v)) if o else MISSING for v, o in zip(vals[i], obs[i])]
            fh.write(",".join(cells) + "\n")


def read_responses(path) -> ResponseData:
    """Parse a response CSV; NA cells become masked entries."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot open responses: {exc.strerror}", path) from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty file", path, 1) from None
        n_items = len(header)
        if n_items == 0 or any(not h.strip() for h in header):
            raise DataFormatError("header has empty column names", path, 1)
        values, mask = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_items:
                raise DataFormatError(f"expected {n_items} fields, found {len(row)}", path, line_no)
            v_row, m_row = [], []
            for cell in row:
                cell = cell.strip()
                if cell == MISSING:
                    v_row.append(0)
                    m_row.append(0)
                elif cell in ("0", "1"):
                    v_row.append(int(cell))
                    m_row.append(1)
                else:
                    raise DataFormatError(f"invalid response {cell!r}", path, line_no)
            values.append(v_row)
            mask.append(m_row)
    if not values:
        raise DataFormatError("no response rows", path)
    m = np.asarray(mask, dtype=np.int8)
    try:
        return ResponseData(np.asarray(values, dtype=np.int8), None if m.all() else m)
    except ValueError as exc:
        raise DataFormatError(str(exc), path) from exc


def dumps_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_json(obj))


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"cannot open: {exc.strerror}", path) from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"invalid JSON: {exc.msg}", path, exc.lineno) from exc


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def edges_to_list(h: Hierarchy) -> list[list[int]]:
    return [[a + 1, b + 1] for a, b in h.sorted_edges()]


def hierarchy_from_dict(d: dict) -> Hierarchy:
    return Hierarchy(int(d["n_attributes"]), frozenset((a - 1, b - 1) for a, b in d["edges"]))


def profiles_from_bits(bits: list[str], n_attributes: int) -> AttributeProfileSet:
    rows = np.array([[int(c) for c in s] for s in bits], dtype=np.int8).reshape(len(bits), n_attributes)
    return AttributeProfileSet(n_attributes, rows)


def config_to_dict(config: EmConfig) -> dict:
    from dataclasses import asdict

    return asdict(config)


def truth_to_dict(truth: GroundTruth, extra: dict | None = None) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "q": truth.q.entries,
        "profiles": truth.profiles.bitstrings(),
        "hierarchy": {"n_attributes": truth.hierarchy.n_attributes,
                      "edges": edges_to_list(truth.hierarchy)},
        "theta": truth.theta,
        "proportions": truth.proportions,
        "item_models": list(truth.item_models),
        "memberships": None if truth.memberships is None else truth.memberships,
    }
    if extra:
        out.update(extra)
    return out


def truth_from_dict(d: dict) -> GroundTruth:
    h = hierarchy_from_dict(d["hierarchy"])
    mem = d.get("memberships")
    return GroundTruth(
        q=QMatrix(np.asarray(d["q"], dtype=np.int8)),
        profiles=profiles_from_bits(d["profiles"], h.n_attributes),
        proportions=np.asarray(d["proportions"], dtype=np.float64),
        theta=np.asarray(d["theta"], dtype=np.float64),
        item_models=tuple(d["item_models"]),
        hierarchy=h,
        memberships=None if mem is None else np.asarray(mem, dtype=np.int64),
    )


def _params_dict(p: LcmParams) -> dict:
    return {"proportions": p.proportions, "theta": p.item_params}


def _params_from(d: dict) -> LcmParams:
    return LcmParams(np.asarray(d["proportions"], dtype=np.float64),
                     np.asarray(d["theta"], dtype=np.float64))


def fit_to_dict(res: FitResult, bic_value: float | None = None, extra: dict | None = None) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "config": config_to_dict(res.config),
        "params": _params_dict(res.params),
        "raw_params": None if res.raw_params is None else _params_dict(res.raw_params),
        "m_hat": res.n_selected,
        "loglik": res.loglik,
        "bic": bic_value,
        "converged": res.converged,
        "iterations": res.iterations,
        "objective_trace": res.objective_trace,
        "loglik_trace": res.loglik_trace,
        "gap_trace": res.gap_trace,
    }
    if extra:
        out.update(extra)
    return out


def fit_from_dict(d: dict, data: ResponseData | None = None) -> FitResult:
    """Rebuild a FitResult; the posterior is recomputed when ``data`` is given."""
    params = _params_from(d["params"])
    raw = d.get("raw_params")
    config = EmConfig(**d["config"])
    post = e_step(data, params) if data is not None else None
    return FitResult(
        params=params,
        posterior=post,
        objective_trace=list(d["objective_trace"]),
        loglik_trace=list(d["loglik_trace"]),
        loglik=float(d["loglik"]),
        n_selected=int(d["m_hat"]),
        converged=bool(d["converged"]),
        iterations=int(d["iterations"]),
        config=config,
        raw_params=None if raw is None else _params_from(raw),
        gap_trace=list(d.get("gap_trace", [])),
    )


def write_posterior(res: FitResult, path) -> None:
    m = res.posterior.values.shape[1]
    write_csv(path, [f"class_{k + 1}" for k in range(m)], res.posterior.values.tolist())


def recovery_to_dict(rec: RecoveryResult, extra: dict | None = None) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "k_hat": rec.k_hat,
        "classes": [int(c) + 1 for c in rec.classes],
        "gamma": rec.gamma.entries,
        "partial_order": rec.dag.adjacency,
        "profiles": rec.profiles.bitstrings(),
        "hierarchy": {"n_attributes": rec.hierarchy.n_attributes,
                      "edges": edges_to_list(rec.hierarchy)},
        "q": ",".join(f"a{k + 1}" for k in range(rec.k_hat)) + "\n" + "".join(
            ",".join(str(int(v)) for v in row) + "\n" for row in rec.q.entries),
        "empty_items": [j + 1 for j in rec.empty_items],
        "antichain_items": [j + 1 for j in rec.antichain_items],
        "degenerate": rec.degenerate,
    }
    if extra:
        out.update(extra)
    return out


def _parse_q_block(text: str, k: int) -> np.ndarray:
    lines = [ln for ln in text.splitlines()[1:] if ln.strip() or k == 0]
    if k == 0:
        return np.zeros((len(lines), 0), dtype=np.int8)
    return np.array([[int(c) for c in ln.split(",")] for ln in lines], dtype=np.int8)


def recovery_from_dict(d: dict) -> RecoveryResult:
    k = int(d["k_hat"])
    gamma = IndicatorMatrix(np.asarray(d["gamma"], dtype=np.int8))
    q = np.zeros((gamma.shape[0], 0), dtype=np.int8) if k == 0 else _parse_q_block(d["q"], k)
    return RecoveryResult(
        gamma=gamma,
        dag=PartialOrderDag(np.asarray(d["partial_order"], dtype=np.int8)),
        profiles=profiles_from_bits(d["profiles"], k),
        hierarchy=hierarchy_from_dict(d["hierarchy"]),
        q=QMatrix(q, allow_empty_rows=True),
        k_hat=k,
        classes=np.asarray(d["classes"], dtype=np.int64) - 1,
        empty_items=[j - 1 for j in d.get("empty_items", [])],
        antichain_items=[j - 1 for j in d.get("antichain_items", [])],
    )


def hierarchy_to_dot(h: Hierarchy, name: str = "hierarchy") -> str:
    lines = [f"digraph {name} {{"]
    for k in range(h.n_attributes):
        lines.append(f'  a{k + 1} [label="{k + 1}"];')
    for a, b in h.sorted_edges():
        lines.append(f"  a{a + 1} -> a{b + 1};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def ensure_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataFormatError(f"cannot create output directory: {exc.strerror}", p) from exc
    if not os.access(p, os.W_OK):
        raise DataFormatError("output directory is not writable", p)
    return p
