"""Chain, mask and distribution documents.

Chains are JSON::

    {"orientation": "column", "states": ["t1", "a1"],
     "transitions": [{"from": "t1", "to": "t1", "p": 0.5}, ...]}

or Matrix Market coordinate files with a sidecar ``.labels`` file (one label
per line). ``from``/``to`` name the move itself, so the transition list
means the same in either orientation; the orientation only decides how a
dense ``"matrix"`` field (an alternative to ``"transitions"``) and Matrix
Market entries are read: ``column`` stores ``T[to, from]``, ``row`` stores
``P[from, to]``. A Matrix Market file is row-oriented when a comment line
reads ``% orientation: row``.

Floats are written with ``repr`` precision, so serialize and parse are
exact inverses on canonical documents.
"""

from __future__ import annotations

import json
import json.scanner
import math
import os
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import errors
from .chain import (DEFAULT_TOL, DistributionVector, StateClassification,
                    StochasticChain, classify_states, make_distribution,
                    point_mass, validate_chain)
from . import masks as _m

ORIENTATIONS = ("column", "row")
MTX_SUFFIXES = (".mtx", ".mm")


# ---------------------------------------------------------------------------
# JSON with source positions
# ---------------------------------------------------------------------------

class _Source:
    """Parsed JSON that can map an object back to its line on demand."""

    def __init__(self, text: str, doc: Any, path=None):
        self.text, self.doc, self.path = text, doc, path
        self._lines: dict[int, int] | None = None
        self._keep: list = []

    def _index(self):
        # second pass with the pure-Python scanner, only when reporting errors
        starts: dict[int, int] = {}
        keep = self._keep
        decoder = json.JSONDecoder()
        base = decoder.parse_object

        def parse_object(s_and_end, *args):
            obj, end = base(s_and_end, *args)
            starts[id(obj)] = s_and_end[1] - 1
            keep.append(obj)
            return obj, end

        decoder.parse_object = parse_object
        decoder.scan_once = json.scanner.py_make_scanner(decoder)
        doc = decoder.decode(self.text)
        text = self.text
        self._lines = {}
        self._shadow = doc
        for k, pos in starts.items():
            self._lines[k] = text.count("\n", 0, pos) + 1

    def line_of(self, *path) -> int | None:
        if self.text is None:
            return None
        if self._lines is None:
            self._index()
        node = self._shadow
        line = self._lines.get(id(node))
        try:
            for key in path:
                node = node[key]
                line = self._lines.get(id(node), line)
        except (KeyError, IndexError, TypeError):
            pass
        return line

    def error(self, message: str, field: str, *path) -> errors.SchemaError:
        return errors.SchemaError(message, field=field, line=self.line_of(*path),
                                  path=self.path)


def _load(source, what: str) -> _Source:
    if isinstance(source, Mapping):
        return _Source(None, source)
    path = os.fspath(source)
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise errors.SchemaError(f"{what} file not found", path=path) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise errors.SchemaError(exc.msg, line=exc.lineno, path=path) from None
    if not isinstance(doc, dict):
        raise errors.SchemaError(f"{what} document must be a JSON object",
                                 line=1, path=path)
    return _Source(text, doc, path)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _dump(doc: Mapping) -> str:
    return json.dumps(doc, indent=1) + "\n"


def write_json(doc: Mapping, path) -> None:
    Path(path).write_text(_dump(doc))


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------

def _states(src: _Source) -> list[str]:
    states = src.doc.get("states")
    if not isinstance(states, list) or not states:
        raise src.error("must be a nonempty list of names", "states")
    for k, s in enumerate(states):
        if not isinstance(s, str):
            raise src.error("state names must be strings", f"states[{k}]")
    if len(set(states)) != len(states):
        raise src.error("state names must be distinct", "states")
    return states


def _resolver(states: list[str]) -> Callable[[Any], int | None]:
    index = {s: k for k, s in enumerate(states)}
    n = len(states)

    def resolve(ref):
        if isinstance(ref, str):
            return index.get(ref)
        if isinstance(ref, int) and not isinstance(ref, bool) and 0 <= ref < n:
            return ref
        return None

    return resolve


def _probability(src: _Source, value, field: str, *path) -> float:
    if not _is_number(value) or not math.isfinite(value):
        raise src.error(f"probability must be a number, got {value!r}", field, *path)
    if not 0.0 <= value <= 1.0:
        raise src.error(f"probability {value!r} outside [0, 1]", field, *path)
    return float(value)


def chain_from_document(doc, tol: float = DEFAULT_TOL) -> StochasticChain:
    src = doc if isinstance(doc, _Source) else _load(doc, "chain")
    d = src.doc
    orientation = d.get("orientation", "column")
    if orientation not in ORIENTATIONS:
        raise src.error(f"must be one of {ORIENTATIONS}", "orientation")
    states = _states(src)
    n = len(states)
    if ("transitions" in d) == ("matrix" in d):
        raise src.error("give exactly one of 'transitions' and 'matrix'",
                        "transitions")
    if "matrix" in d:
        rows = d["matrix"]
        if (not isinstance(rows, list) or len(rows) != n
                or any(not isinstance(r, list) or len(r) != n for r in rows)):
            raise src.error(f"must be an {n} x {n} list of rows", "matrix")
        for i, r in enumerate(rows):
            for j, v in enumerate(r):
                _probability(src, v, f"matrix[{i}][{j}]", "matrix")
        M = np.array(rows, dtype=float)
        T = M if orientation == "column" else M.T
        return validate_chain(T, states, tol=tol)

    trans = d["transitions"]
    if not isinstance(trans, list):
        raise src.error("must be a list", "transitions")
    resolve = _resolver(states)
    rows, cols, vals, seen = [], [], [], set()
    for k, e in enumerate(trans):
        where = f"transitions[{k}]"
        if not isinstance(e, dict):
            raise src.error("must be an object", where, "transitions", k)
        for key in ("from", "to", "p"):
            if key not in e:
                raise src.error("missing", f"{where}.{key}", "transitions", k)
        j, i = resolve(e["from"]), resolve(e["to"])
        if j is None:
            raise src.error(f"unknown state {e['from']!r}", f"{where}.from",
                            "transitions", k)
        if i is None:
            raise src.error(f"unknown state {e['to']!r}", f"{where}.to",
                            "transitions", k)
        if (i, j) in seen:
            raise src.error("duplicate transition", where, "transitions", k)
        seen.add((i, j))
        rows.append(i)
        cols.append(j)
        vals.append(_probability(src, e["p"], f"{where}.p", "transitions", k))
    T = sp.csc_array((vals, (rows, cols)), shape=(n, n))
    return validate_chain(T, states, tol=tol)


def _read_mtx(path: Path, tol: float) -> StochasticChain:
    orientation = "column"
    with open(path) as fh:
        for line in fh:
            if not line.startswith("%"):
                break
            body = line.lstrip("%").strip().lower().replace(" ", "")
            if body.startswith("orientation:"):
                orientation = body.split(":", 1)[1]
    if orientation not in ORIENTATIONS:
        raise errors.SchemaError(f"orientation must be one of {ORIENTATIONS}",
                                 field="orientation", path=path)
    try:
        M = scipy.io.mmread(path)
    except ValueError as exc:
        raise errors.SchemaError(str(exc), path=path) from None
    M = sp.csc_array(M) if sp.issparse(M) else np.asarray(M, dtype=float)
    if M.shape[0] != M.shape[1]:
        raise errors.NonSquare(f"matrix has shape {M.shape}")
    if orientation == "row":
        M = M.T
    labels = None
    for side in (Path(str(path) + ".labels"), path.with_suffix(".labels")):
        if side.exists():
            labels = [s.strip() for s in side.read_text().splitlines() if s.strip()]
            if len(labels) != M.shape[0]:
                raise errors.SchemaError(
                    f"{len(labels)} labels for {M.shape[0]} states", path=side)
            break
    return validate_chain(M, labels, tol=tol)


def parse_chain(source, tol: float = DEFAULT_TOL) -> StochasticChain:
    """Read a chain from a JSON document, a Matrix Market file or a dict."""
    if not isinstance(source, Mapping):
        path = Path(source)
        if path.suffix.lower() in MTX_SUFFIXES:
            if not path.exists():
                raise errors.SchemaError("chain file not found", path=path)
            return _read_mtx(path, tol)
    return chain_from_document(source, tol)


def chain_to_document(chain: StochasticChain) -> dict:
    """Canonical document: column orientation, column-major transitions."""
    rows, cols, vals = chain.structure
    labels = list(chain.labels)
    return {
        "orientation": "column",
        "states": labels,
        "transitions": [{"from": labels[j], "to": labels[i], "p": float(p)}
                        for i, j, p in zip(rows.tolist(), cols.tolist(),
                                           vals.tolist())],
    }


def serialize_chain(chain: StochasticChain) -> str:
    return _dump(chain_to_document(chain))


def write_chain(chain: StochasticChain, path) -> None:
    """Write JSON, or Matrix Market plus ``.labels`` for ``.mtx`` paths."""
    path = Path(path)
    if path.suffix.lower() in MTX_SUFFIXES:
        rows, cols, vals = chain.structure
        M = sp.coo_matrix((vals, (rows, cols)), shape=(chain.n, chain.n))
        scipy.io.mmwrite(path, M, comment="orientation: column", precision=17)
        Path(str(path) + ".labels").write_text("\n".join(chain.labels) + "\n")
    else:
        path.write_text(serialize_chain(chain))


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------

def parse_distribution(source, chain: StochasticChain | None = None,
                       tol: float = DEFAULT_TOL) -> DistributionVector:
    """``{"distribution": [p0, p1, ...]}`` or ``{"distribution": {label: p}}``.

    The string ``"state:<label>"`` is shorthand for a point mass and, like
    the label-keyed form, needs ``chain``.
    """
    if isinstance(source, str) and source.startswith("state:"):
        if chain is None:
            raise errors.BadDistribution("a chain is needed to resolve labels")
        return point_mass(chain, source[len("state:"):])
    src = _load(source, "distribution")
    values = src.doc.get("distribution")
    n = chain.n if chain is not None else None
    if isinstance(values, dict):
        if chain is None:
            raise src.error("label keys need a chain", "distribution")
        mu = np.zeros(chain.n)
        for label, p in values.items():
            if not _is_number(p):
                raise src.error(f"must be a number, got {p!r}",
                                f"distribution.{label}", "distribution")
            mu[chain.index(label)] += p
        values = mu
    elif isinstance(values, list):
        for k, p in enumerate(values):
            if not _is_number(p):
                raise src.error(f"must be a number, got {p!r}",
                                f"distribution[{k}]", "distribution")
    else:
        raise src.error("must be a list or an object", "distribution")
    return make_distribution(values, n, tol)


def distribution_to_document(mu) -> dict:
    mu = mu.mu if isinstance(mu, DistributionVector) else np.asarray(mu, float)
    return {"distribution": [float(x) for x in mu]}


def serialize_distribution(mu) -> str:
    return _dump(distribution_to_document(mu))


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

def _arg(args: Mapping, key: str, kind: str, default=...):
    if key in args:
        return args[key]
    if default is ...:
        raise errors.SchemaError(f"'{kind}' needs argument '{key}'",
                                 field=f"args.{key}")
    return default


def _pairs(chain, entries, field, weight_key=None):
    out = []
    for k, e in enumerate(entries):
        if not isinstance(e, dict) or "from" not in e or "to" not in e:
            raise errors.SchemaError("need 'from' and 'to'", field=f"{field}[{k}]")
        item = (chain.index(e["from"]), chain.index(e["to"]))
        if weight_key is not None:
            if not _is_number(e.get(weight_key)):
                raise errors.SchemaError("must be a number",
                                         field=f"{field}[{k}].{weight_key}")
            item += (float(e[weight_key]),)
        out.append(item)
    return out


def _build_steps(chain, cl, args):
    return _m.mask_steps_to_absorption(cl)


def _build_absorption(chain, cl, args):
    if "state" in args:
        return _m.mask_absorption_probability(
            cl, cl.ergodic_class_of(chain.index(args["state"])))
    return _m.mask_absorption_probability(cl, _arg(args, "class", "absorption_probability"))


def _build_arrivals(chain, cl, args):
    return _m.mask_arrivals(cl, _arg(args, "state", "arrivals"))


def _build_departures(chain, cl, args):
    return _m.mask_departures(cl, _arg(args, "state", "departures"))


def _build_distance(chain, cl, args):
    entries = _pairs(chain, _arg(args, "distances", "distance"), "args.distances", "d")
    return _m.mask_distance(chain, cl, {(a, b): d for a, b, d in entries})


def _build_transition_set(chain, cl, args):
    pairs = _pairs(chain, _arg(args, "transitions", "transition_set"),
                   "args.transitions")
    w = args.get("w", 1.0)
    if not _is_number(w):
        raise errors.SchemaError("must be a number", field="args.w")
    return _m.mask_transition_set(chain.n, weight=float(w), transitions=pairs)


def _build_loop(chain, cl, args):
    return _m.mask_steady_state_loop(cl, _arg(args, "state", "steady_state_loop"))


def _build_lead_2p(chain, cl, args):
    return _m.mask_lead_changes_2p(cl, int(_arg(args, "n0", "lead_changes_2p")),
                                   args.get("ordering"))


def _build_lead_p(chain, cl, args):
    return _m.mask_lead_changes_p(cl, int(_arg(args, "n0", "lead_changes_p")),
                                  int(_arg(args, "p", "lead_changes_p")),
                                  args.get("variant", "leader-passing"),
                                  args.get("ordering"))


def _build_chutes(chain, cl, args):
    from .chutes import BoardSpec, build_chutes_chain, standard_board
    board = BoardSpec.from_dict(args["board"]) if "board" in args else standard_board()
    model = build_chutes_chain(board, int(args.get("players", 1)))
    if model.chain.token != chain.token:
        raise errors.ChainMismatch("chutes mask was built for a different chain")
    event = _arg(args, "event", "chutes")
    if event not in model.masks:
        raise errors.SchemaError(f"unknown event {event!r}; choose from "
                                 f"{sorted(model.masks)}", field="args.event")
    return model.masks[event]


MASK_BUILDERS: dict[str, Callable] = {
    "steps_to_absorption": _build_steps,
    "absorption_probability": _build_absorption,
    "arrivals": _build_arrivals,
    "departures": _build_departures,
    "distance": _build_distance,
    "transition_set": _build_transition_set,
    "steady_state_loop": _build_loop,
    "lead_changes_2p": _build_lead_2p,
    "lead_changes_p": _build_lead_p,
    "chutes": _build_chutes,
}


def parse_mask(source, chain: StochasticChain,
               classification: StateClassification | None = None) -> _m.Mask:
    """Read ``{"kind": name, "args": {...}}`` or ``{"explicit": [...]}``.

    Builder names are the keys of :data:`MASK_BUILDERS`. The resulting mask
    keeps its document in ``meta["document"]`` for re-serialization.
    """
    src = _load(source, "mask")
    d = src.doc
    if ("kind" in d) == ("explicit" in d):
        raise src.error("give exactly one of 'kind' and 'explicit'", "kind")
    if "explicit" in d:
        entries = d["explicit"]
        if not isinstance(entries, list):
            raise src.error("must be a list", "explicit")
        triples = []
        resolve = _resolver(list(chain.labels))
        for k, e in enumerate(entries):
            where = f"explicit[{k}]"
            if not isinstance(e, dict) or not {"from", "to", "w"} <= e.keys():
                raise src.error("need 'from', 'to' and 'w'", where, "explicit", k)
            j, i = resolve(e["from"]), resolve(e["to"])
            if j is None or i is None:
                bad = e["from"] if j is None else e["to"]
                raise src.error(f"unknown state {bad!r}", where, "explicit", k)
            if not _is_number(e["w"]) or not math.isfinite(e["w"]):
                raise src.error(f"weight must be a finite number, got {e['w']!r}",
                                f"{where}.w", "explicit", k)
            triples.append((j, i, float(e["w"])))
        mask = _m.mask_explicit(triples, chain.n)
    else:
        kind = d["kind"]
        if kind not in MASK_BUILDERS:
            raise src.error(f"unknown builder {kind!r}; choose from "
                            f"{sorted(MASK_BUILDERS)}", "kind")
        args = d.get("args", {})
        if not isinstance(args, dict):
            raise src.error("must be an object", "args")
        cl = classification or classify_states(chain)
        try:
            mask = MASK_BUILDERS[kind](chain, cl, args)
        except errors.SchemaError as exc:
            raise src.error(str(exc), exc.field or "args", "args") from None
    meta = dict(mask.meta)
    meta["document"] = dict(d)
    return _m.Mask(mask.kind, mask.n, matrix=mask.matrix, fn=mask.fn,
                   time_average_only=mask.time_average_only,
                   chain_token=mask.chain_token or chain.token, meta=meta)


def mask_to_document(mask: _m.Mask, chain: StochasticChain) -> dict:
    """The originating document, or an explicit listing of the weights.

    Lazy masks without a document are listed at the structural nonzeros of
    ``chain``; explicit masks list their own nonzeros.
    """
    if "document" in mask.meta:
        return dict(mask.meta["document"])
    labels = chain.labels
    if mask.is_explicit:
        M = sp.coo_array(mask.matrix) if sp.issparse(mask.matrix) else sp.coo_array(
            np.asarray(mask.matrix))
        order = np.lexsort((M.row, M.col))
        rows, cols, w = M.row[order], M.col[order], M.data[order]
    else:
        rows, cols, _ = chain.structure
        w = mask.on(chain)
    keep = w != 0
    return {"explicit": [{"from": labels[j], "to": labels[i], "w": float(x)}
                         for i, j, x in zip(rows[keep].tolist(),
                                            cols[keep].tolist(),
                                            w[keep].tolist())]}


def serialize_mask(mask: _m.Mask, chain: StochasticChain) -> str:
    return _dump(mask_to_document(mask, chain))
