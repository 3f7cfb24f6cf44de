"""Command-line interface: ``markovmask <command> ...``.

Exit status is 0 on success, 2 on invalid input and 3 when a computation
fails numerically.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import errors
from .chain import classify_states, kron_compose
from .chutes import build_chutes_chain, load_board, standard_board
from .diagnostics import condition_bounds, stability_bounds
from .engine import SOLVERS, cesaro_projector, expect, setup, time_average_expect
from .io import (parse_chain, parse_distribution, parse_mask,
                 distribution_to_document, write_chain, write_json)
from .montecarlo import estimate_cumulative, estimate_time_average

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "yes" if x else "no"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return "-"
    return f"{float(x):.6g}"


def _table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [list(headers)] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(r[k]) for r in cells) for k in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _json_value(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def _emit(doc, fmt: str, table: str) -> None:
    if fmt == "json":
        print(json.dumps(doc, indent=1, default=_json_value))
    else:
        print(table)


def _load(args):
    chain = parse_chain(args.chain)
    cl = classify_states(chain)
    for w in cl.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return chain, cl


def _mu(args, chain):
    return parse_distribution(args.mu, chain)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_classify(args) -> int:
    chain, cl = _load(args)
    rows, doc = [], []
    for k, c in enumerate(cl.classes):
        names = [chain.labels[s] for s in c.states]
        kind = "ergodic" if c.ergodic else "transient"
        absorbing = c.ergodic and len(c.states) == 1 and c.states[0] in cl.absorbing_states
        rows.append((k, kind, len(names), absorbing, " ".join(names)))
        doc.append({"class": k, "kind": kind, "absorbing": bool(absorbing),
                    "states": names})
    out = {"n": chain.n, "t": cl.t, "classes": doc,
           "warnings": list(cl.warnings)}
    _emit(out, args.format,
          f"n = {chain.n}, transient = {cl.t}\n"
          + _table(("class", "kind", "size", "absorbing", "states"), rows))
    return EXIT_OK


def cmd_analyze(args) -> int:
    chain, cl = _load(args)
    mu = _mu(args, chain)
    t0 = time.perf_counter()
    cache = setup(chain, cl, mu, solver=args.solver)
    setup_time = time.perf_counter() - t0
    results, rows = [], []
    stab = stability_bounds(chain.n, cl.t, c=args.c, solver=args.solver) \
        if args.diagnostics else None
    for path in args.mask:
        mask = parse_mask(path, chain, cl)
        t1 = time.perf_counter()
        res = expect(cache, mask)
        elapsed = time.perf_counter() - t1
        entry = {"mask": str(path), "kind": res.mask_kind, "value": res.value,
                 "seconds": elapsed}
        row = [str(path), res.value]
        if args.diagnostics:
            cond = condition_bounds(chain, mask, cache, res.value)
            entry["condition"] = cond.to_dict()
            row += [cond.kappa, cond.kappa_T_bound, cond.inv_norm_2]
        results.append(entry)
        rows.append(row)
    doc = {"n": chain.n, "t": cl.t, "solver": args.solver,
           "setup_seconds": setup_time, "residual": cache.residual,
           "results": results}
    headers = ["mask", "expectation"]
    footer = ""
    if args.diagnostics:
        headers += ["kappa", "kappa_T", "||inv||_2"]
        doc["stability"] = stab.to_dict()
        footer = ("\n" + f"backward error: |dT| <= {_fmt(stab.deltaT_bound)}, "
                  f"|dM| <= {_fmt(stab.deltaM_bound)} "
                  f"(c = {_fmt(stab.c)}, applicable: {_fmt(stab.applicable)})")
    if args.format == "json" or args.diagnostics or len(args.mask) > 1:
        _emit(doc, args.format, _table(headers, rows) + footer)
    else:
        print(_fmt(results[0]["value"]))
    return EXIT_OK


def cmd_steady(args) -> int:
    chain, cl = _load(args)
    mu = _mu(args, chain)
    proj = cesaro_projector(chain, cl)
    results, rows = [], []
    for path in args.mask:
        mask = parse_mask(path, chain, cl)
        res = time_average_expect(chain, proj, mu, mask)
        results.append({"mask": str(path), "kind": res.mask_kind, "value": res.value})
        rows.append((str(path), res.value))
    if args.format == "json" or len(rows) > 1:
        _emit({"results": results}, args.format,
              _table(("mask", "time average"), rows))
    else:
        print(_fmt(rows[0][1]))
    return EXIT_OK


def _simulate(args, chain, cl, mu, mask):
    if args.time_average:
        if args.horizon is None:
            raise errors.ValidationError("--time-average needs --horizon")
        return estimate_time_average(chain, mu, mask, args.horizon, args.paths,
                                     args.seed, classification=cl,
                                     threads=args.threads)
    return estimate_cumulative(chain, mu, mask, args.paths, args.seed,
                               args.max_steps, classification=cl,
                               threads=args.threads,
                               allow_truncation=args.allow_truncation)


def cmd_simulate(args) -> int:
    chain, cl = _load(args)
    mu = _mu(args, chain)
    mask = parse_mask(args.mask, chain, cl)
    est = _simulate(args, chain, cl, mu, mask)
    d = est.to_dict()
    print(json.dumps({k: d[k] for k in ("mean", "stderr", "n_paths", "seed",
                                        "truncations")}, indent=1))
    return EXIT_OK


def cmd_compare(args) -> int:
    chain, cl = _load(args)
    mu = _mu(args, chain)
    mask = parse_mask(args.mask, chain, cl)
    if args.time_average:
        exact = time_average_expect(chain, cesaro_projector(chain, cl), mu, mask).value
    else:
        exact = expect(setup(chain, cl, mu), mask).value
    est = _simulate(args, chain, cl, mu, mask)
    z = est.z_score(exact)
    print(json.dumps({"exact": exact, "mean": est.mean, "stderr": est.stderr,
                      "n_paths": est.n_paths, "seed": est.seed,
                      "truncations": est.truncations, "z": _json_value(z)},
                     indent=1, default=_json_value))
    return EXIT_OK


def cmd_kron(args) -> int:
    first, second = parse_chain(args.chain1), parse_chain(args.chain2)
    chain = kron_compose(first, second)
    write_chain(chain, args.output)
    print(f"wrote {chain.n} states, {chain.nnz} transitions to {args.output}")
    return EXIT_OK


def cmd_example(args) -> int:
    board = load_board(args.board) if args.board else standard_board()
    model = build_chutes_chain(board, args.players)
    chain = model.chain
    if args.output:
        out = Path(args.output)
        (out / "masks").mkdir(parents=True, exist_ok=True)
        write_chain(chain, out / "chain.json")
        write_json(distribution_to_document(model.mu), out / "mu.json")
        write_json(board.to_dict(), out / "board.json")
        for name in model.masks:
            doc = {"kind": "chutes",
                   "args": {"event": name, "players": args.players,
                            "board": board.to_dict()}}
            write_json(doc, out / "masks" / f"{name}.json")
        print(f"wrote {chain.n}-state chain and {len(model.masks)} masks to {out}")
    if args.report or not args.output:
        t0 = time.perf_counter()
        cache = setup(chain, model.classification, model.mu)
        setup_time = time.perf_counter() - t0
        rows, results = [], []
        reference = model.reference if board == standard_board() else {}
        for name, mask in model.masks.items():
            t1 = time.perf_counter()
            value = expect(cache, mask).value
            elapsed = time.perf_counter() - t1
            rows.append((name, value, reference.get(name), elapsed))
            results.append({"event": name, "value": value,
                            "reference": reference.get(name), "seconds": elapsed})
        header = (f"board: {board.squares} squares, spinner 1..{board.spinner}, "
                  f"overshoot {board.overshoot}, {len(board.jumps)} jumps; "
                  f"{args.players} player(s), {chain.n} states, "
                  f"setup {setup_time:.3g} s")
        _emit({"board": board.to_dict(), "players": args.players,
               "states": chain.n, "setup_seconds": setup_time,
               "results": results},
              args.format,
              header + "\n" + _table(("event", "expectation", "reference", "seconds"),
                                     rows))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _common(p, masks="+"):
    p.add_argument("chain", help="chain document (.json or .mtx)")
    if masks:
        p.add_argument("mask", nargs=masks, help="mask document(s)")


def _mu_arg(p):
    p.add_argument("--mu", required=True,
                   help="distribution document, or state:<label> for a point mass")


def _format_arg(p):
    p.add_argument("--format", choices=("table", "json"), default="table")


def _sim_args(p):
    _mu_arg(p)
    p.add_argument("--paths", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-average", action="store_true")
    p.add_argument("--horizon", type=int)
    p.add_argument("--max-steps", type=int, help="per-path cap (default 100 n)")
    p.add_argument("--allow-truncation", action="store_true")
    p.add_argument("--threads", type=int,
                   help="worker threads (default: MARKOV_MASK_THREADS or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="markovmask",
        description="Exact expectations of transition events on Markov chains.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="transient and ergodic classes")
    _common(p, masks=None)
    _format_arg(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("analyze", help="cumulative expectations until absorption")
    _common(p)
    _mu_arg(p)
    p.add_argument("--diagnostics", action="store_true",
                   help="condition numbers and backward-error bounds")
    p.add_argument("--solver", choices=SOLVERS, default="householder")
    p.add_argument("--c", type=float, default=12.0,
                   help="constant in the backward-error bound")
    _format_arg(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("steady", help="long-run time averages")
    _common(p)
    _mu_arg(p)
    _format_arg(p)
    p.set_defaults(func=cmd_steady)

    p = sub.add_parser("simulate", help="Monte Carlo estimate")
    _common(p, masks=None)
    p.add_argument("mask")
    _sim_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="exact value against Monte Carlo")
    _common(p, masks=None)
    p.add_argument("mask")
    _sim_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("kron", help="Kronecker product of two chains")
    p.add_argument("chain1")
    p.add_argument("chain2")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_kron)

    p = sub.add_parser("example", help="generate a worked example")
    p.add_argument("name", choices=("chutes",))
    p.add_argument("--players", type=int, choices=(1, 2), default=1)
    p.add_argument("--board", help="board JSON {squares, jumps, spinner, overshoot}")
    p.add_argument("-o", "--output", help="directory for chain, masks and mu")
    p.add_argument("--report", action="store_true",
                   help="print expectations even when writing files")
    _format_arg(p)
    p.set_defaults(func=cmd_example)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except errors.ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except errors.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
