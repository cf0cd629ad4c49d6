"""Command-line driver.

Subcommands ``characterise``, ``simulate``, ``decoy``, ``keyrate`` and
``sweep`` each write one CSV (RFC 4180, 17 significant digits) whose first
line is a comment carrying the format version and the config digest.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Sequence

from .approx_diag import approx_eigendecomposition, model_budget
from .config import ConfigError, RunConfig, load
from .keyrate import KeyRatePoint
from .laser import model_state, q_from_visibility
from .pipeline import decoy_table, keyrate_point
from .protocol import SIGNALS, EventSchema, simulate_statistics

CSV_VERSION = "phasedecoy-csv/1"
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

logger = logging.getLogger("phasedecoy")


class SolverFailure(RuntimeError):
    """A reported quantity could not be certified."""


def fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, float)) or hasattr(x, "__float__"):
        return format(float(x), ".17g")
    return str(x)


def write_csv(rows: Iterable[Sequence], header: Sequence[str], cfg: RunConfig, kind: str, out: str | None) -> None:
    buf = io.StringIO(newline="")
    buf.write(f"# {CSV_VERSION} {kind} config-sha256={cfg.digest()}\r\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    text = buf.getvalue()
    if out:
        Path(out).write_bytes(text.encode())
    else:
        sys.stdout.write(text)


# -- subcommands -----------------------------------------------------------------------


def cmd_characterise(cfg: RunConfig) -> tuple[list[str], list[list]]:
    header = ["visibility", "model", "q"]
    if cfg.q:
        return header, [["", label, q] for label, q in cfg.q_values()]
    return header, [[v, m, q_from_visibility(v, m)] for v in cfg.visibility for m in cfg.models]


def _distances(cfg: RunConfig, distance: float | None) -> tuple:
    return cfg.distances if distance is None else (float(distance),)


def cmd_simulate(cfg: RunConfig, distance: float | None = None) -> tuple[list[str], list[list]]:
    rows = []
    header = None
    for L in _distances(cfg, distance):
        params = cfg.protocol(L)
        stats = simulate_statistics(params)
        header = ["distance_km", "eta", "signal", "intensity", *stats.schema.events, "cross_click"]
        for s in SIGNALS:
            for mu in params.intensities:
                rows.append([L, stats.eta, s, mu, *stats.gamma[(s, mu)], stats.cross_click[(s, mu)]])
    if header is None:
        header = ["distance_km", "eta", "signal", "intensity", *EventSchema().events, "cross_click"]
    return header, rows


def cmd_decoy(cfg: RunConfig, distance: float | None = None) -> tuple[list[str], list[list]]:
    header = ["q", "distance_km", "block", "signal", "event", "lower", "upper", "certified", "rel_gap", "eps_vec"]
    rows = []
    trunc = cfg.truncation
    for _, q in cfg.q_values():
        mu_s = cfg.signal_intensity
        blocks = approx_eigendecomposition(model_state(mu_s, q, trunc.d), model_budget(mu_s, q, trunc.d), trunc.n_blocks)
        eps_vec = {b.index: b.eps_vec for b in blocks}
        for L in _distances(cfg, distance):
            table = decoy_table(cfg.protocol(L), q, blocks, trunc, tol=cfg.tol)
            for (n, s, e), y in sorted(table.intervals.items(), key=lambda kv: (kv[0][0], SIGNALS.index(kv[0][1]), kv[0][2])):
                if not y.certified:
                    logger.warning("uncertified decoy bound replaced by its trivial end (q=%g, L=%g, %d, %s, %s)", q, L, n, s, e)
                rows.append([q, L, n, s, e, y.lower, y.upper, y.certified, y.rel_gap, eps_vec[n]])
    return header, rows


def _point(args: tuple) -> KeyRatePoint:
    cfg, q, L = args
    return keyrate_point(
        cfg.protocol(L), q, cfg.truncation, cfg.f_ec, tol=cfg.tol, fw_max_iter=cfg.fw_max_iter, fw_rel_tol=cfg.fw_rel_tol
    )


def _keyrate_header(cfg: RunConfig) -> list[str]:
    h = ["q_label", "q", "distance_km", "rate", "raw_rate", "delta_leak", "certified", "eps_proj", "decoy_max_rel_gap"]
    for n in range(cfg.blocks):
        h += [f"R_{n}", f"bound_{n}", f"weight_{n}", f"eps_vec_{n}", f"W_block_{n}", f"certified_{n}", f"rel_gap_{n}"]
    intensities = cfg.protocol(0.0).intensities
    h += [f"W_N_{s}_{mu:g}" for s in SIGNALS for mu in intensities]
    return h


def _keyrate_row(label: str, pt: KeyRatePoint, cfg: RunConfig) -> list:
    led = pt.ledger
    row = [label, pt.q, pt.distance, pt.rate, pt.raw_rate, pt.delta_leak, pt.certified and led["decoy_certified"], led["eps_proj"], led["decoy_max_gap"]]
    for b in pt.blocks:
        row += [b.rate, b.bound, b.weight, led["eps_vec"][b.index], led["W_block"][b.index], b.certified, b.rel_gap]
    intensities = cfg.protocol(0.0).intensities
    row += [led["W_N"][(s, mu)] for s in SIGNALS for mu in intensities]
    return row


def cmd_sweep(cfg: RunConfig, distances: Sequence[float] | None = None, jobs: int = 1) -> tuple[list[str], list[list], bool]:
    """All (q, distance) points; returns header, rows and whether every point was certified."""
    distances = cfg.distances if distances is None else distances
    tasks = [(label, q, float(L)) for label, q in cfg.q_values() for L in distances]
    args = [(cfg, q, L) for _, q, L in tasks]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_point, args))
    else:
        points = [_point(a) for a in args]
    rows = [_keyrate_row(label, pt, cfg) for (label, _, _), pt in zip(tasks, points)]
    ok = all(pt.certified for pt in points)
    return _keyrate_header(cfg), rows, ok


def cmd_keyrate(cfg: RunConfig, distance: float | None, jobs: int = 1) -> tuple[list[str], list[list], bool]:
    if distance is None:
        if not cfg.distances:
            raise ConfigError("keyrate needs --distance or a non-empty sweep.distances")
        distance = cfg.distances[0]
    return cmd_sweep(cfg, [float(distance)], jobs)


# -- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phasedecoy", description="Certified key rates for decoy-state QKD with imperfect phase randomisation.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("characterise", "simulate", "decoy", "keyrate", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=str, default=None, help="dotted-key config file")
        sp.add_argument("--out", type=str, default=None, help="CSV output path (default: output.path or stdout)")
        sp.add_argument("--distance", type=float, default=None, help="single distance in km")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for sweep points")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args.config)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if args.distance is not None and args.distance < 0:
            raise ConfigError("--distance must be non-negative")
        out = args.out or cfg.output_path or None
        ok = True
        if args.command == "characterise":
            header, rows = cmd_characterise(cfg)
        elif args.command == "simulate":
            header, rows = cmd_simulate(cfg, args.distance)
        elif args.command == "decoy":
            header, rows = cmd_decoy(cfg, args.distance)
            ok = all(r[7] for r in rows)
        elif args.command == "keyrate":
            header, rows, ok = cmd_keyrate(cfg, args.distance, args.jobs)
        else:
            dists = None if args.distance is None else [args.distance]
            header, rows, ok = cmd_sweep(cfg, dists, args.jobs)
        write_csv(rows, header, cfg, args.command, out)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except (SolverFailure, RuntimeError) as exc:
        logger.error("solver failure: %s", exc)
        return EXIT_SOLVER
    if not ok:
        logger.error("some bounds could not be certified; they are reported at their safe trivial values")
        return EXIT_SOLVER
    return EXIT_OK
