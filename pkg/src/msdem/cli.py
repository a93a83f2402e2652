"""Command line entry point: ``msdem run|convergence|validate-config|dump-scenario``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .config import RunConfig
from .coupling import run_msdem
from .errors import ConfigurationError, MsdemError
from .harness import (ConcField, cached_truth, concentration_field, convergence_rate, l2_error,
                      run_full_dem)

log = logging.getLogger("msdem")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

FLOE_COLUMNS = ("r", "x", "y", "theta", "vx", "vy", "omega")


def fmt(v) -> str:
    """Shortest round-trip float text, so reruns give identical bytes."""
    return repr(float(v))


def _tag(t: float) -> str:
    return f"{t:.6f}".rstrip("0").rstrip(".").replace(".", "p")


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else fmt(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def write_field_csv(path: Path, fields: dict):
    conc = fields["conc"]
    nx, ny = conc.shape
    rows = ((i, j, float(conc[i, j]), float(fields["px"][i, j]), float(fields["py"][i, j]),
             float(fields["pw"][i, j])) for i in range(nx) for j in range(ny))
    write_csv(path, ("i", "j", "conc", "px", "py", "pw"), rows)


def write_floe_csv(path: Path, floes: dict):
    n = len(floes["r"])
    theta = floes.get("theta", np.zeros(n))
    cols = [floes["r"], floes["x"], floes["y"], theta, floes["vx"], floes["vy"], floes["omega"]]
    rows = ((k, *(float(c[k]) for c in cols)) for k in range(n))
    write_csv(path, ("id",) + FLOE_COLUMNS, rows)


def _dem_fields(floes: dict, grid, rho_ice: float) -> dict:
    area = grid.cell_area
    x, y = grid.wrap(floes["x"], floes["y"])
    i, j = grid.cells_of_points(x, y)
    m = rho_ice * np.pi * floes["r"] ** 2
    out = {"conc": concentration_field(floes, grid).values}
    for name, w in (("px", m * floes["vx"]), ("py", m * floes["vy"]),
                    ("pw", m * floes["r"] ** 2 * floes["omega"])):
        acc = np.zeros(grid.shape)
        np.add.at(acc, (i, j), w)
        out[name] = acc / area
    return out


def manifest(cfg: RunConfig, command: str, **extra) -> dict:
    return {
        "command": command,
        "version": __version__,
        "backend": BACKEND,
        "config": cfg.to_dict(),
        "workers": cfg.resolved_workers(),
        **extra,
    }


def _dump_json(path: Path, data: dict):
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# --- commands ---------------------------------------------------------------

def cmd_run(cfg: RunConfig) -> int:
    cfg.validate()
    spec, params = cfg.spec(), cfg.params()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    requested = cfg.snapshot_times()
    coarse = cfg.coarse_times() if (cfg.dump_fields or cfg.dump_floes) else []
    field_times = sorted(set(requested) | (set(coarse) if cfg.dump_fields else set()))
    floe_times = sorted(set(requested) | set(coarse)) if cfg.dump_floes else []
    started = time.time()
    if cfg.model == "msdem":
        grid = cfg.coarse_grid()
        res = run_msdem(spec, grid, cfg.schedule(), params, times=field_times,
                        workers=cfg.resolved_workers(), strict=cfg.strict,
                        semi_implicit=cfg.semi_implicit, r_min=cfg.r_min, conc_max=cfg.conc_max,
                        floe_times=floe_times)
        fields = res.fields
    else:
        grid = cfg.coarse_grid()
        res = run_full_dem(spec, cfg.T, params, cfg.dt, times=sorted(set(field_times) | set(floe_times)),
                           strict=cfg.strict, semi_implicit=cfg.semi_implicit)
        fields = {t: _dem_fields(res.floes[t], grid, params.rho_ice) for t in field_times}
    files = []
    for t in field_times:
        name = f"fields_t{_tag(t)}.csv"
        write_field_csv(out / name, fields[t])
        files.append(name)
    for t in floe_times:
        name = f"floes_t{_tag(t)}.csv"
        write_floe_csv(out / name, res.floes[t])
        files.append(name)
    _dump_json(out / "manifest.json", manifest(
        cfg, "run", model=cfg.model, scenario=spec.to_dict(), params=params.to_dict(),
        schedule=cfg.schedule().to_dict(), grid=grid.to_dict(), times=field_times,
        outputs=files, meta=res.meta,
        max_abs_omega={fmt(t): v for t, v in res.max_abs_omega.items()},
        diagnostics=res.diagnostics,
        timings={"started_unix": started, **res.timings}))
    print(f"wrote {len(files)} file(s) and manifest.json to {out}")
    return EXIT_OK


def cmd_convergence(cfg: RunConfig) -> int:
    cfg.validate(convergence=True)
    spec, params = cfg.spec(), cfg.params()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    times = [t for t in cfg.snapshot_times() if t > 0]
    started = time.time()
    truth = None
    if cfg.reference == "dem":
        truth = cached_truth(spec, cfg.T, params, cfg.dt, times=times, cache_dir=cfg.cache_dir,
                             semi_implicit=cfg.semi_implicit)
    rows, errors, timings = [], {t: [] for t in times}, {}
    for g in cfg.grids:
        grid = cfg.coarse_grid(g)
        res = run_msdem(spec, grid, cfg.schedule(), params, times=times,
                        workers=cfg.resolved_workers(), strict=cfg.strict,
                        semi_implicit=cfg.semi_implicit, r_min=cfg.r_min, conc_max=cfg.conc_max)
        timings[g] = res.timings["total_s"]
        for t in times:
            ref = res.conc[t] if truth is None else concentration_field(truth[t], grid).values
            err = l2_error(ConcField(grid, res.conc[t]), ConcField(grid, ref))
            rows.append((spec.id, float(t), float(grid.dX), err))
            errors[t].append((grid.dX, err))
    write_csv(out / "convergence.csv", ("scenario", "T", "dX", "l2_error"), rows)
    slopes = {}
    for t in times:
        try:
            slopes[fmt(t)] = convergence_rate(errors[t])
        except ConfigurationError as exc:
            log.warning("no convergence rate at T=%s: %s", t, exc)
            slopes[fmt(t)] = None
    summary = manifest(cfg, "convergence", scenario=spec.id, grids=list(cfg.grids),
                       slopes=slopes, timings={"started_unix": started, **timings})
    _dump_json(out / "convergence.json", summary)
    for t, s in slopes.items():
        print(f"{spec.id} T={t}: slope " + ("n/a" if s is None else f"{s:.3f}"))
    return EXIT_OK


def cmd_validate(cfg: RunConfig, convergence: bool = False) -> int:
    cfg.validate(convergence=convergence)
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_dump_scenario(cfg: RunConfig) -> int:
    spec = cfg.spec()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_floe_csv(out / f"{spec.id}_floes.csv", spec.floes())
    _dump_json(out / f"{spec.id}.json", spec.to_dict())
    print(f"wrote {spec.nfloes} floes to {out}")
    return EXIT_OK


# --- argument parsing -------------------------------------------------------

def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v]


def _strings(text: str) -> list:
    return [v for v in text.split(",") if v]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="msdem", description="Multiscale particle-continuum sea-ice model.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.add_argument("--scenario", choices=("s41", "s42", "s43", "s44"))
        sp.add_argument("--scale", type=float)
        sp.add_argument("--model", choices=("dem", "msdem"))
        sp.add_argument("--grid")
        sp.add_argument("--grids", type=_strings, help="comma separated, e.g. 12x6,24x12,48x24")
        sp.add_argument("--T", type=float)
        sp.add_argument("--times", type=_floats, help="comma separated snapshot times")
        sp.add_argument("--dt", type=float)
        sp.add_argument("--dT", type=float)
        sp.add_argument("--n-t", dest="n_t", type=int)
        sp.add_argument("--N1", type=int)
        for name in ("rho_ice", "d_o", "rho_o", "E", "G", "mu", "conc_max", "r_min"):
            sp.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
        sp.add_argument("--semi-implicit", dest="semi_implicit", type=_bool)
        sp.add_argument("--strict", type=_bool)
        sp.add_argument("--out")
        sp.add_argument("--dump-fields", dest="dump_fields", action="store_const", const=True,
                        help="write fields at every coarse step")
        sp.add_argument("--dump-floes", dest="dump_floes", action="store_const", const=True,
                        help="write floe states at every coarse step")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--cache-dir", dest="cache_dir")
        sp.add_argument("--reference", choices=("dem", "self"))

    for name, help_ in (("run", "run one model and write fields"),
                        ("convergence", "msDEM error against the full DEM on several grids"),
                        ("validate-config", "check a config and print it resolved"),
                        ("dump-scenario", "write the initial floe lattice")):
        common(sub.add_parser(name, help=help_))
    return p


def config_from_args(args) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    keys = set(RunConfig.keys())
    overrides = {k: v for k, v in vars(args).items() if k in keys}
    return base.merged(overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "convergence":
            return cmd_convergence(cfg)
        if args.command == "validate-config":
            return cmd_validate(cfg)
        return cmd_dump_scenario(cfg)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MsdemError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
