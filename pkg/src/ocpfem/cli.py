"""Command-line front end.

Usage::

    ocpfem COMMAND [--config FILE] [--key value ...]

``COMMAND`` is one of ``solve``, ``study``, ``lod-study``, ``check-theorems``
and ``dump-mesh``.  Configuration files hold one ``key = value`` pair per line
with ``#`` comments; flags use the same keys and override the file.  Exit
codes: 0 success, 1 solver failure (or failed check), 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .errors import ConfigError, ConvergenceError, OcpFemError
from .fem import CoefficientSet
from .mesh import unit_square_mesh

log = logging.getLogger(__name__)

COMMANDS = ("solve", "study", "lod-study", "check-theorems", "dump-mesh")
CONTROL_RULES = ("same", "h-squared", "variational")
OUTPUT_KEYS = ("output", "json", "fields", "basis_output")


@dataclass(frozen=True)
class RunConfig:
    command: str = "study"
    gamma: float = 1.0
    bound: float = 0.5
    coefficient: str = "identity"
    contrast: float = 100.0
    period: float = 2.0**-5
    schedule: tuple = (8, 16, 32, 64)
    control: Union[str, int] = "same"
    n: int = 16
    coarse_n: tuple = (4, 8, 16)
    fine_n: int = 128
    layers: Optional[int] = None
    c_loc: float = 1.0
    tol: float = 1e-10
    max_iter: int = 50
    seed: int = 42
    threads: Optional[int] = None
    output: Optional[str] = None
    json: Optional[str] = None
    fields: Optional[str] = None
    basis_output: Optional[str] = None

    def header(self) -> dict:
        """Resolved configuration as embedded in outputs (output paths excluded)."""
        d = dataclasses.asdict(self)
        for k in OUTPUT_KEYS:
            d.pop(k)
        return {k: _show(v) for k, v in d.items()}

    def coefficients(self) -> CoefficientSet:
        if self.coefficient == "checkerboard":
            return CoefficientSet.checkerboard(self.contrast, self.period)
        return CoefficientSet.identity()


def _show(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if v is None:
        return "auto"
    return str(v)


# --------------------------------------------------------------------------
# parsing


def _float(lo=None, hi=None, lo_open=True, hi_open=False):
    def conv(key, s):
        try:
            v = float(s)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {s!r}") from None
        lo_ok = lo is None or (v > lo if lo_open else v >= lo)
        hi_ok = hi is None or (v < hi if hi_open else v <= hi)
        if not (math.isfinite(v) and lo_ok and hi_ok):
            left = "(" if lo_open else "["
            right = ")" if hi_open or hi is None else "]"
            rng = f"{left}{_num(lo, '-inf')},{_num(hi, 'inf')}{right}"
            raise ConfigError(f"{key} must be in {rng}, got {s}")
        return v
    return conv


def _num(v, default):
    if v is None:
        return default
    return f"{v:g}"


def _int(lo=1, allow_auto=False):
    def conv(key, s):
        if allow_auto and s == "auto":
            return None
        try:
            v = int(s)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {s!r}") from None
        if v < lo:
            raise ConfigError(f"{key} must be an integer >= {lo}, got {s}")
        return v
    return conv


def _schedule(key, s):
    try:
        v = tuple(int(x) for x in s.replace(" ", "").split(",") if x)
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {s!r}") from None
    if not v or v[0] < 1 or any(b <= a for a, b in zip(v, v[1:])):
        raise ConfigError(f"{key} must be a strictly increasing list of positive integers, got {s}")
    return v


def _choice(*options):
    def conv(key, s):
        if s not in options:
            raise ConfigError(f"{key} must be one of {{{', '.join(options)}}}, got {s!r}")
        return s
    return conv


def _control(key, s):
    if s in CONTROL_RULES:
        return s
    try:
        v = int(s)
    except ValueError:
        v = 0
    if v < 1:
        raise ConfigError(f"{key} must be one of {{same, h-squared, variational}} or a positive integer, got {s!r}")
    return v


def _path(key, s):
    return s


def _command(key, s):
    return _choice(*COMMANDS)(key, s)


CONVERTERS = {
    "command": _command,
    "gamma": _float(0.0, 1.0),
    "bound": _float(0.0),
    "coefficient": _choice("identity", "checkerboard"),
    "contrast": _float(0.0),
    "period": _float(0.0, 1.0),
    "schedule": _schedule,
    "control": _control,
    "n": _int(1),
    "coarse_n": _schedule,
    "fine_n": _int(1),
    "layers": _int(1, allow_auto=True),
    "c_loc": _float(0.0),
    "tol": _float(0.0, 1.0, hi_open=True),
    "max_iter": _int(1),
    "seed": _int(0),
    "threads": _int(1, allow_auto=True),
    "output": _path,
    "json": _path,
    "fields": _path,
    "basis_output": _path,
}


def _canonical(key: str) -> str:
    k = key.strip().lower().replace("-", "_")
    if k == "rho":
        k = "control"
    if k not in CONVERTERS:
        raise ConfigError(f"unknown key {key!r}")
    return k


def parse_pairs(text: str) -> dict:
    """``key = value`` lines with ``#`` comments; later keys override earlier ones."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        out[_canonical(key)] = value
    return out


def parse_config(text: str = "", flags: Optional[dict] = None) -> RunConfig:
    """Validated :class:`RunConfig` from config text overridden by ``flags``."""
    raw = parse_pairs(text or "")
    for k, v in (flags or {}).items():
        raw[_canonical(k)] = str(v)
    values = {k: CONVERTERS[k](k, v) for k, v in raw.items()}
    cfg = RunConfig(**values)
    if cfg.command == "lod-study":
        bad = [n for n in cfg.coarse_n if cfg.fine_n % n]
        if bad:
            raise ConfigError(f"fine_n={cfg.fine_n} must be a multiple of every coarse_n (not {bad})")
    return cfg


def _flag_pairs(rest: Sequence[str]) -> dict:
    out = {}
    it = iter(rest)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            try:
                value = next(it)
            except StopIteration:
                raise ConfigError(f"flag --{key} needs a value") from None
        out[key] = value
    return out


def config_from_argv(argv: Sequence[str]) -> RunConfig:
    parser = argparse.ArgumentParser(prog="ocpfem", add_help=True)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="key=value configuration file")
    ns, rest = parser.parse_known_args(list(argv))
    text = ""
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
    flags = _flag_pairs(rest)
    flags["command"] = ns.command
    return parse_config(text, flags)


# --------------------------------------------------------------------------
# commands


class _Writer:
    """Funnels all file and console output through one place."""

    def __init__(self, out=None):
        self.out = out or sys.stdout

    def echo(self, msg: str = "") -> None:
        print(msg, file=self.out)

    def write(self, path: Optional[str], text: str) -> None:
        if path is None:
            return
        d = os.path.dirname(path)
        if d:
            os.makedirs(d, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)

    def write_csv(self, path: str, header: dict, columns: Sequence[str], rows) -> None:
        d = os.path.dirname(path)
        if d:
            os.makedirs(d, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for k, v in header.items():
                fh.write(f"# {k} = {v}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            w.writerows(rows)


def _cmd_solve(cfg: RunConfig, out: _Writer) -> int:
    from .ocp import solve_ocp
    from .verify import manufacture_m1

    mp = manufacture_m1(cfg.gamma, cfg.bound, coeff=cfg.coefficients())
    m = unit_square_mesh(cfg.n)
    if cfg.control == "variational":
        cm = "variational"
    else:
        from .verify import control_sizes

        nc = control_sizes([cfg.n], cfg.control)[0]
        cm = m if nc == cfg.n else unit_square_mesh(nc)
    sol = solve_ocp(mp.prob, m, cm, max_iter=cfg.max_iter, tol=cfg.tol)
    summary = {"config": cfg.header(), **sol.summary()}
    out.echo(json.dumps(sol.summary(), indent=2, sort_keys=True))
    out.write(cfg.json, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if cfg.fields:
        hdr = cfg.header()
        for name, fld in (("state", sol.y), ("adjoint", sol.p)):
            rows = [(i, f"{x:.17g}", f"{y:.17g}", f"{v:.17g}")
                    for i, ((x, y), v) in enumerate(zip(m.vertices, fld.values))]
            out.write_csv(os.path.join(cfg.fields, f"{name}.csv"), hdr,
                          ("vertex_index", "x", "y", "value"), rows)
        pts = sol.control_space.points
        rows = [(i, f"{x:.17g}", f"{y:.17g}", f"{v:.17g}")
                for i, ((x, y), v) in enumerate(zip(pts, sol.u.values))]
        out.write_csv(os.path.join(cfg.fields, "control.csv"), hdr,
                      ("point_index", "x", "y", "value"), rows)
    return 0


def _run_table(cfg: RunConfig):
    from .verify import manufacture_m1, run_study

    mp = manufacture_m1(cfg.gamma, cfg.bound, coeff=cfg.coefficients())
    if cfg.control == "variational":
        mode, rule = "variational", "same"
    else:
        mode, rule = "p0-control", cfg.control
    return run_study(mp, mode, cfg.schedule, rule, tol=cfg.tol, max_iter=cfg.max_iter,
                     seed=cfg.seed)


def _report_failures(table, out: _Writer) -> None:
    for lv in table.levels:
        if lv.failed:
            out.echo(f"level n={lv.n} failed: {lv.message}")
            out.echo("residual history: " + " ".join(f"{r:.3e}" for r in lv.residual_history))


def _cmd_study(cfg: RunConfig, out: _Writer) -> int:
    table = _run_table(cfg)
    hdr = cfg.header()
    csv_text = table.to_csv(hdr)
    out.write(cfg.output, csv_text)
    out.write(cfg.json, table.to_json(hdr) + "\n")
    if cfg.output is None:
        out.echo(csv_text.rstrip())
    out.echo("fitted rates: " + ", ".join(f"{k}={v:.3f}" for k, v in table.rates.items()))
    _report_failures(table, out)
    return 1 if table.failed else 0


def _cmd_check(cfg: RunConfig, out: _Writer) -> int:
    from .verify import discrete_coincidence, run_study

    table = _run_table(cfg)
    _report_failures(table, out)
    if table.failed:
        return 1
    hdr = cfg.header()
    out.write(cfg.output, table.to_csv(hdr))
    mp, _ = discrete_coincidence(8, cfg.gamma)
    deg = run_study(mp, "variational", [8], tol=1e-13, seed=cfg.seed).levels[0]
    checks = {
        "thm41_spread<=5": table.spreads["thm41"] <= 5,
        "thm43_spread<=5": table.spreads["thm43"] <= 5,
        "tight_spread<=5": table.spreads["tight"] <= 5,
        "stability_violations==0": table.stability_violations == 0,
        "kkt_invariants": table.kkt_ok,
        "apriori_bound": table.apriori_ok,
        "coincidence_thm41": deg.thm41_lhs <= 1e-8 and deg.thm41_rhs <= 1e-8,
        "coincidence_thm43": deg.thm43_lhs <= 1e-8 and deg.thm43_rhs <= 1e-8,
    }
    for k, v in table.spreads.items():
        out.echo(f"{k} ratio max/median = {v:.4f}")
    for k, ok in checks.items():
        out.echo(f"{'PASS' if ok else 'FAIL'} {k}")
    out.write(cfg.json, json.dumps({"config": hdr, "checks": checks, **table.summary()},
                                   indent=2, sort_keys=True, default=float) + "\n")
    return 0 if all(checks.values()) else 1


def _cmd_lod(cfg: RunConfig, out: _Writer) -> int:
    from .multiscale import build_lod
    from .verify import lod_ocp_study, lod_source_study, manufacture_m1

    coeff = CoefficientSet.checkerboard(cfg.contrast, cfg.period)
    kw = dict(layers=cfg.layers, c_loc=cfg.c_loc, threads=cfg.threads)
    src = lod_source_study(coeff, cfg.coarse_n, cfg.fine_n, **kw)
    half = lod_source_study(CoefficientSet.checkerboard(cfg.contrast, cfg.period / 2),
                            cfg.coarse_n, cfg.fine_n, **kw)
    mp = manufacture_m1(cfg.gamma, cfg.bound, coeff=coeff)
    ocp = lod_ocp_study(mp.prob, cfg.coarse_n, cfg.fine_n, tol=cfg.tol, max_iter=cfg.max_iter, **kw)
    hdr = cfg.header()
    csv_text = src.to_csv(hdr) + ocp.to_csv()
    out.write(cfg.output, csv_text)
    if cfg.output is None:
        out.echo(csv_text.rstrip())
    summary = {
        "config": hdr,
        "source": src.summary(),
        "source_half_period": half.summary(),
        "ocp": ocp.summary(),
    }
    out.write(cfg.json, json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")
    out.echo(f"source energy rate {src.rate('err_a'):.3f} (half period {half.rate('err_a'):.3f}), "
             f"L2 rate {src.rate('err_l2'):.3f}; control L2 rate {ocp.rate('err_u_l2'):.3f}")
    if cfg.basis_output:
        space = build_lod(unit_square_mesh(cfg.coarse_n[0]), unit_square_mesh(cfg.fine_n), coeff, **kw)
        fine = space.fine_mesh
        B = space.basis.toarray()
        cols = ["vertex_index", "x", "y"] + [f"psi_{z}" for z in space.coarse_dofs]
        rows = [[i, f"{x:.17g}", f"{y:.17g}"] + [f"{v:.17g}" for v in B[i]]
                for i, (x, y) in enumerate(fine.vertices)]
        out.write_csv(cfg.basis_output, hdr, cols, rows)
    return 0


def _cmd_dump_mesh(cfg: RunConfig, out: _Writer) -> int:
    text = unit_square_mesh(cfg.n).to_text()
    if cfg.output:
        out.write(cfg.output, text)
    else:
        out.out.write(text)
    return 0


HANDLERS = {
    "solve": _cmd_solve,
    "study": _cmd_study,
    "lod-study": _cmd_lod,
    "check-theorems": _cmd_check,
    "dump-mesh": _cmd_dump_mesh,
}


def main(config: Union[RunConfig, Sequence[str], None] = None, out=None) -> int:
    """Run a command; ``config`` is a :class:`RunConfig` or an argv list."""
    writer = _Writer(out)
    try:
        cfg = config if isinstance(config, RunConfig) else config_from_argv(
            sys.argv[1:] if config is None else config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    if cfg.threads is not None:
        os.environ["OCPFEM_THREADS"] = str(cfg.threads)
    try:
        return HANDLERS[cfg.command](cfg, writer)
    except ConvergenceError as exc:
        writer.echo(f"solver failure: {exc}")
        if exc.history:
            writer.echo("residual history: " + " ".join(f"{r:.3e}" for r in exc.history))
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OcpFemError as exc:
        writer.echo(f"error: {exc}")
        return 1


def entry_point() -> None:
    logging.basicConfig(level=os.environ.get("OCPFEM_LOG", "WARNING"))
    sys.exit(main())
