"""Experiment configuration, seeding and reproducible orchestration.

A configuration is one JSON object.  Obstacle parameters sit at the top
level, everything else in sections::

    {
      "rho": 2.0, "r0": 0.1, "r1": 0.2, "f": 2.0,
      "seed": 0, "workers": 1, "out": "out",
      "kinetics":     {"epsilon": 1.0, "tau": 0.0},
      "sim":          {"t_max": null, "t_max_rho": 15.0, "h_ballistic": null,
                       "h_ballistic_sqrt_rho": 3.0, "dx": null, "dt": null,
                       "tol_v": 0.0, "pinned_confirm_steps": 200,
                       "slope_max": 10.0, "chunk_steps": 500},
      "bisection":    {"F_lo": null, "F_hi": null, "tol_F": 0.005,
                       "max_iter": 60, "doubling_cap": 8, "warm_start": false},
      "sweep":        {"densities": [0.5, 1, 2, 4, 8], "n_seeds": 12, "n_boot": 1000},
      "field":        {"width": null, "width_sqrt_rho": 24.0},
      "simulate":     {"force": 0.5, "snapshot_stride": 0},
      "certificates": {"p_c_upper": 0.9375, "j_max": 32, "lower_tol": 1e-4}
    }

``null`` entries are derived per density: ``t_max = t_max_rho / rho``,
``h_ballistic = h_ballistic_sqrt_rho / sqrt(rho)``, ``width =
width_sqrt_rho / sqrt(rho)``, ``dx = min(r0/4, 0.05/sqrt(rho))`` and
``dt = 0.2 * epsilon * dx^2``.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from . import certificates as cert
from .depinning import (
    BisectionConfig,
    BracketError,
    CellResult,
    ScalingStudy,
    certificate_sandwich,
    estimate_critical,
    scaling_sweep,
    summarize,
)
from .front_dynamics import (
    FrontState,
    KineticRelation,
    SimConfig,
    SnapshotWriter,
    default_dt,
    default_dx,
    run,
)
from .obstacle_field import ObstacleField, ObstacleParams

logger = logging.getLogger(__name__)

TOOL = f"depin {__version__}"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


_NUM = (int, float)
_OPT_NUM = (int, float, type(None))

SCHEMA: dict[str, Any] = {
    "rho": (_NUM, 1.0),
    "r0": (_NUM, 0.1),
    "r1": (_NUM, 0.2),
    "f": (_NUM, 2.0),
    "seed": (int, 0),
    "workers": (int, 1),
    "out": (str, "out"),
    "kinetics": {
        "epsilon": (_NUM, 1.0),
        "tau": (_NUM, 0.0),
    },
    "sim": {
        "t_max": (_OPT_NUM, None),
        "t_max_rho": (_NUM, 15.0),
        "h_ballistic": (_OPT_NUM, None),
        "h_ballistic_sqrt_rho": (_NUM, 3.0),
        "dx": (_OPT_NUM, None),
        "dt": (_OPT_NUM, None),
        "tol_v": (_NUM, 0.0),
        "pinned_confirm_steps": (int, 200),
        "slope_max": (_NUM, 10.0),
        "chunk_steps": (int, 500),
    },
    "bisection": {
        "F_lo": (_OPT_NUM, None),
        "F_hi": (_OPT_NUM, None),
        "tol_F": (_NUM, 5e-3),
        "max_iter": (int, 60),
        "doubling_cap": (int, 8),
        "warm_start": (bool, False),
    },
    "sweep": {
        "densities": (list, [0.5, 1.0, 2.0, 4.0, 8.0]),
        "n_seeds": (int, 12),
        "n_boot": (int, 1000),
    },
    "field": {
        "width": (_OPT_NUM, None),
        "width_sqrt_rho": (_NUM, 24.0),
    },
    "simulate": {
        "force": (_NUM, 0.5),
        "snapshot_stride": (int, 0),
    },
    "certificates": {
        "p_c_upper": (_NUM, 0.9375),
        "j_max": (int, 32),
        "lower_tol": (_NUM, 1e-4),
    },
}

# keys that change how a run is executed but never what it computes
_NON_SEMANTIC = ("out", "workers")


def _defaults(schema: dict) -> dict:
    out = {}
    for k, v in schema.items():
        out[k] = _defaults(v) if isinstance(v, dict) else copy.deepcopy(v[1])
    return out


def _merge(base: dict, data: dict, schema: dict, path: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    for k, v in data.items():
        kp = f"{path}.{k}" if path else k
        if k not in schema:
            raise ConfigError(f"{kp}: unknown key")
        entry = schema[k]
        if isinstance(entry, dict):
            _merge(base[k], v, entry, kp)
            continue
        types = entry[0]
        # bool is an int subclass; keep the two apart
        if isinstance(v, bool) and types is not bool and not (isinstance(types, tuple) and bool in types):
            raise ConfigError(f"{kp}: expected {_type_name(types)}, got {v!r}")
        if not isinstance(v, types):
            raise ConfigError(f"{kp}: expected {_type_name(types)}, got {v!r}")
        base[k] = v


def _type_name(types) -> str:
    ts = types if isinstance(types, tuple) else (types,)
    names = sorted({"number" if t in (int, float) else "null" if t is type(None) else t.__name__
                    for t in ts})
    return " or ".join(names)


def _get(d: dict, dotted: str):
    for part in dotted.split("."):
        d = d[part]
    return d


def _set(d: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    for part in parts[:-1]:
        d = d[part]
    d[parts[-1]] = value


@dataclass
class ExperimentConfig:
    """Validated configuration with every default filled in."""

    data: dict
    provenance: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return _get(self.data, key)

    @property
    def semantic(self) -> dict:
        return {k: v for k, v in self.data.items() if k not in _NON_SEMANTIC}

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.semantic, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def params(self, rho: Optional[float] = None, seed: Optional[int] = None) -> ObstacleParams:
        d = self.data
        return ObstacleParams(rho=float(d["rho"] if rho is None else rho), r0=float(d["r0"]),
                              r1=float(d["r1"]), f=float(d["f"]),
                              seed=int(d["seed"] if seed is None else seed))

    def kinetics(self) -> KineticRelation:
        k = self.data["kinetics"]
        return KineticRelation(float(k["epsilon"]), float(k["tau"]))

    def width(self, rho: float) -> float:
        fd = self.data["field"]
        return float(fd["width"]) if fd["width"] is not None else fd["width_sqrt_rho"] / math.sqrt(rho)

    def grid(self, rho: float) -> tuple[float, float]:
        """Effective ``(dx, dt)`` at density ``rho``; dx divides the window."""
        s = self.data["sim"]
        dx0 = s["dx"] if s["dx"] is not None else default_dx(rho, self.data["r0"])
        dx = FrontState.flat(self.width(rho), dx0).dx
        dt = s["dt"] if s["dt"] is not None else default_dt(dx, self.data["kinetics"]["epsilon"])
        return dx, float(dt)

    def simconfig(self, rho: float) -> SimConfig:
        s = self.data["sim"]
        dx, dt = self.grid(rho)
        t_max = s["t_max"] if s["t_max"] is not None else s["t_max_rho"] / rho
        h_b = s["h_ballistic"] if s["h_ballistic"] is not None else s["h_ballistic_sqrt_rho"] / math.sqrt(rho)
        return SimConfig(dt=dt, t_max=float(t_max), h_ballistic=float(h_b),
                         pinned_confirm_steps=int(s["pinned_confirm_steps"]), tol_v=float(s["tol_v"]),
                         slope_max=float(s["slope_max"]), chunk_steps=int(s["chunk_steps"]))

    def bisection(self) -> BisectionConfig:
        b = self.data["bisection"]
        return BisectionConfig(b["F_lo"], b["F_hi"], float(b["tol_F"]), int(b["max_iter"]),
                               int(b["doubling_cap"]), bool(b["warm_start"]))

    def field(self, rho: Optional[float] = None, seed: Optional[int] = None) -> ObstacleField:
        p = self.params(rho, seed)
        return ObstacleField(p, width=self.width(p.rho))


def _validate(cfg: ExperimentConfig) -> None:
    d = cfg.data
    if not d["r1"] > d["r0"]:
        raise ConfigError(f"r1 ({d['r1']}) must exceed r0 ({d['r0']})")
    try:
        cfg.params()
        cfg.kinetics()
        cfg.bisection()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    dens = d["sweep"]["densities"]
    if not dens or not all(isinstance(x, _NUM) and not isinstance(x, bool) and x > 0 for x in dens):
        raise ConfigError("sweep.densities: expected a non-empty list of positive numbers")
    checks = [
        ("sweep.n_seeds", d["sweep"]["n_seeds"] >= 1),
        ("sweep.n_boot", d["sweep"]["n_boot"] >= 1),
        ("workers", d["workers"] >= 1),
        ("seed", d["seed"] >= 0),
        ("sim.t_max_rho", d["sim"]["t_max_rho"] > 0),
        ("sim.h_ballistic_sqrt_rho", d["sim"]["h_ballistic_sqrt_rho"] > 0),
        ("sim.tol_v", d["sim"]["tol_v"] >= 0),
        ("sim.pinned_confirm_steps", d["sim"]["pinned_confirm_steps"] >= 1),
        ("sim.chunk_steps", d["sim"]["chunk_steps"] >= 1),
        ("simulate.snapshot_stride", d["simulate"]["snapshot_stride"] >= 0),
        ("field.width_sqrt_rho", d["field"]["width_sqrt_rho"] > 0),
        ("certificates.p_c_upper", 0 < d["certificates"]["p_c_upper"] < 1),
        ("certificates.j_max", d["certificates"]["j_max"] >= 1),
    ]
    for key in ("sim.t_max", "sim.h_ballistic", "sim.dx", "sim.dt", "field.width"):
        v = _get(d, key)
        checks.append((key, v is None or v > 0))
    for key, ok in checks:
        if not ok:
            raise ConfigError(f"{key}: invalid value {_get(d, key)!r}")
    for rho in dens:
        dx, dt = cfg.grid(float(rho))
        try:
            SimConfig(dt=dt, t_max=1.0, h_ballistic=1.0).check_cfl(dx, d["kinetics"]["epsilon"])
        except ValueError as exc:
            raise ConfigError(f"sim.dt: {exc}") from None


def parse_config(source=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Build a validated config from a JSON path, a dict or nothing, plus dotted overrides.

    Overrides win over file values; each one is recorded in ``provenance``.
    """
    data = _defaults(SCHEMA)
    origin = "defaults"
    if source is not None:
        if isinstance(source, dict):
            raw, origin = source, "dict"
        else:
            origin = str(source)
            try:
                raw = json.loads(Path(source).read_text(encoding="utf-8"))
            except OSError as exc:
                raise ConfigError(f"cannot read config {source}: {exc}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{source}: invalid JSON ({exc})") from None
        _merge(data, raw, SCHEMA, "")
    prov: dict = {"source": origin, "overrides": {}}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        try:
            before = _get(data, key)
        except (KeyError, TypeError):
            raise ConfigError(f"{key}: unknown key") from None
        patch: dict = {}
        _set_nested(patch, key, value)
        _merge(data, patch, SCHEMA, "")
        if key.split(".")[0] not in _NON_SEMANTIC:
            prov["overrides"][key] = {"was": before, "now": value}
    cfg = ExperimentConfig(data, prov)
    _validate(cfg)
    return cfg


def _set_nested(d: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    for part in parts[:-1]:
        d = d.setdefault(part, {})
    d[parts[-1]] = value


# --------------------------------------------------------------------------
# Seeding


def cell_seed(master: int, rho_index: int, seed_index: int) -> int:
    """64-bit seed of one sweep cell: BLAKE2b-64 of ``"master:rho_index:seed_index"``."""
    msg = f"{int(master)}:{int(rho_index)}:{int(seed_index)}".encode("ascii")
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little")


# --------------------------------------------------------------------------
# Output helpers


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(str(x) for x in v)
    return str(v)


def file_header(cfg: ExperimentConfig, seed: Optional[int] = None) -> dict:
    return {"tool": TOOL, "config_hash": cfg.config_hash,
            "seed": cfg["seed"] if seed is None else seed}


def write_csv(path, header_row: list, rows: list, meta: dict) -> None:
    """CSV with ``# key=value`` comment lines, a header row and minimal RFC 4180 quoting."""
    buf = io.StringIO()
    for k in sorted(meta):
        buf.write(f"# {k}={meta[k]}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header_row)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def read_csv(path) -> tuple[dict, list[dict]]:
    meta: dict = {}
    lines = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
        else:
            lines.append(line)
    return meta, list(csv.DictReader(lines))


def write_json(path, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n",
                          encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


# --------------------------------------------------------------------------
# Cells and parallel maps


def estimate_cell(cfg: ExperimentConfig, rho: float, rho_index: int, seed_index: int) -> CellResult:
    """Critical-force estimate for one (density, seed) cell; failures become records."""
    seed = cell_seed(cfg["seed"], rho_index, seed_index)
    fld = cfg.field(rho, seed)
    dx, _ = cfg.grid(rho)
    try:
        est = estimate_critical(fld, cfg.kinetics(), cfg.simconfig(rho), cfg.bisection(), dx=dx)
    except (BracketError, FloatingPointError) as exc:
        return CellResult(rho, rho_index, seed_index, seed, error=str(exc))
    return CellResult.from_estimate(rho, rho_index, seed_index, seed, est)


class _Pool:
    """``map`` over a process pool that preserves input order."""

    def __init__(self, workers: int):
        self.workers = workers
        self._ex = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None

    def __call__(self, fn, items):
        items = list(items)
        if self._ex is None:
            return list(map(fn, items))
        return list(self._ex.map(fn, items, chunksize=1))

    def close(self) -> None:
        if self._ex is not None:
            self._ex.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def run_scaling(cfg: ExperimentConfig, estimator=None) -> ScalingStudy:
    sw = cfg["sweep"]
    estimator = estimator or partial(estimate_cell, cfg)
    with _Pool(cfg["workers"]) as pool:
        return scaling_sweep([float(r) for r in sw["densities"]], int(sw["n_seeds"]), estimator,
                             tau=cfg.kinetics().tau, mapper=pool, r1=cfg["r1"],
                             n_boot=int(sw["n_boot"]), boot_seed=int(cfg["seed"]))


STUDY_COLUMNS = ["rho", "seed", "F_crit", "bracket_lo", "bracket_hi", "undecided_count",
                 "rho_index", "seed_index", "flags", "error"]


def study_rows(study: ScalingStudy) -> list:
    rows = []
    for r in study.rows:
        for c in r.cells:
            rows.append([c.rho, c.seed, c.F_crit, c.bracket_lo, c.bracket_hi, c.undecided_count,
                         c.rho_index, c.seed_index, c.flags, c.error])
    return rows


def load_study_cells(path) -> tuple[dict, list[CellResult]]:
    meta, recs = read_csv(path)
    cells = []
    for r in recs:
        num = lambda k: float(r[k]) if r[k] != "" else None  # noqa: E731
        cells.append(CellResult(float(r["rho"]), int(r["rho_index"]), int(r["seed_index"]),
                                int(r["seed"]), num("F_crit"), num("bracket_lo"), num("bracket_hi"),
                                int(r["undecided_count"]),
                                [f for f in r["flags"].split(";") if f], r["error"] or None))
    return meta, cells


def emit_report(study: ScalingStudy, sandwich: Optional[list] = None) -> tuple[dict, list]:
    """Summary dict and plot rows ``(log_rho, log_gap, fit_line)``."""
    if not study.rows:
        raise ValueError("empty study")
    table = [{"rho": r.rho, "mean_gap": r.mean_gap, "stderr": r.stderr, "n_ok": r.n_ok,
              "n": len(r.cells), "excluded": r.excluded} for r in study.rows]
    summary: dict = {
        "tau": study.tau,
        "fit": None,
        "fit_reason": study.fit_reason,
        "per_density": table,
        "excluded": [{"rho": r.rho, "reason": r.reason} for r in study.rows if r.excluded],
    }
    if study.fit is not None:
        summary["fit"] = {"slope": study.fit.slope, "intercept": study.fit.intercept,
                          "ci": list(study.fit.ci), "n_boot": study.fit.n_boot}
    if sandwich is not None:
        attempted = [s for s in sandwich if s.get("holds") is not None]
        passes = sum(1 for s in attempted if s["holds"])
        summary["sandwich"] = {"passes": passes, "attempts": len(attempted),
                               "pass_rate": passes / len(attempted) if attempted else None}
    plot = []
    for r in study.included:
        lx = math.log(r.rho)
        line = study.fit.intercept + study.fit.slope * lx if study.fit is not None else None
        plot.append([lx, math.log(r.mean_gap), line])
    return summary, plot


# --------------------------------------------------------------------------
# Subcommands


def cmd_field_gen(cfg: ExperimentConfig, out: Path) -> list[Path]:
    fld = cfg.field()
    simc = cfg.simconfig(fld.params.rho)
    fld.ensure_band(-fld.params.r1, simc.h_ballistic)
    path = out / "field.jsonl"
    fld.dump(path, extra_header=file_header(cfg, fld.params.seed))
    return [path]


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> list[Path]:
    fld = cfg.field()
    rho = fld.params.rho
    simc = cfg.simconfig(rho)
    dx, _ = cfg.grid(rho)
    force = float(cfg["simulate.force"])
    stride = int(cfg["simulate.snapshot_stride"])
    paths = [out / "outcome.json"]
    head = file_header(cfg, fld.params.seed)
    fh = None
    try:
        writer = None
        if stride > 0:
            paths.append(out / "trajectory.csv")
            fh = open(paths[-1], "w", encoding="utf-8", newline="")
            n = FrontState.flat(fld.width, dx).n
            writer = SnapshotWriter(fh, n, stride, comment="\n".join(f"{k}={head[k]}" for k in sorted(head)))
        res = run(fld, cfg.kinetics(), force, simc, dx=dx, snapshots=writer)
    finally:
        if fh is not None:
            fh.close()
    rec = {"header": head, "force": force, "dt": simc.dt, "dx": dx, **res.to_record()}
    if writer is not None:
        rec["frames"] = writer.frames
    write_json(paths[0], rec)
    return paths


def cmd_critical(cfg: ExperimentConfig, out: Path) -> list[Path]:
    fld = cfg.field()
    rho = fld.params.rho
    dx, _ = cfg.grid(rho)
    est = estimate_critical(fld, cfg.kinetics(), cfg.simconfig(rho), cfg.bisection(), dx=dx)
    path = out / "critical.json"
    write_json(path, {"header": file_header(cfg, fld.params.seed), "F_crit": est.F_crit,
                      "bracket": list(est.bracket), "undecided_count": est.undecided_count,
                      "flags": est.flags, "probes": [vars(p) for p in est.probes]})
    return [path]


def cmd_scaling(cfg: ExperimentConfig, out: Path, estimator=None) -> list[Path]:
    study = run_scaling(cfg, estimator)
    head = file_header(cfg)
    csv_path = out / "study.csv"
    write_csv(csv_path, STUDY_COLUMNS, study_rows(study), head)
    summary, _ = emit_report(study)
    js = out / "summary.json"
    write_json(js, {"header": head, "config": cfg.semantic, "provenance": cfg.provenance, **summary})
    return [csv_path, js]


def cmd_certify_lower(cfg: ExperimentConfig, out: Path) -> list[Path]:
    fld = cfg.field()
    c = cert.best_lower_certificate(fld, cfg.kinetics(), tol=float(cfg["certificates.lower_tol"]),
                                    j_max=int(cfg["certificates.j_max"]))
    rec = c.to_dict() if c is not None else {"type": "lower", "F_certified": None}
    path = out / "lower.jsonl"
    cert.write_certificates(path, [rec], file_header(cfg, fld.params.seed))
    return [path]


def cmd_certify_upper(cfg: ExperimentConfig, out: Path) -> list[Path]:
    fld = cfg.field()
    kin = cfg.kinetics()
    simc = cfg.simconfig(fld.params.rho)
    c = cert.best_upper_certificate(fld, kin.tau, height=simc.h_ballistic)
    recs = []
    if c is None:
        recs.append({"type": "upper", "F_ub": None})
    else:
        # evolve at a force just above the certified threshold
        F = c.F_ub + 0.05 * (c.F_ub - kin.tau)
        v0 = 0.5 * (F - kin.tau - 2.0 / c.h) / kin.epsilon
        ev = cert.construct_path_evolution(c, F, v0=v0, kinetics=kin)
        c.v0 = ev.v0
        rec = c.to_dict()
        rec["evolution"] = {"F": F, "min_margin": ev.min_margin, "by_kind": ev.min_margin_by_kind,
                            "n_samples": ev.n_samples, "kappa_handover": ev.kappa_handover,
                            "n_stages": len(ev.stages)}
        recs.append(rec)
    path = out / "upper.jsonl"
    cert.write_certificates(path, recs, file_header(cfg, fld.params.seed))
    return [path]


def sandwich_cell(cfg: ExperimentConfig, rho: float, seed_index: int) -> dict:
    seed = cell_seed(cfg["seed"], 0, seed_index)
    fld = cfg.field(rho, seed)
    dx, _ = cfg.grid(rho)
    rep = certificate_sandwich(fld, cfg.kinetics(), cfg.simconfig(rho), cfg.bisection(),
                               lower_tol=float(cfg["certificates.lower_tol"]), dx=dx)
    rec = rep.to_record()
    rec["seed_index"] = seed_index
    return rec


def cmd_sandwich(cfg: ExperimentConfig, out: Path) -> list[Path]:
    rho = float(cfg["rho"])
    n = int(cfg["sweep.n_seeds"])
    with _Pool(cfg["workers"]) as pool:
        recs = pool(partial(sandwich_cell, cfg, rho), range(n))
    recs.sort(key=lambda r: r["seed_index"])
    head = file_header(cfg)
    cols = ["seed_index", "seed", "F_lb", "F_hat", "F_ub", "lower_trivial", "holds", "one_sided", "error"]
    csv_path = out / "sandwich.csv"
    write_csv(csv_path, cols, [[r[c] for c in cols] for r in recs], head)
    attempted = [r for r in recs if r["holds"] is not None]
    passes = sum(1 for r in attempted if r["holds"])
    js = out / "sandwich.json"
    write_json(js, {"header": head, "rho": rho, "passes": passes, "attempts": len(attempted),
                    "pass_rate": passes / len(attempted) if attempted else None, "records": recs})
    return [csv_path, js]


def cmd_report(cfg: ExperimentConfig, out: Path) -> list[Path]:
    src = out / "study.csv"
    if not src.exists():
        raise FileNotFoundError(f"{src} not found; run `scaling` first")
    meta, cells = load_study_cells(src)
    study = summarize(cells, cfg.kinetics().tau, int(cfg["sweep.n_boot"]), int(cfg["seed"]))
    sandwich = None
    sw = out / "sandwich.json"
    if sw.exists():
        sandwich = json.loads(sw.read_text(encoding="utf-8"))["records"]
    summary, plot = emit_report(study, sandwich)
    head = file_header(cfg)
    head["study_config_hash"] = meta.get("config_hash")
    js = out / "report.json"
    write_json(js, {"header": head, **summary})
    pc = out / "plot_data.csv"
    write_csv(pc, ["log_rho", "log_gap", "fit_line"], plot, head)
    return [js, pc]


COMMANDS = {
    "field-gen": cmd_field_gen,
    "simulate": cmd_simulate,
    "critical": cmd_critical,
    "scaling": cmd_scaling,
    "certify-lower": cmd_certify_lower,
    "certify-upper": cmd_certify_upper,
    "sandwich": cmd_sandwich,
    "report": cmd_report,
}


def run_experiment(cmd: str, cfg: ExperimentConfig) -> list[Path]:
    """Run one subcommand; returns the written paths (all inside ``cfg['out']``)."""
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}")
    out = Path(cfg["out"])
    os.makedirs(out, exist_ok=True)
    logger.info("%s: config %s -> %s", cmd, cfg.config_hash, out)
    return COMMANDS[cmd](cfg, out)
