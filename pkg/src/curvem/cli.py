"""Command-line entry points: ``curvem {quadcheck,converge,cornerpoint,selftest}``.

Every subcommand reads an optional TOML configuration file, lets flags
override it, writes its tables atomically into ``--out`` and returns

* 0 when every asserted invariant holds,
* 1 when an invariant fails (the failing names are printed),
* 2 on a configuration error.

Configuration keys (all optional)::

    families = ["curved_top_cube"]   # converge only
    levels = "2..5"                  # inclusive refinement range
    k = [1, 2, 3]
    geo = "both"                     # withGeo | noGeo | both
    quad_degree = 6                  # volume rule degree override
    out = "curvem_out"
    seed = 0
    jobs = 1                         # worker processes for converge
    timing = false                   # write solve times into the CSV
    mesh_files = []                  # extra meshes for selftest
    variant = "curved"               # cornerpoint layers: curved | flat
    kappa = [1.0, 0.01, 1.0]         # cornerpoint layer permeabilities
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import checks, darcy
from .mesh import family_mesh, flatten, gen_layered_cube
from .quadrature import compress_rule, half_annulus_integral, moment_residual, volume_rule_raw

log = logging.getLogger("curvem")

SUBCOMMANDS = ("quadcheck", "converge", "cornerpoint", "selftest")
CONVERGENCE_FAMILIES = ("curved_top_cube", "extruded_annulus_quad", "extruded_annulus_tria")
GEO_MODES = ("withGeo", "noGeo")

#: default refinement ranges (inclusive) per family
DEFAULT_LEVELS = {
    "curved_top_cube": (1, 4),
    "extruded_annulus_quad": (2, 5),
    "extruded_annulus_tria": (2, 5),
    "cornerpoint_layers": (1, 3),
}

#: expected fitted slope and tolerance per (k, geo_mode)
EXPECTED_SLOPES = {
    (1, "withGeo"): (2.0, 0.25),
    (1, "noGeo"): (2.0, 0.25),
    (2, "withGeo"): (3.0, 0.25),
    (2, "noGeo"): (2.0, 0.3),
    (3, "withGeo"): (4.0, 0.35),
    (3, "noGeo"): (2.0, 0.3),
}

#: relative errors of the reference cylinder computation, rows by Gauss degree
CYLINDER_REFERENCE = {
    "cyli1": (1.1263e-03, 3.7429e-06, 6.0654e-08),
    "cyli2": (2.5196e-04, 2.6066e-06, 2.9604e-08),
}
#: half-annulus subdivisions (n_r, n_theta, n_z) of the two cylinder meshes
CYLINDER_MESHES = {"cyli1": (2, 6, 1), "cyli2": (2, 12, 1)}
CYLINDER_EXACT = math.pi * (0.992 / 3 + 0.24)


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 2."""


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    families: tuple[str, ...] = CONVERGENCE_FAMILIES
    levels: tuple[int, int] | None = None
    ks: tuple[int, ...] | None = None
    geo: str = "both"
    quad_degree: int | None = None
    out: str = "curvem_out"
    seed: int = 0
    jobs: int = 1
    timing: bool = False
    mesh_files: tuple[str, ...] = ()
    variant: str = "curved"
    kappa: tuple[float, ...] = (1.0, 0.01, 1.0)

    @property
    def degrees(self) -> tuple[int, ...]:
        """Configured degrees; cornerpoint defaults to k = 2, the rest to 1, 2, 3."""
        if self.ks is not None:
            return self.ks
        return (2,) if self.subcommand == "cornerpoint" else (1, 2, 3)

    @property
    def geo_modes(self) -> tuple[str, ...]:
        return GEO_MODES if self.geo == "both" else (self.geo,)

    def level_range(self, family: str) -> range:
        a, b = self.levels if self.levels is not None else DEFAULT_LEVELS[family]
        return range(a, b + 1)

    def validate(self) -> "RunConfig":
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.subcommand!r}")
        bad = [f for f in self.families if f not in CONVERGENCE_FAMILIES]
        if bad or not self.families:
            raise ConfigError(f"families must be drawn from {CONVERGENCE_FAMILIES}, got {list(self.families)}")
        if self.levels is not None and not (0 <= self.levels[0] <= self.levels[1]):
            raise ConfigError(f"levels must satisfy 0 <= a <= b, got {self.levels}")
        if self.ks is not None and (not self.ks or any(k not in (1, 2, 3) for k in self.ks)):
            raise ConfigError(f"k must be a non-empty subset of 1,2,3, got {list(self.ks)}")
        if self.geo not in GEO_MODES + ("both",):
            raise ConfigError(f"geo must be withGeo, noGeo or both, got {self.geo!r}")
        if self.quad_degree is not None and self.quad_degree < 1:
            raise ConfigError("quad_degree must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.variant not in ("curved", "flat"):
            raise ConfigError(f"variant must be curved or flat, got {self.variant!r}")
        if len(self.kappa) != 3 or any(not (v > 0) for v in self.kappa):
            raise ConfigError("kappa needs three positive layer permeabilities")
        return self

    def to_toml(self) -> str:
        """Canonical text form; :func:`config_from_toml` inverts it."""
        data = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if f.name == "levels":
                v = f"{v[0]}..{v[1]}"
            elif isinstance(v, tuple):
                v = list(v)
            data["k" if f.name == "ks" else f.name] = v
        return tomli_w.dumps(dict(sorted(data.items())))


_KEY_TYPES = {
    "subcommand": str,
    "families": list,
    "levels": (str, list),
    "k": (list, int),
    "geo": str,
    "quad_degree": int,
    "out": str,
    "seed": int,
    "jobs": int,
    "timing": bool,
    "mesh_files": list,
    "variant": str,
    "kappa": list,
}


def parse_levels(text) -> tuple[int, int]:
    """``"a..b"``, ``"a"`` or ``[a, b]`` to an inclusive pair."""
    try:
        if isinstance(text, list):
            a, b = (int(x) for x in text)
        elif ".." in str(text):
            a, b = (int(x) for x in str(text).split(".."))
        else:
            a = b = int(text)
    except (TypeError, ValueError):
        raise ConfigError(f"levels must look like a..b, got {text!r}") from None
    return a, b


def parse_ks(text) -> tuple[int, ...]:
    try:
        if isinstance(text, int):
            return (text,)
        if isinstance(text, list):
            return tuple(int(x) for x in text)
        return tuple(int(x) for x in str(text).split(",") if x.strip())
    except (TypeError, ValueError):
        raise ConfigError(f"k must be a comma separated list of integers, got {text!r}") from None


def _apply(base: dict, data: dict, origin: str) -> None:
    for key, value in data.items():
        if key not in _KEY_TYPES:
            raise ConfigError(f"{origin}: unknown key {key!r}")
        if isinstance(value, bool) and _KEY_TYPES[key] is int:
            raise ConfigError(f"{origin}: {key} must be an integer")
        if not isinstance(value, _KEY_TYPES[key]):
            raise ConfigError(f"{origin}: {key} has the wrong type ({type(value).__name__})")
        if key == "levels":
            base["levels"] = parse_levels(value)
        elif key == "k":
            base["ks"] = parse_ks(value)
        elif key == "kappa":
            try:
                base["kappa"] = tuple(float(x) for x in value)
            except (TypeError, ValueError):
                raise ConfigError(f"{origin}: kappa must be numbers") from None
        elif key in ("families", "mesh_files"):
            base[key] = tuple(str(x) for x in value)
        else:
            base[key] = value


def config_from_toml(text: str, subcommand: str | None = None, origin: str = "config") -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    base: dict = {}
    _apply(base, data, origin)
    if subcommand is not None:
        base["subcommand"] = subcommand
    if "subcommand" not in base:
        raise ConfigError(f"{origin}: no subcommand")
    return RunConfig(**base).validate()


def build_config(args: argparse.Namespace) -> RunConfig:
    base: dict = {"subcommand": args.subcommand}
    if args.config is not None:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
        data.pop("subcommand", None)
        _apply(base, data, str(args.config))
    if args.levels is not None:
        base["levels"] = parse_levels(args.levels)
    if args.k is not None:
        base["ks"] = parse_ks(args.k)
    for key in ("geo", "out", "seed", "jobs", "quad_degree", "variant"):
        value = getattr(args, key)
        if value is not None:
            base[key] = value
    if args.family:
        base["families"] = tuple(args.family)
    if args.mesh_file:
        base["mesh_files"] = tuple(args.mesh_file)
    if args.timing:
        base["timing"] = True
    return RunConfig(**base).validate()


# ----------------------------------------------------------------------
# output helpers
# ----------------------------------------------------------------------


def atomic_write(path: Path, text: str) -> None:
    """Write through a temporary file in the same directory and rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_figure(render, path: Path, *args, **kwargs) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.stem}.tmp{path.suffix}")
    render(*args, path=tmp, **kwargs)
    os.replace(tmp, path)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([darcy.format_value(v) for v in row] for row in rows)
    return buf.getvalue()


def records_csv(records, timing: bool) -> str:
    """Same layout as :func:`darcy.write_csv`, as a string."""
    rows = []
    for r in records:
        row = [getattr(r, c) for c in darcy.CSV_COLUMNS]
        if not timing:
            row[darcy.CSV_COLUMNS.index("solve_seconds")] = ""
        rows.append(row)
    return csv_text(darcy.CSV_COLUMNS, rows)


@dataclass
class Outcome:
    """Asserted invariants of one subcommand run."""

    results: list = field(default_factory=list)

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.results.append((name, bool(ok), detail))

    @property
    def failures(self) -> list[str]:
        return [n for n, ok, _ in self.results if not ok]

    def report(self) -> int:
        for name, ok, detail in self.results:
            print(f"{'PASS' if ok else 'FAIL'} {name}" + (f"  {detail}" if detail else ""))
        if self.failures:
            print(f"{len(self.failures)} invariant(s) failed: {', '.join(self.failures)}")
            return 1
        print(f"all {len(self.results)} invariants hold")
        return 0


# ----------------------------------------------------------------------
# quadcheck
# ----------------------------------------------------------------------


def cylinder_table(degrees=(1, 2, 3)) -> list[dict]:
    """Relative errors of the half-annulus integral of ``sqrt(x^2 + y^2) + z``."""

    def f(x):
        return np.hypot(x[:, 0], x[:, 1]) + x[:, 2]

    def one(x):
        return np.ones(len(x))

    vol = 0.5 * math.pi * (1.0 - 0.2**2)
    rows = []
    for name, (n_r, n_t, n_z) in CYLINDER_MESHES.items():
        for g in degrees:
            val = half_annulus_integral(f, n_r, n_t, n_z, g)
            val1 = half_annulus_integral(one, n_r, n_t, n_z, g)
            rows.append(
                {
                    "gauss_degree": g,
                    "mesh": name,
                    "cells": n_r * n_t * n_z,
                    "relative_error": abs(val - CYLINDER_EXACT) / CYLINDER_EXACT,
                    "reference": CYLINDER_REFERENCE[name][g - 1] if g <= 3 else float("nan"),
                    "constant_error": abs(val1 - vol) / vol,
                }
            )
    return rows


def compression_demo() -> dict:
    mesh = checks.lifted_corner_cube()
    raw = volume_rule_raw(mesh.cell_faces(0), 2)
    geo = mesh.geometry(0)
    comp = compress_rule(raw, 2, geo.barycenter, geo.diameter)
    return {
        "raw_points": len(raw),
        "compressed_points": len(comp),
        "min_weight": float(comp.weights.min()),
        "moment_residual": moment_residual(comp, raw, 2, geo.barycenter, geo.diameter),
    }


def cmd_quadcheck(cfg: RunConfig) -> Outcome:
    out = Path(cfg.out)
    rows = cylinder_table()
    cols = ("gauss_degree", "mesh", "cells", "relative_error", "reference", "constant_error")
    atomic_write(out / "cylinder.csv", csv_text(cols, [[r[c] for c in cols] for r in rows]))
    dat = ["# gauss_degree relative_error reference"]
    for name in CYLINDER_MESHES:
        dat.append(f"# {name}")
        dat += [f"{r['gauss_degree']} {r['relative_error']:.6e} {r['reference']:.6e}" for r in rows if r["mesh"] == name]
        dat += ["", ""]
    atomic_write(out / "cylinder.dat", "\n".join(dat))
    comp = compression_demo()
    ccols = ("raw_points", "compressed_points", "min_weight", "moment_residual")
    atomic_write(out / "compression.csv", csv_text(ccols, [[comp[c] for c in ccols]]))

    res = Outcome()
    for name in CYLINDER_MESHES:
        errs = [r["relative_error"] for r in rows if r["mesh"] == name]
        res.add(f"cylinder.monotone[{name}]", all(a > b for a, b in zip(errs, errs[1:])),
                " > ".join(f"{e:.2e}" for e in errs))
        for r in (r for r in rows if r["mesh"] == name):
            ratio = r["relative_error"] / r["reference"]
            res.add(f"cylinder.magnitude[{name},g={r['gauss_degree']}]", 0.1 <= ratio <= 10.0, f"ratio {ratio:.2f}")
    worst1 = max(r["constant_error"] for r in rows)
    res.add("cylinder.constant_exact", worst1 <= 1e-13, f"{worst1:.1e}")
    res.add(
        "compression",
        comp["raw_points"] == 192 and comp["compressed_points"] == 10 and comp["min_weight"] > 0
        and comp["moment_residual"] <= 1e-12,
        f"{comp['raw_points']} -> {comp['compressed_points']}, residual {comp['moment_residual']:.1e}",
    )
    return res


# ----------------------------------------------------------------------
# converge
# ----------------------------------------------------------------------

PROBLEMS = {
    "curved_top_cube": darcy.example1_problem,
    "extruded_annulus_quad": darcy.example2_problem,
    "extruded_annulus_tria": darcy.example2_problem,
}


def converge_task(task: tuple) -> darcy.RunRecord:
    """One ``(family, level, k, geo_mode)`` solve; failures become flagged rows."""
    family, level, k, mode, quad_degree = task
    try:
        mesh = family_mesh(family, level)
        if mode == "noGeo":
            mesh = flatten(mesh)
        return darcy.convergence_run(mesh, PROBLEMS[family], k, family, level, mode, quad_degree)
    except Exception as exc:  # the run continues with a flagged row
        log.error("%s level %d k=%d %s failed: %s", family, level, k, mode, exc)
        nan = float("nan")
        status = "failed: " + " ".join(str(exc).replace(",", ";").split())
        return darcy.RunRecord(family, level, nan, k, mode, nan, nan, 0, nan, status=status)


def slope_summary(records) -> list[dict]:
    rows = []
    groups: dict = {}
    for r in records:
        groups.setdefault((r.family, r.k, r.geo_mode), []).append(r)
    for (family, k, mode), rs in groups.items():
        ok_rs = sorted((r for r in rs if r.status == "ok"), key=lambda r: r.level)
        target, tol = EXPECTED_SLOPES[(k, mode)]
        for q in ("e_v", "e_p"):
            if len(ok_rs) >= 2:
                slope = darcy.fit_slope([r.h for r in ok_rs], [getattr(r, q) for r in ok_rs])[0]
            else:
                slope = float("nan")
            rows.append(
                {
                    "family": family,
                    "k": k,
                    "geo_mode": mode,
                    "error": q,
                    "levels": len(ok_rs),
                    "slope": slope,
                    "expected": target,
                    "tolerance": tol,
                    "matched": bool(abs(slope - target) <= tol) and len(ok_rs) == len(rs),
                }
            )
    return rows


def coincidence(records, family: str) -> list[tuple[int, float]]:
    """Relative gap between the noGeo velocity errors of k=2 and k=3 per level."""
    e = {(r.k, r.level): r.e_v for r in records if r.family == family and r.geo_mode == "noGeo" and r.status == "ok"}
    levels = sorted({lv for (k, lv) in e if k == 2} & {lv for (k, lv) in e if k == 3})
    return [(lv, abs(e[(3, lv)] - e[(2, lv)]) / e[(2, lv)]) for lv in levels]


def convergence_dat(records, family: str) -> str:
    lines = [f"# {family}: one block per (k, geo_mode); columns h e_v e_p"]
    groups: dict = {}
    for r in records:
        if r.family == family and r.status == "ok":
            groups.setdefault((r.k, r.geo_mode), []).append(r)
    for (k, mode), rs in sorted(groups.items()):
        lines.append(f"# k={k} {mode}")
        lines += [f"{r.h:.6e} {r.e_v:.6e} {r.e_p:.6e}" for r in sorted(rs, key=lambda r: r.level)]
        lines += ["", ""]
    return "\n".join(lines)


def cmd_converge(cfg: RunConfig) -> Outcome:
    from .plots import convergence_figure

    out = Path(cfg.out)
    tasks = [
        (fam, lv, k, mode, cfg.quad_degree)
        for fam in cfg.families
        for k in cfg.degrees
        for mode in cfg.geo_modes
        for lv in cfg.level_range(fam)
    ]
    if any(len(cfg.level_range(f)) < 3 for f in cfg.families):
        raise ConfigError("slope fitting needs at least 3 levels")
    records = []

    def keep(rec: darcy.RunRecord) -> None:
        records.append(rec)
        name = f"{rec.family}_L{rec.level}_k{rec.k}_{rec.geo_mode}.csv"
        atomic_write(out / "runs" / name, records_csv([rec], cfg.timing))
        log.info("%s L%d k=%d %s e_v=%.3e e_p=%.3e", rec.family, rec.level, rec.k, rec.geo_mode, rec.e_v, rec.e_p)

    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            for rec in pool.map(converge_task, tasks):
                keep(rec)
    else:
        for t in tasks:
            keep(converge_task(t))
    darcy.attach_slopes(records)
    atomic_write(out / "converge.csv", records_csv(records, cfg.timing))

    res = Outcome()
    summary = slope_summary(records)
    scols = ("family", "k", "geo_mode", "error", "levels", "slope", "expected", "tolerance", "matched")
    atomic_write(out / "slopes.csv", csv_text(scols, [[s[c] for c in scols] for s in summary]))
    for fam in cfg.families:
        atomic_write(out / f"{fam}.dat", convergence_dat(records, fam))
        atomic_figure(convergence_figure, out / f"{fam}.png", [r for r in records if r.family == fam], title=fam)
    for r in records:
        if r.status != "ok":
            res.add(f"solve[{r.family},L{r.level},k={r.k},{r.geo_mode}]", False, r.status)
    worst = max((r.mass_residual for r in records if r.status == "ok"), default=0.0)
    res.add("mass_conservation", worst <= 1e-9, f"{worst:.1e}")
    for s in summary:
        res.add(
            f"slope[{s['family']},k={s['k']},{s['geo_mode']},{s['error']}]",
            s["matched"],
            f"{s['slope']:.2f} vs {s['expected']:.1f} +- {s['tolerance']}",
        )
    for fam in cfg.families:
        if fam.startswith("extruded_annulus"):
            gaps = coincidence(records, fam)
            if gaps:
                res.add(f"noGeo_coincidence[{fam}]", max(g for _, g in gaps) <= 0.2,
                        " ".join(f"L{lv}:{g:.1%}" for lv, g in gaps))
    return res


# ----------------------------------------------------------------------
# cornerpoint
# ----------------------------------------------------------------------

#: vertical line for the centerline profile, just off the column boundaries
CENTER = (0.5 - 1e-6, 0.5 - 1e-6)


def _hex_order(mesh, c: int) -> list[int]:
    """Cell vertices in VTK hexahedron order (bottom ring, then top ring)."""
    ids = list(mesh.cell_vertex_ids(c))
    V = mesh.vertices[ids]
    centre = V[:, :2].mean(axis=0)
    pillars: dict = {}
    for i, v in zip(ids, V):
        pillars.setdefault((round(v[0], 12), round(v[1], 12)), []).append((v[2], i))
    if len(pillars) != 4 or any(len(p) != 2 for p in pillars.values()):
        raise darcy.DarcyError(f"cell {c} is not a pillar hexahedron")
    keys = sorted(pillars, key=lambda xy: math.atan2(xy[1] - centre[1], xy[0] - centre[0]))
    bottom = [min(pillars[xy])[1] for xy in keys]
    top = [max(pillars[xy])[1] for xy in keys]
    return bottom + top


def vtk_text(solution: darcy.Solution, title: str) -> str:
    """Legacy ASCII unstructured grid with cell pressure means and materials."""
    mesh = solution.system.spec.mesh
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {len(mesh.vertices)} double")
    lines += [f"{x:.12g} {y:.12g} {z:.12g}" for x, y, z in mesh.vertices]
    n = mesh.n_cells
    lines.append(f"CELLS {n} {9 * n}")
    lines += ["8 " + " ".join(map(str, _hex_order(mesh, c))) for c in range(n)]
    lines.append(f"CELL_TYPES {n}")
    lines += ["12"] * n
    lines += [f"CELL_DATA {n}", "SCALARS pressure_mean double 1", "LOOKUP_TABLE default"]
    lines += [f"{solution.cell_mean_pressure(c):.12e}" for c in range(n)]
    lines += ["SCALARS material int 1", "LOOKUP_TABLE default"]
    lines += [str(mesh.cells[c].material) for c in range(n)]
    return "\n".join(lines) + "\n"


def profile_distance(coarse: np.ndarray, fine: np.ndarray) -> float:
    """L2 distance in z of two centerline profiles, sampled on a common grid."""
    z = np.linspace(0.0, 1.0, 2001)[1:-1]
    a = np.interp(z, coarse[:, 0], coarse[:, 1])
    b = np.interp(z, fine[:, 0], fine[:, 1])
    return float(np.sqrt(np.mean((a - b) ** 2)))


def cmd_cornerpoint(cfg: RunConfig) -> Outcome:
    from .plots import profile_figure

    out = Path(cfg.out)
    if len(cfg.degrees) != 1:
        raise ConfigError("cornerpoint solves a single degree")
    k = cfg.degrees[0]
    res = Outcome()
    profiles: dict = {}
    prow, drow = [], []
    for level in cfg.level_range("cornerpoint_layers"):
        mesh = gen_layered_cube(level, cfg.variant)
        spec = darcy.layered_problem(mesh, k, cfg.kappa)
        locals_ = darcy.build_locals(mesh, k, cfg.quad_degree)
        sol = darcy.solve(darcy.assemble(spec, locals_))
        atomic_write(out / f"cornerpoint_L{level}.vtk", vtk_text(sol, f"layered {cfg.variant} level {level}"))
        prof = darcy.column_profile(sol, *CENTER)
        profiles[level] = prof
        prow += [[level, z, p] for z, p in prof]
        drops = darcy.layer_drops(sol, *CENTER)
        total = sum(drops.values())
        drow += [[level, m, d, d / total] for m, d in sorted(drops.items())]
        mono = bool(np.all(np.diff(prof[:, 1]) < 0))
        res.add(f"monotone[L{level}]", mono, f"p from {prof[0, 1]:.3f} to {prof[-1, 1]:.3f}")
        low = int(np.argmin(cfg.kappa))
        res.add(f"low_permeability_drop[L{level}]", drops.get(low, 0.0) / total >= 0.6,
                f"{drops.get(low, 0.0) / total:.1%} of the drop across layer {low}")
        mass = darcy.local_mass_conservation(sol)
        res.add(f"mass_conservation[L{level}]", mass <= 1e-9, f"{mass:.1e}")
    atomic_write(out / "centerline.csv", csv_text(("level", "z", "pressure"), prow))
    atomic_write(out / "layer_drops.csv", csv_text(("level", "material", "drop", "fraction"), drow))
    dat = ["# centerline pressure; one block per level; columns z p"]
    for level, prof in profiles.items():
        dat.append(f"# level {level}")
        dat += [f"{z:.6e} {p:.6e}" for z, p in prof] + ["", ""]
    atomic_write(out / "centerline.dat", "\n".join(dat))
    atomic_figure(profile_figure, out / "centerline.png", {f"level {lv}": p for lv, p in profiles.items()},
                  title=f"{cfg.variant} layers")
    levels = sorted(profiles)
    diffs = [profile_distance(profiles[a], profiles[b]) for a, b in zip(levels, levels[1:])]
    if len(diffs) >= 2:
        res.add("profiles_converge", all(b < a for a, b in zip(diffs, diffs[1:])),
                " > ".join(f"{d:.4f}" for d in diffs))
    return res


# ----------------------------------------------------------------------
# selftest
# ----------------------------------------------------------------------


def cmd_selftest(cfg: RunConfig) -> Outcome:
    res = Outcome()
    results = checks.run_suite(checks.suite(cfg.seed, cfg.quad_degree, cfg.mesh_files, cfg.degrees))
    for r in results:
        detail = r.line().split(r.name, 1)[1].strip()
        res.add(r.name, r.ok, detail)
    atomic_write(
        Path(cfg.out) / "selftest.csv",
        csv_text(("check", "ok", "value", "tolerance"), [[r.name, r.ok, r.value, r.tolerance] for r in results]),
    )
    return res


COMMANDS = {"quadcheck": cmd_quadcheck, "converge": cmd_converge, "cornerpoint": cmd_cornerpoint,
            "selftest": cmd_selftest}


# ----------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are configuration errors
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="curvem", description="Mixed virtual elements on curved polyhedral meshes.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    helps = {
        "quadcheck": "cylinder quadrature errors and the compression demo",
        "converge": "convergence study on the manufactured examples",
        "cornerpoint": "layered corner-point pressure fields and centerline profiles",
        "selftest": "run the invariant suite",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--levels", help="inclusive refinement range a..b")
        p.add_argument("--k", help="comma separated degrees, e.g. 1,2,3")
        p.add_argument("--geo", choices=GEO_MODES + ("both",))
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, help="worker processes for independent runs")
        p.add_argument("--quad-degree", dest="quad_degree", type=int, help="override the volume rule degree")
        p.add_argument("--family", action="append", choices=CONVERGENCE_FAMILIES, help="repeatable")
        p.add_argument("--mesh-file", dest="mesh_file", action="append", help="extra mesh JSON for selftest")
        p.add_argument("--variant", choices=("curved", "flat"))
        p.add_argument("--timing", action="store_true", help="record solve times in the CSV")
        p.add_argument("--dump-config", action="store_true", help="print the canonical configuration and exit")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = build_config(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.dump_config:
        sys.stdout.write(cfg.to_toml())
        return 0
    try:
        outcome = COMMANDS[cfg.subcommand](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    atomic_write(Path(cfg.out) / f"{cfg.subcommand}.toml", cfg.to_toml())
    return outcome.report()


if __name__ == "__main__":
    sys.exit(main())
