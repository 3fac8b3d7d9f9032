"""Command-line front end driven by a flat INI-style run configuration.

A run file has up to six sections -- [grid], [data], [optimize], [blowup],
[cone], [output] -- holding plain key=value pairs.  Unknown sections or
keys are rejected, every path is resolved before anything runs, and each
run writes ``manifest.ini`` into the output directory echoing the full
resolved configuration (the manifest itself is a valid run file).

Exit codes: 0 success, 2 configuration/validation error (nothing is
written), 3 numerical failure during the run.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .analytic import AnalyticScalar, BumpField
from .blowup import classify_boundary, reports_to_csv, weiss_trace
from .calculus import (
    ProblemData,
    energy_F,
    first_variation_forms,
    solve_state_pair,
)
from .cones import NoSolution, cjk_form, mean_curvature, solve_cap
from .errors import ConfigError, FreeboundError
from .grid import (
    BallRegion,
    DomainRep,
    Grid,
    ScalarField,
    read_fld1,
    volume,
    write_fld1,
)
from .optimize import OptimizeConfig, diagnostics, optimize

SUBCOMMANDS = (
    "solve",
    "optimize",
    "variation",
    "blowup",
    "classify",
    "cone",
    "diagnose",
)

# Allowed keys per section; anything else is a configuration error.
_SCHEMA = {
    "grid": ("dim", "n", "box"),
    "data": ("f", "g", "q", "lam", "xi"),
    "optimize": (
        "mode",
        "step",
        "max_steps",
        "reinit_every",
        "stop_tol",
        "tol",
        "init_radius",
        "init_center",
        "design_radius",
        "heat_lambda",
        "heat_boundary",
    ),
    "blowup": ("points", "radii", "r_max", "tau", "num_points"),
    "cone": ("dim", "theta0", "scan", "n_modes"),
    "output": ("directory", "seed"),
    "run": ("command", "version"),
}

_DEFAULTS = {
    "grid": {"dim": "2", "n": "128", "box": "-2 2"},
    "data": {
        "f": "constant 1.0",
        "g": "constant 1.0",
        "q": "constant 0.25",
        "lam": "1.0",
        "xi": "bump-e1 0.55 0.0 0.6 1.0",
    },
    "optimize": {
        "mode": "general",
        "step": "0.5",
        "max_steps": "200",
        "reinit_every": "5",
        "stop_tol": "2e-3",
        "tol": "1e-8",
        "init_radius": "1.2",
        "init_center": "0 0",
        "design_radius": "0",
        "heat_lambda": "0.25",
        "heat_boundary": "constant 1.0",
    },
    "blowup": {
        "points": "",
        "radii": "",
        "r_max": "0",
        "tau": "0.1",
        "num_points": "8",
    },
    "cone": {"dim": "3", "theta0": "1.5707963267948966", "scan": "", "n_modes": "8"},
    "output": {"directory": "out", "seed": "0"},
}


@dataclass
class RunConfig:
    """A fully resolved run configuration (all defaults filled in)."""

    sections: dict = field(default_factory=dict)

    # -- parsing ---------------------------------------------------------

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        base = os.path.dirname(os.path.abspath(path))
        return cls.from_parser(parser, base)

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser, base: str) -> "RunConfig":
        sections = {name: dict(vals) for name, vals in _DEFAULTS.items()}
        for name in parser.sections():
            if name not in _SCHEMA:
                raise ConfigError(f"unknown section [{name}]")
            for key, value in parser.items(name):
                if key not in _SCHEMA[name]:
                    raise ConfigError(f"unknown key {key!r} in section [{name}]")
                sections.setdefault(name, {})[key] = value.strip()
        cfg = cls(sections=sections)
        cfg._resolve_paths(base)
        cfg._validate(parser)
        return cfg

    def _resolve_paths(self, base: str) -> None:
        out = self.sections["output"]["directory"]
        if not os.path.isabs(out):
            out = os.path.join(base, out)
        self.sections["output"]["directory"] = os.path.normpath(out)
        for key in ("f", "g", "q"):
            spec = self.sections["data"][key].split()
            if spec and spec[0] == "fld":
                if len(spec) != 2:
                    raise ConfigError(f"data.{key}: 'fld' needs exactly one path")
                p = spec[1]
                if not os.path.isabs(p):
                    p = os.path.join(base, p)
                self.sections["data"][key] = f"fld {os.path.normpath(p)}"

    def _validate(self, parser: configparser.ConfigParser) -> None:
        if not parser.has_section("grid") or not parser.has_option("grid", "n"):
            raise ConfigError("missing required key [grid].n")
        g = self.sections["grid"]
        dim = self._int("grid", "dim")
        if dim not in (2, 3):
            raise ConfigError(f"grid.dim must be 2 or 3, got {g['dim']}")
        if self._int("grid", "n") < 16:
            raise ConfigError("grid.n must be at least 16")
        box = g["box"].split()
        if len(box) != 2:
            raise ConfigError("grid.box must be 'lo hi'")
        lo, hi = (self._as_float("grid.box", b) for b in box)
        if not hi > lo:
            raise ConfigError("grid.box needs hi > lo")
        if self.sections["optimize"]["mode"] not in ("general", "bernoulli", "heat"):
            raise ConfigError(
                f"optimize.mode must be general|bernoulli|heat, "
                f"got {self.sections['optimize']['mode']!r}"
            )
        for sec, key in (
            ("optimize", "step"),
            ("optimize", "stop_tol"),
            ("optimize", "tol"),
            ("data", "lam"),
            ("blowup", "tau"),
        ):
            if not self._float(sec, key) > 0:
                raise ConfigError(f"{sec}.{key} must be positive")

    # -- typed access ----------------------------------------------------

    def get(self, section: str, key: str) -> str:
        return self.sections[section][key]

    def _int(self, section: str, key: str) -> int:
        raw = self.get(section, key)
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: expected integer, got {raw!r}") from exc

    def _float(self, section: str, key: str) -> float:
        return self._as_float(f"{section}.{key}", self.get(section, key))

    @staticmethod
    def _as_float(label: str, raw: str) -> float:
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{label}: expected number, got {raw!r}") from exc

    def _floats(self, section: str, key: str) -> list:
        raw = self.get(section, key).replace(",", " ")
        return [self._as_float(f"{section}.{key}", t) for t in raw.split()]

    def _points(self, section: str, key: str) -> list:
        raw = self.get(section, key)
        dim = self._int("grid", "dim")
        pts = []
        for chunk in raw.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            coords = self._as_points_row(f"{section}.{key}", chunk, dim)
            pts.append(coords)
        return pts

    @staticmethod
    def _as_points_row(label: str, chunk: str, dim: int):
        toks = chunk.replace(",", " ").split()
        if len(toks) != dim:
            raise ConfigError(f"{label}: point {chunk!r} needs {dim} coordinates")
        return np.array([RunConfig._as_float(label, t) for t in toks])

    # -- resolved objects ------------------------------------------------

    def grid(self) -> Grid:
        dim = self._int("grid", "dim")
        n = self._int("grid", "n")
        lo, hi = (
            self._as_float("grid.box", b) for b in self.get("grid", "box").split()
        )
        return Grid.box([lo] * dim, [hi] * dim, n)

    def scalar(self, key: str, grid: Grid) -> AnalyticScalar:
        return _parse_scalar(f"data.{key}", self.get("data", key), grid.dim)

    def problem_data(self, grid: Grid) -> ProblemData:
        return ProblemData(
            f=self.scalar("f", grid),
            g=self.scalar("g", grid),
            Q=self.scalar("q", grid),
        )

    def bump(self, dim: int) -> BumpField:
        toks = self.get("data", "xi").split()
        names = {
            "bump-e1": dict(kind="axis", axis=0),
            "bump-e2": dict(kind="axis", axis=1),
            "bump-e3": dict(kind="axis", axis=2),
            "bump-radial": dict(kind="radial"),
            "bump-rot": dict(kind="rotational"),
        }
        if not toks or toks[0] not in names:
            raise ConfigError(
                f"data.xi: preset must be one of {sorted(names)}, got {toks[:1]}"
            )
        if len(toks) != 1 + dim + 2:
            raise ConfigError(
                f"data.xi: expected '{toks[0]} <center x{dim}> <rho> <amp>'"
            )
        vals = [self._as_float("data.xi", t) for t in toks[1:]]
        return BumpField(
            dim=dim,
            center=np.array(vals[:dim]),
            rho=vals[dim],
            amplitude=vals[dim + 1],
            **names[toks[0]],
        )

    def init_domain(self, grid: Grid) -> DomainRep:
        r = self._float("optimize", "init_radius")
        c = self._floats("optimize", "init_center")
        if len(c) != grid.dim:
            raise ConfigError("optimize.init_center needs grid.dim coordinates")
        if not r > 0:
            raise ConfigError("optimize.init_radius must be positive")
        c = np.asarray(c)
        return DomainRep.from_callable(
            grid,
            lambda *m: r - np.sqrt(sum((mi - ci) ** 2 for mi, ci in zip(m, c))),
        )

    def optimize_config(self, grid: Grid) -> OptimizeConfig:
        mode = self.get("optimize", "mode")
        dom = self.init_domain(grid)
        design = None
        dr = self._float("optimize", "design_radius")
        if dr > 0:
            design = ScalarField.from_callable(
                grid, lambda *m: dr - np.sqrt(sum(mi**2 for mi in m))
            )
        data = None if mode == "heat" else self.problem_data(grid)
        heat_bd = _parse_scalar(
            "optimize.heat_boundary",
            self.get("optimize", "heat_boundary"),
            grid.dim,
        )
        return OptimizeConfig(
            mode=mode,
            data=data,
            init=dom,
            step=self._float("optimize", "step"),
            max_steps=self._int("optimize", "max_steps"),
            reinit_every=self._int("optimize", "reinit_every"),
            stop_tol=self._float("optimize", "stop_tol"),
            tol=self._float("optimize", "tol"),
            lam=self._float("data", "lam"),
            heat_Lambda=self._float("optimize", "heat_lambda"),
            heat_boundary=heat_bd,
            design=design,
        )

    # -- manifest --------------------------------------------------------

    def write_manifest(self, command: str, path: str) -> None:
        parser = configparser.ConfigParser(interpolation=None)
        for name in _SCHEMA:
            if name == "run":
                continue
            parser[name] = dict(self.sections[name])
        parser["run"] = {"command": command, "version": "1"}
        with open(path, "w") as fh:
            parser.write(fh)


def _parse_scalar(label: str, raw: str, dim: int) -> AnalyticScalar:
    """Named analytic preset, or an FLD1 file sampled onto the run grid."""
    toks = raw.split()
    if not toks:
        raise ConfigError(f"{label}: empty field spec")
    name, args = toks[0], toks[1:]
    try:
        vals = [float(a) for a in args]
    except ValueError as exc:
        raise ConfigError(f"{label}: non-numeric parameter in {raw!r}") from exc
    if name == "constant":
        if len(vals) != 1:
            raise ConfigError(f"{label}: constant needs 1 parameter")
        return AnalyticScalar.constant(vals[0], dim)
    if name == "affine":
        if len(vals) != dim + 1:
            raise ConfigError(f"{label}: affine needs {dim + 1} parameters")
        return AnalyticScalar.affine(vals[0], vals[1:])
    if name == "gaussian":
        if len(vals) != dim + 3:
            raise ConfigError(
                f"{label}: gaussian needs base amp <center x{dim}> sigma"
            )
        return AnalyticScalar.gaussian(vals[0], vals[1], vals[2 : 2 + dim], vals[-1])
    if name == "fld":
        f = read_fld1(args[0]) if args else None
        if f is None:
            raise ConfigError(f"{label}: fld needs a path")
        return AnalyticScalar(
            fn=lambda p, _f=f: _f.sample(p), label=f"fld:{args[0]}"
        )
    raise ConfigError(f"{label}: unknown field preset {name!r}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _equivalent_radius(vol: float, dim: int) -> float:
    if dim == 2:
        return float(np.sqrt(vol / np.pi))
    return float((3.0 * vol / (4.0 * np.pi)) ** (1.0 / 3.0))


def _cmd_solve(cfg: RunConfig, out: str) -> int:
    grid = cfg.grid()
    dom = cfg.init_domain(grid)
    data = cfg.problem_data(grid)
    u, v, op = solve_state_pair(dom, data, tol=cfg._float("optimize", "tol"))
    write_fld1(os.path.join(out, "u.fld"), u)
    write_fld1(os.path.join(out, "v.fld"), v)
    F = energy_F(dom, data, op=op)
    print(f"solve: F = {F:.17g}, volume = {volume(dom):.17g}")
    return 0


def _cmd_optimize(cfg: RunConfig, out: str) -> int:
    grid = cfg.grid()
    ocfg = cfg.optimize_config(grid)
    dom, trace = optimize(ocfg)
    trace.to_csv(os.path.join(out, "opt_trace.csv"))
    write_fld1(os.path.join(out, "final.fld"), dom.phi)
    vol = volume(dom)
    r = _equivalent_radius(vol, grid.dim)
    last = trace.steps[-1] if trace.steps else {"energy": float("nan")}
    print(
        f"optimize: converged={trace.converged} steps={len(trace.steps)} "
        f"energy={last['energy']:.17g} volume={vol:.17g} "
        f"equivalent_radius={r:.17g}"
    )
    return 0


def _cmd_variation(cfg: RunConfig, out: str) -> int:
    grid = cfg.grid()
    dom = cfg.init_domain(grid)
    data = cfg.problem_data(grid)
    spec = cfg.bump(grid.dim)
    vol_form, surf_form = first_variation_forms(dom, data, spec)
    with open(os.path.join(out, "variation.csv"), "w") as fh:
        fh.write("volume_form,surface_form\n")
        fh.write(f"{vol_form:.17g},{surf_form:.17g}\n")
    print(f"variation: |dF| = {abs(vol_form):.17g} (surface form {surf_form:.17g})")
    return 0


def _solved_domain(cfg: RunConfig, grid: Grid):
    """Initial ball domain with its solved state pair."""
    dom = cfg.init_domain(grid)
    data = cfg.problem_data(grid)
    u, v, _ = solve_state_pair(dom, data, tol=cfg._float("optimize", "tol"))
    return dom, data, u, v


def _cmd_blowup(cfg: RunConfig, out: str) -> int:
    grid = cfg.grid()
    dom, data, u, _ = _solved_domain(cfg, grid)
    points = cfg._points("blowup", "points")
    if not points:
        raise ConfigError("blowup.points must list at least one point")
    radii = cfg._floats("blowup", "radii")
    if not radii:
        r0 = cfg._float("blowup", "r_max")
        if r0 <= 0:
            r0 = 0.125 * float(grid.extent.min())
        radii = [r0 * 0.75**k for k in range(6) if r0 * 0.75**k >= 4 * grid.h]
    lam = cfg._float("data", "lam")
    for i, x0 in enumerate(points):
        Lam = lam * float(data.Q.value(x0[None])[0])
        tr = weiss_trace(u, x0, Lam, radii, dom=dom)
        tr.to_csv(os.path.join(out, f"weiss_{i}.csv"))
        print(
            f"blowup[{i}]: center=({', '.join(f'{c:g}' for c in x0)}) "
            f"W_last={tr.W[-1]:.17g} defect={tr.defect:.17g}"
        )
    return 0


def _cmd_classify(cfg: RunConfig, out: str, rng: np.random.Generator) -> int:
    grid = cfg.grid()
    dom, data, u, v = _solved_domain(cfg, grid)
    points = cfg._points("blowup", "points")
    if not points:
        points = _sample_boundary(dom, cfg._int("blowup", "num_points"), rng)
    r_max = cfg._float("blowup", "r_max")
    reports = classify_boundary(
        dom,
        data,
        points,
        r_max=r_max if r_max > 0 else None,
        tau=cfg._float("blowup", "tau"),
        u=u,
        v=v,
    )
    reports_to_csv(reports, os.path.join(out, "classify.csv"))
    for rep in reports:
        print(
            f"classify: center=({', '.join(f'{c:g}' for c in rep.center)}) "
            f"verdict={rep.verdict} fit_error={rep.fit_error:.3g}"
        )
    return 0


def _sample_boundary(dom: DomainRep, count: int, rng: np.random.Generator) -> list:
    from .calculus import _interface_elements

    elems = _interface_elements(dom)
    if elems is None:
        raise ConfigError("domain has no free boundary to sample")
    pts = elems[0]
    idx = rng.choice(len(pts), size=min(count, len(pts)), replace=False)
    return [pts[i] for i in np.sort(idx)]


def _cmd_cone(cfg: RunConfig, out: str) -> int:
    dim = cfg._int("cone", "dim")
    scan = cfg.get("cone", "scan").split()
    if scan:
        if len(scan) != 3:
            raise ConfigError("cone.scan must be 'theta_min theta_max count'")
        t0 = RunConfig._as_float("cone.scan", scan[0])
        t1 = RunConfig._as_float("cone.scan", scan[1])
        cnt = int(RunConfig._as_float("cone.scan", scan[2]))
        lines = ["theta0,solvable,residual_or_edge_slope\n"]
        for th in np.linspace(t0, t1, cnt):
            res = solve_cap(dim, float(th))
            if isinstance(res, NoSolution):
                lines.append(f"{th:.17g},0,{res.residual:.17g}\n")
            else:
                lines.append(f"{th:.17g},1,{res.dphi[-1]:.17g}\n")
        with open(os.path.join(out, "cone_scan.csv"), "w") as fh:
            fh.writelines(lines)
        print(f"cone: scanned {cnt} apertures in [{t0:g}, {t1:g}]")
        return 0
    theta0 = cfg._float("cone", "theta0")
    res = solve_cap(dim, theta0)
    if isinstance(res, NoSolution):
        print(
            f"cone: no 1-homogeneous solution at dim={dim} theta0={theta0:g} "
            f"(residual {res.residual:.3g})"
        )
        return 0
    res.to_csv(os.path.join(out, "cone_profile.csv"))
    report = cjk_form(res, n_modes=cfg._int("cone", "n_modes"))
    report.to_csv(os.path.join(out, "rayleigh.csv"))
    H = mean_curvature(res, 1.0)
    print(
        f"cone: dim={dim} theta0={theta0:g} H(1)={H:.17g} "
        f"stability_min={report.min_value:.17g}"
    )
    return 0


def _cmd_diagnose(cfg: RunConfig, out: str) -> int:
    grid = cfg.grid()
    dom, data, u, _ = _solved_domain(cfg, grid)
    report = diagnostics(dom, data, u=u, tol=cfg._float("optimize", "tol"))
    report.to_csv(os.path.join(out, "diagnostics.csv"))
    print(
        f"diagnose: lipschitz={report.lipschitz:.17g} "
        f"nondeg_min={report.nondeg_min:.17g} "
        f"density=[{report.density_min:.17g}, {report.density_max:.17g}] "
        f"flags={list(report.flags)}"
    )
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _precheck(command: str, cfg: RunConfig) -> None:
    """Cheap command-specific validation, run before anything is written."""
    cfg.grid()
    if command in ("solve", "optimize", "variation", "blowup", "classify", "diagnose"):
        cfg.init_domain(cfg.grid())
    if command == "variation":
        cfg.bump(cfg._int("grid", "dim"))
    if command == "blowup":
        if not cfg._points("blowup", "points"):
            raise ConfigError("blowup.points must list at least one point")
        cfg._floats("blowup", "radii")
    if command == "classify":
        cfg._points("blowup", "points")
    if command == "cone":
        dim = cfg._int("cone", "dim")
        if dim < 2:
            raise ConfigError("cone.dim must be at least 2")
        scan = cfg.get("cone", "scan").split()
        if scan and len(scan) != 3:
            raise ConfigError("cone.scan must be 'theta_min theta_max count'")


def run(command: str, cfg: RunConfig) -> int:
    """Execute one subcommand against a resolved configuration."""
    if command not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {command!r}")
    _precheck(command, cfg)
    out = cfg.get("output", "directory")
    os.makedirs(out, exist_ok=True)
    cfg.write_manifest(command, os.path.join(out, "manifest.ini"))
    rng = np.random.default_rng(cfg._int("output", "seed"))
    if command == "solve":
        return _cmd_solve(cfg, out)
    if command == "optimize":
        return _cmd_optimize(cfg, out)
    if command == "variation":
        return _cmd_variation(cfg, out)
    if command == "blowup":
        return _cmd_blowup(cfg, out)
    if command == "classify":
        return _cmd_classify(cfg, out, rng)
    if command == "cone":
        return _cmd_cone(cfg, out)
    return _cmd_diagnose(cfg, out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="freebound",
        description="Shape-optimization and free-boundary laboratory.",
    )
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("config", help="path to an INI run configuration")
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return run(args.command, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FreeboundError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
