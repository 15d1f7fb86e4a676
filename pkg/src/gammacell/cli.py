"""Command-line entry point.

Every run is described by one TOML file; ``--set section.key=value`` and the
``--output-dir``, ``--workers`` and ``--seed`` flags override scalar keys
(flag > file > default).  The default worker count may also come from the
``GAMMACELL_WORKERS`` environment variable.

Exit codes: 0 success, 1 configuration error, 2 solver did not converge,
3 invariant or oracle failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, cell1d, cellnd, oracles, recovery
from .fields import CompositeJump, FieldError, PiecewiseField
from .functionals import AvilesGiga, DensityError, ModicaMortola, TwoGradientWell, make_density
from .io import ConfigError, read_toml, to_jsonable, tomllib, write_csv, write_json
from .mollifier import Kernel, gamma_profile, limit_surface_density, profile_p

log = logging.getLogger("gammacell")

EXIT_OK, EXIT_CONFIG, EXIT_UNCONVERGED, EXIT_INVARIANT = 0, 1, 2, 3
COMMANDS = ("e1", "eper", "limit-density", "recover", "scan", "check")
ORDERING_TOL = 1e-6

DEFAULTS = {
    "run": {"workers": None, "seed": 0, "output_dir": "."},
    "solver": {"grid_n": cell1d.DEFAULT_GRID_N, "l_grid": None, "grid": None, "ramp": "quintic",
               "cls": "relaxed", "gtol": 1e-8, "maxiter": 10000, "kick": 0.0, "mode": "fixed"},
    "kernel": {"name": "bump", "profile_resolution": 2048, "quadrature": 2048},
    "recovery": {"epsilons": list(recovery.DEFAULT_EPSILONS), "spacing_ratio": 16.0, "L": 0.125,
                 "modified": False, "interface": 0, "cell_grid": None, "n_quad": 48,
                 "mean_correction": False},
    "check": {"full": False},
}


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_set(item: str):
    if "=" not in item:
        raise ConfigError(f"--set expects section.key=value, got {item!r}")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    try:
        value = tomllib.loads(f"x = {raw.strip()}")["x"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return parts, value


def _env_workers():
    raw = os.environ.get("GAMMACELL_WORKERS")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"GAMMACELL_WORKERS must be an integer, got {raw!r}") from exc


def load_config(path=None, overrides=(), output_dir=None, workers=None, seed=None) -> dict:
    """Resolve the run configuration with precedence flag > file > default."""
    data = read_toml(path) if path is not None else {}
    cfg = _merge(DEFAULTS, data)
    cfg["_base"] = str(Path(path).resolve().parent) if path is not None else os.getcwd()
    for item in overrides:
        parts, value = _parse_set(item)
        node = cfg
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {'.'.join(parts)}")
        node[parts[-1]] = value
    run = cfg["run"]
    if output_dir is not None:
        run["output_dir"] = output_dir
    if seed is not None:
        run["seed"] = seed
    if workers is not None:
        run["workers"] = workers
    if run.get("workers") is None:
        run["workers"] = _env_workers() or 1
    try:
        run["workers"] = int(run["workers"])
        run["seed"] = int(run["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad run parameters: {exc}") from exc
    if run["workers"] < 1:
        raise ConfigError("workers must be at least 1")
    return cfg


def _output_dir(cfg) -> Path:
    out = Path(cfg["run"]["output_dir"])
    if not out.is_absolute():
        out = Path.cwd() / out
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def load_catalog() -> list[dict]:
    """The bundled jump catalog (list of entries with ``id``, ``density`` and jump data)."""
    text = resources.files("gammacell").joinpath("data/jumps.toml").read_text()
    return tomllib.loads(text)["jump"]


def catalog_entry(name: str) -> dict:
    for e in load_catalog():
        if e["id"] == name:
            return e
    raise ConfigError(f"no catalog jump named {name!r}")


def build_density(cfg):
    spec = cfg.get("density")
    jspec = cfg.get("jump", {})
    if spec is None and "catalog" in jspec:
        spec = catalog_entry(jspec["catalog"])["density"]
    if spec is None:
        raise ConfigError("config needs a [density] table")
    try:
        return make_density(spec)
    except DensityError as exc:
        raise ConfigError(str(exc)) from exc


def build_jump(cfg, density) -> CompositeJump:
    spec = dict(cfg.get("jump") or {})
    if "catalog" in spec:
        spec = {**catalog_entry(spec["catalog"]), **{k: v for k, v in spec.items() if k != "catalog"}}
    try:
        return CompositeJump.build(density.layout, spec["nu"], spec["v_plus"], spec["v_minus"],
                                   spec.get("f_plus"), spec.get("f_minus"))
    except KeyError as exc:
        raise ConfigError(f"[jump] needs nu, v_plus and v_minus (missing {exc})") from exc
    except (FieldError, ValueError) as exc:
        raise ConfigError(f"invalid jump: {exc}") from exc


def build_field(cfg, density) -> PiecewiseField:
    spec = cfg.get("field")
    if spec is None:
        raise ConfigError("config needs a [field] table")
    if "file" in spec:
        p = Path(spec["file"])
        if not p.is_absolute():
            p = Path(cfg["_base"]) / p
        spec = read_toml(p)
    spec = dict(spec)
    spec.setdefault("layout", density.layout.to_dict())
    try:
        field = PiecewiseField.from_dict(spec)
    except (FieldError, ValueError) as exc:
        raise ConfigError(f"invalid field: {exc}") from exc
    lay = field.layout
    if (lay.N, lay.size, lay.q) != (density.layout.N, density.layout.size, density.layout.q):
        raise ConfigError("field layout does not match the density")
    return field


def _l_grid(cfg, default):
    lg = cfg["solver"].get("l_grid")
    lg = default if lg is None else lg
    lg = [float(x) for x in lg]
    if not lg or min(lg) <= 0 or max(lg) > 1:
        raise ConfigError("L grid values must lie in (0, 1]")
    return lg


def _echo(cfg) -> dict:
    """Configuration as recorded in outputs (without run-environment keys)."""
    out = {k: v for k, v in cfg.items() if not k.startswith("_")}
    out = copy.deepcopy(out)
    out["run"] = {k: v for k, v in out["run"].items() if k not in ("output_dir", "workers")}
    return out


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_e1(cfg) -> int:
    density = build_density(cfg)
    jump = build_jump(cfg, density)
    s = cfg["solver"]
    out = _output_dir(cfg)
    try:
        res = cell1d.optimize_e1(density, jump, int(s["grid_n"]), _l_grid(cfg, cell1d.DEFAULT_L_GRID), s["ramp"],
                                 s["cls"], float(s["gtol"]), int(s["maxiter"]), cfg["run"]["workers"])
    except cell1d.UnconvergedError as exc:
        res = exc.result
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    payload = {"command": "e1", "config": _echo(cfg), "density": density.to_dict(), "jump": jump.to_dict(),
               "result": res.to_dict()}
    write_json(out / "e1.json", payload)
    S = density.layout.size
    write_csv(out / "e1_profile.csv", ["t"] + [f"theta{c}" for c in range(S)], res.profile.to_rows())
    _write_lscan(out / "e1_lscan.csv", res.table)
    print(f"e1: value={res.value:.10g} L*={res.L_star:g} converged={res.converged} -> {out / 'e1.json'}")
    return EXIT_OK if res.converged else EXIT_UNCONVERGED


def _write_lscan(path, table):
    if not table:
        write_csv(path, ["L", "value"], [])
        return
    keys = list(table[0].keys())
    write_csv(path, keys, [[r[k] for k in keys] for r in table])


def _basis(cfg, jump):
    spec = cfg.get("basis")
    if not spec:
        return cellnd.LatticeBasis.orthonormal(jump.nu)
    try:
        return cellnd.LatticeBasis(jump.nu, spec["tangents"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid lattice basis: {exc}") from exc


def cmd_eper(cfg) -> int:
    density = build_density(cfg)
    jump = build_jump(cfg, density)
    if density.layout.N < 2:
        raise ConfigError("eper needs N >= 2")
    s = cfg["solver"]
    out = _output_dir(cfg)
    basis = _basis(cfg, jump)
    kick = float(s["kick"])
    try:
        res = cellnd.optimize_eper(density, jump, basis, s["grid"], _l_grid(cfg, cellnd.DEFAULT_L_GRID),
                                   s["ramp"], s["cls"], float(s["gtol"]), int(s["maxiter"]),
                                   cfg["run"]["workers"], kick, cfg["run"]["seed"] if kick else None)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ordering = res.value <= res.e1_value + ORDERING_TOL
    structure = max(res.max_curl_residual, res.max_div_residual) <= cellnd.STRUCTURE_TOL
    payload = {"command": "eper", "config": _echo(cfg), "density": density.to_dict(), "jump": jump.to_dict(),
               "result": res.to_dict(), "ordering_holds": bool(ordering), "structure_holds": bool(structure)}
    write_json(out / "eper.json", payload)
    _write_cell(out / "eper_cell.csv", res.W)
    _write_lscan(out / "eper_lscan.csv", res.table)
    print(f"eper: value={res.value:.10g} e1={res.e1_value:.10g} L*={res.L_star:g} converged={res.converged} "
          f"-> {out / 'eper.json'}")
    if not (ordering and structure):
        return EXIT_INVARIANT
    return EXIT_OK if res.converged else EXIT_UNCONVERGED


def _write_cell(path, W):
    shape = W.shape[:-1]
    n1 = shape[0] - 1
    axes = [-0.5 + np.arange(n1 + 1) / n1] + [-0.5 + np.arange(n) / n for n in shape[1:]]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=-1)
    vals = W.reshape(-1, W.shape[-1])
    header = [f"s{a + 1}" for a in range(len(shape))] + [f"w{c}" for c in range(W.shape[-1])]
    write_csv(path, header, np.hstack([coords, vals]).tolist())


def _kernel(cfg, N) -> Kernel:
    try:
        return Kernel(cfg["kernel"]["name"], N)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_limit_density(cfg) -> int:
    density = build_density(cfg)
    jump = build_jump(cfg, density)
    out = _output_dir(cfg)
    k = cfg["kernel"]
    kernel = _kernel(cfg, density.layout.N)
    try:
        prof = profile_p(kernel, int(k["profile_resolution"]))
        value = limit_surface_density(density, prof, jump, int(k["quadrature"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    gam = gamma_profile(prof, jump)(prof.t)
    payload = {"command": "limit-density", "config": _echo(cfg), "density": density.to_dict(),
               "jump": jump.to_dict(), "kernel": kernel.to_dict(), "value": value,
               "profile_mass": prof.mass, "profile_resolution": prof.resolution}
    write_json(out / "limit_density.json", payload)
    write_csv(out / "kernel_profile.csv", ["t", "p", "P"],
              [[t, p / prof.mass, P] for t, p, P in prof.table()])
    write_csv(out / "gamma_profile.csv", ["t"] + [f"gamma{c}" for c in range(gam.shape[1])],
              np.hstack([prof.t[:, None], gam]).tolist())
    print(f"limit-density: value={value:.10g} kernel={kernel.name} -> {out / 'limit_density.json'}")
    return EXIT_OK


def cmd_recover(cfg) -> int:
    density = build_density(cfg)
    field = build_field(cfg, density)
    out = _output_dir(cfg)
    r = cfg["recovery"]
    k = cfg["kernel"]
    try:
        rc = recovery.RecoveryConfig(kernel=k["name"], epsilons=tuple(r["epsilons"]),
                                     spacing_ratio=float(r["spacing_ratio"]), L=float(r["L"]),
                                     n_quad=int(r["n_quad"]), mean_correction=bool(r["mean_correction"]),
                                     workers=cfg["run"]["workers"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sopts = {"profile_resolution": int(k["profile_resolution"]), "quadrature": int(k["quadrature"])}
    traces = {"primary": recovery.epsilon_scan(field, density, rc, "primary", surface_options=sopts)}
    status = EXIT_OK
    if r["modified"] and field.interfaces:
        idx = int(r["interface"])
        if not 0 <= idx < len(field.interfaces):
            raise ConfigError(f"no interface with index {idx}")
        if not field.interfaces[idx].is_planar():
            raise ConfigError("the modified sequence needs a planar interface")
        N = field.layout.N
        jump = recovery.trace_pair(field, idx, np.zeros(N - 1))
        kernel = _kernel(cfg, N)
        pert = recovery.optimal_perturbation(density, jump, rc.L, kernel, r["cell_grid"],
                                             profile=profile_p(kernel, 4096))
        traces["modified"] = recovery.epsilon_scan(field, density, rc, "modified", idx, pert, surface_options=sopts)
        if not pert.converged:
            status = EXIT_UNCONVERGED
    payload = {"command": "recover", "config": _echo(cfg), "density": density.to_dict(), "field": field.to_dict(),
               "recovery": rc.to_dict(), "traces": {k2: t.to_dict() for k2, t in traces.items()}}
    write_json(out / "recover.json", payload)
    for name, tr in traces.items():
        write_csv(out / f"trace_{name}.csv", ["epsilon", "energy", "predicted", "gap"],
                  [[row["epsilon"], row["energy"], row["predicted"], row["gap"]] for row in tr.rows])
    line = ", ".join(f"{n}: limit={t.extrapolated:.8g} predicted={t.predicted:.8g}" for n, t in traces.items())
    print(f"recover: {line} -> {out / 'recover.json'}")
    return status


def cmd_scan(cfg) -> int:
    density = build_density(cfg)
    jump = build_jump(cfg, density)
    out = _output_dir(cfg)
    s = cfg["solver"]
    mode = s["mode"]
    if mode not in ("fixed", "scaled"):
        raise ConfigError("solver.mode must be 'fixed' or 'scaled'")
    l_grid = _l_grid(cfg, cell1d.DEFAULT_L_GRID)
    try:
        table = cell1d.l_scan_report(density, jump, int(s["grid_n"]), l_grid, mode, s["ramp"], s["cls"],
                                     float(s["gtol"]), int(s["maxiter"]), cfg["run"]["workers"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = sorted(table, key=lambda r: -r["L"])
    violations = []
    for big, small in zip(rows, rows[1:]):
        K = big["L"] / small["L"]
        if abs(K - round(K)) < 1e-9 and small["value"] > big["value"] + 1e-4 * (1.0 + big["value"]):
            violations.append({"L": small["L"], "KL": big["L"]})
    converged = all(r["converged"] for r in rows)
    payload = {"command": "scan", "config": _echo(cfg), "density": density.to_dict(), "jump": jump.to_dict(),
               "mode": mode, "table": rows, "monotone_violations": violations, "converged": converged}
    write_json(out / "scan.json", payload)
    _write_lscan(out / "scan.csv", rows)
    print(f"scan: {len(rows)} L values, min={min(r['value'] for r in rows):.10g}, "
          f"violations={len(violations)} -> {out / 'scan.json'}")
    if mode == "scaled" and violations:
        return EXIT_INVARIANT
    return EXIT_OK if converged else EXIT_UNCONVERGED


def oracle_suite(full: bool = False, workers: int = 1):
    """Yield the oracle reports run by ``check`` (deterministic order)."""
    yield oracles.operator_self_test((64, 64))
    yield oracles.operator_self_test((16, 16, 16))
    for name in ("bump", "poly"):
        for N in (1, 2, 3):
            yield oracles.slice_profile_check(name, N)
            yield oracles.profile_property_check(name, N)
    dens = [ModicaMortola(1), ModicaMortola(2, m=2), AvilesGiga(2), TwoGradientWell(2, [[0.6, 0.8]], [[0, 0]])]
    dens += [make_density(e["density"]) for e in load_catalog() if e["density"]["name"] == "polynomial"]
    for d in dens:
        yield oracles.density_gradient_check(d, 1000, 0)
    mm = ModicaMortola(1)
    jmm = CompositeJump.build(mm.layout, [1.0], [1.0], [-1.0])
    t = oracles.OracleReport("geodesic_e1[modica_mortola]", 8.0 / 3.0,
                             oracles.geodesic_e1_scalar(lambda u: (1 - u * u) ** 2, -1.0, 1.0), 1e-6)
    yield t
    e1 = cell1d.optimize_e1(mm, jmm, workers=workers)
    yield oracles.OracleReport("e1_vs_analytic[modica_mortola]", 8.0 / 3.0, e1.value, 1e-3)
    yield oracles.OracleReport("brute_force_vs_analytic[modica_mortola]", 8.0 / 3.0,
                               oracles.brute_force_e1(mm, jmm, 4096), 5e-4)
    prob = cell1d.CellProblem1D(mm, jmm, 128, 0.25)
    x = np.random.default_rng(1).standard_normal(prob.param.size) * 0.1
    yield oracles.fd_gradient_check(prob.objective, x, 1e-6, name="fd_gradient[cell1d]")
    mm2 = ModicaMortola(2)
    j2 = CompositeJump.build(mm2.layout, [0.6, 0.8], [1.0], [-1.0])
    pnd = cellnd.CellProblemND(mm2, j2, cellnd.LatticeBasis.orthonormal(j2.nu), (16, 16), 0.5)
    x = np.random.default_rng(2).standard_normal(pnd.param.size) * 0.1
    yield oracles.fd_gradient_check(pnd.objective, x, 1e-6, coords=range(0, pnd.param.size, 7),
                                    name="fd_gradient[cellnd]")
    if full:
        for e in load_catalog():
            d = make_density(e["density"])
            j = CompositeJump.build(d.layout, e["nu"], e["v_plus"], e["v_minus"])
            r = cellnd.optimize_eper(d, j, workers=workers, kick=0.05, seed=0)
            rep = oracles.OracleReport(f"ordering[{e['id']}]", r.e1_value, r.value, 0.0,
                                       details={"e_per": r.value, "e1": r.e1_value,
                                                "curl": r.max_curl_residual, "div": r.max_div_residual})
            rep.passed = bool(r.value <= r.e1_value + ORDERING_TOL
                              and max(r.max_curl_residual, r.max_div_residual) <= cellnd.STRUCTURE_TOL)
            yield rep


def cmd_check(cfg) -> int:
    out = _output_dir(cfg)
    reports = []
    with (out / "check.jsonl").open("w") as fh:
        for rep in oracle_suite(bool(cfg["check"]["full"]), cfg["run"]["workers"]):
            d = to_jsonable(rep.to_dict())
            reports.append(d)
            fh.write(json.dumps(d, sort_keys=True) + "\n")
            log.info("%s %s (test=%.3g)", "PASS" if rep.passed else "FAIL", rep.name, rep.test)
    failed = [r["name"] for r in reports if not r["passed"]]
    write_json(out / "check.json", {"command": "check", "config": _echo(cfg), "reports": reports,
                                    "failed": failed, "passed": not failed})
    print(f"check: {len(reports) - len(failed)}/{len(reports)} oracles passed -> {out / 'check.json'}")
    return EXIT_INVARIANT if failed else EXIT_OK


HANDLERS = {"e1": cmd_e1, "eper": cmd_eper, "limit-density": cmd_limit_density, "recover": cmd_recover,
            "scan": cmd_scan, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gammacell", description="Transition-layer cell energies and recovery sequences.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=(HANDLERS[name].__doc__ or name).strip().splitlines()[0])
        p.add_argument("config", nargs="?" if name == "check" else None, help="TOML run configuration")
        p.add_argument("--output-dir", help="directory for JSON / CSV outputs")
        p.add_argument("--workers", type=int, help="worker processes (default: GAMMACELL_WORKERS or 1)")
        p.add_argument("--seed", type=int, help="seed for randomized restarts")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        if name == "check":
            p.add_argument("--full", action="store_true", help="also run the catalog ordering checks")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set, args.output_dir, args.workers, args.seed)
        if args.command == "check" and args.full:
            cfg["check"]["full"] = True
        return HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"gammacell: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


cmd_e1.__doc__ = "Optimal one-dimensional transition energy E1."
cmd_eper.__doc__ = "Periodic cell energy E_per."
cmd_limit_density.__doc__ = "Kernel profile tables and the kernel-limit density."
cmd_recover.__doc__ = "Energy traces of primary and modified recovery sequences."
cmd_scan.__doc__ = "L-scan table of the one-dimensional cell energy."
cmd_check.__doc__ = "Invariant and oracle suite."

if __name__ == "__main__":
    sys.exit(main())
