"""Command-line experiment runner.

``spdelab <command> --config PATH [--seed U64] [--out DIR] [--threads N]``

Exit codes: 0 success, 1 a scientific check failed, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
from fractions import Fraction
from importlib import metadata
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


_NUM_LIST = {"type": "array", "items": {"type": "number"}}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family", "d"],
            "properties": {
                "family": {"enum": ["wave", "heat"]},
                "d": {"type": "integer", "minimum": 1},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "beta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
                "atoms": {"type": "array", "items": _NUM_LIST, "minItems": 1},
                "masses": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "sigma": {"type": "string"},
                "b": {"type": "string"},
                "sigma0": {"type": "number", "exclusiveMinimum": 0},
            },
            "not": {"required": ["beta", "atoms"]},
        },
        "quadrature": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "radial_cutoff": {"type": "number", "exclusiveMinimum": 0},
                "tail_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "panel_count": {"type": "integer", "minimum": 1},
                "gauss_order": {"type": "integer", "minimum": 2},
                "time_order": {"type": "integer", "minimum": 2},
                "time_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                              "minItems": 8},
                "t0_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "increment_s": {"type": "number", "exclusiveMinimum": 0},
                "a3_h_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["origin", "smoothing", "increments"]},
                "N": {"type": "integer", "minimum": 8},
                "L": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "t": {"type": "number", "exclusiveMinimum": 0},
                "replicas": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
                "eps": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "s": {"type": "number", "minimum": 0},
                "lags": {"type": "array", "items": {"type": "number", "minimum": 0}},
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "s_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                           "minItems": 1},
                "h_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                           "minItems": 3},
                "besov_h_count": {"type": "integer", "minimum": 2},
                "eps_rule": {"enum": ["optimal", "none"]},
                "eps_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "s_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "s_max_target": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
                "samples": {"type": "string"},
                "master_replicas": {"type": "integer", "minimum": 0},
            },
        },
        "output": {"type": "string"},
    },
}


# ---------------------------------------------------------------------------
# config handling


def load_config(path) -> tuple:
    """Read, schema-check and physically check a config; returns ``(config, raw_bytes)``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    validate_config(cfg)
    return cfg, raw


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {where}: {exc.message}") from exc
    m = cfg["model"]
    d = m["d"]
    if "beta" in m and not m["beta"] < min(2, d):
        raise ConfigError(f"model.beta = {m['beta']} must lie in (0, min(2, d)) = (0, {min(2, d)})")
    if "atoms" in m:
        if len(m.get("masses", [])) != len(m["atoms"]):
            raise ConfigError("model.masses needs one entry per atom")
        if any(len(a) != d for a in m["atoms"]):
            raise ConfigError(f"every atom needs d = {d} coordinates")
        if not sum(m["masses"]) > 0:
            raise ConfigError("atom masses must have positive total")
    sim = cfg.get("simulation", {})
    T = m.get("T", 1.0)
    if sim:
        t = sim.get("t", T)
        dt = sim.get("dt")
        if t > T * (1 + 1e-12):
            raise ConfigError(f"simulation.t = {t} exceeds model.T = {T}")
        if dt is not None:
            for name, val in [("t", t)] + [("eps", e) for e in sim.get("eps", [])] + \
                              [("lags", h) for h in sim.get("lags", [])] + [("s", sim.get("s", 0.0))]:
                k = val / dt
                if abs(k - round(k)) > 1e-9 * max(1.0, k):
                    raise ConfigError(f"simulation.{name} = {val} is not a multiple of dt = {dt}")
        if any(e > t for e in sim.get("eps", [])):
            raise ConfigError("simulation.eps values must not exceed t")
        if sim.get("mode") == "increments":
            s = sim.get("s", 0.5 * t)
            if s + max(sim.get("lags", [0.0])) > T * (1 + 1e-12):
                raise ConfigError("simulation.s + max(lags) exceeds model.T")
        if "N" in sim and sim["N"] & (sim["N"] - 1):
            raise ConfigError("simulation.N must be a power of two")
        if d > 3:
            raise ConfigError("lattice simulation supports d <= 3; use verify-hypotheses for d >= 4")
    an = cfg.get("analysis", {})
    if "s_grid" in an and any(s >= an.get("n", 3) for s in an["s_grid"]):
        raise ConfigError("analysis.n must exceed every entry of analysis.s_grid")
    if any(h > 1 for h in an.get("h_grid", [])):
        raise ConfigError("analysis.h_grid entries must satisfy |h| <= 1")


def config_hash(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def build_model(cfg: dict):
    from .kernels import make_model

    m = cfg["model"]
    try:
        model = make_model(m["family"], m["d"], m.get("T", 1.0), beta=m.get("beta"), atoms=m.get("atoms"),
                           masses=m.get("masses"), sigma=m.get("sigma", "const:1"), b=m.get("b", "const:0"),
                           sigma0=m.get("sigma0"))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid model block: {exc}") from exc
    return model


def build_quadrature(cfg: dict):
    from .quadrature import QuadratureConfig

    q = dict(cfg.get("quadrature", {}))
    for extra in ("increment_s", "a3_h_grid"):
        q.pop(extra, None)
    if "time_grid" in q:
        q["time_grid"] = tuple(q["time_grid"])
    return QuadratureConfig(**q)


def build_grid(cfg: dict, model, t: float):
    from .simulator import LatticeGrid

    sim = cfg.get("simulation", {})
    N = sim.get("N", 32)
    try:
        if "L" in sim:
            return LatticeGrid(model.d, N, sim["L"])
        return LatticeGrid.for_model(model, N, horizon=t)
    except ValueError as exc:
        raise ConfigError(f"invalid lattice: {exc}") from exc


# ---------------------------------------------------------------------------
# outputs


def versions() -> dict:
    import scipy

    from . import __version__

    return {"spdelab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "jsonschema": metadata.version("jsonschema")}


def write_manifest(out: Path, command: str, raw: bytes, seed: Optional[int], threads: int, files) -> Path:
    manifest = {
        "command": command,
        "config_sha256": config_hash(raw),
        "seed": seed,
        "threads": threads,
        "bitwise_reproducible": threads == 1,
        "versions": versions(),
        "outputs": sorted(str(f) for f in files),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _json_default(o):
    if isinstance(o, Fraction):
        return f"{o.numerator}/{o.denominator}"
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "_asdict"):
        return o._asdict()
    raise TypeError(f"cannot encode {type(o).__name__}")


def _finite(o):
    """Replace NaN and infinities by ``None`` so the output is strict JSON."""
    if isinstance(o, float):
        return o if math.isfinite(o) else None
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    return o


def dump_json(path: Path, obj) -> Path:
    obj = json.loads(json.dumps(obj, default=_json_default))
    path.write_text(json.dumps(_finite(obj), indent=2, allow_nan=False) + "\n")
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_fit(cfg: dict, out: Path, threads: int = 1) -> tuple:
    """Fitted exponents over the quadrature time grid; returns ``(exit code, files, report dict)``."""
    from .hypotheses import fitted_exponents, increment_table, write_csv

    model, qcfg = build_model(cfg), build_quadrature(cfg)
    s = cfg.get("quadrature", {}).get("increment_s", 0.5 * model.T)
    inc = increment_table(model, qcfg, s=s)
    report, table = fitted_exponents(model, qcfg, increments=inc)
    files = [dump_json(out / "exponents_fitted.json", report.as_dict())]
    write_csv(out / "functionals.csv", table)
    write_csv(out / "increments.csv", inc)
    files += [out / "functionals.csv", out / "increments.csv"]
    return EXIT_OK, files, report


def cmd_verify(cfg: dict, out: Path, threads: int = 1) -> tuple:
    """(A1), (A3), the functionals of (A6), fitted against analytic exponents."""
    from .hypotheses import analytic_exponents, check_A1, check_A3, family_of

    model, qcfg = build_model(cfg), build_quadrature(cfg)
    tol = cfg.get("analysis", {}).get("tolerance", 0.15)
    a1 = check_A1(model, qcfg)
    h_grid = cfg.get("quadrature", {}).get("a3_h_grid", (1e-1, 1e-2, 1e-3))
    a3 = check_A3(model, qcfg, h_grid=tuple(h_grid))
    _, files, fitted = cmd_fit(cfg, out, threads)
    fam = family_of(model)
    beta = cfg["model"].get("beta")
    analytic = analytic_exponents(fam, beta, model.d) if fam is not None else None
    agree = {}
    if analytic is not None:
        for k in ("delta", "gamma", "gamma1", "gamma2"):
            f, a = float(getattr(fitted, k)), float(getattr(analytic, k))
            agree[k] = {"fitted": f, "analytic": a, "ok": bool(abs(f - a) <= tol)}
    a3_ok = all(np.isfinite(v) for row in a3.limits for v in row[1:])
    passed = a1.finite and a3_ok and all(v["ok"] for v in agree.values())
    checks = {
        "A1": {"finite": a1.finite, "values": list(a1.values), "message": a1.message},
        "A3": {"limits": [list(r) for r in a3.limits], "monotone": a3.monotone, "finite": a3_ok},
        "exponent_agreement": agree,
        "tolerance": tol,
        "passed": passed,
    }
    files.append(dump_json(out / "checks.json", checks))
    final = analytic if analytic is not None else fitted
    files.append(dump_json(out / "exponents.json", final.as_dict()))
    return (EXIT_OK if passed else EXIT_CHECK), files, final


def cmd_simulate(cfg: dict, out: Path, seed: int, threads: int = 1) -> tuple:
    """Replica samples to CSV plus a JSON moment summary."""
    from .simulator import Simulator, _moment, write_samples_csv

    model = build_model(cfg)
    sim = cfg.get("simulation", {})
    mode = sim.get("mode", "origin")
    t = sim.get("t", model.T)
    dt = sim.get("dt", t / 16)
    replicas = sim.get("replicas", 1000)
    grid = build_grid(cfg, model, t)
    files, summary = [], {"mode": mode, "t": t, "dt": dt, "replicas": replicas, "seed": seed,
                          "grid": {"d": grid.d, "N": grid.N, "L": grid.L}}
    engine = Simulator(model, grid, dt, seed, threads)
    if mode == "increments":
        from .simulator import increment_moments

        s = sim.get("s", 0.5 * t)
        lags = sim.get("lags", [dt * 2 ** k for k in range(4)])
        rows = []
        if replicas:
            est = increment_moments(model, grid, dt, s, lags, replicas, seed, threads)
            rows = [{"lag": h, "mean": e.mean, "stderr": e.stderr} for h, e in zip(lags, est)]
        path = out / "increments.csv"
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["lag", "mean", "stderr"])
            w.writeheader()
            w.writerows(rows)
        files.append(path)
        summary["increments"] = rows
    else:
        eps = sim.get("eps", []) if mode == "smoothing" else []
        run = engine.run(t, replicas, branch_eps=eps) if replicas else None
        u = run.u_t0 if run is not None else np.zeros(0)
        u_eps = run.frozen if (run is not None and eps) else None
        path = out / "samples.csv"
        write_samples_csv(path, seed, t, u, u_eps[:, 0] if u_eps is not None else None)
        files.append(path)
        m = _moment(u)
        summary["u_t0"] = {"mean": m.mean, "stderr": m.stderr,
                           "variance": float(np.var(u, ddof=1)) if len(u) > 1 else math.nan}
        if u_eps is not None:
            summary["smoothing"] = [{"eps": e, **_moment((u - u_eps[:, j]) ** 2).__dict__}
                                    for j, e in enumerate(eps)]
            if len(eps) > 1:
                path = out / "smoothing_pairs.csv"
                with open(path, "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["seed", "t", "u_t0"] + [f"u_eps_{e:g}" for e in eps])
                    for row in zip(u, *u_eps.T):
                        w.writerow([seed, repr(t)] + [repr(float(v)) for v in row])
                files.append(path)
    files.append(dump_json(out / "moments.json", summary))
    return EXIT_OK, files, summary


def read_samples(path) -> np.ndarray:
    """``u_t0`` column of a samples CSV (or a bare one-column file)."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read samples {path}: {exc}") from exc
    if not rows:
        raise ConfigError("samples file is empty")
    header = rows[0]
    try:
        col = header.index("u_t0")
        body = rows[1:]
    except ValueError:
        col, body = 0, rows
    try:
        x = np.array([float(r[col]) for r in body if r], dtype=float)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"malformed samples file: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise ConfigError("samples contain non-finite values")
    return x


def cmd_density(cfg: dict, out: Path, samples: Optional[np.ndarray], seed: int, threads: int = 1) -> tuple:
    """KDE, Besov norms over the s-grid and the difference-decay criterion."""
    from . import density as dn
    from .hypotheses import analytic_exponents, family_of, optimal_parameters

    an = cfg.get("analysis", {})
    if samples is None:
        if "samples" not in an:
            raise ConfigError("density needs --samples or analysis.samples")
        samples = read_samples(an["samples"])
    n = an.get("n", 3)
    try:
        est = dn.kde(samples)
    except ValueError as exc:
        raise ConfigError(f"samples admit no density estimate: {exc}") from exc
    model = build_model(cfg)
    fam = family_of(model)
    target = an.get("s_max_target")
    exps = None
    if fam is not None:
        exps = analytic_exponents(fam, cfg["model"].get("beta"), model.d)
        if target is None:
            target = float(exps.s_max)
    if target is None:
        raise ConfigError("set analysis.s_max_target for custom models")
    frac = an.get("s_fraction", 0.8)
    s_grid = an.get("s_grid", list(np.linspace(0.1, 1.0, 10) * frac * target))
    try:
        besov = dn.besov_report(est.grid, n, s_grid, an.get("besov_h_count", 12))
        # norms for n and n + 1 are equivalent; both are reported, never equated
        besov_next = dn.besov_report(est.grid, n + 1, s_grid, an.get("besov_h_count", 12))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    alpha = an.get("alpha", float(optimal_parameters(exps).alpha) if exps is not None else 0.5)
    sd = float(np.std(samples))
    h_grid = an.get("h_grid", list(sd * np.geomspace(1e-3, 0.3, 10)))
    decay = dn.criterion_decay(samples, None, n, alpha, h_grid)
    files = [dump_json(out / "besov.json", {**besov.__dict__, "next_order": besov_next.__dict__}),
             dump_json(out / "decay.json", {"n": n, "alpha": alpha, "a": decay.a,
                                            "besov_index": decay.besov_index,
                                            "fits": {k: v.__dict__ for k, v in decay.fits.items()}})]
    dn.write_table_csv(out / "decay.csv", decay.table)
    files.append(out / "decay.csv")
    dn.write_table_csv(out / "kde.csv", [{"x": float(x), "density": float(v)}
                                         for x, v in zip(est.grid.x, est.grid.values)])
    files.append(out / "kde.csv")
    if an.get("master_replicas", 0) > 0 and "eps_grid" in an:
        sim = cfg.get("simulation", {})
        t = sim.get("t", model.T)
        dt = sim.get("dt", min(an["eps_grid"]))
        opt = optimal_parameters(exps) if (exps is not None and an.get("eps_rule", "optimal") == "optimal") else None
        mb = dn.master_bound_check(model, t, an["eps_grid"], h_grid, n, alpha, an["master_replicas"],
                                   grid=build_grid(cfg, model, t), dt=dt, seed=seed, optimal=opt, workers=threads)
        files.append(dump_json(out / "master_bound.json", mb.__dict__))
    ok = besov.s_empirical >= frac * target * (1 - 1e-9)
    summary = {"s_empirical": besov.s_empirical, "target": target, "fraction": frac,
               "kde_integral": est.grid.integral(), "bandwidth": est.bandwidth,
               "a": decay.a, "besov_index": decay.besov_index, "passed": ok}
    files.append(dump_json(out / "density_summary.json", summary))
    return (EXIT_OK if ok else EXIT_CHECK), files, summary


def cmd_report(out: Path) -> tuple:
    """Collect every JSON report in ``out`` into ``report.json``."""
    if not out.is_dir():
        raise ConfigError(f"output directory {out} does not exist")
    collected = {}
    for p in sorted(out.glob("*.json")):
        if p.name in ("report.json", "manifest.json"):
            continue
        try:
            collected[p.stem] = json.loads(p.read_text())
        except json.JSONDecodeError:
            collected[p.stem] = {"error": "unreadable"}
    path = dump_json(out / "report.json", collected)
    return EXIT_OK, [path], collected


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spdelab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("verify-hypotheses", "check (A1), (A3) and fit the (A6) exponents"),
                           ("fit-exponents", "fit exponents from quadrature only"),
                           ("simulate", "lattice Monte Carlo samples of u(t,0)"),
                           ("density", "KDE and Besov analysis of samples"),
                           ("report", "gather JSON reports of an output directory")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", required=(name != "report"), help="JSON experiment config")
        sp.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="FFT threads; 1 is bitwise reproducible")
        if name == "density":
            sp.add_argument("--samples", default=None, help="samples CSV with a u_t0 column")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.command == "report":
            out = Path(args.out or ".")
            code, files, _ = cmd_report(out)
            print(f"report: {files[0]}")
            return code
        cfg, raw = load_config(args.config)
        out = Path(args.out or cfg.get("output", "spdelab_out"))
        out.mkdir(parents=True, exist_ok=True)
        seed = args.seed if args.seed is not None else cfg.get("simulation", {}).get("seed", 0)
        if args.command == "verify-hypotheses":
            code, files, rep = cmd_verify(cfg, out, args.threads)
            print(f"s_max = {rep.s_max}  gamma_bar = {rep.gamma_bar}")
        elif args.command == "fit-exponents":
            code, files, rep = cmd_fit(cfg, out, args.threads)
            print(f"fitted s_max = {float(rep.s_max):.4f}")
        elif args.command == "simulate":
            code, files, rep = cmd_simulate(cfg, out, seed, args.threads)
        else:
            samples = read_samples(args.samples) if args.samples else None
            code, files, rep = cmd_density(cfg, out, samples, seed, args.threads)
            print(f"s_empirical = {rep['s_empirical']:.4f} (target {rep['fraction']} x {rep['target']:.4f})")
        write_manifest(out, args.command, raw, seed, args.threads, files)
        print(("ok" if code == EXIT_OK else "check failed") + f": outputs in {out}")
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
