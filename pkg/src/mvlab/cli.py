"""Command-line entry point ``mvlab``.

Exit codes: 0 when every check passed, 2 when a check failed, 1 on a
runtime error.  CSV outputs start with a ``# spec_sha256: ...`` comment
holding the SHA-256 of the input file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any

from . import experiments as ex
from .dissipativity import Certificate, preset_certificates, verify_configuration
from .measures import compare_st, measure_from_json
from .model import PRESET_NAMES, Model
from .particles import frozen_input_simulate, simulate
from .stationary import find_invariant_measures

EXIT_OK, EXIT_RUNTIME, EXIT_FAILED = 0, 1, 2


def _load(path: str) -> tuple[Any, str]:
    data = Path(path).read_bytes()
    return json.loads(data), hashlib.sha256(data).hexdigest()


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    p = out_dir / name
    p.write_text(text)
    return p


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, default=float) + "\n"


def _header(digest: str) -> str:
    return f"spec_sha256: {digest}"


def _model_from(obj: dict) -> Model:
    return Model.from_json(obj.get("model", obj))


def _with_seed(spec: ex.ExperimentSpec, seed: int | None) -> ex.ExperimentSpec:
    if seed is not None:
        spec.sim = replace(spec.sim, seed=int(seed))
    return spec


# --------------------------------------------------------------------------
# subcommands


def cmd_invariant(args) -> int:
    obj, digest = _load(args.model)
    cat = find_invariant_measures(_model_from(obj))
    out = Path(args.out_dir)
    _write(out, "catalog.csv", cat.to_csv(_header(digest)))
    _write(out, "catalog.json", _dump(cat.to_json()))
    print(f"{cat.count} invariant measure(s): " + ", ".join(f"{m:.10g}" for m in cat.roots))
    return EXIT_OK if max(abs(r) for r in cat.residuals) < 1e-8 else EXIT_FAILED


def cmd_sweep(args) -> int:
    obj, digest = _load(args.spec)
    spec = ex.ExperimentSpec.from_json({"kind": "PhaseSweep", **obj})
    table = ex.phase_sweep(spec.model, spec.theta_grid, spec.sigma2_grid, threads=args.threads)
    _write(Path(args.out_dir), spec.outputs.get("csv", "phase.csv"), table.to_csv(_header(digest)))
    if table.nonmonotone_thetas:
        print("non-monotone count columns at theta =", table.nonmonotone_thetas)
    print(f"{len(table.rows)} grid points, bound Z = {table.z_bound}, violations = {len(table.bound_violations)}")
    return EXIT_OK if table.passed else EXIT_FAILED


def cmd_simulate(args) -> int:
    obj, digest = _load(args.spec)
    model = _model_from(obj)
    spec_sim = dict(obj.get("sim", {}))
    if args.seed is not None:
        spec_sim["seed"] = args.seed
    cfg = ex.SimConfig(**spec_sim)
    init, _ = ex.build_init(obj.get("init", {"type": "dirac", "point": 0.0}), model)
    refs = {}
    if obj.get("catalog_refs", True):
        cat = find_invariant_measures(model)
        refs = {f"root{k}": d.measure for k, d in enumerate(cat.measures)}
    if "mean_path" in obj:
        stats = frozen_input_simulate(model, float(obj["mean_path"]), init, cfg, refs=refs)
    else:
        stats = simulate(model, init, cfg, refs=refs)
    out = Path(args.out_dir)
    _write(out, obj.get("outputs", {}).get("csv", "trajectory.csv"), stats.to_csv(_header(digest)))
    _write(out, "final_measure.json", _dump(stats.final.to_json()))
    print(f"t = {stats.times[-1]:g}, mean = {stats.mean[-1]:.6g}, m2 = {stats.second_moment[-1]:.6g}")
    return EXIT_OK


def cmd_basin(args) -> int:
    obj, digest = _load(args.spec)
    obj = {"kind": "Basin", **obj}
    spec = _with_seed(ex.ExperimentSpec.from_json(obj), args.seed)
    out = Path(args.out_dir)
    model = spec.model
    if spec.kind in ("Basin", "SegmentConvergence"):
        inits = spec.inits
        if inits == ["default"]:
            cat = find_invariant_measures(model)
            certs = preset_certificates(model.name, model.theta, model.sigma_bounds[1])
            inits = ex.default_basin_inits(model, certs, cat, seed=spec.sim.seed)
        rep = ex.basin_experiment(model, inits, spec.sim, threads=args.threads)
        _write(out, spec.outputs.get("csv", "basin.csv"), rep.to_csv(_header(digest)))
        print(f"basin: {rep.pass_fraction:.1%} of {len(rep.judged)} predicted runs converged")
    elif spec.kind == "IntervalAttraction":
        rep = ex.interval_attraction(model, spec.inits, spec.sim, threads=args.threads)
        print("interval attraction:", "pass" if rep.passed else "FAIL")
    elif spec.kind == "BallInvariance":
        ball = spec.ball or {}
        rep = ex.ball_invariance_dynamic(model, float(ball["a"]), float(ball["r"]), spec.sim,
                                         n_inits=int(ball.get("n_inits", 8)), claimed=bool(ball.get("claimed", True)),
                                         seed=spec.sim.seed, threads=args.threads)
        print(f"ball invariance: {len(rep.excursions)} excursion(s)", "" if rep.claimed else "(control)")
    else:
        raise ValueError(f"the basin command does not run {spec.kind} specs")
    _write(out, spec.outputs.get("json", "report.json"), _dump({"spec_sha256": digest, **rep.to_json()}))
    return EXIT_OK if rep.passed else EXIT_FAILED


def cmd_certify(args) -> int:
    obj, _ = _load(args.model)
    model = _model_from(obj)
    if args.cert:
        cobj, _ = _load(args.cert)
        certs = [Certificate.from_json(c) for c in (cobj if isinstance(cobj, list) else [cobj])]
    else:
        if model.name not in PRESET_NAMES:
            raise ValueError("custom models need --cert")
        certs = preset_certificates(model.name, model.theta, model.sigma_bounds[1])
    reports = [verify_configuration(model, c) for c in certs]
    _write(Path(args.out_dir), "certify.json", _dump([r.to_json() for r in reports]))
    for r in reports:
        print(f"a = {r.a:g}, r = {r.r:.10g}: " + ("all conditions hold" if r.all_passed else "failed " + ", ".join(r.failed())))
    return EXIT_OK if all(r.all_passed for r in reports) else EXIT_FAILED


def cmd_order(args) -> int:
    a, _ = _load(args.a)
    b, _ = _load(args.b)
    res = compare_st(measure_from_json(a), measure_from_json(b), tol=args.tol)
    text = _dump(res.to_json())
    _write(Path(args.out_dir), "order.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvlab", description="Invariant measures, certificates and particle runs for mean-field SDEs.")
    p.add_argument("--seed", type=int, default=None, help="override the simulation seed")
    p.add_argument("--out-dir", default=".", help="directory for output files")
    p.add_argument("--threads", type=int, default=1, help="worker processes for independent runs")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("invariant", help="catalog of invariant measures")
    s.add_argument("model")
    s.set_defaults(func=cmd_invariant)
    s = sub.add_parser("sweep", help="phase sweep over (theta, sigma^2)")
    s.add_argument("spec")
    s.set_defaults(func=cmd_sweep)
    s = sub.add_parser("simulate", help="particle trajectory")
    s.add_argument("spec")
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("basin", help="basin, interval or ball experiment")
    s.add_argument("spec")
    s.set_defaults(func=cmd_basin)
    s = sub.add_parser("certify", help="verify dissipativity certificates")
    s.add_argument("model")
    s.add_argument("--cert", default=None)
    s.set_defaults(func=cmd_certify)
    s = sub.add_parser("order", help="stochastic order of two measures")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--tol", type=float, default=1e-9)
    s.set_defaults(func=cmd_order)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"mvlab: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
