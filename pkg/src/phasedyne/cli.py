"""Command-line entry point: a thin client over the service operations.

Subcommands: simulate, sweep, table, validate, serve.  Configuration comes
from a key = value file plus flag overrides (flags win); every run writes a
manifest.json whose hash is embedded in all data files, and a manifest is
itself accepted as --config for bit-exact reruns.  By default the CLI calls
the service operations in process; --server sends the same request models
to a remote instance instead.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import build_manifest, parse_config_text, resolve_config
from .errors import ConfigError, PhasedyneError
from .io import embedded_manifest, render_csv, write_csv, write_json
from .service import models, ops

STAMPED_ARTIFACTS = ("samples.csv", "result.json", "sweep.csv", "sweep.json",
                     "validate.json", "table1.csv")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except PhasedyneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phasedyne",
        description="simulate and validate quantum-limited CW phase tracking")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")

    def shared(p):
        p.add_argument("--config", type=Path, help="key = value config file (or a manifest.json)")
        p.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--n-traj", type=int, dest="n_traj", help="trajectories per point")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        p.add_argument("--server", help="run against a remote service URL instead of in-process")

    p_sim = sub.add_parser("simulate", help="run one configuration and record trajectories")
    shared(p_sim)
    p_sim.add_argument("--N", type=float, dest="N", help="photons per coherence time")
    p_sim.add_argument("--controller", choices=("fixed", "kalman", "heterodyne"))
    p_sim.add_argument("--noise", choices=("coherent", "squeezed"))
    p_sim.add_argument("--S", type=float, dest="S")
    p_sim.add_argument("--chi-ratio", type=float, dest="chi_ratio")
    p_sim.set_defaults(func=cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep with analytic overlays")
    shared(p_sweep)
    p_sweep.add_argument("--experiment", choices=("gain", "n", "squeeze", "het-vs-adaptive"))
    p_sweep.add_argument("--grid", help="comma-separated grid values, e.g. 0.25,0.5,1,2,4")
    p_sweep.add_argument("--N", type=float, dest="N")
    p_sweep.add_argument("--squeeze-rule", choices=("none", "fixed", "opt-scaling"),
                         dest="squeeze_rule")
    p_sweep.add_argument("--S", type=float, dest="S")
    p_sweep.set_defaults(func=cmd_sweep)

    p_table = sub.add_parser("table", help="emit the reference scaling table as CSV")
    shared(p_table)
    p_table.set_defaults(func=cmd_table)

    p_val = sub.add_parser("validate", help="compare simulation against every closed form")
    shared(p_val)
    p_val.add_argument("--level", choices=("quick", "full"), default="quick")
    p_val.set_defaults(func=cmd_validate)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(func=cmd_serve)
    return parser


def _progress(args, message: str) -> None:
    if not getattr(args, "quiet", False):
        print(message, file=sys.stderr)


def _resolved_from_args(args, extra_keys=()) -> tuple[dict, dict]:
    file_values = {}
    if args.config is not None:
        file_values = parse_config_text(Path(args.config).read_text())
    flag_values = {}
    for key in ("seed", "n_traj", *extra_keys):
        value = getattr(args, key, None)
        if value is not None:
            flag_values[key] = value
    return resolve_config(file_values, flag_values)


def _request_from(resolved: dict, model_cls):
    fields = {}
    for name in model_cls.model_fields:
        if name == "experiment" and model_cls is models.SweepRequest:
            fields[name] = resolved["experiment"]
            continue
        if name in resolved and resolved[name] is not None:
            fields[name] = resolved[name]
    if model_cls is models.SweepRequest and resolved.get("grid") is not None:
        fields["grid"] = list(resolved["grid"])
    return model_cls(**fields)


def _prepare_out_dir(out: Path, manifest_hash: str) -> Path:
    """Create the output directory, refusing to mix runs.

    Artifacts already present must carry the same manifest hash; anything
    else means two different runs would get interleaved in one place.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for name in STAMPED_ARTIFACTS:
        path = out / name
        if path.exists():
            existing = embedded_manifest(path)
            if existing is not None and existing != manifest_hash:
                raise ConfigError(
                    f"{path} belongs to a different run (manifest {existing}, "
                    f"this run {manifest_hash}); use a fresh --out directory")
    return out


def _call(args, path: str, request_model, response_cls):
    """Dispatch one operation in process, or POST it to --server."""
    if args.server:
        import httpx
        resp = httpx.post(args.server.rstrip("/") + path,
                          json=request_model.model_dump(), timeout=None)
        resp.raise_for_status()
        return response_cls.model_validate(resp.json())
    handler = {"/simulate": ops.simulate_op, "/sweep": ops.sweep_op,
               "/validate": ops.validate_op}[path]
    return handler(request_model)


def cmd_simulate(args) -> int:
    resolved, provenance = _resolved_from_args(
        args, extra_keys=("N", "controller", "noise", "S", "chi_ratio"))
    request = _request_from(resolved, models.SimulateRequest)
    _progress(args, f"simulate: N={request.N:g}, controller={request.controller}, "
                    f"n_traj={request.n_traj}")
    response = _call(args, "/simulate", request, models.SimulateResponse)
    manifest = build_manifest("simulate", resolved, provenance,
                              hash_override=response.manifest_hash)
    payload = {"result": response.result.model_dump(),
               "samples_saved": len(response.samples)}
    if args.out is None:
        print(json.dumps({"manifest": manifest.hash, **payload}, indent=2, sort_keys=True))
        return 0
    out = _prepare_out_dir(args.out, manifest.hash)
    write_json(out / "manifest.json", manifest.payload())
    write_json(out / "result.json", payload, manifest.hash)
    header = ["trajectory", "t", "true_phase", "lo_phase", "estimate", "error"]
    rows = []
    for s in response.samples:
        for j in range(len(s.t)):
            rows.append([s.trajectory, s.t[j], s.true_phase[j], s.lo_phase[j],
                         s.estimate[j], s.error[j]])
    write_csv(out / "samples.csv", header, rows, manifest.hash)
    _progress(args, f"simulate: mse={response.result.mse:.6g} "
                    f"stderr={response.result.stderr:.2g} -> {out}")
    return 0


def cmd_sweep(args) -> int:
    resolved, provenance = _resolved_from_args(
        args, extra_keys=("experiment", "grid", "N", "squeeze_rule", "S"))
    if resolved["experiment"] == "simulate":
        print("error: sweep needs --experiment gain|n|squeeze|het-vs-adaptive",
              file=sys.stderr)
        return 2
    request = _request_from(resolved, models.SweepRequest)
    _progress(args, f"sweep: {request.experiment} over {request.grid}")
    response = _call(args, "/sweep", request, models.SweepResponse)
    manifest = build_manifest("sweep", resolved, provenance,
                              hash_override=response.manifest_hash)
    header, rows = _sweep_rows(response)
    n_failed = sum(1 for r in response.rows if r.error is not None)
    if args.out is None:
        print(render_csv(header, rows, manifest.hash), end="")
        return 1 if n_failed else 0
    out = _prepare_out_dir(args.out, manifest.hash)
    write_json(out / "manifest.json", manifest.payload())
    write_csv(out / "sweep.csv", header, rows, manifest.hash)
    write_json(out / "sweep.json", response.summary, manifest.hash)
    _progress(args, f"sweep: {len(response.rows)} points, {n_failed} failed -> {out}")
    return 1 if n_failed else 0


def _sweep_rows(response: models.SweepResponse) -> tuple[list[str], list[list]]:
    param_keys: list[str] = []
    for row in response.rows:
        for key in row.params:
            if key not in param_keys:
                param_keys.append(key)
    header = param_keys + ["mse", "stderr", "n_samples", "slip_count",
                           "analytic_prediction", "ratio", "seed", "error"]
    rows = []
    for row in response.rows:
        rows.append([row.params.get(k) for k in param_keys]
                    + [row.mse, row.stderr, row.n_samples, row.slip_count,
                       row.analytic, row.ratio, row.seed, row.error])
    return header, rows


def cmd_table(args) -> int:
    if args.server:
        import httpx
        resp = httpx.get(args.server.rstrip("/") + "/table",
                         params={"format": "csv"}, timeout=None)
        resp.raise_for_status()
        csv_text = resp.text
    else:
        csv_text = ops.table_csv_op()
    manifest = build_manifest("table", {"experiment": "table"}, {})
    stamped = f"# manifest={manifest.hash}\n" + csv_text
    if args.out is None:
        print(stamped, end="")
        return 0
    out = _prepare_out_dir(args.out, manifest.hash)
    write_json(out / "manifest.json", manifest.payload())
    (out / "table1.csv").write_text(stamped)
    _progress(args, f"table -> {out / 'table1.csv'}")
    return 0


def cmd_validate(args) -> int:
    request = models.ValidateRequest(level=args.level, seed=args.seed,
                                     n_traj=args.n_traj)
    _progress(args, f"validate: level={args.level}")
    response = _call(args, "/validate", request, models.ValidateResponse)
    width = max(len(c.name) for c in response.checks)
    for c in response.checks:
        status = "PASS" if c.passed else "FAIL"
        sim = "nan" if c.simulated is None else f"{c.simulated:.6g}"
        ref = "nan" if c.reference is None else f"{c.reference:.6g}"
        print(f"[{status}] {c.name:<{width}}  simulated={sim:>12} "
              f"reference={ref:>12} tol={c.tolerance:.3g}")
    print(("all checks passed" if response.all_passed else "CHECKS FAILED"))
    if args.out is not None:
        manifest = build_manifest("validate",
                                  {"level": args.level, "seed": response.seed}, {})
        out = _prepare_out_dir(args.out, manifest.hash)
        write_json(out / "manifest.json", manifest.payload())
        write_json(out / "validate.json", response.model_dump(), manifest.hash)
    return 0 if response.all_passed else 1


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("phasedyne.service.app:app", host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
