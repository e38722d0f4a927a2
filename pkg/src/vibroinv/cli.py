"""Command line front end: ``vibroinv {synth,reconstruct,modal,verify}``.

Exit status: 0 success, 2 bad configuration or input data, 3 numerical failure
(including a failed verification suite), 4 iteration budget exhausted (outputs
are still written).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import config as cfg
from . import helmholtz as hz
from . import io
from . import sparse
from .errors import BudgetExceeded, ConfigError, DataError, NumericalError, VibroError
from .forward import gamma_norm, synthesize_data
from .grid import inner_product_roi

log = logging.getLogger("vibroinv")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_BUDGET = 0, 2, 3, 4


def _experiment(args):
    doc = cfg.load(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    exp = cfg.build_experiment(doc, base, args.seed)
    if exp.backend:
        sparse.set_default_backend(exp.backend)
    if args.threads:
        exp.iteration.threads = args.threads
    return exp


def _rel_error(grid, est, truth):
    out = {}
    for name in ("kappa", "gamma"):
        t, e = getattr(truth, name), getattr(est, name)
        den = inner_product_roi(t, t, grid)
        num = inner_product_roi(e - t, e - t, grid)
        out[name] = float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))
    return out


def cmd_synth(args):
    exp = _experiment(args)
    if exp.truth is None:
        raise ConfigError("config field truth: required for synth")
    noise = exp.doc.get("noise", {})
    delta = float(noise.get("delta", 0.0))
    seed = args.seed if args.seed is not None else noise.get("seed")
    fine = fine_params = None
    if noise.get("fine_grid"):
        n = exp.doc["grid"]["n"]
        n_fine = [2 * k - 1 for k in n] if isinstance(n, list) else 2 * n - 1
        fine = cfg.build_instances(exp.doc, n_override=n_fine)
        fine_params = cfg.truth_params(exp.doc, fine[0].grid,
                                       os.path.dirname(os.path.abspath(args.config)))
    obs = synthesize_data(exp.instances, exp.truth, delta, seed, fine, fine_params)
    out = io.ensure_dir(args.out)
    g = exp.grid
    io.write_field(os.path.join(out, "truth_kappa.csv"), g, g.roi_nodes, exp.truth.kappa)
    io.write_field(os.path.join(out, "truth_gamma.csv"), g, g.roi_nodes, exp.truth.gamma)
    for inst, o in zip(exp.instances, obs):
        io.write_complex(os.path.join(out, io.data_name(inst.ell, inst.m)), inst.grid,
                         inst.grid.gamma_nodes, o.y)
    io.write_json(os.path.join(out, "meta.json"), dict(
        delta_relative=delta, seed=seed,
        delta_absolute=float(np.sqrt(sum(o.delta**2 for o in obs))),
        instances=[dict(ell=i.ell, m=i.m, clean_norm=o.clean_norm, noise_norm=o.delta)
                   for i, o in zip(exp.instances, obs)],
        fine_grid_n=(fine[0].grid.n if fine else None)))
    log.info("wrote %d data sets to %s", len(obs), out)
    return EXIT_OK


def _read_data(exp, data_dir):
    ys = []
    for inst in exp.instances:
        path = os.path.join(data_dir, io.data_name(inst.ell, inst.m))
        if not os.path.exists(path):
            raise DataError(f"missing data file {path}")
        nodes, y = io.read_complex(path)
        if not np.array_equal(nodes, inst.grid.gamma_nodes):
            raise DataError(f"{path}: receiver nodes do not match the configured grid")
        ys.append(y)
    return ys


def _noise_level(exp, data_dir, ys):
    meta = os.path.join(data_dir, "meta.json")
    if os.path.exists(meta):
        return float(io.read_json(meta).get("delta_absolute", 0.0))
    rel = float(exp.doc.get("noise", {}).get("delta", 0.0))
    norms = [gamma_norm(i.grid, y) for i, y in zip(exp.instances, ys)]
    return rel * float(np.sqrt(np.sum(np.square(norms))))


def cmd_reconstruct(args):
    exp = _experiment(args)
    data_dir = args.data or args.out
    ys = _read_data(exp, data_dir)
    delta = _noise_level(exp, data_dir, ys)
    status = EXIT_OK
    try:
        params, trace = _run(exp, ys, delta)
    except BudgetExceeded as exc:
        log.warning("%s", exc)
        params, trace, status = exc.params, exc.trace, EXIT_BUDGET
    out = io.ensure_dir(args.out)
    g = exp.grid
    io.write_field(os.path.join(out, "recon_kappa.csv"), g, g.roi_nodes, params.kappa)
    io.write_field(os.path.join(out, "recon_gamma.csv"), g, g.roi_nodes, params.gamma)
    P = len(exp.instances)
    header = ["n", *[f"residual_p{i.ell}_{i.m}" for i in exp.instances],
              "aggregate", "alpha", "ratio", "step_norm", "instance", "seconds"]
    rows = [[r["n"], *r["residuals"], r["aggregate"], r["alpha"], r["ratio"],
             r["step_norm"], r["instance"], r["seconds"]] for r in trace.rows]
    if trace.final:
        # the returned iterate, with no step taken from it
        f = trace.final
        rows.append([f["n"], *f["residuals"], f["aggregate"], np.nan, np.nan, np.nan, -1,
                     f["seconds"]])
    io.write_table(os.path.join(out, "trace.csv"), header, rows)
    summary = dict(stop_reason=trace.stop_reason, iterations=len(trace), delta=delta,
                   tau=exp.iteration.tau, instances=P, method=exp.iteration.method,
                   final_residual=trace.final.get("aggregate"))
    if exp.truth is not None:
        summary["relative_error"] = _rel_error(g, params, exp.truth)
    io.write_json(os.path.join(out, "summary.json"), summary)
    return status


def _run(exp, ys, delta):
    from .reconstruct import run
    return run(exp.instances, ys, exp.iteration, delta=delta)


def cmd_modal(args):
    from . import modal
    doc = cfg.load(args.config)
    m = doc.get("modal", {})
    if doc["grid"]["dim"] != 1:
        raise ConfigError("config field grid/dim: the modal path is one-dimensional")
    g = cfg._grid_from(doc)
    kappa0 = float(doc.get("physics", {}).get("kappa0", 1.0))
    med = hz.Medium.uniform(g, kappa0, 0.0)
    exc = modal.SeparableExcitation.affine(g, float(m.get("omega2", 20.0)),
                                           float(m.get("b_left", 1.0)),
                                           float(m.get("b_right", 2.0)))
    n_modes = int(m.get("n_modes", 8))
    if "truth_mode" in m:
        # same eigen call as the pipeline, so the mode signs agree
        eig = hz.eigensystem_Ac(g, med, hz.ImpedanceSet.uniform(g, 0.0),
                                min(max(n_modes + 1, m["truth_mode"] + 1), g.num_nodes))
        gp = eig.vectors[:, m["truth_mode"]] / exc.b_field
    else:
        spec = doc.get("truth", {}).get("gamma")
        if spec is None:
            raise ConfigError("config field modal: need truth_mode or truth/gamma")
        gp = cfg.field_values(spec, g.coords, os.path.dirname(os.path.abspath(args.config)))
    eps0 = float(m.get("eps0", 1e-3))
    res = modal.run_modal(g, med, exc, n_modes, eps0, gamma_prime=gp,
                          n_background=int(m.get("n_background", 200)), b_min=m.get("b_min"))
    out = io.ensure_dir(args.out)
    roots = np.sqrt(np.maximum(res.eig.values[:n_modes], 0.0))
    io.write_table(os.path.join(out, "poles.csv"), ["index", "detected", "eigen_root"],
                   [[i, p, float(roots[np.argmin(np.abs(roots - p))])]
                    for i, p in enumerate(res.poles)])
    io.write_table(os.path.join(out, "coeffs.csv"), ["ell", "j", "value"],
                   [[ell, 1, float(np.real(c))] for ell, c in enumerate(res.coefficients)])
    rec = res.recovery
    io.write_field(os.path.join(out, "gamma_prime.csv"), g, np.flatnonzero(rec.mask),
                   rec.gamma_prime[rec.mask], name="gamma_prime")
    io.write_table(os.path.join(out, "masked_nodes.csv"), ["node_index"],
                   [[int(i)] for i in np.flatnonzero(~rec.mask)])
    w = g.cell_weights * kappa0
    e = np.where(rec.mask, rec.gamma_prime - gp, 0.0)
    den = np.sum(w * gp**2)
    err = np.sqrt(np.sum(w * e**2) / den) if den > 0 else np.sqrt(np.sum(w * e**2))
    io.write_json(os.path.join(out, "summary.json"), dict(poles=res.poles,
                                                          relative_error=float(err)))
    return EXIT_OK


def cmd_verify(args):
    from . import verify
    report = verify.run_all(break_adjoint=args.break_adjoint)
    text = json.dumps(report, indent=2, default=io._jsonable)
    print(text)
    if args.out:
        io.ensure_dir(args.out)
        io.write_json(os.path.join(args.out, "verify.json"), report)
    return EXIT_OK if report["passed"] else EXIT_NUMERIC


def build_parser():
    p = argparse.ArgumentParser(prog="vibroinv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", required=config, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the RNG seed")
        sp.add_argument("--threads", type=int, default=None, help="worker threads")

    common(sub.add_parser("synth", help="synthesize noisy observations"))
    rp = sub.add_parser("reconstruct", help="recover coefficients from data")
    common(rp)
    rp.add_argument("--data", default=None, help="data directory (default: --out)")
    common(sub.add_parser("modal", help="multi-frequency modal recovery (1-D)"))
    vp = sub.add_parser("verify", help="run the numerical self-checks")
    common(vp, config=False)
    vp.add_argument("--break-adjoint", action="store_true", help=argparse.SUPPRESS)
    return p


COMMANDS = dict(synth=cmd_synth, reconstruct=cmd_reconstruct, modal=cmd_modal,
                verify=cmd_verify)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except VibroError as exc:
        # configuration, data and geometry problems
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
