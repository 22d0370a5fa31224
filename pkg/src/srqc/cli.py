"""Command line front end.

Every subcommand takes a model (a path, or the name of a bundled model such
as ``martinet``) and prints key-value lines followed by tab-separated
tables. Exit codes: 0 success, 1 module error, 64 usage error; the
``criterion`` subcommand returns 0, 2 or 3 for SATISFIED, NOT_SATISFIED and
INCONCLUSIVE.
"""

from __future__ import annotations

import argparse
import io
import math
import sys
from pathlib import Path

import numpy as np

from . import criterion as cr
from . import expr as ex
from .distance import delta, fermi_chart, injectivity_probe, z_grid
from .errors import FlagTransition, NotBracketGenerating, SRQCError
from .geodesics import convergence_order, integrate, write_tsv
from .models import load_model
from .operators import CotangentPoint, sublaplacian
from .popp import popp_density
from .srgeom import flag_at

EX_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _param(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError("parameters look like name=value")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("model", help="model file or bundled model name")
    common.add_argument("--param", type=_param, action="append", default=[],
                        help="override a model parameter, e.g. k=3")
    common.add_argument("--side", help="side of Z (pos or neg)")
    common.add_argument("--tol", type=float, default=1e-9, help="rank tolerance")
    common.add_argument("--grid", type=int, help="grid size (meaning depends on subcommand)")
    common.add_argument("--eps", type=float, help="width of the near-Z region")
    common.add_argument("--steps", type=int, default=1000, help="integration steps")
    common.add_argument("--seed", type=int, default=0, help="seed for randomised sweeps")
    common.add_argument("--out", help="directory for tables, reports and figures")

    p = _Parser(prog="srqc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    sub.add_parser("flag", parents=[common], help="growth vectors along a line through Z")
    sub.add_parser("popp", parents=[common], help="Popp density table")
    lp = sub.add_parser("laplacian", parents=[common], help="apply the sub-Laplacian to an expression")
    lp.add_argument("--expr", required=True)
    gp = sub.add_parser("geodesic", parents=[common], help="integrate a normal extremal")
    gp.add_argument("--point", type=_floats, required=True)
    gp.add_argument("--covector", type=_floats, required=True)
    gp.add_argument("--time", type=float, default=1.0)
    dp = sub.add_parser("distance", parents=[common], help="distance from Z by shooting")
    dp.add_argument("--point", type=_floats, action="append", required=True)
    dp.add_argument("--tmax", type=float, default=1.0)
    sub.add_parser("veff", parents=[common], help="effective potential by both routes")
    cp = sub.add_parser("criterion", parents=[common], help="verdict on the near-Z inequality")
    cp.add_argument("--route", choices=("closed-form", "fermi"), default="closed-form")
    sp = sub.add_parser("spectrum", parents=[common], help="spectrum of a 1D reduction")
    sp.add_argument("--mode", type=int, default=0)
    sp.add_argument("--cutoff", type=float, default=1e-3)
    sp.add_argument("--xmax", type=float)
    sp.add_argument("--howmany", type=int, default=5)
    sub.add_parser("report", parents=[common], help="validation, Popp, V_eff and verdict")
    return p


# -- helpers ---------------------------------------------------------------

def _kv(out, key, value):
    out.write(f"{key}: {value}\n")


def _fmt(v):
    return f"{v:.12g}"


def _row(out, values):
    out.write("\t".join(v if isinstance(v, str) else _fmt(v) for v in values) + "\n")


def _line_points(model, side, n):
    """Points on the normal coordinate line through the centre of Z, on one side."""
    centre = [(lo + hi) / 2 for lo, hi in model.box]
    if model.Z is None:
        j = 0
        lo, hi = model.box[0]
        xs = np.linspace(lo, hi, n)
    else:
        j = model.Z.solve_for - 1
        q = model.Z.point_on([centre[i - 1] for i in model.Z.param_indices])
        centre = list(q)
        sgn = model.Z.side_sign(side)
        dj = model.Z.grad(q)[j]
        lo, hi = model.box[j]
        reach = hi - q[j] if sgn * dj > 0 else q[j] - lo
        xs = q[j] + math.copysign(1.0, sgn * dj) * np.linspace(0.0, reach, n)
    pts = []
    for x in xs:
        p = list(centre)
        p[j] = x
        pts.append(p)
    return pts


def _side_label(model, args):
    return args.side if args.side else next(iter(model.sides))


def _eps(model, args, side):
    if args.eps is not None:
        return args.eps
    if model.eps is not None:
        return model.eps
    us = z_grid(model.Z, model.zbox, 3)
    probe = injectivity_probe(model.side(side).structure, model.Z, us, 1.0, side)
    return probe.eps0


def _write(out_dir, name, text):
    if out_dir is None:
        return
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / name).write_text(text, encoding="utf-8")


# -- subcommands -----------------------------------------------------------

def cmd_flag(model, args, out):
    side = _side_label(model, args)
    s = model.side(side).structure
    _kv(out, "model", model.name)
    _kv(out, "side", side)
    out.write("\t".join([f"x{i}" for i in range(1, model.dim + 1)] + ["dims", "step"]) + "\n")
    for p in _line_points(model, side, args.grid or 11):
        try:
            g = flag_at(s, p, model.max_depth, args.tol)
            dims, step = ",".join(map(str, g.dims)), str(g.step)
        except NotBracketGenerating:
            dims, step = "not-generating", "-"
        except SRQCError:
            dims, step = "undefined", "-"
        _row(out, list(p) + [dims, step])
    return 0


def cmd_popp(model, args, out):
    side = _side_label(model, args)
    sd = model.side(side)
    _kv(out, "model", model.name)
    _kv(out, "side", side)
    cols = [f"x{i}" for i in range(1, model.dim + 1)] + ["density", "closed_form", "bdets"]
    out.write("\t".join(cols) + "\n")
    for p in _line_points(model, side, args.grid or 11):
        try:
            r = popp_density(sd.structure, p, args.tol, model.max_depth)
            dens, bd = _fmt(r.density), ",".join(_fmt(b) for b in r.bdets)
        except FlagTransition:
            dens, bd = "flag-transition", "-"
        except SRQCError:
            dens, bd = "undefined", "-"
        try:
            cf = _fmt(sd.measure.at(p)) if sd.measure.symbolic and sd.measure_kind == "popp" else "-"
        except SRQCError:
            cf = "undefined"
        _row(out, list(p) + [dens, cf, bd])
    return 0


def cmd_laplacian(model, args, out):
    side = _side_label(model, args)
    sd = model.side(side)
    u = ex.parse(args.expr, model.dim, signs=sd.signs, params=model.params)
    L = sublaplacian(u, sd.structure, sd.measure) if sd.measure.symbolic else None
    if L is None:
        raise SRQCError("the sub-Laplacian needs a symbolic measure density")
    _kv(out, "model", model.name)
    _kv(out, "side", side)
    _kv(out, "u", ex.to_string(u))
    _kv(out, "laplacian", ex.to_string(ex.simplify(L)))
    out.write("\t".join([f"x{i}" for i in range(1, model.dim + 1)] + ["value"]) + "\n")
    for p in _line_points(model, side, args.grid or 6)[1:]:
        try:
            v = _fmt(float(ex.evaluate(L, p)))
        except SRQCError:
            v = "undefined"
        _row(out, list(p) + [v])
    return 0


def cmd_geodesic(model, args, out):
    side = _side_label(model, args)
    s = model.side(side).structure
    if len(args.point) != model.dim or len(args.covector) != model.dim:
        raise UsageError(f"--point and --covector need {model.dim} numbers")
    start = CotangentPoint(args.point, args.covector)
    tr = integrate(s, start, args.time, args.steps, box=model.box)
    order = convergence_order(s, start, args.time, 20) if tr.H0 > 0 else float("nan")
    _kv(out, "model", model.name)
    _kv(out, "side", side)
    _kv(out, "H0", _fmt(tr.H0))
    _kv(out, "Hdrift", f"{tr.Hdrift:.3e}")
    _kv(out, "drift_flagged", str(tr.drift_flagged).lower())
    _kv(out, "truncated", str(tr.truncated).lower())
    _kv(out, "observed_order", f"{order:.3f}")
    buf = io.StringIO()
    write_tsv(tr, buf)
    out.write(buf.getvalue())
    _write(args.out, "geodesic.tsv", buf.getvalue())
    return 0


def cmd_distance(model, args, out):
    if model.Z is None:
        raise SRQCError("the model has no singular set")
    _kv(out, "model", model.name)
    out.write("\t".join([f"x{i}" for i in range(1, model.dim + 1)]
                        + ["delta", "side", "residual"] + [f"foot{i}" for i in range(1, model.dim + 1)]) + "\n")
    structs = model.structures()
    for p in args.point:
        if len(p) != model.dim:
            raise UsageError(f"--point needs {model.dim} numbers")
        try:
            r = delta(structs, model.Z, p, model.zbox, t_max=args.tmax,
                      grid=args.grid or 64)
            side = r.covector.side if r.covector is not None else "-"
            _row(out, list(p) + [r.value, side, f"{r.residual:.2e}"] + list(r.foot))
        except SRQCError as e:
            bound = getattr(e, "upper_bound", None)
            _row(out, list(p) + ["outside-tube", "-", "-", f"bound={bound}"] + ["-"] * (model.dim - 1))
    return 0


def _closed_form_V(sd):
    if sd.delta is None:
        raise SRQCError("the closed-form route needs a declared distance")
    if not sd.measure.symbolic:
        raise SRQCError("the closed-form route needs a symbolic measure density")
    return cr.veff_closed_form(sd.delta, sd.structure, sd.measure)


def cmd_veff(model, args, out):
    side = _side_label(model, args)
    sd = model.side(side)
    eps = _eps(model, args, side)
    V = _closed_form_V(sd)
    fV = ex.lambdify([V], model.dim)
    _kv(out, "model", model.name)
    _kv(out, "side", side)
    _kv(out, "veff", ex.to_string(ex.simplify(V)))
    centre = np.array([[(lo + hi) / 2 for lo, hi in model.zbox]])
    levels = cr.delta_levels(eps / 1.02, args.grid or 12, 10)
    out.write("delta\tveff_closed\tveff_fermi\tdifference\n")
    for lvl in levels:
        t = lvl * (1.0 + 0.01 * np.arange(-2, 3))
        try:
            ch = fermi_chart(sd.structure, model.Z, sd.measure, centre, t, side, max_dt=min(1e-3, lvl * 0.01))
            smp = cr.veff_fermi(ch)[0]
            vc = float(fV.raw(*np.array(smp.point))[0])
            _row(out, [smp.delta, vc, smp.veff, f"{smp.veff - vc:.3e}"])
        except (SRQCError, ValueError) as e:
            p = _line_root_point(model, sd, side, lvl)
            vc = float(fV.raw(*np.array(p))[0])
            _row(out, [lvl, vc, "unavailable", str(e).split("\n")[0]])
    return 0


def _line_root_point(model, sd, side, level):
    smp = cr.LevelSetSampler(ex.ZERO, sd.delta, model.Z, side, model.zbox)
    centre = np.array([(lo + hi) / 2 for lo, hi in model.zbox])
    return smp._points(centre[None, :], level)[0]


def _criterion(model, args, side, route):
    sd = model.side(side)
    eps = _eps(model, args, side)
    if route == "fermi":
        us = np.array([[(lo + hi) / 2 for lo, hi in model.zbox]])
        samples = cr.sample_fermi(sd.structure, sd.measure, model.Z, side, eps, us)
    else:
        V = _closed_form_V(sd)
        samples = cr.sample_closed_form(V, sd.delta, model.Z, side, eps, model.zbox, sd.extras)
    return cr.criterion_verdict(samples, eps), eps


def cmd_criterion(model, args, out):
    if model.Z is None:
        raise SRQCError("the model has no singular set; the criterion does not apply")
    side = _side_label(model, args)
    rep, _ = _criterion(model, args, side, args.route)
    text = cr.format_report(rep, [("model", model.name), ("side", side), ("route", args.route)])
    out.write(text)
    _write(args.out, f"criterion_{side}.txt", text)
    return rep.exit_code


def cmd_spectrum(model, args, out):
    from . import spectral
    side = _side_label(model, args)
    op = spectral.reduce_1d(model, args.mode, side, args.cutoff, args.xmax)
    grid = args.grid or 4000
    _kv(out, "model", model.name)
    _kv(out, "mode", str(args.mode))
    _kv(out, "W", ex.to_string(ex.simplify(op.W)))
    _kv(out, "interval", f"({_fmt(op.interval[0])}, {_fmt(op.interval[1])})")
    _kv(out, "grid", str(grid))
    res = {bc: spectral.eigenvalues(op, grid, bc, args.howmany) for bc in spectral.BCS}
    out.write("index\tdirichlet\tneumann\n")
    for i in range(len(res["dirichlet"].eigenvalues)):
        _row(out, [str(i), res["dirichlet"].eigenvalues[i], res["neumann"].eigenvalues[i]])
    cutoffs = [c for c in (1e-1, 1e-2, 1e-3) if c >= args.cutoff] or [args.cutoff]
    rows = spectral.confinement_probe(op, [grid], cutoffs)
    out.write("cutoff\tlambda_dirichlet\tlambda_neumann\tspread\n")
    for r in rows:
        _row(out, [r.cutoff, r.dirichlet, r.neumann, f"{r.spread:.3e}"])
    if args.out:
        from .plotting import plot_spectrum
        Path(args.out).mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        res["dirichlet"].write_tsv(buf)
        _write(args.out, "spectrum.tsv", buf.getvalue())
        plot_spectrum(res["dirichlet"].eigenvalues, Path(args.out) / "spectrum.png",
                      f"{model.name}, mode {args.mode}")
    return 0


def cmd_report(model, args, out):
    if model.Z is None:
        raise SRQCError("the model has no singular set; nothing to report near Z")
    side = _side_label(model, args)
    sd = model.side(side)
    out.write("[model]\n")
    _kv(out, "name", model.name)
    _kv(out, "params", ",".join(f"{k}={v}" for k, v in sorted(model.params.items())) or "-")
    _kv(out, "side", side)
    for n in model.notes:
        _kv(out, "note", n)
    for w in model.warnings:
        _kv(out, "warning", w)

    out.write("\n[popp]\n")
    eps = _eps(model, args, side)
    ts = eps * 2.0 ** -np.arange(0, 12)
    pts = [_line_root_point(model, sd, side, t) for t in ts] if sd.delta is not None else []
    dens = []
    out.write("delta\tdensity\n")
    for t, p in zip(ts, pts):
        try:
            v = sd.measure.at(p) if sd.measure.symbolic else popp_density(sd.structure, p).density
        except (SRQCError, OverflowError):
            v = float("nan")
        dens.append(v)
        _row(out, [t, v])

    out.write("\n[regularity]\n")
    if sd.measure_kind == "popp" and sd.measure.symbolic:
        flog = ex.lambdify([sd.measure.log_rho()], model.dim)
        log_density = lambda P: np.asarray(flog.raw(*np.asarray(P).T)[0], dtype=float) * np.ones(len(P))
    else:
        log_density = None
    try:
        us = np.array([[(lo + hi) / 2 for lo, hi in model.zbox]])
        pr = cr.popp_regularity_probe(sd.structure, model.Z, us, eps * 2.0 ** -np.arange(2, 14), side,
                                      log_density=log_density)
        _kv(out, "fitted_exponent", _fmt(pr.fitted_exponent))
        _kv(out, "integer_consistency", str(pr.integer_consistency).lower())
        _kv(out, "submersion_ok", str(pr.submersion_ok).lower())
        if pr.reason:
            _kv(out, "rejected", pr.reason)
    except SRQCError as e:
        _kv(out, "unavailable", str(e))

    out.write("\n[criterion]\n")
    rep, eps = _criterion(model, args, side, "closed-form")
    text = cr.format_report(rep, [("route", "closed-form")])
    out.write(text)
    if args.out:
        from .plotting import plot_density, plot_kappa, plot_veff
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        good = [(t, v) for t, v in zip(ts, dens) if np.isfinite(v) and v > 0]
        if good:
            plot_density(*zip(*good), d / "popp.png", f"{model.name} ({side})")
        plot_veff(rep, d / "veff.png", f"{model.name} ({side})")
        plot_kappa(rep, d / "kappa.png", f"{model.name} ({side})")
        buf = io.StringIO()
        buf.write("delta\tveff\tkappa\troute\n")
        for e in sorted(rep.samples, key=lambda e: (e.delta, e.point)):
            buf.write(f"{e.delta:.9e}\t{e.veff:.9e}\t{e.kappa:.6e}\t{e.route}\n")
        _write(args.out, "samples.tsv", buf.getvalue())
    return rep.exit_code


COMMANDS = {"flag": cmd_flag, "popp": cmd_popp, "laplacian": cmd_laplacian,
            "geodesic": cmd_geodesic, "distance": cmd_distance, "veff": cmd_veff,
            "criterion": cmd_criterion, "spectrum": cmd_spectrum, "report": cmd_report}


def dispatch(argv, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        err.write(f"{e}\n")
        return EX_USAGE
    except SystemExit as e:       # --help
        return int(e.code or 0)
    buf = io.StringIO()
    try:
        model = load_model(args.model, dict(args.param), seed=args.seed)
        if args.side is not None and args.side not in model.sides:
            raise UsageError(f"model {model.name!r} has no side {args.side!r}")
        code = COMMANDS[args.command](model, args, buf)
    except UsageError as e:
        err.write(f"srqc: {e}\n")
        return EX_USAGE
    except SRQCError as e:
        out.write(buf.getvalue())
        err.write(f"srqc: error: {e}\n")
        return 1
    text = buf.getvalue()
    out.write(text)
    if args.command == "report":
        _write(args.out, "report.txt", text)
    return code


def main(argv=None) -> int:
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
