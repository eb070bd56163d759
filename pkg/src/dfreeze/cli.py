"""``dfreeze`` command-line front end."""
from __future__ import annotations

import argparse
import ast
import math
import operator
import os
import sys

import numpy as np

from . import __version__
from .activity import (
    counting_distribution_analytic,
    counting_distribution_mc,
    mode_bin_edges,
    multimodality,
    scgf,
    total_variation,
)
from .errors import DfreezeError, NumericalError, TrajectoryError, ValidationError
from .freezing import detect_freezing, eigenspace_labels, selection_statistics
from .liouvillian import analytic_spectrum, build_liouvillian, match_analytic, spectrum
from .output import RunManifest, now, params_digest, render_csv, sha256_text, write_outputs
from .phase import critical_line, scan
from .spin import ModelParams, build_spin_operators
from .trajectories import TrajectoryConfig, run_ensemble, suggest_dt

EXIT_OK, EXIT_MISMATCH, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3

_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
}


def _eval(node):
    if isinstance(node, ast.Expression):
        return _eval(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id == "pi":
        return math.pi
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval(node.left), _eval(node.right))
    raise ValueError("unsupported expression")


def parse_number(text: str) -> float:
    """A float, or arithmetic on numbers and ``pi`` such as ``pi/4`` or ``3*pi/8``."""
    try:
        return float(text)
    except ValueError:
        pass
    try:
        value = _eval(ast.parse(text.strip(), mode="eval"))
    except (SyntaxError, ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"cannot parse number {text!r}") from exc
    return value


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` (inclusive of stop) or a comma list."""
    if ":" not in text:
        return [parse_number(t) for t in text.split(",") if t.strip()]
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"grid must be start:stop:step, got {text!r}")
    a, b, h = (parse_number(p) for p in parts)
    if h <= 0 or b < a:
        raise argparse.ArgumentTypeError(f"empty grid {text!r}")
    n = int(math.floor((b - a) / h + 1e-9))
    return [a + i * h for i in range(n + 1)]


def parse_initial(spec: str, J: float) -> np.ndarray:
    """Initial state (S_z basis vector, or density matrix for ``uniform-diag``)."""
    ops = build_spin_operators(ModelParams(J=J, Omega=0.0, theta=0.0))
    spec = spec.strip()
    if spec == "uniform-diag":
        return np.eye(ops.dim, dtype=complex) / ops.dim
    kind, _, body = spec.partition(":")
    if kind not in ("sx", "sz") or not body:
        raise ValidationError(f"cannot parse initial state {spec!r}")

    def value(tok):
        tok = tok.strip().replace("J", repr(J))
        try:
            return _eval(ast.parse(tok, mode="eval"))
        except (SyntaxError, ValueError, ZeroDivisionError) as exc:
            raise ValidationError(f"cannot parse {tok!r} in initial state") from exc

    psi = np.zeros(ops.dim, dtype=complex)
    for item in body.split(","):
        m_txt, _, w_txt = item.partition("*")
        m = value(m_txt)
        w = value(w_txt) if w_txt else 1.0
        psi += w * (ops.sx_state(m) if kind == "sx" else ops.sz_state(m))
    nrm = np.linalg.norm(psi)
    if nrm == 0:
        raise ValidationError(f"initial state {spec!r} has zero norm")
    return psi / nrm


def _model(a) -> ModelParams:
    return ModelParams(J=a.J, Omega=a.omega, theta=a.theta, Gamma=a.gamma)


def _sx_populations(state: np.ndarray, J: float) -> np.ndarray:
    ops = build_spin_operators(ModelParams(J=J, Omega=0.0, theta=0.0))
    V = ops.sxBasis
    rho = np.outer(state, state.conj()) if state.ndim == 1 else state
    return np.clip(np.diag(V.conj().T @ rho @ V).real, 0, None)


def cmd_spectrum(a, emit):
    p = _model(a)
    sp = spectrum(build_liouvillian(p))
    an = analytic_spectrum(p)
    rep = match_analytic(sp, an)
    emit("eigenvalues.csv", ["index", "re", "im"], [(i, w.real, w.imag) for i, w in enumerate(sp.eigenvalues)])
    emit("analytic.csv", ["q", "k", "sign", "re", "im"], [(q, k, sg, complex(l).real, complex(l).imag) for q, k, sg, l in an.entries])
    emit(
        "match.csv",
        ["numeric_re", "numeric_im", "analytic_re", "analytic_im", "distance"],
        [(x.real, x.imag, y.real, y.imag, d) for x, y, d in zip(rep.numeric, rep.analytic, rep.distances)],
    )
    emit(
        "summary.csv",
        ["nullDim", "nullTol", "adr_re", "adr_im", "tau", "match_max_distance"],
        [(sp.nullDim, sp.nullTol, sp.adr.real, sp.adr.imag, sp.tau, rep.max_distance)],
    )


def _trajectory_config(a, p, tfinal, sample_every=None):
    dt = a.dt if a.dt is not None else suggest_dt(p)
    a.dt = dt
    every = sample_every if sample_every is not None else int(round(tfinal / dt))
    return TrajectoryConfig(p, tFinal=tfinal, dt=dt, sampleEvery=every, seed=a.seed)


def cmd_trajectory(a, emit):
    p = _model(a)
    if a.ntraj < 1:
        raise ValidationError("--ntraj must be at least 1")
    psi0 = parse_initial(a.initial, p.J)
    cfg = _trajectory_config(a, p, a.tfinal, a.sample_every)
    ens = run_ensemble(cfg, psi0, a.ntraj, threads=a.threads)
    m = np.arange(p.dim) - p.J
    rows = []
    for i, r in enumerate(ens.records):
        pops = r.sx_populations()
        rows.extend((i, t, *row) for t, row in zip(r.times, pops))
    emit("populations.csv", ["traj", "t", *[f"p_m={fmt_m(x)}" for x in m]], rows)
    stats = selection_statistics(ens, psi0 if psi0.ndim == 1 else None, threshold=a.threshold)
    emit(
        "verdicts.csv",
        ["traj", "seed", "jumps", "selected_abs_m", "frozen", "freeze_time", "decay_rate", "final_population"],
        [
            (i, r.seed, r.n, v.selectedEigenspace, v.frozen, v.freezeTime, v.decayRate, v.finalPopulation)
            for i, (r, v) in enumerate(zip(ens.records, stats.verdicts))
        ],
    )
    exp = stats.expected if stats.expected is not None else [None] * len(stats.eigenspaces)
    emit(
        "selection.csv",
        ["abs_m", "fraction", "stderr", "expected"],
        list(zip(stats.eigenspaces, stats.fractions, stats.stderr, exp)),
    )
    emit("sx_conservation.csv", ["t", "sx_mean", "sx_stderr"], list(zip(stats.times, stats.sxMean, stats.sxStderr)))


def fmt_m(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else f"{x:g}"


def cmd_counting(a, emit):
    p = _model(a)
    mode = a.mode or ("analytic" if p.is_symmetric else "mc")
    if mode in ("analytic", "both") and not p.is_symmetric:
        raise ValidationError("analytic counting statistics need theta = pi/4")
    state = parse_initial(a.initial, p.J)
    c0diag = _sx_populations(state, p.J)
    c0diag = c0diag / c0diag.sum()
    ana = mc = None
    if mode in ("analytic", "both"):
        ana = counting_distribution_analytic(c0diag, a.T, p)
    if mode in ("mc", "both"):
        if a.ntraj < 1:
            raise ValidationError("--ntraj must be at least 1")
        cfg = _trajectory_config(a, p, a.T)
        ens = run_ensemble(cfg, state, a.ntraj, threads=a.threads)
        mc = counting_distribution_mc(ens, p, c0diag)
    size = max(d.K.size for d in (ana, mc) if d is not None)
    cols = ["K"]
    if ana is not None:
        cols.append("p_analytic")
    if mc is not None:
        cols += ["p_mc", "stderr_mc"]
    rows = []
    for K in range(size):
        row = [K]
        if ana is not None:
            row.append(float(ana.probs[K]) if K < ana.K.size else 0.0)
        if mc is not None:
            row += [float(mc.probs[K]) if K < mc.K.size else 0.0, float(mc.stderr[K]) if K < mc.K.size else 0.0]
        rows.append(row)
    emit("counting.csv", cols, rows)
    peak_rows = []
    # with the exact distribution at hand, MC noise peaks add nothing; the
    # per-mode masses below carry the comparison instead
    for name, d in (("analytic", ana), ("mc", mc if ana is None else None)):
        if d is None:
            continue
        rep = multimodality(d, a.prominence)
        for pk, sec, off in zip(rep.peaks, rep.matchedSector, rep.offsets):
            peak_rows.append((name, pk.K, pk.height, pk.prominence, sec, off))
    emit("peaks.csv", ["source", "K", "height", "prominence", "abs_m", "offset_from_centre"], peak_rows)
    if ana is not None and mc is not None:
        edges = mode_bin_edges(ana)
        centres = sorted({kc: m for m, kc in ana.modeCenters}.items())
        emit(
            "mode_mass.csv",
            ["abs_m", "centre", "K_low", "K_high", "mass_analytic", "mass_mc"],
            [
                (m, kc, lo, hi, float(ana.probs[(ana.K > lo) & (ana.K < hi)].sum()), float(mc.probs[(mc.K > lo) & (mc.K < hi)].sum()))
                for (kc, m), lo, hi in zip(centres, edges[:-1], edges[1:])
            ],
        )
        emit(
            "tv.csv",
            ["tv_per_K", "tv_per_mode"],
            [(total_variation(ana, mc), total_variation(ana, mc, mode_bin_edges(ana)))],
        )


def cmd_sensemble(a, emit):
    if a.ds <= 0 or a.smax <= a.smin:
        raise ValidationError("need smin < smax and ds > 0")
    n = int(round((a.smax - a.smin) / a.ds))
    grid = np.linspace(a.smin, a.smax, n + 1)
    rows = []
    for th in a.thetas:
        p = ModelParams(J=a.J, Omega=a.omega, theta=th, Gamma=a.gamma)
        cv = scgf(p, grid, strict=False)
        for s, lam, act, im, near in zip(cv.sGrid, cv.lam, cv.activity, cv.imagResidual, cv.nearDegenerate):
            rows.append((th, s, lam, act, im, bool(near), cv.activityLeft0, cv.activityRight0, cv.errors.get(float(s), "")))
    emit(
        "sensemble.csv",
        ["theta", "s", "lambda", "activity", "imag_residual", "near_degenerate", "activity_left0", "activity_right0", "error"],
        rows,
    )


def cmd_phase_diagram(a, emit):
    initial = parse_initial(a.initial, a.J)
    pts = scan(a.omega_grid, a.theta_grid, a.J, a.gamma, initial=initial)
    emit(
        "phase.csv",
        ["omega", "theta", "M", "xi2", "purity", "mean_spin_norm", "adr_re", "adr_im", "flags", "error"],
        [
            (
                pt.Omega,
                pt.theta,
                pt.Mz,
                "undefined" if math.isnan(pt.xi2) and pt.error is None else pt.xi2,
                pt.purity,
                pt.meanSpinNorm,
                pt.adr.real,
                pt.adr.imag,
                "|".join(pt.flags),
                pt.error or "",
            )
            for pt in pts
        ],
    )
    th = np.asarray(a.theta_grid)
    oc = critical_line(th, a.gamma)
    # beyond pi/4 the signed value is negative; its magnitude is the spin-flipped line
    emit("critical_line.csv", ["theta", "omega_c", "omega_c_abs"], list(zip(th.tolist(), oc.tolist(), np.abs(oc).tolist())))


COMMANDS = {
    "spectrum": cmd_spectrum,
    "trajectory": cmd_trajectory,
    "counting": cmd_counting,
    "sensemble": cmd_sensemble,
    "phase-diagram": cmd_phase_diagram,
}

# Flags that steer where or how fast a run happens, not what it computes.
_NOT_PARAMS = {"command", "out", "config", "threads", "manifest"}


def _common(sp, theta=True):
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--J", type=parse_number, help="collective spin (half-integer)")
    g.add_argument("--N", type=int, help="number of spins, J = N/2")
    sp.add_argument("--omega", type=parse_number, default=1.0, help="drive amplitude")
    if theta:
        sp.add_argument("--theta", type=parse_number, default=math.pi / 4, help="squeezing angle, e.g. pi/4")
    sp.add_argument("--gamma", type=parse_number, default=1.0, help="collective decay rate")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=1, help="0 picks the CPU count")
    sp.add_argument("--out", default=".", help="output directory")
    sp.add_argument("--config", help="key=value file; command-line flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dfreeze", description="Dissipative freezing in a driven collective spin.")
    ap.add_argument("--version", action="version", version=f"dfreeze {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("spectrum", help="Liouvillian spectrum and the large-drive closed form")
    _common(sp)

    sp = sub.add_parser("trajectory", help="quantum-jump trajectories and freezing verdicts")
    _common(sp)
    sp.add_argument("--initial", default="sz:-J")
    sp.add_argument("--ntraj", type=int, default=3)
    sp.add_argument("--tfinal", type=parse_number, default=100.0)
    sp.add_argument("--dt", type=parse_number)
    sp.add_argument("--sample-every", type=int, default=100)
    sp.add_argument("--threshold", type=float, default=0.999)

    sp = sub.add_parser("counting", help="jump-count distribution")
    _common(sp)
    sp.add_argument("--T", type=parse_number, default=3000.0)
    sp.add_argument("--mode", choices=["analytic", "mc", "both"])
    sp.add_argument("--initial", default="uniform-diag")
    sp.add_argument("--ntraj", type=int, default=2000)
    sp.add_argument("--dt", type=parse_number)
    sp.add_argument("--prominence", type=float, default=1e-3)

    sp = sub.add_parser("sensemble", help="scaled cumulant generating function of the jump count")
    _common(sp, theta=False)
    sp.add_argument("--thetas", type=parse_grid, default=parse_grid("0.6:1.0:0.01"))
    sp.add_argument("--smin", type=parse_number, default=-1.0)
    sp.add_argument("--smax", type=parse_number, default=1.0)
    sp.add_argument("--ds", type=parse_number, default=0.01)

    sp = sub.add_parser("phase-diagram", help="steady-state magnetisation and squeezing")
    _common(sp, theta=False)
    sp.add_argument("--omega-grid", type=parse_grid, default=parse_grid("0:2:0.05"))
    sp.add_argument("--theta-grid", type=parse_grid, default=parse_grid("0:pi/2:0.05"))
    sp.add_argument("--initial", default="sz:-J")

    sp = sub.add_parser("replay", help="re-run a manifest and compare output digests")
    sp.add_argument("manifest")
    sp.add_argument("--out", required=True)
    return ap


def read_config(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValidationError(f"{path}:{lineno}: expected key=value")
            out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _apply_config(ap, argv, args):
    cfg = read_config(args.config)
    sub = next(a for a in ap._subparsers._group_actions if isinstance(a, argparse._SubParsersAction))
    sp = sub.choices[args.command]
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, raw in cfg.items():
        if key not in actions or key in ("help", "config", "out"):
            raise ValidationError(f"unknown config key {key!r}")
        act = actions[key]
        try:
            defaults[key] = act.type(raw) if act.type else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise ValidationError(f"config key {key!r}: {exc}") from exc
    sp.set_defaults(**defaults)
    return ap.parse_args(argv)


def _resolve(args):
    if args.N is not None:
        if args.N < 1:
            raise ValidationError("--N must be positive")
        args.J = args.N / 2
    if args.J is None:
        raise ValidationError("one of --J or --N is required")
    args.N = None
    ModelParams(J=args.J, Omega=args.omega, theta=getattr(args, "theta", 0.0), Gamma=args.gamma)


def execute(command: str, params: dict, threads: int = 1) -> tuple[dict, dict]:
    """Run ``command`` on resolved ``params``; return (files, final params)."""
    ns = argparse.Namespace(**params, threads=threads)
    tables = []

    def emit(name, header, rows):
        tables.append((name, header, rows))

    COMMANDS[command](ns, emit)
    final = {k: v for k, v in vars(ns).items() if k not in _NOT_PARAMS}
    digest = params_digest(final)
    pre = [
        f"dfreeze {__version__} {command}",
        f"params-sha256: {digest}",
        f"units: rates in units of gamma={fmt_gamma(final['gamma'])}, times in 1/gamma",
    ]
    files = {name: render_csv(header, rows, pre) for name, header, rows in tables}
    return files, final


def fmt_gamma(g):
    return repr(float(g))


def _replay(args) -> int:
    man = RunManifest.load(args.manifest)
    started = now()
    files, final = execute(man.command, dict(man.params))
    expected = {o["file"]: o["sha256"] for o in man.outputs}
    ok = True
    for name, text in files.items():
        same = expected.get(name) == sha256_text(text)
        ok &= same
        print(f"{'identical' if same else 'DIFFERENT'}  {name}")
    missing = set(expected) - set(files)
    for name in sorted(missing):
        print(f"MISSING    {name}")
    manifest = RunManifest(man.command, final, man.seed, __version__, man.units, started)
    write_outputs(args.out, files, manifest)
    return EXIT_OK if ok and not missing else EXIT_MISMATCH


def main(argv=None) -> int:
    ap = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = ap.parse_args(argv)
        if args.command == "replay":
            return _replay(args)
        if args.config:
            args = _apply_config(ap, argv, args)
        _resolve(args)
        params = {k: v for k, v in vars(args).items() if k not in _NOT_PARAMS}
        started = now()
        files, final = execute(args.command, params, threads=args.threads)
        manifest = RunManifest(
            command=args.command,
            params=final,
            seed=int(final.get("seed", 0)),
            version=__version__,
            units=f"rates in units of gamma={fmt_gamma(final['gamma'])}, times in 1/gamma",
            started=started,
        )
        for name in write_outputs(args.out, files, manifest):
            print(os.path.join(args.out, name))
        return EXIT_OK
    except ValidationError as exc:
        print(f"dfreeze: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, TrajectoryError) as exc:
        print(f"dfreeze: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, DfreezeError) as exc:
        print(f"dfreeze: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
