"""Command-line entry point: ``eulalpha <command> [options]``.

Exit codes: 0 when every check of the command passes, 1 when one fails, 2 on
usage errors.  Artifacts (CSV tables, a text summary, EAFS snapshots) go to the
output directory; ``EAF_OUTPUT_DIR`` overrides it.
"""

from __future__ import annotations

import argparse
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import engine, geometry, inverse_div, ledger, mikado, spectral, transport
from .io import ConfigError, ExperimentConfig, emit_report, resolve_output_dir, save_snapshot

COMMANDS = ("verify-pipes", "decompose-stress", "check-params", "suggest-params", "conserve", "glue", "step",
            "decouple", "inverse-div-test")


class UsageError(Exception):
    pass


def _is_parameter_file(path) -> bool:
    try:
        ledger.load_parameters(path)
    except ValueError:
        return False
    return True


def _config(args) -> ExperimentConfig:
    src = getattr(args, "config", None)
    if src and args.command == "check-params" and _is_parameter_file(src):
        src = None  # the ledger file itself, not an experiment file
    cfg = ExperimentConfig.load(src) if src else ExperimentConfig()
    for flag, key in (("resolution", "resolution"), ("alpha", "alpha"), ("dt", "dt"), ("t_final", "t_final"),
                      ("lam", "lambda"), ("r", "r"), ("d", "d"), ("direction_set", "direction_set"),
                      ("output_dir", "output_dir"), ("seed", "seed")):
        v = getattr(args, flag, None)
        if v is not None:
            cfg.set(key, v)
    cfg.validate()
    return cfg


def _finish(out: Path, name: str, tables: dict, lines: list, ok: bool) -> int:
    lines = lines + [f"RESULT: {'PASS' if ok else 'FAIL'}"]
    emit_report(out, name, tables, lines)
    print("\n".join(lines))
    return 0 if ok else 1


# commands

def cmd_verify_pipes(args, cfg: ExperimentConfig, out: Path) -> int:
    model = spectral.AlphaModel(cfg.alpha)
    dset = geometry.build_direction_sets(cfg.direction_set, 3)[cfg.direction_set]
    rows, lines, ok = [], [], True
    for i, xi in enumerate(dset.vectors):
        r_i = mikado.separated_r(dset, i, cfg.lam, cfg.r, cfg.d)
        fam = mikado.family_from_set(dset, i, cfg.lam, r_i, cfg.d)
        rep = mikado.verify_stationarity(fam, model, args.n)
        avg, C = mikado.pipe_average_quadrature(fam, args.n)
        target = geometry.pipe_average_identity(xi, C)
        avg_err = float(np.abs(avg - target).max() / np.abs(target).max())
        good = rep.passed() and avg_err <= 1e-8
        ok &= good
        rows.append((i, " ".join(str(c) for c in xi), r_i, rep.euler_residual, rep.alpha_residual, avg_err, good))
        lines.append(f"xi_{i} = ({', '.join(str(c) for c in xi)}): div(W(x)W) {rep.euler_residual:.3e}, "
                     f"Euler-alpha {rep.alpha_residual:.3e}, average identity {avg_err:.3e}"
                     + ("" if r_i == cfg.r else f" (r = {r_i}: strands overlap at r = {cfg.r})"))
    head = f"lambda = {cfg.lam}, r = {cfg.r}, d = {cfg.d}, alpha = {cfg.alpha}, cross-section {args.n}^2"
    tables = {"stationarity": (("index", "xi", "r", "div_WW", "euler_alpha", "average_identity", "pass"), rows)}
    if args.lp_sweep:
        rs = [cfg.r / 2**k for k in range(3) if (cfg.lam * cfg.r / 2**k).denominator == 1]
        tables["lp_scaling"] = (("order", "p", "r", "measured", "predicted"),
                                mikado.lp_scaling_table(cfg.lam, rs, cfg.d))
    return _finish(out, "verify_pipes", tables, [head] + lines, ok)


def _random_ball(rng, n: int, dim: int, eps: float) -> np.ndarray:
    R = rng.uniform(-1, 1, size=(dim, dim, n))
    R = 0.5 * (R + R.transpose(1, 0, 2))
    R -= np.eye(dim)[:, :, None] * np.trace(R)[None, None] / dim
    scale = geometry.max_entry_norm(R)
    return R * (eps * rng.uniform(0, 1, size=n) / scale)[None, None]


def cmd_decompose_stress(args, cfg: ExperimentConfig, out: Path) -> int:
    dim = args.dim
    dset = geometry.build_direction_sets(cfg.direction_set, dim)[cfg.direction_set]
    rng = np.random.default_rng(cfg.seed)
    t0 = time.perf_counter()
    R = _random_ball(rng, args.samples, dim, dset.epsilon)
    sol = geometry.decompose_stress(R, dset)
    elapsed = time.perf_counter() - t0
    resid = float(np.abs(sol.reconstruct() - R).max())
    cmin = float(sol.squares.min())
    sums = sol.squares.sum(0)
    spread = float(sums.max() - sums.min())
    ok = resid <= 1e-10 and cmin > 0 and spread <= 1e-10
    lines = [
        f"{args.samples} samples in the ball of radius epsilon = {dset.epsilon:.17g} (set {cfg.direction_set}, "
        f"dim {dim}, seed {cfg.seed})",
        f"max reconstruction residual {resid:.3e}",
        f"min coefficient square {cmin:.17g}",
        f"coefficient-sum spread {spread:.3e} around {float(sums.mean()):.17g}",
        f"time {elapsed:.3f} s",
    ]
    rows = [(j, float(np.abs(sol.reconstruct()[..., j] - R[..., j]).max()), float(sol.squares[:, j].min()),
             float(sums[j])) for j in range(args.samples)]
    return _finish(out, "decompose_stress", {"samples": (("sample", "residual", "min_square", "sum"), rows)},
                   lines, ok)


def _load_ledger_params(path) -> ledger.ParameterSet:
    text = Path(path).read_text()
    try:
        return ledger.parse_parameter_text(text)
    except ValueError:
        cfg = ExperimentConfig.parse(text)
        if not cfg.parameter_file:
            raise UsageError("config has no parameter_file and is not a parameter file itself")
        return ledger.load_parameters(Path(path).parent / cfg.parameter_file)


def cmd_check_params(args, cfg: ExperimentConfig, out: Path) -> int:
    src = args.params or args.config
    if not src:
        raise UsageError("check-params needs --config or --params")
    p = _load_ledger_params(src)
    if args.beta is not None:
        p = p.with_beta(Fraction(args.beta))
    rep = ledger.check_inequalities(p, args.dim)
    rows = [(r.id, r.lhs, r.rhs, r.slack, r.passed) for r in rep.rows]
    lines = rep.text().rstrip("\n").splitlines()
    return _finish(out, "check_params", {"ledger": (("inequality", "lhs", "rhs", "slack", "pass"), rows)},
                   lines, rep.passed)


def cmd_suggest_params(args, cfg: ExperimentConfig, out: Path) -> int:
    p = ledger.suggest_parameters(args.b, Fraction(args.Gamma), args.dim)
    path = out / "params.cfg"
    ledger.save_parameters(p, path)
    rep = ledger.check_inequalities(p, args.dim)
    lines = [f"wrote {path}"] + ledger.format_parameter_text(p).rstrip("\n").splitlines()
    lines += rep.lines()
    return _finish(out, "suggest_params", {"ledger": (("inequality", "lhs", "rhs", "slack", "pass"),
                                                      [(r.id, r.lhs, r.rhs, r.slack, r.passed) for r in rep.rows])},
                   lines, rep.passed)


def cmd_conserve(args, cfg: ExperimentConfig, out: Path) -> int:
    g = spectral.Grid(2, cfg.resolution)
    model = spectral.AlphaModel(cfg.alpha)
    if args.init == "taylor-green":
        u0 = spectral.taylor_green(g)
    else:
        u0 = spectral.random_solenoidal(g, args.kmax, np.random.default_rng(cfg.seed))
    eps = [float(e) for e in args.eps] if args.eps else None
    rep = engine.conservation_experiment(u0, model, cfg.dt, cfg.t_final, g, eps_sweep=eps, every=args.every)
    ok = rep.drift <= args.tol
    lines = [f"{args.init} data, {cfg.resolution}^2, alpha = {cfg.alpha}, dt = {cfg.dt}, t_final = {cfg.t_final}",
             f"H(0) = {rep.H[0]:.17g}", f"relative Hamiltonian drift {rep.drift:.3e} (tolerance {args.tol:g})"]
    tables = {"hamiltonian": (("t", "H"), list(zip(rep.times, rep.H)))}
    if rep.flux:
        tables["flux"] = (("eps", "flux"), rep.flux)
        lines += [f"flux at eps = {e:g}: {f:.6e}" for e, f in rep.flux]
        lines += [f"flux ratio between successive eps: {r:.4f}" for r in rep.flux_ratios()]
    save_snapshot(u0, out / "conserve_u0.eafs", 0.0)
    return _finish(out, "conserve", tables, lines, ok)


def _glued_state(cfg: ExperimentConfig, T: float):
    g = spectral.Grid(2, cfg.resolution)
    model = spectral.AlphaModel(cfg.alpha)
    u1 = spectral.StationaryTrajectory(g, spectral.taylor_green(g))
    u2 = spectral.StationaryTrajectory(g, 2 * spectral.taylor_green(g, shift=(0.7, 0.3)))
    return engine.glue_initial(u1, u2, T, model)


def cmd_glue(args, cfg: ExperimentConfig, out: Path) -> int:
    st = _glued_state(cfg, args.T)
    rep = engine.verify_glue(st, args.T, np.linspace(0, args.T, args.samples))
    H = rep.hamiltonian
    attained = bool(np.isclose(H[0], rep.H1, rtol=1e-12) and np.isclose(H[-1], rep.H2, rtol=1e-12))
    ok = rep.residual.max() <= 1e-6 and rep.support_ok and rep.exact_left and rep.exact_right and attained
    lines = [f"u1 = Taylor-Green, u2 = 2 * shifted Taylor-Green, {cfg.resolution}^2, alpha = {cfg.alpha}, "
             f"T = {args.T}"] + rep.lines()
    tm = 0.5 * args.T
    save_snapshot(st.u.at(tm), out / "glue_u0.eafs", tm)
    save_snapshot(st.R.at(tm), out / "glue_R0.eafs", tm)
    rows = list(zip(rep.times, H, rep.residual, rep.stress_norm))
    return _finish(out, "glue", {"series": (("t", "H", "residual", "max_R0"), rows)}, lines, ok)


def cmd_step(args, cfg: ExperimentConfig, out: Path) -> int:
    T = 1.0
    cfg_slow = ExperimentConfig(resolution=args.slow, alpha=cfg.alpha)
    st = _glued_state(cfg_slow, T)
    p = engine.ToyParameters(lam_next=cfg.lam, r=cfg.r, d=cfg.d, n_fast=args.fast)
    t = args.t if args.t is not None else 0.5 * T + 0.3 * p.tau  # two cutoffs of opposite parity active
    t0 = time.perf_counter()
    nxt, reps, eng = engine.iterate_step(st, p, [t])
    rep = reps[0]
    u_next = nxt.u.at(t) if args.snapshots else None
    lines = [f"glued state on {args.slow}^2, perturbation on {args.fast}^2, lambda_next = {cfg.lam}, "
             f"r = {cfg.r}, alpha = {cfg.alpha}"] + rep.lines()
    ok = rep.divergence <= 1e-10 and rep.master_residual <= 1e-6
    if args.witness:
        g = spectral.Grid(2, args.slow)
        wit = engine.nonconservation_witness(spectral.StationaryTrajectory(g, spectral.taylor_green(g)),
                                             st.model, p, t=t)
        lines.append(f"R_q = 0 witness: H(u_ell) = {wit.H_ell:.17g}, H(u_next) = {wit.H_next:.17g}, "
                     f"relative change {wit.H_change:.3e}")
        ok &= wit.H_change > 1e-6
    lines.append(f"time {time.perf_counter() - t0:.1f} s")
    if u_next is not None:
        save_snapshot(u_next, out / "step_u_next.eafs", t)
    rows = [(k, v) for k, v in rep.stress_l1.items()]
    t2 = [(a, b, c) for a, b, c in eng.last_type2]
    return _finish(out, "step", {"stress_l1": (("stress", "L1"), rows),
                                 "type2": (("pipe_a", "pipe_b", "L1_product"), t2)}, lines, ok)


def cmd_decouple(args, cfg: ExperimentConfig, out: Path) -> int:
    sets = geometry.build_direction_sets(0, 3)
    rs = [Fraction(x) for x in args.rs]
    rows, lines = [], []
    straight, deformed, vols = [], [], []
    shear = transport.ShearMap(3, args.shear)
    for r in rs:
        f1 = mikado.family_from_set(sets[0], 0, cfg.lam, r, cfg.d)
        f2 = mikado.family_from_set(sets[0], 1, cfg.lam, r, cfg.d)
        st = transport.measure_intersection(f1, f2)
        de = transport.measure_intersection(f1, f2, map1=shear, n_samples=args.samples, seed=cfg.seed)
        pred = transport.ball_volume_scale(f1)
        straight.append(st.l1_over_r)
        deformed.append(de.l1_over_r)
        vols.append(st.scaled_ball_volume / pred)
        rows.append((r, st.l1_over_r, de.l1_over_r, st.scaled_ball_volume, pred))
        lines.append(f"r = {r}: L1/r straight {st.l1_over_r:.6g}, deformed {de.l1_over_r:.6g}, "
                     f"lambda^3 * ball volume {st.scaled_ball_volume:.6g} (Steinmetz {pred:.6g})")
    spread = lambda v: max(v) / min(v)  # noqa: E731
    ok = spread(straight) <= 2 and spread(deformed) <= 2 and all(0.25 <= v <= 4 for v in vols)
    lines.append(f"spread straight {spread(straight):.4f}, deformed {spread(deformed):.4f}")
    return _finish(out, "decouple", {"scaling": (("r", "l1_over_r_straight", "l1_over_r_deformed",
                                                  "scaled_ball_volume", "steinmetz"), rows)}, lines, ok)


def cmd_inverse_div_test(args, cfg: ExperimentConfig, out: Path) -> int:
    rng = np.random.default_rng(cfg.seed)
    rows, lines, ok = [], [], True
    for dim, n in ((3, args.n3), (2, args.n2)):
        g = spectral.Grid(dim, n)
        worst_div = worst_sym = 0.0
        for j in range(args.fields):
            v = spectral.random_band_limited(g, n // 3, rng)
            R = inverse_div.fourier_inverse_div(g, v)
            vbar = g.mean(v).reshape((dim,) + (1,) * dim)
            e_div = float(np.abs(spectral.tensor_div(g, R) - (v - vbar)).max() / np.abs(v).max())
            full = R.full()
            e_sym = float(max(np.abs(full - np.swapaxes(full, 0, 1)).max(), np.abs(R.trace()).max())
                          / max(np.abs(full).max(), 1e-300))
            worst_div, worst_sym = max(worst_div, e_div), max(worst_sym, e_sym)
            rows.append((dim, n, j, e_div, e_sym))
        ok &= worst_div <= 1e-12 and worst_sym <= 1e-12
        lines.append(f"{n}^{dim}: Div R v = v - mean {worst_div:.3e}, symmetric traceless {worst_sym:.3e}")
    # one differentiation by parts against a sheared pipe potential, with refinement
    dset = geometry.build_direction_sets(0, 2)[0]
    fam = mikado.PipeFamily(dset.vectors[2], dset.frames[2], 2, Fraction(1, 2), 2, dim=2)
    res = []
    for n in (args.step_n // 2, args.step_n):
        g = spectral.Grid(2, n)
        G = np.array([1 + 0.5 * np.cos(g.x[1]), 0.3 * np.sin(g.x[0])])
        flow = transport.ShearMap(2, 0.05).sample(g)
        th = inverse_div.ScaledFast(inverse_div.PipeFast(fam), 2.0**-4, 1)
        o = inverse_div.iterative_div_step(g, G, th, flow)
        r, s = inverse_div.step_residual(g, G, th, flow, o)
        res.append(r / s)
    ok &= res[1] <= 1e-6 and res[0] / res[1] >= 4
    lines.append(f"iterative step identity at {args.step_n // 2}^2: {res[0]:.3e}, at {args.step_n}^2: {res[1]:.3e} "
                 f"(refinement factor {res[0] / res[1]:.3g})")
    return _finish(out, "inverse_div", {"fields": (("dim", "n", "field", "div_error", "sym_trace_error"), rows)},
                   lines, ok)


# parser

def _common(p, physics: bool = True):
    p.add_argument("--config", help="key = value experiment file")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--seed", type=int)
    if physics:
        p.add_argument("--resolution", type=int)
        p.add_argument("--alpha", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eulalpha", description="Euler-alpha convex-integration laboratory")
    sub = ap.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("verify-pipes", help="stationarity and average identity of pipe flows")
    _common(p)
    p.add_argument("--lambda", dest="lam", type=int)
    p.add_argument("--r")
    p.add_argument("--d", type=int)
    p.add_argument("--set", dest="direction_set", type=int)
    p.add_argument("--n", type=int, default=256, help="cross-section resolution")
    p.add_argument("--lp-sweep", action="store_true")

    p = sub.add_parser("decompose-stress", help="positive decomposition of random stresses")
    _common(p, physics=False)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--dim", type=int, choices=(2, 3), default=3)
    p.add_argument("--set", dest="direction_set", type=int)

    p = sub.add_parser("check-params", help="exact check of the parameter inequalities")
    _common(p, physics=False)
    p.add_argument("--params", help="parameter file (key = value)")
    p.add_argument("--beta", help="override beta (rational)")
    p.add_argument("--dim", type=int, choices=(2, 3), default=3)

    p = sub.add_parser("suggest-params", help="run the parameter recipe and write params.cfg")
    _common(p, physics=False)
    p.add_argument("--b", type=int, default=601)
    p.add_argument("--Gamma", default="1/2")
    p.add_argument("--dim", type=int, choices=(2, 3), default=3)

    p = sub.add_parser("conserve", help="Hamiltonian drift and mollified energy flux")
    _common(p)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-final", dest="t_final", type=float)
    p.add_argument("--init", choices=("taylor-green", "random"), default="random")
    p.add_argument("--kmax", type=int, default=6)
    p.add_argument("--eps", nargs="*", help="mollification scales for the flux sweep")
    p.add_argument("--every", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-8)

    p = sub.add_parser("glue", help="glue two stationary solutions and check the relaxed system")
    _common(p)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=41)

    p = sub.add_parser("step", help="one convex-integration step in 2-D")
    _common(p)
    p.add_argument("--lambda", dest="lam", type=int)
    p.add_argument("--r")
    p.add_argument("--d", type=int)
    p.add_argument("--slow", type=int, default=512)
    p.add_argument("--fast", type=int, default=1024)
    p.add_argument("--t", type=float)
    p.add_argument("--witness", action="store_true", help="also run the R_q = 0 non-conservation witness")
    p.add_argument("--snapshots", action="store_true")

    p = sub.add_parser("decouple", help="intersection scaling of orthogonal pipes")
    _common(p, physics=False)
    p.add_argument("--lambda", dest="lam", type=int)
    p.add_argument("--rs", nargs="+", default=["1/2", "1/4", "1/8"])
    p.add_argument("--d", type=int)
    p.add_argument("--shear", type=float, default=0.02)
    p.add_argument("--samples", type=int, default=2**18)

    p = sub.add_parser("inverse-div-test", help="Fourier inverse divergence and the iterative step identity")
    _common(p, physics=False)
    p.add_argument("--fields", type=int, default=20)
    p.add_argument("--n3", type=int, default=64)
    p.add_argument("--n2", type=int, default=128)
    p.add_argument("--step-n", dest="step_n", type=int, default=128)
    return ap


HANDLERS = {
    "verify-pipes": cmd_verify_pipes, "decompose-stress": cmd_decompose_stress, "check-params": cmd_check_params,
    "suggest-params": cmd_suggest_params, "conserve": cmd_conserve, "glue": cmd_glue, "step": cmd_step,
    "decouple": cmd_decouple, "inverse-div-test": cmd_inverse_div_test,
}

# command-specific defaults that differ from ExperimentConfig's
DEFAULTS = {
    "verify-pipes": {"lam": 8, "r": "1/2", "alpha": 1.0},
    "step": {"alpha": 0.5, "lam": 32, "r": "1/8"},
    "glue": {"alpha": 0.5},
    "decouple": {"lam": 64},
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    if not argv:
        ap.print_usage(sys.stderr)
        print(f"commands: {', '.join(COMMANDS)}", file=sys.stderr)
        return 2
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    if args.command is None:
        ap.print_usage(sys.stderr)
        return 2
    try:
        for k, v in DEFAULTS.get(args.command, {}).items():
            if getattr(args, k, None) is None and not args.config:
                setattr(args, k, v)  # a config file keeps its own values
        cfg = _config(args)
        out = resolve_output_dir(cfg.output_dir)
        return HANDLERS[args.command](args, cfg, out)
    except (UsageError, ConfigError, FileNotFoundError) as e:
        print(f"eulalpha {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
