"""Command-line entry point: ``qdhom <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 failed sanity flag (``analyze --strict``) or failed self-check.
Errors go to stderr as ``qdhom:error:<kind>: <message>``.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import acceptance, analysis, io, noise, physics, simulate, tuning
from .config import ConfigError, RunConfig, load_config

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SANITY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fail(kind: str, message: str, code: int) -> int:
    print(f"qdhom:error:{kind}: {message}", file=sys.stderr)
    return code


def _kv(pairs) -> str:
    return "\n".join(f"{k}: {v}" for k, v in pairs)


# --- subcommands --------------------------------------------------------------


def cmd_bound(args, cfg: RunConfig) -> int:
    e1, e2 = cfg.s1.emitter, cfg.s2.emitter
    e1 = replace(e1, **{k: v for k, v in (("tau_ps", args.tau1), ("m_intrinsic", args.m1)) if v is not None})
    e2 = replace(e2, **{k: v for k, v in (("tau_ps", args.tau2), ("m_intrinsic", args.m2)) if v is not None})
    frac = args.sigma_frac if args.sigma_frac is not None else e1.sigma_noise_frac
    tau_bar = 0.5 * (e1.tau_ps + e2.tau_ps)
    sigma = frac * physics.decay_rate(tau_bar)
    lam = 0.5 * (e1.lambda0_nm + e2.lambda0_nm)
    delta = float(physics.pm_to_angular_per_ns(args.delta_pm, lam))
    print(_kv([
        ("tau1_ps", f"{e1.tau_ps:.6g}"),
        ("tau2_ps", f"{e2.tau_ps:.6g}"),
        ("m1", f"{e1.m_intrinsic:.6g}"),
        ("m2", f"{e2.m_intrinsic:.6g}"),
        ("sigma_noise_frac", f"{frac:.6g}"),
        ("delta_pm", f"{args.delta_pm:.6g}"),
        ("s12", f"{physics.temporal_overlap(e1.tau_ps, e2.tau_ps):.6f}"),
        ("m12_at_delta", f"{physics.mutual_indistinguishability(e1, e2, delta):.6f}"),
        ("upper_bound", f"{physics.upper_bound(e1, e2):.6f}"),
        ("noise_averaged_numerical", f"{physics.noise_averaged_m12(e1, e2, sigma):.6f}"),
        ("noise_averaged_closed_form_as_printed", f"{physics.noise_averaged_m12(e1, e2, sigma, 'closed_form_as_printed'):.6f}"),
    ]))
    return EXIT_OK


def _pulses(args, cfg: RunConfig):
    if args.pulses is not None:
        return args.pulses, None
    if args.duration is not None:
        return None, args.duration
    return cfg.run.pulses, cfg.run.duration_s


def cmd_simulate(args, cfg: RunConfig) -> int:
    mode = args.mode or cfg.run.mode
    pulses, duration = _pulses(args, cfg)
    seed = cfg.run.seed if args.seed is None else args.seed
    out = Path(args.out or cfg.output.directory)
    blink = cfg.blink if cfg.blink.enabled else None
    blocked = args.blocked or cfg.run.blocked
    written = []
    if mode == "single":
        if blocked not in (None, "short", "long"):
            raise ValueError("single mode accepts blocked = short or long")
        s = simulate.simulate_single_hom(cfg.s1.emitter, cfg.setup, duration, seed, pulses=pulses, blink=blink, blocked=blocked)
        path = out / "tags_single.pttg"
        io.write_timetags(path, s)
        written.append(path)
    elif mode == "remote":
        if blocked not in (None, "s1", "s2"):
            raise ValueError("remote mode accepts blocked = s1 or s2")
        pol = args.polarization or cfg.run.polarization
        pols = ("parallel", "orthogonal") if pol == "both" else (pol,)
        lam = 0.5 * (cfg.s1.emitter.lambda0_nm + cfg.s2.emitter.lambda0_nm)
        delta = float(physics.pm_to_angular_per_ns(cfg.run.delta_pm, lam))
        for i, p in enumerate(pols):
            s = simulate.simulate_remote_hom(
                cfg.s1.emitter, cfg.s2.emitter, replace(cfg.setup, polarization=p), duration, seed + i,
                pulses=pulses, delta_per_ns=delta, blink=blink, blocked={"s1": 1, "s2": 2}.get(blocked),
            )
            path = out / f"tags_{p}.pttg"
            io.write_timetags(path, s)
            written.append(path)
    else:
        raise ValueError(f"simulate supports mode single or remote, not {mode!r}")
    for p in written:
        print(f"wrote: {p}")
    return EXIT_OK


def _hist(path, cfg: RunConfig, period):
    a = cfg.analysis
    stream = io.read_timetags(path, period_ps=period)
    return analysis.build_histogram(stream, a.bin_ps, a.range_ps, metadata={"source_file": str(path)})


def cmd_analyze(args, cfg: RunConfig) -> int:
    period = args.period_ps or cfg.setup.period_ps
    r_bs = cfg.setup.r_bs if args.r_bs is None else args.r_bs
    t_bs = 1.0 - r_bs
    g2 = args.g2 or [cfg.s1.emitter.g2_zero, cfg.s2.emitter.g2_zero]
    if len(g2) == 1:
        g2 = g2 * 2
    a = cfg.analysis
    out = Path(args.out or cfg.output.directory)
    if args.tags:
        h = _hist(args.tags, cfg, period)
        rep = analysis.analyze_single(h, r_bs, t_bs, g2[0], a.window_ns, a.exclude_first_side)
        io.write_histogram_csv(out / "histogram.csv", h)
    elif args.par and args.perp:
        hp, ho = _hist(args.par, cfg, period), _hist(args.perp, cfg, period)
        rep = analysis.analyze_remote(hp, ho, r_bs, t_bs, g2[0], g2[1], a.window_ns, a.exclude_first_side)
        io.write_histogram_csv(out / "histogram_parallel.csv", hp)
        io.write_histogram_csv(out / "histogram_orthogonal.csv", ho)
    else:
        raise UsageError("analyze needs --tags FILE (single) or --par FILE --perp FILE (remote)")
    io.write_json(out / "report.json", rep)
    label = "v_hom" if rep.kind == "single" else "v_rem"
    mlabel = "m_corrected" if rep.kind == "single" else "m12_corrected"
    print(_kv([
        ("kind", rep.kind),
        (label, f"{rep.v_raw:.6f} +- {rep.v_err:.6f}"),
        (mlabel, f"{rep.m_corrected:.6f} +- {rep.m_err:.6f}"),
        ("half_check", rep.flags.get("half_check")),
        ("blinking", rep.flags.get("blinking")),
        ("report", out / "report.json"),
    ]))
    if args.strict and analysis.FAIL in (rep.flags.get("half_check"), rep.flags.get("blinking")):
        return _fail("sanity", "a sanity flag failed (see report)", EXIT_SANITY)
    return EXIT_OK


def _rf_params(cfg: RunConfig):
    src = cfg.source(cfg.rf.source).emitter
    gamma = src.gamma_per_ns
    return src, gamma


def cmd_rf_trace(args, cfg: RunConfig) -> int:
    src, gamma = _rf_params(cfg)
    seed = cfg.run.seed if args.seed is None else args.seed
    proc = noise.NoiseProcess(sigma=src.sigma_noise_per_ns, corr_time_us=src.noise_corr_time_us)
    trace = noise.simulate_rf_trace(proc, cfg.rf.m_max, gamma, cfg.rf.duration_s, cfg.rf.bin_us, seed)
    path = Path(args.out or cfg.output.directory) / "rf_trace.csv"
    io.write_rf_trace_csv(path, trace)
    print(f"wrote: {path}")
    return EXIT_OK


def cmd_fit_noise(args, cfg: RunConfig) -> int:
    src, gamma = _rf_params(cfg)
    if args.trace:
        trace = io.read_rf_trace_csv(args.trace)
    else:
        seed = cfg.run.seed if args.seed is None else args.seed
        proc = noise.NoiseProcess(sigma=src.sigma_noise_per_ns, corr_time_us=src.noise_corr_time_us)
        trace = noise.simulate_rf_trace(proc, cfg.rf.m_max, gamma, cfg.rf.duration_s, cfg.rf.bin_us, seed)
    if len(trace) < 10_000:
        raise ValueError(f"trace has {len(trace)} bins; need at least 10^4")
    linewidth = gamma if args.linewidth is None else args.linewidth
    fit = noise.fit_noise(trace, linewidth=linewidth, fit_mu=args.fit_mu)
    out = Path(args.out or cfg.output.directory)
    io.write_json(out / "noise_fit.json", fit)
    print(_kv([
        ("sigma_hat", f"{fit.sigma_hat:.6g}"),
        ("sigma_hat_over_linewidth", f"{fit.sigma_hat / linewidth:.6g}"),
        ("mu_hat", f"{fit.mu_hat:.6g}"),
        ("m_max_hat", f"{fit.m_max_hat:.6g}"),
        ("linewidth", f"{linewidth:.6g}"),
        ("converged", fit.converged),
        ("report", out / "noise_fit.json"),
    ]))
    return EXIT_OK


def cmd_scan(args, cfg: RunConfig) -> int:
    sc = cfg.scan
    seed = cfg.run.seed if args.seed is None else args.seed
    v1 = np.arange(sc.v1_min_mv, sc.v1_max_mv + 0.5 * sc.step_mv, sc.step_mv)
    v2 = np.arange(sc.v2_min_mv, sc.v2_max_mv + 0.5 * sc.step_mv, sc.step_mv)
    res = tuning.scan_map(cfg.scenario(), v1, v2, sc.dwell_s, sc.engine, seed)
    out = Path(args.out or cfg.output.directory)
    for name in ("v_rem", "a_par", "a_perp", "m12_true"):
        io.write_matrix_csv(out / f"scan_{name}.csv", res.v1, res.v2, getattr(res, name))
    summary = [
        ("note", "tuning parameters are synthetic"),
        ("grid", f"{v1.size} x {v2.size}"),
        ("engine", sc.engine),
        ("dwell_s", sc.dwell_s),
        ("empty_points", int(res.empty.sum())),
        ("best", "none" if res.best is None else f"v1={res.best[0]:.1f} mV, v2={res.best[1]:.1f} mV, v_rem={res.best[2]:.6f}"),
    ]
    io.atomic_write(out / "scan_summary.txt", _kv(summary) + "\n")
    print(_kv(summary))
    return EXIT_OK


def cmd_optimize(args, cfg: RunConfig) -> int:
    sc = cfg.scan
    seed = cfg.run.seed if args.seed is None else args.seed
    res = tuning.grid_refine_optimize(
        cfg.scenario(), (sc.v1_min_mv, sc.v1_max_mv), (sc.v2_min_mv, sc.v2_max_mv),
        sc.step_schedule_mv, sc.dwell_s, sc.engine, seed,
    )
    out = Path(args.out or cfg.output.directory)
    io.write_json(out / "optimize.json", {k: v for k, v in vars(res).items() if k != "audit"})
    lines = ["stage,v1_mv,v2_mv,a_par,a_perp,v_rem,m12,m12_true"]
    lines += [f"{p.stage},{p.v1!r},{p.v2!r},{p.a_par!r},{p.a_perp!r},{p.v_rem!r},{p.m12!r},{p.m12_true!r}" for p in res.audit]
    io.atomic_write(out / "optimize_audit.csv", "\n".join(lines) + "\n")
    print(_kv([
        ("note", "tuning parameters are synthetic"),
        ("v1_mv", f"{res.v1:.3f}"),
        ("v2_mv", f"{res.v2:.3f}"),
        ("v_rem", f"{res.v_rem:.6f}"),
        ("m12_corrected", f"{res.m12:.6f}"),
        ("confirm_v_rem", f"{res.confirm_v_rem:.6f}"),
        ("confirm_m12_corrected", f"{res.confirm_m12:.6f}"),
        ("m12_model", f"{res.m12_true:.6f}"),
        ("evaluated_points", len(res.audit)),
    ]))
    return EXIT_OK


def cmd_selfcheck(args, cfg: RunConfig) -> int:
    results = acceptance.run_all(args.criteria or None)
    failed = [r.number for r in results if not r.passed]
    print(f"summary: {len(results) - len(failed)}/{len(results)} criteria passed")
    if failed:
        return _fail("selfcheck", f"criteria failed: {', '.join(map(str, failed))}", EXIT_SANITY)
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML run configuration, or preset:NAME")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--out", help="output directory (overrides output.directory)")

    p = _Parser(prog="qdhom", description="HOM interference toolkit for remote quantum-dot sources")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("bound", parents=[common], help="closed-form indistinguishability numbers")
    b.add_argument("--tau1", type=float)
    b.add_argument("--tau2", type=float)
    b.add_argument("--m1", type=float)
    b.add_argument("--m2", type=float)
    b.add_argument("--sigma-frac", type=float, help="noise std as a fraction of 1/tau")
    b.add_argument("--delta-pm", type=float, default=0.0)
    b.set_defaults(fn=cmd_bound)

    s = sub.add_parser("simulate", parents=[common], help="pulse-level Monte Carlo to time-tag files")
    s.add_argument("--mode", choices=["single", "remote"])
    s.add_argument("--pulses", type=int)
    s.add_argument("--duration", type=float, help="seconds")
    s.add_argument("--polarization", choices=["parallel", "orthogonal", "both"])
    s.add_argument("--blocked", choices=["short", "long", "s1", "s2"])
    s.set_defaults(fn=cmd_simulate)

    a = sub.add_parser("analyze", parents=[common], help="correlate time tags and compute visibilities")
    a.add_argument("--tags", help="single-source time-tag file")
    a.add_argument("--par", help="parallel-polarisation time-tag file")
    a.add_argument("--perp", help="orthogonal-polarisation time-tag file")
    a.add_argument("--r-bs", type=float)
    a.add_argument("--g2", type=float, nargs="+")
    a.add_argument("--period-ps", type=float)
    a.add_argument("--strict", action="store_true", help="exit 3 when a sanity flag fails")
    a.set_defaults(fn=cmd_analyze)

    f = sub.add_parser("fit-noise", parents=[common], help="fit spectral noise to an RF trace")
    f.add_argument("--trace", help="RF trace CSV; simulated from the config when omitted")
    f.add_argument("--linewidth", type=float, help="Lorentzian FWHM in trace units (default 1/tau)")
    f.add_argument("--fit-mu", action="store_true")
    f.set_defaults(fn=cmd_fit_noise)

    r = sub.add_parser("rf-trace", parents=[common], help="simulate an RF intensity trace")
    r.set_defaults(fn=cmd_rf_trace)

    sc = sub.add_parser("scan", parents=[common], help="bias-voltage scan map")
    sc.set_defaults(fn=cmd_scan)

    o = sub.add_parser("optimize", parents=[common], help="grid-refinement bias optimisation")
    o.set_defaults(fn=cmd_optimize)

    c = sub.add_parser("selfcheck", parents=[common], help="run the built-in acceptance suite")
    c.add_argument("--criteria", type=int, nargs="+", choices=sorted(acceptance.CRITERIA))
    c.set_defaults(fn=cmd_selfcheck)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        return args.fn(args, cfg)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except (ConfigError, io.DataError, ValueError, OSError, tuning.NoSignalError) as exc:
        return _fail("data", str(exc), EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
