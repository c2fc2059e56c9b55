"""Command-line front end.

Subcommands::

    l1margin simulate SCENARIO [--tau S] [--gain G] [--gamma-c X] [--out DIR]
    l1margin margins  SCENARIO [--sweep] [--density N] [--out DIR]
    l1margin bode     SCENARIO [--wmin W] [--wmax W] [--points N] [--theta a,b] [--out DIR]
    l1margin verify   SCENARIO [--tau S] [--gamma-c X] [--out DIR]
    l1margin l1gain   --num a0,a1,.. --den b0,b1,..   (ascending powers of s)

``SCENARIO`` is a scenario file, the name of a bundled scenario (e.g.
``robotarm``) or a ``manifest.json`` written by an earlier run, in which
case the recorded scenario and arguments are replayed.

Exit codes: 0 success / stable, 2 diverged or a failed check, 3 inconclusive
stability verdict, 1 usage or input error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .linsys import FrequencyGrid, RationalTF, tf_to_ss
from .margins import analyze, check_l1_condition, l1_norm, open_loop_Ho, transient_bounds
from .scenario_file import ScenarioError, bundled_path, load_scenario, parse_scenario
from .simulate import (_late_growth, simulate_closed_loop, simulate_reference,
                       verify_equivalence, ENVELOPE_FACTOR)

EXIT_OK, EXIT_ERROR, EXIT_FAIL, EXIT_INCONCLUSIVE = 0, 1, 2, 3

DETERMINISM = ("fixed-step integration with no random inputs; identical scenario and "
               "arguments give byte-identical CSV output")


def _fmt(x):
    return format(float(x), ".12g")


def _write(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _sha256(path: Path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# scenario / manifest resolution
# ---------------------------------------------------------------------------


def _resolve(args):
    """Load the scenario; replay manifest arguments when given one."""
    src = args.scenario
    path = Path(src)
    if not path.exists() and not src.endswith((".scenario", ".json")):
        candidate = Path(bundled_path(src))
        if candidate.exists():
            path = candidate
    if not path.exists():
        raise ScenarioError(f"{src}: no such scenario file")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        man = json.loads(text)
        if man.get("command") != args.command:
            raise ScenarioError(
                f"{src}: manifest was written by '{man.get('command')}', not '{args.command}'")
        for key, value in man.get("arguments", {}).items():
            if key not in ("out", "scenario", "profile") and getattr(args, key, None) is None:
                setattr(args, key, value)
        sf = parse_scenario(yaml.safe_dump(man["scenario"], sort_keys=True), str(path),
                            man["profile"])
        return sf
    return load_scenario(path, args.profile)


def _manifest(args, sf, out: Path, outputs, extra=None):
    arguments = {k: v for k, v in sorted(vars(args).items())
                 if k not in ("func", "command", "scenario", "out", "corrupt_trace")}
    man = {
        "tool": "l1margin",
        "version": __version__,
        "command": args.command,
        "profile": sf.profile,
        "scenario_source": sf.source,
        "scenario": sf.resolved(),
        "arguments": arguments,
        "determinism": DETERMINISM,
        "outputs": {name: _sha256(out / name) for name in outputs},
    }
    man.update(extra or {})
    _write(out / "manifest.json", json.dumps(man, indent=2, sort_keys=True) + "\n")


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _classify(trace, reference_peak):
    limit = ENVELOPE_FACTOR * max(reference_peak, 1e-12)
    if trace.status == "diverged":
        return "diverged"
    if trace.status == "guard":
        return "diverged" if trace.peak > limit else "inconclusive"
    if trace.peak > limit or _late_growth(trace) > 1.5:
        return "inconclusive"
    return "stable"


def cmd_simulate(args):
    sf = _resolve(args)
    sc = sf.build(tau=args.tau, gain=args.gain, gamma_c=args.gamma_c, t_end=args.t_end)
    dec = args.decimate or 1
    sc = sc.with_(record_every=dec)
    trace = simulate_closed_loop(sc)
    ref_peak = trace.peak if sc.depth == 0 and sc.gain == 1.0 else \
        simulate_closed_loop(sc.with_(tau=0.0, gain=1.0)).peak
    verdict = _classify(trace, ref_peak)
    out = _out_dir(args)
    trace.to_csv(out / "trace.csv")
    lines = [
        f"classification = {verdict}",
        f"peak_abs_x = {_fmt(trace.peak)}",
        f"undelayed_peak_abs_x = {_fmt(ref_peak)}",
        f"tau_eff_s = {_fmt(sc.tau_eff)}",
        f"loop_gain = {_fmt(sc.gain)}",
        f"status = {trace.status}",
    ]
    if trace.status_time is not None:
        lines.append(f"stop_time_s = {_fmt(trace.status_time)}")
    _write(out / "verdict.txt", "\n".join(lines) + "\n")
    _manifest(args, sf, out, ["trace.csv", "verdict.txt"],
              {"tau_eff_s": sc.tau_eff, "h_s": sc.h, "gamma_c": sc.cfg.gamma_c})
    print(f"{verdict}: peak |x| = {trace.peak:.6g}, tau_eff = {sc.tau_eff:.6g} s")
    return {"stable": EXIT_OK, "diverged": EXIT_FAIL}.get(verdict, EXIT_INCONCLUSIVE)


def cmd_margins(args):
    sf = _resolve(args)
    sc = sf.build()
    report = analyze(sc.cfg, sc.true_theta, sc.true_omega, sweep=bool(args.sweep),
                     grid_density=args.density or 21)
    out = _out_dir(args)
    at_true, _ = check_l1_condition(sc.cfg.A_m, sc.cfg.b, sc.cfg.sets.theta_box,
                                    (sc.true_omega, sc.true_omega), sc.cfg.k, sc.cfg.D)
    report.meta.update({"scenario": sf.name, "theta": list(map(float, sc.true_theta)),
                        "omega": float(sc.true_omega), "k": float(sc.cfg.k),
                        "l1_condition_value_at_true_omega": _fmt(at_true)})
    files = ["margins.txt"]
    _write(out / "margins.txt", report.to_text())
    if args.sweep:
        _write(out / "vertices.csv", report.vertex_csv())
        files.append("vertices.csv")
    _manifest(args, sf, out, files)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_bode(args):
    sf = _resolve(args)
    sc = sf.build()
    theta = sc.true_theta if args.theta is None else np.array(_floats(args.theta))
    if theta.size != sc.cfg.n:
        raise ScenarioError(f"--theta needs {sc.cfg.n} values")
    Ho = open_loop_Ho(sc.cfg.A_m, sc.cfg.b, theta, sc.true_omega, sc.cfg.k, sc.cfg.D)
    grid = FrequencyGrid.logspace(args.wmin or 1e-2, args.wmax or 1e4, args.points or 1000)
    w = grid.omegas
    resp = Ho(1j * w)
    mag = 20 * np.log10(np.abs(resp))
    phase = np.unwrap(np.angle(resp))
    # shift by whole turns so the high-frequency end lies in (-pi, pi]
    phase = np.degrees(phase - 2 * np.pi * np.round((phase[-1] - np.angle(resp[-1])) / (2 * np.pi)))
    out = _out_dir(args)
    rows = ["omega,magnitude_db,phase_deg"] + [
        f"{_fmt(a)},{_fmt(m)},{_fmt(p)}" for a, m, p in zip(w, mag, phase)]
    _write(out / "bode.csv", "\n".join(rows) + "\n")
    _manifest(args, sf, out, ["bode.csv"])
    print(f"wrote {len(w)} points to {out / 'bode.csv'}")
    return EXIT_OK


def cmd_verify(args):
    sf = _resolve(args)
    sc = sf.build(tau=args.tau, gamma_c=args.gamma_c, t_end=args.t_end)
    checks = []

    # undelayed run: transient bounds
    base = sc.with_(tau=0.0, record_every=1)
    adaptive = simulate_closed_loop(base)
    ref = simulate_reference(base)
    bounds = transient_bounds(base.cfg, theta=base.true_theta, omega=base.true_omega)
    if args.corrupt_trace:
        adaptive.x_d[len(adaptive) // 2] += 1.0 + 10 * np.abs(adaptive.x_d).max()
    xt = float(np.abs(adaptive.xtilde).max())
    err = float(np.abs(adaptive.x - ref.x).max())
    checks.append(("predictor_error_bound", xt, bounds.xtilde_bound, xt <= bounds.xtilde_bound))
    checks.append(("gamma1_x_minus_xref", err, bounds.gamma1, err <= bounds.gamma1))

    # equivalence with the delayed LTI loop
    run = sc.with_(record_every=1)
    delayed = adaptive if run.depth == 0 else simulate_closed_loop(run)
    if args.corrupt_trace and delayed is not adaptive:
        delayed.x_d[len(delayed) // 2] += 1.0 + 10 * np.abs(delayed.x_d).max()
    rep = verify_equivalence(delayed, run)
    tol = 1e-4 if run.depth == 0 else 1e-3
    checks.append(("equivalence_x_relative", rep.x_relative, tol, rep.x_relative <= tol))
    checks.append(("equivalence_u_relative", rep.u_relative, tol, rep.u_relative <= tol))

    ok = all(c[3] for c in checks) and adaptive.status == "ok"
    lines = [f"tau_eff_s = {_fmt(run.tau_eff)}", f"gamma_c = {_fmt(sc.cfg.gamma_c)}",
             f"theta_m = {_fmt(bounds.theta_m)}"]
    if bounds.gamma2 is not None:
        lines.append(f"gamma2 = {_fmt(bounds.gamma2)}")
    for name, value, limit, passed in checks:
        lines.append(f"{name} = {_fmt(value)} (limit {_fmt(limit)}) "
                     f"{'PASS' if passed else 'FAIL'}")
    lines.append(f"result = {'PASS' if ok else 'FAIL'}")
    out = _out_dir(args)
    _write(out / "verify.txt", "\n".join(lines) + "\n")
    _manifest(args, sf, out, ["verify.txt"], {"tau_eff_s": run.tau_eff, "h_s": run.h})
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_FAIL


def _floats(text):
    try:
        return [float(v) for v in str(text).replace(" ", "").split(",") if v != ""]
    except ValueError:
        raise ScenarioError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_l1gain(args):
    tf = RationalTF(_floats(args.num), _floats(args.den))
    if not tf.proper:
        raise ScenarioError("transfer function must be proper")
    value = l1_norm(tf_to_ss(tf), args.rel_tol)
    print(_fmt(value))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="l1margin", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_cmd(name, func, helptext):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("scenario", help="scenario file, bundled name or manifest.json")
        s.add_argument("--out", default=f"{name}_out", help="output directory")
        s.add_argument("--profile", default=None,
                       help="profile name (default: $L1MARGIN_PROFILE or the file's default)")
        s.set_defaults(func=func)
        return s

    s = scenario_cmd("simulate", cmd_simulate, "run the adaptive loop and classify it")
    s.add_argument("--tau", type=float, default=None, help="loop delay, s")
    s.add_argument("--gain", type=float, default=None, help="inserted loop gain")
    s.add_argument("--gamma-c", dest="gamma_c", type=float, default=None)
    s.add_argument("--t-end", dest="t_end", type=float, default=None, help="horizon, s")
    s.add_argument("--decimate", type=int, default=None,
                   help="record every N-th step in trace.csv (default 1)")

    s = scenario_cmd("margins", cmd_margins, "L1 condition, phase/delay/gain margins")
    s.add_argument("--sweep", action="store_true", default=None,
                   help="worst case over the uncertainty sets")
    s.add_argument("--density", type=int, default=None, help="points per theta axis")

    s = scenario_cmd("bode", cmd_bode, "Bode data of the loop transfer function")
    s.add_argument("--wmin", type=float, default=None)
    s.add_argument("--wmax", type=float, default=None)
    s.add_argument("--points", type=int, default=None)
    s.add_argument("--theta", default=None, help="override theta, comma separated")

    s = scenario_cmd("verify", cmd_verify, "equivalence and transient-bound checks")
    s.add_argument("--tau", type=float, default=None)
    s.add_argument("--gamma-c", dest="gamma_c", type=float, default=None)
    s.add_argument("--t-end", dest="t_end", type=float, default=None)
    s.add_argument("--corrupt-trace", action="store_true", help=argparse.SUPPRESS)

    s = sub.add_parser("l1gain", help="L1 norm of a proper transfer function")
    s.add_argument("--num", required=True, help="numerator, ascending powers of s")
    s.add_argument("--den", required=True, help="denominator, ascending powers of s")
    s.add_argument("--rel-tol", dest="rel_tol", type=float, default=1e-6)
    s.set_defaults(func=cmd_l1gain)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ValueError, ArithmeticError, OSError) as exc:
        print(f"l1margin {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
