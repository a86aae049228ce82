"""Command-line frontend.

Sub-commands:

    compute-rsi   indices for every vulnerable sub-system and constraint
    synthesize    offline policy certification (direct or shrink sweep)
    simulate      closed-loop episodes with an adversary model
    verify        re-check a stored certificate against its system
    casestudy     run the packaged room scenarios end to end

Exit codes: 0 success, 1 usage error, 2 backend not applicable, 3 solver
failure, 4 synthesis infeasible, 5 verification failure.  Commands are
deterministic given identical inputs and seeds.  The environment variable
RESILSAFE_SOLVER_TOL overrides the interior-point tolerance target.
"""

from __future__ import annotations

import argparse
import os
import sys as _sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_APPLICABLE = 2
EXIT_SOLVER_FAILURE = 3
EXIT_INFEASIBLE = 4
EXIT_VERIFY_FAILED = 5

REFERENCE_SCENARIO2_THRESHOLD = 6.2498  # published value for the same experiment


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(_sys.stderr)
        print(f"error: {message}", file=_sys.stderr)
        raise SystemExit(EXIT_USAGE)


def solver_options():
    from .optim import SdpOptions

    tol = os.environ.get("RESILSAFE_SOLVER_TOL")
    if tol is None:
        return None
    tol = float(tol)
    return SdpOptions(feastol=tol, abstol=tol, reltol=10 * tol)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="resilsafe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    rsi = sub.add_parser("compute-rsi", help="compute resilient-safety indices")
    rsi.add_argument("--system", required=True)
    rsi.add_argument("--backend", default="sos",
                     choices=["sos", "lp", "monotone", "grid", "auto"])
    rsi.add_argument("--degree", type=int, default=2)
    rsi.add_argument("--resolution", type=int, default=11)
    rsi.add_argument("--no-oracle", action="store_true")
    rsi.add_argument("--out", required=True)

    syn = sub.add_parser("synthesize", help="synthesize safety-ensuring policies")
    syn.add_argument("--system", required=True)
    syn.add_argument("--rsi", required=True)
    syn.add_argument("--mode", default="sos", choices=["sos", "sweep"])
    syn.add_argument("--epsilon", type=float, default=0.5)
    syn.add_argument("--out", required=True)

    sim = sub.add_parser("simulate", help="run a closed-loop episode")
    sim.add_argument("--system", required=True)
    sim.add_argument("--policy")
    sim.add_argument("--controller", default="sos", choices=["sos", "qp", "zero"])
    sim.add_argument("--adversary", default="random", choices=["corner", "random", "greedy"])
    sim.add_argument("--corner", default="high", choices=["low", "high"])
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--steps", type=int)
    sim.add_argument("--dt", type=float)
    sim.add_argument("--scheme", default=None, choices=["euler", "rk4"])
    sim.add_argument("--out", required=True)

    ver = sub.add_parser("verify", help="re-check a stored policy certificate")
    ver.add_argument("--system", required=True)
    ver.add_argument("--policy", required=True)
    ver.add_argument("--rsi")
    ver.add_argument("--resolution", type=int, default=11)

    cs = sub.add_parser("casestudy", help="run a packaged room scenario end to end")
    cs.add_argument("--scenario", required=True, type=int, choices=[1, 2])
    cs.add_argument("--out", required=True)
    cs.add_argument("--skip-threshold", action="store_true",
                    help="scenario 2: skip the adversary-budget bisection")
    return p


def cmd_compute_rsi(args) -> int:
    from . import fileio
    from .rsi import NotApplicable, RsiBackendError, compute_report

    doc = fileio.load_system(args.system)
    try:
        report = compute_report(doc.system, backend=args.backend, degree=args.degree,
                                with_oracle=not args.no_oracle,
                                resolution=args.resolution, options=solver_options())
    except NotApplicable as exc:
        print(f"backend not applicable: {exc}")
        return EXIT_NOT_APPLICABLE
    except RsiBackendError as exc:
        print(f"solver failure: {exc}")
        return EXIT_SOLVER_FAILURE
    fileio.save_report(report, args.out)
    for (i, k), e in sorted(report.gamma.items()):
        extra = f"  [flagged: {e.flagged}]" if e.flagged else ""
        print(f"gamma[{i},{k}] = {e.value:.6g}  ({e.backend}){extra}")
    for k, e in sorted(report.beta.items()):
        extra = f"  [flagged: {e.flagged}]" if e.flagged else ""
        print(f"beta[{k}]    = {e.value:.6g}  ({e.backend}){extra}")
    for (i, k), v in sorted(report.oracle_gamma.items()):
        print(f"oracle gamma[{i},{k}] = {v:.6g}")
    for k, v in sorted(report.oracle_beta.items()):
        print(f"oracle beta[{k}]    = {v:.6g}")
    print(f"report written to {args.out}")
    return EXIT_OK


def _synthesize_document(doc, rsi, epsilon=None, mode="sos", options=None):
    """Shared synthesis pipeline for the CLI and the packaged case study."""
    from .synth import (
        ClassKFunction,
        NotApplicable,
        WeightMatrix,
        ck_sweep,
        local_constraint_mode,
        run_algorithm1,
        synthesize_with_locals,
    )

    sys_ = doc.system
    eta = [ClassKFunction(e.kind, e.kappa) for e in doc.synthesis.eta] \
        or [ClassKFunction()] * sys_.K
    alpha = None
    if doc.synthesis.alpha:
        alpha = WeightMatrix(doc.synthesis.alpha, sys_.protected, sys_.K)

    locals_ = []
    for k in range(sys_.K):
        try:
            locals_.append(local_constraint_mode(sys_, k, eta[k]))
        except NotApplicable:
            continue

    if mode == "sweep":
        for k in range(sys_.K):
            sweep = ck_sweep(sys_, k, epsilon, eta=eta, alpha=alpha,
                             policy_degree=doc.synthesis.policy_degree,
                             multiplier_degree=doc.synthesis.multiplier_degree,
                             options=options)
            if sweep.feasible:
                return sweep.certificate, sweep
        return None, sweep

    if locals_:
        alpha = alpha or WeightMatrix.local_aware(sys_)
        cert = synthesize_with_locals(
            sys_, rsi, locals_, doc.synthesis.envelope,
            ClassKFunction(doc.synthesis.envelope_eta.kind, doc.synthesis.envelope_eta.kappa),
            eta, alpha=alpha,
            policy_degree=doc.synthesis.policy_degree,
            multiplier_degree=doc.synthesis.multiplier_degree, options=options)
    else:
        cert = run_algorithm1(sys_, eta=eta, alpha=alpha,
                              policy_degree=doc.synthesis.policy_degree,
                              multiplier_degree=doc.synthesis.multiplier_degree,
                              rsi=rsi, options=options)
    return cert, None


def cmd_synthesize(args) -> int:
    from . import fileio
    from .synth import PolicyStatus

    doc = fileio.load_system(args.system)
    if not Path(args.rsi).exists():
        print(f"error: rsi report {args.rsi} not found", file=_sys.stderr)
        return EXIT_USAGE
    rsi = fileio.load_report(args.rsi)
    cert, sweep = _synthesize_document(doc, rsi, epsilon=args.epsilon,
                                       mode=args.mode, options=solver_options())
    if sweep is not None:
        print(f"sweep on constraint {sweep.k}: {sweep.status}, level {sweep.c_k:.6g} "
              f"after {sweep.iterations} iterations (max level {sweep.cbar:.6g})")
    if cert is None or cert.status is not PolicyStatus.FEASIBLE:
        if cert is not None:
            fileio.save_policy(cert, args.out)
            print(f"infeasibility report written to {args.out}")
            print(f"synthesis infeasible: {cert.message}")
        else:
            print("synthesis infeasible on every shrunken set")
        return EXIT_INFEASIBLE
    fileio.save_policy(cert, args.out)
    for i, entry in sorted(cert.entries.items()):
        descr = "; ".join(str(p) for p in entry.policies)
        print(f"policy[{i}]: {descr}")
    print(f"certificate written to {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from . import fileio
    from .sim import (
        ConstantCorner,
        GreedyWorst,
        QpFilterController,
        SosPolicyController,
        UniformRandom,
        ZeroController,
        emit,
        run_episode,
    )
    from .synth import ClassKFunction

    doc = fileio.load_system(args.system)
    sys_ = doc.system
    steps = args.steps if args.steps is not None else doc.sim.steps
    dt = args.dt if args.dt is not None else doc.sim.dt
    scheme = args.scheme or doc.sim.scheme
    x0 = doc.sim.x0 if doc.sim.x0 is not None else np.zeros(sys_.n)

    cert = None
    if args.policy:
        cert = fileio.load_policy(args.policy, sys_)
    if args.controller == "zero":
        controller = ZeroController()
    elif args.controller == "sos":
        if cert is None:
            print("error: --controller sos needs --policy", file=_sys.stderr)
            return EXIT_USAGE
        controller = SosPolicyController(cert)
    else:
        if cert is None or cert.rsi is None:
            print("error: --controller qp needs a policy file with embedded indices",
                  file=_sys.stderr)
            return EXIT_USAGE
        eta = cert.eta or [ClassKFunction()] * sys_.K
        controller = QpFilterController(cert.rsi, eta, cert.alpha,
                                        local_cert=cert if cert.mode == "local" else None)

    adv_factory = {
        "corner": lambda: ConstantCorner(args.corner == "high"),
        "random": lambda: UniformRandom(args.seed),
        "greedy": lambda: GreedyWorst(),
    }[args.adversary]
    adversaries = {i: adv_factory() for i in sorted(sys_.vulnerable)}

    traj = run_episode(sys_, controller, adversaries, x0, steps, dt, scheme,
                       seed=args.seed)
    emit(traj, args.out)
    if traj.status != "ok":
        print(traj.status)
    if traj.violated:
        print(f"safety violation at t = {traj.first_violation:.6g} "
              f"(min h = {traj.min_h():.6g})")
    else:
        print(f"all constraints held (min h = {traj.min_h():.6g})")
    print(f"trajectory written to {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import fileio
    from .sos import verify_certificate
    from .synth import verify_policy

    doc = fileio.load_system(args.system)
    cert = fileio.load_policy(args.policy, doc.system)
    ok = True
    for i, entry in sorted(cert.entries.items()):
        for label, c in sorted(entry.certificates.items()):
            if c.target is None:
                continue
            rep = verify_certificate(c, c.target)
            mark = "ok" if rep["ok"] else "FAIL"
            print(f"certificate {i}/{label}: residual {rep['residual']:.3g}, "
                  f"min eig {rep['min_eig']:.3g}  [{mark}]")
            ok &= rep["ok"]
    grid = verify_policy(doc.system, cert, resolution=args.resolution)
    for name, passed, detail in grid["checks"]:
        print(f"grid check {name}: {'ok' if passed else 'FAIL'}  {detail}")
    ok &= grid["ok"]
    if args.rsi:
        rsi = fileio.load_report(args.rsi)
        rsi.reconcile()
        for (i, k), e in sorted(rsi.gamma.items()):
            if e.flagged:
                print(f"rsi gamma[{i},{k}] flagged: {e.flagged}")
                ok = False
    print("verification PASSED" if ok else "verification FAILED")
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


def cmd_casestudy(args) -> int:
    from . import fileio
    from .casestudy import three_rooms
    from .rsi import compute_report
    from .sim import (
        ConstantCorner,
        QpFilterController,
        SosPolicyController,
        UniformRandom,
        emit,
        run_episode,
    )
    from .synth import ClassKFunction, PolicyStatus, bisect_threshold

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = three_rooms(args.scenario)
    sys_ = doc.system
    fileio.save_system(doc, out / "system.json")
    summary = [f"case study scenario {args.scenario}"]

    report = compute_report(sys_, backend="sos", with_oracle=True,
                            options=solver_options())
    fileio.save_report(report, out / "rsi.json")
    for (i, k), e in sorted(report.gamma.items()):
        summary.append(f"gamma[{i},{k}] = {e.value:.6g} "
                       f"(grid minimum {report.oracle_gamma[(i, k)]:.6g})")
    for k, e in sorted(report.beta.items()):
        summary.append(f"beta[{k}] = {e.value:.6g} "
                       f"(grid minimum {report.oracle_beta[k]:.6g})")

    cert, _ = _synthesize_document(doc, report, options=solver_options())
    fileio.save_policy(cert, out / "policy.json")
    if cert.status is not PolicyStatus.FEASIBLE:
        summary.append(f"synthesis: {cert.status.value} ({cert.message})")
        (out / "summary.txt").write_text("\n".join(summary) + "\n")
        print("\n".join(summary))
        return EXIT_INFEASIBLE
    summary.append("synthesis: feasible")

    eta = [ClassKFunction(e.kind, e.kappa) for e in doc.synthesis.eta]
    controllers = [("sos", SosPolicyController(cert))]
    if args.scenario == 1:
        controllers.append(("qp", QpFilterController(report, eta)))
    else:
        controllers.append(("qp", QpFilterController(report, eta, local_cert=cert)))
    worst = np.inf
    for name, controller in controllers:
        for label, adversary in [("random", UniformRandom(0)),
                                 ("corner-low", ConstantCorner(False)),
                                 ("corner-high", ConstantCorner(True))]:
            traj = run_episode(sys_, controller, {0: adversary}, doc.sim.x0,
                               doc.sim.steps, doc.sim.dt, doc.sim.scheme, seed=0)
            emit(traj, out / f"trajectory_{name}_{label}.csv")
            worst = min(worst, traj.min_h())
            summary.append(f"simulate {name}/{label}: min h = {traj.min_h():.6g}"
                           + ("" if not traj.violated else "  VIOLATION"))
    summary.append(f"worst h over episodes: {worst:.6g} "
                   + ("(safety held)" if worst >= -1e-3 else "(SAFETY VIOLATED)"))

    from .synth import verify_policy
    grid = verify_policy(sys_, cert)
    summary.append("verify: " + ("pass" if grid["ok"] else "FAIL"))

    if args.scenario == 2 and not args.skip_threshold:
        from .rsi import compute_report as _cr
        from .synth import WeightMatrix, local_constraint_mode, synthesize_with_locals

        def probe(ub):
            d = three_rooms(2, u1_max=ub)
            rep = _cr(d.system, backend="sos", with_oracle=False)
            eta2 = [ClassKFunction(e.kind, e.kappa) for e in d.synthesis.eta]
            lc = local_constraint_mode(d.system, 0, eta2[0])
            c = synthesize_with_locals(
                d.system, rep, [lc], d.synthesis.envelope,
                ClassKFunction(d.synthesis.envelope_eta.kind,
                               d.synthesis.envelope_eta.kappa),
                eta2, alpha=WeightMatrix.local_aware(d.system))
            return c.feasible

        threshold = bisect_threshold(probe, 0.1, 2.0, tol=1e-3)
        summary.append(f"compromised-input budget at which synthesis turns infeasible: "
                       f"{threshold:.4f} (reference value {REFERENCE_SCENARIO2_THRESHOLD})")

    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    if not grid["ok"]:
        return EXIT_VERIFY_FAILED
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    handlers = {
        "compute-rsi": cmd_compute_rsi,
        "synthesize": cmd_synthesize,
        "simulate": cmd_simulate,
        "verify": cmd_verify,
        "casestudy": cmd_casestudy,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
