"""Versioned JSON file formats for systems, index reports, and certificates.

One self-describing schema family covers all artifacts; every document has a
``version`` and a ``kind`` field.  Polynomials serialize as record lists

    [{"exps": {"x3": 2, "u1": 1}, "coef": -0.45}, ...]

in lexicographic monomial order.  Serialization is deterministic: keys are
sorted and floats use shortest round-trip representation, so identical data
yields byte-identical files.
"""

from __future__ import annotations

import json

import numpy as np

from .casestudy import EtaSpec, SimConfig, SynthesisConfig, SystemDocument
from .poly import Monomial, Polynomial, Var, poly_from_records, poly_to_records, xvar
from .rsi import RsiEntry, RsiReport
from .sos import SosCertificate
from .synth import (
    ClassKFunction,
    LocalConstraint,
    PolicyCertificate,
    PolicyEntry,
    PolicyStatus,
    WeightMatrix,
)
from .system import InterconnectedSystem, SafetyDomainSampler, SubsystemModel
from .poly import PolyMatrix, PolyVector

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load(path, kind):
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {obj.get('version')!r} in {path}")
    if obj.get("kind") != kind:
        raise FormatError(f"expected a {kind!r} document, found {obj.get('kind')!r}")
    return obj


# -- system documents ----------------------------------------------------------


def _eta_to_dict(e: EtaSpec | ClassKFunction):
    return {"kind": e.kind, "kappa": e.kappa}


def system_to_dict(doc: SystemDocument) -> dict:
    sys = doc.system
    subs = []
    for s in sys.subsystems:
        subs.append({
            "name": s.name,
            "state_dim": s.n,
            "input_dim": s.r,
            "f_slf": [poly_to_records(p) for p in s.f_slf],
            "g_slf": [[poly_to_records(s.g_slf[z, j]) for j in range(s.r)]
                      for z in range(s.n)],
            "f_cpl": [poly_to_records(p) for p in s.f_cpl],
            "g_cpl": (None if s.g_cpl is None else
                      [[poly_to_records(s.g_cpl[z, j]) for j in range(s.r)]
                       for z in range(s.n)]),
            "input_box": [list(b) for b in s.input_box],
        })
    synth = doc.synthesis
    alpha = None
    if synth.alpha is not None:
        alpha = [{"subsystem": i, "constraint": k, "weight": w}
                 for (i, k), w in sorted(synth.alpha.items())]
    return {
        "version": FORMAT_VERSION,
        "kind": "system",
        "name": doc.name,
        "subsystems": subs,
        "protected": sorted(sys.protected),
        "vulnerable": sorted(sys.vulnerable),
        "safety": [poly_to_records(h) for h in sys.safety],
        "bounding_box": [list(b) for b in sys.sampler.box],
        "grid_resolution": sys.sampler.resolution,
        "synthesis": {
            "eta": [_eta_to_dict(e) for e in synth.eta],
            "alpha": alpha,
            "policy_degree": synth.policy_degree,
            "multiplier_degree": synth.multiplier_degree,
            "envelope": [poly_to_records(e) for e in synth.envelope],
            "envelope_eta": _eta_to_dict(synth.envelope_eta),
        },
        "sim": {
            "dt": doc.sim.dt,
            "steps": doc.sim.steps,
            "x0": None if doc.sim.x0 is None else [float(v) for v in doc.sim.x0],
            "scheme": doc.sim.scheme,
        },
    }


def system_from_dict(obj: dict) -> SystemDocument:
    subsystems = []
    x_pos = u_pos = 0
    all_states_count = sum(s["state_dim"] for s in obj["subsystems"])
    all_states = [xvar(i) for i in range(all_states_count)]
    for s in obj["subsystems"]:
        n, r = s["state_dim"], s["input_dim"]
        own = [xvar(x_pos + z) for z in range(n)]
        f_slf = PolyVector([poly_from_records(rec, own) for rec in s["f_slf"]])
        g_slf = PolyMatrix([[poly_from_records(s["g_slf"][z][j], own)
                             for j in range(r)] for z in range(n)])
        f_cpl = PolyVector([poly_from_records(rec, all_states) for rec in s["f_cpl"]])
        g_cpl = None
        if s.get("g_cpl") is not None:
            g_cpl = PolyMatrix([[poly_from_records(s["g_cpl"][z][j], all_states)
                                 for j in range(r)] for z in range(n)])
        subsystems.append(SubsystemModel(
            name=s["name"], n=n, r=r, f_slf=f_slf, g_slf=g_slf,
            f_cpl=f_cpl, g_cpl=g_cpl,
            input_box=tuple(tuple(b) for b in s["input_box"])))
        x_pos += n
        u_pos += r
    system = InterconnectedSystem(
        subsystems=tuple(subsystems),
        protected=frozenset(obj["protected"]),
        vulnerable=frozenset(obj["vulnerable"]),
        safety=tuple(poly_from_records(rec, all_states) for rec in obj["safety"]),
        sampler=SafetyDomainSampler(
            box=tuple(tuple(b) for b in obj["bounding_box"]),
            resolution=obj.get("grid_resolution", 11)))
    sy = obj.get("synthesis", {})
    alpha = None
    if sy.get("alpha"):
        alpha = {(a["subsystem"], a["constraint"]): a["weight"] for a in sy["alpha"]}
    synthesis = SynthesisConfig(
        eta=[EtaSpec(e["kind"], e["kappa"]) for e in sy.get("eta", [])],
        alpha=alpha,
        policy_degree=sy.get("policy_degree", 1),
        multiplier_degree=sy.get("multiplier_degree", 2),
        envelope=[poly_from_records(rec, all_states) for rec in sy.get("envelope", [])],
        envelope_eta=EtaSpec(**sy.get("envelope_eta", {"kind": "linear", "kappa": 20.0})))
    sm = obj.get("sim", {})
    sim = SimConfig(
        dt=sm.get("dt", 0.1), steps=sm.get("steps", 50),
        x0=None if sm.get("x0") is None else np.array(sm["x0"], dtype=float),
        scheme=sm.get("scheme", "euler"))
    return SystemDocument(system, synthesis, sim, name=obj.get("name", "system"))


def save_system(doc: SystemDocument, path) -> None:
    _dump(system_to_dict(doc), path)


def load_system(path) -> SystemDocument:
    return system_from_dict(_load(path, "system"))


# -- SOS certificates -------------------------------------------------------------


def _monomial_to_dict(m: Monomial):
    return {str(v): e for v, e in m.exps}


def _monomial_from_dict(d) -> Monomial:
    return Monomial({Var.parse(name): int(e) for name, e in d.items()})


def cert_to_dict(cert: SosCertificate) -> dict:
    return {
        "label": cert.label,
        "basis": [_monomial_to_dict(m) for m in cert.basis],
        "gram": np.asarray(cert.gram).tolist(),
        "multipliers": [
            {"label": lbl,
             "domain_poly": poly_to_records(g),
             "basis": [_monomial_to_dict(m) for m in basis],
             "gram": np.asarray(Q).tolist()}
            for lbl, g, basis, Q in cert.multipliers],
        "residual": cert.residual,
        "min_eigenvalue": cert.min_eigenvalue,
        "target": None if cert.target is None else poly_to_records(cert.target),
    }


def cert_from_dict(obj: dict) -> SosCertificate:
    def scope_of(records):
        out = set()
        for rec in records:
            out |= {Var.parse(name) for name in rec["exps"]}
        return out

    mults = []
    for m in obj["multipliers"]:
        g = poly_from_records(m["domain_poly"], scope_of(m["domain_poly"]))
        mults.append((m["label"], g,
                      [_monomial_from_dict(b) for b in m["basis"]],
                      np.array(m["gram"])))
    target = None
    if obj.get("target") is not None:
        target = poly_from_records(obj["target"], scope_of(obj["target"]))
    return SosCertificate(
        label=obj["label"],
        basis=[_monomial_from_dict(b) for b in obj["basis"]],
        gram=np.array(obj["gram"]),
        multipliers=mults,
        residual=obj["residual"],
        min_eigenvalue=obj["min_eigenvalue"],
        target=target)


# -- index reports ------------------------------------------------------------------


def report_to_dict(report: RsiReport) -> dict:
    def entry(e: RsiEntry):
        return {
            "value": e.value,
            "backend": e.backend,
            "flagged": e.flagged,
            "vertex": None if e.vertex is None else np.asarray(e.vertex).tolist(),
            "certificate": None if e.certificate is None else cert_to_dict(e.certificate),
        }

    return {
        "version": FORMAT_VERSION,
        "kind": "rsi_report",
        "gamma": [{"subsystem": i, "constraint": k, **entry(e)}
                  for (i, k), e in sorted(report.gamma.items())],
        "beta": [{"constraint": k, **entry(e)} for k, e in sorted(report.beta.items())],
        "oracle_gamma": [{"subsystem": i, "constraint": k, "value": v}
                         for (i, k), v in sorted(report.oracle_gamma.items())],
        "oracle_beta": [{"constraint": k, "value": v}
                        for k, v in sorted(report.oracle_beta.items())],
    }


def report_from_dict(obj: dict) -> RsiReport:
    report = RsiReport()

    def entry(d):
        return RsiEntry(
            value=d["value"], backend=d["backend"], flagged=d.get("flagged"),
            vertex=None if d.get("vertex") is None else np.array(d["vertex"]),
            certificate=(None if d.get("certificate") is None
                         else cert_from_dict(d["certificate"])))

    for d in obj["gamma"]:
        report.gamma[(d["subsystem"], d["constraint"])] = entry(d)
    for d in obj["beta"]:
        report.beta[d["constraint"]] = entry(d)
    for d in obj.get("oracle_gamma", []):
        report.oracle_gamma[(d["subsystem"], d["constraint"])] = d["value"]
    for d in obj.get("oracle_beta", []):
        report.oracle_beta[d["constraint"]] = d["value"]
    return report


def save_report(report: RsiReport, path) -> None:
    _dump(report_to_dict(report), path)


def load_report(path) -> RsiReport:
    return report_from_dict(_load(path, "rsi_report"))


# -- policy certificates ---------------------------------------------------------------


def policy_to_dict(cert: PolicyCertificate) -> dict:
    alpha = None
    if cert.alpha is not None:
        alpha = [{"subsystem": i, "constraint": k, "weight": w}
                 for (i, k), w in sorted(cert.alpha.entries.items())]
    return {
        "version": FORMAT_VERSION,
        "kind": "policy_certificate",
        "status": cert.status.value,
        "mode": cert.mode,
        "message": cert.message,
        "eta": [_eta_to_dict(e) for e in cert.eta],
        "alpha": alpha,
        "shrink": [{"constraint": k, "level": c} for k, c in sorted(cert.shrink.items())],
        "entries": [
            {"subsystem": i,
             "status": e.status.value,
             "message": e.message,
             "policies": [poly_to_records(p) for p in e.policies],
             "certificates": [cert_to_dict(c) for _, c in sorted(e.certificates.items())]}
            for i, e in sorted(cert.entries.items())],
        "rsi": None if cert.rsi is None else report_to_dict(cert.rsi),
        "envelope": [poly_to_records(e) for e in cert.envelope],
        "envelope_eta": None if cert.envelope_eta is None else _eta_to_dict(cert.envelope_eta),
        "locals": [
            {"constraint": lc.k, "subsystem": lc.subsystem,
             "eta": _eta_to_dict(lc.eta),
             "corners": [{"corner": list(c), "condition": poly_to_records(p)}
                         for c, p in lc.corner_conditions]}
            for lc in cert.locals],
    }


def policy_from_dict(obj: dict, sys: InterconnectedSystem) -> PolicyCertificate:
    all_states = [xvar(i) for i in range(sys.n)]
    eta = [ClassKFunction(e["kind"], e["kappa"]) for e in obj["eta"]]
    alpha = None
    if obj.get("alpha"):
        entries = {(a["subsystem"], a["constraint"]): a["weight"] for a in obj["alpha"]}
        alpha = WeightMatrix(entries, sys.protected, sys.K)
    cert = PolicyCertificate(
        status=PolicyStatus(obj["status"]),
        alpha=alpha,
        eta=eta,
        mode=obj.get("mode", "standard"),
        message=obj.get("message", ""),
        shrink={d["constraint"]: d["level"] for d in obj.get("shrink", [])},
        envelope=[poly_from_records(rec, all_states) for rec in obj.get("envelope", [])],
        envelope_eta=(None if obj.get("envelope_eta") is None
                      else ClassKFunction(**obj["envelope_eta"])))
    if obj.get("rsi") is not None:
        cert.rsi = report_from_dict(obj["rsi"])
    for d in obj["entries"]:
        certs = {}
        for c in d.get("certificates", []):
            certs[c["label"]] = cert_from_dict(c)
        cert.entries[d["subsystem"]] = PolicyEntry(
            subsystem=d["subsystem"],
            status=PolicyStatus(d["status"]),
            message=d.get("message", ""),
            policies=[poly_from_records(rec, all_states) for rec in d["policies"]],
            certificates=certs)
    for d in obj.get("locals", []):
        cert.locals.append(LocalConstraint(
            k=d["constraint"], subsystem=d["subsystem"],
            eta=ClassKFunction(**d["eta"]),
            corner_conditions=[(tuple(c["corner"]),
                                poly_from_records(c["condition"], all_states))
                               for c in d["corners"]]))
    return cert


def save_policy(cert: PolicyCertificate, path) -> None:
    _dump(policy_to_dict(cert), path)


def load_policy(path, sys: InterconnectedSystem) -> PolicyCertificate:
    return policy_from_dict(_load(path, "policy_certificate"), sys)
