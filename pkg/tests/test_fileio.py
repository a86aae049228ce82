"""Round-trips for the versioned JSON artifact formats."""

import json

import numpy as np
import pytest

from resilsafe.casestudy import three_rooms
from resilsafe.fileio import (
    FormatError,
    load_policy,
    load_report,
    load_system,
    save_policy,
    save_report,
    save_system,
)
from resilsafe.rsi import compute_report
from resilsafe.synth import ClassKFunction, PolicyStatus, run_algorithm1
from resilsafe.system import validate


@pytest.fixture(scope="module")
def rooms1():
    return three_rooms(1)


class TestSystemFormat:
    def test_round_trip_scenario1(self, rooms1, tmp_path):
        path = tmp_path / "sys.json"
        save_system(rooms1, path)
        back = load_system(path)
        assert validate(back.system) == []
        assert back.system.protected == rooms1.system.protected
        assert back.system.safety[0] == rooms1.system.safety[0]
        assert back.synthesis.eta[0].kappa == 10.0
        assert back.sim.dt == rooms1.sim.dt
        assert np.allclose(back.sim.x0, rooms1.sim.x0)

    def test_round_trip_scenario2_envelope(self, tmp_path):
        doc = three_rooms(2)
        path = tmp_path / "sys2.json"
        save_system(doc, path)
        back = load_system(path)
        assert len(back.synthesis.envelope) == 2
        assert back.synthesis.envelope[0] == doc.synthesis.envelope[0]

    def test_deterministic_bytes(self, rooms1, tmp_path):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_system(rooms1, p1)
        save_system(rooms1, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_version_check(self, rooms1, tmp_path):
        path = tmp_path / "sys.json"
        save_system(rooms1, path)
        obj = json.loads(path.read_text())
        obj["version"] = 99
        path.write_text(json.dumps(obj))
        with pytest.raises(FormatError, match="version"):
            load_system(path)

    def test_kind_check(self, rooms1, tmp_path):
        path = tmp_path / "sys.json"
        save_system(rooms1, path)
        obj = json.loads(path.read_text())
        obj["kind"] = "pancake"
        path.write_text(json.dumps(obj))
        with pytest.raises(FormatError, match="system"):
            load_system(path)


class TestReportFormat:
    def test_round_trip_with_certificates(self, rooms1, tmp_path):
        report = compute_report(rooms1.system, backend="sos", with_oracle=True)
        path = tmp_path / "rsi.json"
        save_report(report, path)
        back = load_report(path)
        assert back.gamma_value(0, 0) == pytest.approx(report.gamma_value(0, 0))
        assert back.beta_value(0) == pytest.approx(report.beta_value(0))
        assert back.oracle_gamma[(0, 0)] == pytest.approx(report.oracle_gamma[(0, 0)])
        cert = back.gamma[(0, 0)].certificate
        assert cert is not None
        assert cert.gram.shape == report.gamma[(0, 0)].certificate.gram.shape
        assert cert.target is not None


class TestPolicyFormat:
    def test_round_trip_standard(self, rooms1, tmp_path):
        report = compute_report(rooms1.system, backend="sos", with_oracle=False)
        cert = run_algorithm1(rooms1.system, eta=[ClassKFunction("linear", 10.0)],
                              rsi=report)
        path = tmp_path / "policy.json"
        save_policy(cert, path)
        back = load_policy(path, rooms1.system)
        assert back.status is PolicyStatus.FEASIBLE
        assert back.mode == "standard"
        for i in (1, 2):
            assert back.policy(i)[0] == cert.policy(i)[0]
        assert back.rsi.beta_value(0) == pytest.approx(report.beta_value(0))
        # stored SOS certificates carry their targets for re-verification
        entry = back.entries[1]
        some = next(iter(entry.certificates.values()))
        assert some.target is not None
