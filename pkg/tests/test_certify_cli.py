import json
import os

import pytest

from lqbundle.certify import (
    Certificate,
    export_plots,
    load_scenario,
    run_pipeline,
    write_certificate,
)
from lqbundle.cli import main
from lqbundle.errors import MissingField, ParseError, ValidationError


def write_json(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


S1_DOC = {
    "name": "S1",
    "mode": "stationary",
    "A": [[-2.0]],
    "B": [[1.0]],
    "F1": [[-1.0]],
    "F2": [[0.0]],
    "F3": [[1.0]],
}

SA_DOC = {
    "name": "sa-standard",
    "mode": "spatial-averaging",
    "eigenvalues": {"generator": "power", "p": 2, "n": 8},
    "Lambda": 1.0,
    "delta": 1.0,
    "k": 3,
    "N": 2,
    "driver": {"kind": "periodic", "c0": 1.5, "c1": 0.5, "omega": 1.0},
    "phase_samples": 8,
}


class TestLoadScenario:
    def test_minimal_stationary(self, tmp_path):
        scn = load_scenario(write_json(tmp_path, "s1.json", S1_DOC))
        assert scn.name == "S1" and scn.mode == "stationary" and scn.seed == 42

    def test_search_mode_enabled(self, tmp_path):
        doc = dict(SA_DOC)
        doc["N"] = "search"
        doc["k"] = "search"
        scn = load_scenario(write_json(tmp_path, "sa.json", doc))
        assert scn.payload["N"] == "search"

    def test_asymmetric_f3_rejected(self, tmp_path):
        doc = dict(S1_DOC)
        doc["F3"] = [[1.0, 0.5], [0.0, 1.0]]
        doc["F2"] = [[0.0], [0.0]]
        with pytest.raises(ValidationError):
            load_scenario(write_json(tmp_path, "bad.json", doc))

    def test_missing_field(self, tmp_path):
        doc = {k: v for k, v in S1_DOC.items() if k != "B"}
        with pytest.raises(MissingField):
            load_scenario(write_json(tmp_path, "missing.json", doc))

    def test_bad_json(self, tmp_path):
        path = tmp_path / "garbage.json"
        path.write_text("{not json")
        with pytest.raises(ParseError):
            load_scenario(str(path))


class TestPipeline:
    def test_s1_certificate(self, tmp_path):
        scn = load_scenario(write_json(tmp_path, "s1.json", S1_DOC))
        cert = run_pipeline(scn)
        assert cert.passed
        by_name = {r.name: r for r in cert.records}
        assert by_name["riccati-residual"].value <= 1e-8
        p_entries = {row["entry"]: row["value"] for row in cert.tables["riccati"]}
        assert p_entries["P[0][0]"] == pytest.approx(-0.2679, abs=1e-4)

    def test_sa_standard_certificate(self, tmp_path):
        doc = dict(SA_DOC)
        doc["phase_samples"] = 4
        scn = load_scenario(write_json(tmp_path, "sa.json", doc))
        cert = run_pipeline(scn)
        assert cert.passed
        by_name = {r.name: r for r in cert.records}
        assert by_name["delta-v"].value > 0.0
        assert by_name["uniform-p-bound"].value <= 1.0 / by_name["delta-v"].value + 1e-6
        assert len(cert.tables["fibers"]) == 4

    def test_failing_k1_sa(self, tmp_path):
        doc = dict(SA_DOC)
        doc["k"] = 1
        doc["phase_samples"] = 4
        scn = load_scenario(write_json(tmp_path, "sa1.json", doc))
        cert = run_pipeline(scn)
        assert not cert.passed
        details = " ".join(r.detail for r in cert.records if not r.passed)
        assert "NotPositive" in details

    def test_determinism_byte_identical(self, tmp_path):
        scn = load_scenario(write_json(tmp_path, "s1.json", S1_DOC))
        out1 = run_pipeline(scn).to_json()
        out2 = run_pipeline(scn).to_json()
        assert out1 == out2


class TestExports:
    def test_stationary_schema(self, tmp_path):
        scn = load_scenario(write_json(tmp_path, "s1.json", S1_DOC))
        cert = run_pipeline(scn)
        files = export_plots(cert, str(tmp_path / "out"))
        names = {os.path.basename(f) for f in files}
        assert "freq_margin.csv" in names
        header = open(os.path.join(tmp_path, "out", "freq_margin.csv")).readline()
        assert header.strip() == "omega,min_eig,inv_norm"
        body = open(os.path.join(tmp_path, "out", "freq_margin.csv")).readlines()
        assert len(body) > 10

    def test_empty_certificate_schema_valid(self, tmp_path):
        cert = Certificate(name="empty", mode="stationary", seed=0)
        files = export_plots(cert, str(tmp_path / "empty"))
        assert len(files) == 5
        for f in files:
            lines = open(f).readlines()
            assert len(lines) == 1 and "," in lines[0]

    def test_certificate_json_round_trip(self, tmp_path):
        cert = Certificate(name="x", mode="stationary", seed=7)
        cert.add_upper("alpha", 0.5, 1.0, detail="demo")
        path = write_certificate(cert, str(tmp_path / "o"))
        doc = json.loads(open(path).read())
        assert doc["schema"] == 1
        assert doc["checks"][0]["name"] == "alpha"
        assert doc["pass"] is True


class TestCli:
    def test_verify_s1_exit_zero(self, tmp_path, capsys):
        path = write_json(tmp_path, "s1.json", S1_DOC)
        code = main(["verify", "--scenario", path, "--out", str(tmp_path / "o")])
        assert code == 0
        out = capsys.readouterr().out
        assert "overall: PASS" in out
        assert (tmp_path / "o" / "certificate.json").exists()
        assert (tmp_path / "o" / "fibers.csv").exists()

    def test_input_error_exit_two(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{")
        assert main(["verify", "--scenario", str(path)]) == 2

    def test_check_freq(self, tmp_path, capsys):
        path = write_json(tmp_path, "s1.json", S1_DOC)
        assert main(["check-freq", "--scenario", path]) == 0
        assert "frequency-margin" in capsys.readouterr().out

    def test_riccati_subcommand(self, tmp_path, capsys):
        path = write_json(tmp_path, "s1.json", S1_DOC)
        assert main(["riccati", "--scenario", path]) == 0

    def test_build_lagrange_subcommand(self, tmp_path):
        path = write_json(tmp_path, "s1.json", S1_DOC)
        assert main(["build-lagrange", "--scenario", path]) == 0

    def test_build_lagrange_impossible_tol(self, tmp_path):
        path = write_json(tmp_path, "s1.json", S1_DOC)
        assert main(["build-lagrange", "--scenario", path, "--tol", "1e-16"]) == 1

    def test_sa_search(self, tmp_path, capsys):
        path = write_json(tmp_path, "sa.json", SA_DOC)
        assert main(["sa-search", "--scenario", path]) == 0
        assert "minimal (k, N) = (3, 2)" in capsys.readouterr().out

    def test_report_round_trip(self, tmp_path, capsys):
        path = write_json(tmp_path, "s1.json", S1_DOC)
        out = tmp_path / "o"
        assert main(["check-freq", "--scenario", path, "--out", str(out)]) == 0
        capsys.readouterr()
        assert main(["report", "--scenario", str(out / "certificate.json")]) == 0
        assert "overall: PASS" in capsys.readouterr().out

    def test_report_rejects_non_certificate(self, tmp_path):
        path = write_json(tmp_path, "s1.json", S1_DOC)
        assert main(["report", "--scenario", path]) == 2
