import json
from pathlib import Path

import pytest

from qcoupling.cli import main


def run(*argv):
    return main(list(argv))


def files_in(path):
    return {p.name: p.read_bytes() for p in Path(path).iterdir()}


def load_summary(path, prefix):
    matches = [p for p in Path(path).iterdir() if p.name.startswith(prefix) and p.suffix == ".json"]
    assert len(matches) == 1, matches
    return json.loads(matches[0].read_text())


class TestExitCodes:
    def test_unknown_model_is_invalid_input(self, tmp_path):
        assert run("validate", "--model", "nonsense", "--out", str(tmp_path)) == 2

    def test_missing_file_is_invalid_input(self, tmp_path):
        assert run("validate", "--chain", "/no/such.json", "--out", str(tmp_path)) == 2

    def test_guard_exceeded_is_3(self, tmp_path):
        code = run("coalesce", "--model", "colorings-path5-q7", "--out", str(tmp_path))
        assert code == 3

    def test_failed_math_check_is_1(self, tmp_path):
        # the printed fixture variant is deliberately not a stochastic coupling
        assert run("validate", "--model", "cycle3-printed", "--out", str(tmp_path)) == 1

    def test_valid_model_is_0(self, tmp_path):
        assert run("validate", "--model", "hypercube2", "--out", str(tmp_path)) == 0


class TestQuantize:
    def test_printed_fixture_report(self, tmp_path):
        assert run("quantize", "--model", "cycle3-printed", "--out", str(tmp_path)) == 0
        doc = load_summary(tmp_path, "quantize-cycle3-printed")
        assert doc["cp"] is False
        assert doc["choi_min_eigenvalue"] == pytest.approx(-1.04, abs=0.01)
        assert doc["choi_eigenvalue_sum"] == pytest.approx(3.0, abs=1e-9)

    def test_cp_model_report(self, tmp_path):
        assert run("quantize", "--model", "hypercube2", "--out", str(tmp_path)) == 0
        doc = load_summary(tmp_path, "quantize-hypercube2")
        assert doc["channel_cp"] is True and doc["trace_preserving"] is True


class TestVerify:
    def test_hypercube3_all_pass(self, tmp_path):
        code = run(
            "verify", "--model", "hypercube3", "--m-max", "10", "--states", "3",
            "--out", str(tmp_path),
        )
        assert code == 0
        doc = load_summary(tmp_path, "verify-hypercube3")
        assert doc["pass"] is True
        names = [c["check"] for c in doc["checks"]]
        assert len(names) == len(set(names))  # every check listed exactly once


class TestCoalesce:
    def test_exact_csv_columns(self, tmp_path):
        assert run(
            "coalesce", "--model", "hypercube2", "--m-max", "6", "--out", str(tmp_path)
        ) == 0
        csv = next(p for p in tmp_path.iterdir() if p.suffix == ".csv")
        assert csv.read_text().splitlines()[0] == "m,tail_max"

    def test_mc_requires_seed(self, tmp_path):
        assert run(
            "coalesce", "--model", "hypercube3", "--mc", "--out", str(tmp_path)
        ) == 2

    def test_mc_determinism_across_runs_and_workers(self, tmp_path):
        outs = []
        for i, workers in enumerate(("1", "4", "1")):
            out = tmp_path / f"run{i}"
            assert run(
                "coalesce", "--model", "hypercube8", "--mc",
                "--samples", "20000", "--seed", "7", "--workers", workers,
                "--m-grid", "10", "20", "33", "--out", str(out),
            ) == 0
            outs.append(files_in(out))
        assert outs[0] == outs[1] == outs[2]


class TestEvolve:
    def test_trace_csv_columns(self, tmp_path):
        assert run(
            "evolve", "--model", "hypercube3", "--m-max", "8", "--out", str(tmp_path)
        ) == 0
        csv = next(p for p in tmp_path.iterdir() if p.suffix == ".csv")
        header = csv.read_text().splitlines()[0]
        assert header == (
            "m,trace_distance,qperp_overlap,classical_tail_max,"
            "qperp_bound,theorem_envelope"
        )


class TestDilate:
    def test_amplified_hypercube2(self, tmp_path):
        code = run(
            "dilate", "--model", "hypercube2", "--mode", "amplified",
            "--states", "3", "--out", str(tmp_path),
        )
        assert code == 0
        doc = load_summary(tmp_path, "dilate-hypercube2")
        assert doc["pass"] is True and doc["kappa"] == 4


class TestModelAndConfig:
    def test_model_materializes_json(self, tmp_path):
        assert run("model", "--model", "hardcore-path3", "--out", str(tmp_path)) == 0
        doc = load_summary(tmp_path, "model-hardcore-path3")
        assert doc["n_states"] == 5
        assert doc["coupling"]["kind"] == "rmr"

    def test_config_file_mirrors_flags(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"model": "hypercube2", "out": str(tmp_path / "o")}))
        assert run("--config", str(cfg), "validate") == 0

    def test_config_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"modell": "hypercube2"}))
        assert run("--config", str(cfg), "validate") == 2

    def test_rerun_identical_content(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("quantize", "--model", "cycle3-prose", "--out", str(out)) == 0
        assert files_in(a) == files_in(b)
