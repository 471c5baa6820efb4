import json
import math

import pytest

from aubin.cli import (
    EXIT_FAILED,
    EXIT_INCONCLUSIVE,
    EXIT_OK,
    EXIT_USAGE,
    dumps,
    exit_code,
    main,
    report_from_json,
)
from aubin.exprs import problem_to_dict
from aubin.verify import AUBIN_VERIFIED, CRITERION_FAILED, INCONCLUSIVE, verify_aubin
from conftest import make_problem


@pytest.fixture(scope="module")
def problems(tmp_path_factory):
    root = tmp_path_factory.mktemp("problems")
    assert main(["examples", "--out", str(root)]) == EXIT_OK
    flat = make_problem(["x1 - p", "x2^2"], ["x2"], 1, name="flat")
    (root / "flat.json").write_text(json.dumps(problem_to_dict(flat)))
    gap = make_problem(["x1^2 + p"], ["x1 - 1"], 1, variables=["x1"], name="gap")
    (root / "gap.json").write_text(json.dumps(problem_to_dict(gap)))
    return root


def test_exit_code_depends_on_verdict_only():
    assert [exit_code(v) for v in (AUBIN_VERIFIED, CRITERION_FAILED, INCONCLUSIVE)] == [0, 2, 3]


def test_examples_lists_fixtures(capsys):
    assert main(["examples"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "example1" in out and "example2" in out and "quadratic" in out


def test_examples_writes_files(problems):
    assert {p.name for p in problems.glob("example*.json")} == {"example1.json", "example2.json"}


def test_verify_with_comparison(problems, capsys):
    assert main(["verify", str(problems / "example1.json"), "--compare-mordukhovich"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "AubinVerified" in out and "classical criterion: fails" in out


@pytest.mark.parametrize("name, code", [("example2", EXIT_OK), ("flat", EXIT_FAILED), ("gap", EXIT_INCONCLUSIVE)])
def test_verify_exit_codes(problems, name, code, capsys):
    assert main(["verify", str(problems / f"{name}.json")]) == code


def test_derivative_prints_three_directions(problems, capsys):
    assert main(["derivative", str(problems / "example1.json"), "--q", "-1", "--format", "json"]) == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert len(data["DS"]) == 3


def test_derivative_checks_dimension(problems, capsys):
    assert main(["derivative", str(problems / "example1.json"), "--q", "1", "2"]) == EXIT_USAGE


def test_derivative_refuses_unverified(problems, capsys):
    assert main(["derivative", str(problems / "flat.json"), "--q", "1"]) == EXIT_FAILED
    assert "verified" in capsys.readouterr().err


def test_probe_command(problems, capsys):
    args = ["probe", str(problems / "quadratic.json"), "--samples", "10", "--seed", "3", "--format", "json"]
    assert main(args) == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert set(data) == {"kappa_hat", "pairs", "anomalies"} and len(data["pairs"]) == 10


def test_missing_file(capsys):
    assert main(["verify", "nosuchfile.json"]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_malformed_file_reports_position(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "name": "x", "H": [1,,]\n}')
    assert main(["verify", str(bad)]) == EXIT_USAGE
    assert "bad.json:2:" in capsys.readouterr().err


def test_bad_expression_reports_position(tmp_path, capsys):
    data = problem_to_dict(make_problem(["x1 - p"], ["x1"], 1, variables=["x1"]))
    data["H"] = ["x1 + * p"]
    path = tmp_path / "expr.json"
    path.write_text(json.dumps(data))
    assert main(["verify", str(path)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "H[0]" in err and "at byte 5" in err


def test_usage_errors(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["verify"]) == EXIT_USAGE
    assert main(["verify", "x.json", "--mode", "v"]) == EXIT_USAGE


@pytest.mark.parametrize("name", ["example1", "example2", "flat"])
def test_json_report_round_trips(problems, name, tmp_path, capsys):
    out = tmp_path / "report.json"
    main(["verify", str(problems / f"{name}.json"), "--format", "json", "--out", str(out), "--compare-mordukhovich"])
    text = out.read_text()
    report = report_from_json(text)
    assert dumps(report.to_dict()) + "\n" == text


def test_in_memory_report_round_trips(problems):
    from aubin.exprs import load_problem
    from aubin.verify import VerifyOptions

    rep = verify_aubin(load_problem(problems / "example1.json"), VerifyOptions(compare_mordukhovich=True))
    assert report_from_json(dumps(rep.to_dict())) == rep


def test_floats_keep_seventeen_digits():
    assert dumps(0.1) == "0.10000000000000001"
    assert float(dumps(1 / 3)) == 1 / 3
    assert dumps([math.inf, -math.inf]) == "[Infinity, -Infinity]"
    assert json.loads(dumps({"a": [1.5, 2], "b": None})) == {"a": [1.5, 2], "b": None}
