import subprocess
import sys

import pytest

from revcsp import bundled_program
from revcsp.cli import main


@pytest.fixture
def retry_file(tmp_path):
    p = tmp_path / "retry.rcsp"
    p.write_text(bundled_program("retry"))
    return str(p)


def test_run(retry_file, capsys, tmp_path):
    log = tmp_path / "events.tsv"
    assert main(["run", retry_file, "--seed", "2", "--log", str(log), "--check"]) == 0
    out = capsys.readouterr().out
    assert "# p1 = 1" in out and "# p2 = 4" in out
    assert "# terminated after" in out and "# replay: ok" in out
    lines = log.read_text().splitlines()
    assert sum("\tcomm\t" in l for l in lines) == 4
    assert all(len(l.split("\t")) == 6 for l in lines)


def test_run_verbose_shows_silent_steps(retry_file, capsys):
    assert main(["run", retry_file, "--verbose"]) == 0
    assert "silent L1 p1" in capsys.readouterr().out


def test_run_zero_timeout(retry_file, capsys):
    assert main(["run", retry_file, "--timeout", "0"]) == 2


def test_run_stuck(tmp_path, capsys):
    p = tmp_path / "bad.rcsp"
    p.write_text("(system (chan c p q) (proc p (send c 1)) (proc q 0))")
    assert main(["run", str(p), "--timeout", "5"]) == 3
    assert "send-active" in capsys.readouterr().err


def test_parse(retry_file, capsys):
    assert main(["parse", retry_file]) == 0
    assert "2 processes, 1 channels" in capsys.readouterr().out


def test_parse_error(tmp_path, capsys):
    p = tmp_path / "bad.rcsp"
    p.write_text("(system (proc p")
    assert main(["parse", str(p)]) == 65
    assert "1:9: unclosed '('" in capsys.readouterr().err


def test_missing_file(capsys):
    assert main(["run", "/nonexistent/x.rcsp"]) == 66


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 64
    assert main(["check-protocol", "--time-bound", "0"]) == 64
    assert main(["check-protocol", "--inject-fault", "nope"]) == 64


def test_check_protocol(capsys, tmp_path):
    rep = tmp_path / "proto.txt"
    assert main(["check-protocol", "--report", str(rep)]) == 0
    assert "states: 597" in rep.read_text()


def test_check_protocol_fault(capsys):
    assert main(["check-protocol", "--inject-fault", "t7_keep_sync"]) == 1
    assert "result: FAIL" in capsys.readouterr().out


def test_explore_and_refine(retry_file, capsys):
    assert main(["explore", retry_file, "--depth", "10"]) == 0
    assert main(["check-refinement", retry_file, "--depth", "10"]) == 0
    assert main(["check-refinement", retry_file, "--depth", "20", "--inject-fault", "l3_no_time_guard"]) == 1


def test_depth_zero_warning(retry_file, capsys):
    assert main(["check-refinement", retry_file, "--depth", "0"]) == 0
    assert "warning: depth 0" in capsys.readouterr().err


def test_module_entry_point(retry_file):
    res = subprocess.run([sys.executable, "-m", "revcsp", "parse", retry_file],
                         capture_output=True, text=True, timeout=60)
    assert res.returncode == 0 and res.stdout.startswith("ok:")
