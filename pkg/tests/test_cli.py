import json

import pytest

from whilerisc import cli
from whilerisc.fixtures import fixture_text
from whilerisc.syntax import parse_asm


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "worker.w").write_text(fixture_text("worker.w"))
    (tmp_path / "worker.pol").write_text(fixture_text("worker.pol"))
    (tmp_path / "racy.w").write_text(fixture_text("racy_write.w"))
    (tmp_path / "leaky.s").write_text(fixture_text("branch_unpadded.s"))
    (tmp_path / "padded.s").write_text(fixture_text("branch_padded.s"))
    (tmp_path / "branch.pol").write_text(fixture_text("branch.pol"))
    (tmp_path / "kernel.w").write_text(fixture_text("kernel.w"))
    (tmp_path / "kernel.pol").write_text(fixture_text("kernel.pol"))
    (tmp_path / "controller.w").write_text(fixture_text("compositor_controller.w"))
    (tmp_path / "router.w").write_text(fixture_text("compositor_router.w"))
    (tmp_path / "compositor.pol").write_text(fixture_text("compositor.pol"))
    return tmp_path


def test_compile_worker(workdir, capsys):
    out = workdir / "worker.s"
    ann = workdir / "worker.jsonl"
    rc = cli.main([
        "compile", str(workdir / "worker.w"), "--policy", str(workdir / "worker.pol"),
        "-o", str(out), "--annotations", str(ann),
    ])
    assert rc == 0
    prog = parse_asm(out.read_text())
    assert len(prog) > 10
    lines = [json.loads(l) for l in ann.read_text().splitlines()]
    assert lines[-1]["final"] is True
    assert all("regrec" in l for l in lines)


def test_compile_racy_exits_1_with_diagnostic(workdir, capsys):
    rc = cli.main(["compile", str(workdir / "racy.w"), "--policy", str(workdir / "worker.pol")])
    assert rc == 1
    assert "data race" in capsys.readouterr().err


def test_check_timing_on_secret_branching_asm(workdir, capsys):
    rc = cli.main([
        "check", "timing", str(workdir / "leaky.s"), "--policy", str(workdir / "branch.pol"),
        "--pairs", "30", "--max-steps", "50",
    ])
    assert rc == 1
    assert "clause=pc-coupling" in capsys.readouterr().out


def test_check_timing_padded_without_coupling(workdir, capsys):
    rc = cli.main([
        "check", "timing", str(workdir / "padded.s"), "--policy", str(workdir / "branch.pol"),
        "--pairs", "30", "--max-steps", "60", "--no-pc-coupling",
    ])
    assert rc == 0


def test_check_refinement_with_env_script(workdir, capsys):
    script = workdir / "env.txt"
    script.write_text("# suspend mid-run\n200 suspended 1\n500 suspended 0\n")
    rc = cli.main([
        "check", "refinement", str(workdir / "worker.w"), "--policy", str(workdir / "worker.pol"),
        "--mem", "domain=1", "--mem", "source=5", "--env-script", str(script),
        "--max-steps", "1500",
    ])
    assert rc == 0
    assert "PASS refinement" in capsys.readouterr().out


def test_check_high_branching(workdir, capsys):
    rc = cli.main([
        "check", "high-branching", str(workdir / "worker.w"),
        "--policy", str(workdir / "worker.pol"), "--pairs", "10", "--max-steps", "400",
    ])
    assert rc == 0


def test_check_bisim_and_cube(workdir, capsys):
    rc = cli.main([
        "check", "bisim", str(workdir / "kernel.w"), "--policy", str(workdir / "kernel.pol"),
    ])
    assert rc == 0
    assert "PASS bisim" in capsys.readouterr().out
    rc = cli.main([
        "check", "cube", str(workdir / "kernel.w"), "--policy", str(workdir / "kernel.pol"),
        "--max-steps", "200",
    ])
    assert rc == 0


def test_check_against_precompiled_artifact(workdir, capsys):
    out = workdir / "worker.s"
    ann = workdir / "worker.jsonl"
    rc = cli.main([
        "compile", str(workdir / "worker.w"), "--policy", str(workdir / "worker.pol"),
        "-o", str(out), "--annotations", str(ann),
    ])
    assert rc == 0
    rc = cli.main([
        "check", "refinement", str(workdir / "worker.w"), "--policy", str(workdir / "worker.pol"),
        "--precompiled", str(out), "--use-annotations", str(ann),
        "--mem", "domain=1", "--max-steps", "800",
    ])
    assert rc == 0
    assert "PASS refinement" in capsys.readouterr().out


def test_run_interprets_source_and_asm(workdir, capsys):
    prog = workdir / "prog.w"
    prog.write_text("low_sink := 7;\n")
    rc = cli.main([
        "run", str(prog), "--policy", str(workdir / "worker.pol"),
    ])
    assert rc == 0
    assert "low_sink = 7" in capsys.readouterr().out
    asm = workdir / "prog.s"
    asm.write_text("MOVEK r0 9\nSTORE low_sink r0\n")
    rc = cli.main(["run", str(asm), "--policy", str(workdir / "worker.pol")])
    assert rc == 0
    assert "low_sink = 9" in capsys.readouterr().out


def test_simulate_two_run(workdir, capsys):
    rc = cli.main([
        "simulate", "--thread", str(workdir / "router.w"), "--thread", str(workdir / "controller.w"),
        "--policy", str(workdir / "compositor.pol"),
        "--mem", "domain=1", "--mem", "ctl_copy=1", "--mem", "switch_req=1",
        "--mem", "source=7", "--mem", "high_seed=3",
        "--two-run", "--mutate", "source=-2", "--runs", "5", "--steps", "1200",
    ])
    assert rc == 0
    assert "PASS two-run-noninterference" in capsys.readouterr().out


def test_simulate_plain(workdir, capsys):
    rc = cli.main([
        "simulate", "--thread", str(workdir / "router.w"), "--thread", str(workdir / "controller.w"),
        "--policy", str(workdir / "compositor.pol"), "--mem", "domain=1", "--mem", "ctl_copy=1",
        "--mem", "switch_req=1", "--seed", "4", "--steps", "1500",
        "--trace-dump", str(workdir / "trace.txt"),
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "PASS mode-compatibility" in out
    dump = (workdir / "trace.txt").read_text().splitlines()
    assert dump and all(len(l.split()) >= 3 for l in dump if l)


def test_usage_errors_exit_2(workdir, capsys):
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["compile", str(workdir / "worker.w")]) == 2  # missing --policy
    assert cli.main(["run", str(workdir / "missing.w"), "--policy", str(workdir / "worker.pol")]) == 2
    assert (
        cli.main([
            "run", str(workdir / "worker.w"), "--policy", str(workdir / "worker.pol"),
            "--mem", "nonsense",
        ])
        == 2
    )


def test_parse_error_exits_2(workdir, capsys):
    bad = workdir / "bad.w"
    bad.write_text("x := ;\n")
    rc = cli.main(["compile", str(bad), "--policy", str(workdir / "worker.pol")])
    assert rc == 2
    assert "error" in capsys.readouterr().err
