import pytest

from whilerisc.checkers import PreconditionError
from whilerisc.compiler import compile_program
from whilerisc.fixtures import base_memory, load_policy, load_program
from whilerisc.policy import LockSpec, Policy
from whilerisc.sim import (
    SystemConfig,
    ThreadSpec,
    check_mode_compatibility,
    sim_run,
    thread_write_sequence,
    two_run_noninterference,
    unsynchronized_low_sinks,
)
from whilerisc.syntax import parse_program

COMP_POL = load_policy("compositor")
ROUTER = load_program("compositor_router")
CONTROLLER = load_program("compositor_controller")
COMP_MEM = {"domain": 1, "ctl_copy": 1, "switch_req": 1, "source": 7, "high_seed": 3}

TWO_LOCK_POL = Policy(
    universe=("x", "turns", "k"),
    locks={"k": LockSpec(no_write=frozenset(("x",)))},
)


def contender():
    return parse_program(
        """
        acquire k;
        x := (x + 1);
        x := (x + 1);
        release k;
        """
    )


def test_schedule_determinism():
    sys_cfg = SystemConfig(
        (ThreadSpec(contender()), ThreadSpec(contender())),
        {"x": 0, "turns": 0, "k": 0},
        seed=5,
    )
    r1 = sim_run(sys_cfg, TWO_LOCK_POL, 300)
    r2 = sim_run(sys_cfg, TWO_LOCK_POL, 300)
    assert r1.format_trace() == r2.format_trace()
    assert r1.mem == r2.mem


def test_lock_mutual_exclusion_over_1000_seeded_schedules():
    # both threads add 2 under the lock: any interleaving inside the
    # critical section would lose an update
    a, b = contender(), contender()
    for seed in range(1000):
        sys_cfg = SystemConfig(
            (ThreadSpec(a), ThreadSpec(b)), {"x": 0, "turns": 0, "k": 0}, seed=seed
        )
        res = sim_run(sys_cfg, TWO_LOCK_POL, 500)
        assert res.mem["x"] == 4
        assert res.mem["k"] == 0
        assert not res.deadlocked
        if seed % 100 == 0:
            assert check_mode_compatibility(res, TWO_LOCK_POL).passed


def test_single_thread_matches_the_interpreter():
    prog = parse_program("x := 3;\nturns := (x * 2);")
    sys_cfg = SystemConfig((ThreadSpec(prog),), {"x": 0, "turns": 0, "k": 0}, seed=1)
    res = sim_run(sys_cfg, TWO_LOCK_POL, 100)
    assert res.mem["x"] == 3 and res.mem["turns"] == 6
    assert thread_write_sequence(res, 0) == [("x", 3), ("turns", 6)]


def test_deadlock_is_reported():
    pol = Policy(
        universe=("k1", "k2"),
        locks={"k1": LockSpec(), "k2": LockSpec()},
    )
    a = parse_program("acquire k1;\nskip;\nskip;\nskip;\nacquire k2;\nrelease k2;\nrelease k1;")
    b = parse_program("acquire k2;\nskip;\nskip;\nskip;\nacquire k1;\nrelease k1;\nrelease k2;")
    deadlocked = False
    for seed in range(40):
        res = sim_run(SystemConfig((ThreadSpec(a), ThreadSpec(b)), {"k1": 0, "k2": 0}, seed), pol, 200)
        if res.deadlocked:
            deadlocked = True
            assert res.trace[-1].action == "deadlock"
    assert deadlocked


def test_compositor_system_runs_without_assumption_violations():
    sys_cfg = SystemConfig(
        (ThreadSpec(ROUTER), ThreadSpec(CONTROLLER)),
        base_memory(COMP_POL, COMP_MEM),
        seed=11,
    )
    res = sim_run(sys_cfg, COMP_POL, 3000)
    assert not res.deadlocked
    assert res.mem["served"] > 0  # domain switches actually happened
    assert check_mode_compatibility(res, COMP_POL).passed


def test_mode_compatibility_rejects_unlocked_writer():
    rogue = parse_program("while 1 { source := 9; }")
    sys_cfg = SystemConfig(
        (ThreadSpec(ROUTER), ThreadSpec(rogue)),
        base_memory(COMP_POL, COMP_MEM),
        seed=3,
    )
    res = sim_run(sys_cfg, COMP_POL, 600)
    v = check_mode_compatibility(res, COMP_POL)
    assert not v.passed and v.clause == "assume-write"


def test_mode_compatibility_vacuous_for_single_thread():
    res = sim_run(
        SystemConfig((ThreadSpec(ROUTER),), base_memory(COMP_POL, COMP_MEM), 0),
        COMP_POL,
        500,
    )
    assert check_mode_compatibility(res, COMP_POL).passed


def test_sink_list_matches_the_policy():
    sinks = unsynchronized_low_sinks(COMP_POL)
    assert "low_sink" in sinks and "indicator" in sinks
    assert "high_sink" not in sinks  # secret
    assert "source" not in sinks  # value-dependent
    assert "workspace" not in sinks  # lock-governed
    assert "source_lock" not in sinks


def test_two_run_noninterference_on_the_compositor():
    sys_cfg = SystemConfig(
        (ThreadSpec(ROUTER), ThreadSpec(CONTROLLER)),
        base_memory(COMP_POL, COMP_MEM),
        seed=0,
    )
    v = two_run_noninterference(
        sys_cfg, COMP_POL, {"source": -4, "high_seed": 6}, max_steps=1500, seeds=range(12)
    )
    assert v.passed, v.trace


def test_two_run_rejects_low_mutation():
    sys_cfg = SystemConfig(
        (ThreadSpec(ROUTER), ThreadSpec(CONTROLLER)),
        base_memory(COMP_POL, COMP_MEM),
        seed=0,
    )
    with pytest.raises(PreconditionError):
        two_run_noninterference(sys_cfg, COMP_POL, {"suspended": 1}, seeds=range(2))


def test_two_run_catches_a_deliberate_leak():
    leaky = parse_program(
        """
        while 1 {
            acquire workspace_lock;
            acquire source_lock;
            workspace := source;
            low_sink := workspace;
            release source_lock;
            release workspace_lock;
        }
        """
    )
    sys_cfg = SystemConfig(
        (ThreadSpec(leaky), ThreadSpec(CONTROLLER)),
        base_memory(COMP_POL, COMP_MEM),
        seed=0,
    )
    v = two_run_noninterference(
        sys_cfg, COMP_POL, {"source": -4}, max_steps=1200, seeds=range(8)
    )
    assert not v.passed and v.clause == "sink-divergence"


def test_two_run_vacuous_without_high_variables():
    pol = Policy(universe=("a", "b"))
    prog = parse_program("a := (a + 1);")
    sys_cfg = SystemConfig((ThreadSpec(prog),), {"a": 0, "b": 0}, seed=0)
    v = two_run_noninterference(sys_cfg, pol, {}, seeds=range(3))
    assert v.passed


@pytest.mark.parametrize("seed", range(12))
def test_compiled_thread_produces_the_same_writes(seed):
    from genprog import locked_policy, random_program

    pol = locked_policy()
    prog = random_program(seed + 50, pol)
    out = compile_program(prog, pol)
    assert not out.failed
    mem = {x: 0 for x in pol.universe}
    r_src = sim_run(SystemConfig((ThreadSpec(prog),), mem, seed), pol, 4000)
    r_bin = sim_run(SystemConfig((ThreadSpec(out.program),), mem, seed), pol, 4000)
    assert thread_write_sequence(r_src, 0) == thread_write_sequence(r_bin, 0)
    assert r_src.mem == r_bin.mem
