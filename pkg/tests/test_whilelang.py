import pytest

from whilerisc import whilelang as wl
from whilerisc.lang import BLOCKED, STOPPED, BinOp, Const, Var
from whilerisc.policy import LockSpec, Policy
from whilerisc.whilelang import (
    LockDisciplineError,
    WhileConfig,
    leftmost_cmd,
    while_step,
    while_stops,
)

POLICY = Policy(
    universe=("x", "y", "k"),
    locks={"k": LockSpec(no_write=frozenset(("x",)))},
)
MDS0 = wl.ModeState(guar_no_w=frozenset(("x",)))


def cfg(cmd, mem=None, mds=MDS0):
    base = {"x": 0, "y": 0, "k": 0}
    base.update(mem or {})
    return WhileConfig(cmd, mds, base)


def test_assign_is_one_atomic_step():
    c = cfg(wl.Assign("x", BinOp("+", Const(1), Const(1))))
    nxt = while_step(c, POLICY)
    assert isinstance(nxt.cmd, wl.Stop)
    assert nxt.mem["x"] == 2
    assert nxt.mds == c.mds


def test_skip_stops_in_one_step():
    nxt = while_step(cfg(wl.Skip()), POLICY)
    assert isinstance(nxt.cmd, wl.Stop)


def test_while_unrolls_to_if():
    body = wl.Assign("y", Const(1))
    loop = wl.While(Var("x"), body)
    start = cfg(loop, {"x": 5})
    nxt = while_step(start, POLICY)
    assert nxt.cmd == wl.If(Var("x"), wl.Seq(body, loop), wl.Stop())
    assert nxt.mem == start.mem


def test_if_takes_then_branch_on_nonzero():
    c = wl.If(Var("x"), wl.Assign("y", Const(1)), wl.Assign("y", Const(2)))
    assert while_step(cfg(c, {"x": 3}), POLICY).cmd == wl.Assign("y", Const(1))
    assert while_step(cfg(c, {"x": 0}), POLICY).cmd == wl.Assign("y", Const(2))


def test_seq_folds_stop_into_the_terminating_step():
    c = wl.Seq(wl.Assign("x", Const(1)), wl.Assign("y", Const(2)))
    nxt = while_step(cfg(c), POLICY)
    assert nxt.cmd == wl.Assign("y", Const(2))
    assert nxt.mem["x"] == 1


def test_lock_acquire_blocked_when_held():
    assert while_step(cfg(wl.LockAcq("k"), {"k": 1}), POLICY) is BLOCKED


def test_lock_acquire_updates_memory_and_modes():
    nxt = while_step(cfg(wl.LockAcq("k")), POLICY)
    assert nxt.mem["k"] == 1
    assert nxt.mds.asm_no_w == {"x"}
    assert "x" not in nxt.mds.guar_no_w


def test_lock_release_reverses_acquire():
    held = while_step(cfg(wl.LockAcq("k")), POLICY)
    rel = while_step(WhileConfig(wl.LockRel("k"), held.mds, held.mem), POLICY)
    assert rel.mem["k"] == 0
    assert rel.mds == MDS0


def test_release_without_holding_is_a_discipline_error():
    with pytest.raises(LockDisciplineError):
        while_step(cfg(wl.LockRel("k")), POLICY)


def test_stop_reports_stopped():
    assert while_step(cfg(wl.Stop()), POLICY) is STOPPED
    assert while_stops(cfg(wl.Stop()))
    assert not while_stops(cfg(wl.Skip()))
    assert not while_stops(cfg(wl.Seq(wl.Skip(), wl.Skip())))


def test_leftmost_cmd():
    a = wl.Assign("x", Const(1))
    assert leftmost_cmd(wl.Seq(wl.Skip(), a)) == wl.Skip()
    assert leftmost_cmd(wl.Seq(wl.Seq(a, wl.Skip()), wl.Skip())) == a
    loop = wl.While(Var("x"), a)
    assert leftmost_cmd(loop) == loop


def test_determinism_and_single_location_writes():
    prog = wl.Seq(
        wl.Assign("x", Const(3)),
        wl.Seq(
            wl.While(BinOp("<", Const(0), Var("x")),
                     wl.Assign("x", BinOp("-", Var("x"), Const(1)))),
            wl.Assign("y", Const(9)),
        ),
    )
    c = cfg(prog)
    seen = []
    while not while_stops(c):
        nxt = while_step(c, POLICY)
        again = while_step(c, POLICY)
        assert nxt == again
        changed = [v for v in c.mem if c.mem[v] != nxt.mem[v]]
        assert len(changed) <= 1
        if not isinstance(leftmost_cmd(c.cmd), (wl.LockAcq, wl.LockRel)):
            assert nxt.mds == c.mds
        seen.append(nxt)
        c = nxt
    assert c.mem["x"] == 0 and c.mem["y"] == 9
