"""Every bundled fixture reproduces its recorded expected verdicts."""

import pytest

from whilerisc.checkers import (
    build_bounded_bisim,
    check_cube,
    check_decomp_side_conditions,
    check_no_high_branching,
    check_refinement_run,
)
from whilerisc.compiler import compile_program
from whilerisc.fixtures import REGISTRY, base_memory, load_asm, load_policy, load_program


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_fixture_expectations(name):
    fx = REGISTRY[name]
    policy = load_policy(fx.policy)
    if fx.kind == "asm":
        prog = load_asm(fx.name)
        if "timing" in fx.expected:
            v = check_decomp_side_conditions(policy, raw_prog=prog, count=30, max_steps=80)
            assert v.passed == fx.expected["timing"], v.format_line()
        if "timing-nocoupling" in fx.expected:
            v = check_decomp_side_conditions(
                policy, raw_prog=prog, count=30, max_steps=80, include_pc_coupling=False
            )
            assert v.passed == fx.expected["timing-nocoupling"], v.format_line()
        return

    src = load_program(fx.name)
    out = compile_program(src, policy)
    assert (not out.failed) == fx.expected["compile"], out.reasons
    mem = base_memory(policy, fx.initial_mem)

    if "refinement" in fx.expected:
        v = check_refinement_run(src, policy, mem=mem, compiled=out, max_steps=2000)
        assert v.passed == fx.expected["refinement"], (v.clause, v.trace)
        for i, script in enumerate(fx.scripts):
            v = check_refinement_run(
                src, policy, mem=mem, compiled=out, env_script=list(script),
                max_steps=2000, seed=i,
            )
            assert v.passed == fx.expected["refinement"], (v.clause, v.trace)

    if "timing" in fx.expected:
        v = check_decomp_side_conditions(
            policy, src=src, compiled=out, count=25, max_steps=900, probe_period=41
        )
        assert v.passed == fx.expected["timing"], (v.clause, v.trace)

    if "high-branching" in fx.expected:
        v = check_no_high_branching(src, policy, count=30, max_steps=900)
        assert v.passed == fx.expected["high-branching"], (v.clause, v.trace)

    if "bisim" in fx.expected:
        result = build_bounded_bisim(src, policy, (0, 1))
        assert result.ok == fx.expected["bisim"]
        if "cube" in fx.expected and result.ok:
            v = check_cube(result.relation, src, policy, (0, 1), max_steps=300)
            assert v.passed == fx.expected["cube"], (v.clause, v.trace)
