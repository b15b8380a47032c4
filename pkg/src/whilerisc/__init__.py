"""Lock-synchronized While-to-RISC compilation with stability tracking,
plus dynamic checkers for the security obligations a compiler must
preserve: paced refinement, timing/stopping consistency, closedness under
environment interference, and bounded bisimulation."""

from .lang import BinOp, Const, Expr, Memory, Mode, ModeState, Var, eval_exp, exp_vars
from .policy import Policy, classify, cvars, low_mds_eq, validate_policy, var_stable
from .compiler import (
    AsmRec,
    CompRec,
    CompileOutput,
    compile_cmd,
    compile_expr,
    compile_program,
    config_consistent,
    no_unstable_exprs,
    regrec_stable,
)
from .checkers import (
    Verdict,
    abs_steps,
    build_bounded_bisim,
    check_cube,
    check_decomp_side_conditions,
    check_no_high_branching,
    check_refinement_run,
)
from .sim import SystemConfig, ThreadSpec, check_mode_compatibility, sim_run, two_run_noninterference

__version__ = "0.1.0"
