"""Bundled example programs, policies, and hand-written assembly.

Each fixture records the verdicts the toolkit is expected to produce for
it; the test suite replays the whole registry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Optional, Tuple

from ..policy import Policy
from ..risc import Program
from ..syntax import parse_asm, parse_policy, parse_program
from .. import whilelang as wl


def fixture_text(filename: str) -> str:
    return resources.files(__package__).joinpath(filename).read_text()


def load_policy(name: str) -> Policy:
    return parse_policy(fixture_text(f"{name}.pol"))


def load_program(name: str) -> wl.Cmd:
    return parse_program(fixture_text(f"{name}.w"))


def load_asm(name: str) -> Program:
    return parse_asm(fixture_text(f"{name}.s"))


@dataclass(frozen=True)
class Fixture:
    name: str
    kind: str  # "while" | "asm"
    policy: str
    expected: Dict[str, bool] = field(default_factory=dict)
    scripts: Tuple[Tuple[Tuple[int, str, int], ...], ...] = ()
    initial_mem: Dict[str, int] = field(default_factory=dict)
    notes: str = ""


REGISTRY: Dict[str, Fixture] = {
    f.name: f
    for f in [
        Fixture(
            "worker",
            "while",
            "worker",
            expected={"compile": True, "refinement": True, "timing": True, "high-branching": True},
            scripts=(
                ((400, "suspended", 1), (1200, "suspended", 0), (2600, "suspended", 1)),
                ((50, "suspended", 1), (90, "suspended", 0)),
            ),
            initial_mem={"domain": 1, "source": 5},
        ),
        Fixture(
            "kernel",
            "while",
            "kernel",
            expected={"compile": True, "refinement": True, "timing": True, "bisim": True, "cube": True},
            initial_mem={"domain": 1, "source": 1},
        ),
        Fixture(
            "leaky_copy",
            "while",
            "leaky",
            expected={"compile": True, "high-branching": True, "bisim": False},
        ),
        Fixture("racy_write", "while", "worker", expected={"compile": False}),
        Fixture("racy_read", "while", "worker", expected={"compile": False}),
        Fixture("racy_branch", "while", "worker", expected={"compile": False}),
        Fixture(
            "branch_abs",
            "while",
            "branch",
            expected={"compile": True, "high-branching": False},
            notes="source-level secret branching; rejected by the branching check",
        ),
        Fixture(
            "branch_padded",
            "asm",
            "branch",
            expected={"timing-nocoupling": True, "timing": False},
            notes="equal-step padding: consistent stopping, but locations still diverge",
        ),
        Fixture(
            "branch_unpadded",
            "asm",
            "branch",
            expected={"timing-nocoupling": False, "timing": False},
        ),
        Fixture(
            "compositor_router",
            "while",
            "compositor",
            expected={"compile": True, "refinement": True, "timing": True, "high-branching": True},
            initial_mem={"domain": 1, "ctl_copy": 1, "switch_req": 1, "source": 7, "high_seed": 3},
        ),
        Fixture(
            "compositor_controller",
            "while",
            "compositor",
            expected={"compile": True, "refinement": True, "timing": True, "high-branching": True},
            initial_mem={"domain": 1, "ctl_copy": 1, "switch_req": 1, "source": 7, "high_seed": 3},
        ),
    ]
}


def base_memory(policy: Policy, overrides: Optional[Dict[str, int]] = None) -> Dict[str, int]:
    """All-zero memory over the policy universe, with overrides applied."""
    mem = {x: 0 for x in policy.universe}
    if overrides:
        mem.update(overrides)
    return mem
