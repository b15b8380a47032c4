"""Value-dependent classification, lock interpretations and observational
equivalence.

A policy bundles the variable universe, the classification function and the
lock interpretation.  Classification of a variable may depend on the value of
a *control* variable: `dependent` entries classify `var` Low exactly when
`mem[control] == low_when`, High otherwise.  Lock variables are always
classified Low and live in the same shared memory as program variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Tuple

from .lang import LockName, Memory, ModeState, VarName

HIGH = "High"
LOW = "Low"


class PolicyError(Exception):
    """A query mentioned a variable outside the policy universe."""


@dataclass(frozen=True)
class DependentClass:
    var: VarName
    control: VarName
    low_when: int


@dataclass(frozen=True)
class ClassificationSpec:
    static_high: FrozenSet[VarName] = frozenset()
    dependent: Tuple[DependentClass, ...] = ()


@dataclass(frozen=True)
class LockSpec:
    no_write: FrozenSet[VarName] = frozenset()
    no_read_write: FrozenSet[VarName] = frozenset()


@dataclass(frozen=True)
class Policy:
    universe: Tuple[VarName, ...]
    classification: ClassificationSpec = ClassificationSpec()
    locks: Dict[LockName, LockSpec] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_universe_set", frozenset(self.universe))
        object.__setattr__(
            self, "_dependent_by_var", {d.var: d for d in self.classification.dependent}
        )
        governed = {}
        for k, spec in self.locks.items():
            for v in spec.no_write | spec.no_read_write:
                governed.setdefault(v, k)
        object.__setattr__(self, "_governed_by", governed)

    @property
    def universe_set(self) -> FrozenSet[VarName]:
        return self._universe_set

    @property
    def lock_names(self) -> FrozenSet[LockName]:
        return frozenset(self.locks)

    def lock_interp(self, k: LockName) -> LockSpec:
        try:
            return self.locks[k]
        except KeyError:
            raise PolicyError(f"unknown lock {k!r}") from None

    def governed_lock(self, x: VarName):
        """The lock governing `x`, or None when `x` is ungoverned."""
        return self._governed_by.get(x)


def classify(policy: Policy, mem: Memory, x: VarName) -> str:
    if x not in policy.universe_set:
        raise PolicyError(f"variable {x!r} not in policy universe")
    if x in policy.classification.static_high:
        return HIGH
    dep = policy._dependent_by_var.get(x)
    if dep is not None:
        return LOW if mem[dep.control] == dep.low_when else HIGH
    return LOW


def cvars(policy: Policy, x: VarName) -> FrozenSet[VarName]:
    """Control variables of `x` (variables its classification depends on)."""
    if x not in policy.universe_set:
        raise PolicyError(f"variable {x!r} not in policy universe")
    dep = policy._dependent_by_var.get(x)
    return frozenset((dep.control,)) if dep is not None else frozenset()


def control_vars(policy: Policy) -> FrozenSet[VarName]:
    """The global control set: every variable some classification depends on."""
    return frozenset(d.control for d in policy.classification.dependent)


def readable(mds: ModeState, x: VarName) -> bool:
    return x not in mds.asm_no_rw


def writable(mds: ModeState, x: VarName) -> bool:
    return x not in mds.asm_no_w and x not in mds.asm_no_rw


def readable_writable(mds: ModeState, x: VarName) -> Tuple[bool, bool]:
    return readable(mds, x), writable(mds, x)


def low_mds_eq(policy: Policy, mds: ModeState, mem1: Memory, mem2: Memory) -> bool:
    """Low-equivalence of memories modulo modes.

    Control variables must agree outright; other variables must agree when
    classified Low (under `mem1`) and readable under `mds`.  Lock variables
    are Low and never read-restricted, so lock state is always observable.
    """
    ctrl = control_vars(policy)
    for x in policy.universe:
        if x in ctrl or (classify(policy, mem1, x) == LOW and readable(mds, x)):
            if mem1[x] != mem2[x]:
                return False
    return True


def var_stable(asmrec, policy: Policy, v: VarName) -> bool:
    """True when `v` and all its control variables sit under active
    no-write/no-read-write assumptions, so no other thread can change its
    value or its classification."""
    held = asmrec.no_write | asmrec.no_read_write
    if v not in held:
        return False
    return all(c in held for c in cvars(policy, v))


def initial_mode_state(policy: Policy, held: Iterable[LockName] = ()) -> ModeState:
    """Mode state with the given locks held; guarantees cover every
    lock-governed variable whose lock is free."""
    held = set(held)
    asm_w, asm_rw, guar_w, guar_rw = set(), set(), set(), set()
    for k, spec in policy.locks.items():
        if k in held:
            asm_w |= spec.no_write
            asm_rw |= spec.no_read_write
        else:
            guar_w |= spec.no_write
            guar_rw |= spec.no_read_write
    return ModeState(
        asm_no_w=frozenset(asm_w),
        asm_no_rw=frozenset(asm_rw),
        guar_no_w=frozenset(guar_w),
        guar_no_rw=frozenset(guar_rw),
    )


def validate_policy(policy: Policy) -> List[str]:
    """Check every structural cleanliness condition; returns all violations
    (empty list means the policy is well formed)."""
    out: List[str] = []
    uni = policy.universe_set
    if not policy.universe:
        out.append("universe is empty")
    seen = set()
    for x in policy.universe:
        if x in seen:
            out.append(f"duplicate universe entry {x!r}")
        seen.add(x)

    cls = policy.classification
    dep_vars = [d.var for d in cls.dependent]
    for x in cls.static_high:
        if x not in uni:
            out.append(f"static-high variable {x!r} not in universe")
    for d in cls.dependent:
        if d.var not in uni:
            out.append(f"dependent variable {d.var!r} not in universe")
        if d.control not in uni:
            out.append(f"control variable {d.control!r} not in universe")
        if d.var in cls.static_high:
            out.append(f"{d.var!r} is both static-high and value-dependent")
        if d.control in cls.static_high or d.control in dep_vars:
            out.append(f"control variable {d.control!r} is not always Low")
    for v in dep_vars:
        if dep_vars.count(v) > 1:
            out.append(f"{v!r} has more than one dependent classification")

    ctrl = control_vars(policy)
    governed_seen: Dict[VarName, str] = {}
    for k, spec in policy.locks.items():
        if k not in uni:
            out.append(f"lock {k!r} not in universe")
        if k in ctrl:
            out.append(f"lock {k!r} is a control variable")
        if k in cls.static_high or k in dep_vars:
            out.append(f"lock {k!r} must be classified Low")
        overlap = spec.no_write & spec.no_read_write
        if overlap:
            out.append(f"lock {k!r} governs {sorted(overlap)} for both access kinds")
        for v in spec.no_write | spec.no_read_write:
            if v not in uni:
                out.append(f"lock {k!r} governs unknown variable {v!r}")
            if v in policy.lock_names:
                out.append(f"lock {k!r} governs lock variable {v!r}")
            prev = governed_seen.get(v)
            if prev is not None and prev != k:
                out.append(f"{v!r} governed by two locks ({prev!r} and {k!r})")
            governed_seen[v] = k
        for v in spec.no_write:
            missing = cvars(policy, v) - spec.no_write if v in uni else frozenset()
            if missing:
                out.append(
                    f"lock {k!r} write-governs {v!r} but not its control "
                    f"variables {sorted(missing)}"
                )
        for v in spec.no_read_write:
            missing = cvars(policy, v) - spec.no_read_write if v in uni else frozenset()
            if missing:
                out.append(
                    f"lock {k!r} read/write-governs {v!r} but not its control "
                    f"variables {sorted(missing)}"
                )
    return out
