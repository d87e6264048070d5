"""Machine checks of the chain's structural properties.

The checks mirror the provable structure of the solved problem: a single
closed communicating class under the union of both actions, optimal actions
that depend only on (battery, aggregator age) across causal states, a per-
battery threshold in the aggregator age, and a value function that is
non-decreasing in the aggregator age along causal comparisons.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.sparse import csgraph

from .errors import VaoiError
from .kernel import StateSpace, TransitionKernel
from .model import State
from .solver import Policy, ValueFunction

MONOTONICITY_TOL = 1e-9


@dataclass
class AccessibilityReport:
    closed_class_count: int
    transient_count: int
    closed_class_sizes: list[int]
    # per-state arrays, excluded from JSON
    component_labels: np.ndarray = field(repr=False, default=None)
    closed_mask: np.ndarray = field(repr=False, default=None)

    def to_json(self) -> dict:
        return {
            "closed_class_count": self.closed_class_count,
            "transient_count": self.transient_count,
            "closed_class_sizes": self.closed_class_sizes,
        }


@dataclass
class IndependenceReport:
    passed: bool
    violations: list[tuple[int, int]]  # (state with action 0, state with action 1)
    groups_checked: int

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "violations": [list(v) for v in self.violations],
            "groups_checked": self.groups_checked,
        }


@dataclass
class ThresholdTable:
    per_b: list[int | None]  # least delta_c with action 1, None if always 0
    violations: list[tuple[int, int]]  # (b, delta_c) where the 0/1 pattern steps back
    nonincreasing_in_b: bool  # informational only, never asserted

    def to_json(self) -> dict:
        return {
            "per_b": {str(b): (t if t is not None else "none") for b, t in enumerate(self.per_b)},
            "violations": [list(v) for v in self.violations],
            "nonincreasing_in_b": self.nonincreasing_in_b,
        }

    def to_csv(self) -> str:
        lines = ["b,threshold"]
        lines += [f"{b},{t if t is not None else 'none'}" for b, t in enumerate(self.per_b)]
        return "\n".join(lines) + "\n"


@dataclass
class MonotonicityReport:
    passed: bool
    violations: list[tuple[int, int, float, float]]  # (state1, state2, V1, V2)
    pairs_checked: int

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "violations": [list(v) for v in self.violations],
            "pairs_checked": self.pairs_checked,
        }


@dataclass
class StructureReport:
    accessibility: AccessibilityReport
    delta_independence: IndependenceReport
    thresholds: ThresholdTable | None
    monotonicity: MonotonicityReport

    @property
    def passed(self) -> bool:
        return (
            self.accessibility.closed_class_count == 1
            and self.delta_independence.passed
            and self.thresholds is not None
            and not self.thresholds.violations
            and self.monotonicity.passed
        )

    def to_json(self) -> dict:
        return {
            "accessibility": self.accessibility.to_json(),
            "delta_independence": self.delta_independence.to_json(),
            "thresholds": self.thresholds.to_json() if self.thresholds else None,
            "monotonicity": self.monotonicity.to_json(),
            "passed": self.passed,
        }


def check_weak_accessibility(kernel: TransitionKernel) -> AccessibilityReport:
    """Classify states via the action-union transition graph.

    An edge s -> s' exists when either action reaches s' with positive
    probability, which is the support of the uniformly randomized policy.
    States inside closed strongly connected components form the recurrent
    region; everything else is transient under every stationary policy that
    can also be transient under the randomized one.
    """
    union = (kernel.matrices[0] + kernel.matrices[1]).tocsr()
    n = union.shape[0]
    ncomp, labels = csgraph.connected_components(union, directed=True, connection="strong")
    rows = np.repeat(np.arange(n), np.diff(union.indptr))
    escaping = labels[rows] != labels[union.indices]
    is_open = np.zeros(ncomp, dtype=bool)
    is_open[labels[rows[escaping]]] = True
    closed_mask = ~is_open[labels]
    sizes = np.bincount(labels[closed_mask], minlength=ncomp)
    closed_sizes = sorted((int(s) for s in sizes[sizes > 0]), reverse=True)
    return AccessibilityReport(
        closed_class_count=int((~is_open).sum()),
        transient_count=int(n - closed_mask.sum()),
        closed_class_sizes=closed_sizes,
        component_labels=labels,
        closed_mask=closed_mask,
    )


def check_delta_independence(policy: Policy, space: StateSpace) -> IndependenceReport:
    """Verify the action is constant on every causal (b, delta_c) class."""
    actions = np.asarray(policy.actions)
    b, _, delta_c = space.components()
    causal = space.causal_mask()
    radix = space.params.delta_max + 1
    group = b[causal] * radix + delta_c[causal]
    acts = actions[causal].astype(np.int64)
    n_groups = (space.params.B + 1) * radix
    totals = np.bincount(group, minlength=n_groups)
    ones = np.bincount(group, weights=acts, minlength=n_groups)
    mixed = np.flatnonzero((ones > 0) & (ones < totals))
    violations: list[tuple[int, int]] = []
    if mixed.size:
        causal_idx = np.flatnonzero(causal)
        for gid in mixed:
            members = causal_idx[group == gid]
            zeros = members[actions[members] == 0]
            ons = members[actions[members] == 1]
            violations.append((int(zeros[0]), int(ons[0])))
    return IndependenceReport(
        passed=not violations,
        violations=violations,
        groups_checked=int((totals > 0).sum()),
    )


def extract_thresholds(policy: Policy, space: StateSpace) -> ThresholdTable:
    """Reduce the causal policy to a per-battery step function of delta_c.

    Requires delta-independence to hold; the representative state for a
    (b, delta_c) class has every node age equal to delta_c.
    """
    independence = check_delta_independence(policy, space)
    if not independence.passed:
        raise VaoiError(
            f"policy is not constant on causal (b, delta_c) classes: "
            f"{len(independence.violations)} violating pairs"
        )
    actions = np.asarray(policy.actions)
    params = space.params
    per_b: list[int | None] = []
    violations: list[tuple[int, int]] = []
    for b in range(params.B + 1):
        acts = []
        for dc in range(params.delta_max + 1):
            rep = State(b=b, delta=(dc,) * params.K, delta_c=dc)
            acts.append(int(actions[space.encode(rep)]))
        first_one = next((dc for dc, a in enumerate(acts) if a == 1), None)
        per_b.append(first_one)
        if first_one is not None:
            for dc in range(first_one + 1, params.delta_max + 1):
                if acts[dc] == 0:
                    violations.append((b, dc))
    finite = [t for t in per_b[1:] if t is not None]
    nonincreasing = all(x >= y for x, y in zip(finite, finite[1:]))
    return ThresholdTable(per_b=per_b, violations=violations, nonincreasing_in_b=nonincreasing)


def check_value_monotone_in_deltaC(vf: ValueFunction, space: StateSpace) -> MonotonicityReport:
    """Check V is non-decreasing in the aggregator age along causal pairs.

    Compares V at states that agree everywhere except that coordinate i and
    delta_c are both set to dc1 versus dc2 >= dc1, for every node i,
    battery level, and assignment of the other coordinates that keeps both
    states causal (all other ages >= dc2).
    """
    V = np.asarray(vf.values)
    params = space.params
    K, M = params.K, params.delta_max + 1
    violations: list[tuple[int, int, float, float]] = []
    pairs = 0
    for i in range(K):
        for dc1 in range(M):
            for dc2 in range(dc1, M):
                others = np.array(list(product(range(dc2, M), repeat=K - 1)), dtype=np.int64)
                if others.size == 0:
                    others = np.zeros((1, 0), dtype=np.int64)
                combos = others.shape[0]
                delta1 = np.empty((combos, K), dtype=np.int64)
                delta1[:, :i] = others[:, :i]
                delta1[:, i] = dc1
                delta1[:, i + 1 :] = others[:, i:]
                delta2 = delta1.copy()
                delta2[:, i] = dc2
                for b in range(params.B + 1):
                    bb = np.full(combos, b, dtype=np.int64)
                    s1 = space.encode_components(bb, delta1, np.full(combos, dc1, dtype=np.int64))
                    s2 = space.encode_components(bb, delta2, np.full(combos, dc2, dtype=np.int64))
                    pairs += combos
                    bad = np.flatnonzero(V[s1] > V[s2] + MONOTONICITY_TOL)
                    for j in bad:
                        violations.append(
                            (int(s1[j]), int(s2[j]), float(V[s1[j]]), float(V[s2[j]]))
                        )
    return MonotonicityReport(passed=not violations, violations=violations, pairs_checked=pairs)


def run_structure_checks(
    kernel: TransitionKernel, vf: ValueFunction, policy: Policy
) -> StructureReport:
    """All four structure checks bundled into one report."""
    accessibility = check_weak_accessibility(kernel)
    independence = check_delta_independence(policy, kernel.space)
    thresholds = None
    if independence.passed:
        thresholds = extract_thresholds(policy, kernel.space)
    monotonicity = check_value_monotone_in_deltaC(vf, kernel.space)
    return StructureReport(
        accessibility=accessibility,
        delta_independence=independence,
        thresholds=thresholds,
        monotonicity=monotonicity,
    )
