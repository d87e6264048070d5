"""Average-cost solver: relative value iteration, exact policy evaluation,
and an exhaustive brute-force oracle for tiny instances."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import splu, spsolve

from .errors import (
    FingerprintMismatchError,
    InstanceTooLargeError,
    SingularChainError,
    SolverNumericsError,
)
from .kernel import TransitionKernel, _DENSE_LIMIT, build_kernel
from .model import SystemParams

DEFAULT_EPSILON = 1e-6
DEFAULT_MAX_ITER = 10_000
DEFAULT_TIE_TOLERANCE = 1e-9

# Sweeps without span improvement before the aperiodicity transform kicks in.
_STALL_LIMIT = 50
_DAMPING_TAU = 0.1

_STATIONARY_RESIDUAL_TOL = 1e-10


@dataclass
class ValueFunction:
    """Per-state relative values, normalized to 0 at the reference state."""

    values: np.ndarray
    fingerprint: str = ""


@dataclass
class Policy:
    """Per-state binary action table tagged with the parameter fingerprint."""

    actions: np.ndarray
    fingerprint: str = ""


@dataclass
class SolveReport:
    gain: float
    iterations: int
    final_span: float
    converged: bool
    damping_used: bool
    gain_lower: float
    gain_upper: float
    epsilon: float
    ref_state: int
    span_history: list[float] = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "gain": self.gain,
            "iterations": self.iterations,
            "final_span": self.final_span,
            "converged": self.converged,
            "damping_used": self.damping_used,
            "gain_lower": self.gain_lower,
            "gain_upper": self.gain_upper,
            "epsilon": self.epsilon,
            "ref_state": self.ref_state,
        }


def relative_value_iteration(
    kernel: TransitionKernel,
    costs: np.ndarray | None = None,
    epsilon: float = DEFAULT_EPSILON,
    max_iter: int = DEFAULT_MAX_ITER,
    ref_state: int = 0,
) -> tuple[ValueFunction, SolveReport]:
    """Solve the average-cost Bellman equation by relative value iteration.

    Starting from V = 0, each sweep computes v(s) = min_a {c(s) + sum_s'
    P(s'|s,a) V(s')} and renormalizes V(s) = v(s) - v(ref_state).  Iteration
    stops when the span of successive differences drops below `epsilon`; the
    gain estimate is v(ref_state) of the final sweep and the min/max of the
    final difference bracket the true gain.

    If the span stalls for many consecutive sweeps (a symptom of a periodic
    chain) the remaining sweeps run on the lazy chain tau*I + (1-tau)*P with
    costs scaled by (1-tau).  That transform keeps the argmin structure, and
    its fixed point solves the original Bellman equation with gain scaled by
    (1-tau), which is undone in the report.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    P0, P1 = kernel.matrices
    if costs is None:
        costs = kernel.space.cost_vector()
    costs = np.asarray(costs, dtype=np.float64)
    V = np.zeros(costs.shape[0])
    tau = 0.0
    damping_used = False
    best_span = np.inf
    stall = 0
    span = np.inf
    gain = np.nan
    lo = hi = np.nan
    converged = False
    history: list[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        v = np.minimum(costs + P0 @ V, costs + P1 @ V)
        if tau:
            v = (1.0 - tau) * v + tau * V
        if not np.isfinite(v).all():
            raise SolverNumericsError(f"non-finite value encountered at sweep {iterations}")
        w = v - V
        lo = float(w.min())
        hi = float(w.max())
        span = hi - lo
        history.append(span)
        gain = float(v[ref_state])
        V = v - gain
        if span < epsilon:
            converged = True
            break
        if span < best_span:
            best_span = span
            stall = 0
        else:
            stall += 1
            if stall >= _STALL_LIMIT and tau == 0.0:
                tau = _DAMPING_TAU
                damping_used = True
                best_span = np.inf
                stall = 0
    scale = 1.0 / (1.0 - tau) if tau else 1.0
    report = SolveReport(
        gain=gain * scale,
        iterations=iterations,
        final_span=span,
        converged=converged,
        damping_used=damping_used,
        gain_lower=lo * scale,
        gain_upper=hi * scale,
        epsilon=epsilon,
        ref_state=ref_state,
        span_history=history,
    )
    vf = ValueFunction(values=V, fingerprint=kernel.space.params.fingerprint())
    return vf, report


def extract_policy(
    vf: ValueFunction, kernel: TransitionKernel, tie_tolerance: float = DEFAULT_TIE_TOLERANCE
) -> Policy:
    """Greedy policy from a converged value function.

    Requests a fresh update exactly where the expected next value under
    action 1 undercuts action 0 by more than `tie_tolerance`; ties and
    near-ties resolve to serving the cache.  Empty-battery rows are identical
    across actions, so those states always serve the cache.
    """
    V = np.asarray(vf.values, dtype=np.float64)
    delta_v = kernel.matrices[1] @ V - kernel.matrices[0] @ V
    actions = (delta_v < -tie_tolerance).astype(np.int8)
    return Policy(actions=actions, fingerprint=kernel.space.params.fingerprint())


def _policy_matrix(kernel: TransitionKernel, actions: np.ndarray) -> sparse.csr_matrix:
    a = np.asarray(actions, dtype=np.float64)
    P = sparse.diags(1.0 - a) @ kernel.matrices[0] + sparse.diags(a) @ kernel.matrices[1]
    P = P.tocsr()
    P.eliminate_zeros()
    return P


def _stationary_cost_dense(P_class: np.ndarray, costs_class: np.ndarray) -> float:
    """Average cost inside one closed communicating class (dense solve)."""
    m = P_class.shape[0]
    if m == 1:
        return float(costs_class[0])
    # One balance equation is redundant; replace it with the normalization.
    A = P_class.T - np.eye(m)
    A[m - 1, :] = 1.0
    rhs = np.zeros(m)
    rhs[m - 1] = 1.0
    try:
        pi = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularChainError("stationary system is singular") from exc
    if not np.isfinite(pi).all() or pi.min() < -1e-9:
        raise SingularChainError("stationary solve produced an invalid distribution")
    resid = np.abs(pi @ P_class - pi).max()
    if resid > _STATIONARY_RESIDUAL_TOL:
        raise SingularChainError(f"stationary residual {resid} too large")
    return float(pi @ costs_class)


def _chain_gain_dense(P: np.ndarray, costs: np.ndarray, start: int) -> float:
    """Exact long-run average cost from `start` for a small dense chain.

    Classifies states by strong connectivity (boolean transitive closure),
    computes the stationary average of each reachable closed class, and
    weights multiple classes by their absorption probabilities from `start`.
    """
    m = P.shape[0]
    if m == 1:
        return float(costs[0])
    adj = P > 0.0
    closure = adj | np.eye(m, dtype=bool)
    prev_edges = closure.sum()
    while True:
        cf = closure.astype(np.float32)
        closure |= (cf @ cf) > 0.0
        edges = closure.sum()
        if edges == prev_edges:
            break
        prev_edges = edges
    labels = np.argmax(closure & closure.T, axis=1)  # min index of each class
    escapes = (adj & (labels[:, None] != labels[None, :])).any(axis=1)
    reach = closure[start]
    reachable_classes = np.unique(labels[reach])
    closed_ids = [c for c in reachable_classes if not escapes[labels == c].any()]
    if not closed_ids:
        raise SingularChainError("no closed recurrent class reachable from start")
    gains = {}
    for c in closed_ids:
        members = np.flatnonzero(labels == c)
        gains[c] = _stationary_cost_dense(P[np.ix_(members, members)], costs[members])
    if labels[start] in gains:
        return gains[labels[start]]
    if len(closed_ids) == 1:
        return gains[closed_ids[0]]
    # Several reachable closed classes: weight by absorption probabilities.
    in_closed = np.isin(labels, closed_ids)
    transient = np.flatnonzero(reach & ~in_closed)
    Q = P[np.ix_(transient, transient)]
    rhs = np.column_stack(
        [P[np.ix_(transient, np.flatnonzero(labels == c))].sum(axis=1) for c in closed_ids]
    )
    absorb = np.linalg.solve(np.eye(transient.size) - Q, rhs)
    weights = absorb[int(np.flatnonzero(transient == start)[0])]
    if not np.isfinite(weights).all() or abs(weights.sum() - 1.0) > 1e-8:
        raise SingularChainError("absorption probabilities failed to normalize")
    return float(sum(w * gains[c] for w, c in zip(weights, closed_ids)))


def _stationary_cost_sparse(P_class: sparse.csr_matrix, costs_class: np.ndarray) -> float:
    m = P_class.shape[0]
    if m <= 2000:
        return _stationary_cost_dense(P_class.toarray(), costs_class)
    A = (P_class.T - sparse.identity(m, format="csr")).tolil()
    A[m - 1, :] = np.ones(m)
    rhs = np.zeros(m)
    rhs[m - 1] = 1.0
    pi = spsolve(A.tocsc(), rhs)
    if not np.isfinite(pi).all() or pi.min() < -1e-9:
        raise SingularChainError("stationary solve produced an invalid distribution")
    resid = np.abs(pi @ P_class - pi).max()
    if resid > _STATIONARY_RESIDUAL_TOL:
        raise SingularChainError(f"stationary residual {resid} too large")
    return float(pi @ costs_class)


def _chain_gain_sparse(P: sparse.csr_matrix, costs: np.ndarray, start: int) -> float:
    """Sparse counterpart of `_chain_gain_dense` for large chains."""
    order = csgraph.breadth_first_order(P, start, return_predecessors=False)
    sub = P[order][:, order].tocsr()
    m = sub.shape[0]
    if m == 1:
        return float(costs[order[0]])
    costs_sub = costs[order]
    ncomp, labels = csgraph.connected_components(sub, directed=True, connection="strong")
    rows = np.repeat(np.arange(m), np.diff(sub.indptr))
    escaping = labels[rows] != labels[sub.indices]
    is_open = np.zeros(ncomp, dtype=bool)
    is_open[labels[rows[escaping]]] = True
    closed = np.flatnonzero(~is_open)
    if closed.size == 0:
        raise SingularChainError("no closed recurrent class reachable from start")
    gains = {}
    for comp in closed:
        members = np.flatnonzero(labels == comp)
        gains[comp] = _stationary_cost_sparse(sub[members][:, members].tocsr(), costs_sub[members])
    start_pos = int(np.flatnonzero(order == start)[0])
    if not is_open[labels[start_pos]]:
        return gains[labels[start_pos]]
    if closed.size == 1:
        return gains[closed[0]]
    transient = np.flatnonzero(is_open[labels])
    Q = sub[transient][:, transient].tocsc()
    A = sparse.identity(transient.size, format="csc") - Q
    rhs = np.column_stack(
        [
            np.asarray(sub[transient][:, np.flatnonzero(labels == comp)].sum(axis=1)).ravel()
            for comp in closed
        ]
    )
    absorb = splu(A).solve(rhs)
    weights = absorb[int(np.flatnonzero(transient == start_pos)[0])]
    if not np.isfinite(weights).all() or abs(weights.sum() - 1.0) > 1e-8:
        raise SingularChainError("absorption probabilities failed to normalize")
    return float(sum(w * gains[comp] for w, comp in zip(weights, closed)))


def markov_chain_average_cost(P, costs: np.ndarray, start: int) -> float:
    """Exact long-run average cost of a row-stochastic chain from `start`."""
    costs = np.asarray(costs, dtype=np.float64)
    if sparse.issparse(P):
        if P.shape[0] <= _DENSE_LIMIT:
            return _chain_gain_dense(P.toarray(), costs, start)
        return _chain_gain_sparse(P.tocsr(), costs, start)
    return _chain_gain_dense(np.asarray(P, dtype=np.float64), costs, start)


def policy_average_cost(
    policy: Policy | np.ndarray,
    kernel: TransitionKernel,
    costs: np.ndarray | None = None,
    start: int = 0,
) -> float:
    """Exact average Version AoI of a fixed deterministic policy from `start`."""
    actions = np.asarray(getattr(policy, "actions", policy))
    fp = getattr(policy, "fingerprint", "")
    if fp and fp != kernel.space.params.fingerprint():
        raise FingerprintMismatchError("policy was solved under different parameters")
    if costs is None:
        costs = kernel.space.cost_vector()
    if kernel.space.count <= _DENSE_LIMIT:
        P0, P1 = kernel.dense()
        P = np.where(actions[:, None] != 0, P1, P0)
        return _chain_gain_dense(P, np.asarray(costs, dtype=np.float64), start)
    return markov_chain_average_cost(_policy_matrix(kernel, actions), costs, start)


def brute_force_optimal(
    params: SystemParams,
    start: int = 0,
    max_policies: int = 1 << 20,
) -> tuple[float, Policy]:
    """Enumerate every deterministic stationary policy and return the best.

    Actions are fixed to 0 on empty-battery states (both kernel rows agree
    there), so the enumeration runs over the 2^F policies on the F states
    with b >= 1, each evaluated exactly from `start`.  Ties keep the policy
    encountered first.
    """
    kernel = build_kernel(params)
    costs = kernel.space.cost_vector()
    b, _, _ = kernel.space.components()
    free = np.flatnonzero(b >= 1)
    n_policies = 1 << free.size
    if n_policies > max_policies:
        raise InstanceTooLargeError(n_policies, max_policies)
    fp = params.fingerprint()
    bit_shifts = np.arange(free.size, dtype=np.int64)
    best_gain = np.inf
    best_actions: np.ndarray | None = None
    actions = np.zeros(kernel.space.count, dtype=np.int8)
    for bits in range(n_policies):
        actions[free] = (bits >> bit_shifts) & 1
        gain = policy_average_cost(Policy(actions, fp), kernel, costs, start)
        if gain < best_gain - 1e-15:
            best_gain = gain
            best_actions = actions.copy()
    assert best_actions is not None
    return float(best_gain), Policy(actions=best_actions, fingerprint=fp)


def solve_optimal(
    params: SystemParams,
    epsilon: float = DEFAULT_EPSILON,
    max_iter: int = DEFAULT_MAX_ITER,
    max_states: int | None = None,
) -> tuple[TransitionKernel, ValueFunction, SolveReport, Policy]:
    """Build the kernel, run RVI, and extract the greedy policy."""
    kwargs = {} if max_states is None else {"max_states": max_states}
    kernel = build_kernel(params, **kwargs)
    vf, report = relative_value_iteration(kernel, epsilon=epsilon, max_iter=max_iter)
    policy = extract_policy(vf, kernel)
    return kernel, vf, report, policy


def save_policy_csv(policy: Policy, path, extra_header: list[str] | None = None) -> None:
    lines = [f"# params_fingerprint={policy.fingerprint}"]
    lines += extra_header or []
    lines.append("state_index,action")
    lines += [f"{i},{int(a)}" for i, a in enumerate(policy.actions)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_policy_csv(path) -> Policy:
    fingerprint, rows = _read_table(path)
    actions = np.zeros(len(rows), dtype=np.int8)
    for idx, val in rows:
        actions[int(idx)] = int(val)
    return Policy(actions=actions, fingerprint=fingerprint)


def save_value_csv(vf: ValueFunction, path, extra_header: list[str] | None = None) -> None:
    lines = [f"# params_fingerprint={vf.fingerprint}"]
    lines += extra_header or []
    lines.append("state_index,value")
    lines += [f"{i},{v:.17g}" for i, v in enumerate(vf.values)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_value_csv(path) -> ValueFunction:
    fingerprint, rows = _read_table(path)
    values = np.zeros(len(rows))
    for idx, val in rows:
        values[int(idx)] = float(val)
    return ValueFunction(values=values, fingerprint=fingerprint)


def _read_table(path) -> tuple[str, list[tuple[str, str]]]:
    fingerprint = ""
    rows: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "params_fingerprint=" in line:
                    fingerprint = line.split("params_fingerprint=", 1)[1].strip()
                continue
            first = line.split(",", 1)[0]
            if not first.isdigit():
                continue  # column header
            idx, val = line.split(",", 1)
            rows.append((idx, val))
    return fingerprint, rows
