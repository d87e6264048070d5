"""State-space enumeration and the exact sparse transition kernel.

States are packed into integers with a mixed-radix code: the battery level is
the most significant digit, then the node ages in ring order, then the
aggregator age as the least significant digit.  The kernel stores one CSR
matrix per action; duplicate successors arising from distinct environment
outcomes are merged by summing their probabilities.
"""
from __future__ import annotations

import gzip
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import KernelSizeError, StateSpaceError, VaoiError
from .model import (
    EnvOutcome,
    State,
    SystemParams,
    outcome_distribution,
    validate_params,
    validate_state,
)

DEFAULT_MAX_STATES = 5_000_000

# Above this state count the dense (ndarray) representation is never built.
_DENSE_LIMIT = 512


class StateSpace:
    """Bijective indexing of the full product state space."""

    def __init__(self, params: SystemParams):
        validate_params(params)
        self.params = params
        radix = params.delta_max + 1
        self.count = (params.B + 1) * radix ** (params.K + 1)
        # weights for digits [b, delta_1 .. delta_K, delta_c]
        self._radix = radix
        self._delta_weights = radix ** np.arange(params.K, 0, -1, dtype=np.int64)
        self._b_weight = radix ** (params.K + 1)
        self._components: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    def encode(self, state: State) -> int:
        validate_state(state, self.params)
        idx = state.b * self._b_weight + state.delta_c
        for d, w in zip(state.delta, self._delta_weights):
            idx += d * w
        return int(idx)

    def decode(self, index: int) -> State:
        if not 0 <= index < self.count:
            raise StateSpaceError(f"state index {index} outside [0, {self.count})")
        rest, delta_c = divmod(index, self._radix)
        delta = []
        for _ in range(self.params.K):
            rest, d = divmod(rest, self._radix)
            delta.append(d)
        return State(b=int(rest), delta=tuple(reversed(delta)), delta_c=int(delta_c))

    def components(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Arrays (b, delta, delta_c) of shape (count,), (count, K), (count,)."""
        if self._components is None:
            idx = np.arange(self.count, dtype=np.int64)
            delta_c = idx % self._radix
            rest = idx // self._radix
            delta = np.empty((self.count, self.params.K), dtype=np.int64)
            for k in range(self.params.K - 1, -1, -1):
                delta[:, k] = rest % self._radix
                rest //= self._radix
            self._components = (rest, delta, delta_c)
        return self._components

    def encode_components(self, b: np.ndarray, delta: np.ndarray, delta_c: np.ndarray) -> np.ndarray:
        return b * self._b_weight + delta @ self._delta_weights + delta_c

    def causal_mask(self) -> np.ndarray:
        """Boolean mask of states where every node age >= the aggregator age."""
        b, delta, delta_c = self.components()
        return delta.min(axis=1) >= delta_c

    def cost_vector(self) -> np.ndarray:
        """Per-state instantaneous cost (mean node Version AoI)."""
        _, delta, _ = self.components()
        return delta.mean(axis=1)


def encode_state(state: State, space: StateSpace) -> int:
    return space.encode(state)


def decode_state(index: int, space: StateSpace) -> State:
    return space.decode(index)


def _step_batch(b, delta, dc, act, r, g, e, z, params: SystemParams):
    """Synchronous one-slot update, vectorized over a leading batch axis.

    Gossip targets use the pre-transition ages of both endpoints; the served
    node's age is overwritten afterwards, so a node served by the aggregator
    ignores gossip that slot.  Every age is capped at delta_max, the battery
    at B.
    """
    dmax = params.delta_max
    pred = np.roll(delta, 1, axis=1)
    gossiped = np.where(g != 0, np.minimum(delta, pred), delta)
    ages = np.minimum(gossiped + z[:, None], dmax)
    cached = np.minimum(dc + z, dmax)
    fresh = (r > 0) & (act != 0) & (b >= 1)
    b_next = np.minimum(np.where(fresh, b - 1, b) + e, params.B)
    dc_next = np.where(fresh, np.minimum(z, dmax), cached)
    served = np.flatnonzero(r > 0)
    ages[served, r[served] - 1] = dc_next[served]
    return b_next, ages, dc_next


def next_state(state: State, action: int, outcome: EnvOutcome, params: SystemParams) -> State:
    """Deterministic successor of `state` under `action` and environment draw."""
    validate_state(state, params)
    if action not in (0, 1):
        raise StateSpaceError(f"action must be 0 or 1, got {action}")
    b = np.array([state.b], dtype=np.int64)
    delta = np.array([state.delta], dtype=np.int64)
    dc = np.array([state.delta_c], dtype=np.int64)
    r = np.array([outcome.r], dtype=np.int64)
    g = np.array([outcome.g], dtype=np.int64)
    e = np.array([outcome.e], dtype=np.int64)
    z = np.array([outcome.z], dtype=np.int64)
    act = np.array([action], dtype=np.int64)
    b2, delta2, dc2 = _step_batch(b, delta, dc, act, r, g, e, z, params)
    return State(b=int(b2[0]), delta=tuple(int(d) for d in delta2[0]), delta_c=int(dc2[0]))


@dataclass
class TransitionKernel:
    """Sparse P[s'|s,a], one row-stochastic CSR matrix per action."""

    space: StateSpace
    matrices: tuple[sparse.csr_matrix, sparse.csr_matrix]
    _dense: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def matrix(self, action: int) -> sparse.csr_matrix:
        return self.matrices[action]

    def row(self, state_index: int, action: int) -> list[tuple[int, float]]:
        """Merged successor list for one (state, action) pair."""
        m = self.matrices[action]
        lo, hi = m.indptr[state_index], m.indptr[state_index + 1]
        return [(int(j), float(p)) for j, p in zip(m.indices[lo:hi], m.data[lo:hi])]

    def row_sums(self, action: int) -> np.ndarray:
        return np.asarray(self.matrices[action].sum(axis=1)).ravel()

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense copies of both action matrices; only for small instances."""
        if self.space.count > _DENSE_LIMIT:
            raise KernelSizeError(self.space.count, _DENSE_LIMIT)
        if self._dense is None:
            self._dense = (self.matrices[0].toarray(), self.matrices[1].toarray())
        return self._dense


def build_kernel(params: SystemParams, max_states: int = DEFAULT_MAX_STATES) -> TransitionKernel:
    """Assemble the transition kernel by aggregating every environment outcome.

    For each action the kernel row of a state is the outcome-probability-
    weighted histogram of deterministic successors.  Rows for both actions
    coincide whenever the battery is empty, because a fresh update cannot be
    produced there.
    """
    space = StateSpace(params)
    if space.count > max_states:
        raise KernelSizeError(space.count, max_states)
    outcomes = outcome_distribution(params)
    b, delta, dc = space.components()
    n = space.count
    rows = np.tile(np.arange(n, dtype=np.int64), len(outcomes))
    matrices = []
    for action in (0, 1):
        act = np.full(n, action, dtype=np.int64)
        cols = np.empty(n * len(outcomes), dtype=np.int64)
        data = np.empty(n * len(outcomes), dtype=np.float64)
        for i, (o, p) in enumerate(outcomes):
            r = np.full(n, o.r, dtype=np.int64)
            g = np.broadcast_to(np.asarray(o.g, dtype=np.int64), (n, params.K))
            e = np.full(n, o.e, dtype=np.int64)
            z = np.full(n, o.z, dtype=np.int64)
            b2, delta2, dc2 = _step_batch(b, delta, dc, act, r, g, e, z, params)
            cols[i * n : (i + 1) * n] = space.encode_components(b2, delta2, dc2)
            data[i * n : (i + 1) * n] = p
        mat = sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
        mat.sort_indices()
        matrices.append(mat)
    kernel = TransitionKernel(space=space, matrices=(matrices[0], matrices[1]))
    for action in (0, 1):
        err = np.abs(kernel.row_sums(action) - 1.0).max()
        if err > 1e-12:
            raise VaoiError(f"kernel rows for action {action} deviate from 1 by {err}")
    return kernel


def export_csv_gz(kernel: TransitionKernel, path) -> None:
    """Dump the kernel as gzipped CSV: state_index,action,next_state_index,probability."""
    with gzip.open(path, "wt", encoding="utf-8", newline="\n") as fh:
        fh.write("state_index,action,next_state_index,probability\n")
        for action in (0, 1):
            m = kernel.matrices[action]
            for s in range(kernel.space.count):
                lo, hi = m.indptr[s], m.indptr[s + 1]
                for j, p in zip(m.indices[lo:hi], m.data[lo:hi]):
                    fh.write(f"{s},{action},{j},{float(p)!r}\n")
