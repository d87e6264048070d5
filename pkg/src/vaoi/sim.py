"""Seeded Monte Carlo simulation of the update system under a policy.

Each replication is driven by its own counter-based Philox stream derived
from (seed, replication), so results are independent of execution order and
bit-reproducible.  Within a slot the exogenous draws happen in the fixed
order (energy, state change, request, gossip); policies that flip coins use
a separate stream so that different policies under the same seed see
identical environments (common random numbers).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FingerprintMismatchError, ParameterError, VaoiError
from .kernel import StateSpace, _step_batch
from .model import State, SystemParams, validate_params, validate_state
from .solver import (
    DEFAULT_EPSILON,
    DEFAULT_MAX_ITER,
    Policy,
    SolveReport,
    solve_optimal,
)

SWEEP_AXES = ("q_all", "B", "beta", "p_t", "lambda_all")


@dataclass(frozen=True)
class PolicySpec:
    """What the aggregator does when a request arrives and the battery is charged.

    kinds: "optimal" and "threshold" look actions up in a table; "greedy"
    always requests a fresh update; "random" requests one with probability
    `prob`; "never" always serves the cache.  With an empty battery every
    kind serves the cache.
    """

    kind: str
    table: np.ndarray | None = None
    fingerprint: str | None = None
    prob: float = 0.5
    thresholds: tuple | None = None

    @classmethod
    def from_policy(cls, policy: Policy) -> "PolicySpec":
        return cls(kind="optimal", table=np.asarray(policy.actions), fingerprint=policy.fingerprint)

    @classmethod
    def optimal_placeholder(cls) -> "PolicySpec":
        """Marker resolved by `sweep`, which re-solves at every point."""
        return cls(kind="optimal")

    @classmethod
    def greedy(cls) -> "PolicySpec":
        return cls(kind="greedy")

    @classmethod
    def random(cls, prob: float = 0.5) -> "PolicySpec":
        return cls(kind="random", prob=prob)

    @classmethod
    def threshold(cls, per_b: tuple) -> "PolicySpec":
        return cls(kind="threshold", thresholds=tuple(per_b))

    @classmethod
    def never(cls) -> "PolicySpec":
        return cls(kind="never")


@dataclass
class SamplePath:
    """Per-slot trace of one designated replication."""

    t: np.ndarray
    avg_version_aoi: np.ndarray
    b: np.ndarray
    delta_c: np.ndarray
    action: np.ndarray
    request: np.ndarray
    e: np.ndarray
    z: np.ndarray
    g: np.ndarray  # (horizon, K)

    def to_csv(self) -> str:
        K = self.g.shape[1]
        header = "t,avg_version_aoi,b,delta_c,action,request,e,z," + ",".join(
            f"g{k + 1}" for k in range(K)
        )
        lines = [header]
        for i in range(self.t.size):
            gs = ",".join(str(int(x)) for x in self.g[i])
            lines.append(
                f"{int(self.t[i])},{self.avg_version_aoi[i]:.17g},{int(self.b[i])},"
                f"{int(self.delta_c[i])},{int(self.action[i])},{int(self.request[i])},"
                f"{int(self.e[i])},{int(self.z[i])},{gs}"
            )
        return "\n".join(lines) + "\n"


@dataclass
class SimResult:
    mean_avg_version_aoi: float
    std_error: float
    per_replication: np.ndarray
    per_node_mean: np.ndarray
    sample_path: SamplePath | None = None


def _env_stream(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, 2 * rep], dtype=np.uint64)))


def _coin_stream(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(key=np.array([seed, 2 * rep + 1], dtype=np.uint64))
    )


def _validate_spec(spec: PolicySpec, params: SystemParams, space: StateSpace) -> None:
    if spec.kind not in ("optimal", "greedy", "random", "threshold", "never"):
        raise VaoiError(f"unknown policy kind: {spec.kind}")
    if spec.kind == "optimal":
        if spec.table is None:
            raise VaoiError("optimal policy requires an action table; solve the MDP first")
        if len(spec.table) != space.count:
            raise FingerprintMismatchError(
                f"policy table has {len(spec.table)} entries, state space has {space.count}"
            )
        if spec.fingerprint and spec.fingerprint != params.fingerprint():
            raise FingerprintMismatchError("policy table was solved under different parameters")
    if spec.kind == "random" and not 0.0 <= spec.prob <= 1.0:
        raise VaoiError(f"random policy probability out of [0,1]: {spec.prob}")
    if spec.kind == "threshold":
        if spec.thresholds is None or len(spec.thresholds) != params.B + 1:
            raise VaoiError(f"threshold table must have one entry per battery level 0..{params.B}")


def _select_actions(spec, b, delta, dc, space, coins, thr_arr):
    if spec.kind == "never":
        act = np.zeros(b.shape[0], dtype=np.int64)
    elif spec.kind == "greedy":
        act = (b > 0).astype(np.int64)
    elif spec.kind == "random":
        act = ((coins < spec.prob) & (b > 0)).astype(np.int64)
    elif spec.kind == "threshold":
        act = ((dc >= thr_arr[b]) & (b > 0)).astype(np.int64)
    else:  # optimal table
        idx = space.encode_components(b, delta, dc)
        act = np.where(b > 0, spec.table[idx], 0).astype(np.int64)
    return act


def simulate(
    params: SystemParams,
    policy: PolicySpec,
    horizon: int,
    replications: int,
    seed: int,
    initial: State | None = None,
    record_path: bool = False,
) -> SimResult:
    """Run `replications` seeded trajectories and average the Version AoI.

    The cost of the pre-transition state is accumulated for t = 0..horizon-1.
    The default initial state is an empty battery with all ages zero; pass
    `initial` to override.  With `record_path` the full trace of replication
    0 is attached to the result.
    """
    validate_params(params)
    if horizon < 1 or replications < 1:
        raise ParameterError("horizon and replications must be >= 1")
    space = StateSpace(params)
    _validate_spec(policy, params, space)
    K = params.K
    init = initial if initial is not None else State(b=0, delta=(0,) * K, delta_c=0)
    validate_state(init, params)

    thr_arr = None
    if policy.kind == "threshold":
        none_sentinel = params.delta_max + 1  # never reached by delta_c
        thr_arr = np.array(
            [none_sentinel if t is None else int(t) for t in policy.thresholds], dtype=np.int64
        )

    R, T = replications, horizon
    b = np.full(R, init.b, dtype=np.int64)
    delta = np.tile(np.asarray(init.delta, dtype=np.int64), (R, 1))
    dc = np.full(R, init.delta_c, dtype=np.int64)

    draws = np.empty((R, T, 3 + K))
    for rep in range(R):
        draws[rep] = _env_stream(seed, rep).random((T, 3 + K))
    coins = None
    if policy.kind == "random":
        coins = np.empty((R, T))
        for rep in range(R):
            coins[rep] = _coin_stream(seed, rep).random(T)

    q_cum = np.cumsum(params.q)
    lam = np.asarray(params.lam)
    cost_sum = np.zeros(R)
    node_sum = np.zeros(K)
    path = None
    if record_path:
        path = {
            "avg": np.empty(T),
            "b": np.empty(T, dtype=np.int64),
            "dc": np.empty(T, dtype=np.int64),
            "action": np.empty(T, dtype=np.int64),
            "request": np.empty(T, dtype=np.int64),
            "e": np.empty(T, dtype=np.int64),
            "z": np.empty(T, dtype=np.int64),
            "g": np.empty((T, K), dtype=np.int64),
        }

    for t in range(T):
        slot_cost = delta.mean(axis=1)
        cost_sum += slot_cost
        node_sum += delta.sum(axis=0)
        u = draws[:, t, :]
        e = (u[:, 0] < params.beta).astype(np.int64)
        z = (u[:, 1] < params.p_t).astype(np.int64)
        pos = np.searchsorted(q_cum, u[:, 2], side="right")
        r = np.where(pos < K, pos + 1, 0)
        g = (u[:, 3:] < lam).astype(np.int64)
        act = _select_actions(policy, b, delta, dc, space, coins[:, t] if coins is not None else None, thr_arr)
        if record_path:
            path["avg"][t] = slot_cost[0]
            path["b"][t] = b[0]
            path["dc"][t] = dc[0]
            path["action"][t] = act[0]
            path["request"][t] = r[0]
            path["e"][t] = e[0]
            path["z"][t] = z[0]
            path["g"][t] = g[0]
        b, delta, dc = _step_batch(b, delta, dc, act, r, g, e, z, params)

    per_rep = cost_sum / T
    mean = float(per_rep.mean())
    std_error = float(per_rep.std(ddof=1) / np.sqrt(R)) if R > 1 else 0.0
    sample = None
    if record_path:
        sample = SamplePath(
            t=np.arange(T, dtype=np.int64),
            avg_version_aoi=path["avg"],
            b=path["b"],
            delta_c=path["dc"],
            action=path["action"],
            request=path["request"],
            e=path["e"],
            z=path["z"],
            g=path["g"],
        )
    return SimResult(
        mean_avg_version_aoi=mean,
        std_error=std_error,
        per_replication=per_rep,
        per_node_mean=node_sum / (T * R),
        sample_path=sample,
    )


@dataclass(frozen=True)
class Protocol:
    horizon: int = 4000
    replications: int = 400
    seed: int = 1


@dataclass
class SweepRow:
    axis: str
    value: float
    policy: str
    mean: float
    std_error: float
    replications: int
    horizon: int
    converged: bool


@dataclass
class SweepResult:
    axis: str
    rows: list[SweepRow]
    solve_reports: dict[float, SolveReport | None] = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["axis_value,policy,mean,std_error,replications,horizon"]
        lines += [
            f"{row.value:.17g},{row.policy},{row.mean:.17g},{row.std_error:.17g},"
            f"{row.replications},{row.horizon}"
            for row in self.rows
        ]
        return "\n".join(lines) + "\n"


def apply_axis(params: SystemParams, axis: str, value) -> SystemParams:
    """Rebuild the parameter set with one swept knob changed."""
    if axis == "q_all":
        return replace(params, q=(float(value),) * params.K)
    if axis == "lambda_all":
        return replace(params, lam=(float(value),) * params.K)
    if axis == "B":
        return replace(params, B=int(value))
    if axis == "beta":
        return replace(params, beta=float(value))
    if axis == "p_t":
        return replace(params, p_t=float(value))
    raise ParameterError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def _policy_name(spec: PolicySpec) -> str:
    return spec.kind


def _sweep_point(
    params_base: SystemParams,
    axis: str,
    value,
    policies: list[PolicySpec],
    protocol: Protocol,
    epsilon: float,
    max_iter: int,
    initial: State | None,
) -> tuple[list[SweepRow], SolveReport | None]:
    point_params = apply_axis(params_base, axis, value)
    report: SolveReport | None = None
    solved: PolicySpec | None = None
    if any(s.kind == "optimal" and s.table is None for s in policies):
        _, _, report, policy = solve_optimal(point_params, epsilon=epsilon, max_iter=max_iter)
        solved = PolicySpec.from_policy(policy)
    rows = []
    for spec in policies:
        if spec.kind == "optimal" and spec.table is None:
            spec = solved
        result = simulate(
            point_params,
            spec,
            horizon=protocol.horizon,
            replications=protocol.replications,
            seed=protocol.seed,
            initial=initial,
        )
        rows.append(
            SweepRow(
                axis=axis,
                value=float(value),
                policy=_policy_name(spec),
                mean=result.mean_avg_version_aoi,
                std_error=result.std_error,
                replications=protocol.replications,
                horizon=protocol.horizon,
                converged=report.converged if report is not None else True,
            )
        )
    return rows, report


def sweep(
    params_base: SystemParams,
    axis: str,
    values: list,
    policies: list[PolicySpec],
    protocol: Protocol,
    epsilon: float = DEFAULT_EPSILON,
    max_iter: int = DEFAULT_MAX_ITER,
    threads: int = 1,
    initial: State | None = None,
) -> SweepResult:
    """Re-solve and re-simulate every policy at each value of one axis.

    Points are independent; with `threads` > 1 they run concurrently.  Rows
    are always merged in the order of `values` so output is deterministic.
    A non-converged solve marks that point's rows but the sweep continues.
    """
    if axis not in SWEEP_AXES:
        raise ParameterError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    args = [
        (params_base, axis, v, policies, protocol, epsilon, max_iter, initial) for v in values
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda a: _sweep_point(*a), args))
    else:
        results = [_sweep_point(*a) for a in args]
    rows: list[SweepRow] = []
    reports: dict[float, SolveReport | None] = {}
    for v, (point_rows, report) in zip(values, results):
        rows.extend(point_rows)
        reports[float(v)] = report
    return SweepResult(axis=axis, rows=rows, solve_reports=reports)
