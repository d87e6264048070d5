"""System parameters, states, environment outcomes, and their probability laws.

A single energy-harvesting sensor feeds a cache-enabled aggregator that serves
a ring of K gossiping destination nodes.  Each slot the environment draws an
energy arrival, a source state change, at most one served request, and a
gossip vector; the aggregator chooses between serving a cached update and
requesting a fresh one.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from itertools import product

from .errors import ParameterError, StateSpaceError

_JSON_KEYS = ("K", "B", "delta_max", "beta", "p_t", "q", "lambda")


@dataclass(frozen=True)
class SystemParams:
    """Model constants.

    K: number of destination nodes on the ring.
    B: battery capacity of the sensor, in energy units.
    delta_max: cap applied to every Version AoI counter.
    beta: per-slot energy arrival probability.
    p_t: per-slot source state-change probability.
    q: length-K service probabilities; q[k] is the chance node k+1's
       request is served this slot.  The no-request probability is
       1 - sum(q).
    lam: length-K gossip probabilities; lam[k] is the chance node k+1
       is updated by its ring predecessor (node 1's predecessor is node K).
    """

    K: int
    B: int
    delta_max: int
    beta: float
    p_t: float
    q: tuple[float, ...]
    lam: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(float(x) for x in self.q))
        object.__setattr__(self, "lam", tuple(float(x) for x in self.lam))

    @property
    def q0(self) -> float:
        """Probability that no request is served this slot (clipped at 0)."""
        return max(0.0, 1.0 - sum(self.q))

    def to_json(self) -> dict:
        return {
            "K": self.K,
            "B": self.B,
            "delta_max": self.delta_max,
            "beta": self.beta,
            "p_t": self.p_t,
            "q": list(self.q),
            "lambda": list(self.lam),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SystemParams":
        missing = [k for k in _JSON_KEYS if k not in doc]
        if missing:
            raise ParameterError(f"params JSON missing keys: {missing}")
        unknown = [k for k in doc if k not in _JSON_KEYS]
        if unknown:
            raise ParameterError(f"params JSON has unknown keys: {unknown}")
        return cls(
            K=int(doc["K"]),
            B=int(doc["B"]),
            delta_max=int(doc["delta_max"]),
            beta=float(doc["beta"]),
            p_t=float(doc["p_t"]),
            q=tuple(doc["q"]),
            lam=tuple(doc["lambda"]),
        )

    def fingerprint(self) -> str:
        """Stable hex digest of the parameter values, used to tag artifacts."""
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class State:
    """(battery level, per-node Version AoIs, aggregator Version AoI)."""

    b: int
    delta: tuple[int, ...]
    delta_c: int

    def __post_init__(self):
        object.__setattr__(self, "delta", tuple(int(d) for d in self.delta))

    def is_causal(self) -> bool:
        """True when every node's age is at least the aggregator's age."""
        return all(d >= self.delta_c for d in self.delta)


@dataclass(frozen=True)
class EnvOutcome:
    """One joint draw of the exogenous processes.

    r: served request indicator, 0 for none, i in 1..K for node i.
    g: length-K binary gossip vector (g[k-1] = 1 means node k hears
       from its predecessor this slot).
    e: binary energy arrival.
    z: binary source state change.
    """

    r: int
    g: tuple[int, ...]
    e: int
    z: int


def validate_params(params: SystemParams) -> None:
    """Raise ParameterError naming the first violated constraint.

    p_t = 1 and lam entries in {0, 1} are legal degenerate cases; beta must
    be strictly inside (0, 1).  q entries are strictly inside (0, 1) but
    their sum may reach 1 exactly (a request every slot).
    """
    if params.K < 1:
        raise ParameterError(f"K must be >= 1, got {params.K}")
    if params.B < 1:
        raise ParameterError(f"B must be >= 1, got {params.B}")
    if params.delta_max < 1:
        raise ParameterError(f"delta_max must be >= 1, got {params.delta_max}")
    if not 0.0 < params.beta < 1.0:
        raise ParameterError(f"beta out of (0,1): {params.beta}")
    if not 0.0 < params.p_t <= 1.0:
        raise ParameterError(f"p_t out of (0,1]: {params.p_t}")
    if len(params.q) != params.K:
        raise ParameterError(f"q must have length K={params.K}, got {len(params.q)}")
    if len(params.lam) != params.K:
        raise ParameterError(f"lambda must have length K={params.K}, got {len(params.lam)}")
    for k, qk in enumerate(params.q, start=1):
        if not 0.0 < qk < 1.0:
            raise ParameterError(f"q[{k}] out of (0,1): {qk}")
    if sum(params.q) > 1.0 + 1e-12:
        raise ParameterError(f"sum(q) > 1: {sum(params.q)}")
    for k, lk in enumerate(params.lam, start=1):
        if not 0.0 <= lk <= 1.0:
            raise ParameterError(f"lambda[{k}] out of [0,1]: {lk}")


def validate_state(state: State, params: SystemParams) -> None:
    """Raise StateSpaceError if any component is outside its box."""
    if not 0 <= state.b <= params.B:
        raise StateSpaceError(f"battery level {state.b} outside [0, {params.B}]")
    if len(state.delta) != params.K:
        raise StateSpaceError(f"delta must have length K={params.K}, got {len(state.delta)}")
    for k, d in enumerate(state.delta, start=1):
        if not 0 <= d <= params.delta_max:
            raise StateSpaceError(f"delta[{k}]={d} outside [0, {params.delta_max}]")
    if not 0 <= state.delta_c <= params.delta_max:
        raise StateSpaceError(f"delta_c={state.delta_c} outside [0, {params.delta_max}]")


def outcome_distribution(params: SystemParams) -> list[tuple[EnvOutcome, float]]:
    """Joint law of (r, g, e, z) as a list of (outcome, probability).

    The four processes are independent; the probability of an outcome is the
    product of the marginal masses.  Outcomes with zero probability are
    dropped, so every returned mass is strictly positive and the masses sum
    to 1 up to float rounding.
    """
    validate_params(params)
    request_probs = [params.q0, *params.q]
    energy_probs = (1.0 - params.beta, params.beta)
    change_probs = (1.0 - params.p_t, params.p_t)
    outcomes: list[tuple[EnvOutcome, float]] = []
    for r, pr in enumerate(request_probs):
        if pr == 0.0:
            continue
        for g in product((0, 1), repeat=params.K):
            pg = 1.0
            for gk, lk in zip(g, params.lam):
                pg *= lk if gk else 1.0 - lk
            if pg == 0.0:
                continue
            for e, pe in enumerate(energy_probs):
                if pe == 0.0:
                    continue
                for z, pz in enumerate(change_probs):
                    if pz == 0.0:
                        continue
                    outcomes.append((EnvOutcome(r=r, g=g, e=e, z=z), pr * pg * pe * pz))
    return outcomes


def cost(state: State) -> float:
    """Instantaneous cost: the average Version AoI over the K nodes."""
    return sum(state.delta) / len(state.delta)
