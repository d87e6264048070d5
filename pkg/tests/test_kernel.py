"""State indexing, the one-slot transition map, and kernel assembly.

The oracle used here is a from-scratch scalar re-derivation of the update
rules (`oracle_next` / `oracle_row`); the library's vectorized path is always
compared against it rather than against itself.
"""
from __future__ import annotations

import gzip
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import vaoi
from vaoi.model import EnvOutcome

from conftest import REFERENCE, TINY


def oracle_next(state, action, outcome, params):
    """Independent scalar transition: ring gossip, then request service."""
    K, dmax, cap = params.K, params.delta_max, params.B
    delta, dc = list(state.delta), state.delta_c
    r, g, e, z = outcome.r, outcome.g, outcome.e, outcome.z
    aged = []
    for k in range(K):
        base = min(delta[k], delta[(k - 1) % K]) if g[k] else delta[k]
        aged.append(min(base + z, dmax))
    if r == 0:
        return vaoi.State(b=min(state.b + e, cap), delta=tuple(aged), delta_c=min(dc + z, dmax))
    i = r - 1
    if action == 1 and state.b >= 1:
        aged[i] = z
        return vaoi.State(b=min(state.b - 1 + e, cap), delta=tuple(aged), delta_c=z)
    aged[i] = min(dc + z, dmax)
    return vaoi.State(b=min(state.b + e, cap), delta=tuple(aged), delta_c=min(dc + z, dmax))


def oracle_outcomes(params):
    """Exhaustive (outcome, probability) enumeration, zero-mass included."""
    q0 = 1.0 - sum(params.q)
    for r in range(params.K + 1):
        pr = q0 if r == 0 else params.q[r - 1]
        for g in itertools.product((0, 1), repeat=params.K):
            pg = 1.0
            for gk, lk in zip(g, params.lam):
                pg *= lk if gk else 1.0 - lk
            for e in (0, 1):
                pe = params.beta if e else 1.0 - params.beta
                for z in (0, 1):
                    pz = params.p_t if z else 1.0 - params.p_t
                    yield EnvOutcome(r=r, g=g, e=e, z=z), pr * pg * pe * pz


def oracle_row(state, action, params):
    """Exact kernel row by brute-force outcome enumeration."""
    row = {}
    for outcome, prob in oracle_outcomes(params):
        if prob == 0.0:
            continue
        nxt = oracle_next(state, action, outcome, params)
        row[nxt] = row.get(nxt, 0.0) + prob
    return row


def random_small_params(rng):
    K = int(rng.integers(1, 4))
    B = int(rng.integers(1, 4))
    dmax = int(rng.integers(1, 5))
    q = rng.uniform(0.02, 0.9, K)
    if q.sum() >= 1.0:
        q = q * 0.95 / q.sum()
    return vaoi.SystemParams(
        K=K,
        B=B,
        delta_max=dmax,
        beta=float(rng.uniform(0.05, 0.95)),
        p_t=float(rng.uniform(0.05, 1.0)),
        q=tuple(float(x) for x in q),
        lam=tuple(float(x) for x in rng.uniform(0.0, 1.0, K)),
    )


class TestStateIndexing:
    def test_zero_state_is_index_zero(self):
        space = vaoi.StateSpace(REFERENCE)
        assert space.encode(vaoi.State(b=0, delta=(0, 0, 0), delta_c=0)) == 0

    def test_max_state_is_last_index(self):
        space = vaoi.StateSpace(REFERENCE)
        top = vaoi.State(b=5, delta=(9, 9, 9), delta_c=9)
        assert space.encode(top) == space.count - 1

    def test_count(self):
        assert vaoi.StateSpace(REFERENCE).count == 60_000
        assert vaoi.StateSpace(TINY).count == 18

    def test_round_trip_random_states(self):
        space = vaoi.StateSpace(REFERENCE)
        rng = np.random.default_rng(42)
        for idx in rng.integers(0, space.count, 1000):
            s = space.decode(int(idx))
            assert space.encode(s) == idx

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(0, 10_000))
    def test_round_trip_random_spaces(self, K, B, dmax, raw):
        p = vaoi.SystemParams(
            K=K, B=B, delta_max=dmax, beta=0.5, p_t=0.5, q=(0.5 / K,) * K, lam=(0.1,) * K
        )
        space = vaoi.StateSpace(p)
        idx = raw % space.count
        assert space.encode(space.decode(idx)) == idx

    def test_out_of_range(self):
        space = vaoi.StateSpace(TINY)
        with pytest.raises(vaoi.StateSpaceError):
            space.decode(space.count)
        with pytest.raises(vaoi.StateSpaceError):
            space.encode(vaoi.State(b=2, delta=(0,), delta_c=0))


class TestNextState:
    def test_gossip_min_with_cap(self):
        s = vaoi.State(b=2, delta=(3, 1, 2), delta_c=1)
        o = EnvOutcome(r=0, g=(0, 1, 0), e=1, z=1)
        assert vaoi.next_state(s, 0, o, REFERENCE) == vaoi.State(b=3, delta=(4, 2, 3), delta_c=2)

    def test_fresh_update_resets_served_node(self):
        s = vaoi.State(b=1, delta=(5, 5, 5), delta_c=5)
        o = EnvOutcome(r=1, g=(0, 0, 0), e=0, z=0)
        assert vaoi.next_state(s, 1, o, REFERENCE) == vaoi.State(b=0, delta=(0, 5, 5), delta_c=0)

    def test_empty_battery_request_behaves_like_cached(self):
        s = vaoi.State(b=0, delta=(7, 7, 7), delta_c=7)
        o = EnvOutcome(r=2, g=(0, 0, 0), e=0, z=1)
        got = vaoi.next_state(s, 1, o, REFERENCE)
        assert got == vaoi.State(b=0, delta=(8, 8, 8), delta_c=8)
        assert got == vaoi.next_state(s, 0, o, REFERENCE)

    def test_cap_absorbs_state_changes(self):
        s = vaoi.State(b=3, delta=(9, 9, 9), delta_c=9)
        o = EnvOutcome(r=0, g=(0, 0, 0), e=0, z=1)
        got = vaoi.next_state(s, 0, o, REFERENCE)
        assert got.delta == (9, 9, 9) and got.delta_c == 9

    def test_matches_scalar_oracle_on_random_inputs(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            params = random_small_params(rng)
            space = vaoi.StateSpace(params)
            for _ in range(40):
                s = space.decode(int(rng.integers(0, space.count)))
                o = EnvOutcome(
                    r=int(rng.integers(0, params.K + 1)),
                    g=tuple(int(x) for x in rng.integers(0, 2, params.K)),
                    e=int(rng.integers(0, 2)),
                    z=int(rng.integers(0, 2)),
                )
                a = int(rng.integers(0, 2))
                assert vaoi.next_state(s, a, o, params) == oracle_next(s, a, o, params)

    def test_battery_drains_at_most_one(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            params = random_small_params(rng)
            space = vaoi.StateSpace(params)
            for _ in range(50):
                s = space.decode(int(rng.integers(0, space.count)))
                o = EnvOutcome(
                    r=int(rng.integers(0, params.K + 1)),
                    g=tuple(int(x) for x in rng.integers(0, 2, params.K)),
                    e=int(rng.integers(0, 2)),
                    z=int(rng.integers(0, 2)),
                )
                a = int(rng.integers(0, 2))
                nxt = vaoi.next_state(s, a, o, params)
                assert nxt.b >= s.b - 1
                if nxt.b < s.b:
                    assert a == 1 and s.b >= 1 and o.r != 0 and o.e == 0


class TestBuildKernel:
    def test_rows_sum_to_one(self, reference_kernel):
        for action in (0, 1):
            assert np.abs(reference_kernel.row_sums(action) - 1.0).max() <= 1e-12

    def test_probabilities_strictly_positive(self, reference_kernel):
        for action in (0, 1):
            assert reference_kernel.matrices[action].data.min() > 0.0

    def test_empty_battery_rows_identical(self, reference_kernel):
        b, _, _ = reference_kernel.space.components()
        P0, P1 = reference_kernel.matrices
        for s in np.flatnonzero(b == 0)[:: 500]:
            assert reference_kernel.row(int(s), 0) == reference_kernel.row(int(s), 1)
        diff = (P0 - P1).tocsr()
        diff.eliminate_zeros()
        changed_rows = np.flatnonzero(np.diff(diff.indptr))
        assert not np.isin(changed_rows, np.flatnonzero(b == 0)).any()

    def test_k1_kernel_matches_exhaustive_oracle_exactly(self):
        kernel = vaoi.build_kernel(TINY)
        space = kernel.space
        for idx in range(space.count):
            s = space.decode(idx)
            for action in (0, 1):
                expected = {space.encode(ns): p for ns, p in oracle_row(s, action, TINY).items()}
                got = dict(kernel.row(idx, action))
                assert set(got) == set(expected)
                for j in got:
                    assert got[j] == pytest.approx(expected[j], abs=1e-15)

    def test_specific_row_hand_enumeration(self):
        # s = (b=1, delta=(2), delta_c=2), a=1: the request branch (prob 0.5)
        # spends one unit and resets ages to z; the no-request branch keeps
        # the capped state.
        kernel = vaoi.build_kernel(TINY)
        space = kernel.space
        row = {space.decode(j): p for j, p in kernel.row(space.encode(vaoi.State(1, (2,), 2)), 1)}
        assert row == {
            vaoi.State(b=1, delta=(2,), delta_c=2): pytest.approx(0.5),
            vaoi.State(b=0, delta=(0,), delta_c=0): pytest.approx(0.125),
            vaoi.State(b=1, delta=(0,), delta_c=0): pytest.approx(0.125),
            vaoi.State(b=0, delta=(1,), delta_c=1): pytest.approx(0.125),
            vaoi.State(b=1, delta=(1,), delta_c=1): pytest.approx(0.125),
        }

    def test_random_small_kernels_match_oracle_rows(self):
        rng = np.random.default_rng(11)
        for _ in range(8):
            params = random_small_params(rng)
            kernel = vaoi.build_kernel(params)
            space = kernel.space
            for idx in rng.integers(0, space.count, 12):
                s = space.decode(int(idx))
                for action in (0, 1):
                    expected = {
                        space.encode(ns): p for ns, p in oracle_row(s, action, params).items()
                    }
                    got = dict(kernel.row(int(idx), action))
                    assert set(got) == set(expected)
                    for j in got:
                        assert got[j] == pytest.approx(expected[j], abs=1e-14)

    def test_causal_closure(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            params = random_small_params(rng)
            kernel = vaoi.build_kernel(params)
            space = kernel.space
            causal = np.flatnonzero(space.causal_mask())
            for idx in rng.choice(causal, size=min(25, causal.size), replace=False):
                for action in (0, 1):
                    for j, _ in kernel.row(int(idx), action):
                        assert space.decode(j).is_causal()

    def test_size_guard(self):
        with pytest.raises(vaoi.KernelSizeError, match="60000"):
            vaoi.build_kernel(REFERENCE, max_states=10_000)


class TestExport:
    def test_gzipped_csv_round_trips_row_sums(self, tmp_path):
        kernel = vaoi.build_kernel(TINY)
        path = tmp_path / "kernel.csv.gz"
        vaoi.export_csv_gz(kernel, path)
        with gzip.open(path, "rt", encoding="utf-8") as fh:
            header = fh.readline().strip()
            assert header == "state_index,action,next_state_index,probability"
            sums = {}
            for line in fh:
                s, a, j, p = line.strip().split(",")
                sums[(int(s), int(a))] = sums.get((int(s), int(a)), 0.0) + float(p)
        assert len(sums) == kernel.space.count * 2
        assert all(abs(v - 1.0) < 1e-12 for v in sums.values())
