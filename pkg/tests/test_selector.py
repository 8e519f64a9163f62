import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xaas.explainers import MethodProfile
from xaas.selector import (CLOUD, DEVICE, EDGE, CostWeights, DeviceInfo, Location, Payload,
                           estimate_cost, select)

LIME = MethodProfile("lime_local", 1000, 0.988)
GRAD = MethodProfile("grad_attr", 2, 0.986, frozenset({"linear", "mlp2"}))
DEV = DeviceInfo("d0", bandwidth_kb_per_ms=1.0, input_dim=8)


def exhaustive(rho_fid, rho_lat, device, locations, methods, kind, weights):
    """Brute force over every (method, location) pair, lexicographic objective."""
    applicable = [m for m in methods if m.applicable(kind)]
    rank = {m.method_id: (-m.fidelity_prior, m.base_cost, m.method_id) for m in applicable}
    pairs = []
    for m, (li, loc) in itertools.product(applicable, enumerate(locations)):
        total = estimate_cost(m, loc, device, weights).total_ms
        pairs.append((rank[m.method_id], total, li, m, loc))
    eligible = [p for p in pairs if p[3].fidelity_prior >= rho_fid]
    feasible = [p for p in eligible if p[1] <= rho_lat]
    if feasible:
        best = min(feasible, key=lambda p: p[:3])
        return best[3].method_id, best[2], True
    if eligible:
        best = min(eligible, key=lambda p: p[:3])
        return best[3].method_id, best[2], False
    if pairs:
        top = min(rank.values())
        best = min((p for p in pairs if p[0] == top), key=lambda p: p[:3])
        return best[3].method_id, best[2], False
    return None


def random_instance(rng):
    n_m = int(rng.integers(1, 6))
    methods = []
    for i in range(n_m):
        kinds = frozenset({"linear", "mlp2", "tree"}) if rng.random() < 0.7 \
            else frozenset({"linear", "mlp2"})
        # rounded priors and costs produce ties on purpose
        methods.append(MethodProfile(f"m{i}", int(rng.choice([2, 10, 100, 500, 1000])),
                                     float(np.round(rng.uniform(0.85, 1.0), 2)), kinds))
    locations = [Location(DEVICE, "dev", float(rng.choice([1, 10, 50])))]
    for j in range(int(rng.integers(0, 4))):
        locations.append(Location(EDGE, f"e{j}", float(rng.choice([20, 50, 100])),
                                  float(rng.choice([0.0, 5.0, 20.0])),
                                  float(rng.choice([4.0, 8.0]))))
    if rng.random() < 0.5:
        locations.append(Location(CLOUD, "c", 200.0, 0.0, 40.0))
    device = DeviceInfo("d", float(rng.choice([0.25, 1.0, 2.5])), int(rng.integers(2, 20)))
    return (float(np.round(rng.uniform(0.84, 1.0), 2)), float(rng.uniform(1, 120)), device,
            locations, methods, str(rng.choice(["linear", "mlp2", "tree"])),
            CostWeights(float(rng.choice([0.0, 0.5, 1.0])), float(rng.choice([0.5, 1.0]))))


class TestEstimateCost:
    def test_grad_on_device(self):
        est = estimate_cost(GRAD, Location(DEVICE, "d", 1.0), DEV)
        assert (est.t_compute_ms, est.t_comm_ms, est.total_ms) == (2.0, 0.0, 2.0)

    def test_lime_on_edge(self):
        est = estimate_cost(LIME, Location(EDGE, "e", 100.0, 0.0, 8.0), DEV)
        assert est.t_compute_ms == 10.0
        payload_ms = Payload().bytes(8) / 1000.0
        assert est.total_ms == pytest.approx(18.0 + payload_ms)
        assert payload_ms < 0.5

    def test_queue_delay_added(self):
        est = estimate_cost(LIME, Location(EDGE, "e", 100.0, 7.5, 8.0), DEV)
        assert est.t_compute_ms == 17.5

    def test_payload_sizes(self):
        assert Payload().bytes(16) == (16 * 8 + 64) + (2 * 16 * 8 + 128)

    def test_beta_zero_ignores_bandwidth(self):
        rng = np.random.default_rng(0)
        w = CostWeights(1.0, 0.0)
        for _ in range(50):
            loc = Location(EDGE, "e", float(rng.uniform(1, 100)), float(rng.uniform(0, 9)),
                           float(rng.uniform(1, 50)))
            a = estimate_cost(LIME, loc, DeviceInfo("a", 0.1, 8), w)
            b = estimate_cost(LIME, loc, DeviceInfo("b", 9.0, 8), w)
            assert a.total_ms == b.total_ms

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            CostWeights(0.0, 0.0)
        with pytest.raises(ValueError):
            Location(EDGE, "e", 0.0)


class TestSelect:
    def test_single_pair(self):
        loc = Location(EDGE, "e", 100.0, 0.0, 8.0)
        sel = select(0.9, 50.0, DEV, [loc], [LIME], "mlp2")
        assert sel.method is LIME and sel.location is loc and sel.feasible

    def test_tight_budget_forces_grad_on_device(self):
        locs = [Location(DEVICE, "d", 1.0), Location(EDGE, "e", 100.0, 0.0, 8.0)]
        sel = select(0.9, 3.0, DEV, locs, [LIME, GRAD], "mlp2")
        assert sel.method is GRAD and sel.location.kind == DEVICE and sel.feasible
        relaxed = select(0.9, 30.0, DEV, locs, [LIME, GRAD], "mlp2")
        assert relaxed.method is LIME and relaxed.location.kind == EDGE

    def test_infeasible_returns_best_effort(self):
        locs = [Location(DEVICE, "d", 1.0), Location(EDGE, "e", 100.0, 0.0, 8.0)]
        sel = select(0.9, 1.0, DEV, locs, [LIME, GRAD], "mlp2")
        assert not sel.feasible and sel.sla_missed
        assert sel.method is LIME and sel.location.kind == EDGE

    def test_not_applicable_method_skipped(self):
        sel = select(0.9, 100.0, DEV, [Location(DEVICE, "d", 1.0)], [GRAD, LIME], "tree")
        assert sel.method is LIME

    def test_nothing_applicable(self):
        assert select(0.9, 100.0, DEV, [Location(DEVICE, "d", 1.0)], [GRAD], "tree") is None

    def test_empty_inputs(self):
        with pytest.raises(ValueError):
            select(0.9, 1.0, DEV, [], [LIME], "mlp2")

    def test_equals_exhaustive_on_1000_configs(self):
        rng = np.random.default_rng(77)
        for i in range(1000):
            rho_fid, rho_lat, device, locs, methods, kind, w = random_instance(rng)
            sel = select(rho_fid, rho_lat, device, locs, methods, kind, w)
            want = exhaustive(rho_fid, rho_lat, device, locs, methods, kind, w)
            got = None if sel is None else (sel.method.method_id,
                                            next(j for j, l in enumerate(locs)
                                                 if l is sel.location), sel.feasible)
            assert got == want, f"config {i}"
            if sel is not None:
                assert sel.evaluations <= len(methods) * len(locs)

    @settings(max_examples=150, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), extra=st.floats(0, 200))
    def test_relaxing_latency_never_lowers_fidelity(self, seed, extra):
        rho_fid, rho_lat, device, locs, methods, kind, w = random_instance(
            np.random.default_rng(seed))
        a = select(rho_fid, rho_lat, device, locs, methods, kind, w)
        b = select(rho_fid, rho_lat + extra, device, locs, methods, kind, w)
        if a is not None and a.feasible:
            assert b.feasible
            assert b.method.fidelity_prior >= a.method.fidelity_prior

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), bw=st.floats(0.01, 100))
    def test_beta_zero_location_argmin_invariant(self, seed, bw):
        rho_fid, rho_lat, device, locs, methods, kind, _ = random_instance(
            np.random.default_rng(seed))
        w = CostWeights(1.0, 0.0)
        a = select(rho_fid, rho_lat, device, locs, methods, kind, w)
        b = select(rho_fid, rho_lat, DeviceInfo("x", bw, device.input_dim), locs, methods,
                   kind, w)
        if a is not None:
            assert (a.method.method_id, a.location.id) == (b.method.method_id, b.location.id)
