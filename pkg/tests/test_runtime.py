import numpy as np
import pytest

from asysqn.algorithms import AlgoConfig, DivergenceError
from asysqn.data import assemble_weights, synthetic_classification, vertical_split
from asysqn.runtime import (
    CSV_HEADER,
    EventQueue,
    SchedulerConfig,
    Simulator,
    virtual_time_advance,
)


def make_run(ds, q, mode, *, tau=None, straggler=None, budget=0, seed=9,
             method="sgd", curvature="identity", step=0.1, lam=1e-3,
             paired=False, flop_time=1e-8, alpha_lat=50e-6, target=None,
             record_every=None):
    if budget == 0:
        budget = 12 * q
    shards = vertical_split(ds, q)
    algo = AlgoConfig(method=method, curvature=curvature, step_size=step,
                      lam=lam, seed=seed, paired_batch=paired)
    sched = SchedulerConfig(mode=mode, seed=seed, tau_bound=tau,
                            straggler_profile=straggler, flop_time=flop_time,
                            alpha_lat=alpha_lat, record_every=record_every)
    sim = Simulator(shards, algo, sched)
    return sim, sim.run(budget=budget, target=target)


@pytest.fixture
def ds():
    return synthetic_classification(80, 12, seed=5)


class TestEventQueue:
    def test_tie_broken_by_party_id(self):
        q = EventQueue()
        q.push(1.0, 3, "step")
        q.push(1.0, 1, "step")
        q.push(0.5, 7, "step")
        assert virtual_time_advance(q).party_id == 7
        assert virtual_time_advance(q).party_id == 1
        assert virtual_time_advance(q).party_id == 3

    def test_equal_time_and_party_by_sequence(self):
        q = EventQueue()
        q.push(1.0, 2, "first")
        q.push(1.0, 2, "second")
        assert virtual_time_advance(q).kind == "first"

    def test_empty_signals_completion(self):
        assert virtual_time_advance(EventQueue()) is None


class TestSchedulerConfig:
    def test_bad_mode(self):
        with pytest.raises(ValueError):
            SchedulerConfig(mode="threads")

    def test_negative_tau(self):
        with pytest.raises(ValueError):
            SchedulerConfig(tau_bound=-1)

    def test_speed_profile_expansion(self):
        s = SchedulerConfig(straggler_profile=0.35).speeds(4)
        np.testing.assert_array_equal(s, [0.35, 1.0, 1.0, 1.0])
        np.testing.assert_array_equal(SchedulerConfig().speeds(3), 1.0)

    def test_speed_out_of_range(self):
        with pytest.raises(ValueError):
            SchedulerConfig(straggler_profile=0.0).speeds(2)
        with pytest.raises(ValueError):
            SchedulerConfig(straggler_profile=[1.0, 1.5]).speeds(2)

    def test_cost_model_definitions(self):
        # compute duration scales inversely with speed; message duration is
        # alpha + beta * bytes
        sched = SchedulerConfig(alpha_lat=2e-6, beta_bw=1e-9)
        assert sched.alpha_lat + sched.beta_bw * 8 == pytest.approx(2.008e-6)


class TestDeterminism:
    def test_async_byte_identical(self, ds):
        _, r1 = make_run(ds, 4, "async", straggler=0.35, flop_time=1e-5)
        _, r2 = make_run(ds, 4, "async", straggler=0.35, flop_time=1e-5)
        assert r1.to_csv() == r2.to_csv()
        np.testing.assert_array_equal(
            assemble_weights(r1.shards), assemble_weights(r2.shards)
        )

    def test_csv_header(self, ds):
        _, r = make_run(ds, 2, "sync")
        assert r.to_csv().splitlines()[0] == CSV_HEADER


class TestModeAgreement:
    def test_sync_equals_async_tau0(self, ds):
        _, rs = make_run(ds, 4, "sync")
        _, ra = make_run(ds, 4, "async", tau=0)
        np.testing.assert_array_equal(
            assemble_weights(rs.shards), assemble_weights(ra.shards)
        )

    def test_q1_async_equals_sync(self, ds):
        _, rs = make_run(ds, 1, "sync", budget=15)
        _, ra = make_run(ds, 1, "async", budget=15)
        np.testing.assert_array_equal(
            assemble_weights(rs.shards), assemble_weights(ra.shards)
        )

    def test_federated_sync_identity_matches_centralized(self, ds):
        # q parties under lock-step rounds == q=1 with the same step stream
        _, rq = make_run(ds, 4, "sync", budget=40)
        _, rc = make_run(ds, 1, "sync", budget=10)
        np.testing.assert_allclose(
            assemble_weights(rq.shards), assemble_weights(rc.shards), atol=1e-12
        )

    def test_federated_sync_curvature_objective_close(self, ds):
        # block-diagonal vs whole-model curvature differ along the way, but
        # both settle at the same optimum under variance reduction
        _, rq = make_run(ds, 4, "sync", budget=4000, curvature="sdlbfgs",
                         method="svrg", step=0.2, lam=1e-2, paired=True)
        _, rc = make_run(ds, 1, "sync", budget=1000, curvature="sdlbfgs",
                         method="svrg", step=0.2, lam=1e-2, paired=True)
        assert abs(rq.final_objective - rc.final_objective) < 1e-6


class TestStaleness:
    def test_sync_tags_equal_round_iteration(self, ds):
        sim, r = make_run(ds, 4, "sync", budget=40)
        assert r.max_staleness == 0

    def test_bound_enforced(self, ds):
        _, r = make_run(ds, 8, "async", tau=3, straggler=0.35,
                        flop_time=1e-5, alpha_lat=1e-8, budget=200)
        assert r.max_staleness <= 3

    def test_unbounded_exceeds_small_bound(self, ds):
        _, r = make_run(ds, 8, "async", straggler=0.35,
                        flop_time=1e-5, alpha_lat=1e-8, budget=200)
        assert r.max_staleness > 3

    def test_snapshot_reports_components_and_tags(self, ds):
        sim, _ = make_run(ds, 3, "sync", budget=6)
        comps, tags = sim.snapshot_peer_components(0, np.arange(5))
        assert comps.shape == (3, 5)
        assert tags == sim.clock.per_party_k
        total = comps.sum(axis=0)
        from asysqn.objective import all_predictors

        np.testing.assert_allclose(total, all_predictors(sim.shards)[:5])


class TestCounters:
    def test_clock_conservation(self, ds):
        sim, r = make_run(ds, 4, "sync", budget=40)
        assert r.clock.t == sum(r.clock.per_party_k) == 40

    def test_messages_equal_2qm1_times_rounds(self, ds):
        for q in [2, 4]:
            _, r = make_run(ds, q, "async", budget=10 * q)
            assert r.ledger.messages == 2 * (q - 1) * r.ledger.comm_rounds
            assert r.ledger.bytes == 8 * r.ledger.messages

    def test_sgd_rounds_equal_t_times_b(self, ds):
        _, r = make_run(ds, 4, "sync", budget=40)
        b = AlgoConfig().effective_batch(ds.n)
        assert r.ledger.comm_rounds == 40 * b

    def test_svrg_rounds_include_refresh_passes(self, ds):
        sim, r = make_run(ds, 2, "sync", budget=20, method="svrg")
        b = AlgoConfig().effective_batch(ds.n)
        refreshes = r.ledger.comm_rounds - 20 * b
        assert refreshes > 0 and refreshes % ds.n == 0

    def test_records_monotone(self, ds):
        _, r = make_run(ds, 4, "async", budget=60, record_every=5)
        for prev, cur in zip(r.records, r.records[1:]):
            assert cur.t >= prev.t
            assert cur.comm_rounds >= prev.comm_rounds
            assert cur.messages >= prev.messages
            assert cur.bytes >= prev.bytes
            assert cur.sim_comm_time >= prev.sim_comm_time


class TestStragglerModel:
    def test_sync_fast_party_utilization_matches_barrier_model(self, ds):
        # barrier rounds last as long as the slow party computes, so a
        # full-speed party is busy ~35% of each round
        _, r = make_run(ds, 4, "sync", straggler=0.35, budget=200,
                        flop_time=1e-5, alpha_lat=0.0)
        util_fast = r.per_party_compute[1] / r.wall_time
        assert util_fast == pytest.approx(0.35, rel=0.05)

    def test_default_budget_decreases_objective(self):
        small = synthetic_classification(30, 6, seed=2)
        _, r = make_run(small, 2, "sync", budget=None)  # 21n default
        assert r.records[0].objective == pytest.approx(np.log(2))
        assert r.final_objective < np.log(2)
        assert r.clock.t == 21 * small.n


class TestStops:
    def test_target_stop(self, ds):
        _, r = make_run(ds, 2, "sync", budget=10_000, target=0.6, step=0.2)
        assert r.final_objective <= 0.6
        assert r.clock.t < 10_000

    def test_divergence_carries_partial_run(self, ds):
        shards = vertical_split(ds, 2)
        algo = AlgoConfig(method="sgd", curvature="identity", step_size=1e200,
                          lam=1e-3, seed=1)
        sim = Simulator(shards, algo, SchedulerConfig(mode="sync", seed=1))
        with pytest.raises(DivergenceError):
            sim.run(budget=100)

    def test_inconsistent_shards_rejected(self, ds):
        shards = vertical_split(ds, 2)
        shards[0].local_features = shards[0].local_features[:-1]
        with pytest.raises(ValueError):
            Simulator(shards, AlgoConfig(), SchedulerConfig())
