"""Predictors: oracle, noisy oracle, empirical survival model, cache."""

import math

import pytest
from hypothesis import given, strategies as st

from lavasim.core import LifetimeClass, PoolState, ResourceVec, VmRecord
from lavasim.predict import (
    EmptyHost,
    EmptyTrainingSet,
    EmpiricalLifetimeModel,
    FeatureVec,
    NoisyOracleConfig,
    NoisyOracleModel,
    NonPositiveInput,
    OracleModel,
    PredictionCache,
    classify_binary,
    lifetime_class,
    log_error,
    make_predictor,
)

H = 3600.0


def make_vm(vm_id=1, create=0.0, exit_=10_000.0, fv=FeatureVec()):
    return VmRecord(id=vm_id, shape=ResourceVec(1000, 4096), features=fv,
                    create_time=create, true_exit_time=exit_)


class TestPureHelpers:
    def test_log_error_exact(self):
        assert log_error(1234.0, 1234.0) == 0.0

    def test_log_error_decade(self):
        assert log_error(36_000.0, 3600.0) == pytest.approx(1.0)
        assert log_error(3600.0, 36.0) == pytest.approx(2.0)

    def test_log_error_nonpositive(self):
        with pytest.raises(NonPositiveInput):
            log_error(0.0, 100.0)

    def test_classify_binary(self):
        assert classify_binary(1800.0) == "Short"
        assert classify_binary(7200.0) == "Long"  # boundary is Long
        assert classify_binary(100 * H) == "Long"

    def test_lifetime_class(self):
        assert lifetime_class(0.5 * H) is LifetimeClass.LC1
        assert lifetime_class(1 * H) is LifetimeClass.LC2  # boundary up
        assert lifetime_class(10 * H) is LifetimeClass.LC3
        assert lifetime_class(100 * H) is LifetimeClass.LC4
        assert lifetime_class(5000 * H) is LifetimeClass.LC4

    def test_lifetime_class_negative(self):
        with pytest.raises(ValueError):
            lifetime_class(-1.0)

    @given(st.floats(0, 1e9))
    def test_lifetime_class_pure(self, x):
        assert lifetime_class(x) is lifetime_class(x)


class TestOracle:
    def test_remaining(self):
        vm = make_vm(exit_=10_000.0)
        assert OracleModel().remaining(vm, 4000.0) == 6000.0

    def test_clamped_at_exit(self):
        vm = make_vm(exit_=10_000.0)
        assert OracleModel().remaining(vm, 10_000.0) == 0.0
        assert OracleModel().remaining(vm, 20_000.0) == 0.0


class TestNoisyOracle:
    def test_exact_mode_equals_oracle(self):
        noisy = NoisyOracleModel(NoisyOracleConfig(accuracy=1.0, sigma_correct=0.0))
        oracle = OracleModel()
        for i in range(50):
            vm = make_vm(vm_id=i, exit_=100.0 + 37.0 * i)
            for now in (0.0, 10.0, 99.0):
                assert noisy.remaining(vm, now) == oracle.remaining(vm, now)

    def test_sticky_draw(self):
        noisy = NoisyOracleModel(NoisyOracleConfig(accuracy=0.0, seed=3))
        vm = make_vm(vm_id=5, exit_=H)
        total0 = noisy.remaining(vm, 0.0)
        total1 = noisy.remaining(vm, 600.0)
        assert total0 == pytest.approx(total1 + 600.0) or total1 == 0.0

    def test_cap(self):
        noisy = NoisyOracleModel(NoisyOracleConfig(accuracy=0.0, sigma_wrong=5.0))
        for i in range(200):
            vm = make_vm(vm_id=i, exit_=H)
            assert noisy.remaining(vm, 0.0) <= 14 * 24 * H

    def test_accuracy_controls_error_rate(self):
        """With accuracy p, about (1-p) of VMs get the wide-sigma noise."""
        cfg = NoisyOracleConfig(accuracy=0.7, seed=1)
        noisy = NoisyOracleModel(cfg)
        wrong = 0
        n = 2000
        for i in range(n):
            vm = make_vm(vm_id=i, exit_=H)
            pred = noisy.remaining(vm, 0.0)
            # sigma_correct=0.001 keeps predictions within a few percent
            if abs(math.log10(max(pred, 1e-9)) - math.log10(H)) > 0.1:
                wrong += 1
        assert abs(wrong / n - 0.3) < 0.05

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            NoisyOracleConfig(accuracy=1.5)
        with pytest.raises(ValueError):
            NoisyOracleConfig(sigma_wrong=-1.0)


def fit_model(rows, **kw):
    return EmpiricalLifetimeModel(**kw).fit(rows)


class TestEmpiricalModel:
    def test_point_mass(self):
        fv = FeatureVec(vm_family="f")
        model = fit_model([(fv, H)] * 100)
        assert model.predict_remaining(fv, 0.0) == pytest.approx(H)

    def test_bimodal_mixture_at_zero(self):
        # 90 VMs at 1h + 10 VMs at 100h: E(T_r|0) = 10.9h
        fv = FeatureVec(vm_family="f")
        rows = [(fv, H)] * 90 + [(fv, 100 * H)] * 10
        model = fit_model(rows)
        assert model.predict_remaining(fv, 0.0) == pytest.approx(10.9 * H)

    def test_bimodal_mixture_conditional(self):
        # past the short mode only the 100h cohort survives: E(T_r|2h) = 98h
        fv = FeatureVec(vm_family="f")
        rows = [(fv, H)] * 90 + [(fv, 100 * H)] * 10
        model = fit_model(rows)
        assert model.predict_remaining(fv, 7200.0) == pytest.approx(352_800.0)

    def test_brute_force_equality(self):
        """E(T_r|T_u) equals the direct average of (l - T_u) over survivors."""
        import random
        rng = random.Random(4)
        fv = FeatureVec(vm_family="f")
        lifetimes = [rng.randint(60, 500_000) for _ in range(500)]
        model = fit_model([(fv, float(t)) for t in lifetimes])
        for uptime in (0.0, 59.0, 60.0, 1000.0, 250_000.0, 499_999.0):
            survivors = [t for t in lifetimes if t > uptime]
            if not survivors:
                continue
            expect = sum(t - uptime for t in survivors) / len(survivors)
            got = model.predict_remaining(fv, uptime)
            assert abs(got - expect) <= 1e-9 * max(expect, 1.0)

    def test_training_cap(self):
        fv = FeatureVec(vm_family="f")
        model = fit_model([(fv, 1000 * H)] * 20)
        assert model.predict_remaining(fv, 0.0) == pytest.approx(168 * H)

    def test_floor_beyond_all_lifetimes(self):
        fv = FeatureVec(vm_family="f")
        model = fit_model([(fv, H)] * 20)
        assert model.predict_remaining(fv, 2 * H) == pytest.approx(H)

    def test_rare_category_collapses(self):
        common = FeatureVec(vm_family="common")
        rare = FeatureVec(vm_family="rare")
        rows = [(common, H)] * 50 + [(rare, 50 * H)] * 3
        model = fit_model(rows, min_count=10)
        # the rare family falls into "Other"; its own stratum keeps its curve
        assert "rare" not in model._kept_values["vm_family"]
        assert model.predict_remaining(rare, 0.0) == pytest.approx(50 * H)

    def test_unseen_features_use_global_curve(self):
        fv = FeatureVec(vm_family="f", zone="z0")
        rows = [(fv, H)] * 90 + [(fv, 100 * H)] * 10
        model = fit_model(rows)
        unseen = FeatureVec(vm_family="nope", zone="z9", vm_category="x")
        assert model.predict_remaining(unseen, 0.0) == pytest.approx(10.9 * H)

    def test_empty_training_set(self):
        with pytest.raises(EmptyTrainingSet):
            EmpiricalLifetimeModel().fit([])

    def test_unfitted_predict(self):
        with pytest.raises(EmptyTrainingSet):
            EmpiricalLifetimeModel().predict_remaining(FeatureVec(), 0.0)

    def test_serialization_roundtrip_bit_exact(self):
        import random
        rng = random.Random(9)
        rows = []
        for i in range(300):
            fv = FeatureVec(vm_family=f"fam{i % 7}", zone=f"z{i % 3}",
                            vm_shape_key="1000x4096", has_ssd=i % 2 == 0)
            rows.append((fv, float(rng.randint(60, 10_000_000))))
        model = fit_model(rows)
        text = model.dumps()
        clone = EmpiricalLifetimeModel.loads(text)
        assert clone.dumps() == text
        for fv, _ in rows[:40]:
            for uptime in (0.0, 3600.0, 100_000.0):
                assert clone.predict_remaining(fv, uptime) == model.predict_remaining(fv, uptime)

    def test_loads_rejects_garbage(self):
        with pytest.raises(ValueError):
            EmpiricalLifetimeModel.loads("not a model\n")

    def test_get_params(self):
        params = EmpiricalLifetimeModel(min_count=5).get_params()
        assert params["min_count"] == 5

    @given(st.lists(st.integers(60, 600_000), min_size=1, max_size=200),
           st.floats(0, 700_000))
    def test_expected_total_monotone(self, lifetimes, uptime):
        """T_u + E(T_r|T_u) is non-decreasing in T_u."""
        fv = FeatureVec(vm_family="f")
        model = fit_model([(fv, float(t)) for t in lifetimes])
        lo = min(uptime, 30.0)
        total_lo = lo + model.predict_remaining(fv, lo)
        total_hi = uptime + model.predict_remaining(fv, uptime)
        capped = [min(t, model.cap_s) for t in lifetimes]
        if uptime < max(capped):  # beyond all lifetimes the floor takes over
            assert total_hi >= total_lo - 1e-6


class TestPredictionCache:
    def test_empty_host_raises(self):
        pool = PoolState()
        host = pool.add_host(ResourceVec(96_000, 393_216))
        with pytest.raises(EmptyHost):
            PredictionCache().host_exit_time(host, pool, OracleModel(), 0.0)

    def test_max_over_vms(self):
        pool = PoolState()
        host = pool.add_host(ResourceVec(96_000, 393_216))
        pool.place(make_vm(1, exit_=100.0), 0)
        pool.place(make_vm(2, exit_=500.0), 0)
        cache = PredictionCache()
        assert cache.host_exit_time(host, pool, OracleModel(), 0.0) == 500.0

    def test_stale_value_within_interval(self):
        """A drifting model's update is hidden until refresh, expiry, or
        membership change."""
        pool = PoolState()
        host = pool.add_host(ResourceVec(96_000, 393_216))
        pool.place(make_vm(1, exit_=10_000.0), 0)
        cache = PredictionCache(refresh_interval_s=60.0)

        class Drifting:
            offset = 0.0
            def remaining(self, vm, now):
                return max(vm.true_exit_time + self.offset - now, 0.0)

        model = Drifting()
        assert cache.host_exit_time(host, pool, model, 0.0) == 10_000.0
        model.offset = 5000.0
        assert cache.host_exit_time(host, pool, model, 30.0) == 10_000.0
        assert cache.host_exit_time(host, pool, model, 90.0) == 15_000.0

    def test_invalidate_on_membership_change(self):
        pool = PoolState()
        host = pool.add_host(ResourceVec(96_000, 393_216))
        pool.place(make_vm(1, exit_=100.0), 0)
        cache = PredictionCache()
        assert cache.host_exit_time(host, pool, OracleModel(), 0.0) == 100.0
        pool.place(make_vm(2, exit_=900.0), 0)
        cache.invalidate(0)
        assert cache.host_exit_time(host, pool, OracleModel(), 0.0) == 900.0

    def test_expired_cached_exit_recomputed(self):
        pool = PoolState()
        host = pool.add_host(ResourceVec(96_000, 393_216))
        pool.place(make_vm(1, exit_=100.0), 0)
        pool.place(make_vm(2, exit_=5000.0), 0)
        cache = PredictionCache(refresh_interval_s=1e12)
        assert cache.host_exit_time(host, pool, OracleModel(), 0.0) == 5000.0
        pool.remove(2)
        cache.invalidate(0)
        assert cache.host_exit_time(host, pool, OracleModel(), 50.0) == 100.0
        # past the cached exit the entry expires even without invalidation
        assert cache.host_exit_time(host, pool, OracleModel(), 150.0) == 150.0


class TestMakePredictor:
    def test_specs(self):
        assert isinstance(make_predictor("oracle"), OracleModel)
        noisy = make_predictor("noisy:0.7", seed=4)
        assert isinstance(noisy, NoisyOracleModel)
        assert noisy.cfg.accuracy == 0.7 and noisy.cfg.seed == 4

    def test_unknown(self):
        with pytest.raises(ValueError):
            make_predictor("gbdt")
