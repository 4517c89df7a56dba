"""Lifetime predictors: oracle, calibrated noisy oracle, and an empirical
conditional-distribution (survival) model, plus the per-host prediction cache.

All predictors answer the same question: given a VM that has been up for
``uptime_s`` seconds, what is its expected remaining lifetime in seconds?
"""

from __future__ import annotations

import hashlib
import math
import random
from bisect import bisect_right, bisect_left
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .core import HostRecord, LifetimeClass, PoolState, VmRecord

HOUR = 3600.0
LIFETIME_CAP_S = 168 * 3600  # empirical model training-time cap (7 days)
BINARY_THRESHOLD_S = 7200.0  # LA-Binary short/long cutoff
CLASS_UPPER_BOUND_S = {
    LifetimeClass.LC1: 1 * HOUR,
    LifetimeClass.LC2: 10 * HOUR,
    LifetimeClass.LC3: 100 * HOUR,
    LifetimeClass.LC4: 1000 * HOUR,
}


class EmptyTrainingSet(Exception):
    pass


class EmptyHost(Exception):
    pass


class NonPositiveInput(Exception):
    pass


@dataclass(frozen=True, slots=True)
class FeatureVec:
    zone: str = "z0"
    vm_family: str = "default"
    vm_shape_key: str = ""
    vm_category: str = ""
    has_ssd: bool = False
    priority: str = "standard"
    provisioning_model: bool = False

    _CATEGORICAL = ("zone", "vm_family", "vm_shape_key", "vm_category", "priority")

    def key(self) -> Tuple:
        return (self.zone, self.vm_family, self.vm_shape_key, self.vm_category,
                self.has_ssd, self.priority, self.provisioning_model)


# -- pure scoring helpers ------------------------------------------------


def log_error(pred_s: float, true_s: float) -> float:
    """Absolute prediction error in the log10 domain."""
    if pred_s <= 0 or true_s <= 0:
        raise NonPositiveInput(f"log_error requires positive inputs, got {pred_s}, {true_s}")
    return abs(math.log10(pred_s) - math.log10(true_s))


def classify_binary(remaining_s: float, threshold_s: float = BINARY_THRESHOLD_S) -> str:
    """Short/Long split used by LA-Binary; the boundary value is Long."""
    return "Long" if remaining_s >= threshold_s else "Short"


def lifetime_class(remaining_s: float) -> LifetimeClass:
    if remaining_s < 0:
        raise ValueError(f"negative remaining lifetime {remaining_s}")
    if remaining_s < 1 * HOUR:
        return LifetimeClass.LC1
    if remaining_s < 10 * HOUR:
        return LifetimeClass.LC2
    if remaining_s < 100 * HOUR:
        return LifetimeClass.LC3
    return LifetimeClass.LC4


# -- predictors ----------------------------------------------------------


class OracleModel:
    """Perfect predictor; reads the ground-truth exit time."""

    # a VM's predicted exit never moves, so host scores only change on
    # membership changes and the cache can skip interval-based refreshes
    time_invariant = True

    def remaining(self, vm: VmRecord, now: float) -> float:
        return max(vm.true_exit_time - now, 0.0)


@dataclass(frozen=True)
class NoisyOracleConfig:
    accuracy: float = 1.0
    sigma_correct: float = 0.001
    sigma_wrong: float = 3.0
    cap_s: float = 14 * 24 * 3600.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy must be in [0,1], got {self.accuracy}")
        if self.sigma_correct < 0 or self.sigma_wrong < 0:
            raise ValueError("sigmas must be non-negative")


class NoisyOracleModel:
    """Oracle with a calibrated per-VM error model.

    Each VM gets a single sticky draw: a correct/incorrect coin with
    P(correct)=accuracy, then Gaussian noise on the total lifetime in the
    log10 domain (sigma depends on the coin).  Repredictions at later
    uptimes reuse the same perturbed total, so the error model never grants
    reprediction power by itself.
    """

    time_invariant = True

    def __init__(self, cfg: NoisyOracleConfig):
        self.cfg = cfg
        self._totals: Dict[int, float] = {}

    def _predicted_total(self, vm: VmRecord) -> float:
        total = self._totals.get(vm.id)
        if total is None:
            digest = hashlib.sha256(f"{self.cfg.seed}:{vm.id}".encode()).digest()
            rng = random.Random(int.from_bytes(digest[:8], "big"))
            correct = rng.random() < self.cfg.accuracy
            sigma = self.cfg.sigma_correct if correct else self.cfg.sigma_wrong
            true_total = vm.true_exit_time - vm.create_time
            if sigma > 0:
                noise = rng.gauss(0.0, sigma)
                total = 10.0 ** (math.log10(true_total) + noise)
                total = min(max(total, 0.0), self.cfg.cap_s)
            else:
                # exact passthrough so sigma=0 reproduces the oracle bit-for-bit
                total = true_total
            self._totals[vm.id] = total
        return total

    def remaining(self, vm: VmRecord, now: float) -> float:
        return max(self._predicted_total(vm) - vm.uptime(now), 0.0)


class _SurvivalCurve:
    """Empirical survival step function over a multiset of (capped) lifetimes."""

    __slots__ = ("lifetimes", "counts", "suffix_count", "suffix_sum")

    def __init__(self, samples: Counter):
        self.lifetimes = sorted(samples)
        self.counts = [samples[t] for t in self.lifetimes]
        n = len(self.lifetimes)
        self.suffix_count = [0] * (n + 1)
        self.suffix_sum = [0.0] * (n + 1)
        for i in range(n - 1, -1, -1):
            self.suffix_count[i] = self.suffix_count[i + 1] + self.counts[i]
            self.suffix_sum[i] = self.suffix_sum[i + 1] + self.counts[i] * self.lifetimes[i]

    def conditional_remaining(self, uptime_s: float) -> Optional[float]:
        """E(remaining | survived to uptime_s), or None if nothing survives."""
        i = bisect_right(self.lifetimes, uptime_s)
        n_surv = self.suffix_count[i]
        if n_surv == 0:
            return None
        return self.suffix_sum[i] / n_surv - uptime_s

    def items(self) -> List[Tuple[int, int]]:
        return list(zip(self.lifetimes, self.counts))


class EmpiricalLifetimeModel:
    """Stratified empirical survival model.

    fit() builds one survival curve per collapsed feature stratum (plus a
    pooled global curve); predict_remaining() evaluates the conditional
    expectation E(remaining | uptime) on the stratum's step function.
    """

    FORMAT_VERSION = 1
    KEY_SEP = "|"
    GLOBAL_KEY = "__global__"

    def __init__(self, min_count: int = 10, cap_s: int = LIFETIME_CAP_S,
                 floor_s: float = 3600.0):
        self.min_count = min_count
        self.cap_s = cap_s
        self.floor_s = floor_s
        self.strata: Dict[str, _SurvivalCurve] = {}
        self.global_curve: Optional[_SurvivalCurve] = None
        self._kept_values: Dict[str, set] = {}

    @property
    def is_fitted(self) -> bool:
        return self.global_curve is not None

    def get_params(self) -> Dict[str, object]:
        return {"min_count": self.min_count, "cap_s": self.cap_s, "floor_s": self.floor_s}

    def _collapse(self, fv: FeatureVec) -> str:
        parts = []
        for name in FeatureVec._CATEGORICAL:
            value = getattr(fv, name)
            kept = self._kept_values.get(name, ())
            parts.append(value if value in kept else "Other")
        parts.append("1" if fv.has_ssd else "0")
        parts.append("1" if fv.provisioning_model else "0")
        return self.KEY_SEP.join(parts)

    def fit(self, examples: Iterable[Tuple[FeatureVec, float]]) -> "EmpiricalLifetimeModel":
        rows = [(fv, min(int(round(life)), self.cap_s)) for fv, life in examples]
        if not rows:
            raise EmptyTrainingSet("no training examples")
        for name in FeatureVec._CATEGORICAL:
            counts = Counter(getattr(fv, name) for fv, _ in rows)
            self._kept_values[name] = {v for v, c in counts.items() if c >= self.min_count}
        per_stratum: Dict[str, Counter] = {}
        pooled: Counter = Counter()
        for fv, life in rows:
            key = self._collapse(fv)
            per_stratum.setdefault(key, Counter())[life] += 1
            pooled[life] += 1
        self.strata = {k: _SurvivalCurve(c) for k, c in per_stratum.items()}
        self.global_curve = _SurvivalCurve(pooled)
        return self

    def predict_remaining(self, features: FeatureVec, uptime_s: float) -> float:
        if not self.is_fitted:
            raise EmptyTrainingSet("model is not fitted")
        curve = self.strata.get(self._collapse(features), self.global_curve)
        value = curve.conditional_remaining(uptime_s)
        if value is None:
            # uptime beyond every training lifetime: return the floor rather
            # than 0 so mispredicted long-lived VMs don't look instantly dead
            return self.floor_s
        return value

    def remaining(self, vm: VmRecord, now: float) -> float:
        return self.predict_remaining(vm.features, vm.uptime(now))

    # -- serialization ---------------------------------------------------

    def dumps(self) -> str:
        if not self.is_fitted:
            raise EmptyTrainingSet("model is not fitted")
        lines = [f"lavasim-empirical-model v{self.FORMAT_VERSION} "
                 f"cap_s={self.cap_s} min_count={self.min_count} floor_s={self.floor_s:g}"]
        for name in FeatureVec._CATEGORICAL:
            kept = sorted(self._kept_values.get(name, ()))
            lines.append(f"#kept {name}\t" + "\t".join(kept))
        keys = sorted(self.strata)
        for key in keys + [self.GLOBAL_KEY]:
            curve = self.global_curve if key == self.GLOBAL_KEY else self.strata[key]
            pairs = " ".join(f"{t}:{c}" for t, c in curve.items())
            lines.append(f"{key}\t{pairs}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "EmpiricalLifetimeModel":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("lavasim-empirical-model"):
            raise ValueError("not an empirical model file")
        header = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
        model = cls(min_count=int(header["min_count"]), cap_s=int(header["cap_s"]),
                    floor_s=float(header["floor_s"]))
        for line in lines[1:]:
            if not line:
                continue
            if line.startswith("#kept "):
                head, *values = line.split("\t")
                model._kept_values[head[len("#kept "):]] = set(values)
                continue
            key, pairs = line.split("\t", 1)
            samples = Counter()
            for tok in pairs.split():
                t, c = tok.split(":")
                samples[int(t)] = int(c)
            curve = _SurvivalCurve(samples)
            if key == cls.GLOBAL_KEY:
                model.global_curve = curve
            else:
                model.strata[key] = curve
        return model

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "EmpiricalLifetimeModel":
        with open(path) as fh:
            return cls.loads(fh.read())


# -- host-level prediction cache -----------------------------------------


@dataclass
class PredictionCache:
    """Caches each host's exit-time score between membership changes.

    A cached score is dropped when a VM is placed on or removed from the
    host, when the cached exit time passes, or after the refresh interval.
    """

    refresh_interval_s: float = 60.0
    _entries: Dict[int, Tuple[float, float]] = field(default_factory=dict)

    def invalidate(self, host_id: int) -> None:
        self._entries.pop(host_id, None)

    def clear(self) -> None:
        self._entries.clear()

    def host_exit_time(self, host: HostRecord, pool: PoolState, model, now: float) -> float:
        if not host.vms:
            raise EmptyHost(f"host {host.id} has no resident VMs")
        entry = self._entries.get(host.id)
        if entry is not None:
            cached_exit, refreshed_at = entry
            if cached_exit > now and now - refreshed_at < self.refresh_interval_s:
                return cached_exit
        exit_time = max(now + model.remaining(pool.vms[vid], now) for vid in host.vms)
        self._entries[host.id] = (exit_time, now)
        return exit_time


def make_predictor(spec: str, seed: int = 0):
    """Build a predictor from a CLI spec: oracle | noisy:<acc> | empirical:<path>."""
    if spec == "oracle":
        return OracleModel()
    if spec.startswith("noisy:"):
        acc = float(spec.split(":", 1)[1])
        return NoisyOracleModel(NoisyOracleConfig(accuracy=acc, seed=seed))
    if spec.startswith("empirical:"):
        return EmpiricalLifetimeModel.load(spec.split(":", 1)[1])
    raise ValueError(f"unknown predictor spec {spec!r}")
