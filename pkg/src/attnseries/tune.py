"""Hyperparameter search: random and kappa-weighted KDE sampling with asynchronous successive halving."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol

import numpy as np

from .errors import ConfigurationError, ContractError
from .models import HIDDEN_DIMS, ModelSpec, build
from .train import LR_RANGE, WARMUP_CHOICES, WD_RANGE, TrainConfig, Trainer

RUNGS = (10, 20, 40, 60)
WARM_START = 34


@dataclass(frozen=True)
class Categorical:
    choices: tuple

    def sample(self, rng):
        return self.choices[int(rng.integers(len(self.choices)))]

    def contains(self, value):
        return value in self.choices


@dataclass(frozen=True)
class Continuous:
    low: float
    high: float
    log: bool = False
    closed_high: bool = True

    def sample(self, rng):
        if self.log:
            return float(10 ** rng.uniform(math.log10(self.low), math.log10(self.high)))
        return float(rng.uniform(self.low, self.high))

    def to_unit(self, value):
        return math.log10(value) if self.log else float(value)

    def from_unit(self, u):
        lo, hi = self.to_unit(self.low), self.to_unit(self.high)
        u = min(max(u, lo), hi)
        value = 10 ** u if self.log else u
        value = min(max(value, self.low), self.high)
        if not self.closed_high and value >= self.high:
            value = float(np.nextafter(self.high, self.low))
        return value

    def contains(self, value):
        return self.low <= value <= self.high and (self.closed_high or value < self.high)


DROPOUT = Continuous(0.0, 1.0, closed_high=False)
LEARNING_RATE = Continuous(*LR_RANGE, log=True)
WEIGHT_DECAY = Continuous(*WD_RANGE, log=True)
HIDDEN = Categorical(HIDDEN_DIMS)


@dataclass(frozen=True)
class SearchSpace:
    """Named parameter domains for one architecture, in a fixed order."""

    architecture: str
    dims: tuple  # ((name, domain), ...)

    @classmethod
    def for_architecture(cls, architecture: str) -> "SearchSpace":
        common = (("learning_rate", LEARNING_RATE), ("weight_decay", WEIGHT_DECAY))
        if architecture == "lstm_rnn":
            dims = (("hidden_dim", HIDDEN), ("num_layers", Categorical(tuple(range(1, 8)))),
                    ("dropout", DROPOUT)) + common
        elif architecture == "transformer":
            # heads restricted to divisors of every hidden size
            dims = (("hidden_dim", HIDDEN), ("num_layers", Categorical(tuple(range(1, 9)))),
                    ("num_heads", Categorical((1, 2, 4, 8))),
                    ("n_warmup", Categorical(WARMUP_CHOICES)), ("weight_decay", WEIGHT_DECAY))
        elif architecture == "tempcnn":
            dims = (("hidden_dim", HIDDEN), ("kernel_size", Categorical((3, 5, 7))),
                    ("dropout", DROPOUT)) + common
        elif architecture in ("msresnet", "softattn_gru"):
            dims = (("hidden_dim", HIDDEN),) + common
        else:
            raise ConfigurationError(f"no search space for architecture {architecture!r}")
        return cls(architecture, dims)

    @property
    def names(self):
        return [n for n, _ in self.dims]

    def contains(self, config: dict) -> bool:
        return set(config) == set(self.names) and all(d.contains(config[n]) for n, d in self.dims)

    def materialize(self, config: dict, base_spec: Optional[dict] = None, base_train: Optional[dict] = None):
        """Split a sampled configuration into (ModelSpec, TrainConfig)."""
        spec_kw = dict(base_spec or {})
        train_kw = dict(base_train or {})
        for name, value in config.items():
            if name in ("learning_rate", "weight_decay", "n_warmup"):
                train_kw[name] = value
            else:
                spec_kw[name] = value
        if self.architecture == "transformer":
            train_kw["scheduler"] = "warmup"
        spec = ModelSpec(architecture=self.architecture, **spec_kw).validate()
        return spec, TrainConfig(**train_kw).validate()


def sample_random(space: SearchSpace, rng) -> dict:
    return {name: dom.sample(rng) for name, dom in space.dims}


@dataclass
class KdeSampler:
    """Performance-weighted kernel density over past (configuration, kappa) observations."""

    space: SearchSpace
    observations: list = field(default_factory=list)
    warm_start: int = WARM_START

    def observe(self, config: dict, kappa: float):
        if math.isfinite(kappa):
            self.observations.append((dict(config), float(kappa)))

    def bandwidths(self, weights):
        """Silverman's rule per continuous dimension, in sampling units (log10 for log dims)."""
        n_eff = weights.sum() ** 2 / (weights ** 2).sum()
        out = {}
        for name, dom in self.space.dims:
            if isinstance(dom, Continuous):
                u = np.array([dom.to_unit(c[name]) for c, _ in self.observations])
                mu = np.average(u, weights=weights)
                sd = math.sqrt(np.average((u - mu) ** 2, weights=weights))
                out[name] = 1.06 * sd * n_eff ** -0.2
        return out


def sample_kde(sampler: KdeSampler, rng) -> dict:
    space = sampler.space
    if len(sampler.observations) < sampler.warm_start:
        return sample_random(space, rng)
    weights = np.array([max(k, 0.0) for _, k in sampler.observations])
    if weights.sum() <= 0:
        return sample_random(space, rng)
    p = weights / weights.sum()
    anchor = sampler.observations[int(rng.choice(len(p), p=p))][0]
    bw = sampler.bandwidths(weights)
    config = {}
    for name, dom in space.dims:
        if isinstance(dom, Continuous):
            u = dom.to_unit(anchor[name]) + bw[name] * rng.standard_normal()
            config[name] = dom.from_unit(u)
        else:
            mass = np.array([sum(w for (c, _), w in zip(sampler.observations, weights) if c[name] == v)
                             for v in dom.choices])
            config[name] = dom.choices[int(rng.choice(len(mass), p=mass / mass.sum()))]
    return config


# -------------------------------------------------------------------- ASHA

@dataclass
class Trial:
    trial_id: int
    config: dict
    readings: list = field(default_factory=list)  # (epoch, kappa) at rung boundaries
    status: str = "running"
    highest_rung: int = 0
    epochs: int = 0
    best_kappa: float = -math.inf
    error: Optional[str] = None

    @property
    def score(self):
        return -math.inf if self.status == "failed" else self.best_kappa


@dataclass
class AshaState:
    rungs: tuple = RUNGS
    grace: int = 10
    max_epochs: int = 60
    results: dict = field(default_factory=dict)

    def __post_init__(self):
        r = tuple(self.rungs)
        if not r or any(b <= a for a, b in zip(r, r[1:])) or r[0] != self.grace or r[-1] != self.max_epochs:
            raise ConfigurationError(
                f"rungs {r} must increase strictly from grace={self.grace} to max_epochs={self.max_epochs}")
        self.rungs = r
        for b in r:
            self.results.setdefault(b, [])


def asha_record(state: AshaState, trial: Trial, epoch: int, kappa: float) -> bool:
    """Store a reading; returns whether ``epoch`` is a rung boundary."""
    if epoch > state.max_epochs:
        raise ContractError(f"epoch {epoch} exceeds max epochs {state.max_epochs}")
    if epoch <= trial.epochs:
        raise ContractError(f"trial {trial.trial_id}: out-of-order report for epoch {epoch}")
    trial.epochs = epoch
    if epoch not in state.rungs:
        return False
    expected = state.rungs[len(trial.readings)] if len(trial.readings) < len(state.rungs) else None
    if epoch != expected:
        raise ContractError(f"trial {trial.trial_id}: rung {epoch} reported before rung {expected}")
    state.results[epoch].append(kappa)
    trial.readings.append((epoch, kappa))
    trial.highest_rung = epoch
    trial.best_kappa = max(trial.best_kappa, kappa)
    return True


def asha_decide(state: AshaState, trial: Trial, epoch: int, kappa: float) -> str:
    if epoch not in state.rungs:
        return "continue"
    if epoch == state.rungs[-1]:
        return "finished"
    present = state.results[epoch]
    rank = 1 + sum(1 for k in present if k > kappa)
    return "continue" if rank <= math.ceil(len(present) / 2) else "stop_at_rung"


def asha_report(state: AshaState, trial: Trial, epoch: int, kappa: float) -> str:
    """Record a validation kappa and decide: continue, stop_at_rung or finished."""
    asha_record(state, trial, epoch, kappa)
    return asha_decide(state, trial, epoch, kappa)


# ------------------------------------------------------------------- study

class EpochRunner(Protocol):
    def run_epoch(self) -> float: ...


@dataclass
class StudyResult:
    trials: list  # ranked, best first
    top_configs: list
    epochs_used: int


class FitRunner:
    """Adapter exposing one training epoch at a time; returns validation kappa."""

    def __init__(self, space, config, train_set, val_set, seed, base_spec=None, base_train=None):
        spec, tc = space.materialize(config, base_spec, base_train)
        tc = TrainConfig(**{**tc.to_dict(), "seed": seed, "early_stopping": False})
        self.trainer = Trainer(build(spec, seed), train_set, val_set, tc)

    def run_epoch(self) -> float:
        return self.trainer.run_epoch().report.kappa


def trial_rng(seed: int, trial_id: int):
    return np.random.default_rng([seed, trial_id])


def _ledger_line(trial, epoch, kappa, decision, **extra):
    rec = {"trial_id": trial.trial_id, "config": trial.config, "epoch": epoch,
           "kappa": None if kappa is None else float(kappa), "decision": decision}
    rec.update(extra)
    return json.dumps(rec, sort_keys=True)


def read_ledger(path):
    """Parse ledger records; a torn final line from a killed process is dropped."""
    records = []
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    for i, line in enumerate(lines):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                break
            raise ContractError(f"{path}: unreadable ledger line {i + 1}")
    return records


class _ReplayedFailure(Exception):
    pass


class _Ghost:
    """Stands in for a trial whose whole history is already in the ledger."""

    def __init__(self, history):
        self.history = history
        self.epoch = 0

    def run_epoch(self):
        self.epoch += 1
        end = self.history["end"]
        if end["decision"] == "failed" and end["epoch"] == self.epoch:
            raise _ReplayedFailure(end.get("error"))
        return self.history["rungs"].get(self.epoch, 0.0)


def _concluded(records):
    """Trials with a terminal record: rung kappas plus the final record."""
    out: dict[int, dict] = {}
    for rec in records:
        h = out.setdefault(rec["trial_id"], {"config": rec["config"], "rungs": {}, "end": None})
        if rec["decision"] != "failed":
            h["rungs"][rec["epoch"]] = rec["kappa"]
        if rec["decision"] in ("failed", "stop_at_rung", "finished"):
            h["end"] = rec
    return {tid: h for tid, h in out.items() if h["end"] is not None}


def run_study(space: SearchSpace, make_runner: Callable[[dict, int], EpochRunner], budget_trials: int,
              parallelism: int = 1, seed: int = 0, asha: Optional[AshaState] = None,
              ledger_path=None, resume: bool = False, sampler: str = "kde") -> StudyResult:
    """Run ``budget_trials`` trials under ASHA, ``parallelism`` at a time.

    Active trials advance in lockstep rounds of one epoch; reports of a round
    are first all recorded and then decided in slot order, which makes the
    outcome independent of worker timing. ``make_runner(config, seed)``
    builds the object whose ``run_epoch`` returns a validation kappa.

    Resuming re-simulates the schedule from the start: trials already
    concluded in the ledger replay their logged kappas without training,
    trials cut off mid-run are trained again, and records already on disk
    are checked rather than rewritten. The finished ledger is therefore the
    one an uninterrupted run would have produced.
    """
    if budget_trials < 1:
        raise ConfigurationError("budget_trials must be >= 1")
    parallelism = max(1, int(parallelism))
    asha = AshaState() if asha is None else asha
    kde = KdeSampler(space)
    trials: list[Trial] = []
    written: list[str] = []
    ghosts: dict[int, dict] = {}
    if ledger_path is not None and resume and Path(ledger_path).exists():
        records = read_ledger(ledger_path)
        ghosts = _concluded(records)
        written = [json.dumps(r, sort_keys=True) for r in records]
        Path(ledger_path).write_text("".join(line + "\n" for line in written))
    ledger = open(ledger_path, "a" if resume else "w") if ledger_path is not None else None
    emitted = 0

    def emit(line):
        nonlocal emitted
        emitted += 1
        if emitted <= len(written):
            if line != written[emitted - 1]:
                raise ContractError(f"ledger record {emitted} does not match this study; "
                                    "was it written with another seed, space or schedule?")
            return
        if ledger is not None:
            ledger.write(line + "\n")
            ledger.flush()

    def conclude(trial, status):
        trial.status = status
        kde.observe(trial.config, trial.best_kappa)

    slots: list = []  # (trial, runner)

    def refill():
        while len(slots) < parallelism and len(trials) < budget_trials:
            tid = len(trials)
            rng = trial_rng(seed, tid)
            cfg = sample_kde(kde, rng) if sampler == "kde" else sample_random(space, rng)
            trial = Trial(tid, cfg)
            trials.append(trial)
            ghost = ghosts.get(tid)
            try:
                if ghost is not None:
                    if ghost["config"] != json.loads(json.dumps(cfg)):
                        raise ContractError(f"ledger trial {tid} has a different configuration")
                    if ghost["end"]["decision"] == "failed" and ghost["end"]["epoch"] == 0:
                        raise _ReplayedFailure(ghost["end"].get("error"))
                    runner = _Ghost(ghost)
                else:
                    runner = make_runner(cfg, int(trial_rng(seed, tid).integers(2**31)))
            except ContractError:
                raise
            except Exception as exc:  # a bad configuration fails the trial, not the study
                trial.status, trial.error = "failed", _error_text(exc)
                emit(_ledger_line(trial, 0, None, "failed", error=trial.error))
                continue
            slots.append((trial, runner))

    epochs_used = 0
    pool = ThreadPoolExecutor(max_workers=parallelism) if parallelism > 1 else None
    try:
        refill()
        while slots:
            if pool is None:
                outcomes = [_safe_epoch(r) for _, r in slots]
            else:
                outcomes = list(pool.map(lambda s: _safe_epoch(s[1]), slots))
            epochs_used += len(slots)
            survivors = []
            recorded = []
            for (trial, runner), (kappa, err) in zip(slots, outcomes):
                if err is not None:
                    trial.status, trial.error = "failed", err
                    emit(_ledger_line(trial, trial.epochs + 1, None, "failed", error=err))
                    continue
                epoch = trial.epochs + 1
                recorded.append((trial, runner, epoch, kappa, asha_record(asha, trial, epoch, kappa)))
            for trial, runner, epoch, kappa, at_rung in recorded:
                decision = asha_decide(asha, trial, epoch, kappa) if at_rung else "continue"
                if at_rung:
                    emit(_ledger_line(trial, epoch, kappa, decision))
                if decision == "continue":
                    survivors.append((trial, runner))
                else:
                    conclude(trial, "completed" if decision == "finished" else "stopped")
            slots[:] = survivors
            refill()
    finally:
        if pool is not None:
            pool.shutdown()
        if ledger is not None:
            ledger.close()

    ranked = sorted(trials, key=lambda t: (-t.score, t.trial_id))
    top = [t.config for t in ranked if t.status != "failed"][:3]
    return StudyResult(ranked, top, epochs_used)


def _error_text(exc):
    return exc.args[0] if isinstance(exc, _ReplayedFailure) else repr(exc)


def _safe_epoch(runner):
    try:
        kappa = float(runner.run_epoch())
    except Exception as exc:
        return None, _error_text(exc)
    if not math.isfinite(kappa):
        return None, f"non-finite kappa {kappa}"
    return kappa, None

