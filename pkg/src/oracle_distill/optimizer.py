"""Tree-structured Parzen Estimator over a box-constrained search space.

The protocol is strictly sequential: ``suggest(history)`` proposes the next
point from all completed trials, the caller evaluates it and appends a
:class:`Trial`. Objectives are maximized.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr, ndtri

from ._validation import derive_seed

GAMMA = 0.25
N_STARTUP = 20
N_CANDIDATES = 24


@dataclass(frozen=True)
class Dimension:
    name: str
    low: float
    high: float
    log: bool = False
    integer: bool = False

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"{self.name}: lower bound must be below upper bound")
        if self.log and self.low <= 0:
            raise ValueError(f"{self.name}: log-scale bounds must be positive")

    @property
    def bounds(self) -> tuple[float, float]:
        """Bounds in the internal (possibly log) coordinate."""
        if self.log:
            return math.log(self.low), math.log(self.high)
        return float(self.low), float(self.high)

    def to_internal(self, v: float) -> float:
        return math.log(v) if self.log else float(v)

    def from_internal(self, x: float):
        v = math.exp(x) if self.log else float(x)
        v = min(max(v, self.low), self.high)
        if self.integer:
            v = int(min(max(round(v), math.ceil(self.low)), math.floor(self.high)))
        return v


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple[Dimension, ...]

    def __post_init__(self):
        object.__setattr__(self, "dimensions", tuple(self.dimensions))
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ValueError("dimension names must be unique")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dimensions]

    def __getitem__(self, name) -> Dimension:
        for d in self.dimensions:
            if d.name == name:
                return d
        raise KeyError(name)

    def contains(self, params: dict) -> bool:
        for d in self.dimensions:
            v = params[d.name]
            if not d.low <= v <= d.high:
                return False
            if d.integer and v != int(v):
                return False
        return True

    def with_overrides(self, overrides: dict | None) -> "SearchSpace":
        """Replace bounds, e.g. ``{"n_samples": [400, 2000]}``."""
        if not overrides:
            return self
        dims = []
        for d in self.dimensions:
            if d.name in overrides:
                lo, hi = overrides[d.name]
                d = Dimension(d.name, lo, hi, d.log, d.integer)
            dims.append(d)
        unknown = set(overrides) - set(self.names)
        if unknown:
            raise ValueError(f"unknown search dimensions {sorted(unknown)}")
        return SearchSpace(tuple(dims))

    def to_dict(self) -> dict:
        return {d.name: {"low": d.low, "high": d.high, "log": d.log, "integer": d.integer}
                for d in self.dimensions}


def default_search_space() -> SearchSpace:
    return SearchSpace((
        Dimension("alpha", 0.1, 99.6, log=True),
        Dimension("a", 0.1, 10.0, log=True),
        Dimension("b", 0.1, 10.0, log=True),
        Dimension("a2", 0.1, 10.0, log=True),
        Dimension("b2", 0.1, 10.0, log=True),
        Dimension("n_samples", 400, 10000, integer=True),
        Dimension("p_o", 0.0, 1.0),
    ))


@dataclass
class Trial:
    number: int
    params: dict
    value: float | None
    status: str = "ok"
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"number": self.number, "params": self.params, "value": self.value,
                "status": self.status, "info": self.info}

    @classmethod
    def from_dict(cls, doc: dict) -> "Trial":
        return cls(doc["number"], dict(doc["params"]), doc["value"], doc.get("status", "ok"),
                   dict(doc.get("info", {})))


def write_trials(trials, fh) -> None:
    for t in trials:
        fh.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")


def read_trials(fh) -> list[Trial]:
    return [Trial.from_dict(json.loads(line)) for line in fh if line.strip()]


def best_trial(history) -> Trial:
    """Highest objective; the earliest trial wins ties."""
    done = [t for t in history if t.status == "ok" and t.value is not None]
    if not done:
        raise ValueError("no completed trials")
    best = done[0]
    for t in done[1:]:
        if t.value > best.value:
            best = t
    return best


class _Parzen:
    """1-D mixture of truncated Gaussians at observations plus a uniform prior."""

    def __init__(self, obs, low, high):
        self.low, self.high = low, high
        span = high - low
        mus = np.sort(np.asarray(obs, dtype=np.float64))
        n = mus.size
        if n:
            padded = np.concatenate([[low], mus, [high]])
            gaps = np.diff(padded)
            sig = np.maximum(gaps[:-1], gaps[1:])
            sig = np.clip(sig, span / min(100.0, n + 1.0), span)
        else:
            sig = np.empty(0)
        self.mus, self.sigmas = mus, sig
        self.n = n
        a = (low - mus) / sig if n else np.empty(0)
        b = (high - mus) / sig if n else np.empty(0)
        self.cdf_lo, self.cdf_hi = ndtr(a), ndtr(b)
        self.log_mass = np.log(np.maximum(self.cdf_hi - self.cdf_lo, 1e-300))

    def sample(self, rng, size):
        comp = rng.integers(0, self.n + 1, size=size)
        out = rng.uniform(self.low, self.high, size=size)
        k = comp < self.n
        if k.any():
            c = comp[k]
            q = self.cdf_lo[c] + rng.random(k.sum()) * (self.cdf_hi[c] - self.cdf_lo[c])
            q = np.clip(q, 1e-300, 1 - 1e-16)
            out[k] = np.clip(self.mus[c] + self.sigmas[c] * ndtri(q), self.low, self.high)
        return out

    def logpdf(self, x):
        x = np.asarray(x, dtype=np.float64)[:, None]
        span = self.high - self.low
        parts = [np.full((x.shape[0], 1), -math.log(span))]
        if self.n:
            z = (x - self.mus) / self.sigmas
            parts.append(-0.5 * z**2 - 0.5 * math.log(2 * math.pi) - np.log(self.sigmas) - self.log_mass)
        return logsumexp(np.hstack(parts), axis=1) - math.log(self.n + 1)


def _prior_draw(space: SearchSpace, rng) -> dict:
    out = {}
    for d in space.dimensions:
        lo, hi = d.bounds
        out[d.name] = d.from_internal(rng.uniform(lo, hi))
    return out


def suggest(history, space: SearchSpace, seed, gamma=GAMMA, n_startup=N_STARTUP,
            n_candidates=N_CANDIDATES) -> dict:
    """Next point to evaluate given completed ``history``.

    Random (per-scale uniform) for the first ``n_startup`` trials. Afterwards
    the trials are split at the ``gamma`` quantile into good and bad sets and,
    per dimension, the candidate drawn from the good-set density with the
    largest good/bad density ratio is returned. When every observed objective
    is equal the split carries no information and a prior draw is returned.
    """
    done = [t for t in history if t.status == "ok" and t.value is not None]
    rng = np.random.default_rng(derive_seed(seed, len(history)))
    if len(done) < n_startup:
        return _prior_draw(space, rng)
    values = np.array([t.value for t in done], dtype=np.float64)
    if np.all(values == values[0]):
        return _prior_draw(space, rng)
    order = sorted(range(len(done)), key=lambda i: (-values[i], done[i].number))
    n_good = max(1, int(math.ceil(gamma * len(done))))
    good = [done[i] for i in order[:n_good]]
    bad = [done[i] for i in order[n_good:]]
    out = {}
    for d in space.dimensions:
        lo, hi = d.bounds
        l = _Parzen([d.to_internal(t.params[d.name]) for t in good], lo, hi)
        g = _Parzen([d.to_internal(t.params[d.name]) for t in bad], lo, hi)
        cand = l.sample(rng, n_candidates)
        score = l.logpdf(cand) - g.logpdf(cand)
        out[d.name] = d.from_internal(cand[int(np.argmax(score))])
    return out


class TPESampler:
    """Stateful convenience wrapper: ``ask()`` / ``tell()`` around :func:`suggest`."""

    def __init__(self, space: SearchSpace | None = None, seed=0, gamma=GAMMA,
                 n_startup=N_STARTUP, n_candidates=N_CANDIDATES):
        self.space = space or default_search_space()
        self.seed = seed
        self.gamma = gamma
        self.n_startup = n_startup
        self.n_candidates = n_candidates
        self.trials: list[Trial] = []

    def ask(self) -> dict:
        return suggest(self.trials, self.space, self.seed, self.gamma, self.n_startup, self.n_candidates)

    def tell(self, params: dict, value: float | None, status="ok", **info) -> Trial:
        t = Trial(len(self.trials), dict(params), value, status, info)
        self.trials.append(t)
        return t

    def best(self) -> Trial:
        return best_trial(self.trials)

    def optimize(self, objective, n_trials: int) -> Trial:
        for _ in range(n_trials):
            p = self.ask()
            self.tell(p, float(objective(p)))
        return self.best()
