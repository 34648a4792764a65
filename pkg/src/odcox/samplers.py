"""MCMC transition kernels and the block-sweep chain driver.

Two kernels cover every model in the package: an adaptive random-walk
Metropolis-Hastings step for low-dimensional hyperparameters, and elliptical
slice sampling for latent Gaussian fields. A posterior program is a
:class:`ChainModel`: an initial state plus an ordered list of update blocks,
each owning the part of the log posterior it needs. :func:`run_chain` sweeps
the blocks, records kept draws, and returns a :class:`PosteriorChain`.

Conventions baked in here:

* positive scalars are proposed on the log scale, bounded ones on a logit
  scale, with the Jacobian added to the Metropolis ratio;
* random-walk step sizes adapt by Robbins-Monro on the log step with gain
  t^-0.6, targeting acceptance 0.234 for vector blocks and 0.44 for scalars;
* chains are a pure function of (model, burn_in, keep, seed): all RNG flows
  from one numpy Generator (PCG64) seeded per chain, and adaptation state
  lives inside the run, not the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import gammaln

from .errors import DataError, SamplerError
from .gp import CholFactor, mvn_sample

__all__ = [
    "TARGET_ACCEPT_VECTOR",
    "TARGET_ACCEPT_SCALAR",
    "AdaptiveRWState",
    "arwmh_step",
    "ess_step",
    "NormalPrior",
    "InverseGammaPrior",
    "UniformPrior",
    "parse_prior",
    "IdentityTransform",
    "LogTransform",
    "LogitTransform",
    "MetropolisBlock",
    "EllipticalSliceBlock",
    "JointEllipticalSliceBlock",
    "ChainModel",
    "McmcConfig",
    "run_chain",
    "PosteriorChain",
    "inefficiency_factor",
]

TARGET_ACCEPT_VECTOR = 0.234
TARGET_ACCEPT_SCALAR = 0.44

ADAPT_DECAY = 0.6
_MAX_SHRINK = 100_000


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdaptiveRWState:
    """Step-size state of one adaptive random-walk block."""

    log_step: float = math.log(0.1)
    target_accept: float = TARGET_ACCEPT_VECTOR
    iteration: int = 0
    accept_count: int = 0
    adapt: bool = True

    def __post_init__(self):
        if not math.isfinite(self.log_step):
            raise SamplerError(f"log_step must be finite, got {self.log_step!r}")
        if not 0.0 < self.target_accept < 1.0:
            raise SamplerError(f"target_accept must lie in (0,1), got {self.target_accept!r}")

    @property
    def step(self) -> float:
        return math.exp(self.log_step)

    @property
    def accept_rate(self) -> float:
        return self.accept_count / self.iteration if self.iteration else 0.0


def _check_logp(value, where: str) -> float:
    value = float(value)
    if math.isnan(value):
        raise SamplerError(f"log target returned NaN at {where}")
    return value


def arwmh_step(current, log_target, state: AdaptiveRWState, rng):
    """One adaptive random-walk MH update.

    Proposes current + exp(log_step) * eps with standard normal eps, accepts
    with probability min(1, exp(delta)), then nudges the log step by
    t^-0.6 * (accepted - target). Returns (next, new_state, accepted).
    """
    x = np.atleast_1d(np.asarray(current, dtype=float))
    lp_cur = _check_logp(log_target(x), "the current state")
    if lp_cur == -math.inf:
        raise SamplerError("log target is -inf at the current state")
    prop = x + state.step * rng.standard_normal(x.shape)
    lp_prop = _check_logp(log_target(prop), "the proposal")
    accepted = math.log(1.0 - rng.random()) < lp_prop - lp_cur
    it = state.iteration + 1
    new_log_step = state.log_step
    if state.adapt:
        new_log_step += it ** (-ADAPT_DECAY) * (float(accepted) - state.target_accept)
    new_state = replace(
        state,
        log_step=new_log_step,
        iteration=it,
        accept_count=state.accept_count + int(accepted),
    )
    return (prop if accepted else x), new_state, bool(accepted)


def ess_step(current, prior_factor: CholFactor, log_lik, rng) -> np.ndarray:
    """One elliptical slice sampling update of a zero-mean latent field.

    Draws an auxiliary point nu from the prior, sets a likelihood threshold
    under the current state, and shrinks an angular bracket around the ellipse
    through (current, nu) until a point clears the threshold. Never rejects.
    """
    z = np.atleast_1d(np.asarray(current, dtype=float))
    if z.shape != (prior_factor.n,):
        z = z.reshape(prior_factor.n)
    nu = mvn_sample(prior_factor, rng)
    ll_cur = _check_logp(log_lik(z), "the current state")
    if ll_cur == -math.inf:
        raise SamplerError("log likelihood is -inf at the current state")
    log_y = ll_cur + math.log(1.0 - rng.random())
    theta = rng.uniform(0.0, 2.0 * math.pi)
    lo, hi = theta - 2.0 * math.pi, theta
    for _ in range(_MAX_SHRINK):
        prop = z * math.cos(theta) + nu * math.sin(theta)
        if _check_logp(log_lik(prop), "an ellipse point") > log_y:
            return prop
        if theta < 0.0:
            lo = theta
        else:
            hi = theta
        theta = rng.uniform(lo, hi)
    raise SamplerError("elliptical slice bracket failed to shrink to an acceptable point")


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalPrior:
    """N(mean, variance), applied elementwise to vectors and summed."""

    mean: float = 0.0
    var: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.var) and self.var > 0):
            raise DataError(f"normal prior variance must be positive, got {self.var!r}")

    def logpdf(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = x.size
        return float(
            -0.5 * n * (math.log(2.0 * math.pi) + math.log(self.var))
            - 0.5 * np.sum((x - self.mean) ** 2) / self.var
        )


@dataclass(frozen=True)
class InverseGammaPrior:
    """IG(shape, scale) with density ∝ x^{-(shape+1)} exp(-scale/x) on x > 0."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise DataError("inverse-gamma prior needs positive shape and scale")

    def logpdf(self, x) -> float:
        x = float(x)
        if x <= 0:
            return -math.inf
        return (
            self.shape * math.log(self.scale)
            - float(gammaln(self.shape))
            - (self.shape + 1.0) * math.log(x)
            - self.scale / x
        )


@dataclass(frozen=True)
class UniformPrior:
    """U[lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DataError(f"uniform prior needs lo < hi, got [{self.lo!r}, {self.hi!r}]")

    def logpdf(self, x) -> float:
        x = float(x)
        if x < self.lo or x > self.hi:
            return -math.inf
        return -math.log(self.hi - self.lo)


def parse_prior(entry: dict):
    """Build a prior from a config mapping like {"dist": "normal", "mean": 0, "var": 100}."""
    try:
        kind = entry["dist"]
    except (TypeError, KeyError):
        raise DataError(f"prior entry {entry!r} lacks a 'dist' key") from None
    try:
        if kind == "normal":
            return NormalPrior(mean=float(entry.get("mean", 0.0)), var=float(entry["var"]))
        if kind == "inverse_gamma":
            return InverseGammaPrior(shape=float(entry["shape"]), scale=float(entry["scale"]))
        if kind == "uniform":
            return UniformPrior(lo=float(entry["lo"]), hi=float(entry["hi"]))
    except KeyError as exc:
        raise DataError(f"prior entry {entry!r} is missing field {exc}") from None
    raise DataError(f"unknown prior distribution {kind!r}")


# ---------------------------------------------------------------------------
# Transforms to unconstrained proposal scales
# ---------------------------------------------------------------------------

class IdentityTransform:
    def forward(self, x):
        return np.atleast_1d(np.asarray(x, dtype=float))

    def inverse(self, y):
        return y

    def log_jacobian(self, y) -> float:
        return 0.0


class LogTransform:
    """y = log x for positive scalars; |dx/dy| = e^y."""

    def forward(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x <= 0):
            raise SamplerError("log transform requires a positive value")
        return np.log(x)

    def inverse(self, y):
        return np.exp(y)

    def log_jacobian(self, y) -> float:
        return float(np.sum(y))


class LogitTransform:
    """y = logit((x-lo)/(hi-lo)) for box-bounded scalars."""

    def __init__(self, lo: float, hi: float):
        if not lo < hi:
            raise DataError(f"logit transform needs lo < hi, got [{lo!r}, {hi!r}]")
        self.lo = float(lo)
        self.hi = float(hi)

    def forward(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x <= self.lo) or np.any(x >= self.hi):
            raise SamplerError(f"value outside the open interval ({self.lo}, {self.hi})")
        p = (x - self.lo) / (self.hi - self.lo)
        return np.log(p) - np.log1p(-p)

    def inverse(self, y):
        return self.lo + (self.hi - self.lo) / (1.0 + np.exp(-y))

    def log_jacobian(self, y) -> float:
        # dx/dy = (hi-lo) sigma(y)(1-sigma(y)); softplus keeps it stable
        y = np.asarray(y, dtype=float)
        softplus = np.logaddexp(0.0, y) + np.logaddexp(0.0, -y)
        return float(np.sum(math.log(self.hi - self.lo) - softplus))


# ---------------------------------------------------------------------------
# Update blocks and the chain driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetropolisBlock:
    """Joint random-walk update of one or more named state entries.

    ``log_target`` maps a full state dict to the log posterior terms that
    involve these entries (priors included, original parameterization); the
    block handles transform Jacobians itself. Dimension > 1 targets 0.234
    acceptance, scalars 0.44, unless overridden.
    """

    names: tuple[str, ...]
    log_target: Callable[[dict], float]
    transforms: dict | None = None
    target_accept: float | None = None
    initial_log_step: float = math.log(0.1)
    adapt: bool = True

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if not self.names:
            raise SamplerError("a Metropolis block needs at least one state name")

    @property
    def label(self) -> str:
        return "+".join(self.names)

    def _transform(self, name: str):
        if self.transforms and name in self.transforms:
            return self.transforms[name]
        return _IDENTITY

    def initial_rw_state(self, state: dict) -> AdaptiveRWState:
        dim = sum(np.atleast_1d(np.asarray(state[n], dtype=float)).size for n in self.names)
        target = self.target_accept
        if target is None:
            target = TARGET_ACCEPT_SCALAR if dim == 1 else TARGET_ACCEPT_VECTOR
        return AdaptiveRWState(
            log_step=self.initial_log_step, target_accept=target, adapt=self.adapt
        )

    def update(self, state: dict, rw: AdaptiveRWState, rng) -> AdaptiveRWState:
        """Mutates ``state`` in place; returns the advanced step-size state."""
        parts, sizes, scalar = [], [], []
        for name in self.names:
            val = np.atleast_1d(np.asarray(state[name], dtype=float))
            scalar.append(np.ndim(state[name]) == 0)
            y = self._transform(name).forward(val)
            parts.append(y)
            sizes.append(y.size)
        y0 = np.concatenate(parts)
        offsets = np.cumsum([0] + sizes)

        def split(yvec):
            vals, logjac = {}, 0.0
            for i, name in enumerate(self.names):
                t = self._transform(name)
                seg = yvec[offsets[i] : offsets[i + 1]]
                x = t.inverse(seg)
                logjac += t.log_jacobian(seg)
                vals[name] = float(x[0]) if scalar[i] else np.asarray(x)
            return vals, logjac

        def target(yvec):
            vals, logjac = split(yvec)
            return self.log_target({**state, **vals}) + logjac

        y1, rw, accepted = arwmh_step(y0, target, rw, rng)
        if accepted:
            vals, _ = split(y1)
            state.update(vals)
        return rw


@dataclass(frozen=True)
class EllipticalSliceBlock:
    """Elliptical slice update of one latent field under a zero-mean GP prior.

    ``prior_factor`` maps the current state to the Cholesky factor of the
    field's prior covariance (so it can follow hyperparameters); ``log_lik``
    maps a full state dict to the data log likelihood.
    """

    name: str
    prior_factor: Callable[[dict], CholFactor]
    log_lik: Callable[[dict], float]

    @property
    def label(self) -> str:
        return self.name

    def update(self, state: dict, rng) -> None:
        factor = self.prior_factor(state)
        current = state[self.name]
        state[self.name] = ess_step(
            current, factor, lambda z: self.log_lik({**state, self.name: z}), rng
        )


@dataclass(frozen=True)
class JointEllipticalSliceBlock:
    """Elliptical slice update of several Gaussian components on one ellipse.

    The named entries are stacked into a single vector with block-diagonal
    prior factor ``prior_factor(state)`` and updated together, then unstacked.
    A cyclic scan over strongly coupled components behaves like a random walk
    along their shared posterior ridge; the joint ellipse moves along the
    ridge in one step. ``shift`` holds per-name prior means (the ellipse
    itself lives in the centered coordinates).
    """

    names: tuple[str, ...]
    prior_factor: Callable[[dict], CholFactor]
    log_lik: Callable[[dict], float]
    shift: dict | None = None

    @property
    def label(self) -> str:
        return "+".join(self.names)

    def _offset(self, name: str, like: np.ndarray) -> np.ndarray:
        if self.shift is None or name not in self.shift:
            return np.zeros_like(like)
        return np.broadcast_to(np.asarray(self.shift[name], dtype=float), like.shape)

    def update(self, state: dict, rng) -> None:
        parts = [np.atleast_1d(np.asarray(state[n], dtype=float)) for n in self.names]
        offsets = [self._offset(n, p) for n, p in zip(self.names, parts)]
        splits = np.cumsum([p.size for p in parts])[:-1]
        stacked = np.concatenate([p - o for p, o in zip(parts, offsets)])

        def lik(v):
            pieces = np.split(v, splits)
            trial = {n: piece + o for n, piece, o in zip(self.names, pieces, offsets)}
            return self.log_lik({**state, **trial})

        new = ess_step(stacked, self.prior_factor(state), lik, rng)
        for n, piece, o in zip(self.names, np.split(new, splits), offsets):
            state[n] = piece + o


@dataclass(frozen=True)
class ChainModel:
    """A posterior program: initial state, update blocks, and what to record.

    ``derived`` entries are evaluated on the state at record time and stored
    alongside the sampled parameters (e.g. a data log likelihood trace).
    """

    init: dict
    blocks: tuple
    track: tuple[str, ...] | None = None
    derived: dict = field(default_factory=dict)

    def tracked_names(self) -> tuple[str, ...]:
        if self.track is not None:
            return tuple(self.track)
        return tuple(self.init.keys())


@dataclass(frozen=True)
class McmcConfig:
    """Chain schedule: burn-in length, kept draws, and the RNG seed."""

    burn_in: int = 20_000
    keep: int = 20_000
    seed: int = 0

    def __post_init__(self):
        if self.burn_in < 0 or self.keep < 0:
            raise SamplerError("burn_in and keep must be nonnegative")


def run_chain(model: ChainModel, config: McmcConfig) -> PosteriorChain:
    """Sweep the model's blocks for burn_in + keep iterations.

    Blocks run in declared order within each sweep; the state after the sweep
    is recorded once burn-in has passed. Identical (model, config) pairs give
    bit-identical chains.
    """
    burn_in, keep, seed = config.burn_in, config.keep, config.seed
    rng = np.random.default_rng(seed)
    state = {
        k: (float(v) if np.ndim(v) == 0 else np.array(v, dtype=float, copy=True))
        for k, v in model.init.items()
    }
    rw_states = {
        b.label: b.initial_rw_state(state) for b in model.blocks if isinstance(b, MetropolisBlock)
    }
    names = model.tracked_names()
    records = {n: [] for n in names}
    derived_records = {n: [] for n in model.derived}

    for it in range(burn_in + keep):
        for block in model.blocks:
            try:
                if isinstance(block, MetropolisBlock):
                    rw_states[block.label] = block.update(state, rw_states[block.label], rng)
                else:
                    block.update(state, rng)
            except SamplerError as exc:
                raise SamplerError(f"block {block.label!r} failed at iteration {it}: {exc}") from exc
        if it >= burn_in:
            for n in names:
                v = state[n]
                records[n].append(v if np.ndim(v) == 0 else v.copy())
            for n, fn in model.derived.items():
                derived_records[n].append(fn(state))

    draws = {n: np.asarray(records[n]) for n in names}
    draws.update({n: np.asarray(derived_records[n]) for n in model.derived})
    acceptance = {label: rw.accept_rate for label, rw in rw_states.items()}
    return PosteriorChain(draws=draws, burn_in=burn_in, seed=seed, acceptance=acceptance)


# ---------------------------------------------------------------------------
# Chain container and diagnostics
# ---------------------------------------------------------------------------

def inefficiency_factor(trace) -> float:
    """Integrated autocorrelation estimate 1 + 2*sum(rho_t).

    The sum is truncated by Geyer's initial positive sequence: lag pairs
    (rho_2m + rho_2m+1) are added while they stay positive. Constant traces
    return inf.
    """
    x = np.asarray(trace, dtype=float).ravel()
    n = x.size
    if n < 4:
        return 1.0
    xc = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    if acov[0] <= 0:
        return math.inf
    rho = acov / acov[0]
    total = 0.0
    pair = 0
    while 2 * pair + 1 < n:
        g = rho[2 * pair] + rho[2 * pair + 1]
        if g <= 0:
            break
        total += g
        pair += 1
    return max(2.0 * total - 1.0, 1.0 / n)


@dataclass(frozen=True)
class PosteriorChain:
    """Kept draws of a single chain plus bookkeeping.

    ``draws`` maps each tracked name to an array of shape (keep,) for scalars
    or (keep, dim) for vectors; ``acceptance`` holds the realized acceptance
    rate of every Metropolis block.
    """

    draws: dict
    burn_in: int
    seed: int
    acceptance: dict

    @property
    def n_draws(self) -> int:
        return 0 if not self.draws else len(next(iter(self.draws.values())))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.draws.keys())

    def get(self, name: str) -> np.ndarray:
        try:
            return self.draws[name]
        except KeyError:
            raise KeyError(f"no tracked parameter {name!r}; have {sorted(self.draws)}") from None

    def record(self, i: int) -> dict:
        """The i-th kept draw as a name -> value mapping."""
        return {name: self.draws[name][i] for name in self.draws}

    def thin(self, step: int) -> "PosteriorChain":
        """Every step-th kept draw, as a new chain (for prediction workloads)."""
        if step < 1:
            raise SamplerError(f"thinning step must be >= 1, got {step!r}")
        return replace(self, draws={k: v[::step] for k, v in self.draws.items()})

    def mean(self, name: str):
        return self.get(name).mean(axis=0)

    def sd(self, name: str):
        return self.get(name).std(axis=0, ddof=1)

    def quantile(self, name: str, q):
        return np.quantile(self.get(name), q, axis=0)

    def interval(self, name: str, level: float = 0.95):
        alpha = (1.0 - level) / 2.0
        return self.quantile(name, [alpha, 1.0 - alpha])

    def inefficiency(self, name: str):
        x = self.get(name)
        if x.ndim == 1:
            return inefficiency_factor(x)
        return np.array([inefficiency_factor(x[:, j]) for j in range(x.shape[1])])

    def summary(self) -> dict:
        """Posterior summaries in the layout of the sidecar summary file."""
        params = {}
        for name in self.names if self.n_draws else ():
            x = self.get(name)
            qs = np.quantile(x, [0.025, 0.5, 0.975], axis=0)
            entry = {
                "mean": x.mean(axis=0),
                "sd": x.std(axis=0, ddof=1),
                "p2.5": qs[0],
                "p50": qs[1],
                "p97.5": qs[2],
                "if": self.inefficiency(name),
            }
            params[name] = {
                k: (float(v) if np.ndim(v) == 0 else np.asarray(v).tolist())
                for k, v in entry.items()
            }
        return {
            "n_draws": self.n_draws,
            "burn_in": self.burn_in,
            "seed": self.seed,
            "acceptance": {k: float(v) for k, v in self.acceptance.items()},
            "parameters": params,
        }


_IDENTITY = IdentityTransform()
