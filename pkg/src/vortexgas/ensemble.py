"""Canonical Gibbs ensemble of the neutral vortex gas.

The measure on positions, at inverse temperature beta >= 0 and fixed
intensities (first N/2 equal +1, the rest -1), has unnormalized density
exp(-(beta/N) H) against Lebesgue on D^N, with

    H = sum_{i<j} xi_i xi_j G(x_i, x_j) + (1/2) sum_i g(x_i, x_i).

Sampling is Metropolis-Hastings with a mixture proposal (local Gaussian
displacement / uniform redraw / opposite-sign pair swap), optionally
wrapped in parallel tempering over a beta ladder.  beta = 0 is the
product uniform measure and also has an exact sampler.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from vortexgas import geometry
from vortexgas.errors import SingularConfigurationError
from vortexgas.geometry import MIN_SEPARATION, RADIUS
from vortexgas.rng import rng_stream

DEFAULT_MIXTURE = (0.6, 0.3, 0.1)  # local, uniform redraw, pair swap


def standard_intensities(n):
    """The fixed assignment: first n/2 vortices +1, the rest -1."""
    if n % 2 or n < 2:
        raise ValueError("the neutral gas needs an even number of vortices")
    out = np.ones(n, dtype=np.int64)
    out[n // 2:] = -1
    return out


@dataclass(frozen=True)
class VortexConfiguration:
    """N distinct interior positions with balanced unit intensities."""

    positions: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        xi = np.asarray(self.intensities)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "intensities", xi.astype(np.int64))
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] != xi.shape[0]:
            raise ValueError("positions must be (N, 2) matching intensities")
        n = pos.shape[0]
        if n % 2 or int(np.sum(xi)) != 0 or not np.all(np.abs(xi) == 1):
            raise ValueError("intensities must be +-1 summing to zero, N even")
        if not np.all(geometry.UNIT_DISK.contains(pos)):
            raise ValueError("all positions must lie strictly inside the disk")
        if self.min_pair_distance <= 0.0:
            raise SingularConfigurationError("coincident vortex positions")

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def min_pair_distance(self):
        iu = np.triu_indices(self.n, 1)
        d = np.linalg.norm(self.positions[iu[0]] - self.positions[iu[1]], axis=-1)
        return float(d.min()) if d.size else math.inf

    @property
    def min_boundary_distance(self):
        return float(np.min(geometry.UNIT_DISK.boundary_distance(self.positions)))

    def permuted(self, perm):
        perm = np.asarray(perm)
        return VortexConfiguration(self.positions[perm], self.intensities[perm])

    def rotated(self, angle):
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        return VortexConfiguration(self.positions @ rot.T, self.intensities)


def uniform_disk(count, rng):
    """Exact uniform draws on the disk (area-1 normalization)."""
    r = RADIUS * np.sqrt(rng.uniform(size=count))
    t = rng.uniform(0.0, 2.0 * np.pi, size=count)
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)


def sample_uniform_configuration(n, rng):
    """One draw from the beta = 0 ensemble (iid uniform positions)."""
    return VortexConfiguration(uniform_disk(n, rng), standard_intensities(n))


# ---------------------------------------------------------------------------
# Hamiltonian
# ---------------------------------------------------------------------------

def hamiltonian(config):
    """H = sum_{i<j} xi xi G + (1/2) sum_i g(x_i, x_i), O(N^2)."""
    pos, xi = config.positions, config.intensities
    n = pos.shape[0]
    iu = np.triu_indices(n, 1)
    dx = pos[iu[0]] - pos[iu[1]]
    dist = np.linalg.norm(dx, axis=-1)
    if np.any(dist < MIN_SEPARATION):
        bad = int(np.argmin(dist))
        raise SingularConfigurationError(
            "(nearly) coincident vortices",
            indices=(int(iu[0][bad]), int(iu[1][bad])),
        )
    pair = np.sum(
        xi[iu[0]] * xi[iu[1]] * geometry.green(pos[iu[0]], pos[iu[1]], validate=False)
    )
    self_part = 0.5 * np.sum(geometry.harmonic_part(pos, pos, validate=False))
    return float(pair + self_part)


def log_unnormalized_density(config, beta):
    """log of the Gibbs weight: -(beta/N) H(config)."""
    return -(beta / config.n) * hamiltonian(config)


def gbar():
    """int_D g(y, y) dy, closed form on the unit-area disk."""
    return geometry.gbar_integral()


def green_mean():
    """int_D int_D G(x, y) dx dy, closed form on the unit-area disk."""
    return geometry.green_pair_integral()


def _delta_h_move(pos, xi, i, new_point):
    """H change when vortex i moves to new_point; O(N)."""
    others = np.concatenate([np.arange(i), np.arange(i + 1, pos.shape[0])])
    interaction = xi[i] * np.sum(
        xi[others]
        * (
            geometry.green(new_point, pos[others], validate=False)
            - geometry.green(pos[i], pos[others], validate=False)
        )
    )
    self_part = 0.5 * (
        geometry.harmonic_part(new_point, new_point, validate=False)
        - geometry.harmonic_part(pos[i], pos[i], validate=False)
    )
    return float(interaction + self_part)


def _delta_h_swap(pos, xi, i, j):
    """H change when opposite-sign vortices i, j exchange positions; O(N)."""
    keep = np.setdiff1d(np.arange(pos.shape[0]), (i, j))
    gi = geometry.green(pos[j], pos[keep], validate=False) - geometry.green(
        pos[i], pos[keep], validate=False
    )
    # xi_j = -xi_i, and the i-j pair term and the diagonal g terms cancel
    return float(2.0 * xi[i] * np.sum(xi[keep] * gi))


def metropolis_log_acceptance(beta, n, delta_h):
    """log of the acceptance probability min(1, exp(-(beta/n) dH))."""
    return min(0.0, -(beta / n) * delta_h)


# ---------------------------------------------------------------------------
# Chain
# ---------------------------------------------------------------------------

@dataclass
class GibbsParams:
    """Chain configuration for one target inverse temperature."""

    beta: float
    n_vortices: int
    n_samples: int
    proposal_scale: float = 0.25 * RADIUS
    burn_in: int = 0
    thinning: int = 1
    mixture: tuple = DEFAULT_MIXTURE
    ladder: tuple = None  # parallel tempering betas, must contain beta

    def __post_init__(self):
        if self.n_vortices % 2 or self.n_vortices < 2:
            raise ValueError("n_vortices must be even and >= 2")
        if not 0.0 <= self.beta < 2.0 * np.pi * self.n_vortices:
            raise ValueError("beta must satisfy 0 <= beta < 2 pi N")
        if self.proposal_scale <= 0.0:
            raise ValueError("proposal scale must be positive")
        if self.n_samples < 1 or self.thinning < 1 or self.burn_in < 0:
            raise ValueError("invalid chain length parameters")
        w = np.asarray(self.mixture, dtype=float)
        if w.shape != (3,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture must be 3 nonnegative weights summing to 1")
        if self.ladder is not None:
            lad = tuple(float(b) for b in self.ladder)
            if not any(abs(b - self.beta) < 1e-12 for b in lad):
                raise ValueError("ladder must contain the target beta")
            self.ladder = lad


@dataclass
class GibbsChain:
    """Retained states of one chain plus mixing diagnostics."""

    params: GibbsParams
    seed: int
    intensities: np.ndarray
    positions: np.ndarray      # (S, N, 2)
    h_values: np.ndarray       # (S,)
    acceptance: dict
    swap_acceptance: float = None
    ess: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return self.positions.shape[0]

    def configurations(self):
        for s in range(self.n_samples):
            yield VortexConfiguration(self.positions[s], self.intensities)

    def observable(self, fn):
        """Apply fn to every retained configuration, 1D array."""
        return np.array([fn(c) for c in self.configurations()])

    def save(self, path):
        p = self.params
        np.savez(
            path,
            positions=self.positions, h_values=self.h_values,
            intensities=self.intensities, seed=np.int64(self.seed),
            beta=np.float64(p.beta), n_vortices=np.int64(p.n_vortices),
            n_samples=np.int64(p.n_samples),
            proposal_scale=np.float64(p.proposal_scale),
            burn_in=np.int64(p.burn_in), thinning=np.int64(p.thinning),
            mixture=np.asarray(p.mixture, dtype=float),
            acceptance_kinds=np.array(sorted(self.acceptance)),
            acceptance_rates=np.array(
                [self.acceptance[k] for k in sorted(self.acceptance)]
            ),
        )

    @classmethod
    def load(cls, path):
        with np.load(path) as d:
            params = GibbsParams(
                beta=float(d["beta"]), n_vortices=int(d["n_vortices"]),
                n_samples=int(d["n_samples"]),
                proposal_scale=float(d["proposal_scale"]),
                burn_in=int(d["burn_in"]), thinning=int(d["thinning"]),
                mixture=tuple(d["mixture"]),
            )
            acc = dict(zip(d["acceptance_kinds"].tolist(),
                           d["acceptance_rates"].tolist()))
            return cls(
                params=params, seed=int(d["seed"]), intensities=d["intensities"],
                positions=d["positions"], h_values=d["h_values"], acceptance=acc,
            )


class _ChainState:
    """Mutable single-rung state: positions, running H, move statistics."""

    __slots__ = ("pos", "xi", "h", "proposed", "accepted", "since_refresh")

    def __init__(self, pos, xi):
        self.pos = pos
        self.xi = xi
        self.h = hamiltonian(VortexConfiguration(pos, xi))
        self.proposed = np.zeros(3, dtype=np.int64)
        self.accepted = np.zeros(3, dtype=np.int64)
        self.since_refresh = 0

    def refresh_h(self):
        self.h = hamiltonian(VortexConfiguration(self.pos, self.xi))
        self.since_refresh = 0


def _advance(state, beta, params, rng, n_steps):
    """Run n_steps mixture-proposal Metropolis updates in place."""
    pos, xi = state.pos, state.xi
    n = pos.shape[0]
    w_local, w_redraw, _ = params.mixture
    half = n // 2
    for _ in range(n_steps):
        u = rng.uniform()
        if u < w_local:
            kind = 0
            i = int(rng.integers(n))
            new = pos[i] + params.proposal_scale * rng.normal(size=2)
            state.proposed[kind] += 1
            if new[0] ** 2 + new[1] ** 2 >= RADIUS**2:
                continue  # exterior proposal: reject outright
            dh = _delta_h_move(pos, xi, i, new)
        elif u < w_local + w_redraw:
            kind = 1
            i = int(rng.integers(n))
            new = uniform_disk(1, rng)[0]
            state.proposed[kind] += 1
            dh = _delta_h_move(pos, xi, i, new)
        else:
            kind = 2
            i = int(rng.integers(half))
            j = half + int(rng.integers(half))
            state.proposed[kind] += 1
            dh = _delta_h_swap(pos, xi, i, j)
        if math.log(rng.uniform()) < metropolis_log_acceptance(beta, n, dh):
            if kind == 2:
                pos[[i, j]] = pos[[j, i]]
            else:
                pos[i] = new
            state.h += dh
            state.accepted[kind] += 1
            state.since_refresh += 1
            if state.since_refresh >= 20000:
                state.refresh_h()


def sample_gibbs(params, seed):
    """Metropolis-Hastings chain for the Gibbs ensemble.

    Emits ``n_samples`` thinned post-burn-in states.  With a beta ladder,
    runs one rung per ladder entry with adjacent replica swaps between
    emissions and returns the rung at the target beta.
    """
    rng = rng_stream(seed, 0)
    xi = standard_intensities(params.n_vortices)
    ladder = params.ladder if params.ladder is not None else (params.beta,)
    target = int(np.argmin([abs(b - params.beta) for b in ladder]))
    rungs = [
        _ChainState(uniform_disk(params.n_vortices, rng), xi) for _ in ladder
    ]

    swaps_proposed = 0
    swaps_accepted = 0

    def advance_all(n_steps):
        nonlocal swaps_proposed, swaps_accepted
        for state, beta in zip(rungs, ladder):
            _advance(state, beta, params, rng, n_steps)
        if len(rungs) > 1:
            a = int(rng.integers(len(rungs) - 1))
            b = a + 1
            log_r = (ladder[a] - ladder[b]) / params.n_vortices * (
                rungs[a].h - rungs[b].h
            )
            swaps_proposed += 1
            if math.log(rng.uniform()) < min(0.0, log_r):
                rungs[a].pos, rungs[b].pos = rungs[b].pos, rungs[a].pos
                rungs[a].h, rungs[b].h = rungs[b].h, rungs[a].h
                swaps_accepted += 1

    advance_all(params.burn_in)
    S = params.n_samples
    positions = np.empty((S, params.n_vortices, 2))
    h_values = np.empty(S)
    for s in range(S):
        advance_all(params.thinning)
        positions[s] = rungs[target].pos
        h_values[s] = rungs[target].h

    state = rungs[target]
    with np.errstate(invalid="ignore"):
        rates = state.accepted / np.maximum(state.proposed, 1)
    acceptance = {
        "local": float(rates[0]),
        "redraw": float(rates[1]),
        "swap": float(rates[2]),
    }
    chain = GibbsChain(
        params=params, seed=seed, intensities=xi, positions=positions,
        h_values=h_values, acceptance=acceptance,
        swap_acceptance=(swaps_accepted / swaps_proposed if swaps_proposed else None),
    )
    chain.ess["h"] = effective_sample_size(h_values)
    return chain


def effective_sample_size(series):
    """n / integrated autocorrelation time, by Geyer's initial positive
    sequence on the FFT autocorrelation."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = np.dot(x, x) / n
    if var <= 0:
        return float(n)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(f * np.conj(f))[:n].real / (var * n)
    gamma = acf[:-1:2][: n // 2] + acf[1::2][: n // 2]
    tau = -acf[0]
    for g in gamma:
        if g <= 0:
            break
        tau += 2.0 * g
    return float(n / max(tau, 1.0))


# ---------------------------------------------------------------------------
# Partition function
# ---------------------------------------------------------------------------

def partition_ratio(beta, n_vortices, sample_count, seed):
    """Z^N_beta = E_uniform[exp(-(beta/N) H)] by direct Monte Carlo.

    Valid because the beta = 0 measure is normalized (unit area).  Returns
    (estimate, standard error).
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    rng = rng_stream(seed, 0)
    xi = standard_intensities(n_vortices)
    iu = np.triu_indices(n_vortices, 1)
    sign = xi[iu[0]] * xi[iu[1]]
    vals = np.empty(sample_count)
    for s in range(sample_count):
        pos = uniform_disk(n_vortices, rng)
        pair = np.sum(sign * geometry.green(pos[iu[0]], pos[iu[1]], validate=False))
        h = pair + 0.5 * np.sum(geometry.harmonic_part(pos, pos, validate=False))
        vals[s] = math.exp(-(beta / n_vortices) * h)
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(sample_count))
    return est, se
