"""Point-vortex dynamics on the disk with conservation diagnostics.

The equations of motion, at the fluctuation scaling, are

    dx_i/dt = (1/sqrt N) sum_{j != i} xi_j K(x_i, x_j)
            + (1/sqrt N) xi_i (grad^perp g)(x_i, x_i),

a Hamiltonian system in conjugate coordinates (x_1, xi x_2) whose flow
conserves H and, by rotational symmetry, the angular impulse
sum_i xi_i |x_i|^2.

Integration uses an embedded Dormand-Prince 5(4) pair with per-step
error control, step rejection when a trial step would bring vortices
within 1e-10 of each other or outside the closed disk, and cubic Hermite
dense output on the accepted steps.  Step-size underflow raises
BlowUpError; such events are measure-zero and must abort cleanly.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import ks_2samp

from vortexgas import ensemble, geometry
from vortexgas.errors import BlowUpError, SingularConfigurationError
from vortexgas.geometry import RADIUS

MIN_PAIR_DISTANCE = 1e-10
MIN_STEP = 1e-12

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


def velocity(config):
    """Vortex velocities, shape (N, 2); O(N^2) pairwise sums.

    Equals (1/(xi_i sqrt N)) grad^perp_{x_i} H, which is what conserves H.
    """
    pos = np.asarray(config.positions, dtype=float)
    xi = np.asarray(config.intensities, dtype=float)
    return _velocity_arrays(pos, xi)


def _velocity_arrays(pos, xi):
    n = pos.shape[0]
    diff = pos[:, None, :] - pos[None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    off = ~np.eye(n, dtype=bool)
    if np.any(d2[off] < MIN_PAIR_DISTANCE**2):
        bad = np.argwhere(off & (d2 < MIN_PAIR_DISTANCE**2))[0]
        raise SingularConfigurationError(
            "vortex pair closer than the collision floor",
            indices=(int(bad[0]), int(bad[1])),
        )
    # free part, diagonal excluded
    inv = np.where(off, 1.0 / np.where(d2 > 0, d2, 1.0), 0.0)
    kfree = geometry.perp(diff) * (-inv / (2.0 * np.pi))[..., None]
    # image part is smooth through the diagonal; j = i gives the self term
    grad_g = geometry.grad_harmonic(
        pos[:, None, :], pos[None, :, :], validate=False
    )
    kernel = kfree + geometry.perp(grad_g)
    return np.einsum("j,ijc->ic", xi, kernel) / math.sqrt(n)


def angular_impulse(config):
    """sum_i xi_i |x_i|^2, the rotational Noether invariant."""
    return float(
        np.sum(config.intensities * np.sum(config.positions**2, axis=-1))
    )


@dataclass
class TrajectoryRecord:
    """Dense samples of one integration plus conservation diagnostics."""

    times: np.ndarray          # (S,), strictly increasing
    positions: np.ndarray      # (S, N, 2)
    intensities: np.ndarray    # (N,)
    h_values: np.ndarray       # (S,)
    angular_impulse: np.ndarray  # (S,)
    min_pair_distance: np.ndarray
    min_boundary_distance: np.ndarray
    n_steps: int
    n_error_rejections: int
    n_guard_rejections: int
    rtol: float
    atol: float

    @property
    def n(self):
        return self.intensities.shape[0]

    def configuration(self, index):
        return ensemble.VortexConfiguration(self.positions[index], self.intensities)

    @property
    def h_drift(self):
        h0 = self.h_values[0]
        return float(np.max(np.abs(self.h_values - h0)) / max(1.0, abs(h0)))

    @property
    def angular_impulse_drift(self):
        return float(np.max(np.abs(self.angular_impulse - self.angular_impulse[0])))

    def conservative(self, h_tol=1e-6):
        return self.h_drift <= h_tol

    def pair_with(self, test_function):
        """Time series of the fluctuation pairing (1/sqrt N) sum xi phi(x_i)."""
        vals = test_function.value(self.positions.reshape(-1, 2)).reshape(
            self.times.size, self.n
        )
        return (vals @ self.intensities) / math.sqrt(self.n)

    def save(self, path):
        np.savez(
            path,
            times=self.times, positions=self.positions,
            intensities=self.intensities, h_values=self.h_values,
            angular_impulse=self.angular_impulse,
            min_pair_distance=self.min_pair_distance,
            min_boundary_distance=self.min_boundary_distance,
            n_steps=np.int64(self.n_steps),
            n_error_rejections=np.int64(self.n_error_rejections),
            n_guard_rejections=np.int64(self.n_guard_rejections),
            rtol=np.float64(self.rtol), atol=np.float64(self.atol),
        )

    @classmethod
    def load(cls, path):
        with np.load(path) as d:
            return cls(
                times=d["times"], positions=d["positions"],
                intensities=d["intensities"], h_values=d["h_values"],
                angular_impulse=d["angular_impulse"],
                min_pair_distance=d["min_pair_distance"],
                min_boundary_distance=d["min_boundary_distance"],
                n_steps=int(d["n_steps"]),
                n_error_rejections=int(d["n_error_rejections"]),
                n_guard_rejections=int(d["n_guard_rejections"]),
                rtol=float(d["rtol"]), atol=float(d["atol"]),
            )


def _hermite(t, t0, t1, y0, y1, f0, f1):
    """Cubic Hermite interpolant on [t0, t1] at times t (vectorized)."""
    h = t1 - t0
    s = (t - t0) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return (
        h00[:, None] * y0 + (h * h10)[:, None] * f0
        + h01[:, None] * y1 + (h * h11)[:, None] * f1
    )


def integrate(config, t_final, rtol=1e-10, atol=1e-12, sample_times=None,
              direction=1.0, interp_factor=20.0):
    """Adaptive RK5(4) integration to t_final > 0 with dense output.

    ``sample_times`` defaults to 129 uniform points on [0, T].  A step is
    rejected (and retried smaller) on error-test failure, or when the
    trial state leaves the closed disk or brings a pair within 1e-10.
    Steps containing a sample time are additionally required to carry an
    accurate cubic-Hermite interpolant (checked against a half-step
    solve), since the interpolation error, not the solution error, would
    otherwise dominate the dense output.  Unrecoverable step underflow
    raises BlowUpError with the time stamp.
    """
    if t_final <= 0:
        raise ValueError("t_final must be positive")
    if sample_times is None:
        sample_times = np.linspace(0.0, t_final, 129)
    sample_times = np.asarray(sample_times, dtype=float)
    if np.any(np.diff(sample_times) <= 0) or sample_times[0] < 0 \
            or sample_times[-1] > t_final + 1e-12:
        raise ValueError("sample times must increase within [0, T]")

    xi = np.asarray(config.intensities, dtype=float)
    n = xi.size
    sgn = 1.0 if direction >= 0 else -1.0

    def rhs(y):
        return sgn * _velocity_arrays(y.reshape(n, 2), xi).ravel()

    def trial_step(y0, f0, h):
        """One DP5 step; returns (y5, k) or None if a guard trips."""
        kk = np.empty((7, y0.size))
        kk[0] = f0
        for stage in range(1, 7):
            ys = y0 + h * (_A[stage] @ kk[:stage])
            if stage < 6:
                try:
                    kk[stage] = rhs(ys)
                except SingularConfigurationError:
                    return None
            else:
                pts = ys.reshape(n, 2)
                if (
                    _min_pair_sq(pts) < MIN_PAIR_DISTANCE**2
                    or np.any(np.sum(pts * pts, axis=-1) > RADIUS**2)
                ):
                    return None
                try:
                    kk[6] = rhs(ys)
                except SingularConfigurationError:
                    return None
        return ys, kk

    y = np.asarray(config.positions, dtype=float).ravel().copy()
    t = 0.0
    f = rhs(y)
    v = max(float(np.max(np.abs(f))), 1e-3)
    h = min(1e-2 / v, t_final / 10.0)

    out = np.empty((sample_times.size, n, 2))
    next_sample = 0
    if sample_times[0] == 0.0:
        out[0] = y.reshape(n, 2)
        next_sample = 1

    n_steps = 0
    n_err = 0
    n_guard = 0
    while t < t_final:
        h = min(h, t_final - t)
        if h < MIN_STEP:
            raise BlowUpError(f"step size underflow at t = {t:.6g}", time=t)
        trial = trial_step(y, f, h)
        if trial is None:
            n_guard += 1
            h *= 0.5
            continue
        y5, k = trial

        err = h * ((_B5 - _B4) @ k)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        err_norm = math.sqrt(float(np.mean((err / scale) ** 2)))
        if not err_norm <= 1.0:  # also catches NaN from exterior stage points
            n_err += 1
            h *= 0.2 if not math.isfinite(err_norm) else max(
                0.2, 0.9 * err_norm ** (-0.2)
            )
            continue

        t_new = t + h
        carries_sample = (
            next_sample < sample_times.size
            and sample_times[next_sample] < t_new - 1e-14
        )
        if carries_sample:
            # interpolant quality gate: compare the Hermite midpoint with
            # a half-step solution (reuses f as its first stage)
            half = trial_step(y, f, 0.5 * h)
            if half is None:
                n_guard += 1
                h *= 0.5
                continue
            y_mid = half[0]
            mid_interp = _hermite(
                np.array([t + 0.5 * h]), t, t_new, y, y5, f, k[6]
            ).ravel()
            interp_err = float(np.max(np.abs(mid_interp - y_mid) / scale))
            if interp_err > interp_factor:
                n_err += 1
                h *= 0.5
                continue

        f_new = k[6]
        while next_sample < sample_times.size and sample_times[next_sample] <= t_new + 1e-14:
            ts = np.array([min(sample_times[next_sample], t_new)])
            out[next_sample] = _hermite(ts, t, t_new, y, y5, f, f_new).reshape(n, 2)
            next_sample += 1
        t, y, f = t_new, y5, f_new
        n_steps += 1
        h *= min(5.0, max(0.2, 0.9 * (err_norm + 1e-16) ** (-0.2)))

    if next_sample < sample_times.size:
        out[next_sample:] = y.reshape(n, 2)

    return _build_record(
        sample_times, out, config.intensities, n_steps, n_err, n_guard, rtol, atol
    )


def _min_pair_sq(pts):
    n = pts.shape[0]
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    return float(np.min(d2[~np.eye(n, dtype=bool)]))


def _build_record(times, positions, intensities, n_steps, n_err, n_guard,
                  rtol, atol):
    S, n = positions.shape[0], intensities.shape[0]
    xi = np.asarray(intensities, dtype=float)
    h_vals = np.empty(S)
    ang = np.empty(S)
    dmin = np.empty(S)
    bmin = np.empty(S)
    for s in range(S):
        cfg = ensemble.VortexConfiguration(positions[s], intensities)
        h_vals[s] = ensemble.hamiltonian(cfg)
        ang[s] = angular_impulse(cfg)
        dmin[s] = cfg.min_pair_distance
        bmin[s] = cfg.min_boundary_distance
    return TrajectoryRecord(
        times=np.asarray(times, dtype=float), positions=positions,
        intensities=np.asarray(intensities), h_values=h_vals,
        angular_impulse=ang, min_pair_distance=dmin,
        min_boundary_distance=bmin, n_steps=n_steps,
        n_error_rejections=n_err, n_guard_rejections=n_guard,
        rtol=rtol, atol=atol,
    )


def reverse_error(config, t_final, rtol=1e-10, atol=1e-12):
    """Max-norm return error of forward-then-backward integration.

    The flow is reversible under (t, xi) -> (-t, -xi), so integrating the
    end state with flipped intensities must return to the start.
    """
    fwd = integrate(config, t_final, rtol=rtol, atol=atol,
                    sample_times=np.array([0.0, t_final]))
    end = ensemble.VortexConfiguration(fwd.positions[-1], -config.intensities)
    back = integrate(end, t_final, rtol=rtol, atol=atol,
                     sample_times=np.array([0.0, t_final]))
    return float(np.max(np.abs(back.positions[-1] - config.positions)))


# ---------------------------------------------------------------------------
# Measure invariance experiment
# ---------------------------------------------------------------------------

@dataclass
class InvarianceReport:
    """Two-sample KS comparisons of observables at t = 0 and t = T."""

    beta: float
    n_vortices: int
    t_final: float
    n_members: int
    n_blowups: int
    statistics: dict  # name -> (ks statistic, p value)

    def rejects(self, level=0.01):
        return {k: p < level for k, (_, p) in self.statistics.items()}


def invariance_experiment(params, t_final, ensemble_size, seed,
                          test_functions=(), rtol=1e-8, atol=1e-10,
                          initial_configs=None):
    """Evolve an ensemble drawn from the Gibbs measure and KS-compare
    observable distributions at times 0 and T.

    Blow-ups are counted and excluded, not fatal.  beta = 0 members are
    drawn exactly; beta > 0 uses thinned Metropolis states unless
    ``initial_configs`` is supplied.
    """
    if initial_configs is None:
        initial_configs = draw_ensemble(params, ensemble_size, seed)
    obs_names = ["h_per_vortex", "angular_impulse"] + [
        f"pairing_{i}" for i in range(len(test_functions))
    ]
    start = {k: [] for k in obs_names}
    end = {k: [] for k in obs_names}
    blowups = 0
    for cfg in initial_configs:
        try:
            rec = integrate(
                cfg, t_final, rtol=rtol, atol=atol,
                sample_times=np.array([0.0, t_final]),
            ) if t_final > 0 else None
        except BlowUpError:
            blowups += 1
            continue
        for label, idx in (("start", 0), ("end", -1)):
            c = cfg if rec is None else rec.configuration(idx)
            dest = start if label == "start" else end
            dest["h_per_vortex"].append(ensemble.hamiltonian(c) / c.n)
            dest["angular_impulse"].append(angular_impulse(c))
            for i, phi in enumerate(test_functions):
                field = (phi.value(c.positions) @ c.intensities) / math.sqrt(c.n)
                dest[f"pairing_{i}"].append(field)
    stats = {}
    for k in obs_names:
        a, b = np.asarray(start[k]), np.asarray(end[k])
        if t_final == 0 or np.array_equal(a, b):
            stats[k] = (0.0, 1.0)
        else:
            res = ks_2samp(a, b)
            stats[k] = (float(res.statistic), float(res.pvalue))
    return InvarianceReport(
        beta=params.beta, n_vortices=params.n_vortices, t_final=t_final,
        n_members=len(start["h_per_vortex"]), n_blowups=blowups,
        statistics=stats,
    )


def draw_ensemble(params, ensemble_size, seed):
    """Independent-ish initial configurations from the Gibbs measure."""
    if params.beta == 0.0:
        rng = ensemble.rng_stream(seed, 1)
        return [
            ensemble.sample_uniform_configuration(params.n_vortices, rng)
            for _ in range(ensemble_size)
        ]
    chain_params = ensemble.GibbsParams(
        beta=params.beta, n_vortices=params.n_vortices,
        n_samples=ensemble_size, proposal_scale=params.proposal_scale,
        burn_in=max(params.burn_in, 50 * params.n_vortices),
        thinning=max(params.thinning, 10 * params.n_vortices),
        mixture=params.mixture,
    )
    chain = ensemble.sample_gibbs(chain_params, seed)
    return list(chain.configurations())
