"""The fluctuation field and every statistic built on it.

For a neutral configuration the fluctuation field is the signed empirical
measure at CLT scale,

    w = (1/sqrt N) sum_i xi_i delta_{x_i},

paired with test functions, squeezed through negative-order Sobolev norms
(spectrally), and coupled bilinearly with two-point functions f via

    (1/N) sum_{i,j} xi_i xi_j f(x_i, x_j),

with or without the diagonal.  The weak form of the transport dynamics
uses the bounded kernels built from a C^2 test function phi:

    H_phi(x, y) = (1/2) K_free(x, y) . (grad phi(x) - grad phi(y)),  0 on x=y,
    h_phi(x, y) = (1/2) (grad_x^perp g(x,y) . grad phi(x)
                         + grad_y^perp g(y,x) . grad phi(y)),

coupled ordered-off-diagonal (H_phi) and over the full double sum
(h_phi).  Exact neutrality combinatorics are the signed index sums
alpha(m, n, N).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from vortexgas import ensemble, gaussianfield, geometry
from vortexgas.errors import EnsembleSizeError
from vortexgas.geometry import RADIUS


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------

def _smoothstep(u):
    """C^3 monotone step: 0 for u <= 0, 1 for u >= 1 (7th-order poly)."""
    u = np.clip(u, 0.0, 1.0)
    return u**4 * (35.0 - 84.0 * u + 70.0 * u**2 - 20.0 * u**3)


def _smoothstep_d1(u):
    inside = (u > 0.0) & (u < 1.0)
    u = np.clip(u, 0.0, 1.0)
    return np.where(inside, 140.0 * u**3 * (1.0 - u) ** 3, 0.0)


def _smoothstep_d2(u):
    inside = (u > 0.0) & (u < 1.0)
    u = np.clip(u, 0.0, 1.0)
    return np.where(inside, 420.0 * u**2 * (1.0 - u) ** 2 * (1.0 - 2.0 * u), 0.0)


@dataclass
class TestFunction:
    """A C^2 function on the closed disk with exact gradient and Hessian."""

    value: callable          # (..., 2) -> (...)
    grad: callable           # (..., 2) -> (..., 2)
    hess: callable           # (..., 2) -> (..., 2, 2)
    compact_support: bool
    support_radius: float
    name: str = "phi"
    c2_bound: float = None   # sup of |phi|, |grad phi|, |hess phi|

    def __post_init__(self):
        if self.c2_bound is None:
            self.c2_bound = self._tabulate_c2()
        if self.compact_support:
            self._check_support_margin()

    def _tabulate_c2(self, n_grid=4000):
        rng = np.random.default_rng(0)
        r = RADIUS * np.sqrt(rng.uniform(size=n_grid))
        t = rng.uniform(0, 2 * np.pi, size=n_grid)
        pts = np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)
        v = np.abs(self.value(pts)).max()
        gnorm = np.linalg.norm(self.grad(pts), axis=-1).max()
        hnorm = np.abs(self.hess(pts)).sum(axis=(-2, -1)).max()
        return float(max(v, gnorm, hnorm))

    def _check_support_margin(self, n_ring=256):
        t = np.linspace(0, 2 * np.pi, n_ring, endpoint=False)
        ring = 0.5 * (self.support_radius + RADIUS)
        pts = np.stack([ring * np.cos(t), ring * np.sin(t)], axis=-1)
        if np.max(np.abs(self.value(pts))) > 1e-14 or np.max(
            np.abs(self.grad(pts))
        ) > 1e-14:
            raise ValueError("test function does not vanish within its margin")


def bump_test_function(kind="radial", inner=0.45 * RADIUS, outer=0.85 * RADIUS):
    """Polynomial-times-smooth-cutoff test functions supported in the disk.

    kinds: "radial" (polynomial 1), "dipole" (x1), "quadrupole" (x1^2-x2^2).
    The cutoff is 1 inside ``inner`` and 0 outside ``outer``.
    """
    width = outer - inner
    polys = {
        "radial": (
            lambda x: np.ones(x.shape[:-1]),
            lambda x: np.zeros_like(x),
            lambda x: np.zeros(x.shape[:-1] + (2, 2)),
        ),
        "dipole": (
            lambda x: x[..., 0],
            lambda x: np.stack(
                [np.ones(x.shape[:-1]), np.zeros(x.shape[:-1])], axis=-1
            ),
            lambda x: np.zeros(x.shape[:-1] + (2, 2)),
        ),
        "quadrupole": (
            lambda x: x[..., 0] ** 2 - x[..., 1] ** 2,
            lambda x: np.stack([2 * x[..., 0], -2 * x[..., 1]], axis=-1),
            lambda x: np.broadcast_to(
                np.array([[2.0, 0.0], [0.0, -2.0]]), x.shape[:-1] + (2, 2)
            ).copy(),
        ),
    }
    if kind not in polys:
        raise ValueError(f"unknown test function kind {kind!r}")
    p, dp, d2p = polys[kind]

    def chi_parts(x):
        r = np.hypot(x[..., 0], x[..., 1])
        u = (r - inner) / width
        c = 1.0 - _smoothstep(u)
        c1 = -_smoothstep_d1(u) / width      # d chi / d r
        c2 = -_smoothstep_d2(u) / width**2   # d^2 chi / d r^2
        return r, c, c1, c2

    def value(x):
        x = np.asarray(x, dtype=float)
        _, c, _, _ = chi_parts(x)
        return p(x) * c

    def grad(x):
        x = np.asarray(x, dtype=float)
        r, c, c1, _ = chi_parts(x)
        rhat = np.where(r[..., None] > 0, x / np.maximum(r, 1e-300)[..., None], 0.0)
        return dp(x) * c[..., None] + p(x)[..., None] * c1[..., None] * rhat

    def hess(x):
        x = np.asarray(x, dtype=float)
        r, c, c1, c2 = chi_parts(x)
        rsafe = np.maximum(r, 1e-300)
        rhat = np.where(r[..., None] > 0, x / rsafe[..., None], 0.0)
        eye = np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2))
        rr = rhat[..., :, None] * rhat[..., None, :]
        # hessian of chi(r): c2 * rhat rhat^T + (c1/r) (I - rhat rhat^T)
        hchi = c2[..., None, None] * rr + (c1 / rsafe)[..., None, None] * (eye - rr)
        gchi = c1[..., None] * rhat
        gp = dp(x)
        cross = gp[..., :, None] * gchi[..., None, :]
        return (
            d2p(x) * c[..., None, None]
            + cross + np.swapaxes(cross, -1, -2)
            + p(x)[..., None, None] * hchi
        )

    return TestFunction(
        value=value, grad=grad, hess=hess, compact_support=True,
        support_radius=outer, name=kind,
    )


def constant_test_function(level=1.0):
    """phi = const on the whole disk (not compactly supported)."""
    return TestFunction(
        value=lambda x: np.full(np.asarray(x).shape[:-1], float(level)),
        grad=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        hess=lambda x: np.zeros(np.asarray(x).shape[:-1] + (2, 2)),
        compact_support=False, support_radius=RADIUS,
        name="constant", c2_bound=abs(level),
    )


def default_test_functions():
    """The three fixed test functions used across experiments."""
    return (
        bump_test_function("radial"),
        bump_test_function("dipole"),
        bump_test_function("quadrupole"),
    )


# ---------------------------------------------------------------------------
# Field statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FluctuationField:
    """The signed empirical measure of a configuration at 1/sqrt(N) scale."""

    config: ensemble.VortexConfiguration

    @property
    def scale(self):
        return 1.0 / math.sqrt(self.config.n)

    def pair(self, phi):
        return pair_with(self.config, phi)

    def bilinear(self, f, include_diagonal=True):
        return bilinear(self.config, f, include_diagonal)


def pair_with(config, phi):
    """<w, phi> = (1/sqrt N) sum_i xi_i phi(x_i)."""
    vals = phi.value(config.positions) if hasattr(phi, "value") else phi(
        config.positions
    )
    return float(vals @ config.intensities) / math.sqrt(config.n)


def bilinear(config, f, include_diagonal=True):
    """(1/N) sum_{i,j} xi_i xi_j f(x_i, x_j), diagonal optional.

    ``f`` is a callable on broadcast point arrays (a ModeKernel or a weak
    kernel evaluator both qualify).
    """
    pos, xi = config.positions, config.intensities.astype(float)
    fm = np.asarray(f(pos[:, None, :], pos[None, :, :]), dtype=float)
    total = xi @ fm @ xi
    if not include_diagonal:
        total -= float(np.sum(xi * xi * np.diagonal(fm)))
    return float(total) / config.n


def spectral_coefficients(config, basis):
    """Mode pairings <w, e_n> = (1/sqrt N) sum_i xi_i e_n(x_i), shape (K,)."""
    modes = basis.evaluate(config.positions)
    return (modes @ config.intensities.astype(float)) / math.sqrt(config.n)


def sobolev_norm_sq(config, delta, basis):
    """||w||^2 in the spectral H^{-1-delta} norm at the basis truncation.

    Computed as sum_n lam_n^{-(1+delta)} <w, e_n>^2, which is O(N K) and
    identical to the O(N^2) double sum of the fractional kernel at the
    same truncation.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    what = spectral_coefficients(config, basis)
    return float(np.sum(basis.lam ** (-(1.0 + delta)) * what**2))


def beta0_pairing_variance(phi, basis):
    """Exact variance of <w, phi> under the product measure: ||phi||^2 - (int phi)^2.

    Holds for every even N; quadrature on the basis rule.
    """
    vals = phi.value(basis.nodes)
    return float(basis.integrate(vals**2) - basis.integrate(vals) ** 2)


# ---------------------------------------------------------------------------
# Neutral combinatorics
# ---------------------------------------------------------------------------

def alpha(m, n, n_vortices):
    """Signed sum of xi_{k_1}...xi_{k_m} over ordered distinct n-tuples.

    Exact integer: zero for odd m, else
    (-1)^{m/2} C(N/2, m/2) m! (N-m)!/(N-n)!.
    """
    N = n_vortices
    if not 0 <= m <= n <= N:
        raise ValueError("need 0 <= m <= n <= N")
    if N % 2:
        raise ValueError("N must be even (neutral gas)")
    if m % 2:
        return 0
    sign = -1 if (m // 2) % 2 else 1
    return (
        sign
        * math.comb(N // 2, m // 2)
        * math.factorial(m)
        * math.factorial(N - m)
        // math.factorial(N - n)
    )


def alpha_bruteforce(m, n, n_vortices):
    """Exhaustive enumeration oracle over ordered distinct index tuples."""
    from itertools import permutations

    N = n_vortices
    xi = ensemble.standard_intensities(N)
    total = 0
    for tup in permutations(range(N), n):
        prod = 1
        for k in tup[:m]:
            prod *= int(xi[k])
        total += prod
    return total


# ---------------------------------------------------------------------------
# Weak-formulation kernels
# ---------------------------------------------------------------------------

@dataclass
class WeakKernel:
    """A bounded two-point kernel with a sampled sup estimate."""

    fn: callable
    name: str
    sup_bound: float = None

    def __call__(self, x, y):
        return self.fn(x, y)


def weak_kernels(phi):
    """(H_phi, h_phi) evaluators for a C^2 test function.

    H_phi vanishes on the diagonal and stays bounded near it by the
    second-order Taylor cancellation of grad phi; h_phi is smooth off the
    boundary diagonal and integrates to zero along the diagonal.
    """
    if not (hasattr(phi, "grad") and hasattr(phi, "hess")):
        raise TypeError("weak kernels need a C^2 test function (grad and hess)")

    def h_big(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        xb, yb = np.broadcast_arrays(x, y)
        d = xb - yb
        d2 = np.sum(d * d, axis=-1)
        near = d2 < geometry.MIN_SEPARATION**2
        safe = np.where(near, 1.0, d2)
        kf = -geometry.perp(d) / (2.0 * np.pi * safe[..., None])
        dg = phi.grad(xb) - phi.grad(yb)
        out = 0.5 * np.sum(kf * dg, axis=-1)
        return np.where(near, 0.0, out)

    def h_small(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        xb, yb = np.broadcast_arrays(x, y)
        gx = geometry.perp(geometry.grad_harmonic(xb, yb, validate=False))
        gy = geometry.perp(geometry.grad_harmonic(yb, xb, validate=False))
        return 0.5 * (
            np.sum(gx * phi.grad(xb), axis=-1) + np.sum(gy * phi.grad(yb), axis=-1)
        )

    sup_h = _sampled_sup(h_big)
    sup_s = _sampled_sup(h_small)
    return (
        WeakKernel(h_big, f"H[{phi.name}]", sup_h),
        WeakKernel(h_small, f"h[{phi.name}]", sup_s),
    )


def _sampled_sup(fn, n_pairs=2000, seed=1):
    rng = np.random.default_rng(seed)
    r = RADIUS * np.sqrt(rng.uniform(size=2 * n_pairs))
    t = rng.uniform(0, 2 * np.pi, size=2 * n_pairs)
    pts = np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)
    x, y = pts[:n_pairs], pts[n_pairs:]
    vals = np.abs(fn(x, y))
    # include near-diagonal approaches
    eps = np.geomspace(1e-9, 1e-2, 50)
    base = pts[:50]
    for e in eps:
        vals = np.append(vals, np.abs(fn(base, base + e / math.sqrt(2.0))))
    return float(np.max(vals))


def _bump_profile(u):
    """1 on [0, 1/2], smooth to 0 at 1 (the mollifier profile, r = 1)."""
    return 1.0 - _smoothstep(2.0 * np.asarray(u) - 1.0)


def mollified_kernels(phi, delta):
    """Smoothly cut (H_phi, h_phi) near the diagonal and the boundary.

    Multiplies both kernels by (1 - m(x-y)) (1 - b(x)) (1 - b(y)) where m
    is a bump equal to 1 for |x-y| <= delta/2 and supported in
    |x-y| <= delta, and b the analogous bump in boundary distance.
    Pointwise dominated by the uncut kernels, converging in L^p.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    h_big, h_small = weak_kernels(phi)

    def cut(x, y):
        xb, yb = np.broadcast_arrays(
            np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        )
        sep = np.linalg.norm(xb - yb, axis=-1)
        bx = geometry.UNIT_DISK.boundary_distance(xb)
        by = geometry.UNIT_DISK.boundary_distance(yb)
        return (
            (1.0 - _bump_profile(sep / delta))
            * (1.0 - _bump_profile(bx / delta))
            * (1.0 - _bump_profile(by / delta))
        )

    return (
        WeakKernel(lambda x, y: h_big(x, y) * cut(x, y),
                   f"H[{phi.name}]^{delta:g}", h_big.sup_bound),
        WeakKernel(lambda x, y: h_small(x, y) * cut(x, y),
                   f"h[{phi.name}]^{delta:g}", h_small.sup_bound),
    )


def kernel_l2_distance(a, b, basis):
    """||a - b||_{L2(D x D)} by quadrature on the basis rule (chunked)."""
    nodes, w = basis.nodes, basis.weights
    total = 0.0
    chunk = max(1, int(2e6 // nodes.shape[0]))
    for lo in range(0, nodes.shape[0], chunk):
        hi = min(lo + chunk, nodes.shape[0])
        diff = a(nodes[lo:hi, None, :], nodes[None, :, :]) - b(
            nodes[lo:hi, None, :], nodes[None, :, :]
        )
        total += float(np.sum(w[lo:hi, None] * w[None, :] * diff**2))
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# Weak vorticity residual
# ---------------------------------------------------------------------------

def weak_residual(record, phi):
    """Residual of the weak transport identity along one trajectory.

    r(t) = <w_t, phi> - <w_0, phi>
           - int_0^t [ (1/N) sum_{i != j} H_phi(x_i, x_j)
                      + (1/N) sum_{i,j} h_phi(x_i, x_j) ] ds,

    with the time integral by composite Simpson on the (uniform) sample
    grid; the residual series lives on the even-index subgrid.  Returns
    (max |r|, subgrid times, residual series).
    """
    if not phi.compact_support:
        raise ValueError("weak residual needs a compactly supported phi")
    times = record.times
    dt = np.diff(times)
    if times.size < 3 or not np.allclose(dt, dt[0], rtol=1e-10):
        raise ValueError("weak residual needs a uniform sample grid")

    h_big, h_small = weak_kernels(phi)
    a = record.pair_with(phi)
    integrand = np.empty(times.size)
    for s in range(times.size):
        cfg = record.configuration(s)
        integrand[s] = bilinear(cfg, h_big, include_diagonal=False) + bilinear(
            cfg, h_small, include_diagonal=True
        )
    # cumulative Simpson over pairs of panels
    n_even = (times.size - 1) // 2
    h = dt[0]
    pair_ints = (
        h / 3.0 * (integrand[0:-2:2] + 4.0 * integrand[1::2] + integrand[2::2])
    )[:n_even]
    cum = np.concatenate([[0.0], np.cumsum(pair_ints)])
    idx = np.arange(0, 2 * n_even + 1, 2)
    residual = a[idx] - a[0] - cum
    return float(np.max(np.abs(residual))), times[idx], residual


# ---------------------------------------------------------------------------
# Fixed-time CLT experiment
# ---------------------------------------------------------------------------

@dataclass
class CLTReport:
    beta: float
    n_vortices: int
    n_samples: int
    names: list
    empirical: np.ndarray     # (n_phi, n_phi) covariance of pairings
    stderr: np.ndarray        # same shape
    predicted: np.ndarray     # truncated spectral prediction
    normality_p: np.ndarray   # (n_phi,)
    ess: float

    def max_deviation_sigmas(self):
        return float(
            np.max(np.abs(self.empirical - self.predicted) / self.stderr)
        )


def clt_experiment(params, test_functions, basis, seed):
    """Covariance of pairings under the Gibbs ensemble vs the spectral law.

    The prediction is sum_n q_n <M phi_a, e_n> <M phi_b, e_n> with
    q_n = lam_n/(lam_n + beta) the fluctuation covariance weight, plus
    univariate normality diagnostics per test function.
    """
    n_phi = len(test_functions)
    if params.beta == 0.0:
        rng = ensemble.rng_stream(seed, 1)
        samples = np.empty((params.n_samples, n_phi))
        for s in range(params.n_samples):
            cfg = ensemble.sample_uniform_configuration(params.n_vortices, rng)
            samples[s] = [pair_with(cfg, p) for p in test_functions]
        ess = float(params.n_samples)
    else:
        chain = ensemble.sample_gibbs(params, seed)
        samples = np.array(
            [[pair_with(c, p) for p in test_functions]
             for c in chain.configurations()]
        )
        ess = min(
            ensemble.effective_sample_size(samples[:, a] * samples[:, b])
            for a in range(n_phi) for b in range(a, n_phi)
        )

    z = samples - samples.mean(axis=0)
    emp = (z.T @ z) / z.shape[0]
    prods = z[:, :, None] * z[:, None, :]
    se = prods.std(axis=0, ddof=1) / math.sqrt(ess)

    pred = np.zeros((n_phi, n_phi))
    q = gaussianfield.covariance_weight(params.beta, basis.lam)
    coeffs = []
    for p in test_functions:
        vals = p.value(basis.nodes)
        c = basis.project_values(vals)
        coeffs.append(c - basis.mean * basis.integrate(vals))
    for a in range(n_phi):
        for b in range(n_phi):
            pred[a, b] = float(np.sum(q * coeffs[a] * coeffs[b]))

    normality = np.array(
        [stats.normaltest(samples[:, a]).pvalue for a in range(n_phi)]
    )
    return CLTReport(
        beta=params.beta, n_vortices=params.n_vortices,
        n_samples=samples.shape[0],
        names=[p.name for p in test_functions], empirical=emp, stderr=se,
        predicted=pred, normality_p=normality, ess=ess,
    )


# ---------------------------------------------------------------------------
# Multi-time cumulants
# ---------------------------------------------------------------------------

@dataclass
class CumulantRow:
    time: float
    series: str      # "start", "end", "increment", "cross"
    order: int
    value: float
    stderr: float


def multitime_cumulants(records, phi, times, min_members=1000, n_batches=10):
    """Joint cumulant diagnostics of (<w_0, phi>, <w_t, phi>) over an ensemble.

    Reports k-statistics of orders 2..4 for both marginals and the
    increment, plus the cross covariance, each with batch standard
    errors.  Purely diagnostic: finite-N increments need not be Gaussian,
    so no pass/fail is attached.
    """
    records = list(records)
    if len(records) < min_members:
        raise EnsembleSizeError(
            f"need at least {min_members} trajectories, got {len(records)}",
            required=min_members,
        )
    rows = []
    for t in times:
        idx = int(np.argmin(np.abs(records[0].times - t)))
        a = np.array([r.pair_with(phi)[0] for r in records])
        b = np.array([r.pair_with(phi)[idx] for r in records])
        inc = b - a
        for name, series in (("start", a), ("end", b), ("increment", inc)):
            for order in (2, 3, 4):
                rows.append(CumulantRow(
                    time=float(records[0].times[idx]), series=name, order=order,
                    value=float(stats.kstat(series, order)),
                    stderr=_batch_se(series, order, n_batches),
                ))
        cross = float(np.mean((a - a.mean()) * (b - b.mean())))
        rows.append(CumulantRow(
            time=float(records[0].times[idx]), series="cross", order=2,
            value=cross, stderr=_batch_se_cross(a, b, n_batches),
        ))
    return rows


def _batch_se(series, order, n_batches):
    chunks = np.array_split(series, n_batches)
    vals = [stats.kstat(c, order) for c in chunks]
    return float(np.std(vals, ddof=1) / math.sqrt(n_batches))


def _batch_se_cross(a, b, n_batches):
    ca = np.array_split(a, n_batches)
    cb = np.array_split(b, n_batches)
    vals = [np.mean((x - x.mean()) * (y - y.mean())) for x, y in zip(ca, cb)]
    return float(np.std(vals, ddof=1) / math.sqrt(n_batches))
