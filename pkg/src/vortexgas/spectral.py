"""Truncated Dirichlet-Laplacian eigenbasis of the disk and spectral kernels.

Eigenfunctions in polar coordinates are Bessel modes

    e_{n,k}(r, t) = c_{n,k} J_n(j_{n,k} r / R) * {cos(n t), sin(n t)},

with eigenvalue lam = (j_{n,k}/R)^2 = pi j_{n,k}^2 on the unit-area disk.
Zeros j_{n,k} are found by bracketed root solving: row n's zeros are
bracketed by consecutive zeros of order n-1 (interlacing), row 0 by
McMahon intervals.

Kernels are truncated sums sum_n w(lam_n) e_n(x) e_n(y) with coefficient

    fractional(s):        lam^-s
    yukawa(m):            1/(m^2 + lam)
    regular_part(m):      m^2 / (lam (m^2 + lam))        [= 1/lam - yukawa]
    zero_avg_regular(m):  regular_part weights on centered modes e_n - mean

The last realizes the mean-projected kernel M V_m M.  Traces of the
regular kernel are also provided through an eigenvalue-only sum plus a
two-term Weyl tail, which is far more accurate than truncating at the
modes one can afford to store.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import jv, k0

from vortexgas import geometry
from vortexgas.errors import DomainError, QuadratureError
from vortexgas.geometry import RADIUS

#: boundary length of the unit-area disk
PERIMETER = 2.0 * np.pi * RADIUS

#: evaluation floor for the s = 1 fractional kernel (log pole unresolvable)
S1_SEPARATION_FLOOR = 0.05 * RADIUS

_ZERO_BUFFER = 8.0  # bracket rows this far beyond the requested j range


# ---------------------------------------------------------------------------
# Bessel zeros
# ---------------------------------------------------------------------------

def _row0_zeros(limit):
    """Zeros of J_0 up to ``limit`` from McMahon brackets + Brent polish."""
    count = int(math.ceil(limit / math.pi)) + 1
    out = []
    for k in range(1, count + 1):
        lo, hi = (k - 0.75) * math.pi, (k + 0.25) * math.pi
        out.append(brentq(lambda x: jv(0, x), lo, hi, xtol=1e-13))
    return np.array([z for z in out if z <= limit])


def _next_row_zeros(order, prev):
    """Zeros of J_order bracketed by consecutive zeros of J_{order-1}."""
    out = []
    for lo, hi in zip(prev[:-1], prev[1:]):
        out.append(brentq(lambda x: jv(order, x), lo, hi, xtol=1e-13))
    return np.array(out)


def zeros_upto(j_max):
    """All Bessel zeros j_{n,k} <= j_max, as a list indexed by order n."""
    limit = j_max + _ZERO_BUFFER
    rows = [_row0_zeros(limit)]
    while True:
        row = _next_row_zeros(len(rows), rows[-1])
        row = row[row <= limit]
        if row.size == 0 or row[0] > j_max:
            break
        rows.append(row)
    return [row[row <= j_max] for row in rows]


def bessel_zeros(order, count):
    """First ``count`` positive zeros of J_order (bracketed root-finding)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    # generous range guess, grown until the row is long enough
    j_max = order + 2.0 * order ** (1 / 3) + (count + 2) * math.pi + 10.0
    while True:
        limit = j_max + _ZERO_BUFFER
        row = _row0_zeros(limit)
        for n in range(1, order + 1):
            row = _next_row_zeros(n, row)
        if row.size >= count:
            return row[:count]
        j_max *= 1.5


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

def disk_quadrature(n_radial, n_theta):
    """Tensor rule on the disk: Gauss-Legendre in r times uniform angles.

    Returns (nodes, weights) with nodes of shape (P, 2); weights include
    the polar Jacobian and sum to the disk area (= 1).
    """
    u, wu = np.polynomial.legendre.leggauss(n_radial)
    r = 0.5 * RADIUS * (u + 1.0)
    wr = 0.5 * RADIUS * wu * r
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    wt = 2.0 * np.pi / n_theta
    rr, tt = np.meshgrid(r, theta, indexing="ij")
    nodes = np.stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()], axis=-1)
    weights = np.repeat(wr, n_theta) * wt
    return nodes, weights


# ---------------------------------------------------------------------------
# Basis
# ---------------------------------------------------------------------------

@dataclass
class SpectralBasis:
    """First K Dirichlet modes of the disk, with a certified quadrature."""

    order: np.ndarray        # angular order n >= 0
    radial_index: np.ndarray  # k >= 1
    parity: np.ndarray       # 0 = cosine, 1 = sine
    zero: np.ndarray         # Bessel zero j_{n,k}
    lam: np.ndarray          # eigenvalue pi j^2, ascending
    norm: np.ndarray         # L2 normalization constant
    mean: np.ndarray         # integral of the mode over the disk
    oversample: int
    nodes: np.ndarray        # quadrature nodes (P, 2)
    weights: np.ndarray      # quadrature weights (P,)
    radius: float = RADIUS
    _node_values: np.ndarray = field(default=None, repr=False, compare=False)

    # -- construction ------------------------------------------------------

    @property
    def size(self):
        return self.lam.size

    @property
    def n_nodes(self):
        return self.weights.size

    def evaluate(self, points, centered=False, chunk=None):
        """Mode values at arbitrary interior points, shape (K, P).

        ``centered`` subtracts the mode means (the M-projection).
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        K, P = self.size, pts.shape[0]
        if chunk is None:
            chunk = max(1, int(8e6 // max(P, 1)))
        out = np.empty((K, P))
        for lo in range(0, K, chunk):
            hi = min(lo + chunk, K)
            out[lo:hi] = self._eval_rows(np.arange(lo, hi), pts)
        if centered:
            out -= self.mean[:, None]
        return out

    def node_values(self, centered=False):
        """Mode values at the stored quadrature nodes (cached when small)."""
        if self._node_values is None:
            if self.size * self.n_nodes > 2.5e7:
                raise MemoryError(
                    "node-value cache would be too large; evaluate() in chunks"
                )
            object.__setattr__(self, "_node_values", self.evaluate(self.nodes))
        if centered:
            return self._node_values - self.mean[:, None]
        return self._node_values

    # -- quadrature operations ----------------------------------------------

    def integrate(self, values):
        """Integral over the disk of values sampled at the quadrature nodes."""
        return np.asarray(values) @ self.weights

    def project_values(self, values):
        """Coefficients <f, e_n> of node-sampled f, shape (K,)."""
        wf = self.weights * np.asarray(values, dtype=float)
        if self._node_values is not None:
            return self._node_values @ wf
        K = self.size
        out = np.empty(K)
        chunk = max(1, int(8e6 // max(self.n_nodes, 1)))
        for lo in range(0, K, chunk):
            hi = min(lo + chunk, K)
            out[lo:hi] = self._eval_rows(np.arange(lo, hi), self.nodes) @ wf
        return out

    def _eval_rows(self, idx, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        r = np.hypot(pts[:, 0], pts[:, 1])
        theta = np.arctan2(pts[:, 1], pts[:, 0])
        n = self.order[idx, None]
        radial = jv(n, (self.zero[idx, None] / self.radius) * r[None, :])
        ang = n * theta[None, :]
        block = np.where(self.parity[idx, None] == 0, np.cos(ang), np.sin(ang))
        return self.norm[idx, None] * radial * block

    def project(self, fn):
        """Coefficients of a callable f(points)->values."""
        return self.project_values(fn(self.nodes))

    def gram_residual(self, indices):
        """max |<e_i, e_j> - delta_ij| under the stored quadrature."""
        idx = np.asarray(indices)
        sub = self._eval_rows(idx, self.nodes)
        gram = (sub * self.weights) @ sub.T
        return float(np.max(np.abs(gram - np.eye(idx.size))))

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        np.savez(
            path,
            order=self.order, radial_index=self.radial_index, parity=self.parity,
            zero=self.zero, lam=self.lam, norm=self.norm, mean=self.mean,
            nodes=self.nodes, weights=self.weights,
            radius=np.float64(self.radius), oversample=np.int64(self.oversample),
            truncation=np.int64(self.size),
        )

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            return cls(
                order=data["order"], radial_index=data["radial_index"],
                parity=data["parity"], zero=data["zero"], lam=data["lam"],
                norm=data["norm"], mean=data["mean"],
                oversample=int(data["oversample"]),
                nodes=data["nodes"], weights=data["weights"],
                radius=float(data["radius"]),
            )


def build_basis(truncation, quadrature_order=4, certify=True):
    """First ``truncation`` Dirichlet modes ordered by eigenvalue.

    ``quadrature_order`` is the oversampling factor of the stored rule
    relative to the highest mode frequencies; 4 follows the usual margin
    for products of two modes.  Raises QuadratureError if the rule cannot
    certify orthonormality to 1e-8 on a probe set of modes.
    """
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    if quadrature_order < 1:
        raise ValueError("quadrature_order must be >= 1")

    j_guess = 2.0 * math.sqrt(truncation + 64.0) + 6.0
    while True:
        rows = zeros_upto(j_guess)
        modes = []  # (lam, n, parity, k, j)
        for n, row in enumerate(rows):
            for k, j in enumerate(row, start=1):
                lam = np.pi * j * j
                modes.append((lam, n, 0, k, j))
                if n > 0:
                    modes.append((lam, n, 1, k, j))
        if len(modes) >= truncation:
            break
        j_guess *= 1.3
    modes.sort()
    modes = modes[:truncation]

    lam = np.array([m[0] for m in modes])
    order = np.array([m[1] for m in modes], dtype=np.int64)
    parity = np.array([m[2] for m in modes], dtype=np.int64)
    radial_index = np.array([m[3] for m in modes], dtype=np.int64)
    zero = np.array([m[4] for m in modes])

    # L2 normalization: int_0^R J_n(j r/R)^2 r dr = R^2/2 * J_{n+1}(j)^2
    j_next = jv(order + 1, zero)
    norm = np.where(
        order == 0,
        1.0 / np.abs(j_next),
        math.sqrt(2.0) / np.abs(j_next),
    )
    # modes with angular dependence average to zero exactly
    mean = np.where(
        (order == 0),
        2.0 * np.sign(j_next) / zero,
        0.0,
    )

    j_max = float(zero.max())
    n_max = int(order.max())
    n_radial = max(32, int(math.ceil(quadrature_order * j_max / math.pi)))
    n_theta = max(16, quadrature_order * (n_max + 1))
    nodes, weights = disk_quadrature(n_radial, n_theta)

    basis = SpectralBasis(
        order=order, radial_index=radial_index, parity=parity, zero=zero,
        lam=lam, norm=norm, mean=mean, oversample=quadrature_order,
        nodes=nodes, weights=weights,
    )
    if certify:
        probe = list(range(min(32, truncation)))
        probe += list(range(max(0, truncation - 32), truncation))
        resid = basis.gram_residual(sorted(set(probe)))
        if resid > 1e-8:
            raise QuadratureError(
                f"quadrature cannot certify orthonormality: residual {resid:.2e}"
            )
    return basis


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

_KINDS = ("fractional", "yukawa", "regular_part", "zero_avg_regular")


@dataclass(frozen=True)
class KernelSpec:
    """A spectral kernel: kind + parameter, evaluated on a basis."""

    kind: str
    param: float
    basis: SpectralBasis

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "fractional" and not 0.0 < self.param <= 3.0:
            raise ValueError("fractional exponent must lie in (0, 3]")
        if self.kind != "fractional" and self.param <= 0.0:
            raise ValueError("mass parameter m must be positive")

    def coefficients(self):
        lam = self.basis.lam
        if self.kind == "fractional":
            return lam ** (-self.param)
        m2 = self.param**2
        if self.kind == "yukawa":
            return 1.0 / (m2 + lam)
        return m2 / (lam * (m2 + lam))

    @property
    def centered(self):
        return self.kind == "zero_avg_regular"


def kernel_eval(spec, x, y, validate=True):
    """Truncated kernel sum_n w_n e_n(x) e_n(y), broadcasting over points.

    For fractional exponents s <= 1 the pair must be separated by at
    least 0.05 R: the truncated series cannot resolve the diagonal pole.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if validate:
        geometry._check_interior(x, y)
        if spec.kind == "fractional" and spec.param <= 1.0:
            d = np.linalg.norm(
                np.broadcast_arrays(x, y)[0] - np.broadcast_arrays(x, y)[1], axis=-1
            )
            if np.any(d < S1_SEPARATION_FLOOR):
                raise DomainError(
                    "fractional kernel with s <= 1 requires |x-y| >= 0.05 R"
                )
    xb, yb = np.broadcast_arrays(x, y)
    shape = xb.shape[:-1]
    ex = spec.basis.evaluate(xb.reshape(-1, 2), centered=spec.centered)
    ey = spec.basis.evaluate(yb.reshape(-1, 2), centered=spec.centered)
    w = spec.coefficients()
    vals = np.einsum("n,np,np->p", w, ex, ey)
    return vals.reshape(shape) if shape else float(vals[0])


def v_free_zero(m):
    """Diagonal value of the full-plane regular part, (1/2pi)(log(m/2) + gamma).

    Limit of -(1/2pi) log|x| - (1/2pi) K_0(m |x|) as |x| -> 0.
    """
    if m <= 0:
        raise ValueError("m must be positive")
    return (math.log(m / 2.0) + np.euler_gamma) / (2.0 * math.pi)


def w_m_harmonic_part(m, x, y, basis, validate=True):
    """Boundary part w_m = W_m - (1/2pi) K_0(m |x-y|) of the Yukawa kernel.

    Negative in the interior by the maximum principle; the truncated sum
    carries the same near-diagonal bias as the yukawa kernel itself.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if validate:
        geometry._check_interior(x, y)
        geometry._check_separated(x, y)
    spec = KernelSpec("yukawa", m, basis)
    wm = kernel_eval(spec, x, y, validate=False)
    d = np.linalg.norm(np.broadcast_arrays(x, y)[0] - np.broadcast_arrays(x, y)[1], axis=-1)
    return wm - k0(m * d) / (2.0 * np.pi)


# ---------------------------------------------------------------------------
# Eigenvalue-only traces (no eigenfunctions needed)
# ---------------------------------------------------------------------------

def eigenvalue_table(j_max):
    """(eigenvalues with multiplicity, zeros of the n=0 modes) up to j_max."""
    rows = zeros_upto(j_max)
    lam = [np.pi * rows[0] ** 2]
    for row in rows[1:]:
        lam.append(np.repeat(np.pi * row**2, 2))
    return np.sort(np.concatenate(lam)), rows[0]


def _weyl_tail_regular(m, cutoff):
    """Tail of tr(V_m) over eigenvalues above ``cutoff``.

    Uses the two-term Weyl density dN = (1/4pi - L/(8 pi sqrt(lam))) dlam
    for the Dirichlet disk (area 1, perimeter L).
    """
    m2 = m * m
    bulk = math.log1p(m2 / cutoff) / (4.0 * math.pi)
    s = math.sqrt(cutoff)
    boundary = (
        PERIMETER / (8.0 * math.pi)
        * 2.0 * (1.0 / s - (math.pi / 2.0 - math.atan(s / m)) / m)
    )
    return bulk - boundary


def regular_trace(m, j_max=300.0):
    """tr(V_m) = sum_n m^2 / (lam_n (m^2 + lam_n)) over the full spectrum.

    Eigenvalues up to pi j_max^2 enter exactly; the rest through the Weyl
    tail.  Accurate to ~1e-4 absolute for m up to ~1e3 at the default cut.
    """
    lam, _ = eigenvalue_table(j_max)
    m2 = m * m
    head = float(np.sum(m2 / (lam * (m2 + lam))))
    return head + _weyl_tail_regular(m, np.pi * j_max**2)


def w_m_diag_integral(m, j_max=300.0):
    """int_D w_m(x, x) dx via the trace identity.

    Pointwise w_m(x,x) = V_m^free(0) + g(x,x) - V_m(x,x); integrating gives
    v_free_zero(m) + int g(x,x) dx - tr(V_m).  Negative, with a boundary
    layer of width ~1/m carrying the whole integral.
    """
    return v_free_zero(m) + geometry.gbar_integral() - regular_trace(m, j_max)


# ---------------------------------------------------------------------------
# Mode-built two-point functions
# ---------------------------------------------------------------------------

class ModeKernel:
    """f(x, y) = sum_{a,b < M} c_ab e_a(x) e_b(y) over the first M modes.

    Small M keeps every functional of f cheap and several norms exact:
    ||f||_L2^2 = ||c||_F^2 by orthonormality, and the diagonal average
    int f(x,x) dx = tr(c).
    """

    def __init__(self, coeffs, basis):
        c = np.atleast_2d(np.asarray(coeffs, dtype=float))
        if c.shape[0] != c.shape[1]:
            raise ValueError("coefficient matrix must be square")
        if c.shape[0] > basis.size:
            raise ValueError("more coefficients than basis modes")
        self.coeffs = c
        self.basis = basis

    @property
    def n_modes(self):
        return self.coeffs.shape[0]

    @property
    def is_symmetric(self):
        return np.allclose(self.coeffs, self.coeffs.T, atol=1e-14)

    def __call__(self, x, y):
        xb, yb = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        shape = xb.shape[:-1]
        ex = self._modes_at(xb.reshape(-1, 2))
        ey = self._modes_at(yb.reshape(-1, 2))
        vals = np.einsum("ap,ab,bp->p", ex, self.coeffs, ey)
        return vals.reshape(shape) if shape else float(vals[0])

    def _modes_at(self, points):
        return self.basis._eval_rows(np.arange(self.n_modes), points)

    def matrix(self, points):
        """f evaluated on all pairs of a point set, shape (P, P)."""
        e = self._modes_at(np.asarray(points, float).reshape(-1, 2))
        return e.T @ self.coeffs @ e

    def diag(self, points):
        """f(x, x) on a point set."""
        e = self._modes_at(np.asarray(points, float).reshape(-1, 2))
        return np.einsum("ap,ab,bp->p", e, self.coeffs, e)

    def apply_weighted(self, values):
        """(f W v)(x_p) = sum_q w_q f(x_p, x_q) v_q at the basis nodes."""
        e = self._node_modes()
        return e.T @ (self.coeffs @ (e @ (self.basis.weights * values)))

    def _node_modes(self):
        return self.basis.node_values()[: self.n_modes]

    def diag_average(self):
        """int_D f(x, x) dx = tr(c), exact."""
        return float(np.trace(self.coeffs))

    def l2_norm(self):
        """||f||_{L2(DxD)} = Frobenius norm of c, exact."""
        return float(np.linalg.norm(self.coeffs))

    def lp_norm(self, p, chunk=512):
        """||f||_{Lp(DxD)} by chunked quadrature on the stored rule."""
        e = self._node_modes()
        w = self.basis.weights
        total = 0.0
        for lo in range(0, e.shape[1], chunk):
            hi = min(lo + chunk, e.shape[1])
            block = e[:, lo:hi].T @ self.coeffs @ e
            total += np.sum(w[lo:hi, None] * w[None, :] * np.abs(block) ** p)
        return float(total ** (1.0 / p))

    def with_zero_diag_average(self):
        """Same kernel with the identity component removed: tr(c) = 0."""
        c = self.coeffs.copy()
        c -= np.trace(c) / self.n_modes * np.eye(self.n_modes)
        return ModeKernel(c, self.basis)


def random_mode_kernel(basis, n_modes, seed, symmetric=True, zero_diag_average=True):
    """Reproducible random kernel on the first ``n_modes`` modes."""
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(n_modes, n_modes)) / n_modes
    if symmetric:
        c = 0.5 * (c + c.T)
    k = ModeKernel(c, basis)
    return k.with_zero_diag_average() if zero_diag_average else k


def expected_field_l2_sq(m, j_max=300.0):
    """E ||F_m||_L2^2 = tr(M V_m M) = tr(V_m) - sum_n w_n mean_n^2.

    Exact over the full spectrum (Weyl tail for the trace; the mean
    correction involves only n = 0 modes and converges fast).
    """
    tr = regular_trace(m, j_max)
    _, j0 = eigenvalue_table(j_max)
    lam0 = np.pi * j0**2
    m2 = m * m
    w0 = m2 / (lam0 * (m2 + lam0))
    mean_sq = 4.0 / j0**2
    return tr - float(np.sum(w0 * mean_sq))
