"""Greedy sparse-recovery estimators for the beamspace channel.

All estimators take a measurement vector ``y`` and a sensing matrix ``A``
whose column ``j`` (0-based) multiplies beamspace cell
``(m', n') = (j // N + 1, j % N + 1)``, i.e. ``A`` acts on the column-major
vectorization of the ``N x M`` beamspace matrix.

* :func:`omp_standard` is textbook OMP over the DFT grid.
* :func:`domp_mlb` and :func:`domp_mslb` locate each path's Dirichlet peak
  from least-squares estimates at the selected cell and its four neighbours.
* :func:`domp_lo` solves the single-path fitting problem over the 2x2-cell
  box around the selected cell.

The DOMP variants add back-fitting to the greedy loop: after each accepted
atom, and again at the end, every path is re-estimated against the
measurements with all other paths removed, and may jump to a better cell
screened from the correlation map. A change is kept only if the residual
shrinks. For MLb/MSLb the neighbourhood LS is fed the target with the path's
own out-of-neighbourhood leakage removed, so exact inputs reproduce
themselves. DOMP-LO ends each back-fitting pass with a joint Gauss-Newton
step over all locations and strengths, which turns the linear convergence of
cyclic refits into quadratic convergence. ``EstimatorConfig(refine_passes=0)`` gives the plain one-shot
greedy estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from domp.channel import (
    UlaConfig,
    VirtualPeak,
    bs_factor,
    dirichlet_atom,
    from_beamspace,
    ue_factor,
    wrap_coordinate,
)
from domp.errors import DegenerateInputError, DomainError, SingularityError

STRENGTH_RULES = ("projection", "kernel")
# back-fitting stops once a full pass improves the residual by less than this
_BACKFIT_RTOL = 1e-6
# a reselection seed is polished only if it captures this share of the power
# the incumbent path explains
_SEED_RATIO = 0.5
_LEAKAGE_ITERS = 4
_STALL_RATIO = 0.5
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_GOLDEN_TOL = 1e-10


@dataclass(frozen=True)
class EstimatorConfig:
    """Stopping and solver parameters shared by all estimators.

    Parameters
    ----------
    residual_tolerance : float
        Stop once ``||y_res||`` drops to this value.
    max_paths : int
        Iteration cap ``L_max`` for the DOMP variants. Plain OMP may select
        up to ``omp_iteration_factor * max_paths`` grid atoms.
    lo_grid_step : float
        Coarse grid step (cells) of the localized search.
    lo_refine_iters : int
        Maximum golden-section iterations per line search.
    refine_passes : int
        Back-fitting passes after the greedy loop; 0 gives the plain
        one-shot greedy estimate.
    backfit_per_iteration : int
        Back-fitting passes after each accepted atom.
    reselect_candidates : int
        Cells screened per path when back-fitting looks for a better
        location elsewhere on the grid; 0 disables reselection.
    normalize_columns : bool
        Correlate with unit-norm columns of ``A`` in the match step.
    strength : {"projection", "kernel"}
        Path strength from the least-squares projection onto the fitted
        atom, or from the centre-cell estimate divided by the kernel value.
    """

    residual_tolerance: float = 1e-6
    max_paths: int = 3
    lo_grid_step: float = 1e-2
    lo_refine_iters: int = 40
    refine_passes: int = 10
    omp_iteration_factor: int = 4
    backfit_per_iteration: int = 3
    reselect_candidates: int = 4
    normalize_columns: bool = True
    strength: str = "projection"

    def __post_init__(self):
        if not self.residual_tolerance > 0:
            raise DomainError("residual_tolerance must be positive")
        if int(self.max_paths) < 1:
            raise DomainError("max_paths must be at least 1")
        if not 0 < self.lo_grid_step <= 1:
            raise DomainError("lo_grid_step must lie in (0, 1]")
        if int(self.lo_refine_iters) < 1:
            raise DomainError("lo_refine_iters must be positive")
        if int(self.refine_passes) < 0:
            raise DomainError("refine_passes must be non-negative")
        if int(self.omp_iteration_factor) < 1:
            raise DomainError("omp_iteration_factor must be positive")
        if int(self.backfit_per_iteration) < 0 or int(self.reselect_candidates) < 0:
            raise DomainError("back-fitting counts must be non-negative")
        if self.strength not in STRENGTH_RULES:
            raise DomainError(f"strength must be one of {STRENGTH_RULES}")


@dataclass
class EstimateResult:
    paths: list
    H_V_hat: np.ndarray = field(repr=False)
    H_hat: np.ndarray = field(repr=False)
    residual_history: list
    iterations: int
    offsets: list = field(default_factory=list)
    early_stopped: bool = False

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1]


def default_tolerance(y, snr_db: float) -> float:
    """Noise-floor stopping threshold ``0.9 * ||y|| * 10^(-snr/20)``.

    For a noiseless observation ``1e-7 * ||y||`` is used instead, just above
    the floor the continuous location search can resolve in double precision.
    """
    norm_y = float(np.linalg.norm(y))
    if not np.isfinite(snr_db):
        return max(1e-7 * norm_y, 1e-300)
    return max(0.9 * norm_y * 10 ** (-snr_db / 20), 1e-300)


def _grid_shape(A, ula: UlaConfig):
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[1] != ula.M * ula.N:
        raise DomainError(f"sensing matrix with {A.shape[-1]} columns does not match M*N = {ula.M * ula.N}")
    return ula.M, ula.N


def _correlation(A, source, normalize):
    corr = np.abs(A.conj().T @ source)
    if normalize:
        norms = np.linalg.norm(A, axis=0)
        corr = corr / np.where(norms > 0, norms, np.inf)
    return corr


def match_step(A, y_res, ula: UlaConfig, normalize: bool = False):
    """Select the column most correlated with the residual.

    Returns the 1-based column index ``j*`` and its beamspace cell
    ``(m', n')``. Correlation uses the conjugate transpose, divided by the
    column norm when ``normalize`` is set; ties go to the lowest index.
    """
    M, N = _grid_shape(A, ula)
    y_res = np.asarray(y_res)
    if not np.any(y_res):
        raise DomainError("residual is zero; nothing to match")
    j0 = int(np.argmax(_correlation(A, y_res, normalize)))
    return j0 + 1, j0 // N + 1, j0 % N + 1


def neighborhood_cells(m_prime: int, n_prime: int, ula: UlaConfig):
    """The five cells ``(m', n'), (m'+-1, n'), (m', n'+-1)`` with periodic wrap.

    Keys are ``"center", "m+", "m-", "n+", "n-"``; values are 1-based cells.
    """
    M, N = ula.M, ula.N

    def wm(m):
        return (m - 1) % M + 1

    def wn(n):
        return (n - 1) % N + 1

    return {
        "center": (m_prime, n_prime),
        "m+": (wm(m_prime + 1), n_prime),
        "m-": (wm(m_prime - 1), n_prime),
        "n+": (m_prime, wn(n_prime + 1)),
        "n-": (m_prime, wn(n_prime - 1)),
    }


def _column(cell, N):
    m, n = cell
    return (m - 1) * N + (n - 1)


def neighborhood_ls(A, y_res, m_prime: int, n_prime: int, ula: UlaConfig, iteration=None):
    """Least-squares beamspace estimates at the selected cell and its four neighbours.

    Returns a dict keyed like :func:`neighborhood_cells`.
    """
    _, N = _grid_shape(A, ula)
    cells = neighborhood_cells(m_prime, n_prime, ula)
    cols = [_column(c, N) for c in cells.values()]
    sub = _neighborhood_matrix(A, cols, (m_prime, n_prime), ula, iteration)
    coef, *_ = np.linalg.lstsq(sub, y_res, rcond=None)
    return dict(zip(cells.keys(), coef))


def _neighborhood_matrix(A, cols, anchor, ula, iteration):
    if len(set(cols)) < len(cols):
        raise SingularityError(
            f"neighbourhood of {anchor} has repeated cells on a {ula.M}x{ula.N} grid", iteration
        )
    sub = A[:, cols]
    if np.linalg.matrix_rank(sub) < len(cols):
        raise SingularityError(f"rank-deficient neighbourhood LS at cell {anchor}", iteration)
    return sub


def mlb_offset(center: complex, plus: complex, minus: complex) -> float:
    """Main-lobe fractional offset from the centre and the stronger neighbour.

    ``+1/2 * min(|c|/|p|, |p|/|c|)`` when ``|plus| > |minus|``, otherwise the
    mirrored expression towards ``minus``.
    """
    c, p, m = abs(center), abs(plus), abs(minus)
    if c == 0 and p == 0 and m == 0:
        raise DegenerateInputError("all three samples are zero")
    if p > m:
        side, sign = p, 1.0
    else:
        side, sign = m, -1.0
    if side == 0:
        return 0.0
    if c == 0:
        ratio = 0.0
    else:
        ratio = min(c / side, side / c)
    return sign * 0.5 * ratio


def mslb_offset(center: complex, plus: complex, minus: complex, size: int) -> float:
    """Bias-corrected three-sample interpolation over main and side lobe.

    ``tan(pi/K)/(pi/K) * Re((minus - plus) / (2 center - minus - plus))``,
    clamped to ``[-1/2, 1/2]``.
    """
    den = 2 * center - minus - plus
    if abs(den) <= 1e-12 * abs(center) or den == 0:
        raise DegenerateInputError("three-sample denominator vanishes")
    scale = math.tan(math.pi / size) / (math.pi / size) if size > 2 else 1.0
    delta = scale * ((minus - plus) / den).real
    return float(np.clip(delta, -0.5, 0.5))


def peak_strength(center: complex, m_prime: int, n_prime: int, m_star: float, n_star: float, ula: UlaConfig) -> complex:
    """Peak strength whose unit atom reproduces ``center`` at cell ``(m', n')``."""
    value = complex(bs_factor(m_prime, m_star, ula.M) * ue_factor(n_prime, n_star, ula.N))
    if abs(value) < 1e-9:
        raise DegenerateInputError(
            f"atom at ({m_star:.6g}, {n_star:.6g}) vanishes at cell ({m_prime}, {n_prime})"
        )
    return complex(center) / value


def _finish(A, y, ula, paths, H_V_hat, history, iterations, offsets=(), early=False):
    if not history:
        history = [float(np.linalg.norm(y))]
    return EstimateResult(
        paths=list(paths),
        H_V_hat=H_V_hat,
        H_hat=from_beamspace(H_V_hat, ula),
        residual_history=list(history),
        iterations=iterations,
        offsets=list(offsets),
        early_stopped=early,
    )


def omp_standard(y, A, ula: UlaConfig, config: EstimatorConfig = EstimatorConfig()) -> EstimateResult:
    """Orthogonal matching pursuit on the DFT grid."""
    M, N = _grid_shape(A, ula)
    y = np.asarray(y, dtype=complex)
    max_iter = min(config.max_paths * config.omp_iteration_factor, A.shape[0], M * N)
    support = []
    coef = np.zeros(0, dtype=complex)
    y_res = y.copy()
    history = [float(np.linalg.norm(y_res))]
    while history[-1] > config.residual_tolerance and len(support) < max_iter:
        j, _, _ = match_step(A, y_res, ula, config.normalize_columns)
        if j - 1 in support:
            break
        support.append(j - 1)
        sub = A[:, support]
        coef, _, rank, _ = np.linalg.lstsq(sub, y, rcond=None)
        if rank < len(support):
            raise SingularityError(f"rank-deficient OMP support at iteration {len(support)}", len(support))
        y_res = y - sub @ coef
        history.append(float(np.linalg.norm(y_res)))

    x = np.zeros(M * N, dtype=complex)
    x[support] = coef
    H_V_hat = x.reshape((N, M), order="F")
    paths = [VirtualPeak(float(j // N + 1), float(j % N + 1), complex(c)) for j, c in zip(support, coef)]
    return _finish(A, y, ula, paths, H_V_hat, history, len(support))


class _AtomImager:
    """Images ``A vec(atom)`` of Dirichlet atoms under a fixed sensing matrix."""

    def __init__(self, A, ula: UlaConfig, normalize: bool = False):
        self.M, self.N = ula.M, ula.N
        self.ula = ula
        self.A = A
        self.normalize = normalize
        self._norms = None
        self._pinv = {}
        self._fine = None
        # column j = (m-1)*N + (n-1)  ->  A3[:, m-1, n-1]
        self.A3 = np.asarray(A).reshape(A.shape[0], self.M, self.N)
        self.m_idx = np.arange(1, self.M + 1)
        self.n_idx = np.arange(1, self.N + 1)
        # a unit factor is a DFT of a steering vector:
        # ue(n) = mean_k exp(-2j pi k (n - n*) / N), bs is its conjugate form
        km, kn = np.arange(self.M), np.arange(self.N)
        self._km, self._kn = km, kn
        self._wm = -2j * np.pi * km / self.M
        self._wn = 2j * np.pi * kn / self.N
        self._Dbs = np.exp(2j * np.pi * np.outer(self.m_idx, km) / self.M) / self.M
        self._Due = np.exp(-2j * np.pi * np.outer(self.n_idx, kn) / self.N) / self.N
        self._B = self.A3 @ self._Due  # (P, M, N) image basis on the UE side

    def _steer(self, coords, k, size, sign):
        return np.exp(sign * 2j * np.pi * np.multiply.outer(np.asarray(coords, dtype=float), k) / size)

    def correlation(self, source):
        corr = np.abs(self.A.conj().T @ source)
        if self.normalize:
            if self._norms is None:
                norms = np.linalg.norm(self.A, axis=0)
                self._norms = np.where(norms > 0, norms, np.inf)
            corr = corr / self._norms
        return corr

    def screen(self, source, count):
        """The ``count`` cells nearest to the atoms best matching ``source``, with their powers.

        Atoms sit on a grid twice as fine as the DFT grid, so a path halfway
        between two cells is matched as well as one on a cell. Scores are
        squared normalized correlations; each atom votes for its nearest cell.
        """
        if self._fine is None:
            m_c = 1.0 + np.arange(2 * self.M) / 2.0
            n_c = 1.0 + np.arange(2 * self.N) / 2.0
            imgs = self.grid_images(m_c, n_c).reshape(self.A.shape[0], -1)
            norms = np.linalg.norm(imgs, axis=0)
            self._fine = (imgs / np.where(norms > 0, norms, np.inf)).conj().T
        score = np.abs(self._fine @ source).reshape(2 * self.M, 2 * self.N) ** 2
        # fine points 2c - 1 and 2c (0-based, periodic) are nearest to cell c
        score = np.maximum(score, np.roll(score, 1, axis=0))[0::2]
        score = np.maximum(score, np.roll(score, 1, axis=1))[:, 0::2]
        score = score.ravel()
        order = np.argsort(-score, kind="stable")[:count]
        return [((int(j) // self.N + 1, int(j) % self.N + 1), float(score[j])) for j in order]

    def neighborhood(self, anchor, iteration=None):
        """Cells, columns and pseudo-inverse of the five-cell LS at ``anchor`` (cached)."""
        hit = self._pinv.get(anchor)
        if hit is None:
            cells = neighborhood_cells(*anchor, self.ula)
            cols = [_column(c, self.N) for c in cells.values()]
            sub = _neighborhood_matrix(self.A, cols, anchor, self.ula, iteration)
            hit = self._pinv[anchor] = (cells, cols, np.linalg.pinv(sub))
        return hit

    def factors(self, m_star, n_star):
        v = self._Dbs @ np.exp(float(m_star) * self._wm)
        u = self._Due @ np.exp(float(n_star) * self._wn)
        return v, u

    def unit_image(self, m_star, n_star):
        return (self._B @ np.exp(float(n_star) * self._wn)) @ (self._Dbs @ np.exp(float(m_star) * self._wm))

    def image_gradients(self, m_star, n_star):
        """Unit-atom image and its derivatives with respect to ``m*`` and ``n*``."""
        sm = self._steer(m_star, self._km, self.M, -1.0)
        sn = self._steer(n_star, self._kn, self.N, 1.0)
        v, dv = self._Dbs @ sm, self._Dbs @ (sm * (-2j * np.pi * self._km / self.M))
        t = self._B @ sn
        dt = self._B @ (sn * (2j * np.pi * self._kn / self.N))
        return t @ v, t @ dv, dt @ v

    def grid_images(self, m_coords, n_coords):
        """Unit-atom images for every pair on a grid, shape ``(P, len(m), len(n))``."""
        V = self._steer(m_coords, self._km, self.M, -1.0) @ self._Dbs.T  # (Gm, M)
        T = self._B @ self._steer(n_coords, self._kn, self.N, 1.0).T  # (P, M, Gn)
        return V @ T  # (P, Gm, Gn)


@dataclass
class _Path:
    anchor: tuple
    m_star: float
    n_star: float
    alpha: complex
    image: np.ndarray
    offset: tuple = (0.0, 0.0)

    def peak(self, ula):
        return VirtualPeak(self.m_star, self.n_star, self.alpha).wrapped(ula)


def _three_point(kind, c, p, m, size):
    if kind == "mlb":
        return mlb_offset(c, p, m)
    try:
        return mslb_offset(c, p, m, size)
    except DegenerateInputError:
        return mlb_offset(c, p, m)


def _lobe_fit(kind, imager, target, anchor, iteration=None):
    """Peak location, centre-cell estimate and offsets from the five-cell LS on ``target``."""
    ula = imager.ula
    m_p, n_p = anchor
    cells, _, pinv = imager.neighborhood(anchor, iteration)
    est = dict(zip(cells, pinv @ target))
    dm = _three_point(kind, est["center"], est["m+"], est["m-"], ula.M)
    dn = _three_point(kind, est["center"], est["n+"], est["n-"], ula.N)
    return m_p + dm, n_p + dn, est["center"], (dm, dn)


def _leakage_image(imager, path):
    """Image of ``path``'s atom with its five neighbourhood cells zeroed."""
    cells, cols, _ = imager.neighborhood(path.anchor)
    m = np.array([c[0] for c in cells.values()])
    n = np.array([c[1] for c in cells.values()])
    v, u = imager.factors(path.m_star, path.n_star)
    inside = path.alpha * v[m - 1] * u[n - 1]
    return path.image - imager.A[:, cols] @ inside


def _reanchored(path, ula):
    m_c = int(np.floor(wrap_coordinate(path.m_star, ula.M) + 0.5))
    n_c = int(np.floor(wrap_coordinate(path.n_star, ula.N) + 0.5))
    anchor = ((m_c - 1) % ula.M + 1, (n_c - 1) % ula.N + 1)
    if anchor == path.anchor:
        return path
    # shift the peak by whole periods so it sits next to the new anchor
    m_star = anchor[0] + (path.m_star - anchor[0] + ula.M / 2) % ula.M - ula.M / 2
    n_star = anchor[1] + (path.n_star - anchor[1] + ula.N / 2) % ula.N - ula.N / 2
    return _Path(anchor, m_star, n_star, path.alpha, path.image, path.offset)


def _wrapped_coords(path, ula):
    return wrap_coordinate(path.m_star, ula.M), wrap_coordinate(path.n_star, ula.N)


def _golden_max(f, lo, hi, iters):
    """Golden-section search for the maximum of a unimodal ``f`` on ``[lo, hi]``."""
    a, b = lo, hi
    x1 = b - _INV_PHI * (b - a)
    x2 = a + _INV_PHI * (b - a)
    f1, f2 = f(x1), f(x2)
    best_x, best_f = (x1, f1) if f1 >= f2 else (x2, f2)
    for _ in range(iters):
        if b - a < _GOLDEN_TOL:
            break
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INV_PHI * (b - a)
            f1 = f(x1)
            if f1 > best_f:
                best_x, best_f = x1, f1
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INV_PHI * (b - a)
            f2 = f(x2)
            if f2 > best_f:
                best_x, best_f = x2, f2
    return best_x, best_f


class _LocalFit:
    """Single-path fit ``min_{alpha, m*, n*} ||target - alpha A vec(atom(m*, n*))||``.

    For a fixed location the optimal ``alpha`` is the projection of the target
    on the atom image, so only the location is searched and the objective is
    the captured energy ``|img^H target|^2 / ||img||^2``.
    """

    def __init__(self, imager: _AtomImager, target, config: EstimatorConfig):
        self.imager = imager
        self.target = target
        self.config = config

    def score(self, m_star, n_star):
        return _captured(self.imager.unit_image(m_star, n_star), self.target)

    def alpha(self, m_star, n_star):
        img = self.imager.unit_image(m_star, n_star)
        return np.vdot(img, self.target) / np.vdot(img, img).real, img

    def _grid_scores(self, m_coords, n_coords):
        """Captured energy on the tensor grid ``m_coords x n_coords``."""
        im = self.imager
        V = im._steer(m_coords, im._km, im.M, -1.0) @ im._Dbs.T  # (Gm, M)
        P = im.A3.shape[0]
        S = im._steer(n_coords, im._kn, im.N, 1.0)  # (Gn, N)
        T = (im._B.reshape(P * im.M, im.N) @ S.T).reshape(P, im.M, -1)  # (P, M, Gn)
        # numerator: y^H img = sum_m V[a, m] (y^H T)[m, b]
        num = np.abs(V @ (self.target.conj() @ T.reshape(P, -1)).reshape(im.M, -1)) ** 2
        # denominator: v_a^T G_b conj(v_a) with G_b = T[:, :, b]^T conj(T[:, :, b])
        Tb = np.ascontiguousarray(T.transpose(2, 0, 1))  # (Gn, P, M)
        G = Tb.transpose(0, 2, 1) @ Tb.conj()  # (Gn, M, M)
        X = V[None, :, :] @ G  # (Gn, Gm, M)
        den = np.einsum("bak,ak->ab", X, V.conj(), optimize=True).real
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    def coarse(self, anchor, stride=5):
        """Best point of the ``lo_grid_step`` lattice over the 2x2-cell box.

        The lattice is scanned at ``stride`` times the step first and then at
        full resolution around the best coarse point. The objective is smooth
        on the scale of a cell, so this finds the same lattice point as an
        exhaustive scan at a fraction of the cost; ``stride=1`` is exhaustive.
        """
        step = self.config.lo_grid_step
        count = int(round(2.0 / step))
        offsets = np.linspace(-1.0, 1.0, count + 1)
        stride = max(1, min(int(stride), count // 4))
        if stride == 1:
            rows, cols = np.arange(count + 1), np.arange(count + 1)
        else:
            coarse = np.arange(0, count + 1, stride)
            score = self._grid_scores(anchor[0] + offsets[coarse], anchor[1] + offsets[coarse])
            a, b = np.unravel_index(int(np.argmax(score)), score.shape)
            rows = np.arange(max(coarse[a] - stride, 0), min(coarse[a] + stride, count) + 1)
            cols = np.arange(max(coarse[b] - stride, 0), min(coarse[b] + stride, count) + 1)
        score = self._grid_scores(anchor[0] + offsets[rows], anchor[1] + offsets[cols])
        a, b = np.unravel_index(int(np.argmax(score)), score.shape)
        return float(anchor[0] + offsets[rows[a]]), float(anchor[1] + offsets[cols[b]]), float(score[a, b])

    def _line(self, fixed_factor, axis, lo, hi):
        """Golden-section search along one coordinate with the other held fixed."""
        im = self.imager
        if axis == "m":
            partial = im.A3 @ fixed_factor  # (P, M)
            idx, size, factor, sign = im.m_idx, im.M, bs_factor, 1.0
        else:
            partial = np.tensordot(im.A3, fixed_factor, axes=(1, 0))  # (P, N)
            idx, size, factor, sign = im.n_idx, im.N, ue_factor, -1.0
        # Along a line sin(pi (k - t)) = (-1)^(k+1) sin(pi t) and the captured
        # energy ignores scale and phase, so only the denominator varies.
        pattern = (-1.0) ** (idx + 1) * np.exp(sign * 1j * np.pi * idx * (size - 1) / size)
        target = self.target

        def f(t):
            den = np.sin(np.pi * (idx - t) / size)
            if np.abs(den).min() < 1e-6:
                return _captured(partial @ factor(idx, t, size), target)
            return _captured(partial @ (pattern / den), target)

        return _golden_max(f, lo, hi, self.config.lo_refine_iters)

    def refine(self, anchor, m_star, n_star, half_width, max_sweeps=10):
        """Coordinate-wise golden-section ascent within the 2x2-cell box."""
        im = self.imager
        lo_m, hi_m = anchor[0] - 1.0, anchor[0] + 1.0
        lo_n, hi_n = anchor[1] - 1.0, anchor[1] + 1.0
        best = self.score(m_star, n_star)
        for _ in range(max_sweeps):
            prev = best
            m_new, s_m = self._line(
                ue_factor(im.n_idx, n_star, im.N), "m",
                max(lo_m, m_star - half_width), min(hi_m, m_star + half_width),
            )
            if s_m > best:
                m_star, best = m_new, s_m
            n_new, s_n = self._line(
                bs_factor(im.m_idx, m_star, im.M), "n",
                max(lo_n, n_star - half_width), min(hi_n, n_star + half_width),
            )
            if s_n > best:
                n_star, best = n_new, s_n
            if best - prev <= 1e-12 * best:
                break
        return m_star, n_star, best


    def _stencil(self, m_star, n_star, h):
        imgs = self.imager.grid_images([m_star - h, m_star, m_star + h], [n_star - h, n_star, n_star + h])
        num = np.abs(np.tensordot(self.target.conj(), imgs, axes=(0, 0))) ** 2
        den = np.einsum("pab,pab->ab", imgs, imgs.conj()).real
        return num / den

    def polish(self, anchor, m_star, n_star, max_iter=30):
        """Damped Newton ascent from a nearby start, derivatives from a 3x3 stencil.

        Converges quadratically once close, which makes repeated refits of a
        path that has only moved slightly much cheaper than line searches.
        """
        lo = np.array([anchor[0] - 1.0, anchor[1] - 1.0])
        hi = lo + 2.0
        x = np.clip([m_star, n_star], lo, hi)
        best = self.score(*x)
        h = 1e-3
        for _ in range(max_iter):
            s = self._stencil(x[0], x[1], h)
            g = np.array([s[2, 1] - s[0, 1], s[1, 2] - s[1, 0]]) / (2 * h)
            H = np.array([
                [s[2, 1] - 2 * s[1, 1] + s[0, 1], (s[2, 2] - s[2, 0] - s[0, 2] + s[0, 0]) / 4],
                [0.0, s[1, 2] - 2 * s[1, 1] + s[1, 0]],
            ]) / h ** 2
            H[1, 0] = H[0, 1]
            if H[0, 0] < 0 and np.linalg.det(H) > 0:
                step = -np.linalg.solve(H, g)
            else:
                # not concave here: move to the best stencil point instead
                a, b = np.unravel_index(int(np.argmax(s)), s.shape)
                step = np.array([(a - 1) * h, (b - 1) * h])
            step *= min(1.0, 0.1 / max(np.abs(step).max(), 1e-300))
            improved = False
            for _ in range(6):
                trial = np.clip(x + step, lo, hi)
                val = self.score(*trial)
                if val > best:
                    improved = True
                    break
                step /= 2
            if not improved:
                break
            moved = float(np.abs(trial - x).max())
            x, best = trial, val
            if moved < 1e-11:
                break
            h = min(1e-3, max(moved, 1e-5))
        return float(x[0]), float(x[1]), best


def _captured(img, target):
    den = float(np.vdot(img, img).real)
    if den <= 0:
        return 0.0
    return abs(np.vdot(img, target)) ** 2 / den


def _candidate_seeds(imager, sources, target, k, exclude):
    """Best seed among the ``k`` cells :meth:`_AtomImager.screen` ranks highest for each source.

    Each cell is scored by the power a three-sample peak fit captures from
    ``target``; the winner per source comes back as a provisional path for
    ``refit``, paired with its score. A cell nominated by several sources is
    fitted once and returned once.
    """
    fitted = {}
    winners = []
    for source in sources:
        best, best_score = None, 0.0
        for anchor, _ in imager.screen(source, k + 1):
            if anchor == exclude:
                continue
            if anchor not in fitted:
                fitted[anchor] = _seed_at(imager, target, anchor)
            seed, score = fitted[anchor]
            if score > best_score:
                best, best_score = seed, score
        if best is not None and all(best is not w for w, _ in winners):
            winners.append((best, best_score))
    return winners


def _seed_at(imager, target, anchor):
    try:
        m_star, n_star, _, off = _lobe_fit("mslb", imager, target, anchor)
    except (DegenerateInputError, SingularityError):
        return None, 0.0
    img = imager.unit_image(m_star, n_star)
    den = np.vdot(img, img).real
    if den <= 0:
        return None, 0.0
    proj = np.vdot(img, target)
    alpha = proj / den
    return _Path(anchor, m_star, n_star, complex(alpha), alpha * img, off), abs(proj) ** 2 / den


def _joint_strengths(imager, paths, y_res):
    """Re-solve all strengths jointly by least squares with locations fixed.

    Keeps the new strengths only if the residual shrinks.
    """
    if not paths:
        return y_res
    images = np.column_stack([imager.unit_image(p.m_star, p.n_star) for p in paths])
    fitted = y_res + sum(p.image for p in paths)
    coef, *_ = np.linalg.lstsq(images, fitted, rcond=None)
    candidate = fitted - images @ coef
    if np.linalg.norm(candidate) >= np.linalg.norm(y_res):
        return y_res
    for i, p in enumerate(paths):
        paths[i] = _Path(p.anchor, p.m_star, p.n_star, complex(coef[i]), coef[i] * images[:, i], p.offset)
    return candidate


def _joint_gauss_newton(imager, paths, y_res, tolerance, max_iter=20, max_move=0.1):
    """Refine all locations and strengths together by damped Gauss-Newton.

    Cyclic refits converge only linearly when paths overlap; a joint step on
    ``||y - sum_i alpha_i img(m_i, n_i)||`` converges quadratically near the
    optimum. Steps that do not shrink the residual are halved, and the loop
    ends when the relative gain drops below the back-fitting tolerance.
    """
    if not paths:
        return y_res
    ula = imager.ula
    y = y_res + sum(p.image for p in paths)
    K = len(paths)
    alpha = np.array([p.alpha for p in paths])
    loc = np.array([[p.m_star, p.n_star] for p in paths])
    norm = float(np.linalg.norm(y_res))
    moved = False
    for _ in range(max_iter):
        if norm <= tolerance:
            break
        parts = [imager.image_gradients(m, n) for m, n in loc]
        g = np.column_stack([q[0] for q in parts])
        jac = np.column_stack([g, alpha * np.column_stack([q[1] for q in parts]),
                               alpha * np.column_stack([q[2] for q in parts])])
        # real parameters: Re alpha, Im alpha, m*, n*
        real = np.vstack([
            np.hstack([jac.real[:, :K], -jac.imag[:, :K], jac.real[:, K:]]),
            np.hstack([jac.imag[:, :K], jac.real[:, :K], jac.imag[:, K:]]),
        ])
        r = y - g @ alpha
        delta, *_ = np.linalg.lstsq(real, np.concatenate([r.real, r.imag]), rcond=None)
        d_loc = np.column_stack([delta[2 * K:3 * K], delta[3 * K:]])
        scale = min(1.0, max_move / max(np.abs(d_loc).max(), 1e-300))
        accepted = False
        for _ in range(6):
            new_loc = loc + scale * d_loc
            imgs = np.column_stack([imager.unit_image(m, n) for m, n in new_loc])
            # the strength part of the step is superseded by an exact
            # projection at the trial locations
            new_alpha, *_ = np.linalg.lstsq(imgs, y, rcond=None)
            trial = y - imgs @ new_alpha
            trial_norm = float(np.linalg.norm(trial))
            if trial_norm < norm:
                accepted = True
                break
            scale /= 2
        if not accepted:
            break
        gain = norm - trial_norm
        moved = True
        loc, alpha, y_res, norm, kept = new_loc, new_alpha, trial, trial_norm, imgs
        if gain <= _BACKFIT_RTOL * (norm + gain):
            break
    if moved:
        for i, p in enumerate(paths):
            new = _reanchored(_Path(p.anchor, float(loc[i, 0]), float(loc[i, 1]), complex(alpha[i]),
                                    alpha[i] * kept[:, i]), ula)
            new.offset = (new.m_star - new.anchor[0], new.n_star - new.anchor[1])
            paths[i] = new
    return y_res


def _backfit(imager, paths, y_res, refit, passes, history, candidates, tolerance, joint=False):
    """Cyclically re-estimate each path against the residual with the others removed.

    Each path is refit in place and, when ``candidates > 0``, also compared
    with fresh seeds from the cells :meth:`_AtomImager.screen` ranks highest
    for both its own target and the current residual (on the first pass and
    whenever a pass removes less than half of the residual). A path is
    replaced only when the residual norm strictly decreases, so the history
    stays non-increasing. Each pass ends with a joint least-squares update of
    the strengths or, with ``joint``, a joint Gauss-Newton refinement of
    every path; the joint step then stands in for the per-path refit.
    """
    reselect = candidates > 0
    for _ in range(passes):
        start = float(np.linalg.norm(y_res))
        if start <= tolerance:
            break
        for i, path in enumerate(paths):
            target = y_res + path.image
            # with a joint step to follow, only fresh seeds need a local fit
            options = [] if joint else [refit(imager, target, path)]
            if reselect:
                held = float(np.vdot(target, target).real - np.vdot(y_res, y_res).real)
                for seed, score in _candidate_seeds(imager, (target, y_res), target, candidates, path.anchor):
                    if score >= _SEED_RATIO * held:
                        options.append(refit(imager, target, seed))
            for new in options:
                if new is None:
                    continue
                candidate = target - new.image
                if np.linalg.norm(candidate) < np.linalg.norm(y_res):
                    paths[i] = new
                    y_res = candidate
        if joint:
            y_res = _joint_gauss_newton(imager, paths, y_res, tolerance)
        else:
            y_res = _joint_strengths(imager, paths, y_res)
        history.append(float(np.linalg.norm(y_res)))
        if start - history[-1] <= _BACKFIT_RTOL * start:
            break
        # look elsewhere on the grid only when local refits stall
        reselect = candidates > 0 and history[-1] > _STALL_RATIO * start
    return y_res


def _greedy_domp(y, A, ula, config, locate, refit, joint=False):
    """Shared greedy loop: match, locate one peak, subtract its atom, repeat.

    An atom whose subtraction would increase the residual is rejected and
    the loop stops with ``early_stopped`` set.
    """
    _grid_shape(A, ula)
    y = np.asarray(y, dtype=complex)
    imager = _AtomImager(np.asarray(A), ula, config.normalize_columns)
    y_res = y.copy()
    history = [float(np.linalg.norm(y_res))]
    paths: list[_Path] = []
    early = False
    backfit = config.refine_passes > 0
    while history[-1] > config.residual_tolerance and len(paths) < config.max_paths:
        iteration = len(paths) + 1
        _, m_p, n_p = match_step(A, y_res, ula, config.normalize_columns)
        path = locate(imager, y_res, (m_p, n_p), iteration)
        candidate = y_res - path.image
        norm = float(np.linalg.norm(candidate))
        if norm > history[-1]:
            early = True
            break
        paths.append(path)
        y_res = candidate
        history.append(norm)
        if backfit and config.backfit_per_iteration:
            y_res = _backfit(imager, paths, y_res, refit, config.backfit_per_iteration,
                             history, config.reselect_candidates, config.residual_tolerance, joint)

    if paths and backfit:
        y_res = _backfit(imager, paths, y_res, refit, config.refine_passes,
                         history, config.reselect_candidates, config.residual_tolerance, joint)

    H_V_hat = np.zeros((ula.N, ula.M), dtype=complex)
    for p in paths:
        H_V_hat += dirichlet_atom(*_wrapped_coords(p, ula), p.alpha, ula)
    # offsets are reported from the nearest cell
    nearest = [_reanchored(p, ula) for p in paths]
    return _finish(
        A, y, ula,
        [p.peak(ula) for p in paths],
        H_V_hat, history, len(paths),
        offsets=[(p.m_star - p.anchor[0], p.n_star - p.anchor[1]) for p in nearest],
        early=early,
    )


def _lobe_path(imager, anchor, fitted, target, rule):
    m_star, n_star, center, off = fitted
    u = imager.unit_image(m_star, n_star)
    if rule == "projection":
        alpha = np.vdot(u, target) / np.vdot(u, u).real
    else:
        alpha = peak_strength(center, anchor[0], anchor[1], m_star, n_star, imager.ula)
    return _Path(anchor, m_star, n_star, complex(alpha), alpha * u, off)


def _moved(a, b):
    return abs(a.m_star - b.m_star) + abs(a.n_star - b.n_star)


def _make_lobe_estimator(kind, config):
    def locate(imager, y_res, anchor, iteration):
        fitted = _lobe_fit(kind, imager, y_res, anchor, iteration)
        return _lobe_path(imager, anchor, fitted, y_res, config.strength)

    def step(imager, target, path):
        # strip the path's own leakage outside the five cells before the LS
        compensated = target - _leakage_image(imager, path)
        fitted = _lobe_fit(kind, imager, compensated, path.anchor)
        return _lobe_path(imager, path.anchor, fitted, target, config.strength)

    def refit(imager, target, path):
        # the leakage depends on the fit, so iterate towards a fixed point
        path = _reanchored(path, imager.ula)
        try:
            for _ in range(_LEAKAGE_ITERS):
                prev, path = path, step(imager, target, path)
                if _moved(prev, path) < 1e-12:
                    break
        except (DegenerateInputError, SingularityError):
            return None
        return path

    return locate, refit


def domp_mlb(y, A, ula: UlaConfig, config: EstimatorConfig = EstimatorConfig()) -> EstimateResult:
    """Dirichlet OMP with main-lobe peak interpolation."""
    locate, refit = _make_lobe_estimator("mlb", config)
    return _greedy_domp(y, A, ula, config, locate, refit)


def domp_mslb(y, A, ula: UlaConfig, config: EstimatorConfig = EstimatorConfig()) -> EstimateResult:
    """Dirichlet OMP with main- and side-lobe (three-sample) interpolation.

    Falls back to the main-lobe rule when the three-sample denominator
    vanishes.
    """
    locate, refit = _make_lobe_estimator("mslb", config)
    return _greedy_domp(y, A, ula, config, locate, refit)


def domp_lo(y, A, ula: UlaConfig, config: EstimatorConfig = EstimatorConfig()) -> EstimateResult:
    """Dirichlet OMP with a localized fit over the 2x2-cell box around each match.

    For a fixed location the best strength is the closed-form projection of
    the target onto the atom image, so only ``(m*, n*)`` is searched: a coarse
    grid at ``lo_grid_step`` followed by coordinate-wise golden-section
    refinement, finished by a Gauss-Newton step on the residual. Back-fitting
    polishes fresh seeds by Newton ascent and closes each pass with a joint
    Gauss-Newton step over all paths.
    """

    def locate(imager, y_res, anchor, iteration):
        fit = _LocalFit(imager, y_res, config)
        m0, n0, _ = fit.coarse(anchor)
        m_star, n_star, _ = fit.refine(anchor, m0, n0, config.lo_grid_step)
        alpha, img = fit.alpha(m_star, n_star)
        path = _Path(anchor, m_star, n_star, complex(alpha), alpha * img,
                     (m_star - anchor[0], n_star - anchor[1]))
        # the captured power is flat at its peak, which limits the line
        # searches to ~sqrt(eps); a residual-based step reaches ~eps
        paths = [path]
        _joint_gauss_newton(imager, paths, y_res - path.image, 0.0, max_iter=3)
        return paths[0]

    def refit(imager, target, path):
        path = _reanchored(path, imager.ula)
        fit = _LocalFit(imager, target, config)
        m_star, n_star, _ = fit.polish(path.anchor, path.m_star, path.n_star)
        alpha, img = fit.alpha(m_star, n_star)
        return _Path(path.anchor, m_star, n_star, complex(alpha), alpha * img,
                     (m_star - path.anchor[0], n_star - path.anchor[1]))

    return _greedy_domp(y, A, ula, config, locate, refit, joint=True)


ESTIMATORS = {
    "omp": omp_standard,
    "domp-mlb": domp_mlb,
    "domp-mslb": domp_mslb,
    "domp-lo": domp_lo,
}
