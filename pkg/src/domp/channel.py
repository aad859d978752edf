"""Physical and beamspace (virtual) channel models for a pair of ULAs.

Conventions used throughout the package:

* The channel matrix ``H`` is ``N x M`` (UE antennas by BS antennas).
* The beamspace matrix ``H_V = A_UE^H H A_BS`` is also ``N x M``. Its row
  index is the virtual AoA cell ``n'`` and its column index the virtual AoD
  cell ``m'``. Both are 1-based in the public API.
* Continuous peak coordinates ``(m*, n*)`` live on the periodic ranges
  ``[1, M + 1)`` and ``[1, N + 1)``.

A path with spatial frequency ``nu = d * sin(angle)`` (cycles per element)
lands on the continuous virtual coordinate::

    k* = 1 + K * (nu + 1/2)        (mod K)

because dictionary column ``k'`` steers to ``nu = (k' - 1) / K - 1/2``. With
half-wavelength spacing this is ``1 + K * (1 + sin(angle)) / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from domp.errors import DomainError

# Below this |sin(pi x)| the Dirichlet ratio switches to its L'Hopital limit.
_SINGULAR_TOL = 1e-9


@dataclass(frozen=True)
class UlaConfig:
    """Antenna counts, grid sizes and element spacing for both link ends."""

    num_bs_antennas: int
    num_ue_antennas: int
    element_spacing: float = 0.5
    grid_bs: int | None = None
    grid_ue: int | None = None

    def __post_init__(self):
        if int(self.num_bs_antennas) < 1 or int(self.num_ue_antennas) < 1:
            raise DomainError("antenna counts must be positive")
        if not self.element_spacing > 0:
            raise DomainError("element spacing must be positive")
        if self.grid_bs is None:
            object.__setattr__(self, "grid_bs", self.num_bs_antennas)
        if self.grid_ue is None:
            object.__setattr__(self, "grid_ue", self.num_ue_antennas)
        if self.grid_bs != self.num_bs_antennas or self.grid_ue != self.num_ue_antennas:
            raise DomainError("only square dictionaries (grid size == antenna count) are supported")

    @property
    def M(self) -> int:
        return self.num_bs_antennas

    @property
    def N(self) -> int:
        return self.num_ue_antennas


@dataclass(frozen=True)
class MultipathComponent:
    """One propagation path: complex gain, AoD at the BS and AoA at the UE."""

    gain: complex
    aod: float
    aoa: float

    def __post_init__(self):
        _check_angle(self.aod, "aod")
        _check_angle(self.aoa, "aoa")


@dataclass(frozen=True)
class PhysicalChannel:
    paths: tuple
    matrix: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class VirtualPeak:
    """Continuous location and strength of one Dirichlet peak.

    Coordinates are reduced into ``[1, M + 1)`` and ``[1, N + 1)`` by
    :meth:`wrapped`; the virtual domain is periodic so any representative
    describes the same atom.
    """

    m_star: float
    n_star: float
    strength: complex

    def wrapped(self, config: UlaConfig) -> VirtualPeak:
        return VirtualPeak(
            wrap_coordinate(self.m_star, config.M),
            wrap_coordinate(self.n_star, config.N),
            self.strength,
        )


def _check_angle(angle, name="angle"):
    a = np.asarray(angle, dtype=float)
    if not np.all(np.isfinite(a)) or np.any(np.abs(a) > np.pi / 2 + 1e-12):
        raise DomainError(f"{name} must lie in [-pi/2, pi/2], got {angle!r}")


def wrap_coordinate(coord, size):
    """Reduce a 1-based periodic coordinate into ``[1, size + 1)``."""
    wrapped = np.mod(np.asarray(coord, dtype=float) - 1.0, size) + 1.0
    # mod can round up to exactly `size` for tiny negative inputs
    wrapped = np.where(wrapped >= size + 1.0, 1.0, wrapped)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def _array_response(num, spacing, angle):
    _check_angle(angle)
    k = np.arange(num)
    return np.exp(2j * np.pi * spacing * k * np.sin(angle)) / np.sqrt(num)


def array_response_bs(config: UlaConfig, phi: float) -> np.ndarray:
    """Normalized BS steering vector for departure angle ``phi`` (radians)."""
    return _array_response(config.M, config.element_spacing, phi)


def array_response_ue(config: UlaConfig, theta: float) -> np.ndarray:
    """Normalized UE steering vector for arrival angle ``theta`` (radians)."""
    return _array_response(config.N, config.element_spacing, theta)


def build_channel(config: UlaConfig, paths) -> PhysicalChannel:
    """Sum of rank-one path contributions ``alpha * a_UE(theta) a_BS(phi)^H``."""
    paths = tuple(paths)
    if not paths:
        raise DomainError("a channel needs at least one path")
    H = np.zeros((config.N, config.M), dtype=complex)
    for p in paths:
        a_ue = array_response_ue(config, p.aoa)
        a_bs = array_response_bs(config, p.aod)
        H += complex(p.gain) * np.outer(a_ue, a_bs.conj())
    return PhysicalChannel(paths, H)


@lru_cache(maxsize=32)
def _dft_dictionary_cached(size):
    k = np.arange(size)[:, None]
    kp = np.arange(size)[None, :]
    A = np.exp(2j * np.pi * k * (kp / size - 0.5)) / np.sqrt(size)
    A.setflags(write=False)
    return A


def dft_dictionary(size: int) -> np.ndarray:
    """Unitary dictionary whose column ``k'`` steers to ``nu = (k'-1)/K - 1/2``.

    The returned array is cached and read-only.
    """
    if int(size) != size or size < 1:
        raise DomainError(f"dictionary size must be a positive integer, got {size!r}")
    return _dft_dictionary_cached(int(size))


def to_beamspace(H, config: UlaConfig) -> np.ndarray:
    """Beamspace matrix ``A_UE^H H A_BS`` (``N x M``)."""
    H = H.matrix if isinstance(H, PhysicalChannel) else np.asarray(H)
    if H.shape != (config.N, config.M):
        raise DomainError(f"channel shape {H.shape} does not match (N, M) = ({config.N}, {config.M})")
    return dft_dictionary(config.N).conj().T @ H @ dft_dictionary(config.M)


def from_beamspace(H_V, config: UlaConfig) -> np.ndarray:
    """Inverse of :func:`to_beamspace`."""
    H_V = np.asarray(H_V)
    if H_V.shape != (config.N, config.M):
        raise DomainError(f"beamspace shape {H_V.shape} does not match (N, M) = ({config.N}, {config.M})")
    return dft_dictionary(config.N) @ H_V @ dft_dictionary(config.M).conj().T


def dirichlet_ratio(x, size):
    """``sin(pi x size) / sin(pi x)`` with the removable singularities filled in.

    ``x`` is first reduced to ``r = x - k`` with ``k`` the nearest integer,
    which is exact in floating point and keeps full relative precision near
    integers: the ratio is ``(-1)^(k (size - 1)) sin(pi r size) / sin(pi r)``,
    and ``+-size`` at integer ``x``.
    """
    x = np.asarray(x, dtype=float)
    k = np.round(x)
    r = x - k
    sign = np.where(np.mod(k * (size - 1), 2) == 0, 1.0, -1.0)
    den = np.sin(np.pi * r)
    singular = np.abs(den) < _SINGULAR_TOL
    out = sign * np.where(singular, float(size), np.sin(np.pi * r * size) / np.where(singular, 1.0, den))
    return float(out) if out.ndim == 0 else out


def dirichlet_kernel(varphi, vartheta, M: int, N: int):
    """Normalized 2-D Dirichlet kernel; equals 1 at the origin."""
    return dirichlet_ratio(varphi, M) * dirichlet_ratio(vartheta, N) / (M * N)


def angle_to_peak(angle: float, size: int, spacing: float = 0.5) -> float:
    """Continuous 1-based virtual coordinate of a physical angle."""
    _check_angle(angle)
    nu = spacing * np.sin(angle)
    return wrap_coordinate(1.0 + size * (nu + 0.5), size)


def peak_to_angle(coord: float, size: int, spacing: float = 0.5) -> float:
    """Physical angle for a continuous virtual coordinate (inverse of :func:`angle_to_peak`).

    Raises :class:`DomainError` when the implied ``sin`` falls outside
    ``[-1, 1]``, which can only happen for spacings below half a wavelength.
    """
    nu = (wrap_coordinate(coord, size) - 1.0) / size - 0.5
    s = nu / spacing
    if abs(s) > 1 + 1e-12:
        raise DomainError(f"coordinate {coord} is not visible for spacing {spacing}")
    return float(np.arcsin(np.clip(s, -1.0, 1.0)))


def ue_factor(n, n_star, N):
    """UE-side (row) factor of a unit Dirichlet atom at integer rows ``n``."""
    x = np.asarray(n, dtype=float) - n_star
    return dirichlet_ratio(x / N, N) / N * np.exp(-1j * np.pi * x * (N - 1) / N)


def bs_factor(m, m_star, M):
    """BS-side (column) factor of a unit Dirichlet atom at integer columns ``m``.

    This is the conjugate of the UE form: the BS response enters the
    beamspace matrix through ``a_BS^H``.
    """
    x = np.asarray(m, dtype=float) - m_star
    return dirichlet_ratio(x / M, M) / M * np.exp(1j * np.pi * x * (M - 1) / M)


def _check_peak(m_star, n_star, config):
    if not (1.0 <= m_star < config.M + 1) or not (1.0 <= n_star < config.N + 1):
        raise DomainError(
            f"peak ({m_star}, {n_star}) outside [1, {config.M + 1}) x [1, {config.N + 1})"
        )


def dtft_spectrum(paths, config: UlaConfig, m_star, n_star):
    """Continuous beamspace spectrum of ``paths`` at ``(m*, n*)``.

    At integer coordinates this reproduces the entries of
    :func:`to_beamspace`. ``m_star`` and ``n_star`` may be broadcastable
    arrays; they must lie in ``[1, M + 1)`` and ``[1, N + 1)``.
    """
    m_star = np.asarray(m_star, dtype=float)
    n_star = np.asarray(n_star, dtype=float)
    if (
        np.any(m_star < 1) or np.any(m_star >= config.M + 1)
        or np.any(n_star < 1) or np.any(n_star >= config.N + 1)
    ):
        raise DomainError("DTFT coordinates outside the periodic virtual range")
    M, N, d = config.M, config.N, config.element_spacing
    total = np.zeros(np.broadcast(m_star, n_star).shape, dtype=complex)
    for p in paths:
        varphi = (m_star - 1) / M - 0.5 - d * np.sin(p.aod)
        vartheta = (n_star - 1) / N - 0.5 - d * np.sin(p.aoa)
        phase = np.exp(-1j * np.pi * vartheta * (N - 1)) / np.exp(-1j * np.pi * varphi * (M - 1))
        total = total + complex(p.gain) * dirichlet_kernel(varphi, vartheta, M, N) * phase
    return complex(total) if total.ndim == 0 else total


def dirichlet_atom(m_star: float, n_star: float, alpha: complex, config: UlaConfig) -> np.ndarray:
    """Beamspace matrix of a single path whose Dirichlet peak sits at ``(m*, n*)``.

    Equals ``to_beamspace(build_channel([path]))`` for the path with strength
    ``alpha`` at the physical angles mapped from ``(m*, n*)``.
    """
    _check_peak(m_star, n_star, config)
    u = ue_factor(np.arange(1, config.N + 1), n_star, config.N)
    v = bs_factor(np.arange(1, config.M + 1), m_star, config.M)
    return complex(alpha) * np.outer(u, v)


def peak_of_path(path: MultipathComponent, config: UlaConfig) -> VirtualPeak:
    """Virtual peak corresponding to a physical path."""
    return VirtualPeak(
        angle_to_peak(path.aod, config.M, config.element_spacing),
        angle_to_peak(path.aoa, config.N, config.element_spacing),
        complex(path.gain),
    )


def path_of_peak(peak: VirtualPeak, config: UlaConfig) -> MultipathComponent:
    """Physical path corresponding to a virtual peak."""
    return MultipathComponent(
        complex(peak.strength),
        aod=peak_to_angle(peak.m_star, config.M, config.element_spacing),
        aoa=peak_to_angle(peak.n_star, config.N, config.element_spacing),
    )


def vec(X):
    """Column-major vectorization."""
    return np.asarray(X).reshape(-1, order="F")


def unvec(x, rows, cols):
    return np.asarray(x).reshape((rows, cols), order="F")
