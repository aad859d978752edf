"""Hybrid-beamforming measurement model.

A block of ``M_t`` precoders and ``N_t`` combiners is applied to a static
channel, giving ``Y = W^H H F + W^H [n_1 ... n_Mt]``. Vectorizing with the
identity ``vec(ABC) = (C^T kron A) vec(B)`` yields::

    y = Phi Psi vec(H_V) + n_W,   Phi = F^T kron W^H,   Psi = conj(A_BS) kron A_UE
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from domp.channel import PhysicalChannel, UlaConfig, dft_dictionary, to_beamspace, vec
from domp.errors import DomainError

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the SplitMix64 output function."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(root_seed: int, index: int) -> int:
    """Child seed for trial ``index``: ``mix(mix(root) + index)``."""
    return splitmix64((splitmix64(int(root_seed) & _MASK64) + int(index)) & _MASK64)


def make_rng(seed, stream: int = 0) -> np.random.Generator:
    """Independent generator for sub-stream ``stream`` of ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng([int(seed) & _MASK64, int(stream)])


@dataclass(frozen=True)
class SensingSetup:
    precoder: np.ndarray = field(repr=False)
    combiner: np.ndarray = field(repr=False)
    sensing_matrix: np.ndarray = field(repr=False)
    dictionary: np.ndarray = field(repr=False)
    beamforming_effect: np.ndarray = field(repr=False)
    config: UlaConfig = None

    @property
    def num_measurements(self) -> int:
        return self.sensing_matrix.shape[0]


@dataclass(frozen=True)
class Observation:
    y: np.ndarray = field(repr=False)
    noise_variance: float
    snr_db: float
    seed: int | None = None


def random_beamformers(config: UlaConfig, M_t: int, N_t: int, seed=None):
    """Random-phase analog precoder ``F`` (``M x M_t``) and combiner ``W`` (``N x N_t``).

    Entries are unit-modulus phases scaled by ``1/sqrt(M)`` (``1/sqrt(N)``),
    so every column has unit norm.
    """
    if int(M_t) < 1 or int(N_t) < 1:
        raise DomainError(f"beamformer counts must be positive, got M_t={M_t}, N_t={N_t}")
    rng = make_rng(seed, stream=1)
    F = np.exp(2j * np.pi * rng.random((config.M, M_t))) / np.sqrt(config.M)
    W = np.exp(2j * np.pi * rng.random((config.N, N_t))) / np.sqrt(config.N)
    return F, W


def dictionary_matrix(config: UlaConfig) -> np.ndarray:
    """Kronecker dictionary ``conj(A_BS) kron A_UE`` acting on ``vec(H_V)``."""
    return np.kron(dft_dictionary(config.M).conj(), dft_dictionary(config.N))


def sensing_matrix(F, W, config: UlaConfig) -> np.ndarray:
    """Overall sensing matrix ``(F^T kron W^H)(conj(A_BS) kron A_UE)``.

    Computed through the mixed-product rule as
    ``(F^T conj(A_BS)) kron (W^H A_UE)``.
    """
    F = np.asarray(F)
    W = np.asarray(W)
    if F.ndim != 2 or W.ndim != 2 or F.shape[0] != config.M or W.shape[0] != config.N:
        raise DomainError(
            f"precoder {F.shape} / combiner {W.shape} incompatible with M={config.M}, N={config.N}"
        )
    left = F.T @ dft_dictionary(config.M).conj()
    right = W.conj().T @ dft_dictionary(config.N)
    return np.kron(left, right)


def build_sensing_setup(config: UlaConfig, M_t: int, N_t: int, seed=None, F=None, W=None) -> SensingSetup:
    if F is None or W is None:
        F, W = random_beamformers(config, M_t, N_t, seed)
    Phi = np.kron(F.T, W.conj().T)
    Psi = dictionary_matrix(config)
    return SensingSetup(F, W, sensing_matrix(F, W, config), Psi, Phi, config)


def measure(H, setup: SensingSetup, snr_db: float, seed=None) -> Observation:
    """Noisy compressed observation of ``H`` through ``setup``.

    Noise is drawn per antenna as ``CN(0, sigma^2)`` and then combined by
    ``W^H``, so it is colored whenever ``W^H W`` is not the identity. The
    variance is chosen so that the mean received signal power per
    measurement over ``sigma^2`` equals the requested SNR. ``snr_db=inf``
    returns the noiseless observation.
    """
    snr_db = float(snr_db)
    if np.isnan(snr_db) or snr_db == -np.inf:
        raise DomainError(f"invalid SNR {snr_db}")
    config = setup.config
    matrix = H.matrix if isinstance(H, PhysicalChannel) else np.asarray(H)
    signal = setup.sensing_matrix @ vec(to_beamspace(matrix, config))
    if snr_db == np.inf:
        return Observation(signal, 0.0, snr_db, seed)

    sigma2 = float(np.vdot(signal, signal).real) / (signal.size * 10 ** (snr_db / 10))
    rng = make_rng(seed, stream=2)
    M_t = setup.precoder.shape[1]
    raw = np.sqrt(sigma2 / 2) * (
        rng.standard_normal((config.N, M_t)) + 1j * rng.standard_normal((config.N, M_t))
    )
    noise = vec(setup.combiner.conj().T @ raw)
    return Observation(signal + noise, sigma2, snr_db, seed)
