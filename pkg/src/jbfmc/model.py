"""Synthetic channels, pilots and received observations for the reflecting-surface link.

All matrices are dense ``complex128`` arrays. Shapes follow the usual naming:

    H : N x M   base station -> surface
    G : L x N   surface -> receiver
    S : N x T   on/off pattern of the surface elements (complex, unit-modulus or 0)
    X : M x T   transmit pilots
    Y : L x T   received block, Y = G (S * (H X)) + W
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

__all__ = [
    "ConfigError",
    "SystemConfig",
    "ChannelRealization",
    "PilotSet",
    "Observation",
    "TrialStreams",
    "complex_normal",
    "steering_vector",
    "draw_channels",
    "draw_pilots",
    "synthesize",
    "snr_db_to_noise_power",
    "noise_power_to_snr_db",
]


class ConfigError(ValueError):
    """Invalid scenario configuration or incompatible matrix dimensions."""


@dataclass(frozen=True)
class SystemConfig:
    num_bs_antennas: int  # M
    num_surface_elements: int  # N
    num_rx_antennas: int  # L
    pilot_length: int  # T
    sparsity_level: float  # lambda, P(element on)
    noise_power: float  # sigma^2
    num_paths_h: int  # K_h
    num_paths_g: int  # K_g
    completion_rank: int  # r
    rng_seed: int = 0

    def __post_init__(self):
        ints = ("num_bs_antennas", "num_surface_elements", "num_rx_antennas",
                "pilot_length", "num_paths_h", "num_paths_g", "completion_rank")
        for name in ints:
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not 0.0 < self.sparsity_level < 1.0:
            raise ConfigError(f"sparsity_level must lie in (0, 1), got {self.sparsity_level}")
        if not self.noise_power >= 0.0 or not np.isfinite(self.noise_power):
            raise ConfigError(f"noise_power must be finite and >= 0, got {self.noise_power}")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ConfigError("rng_seed must be a 64-bit unsigned integer")
        M, N, L, T = self.M, self.N, self.L, self.T
        if T < M:
            raise ConfigError(f"pilot_length T={T} must be >= num_bs_antennas M={M}")
        if not self.num_paths_h < min(N, M):
            raise ConfigError(f"num_paths_h={self.num_paths_h} must be < min(N, M)={min(N, M)}")
        if not self.num_paths_g < min(L, N):
            raise ConfigError(f"num_paths_g={self.num_paths_g} must be < min(L, N)={min(L, N)}")
        if self.completion_rank > min(N, T):
            raise ConfigError(f"completion_rank={self.completion_rank} must be <= min(N, T)")

    # short aliases used throughout the numerical code
    @property
    def M(self) -> int:
        return self.num_bs_antennas

    @property
    def N(self) -> int:
        return self.num_surface_elements

    @property
    def L(self) -> int:
        return self.num_rx_antennas

    @property
    def T(self) -> int:
        return self.pilot_length

    @property
    def snr_db(self) -> float:
        return noise_power_to_snr_db(self.noise_power)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_values(self, **changes) -> "SystemConfig":
        """Copy with some fields replaced. ``snr_db`` is accepted and mapped to ``noise_power``."""
        if "snr_db" in changes:
            changes["noise_power"] = snr_db_to_noise_power(changes.pop("snr_db"))
        return replace(self, **changes)


def snr_db_to_noise_power(snr_db: float) -> float:
    # SNR = 10 log10(1 / sigma^2)
    return float(10.0 ** (-float(snr_db) / 10.0))


def noise_power_to_snr_db(noise_power: float) -> float:
    if noise_power == 0:
        return float("inf")
    return float(-10.0 * np.log10(noise_power))


@dataclass(frozen=True)
class ChannelRealization:
    H: np.ndarray  # N x M
    G: np.ndarray  # L x N


@dataclass(frozen=True)
class PilotSet:
    S: np.ndarray  # N x T, entries 0 or unit modulus
    X: np.ndarray  # M x T, full row rank

    @property
    def support(self) -> np.ndarray:
        return self.S != 0


@dataclass(frozen=True)
class Observation:
    Y: np.ndarray  # L x T
    Z: np.ndarray  # N x T, kept for evaluation only


class TrialStreams:
    """Independent generators for one trial, derived from a single seed.

    Each stream can be rebuilt alone from the seed, so e.g. the noise of a
    trial can be redrawn without touching its channel draw.
    """

    NAMES = ("channels", "pilots", "noise", "algorithm")

    def __init__(self, seed: int):
        self.seed = int(seed)
        children = np.random.SeedSequence(self.seed).spawn(len(self.NAMES))
        for name, child in zip(self.NAMES, children):
            setattr(self, name, np.random.Generator(np.random.PCG64(child)))


def complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """i.i.d. CN(0, var) samples."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _uniform_open_closed(rng: np.random.Generator, size=None):
    # numpy draws from [0, 1); 1 - u lies in (0, 1]
    return 1.0 - rng.random(size)


def steering_vector(num_antennas: int, omega: float) -> np.ndarray:
    """Half-wavelength ULA response, element m (0-based) = exp(-j pi m omega)."""
    m = np.arange(num_antennas)
    return np.exp(-1j * np.pi * m * omega)


def draw_channels(config: SystemConfig, rng: np.random.Generator) -> ChannelRealization:
    """Multipath channels built from ``K_h`` and ``K_g`` rank-one steering terms.

    Every angle is drawn independently on (0, 1], including the surface-side
    angles of H and of G. Path gains are CN(0, 1).
    """
    N, M, L = config.N, config.M, config.L
    H = np.zeros((N, M), dtype=complex)
    for _ in range(config.num_paths_h):
        alpha = complex_normal(rng, ())
        surf, bs = _uniform_open_closed(rng, 2)
        H += alpha * np.outer(steering_vector(N, surf), steering_vector(M, bs).conj())
    G = np.zeros((L, N), dtype=complex)
    for _ in range(config.num_paths_g):
        beta = complex_normal(rng, ())
        rx, surf = _uniform_open_closed(rng, 2)
        G += beta * np.outer(steering_vector(L, rx), steering_vector(N, surf).conj())
    return ChannelRealization(H=H, G=G)


def draw_pilots(config: SystemConfig, rng: np.random.Generator, max_tries: int = 100) -> PilotSet:
    """Bernoulli(lambda) on/off mask with zero phase, and CN(0, 1) transmit pilots."""
    N, M, T = config.N, config.M, config.T
    S = (rng.random((N, T)) < config.sparsity_level).astype(complex)
    for _ in range(max_tries):
        X = complex_normal(rng, (M, T))
        if np.linalg.matrix_rank(X) == M:
            return PilotSet(S=S, X=X)
    raise RuntimeError("could not draw a full-rank pilot matrix")


def synthesize(channels: ChannelRealization, pilots: PilotSet, noise_power: float,
               rng: np.random.Generator) -> Observation:
    """Received block Y = G Z + W with Z = S * (H X) and W ~ CN(0, noise_power)."""
    H, G, S, X = channels.H, channels.G, pilots.S, pilots.X
    N, M = H.shape
    if X.shape[0] != M or S.shape != (N, X.shape[1]) or G.shape[1] != N:
        raise ConfigError(
            f"incompatible shapes H{H.shape} X{X.shape} S{S.shape} G{G.shape}")
    Z = S * (H @ X)
    # multiplying by S already leaves exact zeros, this also clears -0j and nan*0 cases
    Z[S == 0] = 0.0
    L, T = G.shape[0], X.shape[1]
    W = complex_normal(rng, (L, T), noise_power) if noise_power > 0 else np.zeros((L, T), complex)
    return Observation(Y=G @ Z + W, Z=Z)
