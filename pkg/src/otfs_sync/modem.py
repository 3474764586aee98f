"""Delay-Doppler modem core: OTFS grid transforms, serialization, CP framing.

The transmit chain is ``DdGrid -> dd_to_dt -> serialize -> add_cp``; every
step has an exact inverse so receiver-side tests can loop back losslessly.
All transforms use the unitary 1/sqrt(N) convention so downstream phase
relations (pilot slot phase, CFO rotation) hold exactly as derived.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

# 16-QAM per-axis levels, scaled for unit average symbol power.
QAM16_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0]) / np.sqrt(10.0)


@dataclass(frozen=True)
class OtfsParams:
    """Grid geometry and framing constants for one OTFS link.

    Attributes
    ----------
    m : int
        Delay bins per time slot.
    n : int
        Doppler bins, equal to the number of time slots per block.
    lcp : int
        Cyclic-prefix length in samples; one CP per block.
    ts : float
        Sampling period in seconds (also the delay resolution).
    blocks : int
        Number of back-to-back blocks in the transmitted stream.
        Three blocks guarantee a full block falls inside the receiver's
        two-block buffer for any timing offset in [-MN/2, MN/2).
    """

    m: int
    n: int
    lcp: int
    ts: float = 1.0 / 8.25e6
    blocks: int = 3

    def __post_init__(self) -> None:
        if self.m < 1 or self.n < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.m}x{self.n}")
        if self.blocks < 1:
            raise ValueError(f"need at least one block, got {self.blocks}")
        if not 0 <= self.lcp <= self.m * self.n:
            raise ValueError(f"lcp must lie in [0, M*N], got {self.lcp}")
        if self.ts <= 0:
            raise ValueError(f"sampling period must be positive, got {self.ts}")

    @property
    def mn(self) -> int:
        """Samples per block excluding the CP."""
        return self.m * self.n

    @property
    def n_t(self) -> int:
        """Samples per block including the CP (N_T = M*N + Lcp)."""
        return self.mn + self.lcp

    @property
    def block_duration(self) -> float:
        """Block duration T = M*N*Ts in seconds, excluding the CP."""
        return self.mn * self.ts

    @property
    def doppler_resolution(self) -> float:
        """Doppler bin spacing 1/(M*N*Ts) in Hz."""
        return 1.0 / self.block_duration


def qam16_symbols(rng: np.random.Generator, size) -> np.ndarray:
    """Draw unit-average-power 16-QAM symbols."""
    re = rng.choice(QAM16_LEVELS, size=size)
    im = rng.choice(QAM16_LEVELS, size=size)
    return re + 1j * im


def _check_grid(grid: np.ndarray, params: OtfsParams) -> np.ndarray:
    grid = np.asarray(grid)
    if grid.shape != (params.m, params.n):
        raise ValueError(
            f"grid shape {grid.shape} does not match ({params.m}, {params.n})"
        )
    return grid


def dd_to_dt(grid: np.ndarray, params: OtfsParams) -> np.ndarray:
    """Spread a delay-Doppler grid into the delay-time domain.

    X[m, l] = (1/sqrt(N)) * sum_n D[m, n] * exp(j*2*pi*l*n/N)

    Unitary, so frame energy is preserved exactly.
    """
    grid = _check_grid(grid, params)
    return np.fft.ifft(grid, axis=1) * np.sqrt(params.n)


def dt_to_dd(frame: np.ndarray, params: OtfsParams) -> np.ndarray:
    """Exact inverse of :func:`dd_to_dt` (forward DFT across time slots)."""
    frame = _check_grid(frame, params)
    return np.fft.fft(frame, axis=1) / np.sqrt(params.n)


def serialize_dt(frame: np.ndarray, params: OtfsParams) -> np.ndarray:
    """Serialize a delay-time frame to the stream order x[l*M + m] = X[m, l]."""
    frame = _check_grid(frame, params)
    return frame.reshape(-1, order="F")


def deserialize_dt(samples: np.ndarray, params: OtfsParams) -> np.ndarray:
    """Inverse of :func:`serialize_dt`."""
    samples = np.asarray(samples)
    if samples.shape != (params.mn,):
        raise ValueError(f"expected {params.mn} samples, got {samples.shape}")
    return samples.reshape(params.m, params.n, order="F")


def add_cp(samples: np.ndarray, params: OtfsParams) -> np.ndarray:
    """Prepend the last Lcp samples as a cyclic prefix (one CP per block)."""
    samples = np.asarray(samples)
    if samples.shape != (params.mn,):
        raise ValueError(f"expected {params.mn} samples, got {samples.shape}")
    if params.lcp == 0:
        return samples.copy()
    return np.concatenate([samples[-params.lcp:], samples])


def remove_cp(block: np.ndarray, params: OtfsParams) -> np.ndarray:
    """Strip the CP from one aligned block and reshape to a delay-time frame."""
    block = np.asarray(block)
    if block.shape[0] < params.n_t:
        raise ValueError(
            f"need at least N_T = {params.n_t} samples, got {block.shape[0]}"
        )
    return deserialize_dt(block[params.lcp:params.n_t], params)


def build_stream(grids, params: OtfsParams) -> np.ndarray:
    """Concatenate CP-prefixed blocks into the transmitted sample stream."""
    blocks = [add_cp(serialize_dt(dd_to_dt(g, params), params), params) for g in grids]
    return np.concatenate(blocks)


def measure_papr(stream: np.ndarray) -> float:
    """Peak-to-average power ratio of a sample stream, in dB."""
    stream = np.asarray(stream)
    if stream.size == 0:
        raise ValueError("empty stream")
    power = np.abs(stream) ** 2
    mean = power.mean()
    if mean == 0:
        raise ValueError("all-zero stream has no defined PAPR")
    return 10.0 * np.log10(power.max() / mean)
