"""Power spectra of probe signals, peak picking and convergence rates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window, hilbert

from .errors import ConfigurationError


@dataclass
class Spectrum:
    freqs: np.ndarray
    power: np.ndarray
    dt: float
    length: int

    @property
    def resolution(self):
        """Frequency resolution ``1 / (length * dt)`` of the unpadded record."""
        return 1.0 / (self.length * self.dt)

    @property
    def bin_width(self):
        return self.freqs[1] - self.freqs[0]


@dataclass
class Peak:
    frequency: float
    power: float
    index: int


def power_spectrum(series, dt, window="hann", pad=1):
    """One-sided power spectrum of a real, mean-removed series.

    Parameters
    ----------
    series : array_like
        Samples taken every ``dt`` seconds (at least 8).
    window : str or None
        Taper applied after mean removal (periodic Hann by default).
    pad : int
        Zero-padding factor; ``pad > 1`` interpolates the spectrum on a finer
        frequency grid without changing its resolution.

    Notes
    -----
    Bins between DC and Nyquist are doubled, so for ``window=None`` and
    ``pad=1`` the total power equals ``N * sum((x - mean)^2)``.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if n < 8:
        raise ConfigurationError(f"need at least 8 samples, got {n}")
    if not dt > 0:
        raise ConfigurationError("sampling interval must be positive")
    if int(pad) < 1:
        raise ConfigurationError("pad must be a positive integer")
    x = x - x.mean()
    if window is not None:
        x = x * get_window(window, n, fftbins=True)
    nfft = n * int(pad)
    X = np.fft.rfft(x, nfft)
    power = np.abs(X) ** 2
    if nfft % 2 == 0:
        power[1:-1] *= 2
    else:
        power[1:] *= 2
    freqs = np.fft.rfftfreq(nfft, dt)
    return Spectrum(freqs, power, float(dt), n)


def find_peaks(s: Spectrum, rel_threshold=0.1):
    """Strict local maxima above ``rel_threshold * max(power)``, sorted by frequency.

    Locations are refined by a parabola through the logarithms of the peak
    bin and its two neighbours.
    """
    if not 0 < rel_threshold < 1:
        raise ConfigurationError("rel_threshold must lie in (0, 1)")
    p = s.power
    top = p.max() if p.size else 0.0
    if top <= 0:
        return []
    inner = np.arange(1, p.size - 1)
    is_max = (p[inner] > p[inner - 1]) & (p[inner] > p[inner + 1]) & (p[inner] >= rel_threshold * top)
    peaks = []
    df = s.bin_width
    for k in inner[is_max]:
        a, b, c = np.log(p[k - 1:k + 2])
        denom = a - 2 * b + c
        delta = 0.5 * (a - c) / denom if denom < 0 else 0.0
        delta = float(np.clip(delta, -0.5, 0.5))
        peaks.append(Peak(s.freqs[k] + delta * df, float(np.exp(b - 0.25 * (a - c) * delta)), int(k)))
    return peaks


def dominant_frequency(series, dt, window="hann", pad=8):
    """Frequency of the strongest spectral peak."""
    s = power_spectrum(series, dt, window=window, pad=pad)
    peaks = find_peaks(s, 0.5)
    if not peaks:
        raise ValueError("spectrum has no peak")
    return max(peaks, key=lambda q: q.power).frequency


def isolated_peaks(peaks, min_separation, exclude=(), rel_threshold=0.0):
    """Peaks that are not window sidelobes of a stronger neighbour.

    A peak is dropped if a stronger peak lies within ``min_separation``, if it
    is within ``min_separation`` of a frequency in ``exclude`` (a known
    driving frequency, say), or if its power is below ``rel_threshold`` times
    the strongest remaining peak.  Returned in ascending frequency.
    """
    keep = []
    for q in peaks:
        if any(abs(q.frequency - f) <= min_separation for f in exclude):
            continue
        if any(abs(q.frequency - o.frequency) <= min_separation and o.power > q.power for o in peaks):
            continue
        keep.append(q)
    if keep and rel_threshold > 0:
        top = max(q.power for q in keep)
        keep = [q for q in keep if q.power >= rel_threshold * top]
    return sorted(keep, key=lambda q: q.frequency)


def amplitude_envelope(series):
    """Magnitude of the analytic signal of the mean-removed series."""
    x = np.asarray(series, dtype=float)
    return np.abs(hilbert(x - x.mean()))


def envelope_period(series, dt, trim=0.05, pad=8):
    """Period of the slow amplitude modulation of ``series``.

    The analytic-signal envelope is computed, ``trim`` of its length is cut
    from each end (the transform wraps around there), and the period is the
    inverse of the envelope's dominant frequency.
    """
    env = amplitude_envelope(series)
    cut = int(trim * env.size)
    if cut:
        env = env[cut:-cut]
    return 1.0 / dominant_frequency(env, dt, pad=pad)


def estimate_order(errors, spacings):
    """Least-squares slope of ``log(error)`` against ``log(h)``."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(spacings, dtype=float)
    if e.size != h.size:
        raise ValueError("errors and spacings differ in length")
    if e.size < 3:
        raise ValueError("need at least three (error, spacing) pairs")
    if np.any(e <= 0) or np.any(h <= 0):
        raise ValueError("errors and spacings must be positive")
    slope, _ = np.polyfit(np.log(h), np.log(e), 1)
    return float(slope)
