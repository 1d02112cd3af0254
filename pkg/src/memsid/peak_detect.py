"""Resonance peak picking on measured frequency responses.

The default path is a local-maximum search on the channel-wise maximum
of all scan points. :func:`refine_lorentzian` optionally sharpens a detected
peak with a damped least-squares Lorentzian fit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import signal

from .response_synth import FrequencyResponse

DEFAULT_MIN_SNR = 5.0
DEFAULT_MIN_SEPARATION = 1000.0  # Hz


@dataclass(frozen=True)
class Peak:
    frequency: float
    amplitude: float
    width: float = 0.0
    refined: bool = False
    bin: int = -1


def noise_level(spectrum: np.ndarray) -> float:
    """Median absolute amplitude; resonances are too narrow to move it."""
    return float(np.median(np.abs(spectrum)))


def find_peaks(
    resp: FrequencyResponse,
    min_snr: float = DEFAULT_MIN_SNR,
    min_separation: float = DEFAULT_MIN_SEPARATION,
) -> list[Peak]:
    """Local maxima that stand ``min_snr`` times the noise level above zero
    and above their surroundings (prominence).

    The prominence test rejects noise ripples riding on the flank of a strong
    resonance. Within ``min_separation`` only the largest peak is kept.
    """
    if min_snr <= 1:
        raise ValueError("min_snr must be > 1")
    freqs = resp.freqs
    df = freqs[1] - freqs[0]
    if min_separation < df * (1 - 1e-9):
        raise ValueError("min_separation must be at least one bin")
    y = resp.combined()
    threshold = min_snr * noise_level(y)
    if threshold <= 0:
        threshold = np.finfo(float).tiny
    sep_bins = int(np.floor(min_separation / df + 1e-9))
    idx, _ = signal.find_peaks(y, height=threshold, prominence=threshold, distance=sep_bins + 1)
    return [Peak(float(freqs[i]), float(y[i]), bin=int(i)) for i in idx]


def _lorentz_model(p, f):
    a, f0, g, c = p
    u = (f - f0) / g
    return a / (1 + u * u) + c


def _lorentz_jacobian(p, f):
    a, f0, g, _ = p
    u = (f - f0) / g
    den = 1 + u * u
    return np.column_stack(
        [1 / den, 2 * a * u / (g * den**2), 2 * a * u * u / (g * den**2), np.ones_like(f)]
    )


def levenberg_marquardt(p0, f, y, max_iter=200, tol=1e-12):
    """Minimise the squared residual of the Lorentzian model; returns (params, converged)."""
    p = np.asarray(p0, dtype=float)
    r = y - _lorentz_model(p, f)
    cost = r @ r
    lam = 1e-3
    for _ in range(max_iter):
        J = _lorentz_jacobian(p, f)
        JTJ = J.T @ J
        g = J.T @ r
        while True:
            A = JTJ + lam * np.diag(np.diag(JTJ) + 1e-30)
            try:
                step = np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                return p, False
            trial = p + step
            if trial[2] <= 0:
                lam *= 10
                if lam > 1e12:
                    return p, False
                continue
            r_new = y - _lorentz_model(trial, f)
            cost_new = r_new @ r_new
            if cost_new < cost:
                break
            lam *= 10
            if lam > 1e12:
                return p, cost <= tol * max(y @ y, 1e-300)
        converged = cost - cost_new <= tol * cost or np.all(np.abs(step) <= 1e-12 * (np.abs(p) + 1e-30))
        p, r, cost = trial, r_new, cost_new
        lam = max(lam / 10, 1e-12)
        if converged:
            return p, True
    return p, False


def refine_lorentzian(
    resp: FrequencyResponse, peak: Peak, window_bins: int = 7, min_r2: float = 0.95
) -> Peak:
    """Fit ``A / (1 + ((f - f0) / g)^2) + c`` around a detected peak.

    The unrefined peak is returned unchanged when the fit fails to converge,
    yields a non-physical width, moves f0 outside the window, or explains
    less than ``min_r2`` of the window's variance.
    """
    if window_bins < 5:
        raise ValueError("window must span at least 5 bins")
    freqs = resp.freqs
    y = resp.combined()
    i = peak.bin if peak.bin >= 0 else int(np.argmin(np.abs(freqs - peak.frequency)))
    half = window_bins // 2
    lo, hi = max(0, i - half), min(freqs.size, i + half + 1)
    if hi - lo < 5:
        return peak
    f, yw = freqs[lo:hi], y[lo:hi]
    df = freqs[1] - freqs[0]
    base = float(yw.min())
    height = float(y[i]) - base
    if height <= 0:
        return peak
    above = f[yw - base >= height / 2]
    g0 = max((above.max() - above.min()) / 2, df / 2)
    # fit in units of bins around the apex for conditioning
    x = (f - freqs[i]) / df
    p, ok = levenberg_marquardt([height, 0.0, g0 / df, base], x, yw)
    a, x0, g, c = p
    f0 = freqs[i] + x0 * df
    if not ok or not np.all(np.isfinite(p)) or a <= 0 or g <= 0 or not (f[0] <= f0 <= f[-1]):
        return peak
    resid = yw - _lorentz_model(p, x)
    spread = yw - yw.mean()
    if resid @ resid > (1 - min_r2) * (spread @ spread):
        return peak
    return replace(peak, frequency=float(f0), amplitude=float(a), width=float(g * df), refined=True)
