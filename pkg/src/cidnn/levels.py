"""Active speech level (P.56 method B style) and SNR-controlled mixing."""

import math

import numpy as np
from scipy.ndimage import maximum_filter1d
from scipy.signal import lfilter

from .dsp import SAMPLE_RATE

SMOOTHING_TIME = 0.03   # s, per first-order section
HANGOVER_TIME = 0.2     # s
MARGIN_DB = 15.9
LADDER_STEP_DB = 0.79
LADDER_DEPTH = 160      # thresholds below the envelope peak (~126 dB)

TRAINING_SNRS = (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0)


def envelope(x, fs=SAMPLE_RATE):
    """Two cascaded first-order smoothers applied to ``|x|``."""
    g = math.exp(-1.0 / (fs * SMOOTHING_TIME))
    p = lfilter([1.0 - g], [1.0, -g], np.abs(x))
    return lfilter([1.0 - g], [1.0, -g], p)


def activity_counts(q, thresholds, hangover):
    """Samples counted active for each threshold.

    A sample is active for threshold ``c`` if the envelope reached ``c``
    at that sample or within the ``hangover`` samples before it, so the
    count is the number of samples whose trailing-window envelope maximum
    is at least ``c``.
    """
    held = maximum_filter1d(q, size=hangover + 1, origin=hangover // 2,
                            mode="constant", cval=0.0)
    held.sort()
    return len(held) - np.searchsorted(held, thresholds, side="left")


def active_speech_level(x, fs=SAMPLE_RATE):
    """Active speech level in dB relative to full scale (amplitude 1.0).

    The threshold ladder hangs below the peak of the envelope, which makes
    the result exactly scale-equivariant.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0 or not np.any(x):
        raise ValueError("no active speech")
    q = envelope(x, fs)
    top = q.max()
    if top <= 0.0:
        raise ValueError("no active speech")
    hangover = int(math.ceil(fs * HANGOVER_TIME))
    c_db = 20.0 * np.log10(top) - LADDER_STEP_DB * np.arange(LADDER_DEPTH)[::-1]
    counts = activity_counts(q, 10.0 ** (c_db / 20.0), hangover)
    energy = float(np.dot(x, x))
    a_db = 10.0 * np.log10(energy / np.maximum(counts, 1))
    delta = a_db - c_db
    below = np.nonzero(delta <= MARGIN_DB)[0]
    if len(below) == 0:
        return float(a_db[-1])
    j = below[0]
    if j == 0:
        return float(a_db[0])
    t = (delta[j - 1] - MARGIN_DB) / (delta[j - 1] - delta[j])
    return float(a_db[j - 1] + t * (a_db[j] - a_db[j - 1]))


def rms_db(x):
    """Long-term RMS level in dB re full scale; ``-inf`` for silence."""
    x = np.asarray(x, dtype=float)
    ms = float(np.dot(x, x)) / max(len(x), 1)
    if ms <= 0.0:
        return -math.inf
    return 10.0 * math.log10(ms)


def snr_db(speech, noise):
    """Active speech level of ``speech`` minus the RMS level of ``noise``."""
    return active_speech_level(speech) - rms_db(noise)


def crop_noise(noise, n, offset=None, rng=None):
    """Cut ``n`` samples of ``noise`` starting at ``offset`` (samples).

    Without an offset a position is drawn from ``rng``; without either the
    crop starts at zero.  Noise shorter than ``n`` is rejected; it is never
    looped.
    """
    noise = np.asarray(noise, dtype=float)
    if len(noise) < n:
        raise ValueError("noise too short: %d samples for %d samples of speech"
                         % (len(noise), n))
    if offset is None:
        offset = int(rng.integers(0, len(noise) - n + 1)) if rng is not None else 0
    if offset < 0 or offset + n > len(noise):
        raise ValueError("noise offset %d out of range for %d/%d samples"
                         % (offset, n, len(noise)))
    return noise[offset:offset + n]


def mix_at_snr(speech, noise, input_snr_db, offset=None, rng=None):
    """Scale ``noise`` so the mixture has the requested SNR.

    Returns
    -------
    mixture, scaled_noise : ndarray
        ``mixture = speech + scaled_noise``, both as long as ``speech``.
    """
    speech = np.asarray(speech, dtype=float)
    d = crop_noise(noise, len(speech), offset, rng)
    noise_db = rms_db(d)
    if not math.isfinite(noise_db):
        raise ValueError("noise is silent")
    gain = 10.0 ** ((active_speech_level(speech) - input_snr_db - noise_db) / 20.0)
    scaled = gain * d
    return speech + scaled, scaled


def make_noisy_target(speech, scaled_noise, delta_db):
    """Mixture of the same noise realization attenuated by ``delta_db``."""
    speech = np.asarray(speech, dtype=float)
    scaled_noise = np.asarray(scaled_noise, dtype=float)
    if speech.shape != scaled_noise.shape:
        raise ValueError("length mismatch: speech %d vs noise %d samples"
                         % (len(speech), len(scaled_noise)))
    if delta_db < 0:
        raise ValueError("delta_db must be non-negative")
    if math.isinf(delta_db):
        return speech.copy()
    return speech + scaled_noise * 10.0 ** (-delta_db / 20.0)
