"""STFT analysis and overlap-add synthesis.

Every frequency-domain computation in the package uses one fixed
configuration: 16 kHz audio, 256-sample frames shifted by 128 samples,
a periodic Hann analysis window and the 129-bin half spectrum of a
256-point DFT.  No synthesis window is applied; the periodic Hann window
at 50 % overlap sums to exactly one, so overlap-add alone reconstructs
the interior of the signal.
"""

import numpy as np

SAMPLE_RATE = 16000
FRAME_LEN = 256
FRAME_SHIFT = 128
N_BINS = FRAME_LEN // 2 + 1

WINDOW = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(FRAME_LEN) / FRAME_LEN)


def num_frames(n_samples):
    """Number of complete analysis frames in a signal of ``n_samples``."""
    if n_samples < FRAME_LEN:
        return 0
    return 1 + (n_samples - FRAME_LEN) // FRAME_SHIFT


def synth_length(n_frames):
    """Length of the overlap-add output for ``n_frames`` frames."""
    return (n_frames - 1) * FRAME_SHIFT + FRAME_LEN


def frame_signal(x, frame_len=FRAME_LEN, shift=FRAME_SHIFT):
    """Return a read-only ``(L, frame_len)`` view of the frames of ``x``."""
    x = np.ascontiguousarray(x, dtype=float)
    n = 1 + (len(x) - frame_len) // shift
    return np.lib.stride_tricks.as_strided(
        x, shape=(n, frame_len), strides=(x.strides[0] * shift, x.strides[0]),
        writeable=False)


def analyze(x):
    """Windowed DFT analysis.

    Parameters
    ----------
    x : array_like
        Real mono signal, at least one frame (256 samples) long.

    Returns
    -------
    ndarray, complex, shape (L, 129)
        Frame ``l`` holds bins 0..128 of the DFT of
        ``x[l*128 : l*128+256] * WINDOW``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a mono (1-D) signal")
    if len(x) < FRAME_LEN:
        raise ValueError("signal too short: %d samples, need at least %d"
                         % (len(x), FRAME_LEN))
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite samples")
    frames = frame_signal(x) * WINDOW
    return np.fft.rfft(frames, n=FRAME_LEN, axis=1)


def synthesize(spec):
    """Inverse DFT of each half-spectrum frame followed by overlap-add.

    The output has ``(L-1)*128 + 256`` samples.  Only the region
    ``[128, len-128)`` is covered by two overlapping frames; the outer 128
    samples on each side are returned as produced (still carrying one
    window slope).
    """
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != N_BINS:
        raise ValueError("expected spectrogram of shape (L, %d), got %s"
                         % (N_BINS, spec.shape))
    if spec.shape[0] == 0:
        raise ValueError("empty spectrogram")
    frames = np.fft.irfft(spec, n=FRAME_LEN, axis=1)
    n_frames = frames.shape[0]
    out = np.zeros(synth_length(n_frames))
    # two passes over non-overlapping frame sets keep the adds vectorised
    for start in (0, 1):
        sel = frames[start::2]
        if len(sel) == 0:
            continue
        offset = start * FRAME_SHIFT
        seg = out[offset:offset + len(sel) * FRAME_LEN]
        seg[:sel.size] += sel.reshape(-1)
    return out


def interior(x, n=None):
    """Slice of ``x`` guaranteed to be reconstructed exactly by OLA.

    ``n`` is the synthesized length; defaults to ``len(x)``.
    """
    if n is None:
        n = len(x)
    return x[FRAME_SHIFT:n - FRAME_SHIFT]
