import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cidnn import dsp


def naive_dft(frame):
    """Direct O(K^2) summation, bins 0..K/2."""
    K = len(frame)
    n = np.arange(K)
    out = np.empty(K // 2 + 1, dtype=complex)
    for k in range(K // 2 + 1):
        acc = 0j
        for m in range(K):
            acc += frame[m] * complex(np.cos(2 * np.pi * k * m / K),
                                      -np.sin(2 * np.pi * k * m / K))
        out[k] = acc
    return out


def test_window_is_periodic_hann():
    n = np.arange(256)
    np.testing.assert_allclose(dsp.WINDOW, 0.5 - 0.5 * np.cos(2 * np.pi * n / 256))
    # COLA: two shifted copies sum to one
    np.testing.assert_allclose(dsp.WINDOW[:128] + dsp.WINDOW[128:], 1.0, atol=1e-15)


def test_zero_signal():
    spec = dsp.analyze(np.zeros(512))
    assert spec.shape == (3, 129)
    assert np.all(spec == 0)


def test_cosine_peaks_at_its_bin():
    n = np.arange(2048)
    x = np.cos(2 * np.pi * 1000 * n / 16000)
    spec = dsp.analyze(x)
    assert np.all(np.argmax(np.abs(spec), axis=1) == 16)


def test_too_short():
    with pytest.raises(ValueError, match="signal too short"):
        dsp.analyze(np.ones(255))


def test_matches_naive_dft(rng):
    x = rng.standard_normal(1024)
    spec = dsp.analyze(x)
    for l in range(spec.shape[0]):
        frame = x[l * 128:l * 128 + 256] * dsp.WINDOW
        ref = naive_dft(frame)
        rel = np.linalg.norm(spec[l] - ref) / np.linalg.norm(ref)
        assert rel < 1e-9


def test_parseval_per_frame(rng):
    x = rng.standard_normal(2048)
    spec = dsp.analyze(x)
    frames = dsp.frame_signal(x) * dsp.WINDOW
    p = np.abs(spec) ** 2
    rhs = (p[:, 0] + p[:, 128] + 2 * p[:, 1:128].sum(axis=1)) / 256
    np.testing.assert_allclose((frames ** 2).sum(axis=1), rhs, rtol=1e-9)


def test_synthesize_length_and_zero():
    out = dsp.synthesize(np.zeros((5, 129), dtype=complex))
    assert len(out) == 4 * 128 + 256
    assert np.all(out == 0)


def test_synthesize_empty():
    with pytest.raises(ValueError):
        dsp.synthesize(np.zeros((0, 129), dtype=complex))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(512, 5000), seed=st.integers(0, 2**31 - 1),
       scale=st.floats(1e-3, 1e3))
def test_perfect_reconstruction(n, seed, scale):
    x = np.random.default_rng(seed).standard_normal(n) * scale
    y = dsp.synthesize(dsp.analyze(x))
    m = len(y)
    dev = np.max(np.abs(y[128:m - 128] - x[128:m - 128]))
    assert dev < 1e-10 * np.max(np.abs(x))


def test_roundtrip_idempotent_on_random_spectrogram(rng):
    spec = rng.standard_normal((20, 129)) + 1j * rng.standard_normal((20, 129))
    spec[:, 0] = spec[:, 0].real
    spec[:, 128] = spec[:, 128].real
    once = dsp.analyze(dsp.synthesize(spec))
    twice = dsp.analyze(dsp.synthesize(once))
    inner = slice(1, -1)
    rel = np.linalg.norm(twice[inner] - once[inner]) / np.linalg.norm(once[inner])
    assert rel < 1e-9
