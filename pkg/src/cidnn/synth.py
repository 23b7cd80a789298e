"""Synthetic speech-like corpus for desk-scale experiments.

Utterances are harmonic voiced segments shaped by moving formant
resonances, interleaved with fricative noise bursts and pauses.  Noises
are white, a babble surrogate (many overlapping synthetic talkers) and
lowpass-filtered white noise.  Training and test noise come from
different realizations, mirroring a held-out-file test setup.
"""

import math
import os

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from . import dsp
from .audio_io import write_wav, write_manifest, ManifestEntry

FS = dsp.SAMPLE_RATE
NOISE_TYPES = ("white", "babble", "lowpass")

# (F1, F2, F3) targets in Hz for a handful of vowels
VOWELS = np.array([
    (730, 1090, 2440), (270, 2290, 3010), (530, 1840, 2480),
    (660, 1720, 2410), (300, 870, 2240), (570, 840, 2410),
    (440, 1020, 2240), (490, 1350, 1690),
])
FORMANT_BW = np.array([80.0, 110.0, 160.0])


def speaker(rng):
    """Random speaker: base pitch and vocal tract scaling."""
    return {"f0": rng.uniform(90, 240), "tract": rng.uniform(0.88, 1.15),
            "tilt": rng.uniform(0.9, 1.3)}


def _resonator(freq, bw):
    r = math.exp(-math.pi * bw / FS)
    c = 2 * r * math.cos(2 * math.pi * freq / FS)
    b0 = 1 - c + r * r
    return np.array([b0]), np.array([1.0, -c, r * r])


def _formant_filter(src, f_start, f_end, block=160):
    """Cascade of three resonators whose centre frequencies glide linearly."""
    out = np.empty_like(src)
    zi = [np.zeros(2) for _ in range(3)]
    n_blocks = int(math.ceil(len(src) / block))
    for i in range(n_blocks):
        t = (i + 0.5) / n_blocks
        seg = src[i * block:(i + 1) * block]
        for k in range(3):
            b, a = _resonator((1 - t) * f_start[k] + t * f_end[k], FORMANT_BW[k])
            seg, zi[k] = lfilter(b, a, seg, zi=zi[k])
        out[i * block:i * block + len(seg)] = seg
    return out


def _ramp(n, ramp):
    env = np.ones(n)
    r = min(ramp, n // 2)
    if r > 0:
        w = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r] = w
        env[n - r:] = w[::-1]
    return env


def _voiced(rng, spk, seconds):
    n = int(seconds * FS)
    t = np.arange(n) / FS
    f0 = spk["f0"] * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(1, 4) * t
                                        + rng.uniform(0, 2 * np.pi)))
    f0 *= np.linspace(1.05, 0.95, n) * rng.uniform(0.92, 1.08)
    phase = 2 * np.pi * np.cumsum(f0) / FS
    src = np.zeros(n)
    n_harm = int(7600 / f0.min())
    for h in range(1, n_harm + 1):
        amp = (h ** -spk["tilt"]) * (h * f0 < 7600)
        src += amp * np.sin(h * phase)
    v0, v1 = VOWELS[rng.integers(len(VOWELS), size=2)] * spk["tract"]
    y = _formant_filter(src, v0, v1)
    return y * _ramp(n, int(0.02 * FS))


def _fricative(rng, seconds):
    n = int(seconds * FS)
    lo = rng.uniform(1800, 3500)
    sos = butter(2, [lo, min(lo * 2.2, 7500)], btype="band", fs=FS, output="sos")
    return sosfilt(sos, rng.standard_normal(n)) * _ramp(n, int(0.01 * FS))


def utterance(rng, seconds=3.0, spk=None):
    """One speech-like utterance of roughly ``seconds`` length, level ~ -25 dBFS."""
    spk = spk or speaker(rng)
    parts = [np.zeros(int(rng.uniform(0.1, 0.25) * FS))]
    total = len(parts[0])
    target = int(seconds * FS)
    while total < target - int(0.3 * FS) or len(parts) == 1:
        for _ in range(int(rng.integers(1, 4))):
            if rng.random() < 0.4:
                parts.append(0.3 * _fricative(rng, rng.uniform(0.04, 0.1)))
            parts.append(_voiced(rng, spk, rng.uniform(0.12, 0.28))
                         * 10 ** (rng.uniform(-4, 4) / 20))
        parts.append(np.zeros(int(rng.uniform(0.04, 0.25) * FS)))
        total = sum(len(p) for p in parts)
    x = np.concatenate(parts)
    active = x[np.abs(x) > 1e-3 * np.abs(x).max()]
    level = rng.uniform(-30, -20)
    return x * 10 ** (level / 20) / np.sqrt(np.mean(active ** 2))


def noise(rng, kind, seconds):
    n = int(seconds * FS)
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "lowpass":
        sos = butter(4, 1000, btype="low", fs=FS, output="sos")
        x = sosfilt(sos, rng.standard_normal(n + 2000))[2000:]
    elif kind == "babble":
        x = np.zeros(n)
        for _ in range(10):
            spk = speaker(rng)
            talker = []
            length = 0
            while length < n:
                u = utterance(rng, rng.uniform(2, 4), spk)
                talker.append(u)
                length += len(u)
            x += np.roll(np.concatenate(talker)[:n], int(rng.integers(n)))
    else:
        raise ValueError("unknown noise type %r" % kind)
    return 0.1 * x / np.sqrt(np.mean(x ** 2))


def make_corpus(out_dir, minutes=20.0, seed=0, n_train_speakers=16,
                n_test_speakers=4, test_per_speaker=10, validation_fraction=0.2,
                utt_seconds=(2.5, 4.0), noise_seconds=(120.0, 40.0)):
    """Write a synthetic corpus and its manifest; return the manifest path.

    ``minutes`` is the total speech duration over all splits.  Test
    utterances come from separate speakers and are paired with separate
    noise recordings.
    """
    rng = np.random.default_rng(seed)
    os.makedirs(os.path.join(out_dir, "speech"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "noise"), exist_ok=True)
    noise_paths = {}
    for split, secs in zip(("train", "test"), noise_seconds):
        for kind in NOISE_TYPES:
            path = os.path.join("noise", "%s_%s.wav" % (kind, split))
            write_wav(os.path.join(out_dir, path), noise(rng, kind, secs))
            noise_paths[kind, split] = (path, secs)

    mean_len = sum(utt_seconds) / 2
    n_test = n_test_speakers * test_per_speaker
    n_trainval = max(int(round(minutes * 60 / mean_len)) - n_test, 2)
    train_spk = [speaker(rng) for _ in range(n_train_speakers)]
    test_spk = [speaker(rng) for _ in range(n_test_speakers)]
    n_val = max(1, int(round(validation_fraction * n_trainval)))
    split_of = ["validation"] * n_val + ["train"] * (n_trainval - n_val)
    rng.shuffle(split_of)

    plan = [(train_spk[i % n_train_speakers], "spk%02d" % (i % n_train_speakers), split_of[i])
            for i in range(n_trainval)]
    plan += [(test_spk[i % n_test_speakers], "tst%02d" % (i % n_test_speakers), "test")
             for i in range(n_test)]
    entries = []
    for i, (spk, spk_name, split) in enumerate(plan):
        x = utterance(rng, rng.uniform(*utt_seconds), spk)
        path = os.path.join("speech", "%s_%04d.wav" % (spk_name, i))
        write_wav(os.path.join(out_dir, path), x)
        kind = NOISE_TYPES[i % len(NOISE_TYPES)]
        npath, nsecs = noise_paths[kind, "test" if split == "test" else "train"]
        offset = round(rng.uniform(0, nsecs - len(x) / FS - 0.01), 4)
        entries.append(ManifestEntry(path, npath, offset, split, kind))
    manifest = os.path.join(out_dir, "manifest.tsv")
    write_manifest(manifest, entries)
    return manifest
