"""16-bit PCM WAV files and tab-separated corpus manifests."""

import os
import wave
from dataclasses import dataclass

import numpy as np

from .dsp import SAMPLE_RATE

SPLITS = ("train", "validation", "test")


def read_wav(path):
    """Read a mono 16 kHz 16-bit PCM WAV file as floats in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            data = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise ValueError("%s: unsupported WAV file, expected 16-bit PCM (%s)"
                         % (path, exc)) from None
    except EOFError:
        raise ValueError("%s: truncated WAV file" % path) from None
    if channels != 1:
        raise ValueError("%s: expected mono, got %d channels" % (path, channels))
    if rate != SAMPLE_RATE:
        raise ValueError("%s: expected %d Hz, got %d Hz" % (path, SAMPLE_RATE, rate))
    if width != 2:
        raise ValueError("%s: expected 16-bit PCM, got %d-bit samples" % (path, 8 * width))
    return np.frombuffer(data, dtype="<i2").astype(float) / 32768.0


def write_wav(path, x):
    """Write ``x`` as mono 16 kHz 16-bit PCM, clipping to the int16 range."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("refusing to write non-finite samples to %s" % path)
    q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(q.tobytes())


@dataclass(frozen=True)
class ManifestEntry:
    speech: str
    noise: str
    offset: float      # seconds into the noise file
    split: str
    label: str         # noise type

    def offset_samples(self):
        return int(round(self.offset * SAMPLE_RATE))


def read_manifest(path, check_paths=True):
    """Parse ``speech<TAB>noise<TAB>offset<TAB>split<TAB>label`` lines.

    Relative paths are resolved against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise ValueError("%s:%d: expected 5 tab-separated fields, got %d"
                                 % (path, lineno, len(fields)))
            speech, noise, offset, split, label = fields
            if split not in SPLITS:
                raise ValueError("%s:%d: unknown split %r" % (path, lineno, split))
            if not label:
                raise ValueError("%s:%d: empty noise label" % (path, lineno))
            try:
                offset = float(offset)
            except ValueError:
                raise ValueError("%s:%d: bad offset %r" % (path, lineno, offset)) from None
            speech = os.path.join(base, speech)
            noise = os.path.join(base, noise)
            if check_paths:
                for p in (speech, noise):
                    if not os.path.isfile(p):
                        raise FileNotFoundError("%s:%d: no such file %s" % (path, lineno, p))
            entries.append(ManifestEntry(speech, noise, offset, split, label))
    return entries


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for e in entries:
            f.write("%s\t%s\t%.4f\t%s\t%s\n" % (e.speech, e.noise, e.offset, e.split, e.label))


@dataclass(frozen=True)
class MixtureEntry:
    name: str
    mixture: str
    speech: str        # clean speech sidecar
    noise: str         # scaled-noise sidecar
    snr_db: float
    label: str


MIXTURE_FIELDS = ("name", "mixture", "speech", "noise", "snr_db", "label")


def write_mixture_list(path, entries):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("#" + "\t".join(MIXTURE_FIELDS) + "\n")
        for e in entries:
            f.write("%s\t%s\t%s\t%s\t%.6f\t%s\n"
                    % (e.name, e.mixture, e.speech, e.noise, e.snr_db, e.label))


def read_mixture_list(path):
    """Parse a mixture list written by :func:`write_mixture_list`."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != len(MIXTURE_FIELDS):
                raise ValueError("%s:%d: expected %d tab-separated fields, got %d"
                                 % (path, lineno, len(MIXTURE_FIELDS), len(fields)))
            name, mix, speech, noise, snr, label = fields
            try:
                snr = float(snr)
            except ValueError:
                raise ValueError("%s:%d: bad SNR %r" % (path, lineno, snr)) from None
            mix, speech, noise = (os.path.join(base, p) for p in (mix, speech, noise))
            entries.append(MixtureEntry(name, mix, speech, noise, snr, label))
    return entries
