import os
import struct
import wave

import numpy as np
import pytest

from cidnn import dsp, modelfile, nn
from cidnn.audio_io import (ManifestEntry, MixtureEntry, read_manifest, read_mixture_list,
                            read_wav, write_manifest, write_mixture_list, write_wav)
from cidnn.pipeline import NormStats, TrainingConfig, build_network

from helpers import tiny_net


def raw_wav(path, channels=1, rate=16000, width=2, frames=100):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(b"\0" * frames * channels * width)


def test_wav_round_trip(tmp_path, rng):
    x = rng.uniform(-1, 1, 5000)
    x[:4] = [1.0, -1.0, 1.5, -2.0]
    write_wav(tmp_path / "a.wav", x)
    y = read_wav(tmp_path / "a.wav")
    assert len(y) == len(x)
    assert np.max(np.abs(y - np.clip(x, -1, 1))) <= 1 / 32768


def test_wav_is_pcm16_mono_16k(tmp_path):
    write_wav(tmp_path / "a.wav", np.zeros(10))
    with wave.open(str(tmp_path / "a.wav")) as w:
        assert (w.getnchannels(), w.getsampwidth(), w.getframerate()) == (1, 2, 16000)


@pytest.mark.parametrize("kw, msg", [
    (dict(channels=2), "expected mono"),
    (dict(rate=44100), "expected 16000 Hz"),
    (dict(width=1), "expected 16-bit PCM"),
])
def test_wav_rejects_wrong_format(tmp_path, kw, msg):
    raw_wav(tmp_path / "bad.wav", **kw)
    with pytest.raises(ValueError, match=msg):
        read_wav(tmp_path / "bad.wav")


def test_wav_rejects_non_pcm(tmp_path):
    (tmp_path / "x.wav").write_bytes(b"RIFF\x24\0\0\0WAVEfmt \x10\0\0\0\x03\0\x01\0"
                                     b"\x80\x3e\0\0\0\xfa\0\0\x04\0\x20\0data\0\0\0\0")
    with pytest.raises(ValueError, match="16-bit PCM"):
        read_wav(tmp_path / "x.wav")


def test_wav_rejects_non_finite(tmp_path):
    with pytest.raises(ValueError, match="non-finite"):
        write_wav(tmp_path / "x.wav", np.array([0.0, np.nan]))


def test_manifest_round_trip(tmp_path):
    for name in ("s.wav", "n.wav"):
        write_wav(tmp_path / name, np.zeros(10))
    entries = [ManifestEntry("s.wav", "n.wav", 1.25, "train", "babble"),
               ManifestEntry("s.wav", "n.wav", 0.0, "test", "white")]
    write_manifest(tmp_path / "m.tsv", entries)
    back = read_manifest(tmp_path / "m.tsv")
    assert [(os.path.basename(e.speech), e.offset, e.split, e.label) for e in back] == [
        ("s.wav", 1.25, "train", "babble"), ("s.wav", 0.0, "test", "white")]
    assert back[0].offset_samples() == 20000
    assert os.path.isabs(back[0].noise)


@pytest.mark.parametrize("line, msg", [
    ("a\tb\t0\ttrain", "5 tab-separated"),
    ("a\tb\tx\ttrain\tw", "bad offset"),
    ("a\tb\t0\tdev\tw", "unknown split"),
    ("a\tb\t0\ttrain\t", "empty noise label"),
])
def test_manifest_errors(tmp_path, line, msg):
    (tmp_path / "m.tsv").write_text("# header\n\n" + line + "\n")
    with pytest.raises(ValueError, match=msg):
        read_manifest(tmp_path / "m.tsv", check_paths=False)


def test_manifest_missing_file(tmp_path):
    (tmp_path / "m.tsv").write_text("a.wav\tb.wav\t0\ttrain\tw\n")
    with pytest.raises(FileNotFoundError, match="a.wav"):
        read_manifest(tmp_path / "m.tsv")


def test_mixture_list_round_trip(tmp_path):
    entries = [MixtureEntry("u_snr0", "u_mix.wav", "u_s.wav", "u_n.wav", -5.0, "white")]
    write_mixture_list(tmp_path / "mixtures.tsv", entries)
    back = read_mixture_list(tmp_path / "mixtures.tsv")
    assert back[0].name == "u_snr0" and back[0].snr_db == -5.0
    assert back[0].speech == os.path.join(str(tmp_path), "u_s.wav")


# -- model files -----------------------------------------------------------

def stats_for(rng):
    return NormStats(rng.uniform(0, 2, dsp.N_BINS), rng.uniform(0.5, 2, dsp.N_BINS))


def f32(a):
    return np.asarray(a, dtype=np.float32).astype(float)


def test_model_round_trip_is_exact_at_32_bit(tmp_path, rng):
    net = build_network(TrainingConfig())
    net.running_mean[1][:] = rng.standard_normal(512)
    stats = stats_for(rng)
    digest = bytes(range(32))
    modelfile.save_model(tmp_path / "m.cidn", net, stats, digest)
    back, stats_back, digest_back = modelfile.load_model(tmp_path / "m.cidn")
    assert digest_back == digest
    assert back.specs == net.specs and back.bypasses == net.bypasses
    for a, b in zip(net.parameters() + net.running_mean + net.running_var,
                    back.parameters() + back.running_mean + back.running_var):
        assert np.array_equal(f32(a), b)
    assert np.array_equal(f32(stats.mean), stats_back.mean)
    # a second save of the loaded model is byte-identical
    modelfile.save_model(tmp_path / "m2.cidn", back, stats_back, digest)
    assert (tmp_path / "m.cidn").read_bytes() == (tmp_path / "m2.cidn").read_bytes()


def test_model_header_layout(tmp_path, rng):
    net = tiny_net()
    data = modelfile.model_bytes(net, stats_for(rng))
    assert data[:4] == b"CIDN"
    assert struct.unpack("<II", data[4:12]) == (modelfile.VERSION, len(net.specs))
    assert struct.unpack("<II", data[12:20]) == (645, 32)


def test_loaded_model_predicts_the_same(tmp_path, rng):
    net = tiny_net(seed=8)
    x = rng.standard_normal((64, 645))
    for i in range(5):
        nn.forward(net, x, train=True, seed=i)
    modelfile.save_model(tmp_path / "m.cidn", net, stats_for(rng))
    back = modelfile.load_model(tmp_path / "m.cidn")[0]
    assert np.max(np.abs(nn.forward(net, x)[0] - nn.forward(back, x)[0])) < 1e-6


def test_truncated_model_rejected(tmp_path, rng):
    data = modelfile.model_bytes(tiny_net(), stats_for(rng))
    for cut in (3, 10, 25, len(data) // 2, len(data) - 1):
        (tmp_path / "t.cidn").write_bytes(data[:cut])
        with pytest.raises(ValueError, match="truncated|bad magic"):
            modelfile.load_model(tmp_path / "t.cidn")


def test_corrupt_model_rejected(tmp_path, rng):
    data = modelfile.model_bytes(tiny_net(), stats_for(rng))
    with pytest.raises(ValueError, match="bad magic"):
        modelfile.parse_model(b"XIDN" + data[4:])
    with pytest.raises(ValueError, match="version"):
        modelfile.parse_model(data[:4] + struct.pack("<I", 99) + data[8:])
    with pytest.raises(ValueError, match="trailing"):
        modelfile.parse_model(data + b"\0")


def test_stats_file_round_trip(tmp_path, rng):
    stats = stats_for(rng)
    modelfile.save_stats(tmp_path / "s.bin", stats)
    back = modelfile.load_stats(tmp_path / "s.bin")
    assert np.array_equal(back.std, f32(stats.std))
    with pytest.raises(ValueError, match="bad magic"):
        modelfile.load_model(tmp_path / "s.bin")
