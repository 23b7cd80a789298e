import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cidnn import dsp, levels, nn, pipeline
from cidnn.audio_io import ManifestEntry
from cidnn.pipeline import NormStats, TrainingConfig

from helpers import forced_mask_net, tiny_net


def test_norm_stats_identical_frames_hit_floor():
    frames = np.tile(np.linspace(0.1, 3.0, dsp.N_BINS), (1200, 1))
    stats = pipeline.compute_norm_stats(frames)
    assert np.all(stats.std == pipeline.EPS_S)
    assert np.all(stats.normalize(frames) == 0.0)


def test_norm_stats_self_normalisation(rng):
    frames = rng.gamma(2.0, size=(5000, dsp.N_BINS)) * rng.uniform(0.1, 10, dsp.N_BINS)
    stats = pipeline.compute_norm_stats(frames)
    z = stats.normalize(frames)
    assert np.max(np.abs(z.mean(axis=0))) < 1e-9
    assert np.max(np.abs(z.std(axis=0) - 1.0)) < 1e-6


def test_norm_stats_streaming_matches_two_pass(rng):
    frames = rng.exponential(size=(10000, dsp.N_BINS)) * 5.0 + 100.0
    blocks = np.array_split(frames, [7, 1000, 1001, 4500, 9000])
    streamed = pipeline.compute_norm_stats(iter(blocks))
    # two-pass oracle
    mean = frames.sum(axis=0) / len(frames)
    std = np.sqrt(((frames - mean) ** 2).sum(axis=0) / len(frames))
    assert np.max(np.abs(streamed.mean - mean)) < 1e-10
    assert np.max(np.abs(streamed.std - std)) < 1e-10


def test_norm_stats_needs_enough_frames():
    with pytest.raises(ValueError, match="at least 1000"):
        pipeline.compute_norm_stats(np.ones((999, dsp.N_BINS)))


def unit_stats():
    return NormStats(np.zeros(dsp.N_BINS), np.ones(dsp.N_BINS))


def test_features_of_constant_spectrogram():
    spec = np.full((12, dsp.N_BINS), 2.0 + 1.0j)
    stats = NormStats(np.full(dsp.N_BINS, 1.0), np.full(dsp.N_BINS, 0.5))
    f = pipeline.make_features(spec, stats, 6).reshape(5, dsp.N_BINS)
    assert np.all(f == f[0])
    assert np.allclose(f[0], (abs(2.0 + 1.0j) - 1.0) / 0.5)


def test_features_edge_replication_and_width(rng):
    spec = rng.standard_normal((8, dsp.N_BINS)) + 1j * rng.standard_normal((8, dsp.N_BINS))
    f = pipeline.make_features(spec, unit_stats(), 0)
    assert f.shape == (645,)
    sub = f.reshape(5, dsp.N_BINS)
    assert np.array_equal(sub[0], sub[2]) and np.array_equal(sub[1], sub[2])
    assert np.array_equal(sub[3], np.abs(spec[1]))
    last = pipeline.make_features(spec, unit_stats(), 7).reshape(5, dsp.N_BINS)
    assert np.array_equal(last[3], last[2]) and np.array_equal(last[4], last[2])


def test_feature_matrix_rows_match_single_windows(rng):
    spec = rng.standard_normal((9, dsp.N_BINS)) * (1 + 0.5j)
    stats = NormStats(rng.uniform(0, 1, dsp.N_BINS), rng.uniform(0.5, 2, dsp.N_BINS))
    for context in (2, 4, 6):
        mat = pipeline.feature_matrix(np.abs(spec), stats, context)
        assert mat.shape == (9, (2 * context + 1) * dsp.N_BINS)
        for l in range(9):
            assert np.array_equal(mat[l], pipeline.make_features(spec, stats, l, context))


def test_make_features_rejects_out_of_range_frame():
    with pytest.raises(IndexError):
        pipeline.make_features(np.ones((3, dsp.N_BINS)), unit_stats(), 3)


def random_spec(rng, frames=40):
    return rng.standard_normal((frames, dsp.N_BINS)) + 1j * rng.standard_normal((frames, dsp.N_BINS))


def test_forced_unit_mask_is_identity(rng):
    spec = random_spec(rng)
    out, masks = pipeline.enhance_stage(forced_mask_net(1.0), unit_stats(), spec)
    assert np.all(masks == 1.0)
    assert np.array_equal(out, spec)


def test_forced_zero_mask_silences(rng):
    out, masks = pipeline.enhance_stage(forced_mask_net(0.0), unit_stats(), random_spec(rng))
    assert np.all(masks == 0.0)
    assert not np.any(out)


def test_stage_keeps_phase_and_bounds_masks(rng):
    spec = random_spec(rng)
    net = nn.init_mlp(*(lambda s: (s, nn.all_bypasses(s)))(
        nn.stack(645, [32, 32], dsp.N_BINS)), seed=3)
    out, masks = pipeline.enhance_stage(net, unit_stats(), spec)
    assert masks.shape == spec.shape
    assert masks.min() >= 0.0 and masks.max() <= 1.0
    nz = np.abs(out) > 0
    assert np.allclose(np.angle(out[nz]), np.angle(spec[nz]), atol=1e-12)


def test_apply_masks_rejects_bad_masks():
    spec = np.ones((2, dsp.N_BINS), complex)
    with pytest.raises(ValueError, match="shape"):
        pipeline.apply_masks(spec, np.ones((3, dsp.N_BINS)))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        pipeline.apply_masks(spec, np.full((2, dsp.N_BINS), 1.5))


def test_frame_loss_values(rng):
    t = rng.uniform(0, 2, dsp.N_BINS)
    assert pipeline.frame_loss(t, t) == 0.0
    assert pipeline.frame_loss(t + 0.3, t) == pytest.approx(0.09, abs=1e-15)
    est = rng.uniform(0, 2, dsp.N_BINS)
    total = 0.0
    for k in range(dsp.N_BINS):
        total += (est[k] - t[k]) ** 2
    assert abs(pipeline.frame_loss(est, t) - total / 129) < 1e-12


def test_masked_mse_gradient(rng):
    mask, mag, target = rng.uniform(size=(3, 4, dsp.N_BINS))
    loss, grad = pipeline.masked_mse(mask, mag, target)
    assert loss == pytest.approx(np.mean([pipeline.frame_loss(mask[i] * mag[i], target[i])
                                          for i in range(4)]))
    h = 1e-6
    i, k = 2, 17
    bumped = mask.copy()
    bumped[i, k] += h
    assert (pipeline.masked_mse(bumped, mag, target)[0] - loss) / h == pytest.approx(
        grad[i, k], rel=1e-4)


# -- configuration ---------------------------------------------------------

def test_config_parsing_and_overrides():
    text = """
        # comment line
        manifest = corpus/manifest.tsv
        preset = single2      # trailing comment
        target_kind = clean
        snr_levels = -5, 0, 5
        epochs = 3
        learning_rate = 0.001
    """
    cfg = TrainingConfig.from_text(text, epochs=7)
    assert cfg.preset == "single2" and cfg.context == 4
    assert cfg.target_kind == "clean"
    assert cfg.snr_levels == (-5.0, 0.0, 5.0)
    assert cfg.epochs == 7 and cfg.learning_rate == 1e-3
    assert TrainingConfig.from_text(cfg.to_text()) == cfg
    assert cfg.digest() == TrainingConfig.from_text(cfg.to_text()).digest()
    assert cfg.digest() != TrainingConfig().digest()


@pytest.mark.parametrize("text, msg", [
    ("bogus = 1", "unknown key"),
    ("epochs 3", "key = value"),
    ("epochs = three", "bad value"),
    ("preset = huge", "unknown preset"),
    ("validation_fraction = 1.0", "validation_fraction"),
    ("target_kind = mystery", "target_kind"),
])
def test_config_errors(text, msg):
    with pytest.raises(ValueError, match=msg):
        TrainingConfig.from_text(text)


@pytest.mark.parametrize("preset, width, n_bypass", [
    ("basic", 645, 3), ("single2", 1161, 3), ("single3", 1677, 6)])
def test_presets(preset, width, n_bypass):
    net = pipeline.build_network(TrainingConfig(preset=preset))
    assert net.in_dim == width and net.out_dim == dsp.N_BINS
    assert len(net.bypasses) == n_bypass
    assert pipeline.context_of(net) == TrainingConfig(preset=preset).context


# -- training data ---------------------------------------------------------

def fake_corpus(rng, n_utts=4, seconds=0.5):
    from cidnn import synth
    files = {}
    entries = []
    files["noise.wav"] = synth.noise(rng, "white", 6.0)
    for i in range(n_utts):
        name = "utt%d.wav" % i
        files[name] = synth.utterance(rng, seconds)
        split = "validation" if i == 0 else "train"
        entries.append(ManifestEntry(name, "noise.wav", 0.3 * i, split, "white"))
    return files, entries


def test_training_set_counts_and_targets(rng):
    files, entries = fake_corpus(rng, 2)
    cfg = TrainingConfig()
    data = pipeline.build_training_set(entries, cfg, loader=files.__getitem__)
    frames = [dsp.num_frames(len(files[e.speech])) for e in entries]
    assert len(data) == 6 * sum(frames)
    assert data.index.shape == (len(data), 5)
    assert sorted(data.order) == list(range(len(data)))
    # each example's context rows stay inside its own mixture
    for start, (_, _, n) in zip(np.cumsum([0] + [s[2] for s in data.sources[:-1]]),
                                data.sources):
        block = data.index[start:start + n]
        assert block.min() >= start and block.max() < start + n


def test_training_set_shuffle_is_seeded(rng):
    files, entries = fake_corpus(rng, 2)
    a = pipeline.build_training_set(entries, TrainingConfig(seed=5), loader=files.__getitem__)
    b = pipeline.build_training_set(entries, TrainingConfig(seed=5), loader=files.__getitem__)
    c = pipeline.build_training_set(entries, TrainingConfig(seed=6), loader=files.__getitem__)
    assert np.array_equal(a.order, b.order)
    assert not np.array_equal(a.order, c.order)
    stats = unit_stats()
    ex_a = list(a.examples(stats))[:20]
    ex_b = list(b.examples(stats))[:20]
    assert all(np.array_equal(x[0], y[0]) and np.array_equal(x[1], y[1])
               for x, y in zip(ex_a, ex_b))
    assert ex_a[0][0].shape == (645,) and ex_a[0][1].shape == (dsp.N_BINS,)


def test_clean_targets_at_high_snr(rng):
    files, entries = fake_corpus(rng, 1)
    cfg = TrainingConfig(target_kind="clean", snr_levels=(20.0,))
    data = pipeline.build_training_set(entries, cfg, shuffle=False, loader=files.__getitem__)
    clean = np.abs(dsp.analyze(files["utt0.wav"])).astype(np.float32)
    assert np.array_equal(data.targets, clean)


def test_noisy_target_remeasures_at_plus_five(rng):
    files, entries = fake_corpus(rng, 1, seconds=2.0)
    speech, noise = files["utt0.wav"], files["noise.wav"]
    cfg = TrainingConfig(snr_levels=(-5.0,))
    data = pipeline.build_training_set(entries, cfg, shuffle=False, loader=files.__getitem__)
    # rebuild the target's noise component and re-measure its SNR
    _, scaled = levels.mix_at_snr(speech, noise, -5.0, offset=entries[0].offset_samples())
    target = levels.make_noisy_target(speech, scaled, 5.0)
    assert np.array_equal(data.targets, np.abs(dsp.analyze(target)).astype(np.float32))
    assert levels.snr_db(speech, target - speech) == pytest.approx(0.0, abs=0.05)


def test_loader_errors_carry_file_context(rng):
    entries = [ManifestEntry("missing.wav", "noise.wav", 0.0, "train", "white")]

    def loader(path):
        raise FileNotFoundError("no such file")

    with pytest.raises(FileNotFoundError, match="missing.wav"):
        pipeline.build_training_set(entries, TrainingConfig(), loader=loader)


def test_split_entries_carves_validation(rng):
    entries = [ManifestEntry("s%d" % i, "n", 0.0, "train", "w") for i in range(10)]
    train, val = pipeline.split_entries(entries, TrainingConfig(seed=1))
    assert len(val) == 2 and len(train) == 8
    assert not set(train) & set(val)
    again = pipeline.split_entries(entries, TrainingConfig(seed=1))
    assert again == (train, val)


# -- training loop ---------------------------------------------------------

def small_train(files, entries, monkeypatch, **kw):
    monkeypatch.setitem(pipeline.PRESETS, "tiny", (2, (48, 32, 32)))
    cfg = TrainingConfig(preset="tiny", minibatch=32, **kw)
    return pipeline.train(cfg, entries, loader=files.__getitem__)


def test_zero_epochs_returns_initial_network(rng, monkeypatch):
    files, entries = fake_corpus(rng, 4)
    net, stats, log = small_train(files, entries, monkeypatch, epochs=0)
    init = pipeline.build_network(TrainingConfig(preset="tiny", minibatch=32))
    assert all(np.array_equal(a, b) for a, b in zip(net.parameters(), init.parameters()))
    assert log and log[0].startswith("# examples")


def test_training_is_deterministic_and_learns(rng, monkeypatch):
    files, entries = fake_corpus(rng, 4, seconds=1.0)
    kw = dict(epochs=3, learning_rate=1e-3, seed=9, log_every=5)
    a, stats_a, log_a = small_train(files, entries, monkeypatch, **kw)
    b, stats_b, log_b = small_train(files, entries, monkeypatch, **kw)
    assert log_a == log_b
    assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))
    assert all(np.array_equal(x, y) for x, y in zip(a.running_var[:-1], b.running_var[:-1]))
    epochs = [l for l in log_a if l.startswith("epoch=") and "val_loss" in l]
    assert len(epochs) == 3
    val = [float(l.split("val_loss=")[1]) for l in epochs]
    assert min(val[1:]) < val[0]


def test_divergence_aborts_with_diagnostic(rng, monkeypatch):
    files, entries = fake_corpus(rng, 4)

    def bad_backward(net, cache, grad):
        return [np.full_like(p, np.nan) for p in net.parameters()]

    monkeypatch.setattr(pipeline.nn, "backward", bad_backward)
    with pytest.raises(pipeline.TrainingDiverged, match="non-finite .* epoch 1 step"):
        small_train(files, entries, monkeypatch, epochs=2)


@pytest.mark.slow
def test_basic_module_overfits_small_batch(rng):
    # capacity check: one fixed 128-frame batch, dropout off
    specs = nn.stack(645, [1024, 512, 512, 512, 256], dsp.N_BINS, dropout=0.0)
    net = nn.init_mlp(specs, nn.all_bypasses(specs), seed=0)
    x = rng.standard_normal((128, 645))
    mag = rng.uniform(0.5, 2.0, (128, dsp.N_BINS))
    target = mag * rng.uniform(0.05, 0.95, (128, dsp.N_BINS))
    opt = nn.Adam(net.parameters(), lr=1e-4)
    first = None
    for step in range(2000):
        out, cache = nn.forward(net, x, train=True, seed=step)
        loss, grad = pipeline.masked_mse(out, mag, target)
        first = loss if first is None else first
        if loss < 0.01 * first:
            break
        opt.step(net.parameters(), nn.backward(net, cache, grad))
    assert loss < 0.01 * first, (step, loss, first)
