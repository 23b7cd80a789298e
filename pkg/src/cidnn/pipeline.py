"""Features, mask application, training data and the training loop.

The network sees ``2c+1`` context frames of normalised noisy magnitudes
and emits a 129-bin mask.  The loss compares ``mask * |Y|`` (the masked
noisy magnitude of the centre frame) to the target magnitude, so the
mask is learnt implicitly.  Targets are either the same mixture with the
noise attenuated by ``target_delta_db`` ("noisy_delta") or clean speech.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import dsp, levels, nn
from .audio_io import read_wav

log = logging.getLogger(__name__)

EPS_S = 1e-8
MIN_STATS_FRAMES = 1000
EVAL_CHUNK = 4096

# context frames per side and hidden layer widths per preset
PRESETS = {
    "basic": (2, (1024, 512, 512, 512, 256)),
    "single2": (4, (1400, 800, 512, 512, 512, 256)),
    "single3": (6, (1800, 750, 512, 512, 512, 512, 256)),
}
TARGET_KINDS = ("noisy_delta", "clean")


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.maximum(np.asarray(self.std, dtype=float), EPS_S)

    def normalize(self, mag):
        return (mag - self.mean) / self.std


def compute_norm_stats(frames, min_frames=MIN_STATS_FRAMES):
    """Per-bin mean and standard deviation of magnitude frames.

    ``frames`` is an ``(N, 129)`` array or an iterable of such blocks;
    blocks are merged with the pairwise (Chan et al.) update so that very
    large corpora never need to be held at once.
    """
    if isinstance(frames, np.ndarray):
        frames = [frames]
    n = 0
    mean = None
    m2 = None
    shift = None
    for block in frames:
        block = np.asarray(block, dtype=float)
        if block.ndim != 2 or len(block) == 0:
            continue
        # accumulate around the first frame for conditioning
        if shift is None:
            shift = block[0].copy()
        block = block - shift
        nb = len(block)
        mb = block.mean(axis=0)
        m2b = ((block - mb) ** 2).sum(axis=0)
        if mean is None:
            n, mean, m2 = nb, mb, m2b
            continue
        delta = mb - mean
        tot = n + nb
        mean = mean + delta * (nb / tot)
        m2 = m2 + m2b + delta ** 2 * (n * nb / tot)
        n = tot
    if n < min_frames:
        raise ValueError("need at least %d frames for normalisation statistics, got %d"
                         % (min_frames, n))
    return NormStats(mean + shift, np.sqrt(m2 / n))


def context_of(net):
    """Context frames per side implied by the network's input width."""
    frames, rem = divmod(net.in_dim, dsp.N_BINS)
    if rem or frames % 2 == 0:
        raise ValueError("input width %d is not an odd multiple of %d"
                         % (net.in_dim, dsp.N_BINS))
    return frames // 2


def context_index(n_frames, context):
    """``(n_frames, 2c+1)`` frame indices with edge replication."""
    offsets = np.arange(-context, context + 1)
    return np.clip(np.arange(n_frames)[:, None] + offsets, 0, n_frames - 1)


def feature_matrix(mag, stats, context=2):
    """Stacked normalised context windows for every frame of ``mag``."""
    norm = stats.normalize(np.asarray(mag, dtype=float))
    idx = context_index(len(norm), context)
    return norm[idx].reshape(len(norm), -1)


def make_features(spec, stats, frame, context=2):
    """Feature window of one frame: ``(2c+1)*129`` normalised magnitudes."""
    mag = np.abs(spec)
    if not 0 <= frame < len(mag):
        raise IndexError("frame %d out of range for %d frames" % (frame, len(mag)))
    idx = np.clip(np.arange(frame - context, frame + context + 1), 0, len(mag) - 1)
    return stats.normalize(mag[idx]).reshape(-1)


def predict_masks(net, stats, mag):
    """Evaluation-mode masks for every frame of a magnitude spectrogram."""
    feats = feature_matrix(mag, stats, context_of(net))
    out = np.empty((len(feats), net.out_dim))
    for start in range(0, len(feats), EVAL_CHUNK):
        out[start:start + EVAL_CHUNK] = nn.forward(net, feats[start:start + EVAL_CHUNK])[0]
    return out


def apply_masks(spec, masks):
    """Multiply the complex noisy spectrum by a real mask in [0, 1]."""
    masks = np.asarray(masks, dtype=float)
    if masks.shape != spec.shape:
        raise ValueError("mask shape %s does not match spectrogram %s"
                         % (masks.shape, spec.shape))
    if masks.size and (masks.min() < 0.0 or masks.max() > 1.0):
        raise ValueError("masks must lie in [0, 1]")
    return spec * masks


def enhance_stage(net, stats, spec):
    """One enhancement stage; returns the masked spectrogram and its masks."""
    spec = np.asarray(spec)
    masks = predict_masks(net, stats, np.abs(spec))
    return apply_masks(spec, masks), masks


def frame_loss(est_mag, target_mag):
    """Mean squared magnitude error over the 129 unique bins."""
    d = np.asarray(est_mag, dtype=float) - np.asarray(target_mag, dtype=float)
    return float(np.mean(d * d, axis=-1)) if d.ndim == 1 else np.mean(d * d, axis=-1)


@dataclass
class TrainingConfig:
    manifest: str = ""
    preset: str = "basic"
    target_kind: str = "noisy_delta"
    target_delta_db: float = 5.0
    snr_levels: tuple = levels.TRAINING_SNRS
    minibatch: int = 128
    dropout: float = 0.2
    epochs: int = 10
    learning_rate: float = 1e-4
    lr_decay: float = 1.0
    steps_per_epoch: int = 0        # 0 means one full pass over the data
    patience: int = 0               # epochs without improvement; 0 disables
    validation_frames: int = 0      # evenly spaced validation subset; 0 uses all
    validation_fraction: float = 0.2
    seed: int = 0
    log_every: int = 500

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError("unknown preset %r (expected one of %s)"
                             % (self.preset, ", ".join(PRESETS)))
        if self.target_kind not in TARGET_KINDS:
            raise ValueError("unknown target_kind %r" % self.target_kind)
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.minibatch < 2:
            raise ValueError("minibatch must hold at least 2 frames for batch norm")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.target_kind == "noisy_delta" and self.target_delta_db <= 0:
            raise ValueError("target_delta_db must be positive")
        self.snr_levels = tuple(float(s) for s in self.snr_levels)

    @property
    def context(self):
        return PRESETS[self.preset][0]

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append("%s = %s" % (f.name, v))
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()

    @classmethod
    def from_text(cls, text, **overrides):
        """Parse ``key = value`` lines; ``overrides`` win over the file."""
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError("config line %d: expected 'key = value'" % lineno)
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in types:
                raise ValueError("config line %d: unknown key %r" % (lineno, key))
            values[key] = _convert(key, types[key], value)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def _convert(key, typ, value):
    try:
        if typ in ("int", int):
            return int(value)
        if typ in ("float", float):
            return float(value)
        if typ in ("tuple", tuple):
            return tuple(float(v) for v in value.replace(" ", "").split(",") if v)
    except ValueError:
        raise ValueError("config key %r: bad value %r" % (key, value)) from None
    return value


def build_network(cfg):
    context, hidden = PRESETS[cfg.preset]
    specs = nn.stack((2 * context + 1) * dsp.N_BINS, hidden, dsp.N_BINS, cfg.dropout)
    return nn.init_mlp(specs, nn.all_bypasses(specs), seed=cfg.seed)


@dataclass
class TrainingSet:
    """Frames of all mixtures, stored once, plus per-example context indices.

    ``inputs[index[i]]`` are the context frames of example ``i`` and
    ``targets[index[i, c]]`` its target (``c`` = context).  Magnitudes are
    held in float32 to bound memory; every computation promotes to float64.
    """

    inputs: np.ndarray
    targets: np.ndarray
    index: np.ndarray
    context: int
    order: np.ndarray = None
    sources: list = field(default_factory=list)

    def __len__(self):
        return len(self.index)

    def batch(self, rows, stats):
        idx = self.index[rows]
        x = stats.normalize(self.inputs[idx].astype(float)).reshape(len(rows), -1)
        centre = idx[:, self.context]
        return x, self.inputs[centre].astype(float), self.targets[centre].astype(float)

    def examples(self, stats):
        """Yield ``(feature_window, target_mag)`` pairs in shuffled order."""
        order = self.order if self.order is not None else np.arange(len(self))
        for i in order:
            x, _, t = self.batch(np.array([i]), stats)
            yield x[0], t[0]


def mixture_magnitudes(speech, noise, snr_db, cfg, offset=None):
    """Input and target magnitude spectrograms of one mixture."""
    mix, scaled = levels.mix_at_snr(speech, noise, snr_db, offset=offset)
    if cfg.target_kind == "clean":
        target = speech
    else:
        target = levels.make_noisy_target(speech, scaled, cfg.target_delta_db)
    return np.abs(dsp.analyze(mix)), np.abs(dsp.analyze(target))


def build_training_set(entries, cfg, shuffle=True, loader=read_wav):
    """Mix every utterance at every configured SNR and collect all frames.

    The example count is ``len(entries) * len(cfg.snr_levels) * frames``.
    """
    inputs, targets, index, sources = [], [], [], []
    base = 0
    cache = {}
    for e in entries:
        try:
            speech = loader(e.speech)
            if e.noise not in cache:
                cache[e.noise] = loader(e.noise)
            noise = cache[e.noise]
        except (OSError, ValueError) as exc:
            raise type(exc)("while loading %s / %s: %s" % (e.speech, e.noise, exc)) from exc
        for snr in cfg.snr_levels:
            mag_in, mag_t = mixture_magnitudes(speech, noise, snr, cfg, e.offset_samples())
            n = len(mag_in)
            inputs.append(mag_in.astype(np.float32))
            targets.append(mag_t.astype(np.float32))
            index.append((base + context_index(n, cfg.context)).astype(np.int32))
            sources.append((e.speech, snr, n))
            base += n
    if not inputs:
        raise ValueError("no training material")
    ts = TrainingSet(np.concatenate(inputs), np.concatenate(targets),
                     np.concatenate(index), cfg.context, sources=sources)
    if shuffle:
        ts.order = np.random.default_rng(cfg.seed).permutation(len(ts))
    return ts


def split_entries(entries, cfg):
    """Training and validation entries; carves a seeded fraction if none are marked."""
    train = [e for e in entries if e.split == "train"]
    val = [e for e in entries if e.split == "validation"]
    if not train:
        raise ValueError("manifest has no training entries")
    if not val:
        rng = np.random.default_rng(cfg.seed)
        perm = rng.permutation(len(train))
        n_val = max(1, int(round(cfg.validation_fraction * len(train))))
        if n_val >= len(train):
            raise ValueError("too few training entries to hold out validation data")
        val = [train[i] for i in sorted(perm[:n_val])]
        train = [train[i] for i in sorted(perm[n_val:])]
    return train, val


def masked_mse(mask, mag, target):
    """Batch loss and its gradient w.r.t. the mask."""
    diff = mask * mag - target
    loss = float(np.mean(diff * diff))
    return loss, (2.0 / diff.size) * diff * mag


def evaluate_loss(net, data, stats, rows=None, chunk=EVAL_CHUNK):
    """Evaluation-mode loss over ``rows`` of ``data`` (all rows by default)."""
    rows = np.arange(len(data)) if rows is None else np.asarray(rows)
    total = 0.0
    for start in range(0, len(rows), chunk):
        x, mag, target = data.batch(rows[start:start + chunk], stats)
        out = nn.forward(net, x)[0]
        d = out * mag - target
        total += float(np.sum(d * d))
    return total / (len(rows) * dsp.N_BINS)


class TrainingDiverged(RuntimeError):
    pass


def train(cfg, entries, stats=None, progress=None, loader=read_wav):
    """Train a mask network; returns ``(net, stats, log_lines)``.

    The parameters with the lowest validation loss are returned.  With
    ``cfg.epochs == 0`` the freshly initialised network is returned.
    """
    train_entries, val_entries = split_entries(entries, cfg)
    train_set = build_training_set(train_entries, cfg, loader=loader)
    val_set = build_training_set(val_entries, cfg, shuffle=False, loader=loader)
    if stats is None:
        stats = compute_norm_stats(train_set.inputs)
    net = build_network(cfg)
    lines = ["# examples train=%d validation=%d weights=%d"
             % (len(train_set), len(val_set), net.num_weights())]
    if cfg.epochs == 0:
        return net, stats, lines

    val_rows = None
    if cfg.validation_frames and cfg.validation_frames < len(val_set):
        val_rows = np.linspace(0, len(val_set) - 1, cfg.validation_frames).astype(np.int64)
    opt = nn.Adam(net.parameters(), lr=cfg.learning_rate)
    best, best_loss, stale = net.copy(), math.inf, 0
    step = 0
    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        order = (train_set.order if epoch == 1
                 else np.random.default_rng([cfg.seed, epoch]).permutation(n))
        n_batches = n // cfg.minibatch
        if cfg.steps_per_epoch:
            n_batches = min(n_batches, cfg.steps_per_epoch)
        running = 0.0
        for b in range(n_batches):
            rows = np.sort(order[b * cfg.minibatch:(b + 1) * cfg.minibatch])
            x, mag, target = train_set.batch(rows, stats)
            out, cache = nn.forward(net, x, train=True, seed=[cfg.seed, step])
            loss, grad = masked_mse(out, mag, target)
            if not math.isfinite(loss):
                raise TrainingDiverged("non-finite training loss at epoch %d step %d "
                                       "(learning rate %g)" % (epoch, step, opt.lr))
            opt.step(net.parameters(), nn.backward(net, cache, grad))
            running += loss
            step += 1
            if cfg.log_every and step % cfg.log_every == 0:
                lines.append("epoch=%d step=%d train_loss=%.8g" % (epoch, step, running / (b + 1)))
                if progress:
                    progress(lines[-1])
        train_loss = running / max(n_batches, 1)
        val_loss = evaluate_loss(net, val_set, stats, val_rows)
        if not math.isfinite(val_loss):
            raise TrainingDiverged("non-finite validation loss after epoch %d" % epoch)
        lines.append("epoch=%d step=%d train_loss=%.8g val_loss=%.8g"
                     % (epoch, step, train_loss, val_loss))
        if progress:
            progress(lines[-1])
        if val_loss < best_loss:
            best, best_loss, stale = net.copy(), val_loss, 0
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                lines.append("# early stop after epoch %d" % epoch)
                break
        opt.lr *= cfg.lr_decay
    lines.append("# best val_loss=%.8g" % best_loss)
    return best, stats, lines
