"""Component-wise evaluation: SNR gain, SSDR, WLAKR and STOI.

Clean speech and noise are passed separately through the same total mask
that was applied to the mixture ("filtered components"), so each measure
can look at what the system did to speech and to noise in isolation.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from math import gcd

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import resample_poly

from . import dsp, levels
from .classical import EPS_P

SNR_CAP_DB = 99.0

SSDR_FRAME = 256
SSDR_SHIFT = 128
SSDR_MAX_DB = 30.0
SSDR_MIN_DB = -10.0
SSDR_ACTIVE_RANGE_DB = 30.0
SSDR_MAX_LAG = 64

STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0
_TINY = np.finfo(float).eps

CSV_HEADER = ("noise_type", "input_snr_db", "method", "stages",
              "delta_snr_db", "ssdr_db", "wlakr_abs", "stoi")
PESQ_NOTE = "pesq: not implemented (ITU P.862)"


def filtered_components(total_masks, clean_spec, noise_spec):
    """Clean speech and noise each filtered by the mixture's total mask."""
    total_masks = np.asarray(total_masks, dtype=float)
    if not (total_masks.shape == np.shape(clean_spec) == np.shape(noise_spec)):
        raise ValueError("shape mismatch: masks %s, speech %s, noise %s"
                         % (total_masks.shape, np.shape(clean_spec), np.shape(noise_spec)))
    return (dsp.synthesize(clean_spec * total_masks),
            dsp.synthesize(noise_spec * total_masks))


def delta_snr(s, d, s_filt, d_filt):
    """Output SNR minus input SNR in dB; capped at 99 dB for silent residual noise."""
    snr_in = levels.snr_db(s, d)
    if not np.any(d_filt):
        return SNR_CAP_DB
    return min(levels.snr_db(s_filt, d_filt) - snr_in, SNR_CAP_DB)


def _frames(x, frame=SSDR_FRAME, shift=SSDR_SHIFT):
    n = 1 + (len(x) - frame) // shift
    return sliding_window_view(x, frame)[::shift][:n]


def ssdr_with_lag(s, s_filt, max_lag=SSDR_MAX_LAG):
    """Segmental speech-to-speech-distortion ratio and the alignment lag used.

    The filtered signal is compared at ``s_filt[n + lag]`` with one lag per
    utterance chosen to maximise the result.  A frame whose filtered speech
    is entirely zero scores the lower clamp.
    """
    s = np.asarray(s, dtype=float)
    s_filt = np.asarray(s_filt, dtype=float)
    if s.shape != s_filt.shape or s.ndim != 1:
        raise ValueError("ssdr needs two 1-D signals of equal length")
    if len(s) < SSDR_FRAME:
        raise ValueError("signal shorter than one frame")
    energy = np.sum(_frames(s) ** 2, axis=1)
    peak = energy.max()
    if peak <= 0.0:
        raise ValueError("no speech-active frames")
    active = energy >= peak * 10.0 ** (-SSDR_ACTIVE_RANGE_DB / 10.0)
    e_act = energy[active]

    best, best_lag = -math.inf, 0
    # lags ordered by magnitude so that ties resolve towards zero
    for lag in sorted(range(-max_lag, max_lag + 1), key=lambda k: (abs(k), k)):
        shifted = np.zeros_like(s_filt)
        if lag >= 0:
            shifted[:len(s) - lag] = s_filt[lag:]
        else:
            shifted[-lag:] = s_filt[:lag]
        fr_shift = _frames(shifted)[active]
        err = np.sum((fr_shift - _frames(s)[active]) ** 2, axis=1)
        with np.errstate(divide="ignore"):
            ratio = 10.0 * np.log10(e_act / err)
        seg = np.clip(ratio, SSDR_MIN_DB, SSDR_MAX_DB)
        seg[~np.any(fr_shift, axis=1)] = SSDR_MIN_DB
        value = float(seg.mean())
        if value > best:
            best, best_lag = value, lag
    return best, best_lag


def ssdr(s, s_filt, max_lag=SSDR_MAX_LAG):
    return ssdr_with_lag(s, s_filt, max_lag)[0]


def _kurtosis(frames):
    c = frames - frames.mean(axis=1, keepdims=True)
    m2 = np.mean(c ** 2, axis=1)
    m4 = np.mean(c ** 4, axis=1)
    return m2, m4


def wlakr(d, d_filt):
    """Energy-weighted mean of per-frame log10 kurtosis ratios (signed)."""
    d = np.asarray(d, dtype=float)
    d_filt = np.asarray(d_filt, dtype=float)
    if d.shape != d_filt.shape or d.ndim != 1:
        raise ValueError("wlakr needs two 1-D signals of equal length")
    if len(d) < SSDR_FRAME:
        raise ValueError("signal shorter than one frame")
    m2_ref, m4_ref = _kurtosis(_frames(d))
    m2_out, m4_out = _kurtosis(_frames(d_filt))
    keep = (m2_ref >= EPS_P) & (m2_out >= EPS_P)
    if not keep.any():
        raise ValueError("no frames with measurable noise")
    k_ref = m4_ref[keep] / m2_ref[keep] ** 2
    k_out = m4_out[keep] / m2_out[keep] ** 2
    weights = np.sum(_frames(d)[keep] ** 2, axis=1)
    weights /= weights.sum()
    # identical frames give an exact zero rather than a rounding residue
    score = np.where(k_out == k_ref, 0.0, np.log10(k_out / k_ref))
    return float(np.sum(weights * score))


def _third_octave_matrix(fs=STOI_FS, nfft=STOI_NFFT, n_bands=STOI_BANDS,
                         min_freq=STOI_MIN_FREQ):
    freqs = np.linspace(0, fs, nfft + 1)[:nfft // 2 + 1]
    k = np.arange(n_bands)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6.0)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6.0)
    bands = np.zeros((n_bands, len(freqs)))
    for i in range(n_bands):
        a = int(np.argmin(np.abs(freqs - lo[i])))
        b = int(np.argmin(np.abs(freqs - hi[i])))
        bands[i, a:b] = 1.0
    return bands


def _stoi_window():
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _drop_silent_frames(x, y):
    """Discard frames of both signals where ``x`` is 40 dB below its loudest frame."""
    hop = STOI_FRAME // 2
    w = _stoi_window()
    xf = _frames(x, STOI_FRAME, hop) * w
    yf = _frames(y, STOI_FRAME, hop) * w
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _TINY)
    keep = energy > energy.max() - STOI_DYN_RANGE_DB
    xf, yf = xf[keep], yf[keep]
    n = (len(xf) - 1) * hop + STOI_FRAME if len(xf) else 0
    x_out, y_out = np.zeros(n), np.zeros(n)
    for i in range(len(xf)):
        x_out[i * hop:i * hop + STOI_FRAME] += xf[i]
        y_out[i * hop:i * hop + STOI_FRAME] += yf[i]
    return x_out, y_out


def _band_envelopes(x, bands):
    frames = _frames(x, STOI_FRAME, STOI_FRAME // 2) * _stoi_window()
    power = np.abs(np.fft.rfft(frames, n=STOI_NFFT, axis=1)) ** 2
    return np.sqrt(power @ bands.T).T        # bands x frames


def stoi(s, x, fs=dsp.SAMPLE_RATE):
    """Short-time objective intelligibility of ``x`` against clean ``s``."""
    s = np.asarray(s, dtype=float)
    x = np.asarray(x, dtype=float)
    if s.shape != x.shape or s.ndim != 1:
        raise ValueError("stoi needs two 1-D signals of equal length")
    if fs != STOI_FS:
        g = gcd(int(fs), STOI_FS)
        s = resample_poly(s, STOI_FS // g, int(fs) // g)
        x = resample_poly(x, STOI_FS // g, int(fs) // g)
    if len(s) < STOI_FRAME:
        raise ValueError("signal too short for stoi")
    s, x = _drop_silent_frames(s, x)
    bands = _third_octave_matrix()
    if len(s) < STOI_FRAME:
        raise ValueError("signal too short for stoi after silence removal")
    env_s = _band_envelopes(s, bands)
    env_x = _band_envelopes(x, bands)
    if env_s.shape[1] < STOI_SEGMENT:
        raise ValueError("signal too short for stoi: %d frames after silence removal, "
                         "need %d" % (env_s.shape[1], STOI_SEGMENT))
    seg_s = sliding_window_view(env_s, STOI_SEGMENT, axis=1)   # bands x segs x N
    seg_x = sliding_window_view(env_x, STOI_SEGMENT, axis=1)
    scale = (np.linalg.norm(seg_s, axis=2, keepdims=True)
             / (np.linalg.norm(seg_x, axis=2, keepdims=True) + _TINY))
    clip = 10.0 ** (-STOI_BETA_DB / 20.0)
    seg_x = np.minimum(seg_x * scale, seg_s * (1.0 + clip))
    a = seg_s - seg_s.mean(axis=2, keepdims=True)
    b = seg_x - seg_x.mean(axis=2, keepdims=True)
    corr = np.sum(a * b, axis=2) / (np.linalg.norm(a, axis=2) * np.linalg.norm(b, axis=2) + _TINY)
    return float(corr.mean())


def interior_pair(ref, filt):
    """Crop a reference and its synthesized counterpart to the exact OLA interior."""
    n = min(len(ref), len(filt))
    return dsp.interior(np.asarray(ref)[:n]), dsp.interior(np.asarray(filt)[:n])


def score(s, d, s_filt, d_filt):
    """All four measures for one utterance, on interior samples."""
    s_i, sf_i = interior_pair(s, s_filt)
    d_i, df_i = interior_pair(d, d_filt)
    return {
        "delta_snr_db": delta_snr(s_i, d_i, sf_i, df_i),
        "ssdr_db": ssdr(s_i, sf_i),
        "wlakr_abs": abs(wlakr(d_i, df_i)),
        "stoi": stoi(s_i, sf_i + df_i),
    }


@dataclass(frozen=True)
class Method:
    name: str           # identity, wf, lsa, sg or ci
    stages: int = 0

    @classmethod
    def parse(cls, text):
        """``identity``, ``wf``, ``lsa``, ``sg`` or ``ci:R``."""
        name, _, rest = text.strip().partition(":")
        if name == "identity" and not rest:
            return cls("identity", 0)
        if name in ("wf", "lsa", "sg") and not rest:
            return cls(name, 1)
        if name == "ci":
            try:
                r = int(rest or 1)
            except ValueError:
                raise ValueError("bad stage count in method %r" % text) from None
            if r < 1:
                raise ValueError("bad stage count in method %r" % text)
            return cls("ci", r)
        raise ValueError("unknown method %r (expected identity, wf, lsa, sg or ci:R)" % text)

    def __str__(self):
        return "ci:%d" % self.stages if self.name == "ci" else self.name


def method_masks(method, mixture, model=None):
    """Total mask sequence the method applies to a mixture."""
    from .ci import ci_enhance, total_mask
    from .classical import enhance_classical

    if method.name == "identity":
        return np.ones((dsp.num_frames(len(mixture)), dsp.N_BINS))
    if method.name == "ci":
        if model is None:
            raise ValueError("method %s needs a model" % method)
        net, stats = model
        return total_mask(ci_enhance(net, stats, dsp.analyze(mixture), method.stages)[1])
    return enhance_classical(mixture, method.name)[1]


@dataclass
class Mixture:
    """One scored condition: clean speech plus already-scaled noise."""
    name: str
    noise_type: str
    input_snr_db: float
    speech: np.ndarray
    noise: np.ndarray

    @property
    def mixture(self):
        return self.speech + self.noise


@dataclass
class Row:
    noise_type: str
    input_snr_db: object      # float, or "all" for the average over SNRs
    method: str
    stages: int
    delta_snr_db: float
    ssdr_db: float
    wlakr_abs: float
    stoi: float

    def csv_fields(self):
        snr = self.input_snr_db
        snr = snr if isinstance(snr, str) else "%.6f" % snr
        return [self.noise_type, snr, self.method, str(self.stages)] + [
            "%.6f" % getattr(self, k) for k in CSV_HEADER[4:]]


@dataclass
class Report:
    rows: list
    failures: list = field(default_factory=list)
    notes: tuple = (PESQ_NOTE,)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(r.csv_fields())
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())


def score_mixture(item, method, model=None):
    masks = method_masks(method, item.mixture, model)
    s_filt, d_filt = filtered_components(masks, dsp.analyze(item.speech), dsp.analyze(item.noise))
    return score(item.speech, item.noise, s_filt, d_filt)


def evaluate(items, methods, model=None):
    """Score every mixture with every method and average per condition.

    Rows are ordered by noise type, input SNR and then the given method
    order; each (noise type, method) group is followed by its average
    over SNRs (``input_snr_db == "all"``).  Failures are collected and do
    not stop the run.
    """
    methods = [m if isinstance(m, Method) else Method.parse(m) for m in methods]
    results = {}
    failures = []
    for item in items:
        for m in methods:
            key = (item.noise_type, float(item.input_snr_db), m)
            results.setdefault(key, [])
            try:
                results[key].append(score_mixture(item, m, model))
            except (ValueError, FloatingPointError, ArithmeticError) as exc:
                failures.append((item.name, str(m), str(exc)))

    def mean_scores(score_list):
        if not score_list:
            return {k: math.nan for k in CSV_HEADER[4:]}
        return {k: float(np.mean([s[k] for s in score_list])) for k in CSV_HEADER[4:]}

    rows = []
    for noise_type in sorted({k[0] for k in results}):
        snrs = sorted({k[1] for k in results if k[0] == noise_type})
        per_method = {m: [] for m in methods}
        for snr in snrs:
            for m in methods:
                avg = mean_scores(results.get((noise_type, snr, m), []))
                per_method[m].append(avg)
                rows.append(Row(noise_type, snr, m.name, m.stages, **avg))
        for m in methods:
            overall = {}
            for k in CSV_HEADER[4:]:
                vals = [a[k] for a in per_method[m] if np.isfinite(a[k])]
                overall[k] = float(np.mean(vals)) if vals else math.nan
            rows.append(Row(noise_type, "all", m.name, m.stages, **overall))
    return Report(rows, failures)
