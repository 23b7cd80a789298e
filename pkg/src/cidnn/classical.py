"""Classical spectral weighting baseline.

Noise PSD from a simplified minimum-statistics tracker, a priori SNR from
the decision-directed recursion, and three gain rules: Wiener filter (WF),
MMSE log-spectral amplitude (LSA) and the super-Gaussian joint MAP
amplitude estimator (SG).
"""

from dataclasses import dataclass, field

import numpy as np

from . import dsp

EPS_P = 1e-12
EULER_GAMMA = 0.5772156649015329

# super-Gaussian speech prior shape constants
SG_MU = 1.74
SG_NU = 0.126


def db_to_power(db):
    return 10.0 ** (db / 10.0)


@dataclass
class NoiseTracker:
    """Minimum-statistics noise PSD tracker with fixed smoothing.

    The periodogram is smoothed recursively and the minimum is tracked
    over ``n_sub`` sub-windows of ``sub_len`` frames (96 frames, about
    1.5 s at a 128-sample shift), then scaled by ``bias``.
    """

    n_bins: int = dsp.N_BINS
    beta: float = 0.85
    n_sub: int = 8
    sub_len: int = 12
    bias: float = 1.5
    smoothed: np.ndarray = None
    minima: np.ndarray = None
    current_min: np.ndarray = None
    frame_counter: int = 0

    def __post_init__(self):
        if self.smoothed is None:
            self.smoothed = np.zeros(self.n_bins)
        if self.minima is None:
            self.minima = np.full((self.n_sub, self.n_bins), np.inf)
        if self.current_min is None:
            self.current_min = np.full(self.n_bins, np.inf)

    def update(self, power):
        """Consume one power frame and return the noise PSD estimate."""
        power = np.maximum(np.asarray(power, dtype=float), 0.0)
        if self.frame_counter == 0:
            self.smoothed = power.copy()
        else:
            self.smoothed = self.beta * self.smoothed + (1.0 - self.beta) * power
        np.minimum(self.current_min, self.smoothed, out=self.current_min)
        self.frame_counter += 1
        if self.frame_counter % self.sub_len == 0:
            slot = (self.frame_counter // self.sub_len - 1) % self.n_sub
            self.minima[slot] = self.current_min
            self.current_min = np.full(self.n_bins, np.inf)
        window_min = np.minimum(self.minima.min(axis=0), self.current_min)
        return np.maximum(self.bias * window_min, EPS_P)


def dd_apriori_snr(prev_amp_sq, gamma, noise_psd, alpha=0.98,
                   xi_min=db_to_power(-15.0)):
    """Decision-directed a priori SNR.

    ``prev_amp_sq`` is ``|G*Y|^2`` of the previous enhanced frame and
    ``gamma`` the a posteriori SNR of the current frame.
    """
    noise_psd = np.maximum(noise_psd, EPS_P)
    xi = (alpha * np.asarray(prev_amp_sq) / noise_psd
          + (1.0 - alpha) * np.maximum(np.asarray(gamma) - 1.0, 0.0))
    return np.maximum(xi, xi_min)


def exp1(v):
    """Exponential integral E1 for v > 0 (series below 1, continued fraction above)."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    out = np.full(v.shape, np.inf)
    small = (v > 0) & (v < 1.0)
    if np.any(small):
        x = v[small]
        term = np.ones_like(x)
        acc = np.zeros_like(x)
        for k in range(1, 40):
            term = term * (-x) / k
            acc += term / k
        out[small] = -EULER_GAMMA - np.log(x) - acc
    large = v >= 1.0
    if np.any(large):
        # modified Lentz evaluation of 1/(x+1- 1/(x+3- 4/(x+5- ...)))
        x = v[large]
        tiny = 1e-300
        b = x + 1.0
        c = np.full_like(x, 1.0 / tiny)
        d = 1.0 / b
        h = d.copy()
        for i in range(1, 200):
            an = -float(i * i)
            b = b + 2.0
            d = 1.0 / (an * d + b)
            c = b + an / c
            delta = c * d
            h *= delta
            if np.all(np.abs(delta - 1.0) < 1e-16):
                break
        out[large] = h * np.exp(-x)
    return out


def wf_gain(xi, gamma=None):
    xi = np.asarray(xi, dtype=float)
    return xi / (1.0 + xi)


def lsa_gain(xi, gamma):
    xi = np.asarray(xi, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    ratio = xi / (1.0 + xi)
    v = np.broadcast_to(ratio * gamma, np.broadcast(ratio, gamma).shape)
    with np.errstate(over="ignore"):
        return ratio * np.exp(0.5 * exp1(v).reshape(v.shape))


def sg_gain(xi, gamma, mu=SG_MU, nu=SG_NU):
    xi = np.asarray(xi, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = 0.5 - mu / (4.0 * np.sqrt(gamma * xi))
        g = u + np.sqrt(u * u + nu / (2.0 * gamma))
    return np.where(np.isfinite(g), g, 1.0)


RULES = {"wf": wf_gain, "lsa": lsa_gain, "sg": sg_gain}


@dataclass(frozen=True)
class GainRule:
    kind: str = "wf"
    xi_min_db: float = -15.0
    g_min: float = 10.0 ** (-15.0 / 20.0)
    alpha: float = 0.98

    def __post_init__(self):
        if self.kind not in RULES:
            raise ValueError("unknown gain rule %r (expected one of %s)"
                             % (self.kind, ", ".join(sorted(RULES))))
        if not 0.0 < self.g_min < 1.0:
            raise ValueError("g_min must lie in (0, 1)")

    @property
    def xi_min(self):
        return db_to_power(self.xi_min_db)


def gain(rule, xi, gamma):
    """Spectral gain of ``rule`` floored at ``rule.g_min`` and capped at 1."""
    g = RULES[rule.kind](xi, gamma)
    return np.clip(np.nan_to_num(g, nan=1.0, posinf=1.0), rule.g_min, 1.0)


def enhance_classical(x, rule):
    """Run the frame-recursive baseline over a whole signal.

    Returns the enhanced time signal and the ``(L, 129)`` gain matrix that
    was applied, so the filtered components can be computed afterwards.
    """
    if isinstance(rule, str):
        rule = GainRule(rule)
    spec = dsp.analyze(x)
    tracker = NoiseTracker()
    masks = np.empty(spec.shape)
    prev_amp_sq = np.zeros(dsp.N_BINS)
    for l, frame in enumerate(spec):
        power = frame.real ** 2 + frame.imag ** 2
        noise_psd = tracker.update(power)
        gamma = power / noise_psd
        xi = dd_apriori_snr(prev_amp_sq, gamma, noise_psd, rule.alpha, rule.xi_min)
        g = gain(rule, xi, gamma)
        masks[l] = g
        prev_amp_sq = g * g * power
    return dsp.synthesize(spec * masks), masks
