"""Serial concatenation of one trained stage.

Each stage masks the complex spectrogram produced by the previous one,
so after ``R`` stages the output is the noisy spectrogram times the
product of all recorded stage masks, with the noisy phase untouched.
"""

import numpy as np

from .pipeline import enhance_stage


def required_context(stages):
    """Frames left, right and in total that ``stages`` stages depend on."""
    if isinstance(stages, bool) or int(stages) != stages or stages < 1:
        raise ValueError("number of stages must be a positive integer, got %r" % (stages,))
    side = 2 * int(stages)
    return side, side, 2 * side + 1


def ci_enhance(net, stats, noisy_spec, stages):
    """Run ``stages`` identical stages; returns the output and each stage's masks."""
    required_context(stages)
    spec = np.asarray(noisy_spec)
    masks = []
    for _ in range(stages):
        spec, m = enhance_stage(net, stats, spec)
        masks.append(m)
    return spec, masks


def total_mask(stage_masks):
    """Elementwise product of per-stage masks."""
    stage_masks = list(stage_masks)
    if not stage_masks:
        raise ValueError("no stage masks")
    out = np.array(stage_masks[0], dtype=float)
    for m in stage_masks[1:]:
        out *= m
    return out
