"""Whole-signal separation: run the mask network over every patch.

The mixture is transformed once; each 512x128 magnitude tile is
normalized with the checkpoint's training statistics and batched through
the network in inference mode. Estimated mask tiles are stitched back
into full-width mask matrices (the tile bookkeeping is exact, so output
length equals input length) and applied to the mixture spectrogram with
its original phase.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .dsp import (
    N_BINS,
    MagPatch,
    apply_masks,
    depatchify,
    normalize_values,
    patchify,
    stft,
)
from .tensor import Tensor

__all__ = ["separate_samples", "estimate_masks"]


def estimate_masks(model, stats, spec, batch_size=4):
    """(mask_perc, mask_harm), each (512, frames), for a Spectrogram."""
    patches = patchify(spec.magnitude()[:N_BINS])
    mask_p_patches = []
    mask_h_patches = []
    with T.no_grad():
        for lo in range(0, len(patches), batch_size):
            chunk = patches[lo : lo + batch_size]
            xn = np.stack([normalize_values(p.values, stats) for p in chunk])[:, None]
            mp, mh = model.forward(Tensor(xn), training=False)
            for src, vp, vh in zip(chunk, mp.data[:, 0], mh.data[:, 0]):
                kw = dict(origin_frame=src.origin_frame, pad_frames=src.pad_frames,
                          normalized=True)
                mask_p_patches.append(MagPatch(vp, **kw))
                mask_h_patches.append(MagPatch(vh, **kw))
    return depatchify(mask_p_patches), depatchify(mask_h_patches)


def separate_samples(model, stats, samples, sample_rate=44100, batch_size=4):
    """Split a mono waveform into (percussive, harmonic) estimates."""
    spec = stft(samples, sample_rate)
    mask_p, mask_h = estimate_masks(model, stats, spec, batch_size=batch_size)
    return apply_masks(mask_p, mask_h, spec)
