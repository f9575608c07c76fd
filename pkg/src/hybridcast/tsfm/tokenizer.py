"""Patch tokenization.

The context window (the last patch_len * context_patches values) is
normalized as a whole, left-padded with zeros to a full multiple of the patch
length, and chunked into fixed-count patches. Padded slots carry a mask so
they contribute nothing to embeddings or loss. Each token records the
calendar features of its final position; for positions padded before the
series start the hypothetical earlier timestamp is used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import CalendarFeatures, NormStats, TimeSeries, calendar_at, normalize


@dataclass(frozen=True)
class PatchToken:
    values: np.ndarray  # normalized, length P, zeros at padded slots
    pad_mask: np.ndarray  # True where the slot holds real data
    calendar: CalendarFeatures
    scale: int  # patch length P


def tokenize(series: TimeSeries, patch_len: int, context_patches: int,
             ) -> tuple[list[PatchToken], NormStats]:
    window = patch_len * context_patches
    values = np.asarray(series.values, dtype=float)
    t_len = values.size
    used = values[-window:] if t_len > window else values
    normed, stats = normalize(used)
    pad = window - normed.size
    padded = np.concatenate([np.zeros(pad), normed])
    mask = np.concatenate([np.zeros(pad, dtype=bool), np.ones(normed.size, dtype=bool)])
    # original index of the first padded slot may be negative; calendar_at
    # accepts that and resolves the hypothetical timestamp
    first_index = t_len - normed.size - pad
    tokens = []
    for k in range(context_patches):
        sl = slice(k * patch_len, (k + 1) * patch_len)
        last_index = first_index + (k + 1) * patch_len - 1
        tokens.append(PatchToken(
            values=padded[sl],
            pad_mask=mask[sl],
            calendar=calendar_at(series.start, series.freq, last_index),
            scale=patch_len,
        ))
    return tokens, stats


def stack_tokens(token_lists: list[list[PatchToken]], freq_indices: list[int],
                 ) -> dict[str, np.ndarray]:
    """Stack per-series token lists into batched arrays for the network.

    All sequences must share the same patch length and token count.
    """
    scales = {t.scale for toks in token_lists for t in toks}
    if len(scales) != 1:
        raise ValueError("token streams of different scales cannot share a batch")
    values = np.stack([[t.values for t in toks] for toks in token_lists])
    mask = np.stack([[t.pad_mask for t in toks] for toks in token_lists])
    cal = np.stack([[t.calendar.as_vector() for t in toks] for toks in token_lists])
    return {
        "values": values.astype(float),
        "mask": mask,
        "cal": cal.astype(float),
        "freq_idx": np.asarray(freq_indices, dtype=int),
        "patch_len": scales.pop(),
    }
