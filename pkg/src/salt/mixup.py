"""Online embedding mixup between original and code-switched tokens.

Row i of the model input becomes ``r * h_orig[i] + (1 - r) * h_switched[i]``
with ``r`` drawn i.i.d. Uniform[0, 1] per embedding dimension. By default one
``r`` is shared by all positions of an instance and redrawn every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InputError, InternalError


@dataclass
class MixupConfig:
    enabled: bool = True
    per_position: bool = False


def coefficient_rng(global_seed: int, epoch: int, instance_key) -> np.random.Generator:
    """Independent stream per (seed, epoch, instance); batch composition does not matter.

    ``instance_key`` is a non-negative int or a tuple of them.
    """
    key = list(instance_key) if isinstance(instance_key, (tuple, list)) else [instance_key]
    return np.random.default_rng([global_seed, epoch, *key])


def sample_coefficients(embedding_dim: int, rng: np.random.Generator) -> np.ndarray:
    if embedding_dim <= 0:
        raise InputError(f"embedding_dim must be positive, got {embedding_dim}")
    return rng.random(embedding_dim)


def mix_embeddings(h_s, h_t, r):
    """Per-dimension convex combination; works for numpy arrays and torch tensors."""
    if h_s.shape != h_t.shape or h_s.shape[-1] != r.shape[-1]:
        raise InputError(f"shape mismatch: h_s {tuple(h_s.shape)}, h_t {tuple(h_t.shape)}, r {tuple(r.shape)}")
    return r * h_s + (1 - r) * h_t


def mix_rows(emb_orig, emb_switched, same, r):
    """Mix ``[length, dim]`` rows; rows where the ids coincide keep the plain lookup."""
    mixed = mix_embeddings(emb_orig, emb_switched, r)
    return torch.where(same.unsqueeze(-1), emb_orig, mixed)


def mixed_input(original_ids, switched_ids, embedding, rng: np.random.Generator, per_position: bool = False):
    """Mixed token-embedding rows for one instance.

    ``embedding`` is an ``nn.Embedding`` (gradients flow to both lookups) or a
    scorer exposing ``embedding_table``.
    """
    if len(original_ids) != len(switched_ids):
        raise InternalError(f"original ({len(original_ids)}) and switched ({len(switched_ids)}) lengths differ")
    table = getattr(embedding, "embedding_table", embedding)
    orig = torch.as_tensor(list(original_ids), dtype=torch.long)
    sw = torch.as_tensor(list(switched_ids), dtype=torch.long)
    h_s, h_t = table(orig), table(sw)
    dim = h_s.shape[-1]
    if per_position:
        r = np.stack([sample_coefficients(dim, rng) for _ in range(len(orig))])
    else:
        r = sample_coefficients(dim, rng)
    r = torch.as_tensor(r, dtype=h_s.dtype)
    return mix_rows(h_s, h_t, orig == sw, r)
