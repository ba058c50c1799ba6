"""Visual speaker embeddings: file loading plus a deterministic stub.

Real embeddings come from an external face-recognition model and are
consumed as tensor-blob files of shape (512,).  The stub generator gives
tests and synthetic corpora reproducible identity vectors without that
dependency: a seeded Gaussian draw scaled to unit norm, so distinct ids
are nearly orthogonal in 512 dimensions.
"""

from __future__ import annotations

import numpy as np

from .blob import read_single_blob, write_blob

EMBEDDING_DIM = 512


def load_speaker_embedding(path, l2_normalize: bool = False, dim: int = EMBEDDING_DIM) -> np.ndarray:
    """Load a (dim,) float vector from a tensor-blob file."""
    name, arr = read_single_blob(path)
    if arr.shape != (dim,):
        raise ValueError(
            f"{path}: speaker embedding {name!r} has shape {arr.shape}, expected ({dim},)"
        )
    vec = arr.astype(np.float32)
    if l2_normalize:
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValueError(f"{path}: cannot L2-normalize a zero embedding")
        vec = vec / norm
    return vec


def save_speaker_embedding(path, vector: np.ndarray) -> None:
    vec = np.asarray(vector, dtype=np.float32)
    if vec.ndim != 1:
        raise ValueError(f"speaker embedding must be 1-D, got shape {vec.shape}")
    write_blob(path, "speaker", vec)


def stub_embedding(identity_id: int, seed: int, dim: int = EMBEDDING_DIM) -> np.ndarray:
    """Deterministic unit-norm embedding for a synthetic identity."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, identity_id])))
    vec = rng.standard_normal(dim)
    return (vec / np.linalg.norm(vec)).astype(np.float32)
