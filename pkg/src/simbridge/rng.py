"""Counter-based keyed random streams.

Every random draw in the package comes from a Philox4x64-10 stream whose
128-bit key is built from small integers (seed, epoch, sample id, ...), so a
stream can be recreated anywhere from its key alone. Gaussians are produced
with the Box-Muller transform on 53-bit uniforms rather than numpy's ziggurat,
which keeps the normal draws a fixed, documented function of the key.
"""
from __future__ import annotations

import numpy as np

_MASK32 = 0xFFFFFFFF
_MASK64 = 0xFFFFFFFFFFFFFFFF


def keyed_generator(seed: int, hi: int = 0, lo: int = 0) -> np.random.Generator:
    """Philox generator keyed by ``(seed, hi << 32 | lo)``.

    ``hi`` and ``lo`` are truncated to 32 bits each; ``seed`` to 64 bits.
    """
    key = np.array([int(seed) & _MASK64, ((int(hi) & _MASK32) << 32) | (int(lo) & _MASK32)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def uniform_open(rng: np.random.Generator, n: int) -> np.ndarray:
    # random() is (u64 >> 11) * 2**-53 in [0, 1); flip to (0, 1] so log() is finite
    return 1.0 - rng.random(n)


def box_muller(rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` standard normals.

    Uniform pairs ``(u1, u2)`` are consumed in order; each pair yields
    ``sqrt(-2 ln u1) * cos(2 pi u2)`` followed by ``sqrt(-2 ln u1) * sin(2 pi u2)``.
    """
    if n <= 0:
        return np.zeros(0)
    m = (n + 1) // 2
    u = uniform_open(rng, 2 * m).reshape(m, 2)
    rad = np.sqrt(-2.0 * np.log(u[:, 0]))
    ang = 2.0 * np.pi * u[:, 1]
    out = np.empty((m, 2))
    out[:, 0] = rad * np.cos(ang)
    out[:, 1] = rad * np.sin(ang)
    return out.reshape(-1)[:n]


def normal(rng: np.random.Generator, std, size) -> np.ndarray:
    """Zero-mean Gaussian samples with the given standard deviation."""
    size = (size,) if np.isscalar(size) else tuple(size)
    n = int(np.prod(size))
    return (box_muller(rng, n) * std).reshape(size)
