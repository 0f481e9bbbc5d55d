"""Causal temporal compression arithmetic.

A causally compressed timeline keeps pixel frame 0 as its own latent
frame; every subsequent run of ``stride`` pixel frames collapses into one
latent frame.  Everything here is integer arithmetic on that chunking:
mapping pixel frames to latent frames and back, and deciding where a
conditioning frame may legally be anchored (a condition replaces a whole
latent chunk, so only chunk-start frames are valid anchors).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


def latent_len(pixel_len: int, stride: int) -> int:
    """Number of latent frames for ``pixel_len`` pixel frames: 1 + ceil((T-1)/r)."""
    if pixel_len < 1:
        raise ConfigError(f"pixel_len must be >= 1, got {pixel_len}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    return 1 + (pixel_len - 1 + stride - 1) // stride


@dataclass(frozen=True)
class TemporalCompression:
    """Chunking of ``pixel_len`` pixel frames at temporal ``stride``.

    Chunk 0 covers exactly pixel frame 0; chunk k >= 1 covers pixel frames
    [(k-1)*stride + 1, min(k*stride, pixel_len - 1)].  Chunk spans are
    disjoint and tile [0, pixel_len - 1].
    """

    stride: int
    pixel_len: int

    def __post_init__(self):
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.pixel_len < 1:
            raise ConfigError(f"pixel_len must be >= 1, got {self.pixel_len}")

    @property
    def latent_len(self) -> int:
        return latent_len(self.pixel_len, self.stride)

    def _check_frame(self, f: int):
        if not 0 <= f < self.pixel_len:
            raise IndexError(
                f"pixel frame {f} out of range [0, {self.pixel_len})"
            )

    def frame_to_latent(self, f: int) -> int:
        """Latent chunk index whose span contains pixel frame ``f``."""
        self._check_frame(f)
        if f == 0:
            return 0
        return -(-f // self.stride)

    def latent_to_frame_span(self, k: int) -> tuple[int, int]:
        """Inclusive pixel-frame range covered by latent chunk ``k``."""
        if not 0 <= k < self.latent_len:
            raise IndexError(
                f"latent index {k} out of range [0, {self.latent_len})"
            )
        if k == 0:
            return (0, 0)
        start = (k - 1) * self.stride + 1
        return (start, min(k * self.stride, self.pixel_len - 1))

    def is_valid_anchor(self, f: int) -> bool:
        """True if ``f`` starts a latent chunk."""
        self._check_frame(f)
        return f == 0 or (f - 1) % self.stride == 0

    def snap_anchor(self, f: int) -> tuple[int, bool]:
        """Snap ``f`` to the nearest chunk-start frame.

        Returns ``(anchor, snapped)``; ties break toward the earlier anchor
        so conditions never drift later than asked for.
        """
        self._check_frame(f)
        if self.is_valid_anchor(f):
            return (f, False)
        prev = ((f - 1) // self.stride) * self.stride + 1
        nxt = prev + self.stride
        if nxt > self.pixel_len - 1 or nxt - f >= f - prev:
            return (prev, True)
        return (nxt, True)

    def valid_anchors(self) -> list[int]:
        """All chunk-start frames, ascending."""
        return [0] + list(range(1, self.pixel_len, self.stride))
