"""Counter-based random streams.

Every draw is a pure function of (seed, stream, counter), so a run can be
replayed from its config alone and independent streams never collide.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = ["StreamState", "generator", "advance"]


@dataclass(frozen=True)
class StreamState:
    """Position in a counter-based random stream."""

    seed: int
    stream: int = 0
    counter: int = 0

    def __post_init__(self):
        if self.counter < 0:
            raise ValueError("counter must be non-negative")


def generator(state: StreamState) -> np.random.Generator:
    """Philox generator keyed by (seed, stream) at the given counter."""
    bits = np.random.Philox(
        counter=[state.counter, 0, 0, 0],
        key=[state.seed & 0xFFFFFFFFFFFFFFFF, state.stream & 0xFFFFFFFFFFFFFFFF],
    )
    return np.random.Generator(bits)


def advance(state: StreamState, n: int = 1) -> StreamState:
    """Move the stream forward by n draws."""
    if n < 1:
        raise ValueError("advance requires n >= 1")
    return replace(state, counter=state.counter + n)
