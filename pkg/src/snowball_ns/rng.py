"""Counter-based random streams for reproducible, resumable runs.

Every random draw in a run is addressed by ``(master seed, stream id,
draw index)`` and comes from a Philox counter-based bit generator keyed
accordingly.  Draw ``i`` of a stream therefore never depends on how many
draws were made before it.  This is what makes initial live sets
prefix-stable when the live-point count grows, and what makes resumed
runs bitwise identical to uninterrupted ones.
"""

from __future__ import annotations

import numpy as np

# Stream identifiers.  New streams must take fresh ids; reusing one would
# silently correlate independent parts of the algorithm.
STREAM_INITIAL = 1  # initial live-point draws, indexed by draw position
STREAM_SEED_CHOICE = 2  # chain-start selection, indexed by fresh sampler call
STREAM_WALK = 3  # random-walk proposals, indexed by fresh sampler call

_MASK64 = (1 << 64) - 1


class RngStreams:
    """Family of independent Philox streams derived from one master seed."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed) & _MASK64
        # Reusable bit generator for borrow(): re-keying through the state
        # dict skips the (surprisingly costly) constructor path.
        self._bitgen = np.random.Philox(key=np.zeros(2, dtype=np.uint64))
        self._shared = np.random.Generator(self._bitgen)
        self._state = self._bitgen.state
        self._state["state"]["key"][0] = self.master_seed

    def generator(self, stream: int, index: int) -> np.random.Generator:
        """Fresh generator for draw ``index`` of ``stream``.

        A pure function of ``(master_seed, stream, index)``: calling it
        twice with the same arguments yields identical value sequences.
        """
        key = np.array([self.master_seed, stream], dtype=np.uint64)
        # The index sits in the third counter word.  Philox increments the
        # low words as blocks are consumed, so a single draw can consume up
        # to 2**128 blocks before colliding with the next index.
        counter = np.array([0, 0, index, 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def borrow(self, stream: int, index: int) -> np.random.Generator:
        """Shared generator reset to the same stream ``generator`` returns.

        Only valid until the next ``borrow`` on this instance; use it for
        tight loops where constructing a generator per draw would dominate.
        """
        st = self._state
        inner = st["state"]
        inner["key"][1] = stream
        inner["counter"][2] = index
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bitgen.state = st
        return self._shared
