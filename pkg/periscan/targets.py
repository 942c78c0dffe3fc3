# PERISCAN (TM) IPv6 Periphery Measurement Toolkit
# All trademark and other rights reserved by their respective owners
# Copyright 2025 Periscan Developers
# BSD-3 License
# Redistribution and use in source and binary forms, with or without
# modification, are permitted provided that the following conditions are met:
# 1. Redistributions of source code must retain the above copyright notice,
#    this list of conditions and the following disclaimer.
# 2. Redistributions in binary form must reproduce the above copyright notice,
#    this list of conditions and the following disclaimer in the documentation
#    and/or other materials provided with the distribution.
# 3. Neither the name of the copyright holder nor the names of its
#    contributors may be used to endorse or promote products derived from this
#    software without specific prior written permission.
# THIS SOFTWARE IS PROVIDED BY THE COPYRIGHT HOLDERS AND CONTRIBUTORS "AS IS"
# AND ANY EXPRESS OR IMPLIED WARRANTIES, INCLUDING, BUT NOT LIMITED TO,
# THE IMPLIED WARRANTIES OF MERCHANTABILITY AND FITNESS FOR A PARTICULAR
# PURPOSE ARE DISCLAIMED. IN NO EVENT SHALL THE COPYRIGHT HOLDER OR
# CONTRIBUTORS  BE LIABLE FOR ANY DIRECT, INDIRECT, INCIDENTAL, SPECIAL,
# EXEMPLARY, OR CONSEQUENTIAL DAMAGES (INCLUDING, BUT NOT LIMITED TO,
# PROCUREMENT OF SUBSTITUTE GOODS OR SERVICES; LOSS OF USE, DATA,
# OR PROFITS;  OR BUSINESS INTERRUPTION) HOWEVER CAUSED AND ON ANY THEORY OF
# LIABILITY, WHETHER IN CONTRACT, STRICT LIABILITY, OR TORT (INCLUDING
# NEGLIGENCE OR OTHERWISE) ARISING IN ANY WAY OUT OF THE USE OF THIS
# SOFTWARE,  EVEN IF ADVISED OF THE POSSIBILITY OF SUCH DAMAGE.

from bisect import bisect_right
from dataclasses import dataclass, field
from hashlib import blake2b
from itertools import accumulate
from typing import Iterator, List, Optional, Sequence, Union

from neon_utils.logger import LOG
from sympy import factorint, isprime, nextprime

from periscan.prefix import Address, Prefix, contains
from periscan.utils.exceptions import EmptySpaceError

# Group orders up to this size are fully factored; larger ones only have
# their small prime factors checked
_FACTORABLE_ORDER_BITS = 64
_TRIAL_DIVISION_LIMIT = 1 << 20


class Exhausted:
    """
    Terminal value of a permutation
    """
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Exhausted"

    def __bool__(self):
        return False


EXHAUSTED = Exhausted()


@dataclass
class TargetSpace:
    prefixes: List[Prefix]
    exclude: List[Prefix] = field(default_factory=list)
    total: int = field(init=False)
    boundaries: List[int] = field(init=False)

    def __post_init__(self):
        self.prefixes = list(self.prefixes)
        self.boundaries = list(accumulate(p.size for p in self.prefixes))
        self.total = self.boundaries[-1] if self.boundaries else 0

    def locate(self, index: int) -> Prefix:
        """
        Returns the member prefix holding global `index`
        """
        return self.prefixes[bisect_right(self.boundaries, index)]

    def address_at(self, index: int) -> Address:
        if not 0 <= index < self.total:
            raise IndexError(f"index={index} outside space of {self.total}")
        position = bisect_right(self.boundaries, index)
        start = self.boundaries[position - 1] if position else 0
        return self.prefixes[position].address_at(index - start)

    def is_excluded(self, address: Address) -> bool:
        return any(contains(p, address) for p in self.exclude)


@dataclass
class PermutationState:
    modulus: int
    multiplier: int
    start: int
    seed: int
    current: int = 0
    emitted: int = 0
    started: bool = False
    finished: bool = False

    def __post_init__(self):
        if not self.current:
            self.current = self.start


def _keyed_stream(seed: int, label: bytes) -> Iterator[int]:
    key = seed.to_bytes(8, "big")
    counter = 0
    while True:
        digest = blake2b(label + counter.to_bytes(8, "big"), key=key,
                         digest_size=64).digest()
        counter += 1
        yield int.from_bytes(digest, "big")


def _draw_below(stream: Iterator[int], bound: int) -> int:
    """
    Draws uniformly from [0, bound) by rejection over 512-bit blocks
    """
    bits = max(bound.bit_length(), 1)
    blocks = (bits + 511) // 512
    while True:
        value = 0
        for _ in range(blocks):
            value = (value << 512) | next(stream)
        value >>= blocks * 512 - bits
        if value < bound:
            return value


def _is_full_generator(candidate: int, modulus: int, factors: dict) -> bool:
    order = modulus - 1
    return all(pow(candidate, order // q, modulus) != 1 for q in factors)


def new_permutation(space: TargetSpace, seed: int) -> PermutationState:
    """
    Builds a seeded permutation of `space` over the multiplicative group
    modulo the smallest prime above `space.total`
    :param space: targets to permute
    :param seed: 64-bit seed; identical (space, seed) give identical states
    :returns: fresh PermutationState
    """
    if space.total < 1:
        raise EmptySpaceError("Cannot permute an empty target space")
    seed &= (1 << 64) - 1
    modulus = int(nextprime(space.total))
    order = modulus - 1
    stream = _keyed_stream(seed, b"periscan.permutation")
    if modulus == 2:
        # The group of units modulo 2 is trivial
        return PermutationState(modulus=2, multiplier=1, start=1, seed=seed)
    if order.bit_length() <= _FACTORABLE_ORDER_BITS:
        factors = factorint(order)
    else:
        factors = {q: e for q, e in
                   factorint(order, limit=_TRIAL_DIVISION_LIMIT).items()
                   if isprime(q)}
    while True:
        multiplier = 2 + _draw_below(stream, modulus - 2)
        if multiplier == modulus - 1 and modulus > 3:
            continue
        if _is_full_generator(multiplier, modulus, factors):
            break
    start = 1 + _draw_below(stream, order)
    LOG.debug(f"New permutation total={space.total}|modulus={modulus}|"
              f"seed={seed}")
    return PermutationState(modulus=modulus, multiplier=multiplier,
                            start=start, seed=seed)


def _next_residue(state: PermutationState) -> Optional[int]:
    if not state.started:
        state.started = True
        return state.current
    state.current = state.current * state.multiplier % state.modulus
    if state.current == state.start:
        return None
    return state.current


def next_target(state: PermutationState, space: TargetSpace) \
        -> Union[Address, Exhausted]:
    """
    Advances the permutation and returns the next address of `space`
    """
    while not state.finished:
        if state.emitted >= space.total:
            break
        residue = _next_residue(state)
        if residue is None:
            break
        if residue > space.total:
            continue
        address = space.address_at(residue - 1)
        if space.exclude and space.is_excluded(address):
            continue
        state.emitted += 1
        return address
    state.finished = True
    return EXHAUSTED


def iter_targets(space: TargetSpace, seed: int, shard: int = 0,
                 shards: int = 1, limit: Optional[int] = None) \
        -> Iterator[Address]:
    """
    Yields the permutation of `space` striped by emission index, so shard
    `k` of `n` receives emissions k, k+n, k+2n, ...
    :param space: targets to permute
    :param seed: permutation seed
    :param shard: index of this shard
    :param shards: number of shards
    :param limit: optional cap on the number of addresses yielded
    """
    if not 0 <= shard < shards:
        raise ValueError(f"shard={shard} outside [0, {shards})")
    if space.total < 1:
        return
    state = new_permutation(space, seed)
    index = 0
    yielded = 0
    while limit is None or yielded < limit:
        address = next_target(state, space)
        if address is EXHAUSTED:
            return
        if index % shards == shard:
            yielded += 1
            yield address
        index += 1


def enumerate_space(space: TargetSpace) -> Iterator[Address]:
    """
    Yields every non-excluded address of `space` in prefix order
    """
    for prefix in space.prefixes:
        for offset in range(prefix.size):
            address = prefix.address_at(offset)
            if not space.exclude or not space.is_excluded(address):
                yield address


def target_space(prefixes: Sequence[Prefix],
                 exclude: Sequence[Prefix] = ()) -> TargetSpace:
    return TargetSpace(prefixes=list(prefixes), exclude=list(exclude))
