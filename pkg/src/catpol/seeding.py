"""Deterministic named RNG sub-streams derived from a single run seed.

Every source of randomness in a run pulls from its own child stream so that
adding draws in one place (say, an extra evaluation) cannot shift any other
stream. Streams are identified by name; the name maps to a fixed spawn key,
so the mapping is stable across runs and platforms.
"""

from __future__ import annotations

import numpy as np

_STREAMS = {
    "init": 0,     # parameter initialization
    "env": 1,      # resets and start-state pool sampling
    "policy": 2,   # Gaussian action noise
    "gumbel": 3,   # discrete mode draws (Gumbel noise / categorical draws)
    "eval": 4,     # evaluation episodes
    "estlab": 5,   # estimator-lab instances and sampling
}


def named_rng(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Child generator for stream ``name`` under ``seed``.

    ``extra`` integers extend the spawn key for grids (e.g. one stream per
    sweep cell) without colliding with the base streams.
    """
    try:
        key = _STREAMS[name]
    except KeyError:
        raise ValueError(f"unknown rng stream {name!r}; known: {sorted(_STREAMS)}") from None
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(key, *extra))
    return np.random.default_rng(ss)


def rng_state_bytes(rng: np.random.Generator) -> bytes:
    """Serialize a PCG64 generator to its raw 32-byte (state, inc) pair."""
    state = rng.bit_generator.state
    if state["bit_generator"] != "PCG64":
        raise ValueError("only PCG64 generators can be serialized")
    s = state["state"]["state"].to_bytes(16, "little")
    inc = state["state"]["inc"].to_bytes(16, "little")
    return s + inc


def rng_from_state(raw: bytes) -> np.random.Generator:
    """Rebuild a PCG64 generator from ``rng_state_bytes`` output."""
    if len(raw) != 32:
        raise ValueError(f"rng state must be 32 bytes, got {len(raw)}")
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {
            "state": int.from_bytes(raw[:16], "little"),
            "inc": int.from_bytes(raw[16:], "little"),
        },
        "has_uint32": 0,
        "uinteger": 0,
    }
    return np.random.Generator(bg)
