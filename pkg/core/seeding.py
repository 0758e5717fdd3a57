"""
Seeded RNG Streams
Every random draw in a run comes from a stream keyed by (seed, stream, *keys),
so results never depend on the order in which clients are processed.
"""
import numpy as np

# Stream tags
CLIENT = 1
SERVER = 2
INIT = 3
GLOBAL = 4
PROBE = 5
CENTERS = 6


def derive_rng(seed, stream, *keys):
    """Returns an independent numpy Generator for the given stream and keys."""
    entropy = [int(seed), int(stream)] + [int(k) for k in keys]
    if any(e < 0 for e in entropy):
        raise ValueError(f"Seed and stream keys must be non-negative, got {entropy}")
    return np.random.default_rng(np.random.SeedSequence(entropy))


def client_rng(seed, client, round_idx):
    """Local SGD stream of one client in one round."""
    return derive_rng(seed, CLIENT, round_idx, client)


def server_rng(seed, round_idx):
    """Client-sampling stream of one round."""
    return derive_rng(seed, SERVER, round_idx)
