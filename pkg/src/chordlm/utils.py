# encoding: utf-8
"""Small shared helpers: seed derivation, hashing, deterministic JSON."""

import hashlib
import json

import numpy as np


def derive_seed(seed, *tags):
    """
    Derive a child seed from a master seed and a list of string tags.

    Uses SHA-256 so the derivation is stable across processes and platforms
    (unlike the built-in ``hash``).
    """
    digest = hashlib.sha256(
        ('%d|%s' % (seed, '|'.join(str(t) for t in tags))).encode()
    ).digest()
    return int.from_bytes(digest[:8], 'big')


def derive_rng(seed, *tags):
    """A numpy Generator seeded deterministically from (seed, tags)."""
    return np.random.default_rng(derive_seed(seed, *tags))


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for block in iter(lambda: handle.read(65536), b''):
            digest.update(block)
    return digest.hexdigest()


def dump_json(obj, path):
    """Write JSON with sorted keys and a stable layout (byte-reproducible)."""
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(obj, handle, sort_keys=True, indent=2)
        handle.write('\n')


def load_json(path):
    with open(path, 'r', encoding='utf-8') as handle:
        return json.load(handle)
