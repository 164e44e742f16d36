"""Small numerical core: seeded random streams and stable log-space sums.

Everything downstream works in 64-bit floats.  Randomness is drawn from
counter-based Philox generators keyed by (seed, stream name), so any
component can own an independent stream that replays exactly for the same
seed regardless of what other streams consumed in between.
"""

import hashlib

import numpy as np

NEG_INF = float("-inf")


def stream_rng(seed, stream):
    """Independent generator for the named stream under the given seed.

    Same (seed, stream) always yields the same draw sequence; different
    stream names give statistically independent sequences.
    """
    digest = hashlib.sha256(f"{seed}:{stream}".encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def gaussian_fill(shape, mean, std, rng):
    """Fresh float64 array of normal draws.  std must be positive."""
    if not std > 0.0:
        raise ValueError(f"std must be positive, got {std}")
    return rng.normal(mean, std, size=shape).astype(np.float64)


def bernoulli_mask(shape, p, rng):
    """0/1 float64 mask with P(1) = p, for p in (0, 1]."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"keep probability must be in (0, 1], got {p}")
    return (rng.random(size=shape) < p).astype(np.float64)


def log_sum_exp(values, axis=None):
    """log(sum(exp(values))), shifted by the max so nothing overflows.

    Accepts -inf entries (zero probabilities); an all--inf reduction is
    -inf.  Empty input is an error rather than a silent -inf.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty set is undefined")
    hi = np.max(v, axis=axis, keepdims=True)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - hi), axis=axis, keepdims=True)) + hi
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def assert_all_finite(arr, what="array"):
    """Raise if any entry is NaN or infinite."""
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")


def central_difference(f, x, coords, step=1e-5):
    """Central finite-difference df/dx at the given flat coordinates.

    f is a scalar function of x; x is perturbed in place and restored.
    Returns a dict coord -> estimate.
    """
    flat = x.reshape(-1)
    out = {}
    for c in coords:
        keep = flat[c]
        flat[c] = keep + step
        hi = f()
        flat[c] = keep - step
        lo = f()
        flat[c] = keep
        out[c] = (hi - lo) / (2.0 * step)
    return out


def relative_error(a, b, floor=1e-3):
    """|a - b| over max(|a|, |b|, floor).

    The floor keeps finite-difference noise on near-zero gradients from
    registering as large relative errors.
    """
    return abs(a - b) / max(abs(a), abs(b), floor)
