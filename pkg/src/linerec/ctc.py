"""CTC loss over per-column label posteriors.

The target sequence is interleaved with blanks (blank, z1, blank, z2, ...,
blank) and scored with the usual forward-backward recursion, done entirely
in log space.  The backward pass here uses the exclusive convention (beta
at time t excludes the emission at t), so alpha + beta sums to the total
path probability at every time step.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleTargetError
from .numerics import log_sum_exp, stream_rng, relative_error

NEG_INF = float("-inf")


class LabelAlphabet:
    """Ordered set of single-character labels plus a reserved blank index.

    The blank is not a character; it lives at index len(labels), after all
    real labels.
    """

    def __init__(self, labels):
        labels = tuple(labels)
        if not labels:
            raise ValueError("alphabet needs at least one label")
        for ch in labels:
            if not isinstance(ch, str) or len(ch) != 1:
                raise ValueError(f"labels must be single characters, got {ch!r}")
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate labels in alphabet")
        self.labels = labels
        self._index = {ch: i for i, ch in enumerate(labels)}

    @property
    def blank(self):
        return len(self.labels)

    @property
    def size(self):
        """Number of output classes including the blank."""
        return len(self.labels) + 1

    def __contains__(self, ch):
        return ch in self._index

    def encode(self, text):
        """Text to label indices; raises on characters outside the alphabet."""
        try:
            return [self._index[ch] for ch in text]
        except KeyError as e:
            raise ValueError(f"character {e.args[0]!r} not in alphabet") from None

    def decode(self, indices):
        """Label indices back to text.  Blanks are not decodable."""
        return "".join(self.labels[i] for i in indices)

    def to_dict(self):
        return {"labels": "".join(self.labels)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["labels"])


@dataclass(frozen=True)
class TargetSequence:
    """Encoded transcript: label indices, never containing the blank."""

    indices: tuple

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    def __len__(self):
        return len(self.indices)


def min_frames(targets):
    """Shortest output length that can emit the target at all.

    Repeated adjacent labels force an intervening blank, so each repeat
    costs one extra column.
    """
    t = list(targets)
    repeats = sum(1 for a, b in zip(t, t[1:]) if a == b)
    return len(t) + repeats


def augment_with_blanks(targets, blank):
    """Interleave blanks: (blank, z1, blank, z2, ..., blank), length 2L+1."""
    aug = [blank]
    for z in targets:
        aug.append(int(z))
        aug.append(blank)
    return np.array(aug, dtype=np.int64)


def _as_columns(posteriors):
    """Accept (T, K) or a (1, T, K) grid; return (T, K) plus original shape."""
    y = np.asarray(posteriors, dtype=np.float64)
    if y.ndim == 3:
        if y.shape[0] != 1:
            raise ValueError(f"posterior grid must have height 1, got {y.shape}")
        return y[0], y.shape
    if y.ndim != 2:
        raise ValueError(f"posteriors must be 2-D or (1, T, K), got {y.shape}")
    return y, y.shape


def _validate_targets(targets, n_classes, blank):
    t = [int(z) for z in targets]
    for z in t:
        if not 0 <= z < n_classes:
            raise ValueError(f"target label {z} outside posterior classes")
        if z == blank:
            raise ValueError("target sequences may not contain the blank")
    return t


def forward_backward(log_post, aug):
    """Alpha/beta lattices over the augmented sequence, in log space.

    beta excludes the emission at its own time step, so for every t
    log_sum_exp(alpha[t] + beta[t]) equals the total log path probability.
    """
    T = log_post.shape[0]
    S = len(aug)
    # which positions allow the skip from s-2: label positions whose label
    # differs from the one two back
    can_skip = np.zeros(S, dtype=bool)
    for s in range(2, S):
        can_skip[s] = aug[s] != aug[s - 1] and aug[s] != aug[s - 2]

    emit = log_post[:, aug]  # (T, S)

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        stay = prev
        step1 = np.concatenate(([NEG_INF], prev))[:S]
        step2 = np.concatenate(([NEG_INF, NEG_INF], prev))[:S]
        step2 = np.where(can_skip, step2, NEG_INF)
        alpha[t] = log_sum_exp(np.stack([stay, step1, step2]), axis=0) + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        stay = nxt
        step1 = np.concatenate((nxt[1:], [NEG_INF]))
        step2 = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))[:S]
        skip_from = np.concatenate((can_skip[2:], [False, False]))[:S]
        step2 = np.where(skip_from, step2, NEG_INF)
        beta[t] = log_sum_exp(np.stack([stay, step1, step2]), axis=0)

    tails = [alpha[T - 1, S - 1]]
    if S > 1:
        tails.append(alpha[T - 1, S - 2])
    log_p = log_sum_exp(np.array(tails))
    return alpha, beta, log_p


def _occupancy(alpha, beta, aug, n_classes):
    """Per (t, k) log mass of paths emitting class k at time t."""
    T = alpha.shape[0]
    occ = np.full((T, n_classes), NEG_INF)
    gamma = alpha + beta
    for k in np.unique(aug):
        cols = gamma[:, aug == k]
        occ[:, k] = log_sum_exp(cols, axis=1)
    return occ


def ctc_nll(posteriors, targets, blank=None):
    """Negative log likelihood of the target plus gradient wrt posteriors.

    posteriors: (T, K) or (1, T, K), columns summing to one.  targets: label
    indices without blanks.  Returns (loss, d_loss/d_posteriors) with the
    gradient shaped like the input.
    """
    y, orig_shape = _as_columns(posteriors)
    T, K = y.shape
    if blank is None:
        blank = K - 1
    t = _validate_targets(targets, K, blank)
    if T < min_frames(t):
        raise InfeasibleTargetError(
            f"{T} columns cannot emit a target needing {min_frames(t)}"
        )
    with np.errstate(divide="ignore"):
        log_post = np.log(y)
    aug = augment_with_blanks(t, blank)
    alpha, beta, log_p = forward_backward(log_post, aug)
    if log_p == NEG_INF:
        raise InfeasibleTargetError("target path has zero probability")
    occ = _occupancy(alpha, beta, aug, K)
    dpost = np.zeros((T, K))
    hit = occ > NEG_INF
    dpost[hit] = -np.exp(occ[hit] - log_p - log_post[hit])
    return -log_p, dpost.reshape(orig_shape)


def ctc_grad_wrt_logits(posteriors, targets, blank=None):
    """Gradient of the NLL wrt pre-softmax inputs, in one fused expression.

    Equals pushing the posterior-space gradient of ctc_nll back through the
    softmax Jacobian: d/da_k = y_k - occupancy_k / p.
    """
    y, orig_shape = _as_columns(posteriors)
    T, K = y.shape
    if blank is None:
        blank = K - 1
    t = _validate_targets(targets, K, blank)
    if T < min_frames(t):
        raise InfeasibleTargetError(
            f"{T} columns cannot emit a target needing {min_frames(t)}"
        )
    with np.errstate(divide="ignore"):
        log_post = np.log(y)
    aug = augment_with_blanks(t, blank)
    alpha, beta, log_p = forward_backward(log_post, aug)
    if log_p == NEG_INF:
        raise InfeasibleTargetError("target path has zero probability")
    occ = _occupancy(alpha, beta, aug, K)
    dlogits = y.copy()
    hit = occ > NEG_INF
    dlogits[hit] -= np.exp(occ[hit] - log_p)
    return -log_p, dlogits.reshape(orig_shape)


def best_path_decode(posteriors, blank=None):
    """Per-column argmax, collapse repeats, then drop blanks.

    Returns label indices.  A repeat separated by a blank survives the
    collapse; a plain repeat does not.
    """
    y, _ = _as_columns(posteriors)
    if blank is None:
        blank = y.shape[1] - 1
    path = np.argmax(y, axis=1)
    out = []
    prev = None
    for k in path:
        if k != prev:
            out.append(int(k))
        prev = k
    return [k for k in out if k != blank]


def gradient_check(net, image, targets, n_coords=20, step=1e-5, seed=0):
    """Compare analytic network gradients against central differences.

    Runs one forward/backward with the CTC loss, then perturbs n_coords
    randomly chosen coordinates of every parameter tensor.  Returns the
    worst relative error seen.
    """
    rng = stream_rng(seed, "grad-check-coords")

    def loss():
        post, _ = net.forward(image, mode="testing")
        val, _ = ctc_nll(post, targets)
        return val

    post, cache = net.forward(image, mode="testing")
    _, dpost = ctc_nll(post, targets)
    net.zero_grads()
    net.backward(cache, dpost)

    worst = 0.0
    for name, tensor in net.params().items():
        grad = net.grads()[name].reshape(-1)
        flat = tensor.reshape(-1)
        n = min(n_coords, flat.size)
        coords = rng.choice(flat.size, size=n, replace=False)
        for c in coords:
            keep = flat[c]
            flat[c] = keep + step
            hi = loss()
            flat[c] = keep - step
            lo = loss()
            flat[c] = keep
            numeric = (hi - lo) / (2.0 * step)
            worst = max(worst, relative_error(grad[c], numeric))
    return worst
