"""Edit-distance error rates over characters and words."""


def edit_distance(a, b):
    """Levenshtein distance between two sequences (unit costs)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[len(b)]


def cer(hyp, ref):
    """Character error rate for one pair, whitespace counted like any char."""
    if len(ref) == 0:
        raise ValueError("empty reference has no defined error rate")
    return edit_distance(hyp, ref) / len(ref)


def corpus_cer(pairs):
    """Total edit distance over total reference length, not a mean of rates."""
    total_dist = 0
    total_len = 0
    for hyp, ref in pairs:
        total_dist += edit_distance(hyp, ref)
        total_len += len(ref)
    if total_len == 0:
        raise ValueError("empty reference corpus has no defined error rate")
    return total_dist / total_len


def wer(hyp, ref, mode="line"):
    """Word error rate for one pair.

    mode "isolated": whole-sequence 0/1 classification error.
    mode "line": word-level edit distance over the reference word count.
    """
    if mode == "isolated":
        return 0.0 if hyp == ref else 1.0
    if mode != "line":
        raise ValueError(f"unknown wer mode {mode!r}")
    ref_words = ref.split()
    if len(ref_words) == 0:
        raise ValueError("reference with no words has no defined error rate")
    return edit_distance(hyp.split(), ref_words) / len(ref_words)


def corpus_wer(pairs, mode="line"):
    """Corpus word error rate; summed distances over summed reference counts."""
    if mode == "isolated":
        pairs = list(pairs)
        if not pairs:
            raise ValueError("empty corpus has no defined error rate")
        wrong = sum(1 for hyp, ref in pairs if hyp != ref)
        return wrong / len(pairs)
    if mode != "line":
        raise ValueError(f"unknown wer mode {mode!r}")
    total_dist = 0
    total_words = 0
    for hyp, ref in pairs:
        ref_words = ref.split()
        total_dist += edit_distance(hyp.split(), ref_words)
        total_words += len(ref_words)
    if total_words == 0:
        raise ValueError("empty reference corpus has no defined error rate")
    return total_dist / total_words
