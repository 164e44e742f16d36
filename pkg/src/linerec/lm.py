"""Back-off n-gram language models in the ARPA text format.

Probabilities are stored internally as natural logs; ARPA files carry
log10, converted on read.  Missing back-off weights mean 0 in log space
(multiplier one).  A small estimator can produce exactly-normalized
unigram or bigram files for test corpora; anything serious should come
from a real toolkit.
"""

import math
from pathlib import Path

from .errors import DataError

LN10 = math.log(10.0)
NEG_INF = float("-inf")

BOS = "<s>"
UNK = "<unk>"


class NGramModel:
    """Evaluates p(word | context) with standard back-off.

    tables[k] maps k-word tuples to (logprob, backoff), both natural logs.
    """

    def __init__(self, tables):
        if 1 not in tables or not tables[1]:
            raise DataError("model has no unigrams")
        self.tables = tables
        self.order = max(tables.keys())

    @property
    def vocab(self):
        return [g[0] for g in self.tables[1].keys()]

    def initial_context(self):
        """Sentence-start context: (<s>,) when the model knows it."""
        if self.order > 1 and (BOS,) in self.tables[1]:
            return (BOS,)
        return ()

    def push(self, context, word):
        """Context after emitting word, truncated to what the order needs."""
        if self.order == 1:
            return ()
        return (tuple(context) + (word,))[-(self.order - 1):]

    def logprob(self, word, context=()):
        """Natural-log p(word | context); -inf for words the model cannot
        produce (no entry and no <unk>)."""
        context = tuple(context)
        if self.order > 1:
            context = context[-(self.order - 1):]
        else:
            context = ()
        if (word,) not in self.tables[1]:
            if (UNK,) in self.tables[1]:
                word = UNK
            else:
                return NEG_INF
        return self._score(context, word)

    def _score(self, context, word):
        gram = context + (word,)
        entry = self.tables.get(len(gram), {}).get(gram)
        if entry is not None:
            return entry[0]
        if not context:
            return NEG_INF  # unigram always present for known words
        ctx_entry = self.tables.get(len(context), {}).get(context)
        bow = ctx_entry[1] if ctx_entry is not None else 0.0
        return bow + self._score(context[1:], word)

    def sequence_logprob(self, words):
        """Sum of conditional logprobs from the sentence-start context."""
        ctx = self.initial_context()
        total = 0.0
        for w in words:
            total += self.logprob(w, ctx)
            ctx = self.push(ctx, w)
        return total

    def check_normalization(self, tol=1e-4):
        """Verify sum_w p(w | ctx) is 1 within tol for every stored context.

        Sums run over every predictable unigram word (<s> excluded).
        Raises DataError on the first failing context.
        """
        words = [w for w in self.vocab if w != BOS]
        contexts = [()]
        for k in range(1, self.order):
            contexts.extend(self.tables.get(k, {}).keys())
        for ctx in contexts:
            total = sum(math.exp(self._score(ctx, w)) for w in words)
            if abs(total - 1.0) > tol:
                raise DataError(
                    f"context {ctx!r} sums to {total:.6f}, expected 1 within {tol}"
                )


def read_arpa(source):
    """Parse an ARPA file (path or text) into an NGramModel."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    lines = iter(text.split("\n"))
    counts = {}
    for line in lines:
        if line.strip() == "\\data\\":
            break
    else:
        raise DataError("no \\data\\ section")
    for line in lines:
        s = line.strip()
        if not s:
            break
        if not s.startswith("ngram "):
            raise DataError(f"unexpected line in data section: {line!r}")
        order_part, _, count_part = s[len("ngram "):].partition("=")
        try:
            counts[int(order_part)] = int(count_part)
        except ValueError:
            raise DataError(f"bad ngram count line: {line!r}") from None

    tables = {k: {} for k in counts}
    current = None
    for line in lines:
        s = line.strip()
        if not s:
            continue
        if s == "\\end\\":
            break
        if s.startswith("\\") and s.endswith("-grams:"):
            try:
                current = int(s[1:].split("-")[0])
            except ValueError:
                raise DataError(f"bad section header {line!r}") from None
            if current not in tables:
                raise DataError(f"section {line!r} not declared in \\data\\")
            continue
        if current is None:
            raise DataError(f"entry outside any n-gram section: {line!r}")
        parts = s.split()
        if len(parts) == current + 1:
            logp, gram, bow = parts[0], tuple(parts[1:]), 0.0
        elif len(parts) == current + 2:
            logp, gram = parts[0], tuple(parts[1 : current + 1])
            try:
                bow = float(parts[-1]) * LN10
            except ValueError:
                raise DataError(f"bad back-off weight in {line!r}") from None
        else:
            raise DataError(f"wrong field count for {current}-gram: {line!r}")
        try:
            lp = float(logp) * LN10
        except ValueError:
            raise DataError(f"bad log probability in {line!r}") from None
        tables[current][gram] = (lp, bow)

    for k, expect in counts.items():
        if len(tables[k]) != expect:
            raise DataError(
                f"\\data\\ declared {expect} {k}-grams, file has {len(tables[k])}"
            )
    return NGramModel(tables)


# ---- tiny estimators (test fixtures only) -------------------------------


def unigram_arpa(sentences):
    """Maximum-likelihood unigram ARPA text over whitespace-split words."""
    counts = {}
    for s in sentences:
        for w in s.split():
            counts[w] = counts.get(w, 0) + 1
    if not counts:
        raise ValueError("empty corpus")
    total = sum(counts.values())
    lines = ["\\data\\", f"ngram 1={len(counts)}", "", "\\1-grams:"]
    for w in sorted(counts):
        lines.append(f"{math.log10(counts[w] / total):.6f}\t{w}")
    lines += ["", "\\end\\", ""]
    return "\n".join(lines)


def bigram_arpa(sentences, discount=0.5):
    """Absolute-discount bigram ARPA text, exactly normalized.

    Unigrams are MLE over word tokens; <s> appears with a placeholder
    probability so it can carry a back-off weight.  Each seen bigram is
    discounted and the freed mass becomes the context's back-off weight.
    """
    uni = {}
    bi = {}
    for s in sentences:
        words = s.split()
        prev = BOS
        for w in words:
            uni[w] = uni.get(w, 0) + 1
            bi[(prev, w)] = bi.get((prev, w), 0) + 1
            prev = w
    if not uni:
        raise ValueError("empty corpus")
    total = sum(uni.values())
    p_uni = {w: c / total for w, c in uni.items()}

    ctx_total = {}
    for (v, w), c in bi.items():
        ctx_total[v] = ctx_total.get(v, 0) + c
    bows = {}
    probs = {}
    for v, tot in ctx_total.items():
        seen = [w for (vv, w) in bi if vv == v]
        if len(seen) == len(p_uni):
            for w in seen:
                probs[(v, w)] = bi[(v, w)] / tot
            bows[v] = 0.0
            continue
        freed = 0.0
        for w in seen:
            p = (bi[(v, w)] - discount) / tot
            probs[(v, w)] = p
            freed += discount / tot
        unseen_mass = sum(p for w, p in p_uni.items() if (v, w) not in bi)
        bows[v] = freed / unseen_mass

    def bow_field(b):
        # back-off weight 1 (pass-through) and the never-used 0 both print
        # as log10 zero
        return f"{math.log10(b):.6f}" if b > 0 else "0.000000"

    lines = ["\\data\\", f"ngram 1={len(p_uni) + 1}", f"ngram 2={len(probs)}", ""]
    lines.append("\\1-grams:")
    lines.append(f"-99\t{BOS}\t{bow_field(bows.get(BOS, 1.0))}")
    for w in sorted(p_uni):
        lines.append(f"{math.log10(p_uni[w]):.6f}\t{w}\t{bow_field(bows.get(w, 1.0))}")
    lines.append("")
    lines.append("\\2-grams:")
    for (v, w) in sorted(probs):
        lines.append(f"{math.log10(probs[(v, w)]):.6f}\t{v} {w}")
    lines += ["", "\\end\\", ""]
    return "\n".join(lines)
