"""Lexicon- and LM-constrained decoding over posterior grids.

Column posteriors are turned into pseudo-likelihoods by dividing out label
priors (log p(s|x) - kappa * log p(s)).  Each label, whitespace and blank
included, is a one-state unit with self-loop and exit probability 0.5;
those transition log-probs ride inside the optical score.  The search
walks a product space of (position in a lexicon trie, LM context) with
token passing: per column every token either stays in its state or exits
to a successor, words close when their last character state is left, and
hypotheses meeting in the same (position, context) keep only the best
scorer.  A beam cap on live tokens makes the search approximate; with no
cap it is exact over the composed space.

Topology between units: a blank is optional between different adjacent
characters and required between repeated ones (otherwise the frames would
collapse into a single emission).  Between words the separator is
"optional blank, optional whitespace, optional blank" with the same
repeat rule across the boundary; the separator region may also precede
the first word or follow the last.

The final hypothesis maximizes
    optical_scale * log p(X|W) + log p(W) + |W| * log word_insertion.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DecodeError

LOG_HALF = math.log(0.5)
NEG_INF = float("-inf")


# ---- priors -------------------------------------------------------------


@dataclass(frozen=True)
class Priors:
    """Per-class prior probabilities aligned with the alphabet indices,
    blank last.  Strictly positive and summing to one."""

    probs: tuple

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("priors need at least one label plus blank")
        if np.any(p <= 0):
            raise ValueError("priors must be strictly positive")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"priors sum to {p.sum()}, not 1")
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    def log(self):
        return np.log(np.asarray(self.probs))


def estimate_priors(transcripts, alphabet, blank_share=0.5, floor=1e-6):
    """Label frequencies from training transcripts, blank given a fixed share.

    Character mass (whitespace included) is the observed frequency scaled
    by (1 - blank_share).  Everything is floored at `floor` and
    renormalized, so unseen labels keep a tiny nonzero prior.
    """
    if not 0.0 < blank_share < 1.0:
        raise ConfigError(f"blank_share must be in (0, 1), got {blank_share}")
    counts = np.zeros(alphabet.size)
    for text in transcripts:
        for idx in alphabet.encode(text):
            counts[idx] += 1
    total = counts.sum()
    if total == 0:
        raise ConfigError("cannot estimate priors from an empty corpus")
    probs = np.empty(alphabet.size)
    probs[: alphabet.blank] = (1.0 - blank_share) * counts[: alphabet.blank] / total
    probs[alphabet.blank] = blank_share
    probs = np.maximum(probs, floor)
    probs /= probs.sum()
    return Priors(tuple(probs))


def pseudo_likelihood(posteriors, priors, prior_scale):
    """(T, K) grid of log p(s|x_t) - prior_scale * log p(s)."""
    if prior_scale < 0:
        raise ValueError(f"prior_scale must be non-negative, got {prior_scale}")
    y = np.asarray(posteriors, dtype=np.float64)
    if y.ndim == 3:
        if y.shape[0] != 1:
            raise ValueError(f"posterior grid must have height 1, got {y.shape}")
        y = y[0]
    if y.shape[1] != len(priors.probs):
        raise ValueError("priors do not match posterior classes")
    with np.errstate(divide="ignore"):
        out = np.log(y) - prior_scale * priors.log()
    return out


# ---- lexicon ------------------------------------------------------------


class Lexicon:
    """Closed vocabulary as a character trie.

    Entries map a word to its spelling (usually identical).  Nodes carry
    the incoming character and the list of words ending there; two words
    may share a spelling.
    """

    def __init__(self, entries, alphabet):
        if not entries:
            raise DataError("empty lexicon")
        self.entries = dict(entries)
        if len(self.entries) != len(entries):
            raise DataError("duplicate word in lexicon")
        for word, spelling in self.entries.items():
            if not spelling:
                raise DataError(f"word {word!r} has an empty spelling")
            for ch in spelling:
                if ch == " ":
                    raise DataError(f"spelling of {word!r} contains whitespace")
                if ch not in alphabet:
                    raise DataError(
                        f"spelling of {word!r} uses {ch!r}, not in the alphabet"
                    )
        # trie arrays: per node its character, children map, finishing words
        self.char = [None]
        self.children = [{}]
        self.words_at = [[]]
        for word in sorted(self.entries):
            node = 0
            for ch in self.entries[word]:
                nxt = self.children[node].get(ch)
                if nxt is None:
                    nxt = len(self.char)
                    self.char.append(ch)
                    self.children.append({})
                    self.words_at.append([])
                    self.children[node][ch] = nxt
                node = nxt
            self.words_at[node].append(word)

    @property
    def words(self):
        return sorted(self.entries)

    @classmethod
    def parse(cls, text, alphabet):
        entries = {}
        for lineno, line in enumerate(text.split("\n"), start=1):
            if not line.strip():
                continue
            if "\t" not in line:
                raise DataError(f"lexicon line {lineno}: expected 'word<TAB>spelling'")
            word, spelling = line.split("\t", 1)
            if word in entries:
                raise DataError(f"lexicon line {lineno}: duplicate word {word!r}")
            entries[word] = spelling
        return cls(entries, alphabet)

    @classmethod
    def read(cls, path, alphabet):
        with open(path, "r", encoding="utf-8") as f:
            return cls.parse(f.read(), alphabet)


# ---- search -------------------------------------------------------------


@dataclass(frozen=True)
class DecodeParams:
    """Knobs of the search objective.

    optical_scale weighs the optical log-likelihood, word_insertion is the
    per-word bonus factor (its log is added once per word), prior_scale
    divides out label priors, beam caps live tokens per column (None means
    exhaustive).
    """

    optical_scale: float = 1.0
    word_insertion: float = 1.0
    prior_scale: float = 1.0
    beam: int = None

    def __post_init__(self):
        if self.optical_scale < 0:
            raise ConfigError("optical_scale must be non-negative")
        if self.word_insertion <= 0:
            raise ConfigError("word_insertion must be positive")
        if self.prior_scale < 0:
            raise ConfigError("prior_scale must be non-negative")
        if self.beam is not None and self.beam < 1:
            raise ConfigError("beam must be at least 1 (or None)")


@dataclass(frozen=True)
class Hypothesis:
    """Decoded word sequence with its score breakdown."""

    words: tuple
    optical: float
    lm_logprob: float
    insertion: float
    total: float

    @property
    def text(self):
        return " ".join(self.words)


class _Graph:
    """Successor structure over (kind, node) search states.

    Kinds: "c" character state at a trie node; "wb" word-internal blank
    after a trie node; "sb0"/"sb1" separator blanks before/after the
    separator whitespace; "sp" the separator whitespace itself.
    """

    def __init__(self, lexicon, alphabet):
        self.lex = lexicon
        self.blank = alphabet.blank
        self.space = None
        if " " in alphabet:
            self.space = alphabet.encode(" ")[0]
        self.char_idx = {}
        for node in range(1, len(lexicon.char)):
            self.char_idx[node] = alphabet.encode(lexicon.char[node])[0]
        self.entry_chars = [("c", n) for n in sorted(lexicon.children[0].values())]

    def label(self, state):
        kind, node = state
        if kind == "c":
            return self.char_idx[node]
        if kind == "sp":
            return self.space
        return self.blank

    def start_states(self):
        states = list(self.entry_chars) + [("sb0", 0)]
        if self.space is not None:
            states.append(("sp", 0))
        return states

    def word_entries(self, after_char=None):
        """First-character states of all words; when after_char is given,
        entering the same character without a separator is forbidden."""
        if after_char is None:
            return self.entry_chars
        return [s for s in self.entry_chars if self.lex.char[s[1]] != after_char]

    def successors(self, state):
        """(next_state, closed_word) pairs; closed_word is None unless the
        move finishes a word and should apply its LM score."""
        kind, node = state
        out = []
        if kind == "c":
            ch = self.lex.char[node]
            kids = self.lex.children[node]
            for c2, n2 in sorted(kids.items()):
                if c2 != ch:
                    out.append((("c", n2), None))
            if kids:
                out.append((("wb", node), None))
            for word in self.lex.words_at[node]:
                out.append((("sb0", 0), word))
                if self.space is not None:
                    out.append((("sp", 0), word))
                for s2 in self.word_entries(after_char=ch):
                    out.append((s2, word))
        elif kind == "wb":
            for _, n2 in sorted(self.lex.children[node].items()):
                out.append((("c", n2), None))
        elif kind == "sb0":
            if self.space is not None:
                out.append((("sp", 0), None))
            for s2 in self.word_entries():
                out.append((s2, None))
        elif kind == "sp":
            out.append((("sb1", 0), None))
            for s2 in self.word_entries():
                out.append((s2, None))
        elif kind == "sb1":
            for s2 in self.word_entries():
                out.append((s2, None))
        else:
            raise AssertionError(state)
        return out

    def finishes(self, state):
        """Words closable when the input ends in this state (list possibly
        empty), or True for states already past their last word."""
        kind, node = state
        if kind in ("sb0", "sb1", "sp"):
            return True
        if kind == "c" and self.lex.words_at[node]:
            return list(self.lex.words_at[node])
        return None


@dataclass
class _Token:
    optical: float
    lm: float
    words: tuple


def _total(tok, params):
    return (
        params.optical_scale * tok.optical
        + tok.lm
        + len(tok.words) * math.log(params.word_insertion)
    )


def _better(a, b, params):
    """Deterministic preference between equal-key tokens."""
    ta, tb = _total(a, params), _total(b, params)
    if ta != tb:
        return ta > tb
    return (len(a.words), a.words) < (len(b.words), b.words)


def decode(posteriors, priors, lexicon, lm, params, alphabet):
    """Best word sequence for one posterior grid.

    Every emitted word comes from the lexicon.  Raises DecodeError when no
    token reaches a word boundary by the last column (for instance with a
    very narrow beam).
    """
    emit = pseudo_likelihood(posteriors, priors, params.prior_scale)
    T = emit.shape[0]
    graph = _Graph(lexicon, alphabet)
    lm_ctx0 = lm.initial_context()

    tokens = {}
    for state in graph.start_states():
        tok = _Token(emit[0, graph.label(state)], 0.0, ())
        key = (state, lm_ctx0)
        if key not in tokens or _better(tok, tokens[key], params):
            tokens[key] = tok

    for t in range(1, T):
        new = {}

        def offer(state, ctx, tok):
            key = (state, ctx)
            if key not in new or _better(tok, new[key], params):
                new[key] = tok

        for (state, ctx), tok in tokens.items():
            stay = _Token(
                tok.optical + LOG_HALF + emit[t, graph.label(state)], tok.lm, tok.words
            )
            offer(state, ctx, stay)
            for nxt, closed in graph.successors(state):
                optical = tok.optical + LOG_HALF + emit[t, graph.label(nxt)]
                if closed is None:
                    offer(nxt, ctx, _Token(optical, tok.lm, tok.words))
                else:
                    lp = lm.logprob(closed, ctx)
                    if lp == NEG_INF:
                        continue
                    offer(
                        nxt,
                        lm.push(ctx, closed),
                        _Token(optical, tok.lm + lp, tok.words + (closed,)),
                    )
        if params.beam is not None and len(new) > params.beam:
            ranked = sorted(
                new.items(),
                key=lambda kv: (
                    -_total(kv[1], params),
                    len(kv[1].words),
                    kv[1].words,
                    str(kv[0]),
                ),
            )
            new = dict(ranked[: params.beam])
        tokens = new

    best = None
    log_wip = math.log(params.word_insertion)
    for (state, ctx), tok in tokens.items():
        fin = graph.finishes(state)
        if fin is None:
            continue
        if fin is True:
            candidates = [tok]
        else:
            candidates = []
            for word in fin:
                lp = lm.logprob(word, ctx)
                if lp == NEG_INF:
                    continue
                candidates.append(
                    _Token(tok.optical, tok.lm + lp, tok.words + (word,))
                )
        for cand in candidates:
            if best is None or _better(cand, best, params):
                best = cand
    if best is None:
        raise DecodeError("no complete hypothesis survived the search")
    for w in best.words:
        if w not in lexicon.entries:
            raise AssertionError(f"emitted word {w!r} outside the lexicon")
    return Hypothesis(
        words=best.words,
        optical=best.optical,
        lm_logprob=best.lm,
        insertion=len(best.words) * log_wip,
        total=_total(best, params),
    )


def tune(posterior_list, references, priors, lexicon, lm, alphabet,
         optical_grid, insertion_grid, prior_grid, beam=None, mode="line"):
    """Grid search of decode parameters on a held-out set.

    Minimizes WER; ties fall to CER, then to the smaller optical scale,
    insertion factor and prior scale, in that order.  Returns the winning
    DecodeParams and the full result table.
    """
    from .metrics import corpus_cer, corpus_wer

    if len(posterior_list) != len(references):
        raise ValueError("posterior and reference counts differ")
    table = []
    best = None
    for omega in optical_grid:
        for wip in insertion_grid:
            for kappa in prior_grid:
                params = DecodeParams(omega, wip, kappa, beam)
                pairs = []
                for post, ref in zip(posterior_list, references):
                    hyp = decode(post, priors, lexicon, lm, params, alphabet)
                    pairs.append((hyp.text, ref))
                wer_val = corpus_wer(pairs, mode=mode)
                cer_val = corpus_cer(pairs)
                row = {
                    "optical_scale": omega,
                    "word_insertion": wip,
                    "prior_scale": kappa,
                    "wer": wer_val,
                    "cer": cer_val,
                }
                table.append(row)
                key = (wer_val, cer_val, omega, wip, kappa)
                if best is None or key < best[0]:
                    best = (key, params)
    return best[1], table
