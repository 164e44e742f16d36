"""Command line entry points.

Every subcommand takes --seed, --config (a JSON file whose keys mirror the
flags) and --out.  Explicit flags override config file values, and the
fully resolved configuration is written next to the outputs so a run can
be reproduced from its artifacts alone.

Exit codes: 0 success, 2 bad usage or configuration, 3 unreadable or
malformed data, 4 numerical divergence during training.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .ctc import LabelAlphabet, best_path_decode
from .data import (
    SyntheticFontSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .decoding import DecodeParams, Lexicon, decode, estimate_priors
from .errors import ConfigError, DataError, DivergenceError
from .experiments import placement_ladder, run_overfit_ab
from .lm import read_arpa
from .metrics import corpus_cer, corpus_wer
from .network import ArchitectureSpec, Network, build_network
from .numerics import stream_rng
from .training import (
    TrainConfig,
    comparison_table,
    evaluate,
    run_experiment_matrix,
    train,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

_REQUIRED = object()


# ---- config plumbing ----------------------------------------------------


def _load_config_file(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return cfg


def _resolve(args, schema):
    """Merge defaults, config file values, and explicit flags (strongest)."""
    cfg = _load_config_file(getattr(args, "config", None))
    unknown = sorted(set(cfg) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for key, default in schema.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in cfg:
            out[key] = cfg[key]
        elif default is _REQUIRED:
            raise ConfigError(f"missing required setting {key!r}")
        else:
            out[key] = default
    return out


def _out_dir(resolved):
    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(out, resolved):
    clean = {k: v for k, v in resolved.items() if k != "config"}
    (out / "resolved-config.json").write_text(
        json.dumps(clean, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _parse_arch(value):
    """Architecture from a preset name, dict, or JSON file path."""
    if isinstance(value, dict):
        return ArchitectureSpec.from_dict(value)
    if value in (None, "baseline"):
        return ArchitectureSpec()
    p = Path(value)
    if p.exists():
        try:
            return ArchitectureSpec.from_dict(json.loads(p.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad architecture file {p}: {e}") from None
    raise ConfigError(f"unknown architecture {value!r} (preset name or JSON file)")


def _load_dir_dataset(dirpath, alphabet):
    d = Path(dirpath)
    result = load_dataset(d / "images", d / "transcripts.tsv", alphabet)
    return result.samples


def _dataset_alphabet(dirpath, explicit):
    """Alphabet from the flag/config, else from the dataset's metadata."""
    if explicit is not None:
        return LabelAlphabet(explicit)
    meta = Path(dirpath) / "dataset.json"
    if meta.exists():
        try:
            return LabelAlphabet(json.loads(meta.read_text(encoding="utf-8"))["alphabet"])
        except (json.JSONDecodeError, KeyError) as e:
            raise DataError(f"bad dataset metadata {meta}: {e}") from None
    raise ConfigError(
        f"no alphabet given and {meta} does not exist; pass --alphabet"
    )


# ---- report tables ------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_tables(rows, headers, base):
    """TSV for machines plus an aligned text variant next to it."""
    tsv_lines = ["\t".join(headers)]
    for r in rows:
        tsv_lines.append("\t".join(_fmt(r[h]) for h in headers))
    Path(str(base) + ".tsv").write_text("\n".join(tsv_lines) + "\n", encoding="utf-8")

    cells = [headers] + [[_fmt(r[h]) for h in headers] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    txt_lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    text = "\n".join(txt_lines) + "\n"
    Path(str(base) + ".txt").write_text(text, encoding="utf-8")
    return text


# ---- commands -----------------------------------------------------------


def cmd_synth(args):
    resolved = _resolve(args, {
        "n": _REQUIRED,
        "alphabet": "0123456789 ",
        "min_len": 3,
        "max_len": 8,
        "words": None,
        "scale": 2,
        "margin": 1,
        "spacing": 2,
        "jitter": 1,
        "noise": 0.1,
        "seed": 0,
        "out": _REQUIRED,
        "config": None,
    })
    alphabet = LabelAlphabet(resolved["alphabet"])
    words = resolved["words"]
    if isinstance(words, str):
        words = [w for w in words.split(",") if w]
    try:
        font = SyntheticFontSpec(
            scale=resolved["scale"],
            margin=resolved["margin"],
            spacing=resolved["spacing"],
            jitter=resolved["jitter"],
            noise=resolved["noise"],
        )
        samples = generate_synthetic(
            int(resolved["n"]),
            alphabet,
            (int(resolved["min_len"]), int(resolved["max_len"])),
            font,
            stream_rng(resolved["seed"], "synth"),
            vocabulary=words,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    out = _out_dir(resolved)
    save_dataset(samples, out)
    meta = {
        "alphabet": resolved["alphabet"],
        "font": font.to_dict(),
        "n": len(samples),
        "length_range": [int(resolved["min_len"]), int(resolved["max_len"])],
        "vocabulary": words,
        "seed": resolved["seed"],
    }
    (out / "dataset.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    _write_resolved(out, resolved)
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def _train_config(resolved):
    try:
        return TrainConfig(
            lr=float(resolved["lr"]),
            max_epochs=int(resolved["max_epochs"]),
            patience=int(resolved["patience"]),
            seed=resolved["seed"],
            init_std=float(resolved["init_std"]),
            skip_infeasible=bool(resolved["skip_infeasible"]),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def cmd_train(args):
    resolved = _resolve(args, {
        "train_dir": _REQUIRED,
        "valid_dir": _REQUIRED,
        "alphabet": None,
        "arch": "baseline",
        "lr": 1e-3,
        "max_epochs": 50,
        "patience": 10,
        "init_std": 1e-2,
        "skip_infeasible": False,
        "seed": 0,
        "out": _REQUIRED,
        "config": None,
    })
    alphabet = _dataset_alphabet(resolved["train_dir"], resolved["alphabet"])
    resolved["alphabet"] = "".join(alphabet.labels)
    arch = _parse_arch(resolved["arch"])
    resolved["arch"] = arch.to_dict()
    cfg = _train_config(resolved)
    train_samples = _load_dir_dataset(resolved["train_dir"], alphabet)
    valid_samples = _load_dir_dataset(resolved["valid_dir"], alphabet)

    out = _out_dir(resolved)
    _write_resolved(out, resolved)
    net = build_network(arch, alphabet, cfg.seed, cfg.init_std)
    log.info("training %d parameters on %d samples", net.num_params, len(train_samples))
    result = train(net, train_samples, valid_samples, cfg)
    result.log.write_tsv(out / "convergence.tsv")
    net.save(out / "final.ckpt")
    final = net.snapshot()
    net.restore(result.best_params)
    net.save(out / "best.ckpt")
    net.restore(final)
    print(
        f"best epoch {result.best_epoch}: valid NLL {result.best_valid_nll:.4f}; "
        f"final valid NLL {result.final_valid_nll:.4f}"
    )
    return EXIT_OK


def _decode_params(resolved):
    beam = resolved["beam"]
    try:
        return DecodeParams(
            optical_scale=float(resolved["optical_scale"]),
            word_insertion=float(resolved["word_insertion"]),
            prior_scale=float(resolved["prior_scale"]),
            beam=None if beam in (None, 0, "none") else int(beam),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def _constrained_setup(resolved, net):
    lexicon = Lexicon.read(resolved["lexicon"], net.alphabet)
    lm = read_arpa(Path(resolved["lm"]))
    src = Path(resolved["priors_from"])
    if not src.exists():
        raise DataError(f"priors transcript file {src} does not exist")
    transcripts = []
    for line in src.read_text(encoding="utf-8").split("\n"):
        if line:
            transcripts.append(line.split("\t", 1)[1] if "\t" in line else line)
    priors = estimate_priors(
        transcripts, net.alphabet, blank_share=float(resolved["blank_share"])
    )
    missing = [w for w in lexicon.words if (w,) not in lm.tables[1]]
    if missing:
        log.warning("%d lexicon words missing from the LM", len(missing))
    return lexicon, lm, priors


def cmd_eval(args):
    resolved = _resolve(args, {
        "checkpoint": _REQUIRED,
        "data_dir": _REQUIRED,
        "lexicon": None,
        "lm": None,
        "priors_from": None,
        "blank_share": 0.5,
        "optical_scale": 1.0,
        "word_insertion": 1.0,
        "prior_scale": 1.0,
        "beam": None,
        "wer_mode": "line",
        "out": _REQUIRED,
        "config": None,
    })
    net = Network.load(resolved["checkpoint"])
    samples = _load_dir_dataset(resolved["data_dir"], net.alphabet)
    mode = resolved["wer_mode"]
    if mode not in ("line", "isolated"):
        raise ConfigError(f"wer_mode must be 'line' or 'isolated', got {mode!r}")

    pairs = []
    nll, _ = evaluate(net, samples)
    for s in samples:
        post, _ = net.forward(s.image, mode="testing")
        hyp = net.alphabet.decode(best_path_decode(post))
        pairs.append((hyp, s.transcript))
    rows = [
        {"metric": "samples", "value": len(samples)},
        {"metric": "valid_nll", "value": nll},
        {"metric": "best_path_cer", "value": corpus_cer(pairs)},
        {"metric": "best_path_wer", "value": corpus_wer(pairs, mode=mode)},
    ]

    wants_constrained = [k for k in ("lexicon", "lm", "priors_from") if resolved[k]]
    if wants_constrained and len(wants_constrained) < 3:
        raise ConfigError("constrained eval needs lexicon, lm and priors_from together")
    if wants_constrained:
        lexicon, lm, priors = _constrained_setup(resolved, net)
        params = _decode_params(resolved)
        cpairs = []
        for s in samples:
            post, _ = net.forward(s.image, mode="testing")
            hyp = decode(post, priors, lexicon, lm, params, net.alphabet)
            cpairs.append((hyp.text, s.transcript))
        rows.append({"metric": "constrained_cer", "value": corpus_cer(cpairs)})
        rows.append({"metric": "constrained_wer", "value": corpus_wer(cpairs, mode=mode)})

    out = _out_dir(resolved)
    _write_resolved(out, resolved)
    text = write_tables(rows, ["metric", "value"], out / "report")
    print(text, end="")
    return EXIT_OK


def cmd_decode(args):
    resolved = _resolve(args, {
        "checkpoint": _REQUIRED,
        "data_dir": _REQUIRED,
        "lexicon": _REQUIRED,
        "lm": _REQUIRED,
        "priors_from": _REQUIRED,
        "blank_share": 0.5,
        "optical_scale": 1.0,
        "word_insertion": 1.0,
        "prior_scale": 1.0,
        "beam": None,
        "out": _REQUIRED,
        "config": None,
    })
    net = Network.load(resolved["checkpoint"])
    samples = _load_dir_dataset(resolved["data_dir"], net.alphabet)
    lexicon, lm, priors = _constrained_setup(resolved, net)
    params = _decode_params(resolved)
    out = _out_dir(resolved)
    _write_resolved(out, resolved)
    lines = []
    for s in samples:
        post, _ = net.forward(s.image, mode="testing")
        hyp = decode(post, priors, lexicon, lm, params, net.alphabet)
        scaled = params.optical_scale * hyp.optical
        lines.append(
            f"{s.sample_id}\t{hyp.text}\t"
            f"{hyp.total:.6f} {scaled:.6f} {hyp.lm_logprob:.6f} {len(hyp.words)}"
        )
    (out / "decode.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"decoded {len(samples)} samples into {out / 'decode.tsv'}")
    return EXIT_OK


def cmd_experiment(args):
    resolved = _resolve(args, {
        "preset": None,
        "entries": None,
        "train_dir": None,
        "valid_dir": None,
        "alphabet": None,
        "lr": 1e-3,
        "max_epochs": 50,
        "patience": 10,
        "init_std": 1e-2,
        "skip_infeasible": True,
        "seed": 0,
        "out": _REQUIRED,
        "config": None,
    })
    out = _out_dir(resolved)
    if resolved["preset"] == "overfit-ab":
        _write_resolved(out, resolved)
        runs = run_overfit_ab(out_dir=out)
    else:
        if resolved["preset"] == "placement-ladder":
            entries = placement_ladder()
        elif resolved["preset"] is None:
            raw = resolved["entries"]
            if not raw:
                raise ConfigError("experiment needs --preset or config entries")
            try:
                entries = [(e["name"], ArchitectureSpec.from_dict(e["arch"])) for e in raw]
            except (KeyError, TypeError) as e:
                raise ConfigError(f"bad experiment entries: {e}") from None
        else:
            raise ConfigError(f"unknown preset {resolved['preset']!r}")
        if not resolved["train_dir"] or not resolved["valid_dir"]:
            raise ConfigError("experiment needs train_dir and valid_dir")
        alphabet = _dataset_alphabet(resolved["train_dir"], resolved["alphabet"])
        resolved["alphabet"] = "".join(alphabet.labels)
        cfg = _train_config(resolved)
        train_samples = _load_dir_dataset(resolved["train_dir"], alphabet)
        valid_samples = _load_dir_dataset(resolved["valid_dir"], alphabet)
        _write_resolved(out, resolved)
        runs = run_experiment_matrix(
            entries, alphabet, train_samples, valid_samples, cfg, out_dir=out
        )
    rows = comparison_table(runs)
    text = write_tables(rows, list(rows[0].keys()), out / "comparison")
    print(text, end="")
    return EXIT_OK


def cmd_norms(args):
    resolved = _resolve(args, {
        "checkpoint": _REQUIRED,
        "out": None,
        "seed": 0,
        "config": None,
    })
    net = Network.load(resolved["checkpoint"])
    norms = net.weight_norms()
    rows = [
        {"group": "lstm", "norm": "l1", "value": norms["lstm"]["l1"]},
        {"group": "lstm", "norm": "l2", "value": norms["lstm"]["l2"]},
        {"group": "classification", "norm": "l1", "value": norms["classification"]["l1"]},
        {"group": "classification", "norm": "l2", "value": norms["classification"]["l2"]},
    ]
    if resolved["out"] is not None:
        out = _out_dir(resolved)
        _write_resolved(out, resolved)
        text = write_tables(rows, ["group", "norm", "value"], out / "norms")
    else:
        cells = [["group", "norm", "value"]] + [
            [r["group"], r["norm"], _fmt(r["value"])] for r in rows
        ]
        widths = [max(len(row[i]) for row in cells) for i in range(3)]
        text = "\n".join(
            "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells
        ) + "\n"
    print(text, end="")
    return EXIT_OK


# ---- parser -------------------------------------------------------------


def _add_common(p):
    p.add_argument("--seed", help="master seed for every random stream")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--out", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="linerec",
        description="Train, evaluate and decode the 2-D LSTM line recognizer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--alphabet")
    p.add_argument("--min-len", dest="min_len", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--words", help="comma-separated vocabulary for word lines")
    p.add_argument("--scale", type=int)
    p.add_argument("--margin", type=int)
    p.add_argument("--spacing", type=int)
    p.add_argument("--jitter", type=int)
    p.add_argument("--noise", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a network")
    p.add_argument("--train-dir", dest="train_dir")
    p.add_argument("--valid-dir", dest="valid_dir")
    p.add_argument("--alphabet")
    p.add_argument("--arch", help="preset name or architecture JSON file")
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--init-std", dest="init_std", type=float)
    p.add_argument("--skip-infeasible", dest="skip_infeasible", action="store_const", const=True)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="error rates of a checkpoint on a dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--lexicon")
    p.add_argument("--lm")
    p.add_argument("--priors-from", dest="priors_from")
    p.add_argument("--blank-share", dest="blank_share", type=float)
    p.add_argument("--optical-scale", dest="optical_scale", type=float)
    p.add_argument("--word-insertion", dest="word_insertion", type=float)
    p.add_argument("--prior-scale", dest="prior_scale", type=float)
    p.add_argument("--beam", type=int)
    p.add_argument("--wer-mode", dest="wer_mode", choices=["line", "isolated"])
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="constrained decoding of a dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--lexicon")
    p.add_argument("--lm")
    p.add_argument("--priors-from", dest="priors_from")
    p.add_argument("--blank-share", dest="blank_share", type=float)
    p.add_argument("--optical-scale", dest="optical_scale", type=float)
    p.add_argument("--word-insertion", dest="word_insertion", type=float)
    p.add_argument("--prior-scale", dest="prior_scale", type=float)
    p.add_argument("--beam", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("experiment", help="train a matrix of architectures")
    p.add_argument("--preset", choices=["overfit-ab", "placement-ladder"])
    p.add_argument("--train-dir", dest="train_dir")
    p.add_argument("--valid-dir", dest="valid_dir")
    p.add_argument("--alphabet")
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--init-std", dest="init_std", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("norms", help="weight norms of a checkpoint")
    p.add_argument("--checkpoint")
    _add_common(p)
    p.set_defaults(func=cmd_norms)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
