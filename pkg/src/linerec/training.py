"""Online SGD training with CTC, early stopping, and experiment matrices."""

import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .ctc import ctc_nll, best_path_decode, min_frames
from .errors import ConfigError, DivergenceError, InfeasibleTargetError
from .metrics import corpus_cer
from .network import build_network
from .numerics import stream_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Settings for the online SGD loop.

    Updates are applied per sample with a fixed learning rate; no momentum
    and no weight decay.  Early stopping watches the validation NLL with
    the given patience.  seed keys every random stream of the run.
    """

    lr: float = 1e-3
    max_epochs: int = 50
    patience: int = 10
    seed: object = 0
    init_std: float = 1e-2
    skip_infeasible: bool = False
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.lr <= 0 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("lr, max_epochs and patience must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_nll: float
    valid_nll: float
    valid_cer: float
    seconds: float


class ConvergenceLog:
    """Per-epoch training curve, writable as a small TSV for plotting."""

    COLUMNS = ("epoch", "train_nll", "valid_nll", "valid_cer", "seconds")

    def __init__(self):
        self.records = []

    def append(self, record):
        self.records.append(record)

    def best_epoch(self):
        """Epoch with the lowest validation NLL (earliest on ties)."""
        if not self.records:
            raise ValueError("empty log")
        best = min(self.records, key=lambda r: (r.valid_nll, r.epoch))
        return best.epoch

    def valid_nll(self, epoch):
        for r in self.records:
            if r.epoch == epoch:
                return r.valid_nll
        raise KeyError(epoch)

    def write_tsv(self, path):
        lines = ["\t".join(self.COLUMNS)]
        for r in self.records:
            lines.append(
                f"{r.epoch}\t{r.train_nll:.10g}\t{r.valid_nll:.10g}"
                f"\t{r.valid_cer:.10g}\t{r.seconds:.3f}"
            )
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def read_tsv(cls, path):
        log_ = cls()
        with open(path, "r", encoding="utf-8") as f:
            lines = [ln for ln in f.read().split("\n") if ln]
        if lines[:1] != ["\t".join(cls.COLUMNS)]:
            raise ValueError(f"unexpected log header in {path}")
        for ln in lines[1:]:
            e, tn, vn, vc, sec = ln.split("\t")
            log_.append(EpochRecord(int(e), float(tn), float(vn), float(vc), float(sec)))
        return log_


@dataclass
class TrainResult:
    log: ConvergenceLog
    best_epoch: int
    best_valid_nll: float
    best_params: dict
    final_valid_nll: float
    final_train_nll: float


def _encoded(net, samples, skip_infeasible, what):
    """Pair samples with encoded targets, dropping or rejecting misfits."""
    out = []
    for s in samples:
        targets = net.alphabet.encode(s.transcript)
        cols = net.output_columns(s.image.shape[1])
        if cols < min_frames(targets):
            msg = (
                f"{what} sample {s.sample_id}: target needs {min_frames(targets)} "
                f"columns but the image yields {cols}"
            )
            if skip_infeasible:
                log.warning("skipping %s", msg)
                continue
            raise InfeasibleTargetError(msg)
        out.append((s, targets))
    if not out:
        raise ConfigError(f"no usable {what} samples")
    return out


def evaluate(net, samples, skip_infeasible=True):
    """Validation-style pass: mean NLL and best-path corpus CER.

    Runs in testing mode (dropout becomes a fixed p scaling).  Samples
    whose target cannot fit contribute to CER but not to the NLL mean.
    """
    nlls = []
    pairs = []
    for s in samples:
        post, _ = net.forward(s.image, mode="testing")
        hyp = net.alphabet.decode(best_path_decode(post))
        pairs.append((hyp, s.transcript))
        targets = net.alphabet.encode(s.transcript)
        if post.shape[1] >= min_frames(targets):
            loss, _ = ctc_nll(post, targets)
            nlls.append(loss)
        elif not skip_infeasible:
            raise InfeasibleTargetError(f"sample {s.sample_id} does not fit")
    if not nlls:
        raise ConfigError("no sample was scorable")
    return float(np.mean(nlls)), corpus_cer(pairs)


def train(net, train_samples, valid_samples, cfg):
    """Online SGD with per-sample updates and NLL-based early stopping.

    Returns the convergence log plus a snapshot of the best-on-validation
    parameters; the network itself is left at its final state.
    """
    shuffle_rng = stream_rng(cfg.seed, "shuffle")
    dropout_rng = stream_rng(cfg.seed, "dropout")
    train_pairs = _encoded(net, train_samples, cfg.skip_infeasible, "training")
    if not valid_samples:
        raise ConfigError("validation set is empty")

    curve = ConvergenceLog()
    best_nll = float("inf")
    best_epoch = -1
    best_params = net.snapshot()
    since_best = 0
    initial_train_nll = None
    final_train_nll = float("nan")

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(train_pairs))
        total = 0.0
        for idx in order:
            sample, targets = train_pairs[idx]
            post, cache = net.forward(sample.image, mode="training", rng=dropout_rng)
            try:
                loss, dpost = ctc_nll(post, targets)
            except InfeasibleTargetError as e:
                # column counts were checked up front, so this means the
                # posteriors left the target with zero mass
                raise DivergenceError(
                    f"epoch {epoch}, sample {sample.sample_id}: {e}"
                ) from None
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, sample {sample.sample_id}"
                )
            net.zero_grads()
            net.backward(cache, dpost)
            net.sgd_step(cfg.lr)
            total += loss
        train_nll = total / len(train_pairs)
        if initial_train_nll is None:
            initial_train_nll = train_nll
        if not np.isfinite(train_nll) or train_nll > cfg.divergence_factor * initial_train_nll:
            raise DivergenceError(
                f"training diverged at epoch {epoch}: mean NLL {train_nll:.4g} "
                f"vs initial {initial_train_nll:.4g}"
            )
        valid_nll, valid_cer = evaluate(net, valid_samples)
        seconds = time.perf_counter() - t0
        curve.append(EpochRecord(epoch, train_nll, valid_nll, valid_cer, seconds))
        final_train_nll = train_nll
        log.info(
            "epoch %d: train %.4f valid %.4f cer %.4f (%.1fs)",
            epoch, train_nll, valid_nll, valid_cer, seconds,
        )
        if valid_nll < best_nll:
            best_nll = valid_nll
            best_epoch = epoch
            best_params = net.snapshot()
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break

    final_valid_nll = curve.records[-1].valid_nll
    return TrainResult(
        curve, best_epoch, best_nll, best_params, final_valid_nll, final_train_nll
    )


@dataclass
class ExperimentRun:
    name: str
    log: ConvergenceLog
    best_epoch: int
    best_valid_nll: float
    best_valid_cer: float
    final_train_nll: float
    final_valid_nll: float
    norms_final: dict
    norms_best: dict


def run_experiment_matrix(entries, alphabet, train_samples, valid_samples, cfg, out_dir=None):
    """Train every (name, architecture) entry under per-run derived seeds.

    Each run draws its streams from seed "<cfg.seed>/<name>", so adding or
    reordering entries does not disturb the others.  With out_dir set,
    per-run convergence logs and checkpoints are written beneath it.
    """
    runs = []
    for name, arch in entries:
        run_seed = f"{cfg.seed}/{name}"
        run_cfg = replace(cfg, seed=run_seed)
        net = build_network(arch, alphabet, run_seed, cfg.init_std)
        log.info("experiment run %r: %d params", name, net.num_params)
        result = train(net, train_samples, valid_samples, run_cfg)
        norms_final = net.weight_norms()
        if out_dir is not None:
            rd = Path(out_dir) / name
            rd.mkdir(parents=True, exist_ok=True)
            result.log.write_tsv(rd / "convergence.tsv")
            net.save(rd / "final.ckpt")
        final_params = net.snapshot()
        net.restore(result.best_params)
        norms_best = net.weight_norms()
        if out_dir is not None:
            net.save(Path(out_dir) / name / "best.ckpt")
        net.restore(final_params)
        best_cer = next(
            r.valid_cer for r in result.log.records if r.epoch == result.best_epoch
        )
        runs.append(
            ExperimentRun(
                name=name,
                log=result.log,
                best_epoch=result.best_epoch,
                best_valid_nll=result.best_valid_nll,
                best_valid_cer=best_cer,
                final_train_nll=result.final_train_nll,
                final_valid_nll=result.final_valid_nll,
                norms_final=norms_final,
                norms_best=norms_best,
            )
        )
    return runs


def comparison_table(runs):
    """Rows of plain dicts summarizing an experiment matrix."""
    return [
        {
            "config": r.name,
            "best_epoch": r.best_epoch,
            "best_valid_nll": r.best_valid_nll,
            "best_valid_cer": r.best_valid_cer,
            "final_valid_nll": r.final_valid_nll,
            "final_train_nll": r.final_train_nll,
            "cls_l1_final": r.norms_final["classification"]["l1"],
            "cls_l2_final": r.norms_final["classification"]["l2"],
            "lstm_l1_final": r.norms_final["lstm"]["l1"],
            "lstm_l2_final": r.norms_final["lstm"]["l2"],
        }
        for r in runs
    ]
