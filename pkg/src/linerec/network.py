"""Full recognition network: blocked input, LSTM/conv stages, softmax.

The image is tiled into blocks, then each stage runs four directional 2-D
LSTMs whose outputs feed direction-wise subsampling convolutions; the four
convolution outputs are summed and squashed with tanh.  On top of the last
LSTM layer a per-cell affine map (one per direction, summed) produces class
scores, which are collapsed vertically and normalized per column by a
softmax.  Dropout layers, when enabled, sit between an LSTM output and the
following convolution or affine map; they never touch the recurrent paths
inside an LSTM.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .ctc import LabelAlphabet
from .errors import DataError, StaleCacheError
from .layers import (
    DIRECTIONS,
    CellwiseLinear,
    Conv,
    Dropout,
    MdLstm,
    block_input,
    block_input_backward,
    collapse_vertical,
    collapse_vertical_backward,
    softmax_backward,
    softmax_forward,
    sum_tanh_backward,
    sum_tanh_combine,
)
from .numerics import assert_all_finite, stream_rng

CHECKPOINT_MAGIC = b"LRECNET1"


@dataclass(frozen=True)
class ConvStage:
    """One LSTM + convolution stage of the stack."""

    lstm_units: int
    conv_filter: tuple = (2, 4)
    conv_features: int = 6
    dropout: bool = False

    def __post_init__(self):
        object.__setattr__(self, "conv_filter", tuple(self.conv_filter))
        if self.lstm_units < 1 or self.conv_features < 1:
            raise ValueError("stage sizes must be positive")

    def to_dict(self):
        return {
            "lstm_units": self.lstm_units,
            "conv_filter": list(self.conv_filter),
            "conv_features": self.conv_features,
            "dropout": self.dropout,
        }


@dataclass(frozen=True)
class ArchitectureSpec:
    """Sizes and dropout placement for the whole stack.

    The defaults give the small reference configuration: LSTM layers of
    2, 10 and 50 units, convolutions of 6 and 20 features with 2x4 filters,
    2x2 input blocks, no dropout anywhere.
    """

    conv_stages: tuple = (
        ConvStage(2, (2, 4), 6),
        ConvStage(10, (2, 4), 20),
    )
    final_units: int = 50
    final_dropout: bool = False
    block: tuple = (2, 2)
    dropout_p: float = 0.5
    peepholes: bool = False

    def __post_init__(self):
        object.__setattr__(self, "conv_stages", tuple(self.conv_stages))
        object.__setattr__(self, "block", tuple(self.block))
        if self.final_units < 1:
            raise ValueError("final_units must be positive")
        if not 0.0 < self.dropout_p <= 1.0:
            raise ValueError(f"dropout_p must be in (0, 1], got {self.dropout_p}")

    def to_dict(self):
        return {
            "conv_stages": [s.to_dict() for s in self.conv_stages],
            "final_units": self.final_units,
            "final_dropout": self.final_dropout,
            "block": list(self.block),
            "dropout_p": self.dropout_p,
            "peepholes": self.peepholes,
        }

    @classmethod
    def from_dict(cls, d):
        stages = tuple(
            ConvStage(
                lstm_units=s["lstm_units"],
                conv_filter=tuple(s["conv_filter"]),
                conv_features=s["conv_features"],
                dropout=s.get("dropout", False),
            )
            for s in d.get("conv_stages", [])
        )
        return cls(
            conv_stages=stages,
            final_units=d["final_units"],
            final_dropout=d.get("final_dropout", False),
            block=tuple(d.get("block", (2, 2))),
            dropout_p=d.get("dropout_p", 0.5),
            peepholes=d.get("peepholes", False),
        )

    def with_dropout_everywhere(self):
        stages = tuple(
            ConvStage(s.lstm_units, s.conv_filter, s.conv_features, True)
            for s in self.conv_stages
        )
        return ArchitectureSpec(
            stages, self.final_units, True, self.block, self.dropout_p, self.peepholes
        )


class Network:
    """Parameter container plus forward/backward over the whole stack."""

    def __init__(self, arch, alphabet):
        if not isinstance(alphabet, LabelAlphabet):
            raise TypeError("alphabet must be a LabelAlphabet")
        self.arch = arch
        self.alphabet = alphabet
        self._version = 0

        bh, bw = arch.block
        in_feat = bh * bw
        self.stages = []
        for spec in arch.conv_stages:
            lstms = {
                d: MdLstm(in_feat, spec.lstm_units, d, arch.peepholes)
                for d in DIRECTIONS
            }
            conv = {
                d: Conv(spec.lstm_units, spec.conv_features, spec.conv_filter)
                for d in DIRECTIONS
            }
            drop = Dropout(arch.dropout_p) if spec.dropout else None
            self.stages.append({"spec": spec, "lstm": lstms, "drop": drop, "conv": conv})
            in_feat = spec.conv_features
        self.top_lstm = {d: MdLstm(in_feat, arch.final_units, d, arch.peepholes) for d in DIRECTIONS}
        self.top_drop = Dropout(arch.dropout_p) if arch.final_dropout else None
        self.top_out = {d: CellwiseLinear(arch.final_units, alphabet.size) for d in DIRECTIONS}

        self._flat = {}
        for k, stage in enumerate(self.stages):
            for d in DIRECTIONS:
                for name, arr in stage["lstm"][d].w.items():
                    self._flat[f"stage{k}.{d}.lstm.{name}"] = (stage["lstm"][d], name)
                self._flat[f"stage{k}.{d}.conv.w"] = (stage["conv"][d], "w")
        for d in DIRECTIONS:
            for name in self.top_lstm[d].w:
                self._flat[f"top.{d}.lstm.{name}"] = (self.top_lstm[d], name)
            for name in self.top_out[d].w:
                self._flat[f"top.{d}.out.{name}"] = (self.top_out[d], name)

    # -- parameter access -------------------------------------------------

    def params(self):
        return {k: layer.w[name] for k, (layer, name) in self._flat.items()}

    def grads(self):
        return {k: layer.g[name] for k, (layer, name) in self._flat.items()}

    @property
    def num_params(self):
        return sum(v.size for v in self.params().values())

    def output_columns(self, image_width):
        """Posterior columns produced for an image of the given width."""
        w = -(-image_width // self.arch.block[1])
        for spec in self.arch.conv_stages:
            w = -(-w // spec.conv_filter[1])
        return w

    def initialize(self, rng, std=1e-2):
        """Gaussian weights with the given std, all biases zero."""
        for layer in self._layers_with_params():
            layer.init(rng, std)
        self._version += 1
        return self

    def _layers_with_params(self):
        for stage in self.stages:
            for d in DIRECTIONS:
                yield stage["lstm"][d]
                yield stage["conv"][d]
        for d in DIRECTIONS:
            yield self.top_lstm[d]
            yield self.top_out[d]

    def zero_grads(self):
        for layer in self._layers_with_params():
            layer.zero_grads()

    def sgd_step(self, lr):
        """In-place w -= lr * g on every parameter."""
        params = self.params()
        grads = self.grads()
        for k in params:
            params[k] -= lr * grads[k]
        self._version += 1

    def snapshot(self):
        return {k: v.copy() for k, v in self.params().items()}

    def restore(self, snap):
        params = self.params()
        for k, v in snap.items():
            params[k][:] = v
        self._version += 1

    # -- forward / backward ----------------------------------------------

    def forward(self, image, mode="testing", rng=None):
        """Posterior grid (1, T, classes) plus a cache for backward.

        mode "training" samples dropout masks from rng; mode "testing"
        scales dropped activations by p instead.
        """
        if mode not in ("training", "testing"):
            raise ValueError(f"unknown mode {mode!r}")
        x, blk = block_input(image, self.arch.block)
        stage_caches = []
        for stage in self.stages:
            lstm_c, drop_c, conv_c = {}, {}, {}
            conv_outs = []
            for d in DIRECTIONS:
                h, lstm_c[d] = stage["lstm"][d].forward(x)
                if stage["drop"] is not None:
                    h, drop_c[d] = stage["drop"].forward(h, mode, rng)
                y, conv_c[d] = stage["conv"][d].forward(h)
                conv_outs.append(y)
            x, comb_c = sum_tanh_combine(conv_outs)
            stage_caches.append((lstm_c, drop_c, conv_c, comb_c))

        top_lstm_c, top_drop_c, top_out_c = {}, {}, {}
        scores = None
        for d in DIRECTIONS:
            h, top_lstm_c[d] = self.top_lstm[d].forward(x)
            if self.top_drop is not None:
                h, top_drop_c[d] = self.top_drop.forward(h, mode, rng)
            z, top_out_c[d] = self.top_out[d].forward(h)
            scores = z if scores is None else scores + z
        collapsed, col_c = collapse_vertical(scores)
        post, soft_c = softmax_forward(collapsed)
        assert_all_finite(post, "posteriors")
        cache = {
            "version": self._version,
            "block": blk,
            "stages": stage_caches,
            "top": (top_lstm_c, top_drop_c, top_out_c),
            "collapse": col_c,
            "softmax": soft_c,
        }
        return post, cache

    def backward(self, cache, d_posteriors):
        """Accumulate parameter gradients; returns gradient wrt the image."""
        if cache["version"] != self._version:
            raise StaleCacheError("cache predates a parameter update")
        d = softmax_backward(cache["softmax"], np.asarray(d_posteriors, dtype=np.float64))
        d = collapse_vertical_backward(cache["collapse"], d)

        top_lstm_c, top_drop_c, top_out_c = cache["top"]
        d_x = None
        for dirname in DIRECTIONS:
            dh = self.top_out[dirname].backward(top_out_c[dirname], d)
            if self.top_drop is not None:
                dh = self.top_drop.backward(top_drop_c[dirname], dh)
            din = self.top_lstm[dirname].backward(top_lstm_c[dirname], dh)
            d_x = din if d_x is None else d_x + din

        for stage, (lstm_c, drop_c, conv_c, comb_c) in zip(
            reversed(self.stages), reversed(cache["stages"])
        ):
            d_conv_out = sum_tanh_backward(comb_c, d_x)
            d_x = None
            for dirname in DIRECTIONS:
                dh = stage["conv"][dirname].backward(conv_c[dirname], d_conv_out)
                if stage["drop"] is not None:
                    dh = stage["drop"].backward(drop_c[dirname], dh)
                din = stage["lstm"][dirname].backward(lstm_c[dirname], dh)
                d_x = din if d_x is None else d_x + din

        return block_input_backward(d_x, cache["block"])

    # -- inspection -------------------------------------------------------

    def graph(self):
        """Layer graph as nodes plus feed-forward edges.

        Every edge listed here is a feed-forward connection between layer
        outputs and inputs; recurrence exists only inside nodes flagged
        recurrent_inside.
        """
        nodes = {}
        edges = []

        def add(nid, kind, recurrent_inside=False):
            nodes[nid] = {"kind": kind, "recurrent_inside": recurrent_inside}
            return nid

        prev = add("block", "block")
        for k, stage in enumerate(self.stages):
            merged = []
            for d in DIRECTIONS:
                lstm = add(f"stage{k}.{d}.lstm", "lstm", recurrent_inside=True)
                edges.append((prev, lstm))
                tail = lstm
                if stage["drop"] is not None:
                    drop = add(f"stage{k}.{d}.dropout", "dropout")
                    edges.append((tail, drop))
                    tail = drop
                conv = add(f"stage{k}.{d}.conv", "conv")
                edges.append((tail, conv))
                merged.append(conv)
            comb = add(f"stage{k}.combine", "sum_tanh")
            for m in merged:
                edges.append((m, comb))
            prev = comb
        merged = []
        for d in DIRECTIONS:
            lstm = add(f"top.{d}.lstm", "lstm", recurrent_inside=True)
            edges.append((prev, lstm))
            tail = lstm
            if self.top_drop is not None:
                drop = add(f"top.{d}.dropout", "dropout")
                edges.append((tail, drop))
                tail = drop
            out = add(f"top.{d}.out", "linear")
            edges.append((tail, out))
            merged.append(out)
        comb = add("top.sum", "sum")
        for m in merged:
            edges.append((m, comb))
        col = add("collapse", "collapse")
        edges.append((comb, col))
        soft = add("softmax", "softmax")
        edges.append((col, soft))
        return nodes, edges

    def weight_norms(self):
        """L1 (mean absolute) and L2 (root mean square) per weight group.

        Groups: the topmost LSTM layer's gate/cell weights, and the
        classification weights mapping it to class scores.  Biases are
        excluded.
        """
        lstm_arrays = [
            arr
            for name, arr in self.params().items()
            if name.startswith("top.") and ".lstm." in name and not name.endswith(".b")
        ]
        cls_arrays = [
            arr
            for name, arr in self.params().items()
            if ".out.w" in name
        ]
        return {
            "lstm": group_norms(lstm_arrays),
            "classification": group_norms(cls_arrays),
        }

    # -- checkpoints ------------------------------------------------------

    def save(self, path):
        """Versioned binary container: header JSON + raw little-endian f8."""
        names = sorted(self.params().keys())
        params = self.params()
        header = {
            "format": 1,
            "arch": self.arch.to_dict(),
            "alphabet": self.alphabet.to_dict(),
            "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            for n in names:
                f.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            magic = f.read(8)
            if magic != CHECKPOINT_MAGIC:
                raise DataError(f"not a checkpoint file: bad magic {magic!r}")
            (hlen,) = struct.unpack("<Q", f.read(8))
            try:
                header = json.loads(f.read(hlen).decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise DataError(f"corrupt checkpoint header: {e}") from None
            if header.get("format") != 1:
                raise DataError(f"unsupported checkpoint format {header.get('format')}")
            arch = ArchitectureSpec.from_dict(header["arch"])
            alphabet = LabelAlphabet.from_dict(header["alphabet"])
            net = cls(arch, alphabet)
            params = net.params()
            if sorted(params.keys()) != [t["name"] for t in header["tensors"]]:
                raise DataError("checkpoint tensor list does not match architecture")
            for t in header["tensors"]:
                arr = params[t["name"]]
                if list(arr.shape) != t["shape"]:
                    raise DataError(
                        f"shape mismatch for {t['name']}: "
                        f"{t['shape']} in file, {list(arr.shape)} expected"
                    )
                raw = f.read(arr.size * 8)
                if len(raw) != arr.size * 8:
                    raise DataError("truncated checkpoint")
                vals = np.frombuffer(raw, dtype="<f8").reshape(arr.shape)
                try:
                    assert_all_finite(vals, f"checkpoint tensor {t['name']}")
                except FloatingPointError as e:
                    raise DataError(str(e)) from None
                arr[:] = vals
            if f.read(1):
                raise DataError("trailing bytes after checkpoint payload")
        net._version += 1
        return net


def group_norms(arrays):
    """Mean absolute value and root mean square over a list of tensors."""
    vals = np.concatenate([np.asarray(a).ravel() for a in arrays])
    return {
        "l1": float(np.mean(np.abs(vals))),
        "l2": float(np.sqrt(np.mean(vals * vals))),
    }


def build_network(arch, alphabet, seed, init_std=1e-2):
    """Construct and initialize a network from its own named init stream."""
    net = Network(arch, alphabet)
    net.initialize(stream_rng(seed, "init"), init_std)
    return net
