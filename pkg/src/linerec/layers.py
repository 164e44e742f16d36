"""Layers operating on feature grids.

A feature grid is a float64 array of shape (H, W, D): image rows, image
columns, features.  Parameterized layers own their weights and matching
gradient buffers; backward accumulates into the buffers and returns the
gradient wrt the layer input.

The 2-D LSTM scans the grid from one of the four corners.  Internally the
input is flipped so the scan always runs from the top-left, and cells on a
shared anti-diagonal, which depend only on earlier diagonals, are updated
together.
"""

import numpy as np

from .numerics import bernoulli_mask, gaussian_fill

# scan directions: sign of the row step, sign of the column step
DIRECTIONS = {
    "tl": (1, 1),
    "tr": (1, -1),
    "bl": (-1, 1),
    "br": (-1, -1),
}


def _sigmoid(x):
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def as_grid(a):
    """Coerce to a (H, W, D) float64 grid; a 2-D array becomes depth 1."""
    g = np.asarray(a, dtype=np.float64)
    if g.ndim == 2:
        g = g[:, :, None]
    if g.ndim != 3:
        raise ValueError(f"expected a 2-D image or (H, W, D) grid, got {g.shape}")
    if min(g.shape) < 1:
        raise ValueError(f"degenerate grid shape {g.shape}")
    return g


def block_input(image, block=(2, 2)):
    """Tile the image into non-overlapping blocks stacked along depth.

    An (H, W) image becomes (ceil(H/bh), ceil(W/bw), bh*bw), padding the
    bottom/right edge with zeros when the size does not divide evenly.
    Block pixels appear in row-major order within the depth axis.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim != 2:
        raise ValueError(f"expected a grayscale image, got shape {img.shape}")
    bh, bw = block
    if bh < 1 or bw < 1:
        raise ValueError(f"bad block {block}")
    H, W = img.shape
    Ho = -(-H // bh)
    Wo = -(-W // bw)
    padded = np.zeros((Ho * bh, Wo * bw))
    padded[:H, :W] = img
    out = padded.reshape(Ho, bh, Wo, bw).transpose(0, 2, 1, 3).reshape(Ho, Wo, bh * bw)
    return out, (H, W, block)


def block_input_backward(d_out, cache):
    """Scatter block gradients back onto image pixels."""
    H, W, (bh, bw) = cache
    Ho, Wo, _ = d_out.shape
    padded = d_out.reshape(Ho, Wo, bh, bw).transpose(0, 2, 1, 3).reshape(Ho * bh, Wo * bw)
    return padded[:H, :W]


class MdLstm:
    """One scan direction of a 2-D LSTM.

    Each cell sees the input plus the hidden states of its two predecessors
    (previous row, previous column along the scan).  Gates: input, one
    forget per axis, output; cell input squashed by tanh.  Gate
    pre-activations are packed [input, forget-vertical, forget-horizontal,
    cell, output] along the last axis of the weight matrices.

    Peephole connections (diagonal weights from cell states into the gates)
    are off unless requested.
    """

    def __init__(self, in_features, units, direction="tl", peepholes=False):
        if direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {direction!r}")
        self.in_features = in_features
        self.units = units
        self.direction = direction
        self.peepholes = peepholes
        U = units
        self.w = {
            "wx": np.zeros((in_features, 5 * U)),
            "uv": np.zeros((U, 5 * U)),
            "uh": np.zeros((U, 5 * U)),
            "b": np.zeros(5 * U),
        }
        if peepholes:
            # input gate peeps both predecessor states, each forget gate its
            # own axis, the output gate the freshly written state
            for name in ("pi_v", "pi_h", "pf_v", "pf_h", "po"):
                self.w[name] = np.zeros(U)
        self.g = {k: np.zeros_like(v) for k, v in self.w.items()}

    def init(self, rng, std=1e-2):
        """Gaussian weights, zero biases."""
        for name, arr in self.w.items():
            if name == "b":
                arr[:] = 0.0
            else:
                arr[:] = gaussian_fill(arr.shape, 0.0, std, rng)

    def zero_grads(self):
        for arr in self.g.values():
            arr[:] = 0.0

    def _diagonal(self, d, H, W):
        i0 = max(0, d - (W - 1))
        i1 = min(H - 1, d)
        ii = np.arange(i0, i1 + 1)
        return ii, d - ii

    def forward(self, grid):
        x = as_grid(grid)
        dv, dh = DIRECTIONS[self.direction]
        xc = np.ascontiguousarray(x[::dv, ::dh, :])
        H, W, Din = xc.shape
        if Din != self.in_features:
            raise ValueError(f"expected depth {self.in_features}, got {Din}")
        U = self.units
        w = self.w
        pre = (xc.reshape(-1, Din) @ w["wx"] + w["b"]).reshape(H, W, 5 * U)

        h = np.zeros((H, W, U))
        s = np.zeros((H, W, U))
        gates = np.zeros((H, W, 5 * U))  # post-nonlinearity values
        sl = [slice(k * U, (k + 1) * U) for k in range(5)]

        for d in range(H + W - 1):
            ii, jj = self._diagonal(d, H, W)
            a = pre[ii, jj]
            n = len(ii)
            h_up = np.zeros((n, U))
            s_up = np.zeros((n, U))
            h_left = np.zeros((n, U))
            s_left = np.zeros((n, U))
            up = ii >= 1
            left = jj >= 1
            if up.any():
                h_up[up] = h[ii[up] - 1, jj[up]]
                s_up[up] = s[ii[up] - 1, jj[up]]
            if left.any():
                h_left[left] = h[ii[left], jj[left] - 1]
                s_left[left] = s[ii[left], jj[left] - 1]
            a += h_up @ w["uv"] + h_left @ w["uh"]
            ai, afv, afh, ag, ao = (a[:, sl[g]] for g in range(5))
            if self.peepholes:
                ai = ai + s_up * w["pi_v"] + s_left * w["pi_h"]
                afv = afv + s_up * w["pf_v"]
                afh = afh + s_left * w["pf_h"]
            gi = _sigmoid(ai)
            gfv = _sigmoid(afv)
            gfh = _sigmoid(afh)
            gg = np.tanh(ag)
            sd = gi * gg + gfv * s_up + gfh * s_left
            if self.peepholes:
                ao = ao + sd * w["po"]
            go = _sigmoid(ao)
            h[ii, jj] = go * np.tanh(sd)
            s[ii, jj] = sd
            gates[ii, jj, sl[0]] = gi
            gates[ii, jj, sl[1]] = gfv
            gates[ii, jj, sl[2]] = gfh
            gates[ii, jj, sl[3]] = gg
            gates[ii, jj, sl[4]] = go

        out = np.ascontiguousarray(h[::dv, ::dh, :])
        cache = (xc, h, s, gates)
        return out, cache

    def backward(self, cache, d_out):
        xc, h, s, gates = cache
        dv, dh = DIRECTIONS[self.direction]
        H, W, U = h.shape
        sl = [slice(k * U, (k + 1) * U) for k in range(5)]
        w = self.w

        # predecessor state grids, zero along the leading edges
        S_up = np.zeros_like(s)
        S_up[1:] = s[:-1]
        S_left = np.zeros_like(s)
        S_left[:, 1:] = s[:, :-1]
        H_up = np.zeros_like(h)
        H_up[1:] = h[:-1]
        H_left = np.zeros_like(h)
        H_left[:, 1:] = h[:, :-1]
        tanh_s = np.tanh(s)

        dh_acc = np.ascontiguousarray(np.asarray(d_out, dtype=np.float64)[::dv, ::dh, :]).copy()
        ds_acc = np.zeros((H, W, U))
        dA = np.zeros((H, W, 5 * U))

        for d in range(H + W - 2, -1, -1):
            ii, jj = self._diagonal(d, H, W)
            dhd = dh_acc[ii, jj]
            go = gates[ii, jj, sl[4]]
            ts = tanh_s[ii, jj]
            do_pre = dhd * ts * go * (1.0 - go)
            ds = dhd * go * (1.0 - ts * ts) + ds_acc[ii, jj]
            if self.peepholes:
                ds = ds + w["po"] * do_pre
            gi = gates[ii, jj, sl[0]]
            gfv = gates[ii, jj, sl[1]]
            gfh = gates[ii, jj, sl[2]]
            gg = gates[ii, jj, sl[3]]
            s_up = S_up[ii, jj]
            s_left = S_left[ii, jj]
            di_pre = ds * gg * gi * (1.0 - gi)
            dg_pre = ds * gi * (1.0 - gg * gg)
            dfv_pre = ds * s_up * gfv * (1.0 - gfv)
            dfh_pre = ds * s_left * gfh * (1.0 - gfh)
            da = np.concatenate([di_pre, dfv_pre, dfh_pre, dg_pre, do_pre], axis=1)
            dA[ii, jj] = da

            up = ii >= 1
            left = jj >= 1
            if up.any():
                rec = da @ w["uv"].T
                dsv = ds * gfv
                if self.peepholes:
                    dsv = dsv + w["pf_v"] * dfv_pre + w["pi_v"] * di_pre
                dh_acc[ii[up] - 1, jj[up]] += rec[up]
                ds_acc[ii[up] - 1, jj[up]] += dsv[up]
            if left.any():
                rec = da @ w["uh"].T
                dsh = ds * gfh
                if self.peepholes:
                    dsh = dsh + w["pf_h"] * dfh_pre + w["pi_h"] * di_pre
                dh_acc[ii[left], jj[left] - 1] += rec[left]
                ds_acc[ii[left], jj[left] - 1] += dsh[left]

        dA_flat = dA.reshape(-1, 5 * U)
        self.g["wx"] += xc.reshape(-1, self.in_features).T @ dA_flat
        self.g["uv"] += H_up.reshape(-1, U).T @ dA_flat
        self.g["uh"] += H_left.reshape(-1, U).T @ dA_flat
        self.g["b"] += dA_flat.sum(axis=0)
        if self.peepholes:
            self.g["pi_v"] += (dA[:, :, sl[0]] * S_up).sum(axis=(0, 1))
            self.g["pi_h"] += (dA[:, :, sl[0]] * S_left).sum(axis=(0, 1))
            self.g["pf_v"] += (dA[:, :, sl[1]] * S_up).sum(axis=(0, 1))
            self.g["pf_h"] += (dA[:, :, sl[2]] * S_left).sum(axis=(0, 1))
            self.g["po"] += (dA[:, :, sl[4]] * s).sum(axis=(0, 1))

        d_in = (dA_flat @ w["wx"].T).reshape(H, W, self.in_features)
        return np.ascontiguousarray(d_in[::dv, ::dh, :])


class Conv:
    """Non-overlapping convolution: stride equals the filter, no bias.

    The grid is zero-padded on the bottom/right so the filter tiles it
    exactly; output is (ceil(H/fh), ceil(W/fw), out_features).
    """

    def __init__(self, in_features, out_features, filter_hw):
        fh, fw = filter_hw
        if fh < 1 or fw < 1:
            raise ValueError(f"bad filter {filter_hw}")
        self.in_features = in_features
        self.out_features = out_features
        self.filter_hw = (fh, fw)
        self.w = {"w": np.zeros((fh, fw, in_features, out_features))}
        self.g = {"w": np.zeros_like(self.w["w"])}

    def init(self, rng, std=1e-2):
        self.w["w"][:] = gaussian_fill(self.w["w"].shape, 0.0, std, rng)

    def zero_grads(self):
        self.g["w"][:] = 0.0

    def forward(self, grid):
        x = as_grid(grid)
        H, W, C = x.shape
        if C != self.in_features:
            raise ValueError(f"expected depth {self.in_features}, got {C}")
        fh, fw = self.filter_hw
        Ho = -(-H // fh)
        Wo = -(-W // fw)
        xp = np.zeros((Ho * fh, Wo * fw, C))
        xp[:H, :W] = x
        blocks = xp.reshape(Ho, fh, Wo, fw, C)
        out = np.einsum("hawbc,abco->hwo", blocks, self.w["w"])
        return out, (blocks, (H, W))

    def backward(self, cache, d_out):
        blocks, (H, W) = cache
        self.g["w"] += np.einsum("hawbc,hwo->abco", blocks, d_out)
        d_blocks = np.einsum("abco,hwo->hawbc", self.w["w"], d_out)
        Ho, fh, Wo, fw, C = d_blocks.shape
        d_xp = d_blocks.reshape(Ho * fh, Wo * fw, C)
        return d_xp[:H, :W]


def sum_tanh_combine(grids):
    """Elementwise sum of same-shaped grids squashed by tanh."""
    total = grids[0].copy()
    for g in grids[1:]:
        if g.shape != total.shape:
            raise ValueError("sum_tanh_combine needs same-shaped grids")
        total += g
    out = np.tanh(total)
    return out, out


def sum_tanh_backward(cache, d_out):
    """Gradient wrt each summand (identical, returned once)."""
    return d_out * (1.0 - cache * cache)


def collapse_vertical(grid):
    """Sum over rows: (H, W, D) -> (1, W, D)."""
    x = as_grid(grid)
    return x.sum(axis=0, keepdims=True), x.shape


def collapse_vertical_backward(cache, d_out):
    H, W, D = cache
    return np.broadcast_to(d_out, (H, W, D)).copy()


class CellwiseLinear:
    """Affine map applied independently at every grid cell.

    Equivalent to a 1x1 convolution with a bias; used as the classification
    layer on top of the last LSTM outputs.
    """

    def __init__(self, in_features, out_features):
        self.in_features = in_features
        self.out_features = out_features
        self.w = {
            "w": np.zeros((in_features, out_features)),
            "b": np.zeros(out_features),
        }
        self.g = {k: np.zeros_like(v) for k, v in self.w.items()}

    def init(self, rng, std=1e-2):
        self.w["w"][:] = gaussian_fill(self.w["w"].shape, 0.0, std, rng)
        self.w["b"][:] = 0.0

    def zero_grads(self):
        for arr in self.g.values():
            arr[:] = 0.0

    def forward(self, grid):
        x = as_grid(grid)
        H, W, C = x.shape
        out = (x.reshape(-1, C) @ self.w["w"] + self.w["b"]).reshape(
            H, W, self.out_features
        )
        return out, x

    def backward(self, cache, d_out):
        x = cache
        H, W, C = x.shape
        d_flat = d_out.reshape(-1, self.out_features)
        self.g["w"] += x.reshape(-1, C).T @ d_flat
        self.g["b"] += d_flat.sum(axis=0)
        return (d_flat @ self.w["w"].T).reshape(H, W, C)


class Dropout:
    """Multiplicative Bernoulli masking of feed-forward activations.

    Training: output = mask * input with mask entries 1 with probability p.
    Testing: output = p * input exactly, no sampling.  p is the keep
    probability; p = 1 keeps everything and draws nothing.
    """

    def __init__(self, p=0.5):
        if not 0.0 < p <= 1.0:
            raise ValueError(f"keep probability must be in (0, 1], got {p}")
        self.p = p

    def forward(self, grid, mode, rng=None, forced_mask=None):
        x = as_grid(grid)
        if mode == "testing":
            return self.p * x, ("testing", None)
        if mode != "training":
            raise ValueError(f"unknown mode {mode!r}")
        if forced_mask is not None:
            mask = np.asarray(forced_mask, dtype=np.float64)
            if mask.shape != x.shape:
                raise ValueError("forced mask shape mismatch")
        elif self.p == 1.0:
            mask = np.ones_like(x)
        else:
            if rng is None:
                raise ValueError("training-mode dropout needs an rng")
            mask = bernoulli_mask(x.shape, self.p, rng)
        return mask * x, ("training", mask)

    def backward(self, cache, d_out):
        mode, mask = cache
        if mode == "testing":
            return self.p * d_out
        return mask * d_out


def softmax_forward(grid):
    """Per-cell softmax over the feature axis."""
    x = as_grid(grid)
    shifted = x - x.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=2, keepdims=True)
    return y, y


def softmax_backward(cache, d_out):
    y = cache
    inner = (d_out * y).sum(axis=2, keepdims=True)
    return y * (d_out - inner)
