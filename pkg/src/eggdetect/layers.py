"""Layer forward/backward passes for the patch autoencoder.

Every layer works on batched arrays: feature maps are (batch, maps, h, w)
and dense activations are (batch, units). Convolution, dense, and
deconvolution layers apply their rectifier internally, so backward must
gate gradients by the cached pre-activation sign. Calling backward
requires a prior forward(train=True) on the same layer instance.

Conventions pinned here (and by the gradient-check tests):
 - conv is a valid-mode correlation summed over input maps, one bias per
   output map;
 - deconv is the full-mode transpose: correlate the (c-1)-zero-padded
   input with the stored kernel, so a unit impulse reproduces the
   180-degree-flipped kernel;
 - maxpool windows are non-overlapping p x p, ties broken by the first
   index in row-major window order;
 - unpool replicates each value into its p x p block (zero-insertion is
   available behind a flag), and its backward sums each block.
"""

from __future__ import annotations

import math

import numpy as np

from .tensorops import FLOAT


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Zero-mean uniform weights scaled for rectified layers.

    The +-sqrt(6/fan_in) bound keeps response variance roughly constant
    through stacked ReLU layers; a plain 1/sqrt(fan_in) bound shrinks
    the signal ~6x per layer and this stack is nine rectifiers deep.
    """
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(FLOAT)


def _im2col(x: np.ndarray, c: int) -> np.ndarray:
    """Gather all c x c windows of (B,z,h,w) into (B*H'*W', z*c*c) rows."""
    windows = np.lib.stride_tricks.sliding_window_view(x, (c, c), axis=(2, 3))
    batch, z, h_out, w_out = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * h_out * w_out, z * c * c)
    return np.ascontiguousarray(cols)


def _col2im(rows: np.ndarray, batch: int, maps: int, h_in: int, w_in: int,
            c: int) -> np.ndarray:
    """Scatter-add (B*h_in*w_in, maps*c*c) rows into (B,maps,h_in+c-1,...)."""
    out = np.zeros((batch, maps, h_in + c - 1, w_in + c - 1), dtype=FLOAT)
    # one transpose pass up front so each of the c*c adds reads contiguously
    blocks = np.ascontiguousarray(
        rows.reshape(batch, h_in, w_in, maps, c, c).transpose(4, 5, 0, 3, 1, 2)
    )
    for a in range(c):
        for b in range(c):
            out[:, :, a : a + h_in, b : b + w_in] += blocks[a, b]
    return out


def _correlate_valid(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Sum-over-maps valid correlation of (B,zi,h,w) with (zo,zi,c,c).

    One im2col gather plus one GEMM; returns (B, zo, h-c+1, w-c+1).
    """
    c = weights.shape[2]
    batch = x.shape[0]
    h_out = x.shape[2] - c + 1
    w_out = x.shape[3] - c + 1
    cols = _im2col(x, c)
    flat = cols @ weights.reshape(weights.shape[0], -1).T
    return flat.reshape(batch, h_out, w_out, weights.shape[0]).transpose(0, 3, 1, 2)


class Layer:
    """Base layer: parameter dicts plus a forward/backward pair."""

    kind = "base"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise RuntimeError(
                f"{type(self).__name__}.backward called without a cached "
                "forward(train=True) pass"
            )
        return self._cache

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


class Conv2D(Layer):
    """Valid-mode correlation over input maps, per-map bias, rectifier."""

    kind = "conv"

    def __init__(self, in_maps: int, out_maps: int, ksize: int):
        super().__init__()
        if ksize < 1 or ksize % 2 == 0:
            raise ValueError(f"conv kernel side must be odd and >= 1, got {ksize}")
        self.in_maps = in_maps
        self.out_maps = out_maps
        self.ksize = ksize

    def init_params(self, rng: np.random.Generator) -> None:
        fan_in = self.in_maps * self.ksize * self.ksize
        self.params = {
            "W": uniform_init(rng, (self.out_maps, self.in_maps, self.ksize, self.ksize), fan_in),
            "b": np.zeros(self.out_maps, dtype=FLOAT),
        }

    def out_shape(self, in_shape):
        z, h, w = in_shape
        if z != self.in_maps:
            raise ValueError(f"conv expects {self.in_maps} input maps, got {z}")
        if h < self.ksize or w < self.ksize:
            raise ValueError(
                f"conv input {h}x{w} is smaller than the {self.ksize}x{self.ksize} filter"
            )
        return (self.out_maps, h - self.ksize + 1, w - self.ksize + 1)

    def forward(self, x, train=False, rng=None):
        self.out_shape(x.shape[1:])
        batch = x.shape[0]
        c = self.ksize
        h_out = x.shape[2] - c + 1
        w_out = x.shape[3] - c + 1
        weights = self.params["W"]
        cols = _im2col(x, c)
        flat = cols @ weights.reshape(self.out_maps, -1).T
        pre = flat.reshape(batch, h_out, w_out, self.out_maps).transpose(0, 3, 1, 2)
        pre = pre + self.params["b"][None, :, None, None]
        if train:
            self._cache = (x.shape, cols, pre > 0)
        return np.maximum(pre, 0.0)

    def backward(self, dout):
        in_shape, cols, active = self._take_cache()
        dpre = dout * active
        batch, _, h_out, w_out = dpre.shape
        dflat = dpre.transpose(0, 2, 3, 1).reshape(batch * h_out * w_out, self.out_maps)
        weights = self.params["W"]
        self.grads = {
            "W": (dflat.T @ cols).reshape(weights.shape),
            "b": dpre.sum(axis=(0, 2, 3)),
        }
        drows = dflat @ weights.reshape(self.out_maps, -1)
        dx = _col2im(drows, batch, self.in_maps, h_out, w_out, self.ksize)
        assert dx.shape == in_shape
        return dx


class Deconv2D(Layer):
    """Full-mode transposed convolution: pad by c-1, correlate, rectify."""

    kind = "deconv"

    def __init__(self, in_maps: int, out_maps: int, ksize: int):
        super().__init__()
        if ksize < 1 or ksize % 2 == 0:
            raise ValueError(f"deconv kernel side must be odd and >= 1, got {ksize}")
        self.in_maps = in_maps
        self.out_maps = out_maps
        self.ksize = ksize

    def init_params(self, rng: np.random.Generator) -> None:
        fan_in = self.in_maps * self.ksize * self.ksize
        self.params = {
            "W": uniform_init(rng, (self.out_maps, self.in_maps, self.ksize, self.ksize), fan_in),
            "b": np.zeros(self.out_maps, dtype=FLOAT),
        }

    def out_shape(self, in_shape):
        z, h, w = in_shape
        if z != self.in_maps:
            raise ValueError(f"deconv expects {self.in_maps} input maps, got {z}")
        return (self.out_maps, h + self.ksize - 1, w + self.ksize - 1)

    def _flip_mat(self):
        # (zi, zo*c*c) view of the 180-degree-rotated kernel
        flipped = self.params["W"][:, :, ::-1, ::-1]
        return np.ascontiguousarray(flipped.transpose(1, 0, 2, 3)).reshape(
            self.in_maps, self.out_maps * self.ksize * self.ksize
        )

    def forward(self, x, train=False, rng=None):
        self.out_shape(x.shape[1:])
        batch, _, h_in, w_in = x.shape
        xmat = x.transpose(0, 2, 3, 1).reshape(batch * h_in * w_in, self.in_maps)
        rows = xmat @ self._flip_mat()
        pre = _col2im(rows, batch, self.out_maps, h_in, w_in, self.ksize)
        pre += self.params["b"][None, :, None, None]
        if train:
            self._cache = (x.shape, xmat, pre > 0)
        return np.maximum(pre, 0.0)

    def backward(self, dout):
        in_shape, xmat, active = self._take_cache()
        dpre = dout * active
        batch, _, h_in, w_in = in_shape
        c = self.ksize
        # the scatter's adjoint is a gather: window rows of dpre
        dcols = _im2col(dpre, c)  # (B*h_in*w_in, zo*c*c)
        d_flip = (xmat.T @ dcols).reshape(self.in_maps, self.out_maps, c, c)
        d_w = d_flip.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
        dxmat = dcols @ self._flip_mat().T
        dx = dxmat.reshape(batch, h_in, w_in, self.in_maps).transpose(0, 3, 1, 2)
        self.grads = {"W": np.ascontiguousarray(d_w), "b": dpre.sum(axis=(0, 2, 3))}
        return np.ascontiguousarray(dx)


class MaxPool2D(Layer):
    """Non-overlapping p x p window max; remembers argmax switches."""

    kind = "maxpool"

    def __init__(self, pool: int):
        super().__init__()
        if pool < 2:
            raise ValueError(f"pool side must be >= 2, got {pool}")
        self.pool = pool

    def out_shape(self, in_shape):
        z, h, w = in_shape
        if h % self.pool or w % self.pool:
            raise ValueError(
                f"maxpool {self.pool}x{self.pool} needs divisible dims, got {h}x{w}"
            )
        return (z, h // self.pool, w // self.pool)

    def _windows(self, x):
        batch, z, h, w = x.shape
        p = self.pool
        # (B, z, h/p, w/p, p*p) with row-major order inside each window
        xr = x.reshape(batch, z, h // p, p, w // p, p)
        return xr.transpose(0, 1, 2, 4, 3, 5).reshape(batch, z, h // p, w // p, p * p)

    def forward(self, x, train=False, rng=None):
        self.out_shape(x.shape[1:])
        windows = self._windows(x)
        # np.argmax returns the first maximum: the tie-break rule
        switches = np.argmax(windows, axis=-1)
        pooled = np.take_along_axis(windows, switches[..., None], axis=-1)[..., 0]
        if train:
            self._cache = (x.shape, switches)
        return pooled

    def backward(self, dout):
        in_shape, switches = self._take_cache()
        batch, z, h, w = in_shape
        p = self.pool
        d_windows = np.zeros((batch, z, h // p, w // p, p * p), dtype=FLOAT)
        np.put_along_axis(d_windows, switches[..., None], dout[..., None], axis=-1)
        d_windows = d_windows.reshape(batch, z, h // p, w // p, p, p)
        return d_windows.transpose(0, 1, 2, 4, 3, 5).reshape(batch, z, h, w)


class Unpool2D(Layer):
    """Upscale each value into its p x p block.

    Replication is the default; zero_insert places the value at the block's
    top-left corner and zeros elsewhere, kept for upsampling experiments.
    """

    kind = "unpool"

    def __init__(self, pool: int, zero_insert: bool = False):
        super().__init__()
        if pool < 2:
            raise ValueError(f"unpool side must be >= 2, got {pool}")
        self.pool = pool
        self.zero_insert = zero_insert

    def out_shape(self, in_shape):
        z, h, w = in_shape
        return (z, h * self.pool, w * self.pool)

    def forward(self, x, train=False, rng=None):
        p = self.pool
        if train:
            self._cache = x.shape
        if self.zero_insert:
            out = np.zeros(x.shape[:2] + (x.shape[2] * p, x.shape[3] * p), dtype=FLOAT)
            out[:, :, ::p, ::p] = x
            return out
        return np.repeat(np.repeat(x, p, axis=2), p, axis=3)

    def backward(self, dout):
        in_shape = self._take_cache()
        p = self.pool
        if self.zero_insert:
            return np.ascontiguousarray(dout[:, :, ::p, ::p])
        batch, z, h, w = in_shape
        return dout.reshape(batch, z, h, p, w, p).sum(axis=(3, 5))


class Dense(Layer):
    """Fully connected layer with rectifier: max(0, W y + b)."""

    kind = "dense"

    def __init__(self, in_units: int, out_units: int):
        super().__init__()
        self.in_units = in_units
        self.out_units = out_units

    def init_params(self, rng: np.random.Generator) -> None:
        self.params = {
            "W": uniform_init(rng, (self.out_units, self.in_units), self.in_units),
            "b": np.zeros(self.out_units, dtype=FLOAT),
        }

    def out_shape(self, in_shape):
        if in_shape != (self.in_units,):
            raise ValueError(
                f"dense expects {self.in_units} input units, got shape {in_shape}"
            )
        return (self.out_units,)

    def forward(self, x, train=False, rng=None):
        if x.shape[1] != self.in_units:
            raise ValueError(
                f"dense expects {self.in_units} input units, got {x.shape[1]}"
            )
        pre = x @ self.params["W"].T + self.params["b"]
        if train:
            self._cache = (x, pre > 0)
        return np.maximum(pre, 0.0)

    def backward(self, dout):
        x, active = self._take_cache()
        dpre = dout * active
        self.grads = {"W": dpre.T @ x, "b": dpre.sum(axis=0)}
        return dpre @ self.params["W"]


class GaussianCorruption(Layer):
    """Additive Gaussian noise on the flattened code, training mode only."""

    kind = "corrupt"

    def __init__(self, noise_std: float):
        super().__init__()
        if noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {noise_std}")
        self.noise_std = noise_std

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, rng=None):
        if train:
            self._cache = x.shape
        if not train or self.noise_std == 0.0:
            return x
        if rng is None:
            raise ValueError("corruption in training mode needs the run's generator")
        return x + rng.normal(0.0, self.noise_std, size=x.shape)

    def backward(self, dout):
        self._take_cache()
        return dout  # additive noise: identity jacobian


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, rng=None):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._take_cache())


class ReshapeMaps(Layer):
    """View flat units as (maps, h, w) feature maps."""

    kind = "reshape"

    def __init__(self, maps: int, height: int, width: int):
        super().__init__()
        self.maps = maps
        self.height = height
        self.width = width

    def out_shape(self, in_shape):
        want = self.maps * self.height * self.width
        if in_shape != (want,):
            raise ValueError(f"reshape expects {want} units, got shape {in_shape}")
        return (self.maps, self.height, self.width)

    def forward(self, x, train=False, rng=None):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], self.maps, self.height, self.width)

    def backward(self, dout):
        return dout.reshape(self._take_cache())
