"""Up-convolutional decoder network and its training loop.

Architecture: two fully-connected layers (ReLU), a reshape to a stack of
seed feature maps, then a series of up-convolution blocks (2x nearest
upsample + two 3x3 conv/ReLU pairs) and a final 3x3 convolution merging
the maps into a single output image. Training is plain minibatch SGD on
the mean absolute error, with seeded shuffling, early stopping on the
validation loss, and best-parameter restoration.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .metrics import MetricRow, MetricsReport, aggregate, nrmse, psnr, ssim


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    """Shape parameters; dims are rows x cols (height first).

    Defaults are the full-scale layout: 50 -> 7500 -> 7500 -> 20 maps of
    25x15 -> 3 upblocks at 30 maps -> one 200x120 image.
    """

    input_dim: int = 50
    fc_width: int = 7500
    seed_maps: int = 20
    seed_h: int = 25
    seed_w: int = 15
    block_maps: int = 30
    n_upblocks: int = 3
    out_h: int = 200
    out_w: int = 120

    def __post_init__(self):
        if min(self.input_dim, self.fc_width, self.seed_maps, self.seed_h,
               self.seed_w, self.block_maps, self.n_upblocks) < 1:
            raise ValueError("all network dimensions must be positive")
        if self.fc_width != self.seed_maps * self.seed_h * self.seed_w:
            raise ValueError(
                f"fc_width {self.fc_width} != seed volume "
                f"{self.seed_maps}*{self.seed_h}*{self.seed_w}")
        scale = 2 ** self.n_upblocks
        if self.out_h != self.seed_h * scale or self.out_w != self.seed_w * scale:
            raise ValueError(
                f"output {self.out_h}x{self.out_w} is not seed "
                f"{self.seed_h}x{self.seed_w} doubled {self.n_upblocks} times")


class Network:
    """Parameter container with explicit forward/backward passes."""

    def __init__(self, cfg: NetworkConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.fc1_w = np.zeros((cfg.input_dim, cfg.fc_width), dtype)
        self.fc1_b = np.zeros(cfg.fc_width, dtype)
        self.fc2_w = np.zeros((cfg.fc_width, cfg.fc_width), dtype)
        self.fc2_b = np.zeros(cfg.fc_width, dtype)
        self.convs: list[tuple[np.ndarray, np.ndarray]] = []
        in_maps = cfg.seed_maps
        for _ in range(cfg.n_upblocks):
            for out_maps in (cfg.block_maps, cfg.block_maps):
                self.convs.append((np.zeros((out_maps, in_maps, 3, 3), dtype),
                                   np.zeros(out_maps, dtype)))
                in_maps = out_maps
        self.convs.append((np.zeros((1, in_maps, 3, 3), dtype), np.zeros(1, dtype)))

    def params(self) -> list[np.ndarray]:
        out = [self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b]
        for k, b in self.convs:
            out.extend((k, b))
        return out

    def set_params(self, values):
        for p, v in zip(self.params(), values, strict=True):
            p[...] = v

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def fc2_param_count(self) -> int:
        return self.fc2_w.size + self.fc2_b.size

    def _as_batch(self, x: np.ndarray):
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.cfg.input_dim:
            raise ValueError(f"input width must be {self.cfg.input_dim}")
        return x, single

    def forward(self, x: np.ndarray, cache: dict | None = None) -> np.ndarray:
        """Image batch for a reading batch; pass a dict to keep the tape."""
        cfg = self.cfg
        x, single = self._as_batch(x)
        z1 = nn.fc_forward(x, self.fc1_w, self.fc1_b)
        h1 = nn.relu_forward(z1)
        z2 = nn.fc_forward(h1, self.fc2_w, self.fc2_b)
        h2 = nn.relu_forward(z2)
        maps = h2.reshape(x.shape[0], cfg.seed_maps, cfg.seed_h, cfg.seed_w)
        blocks = []
        for i in range(cfg.n_upblocks):
            up = nn.upsample2x_forward(maps)
            assert up.shape[-2:] == (maps.shape[-2] * 2, maps.shape[-1] * 2)
            ka, ba = self.convs[2 * i]
            za = nn.conv2d_forward(up, ka, ba)
            ha = nn.relu_forward(za)
            kb, bb = self.convs[2 * i + 1]
            zb = nn.conv2d_forward(ha, kb, bb)
            hb = nn.relu_forward(zb)
            blocks.append((up, za, ha, zb))
            maps = hb
        kf, bf = self.convs[-1]
        out = nn.conv2d_forward(maps, kf, bf)
        if cache is not None:
            cache.update(x=x, z1=z1, h1=h1, z2=z2, blocks=blocks, final_in=maps)
        img = out[:, 0]
        return img[0] if single else img

    def backward(self, cache: dict, grad_img: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients (aligned with params()) for a scalar loss."""
        cfg = self.cfg
        g = np.ascontiguousarray(grad_img[:, None].astype(self.dtype, copy=False))
        kf, _ = self.convs[-1]
        g, gk_f, gb_f = nn.conv2d_backward(cache["final_in"], kf, g)
        conv_grads = [(gk_f, gb_f)]
        for i in range(cfg.n_upblocks - 1, -1, -1):
            up, za, ha, zb = cache["blocks"][i]
            kb, _ = self.convs[2 * i + 1]
            ka, _ = self.convs[2 * i]
            g = nn.relu_backward(g, zb)
            g, gk_b, gb_b = nn.conv2d_backward(ha, kb, g)
            g = nn.relu_backward(g, za)
            g, gk_a, gb_a = nn.conv2d_backward(up, ka, g)
            conv_grads.append((gk_b, gb_b))
            conv_grads.append((gk_a, gb_a))
            g = nn.upsample2x_backward(g)
        g = g.reshape(g.shape[0], cfg.fc_width)
        g = nn.relu_backward(g, cache["z2"])
        g, gw2, gb2 = nn.fc_backward(cache["h1"], self.fc2_w, g)
        g = nn.relu_backward(g, cache["z1"])
        _, gw1, gb1 = nn.fc_backward(cache["x"], self.fc1_w, g)
        grads = [gw1, gb1, gw2, gb2]
        for gk, gb in reversed(conv_grads):
            grads.extend((gk, gb))
        return grads


def build_network(cfg: NetworkConfig, rng: np.random.Generator,
                  dtype=np.float32) -> Network:
    """Glorot-uniform weights, zero biases, in a fixed layer order.

    Convolution fans follow the receptive-field convention:
    fan_in = in_maps * 9, fan_out = out_maps * 9.
    """
    net = Network(cfg, dtype)
    net.fc1_w[...] = nn.glorot_uniform(cfg.input_dim, cfg.fc_width,
                                       net.fc1_w.shape, rng, dtype)
    net.fc2_w[...] = nn.glorot_uniform(cfg.fc_width, cfg.fc_width,
                                       net.fc2_w.shape, rng, dtype)
    for k, _ in net.convs:
        out_maps, in_maps = k.shape[0], k.shape[1]
        k[...] = nn.glorot_uniform(in_maps * 9, out_maps * 9, k.shape, rng, dtype)
    return net


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 10
    max_epochs: int = 2000
    early_stop_delta: float = 1e-5
    early_stop_patience: int = 50
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("lr, batch_size, and max_epochs must be positive")
        if self.early_stop_delta <= 0 or self.early_stop_patience < 1:
            raise ValueError("early stopping parameters must be positive")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    @property
    def n_epochs(self) -> int:
        return len(self.val_loss)

    @property
    def best_epoch(self) -> int:
        return int(np.argmin(self.val_loss))

    @property
    def best_val_loss(self) -> float:
        return float(min(self.val_loss))


def _dataset_mae(net: Network, X: np.ndarray, Y: np.ndarray,
                 chunk: int = 100) -> float:
    total = 0.0
    for lo in range(0, X.shape[0], chunk):
        pred = net.forward(X[lo:lo + chunk])
        tgt = Y[lo:lo + chunk]
        total += float(np.sum(np.abs(pred - tgt)))
    return total / Y.size


def train(net: Network, train_set, val_set, tc: TrainConfig,
          log_fn=None) -> TrainHistory:
    """Minibatch SGD on MAE with early stopping.

    train_set/val_set are (X, Y) with X (N, input_dim) and Y (N, H, W).
    Stops at max_epochs or once the best validation loss has failed to
    improve by more than early_stop_delta for early_stop_patience epochs;
    the network is left holding the best-validation parameters.
    """
    X, Y = train_set
    Xv, Yv = val_set
    if len(X) == 0 or len(Xv) == 0:
        raise ValueError("training and validation splits must be nonempty")
    X = np.asarray(X, dtype=net.dtype)
    Y = np.asarray(Y, dtype=net.dtype)
    shuffle_rng = nn.make_rng(tc.shuffle_seed)
    history = TrainHistory()
    best = math.inf
    best_params = None
    bad_epochs = 0
    for epoch in range(tc.max_epochs):
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(X.shape[0])
        abs_sum = 0.0
        for lo in range(0, X.shape[0], tc.batch_size):
            idx = perm[lo:lo + tc.batch_size]
            xb, yb = X[idx], Y[idx]
            cache = {}
            pred = net.forward(xb, cache)
            loss = nn.mae_loss(pred, yb)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch + 1}, "
                    f"batch starting at {lo}")
            abs_sum += loss * pred.size
            grads = net.backward(cache, nn.mae_grad(pred, yb))
            nn.sgd_step(net.params(), grads, tc.lr)
        train_loss = abs_sum / Y.size
        val_loss = _dataset_mae(net, Xv, Yv)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch + 1}")
        secs = time.perf_counter() - t0
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.seconds.append(secs)
        if log_fn is not None:
            log_fn(epoch + 1, train_loss, val_loss, secs)
        if best - val_loss > tc.early_stop_delta:
            best = val_loss
            best_params = [p.copy() for p in net.params()]
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= tc.early_stop_patience:
                break
    if best_params is not None:
        net.set_params(best_params)
    return history


def evaluate(net: Network, test_set, ids=None, chunk: int = 100) -> MetricsReport:
    """Per-image SSIM/PSNR/NRMSE of network outputs against the targets."""
    X, Y = test_set
    if len(X) == 0:
        raise ValueError("test set is empty")
    if ids is None:
        ids = range(len(X))
    ids = list(ids)
    rows = []
    for lo in range(0, len(X), chunk):
        pred = net.forward(np.asarray(X[lo:lo + chunk], dtype=net.dtype))
        if pred.ndim == 2:
            pred = pred[None]
        for j in range(pred.shape[0]):
            ref = np.asarray(Y[lo + j], dtype=np.float64)
            rows.append(MetricRow(ids[lo + j],
                                  ssim(pred[j], ref),
                                  psnr(pred[j], ref),
                                  nrmse(pred[j], ref)))
    return aggregate(rows)
