"""Mixed-type denoising diffusion over encoded tabular rows.

Continuous columns follow the Gaussian forward/reverse process with
noise (epsilon) prediction; categorical one-hot blocks follow the
multinomial process with predicted-x0 posterior sampling.  Two variants:
unconditional, and conditioned on one categorical target column whose
value is supplied to the denoiser instead of being generated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import neural
from .data_model import DatasetSchema, InterventionRecord, decode

BETA_START = 1e-4
BETA_END = 0.02
BETA_REFERENCE_T = 1000  # endpoints are calibrated for a 1000-step chain
BETA_MAX = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray       # (T,), betas[i] is beta_{i+1}
    alphas: np.ndarray      # 1 - beta
    alpha_bar: np.ndarray   # cumulative product of alphas

    @property
    def T(self) -> int:
        return len(self.betas)

    def abar(self, t) -> np.ndarray:
        """Cumulative signal retention at step t (1-based); abar(0) = 1."""
        t = np.asarray(t)
        return np.where(t == 0, 1.0, self.alpha_bar[np.maximum(t, 1) - 1])


def make_schedule(T: int, kind: str = "linear") -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if kind != "linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    # Scale the endpoints with chain length so the forward process mixes
    # (alpha_bar_T stays small) regardless of T.
    scale = BETA_REFERENCE_T / T
    betas = np.linspace(scale * BETA_START, scale * BETA_END, T,
                        dtype=np.float64)
    betas = np.minimum(betas, BETA_MAX)
    alphas = 1.0 - betas
    return NoiseSchedule(betas, alphas, np.cumprod(alphas))


def q_sample_continuous(x0: np.ndarray, t, noise: np.ndarray,
                        schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward noising: sqrt(abar)*x0 + sqrt(1-abar)*noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x0.shape:
        raise ValueError("noise shape must match x0")
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ValueError(f"t out of range 1..{schedule.T}")
    ab = schedule.abar(t)
    if x0.ndim == 2:
        ab = np.reshape(ab, (-1, 1)) if ab.ndim else ab
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def q_sample_categorical(x0: np.ndarray, t, schedule: NoiseSchedule,
                         rng) -> np.ndarray:
    """Sample x_t one-hot rows from the closed-form multinomial marginal
    Cat(abar_t * x0 + (1 - abar_t)/K)."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    K = x0.shape[1]
    if K < 2 or not _is_onehot(x0):
        raise ValueError("x0 must be valid one-hot rows over K >= 2")
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ValueError(f"t out of range 1..{schedule.T}")
    ab = np.reshape(schedule.abar(t), (-1, 1))
    probs = ab * x0 + (1.0 - ab) / K
    return _sample_onehot(probs, rng)


def _is_onehot(x: np.ndarray) -> bool:
    return bool(np.all((x == 0) | (x == 1)) and np.all(x.sum(axis=1) == 1))


def _sample_onehot(probs: np.ndarray, rng) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random((len(probs), 1))
    idx = (u > cdf).sum(axis=1)
    out = np.zeros_like(probs)
    out[np.arange(len(probs)), idx] = 1.0
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal step embedding; t is 1-based, any shape."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10_000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


@dataclass
class TrainConfig:
    T: int = 100
    epochs: int = 200
    batch: int = 256
    lr: float = 1e-3
    mode: str = "unconditional"  # "unconditional" | "conditioned"
    target: str = "incident"
    seed: int = 0
    hidden: tuple[int, ...] = (512, 512, 512)
    time_dim: int = 32
    lr_decay: bool = True   # cosine decay of the learning rate over epochs
    lr_floor: float = 0.0   # fraction of lr the decay bottoms out at


@dataclass
class _Layout:
    """Column bookkeeping between the full encoded matrix and the block
    the denoiser actually generates (target excluded in conditioned mode)."""
    gen_cols: np.ndarray            # full-matrix column indices, gen order
    n_cont: int
    cat_blocks: list[tuple[str, int, int]]  # (name, start in gen, K)
    target_block: tuple[int, int] | None    # (start in full, K)
    target_categories: tuple[int, ...] | None

    @property
    def width(self) -> int:
        return len(self.gen_cols)


def _build_layout(schema: DatasetSchema, mode: str,
                  target: str | None) -> _Layout:
    target_block = None
    target_categories = None
    cols: list[int] = []
    cat_blocks: list[tuple[str, int, int]] = []
    n_cont = 0
    for name, start, width in schema.layout():
        col = schema.column(name)
        if mode == "conditioned" and name == target:
            if col.kind != "categorical":
                raise ValueError(
                    f"conditioned mode needs a categorical target, "
                    f"{target!r} is {col.kind}")
            target_block = (start, width)
            target_categories = col.categories
            continue
        if col.kind == "continuous":
            cols.append(start)
            n_cont += 1
        else:
            cat_blocks.append((name, len(cols), width))
            cols.extend(range(start, start + width))
    if mode == "conditioned" and target_block is None:
        raise ValueError(f"target column {target!r} not in schema")
    return _Layout(np.asarray(cols), n_cont, cat_blocks,
                   target_block, target_categories)


@dataclass
class DiffusionModel:
    schedule: NoiseSchedule
    net: neural.DenseNet
    schema: DatasetSchema
    mode: str = "unconditional"
    target: str | None = None
    target_freqs: np.ndarray | None = None
    time_dim: int = 32
    loss_history: list[float] = field(default_factory=list)

    def layout(self) -> _Layout:
        return _build_layout(self.schema, self.mode, self.target)


def train(matrix: np.ndarray, schema: DatasetSchema,
          config: TrainConfig) -> DiffusionModel:
    """Fit the denoiser: squared error on the Gaussian noise of continuous
    blocks plus cross-entropy on x0 logits of categorical blocks, at
    uniformly drawn steps."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if len(matrix) == 0:
        raise ValueError("training matrix is empty")
    if config.mode not in ("unconditional", "conditioned"):
        raise ValueError(f"unknown mode {config.mode!r}")
    layout = _build_layout(schema, config.mode,
                           config.target if config.mode == "conditioned"
                           else None)
    schedule = make_schedule(config.T)
    rng = np.random.default_rng(config.seed)

    cond_width = 0
    cond_data = None
    target_freqs = None
    if config.mode == "conditioned":
        start, width = layout.target_block
        cond_data = matrix[:, start:start + width]
        cond_width = width
        target_freqs = cond_data.mean(axis=0)
        target_freqs = target_freqs / target_freqs.sum()

    in_width = layout.width + config.time_dim + cond_width
    net = neural.make_net([in_width, *config.hidden, layout.width],
                          seed=int(rng.integers(2**31)))
    params = net.parameters()
    state = neural.AdamState.for_params(params, lr=config.lr)

    data = matrix[:, layout.gen_cols]
    n = len(data)
    nc = layout.n_cont
    losses = []
    for epoch in range(config.epochs):
        if config.lr_decay:
            ramp = 0.5 * (1.0 + np.cos(np.pi * epoch / config.epochs))
            state.lr = config.lr * (config.lr_floor
                                    + (1.0 - config.lr_floor) * ramp)
        perm = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for lo in range(0, n, config.batch):
            idx = perm[lo:lo + config.batch]
            x0 = data[idx]
            b = len(idx)
            t = rng.integers(1, config.T + 1, size=b)
            ab = schedule.abar(t)[:, None]

            xt = np.empty_like(x0)
            eps = rng.standard_normal((b, nc))
            xt[:, :nc] = np.sqrt(ab) * x0[:, :nc] + np.sqrt(1 - ab) * eps
            for _, start, K in layout.cat_blocks:
                blk = x0[:, start:start + K]
                probs = ab * blk + (1 - ab) / K
                xt[:, start:start + K] = _sample_onehot(probs, rng)

            parts = [xt, time_embedding(t, config.time_dim)]
            if cond_data is not None:
                parts.append(cond_data[idx])
            out, cache = neural.forward_cached(net, np.concatenate(parts, 1))

            dout = np.zeros_like(out)
            loss = 0.0
            if nc:
                diff = out[:, :nc] - eps
                loss += float((diff * diff).mean())
                dout[:, :nc] = 2.0 * diff / (b * nc)
            for _, start, K in layout.cat_blocks:
                p = _softmax(out[:, start:start + K])
                y = x0[:, start:start + K]
                loss += float(-(y * np.log(p + 1e-30)).sum() / b)
                dout[:, start:start + K] = (p - y) / b

            grads = neural.backward(net, cache, dout)
            neural.adam_step(params, grads, state)
            epoch_loss += loss
            batches += 1
        losses.append(epoch_loss / batches)

    return DiffusionModel(schedule, net, schema, config.mode,
                          config.target if config.mode == "conditioned"
                          else None,
                          target_freqs, config.time_dim, losses)


def sample_matrix(model: DiffusionModel, n: int, seed: int,
                  condition: int | None = None) -> np.ndarray:
    """Run the reverse chain and return the full encoded matrix."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    layout = model.layout()
    sched = model.schedule
    rng = np.random.default_rng(seed)

    cond = None
    if model.mode == "conditioned":
        cats = layout.target_categories
        if condition is not None:
            if condition not in cats:
                raise ValueError(
                    f"unknown condition category {condition} for "
                    f"{model.target!r}")
            idx = np.full(n, cats.index(condition))
        else:
            idx = rng.choice(len(cats), size=n, p=model.target_freqs)
        cond = np.zeros((n, len(cats)))
        cond[np.arange(n), idx] = 1.0

    nc = layout.n_cont
    x = np.empty((n, layout.width))
    x[:, :nc] = rng.standard_normal((n, nc))
    for _, start, K in layout.cat_blocks:
        x[:, start:start + K] = _sample_onehot(np.full((n, K), 1.0 / K), rng)

    for t in range(sched.T, 0, -1):
        beta = sched.betas[t - 1]
        alpha = sched.alphas[t - 1]
        ab_t = sched.alpha_bar[t - 1]
        ab_prev = sched.alpha_bar[t - 2] if t > 1 else 1.0

        parts = [x, np.repeat(time_embedding(t, model.time_dim), n, axis=0)]
        if cond is not None:
            parts.append(cond)
        out = neural.forward(model.net, np.concatenate(parts, 1))

        if nc:
            eps_hat = out[:, :nc]
            mean = (x[:, :nc] - beta / np.sqrt(1 - ab_t) * eps_hat) \
                / np.sqrt(alpha)
            if t > 1:
                sigma = np.sqrt((1 - ab_prev) / (1 - ab_t) * beta)
                mean = mean + sigma * rng.standard_normal((n, nc))
            x[:, :nc] = mean
        for _, start, K in layout.cat_blocks:
            xt = x[:, start:start + K]
            x0p = _softmax(out[:, start:start + K])
            # exact reverse mixture: q(x_{t-1}|x_t, x0=k) normalized per
            # candidate k, then weighted by the predicted x0 probabilities
            lik = alpha * xt + (1 - alpha) / K            # over x_{t-1}
            prior = ab_prev * np.eye(K) + (1 - ab_prev) / K  # (k, x_{t-1})
            post = lik[:, None, :] * prior[None, :, :]
            post /= post.sum(axis=2, keepdims=True)
            theta = np.einsum("nk,nkl->nl", x0p, post)
            x[:, start:start + K] = _sample_onehot(theta, rng)

    full = np.zeros((n, model.schema.encoded_width))
    full[:, layout.gen_cols] = x
    if cond is not None:
        start, width = layout.target_block
        full[:, start:start + width] = cond
    return full


def sample(model: DiffusionModel, n: int, seed: int,
           condition: int | None = None) -> list[InterventionRecord]:
    return decode(sample_matrix(model, n, seed, condition), model.schema)


# ---------------------------------------------------------------------------
# Checkpoint I/O: one .npz holding a JSON meta string plus parameter arrays.


def save_model(model: DiffusionModel, path) -> None:
    netdata = neural.save_net(model.net)
    meta = {
        "format": 1,
        "T": model.schedule.T,
        "mode": model.mode,
        "target": model.target,
        "time_dim": model.time_dim,
        "widths": netdata["widths"],
        "activations": netdata["activations"],
        "schema": model.schema.to_json(),
        "schema_hash": model.schema.digest(),
        "loss_history": model.loss_history,
    }
    arrays = {f"param_{i}": p for i, p in enumerate(netdata["params"])}
    if model.target_freqs is not None:
        arrays["target_freqs"] = model.target_freqs
    np.savez(path, meta=json.dumps(meta, sort_keys=True), **arrays)


def load_model(path) -> DiffusionModel:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        params = [data[f"param_{i}"]
                  for i in range(2 * len(meta["activations"]))]
        freqs = data["target_freqs"] if "target_freqs" in data else None
    schema = DatasetSchema.from_json(meta["schema"])
    if schema.digest() != meta["schema_hash"]:
        raise ValueError("checkpoint schema hash mismatch")
    net = neural.load_net({"widths": meta["widths"],
                           "activations": meta["activations"],
                           "params": params})
    return DiffusionModel(make_schedule(meta["T"]), net, schema,
                          meta["mode"], meta["target"], freqs,
                          meta["time_dim"], list(meta["loss_history"]))
