import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from tqdm import tqdm

from bspline import BsplineSpec, ControlTrajectory, fit_control_points, pin_boundaries
from errors import NonFiniteError, PreconditionError, ShapeError
from models.config_model import GuidanceConfig, TrainingConfig
from nn import AdamState, DenoiserArch, Normalizer, adam_step, backward, encode_context, forward, init_params

logger = logging.getLogger(__name__)

BETA_CLIP = (1e-4, 0.999)

GradientFn = Callable[[np.ndarray], np.ndarray]
NoiseModel = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    """Tables indexed by diffusion step 1..N; index 0 is the clean-data sentinel (alpha_bar = 1)."""

    kind: str
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    beta_tildes: np.ndarray
    sigmas: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.betas) - 1

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_steps": self.n_steps}


def _from_betas(betas: np.ndarray, kind: str) -> NoiseSchedule:
    betas = np.concatenate([[0.0], betas])
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    beta_tildes = np.zeros_like(betas)
    beta_tildes[1:] = (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:]) * betas[1:]
    return NoiseSchedule(kind=kind, betas=betas, alphas=alphas, alpha_bars=alpha_bars,
                         beta_tildes=beta_tildes, sigmas=np.sqrt(beta_tildes))


def cosine_schedule(n_steps: int, s: float = 0.008) -> NoiseSchedule:
    if n_steps < 2:
        raise PreconditionError(f"a schedule needs at least two steps, got {n_steps}")
    t = np.arange(n_steps + 1) / n_steps
    f = np.cos((t + s) / (1.0 + s) * np.pi / 2.0) ** 2
    alpha_bar = f / f[0]
    betas = np.clip(1.0 - alpha_bar[1:] / alpha_bar[:-1], *BETA_CLIP)
    return _from_betas(betas, "cosine")


def linear_schedule(n_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear betas, rescaled so that any N ends near pure noise like N = 1000 does."""
    if n_steps < 2:
        raise PreconditionError(f"a schedule needs at least two steps, got {n_steps}")
    scale = 1000.0 / n_steps
    betas = np.clip(np.linspace(beta_start * scale, beta_end * scale, n_steps), *BETA_CLIP)
    return _from_betas(betas, "linear")


def make_schedule(kind: str, n_steps: int) -> NoiseSchedule:
    if kind == "cosine":
        return cosine_schedule(n_steps)
    if kind == "linear":
        return linear_schedule(n_steps)
    raise PreconditionError(f"unknown schedule kind {kind!r}")


def _per_row(table: np.ndarray, i, ndim: int) -> np.ndarray:
    v = np.asarray(table[np.asarray(i)], dtype=float)
    return v.reshape(v.shape + (1,) * (ndim - v.ndim))


def q_sample(w0, i, eps, schedule: NoiseSchedule) -> np.ndarray:
    w0 = np.asarray(w0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if eps.shape != w0.shape:
        raise ShapeError(f"noise shape {eps.shape} does not match data shape {w0.shape}")
    ab = _per_row(schedule.alpha_bars, i, w0.ndim)
    return np.sqrt(ab) * w0 + np.sqrt(1.0 - ab) * eps


def training_step(params: Dict[str, np.ndarray], arch: DenoiserArch, w0, c, schedule: NoiseSchedule,
                  rng: np.random.Generator, oracle: Optional[Callable] = None):
    """One denoising-loss evaluation on a normalized batch.

    `oracle(w_i, i, c, eps)` replaces the network; no gradients are returned then.
    """
    w0 = np.asarray(w0, dtype=float)
    eps = rng.standard_normal(w0.shape)
    i = rng.integers(1, schedule.n_steps + 1, size=len(w0))
    w_i = q_sample(w0, i, eps, schedule)

    if oracle is not None:
        pred, tape = np.asarray(oracle(w_i, i, c, eps), dtype=float), None
    else:
        pred, tape = forward(params, arch, w_i, i, c)
    diff = pred.astype(float) - eps
    loss = float(np.mean(diff ** 2))
    if not np.isfinite(loss):
        raise NonFiniteError("denoising loss is not finite")
    if tape is None:
        return loss, None
    grads = backward(tape, 2.0 * diff / diff.size)
    return loss, grads


def posterior_mean(w_i, i: int, c, denoiser: NoiseModel, schedule: NoiseSchedule, lambda_prior: float = 1.0):
    """Reverse-step mean with the predicted noise scaled by the prior temperature."""
    w_i = np.asarray(w_i, dtype=float)
    steps = np.full(len(w_i), i)
    eps = denoiser(w_i, steps, c)
    alpha, alpha_bar = schedule.alphas[i], schedule.alpha_bars[i]
    return (w_i - (1.0 - alpha) / np.sqrt(1.0 - alpha_bar) * lambda_prior * eps) / np.sqrt(alpha)


def guided_inner_steps(mu0, grad_fn: GradientFn, n_inner: int, step_size: float, delta: float) -> np.ndarray:
    """Descend the cost from the prior mean, never leaving the box of half-width delta around it."""
    mu0 = np.asarray(mu0, dtype=float)
    mu = mu0.copy()
    for _ in range(n_inner):
        mu = mu - step_size * grad_fn(mu)
        mu = mu0 + np.clip(mu - mu0, -delta, delta)
    return mu


def quadratic_timesteps(n: int, n_steps: int) -> np.ndarray:
    """Descending steps from N to 1, spaced quadratically so they bunch up near 1."""
    if n < 1:
        raise PreconditionError(f"need at least one sampling step, got {n}")
    if n >= n_steps:
        return np.arange(n_steps, 0, -1)
    if n == 1:
        return np.array([n_steps])
    k = np.arange(n) / (n - 1)
    idx = np.rint(1 + (n_steps - 1) * k ** 2).astype(int)
    for j in range(1, n):
        idx[j] = max(idx[j], idx[j - 1] + 1)
    idx = np.minimum(idx, n_steps)
    idx[-1] = n_steps
    return idx[::-1].copy()


@dataclass(frozen=True)
class ControlPointCodec:
    """Maps normalized, flattened free control points to full pinned control points and back.

    Under an EE goal the end block is free but tied: its first row is part of the
    state and the remaining rows copy it.
    """

    n_b: int
    d: int
    n_pinned: int
    goal_mode: str
    normalizer: Normalizer

    @property
    def free_rows(self) -> slice:
        k = self.n_pinned
        stop = self.n_b - k + (1 if self.goal_mode == "ee" else 0)
        return slice(k, stop)

    @property
    def n_free(self) -> int:
        rows = self.free_rows
        return rows.stop - rows.start

    @property
    def state_dim(self) -> int:
        return self.n_free * self.d

    def flatten(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.n_b, self.d):
            raise ShapeError(f"control points have shape {w.shape}, expected {(self.n_b, self.d)}")
        return w[self.free_rows].reshape(-1)

    def encode(self, w) -> np.ndarray:
        return self.normalizer.normalize(self.flatten(w))

    def decode(self, x, q_start, q_goal, T: float) -> ControlTrajectory:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.state_dim,):
            raise ShapeError(f"state has shape {x.shape}, expected ({self.state_dim},)")
        w = np.zeros((self.n_b, self.d))
        w[self.free_rows] = self.normalizer.unnormalize(x).reshape(self.n_free, self.d)
        if self.goal_mode == "ee":
            q_goal = None
            w[-1] = w[self.free_rows.stop - 1]
        return pin_boundaries(ControlTrajectory(w, T), q_start, q_goal, n_pinned=self.n_pinned)

    def pull_back(self, grad_w) -> np.ndarray:
        """Cost gradient w.r.t. control points (pinned rows projected) into normalized state space."""
        return self.flatten(grad_w) * self.normalizer.scale


def _draw(rngs: Sequence[np.random.Generator], dim: int) -> np.ndarray:
    """One standard normal row per trajectory stream."""
    return np.stack([r.standard_normal(dim) for r in rngs])


def ddpm_sample(denoiser: NoiseModel, c, schedule: NoiseSchedule, guidance: GuidanceConfig,
                rngs: Sequence[np.random.Generator], state_dim: int,
                grad_fn: Optional[GradientFn] = None, x_init=None) -> np.ndarray:
    """Ancestral sampling over all N steps; returns normalized states clipped to [-1, 1]."""
    B = len(rngs)
    x = _draw(rngs, state_dim) if x_init is None else np.array(x_init, dtype=float)
    C = np.broadcast_to(np.asarray(c, dtype=float), (B, len(c)))
    noise = np.sqrt(guidance.noise_scale)
    for i in range(schedule.n_steps, 0, -1):
        guided = grad_fn is not None and i <= guidance.i_cost
        lam = guidance.lambda_prior if guided else 1.0
        mu = posterior_mean(x, i, C, denoiser, schedule, lam)
        if guided:
            mu = guided_inner_steps(mu, grad_fn, guidance.n_inner, guidance.step_size, guidance.delta)
        if i > 1 and noise > 0:
            x = mu + noise * schedule.sigmas[i] * _draw(rngs, state_dim)
        else:
            x = mu
    return np.clip(x, -1.0, 1.0)


def _ddim_update(x, eps, ab: float, ab_prev: float, sigma: float) -> np.ndarray:
    x0 = (x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
    return np.sqrt(ab_prev) * x0 + np.sqrt(max(1.0 - ab_prev - sigma ** 2, 0.0)) * eps


def ddim_sample(denoiser: NoiseModel, c, schedule: NoiseSchedule, guidance: GuidanceConfig,
                rngs: Sequence[np.random.Generator], state_dim: int,
                grad_fn: Optional[GradientFn] = None, x_init=None) -> np.ndarray:
    """Strided sampling on the quadratic step subsequence; guidance on its last i_cost iterations.

    A guided iteration runs the clipped inner steps from the unguided update, then repeats
    the update with the noise estimate shifted by that displacement.
    """
    B = len(rngs)
    x = _draw(rngs, state_dim) if x_init is None else np.array(x_init, dtype=float)
    C = np.broadcast_to(np.asarray(c, dtype=float), (B, len(c)))
    steps = quadratic_timesteps(guidance.ddim_steps, schedule.n_steps)
    first_guided = len(steps) - guidance.i_cost
    for pos, i in enumerate(steps):
        prev = steps[pos + 1] if pos + 1 < len(steps) else 0
        guided = grad_fn is not None and pos >= first_guided
        lam = guidance.lambda_prior if guided else 1.0
        ab, ab_prev = schedule.alpha_bars[i], schedule.alpha_bars[prev]
        sigma = np.sqrt(guidance.noise_scale * (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev))

        eps = lam * denoiser(x, np.full(B, i), C)
        mu = _ddim_update(x, eps, ab, ab_prev, sigma)
        if guided:
            shift = guided_inner_steps(mu, grad_fn, guidance.n_inner, guidance.step_size, guidance.delta) - mu
            gain = np.sqrt(1.0 - ab) if guidance.keep_noise_factor else 1.0
            mu = _ddim_update(x, eps - gain * shift, ab, ab_prev, sigma)
        x = mu + sigma * _draw(rngs, state_dim) if sigma > 0 else mu
    return np.clip(x, -1.0, 1.0)


def guided_iterations(guidance: GuidanceConfig, n_steps: int) -> int:
    """Sampler iterations that receive cost guidance for a schedule of `n_steps`."""
    if guidance.sampler == "ddim":
        return min(guidance.i_cost, len(quadratic_timesteps(guidance.ddim_steps, n_steps)))
    return min(guidance.i_cost, n_steps)


SAMPLERS = {"ddpm": ddpm_sample, "ddim": ddim_sample}


@dataclass
class TrainingData:
    states: np.ndarray
    contexts: np.ndarray
    context_hashes: list
    n_regularized: int = 0


def prepare_training_data(dataset, spec: BsplineSpec, duration: float, goal_mode: str,
                          cache_path: Optional[Path] = None) -> TrainingData:
    """Fit a spline to every record; free control-point rows and encoded contexts, unnormalized."""
    rows = ControlPointCodec(spec.n_b, dataset.header.robot.dof, spec.n_pinned, goal_mode,
                             Normalizer(np.zeros(1), np.ones(1)))
    hashes = sorted({r.context.context_hash() for r in dataset.records})
    key = hashlib.sha256(
        json.dumps([asdict(spec), duration, goal_mode, [r.model_dump() for r in dataset.records]],
                   sort_keys=True).encode("utf-8")
    ).hexdigest()
    if cache_path is not None and Path(cache_path).is_file():
        cached = np.load(cache_path)
        if str(cached["key"]) == key:
            logger.info("using cached spline fits from %s", cache_path)
            return TrainingData(cached["states"], cached["contexts"], hashes, int(cached["n_regularized"]))

    states, contexts, n_regularized = [], [], 0
    for record in dataset.records:
        fit = fit_control_points(record.path, spec, T=duration)
        n_regularized += fit.regularized
        states.append(rows.flatten(fit.trajectory.w))
        contexts.append(encode_context(record.context, goal_mode))
    data = TrainingData(np.stack(states), np.stack(contexts), hashes, n_regularized)
    if n_regularized:
        logger.warning("%d of %d fits needed ridge regularization", n_regularized, len(states))
    if cache_path is not None:
        np.savez(cache_path, key=key, states=data.states, contexts=data.contexts, n_regularized=n_regularized)
    return data


@dataclass
class TrainingOutcome:
    params: Dict[str, np.ndarray]
    adam: AdamState
    rng: np.random.Generator
    step: int
    losses: list


def train_denoiser(states, contexts, arch: DenoiserArch, schedule: NoiseSchedule, cfg: TrainingConfig,
                   params: Optional[Dict[str, np.ndarray]] = None, adam: Optional[AdamState] = None,
                   rng_state: Optional[dict] = None, start_step: int = 0,
                   on_checkpoint: Optional[Callable[["TrainingOutcome"], None]] = None,
                   progress: bool = False) -> TrainingOutcome:
    """Minimize the denoising loss on normalized states and contexts with Adam.

    Passing the params, optimizer state and RNG state of a checkpoint resumes that run exactly.
    """
    rng = np.random.default_rng(cfg.seed)
    if rng_state is not None:
        rng.bit_generator.state = rng_state
    if params is None:
        params = init_params(arch, rng)
    adam = adam or AdamState(lr=cfg.lr)
    outcome = TrainingOutcome(params, adam, rng, start_step, [])

    for step in tqdm(range(start_step, cfg.steps), desc="train", disable=not progress):
        idx = rng.integers(0, len(states), size=cfg.batch_size)
        try:
            loss, grads = training_step(outcome.params, arch, states[idx], contexts[idx], schedule, rng)
            outcome.params = adam_step(adam, outcome.params, grads)
        except NonFiniteError as e:
            raise NonFiniteError(f"training aborted at step {step + 1}: {e.detail}") from e
        outcome.step = step + 1
        outcome.losses.append((outcome.step, loss))
        if outcome.step % cfg.log_every == 0:
            logger.info("step %d loss %.5f", outcome.step, loss)
        if on_checkpoint is not None and outcome.step % cfg.checkpoint_every == 0:
            on_checkpoint(outcome)
    return outcome
