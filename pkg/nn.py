import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from errors import CheckpointError, NonFiniteError, PreconditionError, ShapeError
from models.plan_model import PlanningContext

logger = logging.getLogger(__name__)

MAGIC = b"MPD1"
CHECKPOINT_VERSION = 1
DTYPE = np.float32


class Tensor:
    """A value on the tape with an optional accumulated gradient."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value: np.ndarray, name: Optional[str] = None):
        self.value = value
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g: np.ndarray):
        if g.shape != self.value.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match value shape {self.value.shape}")
        self.grad = g if self.grad is None else self.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tape:
    """Records operations in order; `backward` replays them once in reverse."""

    def __init__(self):
        self._backward: List[Callable[[], None]] = []
        self.leaves: Dict[str, Tensor] = {}
        self.output: Optional[Tensor] = None
        self.consumed = False

    def leaf(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, name)
        self.leaves[name] = t
        return t

    def linear(self, x: Tensor, W: Tensor, b: Tensor) -> Tensor:
        out = Tensor(x.value @ W.value + b.value)

        def back():
            if out.grad is None:
                return
            x.accumulate(out.grad @ W.value.T)
            W.accumulate(x.value.T @ out.grad)
            b.accumulate(out.grad.sum(axis=0))

        self._backward.append(back)
        return out

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        out = Tensor(a.value + b.value)

        def back():
            if out.grad is None:
                return
            a.accumulate(_unbroadcast(out.grad, a.shape))
            b.accumulate(_unbroadcast(out.grad, b.shape))

        self._backward.append(back)
        return out

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        out = Tensor(a.value * b.value)

        def back():
            if out.grad is None:
                return
            a.accumulate(_unbroadcast(out.grad * b.value, a.shape))
            b.accumulate(_unbroadcast(out.grad * a.value, b.shape))

        self._backward.append(back)
        return out

    def silu(self, x: Tensor) -> Tensor:
        sig = 1.0 / (1.0 + np.exp(-x.value))
        out = Tensor(x.value * sig)

        def back():
            if out.grad is None:
                return
            x.accumulate(out.grad * (sig + x.value * sig * (1.0 - sig)))

        self._backward.append(back)
        return out

    def film(self, x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
        """x * (1 + scale) + shift."""
        gain = 1.0 + scale.value
        out = Tensor(x.value * gain + shift.value)

        def back():
            if out.grad is None:
                return
            x.accumulate(out.grad * gain)
            scale.accumulate(out.grad * x.value)
            shift.accumulate(out.grad)

        self._backward.append(back)
        return out

    def concat(self, tensors: List[Tensor]) -> Tensor:
        sizes = np.cumsum([t.shape[-1] for t in tensors])[:-1]
        out = Tensor(np.concatenate([t.value for t in tensors], axis=-1))

        def back():
            if out.grad is None:
                return
            for t, g in zip(tensors, np.split(out.grad, sizes, axis=-1)):
                t.accumulate(g)

        self._backward.append(back)
        return out


@dataclass(frozen=True)
class DenoiserArch:
    state_dim: int
    context_dim: int
    width: int = 256
    n_blocks: int = 4
    time_dim: int = 32
    context_hidden: int = 128
    context_out: int = 32

    @property
    def embedding_dim(self) -> int:
        return self.time_dim + self.context_out

    def layer_shapes(self) -> Dict[str, tuple]:
        """(fan_in, fan_out) of every affine layer, in parameter order."""
        shapes = {
            "time.fc": (self.time_dim, self.time_dim),
            "ctx.fc1": (self.context_dim, self.context_hidden),
            "ctx.fc2": (self.context_hidden, self.context_out),
            "in": (self.state_dim, self.width),
        }
        for k in range(self.n_blocks):
            shapes[f"block{k}.fc1"] = (self.width, self.width)
            shapes[f"block{k}.film_a"] = (self.embedding_dim, self.width)
            shapes[f"block{k}.film_b"] = (self.embedding_dim, self.width)
            shapes[f"block{k}.fc2"] = (self.width, self.width)
        shapes["out"] = (self.width, self.state_dim)
        return shapes


def init_params(arch: DenoiserArch, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """Uniform fan-in initialization; FiLM heads start at zero (identity modulation)."""
    params = {}
    for layer, (fan_in, fan_out) in arch.layer_shapes().items():
        if ".film_" in layer:
            params[f"{layer}.W"] = np.zeros((fan_in, fan_out), dtype=DTYPE)
            params[f"{layer}.b"] = np.zeros(fan_out, dtype=DTYPE)
            continue
        bound = 1.0 / np.sqrt(fan_in)
        params[f"{layer}.W"] = rng.uniform(-bound, bound, (fan_in, fan_out)).astype(DTYPE)
        params[f"{layer}.b"] = rng.uniform(-bound, bound, fan_out).astype(DTYPE)
    return params


def time_embedding(i, dim: int, dtype=DTYPE) -> np.ndarray:
    i = np.asarray(i, dtype=float).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10_000.0) * np.arange(half) / max(half - 1, 1))
    angles = i[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(i), 1))], axis=1)
    return emb.astype(dtype)


def _check_params(params: Dict[str, np.ndarray], arch: DenoiserArch):
    for layer, (fan_in, fan_out) in arch.layer_shapes().items():
        W = params.get(f"{layer}.W")
        if W is None or W.shape != (fan_in, fan_out):
            got = None if W is None else W.shape
            raise ShapeError(f"parameter {layer}.W has shape {got}, architecture needs {(fan_in, fan_out)}")


def forward(params: Dict[str, np.ndarray], arch: DenoiserArch, x, i, c):
    """Predicted noise for noisy free control points x (B, state_dim), steps i (B,), contexts c (B, context_dim)."""
    _check_params(params, arch)
    dtype = params["in.W"].dtype
    x = np.atleast_2d(np.asarray(x, dtype=dtype))
    c = np.atleast_2d(np.asarray(c, dtype=dtype))
    if x.shape[1] != arch.state_dim:
        raise ShapeError(f"input has {x.shape[1]} features, network expects {arch.state_dim}")
    if c.shape != (x.shape[0], arch.context_dim):
        raise ShapeError(f"context has shape {c.shape}, expected {(x.shape[0], arch.context_dim)}")
    i = np.broadcast_to(np.asarray(i), (x.shape[0],))

    tape = Tape()
    p = {name: tape.leaf(name, value) for name, value in params.items()}

    def dense(h, layer):
        return tape.linear(h, p[f"{layer}.W"], p[f"{layer}.b"])

    t_emb = tape.silu(dense(Tensor(time_embedding(i, arch.time_dim, dtype)), "time.fc"))
    c_emb = dense(tape.silu(dense(Tensor(c), "ctx.fc1")), "ctx.fc2")
    emb = tape.concat([t_emb, c_emb])

    h = dense(Tensor(x), "in")
    for k in range(arch.n_blocks):
        z = dense(h, f"block{k}.fc1")
        z = tape.film(z, dense(emb, f"block{k}.film_a"), dense(emb, f"block{k}.film_b"))
        z = dense(tape.silu(z), f"block{k}.fc2")
        h = tape.add(h, z)
    out = dense(tape.silu(h), "out")
    tape.output = out
    return out.value, tape


def backward(tape: Tape, seed) -> Dict[str, np.ndarray]:
    if tape.consumed:
        raise PreconditionError("this tape was already used for a backward pass")
    if tape.output is None:
        raise PreconditionError("tape has no recorded output")
    seed = np.asarray(seed, dtype=tape.output.value.dtype)
    if seed.shape != tape.output.shape:
        raise ShapeError(f"seed shape {seed.shape} does not match output shape {tape.output.shape}")
    tape.consumed = True
    tape.output.grad = seed
    for back in reversed(tape._backward):
        back()
    return {
        name: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        for name, leaf in tape.leaves.items()
    }


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    for name, g in grads.items():
        if name not in params or g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name} does not match any parameter shape")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter {name}")

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    updated = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            updated[name] = p
            continue
        g = g.astype(p.dtype)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = (state.beta1 * m + (1.0 - state.beta1) * g).astype(p.dtype)
        v = (state.beta2 * v + (1.0 - state.beta2) * g * g).astype(p.dtype)
        state.m[name], state.v[name] = m, v
        step = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        updated[name] = (p - step).astype(p.dtype)
    return updated


@dataclass(frozen=True)
class Normalizer:
    """Per-feature affine map of [low, high] onto [-1, 1]."""

    low: np.ndarray
    high: np.ndarray

    @classmethod
    def fit(cls, data) -> "Normalizer":
        data = np.asarray(data, dtype=float)
        return cls(low=data.min(axis=0), high=data.max(axis=0))

    @property
    def scale(self) -> np.ndarray:
        # constant features map to 0
        span = (self.high - self.low) / 2.0
        return np.where(span > 0, span, 1.0)

    @property
    def center(self) -> np.ndarray:
        return (self.high + self.low) / 2.0

    def normalize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.center) / self.scale

    def unnormalize(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.scale + self.center

    def to_dict(self) -> dict:
        return {"low": self.low.tolist(), "high": self.high.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(low=np.asarray(d["low"], dtype=float), high=np.asarray(d["high"], dtype=float))


def encode_context(context: PlanningContext, goal_mode: str) -> np.ndarray:
    """Start configuration plus goal configuration, or plus goal position and flattened rotation."""
    start = np.asarray(context.q_start, dtype=float)
    if goal_mode == "config":
        if context.q_goal is None:
            raise PreconditionError("a configuration-goal model needs contexts with q_goal")
        return np.concatenate([start, np.asarray(context.q_goal, dtype=float)])
    if context.ee_goal is None:
        raise PreconditionError("an end-effector-goal model needs contexts with ee_goal")
    a = context.ee_goal.angle
    rotation = [np.cos(a), -np.sin(a), np.sin(a), np.cos(a)]
    return np.concatenate([start, np.asarray(context.ee_goal.position, dtype=float), rotation])


def context_dim(dof: int, goal_mode: str) -> int:
    return 2 * dof if goal_mode == "config" else dof + 6


class Denoiser:
    """Inference-only view of a trained network."""

    def __init__(self, params: Dict[str, np.ndarray], arch: DenoiserArch):
        _check_params(params, arch)
        self.params = params
        self.arch = arch

    def __call__(self, x, i, c) -> np.ndarray:
        out, _ = forward(self.params, self.arch, x, i, c)
        return out.astype(float)


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    arch: DenoiserArch
    state_normalizer: Normalizer
    context_normalizer: Normalizer
    schedule: dict
    bspline: dict
    duration: float
    robot: dict
    scene_hash: str
    goal_mode: str = "config"
    task: str = ""
    training_contexts: List[str] = field(default_factory=list)
    adam: Optional[AdamState] = None
    rng_state: Optional[dict] = None
    step: int = 0

    def denoiser(self) -> Denoiser:
        return Denoiser(self.params, self.arch)


def _blobs(ckpt: Checkpoint) -> Dict[str, np.ndarray]:
    blobs = dict(ckpt.params)
    if ckpt.adam is not None:
        blobs.update({f"adam.m.{k}": v for k, v in ckpt.adam.m.items()})
        blobs.update({f"adam.v.{k}": v for k, v in ckpt.adam.v.items()})
    return blobs


def save_checkpoint(path, ckpt: Checkpoint):
    """Magic, header length, JSON header, then little-endian float32 blobs."""
    blobs = _blobs(ckpt)
    index, offset = [], 0
    for name, value in blobs.items():
        size = int(np.prod(value.shape, dtype=int)) * 4
        index.append({"name": name, "shape": list(value.shape), "offset": offset, "nbytes": size})
        offset += size
    header = {
        "version": CHECKPOINT_VERSION,
        "architecture": asdict(ckpt.arch),
        "state_normalizer": ckpt.state_normalizer.to_dict(),
        "context_normalizer": ckpt.context_normalizer.to_dict(),
        "schedule": ckpt.schedule,
        "bspline": ckpt.bspline,
        "duration": ckpt.duration,
        "robot": ckpt.robot,
        "scene_hash": ckpt.scene_hash,
        "goal_mode": ckpt.goal_mode,
        "task": ckpt.task,
        "training_contexts": ckpt.training_contexts,
        "adam": None if ckpt.adam is None else {
            "lr": ckpt.adam.lr, "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2,
            "eps": ckpt.adam.eps, "step": ckpt.adam.step,
        },
        "rng_state": ckpt.rng_state,
        "step": ckpt.step,
        "blobs": index,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        for value in blobs.values():
            f.write(np.ascontiguousarray(value, dtype="<f4").tobytes())
    logger.info("wrote checkpoint %s (%d blobs, step %d)", path, len(index), ckpt.step)


def load_checkpoint(path, arch: Optional[DenoiserArch] = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:4] != MAGIC or len(data) < 8:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (length,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8:8 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header in {path}: {e}") from e
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {header.get('version')} is not supported")

    stored = DenoiserArch(**header["architecture"])
    if arch is not None and arch != stored:
        diffs = [f"{k}: stored {v}, requested {getattr(arch, k)}"
                 for k, v in asdict(stored).items() if getattr(arch, k) != v]
        raise CheckpointError("architecture mismatch (" + "; ".join(diffs) + ")")

    body = data[8 + length:]
    expected = sum(b["nbytes"] for b in header["blobs"])
    if expected != len(body):
        raise CheckpointError(f"header lists {expected} blob bytes, file holds {len(body)}")
    blobs = {}
    for b in header["blobs"]:
        chunk = body[b["offset"]:b["offset"] + b["nbytes"]]
        blobs[b["name"]] = np.frombuffer(chunk, dtype="<f4").astype(DTYPE).reshape(b["shape"])

    adam = None
    if header["adam"] is not None:
        adam = AdamState(**header["adam"])
        adam.m = {k[len("adam.m."):]: v for k, v in blobs.items() if k.startswith("adam.m.")}
        adam.v = {k[len("adam.v."):]: v for k, v in blobs.items() if k.startswith("adam.v.")}
    params = {k: v for k, v in blobs.items() if not k.startswith("adam.")}
    _check_params(params, stored)

    return Checkpoint(
        params=params,
        arch=stored,
        state_normalizer=Normalizer.from_dict(header["state_normalizer"]),
        context_normalizer=Normalizer.from_dict(header["context_normalizer"]),
        schedule=header["schedule"],
        bspline=header["bspline"],
        duration=header["duration"],
        robot=header["robot"],
        scene_hash=header["scene_hash"],
        goal_mode=header["goal_mode"],
        task=header["task"],
        training_contexts=header["training_contexts"],
        adam=adam,
        rng_state=header["rng_state"],
        step=header["step"],
    )
