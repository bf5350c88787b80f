"""Clipped-surrogate policy optimization over the discrete agent states.

Actor and critic are separate two-hidden-layer networks updated from a
rollout buffer with minibatched Adam steps.  The surrogate objective per
sample is min(r * A, clip(r, 1-eps, 1+eps) * A) with r the probability
ratio against the behavior policy, plus an entropy bonus; the critic fits
discounted advantage targets with squared error.

A second, immediate update path exists for pre-execution rejections: one
plain gradient step that lowers the probability of the rejected action in
the rejecting state, applied mid-step before the policy is re-sampled.
"""

from __future__ import annotations

import json
import logging
import struct

import numpy as np

from .mlp import Adam, Mlp

log = logging.getLogger(__name__)

CKPT_MAGIC = b"SGATEPOL"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, foreign, or version-incompatible checkpoint file."""


class NonFiniteLossError(FloatingPointError):
    """The surrogate loss left the reals; the offending batch is skipped."""


class PolicyParams:
    def __init__(self, actor: Mlp, critic: Mlp):
        self.actor = actor
        self.critic = critic
        self.opt_actor = Adam(actor)
        self.opt_critic = Adam(critic)

    @classmethod
    def create(cls, n_inputs: int = 20, n_actions: int = 14, hidden: int = 64,
               rng: np.random.Generator | None = None) -> "PolicyParams":
        if rng is None:
            rng = np.random.default_rng(0)
        actor = Mlp([n_inputs, hidden, hidden, n_actions], rng)
        critic = Mlp([n_inputs, hidden, hidden, 1], rng)
        return cls(actor, critic)

    @property
    def n_actions(self) -> int:
        return self.actor.sizes[-1]

    def copy(self) -> "PolicyParams":
        other = PolicyParams.__new__(PolicyParams)
        other.actor = self.actor.copy()
        other.critic = self.critic.copy()
        other.opt_actor = self.opt_actor.copy()
        other.opt_critic = self.opt_critic.copy()
        return other


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def forward(params: PolicyParams, features: np.ndarray):
    """(action probabilities, value estimate) for one feature vector."""
    logits, _ = params.actor.forward(features)
    value, _ = params.critic.forward(features)
    return _softmax(logits)[0], float(value[0, 0])


def action_probs(params: PolicyParams, features: np.ndarray) -> np.ndarray:
    logits, _ = params.actor.forward(features)
    return _softmax(logits)[0]


def value_estimate(params: PolicyParams, features: np.ndarray) -> float:
    value, _ = params.critic.forward(features)
    return float(value[0, 0])


def sample_action(probs: np.ndarray, mask, rng: np.random.Generator):
    """Draw an action, excluding masked ones, renormalizing the remainder.

    The returned log-probability is taken from the unmasked distribution:
    it is the behavior policy's own score of the action, which keeps ratio
    bookkeeping consistent across steps whose masks differ.
    """
    if mask:
        keep = np.ones(probs.size, dtype=bool)
        keep[list(mask)] = False
        candidates = np.flatnonzero(keep)
    else:
        candidates = np.arange(probs.size)
    weights = probs[candidates]
    total = weights.sum()
    if not total > 0:
        raise ValueError("no unmasked action has positive probability")
    cum = np.cumsum(weights)
    j = int(np.searchsorted(cum, rng.random() * total, side="right"))
    action = int(candidates[min(j, candidates.size - 1)])
    return action, float(np.log(probs[action]))


def greedy_action(probs: np.ndarray, mask) -> int:
    if mask:
        keep = np.ones(probs.size, dtype=bool)
        keep[list(mask)] = False
        candidates = np.flatnonzero(keep)
        return int(candidates[np.argmax(probs[candidates])])
    return int(np.argmax(probs))


def compute_advantages(rewards: np.ndarray, values: np.ndarray,
                       bootstrap_value: float, gamma: float):
    """Discounted advantage per step of one trajectory segment.

    Backward pass over the one-step temporal-difference errors; equivalent
    to the forward double sum over future deltas, in O(T).  Value targets
    are advantage plus baseline.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    T = rewards.size
    adv = np.empty(T)
    next_adv = 0.0
    next_value = float(bootstrap_value)
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        next_adv = delta + gamma * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


def clip_objective(ratio, advantage, clip_eps: float):
    """Per-sample clipped surrogate value, the quantity being maximized."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage
    return np.minimum(ratio * advantage, clipped)


def clipped_loss(params: PolicyParams, batch: dict, hyper):
    """Loss and analytic gradients for one minibatch.

    batch needs: features (B, n_in), actions (B,), log_probs_old (B,),
    advantages (B,), value_targets (B,).
    """
    X = batch["features"]
    acts = batch["actions"]
    B = acts.size
    rows = np.arange(B)

    logits, actor_cache = params.actor.forward(X)
    logp = _log_softmax(logits)
    probs = np.exp(logp)
    logp_a = logp[rows, acts]
    ratio = np.exp(logp_a - batch["log_probs_old"])
    adv = batch["advantages"]

    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps) * adv
    objective = np.minimum(unclipped, clipped)
    entropy = -(probs * logp).sum(axis=1)

    values, critic_cache = params.critic.forward(X)
    v = values[:, 0]
    v_err = v - batch["value_targets"]

    loss = (-objective.mean()
            + hyper.value_coef * np.mean(v_err ** 2)
            - hyper.entropy_coef * entropy.mean())
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"loss={loss!r}")

    # d loss / d logits: the clipped branch contributes nothing where it is
    # the active minimum, ties resolve to the unclipped branch.
    active = unclipped <= clipped
    coef = np.where(active, ratio * adv, 0.0) / B
    d_logits = probs * coef[:, None]
    d_logits[rows, acts] -= coef
    d_logits += hyper.entropy_coef * probs * (logp + entropy[:, None]) / B

    actor_grads = params.actor.backward(actor_cache, d_logits)
    d_v = (2.0 * hyper.value_coef / B) * v_err
    critic_grads = params.critic.backward(critic_cache, d_v[:, None])
    return float(loss), actor_grads, critic_grads


def update(params: PolicyParams, buffer: dict, hyper,
           rng: np.random.Generator) -> PolicyParams:
    """Minibatched clipped-surrogate optimization over a full buffer.

    The behavior policy is whatever wrote the buffer's log probabilities;
    freezing it is implicit in using those stored values.  Returns new
    params; the caller owns clearing the buffer.
    """
    N = buffer["actions"].size
    if N < hyper.minibatch_size:
        raise ValueError("buffer smaller than one minibatch")
    new = params.copy()
    adv = buffer["advantages"]
    if hyper.normalize_adv:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    work = dict(buffer, advantages=adv)

    batches = skipped = 0
    for _ in range(hyper.epochs_per_update):
        order = rng.permutation(N)
        for start in range(0, N, hyper.minibatch_size):
            take = order[start:start + hyper.minibatch_size]
            sub = {k: v[take] for k, v in work.items()}
            batches += 1
            try:
                _, ag, cg = clipped_loss(new, sub, hyper)
            except NonFiniteLossError as exc:
                skipped += 1
                log.warning("skipping minibatch with non-finite loss: %s", exc)
                continue
            new.opt_actor.step(new.actor, *ag, hyper.learning_rate)
            new.opt_critic.step(new.critic, *cg, hyper.learning_rate)
    if batches and skipped == batches:
        raise FloatingPointError(
            "every minibatch of the update produced a non-finite loss; "
            f"actor norm {np.linalg.norm(new.actor.flat()):.3e}, "
            f"critic norm {np.linalg.norm(new.critic.flat()):.3e}")
    return new


def penalty_update(params: PolicyParams, features: np.ndarray, action: int,
                   penalty: float, hyper) -> PolicyParams:
    """Immediate response to a pre-execution rejection.

    One plain gradient step on (-penalty) * log pi(action | state), i.e. the
    sampled action becomes less likely in this state, scaled by how harsh
    the penalty was.  Bypasses Adam so a burst of rejections cannot distort
    the optimizer's moment estimates.
    """
    if penalty > 0:
        raise ValueError("penalty must be nonpositive")
    new = params.copy()
    logits, cache = new.actor.forward(features)
    probs = _softmax(logits)
    # Loss is (-penalty) * log pi(a); its logit gradient is
    # (-penalty) * (onehot - pi), and the descent step below subtracts it.
    d_logits = (-penalty) * (np.eye(probs.shape[1])[action] - probs)
    gw, gb = new.actor.backward(cache, d_logits)
    for p, g in zip(new.actor.weights + new.actor.biases, gw + gb):
        p -= hyper.learning_rate * g
    return new


def save_checkpoint(path, params: PolicyParams, hyper_dict: dict) -> None:
    """Versioned little-endian binary: magic, meta JSON, named float64 arrays."""
    arrays = []
    for prefix, net in (("actor", params.actor), ("critic", params.critic)):
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays.append((f"{prefix}.w{i}", w))
            arrays.append((f"{prefix}.b{i}", b))
    meta = {
        "hyper": hyper_dict,
        "actor_sizes": params.actor.sizes,
        "critic_sizes": params.critic.sizes,
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<H", CKPT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            enc = name.encode()
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (PolicyParams, hyper dict); raises CheckpointError on damage."""
    try:
        raw = open(path, "rb").read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if raw[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointError(f"{path} is not a policy checkpoint (bad magic)")
    off = len(CKPT_MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise CheckpointError(f"{path} is truncated")
        vals = struct.unpack_from(fmt, raw, off)
        off += size
        return vals

    (version,) = take("<H")
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path} has unsupported version {version}")
    (meta_len,) = take("<I")
    try:
        meta = json.loads(raw[off:off + meta_len])
    except ValueError:
        raise CheckpointError(f"{path} has corrupt metadata") from None
    off += meta_len
    (n_arrays,) = take("<I")
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = take("<H")
        name = raw[off:off + name_len].decode()
        off += name_len
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        end = off + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path} is truncated in array {name}")
        arrays[name] = np.frombuffer(raw[off:end], dtype="<f8").reshape(shape).copy()
        off = end

    params = PolicyParams(Mlp(meta["actor_sizes"], init=False),
                          Mlp(meta["critic_sizes"], init=False))
    for prefix, net in (("actor", params.actor), ("critic", params.critic)):
        n_layers = len(net.sizes) - 1
        try:
            net.weights = [arrays[f"{prefix}.w{i}"] for i in range(n_layers)]
            net.biases = [arrays[f"{prefix}.b{i}"] for i in range(n_layers)]
        except KeyError as exc:
            raise CheckpointError(f"{path} is missing array {exc}") from None
    params.opt_actor = Adam(params.actor)
    params.opt_critic = Adam(params.critic)
    return params, meta["hyper"]
