"""Trajectory calculus for sequential policy-gradient training.

Every reward-bearing unit (an image, a pixel readout, a token position)
carries a ternary observed state o in {-1, 0, 1}. The state starts at 1 and
evolves once per replica depth according to whether the unit's prediction at
that depth was correct:

    o_next = o * (o + correct) - 1

State 1 means the episode is live, 0 means it terminated on this step, and
-1 marks the padded tail. A state pays reward 1 while it is non-negative.
All episodes in a batch are padded to a fixed length of horizon+1 states so
one forward pass through the replica chain covers every step.

Two bookkeeping views of "still alive" coexist and deliberately disagree:

* rewards derive from the observed state, under which a unit that just
  failed still collects one final reward (its state is 0, not -1), and a
  padded-tail state can return to 0 via a second wrong prediction (the
  "resurrection" quirk of the transition rule);
* positional masks are running products of correctness bits, under which
  any failure is permanent.

The trainer gates its loss with the masks. The enumeration routine below
simulates both views for every correctness pattern and reports exactly
where they diverge, rather than silently reconciling them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

OBSERVED_DOMAIN = (-1, 0, 1)

TASK_CLASSIFICATION = "classification"
TASK_SEGMENTATION = "segmentation"
TASK_LANGUAGE_MODELING = "language-modeling"
TASK_KINDS = (TASK_CLASSIFICATION, TASK_SEGMENTATION, TASK_LANGUAGE_MODELING)

#: Per-depth return weights used by the reference recipe; depth 0 always
#: carries implicit weight 1.
RECIPE_RETURN_WEIGHTS = (0.4, 0.2, 0.1)


# --- return weights ------------------------------------------------------


@dataclass(frozen=True)
class ReturnWeights:
    """Per-depth weights for the weighted return: weight(0) = 1, weight(t)
    = lambdas[t-1] for t >= 1."""

    lambdas: Tuple[float, ...]

    def __post_init__(self):
        arr = np.asarray(self.lambdas, dtype=np.float64)
        if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr < 0)):
            raise ValueError("return weights must be finite and non-negative")
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))

    def weight(self, t: int) -> float:
        if t == 0:
            return 1.0
        if 1 <= t <= len(self.lambdas):
            return self.lambdas[t - 1]
        raise ValueError(f"no return weight defined for depth {t} (have {len(self.lambdas)})")

    def vector(self, horizon: int) -> np.ndarray:
        """Weights (w_0..w_horizon) as an array."""
        return np.array([self.weight(t) for t in range(horizon + 1)], dtype=np.float64)


def default_return_weights(horizon: int) -> ReturnWeights:
    """The recipe weights (0.4, 0.2, 0.1), halving past depth 3, cut or
    extended to cover `horizon` depths."""
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    lams: List[float] = list(RECIPE_RETURN_WEIGHTS[:horizon])
    while len(lams) < horizon:
        lams.append(lams[-1] / 2.0 if lams else 1.0)
    return ReturnWeights(tuple(lams))


# --- observed-state dynamics ---------------------------------------------


def step_observed(state: int, correct: int) -> int:
    """One transition of the observed state: o * (o + correct) - 1."""
    if state not in OBSERVED_DOMAIN:
        raise ValueError(f"observed state must be in {OBSERVED_DOMAIN}, got {state}")
    if correct not in (0, 1):
        raise ValueError(f"correctness bit must be 0 or 1, got {correct}")
    return state * (state + correct) - 1


def step_observed_batch(states: np.ndarray, correct: np.ndarray) -> np.ndarray:
    """Vectorized observed-state transition."""
    states = np.asarray(states, dtype=np.int64)
    correct = np.asarray(correct, dtype=np.int64)
    if states.shape != correct.shape:
        raise ValueError(f"state/correctness shapes differ: {states.shape} vs {correct.shape}")
    return states * (states + correct) - 1


def state_reward(state) -> np.ndarray | int:
    """Reward of an observed state: 1 while non-negative, else 0."""
    if np.isscalar(state):
        if state not in OBSERVED_DOMAIN:
            raise ValueError(f"observed state must be in {OBSERVED_DOMAIN}, got {state}")
        return 1 if state >= 0 else 0
    return (np.asarray(state) >= 0).astype(np.int64)


def padded_return(rewards: Sequence[float], weights: Optional[ReturnWeights] = None) -> float:
    """Return of a padded reward sequence: the (optionally weighted) reward
    sum times the final reward, so any sequence ending in 0 returns 0."""
    rewards = list(rewards)
    if not rewards:
        raise ValueError("padded_return: reward sequence is empty")
    if weights is None:
        total = float(sum(rewards))
    else:
        total = float(sum(weights.weight(t) * r for t, r in enumerate(rewards)))
    return total * float(rewards[-1])


def policy_readout(probabilities: np.ndarray, target_class: int) -> Tuple[float, float]:
    """Split one probability row into (p_continue, p_stop) for a target
    class: continue carries the target's probability mass."""
    probs = np.asarray(probabilities, dtype=np.float64)
    if probs.ndim != 1:
        raise ValueError(f"policy_readout: expected a probability row, got shape {probs.shape}")
    if not (0 <= target_class < probs.shape[0]):
        raise ValueError(f"policy_readout: class {target_class} outside [0, {probs.shape[0]})")
    p = float(probs[target_class])
    return p, 1.0 - p


# --- positional masks -----------------------------------------------------


@dataclass
class MaskSeries:
    """Positional masks M_0..M_horizon: binary running products of
    correctness bits. M_0 is all ones; a later correct prediction never
    resurrects a zeroed mask."""

    masks: List[np.ndarray]

    @property
    def horizon(self) -> int:
        return len(self.masks) - 1

    @staticmethod
    def from_correctness(correct: np.ndarray) -> "MaskSeries":
        """Build the series from correctness bits shaped (units..., horizon)."""
        correct = np.asarray(correct, dtype=np.float64)
        if correct.ndim < 1:
            raise ValueError("correctness array must have a trailing step axis")
        if not np.all((correct == 0.0) | (correct == 1.0)):
            raise ValueError("correctness bits must be 0 or 1")
        horizon = correct.shape[-1]
        unit_shape = correct.shape[:-1]
        masks = [np.ones(unit_shape, dtype=np.float64)]
        for t in range(horizon):
            masks.append(masks[-1] * correct[..., t])
        return MaskSeries(masks)

    def validate(self) -> None:
        if not self.masks:
            raise ValueError("mask series is empty")
        if not np.all(self.masks[0] == 1.0):
            raise ValueError("mask series must start with all ones")
        for t, m in enumerate(self.masks):
            if not np.all((m == 0.0) | (m == 1.0)):
                raise ValueError(f"mask at depth {t} is not binary")
            if t > 0 and np.any(m > self.masks[t - 1]):
                raise ValueError(f"mask at depth {t} exceeds depth {t - 1}")

    def survival_fractions(self) -> List[float]:
        """Fraction of units still unmasked at each depth."""
        return [float(m.mean()) for m in self.masks]

    def step_lengths(self) -> np.ndarray:
        """Per-unit step length: 1 plus the number of surviving depths,
        clamped to [1, horizon]; a zero horizon yields length 1."""
        horizon = self.horizon
        total = np.ones(self.masks[0].shape, dtype=np.float64)
        for t in range(1, horizon + 1):
            total = total + self.masks[t]
        if horizon >= 1:
            total = np.minimum(total, float(horizon))
        return np.maximum(total, 1.0)


def effective_batch_size(kind: str, batch: int, height: int = 0, width: int = 0,
                         context_len: int = 0) -> int:
    """Number of independent reward units per update: images for
    classification, pixels times the two readouts for segmentation, token
    positions for language modeling."""
    if batch < 1:
        raise ValueError(f"batch size must be positive, got {batch}")
    if kind == TASK_CLASSIFICATION:
        return batch
    if kind == TASK_SEGMENTATION:
        if height < 1 or width < 1:
            raise ValueError(f"segmentation geometry must be positive, got {height}x{width}")
        return batch * height * width * 2
    if kind == TASK_LANGUAGE_MODELING:
        if context_len < 1:
            raise ValueError(f"context length must be positive, got {context_len}")
        return batch * context_len
    raise ValueError(f"unknown task kind '{kind}' (expected one of {TASK_KINDS})")


def grouped_scale(m: int, step_lengths: np.ndarray) -> np.ndarray:
    """Per-unit loss coefficient (1/m) * (1/step_length)."""
    if m < 1:
        raise ValueError(f"effective batch size must be >= 1, got {m}")
    sl = np.asarray(step_lengths, dtype=np.float64)
    if np.any(sl < 1.0):
        raise ValueError("step lengths must be >= 1")
    return (1.0 / m) * (1.0 / sl)


# --- episode batches ------------------------------------------------------


@dataclass
class EpisodeBatch:
    """Everything the surrogate loss needs about one batch of padded
    episodes, derived from per-depth logits and targets."""

    m: int
    horizon: int
    targets: np.ndarray
    correctness: np.ndarray          # (units..., horizon)
    states: np.ndarray               # (horizon+1, units...)
    rewards: np.ndarray              # (horizon+1, units...)
    masks: MaskSeries
    step_lengths: np.ndarray         # (units...)
    returns_weighted: np.ndarray     # (units...)
    returns_unweighted: np.ndarray   # (units...)

    @staticmethod
    def build(logits_per_depth: Sequence[np.ndarray], targets: np.ndarray,
              weights: Optional[ReturnWeights] = None) -> "EpisodeBatch":
        """Derive dynamics, rewards, masks, and returns from raw per-depth
        logits (horizon+1 arrays shaped (units..., classes)). Argmax ties
        break toward the lowest class index."""
        if not logits_per_depth:
            raise ValueError("need at least the depth-0 logits")
        targets = np.asarray(targets, dtype=np.int64)
        horizon = len(logits_per_depth) - 1
        unit_shape = targets.shape
        m = int(np.prod(unit_shape)) if unit_shape else 1
        if weights is None:
            weights = default_return_weights(horizon)

        correct = np.zeros(unit_shape + (horizon,), dtype=np.float64)
        for t in range(horizon):
            pred = np.argmax(logits_per_depth[t], axis=-1)
            if pred.shape != unit_shape:
                raise ValueError(
                    f"depth-{t} logits have unit shape {pred.shape}, targets {unit_shape}")
            correct[..., t] = (pred == targets).astype(np.float64)

        states = np.zeros((horizon + 1,) + unit_shape, dtype=np.int64)
        states[0] = 1
        for t in range(horizon):
            states[t + 1] = step_observed_batch(states[t], correct[..., t].astype(np.int64))
        rewards = (states >= 0).astype(np.int64)

        masks = MaskSeries.from_correctness(correct)
        step_lengths = masks.step_lengths()

        wvec = weights.vector(horizon)
        weighted_sum = np.tensordot(wvec, rewards.astype(np.float64), axes=(0, 0))
        unweighted_sum = rewards.astype(np.float64).sum(axis=0)
        final = rewards[horizon].astype(np.float64)
        return EpisodeBatch(
            m=m,
            horizon=horizon,
            targets=targets,
            correctness=correct,
            states=states,
            rewards=rewards,
            masks=masks,
            step_lengths=step_lengths,
            returns_weighted=weighted_sum * final,
            returns_unweighted=unweighted_sum * final,
        )

    def validate(self) -> None:
        if self.states.shape[0] != self.horizon + 1:
            raise ValueError("episode batch is not padded to horizon+1 states")
        if not np.all(self.states[0] == 1):
            raise ValueError("initial observed state must be 1 for every unit")
        if not np.all(np.isin(self.states, OBSERVED_DOMAIN)):
            raise ValueError("observed states left the ternary domain")
        self.masks.validate()
        upper = max(self.horizon, 1)
        if np.any(self.step_lengths < 1) or np.any(self.step_lengths > upper):
            raise ValueError(f"step lengths must lie in [1, {upper}]")
        if np.any((self.returns_weighted != 0) != (self.rewards[self.horizon] == 1)):
            raise ValueError("weighted return must be nonzero exactly when the final reward is 1")


# --- exhaustive enumeration ----------------------------------------------


@dataclass
class PatternTrace:
    """Full simulation of one correctness pattern."""

    pattern: Tuple[int, ...]
    states: Tuple[int, ...]
    rewards: Tuple[int, ...]
    masks: Tuple[int, ...]
    step_length: int
    return_weighted: float
    return_unweighted: float
    characterization_member: bool
    resurrected: bool
    mask_reward_divergences: Tuple[int, ...]

    @property
    def nonzero_return(self) -> bool:
        return self.return_weighted != 0.0

    def to_record(self, horizon: int) -> dict:
        return {
            "horizon": horizon,
            "pattern": list(self.pattern),
            "o_trace": list(self.states),
            "rewards": list(self.rewards),
            "masks": list(self.masks),
            "step_length": self.step_length,
            "return_weighted": self.return_weighted,
            "return_unweighted": self.return_unweighted,
            "characterization_member": self.characterization_member,
            "resurrected": self.resurrected,
            "mask_reward_divergences": list(self.mask_reward_divergences),
        }


def characterization_member(pattern: Sequence[int], final_state: int) -> bool:
    """The closed-form membership test for nonzero returns: all actions
    before the last two padded steps agree, and the final observed state is
    non-negative. The action-uniformity clause is vacuous for horizons
    below 3."""
    horizon = len(pattern)
    prefix = pattern[: max(horizon - 1, 0)]
    uniform = len(set(prefix)) <= 1
    return uniform and final_state >= 0


def simulate_pattern(pattern: Sequence[int],
                     weights: Optional[ReturnWeights] = None) -> PatternTrace:
    """Run the observed-state dynamics for one correctness pattern and
    collect every quantity the verifier reports."""
    pattern = tuple(int(b) for b in pattern)
    horizon = len(pattern)
    if horizon < 1:
        raise ValueError("pattern must contain at least one correctness bit")
    if any(b not in (0, 1) for b in pattern):
        raise ValueError("pattern bits must be 0 or 1")
    if weights is None:
        weights = default_return_weights(horizon)

    states = [1]
    resurrected = False
    for t, bit in enumerate(pattern):
        nxt = step_observed(states[-1], bit)
        if states[-1] == -1 and nxt == 0:
            resurrected = True
        states.append(nxt)
    rewards = [int(state_reward(s)) for s in states]

    series = MaskSeries.from_correctness(np.asarray(pattern, dtype=np.float64))
    masks = [int(m) for m in (arr.item() for arr in series.masks)]
    step_length = int(series.step_lengths().item())

    divergences = tuple(t for t in range(horizon + 1) if masks[t] != rewards[t])
    return PatternTrace(
        pattern=pattern,
        states=tuple(states),
        rewards=tuple(rewards),
        masks=tuple(masks),
        step_length=step_length,
        return_weighted=padded_return(rewards, weights),
        return_unweighted=padded_return(rewards, None),
        characterization_member=characterization_member(pattern, states[-1]),
        resurrected=resurrected,
        mask_reward_divergences=divergences,
    )


@dataclass
class EnumerationResult:
    """Exhaustive simulation of every correctness pattern at one horizon."""

    horizon: int
    traces: List[PatternTrace]
    nonzero_patterns: List[Tuple[int, ...]] = field(default_factory=list)
    characterized_patterns: List[Tuple[int, ...]] = field(default_factory=list)
    mismatch_patterns: List[Tuple[int, ...]] = field(default_factory=list)
    divergences: List[Tuple[Tuple[int, ...], int]] = field(default_factory=list)

    @property
    def identity_holds_exactly(self) -> bool:
        return not self.mismatch_patterns

    @property
    def mismatches_all_resurrections(self) -> bool:
        by_pattern = {tr.pattern: tr for tr in self.traces}
        return all(by_pattern[p].resurrected for p in self.mismatch_patterns)


def enumerate_nonzero_returns(horizon: int,
                              weights: Optional[ReturnWeights] = None) -> EnumerationResult:
    """Simulate all 2^horizon correctness patterns (horizon in 1..8) and
    compare the actual nonzero-return set against its closed-form
    characterization.

    The characterized set is always a subset of the nonzero set; the only
    admissible difference is patterns whose padded tail resurrected (state
    -1 stepping back to 0 via a wrong prediction) with a non-uniform action
    prefix. Any other discrepancy raises."""
    if not (1 <= horizon <= 8):
        raise ValueError(f"horizon must lie in 1..8 for exhaustive enumeration, got {horizon}")
    if weights is None:
        weights = default_return_weights(horizon)

    traces = [simulate_pattern(p, weights) for p in itertools.product((0, 1), repeat=horizon)]
    nonzero = [tr.pattern for tr in traces if tr.nonzero_return]
    characterized = [tr.pattern for tr in traces if tr.characterization_member]

    extra = sorted(set(characterized) - set(nonzero))
    if extra:
        raise AssertionError(
            f"characterized patterns outside the nonzero-return set at horizon {horizon}: {extra}")
    mismatches = [tr.pattern for tr in traces
                  if tr.nonzero_return and not tr.characterization_member]
    divergences = [(tr.pattern, t) for tr in traces for t in tr.mask_reward_divergences]

    result = EnumerationResult(
        horizon=horizon,
        traces=traces,
        nonzero_patterns=nonzero,
        characterized_patterns=characterized,
        mismatch_patterns=mismatches,
        divergences=divergences,
    )
    if not result.mismatches_all_resurrections:
        raise AssertionError(
            f"non-resurrection mismatch against the characterization at horizon {horizon}")
    return result
