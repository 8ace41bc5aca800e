"""Online convex aggregation of expert streams.

Two rules are provided: the uniform mixture (UNI) and Bernstein Online
Aggregation (BOA) with either one fixed learning rate or per-expert
adaptive rates. BOA multiplies each weight by

    exp(-eta * r * (1 + eta * r))

where ``r`` is the expert's instantaneous regret, the expert loss minus
the loss of the current mixture. Weights are kept in the log domain and
renormalised with a max-shift so long horizons cannot underflow the whole
vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import NumericalError, ParameterError, ShapeError
from .loss import LossKind

RULE_KINDS = ("uni", "boa_fixed", "boa_adaptive")

# Learning rate used by the adaptive rule before any nonzero regret is seen.
INITIAL_ADAPTIVE_RATE = 1.0
REGRET_NOISE_ULPS = 8
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class Rule:
    kind: str
    eta: float | None = None

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ParameterError(f"unknown aggregation rule {self.kind!r}")
        if self.kind == "boa_fixed":
            if self.eta is None or not self.eta > 0 or not np.isfinite(self.eta):
                raise ParameterError(f"fixed BOA needs a positive learning rate, got {self.eta!r}")

    @classmethod
    def uni(cls) -> "Rule":
        return cls("uni")

    @classmethod
    def boa(cls, eta: float | None = None) -> "Rule":
        """BOA with a fixed ``eta``, or adaptive rates when ``eta`` is None."""
        return cls("boa_adaptive") if eta is None else cls("boa_fixed", float(eta))

    @property
    def label(self) -> str:
        return "UNI" if self.kind == "uni" else "BOA"


@dataclass
class AggregationState:
    """Everything the online protocol carries from one step to the next."""

    rule: Rule
    log_weights: np.ndarray
    step: int = 0
    cum_sq_regret: np.ndarray = field(default=None)
    max_abs_regret: np.ndarray = field(default=None)
    learning_rates: np.ndarray = field(default=None)

    def __post_init__(self):
        k = self.log_weights.shape[0]
        if self.cum_sq_regret is None:
            self.cum_sq_regret = np.zeros(k)
        if self.max_abs_regret is None:
            self.max_abs_regret = np.zeros(k)
        if self.learning_rates is None:
            eta = self.rule.eta if self.rule.kind == "boa_fixed" else INITIAL_ADAPTIVE_RATE
            self.learning_rates = np.full(k, eta, dtype=float)

    @property
    def n_experts(self) -> int:
        return self.log_weights.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return _weights_from_log(self.log_weights)

    def copy(self) -> "AggregationState":
        return replace(
            self,
            log_weights=self.log_weights.copy(),
            cum_sq_regret=self.cum_sq_regret.copy(),
            max_abs_regret=self.max_abs_regret.copy(),
            learning_rates=self.learning_rates.copy(),
        )


@dataclass(frozen=True)
class StepOutcome:
    mixture_value: float | None
    expert_losses: np.ndarray
    mixture_loss: float
    instantaneous_regrets: np.ndarray
    weights_after: np.ndarray


def _weights_from_log(log_w: np.ndarray) -> np.ndarray:
    w = np.exp(log_w - np.max(log_w))
    total = w.sum()
    if not (np.isfinite(total) and total > 0):
        raise NumericalError("all expert weights vanished")
    return w / total


def uni_weights(n_experts: int) -> np.ndarray:
    if n_experts < 1:
        raise ParameterError("expert set is empty")
    return np.full(n_experts, 1.0 / n_experts)


def initial_state(rule: Rule, n_experts: int, prior=None) -> AggregationState:
    """Fresh state with uniform weights, or ``prior`` weights if given."""
    w = uni_weights(n_experts) if prior is None else np.asarray(prior, dtype=float)
    if w.shape != (n_experts,) or np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-12):
        raise ParameterError("prior weights must be a point of the simplex")
    with np.errstate(divide="ignore"):
        log_w = np.log(w)
    return AggregationState(rule=rule, log_weights=log_w - np.max(log_w))


def mixture_predict(weights, expert_values) -> float:
    """Convex combination of the experts' values."""
    w = np.asarray(weights, dtype=float)
    v = np.asarray(expert_values, dtype=float)
    if w.shape != v.shape or w.ndim != 1:
        raise ShapeError(f"weights {w.shape} and expert values {v.shape} differ")
    return float(w @ v)


def boa_log_update(log_weights, regrets, eta) -> np.ndarray:
    """One multiplicative second-order step in the log domain.

    ``eta`` may be a scalar or one rate per expert. The result is shifted so
    its maximum is zero.
    """
    r = np.asarray(regrets, dtype=float)
    log_w = np.asarray(log_weights, dtype=float) - eta * r * (1.0 + eta * r)
    top = np.max(log_w)
    if not np.isfinite(top):
        raise NumericalError("log-weights became non-finite")
    return log_w - top


def adaptive_rates(n_experts: int, max_abs_regret, cum_sq_regret) -> np.ndarray:
    """Per-expert rates ``min(1 / (2 E), sqrt(ln K / V))``.

    ``E`` is the running maximum of absolute regrets and ``V`` the running sum
    of squared regrets, so the rate is invariant to rescaling the losses.
    Experts with no nonzero regret yet keep the initial rate; so do experts
    whose regrets are so small that their squares underflow to zero.
    """
    e = np.asarray(max_abs_regret, dtype=float)
    v = np.asarray(cum_sq_regret, dtype=float)
    active = v > 0
    rates = np.full(e.shape, INITIAL_ADAPTIVE_RATE)
    rates[active] = np.minimum(
        1.0 / (2.0 * e[active]), np.sqrt(np.log(n_experts) / v[active])
    )
    return rates


def _check_losses(state: AggregationState, losses) -> np.ndarray:
    losses = np.asarray(losses, dtype=float)
    if losses.shape != (state.n_experts,):
        raise ShapeError(f"expected {state.n_experts} losses, got shape {losses.shape}")
    if not np.all(np.isfinite(losses)):
        raise NumericalError("expert losses must be finite")
    return losses


def _advance(state: AggregationState, losses: np.ndarray, mixture_value=None):
    w = state.weights
    mix_loss = float(w @ losses)
    regrets = losses - mix_loss
    # Regrets below the float resolution of this step's losses are rounding
    # noise; the scale-free adaptive rate would otherwise amplify them.
    regrets[np.abs(regrets) <= REGRET_NOISE_ULPS * _EPS * np.max(np.abs(losses))] = 0.0
    new = state.copy()
    new.step += 1
    new.cum_sq_regret += regrets * regrets
    np.maximum(new.max_abs_regret, np.abs(regrets), out=new.max_abs_regret)
    kind = state.rule.kind
    if kind == "boa_adaptive":
        new.learning_rates = adaptive_rates(state.n_experts, new.max_abs_regret, new.cum_sq_regret)
    if kind != "uni":
        new.log_weights = boa_log_update(state.log_weights, regrets, new.learning_rates)
    outcome = StepOutcome(
        mixture_value=mixture_value,
        expert_losses=losses,
        mixture_loss=mix_loss,
        instantaneous_regrets=regrets,
        weights_after=new.weights,
    )
    return new, outcome


def boa_step_fixed(state: AggregationState, expert_losses):
    if state.rule.kind != "boa_fixed":
        raise ParameterError(f"state carries rule {state.rule.kind!r}, not boa_fixed")
    return _advance(state, _check_losses(state, expert_losses))


def boa_step_adaptive(state: AggregationState, expert_losses):
    if state.rule.kind != "boa_adaptive":
        raise ParameterError(f"state carries rule {state.rule.kind!r}, not boa_adaptive")
    return _advance(state, _check_losses(state, expert_losses))


def aggregation_step(state: AggregationState, expert_losses):
    """Dispatch on the state's rule; UNI leaves the weights untouched."""
    return _advance(state, _check_losses(state, expert_losses))


@dataclass
class Trajectory:
    """Per-step record of one online run.

    ``weights[t]`` are the weights used to predict step ``t``;
    ``weights_after[t]`` those produced once step ``t``'s target is known.
    ``expert_losses`` and ``mixture_losses`` hold the true losses, while
    ``regrets`` holds the (possibly linearised) regrets driving the update.
    """

    predictions: np.ndarray
    weights: np.ndarray
    weights_after: np.ndarray
    expert_losses: np.ndarray
    mixture_losses: np.ndarray
    regrets: np.ndarray
    learning_rates: np.ndarray
    final_state: AggregationState

    def __len__(self):
        return self.predictions.shape[0]

    def outcome(self, t: int) -> StepOutcome:
        return StepOutcome(
            mixture_value=float(self.predictions[t]),
            expert_losses=self.expert_losses[t],
            mixture_loss=float(self.mixture_losses[t]),
            instantaneous_regrets=self.regrets[t],
            weights_after=self.weights_after[t],
        )

    def outcomes(self) -> list[StepOutcome]:
        return [self.outcome(t) for t in range(len(self))]

    @property
    def average_loss(self) -> float:
        return float(np.mean(self.mixture_losses))


def run_online(
    rule: Rule,
    expert_streams,
    target_stream,
    loss: LossKind | None = None,
    state: AggregationState | None = None,
    linearize: bool = True,
) -> Trajectory:
    """Run the sequential protocol over ``T`` steps.

    At every step the mixture is formed from the current weights, the target
    is revealed, losses are computed and the weights updated. With
    ``linearize`` (the default) the update sees the gradient-linearised
    losses ``g * f_k`` with ``g`` the loss derivative at the mixture
    prediction, which makes BOA compete with the best fixed convex
    combination instead of the best single expert.

    Args:
        rule: aggregation rule. Ignored when ``state`` is given.
        expert_streams: array of shape (K, T).
        target_stream: array of shape (T,).
        loss: per-observation loss, squared by default.
        state: state to continue from, e.g. the output of :func:`warm_start`.
        linearize: feed linearised instead of raw losses to the update.
    """
    loss = loss or LossKind.squared()
    streams = np.asarray(expert_streams, dtype=float)
    target = np.asarray(target_stream, dtype=float)
    if streams.ndim != 2 or target.ndim != 1 or streams.shape[1] != target.shape[0]:
        raise ShapeError(f"expert streams {streams.shape} do not match target {target.shape}")
    if not (np.all(np.isfinite(streams)) and np.all(np.isfinite(target))):
        raise NumericalError("streams contain missing or non-finite values")
    k, n_steps = streams.shape
    if state is None:
        state = initial_state(rule, k)
    elif state.n_experts != k:
        raise ShapeError(f"state has {state.n_experts} experts, streams have {k}")

    preds = np.empty(n_steps)
    w_before = np.empty((n_steps, k))
    w_after = np.empty((n_steps, k))
    exp_losses = np.empty((n_steps, k))
    mix_losses = np.empty(n_steps)
    regrets = np.empty((n_steps, k))
    rates = np.empty((n_steps, k))

    for t in range(n_steps):
        values = streams[:, t]
        w = state.weights
        pred = float(w @ values)
        y = target[t]
        true_losses = np.asarray(loss(y, values), dtype=float)
        if linearize:
            update_losses = loss.prediction_gradient(y, pred) * values
        else:
            update_losses = true_losses
        state, outcome = _advance(state, _check_losses(state, update_losses), pred)
        preds[t] = pred
        w_before[t] = w
        w_after[t] = outcome.weights_after
        exp_losses[t] = true_losses
        mix_losses[t] = loss(y, pred)
        regrets[t] = outcome.instantaneous_regrets
        rates[t] = state.learning_rates

    return Trajectory(preds, w_before, w_after, exp_losses, mix_losses, regrets, rates, state)


def warm_start(
    rule: Rule,
    pretrain_streams,
    pretrain_target,
    loss: LossKind | None = None,
    linearize: bool = True,
) -> AggregationState:
    """Run the rule over a pre-training segment and return its final state."""
    streams = np.asarray(pretrain_streams, dtype=float)
    if streams.ndim != 2 or streams.shape[1] == 0:
        raise ParameterError("pre-training segment must contain at least one step")
    return run_online(rule, streams, pretrain_target, loss, linearize=linearize).final_state


def weights_frame(dates, expert_names, weights) -> pd.DataFrame:
    """Long-format weight table with columns ``date, expert_name, weight``."""
    weights = np.asarray(weights, dtype=float)
    dates = list(dates)
    names = list(expert_names)
    if weights.shape != (len(dates), len(names)):
        raise ShapeError(f"weights {weights.shape} vs {len(dates)} dates x {len(names)} experts")
    return pd.DataFrame(
        {
            "date": np.repeat(dates, len(names)),
            "expert_name": names * len(dates),
            "weight": weights.ravel(),
        }
    )
