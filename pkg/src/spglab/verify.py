"""Self-verification of the trajectory calculus.

The verifier re-simulates the observed-state dynamics for every correctness
pattern up to a horizon cap and checks, pattern by pattern:

* the six-entry transition truth table and domain closure;
* rewards, padded returns (weighted and unweighted), and the equivalence
  "nonzero return iff the final observed state is non-negative";
* the closed-form membership test for the nonzero-return set, which must be
  a subset of the actual set, with any difference fully explained by the
  padded-tail resurrection quirk;
* positional masks, their monotonicity, the mask/reward divergence
  positions, and the step-length formula;
* the grouped loss-scale spot values.

The transition rule is injectable (`step_fn`) so the test suite can prove
the verifier actually fails on a mutated dynamics implementation instead of
passing vacuously.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .chain import (VARIANT_DEPTH, VARIANT_DROPOUT, ChainConfig,
                    added_param_count, attach_chain, strip_chain)
from .nets import ClassificationBody, Network
from .rng import RngStream
from .trajectory import (MaskSeries, PatternTrace, ReturnWeights,
                         characterization_member, default_return_weights,
                         enumerate_nonzero_returns, grouped_scale,
                         padded_return, step_observed)

DEFAULT_MAX_HORIZON = 4
HORIZON_CAP = 8

#: (state, correctness) -> next state, all six transitions.
TRUTH_TABLE: Tuple[Tuple[Tuple[int, int], int], ...] = (
    ((1, 1), 1),
    ((1, 0), 0),
    ((0, 1), -1),
    ((0, 0), -1),
    ((-1, 1), -1),
    ((-1, 0), 0),
)

#: (m, step_length, expected coefficient) spot checks for the loss scale.
GROUPED_SCALE_EXAMPLES = (
    (2, 3.0, 1.0 / 6.0),
    (3, 3.0, 1.0 / 9.0),
    (3, 1.0, 1.0 / 3.0),
)

StepFn = Callable[[int, int], int]


@dataclass
class VerifyReport:
    """Everything one verification run learned."""

    max_horizon: int
    ok: bool = True
    failures: List[str] = field(default_factory=list)
    truth_table_ok: bool = True
    patterns_checked: int = 0
    divergence_count: int = 0
    nonzero_counts: Dict[int, int] = field(default_factory=dict)
    characterized_counts: Dict[int, int] = field(default_factory=dict)
    mismatch_counts: Dict[int, int] = field(default_factory=dict)
    records: List[dict] = field(default_factory=list)

    def fail(self, message: str) -> None:
        self.failures.append(message)
        self.ok = False

    def summary(self) -> dict:
        return {
            "ok": self.ok,
            "max_horizon": self.max_horizon,
            "patterns_checked": self.patterns_checked,
            "truth_table_ok": self.truth_table_ok,
            "divergence_count": self.divergence_count,
            "nonzero_counts": {str(k): v for k, v in self.nonzero_counts.items()},
            "characterized_counts": {str(k): v
                                     for k, v in self.characterized_counts.items()},
            "mismatch_counts": {str(k): v for k, v in self.mismatch_counts.items()},
            "failures": list(self.failures),
        }


def check_truth_table(step_fn: StepFn = step_observed) -> List[str]:
    """All six transitions, plus domain closure."""
    failures = []
    for (state, bit), expected in TRUTH_TABLE:
        try:
            got = step_fn(state, bit)
        except Exception as exc:  # a mutated rule may reject valid input
            failures.append(f"step({state}, {bit}) raised {exc!r}")
            continue
        if got != expected:
            failures.append(f"step({state}, {bit}) = {got}, expected {expected}")
        if got not in (-1, 0, 1):
            failures.append(f"step({state}, {bit}) left the ternary domain: {got}")
    return failures


def _simulate(pattern: Tuple[int, ...], weights: ReturnWeights,
              step_fn: StepFn) -> Tuple[Optional[PatternTrace], List[str]]:
    """Simulate one pattern under an arbitrary transition rule, reporting
    domain escapes instead of crashing."""
    failures: List[str] = []
    states = [1]
    resurrected = False
    for bit in pattern:
        try:
            nxt = int(step_fn(states[-1], bit))
        except Exception as exc:
            failures.append(f"pattern {pattern}: step raised {exc!r}")
            return None, failures
        if nxt not in (-1, 0, 1):
            failures.append(f"pattern {pattern}: state left ternary domain ({nxt})")
            return None, failures
        if states[-1] == -1 and nxt == 0:
            resurrected = True
        states.append(nxt)
    rewards = [1 if s >= 0 else 0 for s in states]

    series = MaskSeries.from_correctness(np.asarray(pattern, dtype=np.float64))
    masks = [int(arr.item()) for arr in series.masks]
    step_length = int(series.step_lengths().item())
    divergences = tuple(t for t in range(len(pattern) + 1) if masks[t] != rewards[t])
    trace = PatternTrace(
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
    return trace, failures


def _check_trace(trace: PatternTrace, horizon: int, report: VerifyReport) -> None:
    p = trace.pattern
    nonzero_w = trace.return_weighted != 0.0
    nonzero_u = trace.return_unweighted != 0.0
    final_alive = trace.rewards[-1] == 1

    if nonzero_w != final_alive or nonzero_u != final_alive:
        report.fail(f"T={horizon} {p}: nonzero return must coincide with a "
                    f"non-negative final state (weighted={nonzero_w}, "
                    f"unweighted={nonzero_u}, final reward={trace.rewards[-1]})")
    if trace.characterization_member and not nonzero_w:
        report.fail(f"T={horizon} {p}: characterized as nonzero but the "
                    f"simulated return is zero")
    if nonzero_w and not trace.characterization_member and not trace.resurrected:
        report.fail(f"T={horizon} {p}: nonzero return outside the "
                    f"characterization without a padded-tail resurrection")
    for t in range(1, horizon + 1):
        if trace.masks[t] > trace.masks[t - 1]:
            report.fail(f"T={horizon} {p}: mask increased at depth {t}")
        if trace.masks[t] > trace.rewards[t]:
            report.fail(f"T={horizon} {p}: mask alive at depth {t} while the "
                        f"reward already died")
    if 0 in trace.mask_reward_divergences:
        report.fail(f"T={horizon} {p}: mask and reward disagree at depth 0")
    expected_sl = max(1, min(1 + sum(trace.masks[1:]), horizon))
    if trace.step_length != expected_sl:
        report.fail(f"T={horizon} {p}: step length {trace.step_length}, "
                    f"expected {expected_sl}")


def _check_known_examples(by_horizon: Dict[int, List[PatternTrace]],
                          report: VerifyReport) -> None:
    if 1 in by_horizon:
        nonzero = {t.pattern for t in by_horizon[1] if t.nonzero_return}
        if nonzero != {(0,), (1,)}:
            report.fail(f"T=1: nonzero-return set {sorted(nonzero)}, expected both patterns")
    if 2 in by_horizon:
        traces = by_horizon[2]
        nonzero = {t.pattern for t in traces if t.nonzero_return}
        if nonzero != {(1, 1), (1, 0)}:
            report.fail(f"T=2: nonzero-return set {sorted(nonzero)}, "
                        f"expected {{(1, 1), (1, 0)}}")
        member = {t.pattern for t in traces if t.characterization_member}
        if member != nonzero:
            report.fail(f"T=2: characterization {sorted(member)} must match "
                        f"the nonzero set exactly")
        lagger = next((t for t in traces if t.pattern == (1, 0)), None)
        if lagger is None:
            report.fail("T=2 (1, 0): the rule rejected this pattern entirely")
        elif lagger.mask_reward_divergences != (2,):
            report.fail(f"T=2 (1, 0): mask/reward divergence at "
                        f"{lagger.mask_reward_divergences}, expected (2,)")
    if 3 in by_horizon:
        traces = by_horizon[3]
        mismatches = {t.pattern for t in traces
                      if t.nonzero_return and not t.characterization_member}
        if mismatches != {(0, 1, 0)}:
            report.fail(f"T=3: characterization mismatches {sorted(mismatches)}, "
                        f"expected only (0, 1, 0)")
        survivor = next((t for t in traces if t.pattern == (0, 0, 0)), None)
        if survivor is None:
            report.fail("T=3 (0, 0, 0): the rule rejected this pattern entirely")
        elif not (survivor.characterization_member and survivor.nonzero_return):
            report.fail("T=3 (0, 0, 0): must be both characterized and nonzero")


def _check_grouped_scale(report: VerifyReport) -> None:
    for m, sl, expected in GROUPED_SCALE_EXAMPLES:
        got = float(grouped_scale(m, np.array([sl]))[0])
        exact = (1.0 / m) * (1.0 / sl)
        if got != exact:
            report.fail(f"grouped scale (m={m}, len={sl}) = {got!r}, "
                        f"formula value {exact!r}")
        if abs(got - expected) > 1e-15:
            report.fail(f"grouped scale (m={m}, len={sl}) = {got!r}, "
                        f"expected about {expected!r}")


def run_verify(max_horizon: int = DEFAULT_MAX_HORIZON,
               weights: Optional[ReturnWeights] = None,
               step_fn: StepFn = step_observed,
               collect_records: bool = True) -> VerifyReport:
    """Run every check up to `max_horizon` (1..8) and return the report."""
    if not (1 <= max_horizon <= HORIZON_CAP):
        raise ValueError(f"max horizon must lie in 1..{HORIZON_CAP}, got {max_horizon}")
    report = VerifyReport(max_horizon=max_horizon)

    tt_failures = check_truth_table(step_fn)
    for f in tt_failures:
        report.fail(f)
    report.truth_table_ok = not tt_failures

    by_horizon: Dict[int, List[PatternTrace]] = {}
    for horizon in range(1, max_horizon + 1):
        w = weights if weights is not None else default_return_weights(horizon)
        traces = []
        for pattern in itertools.product((0, 1), repeat=horizon):
            trace, failures = _simulate(pattern, w, step_fn)
            for f in failures:
                report.fail(f)
            if trace is None:
                continue
            report.patterns_checked += 1
            _check_trace(trace, horizon, report)
            traces.append(trace)
            if collect_records:
                report.records.append(trace.to_record(horizon))
        by_horizon[horizon] = traces
        report.nonzero_counts[horizon] = sum(t.nonzero_return for t in traces)
        report.characterized_counts[horizon] = sum(t.characterization_member
                                                   for t in traces)
        report.mismatch_counts[horizon] = sum(
            t.nonzero_return and not t.characterization_member for t in traces)
        report.divergence_count += sum(len(t.mask_reward_divergences) for t in traces)

        if step_fn is step_observed and weights is None:
            library = enumerate_nonzero_returns(horizon)
            if set(library.nonzero_patterns) != {t.pattern for t in traces
                                                 if t.nonzero_return}:
                report.fail(f"T={horizon}: verifier and library disagree on "
                            f"the nonzero-return set")

    _check_known_examples(by_horizon, report)
    _check_grouped_scale(report)
    return report


def write_records(report: VerifyReport, path: str) -> None:
    """One JSON line per simulated pattern."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in report.records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def write_summary(report: VerifyReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.summary(), fh, sort_keys=True, indent=2)
        fh.write("\n")


# --- the full self-check battery -------------------------------------------


@dataclass
class SuiteResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def _suite_gradient_check() -> Tuple[bool, str]:
    """Central-difference check of the taped gradient on a small composed
    graph covering matmul, bias add, relu, log-softmax, gather and a
    constant-weighted reduction."""
    rng = RngStream(123, "verify/fd")
    x = np.asarray(rng.normal((5, 4)))
    w1 = ad.Tensor(rng.normal((4, 6)), requires_grad=True)
    b1 = ad.Tensor(np.zeros(6), requires_grad=True)
    w2 = ad.Tensor(rng.normal((6, 3)), requires_grad=True)
    targets = np.asarray(rng.integers(3, (5,)), dtype=np.int64)
    coeff = np.full((5,), -1.0 / 5.0)

    def loss_value() -> float:
        h = ad.relu(ad.bias_add(ad.matmul(ad.constant(x), w1), b1))
        logits = ad.matmul(h, w2)
        picked = ad.gather(ad.log_softmax(logits), targets)
        return float(ad.reduce_sum(ad.mul(picked, ad.constant(coeff))).data)

    params = [w1, b1, w2]
    ad.zero_grads(params)
    with ad.Tape() as tape:
        h = ad.relu(ad.bias_add(ad.matmul(ad.constant(x), w1), b1))
        logits = ad.matmul(h, w2)
        picked = ad.gather(ad.log_softmax(logits), targets)
        tape.backward(ad.reduce_sum(ad.mul(picked, ad.constant(coeff))))

    eps = 1e-6
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        grad = p.grad.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = loss_value()
            flat[i] = keep - eps
            down = loss_value()
            flat[i] = keep
            fd = (up - down) / (2 * eps)
            denom = max(1e-8, abs(fd), abs(grad[i]))
            worst = max(worst, abs(fd - grad[i]) / denom)
    ok = bool(worst < 1e-6)
    return ok, f"max relative error {worst:.2e} over {sum(p.size for p in params)} entries"


def _small_network(rng: RngStream) -> Network:
    body = ClassificationBody(input_dim=4, hidden=8, rng=rng)
    return Network("classification", body, hidden=8, classes=3, rng=rng)


def _suite_zero_init_identity() -> Tuple[bool, str]:
    """Freshly attached chains must not move eval-mode predictions at any
    depth, for either variant, bit for bit."""
    checked = 0
    for variant, extra in ((VARIANT_DROPOUT, {"dropout_rates": (0.3, 0.5)}),
                           (VARIANT_DEPTH, {"blocks_per_module": 2})):
        rng = RngStream(7, f"verify/identity/{variant}")
        network = _small_network(rng)
        config = ChainConfig(replicas=2, variant=variant, hidden=8, classes=3, **extra)
        model = attach_chain(network, config, rng)
        features = np.asarray(rng.normal((16, 4)))
        targets = np.asarray(rng.integers(3, (16,)), dtype=np.int64)
        for ep in model.forward_streams(features, targets, None, training=False):
            base = ep.logits[0].data
            for t, lg in enumerate(ep.logits[1:], start=1):
                checked += 1
                if not np.array_equal(base, lg.data):
                    return False, (f"{variant}: depth-{t} logits differ from "
                                   f"depth 0 on a fresh chain")
    return True, f"2 variants, {checked} depth comparisons exact"


def _suite_param_accounting() -> Tuple[bool, str]:
    """The closed-form added-parameter count must match what attaching a
    chain actually adds, and stripping must give the base count back."""
    big = added_param_count(
        ChainConfig(replicas=3, variant=VARIANT_DROPOUT, hidden=768, classes=10,
                    dropout_rates=(0.2, 0.2, 0.2)))
    if big != 3 * (768 * 768 + 768):
        return False, f"dropout-variant formula at width 768: {big}"
    for variant, extra in ((VARIANT_DROPOUT, {"dropout_rates": (0.2, 0.2)}),
                           (VARIANT_DEPTH, {"blocks_per_module": 3})):
        rng = RngStream(11, f"verify/params/{variant}")
        network = _small_network(rng)
        n_base = network.param_count()
        config = ChainConfig(replicas=2, variant=variant, hidden=8, classes=3, **extra)
        model = attach_chain(network, config, rng)
        budget = model.budget()
        if budget.n_temporary != added_param_count(config):
            return False, (f"{variant}: chain holds {budget.n_temporary} params, "
                           f"formula says {added_param_count(config)}")
        if budget.n_total != n_base + budget.n_temporary:
            return False, f"{variant}: budget total is not base + temporary"
        if strip_chain(model).param_count() != n_base:
            return False, f"{variant}: stripping changed the base parameter count"
    return True, f"width-768 worked example {big:,} plus 2 live geometries"


def run_suites(max_horizon: int = DEFAULT_MAX_HORIZON,
               step_fn: StepFn = step_observed,
               collect_records: bool = True
               ) -> Tuple[bool, List[SuiteResult], VerifyReport]:
    """The full battery behind the verify subcommand: trajectory suites,
    a gradient check, the zero-init identity, and parameter accounting."""
    suites: List[SuiteResult] = []

    t0 = time.perf_counter()
    tt_failures = check_truth_table(step_fn)
    suites.append(SuiteResult(
        "transition truth table", not tt_failures,
        f"{len(TRUTH_TABLE)} transitions" if not tt_failures else "; ".join(tt_failures),
        time.perf_counter() - t0))

    t0 = time.perf_counter()
    report = run_verify(max_horizon, step_fn=step_fn, collect_records=collect_records)
    enum_failures = [f for f in report.failures if f not in tt_failures]
    detail = (f"{report.patterns_checked} patterns, "
              f"{report.divergence_count} mask/reward divergences")
    if enum_failures:
        detail = "; ".join(enum_failures[:3])
    suites.append(SuiteResult(f"pattern enumeration (T<={max_horizon})",
                              not enum_failures, detail,
                              time.perf_counter() - t0))

    for name, fn in (("autodiff gradient check", _suite_gradient_check),
                     ("zero-init identity", _suite_zero_init_identity),
                     ("parameter accounting", _suite_param_accounting)):
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:
            ok, detail = False, f"raised {exc!r}"
        suites.append(SuiteResult(name, ok, detail, time.perf_counter() - t0))

    return all(s.ok for s in suites), suites, report


def render_suite_table(suites: List[SuiteResult]) -> str:
    name_w = max(len(s.name) for s in suites)
    lines = [f"{'suite'.ljust(name_w)}  result  detail"]
    lines.append(f"{'-' * name_w}  ------  ------")
    for s in suites:
        verdict = "pass" if s.ok else "FAIL"
        lines.append(f"{s.name.ljust(name_w)}  {verdict.ljust(6)}  "
                     f"{s.detail} ({s.seconds:.2f}s)")
    return "\n".join(lines) + "\n"
