"""Temporary replica-module chains.

A chain appends a fixed number of temporary modules to a trained network.
Each module maps the previous hidden representation to a new one of the
same width, and every depth (including depth 0, the unmodified base
representation) is read out through the one shared head, so a single
forward pass yields logits for the whole padded episode.

Two module variants:

* dropout variant: drop the previous representation at a per-module rate,
  then add a zero-initialized linear correction. At initialization, in eval
  mode, every depth reproduces the base logits exactly.
* depth variant: add residual blocks (expand linear, relu, project linear)
  whose projection is zero-initialized, so attaching the chain never
  changes predictions until training moves the weights.

Modules are temporary: stripping returns the base network, whose
predictions equal the chain's depth-0 logits for every input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nets import Linear, Network, Stream
from .rng import RngStream

VARIANT_DROPOUT = "hpo-dropout"
VARIANT_DEPTH = "nas-depth"
VARIANTS = (VARIANT_DROPOUT, VARIANT_DEPTH)


class StripError(RuntimeError):
    """Raised when asked to strip a model that has no replica chain."""


@dataclass(frozen=True)
class ChainConfig:
    """Geometry of a replica chain: how many modules, which variant, and
    the hidden/class widths they must match."""

    replicas: int
    variant: str
    hidden: int
    classes: int
    dropout_rates: Tuple[float, ...] = ()
    blocks_per_module: int = 1

    def __post_init__(self):
        if self.replicas < 0:
            raise ValueError(f"replica count must be >= 0, got {self.replicas}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant '{self.variant}' (expected one of {VARIANTS})")
        if self.hidden < 1 or self.classes < 1:
            raise ValueError("hidden width and class count must be positive")
        if self.variant == VARIANT_DROPOUT:
            rates = tuple(float(r) for r in self.dropout_rates)
            if len(rates) != self.replicas:
                raise ValueError(
                    f"need {self.replicas} dropout rates, got {len(rates)}")
            if any(not (0.0 <= r < 1.0) for r in rates):
                raise ValueError(f"dropout rates must lie in [0, 1), got {rates}")
            object.__setattr__(self, "dropout_rates", rates)
        else:
            if self.blocks_per_module < 1:
                raise ValueError(
                    f"blocks per module must be >= 1, got {self.blocks_per_module}")


def cumulative_rate(config: ChainConfig, depth: int) -> float:
    """Effective dropout rate after chaining the first `depth` modules:
    1 - prod(1 - p_k)."""
    if config.variant != VARIANT_DROPOUT:
        raise ValueError("cumulative rate is defined for the dropout variant only")
    if not (1 <= depth <= config.replicas):
        raise ValueError(f"depth must lie in 1..{config.replicas}, got {depth}")
    keep = 1.0
    for rate in config.dropout_rates[:depth]:
        keep *= 1.0 - rate
    return 1.0 - keep


class DropoutReplica:
    """Dropout at a fixed rate followed by a zero-initialized additive
    linear correction."""

    def __init__(self, index: int, rate: float, hidden: int):
        self.index = index
        self.rate = rate
        self.linear = Linear(f"replica.{index}.linear", hidden, hidden, "zeros")

    def forward(self, h: Tensor, rng: Optional[RngStream], training: bool) -> Tensor:
        if training and rng is None:
            raise ValueError("training-mode dropout needs an rng stream")
        dropped = ad.dropout(h, self.rate, rng, training)
        return ad.add(dropped, self.linear(dropped))

    def named_params(self):
        return self.linear.named_params()


class DepthReplica:
    """A stack of residual blocks; each block's projection linear starts at
    zero so the whole module is the identity until trained."""

    def __init__(self, index: int, blocks: int, hidden: int, rng: RngStream):
        self.index = index
        self.blocks: List[Tuple[Linear, Linear]] = []
        for j in range(blocks):
            expand = Linear(f"replica.{index}.block{j}.expand", hidden, hidden, "he", rng)
            project = Linear(f"replica.{index}.block{j}.project", hidden, hidden, "zeros")
            self.blocks.append((expand, project))

    def forward(self, h: Tensor, rng: Optional[RngStream], training: bool) -> Tensor:
        for expand, project in self.blocks:
            h = ad.add(h, project(ad.relu(expand(h))))
        return h

    def named_params(self):
        params = []
        for expand, project in self.blocks:
            params.extend(expand.named_params())
            params.extend(project.named_params())
        return params


@dataclass
class ParamBudget:
    """Base, temporary, and total trainable-value counts."""

    n_base: int
    n_temporary: int

    @property
    def n_total(self) -> int:
        return self.n_base + self.n_temporary

    def __post_init__(self):
        if self.n_base < 0 or self.n_temporary < 0:
            raise ValueError("parameter counts must be non-negative")


def added_param_count(config: ChainConfig) -> int:
    """Count the temporary parameters a chain adds: replicas * (hidden^2 +
    hidden) for the dropout variant, twice that per block for the depth
    variant."""
    per_linear = config.hidden * config.hidden + config.hidden
    if config.variant == VARIANT_DROPOUT:
        return config.replicas * per_linear
    return config.replicas * config.blocks_per_module * 2 * per_linear


def param_budget(config: ChainConfig, n_base: int) -> ParamBudget:
    """Budget (base, temporary, total) for attaching `config` to a base
    network of `n_base` trainable values."""
    return ParamBudget(n_base=n_base, n_temporary=added_param_count(config))


@dataclass
class StreamEpisode:
    """Per-depth forward results for one stream: hidden states h_0..h_R and
    logits for each depth through the shared head."""

    tag: str
    targets: np.ndarray
    hidden_states: List[Tensor]
    logits: List[Tensor]


class ReplicaChain:
    """The ordered temporary modules, plus the forward rule that reads every
    depth out through one shared head instance."""

    def __init__(self, config: ChainConfig, rng: Optional[RngStream] = None):
        self.config = config
        self.modules = []
        for i in range(1, config.replicas + 1):
            if config.variant == VARIANT_DROPOUT:
                self.modules.append(
                    DropoutReplica(i, config.dropout_rates[i - 1], config.hidden))
            else:
                if rng is None:
                    raise ValueError("depth-variant chain construction needs an rng stream")
                self.modules.append(
                    DepthReplica(i, config.blocks_per_module, config.hidden, rng))

    def forward(self, h0: Tensor, head: Linear, rng: Optional[RngStream],
                training: bool) -> Tuple[List[Tensor], List[Tensor]]:
        if h0.data.ndim != 2 or h0.shape[1] != self.config.hidden:
            raise ValueError(
                f"chain expects (units, {self.config.hidden}) representations, got {h0.shape}")
        hidden_states = [h0]
        logits = [head(h0)]
        for module in self.modules:
            h = module.forward(hidden_states[-1], rng, training)
            hidden_states.append(h)
            logits.append(head(h))
        return hidden_states, logits

    def named_params(self):
        params = []
        for module in self.modules:
            params.extend(module.named_params())
        return params

    def param_count(self) -> int:
        return int(sum(p.size for _, p in self.named_params()))


class ChainedModel:
    """A base network with an attached replica chain. The head parameter
    instance is the network's own; replica depths reuse it."""

    def __init__(self, network: Network, chain: ReplicaChain):
        if chain.config.hidden != network.hidden:
            raise ValueError(
                f"chain hidden width {chain.config.hidden} does not match "
                f"network width {network.hidden}")
        if chain.config.classes != network.classes:
            raise ValueError(
                f"chain class count {chain.config.classes} does not match "
                f"network classes {network.classes}")
        self.network = network
        self.chain = chain

    @property
    def config(self) -> ChainConfig:
        return self.chain.config

    def forward_streams(self, features: np.ndarray, targets: np.ndarray,
                        rng: Optional[RngStream], training: bool) -> List[StreamEpisode]:
        episodes = []
        for stream in self.network.streams(features, targets):
            hidden_states, logits = self.chain.forward(
                stream.hidden, self.network.head, rng, training)
            episodes.append(StreamEpisode(stream.tag, stream.targets, hidden_states, logits))
        return episodes

    def named_params(self) -> List[Tuple[str, Tensor]]:
        return self.network.named_params() + self.chain.named_params()

    def params(self) -> List[Tensor]:
        return [p for _, p in self.named_params()]

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params()))

    def budget(self) -> ParamBudget:
        return ParamBudget(n_base=self.network.param_count(),
                           n_temporary=self.chain.param_count())


def attach_chain(network: Network, config: ChainConfig,
                 rng: Optional[RngStream] = None) -> ChainedModel:
    """Build a fresh chain matching the network's geometry and attach it."""
    return ChainedModel(network, ReplicaChain(config, rng))


def strip_chain(model) -> Network:
    """Remove the replica chain, returning the base network (which shares
    the same parameter tensors, so its predictions equal the chained
    model's depth-0 logits for every input). Stripping a bare network is
    rejected."""
    if isinstance(model, ChainedModel):
        return model.network
    raise StripError("model has no replica chain to strip")
