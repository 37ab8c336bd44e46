"""Reference networks for the synthetic task suite.

Every network exposes the same contract: given a batch in the task's
natural layout, it emits one or more *streams*, each a (tag, representation,
flat targets) triple where the representation is a (units, hidden) tensor.
Units are the task's independent reward carriers: whole samples for
classification, pixels for segmentation (twice, via a main and an auxiliary
readout), token positions for language modeling. The replica chain and the
loss operate per stream and sum over streams, which keeps concatenation out
of the primitive set.

The final class readout lives in a separate shared head so that replica
modules can reuse the exact same parameter instance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import RngStream

#: Number of context positions the language-model body reads per prediction.
CONTEXT_KERNEL = 3


class Linear:
    """Dense map with bias. Weight is stored (in_dim, out_dim)."""

    def __init__(self, name: str, in_dim: int, out_dim: int, init: str,
                 rng: Optional[RngStream] = None):
        if in_dim < 1 or out_dim < 1:
            raise ValueError(f"linear '{name}': dimensions must be positive")
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        if init == "zeros":
            w = np.zeros((in_dim, out_dim))
            b = np.zeros(out_dim)
        elif init in ("he", "xavier"):
            if rng is None:
                raise ValueError(f"linear '{name}': random init needs an rng stream")
            scale = np.sqrt((2.0 if init == "he" else 1.0) / in_dim)
            w = rng.normal((in_dim, out_dim)) * scale
            b = np.zeros(out_dim)
        else:
            raise ValueError(f"linear '{name}': unknown init '{init}'")
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(b, requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.bias_add(ad.matmul(x, self.weight), self.bias)

    def named_params(self) -> List[Tuple[str, Tensor]]:
        return [(f"{self.name}.weight", self.weight), (f"{self.name}.bias", self.bias)]


@dataclass
class Stream:
    """One group of reward units: a tag, their (units, hidden)
    representation, and their flat integer targets."""

    tag: str
    hidden: Tensor
    targets: np.ndarray


class ClassificationBody:
    """Two-layer MLP over feature vectors; one stream per batch."""

    def __init__(self, input_dim: int, hidden: int, rng: RngStream):
        self.input_dim = input_dim
        self.hidden = hidden
        self.layer1 = Linear("body.layer1", input_dim, hidden, "he", rng)
        self.layer2 = Linear("body.layer2", hidden, hidden, "he", rng)

    def streams(self, features: np.ndarray, targets: np.ndarray) -> List[Stream]:
        x = Tensor(np.asarray(features, dtype=np.float64))
        if x.data.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"classification features must be (batch, {self.input_dim})")
        h = ad.relu(self.layer2(ad.relu(self.layer1(x))))
        return [Stream("main", h, np.asarray(targets, dtype=np.int64).reshape(-1))]

    def named_params(self):
        return self.layer1.named_params() + self.layer2.named_params()


class SegmentationBody:
    """Per-pixel MLP with a main readout and an independent auxiliary
    readout from the mid-level representation; two streams per batch, so the
    effective unit count is batch * height * width * 2."""

    def __init__(self, feature_dim: int, hidden: int, rng: RngStream):
        self.feature_dim = feature_dim
        self.hidden = hidden
        self.layer1 = Linear("body.layer1", feature_dim, hidden, "he", rng)
        self.main = Linear("body.main", hidden, hidden, "he", rng)
        self.aux = Linear("body.aux", hidden, hidden, "he", rng)

    def streams(self, features: np.ndarray, targets: np.ndarray) -> List[Stream]:
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 4 or feats.shape[-1] != self.feature_dim:
            raise ValueError(
                f"segmentation features must be (batch, height, width, {self.feature_dim})")
        flat = feats.reshape(-1, self.feature_dim)
        tflat = np.asarray(targets, dtype=np.int64).reshape(-1)
        mid = ad.relu(self.layer1(Tensor(flat)))
        h_main = ad.relu(self.main(mid))
        h_aux = ad.relu(self.aux(mid))
        return [Stream("main", h_main, tflat), Stream("aux", h_aux, tflat)]

    def named_params(self):
        return (self.layer1.named_params() + self.main.named_params()
                + self.aux.named_params())


class LanguageModelBody:
    """Embedding plus a windowed MLP: each position's representation is the
    sum of per-offset linear maps of the embeddings of its last
    CONTEXT_KERNEL tokens (positions before the sequence start read a
    dedicated padding row). One stream with batch * context_len units."""

    def __init__(self, vocab: int, hidden: int, rng: RngStream):
        self.vocab = vocab
        self.hidden = hidden
        self.pad_id = vocab
        table = rng.normal((vocab + 1, hidden)) * np.sqrt(1.0 / hidden)
        self.table = Tensor(table, requires_grad=True)
        scale = np.sqrt(2.0 / hidden)
        self.offset_weights = [
            Tensor(rng.normal((hidden, hidden)) * scale, requires_grad=True)
            for _ in range(CONTEXT_KERNEL)
        ]
        self.input_bias = Tensor(np.zeros(hidden), requires_grad=True)
        self.layer2 = Linear("body.layer2", hidden, hidden, "he", rng)

    def streams(self, features: np.ndarray, targets: np.ndarray) -> List[Stream]:
        tokens = np.asarray(features, dtype=np.int64)
        if tokens.ndim != 2:
            raise ValueError("language-model features must be (batch, context_len) token ids")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab):
            raise ValueError(f"token ids must lie in [0, {self.vocab})")
        n, length = tokens.shape
        z: Optional[Tensor] = None
        for k, weight in enumerate(self.offset_weights):
            shifted = np.full((n, length), self.pad_id, dtype=np.int64)
            if k < length:
                shifted[:, k:] = tokens[:, : length - k]
            emb = ad.embedding(self.table, shifted.reshape(-1))
            term = ad.matmul(emb, weight)
            z = term if z is None else ad.add(z, term)
        z = ad.bias_add(z, self.input_bias)
        h = ad.relu(self.layer2(ad.relu(z)))
        return [Stream("main", h, np.asarray(targets, dtype=np.int64).reshape(-1))]

    def named_params(self):
        params = [("body.embed.table", self.table)]
        for k, weight in enumerate(self.offset_weights):
            params.append((f"body.context{k}.weight", weight))
        params.append(("body.input_bias", self.input_bias))
        params.extend(self.layer2.named_params())
        return params


class Network:
    """A task body plus the shared class-readout head."""

    def __init__(self, kind: str, body, hidden: int, classes: int, rng: RngStream):
        self.kind = kind
        self.body = body
        self.hidden = hidden
        self.classes = classes
        self.head = Linear("head", hidden, classes, "xavier", rng)

    def streams(self, features: np.ndarray, targets: np.ndarray) -> List[Stream]:
        return self.body.streams(features, targets)

    def head_logits(self, h: Tensor) -> Tensor:
        return self.head(h)

    def named_params(self) -> List[Tuple[str, Tensor]]:
        return list(self.body.named_params()) + self.head.named_params()

    def params(self) -> List[Tensor]:
        return [p for _, p in self.named_params()]

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params()))
