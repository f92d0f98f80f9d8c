"""The detection network.

A window of parsed messages is split into per-component subsequences
(empty ones included, so the component set is fixed). Window and
subsequences get semantic+temporal feature embeddings, which a shared
2-layer LSTM turns into sequence embeddings. Every ordered subsequence
pair gets a learned (0,1) correlation weight; those weights form the
adjacency of a directed graph over components, two GCN layers propagate
subsequence embeddings across it, and softmax attention with an EMA-
smoothed weight vector fuses them. The fused embedding concatenated with
the window embedding feeds the next-template classifier.

Ablation switches: ic_off pins all correlation weights to 1, lstm_off
replaces sequence encoding with the mean feature embedding (downstream
widths then follow the feature width), sem_off / time_off drop a feature
family and give its embedding budget to the other.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import PAD_COMPONENT
from .errors import ConfigError
from .features import SemanticIndex, temporal_features
from .parser import ParsedMessage
from . import tensor as tz
from .tensor import Parameter, Tensor

DEFAULT_GAMMA = 0.9


@dataclass(frozen=True)
class ModelConfig:
    num_templates: int
    components: tuple[str, ...]
    embed_dim: int = 64  # feature embedding width d
    hidden: int = 128  # sequence embedding width
    semantic_dim: int = 768
    alpha_emb: float = 0.8
    dropout: float = 0.1
    gamma: float = DEFAULT_GAMMA
    ic_off: bool = False
    lstm_off: bool = False
    sem_off: bool = False
    time_off: bool = False

    def __post_init__(self):
        if self.num_templates < 1:
            raise ConfigError("model needs at least one template class")
        if not self.components:
            raise ConfigError("model needs a non-empty component set")
        if len(set(self.components)) != len(self.components):
            raise ConfigError("component names must be unique")
        if not 0.0 < self.alpha_emb < 1.0:
            raise ConfigError(f"alpha_emb must be in (0, 1), got {self.alpha_emb}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.sem_off and self.time_off:
            raise ConfigError("cannot disable both semantic and temporal features")
        if not self.sem_off and not self.time_off:
            if self.d_sem == 0 or self.d_tim == 0:
                raise ConfigError(
                    f"alpha_emb={self.alpha_emb} with embed_dim={self.embed_dim} "
                    f"collapses one feature embedding to width 0"
                )

    @property
    def d_sem(self) -> int:
        if self.sem_off:
            return 0
        if self.time_off:
            return self.embed_dim
        return round(self.alpha_emb * self.embed_dim)

    @property
    def d_tim(self) -> int:
        return self.embed_dim - self.d_sem

    @property
    def seq_dim(self) -> int:
        """Width of sequence embeddings; the mean-pooling ablation keeps the feature width."""
        return self.embed_dim if self.lstm_off else self.hidden

    @property
    def num_components(self) -> int:
        return len(self.components)

    def to_dict(self) -> dict:
        return {
            "num_templates": self.num_templates,
            "components": list(self.components),
            "embed_dim": self.embed_dim,
            "hidden": self.hidden,
            "semantic_dim": self.semantic_dim,
            "alpha_emb": self.alpha_emb,
            "dropout": self.dropout,
            "gamma": self.gamma,
            "ic_off": self.ic_off,
            "lstm_off": self.lstm_off,
            "sem_off": self.sem_off,
            "time_off": self.time_off,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["components"] = tuple(d["components"])
        return cls(**d)


@dataclass
class AttentionState:
    """Per-component attention weights smoothed across training iterations."""

    beta: np.ndarray
    iteration: int = 0

    @classmethod
    def fresh(cls, num_components: int) -> "AttentionState":
        return cls(beta=np.full(num_components, 1.0 / num_components), iteration=0)

    def copy(self) -> "AttentionState":
        return AttentionState(beta=self.beta.copy(), iteration=self.iteration)

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "iteration": self.iteration}

    @classmethod
    def from_dict(cls, d: dict) -> "AttentionState":
        return cls(beta=np.asarray(d["beta"], dtype=np.float64), iteration=int(d["iteration"]))


@dataclass
class SubsequenceSet:
    components: tuple[str, ...]
    by_component: dict[str, list[ParsedMessage]]
    unknown_components: tuple[str, ...] = ()

    def ordered(self) -> list[list[ParsedMessage]]:
        return [self.by_component[c] for c in self.components]


def extract_subsequences(window: Sequence[ParsedMessage], components: Sequence[str]) -> SubsequenceSet:
    """Group a window by component, preserving order; absent components get
    empty lists. Components outside the known set are dropped from grouping
    and surfaced in unknown_components; padding is skipped silently."""
    known = tuple(components)
    by_component: dict[str, list[ParsedMessage]] = {c: [] for c in known}
    unknown: list[str] = []
    for m in window:
        if m.component in by_component:
            by_component[m.component].append(m)
        elif m.component != PAD_COMPONENT and m.component not in unknown:
            unknown.append(m.component)
    return SubsequenceSet(components=known, by_component=by_component, unknown_components=tuple(unknown))


@dataclass
class ForwardResult:
    probs: Tensor  # (1, num_templates), graph-attached
    beta_tilde: np.ndarray  # (N_c,), raw attention before smoothing
    beta_used: np.ndarray  # (N_c,), weights actually applied
    classifier_input: np.ndarray  # (1, 2*seq_dim)
    logits: np.ndarray  # (1, num_templates)
    unknown_components: tuple[str, ...]


class CSCLogModel:
    """Parameters plus the forward computation; optimization lives in train."""

    def __init__(self, config: ModelConfig, index: SemanticIndex, seed: int = 0):
        if index.dimensionality != config.semantic_dim:
            raise ConfigError(
                f"semantic index dimensionality {index.dimensionality} "
                f"!= config semantic_dim {config.semantic_dim}"
            )
        self.config = config
        self.index = index
        self.params: dict[str, Parameter] = {}
        self._init_parameters(np.random.default_rng(seed))

    # -- parameter construction (fixed order, so seeding is reproducible) ----

    def _add(self, name: str, array: np.ndarray) -> Parameter:
        p = Parameter(name, array)
        self.params[name] = p
        return p

    def _init_parameters(self, rng: np.random.Generator) -> None:
        cfg = self.config
        s = cfg.seq_dim
        if cfg.d_sem:
            self._add("phi1.W", tz.xavier_uniform((cfg.semantic_dim, cfg.d_sem), rng))
            self._add("phi1.b", np.zeros((1, cfg.d_sem)))
        if cfg.d_tim:
            self._add("phi2.W", tz.xavier_uniform((1, cfg.d_tim), rng))
            self._add("phi2.b", np.zeros((1, cfg.d_tim)))
        if not cfg.lstm_off:
            for layer in range(2):
                in_dim = cfg.embed_dim if layer == 0 else cfg.hidden
                self._add(f"lstm{layer}.Wx", tz.xavier_uniform((in_dim, 4 * cfg.hidden), rng))
                self._add(f"lstm{layer}.Wh", tz.xavier_uniform((cfg.hidden, 4 * cfg.hidden), rng))
                self._add(f"lstm{layer}.b", np.zeros((1, 4 * cfg.hidden)))
        if not cfg.ic_off:
            self._add("phi3.W", tz.xavier_uniform((2 * s, 2 * s), rng))
            self._add("phi3.b", np.zeros((1, 2 * s)))
            self._add("conv.k", tz.xavier_uniform((2 * s, 1), rng))
            self._add("conv.b", np.zeros((1, 1)))
        self._add("gcn1.W", tz.xavier_uniform((s, s), rng))
        self._add("gcn2.W", tz.xavier_uniform((s, s), rng))
        self._add("u_att", tz.xavier_uniform((s, 1), rng))
        self._add("phi_out.W", tz.xavier_uniform((2 * s, cfg.num_templates), rng))
        self._add("phi_out.b", np.zeros((1, cfg.num_templates)))

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def fresh_state(self) -> AttentionState:
        return AttentionState.fresh(self.config.num_components)

    # -- forward pieces -------------------------------------------------------

    def feature_embed(self, messages: Sequence[ParsedMessage], training: bool, rng) -> Tensor:
        """Concat(phi1(semantic), phi2(temporal)) -> (N, embed_dim)."""
        cfg = self.config
        parts = []
        if cfg.d_sem:
            V = Tensor(self.index.matrix([m.template_id for m in messages]))
            parts.append(
                tz.mlp_apply(
                    [(self.params["phi1.W"], self.params["phi1.b"], "relu")],
                    V, dropout_rate=cfg.dropout, training=training, rng=rng,
                )
            )
        if cfg.d_tim:
            t = Tensor(temporal_features([m.timestamp for m in messages]))
            parts.append(
                tz.mlp_apply(
                    [(self.params["phi2.W"], self.params["phi2.b"], "relu")],
                    t, dropout_rate=cfg.dropout, training=training, rng=rng,
                )
            )
        return parts[0] if len(parts) == 1 else tz.concat(parts, axis=1)

    def encode_sequence(self, X: Tensor) -> Tensor:
        """Sequence embedding (1, seq_dim); zero vector for empty input."""
        cfg = self.config
        if cfg.lstm_off:
            n = X.data.shape[0]
            if n == 0:
                return Tensor(np.zeros((1, cfg.embed_dim)))
            return tz.mul(tz.sum_axis(X, axis=0), Tensor(1.0 / n))
        cells = [
            {
                "Wx": self.params[f"lstm{layer}.Wx"],
                "Wh": self.params[f"lstm{layer}.Wh"],
                "b": self.params[f"lstm{layer}.b"],
            }
            for layer in range(2)
        ]
        return tz.lstm_apply(cells, X, hidden=cfg.hidden)

    def encode_all(
        self, window: Sequence[ParsedMessage], subsequences: SubsequenceSet, training: bool, rng
    ) -> tuple[Tensor, Tensor]:
        """Window embedding (1, s) and stacked subsequence embeddings (N_c, s)."""
        x_prime = self.encode_sequence(self.feature_embed(window, training, rng))
        rows = [
            self.encode_sequence(self.feature_embed(msgs, training, rng))
            for msgs in subsequences.ordered()
        ]
        return x_prime, tz.concat(rows, axis=0)

    def correlation_weights(self, X_c: Tensor, training: bool, rng) -> tuple[Tensor, list[tuple[int, int]]]:
        """Learned (0,1) weights for every ordered component pair i != j."""
        n = self.config.num_components
        pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        left = tz.gather_rows(X_c, [i for i, _ in pairs])
        right = tz.gather_rows(X_c, [j for _, j in pairs])
        edges = tz.relu(
            tz.mlp_apply(
                [(self.params["phi3.W"], self.params["phi3.b"], "identity")],
                tz.concat([left, right], axis=1),
                dropout_rate=self.config.dropout, training=training, rng=rng,
            )
        )
        scores = tz.add(tz.matmul(edges, self.params["conv.k"]), self.params["conv.b"])
        return tz.sigmoid(scores), pairs

    def adjacency(self, X_c: Tensor, training: bool, rng) -> Tensor:
        n = self.config.num_components
        if self.config.ic_off:
            return Tensor(np.ones((n, n)) - np.eye(n))
        x_rel, pairs = self.correlation_weights(X_c, training, rng)
        return tz.edge_matrix(x_rel, pairs, n)

    def propagate(self, X_c: Tensor, A: Tensor) -> Tensor:
        h = tz.relu(tz.gcn_layer(self.params["gcn1.W"], X_c, A))
        return tz.relu(tz.gcn_layer(self.params["gcn2.W"], h, A))

    def fuse(self, X_m: Tensor, state: AttentionState) -> tuple[Tensor, np.ndarray, np.ndarray]:
        """Attention-fuse propagated embeddings into (1, s).

        Raw dot-product scores are softmax-normalized, then blended with the
        stored per-component weights (gamma keeps the old share) and
        renormalized. Returns (fused, raw beta, applied beta); state is not
        written here -- the training loop owns updates.
        """
        n = self.config.num_components
        scores = tz.reshape(tz.matmul(X_m, self.params["u_att"]), (1, n))
        beta_tilde = tz.softmax(scores)
        gamma = self.config.gamma
        blend = tz.add(
            tz.mul(beta_tilde, Tensor(1.0 - gamma)),
            Tensor(gamma * state.beta.reshape(1, n)),
        )
        beta = tz.mul(blend, tz.pow_const(tz.sum_axis(blend, axis=1), -1.0))
        x_att = tz.matmul(beta, X_m)
        return x_att, beta_tilde.data.reshape(-1).copy(), beta.data.reshape(-1).copy()

    def predict(self, x_prime: Tensor, x_att: Tensor, training: bool, rng) -> tuple[Tensor, Tensor]:
        cls_in = tz.concat([x_prime, x_att], axis=1)
        cls_in = tz.dropout(cls_in, self.config.dropout, rng, training)
        logits = tz.add(tz.matmul(cls_in, self.params["phi_out.W"]), self.params["phi_out.b"])
        return tz.softmax(logits), logits

    def forward(
        self,
        window: Sequence[ParsedMessage],
        state: AttentionState,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> ForwardResult:
        subsequences = extract_subsequences(window, self.config.components)
        x_prime, X_c = self.encode_all(window, subsequences, training, rng)
        A = self.adjacency(X_c, training, rng)
        X_m = self.propagate(X_c, A)
        x_att, beta_tilde, beta_used = self.fuse(X_m, state)
        cls_in = tz.concat([x_prime, x_att], axis=1)
        probs, logits = self.predict(x_prime, x_att, training, rng)
        return ForwardResult(
            probs=probs,
            beta_tilde=beta_tilde,
            beta_used=beta_used,
            classifier_input=cls_in.data.copy(),
            logits=logits.data.copy(),
            unknown_components=subsequences.unknown_components,
        )


def update_attention_state(state: AttentionState, beta_tildes: Sequence[np.ndarray], gamma: float) -> None:
    """One smoothing step: blend the stored weights toward the batch-mean raw
    attention, renormalize to sum 1, bump the iteration counter."""
    mean = np.mean(np.stack(beta_tildes, axis=0), axis=0)
    blended = gamma * state.beta + (1.0 - gamma) * mean
    state.beta = blended / blended.sum()
    state.iteration += 1
