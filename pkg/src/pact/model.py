"""The peak-aware cross-attention graph transformer and its two baselines.

All three networks share the GraphSAGE spatial encoder.  The main model adds
a station-conditioned cross-attention readout, a temporal transformer over
the three input times, a horizon-query decoder, and a gated dual prediction
head.  The spatio-temporal baseline replaces readout/attention with mean
pooling plus an LSTM; the simple baseline sees only the current forcing
graph.

Parameters live in a flat ``name -> Tensor`` mapping so checkpoints,
optimiser state and gradient checks can address every tensor uniformly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nm
from .data import ConfigError, ForcingGraph, GraphTopology, Sample, StationMeta, topology_from_edges
from .numerics import Tensor

FEATURE_DIM = 5
STATION_DIM = 3
HORIZONS = 6
HISTORY_STEPS = 3

MODEL_KINDS = ("pact", "stgnn", "simple_gnn")


@dataclass
class PactConfig:
    """Sizing knobs; horizon count and history length are fixed by the task."""
    latent_dim: int = 64
    sage_layers: int = 2
    heads: int = 4
    temporal_layers: int = 2
    ff_width: int | None = None     # defaults to 4 * latent_dim
    dropout: float = 0.1
    tail_clip: float = 1.0          # metres
    leaky_slope: float = 0.01
    use_dual_head: bool = True

    def validate(self) -> None:
        if self.latent_dim < 1 or self.latent_dim % self.heads != 0:
            raise ConfigError(f"latent dim {self.latent_dim} not divisible by {self.heads} heads")
        if self.sage_layers < 1:
            raise ConfigError("need at least one GraphSAGE layer")
        if self.temporal_layers < 1:
            raise ConfigError("need at least one temporal encoder layer")
        if self.tail_clip <= 0.0:
            raise ConfigError("tail clip must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout rate {self.dropout} outside [0, 1)")

    @property
    def ff(self) -> int:
        return self.ff_width if self.ff_width is not None else 4 * self.latent_dim


@dataclass
class Model:
    kind: str
    config: PactConfig
    params: dict[str, Tensor]

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def with_param(self, name: str, tensor: Tensor) -> "Model":
        """Shallow copy with one parameter swapped (for gradient probing)."""
        params = dict(self.params)
        params[name] = tensor
        return Model(self.kind, self.config, params)


@dataclass
class Batch:
    """Stacked sample arrays sharing one graph topology."""
    features: np.ndarray      # (B, 3, N, 5)
    station: np.ndarray       # (B, 3)
    targets: np.ndarray       # (B, 6)
    peak_scores: np.ndarray   # (B,)
    topology: GraphTopology


@dataclass
class PactOutputs:
    yhat: Tensor                    # (B, 6)
    base: Tensor                    # (B, 6)
    tail_residual: Tensor | None    # clipped residual, (B, 6)
    gate: Tensor | None             # (B, 1)
    alpha: Tensor | None            # scalar


def build_batch(samples: list[Sample], topology: GraphTopology | None = None) -> Batch:
    if not samples:
        raise ConfigError("cannot build a batch from zero samples")
    if topology is None:
        g = samples[0].graphs[0]
        topology = topology_from_edges(g.node_count, g.edges)
    feats = np.stack([np.stack([g.features for g in s.graphs]) for s in samples])
    station = np.stack([s.station.vector() for s in samples])
    targets = np.stack([s.target for s in samples])
    peaks = np.array([s.peak_score for s in samples])
    return Batch(features=feats, station=station, targets=targets,
                 peak_scores=peaks, topology=topology)


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------

def _uniform(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    limit = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _init_linear(params: dict, rng, name: str, n_in: int, n_out: int) -> None:
    params[f"{name}.weight"] = _uniform(rng, n_in, (n_in, n_out))
    params[f"{name}.bias"] = _zeros((n_out,))


def _init_attention(params: dict, rng, prefix: str, d: int) -> None:
    for proj in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.{proj}"] = _uniform(rng, d, (d, d))
        params[f"{prefix}.{proj[1]}b"] = _zeros((d,))


def _init_sage(params: dict, rng, cfg: PactConfig, in_dim: int) -> None:
    width = in_dim
    for i in range(cfg.sage_layers):
        _init_linear(params, rng, f"sage.{i}", 2 * width, cfg.latent_dim)
        width = cfg.latent_dim


def init_model(kind: str, config: PactConfig, seed: int) -> Model:
    """Fresh parameters: fan-in uniform weights, zero biases and queries."""
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}")
    config.validate()
    rng = np.random.default_rng([seed, 0x90DE1])
    d = config.latent_dim
    p: dict[str, Tensor] = {}
    _init_sage(p, rng, config, FEATURE_DIM)

    if kind == "pact":
        p["readout.base_query"] = _zeros((d,))
        _init_linear(p, rng, "readout.station_mlp.0", STATION_DIM, d)
        _init_linear(p, rng, "readout.station_mlp.1", d, d)
        _init_attention(p, rng, "readout", d)
        p["temporal.embeddings"] = _zeros((HISTORY_STEPS, d))
        for i in range(config.temporal_layers):
            _init_attention(p, rng, f"temporal.{i}", d)
            p[f"temporal.{i}.ln1.gain"] = Tensor(np.ones(d), requires_grad=True)
            p[f"temporal.{i}.ln1.bias"] = _zeros((d,))
            _init_linear(p, rng, f"temporal.{i}.ff.0", d, config.ff)
            _init_linear(p, rng, f"temporal.{i}.ff.1", config.ff, d)
            p[f"temporal.{i}.ln2.gain"] = Tensor(np.ones(d), requires_grad=True)
            p[f"temporal.{i}.ln2.bias"] = _zeros((d,))
        p["decoder.queries"] = _uniform(rng, d, (HORIZONS, d))
        _init_attention(p, rng, "decoder", d)
        for head in ("base", "tail", "gate"):
            _init_linear(p, rng, f"head.{head}.0", d, d)
            _init_linear(p, rng, f"head.{head}.1", d, 1)
        # start with the gate nearly closed so training begins on the base head
        p["head.gate.1.bias"] = Tensor(np.array([-2.0]), requires_grad=True)
        p["head.alpha_logit"] = _zeros(())
    elif kind == "stgnn":
        p["lstm.wx"] = _uniform(rng, d + STATION_DIM, (d + STATION_DIM, 4 * d))
        p["lstm.wh"] = _uniform(rng, d, (d, 4 * d))
        p["lstm.bias"] = _zeros((4 * d,))
        _init_linear(p, rng, "out", d, HORIZONS)
    else:  # simple_gnn
        _init_linear(p, rng, "head.0", d + STATION_DIM, d)
        _init_linear(p, rng, "head.1", d, HORIZONS)
    return Model(kind=kind, config=config, params=p)


# ---------------------------------------------------------------------------
# forward building blocks
# ---------------------------------------------------------------------------

def _linear(x: Tensor, p: dict, name: str) -> Tensor:
    return nm.affine(x, p[f"{name}.weight"], p[f"{name}.bias"])


def _mlp2(x: Tensor, p: dict, prefix: str, slope: float) -> Tensor:
    return _linear(nm.leaky_relu(_linear(x, p, f"{prefix}.0"), slope), p, f"{prefix}.1")


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., T, d) -> (..., heads, T, d/heads)."""
    *lead, t, d = x.shape
    y = x.reshape(tuple(lead) + (t, heads, d // heads))
    axes = list(range(y.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return y.transpose(tuple(axes))


def _merge_heads(x: Tensor) -> Tensor:
    """(..., heads, T, dh) -> (..., T, heads*dh)."""
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    y = x.transpose(tuple(axes))
    *lead, t, h, dh = y.shape
    return y.reshape(tuple(lead) + (t, h * dh))


def _attention_block(q_in: Tensor, kv_in: Tensor, p: dict, prefix: str,
                     heads: int) -> Tensor:
    """Projected multi-head attention of ``q_in`` rows over ``kv_in`` rows."""
    q = _split_heads(nm.affine(q_in, p[f"{prefix}.wq"], p[f"{prefix}.qb"]), heads)
    k = _split_heads(nm.affine(kv_in, p[f"{prefix}.wk"], p[f"{prefix}.kb"]), heads)
    v = _split_heads(nm.affine(kv_in, p[f"{prefix}.wv"], p[f"{prefix}.vb"]), heads)
    mixed = nm.scaled_dot_attention(q, k, v)
    return nm.affine(_merge_heads(mixed), p[f"{prefix}.wo"], p[f"{prefix}.ob"])


def encode_graphs(x: Tensor, p: dict, cfg: PactConfig, topo: GraphTopology,
                  training: bool = False, rng=None) -> Tensor:
    """Shared GraphSAGE stack over (..., N, F) node features."""
    h = x
    for i in range(cfg.sage_layers):
        m = nm.neighbor_mean(h, topo.slots, topo.degree)
        h = nm.leaky_relu(nm.affine(nm.concat_last([h, m]), p[f"sage.{i}.weight"],
                                    p[f"sage.{i}.bias"]), cfg.leaky_slope)
        h = nm.dropout(h, cfg.dropout, rng, training)
    return h


def _station_query(station: Tensor, p: dict, cfg: PactConfig) -> Tensor:
    """base query + metadata encoder output, shape (B, d)."""
    return p["readout.base_query"] + _mlp2(station, p, "readout.station_mlp",
                                           cfg.leaky_slope)


def _readout_tokens(u: Tensor, query: Tensor, p: dict, cfg: PactConfig) -> Tensor:
    """Cross-attend one query per sample over (B, S, N, d) node embeddings."""
    b, s, n, d = u.shape
    heads, dh = cfg.heads, d // cfg.heads
    q = nm.affine(query, p["readout.wq"], p["readout.qb"]).reshape((b, 1, heads, 1, dh))
    k = _split_heads(nm.affine(u, p["readout.wk"], p["readout.kb"]), heads)
    v = _split_heads(nm.affine(u, p["readout.wv"], p["readout.vb"]), heads)
    mixed = nm.scaled_dot_attention(q, k, v)          # (B, S, heads, 1, dh)
    tokens = _merge_heads(mixed).reshape((b, s, d))
    return nm.affine(tokens, p["readout.wo"], p["readout.ob"])


def _temporal_encode(tokens: Tensor, p: dict, cfg: PactConfig,
                     training: bool = False, rng=None) -> Tensor:
    x = tokens + p["temporal.embeddings"]
    for i in range(cfg.temporal_layers):
        pre = f"temporal.{i}"
        attn = _attention_block(x, x, p, pre, cfg.heads)
        attn = nm.dropout(attn, cfg.dropout, rng, training)
        x = nm.layer_norm(x + attn, p[f"{pre}.ln1.gain"], p[f"{pre}.ln1.bias"])
        ff = _linear(nm.relu(_linear(x, p, f"{pre}.ff.0")), p, f"{pre}.ff.1")
        ff = nm.dropout(ff, cfg.dropout, rng, training)
        x = nm.layer_norm(x + ff, p[f"{pre}.ln2.gain"], p[f"{pre}.ln2.bias"])
    return x


def _horizon_contexts(memory: Tensor, p: dict, cfg: PactConfig) -> Tensor:
    """Six learned queries attend over the (B, 3, d) temporal memory."""
    d = cfg.latent_dim
    heads, dh = cfg.heads, d // cfg.heads
    q = nm.affine(p["decoder.queries"], p["decoder.wq"], p["decoder.qb"])
    q = _split_heads(q.reshape((1, HORIZONS, d)), heads)          # (1, h, 6, dh)
    k = _split_heads(nm.affine(memory, p["decoder.wk"], p["decoder.kb"]), heads)
    v = _split_heads(nm.affine(memory, p["decoder.wv"], p["decoder.vb"]), heads)
    mixed = nm.scaled_dot_attention(q, k, v)                      # (B, h, 6, dh)
    return nm.affine(_merge_heads(mixed), p["decoder.wo"], p["decoder.ob"])


def _dual_head(contexts: Tensor, p: dict, cfg: PactConfig) -> PactOutputs:
    b = contexts.shape[0]
    base = _mlp2(contexts, p, "head.base", cfg.leaky_slope).reshape((b, HORIZONS))
    if not cfg.use_dual_head:
        return PactOutputs(yhat=base, base=base, tail_residual=None,
                           gate=None, alpha=None)
    raw = _mlp2(contexts, p, "head.tail", cfg.leaky_slope).reshape((b, HORIZONS))
    clip = cfg.tail_clip
    clipped = clip * nm.tanh(raw * (1.0 / clip))
    pooled = contexts.mean(axis=1)                                 # (B, d)
    gate = nm.sigmoid(_mlp2(pooled, p, "head.gate", cfg.leaky_slope))  # (B, 1)
    alpha = nm.sigmoid(p["head.alpha_logit"])
    yhat = base + gate * alpha * clipped
    return PactOutputs(yhat=yhat, base=base, tail_residual=clipped,
                       gate=gate, alpha=alpha)


# ---------------------------------------------------------------------------
# full forward passes
# ---------------------------------------------------------------------------

def pact_forward(model: Model, batch: Batch, training: bool = False,
                 rng=None) -> PactOutputs:
    cfg, p = model.config, model.params
    u = encode_graphs(Tensor(batch.features), p, cfg, batch.topology, training, rng)
    query = _station_query(Tensor(batch.station), p, cfg)
    tokens = _readout_tokens(u, query, p, cfg)
    memory = _temporal_encode(tokens, p, cfg, training, rng)
    contexts = _horizon_contexts(memory, p, cfg)
    contexts = nm.dropout(contexts, cfg.dropout, rng, training)
    return _dual_head(contexts, p, cfg)


def simple_gnn_forward(model: Model, batch: Batch, training: bool = False,
                       rng=None) -> Tensor:
    """Baseline that sees only the current-time forcing graph."""
    cfg, p = model.config, model.params
    current = Tensor(np.ascontiguousarray(batch.features[:, -1]))
    u = encode_graphs(current, p, cfg, batch.topology, training, rng)
    pooled = u.mean(axis=-2)                                       # (B, d)
    head_in = nm.concat_last([pooled, Tensor(batch.station)])
    return _mlp2(head_in, p, "head", cfg.leaky_slope)


def stgnn_forward(model: Model, batch: Batch, training: bool = False,
                  rng=None) -> Tensor:
    """Pool per-step node embeddings, then run an LSTM over the 3 steps."""
    cfg, p = model.config, model.params
    d = cfg.latent_dim
    b = batch.features.shape[0]
    u = encode_graphs(Tensor(batch.features), p, cfg, batch.topology, training, rng)
    pooled = u.mean(axis=-2)                                       # (B, 3, d)
    station = np.repeat(batch.station[:, None, :], HISTORY_STEPS, axis=1)
    seq = nm.concat_last([pooled, Tensor(station)])                # (B, 3, d+3)

    h = Tensor(np.zeros((b, d)))
    c = Tensor(np.zeros((b, d)))
    for t in range(HISTORY_STEPS):
        x_t = nm.slice_axis(seq, 1, t, t + 1).reshape((b, d + STATION_DIM))
        z = x_t @ p["lstm.wx"] + h @ p["lstm.wh"] + p["lstm.bias"]
        gate_in = nm.sigmoid(nm.slice_axis(z, 1, 0, d))
        gate_forget = nm.sigmoid(nm.slice_axis(z, 1, d, 2 * d))
        candidate = nm.tanh(nm.slice_axis(z, 1, 2 * d, 3 * d))
        gate_out = nm.sigmoid(nm.slice_axis(z, 1, 3 * d, 4 * d))
        c = gate_forget * c + gate_in * candidate
        h = gate_out * nm.tanh(c)
    return _linear(h, p, "out")


def model_forward(model: Model, batch: Batch, training: bool = False,
                  rng=None) -> Tensor:
    """Predicted surge (B, 6) for any of the three model kinds."""
    if model.kind == "pact":
        return pact_forward(model, batch, training, rng).yhat
    if model.kind == "stgnn":
        return stgnn_forward(model, batch, training, rng)
    return simple_gnn_forward(model, batch, training, rng)


def predict(model: Model, batch: Batch) -> np.ndarray:
    """Eval-mode predictions as a plain array (no tape is recorded)."""
    with nm.no_grad():
        return model_forward(model, batch, training=False).data


# ---------------------------------------------------------------------------
# single-sample wrappers (contract-level entry points used by the tests)
# ---------------------------------------------------------------------------

def graphsage_forward(graph: ForcingGraph, model: Model) -> np.ndarray:
    """Node embeddings (N, d) for one forcing graph, eval mode."""
    if graph.features.shape[1] != FEATURE_DIM:
        raise ConfigError(f"expected {FEATURE_DIM}-wide features, got {graph.features.shape}")
    topo = topology_from_edges(graph.node_count, graph.edges)
    return encode_graphs(Tensor(graph.features), model.params, model.config, topo).data


def station_readout(node_embeddings: np.ndarray, station: StationMeta,
                    model: Model) -> np.ndarray:
    """Cross-attention readout of one encoded graph into a station token."""
    u = np.asarray(node_embeddings, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] == 0:
        raise ConfigError(f"node embeddings must be nonempty (N, d), got {u.shape}")
    cfg, p = model.config, model.params
    query = _station_query(Tensor(station.vector().reshape(1, -1)), p, cfg)
    tokens = _readout_tokens(Tensor(u.reshape((1, 1) + u.shape)), query, p, cfg)
    return tokens.data[0, 0]


def temporal_encode(tokens: np.ndarray, model: Model) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.shape != (HISTORY_STEPS, model.config.latent_dim):
        raise ConfigError(f"expected ({HISTORY_STEPS}, d) tokens, got {tokens.shape}")
    out = _temporal_encode(Tensor(tokens[None]), model.params, model.config)
    return out.data[0]


def horizon_decode(memory: np.ndarray, model: Model) -> np.ndarray:
    memory = np.asarray(memory, dtype=np.float64)
    if memory.shape != (HISTORY_STEPS, model.config.latent_dim):
        raise ConfigError(f"expected ({HISTORY_STEPS}, d) memory, got {memory.shape}")
    out = _horizon_contexts(Tensor(memory[None]), model.params, model.config)
    return out.data[0]


def dual_head(contexts: np.ndarray, model: Model
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """(yhat, base, clipped residual, gate) for one sample's contexts."""
    contexts = np.asarray(contexts, dtype=np.float64)
    if contexts.shape != (HORIZONS, model.config.latent_dim):
        raise ConfigError(f"expected ({HORIZONS}, d) contexts, got {contexts.shape}")
    out = _dual_head(Tensor(contexts[None]), model.params, model.config)
    if out.tail_residual is None:
        zeros = np.zeros(HORIZONS)
        return out.yhat.data[0], out.base.data[0], zeros, 0.0
    return (out.yhat.data[0], out.base.data[0], out.tail_residual.data[0],
            float(out.gate.data[0, 0]))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "pact-checkpoint-v1"


def save_checkpoint(path: Path, model: Model, extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "kind": model.kind,
        "config": asdict(model.config),
        "params": {name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
                   for name, t in model.params.items()},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path: Path) -> tuple[Model, dict]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"corrupt checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"unrecognised checkpoint format in {path}")
    config = PactConfig(**doc["config"])
    model = init_model(doc["kind"], config, seed=0)
    stored = doc["params"]
    missing = sorted(set(model.params) - set(stored))
    unexpected = sorted(set(stored) - set(model.params))
    if missing or unexpected:
        raise ConfigError(f"checkpoint parameter names do not match: "
                          f"missing={missing} unexpected={unexpected}")
    for name, tensor in model.params.items():
        entry = stored[name]
        shape = tuple(entry["shape"])
        if shape != tensor.shape:
            raise ConfigError(f"checkpoint shape mismatch for {name}: "
                              f"{shape} vs expected {tensor.shape}")
        payload = np.asarray(entry["data"], dtype=np.float64)
        if payload.size != tensor.data.size:
            raise ConfigError(f"checkpoint payload size mismatch for {name}")
        tensor.data = payload.reshape(shape)
    return model, doc.get("extra", {})
