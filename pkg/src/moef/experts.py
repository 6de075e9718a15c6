"""Shared embedding layer and the per-expert user/item feature towers.

Each expert runs multi-head self-attention over the embedded behavior
sequence, pools the result twice (attended by the user embedding and by the
target-item embedding), and feeds the pooled vectors together with the raw
embeddings through MainNet. BiasNet sees only the user and context
embeddings. The expert output is MainNet's output followed by BiasNet's.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from moef import numerics as nm
from moef.attention import multi_head_attention
from moef.errors import ConfigError, DimensionError, SchemaError
from moef.numerics import Linear, MLP, Module, parameter

ID_BUCKETS = 1 << 17
SMALL_BUCKETS = 1 << 10
ID_WIDTH = 32
OTHER_WIDTH = 8


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    buckets: int
    width: int

    def __post_init__(self):
        if self.buckets < 2 or self.width < 1:
            raise ConfigError(f"feature {self.name!r}: need >= 2 buckets and a positive width")


def _specs(entries) -> tuple:
    return tuple(e if isinstance(e, FeatureSpec) else FeatureSpec(**e) for e in entries)


DEFAULT_USER = (
    FeatureSpec("user_id", ID_BUCKETS, OTHER_WIDTH),
    FeatureSpec("gender", SMALL_BUCKETS, OTHER_WIDTH),
    FeatureSpec("age_bucket", SMALL_BUCKETS, OTHER_WIDTH),
    FeatureSpec("city_tier", SMALL_BUCKETS, OTHER_WIDTH),
    FeatureSpec("purchase_power", SMALL_BUCKETS, OTHER_WIDTH),
    FeatureSpec("activity_level", SMALL_BUCKETS, OTHER_WIDTH),
    FeatureSpec("member_level", SMALL_BUCKETS, OTHER_WIDTH),
    FeatureSpec("device", SMALL_BUCKETS, OTHER_WIDTH),
)
DEFAULT_ITEM = (
    FeatureSpec("item_id", ID_BUCKETS, ID_WIDTH),
    FeatureSpec("category_id", ID_BUCKETS, ID_WIDTH),
    FeatureSpec("brand_id", ID_BUCKETS, ID_WIDTH),
)
DEFAULT_CONTEXT = (
    FeatureSpec("hour_of_day", SMALL_BUCKETS, OTHER_WIDTH),
    FeatureSpec("day_of_week", SMALL_BUCKETS, OTHER_WIDTH),
    FeatureSpec("position", SMALL_BUCKETS, OTHER_WIDTH),
    FeatureSpec("page", SMALL_BUCKETS, OTHER_WIDTH),
    FeatureSpec("platform", SMALL_BUCKETS, OTHER_WIDTH),
    FeatureSpec("network", SMALL_BUCKETS, OTHER_WIDTH),
    FeatureSpec("channel", SMALL_BUCKETS, OTHER_WIDTH),
    FeatureSpec("is_weekend", SMALL_BUCKETS, OTHER_WIDTH),
)


@dataclass(frozen=True)
class FeatureSchema:
    """Categorical features by group.

    The first user feature is the user id and the item group is always
    (item id, category id, brand id); the behavior sequence reuses the item
    tables for its per-position fields.
    """

    user: tuple = DEFAULT_USER
    item: tuple = DEFAULT_ITEM
    context: tuple = DEFAULT_CONTEXT
    sequence_fields: tuple = ("item_id", "category_id", "brand_id")
    max_sequence_length: int = 50

    def __post_init__(self):
        object.__setattr__(self, "user", _specs(self.user))
        object.__setattr__(self, "item", _specs(self.item))
        object.__setattr__(self, "context", _specs(self.context))
        object.__setattr__(self, "sequence_fields", tuple(self.sequence_fields))
        if not self.user or len(self.item) != 3:
            raise SchemaError("schema needs a user id first and exactly three item features")
        if self.max_sequence_length < 1:
            raise SchemaError("max_sequence_length must be >= 1")
        names = [f.name for f in self.all_features]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate feature names in {names}")
        item_names = [f.name for f in self.item]
        for name in self.sequence_fields:
            if name not in item_names:
                raise SchemaError(f"unknown sequence field {name!r}; must be one of {item_names}")

    @property
    def all_features(self) -> tuple:
        return self.user + self.item + self.context

    def feature(self, name: str) -> FeatureSpec:
        for f in self.all_features:
            if f.name == name:
                return f
        raise SchemaError(f"unknown feature name {name!r}")

    @property
    def user_width(self) -> int:
        return sum(f.width for f in self.user)

    @property
    def item_width(self) -> int:
        return sum(f.width for f in self.item)

    @property
    def context_width(self) -> int:
        return sum(f.width for f in self.context)

    @property
    def sequence_width(self) -> int:
        return sum(self.feature(n).width for n in self.sequence_fields)

    def sequence_columns(self) -> list:
        names = [f.name for f in self.item]
        return [names.index(n) for n in self.sequence_fields]

    def to_dict(self) -> dict:
        as_list = lambda specs: [dict(name=f.name, buckets=f.buckets, width=f.width) for f in specs]
        return dict(
            user=as_list(self.user),
            item=as_list(self.item),
            context=as_list(self.context),
            sequence_fields=list(self.sequence_fields),
            max_sequence_length=self.max_sequence_length,
        )


def hash_bucket(values: np.ndarray, feature_name: str, buckets: int) -> np.ndarray:
    """Stable hash of integer feature values into ``[1, buckets)``; negative (missing) -> 0."""
    values = np.asarray(values, dtype=np.int64)
    salt = np.uint64(zlib.crc32(feature_name.encode("utf-8")))
    with np.errstate(over="ignore"):
        x = values.astype(np.uint64) ^ (salt * np.uint64(0x9E3779B97F4A7C15))
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        x = x ^ (x >> np.uint64(31))
    buckets_out = (x % np.uint64(buckets - 1)).astype(np.int64) + 1
    return np.where(values < 0, 0, buckets_out)


class EmbeddingTables(Module):
    """One table per feature; uniform init in +-sqrt(6 / (1 + width))."""

    def __init__(self, schema: FeatureSchema, rng: np.random.Generator):
        self.tables = {}
        for f in schema.all_features:
            limit = np.sqrt(6.0 / (1 + f.width))
            self.tables[f.name] = parameter(rng.uniform(-limit, limit, (f.buckets, f.width)))


@dataclass
class EmbeddedBatch:
    user: nm.Tensor
    item: nm.Tensor
    context: nm.Tensor
    sequence: nm.Tensor
    sequence_mask: np.ndarray


def _lookup(tables: EmbeddingTables, feat: FeatureSpec, values: np.ndarray) -> nm.Tensor:
    return nm.embedding(tables.tables[feat.name], hash_bucket(values, feat.name, feat.buckets))


def embed(batch, schema: FeatureSchema, tables: EmbeddingTables, pad_to: Optional[int] = None) -> EmbeddedBatch:
    """Embed a columnar batch.

    ``batch`` provides ``user`` (B, n_user), ``item`` (B, 3), ``context``
    (B, n_ctx), ``sequence`` (B, m, 3) and ``sequence_length`` (B,) int arrays.
    The sequence is padded to ``pad_to`` positions (default: the longest
    sequence in the batch, at least one); padded positions are masked and zero.
    """
    for group, specs in (("user", schema.user), ("item", schema.item), ("context", schema.context)):
        cols = getattr(batch, group).shape[1]
        if cols != len(specs):
            raise SchemaError(f"batch has {cols} {group} features, schema declares {len(specs)}")
    lengths = np.minimum(np.asarray(batch.sequence_length), schema.max_sequence_length)
    m = int(pad_to) if pad_to is not None else max(1, int(lengths.max(initial=0)))
    mask = np.arange(m)[None, :] < lengths[:, None]

    def group(specs, values):
        return nm.concat([_lookup(tables, s, values[:, j]) for j, s in enumerate(specs)], axis=-1)

    seq_ids = np.full((len(lengths), m, 3), -1, dtype=np.int64)
    avail = min(m, batch.sequence.shape[1])
    seq_ids[:, :avail] = batch.sequence[:, :avail]
    seq_ids[~mask] = -1
    parts = []
    for col in schema.sequence_columns():
        feat = schema.item[col]
        parts.append(_lookup(tables, feat, seq_ids[:, :, col]))
    sequence = nm.concat(parts, axis=-1) * mask[:, :, None].astype(np.float64)
    return EmbeddedBatch(
        user=group(schema.user, batch.user),
        item=group(schema.item, batch.item),
        context=group(schema.context, batch.context),
        sequence=sequence,
        sequence_mask=mask,
    )


@dataclass(frozen=True)
class ExpertConfig:
    attention_heads: int = 8
    attention_hidden: int = 128
    pooled_hidden: int = 128
    main_sizes: tuple = (480, 256, 128)
    bias_sizes: tuple = (96, 32, 16)

    def __post_init__(self):
        object.__setattr__(self, "main_sizes", tuple(self.main_sizes))
        object.__setattr__(self, "bias_sizes", tuple(self.bias_sizes))
        if self.attention_hidden % self.attention_heads:
            raise ConfigError(
                f"attention hidden size {self.attention_hidden} not divisible by {self.attention_heads} heads"
            )
        if not self.main_sizes or not self.bias_sizes:
            raise ConfigError("MainNet and BiasNet need at least one layer")

    @property
    def output_width(self) -> int:
        return self.main_sizes[-1] + self.bias_sizes[-1]


class PooledAttention(Module):
    """Single-head attention pooling a sequence under one query vector per record."""

    def __init__(self, query_width: int, seq_width: int, hidden: int, rng: np.random.Generator):
        self.query = Linear(query_width, hidden, rng)
        self.key = Linear(seq_width, hidden, rng)
        self.value = Linear(seq_width, hidden, rng)
        self.hidden = hidden


def pooled_attention(query, seq_hat, mask: np.ndarray, params: PooledAttention) -> nm.Tensor:
    """Masked softmax of scaled dot scores, then the weighted sum of projected values.

    Evaluated without projecting every position: ``q . (W_k s + b_k)`` equals
    ``(W_k' q) . s + q . b_k``, and since the weights sum to one (or to zero
    when every position is masked) the value projection can follow the pooling.
    """
    q = params.query(query)
    b, m, width = seq_hat.shape
    h = params.hidden
    q_seq = nm.matmul(q, nm.transpose(params.key.weight))
    scores = nm.reshape(nm.matmul(seq_hat, nm.reshape(q_seq, (b, width, 1))), (b, m))
    scores = (scores + nm.matmul(q, nm.reshape(params.key.bias, (h, 1)))) * (1.0 / np.sqrt(h))
    weights = nm.softmax(scores, axis=-1, mask=mask)
    pooled = nm.reshape(nm.matmul(nm.reshape(weights, (b, 1, m)), seq_hat), (b, width))
    total = nm.reshape(nm.tensor_sum(weights, axis=-1), (b, 1))
    return nm.matmul(pooled, params.value.weight) + total * params.value.bias


class SelfAttention(Module):
    def __init__(self, seq_width: int, hidden: int, heads: int, rng: np.random.Generator):
        self.query = Linear(seq_width, hidden, rng)
        self.key = Linear(seq_width, hidden, rng)
        self.value = Linear(seq_width, hidden, rng)
        self.heads = heads


def seq_self_attention(seq, mask: np.ndarray, params: SelfAttention) -> nm.Tensor:
    """Multi-head self-attention; masked positions are ignored as keys and output zeros."""
    out = multi_head_attention(params.query(seq), params.key(seq), params.value(seq), params.heads, mask)
    return out * mask[:, :, None].astype(np.float64)


class Expert(Module):
    def __init__(self, schema: FeatureSchema, cfg: ExpertConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.self_attention = SelfAttention(schema.sequence_width, cfg.attention_hidden, cfg.attention_heads, rng)
        self.user_attention = PooledAttention(schema.user_width, cfg.attention_hidden, cfg.pooled_hidden, rng)
        self.target_attention = PooledAttention(schema.item_width, cfg.attention_hidden, cfg.pooled_hidden, rng)
        self.main_input_width = 2 * cfg.pooled_hidden + schema.item_width + schema.user_width + schema.context_width
        self.bias_input_width = schema.user_width + schema.context_width
        self.main_net = MLP(self.main_input_width, cfg.main_sizes, rng)
        self.bias_net = MLP(self.bias_input_width, cfg.bias_sizes, rng)

    @property
    def output_width(self) -> int:
        return self.cfg.output_width

    def __call__(self, embedded: EmbeddedBatch) -> nm.Tensor:
        return expert_forward(embedded, self)


def expert_forward(embedded: EmbeddedBatch, expert: Expert) -> nm.Tensor:
    """Feature representation r = MainNet(...) || BiasNet(e_u, e_c)."""
    widths = embedded.user.shape[-1] + embedded.context.shape[-1]
    if widths != expert.bias_input_width:
        raise DimensionError(f"user+context width {widths} != expected {expert.bias_input_width}")
    mask = embedded.sequence_mask
    seq_hat = seq_self_attention(embedded.sequence, mask, expert.self_attention)
    a_user = pooled_attention(embedded.user, seq_hat, mask, expert.user_attention)
    a_item = pooled_attention(embedded.item, seq_hat, mask, expert.target_attention)
    main_in = nm.concat([a_user, a_item, embedded.item, embedded.user, embedded.context], axis=-1)
    main = expert.main_net(main_in)
    bias = expert.bias_net(nm.concat([embedded.user, embedded.context], axis=-1))
    return nm.concat([main, bias], axis=-1)
