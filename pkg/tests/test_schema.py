"""Canonical feature table, scale factors, and round-trip fidelity."""

import dataclasses
import json
import zlib

import numpy as np
import pytest

from losscast.schema import (
    CATEGORICAL,
    N_EXTRA_SLOTS,
    NONE_TOKEN,
    NUMERICAL,
    RunConfig,
    Schema,
    SchemaError,
    canonicalize,
    decanonicalize,
)
from conftest import make_config

# the published per-field encoding: (name, kind, scale factor)
EXPECTED_TABLE = [
    ("source", CATEGORICAL, 1.0),
    ("model_size_n", NUMERICAL, 0.01),
    ("num_layers", NUMERICAL, 1.0),
    ("num_heads", NUMERICAL, 1.0),
    ("hidden_dim", NUMERICAL, 0.01),
    ("data_size_d", NUMERICAL, 1.0),
    ("total_steps", NUMERICAL, 0.001),
    ("optimizer", CATEGORICAL, 1.0),
    ("peak_lr", NUMERICAL, 1e4),
    ("lr_schedule", CATEGORICAL, 1.0),
    ("min_lr", NUMERICAL, 1e4),
    ("min_lr_ratio", NUMERICAL, 200.0),
    ("weight_decay", NUMERICAL, 100.0),
    ("batch_size", NUMERICAL, 0.1),
    ("warmup_ratio", NUMERICAL, 0.01),
    ("max_grad_norm", NUMERICAL, 1.0),
    ("beta_pair", CATEGORICAL, 1.0),
    ("epsilon", CATEGORICAL, 1.0),
    ("muon_adam_lr", NUMERICAL, 1e4),
    ("soap_block_size", NUMERICAL, 0.02),
    ("kron_precond_lr", CATEGORICAL, 1.0),
]
for _i in range(N_EXTRA_SLOTS):
    EXPECTED_TABLE.append((f"extra_key_{_i}", CATEGORICAL, 1.0))
    EXPECTED_TABLE.append((f"extra_val_{_i}", NUMERICAL, 1.0))


def token_of(fv, name, schema=None):
    """Map a categorical slot index back to its vocabulary token."""
    schema = schema or Schema.default()
    spec = next(s for s in schema.specs if s.name == name)
    return spec.vocabulary[int(fv.slot(name))]


def test_default_field_table_is_frozen():
    got = [(s.name, s.kind, s.scale_factor) for s in Schema.default().specs]
    assert got == EXPECTED_TABLE


def test_frac_schema_appends_one_numerical_field():
    plain = Schema.default()
    frac = Schema.default(include_frac=True)
    assert len(frac.specs) == len(plain.specs) + 1
    assert frac.specs[-1].name == "frac"
    assert frac.specs[-1].kind == NUMERICAL
    assert frac.schema_hash() != plain.schema_hash()


def test_scale_factor_examples():
    cfg = make_config(peak_lr=9.77e-4, weight_decay=0.1, batch_size=96.0,
                      model_size_n=215.0, total_steps=4000)
    fv = canonicalize(cfg)
    assert fv.slot("peak_lr") == pytest.approx(9.77)
    assert fv.slot("weight_decay") == pytest.approx(10.0)
    assert fv.slot("batch_size") == pytest.approx(9.6)
    assert fv.slot("model_size_n") == pytest.approx(2.15)
    assert fv.slot("total_steps") == pytest.approx(4.0)
    assert fv.slot("min_lr_ratio") == pytest.approx(20.0)   # 0.1 x 200
    assert fv.slot("warmup_ratio") == pytest.approx(1e-4)   # 0.01 x 0.01


def test_epsilon_and_beta_tokens():
    cfg = make_config(epsilon=8.0, beta1=0.9, beta2=0.95)
    fv = canonicalize(cfg)
    assert token_of(fv, "epsilon") == "8"
    assert token_of(fv, "beta_pair") == "0.9,0.95"
    # raw stability constants arrive as their negated base-10 log
    assert RunConfig.epsilon_from_raw(1e-8) == pytest.approx(8.0)
    assert RunConfig.epsilon_from_raw(1e-15) == pytest.approx(15.0)


def test_absent_optionals_encode_as_none_tokens():
    cfg = make_config(beta1=None, beta2=None, epsilon=None, lr_schedule=None,
                      min_lr=None, min_lr_ratio=None)
    fv = canonicalize(cfg)
    assert token_of(fv, "beta_pair") == NONE_TOKEN
    assert token_of(fv, "epsilon") == NONE_TOKEN
    assert token_of(fv, "lr_schedule") == NONE_TOKEN
    assert fv.slot("min_lr") == 0.0
    assert fv.slot("min_lr_ratio") == 0.0


def test_round_trip_is_lossless():
    cfgs = [
        make_config(),
        make_config(optimizer="muon", beta1=None, beta2=None, epsilon=None,
                    optimizer_extras={"adam_lr": 3e-4}),
        make_config(optimizer="soap", optimizer_extras={"block_size": 128.0}),
        make_config(min_lr=1e-4, min_lr_ratio=None),
        make_config(warmup=500.0, warmup_is_ratio=False),
        make_config(max_grad_norm=1.0, weight_decay=0.0),
    ]
    for cfg in cfgs:
        back = decanonicalize(canonicalize(cfg))
        a, b = cfg.resolved(), back.resolved()
        for field in dataclasses.fields(a):
            va, vb = getattr(a, field.name), getattr(b, field.name)
            if isinstance(va, float) and va is not None and vb is not None:
                assert vb == pytest.approx(va, rel=1e-12, abs=1e-15), field.name
            else:
                assert va == vb, field.name


def test_known_optimizer_extras_get_their_own_fields():
    cfg = make_config(optimizer="muon", optimizer_extras={"adam_lr": 3e-4})
    fv = canonicalize(cfg)
    assert fv.slot("muon_adam_lr") == pytest.approx(3.0)  # x 1e4
    assert token_of(fv, "extra_key_0") == NONE_TOKEN


def test_unknown_extras_hash_into_slots():
    cfg = make_config(optimizer="mars",
                      optimizer_extras={"gamma": 0.025, "vr_scale": 2.0})
    fv = canonicalize(cfg)
    keys = [token_of(fv, f"extra_key_{i}") for i in range(N_EXTRA_SLOTS)]
    vals = [fv.slot(f"extra_val_{i}") for i in range(N_EXTRA_SLOTS)]
    # sorted keys fill slots in order; the token is a crc32 bucket label
    for i, (name, value) in enumerate((("gamma", 0.025), ("vr_scale", 2.0))):
        assert keys[i] == f"h{zlib.crc32(name.encode()) % 63}"
        assert vals[i] == pytest.approx(value)
    assert keys[2] == keys[3] == NONE_TOKEN
    # original names are hashed away; values survive under bucket labels
    back = decanonicalize(fv)
    assert sorted(back.optimizer_extras.values()) == pytest.approx([0.025, 2.0])
    assert set(back.optimizer_extras) == {keys[0], keys[1]}


def test_too_many_unknown_extras_rejected():
    extras = {f"knob_{i}": float(i) for i in range(N_EXTRA_SLOTS + 3)}
    cfg = make_config(optimizer="mars", optimizer_extras=extras)
    with pytest.raises(SchemaError):
        canonicalize(cfg)


def test_schema_hash_survives_dump_round_trip():
    s = Schema.default()
    s2 = Schema.from_dump(json.loads(json.dumps(s.dump())))
    assert s2.schema_hash() == s.schema_hash()
    assert [f.name for f in s2.specs] == [f.name for f in s.specs]


def test_vocab_extension_preserves_known_prefix():
    s = Schema.default()
    cfg = make_config(source="weblab", optimizer="adamw")
    with pytest.raises(SchemaError):
        s.canonicalize(cfg)  # unseen source without vocab extension
    s2 = s.with_vocab_from([cfg])
    fv = s2.canonicalize(cfg)
    assert token_of(fv, "source", s2) == "weblab"
    old = next(f for f in s.specs if f.name == "source").vocabulary
    new = next(f for f in s2.specs if f.name == "source").vocabulary
    assert new[: len(old)] == old  # extension appends, never reorders


def test_validation_rejects_bad_configs():
    with pytest.raises(SchemaError):
        make_config(peak_lr=-1e-3).validate()
    with pytest.raises(SchemaError):
        make_config(batch_size=0.0).validate()
    with pytest.raises(SchemaError):
        make_config(beta1=0.9, beta2=None).validate()
    with pytest.raises(SchemaError):
        make_config(warmup=1.5, warmup_is_ratio=True).validate()
    with pytest.raises(SchemaError):
        make_config(min_lr=5e-4, min_lr_ratio=0.9).validate()  # inconsistent pair


def test_warmup_ratio_resolution():
    by_ratio = make_config(warmup=0.05, warmup_is_ratio=True, total_steps=2000)
    by_steps = make_config(warmup=100.0, warmup_is_ratio=False, total_steps=2000)
    assert by_ratio.warmup_ratio == pytest.approx(0.05)
    assert by_steps.warmup_ratio == pytest.approx(0.05)


def test_feature_vector_json_is_deterministic():
    fv = canonicalize(make_config())
    assert fv.to_json() == canonicalize(make_config()).to_json()
