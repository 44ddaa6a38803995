import numpy as np
import pytest

from helpers import GPT5, GPT_OSS
from turnroute.encoding import (
    HashingProvider,
    ModelEncoderParams,
    count_whitespace_tokens,
    embed_history,
    encode_model,
    hash_embed,
    init_model_encoder,
    joint_features,
    serialize_history,
)
from turnroute.exceptions import DataError, HistoryOverBudgetError
from turnroute.pool import ModelDescriptor
from turnroute.trajectory import Turn


def _turn(t, action="a b", obs="o"):
    return Turn(t, "m", "raw", action, obs, 1, 1, 0.0)


# Task block "TASK:\ndo it\n" = 3 whitespace tokens; each turn block
# "TURN t:\nACTION: a b\nOBS: o\n" = 7 tokens.
TASK = "do it"
TURNS = [_turn(0), _turn(1), _turn(2)]


def test_serialize_empty_context():
    history = serialize_history(TASK, [], 100)
    assert history.text == "TASK:\ndo it\n"
    assert history.token_count == 3


def test_serialize_keeps_everything_when_it_fits():
    history = serialize_history(TASK, TURNS, 24)
    assert history.token_count == 24
    assert "TURN 0:" in history.text and "TURN 2:" in history.text


def test_serialize_drops_oldest_whole_pairs():
    history = serialize_history(TASK, TURNS, 17)
    assert "TURN 0:" not in history.text
    assert "TURN 1:" in history.text and "TURN 2:" in history.text
    assert history.token_count == 17

    tighter = serialize_history(TASK, TURNS, 16)
    assert "TURN 1:" not in tighter.text
    assert "TURN 2:" in tighter.text


def test_serialize_task_block_never_truncated():
    with pytest.raises(HistoryOverBudgetError):
        serialize_history("one two three four", [], 2)


def test_serialize_monotone_in_budget():
    previous_turns: set[str] = set()
    for budget in range(3, 30):
        history = serialize_history(TASK, TURNS, budget)
        retained = {f"TURN {t}:" for t in range(3) if f"TURN {t}:" in history.text}
        assert previous_turns <= retained
        previous_turns = retained


def test_serialize_template_shape():
    history = serialize_history(TASK, [_turn(0, action="open door", obs="it opens")], 100)
    assert history.text == "TASK:\ndo it\nTURN 0:\nACTION: open door\nOBS: it opens\n"


def test_hash_embed_empty_is_zero():
    assert np.allclose(hash_embed(""), 0.0)
    assert np.linalg.norm(hash_embed("")) == 0.0


def test_hash_embed_unit_norm():
    for text in ("a", "b", "hello world", "Δ commands 商"):
        assert np.linalg.norm(hash_embed(text)) == pytest.approx(1.0, abs=1e-6)


def test_hash_embed_distinguishes_short_texts():
    assert not np.array_equal(hash_embed("a"), hash_embed("b"))


def test_hash_embed_deterministic():
    assert np.array_equal(hash_embed("same text"), hash_embed("same text"))


def test_hash_embed_permutation_differs():
    assert not np.array_equal(hash_embed("abcdef"), hash_embed("fedcba"))


def test_hash_embed_dim():
    assert hash_embed("x", dim=256).shape == (256,)


def test_hashing_provider_contract():
    provider = HashingProvider()
    matrix = provider.embed(["a", "a", "b"])
    assert matrix.shape == (3, 1024)
    assert np.array_equal(matrix[0], matrix[1])
    assert provider.count(["one two  three", ""]) == [3, 0]
    assert count_whitespace_tokens(["a\nb\tc"]) == [3]


def test_embed_history_checks_dimension():
    class BadProvider:
        dim = 8

        def embed(self, texts):
            return np.zeros((len(texts), 4))

    from turnroute.encoding import HistoryText

    with pytest.raises(DataError, match="dimension"):
        embed_history(BadProvider(), HistoryText("x", 1))


def test_encode_model_zero_params_zero_output():
    params = ModelEncoderParams(
        w_attr=np.zeros((32, 8)),
        b_attr=np.zeros(32),
        residuals={"gpt-5": np.zeros(16)},
        w_proj=np.zeros((64, 48)),
        b_proj=np.zeros(64),
    )
    assert np.allclose(encode_model(params, GPT5), 0.0)


def test_encode_model_hand_computed_toy():
    descriptor = ModelDescriptor("toy", 1000, 2020, 12, 1.0, 1.0, False)
    # attrs = [0, 0.1, 0, 0, log10(2), 0.5, 0, 0]
    w_attr = np.zeros((2, 8))
    w_attr[0, 5] = 1.0
    w_attr[1, 5] = -1.0
    params = ModelEncoderParams(
        w_attr=w_attr,
        b_attr=np.zeros(2),
        residuals={"toy": np.array([2.0])},
        w_proj=np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 2.0]]),
        b_proj=np.array([0.5, -1.0]),
    )
    # hidden = [0.5, 0]; combined = [0.5, 0, 2]; rows: 0.5+2+0.5, 0+4-1
    assert np.allclose(encode_model(params, descriptor), [3.0, 3.0], atol=1e-15)


def test_encode_model_unknown_id():
    rng = np.random.default_rng(0)
    params = init_model_encoder(["gpt-5"], rng)
    with pytest.raises(KeyError):
        encode_model(params, GPT_OSS)


def test_encode_model_output_dim_and_determinism():
    rng = np.random.default_rng(0)
    params = init_model_encoder(["gpt-5", "gpt-oss-120b"], rng)
    za = encode_model(params, GPT5)
    assert za.shape == (64,)
    assert np.array_equal(za, encode_model(params, GPT5))


def test_joint_features_concatenation():
    z_x = np.arange(1024, dtype=float)
    z_a = -np.arange(64, dtype=float)
    joint = joint_features(z_x, z_a)
    assert joint.shape == (1088,)
    assert np.array_equal(joint[:1024], z_x)
    assert np.array_equal(joint[1024:], z_a)


def test_joint_features_rejects_matrices():
    with pytest.raises(ValueError):
        joint_features(np.zeros((2, 3)), np.zeros(4))
