import numpy as np
import pytest

from langvox.numerics import Parameter, ShapeError, SgdMomentum
from langvox.textside import (
    ContextVectors,
    LabelError,
    LabelSet,
    MockTextEncoder,
    PromptTemplate,
    TextBank,
    build_prompts,
    load_frozen_embeddings,
    mock_encode,
    prompt_encode,
    save_frozen_embeddings,
    tokenize,
)


@pytest.fixture
def encoder():
    return MockTextEncoder(out_dim=16, token_dim=12, seed=3)


def test_build_prompts():
    assert build_prompts(LabelSet(["chair"])) == [["point", "cloud", "of", "chair", "."]]
    assert build_prompts(LabelSet(["Dining Table"]), PromptTemplate()) == [["dining", "table"]]
    with pytest.raises(LabelError):
        LabelSet(["sofa", "sofa"])
    with pytest.raises(LabelError):
        LabelSet([])


def test_template_parse_requires_one_slot():
    with pytest.raises(ValueError):
        PromptTemplate.parse("a [cls] and [cls]")
    assert PromptTemplate.parse("a photo of a [cls].").fill("cup") == ["a", "photo", "of", "a", "cup", "."]


def test_tokenize_splits_punctuation():
    assert tokenize("Point-cloud, of X.") == ["point", "-", "cloud", ",", "of", "x", "."]


def test_mock_encode_contracts(encoder):
    tokens = ["point", "cloud", "of", "chair", "."]
    a, b = mock_encode(encoder, tokens), mock_encode(encoder, list(tokens))
    assert a.tobytes() == b.tobytes()
    assert abs(np.linalg.norm(a) - 1) < 1e-9
    assert mock_encode(encoder, tokens[::-1]).tobytes() == a.tobytes()
    rng = np.random.default_rng(0)
    for _ in range(20):
        toks = ["".join(rng.choice(list("abcdefg"), 4)) for _ in range(rng.integers(1, 6))]
        assert abs(np.linalg.norm(mock_encode(encoder, toks)) - 1) < 1e-9
    with pytest.raises(ValueError):
        mock_encode(encoder, [])


def test_prompt_encode_zero_contexts_matches_class_token(encoder):
    labels = LabelSet(["office chair", "wall"])
    ctx = ContextVectors(8, encoder.token_dim)
    ctx.param.data[:] = 0.0
    out = prompt_encode(ctx, labels, encoder)
    for row, name in zip(out.data, labels):
        np.testing.assert_allclose(row, mock_encode(encoder, tokenize(name)), atol=1e-12)
    # pre-normalisation the pooled vector is the class-token mean scaled by k/(L+k)
    toks = tokenize("office chair")
    pooled = np.vstack([np.zeros((8, encoder.token_dim)), encoder.token_rows(toks)]).mean(axis=0)
    np.testing.assert_allclose(pooled, encoder.token_rows(toks).mean(axis=0) * len(toks) / (8 + len(toks)))


def test_prompt_gradient_reaches_only_contexts(encoder):
    labels = LabelSet(["floor", "wall", "chair"])
    bank = TextBank(labels, encoder, mode="learnable", context_length=4, seed=1)
    table_before, proj_before = encoder.table.data.tobytes(), encoder.proj.data.tobytes()
    target = np.random.default_rng(2).standard_normal((3, 16))
    opt = SgdMomentum(bank.parameters() + [encoder.table, encoder.proj], lr=0.5, momentum=0.9)
    ctx_before = bank.contexts.param.data.copy()
    for _ in range(5):
        opt.zero_grad()
        loss = (bank.embeddings() * target).sum()
        loss.backward()
        assert encoder.table.grad is None and encoder.proj.grad is None
        opt.step()
    assert encoder.table.data.tobytes() == table_before and encoder.proj.data.tobytes() == proj_before
    assert not np.array_equal(bank.contexts.param.data, ctx_before)
    np.testing.assert_allclose(np.linalg.norm(bank.embeddings().data, axis=1), 1.0, atol=1e-9)


def test_distinct_classes_give_distinct_rows(encoder):
    labels = LabelSet(["floor", "wall", "chair", "table", "sofa"])
    encoder.check_distinct(labels)
    rows = encoder.encode_prompts(labels).data
    assert len({r.tobytes() for r in rows}) == 5


def test_collision_detected():
    enc = MockTextEncoder(out_dim=4, token_dim=4, table_size=1)
    with pytest.raises(LabelError):
        enc.check_distinct(LabelSet(["a", "b"]))


def test_text_bank_modes(encoder):
    labels = LabelSet(["floor", "wall"])
    hand = TextBank(labels, encoder)
    assert hand.parameters() == [] and hand.embeddings().shape == (2, 16)
    rand = TextBank(labels, encoder, mode="random_learnable", seed=4)
    assert isinstance(rand.parameters()[0], Parameter)
    np.testing.assert_allclose(np.linalg.norm(rand.embeddings().data, axis=1), 1.0)


def test_frozen_embedding_file(tmp_path, encoder):
    labels = LabelSet(["floor", "wall", "chair"])
    rows = encoder.encode_prompts(labels).data
    path = tmp_path / "emb.t4pt"
    save_frozen_embeddings(path, labels, rows)
    assert path.read_bytes()[:4] == b"T4PT"
    first = load_frozen_embeddings(path, labels, dim=16).data
    np.testing.assert_allclose(first, rows, atol=1e-6)
    save_frozen_embeddings(tmp_path / "again.t4pt", labels, first)
    second = load_frozen_embeddings(tmp_path / "again.t4pt", labels).data
    np.testing.assert_allclose(second, first, atol=1e-12)
    # rows come back in label-set order regardless of file order
    swapped = LabelSet(["chair", "floor", "wall"])
    np.testing.assert_array_equal(load_frozen_embeddings(path, swapped).data, first[[2, 0, 1]])
    with pytest.raises(LabelError, match="sofa"):
        load_frozen_embeddings(path, LabelSet(["floor", "sofa"]))
    with pytest.raises(ShapeError):
        load_frozen_embeddings(path, labels, dim=8)
