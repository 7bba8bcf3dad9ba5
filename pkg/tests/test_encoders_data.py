import numpy as np
import pytest

import oracles
from rdbridge.data import PairedDataset, load_features, pad_tokens, save_features
from rdbridge.encoders import (
    ProjectionHead, StubBlockParams, StubEncoder, pool_tokens, project_common, stub_block_forward, stub_forward,
)
from rdbridge.exceptions import ContractError, ParseError, ShapeError
from rdbridge.harness.synthetic import generate_synthetic
from rdbridge.numerics import Tensor
from rdbridge.params import named_tensors


def _block_dict(p):
    return {name: t.data.tolist() for name, t in named_tensors(p)}


@pytest.fixture
def tiny():
    return generate_synthetic(n_classes=2, pairs_per_class=3, d_model=4, seed=1)


class TestStubEncoder:
    def test_no_blocks_returns_input(self, rng):
        x = rng.normal(size=(2, 3, 5))
        feats = stub_forward(x, StubEncoder.build(5, 0))
        assert len(feats) == 1
        np.testing.assert_array_equal(feats[0].data, x)

    def test_one_output_per_block(self, rng):
        feats = stub_forward(rng.normal(size=(3, 6)), StubEncoder.build(6, 3))
        assert [f.shape for f in feats] == [(3, 6)] * 3

    def test_same_seed_same_weights(self):
        assert StubEncoder.build(6, 2, seed=5).fingerprint() == StubEncoder.build(6, 2, seed=5).fingerprint()
        assert StubEncoder.build(6, 2, seed=5).fingerprint() != StubEncoder.build(6, 2, seed=6).fingerprint()

    def test_params_are_frozen(self):
        assert all(not t.requires_grad for _, t in named_tensors(StubEncoder.build(4, 2).blocks))

    def test_block_matches_scalar_oracle(self, rng):
        p = StubBlockParams.init(rng, 4, ffn_mult=2)
        for name, t in named_tensors(p):
            t.data[...] = rng.normal(size=t.shape) * 0.4
        X = rng.normal(size=(3, 4))
        np.testing.assert_allclose(stub_block_forward(X, p).data, oracles.stub_block(X.tolist(), _block_dict(p)),
                                   atol=1e-12)

    def test_key_mask_matches_truncation(self, rng):
        p = StubEncoder.build(4, 1, seed=2).blocks[0]
        X = rng.normal(size=(1, 5, 4))
        mask = np.array([[1, 1, 0, 0, 0]], bool)
        np.testing.assert_allclose(stub_block_forward(X, p, mask).data[0, :2], stub_block_forward(X[0, :2], p).data,
                                   atol=1e-13)

    def test_width_mismatch(self, rng):
        with pytest.raises(ShapeError):
            stub_forward(rng.normal(size=(2, 3)), StubEncoder.build(4, 1))


class TestProjection:
    def test_unit_norm(self, rng):
        head = ProjectionHead.init(rng, 5, 3)
        out = project_common(rng.normal(size=(4, 6, 5)), head).data
        np.testing.assert_allclose(np.linalg.norm(out, axis=-1), 1.0, atol=1e-12)

    def test_two_token_hand_value(self):
        head = ProjectionHead(Tensor(np.eye(2)), Tensor(np.zeros(2)))
        out = project_common(np.array([[3.0, 0.0], [3.0, 8.0]]), head).data
        np.testing.assert_allclose(out, [0.6, 0.8], atol=1e-12)

    def test_masked_mean_ignores_padding(self):
        feat = np.array([[[1.0, 2.0], [3.0, 4.0], [99.0, 99.0]]])
        np.testing.assert_allclose(pool_tokens(feat, np.array([[1, 1, 0]])).data, [[2.0, 3.0]])

    def test_cls_pooling(self):
        feat = np.array([[5.0, 1.0], [0.0, 7.0]])
        np.testing.assert_array_equal(pool_tokens(feat, pooling="cls").data, [5.0, 1.0])

    def test_unknown_pooling(self):
        with pytest.raises(ValueError):
            pool_tokens(np.ones((2, 2)), pooling="max")


class TestPadTokens:
    def test_shapes_and_mask(self):
        out, mask = pad_tokens([np.ones((2, 3)), np.ones((4, 3))])
        assert out.shape == (2, 4, 3)
        np.testing.assert_array_equal(mask.sum(1), [2, 4])
        assert out[0, 2:].sum() == 0

    def test_empty(self):
        with pytest.raises(ContractError):
            pad_tokens([])


class TestDataset:
    def test_subset_keeps_captions(self, tiny):
        sub = tiny.subset([1, 3])
        assert sub.n_images == 2
        assert set(sub.caption_image.tolist()) == set(tiny.image_ids[[1, 3]].tolist())
        sub.validate()

    def test_caption_labels_follow_image(self, tiny):
        np.testing.assert_array_equal(tiny.caption_labels(), tiny.labels[tiny.caption_image_positions()])

    def test_image_without_caption(self, tiny):
        bad = PairedDataset(tiny.image_ids, tiny.labels, tiny.image_tokens, tiny.caption_ids[:-5],
                            tiny.caption_image[:-5], tiny.caption_sentences[:-5], tiny.caption_tokens[:-5],
                            tiny.n_classes, tiny.d_model)
        with pytest.raises(ContractError, match="no captions"):
            bad.validate()


class TestFeatureFile:
    def test_round_trip_is_exact(self, tiny, tmp_path):
        path = tmp_path / "d.feat"
        save_features(tiny, path)
        assert load_features(path).equals(tiny)

    def test_minimal_file(self, tmp_path):
        path = tmp_path / "m.feat"
        path.write_text("RDBFEAT v1 1 1 2 1\nIMG 7 0 1 0.5 -1.0\nCAP 3 7 1 1 2.0 0.25\n")
        ds = load_features(path)
        assert ds.n_images == 1 and ds.n_captions == 1
        np.testing.assert_array_equal(ds.caption_tokens[0], [[2.0, 0.25]])
        assert ds.caption_sentences == [(1,)]

    def test_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / "c.feat"
        path.write_text("# made by hand\n\nRDBFEAT v1 1 1 1 1\n# image\nIMG 0 0 1 1.0\n\nCAP 0 0 1 1 2.0\n")
        assert load_features(path).n_captions == 1

    @pytest.mark.parametrize("text,line,match", [
        ("", 1, "missing header"),
        ("RDBFEAT v2 1 1 1 1\n", 1, "version"),
        ("FOO v1 1 1 1 1\n", 1, "header"),
        ("RDBFEAT v1 1 1 1 1\nIMG 0 0 1 1.0 2.0\nCAP 0 0 1 1 1.0\n", 2, "expected 1 values"),
        ("RDBFEAT v1 1 1 1 1\nIMG 0 0 1 abc\nCAP 0 0 1 1 1.0\n", 2, "bad float"),
        ("RDBFEAT v1 1 1 1 1\nIMG 0 3 1 1.0\nCAP 0 0 1 1 1.0\n", 2, "label"),
        ("RDBFEAT v1 1 1 1 1\nIMG 0 0 1 1.0\nCAP 0 9 1 1 1.0\n", 3, "missing image id 9"),
        ("RDBFEAT v1 1 1 1 1\nIMG 0 0 1 1.0\nCAP 0 0 1 0\n", 3, "empty sentence"),
        ("RDBFEAT v1 1 1 1 1\nIMG 0 0 1 1.0\nTXT 0 0 1 1 1.0\n", 3, "unknown record"),
        ("RDBFEAT v1 2 1 1 1\nIMG 0 0 1 1.0\nCAP 0 0 1 1 1.0\n", 1, "announces 2 images"),
        ("RDBFEAT v1 2 1 1 1\nIMG 0 0 1 1.0\nIMG 1 0 1 1.0\nCAP 0 0 1 1 1.0\n", 3, "no captions"),
        ("RDBFEAT v1 2 2 1 1\nIMG 0 0 1 1.0\nIMG 0 0 1 1.0\n", 3, "duplicate image"),
    ])
    def test_malformed(self, tmp_path, text, line, match):
        path = tmp_path / "bad.feat"
        path.write_text(text)
        with pytest.raises(ParseError, match=match) as err:
            load_features(path)
        assert err.value.lineno == line
        assert str(err.value).startswith(f"line {line}:")
