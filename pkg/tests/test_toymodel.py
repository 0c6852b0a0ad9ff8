import numpy as np
import pytest

from dwi.errors import BadShape, EmptyVocabulary, LabelOutOfRange
from dwi.toymodel import (DECODER_NAMES, ImageEncoder, TextEncoder, TrainConfig, decode,
                          encode_image, encode_text, extract_patches, init_decoder, loss_and_grad,
                          predict_from_features, predict_labels, train_decoder)
from dwi.weightspace import WeightSet


@pytest.fixture(scope="module")
def img_enc():
    return ImageEncoder(seed=0)


@pytest.fixture(scope="module")
def txt_enc():
    return TextEncoder(seed=0)


def test_zero_image_gives_tanh_bias(img_enc):
    feats, pooled = encode_image(img_enc, np.zeros((16, 16, 3)))
    assert feats.shape == (16, 16, 32) and pooled.shape == (32,)
    np.testing.assert_allclose(feats, np.broadcast_to(np.tanh(img_enc.bias), feats.shape), rtol=1e-6)


def test_image_encoder_is_deterministic():
    img = np.random.default_rng(0).random((16, 16, 3))
    a = encode_image(ImageEncoder(seed=3), img)
    b = encode_image(ImageEncoder(seed=3), img)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    c = encode_image(ImageEncoder(seed=4), img)
    assert not np.array_equal(a[0], c[0])


def test_image_features_match_neighbourhood_loop(img_enc):
    img = np.random.default_rng(1).random((6, 7, 3)).astype(np.float32)
    feats, pooled = encode_image(img_enc, img)
    padded = np.zeros((8, 9, 3), dtype=np.float32)
    padded[1:-1, 1:-1] = img
    for y in range(6):
        for x in range(7):
            patch = []
            for dy in range(3):
                for dx in range(3):
                    patch.extend(padded[y + dy, x + dx])
            expected = np.tanh(np.asarray(patch, dtype=np.float64) @ img_enc.projection + img_enc.bias)
            np.testing.assert_allclose(feats[y, x], expected, atol=1e-5)
    np.testing.assert_allclose(pooled, feats.reshape(-1, 32).mean(axis=0), rtol=1e-6)


def test_extract_patches_centre_tap():
    img = np.arange(4 * 5 * 2, dtype=np.float32).reshape(4, 5, 2)
    patches = extract_patches(img)
    centre = patches.reshape(4, 5, 3, 3, 2)[:, :, 1, 1, :]
    np.testing.assert_array_equal(centre, img)


def test_image_encoder_rejects_bad_shapes(img_enc):
    with pytest.raises(BadShape):
        encode_image(img_enc, np.zeros((16, 16)))
    with pytest.raises(BadShape):
        encode_image(img_enc, np.zeros((16, 16, 4)))
    with pytest.raises(BadShape):
        encode_image(img_enc, np.zeros((2, 16, 3)))


def test_encoders_are_frozen(img_enc):
    with pytest.raises(ValueError):
        img_enc.projection[0, 0] = 1.0
    before = img_enc.projection.copy()
    theta = init_decoder()
    feats, _ = encode_image(img_enc, np.random.default_rng(2).random((4, 16, 16, 3))[0])
    emb, _ = encode_text(TextEncoder(), ["a", "b"])
    train_decoder(feats[None], np.zeros((1, 16, 16), dtype=np.int64), emb, theta, TrainConfig(steps=3))
    assert np.array_equal(before, img_enc.projection)


def test_text_embeddings_unit_and_deterministic(txt_enc):
    emb, mean = encode_text(txt_enc, ["background", "disc-red", "rect-blue"])
    np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, rtol=1e-12)
    np.testing.assert_array_equal(emb, encode_text(TextEncoder(seed=0), ["background", "disc-red", "rect-blue"])[0])
    np.testing.assert_allclose(mean, emb.mean(axis=0))
    # the same token maps to the same vector whatever its position
    np.testing.assert_array_equal(encode_text(txt_enc, ["rect-blue", "background"])[0][1], emb[0])
    assert not np.array_equal(TextEncoder(seed=1).token_vector("background"), emb[0])


def test_disjoint_vocabularies_have_dissimilar_means(txt_enc):
    _, a = encode_text(txt_enc, ["background", "disc-red", "rect-blue", "cross-green", "stripe-yellow"])
    _, b = encode_text(txt_enc, ["stripe-lime", "stripe-pink", "disc-gold", "rect-gray"])
    cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    assert cos < 0.5


def test_text_encoder_rejects_empty_vocab(txt_enc):
    with pytest.raises(EmptyVocabulary):
        encode_text(txt_enc, [])
    with pytest.raises(EmptyVocabulary):
        encode_text(txt_enc, ["ok", ""])


def test_init_decoder_layout():
    theta = init_decoder(32, 64, 16, seed=0)
    assert theta.names() == list(DECODER_NAMES)
    assert [theta[n].shape for n in DECODER_NAMES] == [(32, 64), (64,), (64, 16), (16,)]
    assert all(theta[n].dtype == np.float32 for n in DECODER_NAMES)
    assert init_decoder(seed=0) == theta and not init_decoder(seed=1) == theta


def _decode_loop(feat, embeds, theta):
    w1, b1, w2, b2 = (theta[n].astype(np.float64) for n in DECODER_NAMES)
    h = np.array([max(0.0, sum(feat[i] * w1[i, j] for i in range(len(feat))) + b1[j])
                  for j in range(w1.shape[1])])
    c = np.array([sum(h[j] * w2[j, k] for j in range(len(h))) + b2[k] for k in range(w2.shape[1])])
    return np.array([c @ e for e in embeds])


def test_decode_matches_loop_oracle(img_enc, txt_enc):
    rng = np.random.default_rng(3)
    feats, _ = encode_image(img_enc, rng.random((4, 4, 3)))
    emb, _ = encode_text(txt_enc, ["a", "b", "c"])
    theta = init_decoder(seed=5)
    logits = decode(feats, emb, theta)
    assert logits.shape == (4, 4, 3)
    for y, x in [(0, 0), (1, 2), (3, 3)]:
        np.testing.assert_allclose(logits[y, x], _decode_loop(feats[y, x], emb, theta), atol=1e-5)


def test_decode_shape_errors(txt_enc):
    emb, _ = encode_text(txt_enc, ["a", "b"])
    with pytest.raises(BadShape):
        decode(np.zeros((4, 4, 31)), emb, init_decoder())
    with pytest.raises(BadShape):
        decode(np.zeros((4, 4, 32)), np.zeros((2, 15)), init_decoder())


def test_zero_decoder_loss_is_log_k(txt_enc):
    theta = WeightSet.zeros_like(init_decoder())
    emb, _ = encode_text(txt_enc, list("abcde"))
    rng = np.random.default_rng(4)
    loss, grad = loss_and_grad((rng.standard_normal((2, 4, 4, 32)), rng.integers(0, 5, (2, 4, 4))), emb, theta)
    assert abs(loss - np.log(5)) < 1e-12
    assert grad.names() == list(DECODER_NAMES)


def test_layer2_is_linear_in_its_bias(txt_enc):
    emb, _ = encode_text(txt_enc, list("abc"))
    feats = np.random.default_rng(5).standard_normal((3, 32))
    theta = init_decoder()
    shifted = WeightSet({**theta.to_dict(), "layer2.bias": theta["layer2.bias"] + np.float32(1.0)})
    delta = decode(feats, emb, shifted) - decode(feats, emb, theta)
    np.testing.assert_allclose(delta, np.broadcast_to(emb.sum(axis=1), delta.shape), atol=1e-5)


def test_gradient_matches_finite_differences(img_enc, txt_enc):
    rng = np.random.default_rng(6)
    feats = np.stack([encode_image(img_enc, rng.random((6, 6, 3)))[0] for _ in range(2)])
    labels = rng.integers(0, 4, (2, 6, 6))
    emb, _ = encode_text(txt_enc, list("wxyz"))
    theta = init_decoder(seed=2)
    _, grad = loss_and_grad((feats, labels), emb, theta)
    params = theta.to_dict()
    for name in DECODER_NAMES:
        flat_size = params[name].size
        for idx in rng.choice(flat_size, size=min(20, flat_size), replace=False):
            w = params[name].ravel()[idx]
            h = np.float32(1e-5) * max(abs(w), np.float32(1.0))
            plus, minus = w + h, w - h
            vals = []
            for v in (plus, minus):
                p = {k: a.copy() for k, a in params.items()}
                p[name].ravel()[idx] = v
                vals.append(loss_and_grad((feats, labels), emb, WeightSet(p))[0])
            fd = (vals[0] - vals[1]) / (float(plus) - float(minus))
            g = grad[name].ravel()[idx]
            rel = abs(fd - g) / max(abs(fd), abs(g), 1e-6)
            assert rel < 1e-4 or abs(fd - g) < 1e-8, (name, idx, fd, g)


def test_duplicated_batch_gives_same_gradient(txt_enc):
    rng = np.random.default_rng(7)
    feats, labels = rng.standard_normal((2, 4, 4, 32)), rng.integers(0, 3, (2, 4, 4))
    emb, _ = encode_text(txt_enc, list("abc"))
    theta = init_decoder()
    l1, g1 = loss_and_grad((feats, labels), emb, theta)
    l2, g2 = loss_and_grad((np.concatenate([feats, feats]), np.concatenate([labels, labels])), emb, theta)
    assert abs(l1 - l2) < 1e-12
    for n in DECODER_NAMES:
        np.testing.assert_allclose(g1[n], g2[n], rtol=1e-6, atol=1e-9)


def test_labels_out_of_range(txt_enc):
    emb, _ = encode_text(txt_enc, list("ab"))
    with pytest.raises(LabelOutOfRange):
        loss_and_grad((np.zeros((1, 2, 2, 32)), np.full((1, 2, 2), 2)), emb, init_decoder())
    with pytest.raises(LabelOutOfRange):
        loss_and_grad((np.zeros((1, 2, 2, 32)), np.full((1, 2, 2), -1)), emb, init_decoder())
    with pytest.raises(BadShape):
        loss_and_grad((np.zeros((1, 2, 2, 32)), np.zeros((1, 2, 3), dtype=int)), emb, init_decoder())


def test_training_is_deterministic_and_moves_theta(img_enc, txt_enc):
    rng = np.random.default_rng(8)
    feats = rng.standard_normal((10, 4, 4, 32)).astype(np.float32)
    labels = rng.integers(0, 3, (10, 4, 4))
    emb, _ = encode_text(txt_enc, list("abc"))
    theta = init_decoder()
    cfg = TrainConfig(steps=25, batch_size=4, seed=1)
    a = train_decoder(feats, labels, emb, theta, cfg)
    b = train_decoder(feats, labels, emb, theta, cfg)
    assert a == b
    one = train_decoder(feats, labels, emb, theta, TrainConfig(steps=1, batch_size=4))
    assert not one == theta
    l0, _ = loss_and_grad((feats, labels), emb, theta)
    l1, _ = loss_and_grad((feats, labels), emb, a)
    assert l1 < l0


def test_train_config_validation():
    for kw in ({"lr": 0.0}, {"steps": 0}, {"batch_size": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def test_predict_tie_goes_to_lowest_index(txt_enc):
    theta = WeightSet.zeros_like(init_decoder())
    emb, _ = encode_text(txt_enc, list("abc"))
    assert np.all(predict_from_features(np.ones((2, 2, 32)), emb, theta) == 0)


def test_predict_labels_shape(img_enc, txt_enc):
    out = predict_labels(np.zeros((16, 16, 3)), ["a", "b"], init_decoder(), (img_enc, txt_enc))
    assert out.shape == (16, 16) and out.dtype.kind == "i"
