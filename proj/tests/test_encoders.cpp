#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mvcl/encoders.hpp"

using namespace mvcl;

namespace {

double norm2(const Embedding& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double cosine(const Embedding& a, const Embedding& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double max_abs_diff(const Embedding& a, const Embedding& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Raster random_raster(Rng& rng, std::size_t size = 16) {
    Raster img(size, size, 3);
    for (double& v : img.pix) v = rng.uniform();
    return img;
}

}  // namespace

// ---- config validation --------------------------------------------------------

TEST_CASE("encoder config validation") {
    ImageEncoderConfig ic;
    CHECK_NOTHROW(validate(ic));
    ic.image_size = 15;
    CHECK_THROWS_AS(validate(ic), ConfigError);
    ic = ImageEncoderConfig{};
    ic.embed_dim = 0;
    CHECK_THROWS_AS(validate(ic), ConfigError);

    TextEncoderConfig tc;
    CHECK_NOTHROW(validate(tc));
    tc.dropout_p = 1.0;
    CHECK_THROWS_AS(validate(tc), ConfigError);
    tc = TextEncoderConfig{};
    tc.vocab_size = 1;
    CHECK_THROWS_AS(validate(tc), ConfigError);
}

// ---- image encoder --------------------------------------------------------------

TEST_CASE("image encoding is deterministic and unit-norm") {
    ImageEncoder enc(ImageEncoderConfig{}, Rng(3));
    Raster zero(16, 16, 3, 0.0);
    Embedding a = enc.encode(zero);
    Embedding b = enc.encode(zero);
    CHECK(a.size() == 32);
    CHECK(a == b);
    CHECK(std::abs(norm2(a) - 1.0) < 1e-6);

    Rng rng(50);
    for (int i = 0; i < 10; ++i) {
        Raster img = random_raster(rng);
        CHECK(std::abs(norm2(enc.encode(img)) - 1.0) < 1e-6);
    }
}

TEST_CASE("one-pixel change moves the image embedding") {
    ImageEncoder enc(ImageEncoderConfig{}, Rng(3));
    Rng rng(51);
    Raster img = random_raster(rng);
    Raster tweaked = img;
    tweaked.at(7, 7, 1) = tweaked.at(7, 7, 1) < 0.5 ? 1.0 : 0.0;
    Embedding a = enc.encode(img);
    Embedding b = enc.encode(tweaked);
    CHECK(max_abs_diff(a, b) > 0.0);
}

TEST_CASE("image encoder rejects incompatible rasters") {
    ImageEncoder enc(ImageEncoderConfig{}, Rng(3));
    Raster wrong_size(8, 8, 3, 0.0);
    CHECK_THROWS_AS(enc.encode(wrong_size), ShapeError);
    Raster wrong_channels(16, 16, 1, 0.0);
    CHECK_THROWS_AS(enc.encode(wrong_channels), ShapeError);
    CHECK_THROWS_AS(enc.forward({}), ShapeError);
}

TEST_CASE("image encoder init is seed-determined") {
    ImageEncoder a(ImageEncoderConfig{}, Rng(9));
    ImageEncoder b(ImageEncoderConfig{}, Rng(9));
    ImageEncoder c(ImageEncoderConfig{}, Rng(10));
    Rng rng(52);
    Raster img = random_raster(rng);
    CHECK(a.encode(img) == b.encode(img));
    CHECK(max_abs_diff(a.encode(img), c.encode(img)) > 0.0);
}

TEST_CASE("batched image encoding matches single encoding") {
    ImageEncoder enc(ImageEncoderConfig{}, Rng(3));
    Rng rng(53);
    std::vector<Raster> imgs;
    for (int i = 0; i < 3; ++i) imgs.push_back(random_raster(rng));
    NoGradGuard guard;
    Tensor batch = enc.forward({&imgs[0], &imgs[1], &imgs[2]});
    REQUIRE(batch.shape() == Shape{3, 32});
    const double* p = batch.data();
    for (int i = 0; i < 3; ++i) {
        Embedding single = enc.encode(imgs[static_cast<std::size_t>(i)]);
        for (int d = 0; d < 32; ++d)
            CHECK(std::abs(p[i * 32 + d] - single[static_cast<std::size_t>(d)]) < 1e-12);
    }
}

// ---- text encoder ----------------------------------------------------------------

TEST_CASE("zero dropout makes textual views identical") {
    TextEncoderConfig cfg;
    cfg.dropout_p = 0.0;
    TextEncoder enc(cfg, Rng(4));
    TokenSeq toks = {2, 6, 12, 5, 8, 13};
    Rng r1(100), r2(200);
    NoGradGuard guard;
    Tensor a = enc.forward({&toks}, true, r1);
    Tensor b = enc.forward({&toks}, true, r2);
    CHECK(a.to_vector() == b.to_vector());
    CHECK(std::abs(norm2(a.to_vector()) - 1.0) < 1e-6);
}

TEST_CASE("dropout realizes distinct textual views") {
    TextEncoderConfig cfg;
    cfg.dropout_p = 0.1;
    TextEncoder enc(cfg, Rng(4));
    TokenSeq toks = {2, 6, 12, 5, 8, 13};
    Rng root(77);
    Rng r1 = root.child("view", 1), r2 = root.child("view", 2);
    NoGradGuard guard;
    Embedding a = enc.forward({&toks}, true, r1).to_vector();
    Embedding b = enc.forward({&toks}, true, r2).to_vector();
    CHECK(std::abs(norm2(a) - 1.0) < 1e-6);
    CHECK(std::abs(norm2(b) - 1.0) < 1e-6);
    CHECK(cosine(a, b) < 1.0);

    // Same stream state replayed gives the same view.
    Rng r3 = root.child("view", 1);
    Embedding c = enc.forward({&toks}, true, r3).to_vector();
    CHECK(a == c);
}

TEST_CASE("inference-mode text encoding ignores the rng") {
    TextEncoderConfig cfg;
    cfg.dropout_p = 0.3;
    TextEncoder enc(cfg, Rng(4));
    TokenSeq toks = {7, 13, 3};
    Embedding a = enc.encode(toks);
    Embedding b = enc.encode(toks);
    CHECK(a == b);
    NoGradGuard guard;
    Rng odd(999);
    odd.uniform();
    CHECK(enc.forward({&toks}, false, odd).to_vector() == a);
}

TEST_CASE("text encoder validates its inputs") {
    TextEncoder enc(TextEncoderConfig{}, Rng(4));
    TokenSeq empty;
    TokenSeq oov = {2, 16};
    TokenSeq neg = {-1};
    TokenSeq long_seq(13, 2);
    NoGradGuard guard;
    Rng rng(0);
    CHECK_THROWS_AS(enc.forward({&empty}, false, rng), DataError);
    CHECK_THROWS_AS(enc.forward({&oov}, false, rng), DataError);
    CHECK_THROWS_AS(enc.forward({&neg}, false, rng), DataError);
    CHECK_THROWS_AS(enc.forward({&long_seq}, false, rng), DataError);
    CHECK_THROWS_AS(enc.forward({}, false, rng), ShapeError);
}

TEST_CASE("padding does not leak into other rows") {
    TextEncoder enc(TextEncoderConfig{}, Rng(4));
    TokenSeq short_seq = {6, 12};
    TokenSeq long_seq = {2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
    NoGradGuard guard;
    Rng rng(0);
    Embedding alone = enc.encode(short_seq);
    Tensor batch = enc.forward({&short_seq, &long_seq}, false, rng);
    const double* p = batch.data();
    for (int d = 0; d < 32; ++d)
        CHECK(std::abs(p[d] - alone[static_cast<std::size_t>(d)]) < 1e-9);
}

TEST_CASE("distinct tokens produce distinct embeddings") {
    TextEncoder enc(TextEncoderConfig{}, Rng(4));
    Embedding a = enc.encode({6, 12});
    Embedding b = enc.encode({7, 12});
    Embedding c = enc.encode({12, 6});  // order matters via positions
    CHECK(max_abs_diff(a, b) > 0.0);
    CHECK(max_abs_diff(a, c) > 0.0);
}

// ---- gradient flow ----------------------------------------------------------------

TEST_CASE("gradients reach every named parameter") {
    ImageEncoder img_enc(ImageEncoderConfig{}, Rng(5));
    TextEncoderConfig tcfg;
    tcfg.dropout_p = 0.1;
    TextEncoder txt_enc(tcfg, Rng(6));

    Rng rng(54);
    std::vector<Raster> imgs;
    std::vector<TokenSeq> seqs;
    for (int i = 0; i < 4; ++i) {
        imgs.push_back(random_raster(rng));
        TokenSeq s;
        for (int t = 0; t < 5; ++t)
            s.push_back(static_cast<int>(rng.uniform_int(2, 15)));
        seqs.push_back(s);
    }
    std::vector<const Raster*> img_batch;
    std::vector<const TokenSeq*> txt_batch;
    for (int i = 0; i < 4; ++i) {
        img_batch.push_back(&imgs[static_cast<std::size_t>(i)]);
        txt_batch.push_back(&seqs[static_cast<std::size_t>(i)]);
    }

    Rng drop = rng.child("dropout");
    Tensor hi = img_enc.forward(img_batch);
    Tensor ht = txt_enc.forward(txt_batch, true, drop);
    // A scalar that pulls on every pairwise similarity.
    Tensor loss = sum(matmul_nt(hi, ht));
    backward(loss);

    for (auto* enc_params : {&img_enc.params(), &txt_enc.params()})
        for (const auto& name : enc_params->names()) {
            const Tensor& p = enc_params->at(name);
            bool any_nonzero = false;
            for (double g : p.grad_vector())
                if (g != 0.0) any_nonzero = true;
            INFO("param ", name);
            CHECK(any_nonzero);
        }
}
