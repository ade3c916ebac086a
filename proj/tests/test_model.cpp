#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "carft/kernels.hpp"
#include "carft/model.hpp"
#include "carft/numerics.hpp"
#include "carft/rng.hpp"

using namespace carft;
namespace fs = std::filesystem;

namespace {

ImageEncoderParams random_image_params(std::size_t d_in, std::size_t d_hidden,
                                       std::size_t d_embed, std::uint64_t seed) {
    Rng rng(seed);
    ImageEncoderParams p;
    p.w1 = Matrix(d_hidden, d_in);
    for (double& v : p.w1.values()) v = rng.normal(0.0, 0.4);
    p.b1.resize(d_hidden);
    for (double& v : p.b1) v = rng.normal(0.0, 0.1);
    p.w2 = Matrix(d_embed, d_hidden);
    for (double& v : p.w2.values()) v = rng.normal(0.0, 0.4);
    p.b2.resize(d_embed);
    for (double& v : p.b2) v = rng.normal(0.0, 0.1);
    return p;
}

TextEncoderParams random_text_params(std::size_t vocab, std::size_t d_embed, std::uint64_t seed) {
    Rng rng(seed);
    TextEncoderParams p;
    p.embed = Matrix(vocab, d_embed);
    for (double& v : p.embed.values()) v = rng.normal(0.0, 1.0);
    p.proj = Matrix(d_embed, d_embed);
    for (double& v : p.proj.values()) v = rng.normal(0.0, 0.3);
    return p;
}

Checkpoint random_checkpoint(std::uint64_t seed, bool with_head = true, bool with_bias = false) {
    Checkpoint c;
    c.image = random_image_params(6, 10, 4, seed);
    c.text = random_text_params(12, 4, seed + 1);
    Rng rng(seed + 2);
    c.logit_scale = 1.0 + 20.0 * rng.uniform();
    if (with_head) {
        ClassifierHead head;
        head.weight = Matrix(4, 5);
        for (double& v : head.weight.values()) v = rng.normal();
        if (with_bias) {
            head.bias = Vector(5);
            for (double& v : *head.bias) v = rng.normal();
        }
        c.head = std::move(head);
    }
    c.meta["seed"] = std::to_string(seed);
    c.meta["method"] = "test";
    return c;
}

Vector random_input(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Vector x(n);
    for (double& v : x) v = rng.normal();
    return x;
}

bool checkpoints_equal(const Checkpoint& a, const Checkpoint& b) {
    if (!(a.image.w1 == b.image.w1) || a.image.b1 != b.image.b1 ||
        !(a.image.w2 == b.image.w2) || a.image.b2 != b.image.b2)
        return false;
    if (!(a.text.embed == b.text.embed) || !(a.text.proj == b.text.proj)) return false;
    if (a.logit_scale != b.logit_scale) return false;
    if (a.head.has_value() != b.head.has_value()) return false;
    if (a.head) {
        if (!(a.head->weight == b.head->weight)) return false;
        if (a.head->bias.has_value() != b.head->bias.has_value()) return false;
        if (a.head->bias && *a.head->bias != *b.head->bias) return false;
    }
    return a.meta == b.meta;
}

}  // namespace

TEST_CASE("encode_image returns unit vectors deterministically") {
    const auto p = random_image_params(6, 10, 4, 5);
    const Vector x = random_input(6, 6);
    const Vector z1 = encode_image(p, x);
    const Vector z2 = encode_image(p, x);
    CHECK(z1 == z2);
    CHECK(std::abs(std::sqrt(kernels::dot(z1.data(), z1.data(), z1.size())) - 1.0) <= 1e-9);
}

TEST_CASE("encode_image rejects zero weights and wrong dimension") {
    ImageEncoderParams zero;
    zero.w1 = Matrix(10, 6);
    zero.b1.assign(10, 0.0);
    zero.w2 = Matrix(4, 10);
    zero.b2.assign(4, 0.0);
    const Vector x = random_input(6, 7);
    CHECK_THROWS_AS(encode_image(zero, x), NumericError);

    const auto p = random_image_params(6, 10, 4, 8);
    CHECK_THROWS_AS(encode_image(p, random_input(5, 9)), NumericError);
}

TEST_CASE("encode_text pools tokens order-invariantly") {
    const auto p = random_text_params(12, 4, 10);
    const std::vector<TokenId> tokens = {3, 7, 1};
    const std::vector<TokenId> permuted = {7, 1, 3};
    CHECK(encode_text(p, tokens) == encode_text(p, permuted));
}

TEST_CASE("encode_text of a single token is the normalized projection") {
    const auto p = random_text_params(12, 4, 11);
    const std::vector<TokenId> tokens = {5};
    const Vector t = encode_text(p, tokens);
    Vector expect(4);
    kernels::matvec(p.proj.data(), p.embed.row(5), expect.data(), 4, 4);
    l2_normalize(expect);
    for (std::size_t d = 0; d < 4; ++d)
        CHECK(t[d] == doctest::Approx(expect[d]).epsilon(1e-12));
}

TEST_CASE("zero_shot_logits picks the aligned class") {
    const auto p = random_image_params(6, 10, 4, 12);
    const Vector x = random_input(6, 13);
    const Vector h = encode_image(p, x);
    Matrix w_cls(4, 3);
    // Column 0 aligned with h; columns 1, 2 orthogonal-ish.
    for (std::size_t d = 0; d < 4; ++d) w_cls(d, 0) = h[d];
    w_cls(0, 1) = -h[1];
    w_cls(1, 1) = h[0];
    w_cls(2, 2) = -h[3];
    w_cls(3, 2) = h[2];
    const Vector logits = zero_shot_logits(p, w_cls, 10.0, x);
    CHECK(logits[0] > logits[1]);
    CHECK(logits[0] > logits[2]);
    CHECK(logits[0] == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("zero_shot_logits scale with tau but argmax is invariant") {
    const auto p = random_image_params(6, 10, 4, 14);
    const Vector x = random_input(6, 15);
    Matrix w_cls(4, 3);
    Rng rng(16);
    for (double& v : w_cls.values()) v = rng.normal();
    const Vector a = zero_shot_logits(p, w_cls, 2.0, x);
    const Vector b = zero_shot_logits(p, w_cls, 4.0, x);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(b[i] == doctest::Approx(2.0 * a[i]).epsilon(1e-12));
}

TEST_CASE("equal class columns give uniform logits") {
    const auto p = random_image_params(6, 10, 4, 17);
    const Vector x = random_input(6, 18);
    const Vector h = encode_image(p, x);
    Matrix w_cls(4, 3);
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t d = 0; d < 4; ++d) w_cls(d, j) = h[d] * 0.5;
    const Vector logits = zero_shot_logits(p, w_cls, 7.0, x);
    CHECK(logits[0] == logits[1]);
    CHECK(logits[1] == logits[2]);
}

TEST_CASE("head_logits with W_f = W_cls equals zero_shot_logits") {
    const auto p = random_image_params(6, 10, 4, 19);
    const Vector x = random_input(6, 20);
    Matrix w_cls(4, 5);
    Rng rng(21);
    for (double& v : w_cls.values()) v = rng.normal();
    ClassifierHead head{w_cls, std::nullopt};
    CHECK(head_logits(p, head, 9.0, x) == zero_shot_logits(p, w_cls, 9.0, x));
}

TEST_CASE("zero head weight gives uniform logits") {
    const auto p = random_image_params(6, 10, 4, 22);
    ClassifierHead head{Matrix(4, 3), std::nullopt};
    const Vector logits = head_logits(p, head, 5.0, random_input(6, 23));
    CHECK(logits == Vector(3, 0.0));
}

TEST_CASE("context_distribution sums to one and saturates with tau") {
    const auto p = random_image_params(6, 10, 4, 24);
    const Vector x = random_input(6, 25);
    const Vector h = encode_image(p, x);
    Matrix w_ctx(4, 3);
    // Context 2 aligned with h, others partially opposed.
    for (std::size_t d = 0; d < 4; ++d) {
        w_ctx(d, 2) = h[d];
        w_ctx(d, 0) = -0.5 * h[d];
        w_ctx(d, 1) = -0.25 * h[d];
    }
    const Vector p_small = context_distribution(p, w_ctx, 1.0, x);
    CHECK(std::abs(kernels::sum(p_small.data(), p_small.size()) - 1.0) <= 1e-12);
    const Vector p_large = context_distribution(p, w_ctx, 200.0, x);
    CHECK(p_large[2] > 0.999);
}

TEST_CASE("equal context columns give the uniform distribution") {
    const auto p = random_image_params(6, 10, 4, 26);
    const Vector x = random_input(6, 27);
    const Vector h = encode_image(p, x);
    Matrix w_ctx(4, 4);
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t d = 0; d < 4; ++d) w_ctx(d, j) = h[d];
    const Vector dist = context_distribution(p, w_ctx, 30.0, x);
    for (double v : dist) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip is bit-exact over 100 random models") {
    const fs::path dir = fs::temp_directory_path() / "carft_ckpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "model.ckpt").string();
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Checkpoint a = random_checkpoint(seed, seed % 3 != 0, seed % 5 == 0);
        save_checkpoint(a, path);
        const Checkpoint b = load_checkpoint(path);
        CHECK(checkpoints_equal(a, b));
    }
    fs::remove_all(dir);
}

TEST_CASE("checkpoint loader reports distinct failure modes") {
    const fs::path dir = fs::temp_directory_path() / "carft_ckpt_err";
    fs::create_directories(dir);
    const std::string path = (dir / "model.ckpt").string();
    const Checkpoint good = random_checkpoint(1234);
    save_checkpoint(good, path);

    // Bad magic.
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        bytes[0] = 'X';
        std::ofstream out((dir / "bad_magic.ckpt").string(), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint((dir / "bad_magic.ckpt").string()),
                         doctest::Contains("magic"), DataError);

    // Version mismatch.
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        bytes[10] = 9;  // version field follows the 10-byte magic
        std::ofstream out((dir / "bad_version.ckpt").string(), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint((dir / "bad_version.ckpt").string()),
                         doctest::Contains("version"), DataError);

    // Truncation.
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        bytes.resize(bytes.size() / 2);
        std::ofstream out((dir / "truncated.ckpt").string(), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint((dir / "truncated.ckpt").string()),
                         doctest::Contains("truncated"), DataError);

    fs::remove_all(dir);
}

TEST_CASE("text encoder checksum is stable and order-sensitive") {
    const auto p = random_text_params(12, 4, 30);
    const auto q = random_text_params(12, 4, 31);
    CHECK(text_encoder_checksum(p) == text_encoder_checksum(p));
    CHECK(text_encoder_checksum(p) != text_encoder_checksum(q));
}

TEST_CASE("identical encoders give exactly zero KL for every input") {
    const auto params = random_image_params(6, 10, 4, 33);
    Matrix w_ctx(4, 3);
    Rng rng(34);
    for (double& v : w_ctx.values()) v = rng.normal();
    // Large tau drives some probabilities deep into underflow territory; the
    // divergence between two identical distributions must still be exactly 0.
    for (double tau : {1.0, 14.0, 100.0}) {
        for (int trial = 0; trial < 50; ++trial) {
            const Vector x = random_input(6, 1000 + trial);
            const Vector p = context_distribution(params, w_ctx, tau, x);
            const Vector q = context_distribution(params, w_ctx, tau, x);
            CHECK(kl_divergence(p, q) == 0.0);
        }
    }
}
