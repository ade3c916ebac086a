#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "carft/matrix.hpp"
#include "carft/prompts.hpp"

namespace carft {

using TokenId = std::uint32_t;

// Trainable image encoder h_theta: 2-layer tanh MLP, output L2-normalized.
struct ImageEncoderParams {
    Matrix w1;   // d_hidden x d_in
    Vector b1;   // d_hidden
    Matrix w2;   // embed_dim x d_hidden
    Vector b2;   // embed_dim

    std::size_t input_dim() const { return w1.cols(); }
    std::size_t hidden_dim() const { return w1.rows(); }
    std::size_t embed_dim() const { return w2.rows(); }
};

// Frozen-after-pretraining text encoder g_phi: token embeddings, mean pool,
// linear projection, output L2-normalized.
struct TextEncoderParams {
    Matrix embed;  // vocab x embed_dim
    Matrix proj;   // embed_dim x embed_dim

    std::size_t vocab_size() const { return embed.rows(); }
    std::size_t embed_dim() const { return proj.rows(); }
};

struct ClassifierHead {
    Matrix weight;               // embed_dim x K
    std::optional<Vector> bias;  // K, off by default

    std::size_t n_classes() const { return weight.cols(); }
};

// Everything a run needs to resume or evaluate: image/text encoders, logit
// scale tau, optional classifier head, and string metadata (seed/step/method).
struct Checkpoint {
    ImageEncoderParams image;
    TextEncoderParams text;
    double logit_scale = 1.0;
    std::optional<ClassifierHead> head;
    std::map<std::string, std::string> meta;
};

// Intermediate activations kept for the backward pass.
struct ImageTrace {
    Vector pre_activation;   // w1 x + b1
    Vector hidden;           // tanh(pre_activation)
    Vector pre_norm;         // w2 hidden + b2
    double norm = 0.0;       // ||pre_norm||
    Vector embedding;        // pre_norm / norm, unit
};

ImageTrace encode_image_trace(const ImageEncoderParams& params, std::span<const double> x);

// Unit-norm visual embedding h_theta(x). Throws NumericError on degenerate
// pre-normalization output or dimension mismatch.
Vector encode_image(const ImageEncoderParams& params, std::span<const double> x);

struct TextTrace {
    Vector pooled;      // mean of token embeddings
    Vector pre_norm;    // proj * pooled
    double norm = 0.0;
    Vector embedding;   // unit
};

TextTrace encode_text_trace(const TextEncoderParams& params, std::span<const TokenId> tokens);
Vector encode_text(const TextEncoderParams& params, std::span<const TokenId> tokens);

// tau * W^T h for a D x C weight matrix and unit feature h. The single
// scoring path shared by zero-shot, head and context logits.
Vector cosine_scores(const Matrix& weights, std::span<const double> feature, double tau);

// tau * W_cls^T h_theta(x); argmax is the zero-shot prediction.
Vector zero_shot_logits(const ImageEncoderParams& params, const Matrix& w_cls, double tau,
                        std::span<const double> x);

// tau * W_f^T h_theta(x) (+ bias when the head has one).
Vector head_logits(const ImageEncoderParams& params, const ClassifierHead& head, double tau,
                   std::span<const double> x);

// softmax(tau * W_ctx^T h(x)) -- the context distribution of Eqs. (3)-(4).
Vector context_distribution(const ImageEncoderParams& params, const Matrix& w_ctx, double tau,
                            std::span<const double> x);

// Encode the full prompt cross product through the frozen text encoder.
// tokenize(prompt) must yield the token sequence for one prompt string.
template <typename TokenizeFn>
PromptWeightTensor encode_prompt_set(const TextEncoderParams& text,
                                     const std::vector<PromptTemplate>& templates,
                                     const ClassNameSet& classes, TokenizeFn&& tokenize) {
    const auto prompts = build_prompt_set(templates, classes);
    PromptWeightTensor w(text.embed_dim(), templates.size(), classes.size());
    std::size_t idx = 0;
    for (std::size_t i = 0; i < templates.size(); ++i) {
        for (std::size_t j = 0; j < classes.size(); ++j, ++idx) {
            const std::vector<TokenId> tokens = tokenize(prompts[idx]);
            const Vector e = encode_text(text, tokens);
            double* col = w.column(i, j);
            for (std::size_t d = 0; d < e.size(); ++d) col[d] = e[d];
        }
    }
    w.validate();
    return w;
}

// --- checkpoint serialization -----------------------------------------------
//
// Binary wire format, little-endian:
//   magic   "CARFTCKPT\n"
//   u32     version (currently 1)
//   u32     tensor count
//   per tensor:
//     u32   name length, then UTF-8 name
//     u64   rows, u64 cols
//     f64   rows*cols values (IEEE-754)
//   trailing metadata block:
//     u32   name length, then "__meta"
//     u64   byte length, then "key=value\n" lines (keys sorted)

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over a tensor's dimensions and raw value bytes.
std::uint64_t tensor_checksum(const Matrix& m);
// Combined checksum of the frozen text encoder (phi).
std::uint64_t text_encoder_checksum(const TextEncoderParams& text);
// Checksum of all tensors in the checkpoint (metadata excluded).
std::uint64_t checkpoint_checksum(const Checkpoint& ckpt);

}  // namespace carft
