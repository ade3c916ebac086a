#include "carft/model.hpp"

#include <cmath>

#include "carft/kernels.hpp"
#include "carft/numerics.hpp"

namespace carft {

ImageTrace encode_image_trace(const ImageEncoderParams& params, std::span<const double> x) {
    if (x.size() != params.input_dim())
        throw NumericError("encode_image: input has dimension " + std::to_string(x.size()) +
                           ", expected " + std::to_string(params.input_dim()));
    ImageTrace trace;
    trace.pre_activation.resize(params.hidden_dim());
    kernels::matvec(params.w1.data(), x.data(), trace.pre_activation.data(), params.hidden_dim(),
                    params.input_dim());
    for (std::size_t i = 0; i < trace.pre_activation.size(); ++i)
        trace.pre_activation[i] += params.b1[i];

    trace.hidden.resize(params.hidden_dim());
    for (std::size_t i = 0; i < trace.hidden.size(); ++i)
        trace.hidden[i] = std::tanh(trace.pre_activation[i]);

    trace.pre_norm.resize(params.embed_dim());
    kernels::matvec(params.w2.data(), trace.hidden.data(), trace.pre_norm.data(),
                    params.embed_dim(), params.hidden_dim());
    for (std::size_t i = 0; i < trace.pre_norm.size(); ++i) trace.pre_norm[i] += params.b2[i];

    trace.norm =
        std::sqrt(kernels::dot(trace.pre_norm.data(), trace.pre_norm.data(), params.embed_dim()));
    if (!(trace.norm > kNormEpsilon))
        throw NumericError("encode_image: degenerate feature (norm below epsilon)");
    trace.embedding.resize(params.embed_dim());
    for (std::size_t i = 0; i < trace.embedding.size(); ++i)
        trace.embedding[i] = trace.pre_norm[i] / trace.norm;
    return trace;
}

Vector encode_image(const ImageEncoderParams& params, std::span<const double> x) {
    return encode_image_trace(params, x).embedding;
}

TextTrace encode_text_trace(const TextEncoderParams& params, std::span<const TokenId> tokens) {
    if (tokens.empty()) throw NumericError("encode_text: empty token sequence");
    TextTrace trace;
    trace.pooled.assign(params.embed_dim(), 0.0);
    for (TokenId tok : tokens) {
        if (tok >= params.vocab_size())
            throw NumericError("encode_text: token id " + std::to_string(tok) +
                               " outside vocabulary");
        kernels::axpy(1.0, params.embed.row(tok), trace.pooled.data(), params.embed_dim());
    }
    kernels::scale(trace.pooled.data(), 1.0 / static_cast<double>(tokens.size()),
                   params.embed_dim());

    trace.pre_norm.resize(params.embed_dim());
    kernels::matvec(params.proj.data(), trace.pooled.data(), trace.pre_norm.data(),
                    params.embed_dim(), params.embed_dim());
    trace.norm =
        std::sqrt(kernels::dot(trace.pre_norm.data(), trace.pre_norm.data(), params.embed_dim()));
    if (!(trace.norm > kNormEpsilon))
        throw NumericError("encode_text: degenerate feature (norm below epsilon)");
    trace.embedding.resize(params.embed_dim());
    for (std::size_t i = 0; i < trace.embedding.size(); ++i)
        trace.embedding[i] = trace.pre_norm[i] / trace.norm;
    return trace;
}

Vector encode_text(const TextEncoderParams& params, std::span<const TokenId> tokens) {
    return encode_text_trace(params, tokens).embedding;
}

Vector cosine_scores(const Matrix& weights, std::span<const double> feature, double tau) {
    if (weights.rows() != feature.size())
        throw NumericError("cosine_scores: weight rows " + std::to_string(weights.rows()) +
                           " != feature dim " + std::to_string(feature.size()));
    Vector out(weights.cols());
    kernels::matvec_transposed(weights.data(), feature.data(), out.data(), weights.rows(),
                               weights.cols());
    kernels::scale(out.data(), tau, out.size());
    return out;
}

Vector zero_shot_logits(const ImageEncoderParams& params, const Matrix& w_cls, double tau,
                        std::span<const double> x) {
    const Vector h = encode_image(params, x);
    return cosine_scores(w_cls, h, tau);
}

Vector head_logits(const ImageEncoderParams& params, const ClassifierHead& head, double tau,
                   std::span<const double> x) {
    const Vector h = encode_image(params, x);
    Vector logits = cosine_scores(head.weight, h, tau);
    if (head.bias) {
        if (head.bias->size() != logits.size())
            throw NumericError("head_logits: bias length mismatch");
        for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += (*head.bias)[i];
    }
    return logits;
}

Vector context_distribution(const ImageEncoderParams& params, const Matrix& w_ctx, double tau,
                            std::span<const double> x) {
    const Vector h = encode_image(params, x);
    return softmax(cosine_scores(w_ctx, h, tau));
}

}  // namespace carft
