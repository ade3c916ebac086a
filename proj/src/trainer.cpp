#include "carft/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "carft/eval.hpp"
#include "carft/kernels.hpp"
#include "carft/numerics.hpp"
#include "carft/rng.hpp"

namespace carft {

const char* method_name(Method m) {
    switch (m) {
        case Method::ft: return "ft";
        case Method::tp_ft: return "tp-ft";
        case Method::lp_ft: return "lp-ft";
        case Method::car_ft: return "car-ft";
    }
    return "?";
}

Method parse_method(const std::string& name) {
    if (name == "ft") return Method::ft;
    if (name == "tp-ft") return Method::tp_ft;
    if (name == "lp-ft") return Method::lp_ft;
    if (name == "car-ft") return Method::car_ft;
    throw ConfigError("unknown fine-tuning method '" + name + "'");
}

void adamw_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                double lr, double weight_decay, const AdamConfig& adam) {
    if (params.size() != grads.size())
        throw NumericError("adamw_step: parameter/gradient size mismatch");
    if (state.m.empty() && state.v.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw NumericError("adamw_step: optimizer state size mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(state.step));
    kernels::adamw_update(params.data(), grads.data(), state.m.data(), state.v.data(),
                          params.size(), lr, weight_decay, adam.beta1, adam.beta2, adam.eps, bc1,
                          bc2);
}

double cosine_lr(std::size_t step, std::size_t total, double lr_max, double lr_min) {
    if (step > total) throw NumericError("cosine_lr: step beyond total");
    if (total == 0) return lr_max;
    const double phase =
        std::numbers::pi * static_cast<double>(step) / static_cast<double>(total);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

void write_train_log(const TrainLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("train log: cannot write " + path);
    out << "step,loss_ce,loss_kl,lr\n";
    char a[40], b[40], c[40];
    for (const StepRecord& rec : log.steps) {
        std::snprintf(a, sizeof a, "%.17g", rec.loss_ce);
        std::snprintf(b, sizeof b, "%.17g", rec.loss_kl);
        std::snprintf(c, sizeof c, "%.17g", rec.lr);
        out << rec.step << ',' << a << ',' << b << ',' << c << '\n';
    }
}

Vocabulary vocab_from_checkpoint(const Checkpoint& ckpt) {
    auto it = ckpt.meta.find("vocab");
    if (it == ckpt.meta.end())
        throw ConfigError("checkpoint carries no vocabulary metadata; cannot encode prompts");
    std::vector<std::string> words;
    std::istringstream in(it->second);
    std::string word;
    while (in >> word) words.push_back(word);
    if (words.empty()) throw DataError("checkpoint vocabulary metadata is empty");
    return Vocabulary(std::move(words));
}

PromptWeightTensor encode_prompts(const TextEncoderParams& text, const Vocabulary& vocab,
                                  const std::vector<PromptTemplate>& templates,
                                  const ClassNameSet& classes) {
    return encode_prompt_set(text, templates, classes,
                             [&vocab](const std::string& s) { return vocab.tokenize(s); });
}

// ---------------------------------------------------------------------------
// shared backward helpers

namespace {

struct FinetuneGrads {
    Matrix w1, w2, head_w;
    Vector b1, b2, head_b;

    FinetuneGrads(const ImageEncoderParams& image, const ClassifierHead& head)
        : w1(image.w1.rows(), image.w1.cols()),
          w2(image.w2.rows(), image.w2.cols()),
          head_w(head.weight.rows(), head.weight.cols()),
          b1(image.b1.size(), 0.0),
          b2(image.b2.size(), 0.0),
          head_b(head.bias ? head.bias->size() : 0, 0.0) {}

    void zero() {
        std::fill(w1.values().begin(), w1.values().end(), 0.0);
        std::fill(w2.values().begin(), w2.values().end(), 0.0);
        std::fill(head_w.values().begin(), head_w.values().end(), 0.0);
        std::fill(b1.begin(), b1.end(), 0.0);
        std::fill(b2.begin(), b2.end(), 0.0);
        std::fill(head_b.begin(), head_b.end(), 0.0);
    }
};

// d(loss)/d(theta-hat tensors) for a unit-feature gradient dz.
void backprop_image(const ImageEncoderParams& image, const ImageTrace& tr,
                    std::span<const double> x, const Vector& dz, Matrix& gw1, Vector& gb1,
                    Matrix& gw2, Vector& gb2) {
    const std::size_t d_embed = image.embed_dim();
    const std::size_t d_hidden = image.hidden_dim();
    // z = a / ||a||  =>  da = (dz - z (z . dz)) / ||a||
    const double zdot = kernels::dot(tr.embedding.data(), dz.data(), d_embed);
    Vector da2(d_embed);
    for (std::size_t d = 0; d < d_embed; ++d)
        da2[d] = (dz[d] - tr.embedding[d] * zdot) / tr.norm;

    for (std::size_t d = 0; d < d_embed; ++d) {
        gb2[d] += da2[d];
        kernels::axpy(da2[d], tr.hidden.data(), gw2.row(d), d_hidden);
    }
    Vector dh(d_hidden);
    kernels::matvec_transposed(image.w2.data(), da2.data(), dh.data(), d_embed, d_hidden);
    for (std::size_t i = 0; i < d_hidden; ++i) {
        const double da1 = dh[i] * (1.0 - tr.hidden[i] * tr.hidden[i]);
        gb1[i] += da1;
        kernels::axpy(da1, x.data(), gw1.row(i), x.size());
    }
}

struct FinetuneContext {
    const ImageEncoderParams* reference = nullptr;  // frozen theta
    const Matrix* w_ctx = nullptr;                  // frozen shared context weights
    const std::vector<Matrix>* w_ctx_by_class = nullptr;  // ground-truth-class variant
    double tau = 1.0;
    double tau_head = 1.0;
    double alpha = 0.0;
    bool use_kl = false;
    bool reverse_kl = false;

    const Matrix& context_weights_for(const Example& ex) const {
        if (w_ctx_by_class) return (*w_ctx_by_class)[ex.label];
        return *w_ctx;
    }
};

struct ExampleLosses {
    double ce = 0.0;
    double kl = 0.0;
};

// Forward (and optionally backward) for one example. grads == nullptr means
// loss only. cached_ref, when given, replaces the reference forward pass.
ExampleLosses example_losses(const FinetuneContext& ctx, const ImageEncoderParams& tuned,
                             const ClassifierHead& head, const Example& ex,
                             const Vector* cached_ref, double inv_batch, FinetuneGrads* grads) {
    ExampleLosses out;
    const ImageTrace tr = encode_image_trace(tuned, ex.x);
    const std::size_t d_embed = tuned.embed_dim();
    const std::size_t n_classes = head.weight.cols();

    Vector logits = cosine_scores(head.weight, tr.embedding, ctx.tau_head);
    if (head.bias)
        for (std::size_t k = 0; k < n_classes; ++k) logits[k] += (*head.bias)[k];
    out.ce = cross_entropy(logits, ex.label);

    Vector dz(d_embed, 0.0);
    Vector dlogit;
    if (grads) {
        dlogit = softmax(logits);
        dlogit[ex.label] -= 1.0;
        kernels::scale(dlogit.data(), inv_batch, dlogit.size());
        for (std::size_t d = 0; d < d_embed; ++d)
            kernels::axpy(ctx.tau_head * tr.embedding[d], dlogit.data(), grads->head_w.row(d),
                          n_classes);
        if (head.bias)
            for (std::size_t k = 0; k < n_classes; ++k) grads->head_b[k] += dlogit[k];
        kernels::matvec(head.weight.data(), dlogit.data(), dz.data(), d_embed, n_classes);
        kernels::scale(dz.data(), ctx.tau_head, d_embed);
    }

    if (ctx.use_kl) {
        const Matrix& w_ctx = ctx.context_weights_for(ex);
        Vector ref_storage;
        const Vector* p = cached_ref;
        if (!p) {
            ref_storage = context_distribution(*ctx.reference, w_ctx, ctx.tau, ex.x);
            p = &ref_storage;
        }
        const Vector q = softmax(cosine_scores(w_ctx, tr.embedding, ctx.tau));
        out.kl = ctx.reverse_kl ? kl_divergence(q, *p) : kl_divergence(*p, q);
        if (grads) {
            const std::size_t n_ctx = q.size();
            Vector dv(n_ctx);
            const double coeff = ctx.alpha * inv_batch;
            if (!ctx.reverse_kl) {
                for (std::size_t j = 0; j < n_ctx; ++j) dv[j] = (q[j] - (*p)[j]) * coeff;
            } else {
                for (std::size_t j = 0; j < n_ctx; ++j) {
                    const double pj = (*p)[j] < kKlEpsilon ? kKlEpsilon : (*p)[j];
                    dv[j] = q[j] * ((std::log(q[j]) - std::log(pj)) - out.kl) * coeff;
                }
            }
            Vector dz_kl(d_embed);
            kernels::matvec(w_ctx.data(), dv.data(), dz_kl.data(), d_embed, n_ctx);
            kernels::axpy(ctx.tau, dz_kl.data(), dz.data(), d_embed);
        }
    }

    if (grads)
        backprop_image(tuned, tr, ex.x, dz, grads->w1, grads->b1, grads->w2, grads->b2);
    return out;
}

struct ParamSlot {
    double* w;
    const double* g;
    std::size_t n;
};

void adamw_over_slots(std::span<const ParamSlot> slots, AdamState& state, double lr,
                      double weight_decay, const AdamConfig& adam) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(state.step));
    std::size_t off = 0;
    for (const ParamSlot& slot : slots) {
        kernels::adamw_update(slot.w, slot.g, state.m.data() + off, state.v.data() + off, slot.n,
                              lr, weight_decay, adam.beta1, adam.beta2, adam.eps, bc1, bc2);
        off += slot.n;
    }
}

std::size_t total_size(std::span<const ParamSlot> slots) {
    std::size_t n = 0;
    for (const ParamSlot& s : slots) n += s.n;
    return n;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    return order;
}

}  // namespace

// ---------------------------------------------------------------------------
// contrastive pre-training

double contrastive_loss(const Matrix& image_embeds, const Matrix& text_embeds, double tau) {
    if (!image_embeds.same_shape(text_embeds))
        throw NumericError("contrastive_loss: embedding shape mismatch");
    const std::size_t n = image_embeds.rows();
    if (n < 2) throw ConfigError("contrastive_loss: batch must contain at least 2 pairs");
    const std::size_t dim = image_embeds.cols();
    Matrix scores(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            scores(i, j) = tau * kernels::dot(image_embeds.row(i), text_embeds.row(j), dim);
    double row_ce = 0.0, col_ce = 0.0;
    Vector column(n);
    for (std::size_t i = 0; i < n; ++i)
        row_ce += cross_entropy(std::span<const double>(scores.row(i), n), i);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) column[i] = scores(i, j);
        col_ce += cross_entropy(column, j);
    }
    return (row_ce + col_ce) / (2.0 * static_cast<double>(n));
}

double contrastive_loss_and_grad(const ImageEncoderParams& image, const TextEncoderParams& text,
                                 double log_tau, const Dataset& data,
                                 std::span<const std::size_t> indices, ContrastiveGrads* grads) {
    const std::size_t count = indices.size();
    if (count < 2) throw ConfigError("contrastive batch must contain at least 2 pairs");
    const std::size_t d_embed = image.embed_dim();
    const double tau = std::exp(log_tau);

    std::vector<ImageTrace> img_traces(count);
    std::vector<TextTrace> txt_traces(count);
    Matrix z(count, d_embed), t(count, d_embed);
    for (std::size_t i = 0; i < count; ++i) {
        const Example& ex = data[indices[i]];
        img_traces[i] = encode_image_trace(image, ex.x);
        txt_traces[i] = encode_text_trace(text, ex.caption);
        for (std::size_t d = 0; d < d_embed; ++d) {
            z(i, d) = img_traces[i].embedding[d];
            t(i, d) = txt_traces[i].embedding[d];
        }
    }

    Matrix cosines(count, count);
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < count; ++j)
            cosines(i, j) = kernels::dot(z.row(i), t.row(j), d_embed);

    const double inv = 1.0 / (2.0 * static_cast<double>(count));
    Matrix gscores(count, count);
    double loss = 0.0;
    Vector scaled(count), column(count);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < count; ++j) scaled[j] = tau * cosines(i, j);
        loss += cross_entropy(scaled, i) * inv;
        if (grads) {
            const Vector probs = softmax(scaled);
            for (std::size_t j = 0; j < count; ++j)
                gscores(i, j) += (probs[j] - (j == i ? 1.0 : 0.0)) * inv;
        }
    }
    for (std::size_t j = 0; j < count; ++j) {
        for (std::size_t i = 0; i < count; ++i) column[i] = tau * cosines(i, j);
        loss += cross_entropy(column, j) * inv;
        if (grads) {
            const Vector probs = softmax(column);
            for (std::size_t i = 0; i < count; ++i)
                gscores(i, j) += (probs[i] - (i == j ? 1.0 : 0.0)) * inv;
        }
    }
    if (!grads) return loss;

    std::fill(grads->w1.values().begin(), grads->w1.values().end(), 0.0);
    std::fill(grads->w2.values().begin(), grads->w2.values().end(), 0.0);
    std::fill(grads->b1.begin(), grads->b1.end(), 0.0);
    std::fill(grads->b2.begin(), grads->b2.end(), 0.0);
    std::fill(grads->embed.values().begin(), grads->embed.values().end(), 0.0);
    std::fill(grads->proj.values().begin(), grads->proj.values().end(), 0.0);

    // dL/dtau via the log parameterization; dL/dcosine = tau * gscores.
    double dtau = 0.0;
    for (std::size_t i = 0; i < count; ++i)
        dtau += kernels::dot(gscores.row(i), cosines.row(i), count);
    grads->log_tau = dtau * tau;

    Vector dvec(count), dz(d_embed), dt(d_embed);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < count; ++j) dvec[j] = tau * gscores(i, j);
        kernels::matvec_transposed(t.data(), dvec.data(), dz.data(), count, d_embed);
        backprop_image(image, img_traces[i], data[indices[i]].x, dz, grads->w1, grads->b1,
                       grads->w2, grads->b2);
    }
    for (std::size_t j = 0; j < count; ++j) {
        for (std::size_t i = 0; i < count; ++i) dvec[i] = tau * gscores(i, j);
        kernels::matvec_transposed(z.data(), dvec.data(), dt.data(), count, d_embed);
        // t = a/||a||, a = proj * pooled, pooled = mean of token embeddings
        const TextTrace& tr = txt_traces[j];
        const double tdot = kernels::dot(tr.embedding.data(), dt.data(), d_embed);
        Vector da(d_embed);
        for (std::size_t d = 0; d < d_embed; ++d)
            da[d] = (dt[d] - tr.embedding[d] * tdot) / tr.norm;
        for (std::size_t d = 0; d < d_embed; ++d)
            kernels::axpy(da[d], tr.pooled.data(), grads->proj.row(d), d_embed);
        Vector dpooled(d_embed);
        kernels::matvec_transposed(text.proj.data(), da.data(), dpooled.data(), d_embed,
                                   d_embed);
        const Example& ex = data[indices[j]];
        const double inv_tokens = 1.0 / static_cast<double>(ex.caption.size());
        for (TokenId tok : ex.caption)
            kernels::axpy(inv_tokens, dpooled.data(), grads->embed.row(tok), d_embed);
    }
    return loss;
}

Checkpoint pretrain_contrastive(const WorldSpec& world, const PretrainConfig& config,
                                const std::vector<PromptTemplate>& templates,
                                const ClassNameSet& classes) {
    if (config.batch < 2) throw ConfigError("pretrain: contrastive batch must be >= 2");
    if (config.n_samples < config.batch) throw ConfigError("pretrain: too few samples");
    validate_templates(templates);
    validate_classes(classes);
    if (classes.size() != world.n_classes())
        throw ConfigError("pretrain: class list does not match world classes");

    std::vector<std::size_t> all_contexts(world.n_contexts());
    std::iota(all_contexts.begin(), all_contexts.end(), std::size_t{0});

    std::string failures;
    for (int attempt = 0; attempt < config.max_seed_attempts; ++attempt) {
        const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(attempt);
        const std::size_t d_in = world.config.input_dim;
        const std::size_t d_hidden = config.hidden_dim;
        const std::size_t d_embed = config.embed_dim;
        const std::size_t vocab = world.vocab.size();

        // Parameter init; draw order is part of the reproducibility contract.
        Rng init_rng(derive_seed(seed, 1000));
        ImageEncoderParams image;
        image.w1 = Matrix(d_hidden, d_in);
        for (double& v : image.w1.values())
            v = init_rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(d_in)));
        image.b1.assign(d_hidden, 0.0);
        image.w2 = Matrix(d_embed, d_hidden);
        for (double& v : image.w2.values())
            v = init_rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(d_hidden)));
        image.b2.assign(d_embed, 0.0);
        TextEncoderParams text;
        text.embed = Matrix(vocab, d_embed);
        for (double& v : text.embed.values()) v = init_rng.normal(0.0, 1.0);
        text.proj = Matrix(d_embed, d_embed);
        for (double& v : text.proj.values())
            v = init_rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(d_embed)));
        double log_tau = std::log(config.init_tau);

        const Dataset data =
            sample_examples(world, all_contexts, config.n_samples, derive_seed(seed, 1001));

        ContrastiveGrads grads;
        grads.w1 = Matrix(d_hidden, d_in);
        grads.b1.assign(d_hidden, 0.0);
        grads.w2 = Matrix(d_embed, d_hidden);
        grads.b2.assign(d_embed, 0.0);
        grads.embed = Matrix(vocab, d_embed);
        grads.proj = Matrix(d_embed, d_embed);

        const std::vector<ParamSlot> slots = {
            {image.w1.data(), grads.w1.data(), image.w1.size()},
            {image.b1.data(), grads.b1.data(), image.b1.size()},
            {image.w2.data(), grads.w2.data(), image.w2.size()},
            {image.b2.data(), grads.b2.data(), image.b2.size()},
            {text.embed.data(), grads.embed.data(), text.embed.size()},
            {text.proj.data(), grads.proj.data(), text.proj.size()},
            {&log_tau, &grads.log_tau, 1},
        };
        AdamState state(total_size(slots));

        // Trailing partial batches are dropped: InfoNCE needs >= 2 pairs.
        const std::size_t batches = config.n_samples / config.batch;
        const std::size_t total_steps = config.epochs * batches;
        std::size_t step = 0;

        for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
            const auto order = shuffled_indices(data.size(), seed ^ epoch);
            for (std::size_t b = 0; b < batches; ++b, ++step) {
                const double lr_t = cosine_lr(step, total_steps, config.lr, config.lr_min);
                const double loss = contrastive_loss_and_grad(
                    image, text, log_tau, data,
                    std::span<const std::size_t>(order).subspan(b * config.batch, config.batch),
                    &grads);
                if (!std::isfinite(loss))
                    throw NumericError("pretrain: training diverged at step " +
                                       std::to_string(step));
                adamw_over_slots(slots, state, lr_t, config.weight_decay, AdamConfig{});
                // tau clamped to [1, 100] throughout pre-training.
                log_tau = std::clamp(log_tau, 0.0, std::log(100.0));
            }
        }

        // Quality gate on held-out samples before accepting this seed.
        const double tau = std::exp(log_tau);
        const PromptWeightTensor w = encode_prompts(text, world.vocab, templates, classes);
        const Matrix w_cls = class_weights(w);
        const Matrix w_ctx = context_weights(w, ContextVariant::averaged);
        const Dataset gate_ds =
            sample_examples(world, all_contexts, 512, derive_seed(seed, 1002));
        const double zs_acc = accuracy_with_weights(image, w_cls, nullptr, tau, gate_ds);
        const double probe_acc = context_probe(image, w_ctx, tau, gate_ds);
        // Twice-chance floors, capped below 1 so a perfect score passes the
        // strict inequality when K or M is 2.
        const double zs_floor = std::min(2.0 / static_cast<double>(world.n_classes()), 1.0 - 1e-9);
        const double probe_floor =
            std::min(2.0 / static_cast<double>(world.n_contexts()), 1.0 - 1e-9);
        if (zs_acc > zs_floor && probe_acc > probe_floor) {
            Checkpoint ckpt;
            ckpt.image = std::move(image);
            ckpt.text = std::move(text);
            ckpt.logit_scale = tau;
            ckpt.head = ClassifierHead{w_cls, std::nullopt};
            std::string vocab_words;
            for (std::size_t i = 0; i < world.vocab.size(); ++i) {
                if (i) vocab_words += ' ';
                vocab_words += world.vocab.word(static_cast<TokenId>(i));
            }
            ckpt.meta["method"] = "pretrain";
            ckpt.meta["seed"] = std::to_string(seed);
            ckpt.meta["step"] = std::to_string(total_steps);
            ckpt.meta["vocab"] = vocab_words;
            return ckpt;
        }
        failures += " seed " + std::to_string(seed) + ": zero-shot " + std::to_string(zs_acc) +
                    ", probe " + std::to_string(probe_acc) + ";";
    }
    throw NumericError("pretrain: quality gate failed after " +
                       std::to_string(config.max_seed_attempts) + " seeds:" + failures);
}

// ---------------------------------------------------------------------------
// fine-tuning

ClassifierHead linear_probe(const Checkpoint& pretrained, const Dataset& data,
                            const Matrix& w_cls_init, std::size_t epochs, double lr,
                            double weight_decay, std::size_t batch, std::uint64_t seed) {
    if (data.empty()) throw DataError("linear_probe: empty dataset");
    if (batch == 0 || batch > data.size())
        throw ConfigError("linear_probe: batch must be in [1, dataset size]");
    ClassifierHead head{w_cls_init, std::nullopt};
    if (epochs == 0) return head;

    const std::size_t d_embed = pretrained.image.embed_dim();
    const std::size_t n_classes = head.weight.cols();
    const double tau = pretrained.logit_scale;

    // Features are frozen; encode once.
    std::vector<Vector> features;
    features.reserve(data.size());
    for (const Example& ex : data) features.push_back(encode_image(pretrained.image, ex.x));

    Matrix ghead(d_embed, n_classes);
    const std::vector<ParamSlot> slots = {{head.weight.data(), ghead.data(), head.weight.size()}};
    AdamState state(head.weight.size());
    const std::size_t batches = (data.size() + batch - 1) / batch;
    const std::size_t total_steps = epochs * batches;
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const auto order = shuffled_indices(data.size(), seed ^ epoch);
        for (std::size_t b = 0; b < batches; ++b, ++step) {
            const std::size_t begin = b * batch;
            const std::size_t count = std::min(batch, data.size() - begin);
            const double lr_t = cosine_lr(step, total_steps, lr, 0.0);
            const double inv = 1.0 / static_cast<double>(count);
            std::fill(ghead.values().begin(), ghead.values().end(), 0.0);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t idx = order[begin + i];
                const Vector& z = features[idx];
                Vector logits = cosine_scores(head.weight, z, tau);
                Vector dlogit = softmax(logits);
                dlogit[data[idx].label] -= 1.0;
                kernels::scale(dlogit.data(), inv, dlogit.size());
                for (std::size_t d = 0; d < d_embed; ++d)
                    kernels::axpy(tau * z[d], dlogit.data(), ghead.row(d), n_classes);
            }
            adamw_over_slots(slots, state, lr_t, weight_decay, AdamConfig{});
        }
    }
    return head;
}

FinetuneResult finetune(const Checkpoint& pretrained, const Dataset& data,
                        const TrainConfig& config,
                        const std::vector<PromptTemplate>* templates,
                        const ClassNameSet* classes, const EvalHooks& hooks) {
    if (data.empty()) throw DataError("finetune: empty dataset");
    if (config.alpha < 0.0) throw ConfigError("finetune: alpha must be >= 0");
    if (config.lr < 0.0) throw ConfigError("finetune: learning rate must be >= 0");
    if (config.batch == 0 || config.batch > data.size())
        throw ConfigError("finetune: batch must be in [1, dataset size]");
    const bool needs_prompts = config.method != Method::ft;
    if (needs_prompts && (!templates || !classes))
        throw ConfigError(std::string(method_name(config.method)) +
                          " requires templates and classes");

    const std::size_t d_embed = pretrained.image.embed_dim();
    const double tau = pretrained.logit_scale;

    // Prompt-derived weights, computed once up front and frozen for the run.
    // The per-class variant keeps one frozen W_ctx per ground-truth class.
    Matrix w_cls, w_ctx;
    std::vector<Matrix> w_ctx_by_class;
    if (needs_prompts) {
        const Vocabulary vocab = vocab_from_checkpoint(pretrained);
        const PromptWeightTensor w = encode_prompts(pretrained.text, vocab, *templates, *classes);
        w_cls = class_weights(w);
        if (config.method == Method::car_ft) {
            if (config.ctx_variant == ContextVariant::averaged) {
                w_ctx = context_weights(w, ContextVariant::averaged);
            } else {
                w_ctx_by_class.reserve(classes->size());
                for (std::size_t y = 0; y < classes->size(); ++y)
                    w_ctx_by_class.push_back(context_weights(w, ContextVariant::per_class, y));
            }
        }
    }

    std::size_t n_classes = 0;
    if (needs_prompts) {
        n_classes = classes->size();
    } else {
        for (const Example& ex : data) n_classes = std::max(n_classes, ex.label + 1);
        if (n_classes < 2) throw DataError("finetune: dataset has fewer than 2 classes");
    }
    for (const Example& ex : data)
        if (ex.label >= n_classes)
            throw DataError("finetune: label " + std::to_string(ex.label) +
                            " outside the class set");

    // theta-hat <- theta; head init per method.
    ImageEncoderParams tuned = pretrained.image;
    ClassifierHead head;
    switch (config.method) {
        case Method::ft: {
            head.weight = Matrix(d_embed, n_classes);
            Rng rng(derive_seed(config.seed, 101));
            const double scale = 1.0 / std::sqrt(static_cast<double>(d_embed));
            for (double& v : head.weight.values()) v = rng.normal(0.0, scale);
            break;
        }
        case Method::tp_ft:
        case Method::car_ft:
            head.weight = w_cls;
            break;
        case Method::lp_ft:
            head = linear_probe(pretrained, data, w_cls, config.probe_epochs, config.probe_lr,
                                config.weight_decay, std::min(config.batch, data.size()),
                                derive_seed(config.seed, 102));
            break;
    }
    if (config.head_bias) head.bias = Vector(n_classes, 0.0);

    FinetuneContext ctx;
    ctx.reference = &pretrained.image;
    ctx.w_ctx = w_ctx_by_class.empty() ? &w_ctx : nullptr;
    ctx.w_ctx_by_class = w_ctx_by_class.empty() ? nullptr : &w_ctx_by_class;
    ctx.tau = tau;
    ctx.tau_head = config.tau_on_head ? tau : 1.0;
    ctx.alpha = config.alpha;
    ctx.use_kl = config.method == Method::car_ft && config.alpha != 0.0;
    ctx.reverse_kl = config.reverse_kl;

    std::vector<Vector> ref_cache;
    std::vector<char> ref_cached;
    if (ctx.use_kl && config.cache_reference) {
        ref_cache.resize(data.size());
        ref_cached.assign(data.size(), 0);
    }

    FinetuneGrads grads(tuned, head);
    std::vector<ParamSlot> slots = {
        {tuned.w1.data(), grads.w1.data(), tuned.w1.size()},
        {tuned.b1.data(), grads.b1.data(), tuned.b1.size()},
        {tuned.w2.data(), grads.w2.data(), tuned.w2.size()},
        {tuned.b2.data(), grads.b2.data(), tuned.b2.size()},
        {head.weight.data(), grads.head_w.data(), head.weight.size()},
    };
    if (head.bias) slots.push_back({head.bias->data(), grads.head_b.data(), head.bias->size()});
    AdamState state(total_size(slots));

    TrainLog log;
    const std::size_t batches = (data.size() + config.batch - 1) / config.batch;
    const std::size_t total_steps = config.epochs * batches;
    log.steps.reserve(total_steps);
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = shuffled_indices(data.size(), config.seed ^ epoch);
        for (std::size_t b = 0; b < batches; ++b, ++step) {
            const std::size_t begin = b * config.batch;
            const std::size_t count = std::min(config.batch, data.size() - begin);
            const double lr_t = cosine_lr(step, total_steps, config.lr, config.lr_min);
            const double inv = 1.0 / static_cast<double>(count);
            grads.zero();
            double ce_sum = 0.0, kl_sum = 0.0;
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t idx = order[begin + i];
                const Vector* cached = nullptr;
                if (ctx.use_kl && config.cache_reference) {
                    if (!ref_cached[idx]) {
                        ref_cache[idx] = context_distribution(
                            *ctx.reference, ctx.context_weights_for(data[idx]), tau,
                            data[idx].x);
                        ref_cached[idx] = 1;
                    }
                    cached = &ref_cache[idx];
                }
                const ExampleLosses losses =
                    example_losses(ctx, tuned, head, data[idx], cached, inv, &grads);
                ce_sum += losses.ce;
                kl_sum += losses.kl;
            }
            const double ce_mean = ce_sum * inv;
            const double kl_mean = kl_sum * inv;
            if (!std::isfinite(ce_mean) || !std::isfinite(kl_mean))
                throw NumericError("finetune: training diverged at step " + std::to_string(step));
            adamw_over_slots(slots, state, lr_t, config.weight_decay, AdamConfig{});
            log.steps.push_back({step, ce_mean, kl_mean, lr_t});
        }
        if (hooks.id_test || (hooks.probe_data && hooks.probe_w_ctx)) {
            EpochSnapshot snap;
            snap.epoch = epoch;
            if (hooks.id_test)
                snap.id_accuracy = accuracy_with_weights(
                    tuned, head.weight, head.bias ? &*head.bias : nullptr, tau, *hooks.id_test);
            if (hooks.probe_data && hooks.probe_w_ctx)
                snap.probe_accuracy = context_probe(tuned, *hooks.probe_w_ctx, tau,
                                                    *hooks.probe_data);
            log.epochs.push_back(snap);
        }
    }

    FinetuneResult result;
    result.model.image = std::move(tuned);
    result.model.text = pretrained.text;
    result.model.logit_scale = tau;
    result.model.head = std::move(head);
    result.model.meta = pretrained.meta;
    result.model.meta["method"] = method_name(config.method);
    result.model.meta["seed"] = std::to_string(config.seed);
    result.model.meta["step"] = std::to_string(total_steps);
    result.model.meta.erase("alpha");  // do not inherit from a CAR-FT ancestor
    if (config.method == Method::car_ft) {
        char alpha_buf[40];
        std::snprintf(alpha_buf, sizeof alpha_buf, "%.17g", config.alpha);
        result.model.meta["alpha"] = alpha_buf;
    }
    result.log = std::move(log);
    return result;
}

std::vector<AlphaSweepRow> alpha_sweep(const Checkpoint& pretrained, const Dataset& train,
                                       const Dataset& id_test, const Dataset& ood_test,
                                       std::span<const double> alphas, const TrainConfig& base,
                                       const std::vector<PromptTemplate>& templates,
                                       const ClassNameSet& classes) {
    if (alphas.empty()) throw ConfigError("alpha_sweep: empty alpha list");
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        if (alphas[i] < 0.0) throw ConfigError("alpha_sweep: alpha values must be nonnegative");
        if (i > 0 && alphas[i] < alphas[i - 1])
            throw ConfigError("alpha_sweep: alpha values must be sorted ascending");
    }
    std::vector<AlphaSweepRow> rows;
    rows.reserve(alphas.size());
    for (double alpha : alphas) {
        TrainConfig cfg = base;
        cfg.method = Method::car_ft;
        cfg.alpha = alpha;
        try {
            const FinetuneResult out = finetune(pretrained, train, cfg, &templates, &classes);
            rows.push_back(
                {alpha, accuracy(out.model, id_test), accuracy(out.model, ood_test)});
        } catch (const Error& e) {
            throw Error(e.kind(),
                        "alpha_sweep: alpha=" + std::to_string(alpha) + ": " + e.what());
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// finite-difference harness support

std::vector<double> flatten_finetune_params(const ImageEncoderParams& image,
                                            const ClassifierHead& head) {
    std::vector<double> flat;
    flat.reserve(image.w1.size() + image.b1.size() + image.w2.size() + image.b2.size() +
                 head.weight.size() + (head.bias ? head.bias->size() : 0));
    auto append = [&flat](const double* p, std::size_t n) { flat.insert(flat.end(), p, p + n); };
    append(image.w1.data(), image.w1.size());
    append(image.b1.data(), image.b1.size());
    append(image.w2.data(), image.w2.size());
    append(image.b2.data(), image.b2.size());
    append(head.weight.data(), head.weight.size());
    if (head.bias) append(head.bias->data(), head.bias->size());
    return flat;
}

void unflatten_finetune_params(std::span<const double> flat, ImageEncoderParams& image,
                               ClassifierHead& head) {
    std::size_t off = 0;
    auto take = [&](double* p, std::size_t n) {
        if (off + n > flat.size()) throw NumericError("unflatten: parameter vector too short");
        std::copy(flat.begin() + off, flat.begin() + off + n, p);
        off += n;
    };
    take(image.w1.data(), image.w1.size());
    take(image.b1.data(), image.b1.size());
    take(image.w2.data(), image.w2.size());
    take(image.b2.data(), image.b2.size());
    take(head.weight.data(), head.weight.size());
    if (head.bias) take(head.bias->data(), head.bias->size());
    if (off != flat.size()) throw NumericError("unflatten: parameter vector too long");
}

double carft_loss_and_grad(const CarftLossInputs& inputs, const ImageEncoderParams& tuned,
                           const ClassifierHead& head, std::vector<double>* grad_out) {
    if (!inputs.pretrained || !inputs.batch || (!inputs.w_ctx && !inputs.w_ctx_by_class))
        throw ConfigError("carft_loss_and_grad: missing inputs");
    const Dataset& batch = *inputs.batch;
    if (batch.empty()) throw DataError("carft_loss_and_grad: empty batch");

    FinetuneContext ctx;
    ctx.reference = &inputs.pretrained->image;
    ctx.w_ctx = inputs.w_ctx;
    ctx.w_ctx_by_class = inputs.w_ctx_by_class;
    ctx.tau = inputs.pretrained->logit_scale;
    ctx.tau_head = inputs.tau_on_head ? inputs.pretrained->logit_scale : 1.0;
    ctx.alpha = inputs.alpha;
    ctx.use_kl = inputs.alpha != 0.0;
    ctx.reverse_kl = inputs.reverse_kl;

    const double inv = 1.0 / static_cast<double>(batch.size());
    FinetuneGrads grads(tuned, head);
    double ce_sum = 0.0, kl_sum = 0.0;
    for (const Example& ex : batch) {
        const ExampleLosses losses =
            example_losses(ctx, tuned, head, ex, nullptr, inv, grad_out ? &grads : nullptr);
        ce_sum += losses.ce;
        kl_sum += losses.kl;
    }
    if (grad_out) {
        grad_out->clear();
        auto append = [grad_out](const double* p, std::size_t n) {
            grad_out->insert(grad_out->end(), p, p + n);
        };
        append(grads.w1.data(), grads.w1.size());
        append(grads.b1.data(), grads.b1.size());
        append(grads.w2.data(), grads.w2.size());
        append(grads.b2.data(), grads.b2.size());
        append(grads.head_w.data(), grads.head_w.size());
        if (head.bias) append(grads.head_b.data(), grads.head_b.size());
    }
    return (ce_sum + inputs.alpha * kl_sum) * inv;
}

}  // namespace carft
