#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "carft/model.hpp"
#include "carft/prompts.hpp"
#include "carft/worldgen.hpp"

namespace carft {

enum class Method { ft, tp_ft, lp_ft, car_ft };

const char* method_name(Method m);
Method parse_method(const std::string& name);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Flat first/second moment accumulators covering one parameter vector.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t step = 0;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// One AdamW step with decoupled weight decay (w *= 1 - lr*wd before the
// bias-corrected moment update).
void adamw_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                double lr, double weight_decay, const AdamConfig& adam = {});

// lr_min + 0.5 * (lr_max - lr_min) * (1 + cos(pi * step / total)).
double cosine_lr(std::size_t step, std::size_t total, double lr_max, double lr_min);

// Symmetric InfoNCE over in-batch pairs: mean of row-wise and column-wise
// cross-entropy on tau * Z T^T with matched pairs on the diagonal.
double contrastive_loss(const Matrix& image_embeds, const Matrix& text_embeds, double tau);

// Gradients of the symmetric InfoNCE batch loss with respect to every
// pre-training parameter (theta, phi and log tau). Shapes must mirror the
// encoders. Exposed for the finite-difference harness.
struct ContrastiveGrads {
    Matrix w1, w2, embed, proj;
    Vector b1, b2;
    double log_tau = 0.0;
};

double contrastive_loss_and_grad(const ImageEncoderParams& image, const TextEncoderParams& text,
                                 double log_tau, const Dataset& data,
                                 std::span<const std::size_t> indices, ContrastiveGrads* grads);

struct TrainConfig {
    Method method = Method::tp_ft;
    double alpha = 1.0;  // KL weight in L = L_CE + alpha * L_KL
    // Toy-scale default; large enough that the FT baseline actually fits the
    // training set within 10 epochs.
    double lr = 5e-4;
    double lr_min = 0.0;
    double weight_decay = 0.01;
    std::size_t batch = 64;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;
    // averaged: one label-free W_ctx shared by every example. per_class: each
    // example uses the context columns of its ground-truth class.
    ContextVariant ctx_variant = ContextVariant::averaged;
    bool head_bias = false;
    bool tau_on_head = true;       // apply the frozen logit scale to head logits
    bool cache_reference = false;  // memoize p_ctx(x; theta) per example
    bool reverse_kl = false;       // ablation: KL[fine-tuned || reference]
    // LP-FT stage 1 (head-only training on frozen features).
    std::size_t probe_epochs = 40;
    double probe_lr = 1e-2;
};

struct StepRecord {
    std::size_t step = 0;
    double loss_ce = 0.0;
    double loss_kl = 0.0;
    double lr = 0.0;
};

struct EpochSnapshot {
    std::size_t epoch = 0;
    double id_accuracy = -1.0;     // -1 when the hook was not set
    double probe_accuracy = -1.0;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochSnapshot> epochs;
};

// CSV with header "step,loss_ce,loss_kl,lr".
void write_train_log(const TrainLog& log, const std::string& path);

// Optional per-epoch evaluation during fine-tuning.
struct EvalHooks {
    const Dataset* id_test = nullptr;
    const Dataset* probe_data = nullptr;
    const Matrix* probe_w_ctx = nullptr;
};

struct FinetuneResult {
    Checkpoint model;
    TrainLog log;
};

struct PretrainConfig {
    std::size_t epochs = 30;
    double lr = 1e-3;
    double lr_min = 0.0;
    double weight_decay = 0.0;
    std::size_t batch = 64;
    std::size_t n_samples = 4096;
    std::size_t hidden_dim = 64;
    std::size_t embed_dim = 16;
    double init_tau = 10.0;
    std::uint64_t seed = 0;
    // Zero-shot quality gate: retry with seed+1 up to this many attempts.
    int max_seed_attempts = 3;
};

// Contrastive pre-training over image-caption pairs drawn from every context
// of the world. The returned checkpoint carries theta, the frozen phi, the
// learned tau (clamped to [1,100]) and W_cls as its zero-shot head. Fails
// with NumericError if the quality gate (zero-shot accuracy > 2/K, context
// probe > 2/M) is missed for all seed attempts.
Checkpoint pretrain_contrastive(const WorldSpec& world, const PretrainConfig& config,
                                const std::vector<PromptTemplate>& templates,
                                const ClassNameSet& classes);

// Fine-tune a pre-trained checkpoint with one of FT / TP-FT / LP-FT / CAR-FT.
// templates/classes are required for every method except FT.
FinetuneResult finetune(const Checkpoint& pretrained, const Dataset& data,
                        const TrainConfig& config,
                        const std::vector<PromptTemplate>* templates,
                        const ClassNameSet* classes, const EvalHooks& hooks = {});

// Head-only training on frozen features from w_cls_init; epochs == 0 returns
// the init unchanged. Convex given the frozen features.
ClassifierHead linear_probe(const Checkpoint& pretrained, const Dataset& data,
                            const Matrix& w_cls_init, std::size_t epochs, double lr,
                            double weight_decay, std::size_t batch, std::uint64_t seed);

struct AlphaSweepRow {
    double alpha = 0.0;
    double id_accuracy = 0.0;
    double ood_accuracy = 0.0;
};

// One CAR-FT run per alpha under a fixed seed, evaluated on both splits.
// alphas must be nonnegative and sorted ascending. Training errors propagate
// annotated with the offending alpha.
std::vector<AlphaSweepRow> alpha_sweep(const Checkpoint& pretrained, const Dataset& train,
                                       const Dataset& id_test, const Dataset& ood_test,
                                       std::span<const double> alphas, const TrainConfig& base,
                                       const std::vector<PromptTemplate>& templates,
                                       const ClassNameSet& classes);

// The vocabulary is persisted in checkpoint metadata ("vocab" key) so prompt
// encoding stays consistent across runs without regenerating the world.
Vocabulary vocab_from_checkpoint(const Checkpoint& ckpt);

PromptWeightTensor encode_prompts(const TextEncoderParams& text, const Vocabulary& vocab,
                                  const std::vector<PromptTemplate>& templates,
                                  const ClassNameSet& classes);

// Full CAR-FT loss (CE + alpha*KL, batch mean) and its gradient flattened in
// the trainer's parameter order. Exposed for the finite-difference harness.
// Exactly one of w_ctx (shared) or w_ctx_by_class (ground-truth per-class
// lookup) must be set.
struct CarftLossInputs {
    const Checkpoint* pretrained = nullptr;
    const Dataset* batch = nullptr;
    const Matrix* w_ctx = nullptr;
    const std::vector<Matrix>* w_ctx_by_class = nullptr;
    double alpha = 1.0;
    bool tau_on_head = true;
    bool reverse_kl = false;
};

double carft_loss_and_grad(const CarftLossInputs& inputs, const ImageEncoderParams& tuned,
                           const ClassifierHead& head, std::vector<double>* grad_out);

// Flatten/unflatten (theta-hat, W_f) in the trainer's canonical order.
std::vector<double> flatten_finetune_params(const ImageEncoderParams& image,
                                            const ClassifierHead& head);
void unflatten_finetune_params(std::span<const double> flat, ImageEncoderParams& image,
                               ClassifierHead& head);

}  // namespace carft
