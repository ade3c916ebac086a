#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "carft/matrix.hpp"
#include "carft/model.hpp"
#include "carft/prompts.hpp"

namespace carft {

// Whitespace tokenizer over a fixed word list. Id 0 is <unk>; context names
// come first, then class names, mirroring the caption layout.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> words);

    std::size_t size() const { return words_.size(); }
    const std::string& word(TokenId id) const { return words_[id]; }

    // 0 (<unk>) for unknown words.
    TokenId id_of(const std::string& word) const;

    // Lowercases, splits on whitespace, strips edge punctuation.
    std::vector<TokenId> tokenize(const std::string& text) const;

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, TokenId> ids_;
};

struct WorldConfig {
    std::size_t classes = 8;
    std::size_t contexts = 4;
    std::size_t latent_dim = 8;
    std::size_t input_dim = 32;
    double sigma = 0.05;
    // Context-to-class signal ratio: V entries are scaled by this relative
    // to U. Above 1, context dominates enough that class-only fine-tuning
    // visibly suppresses it.
    double context_scale = 2.5;
    std::uint64_t seed = 1234;
    // Optional name overrides; defaults are generated (PACS-flavoured).
    std::vector<std::string> class_names;
    std::vector<std::string> context_names;
};

// The generative world: x = U mu_y + V nu_c + eps, eps ~ N(0, sigma^2 I).
struct WorldSpec {
    WorldConfig config;
    Matrix class_latents;    // K x d_lat, unit rows
    Matrix context_latents;  // M x d_lat, unit rows
    Matrix mix_class;        // d_in x d_lat (U)
    Matrix mix_context;      // d_in x d_lat (V)
    Vocabulary vocab;

    std::size_t n_classes() const { return config.classes; }
    std::size_t n_contexts() const { return config.contexts; }

    TokenId context_token(std::size_t c) const { return static_cast<TokenId>(1 + c); }
    TokenId class_token(std::size_t y) const {
        return static_cast<TokenId>(1 + config.contexts + y);
    }

    const std::string& class_name(std::size_t y) const { return vocab.word(class_token(y)); }
    const std::string& context_name(std::size_t c) const { return vocab.word(context_token(c)); }
};

struct Example {
    Vector x;
    std::size_t label = 0;
    std::size_t context = 0;
    // Two-token caption [context, class]; zero (unset) for imported datasets.
    std::array<TokenId, 2> caption{0, 0};
};

using Dataset = std::vector<Example>;

enum class SplitKind { train, id_test, ood_test };

struct SplitPlan {
    std::vector<std::size_t> train_contexts;
    std::vector<std::size_t> ood_contexts;
    std::size_t n_train = 4096;
    std::size_t n_id_test = 1024;
    std::size_t n_ood_test = 1024;
    std::uint64_t seed = 0;
};

// Build a plan holding out the given context ids; validates disjoint/nonempty.
SplitPlan make_split_plan(const WorldSpec& world, std::span<const std::size_t> ood_contexts,
                          std::uint64_t seed);

WorldSpec generate_world(const WorldConfig& config);

// n examples with labels uniform over classes and contexts uniform over the
// given set; deterministic for a seed.
Dataset sample_examples(const WorldSpec& world, std::span<const std::size_t> contexts,
                        std::size_t n, std::uint64_t seed);

// One of the plan's splits (train/id use train contexts, ood the complement).
Dataset sample_split(const WorldSpec& world, const SplitPlan& plan, SplitKind kind);

// CSV with header "y,c,x0,...,x{d-1}", 17 significant digits.
void export_dataset(const Dataset& ds, const std::string& path);
Dataset import_dataset(const std::string& path);

// "<context>\ta <context> of [CLASS]." for each world context, plus the
// class-name list -- the default prompt fixtures for this world.
std::vector<PromptTemplate> default_templates(const WorldSpec& world);
ClassNameSet world_class_names(const WorldSpec& world);

}  // namespace carft
