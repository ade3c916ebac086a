#include "carft/worldgen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "carft/kernels.hpp"
#include "carft/rng.hpp"

namespace carft {

namespace {

const char* kDefaultClassNames[] = {"dog",    "elephant", "giraffe", "guitar",
                                    "horse",  "house",    "person",  "cat"};
const char* kDefaultContextNames[] = {"photo", "sketch", "cartoon", "painting"};

std::vector<std::string> make_names(const std::vector<std::string>& overrides, std::size_t n,
                                    std::span<const char* const> defaults, const char* stem) {
    if (!overrides.empty()) {
        if (overrides.size() != n)
            throw ConfigError(std::string(stem) + " names: expected " + std::to_string(n) +
                              ", got " + std::to_string(overrides.size()));
        return overrides;
    }
    std::vector<std::string> names;
    names.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (i < defaults.size())
            names.emplace_back(defaults[i]);
        else
            names.push_back(std::string(stem) + std::to_string(i));
    }
    return names;
}

// Rows sampled uniformly on the unit sphere; whole set redrawn until every
// pair is separated by more than 10 degrees (and less than 170).
Matrix sample_separated_latents(Rng& rng, std::size_t count, std::size_t dim, const char* what) {
    const double cos_limit = std::cos(10.0 * std::numbers::pi / 180.0);
    for (int attempt = 0; attempt < 100; ++attempt) {
        Matrix latents(count, dim);
        for (std::size_t i = 0; i < count; ++i) {
            double sq = 0.0;
            while (sq < 1e-12) {
                sq = 0.0;
                for (std::size_t d = 0; d < dim; ++d) {
                    latents(i, d) = rng.normal();
                    sq += latents(i, d) * latents(i, d);
                }
            }
            const double inv = 1.0 / std::sqrt(sq);
            for (std::size_t d = 0; d < dim; ++d) latents(i, d) *= inv;
        }
        bool ok = true;
        for (std::size_t i = 0; i < count && ok; ++i)
            for (std::size_t j = i + 1; j < count && ok; ++j) {
                const double cosine = kernels::dot(latents.row(i), latents.row(j), dim);
                if (std::abs(cosine) >= cos_limit) ok = false;
            }
        if (ok) return latents;
    }
    throw NumericError(std::string("generate_world: could not separate ") + what +
                       " latents after 100 attempts");
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i)
        ids_.emplace(words_[i], static_cast<TokenId>(i));
}

TokenId Vocabulary::id_of(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? TokenId{0} : it->second;
}

std::vector<TokenId> Vocabulary::tokenize(const std::string& text) const {
    std::vector<TokenId> tokens;
    std::string word;
    auto flush = [&] {
        if (word.empty()) return;
        std::size_t begin = 0, end = word.size();
        while (begin < end && !std::isalnum(static_cast<unsigned char>(word[begin]))) ++begin;
        while (end > begin && !std::isalnum(static_cast<unsigned char>(word[end - 1]))) --end;
        if (end > begin) tokens.push_back(id_of(word.substr(begin, end - begin)));
        word.clear();
    };
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch)))
            flush();
        else
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
    flush();
    return tokens;
}

WorldSpec generate_world(const WorldConfig& config) {
    if (config.classes < 2 || config.contexts < 2)
        throw ConfigError("generate_world: need at least 2 classes and 2 contexts");
    if (config.latent_dim > config.input_dim)
        throw ConfigError("generate_world: latent_dim must not exceed input_dim");
    if (config.sigma < 0.0) throw ConfigError("generate_world: sigma must be >= 0");
    if (!(config.context_scale > 0.0))
        throw ConfigError("generate_world: context_scale must be positive");

    WorldSpec world;
    world.config = config;

    const auto context_names =
        make_names(config.context_names, config.contexts,
                   std::span<const char* const>(kDefaultContextNames), "context");
    const auto class_names = make_names(config.class_names, config.classes,
                                        std::span<const char* const>(kDefaultClassNames), "class");
    std::vector<std::string> words;
    words.reserve(1 + context_names.size() + class_names.size());
    words.emplace_back("<unk>");
    words.insert(words.end(), context_names.begin(), context_names.end());
    words.insert(words.end(), class_names.begin(), class_names.end());
    world.vocab = Vocabulary(std::move(words));

    Rng rng(config.seed);
    world.class_latents = sample_separated_latents(rng, config.classes, config.latent_dim, "class");
    world.context_latents =
        sample_separated_latents(rng, config.contexts, config.latent_dim, "context");

    const double mix_scale = 1.0 / std::sqrt(static_cast<double>(config.input_dim));
    world.mix_class = Matrix(config.input_dim, config.latent_dim);
    world.mix_context = Matrix(config.input_dim, config.latent_dim);
    for (std::size_t i = 0; i < config.input_dim; ++i)
        for (std::size_t d = 0; d < config.latent_dim; ++d)
            world.mix_class(i, d) = rng.normal(0.0, mix_scale);
    for (std::size_t i = 0; i < config.input_dim; ++i)
        for (std::size_t d = 0; d < config.latent_dim; ++d)
            world.mix_context(i, d) = rng.normal(0.0, config.context_scale * mix_scale);
    return world;
}

SplitPlan make_split_plan(const WorldSpec& world, std::span<const std::size_t> ood_contexts,
                          std::uint64_t seed) {
    SplitPlan plan;
    plan.seed = seed;
    std::vector<bool> held(world.n_contexts(), false);
    for (std::size_t c : ood_contexts) {
        if (c >= world.n_contexts())
            throw ConfigError("split plan: OOD context id " + std::to_string(c) +
                              " out of range");
        held[c] = true;
    }
    for (std::size_t c = 0; c < world.n_contexts(); ++c)
        (held[c] ? plan.ood_contexts : plan.train_contexts).push_back(c);
    if (plan.train_contexts.empty() || plan.ood_contexts.empty())
        throw ConfigError("split plan: train and OOD context sets must both be nonempty");
    return plan;
}

Dataset sample_examples(const WorldSpec& world, std::span<const std::size_t> contexts,
                        std::size_t n, std::uint64_t seed) {
    if (n == 0) throw DataError("sample_examples: empty dataset requested");
    if (contexts.empty()) throw ConfigError("sample_examples: empty context set");
    const std::size_t d_in = world.config.input_dim;
    const std::size_t d_lat = world.config.latent_dim;

    Rng rng(seed);
    Dataset ds;
    ds.reserve(n);
    Vector class_part(d_in), context_part(d_in);
    for (std::size_t i = 0; i < n; ++i) {
        Example ex;
        ex.label = rng.uniform_index(world.n_classes());
        ex.context = contexts[rng.uniform_index(contexts.size())];
        kernels::matvec(world.mix_class.data(), world.class_latents.row(ex.label),
                        class_part.data(), d_in, d_lat);
        kernels::matvec(world.mix_context.data(), world.context_latents.row(ex.context),
                        context_part.data(), d_in, d_lat);
        ex.x.resize(d_in);
        for (std::size_t d = 0; d < d_in; ++d)
            ex.x[d] = class_part[d] + context_part[d] + world.config.sigma * rng.normal();
        ex.caption = {world.context_token(ex.context), world.class_token(ex.label)};
        ds.push_back(std::move(ex));
    }
    return ds;
}

Dataset sample_split(const WorldSpec& world, const SplitPlan& plan, SplitKind kind) {
    switch (kind) {
        case SplitKind::train:
            return sample_examples(world, plan.train_contexts, plan.n_train,
                                   derive_seed(plan.seed, 1));
        case SplitKind::id_test:
            return sample_examples(world, plan.train_contexts, plan.n_id_test,
                                   derive_seed(plan.seed, 2));
        case SplitKind::ood_test:
            return sample_examples(world, plan.ood_contexts, plan.n_ood_test,
                                   derive_seed(plan.seed, 3));
    }
    throw ConfigError("sample_split: unknown split kind");
}

void export_dataset(const Dataset& ds, const std::string& path) {
    if (ds.empty()) throw DataError("export_dataset: empty dataset");
    std::ofstream out(path);
    if (!out) throw DataError("export_dataset: cannot write " + path);
    const std::size_t d_in = ds.front().x.size();
    out << "y,c";
    for (std::size_t d = 0; d < d_in; ++d) out << ",x" << d;
    out << '\n';
    char buf[40];
    for (const Example& ex : ds) {
        out << ex.label << ',' << ex.context;
        for (double v : ex.x) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << ',' << buf;
        }
        out << '\n';
    }
}

Dataset import_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("import_dataset: cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw DataError("import_dataset: empty dataset in " + path);
    ++lineno;
    if (line.rfind("y,c", 0) != 0)
        throw DataError("import_dataset: " + path + ":1: bad header");
    std::size_t expected_cols = 1;
    for (char ch : line) expected_cols += (ch == ',');

    Dataset ds;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            fields.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (fields.size() != expected_cols)
            throw DataError("import_dataset: " + path + ":" + std::to_string(lineno) +
                            ": expected " + std::to_string(expected_cols) + " columns, got " +
                            std::to_string(fields.size()));
        Example ex;
        try {
            std::size_t used = 0;
            ex.label = std::stoul(fields[0], &used);
            if (used != fields[0].size()) throw std::invalid_argument("label");
            ex.context = std::stoul(fields[1], &used);
            if (used != fields[1].size()) throw std::invalid_argument("context");
            ex.x.reserve(fields.size() - 2);
            for (std::size_t f = 2; f < fields.size(); ++f) {
                ex.x.push_back(std::stod(fields[f], &used));
                if (used != fields[f].size()) throw std::invalid_argument("feature");
            }
        } catch (const std::exception&) {
            throw DataError("import_dataset: " + path + ":" + std::to_string(lineno) +
                            ": malformed value");
        }
        ds.push_back(std::move(ex));
    }
    if (ds.empty()) throw DataError("import_dataset: empty dataset in " + path);
    return ds;
}

std::vector<PromptTemplate> default_templates(const WorldSpec& world) {
    std::vector<PromptTemplate> templates;
    templates.reserve(world.n_contexts());
    for (std::size_t c = 0; c < world.n_contexts(); ++c) {
        const std::string& name = world.context_name(c);
        templates.push_back({name, "a " + name + " of [CLASS]."});
    }
    return templates;
}

ClassNameSet world_class_names(const WorldSpec& world) {
    ClassNameSet classes;
    classes.names.reserve(world.n_classes());
    for (std::size_t y = 0; y < world.n_classes(); ++y)
        classes.names.push_back(world.class_name(y));
    return classes;
}

}  // namespace carft
