#include "carft/prompts.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "carft/kernels.hpp"
#include "carft/numerics.hpp"

namespace carft {

namespace {

constexpr const char* kPlaceholder = "[CLASS]";

std::size_t count_placeholders(const std::string& text) {
    std::size_t count = 0;
    std::size_t pos = 0;
    while ((pos = text.find(kPlaceholder, pos)) != std::string::npos) {
        ++count;
        pos += std::string(kPlaceholder).size();
    }
    return count;
}

}  // namespace

PromptWeightTensor::PromptWeightTensor(std::size_t dim, std::size_t n_templates,
                                       std::size_t n_classes)
    : dim_(dim), n_templates_(n_templates), n_classes_(n_classes),
      columns_(n_templates * n_classes, dim) {
    if (dim == 0 || n_templates == 0 || n_classes == 0)
        throw NumericError("prompt weight tensor: empty dimension");
}

void PromptWeightTensor::validate() const {
    for (std::size_t i = 0; i < n_templates_; ++i) {
        for (std::size_t j = 0; j < n_classes_; ++j) {
            const double* col = column(i, j);
            const double norm = std::sqrt(kernels::dot(col, col, dim_));
            if (std::abs(norm - 1.0) > 1e-9)
                throw NumericError("prompt weight tensor: column (" + std::to_string(i) + "," +
                                   std::to_string(j) + ") not unit norm");
        }
    }
}

void validate_templates(const std::vector<PromptTemplate>& templates) {
    if (templates.empty()) throw ConfigError("templates: empty set");
    std::set<std::string> seen;
    for (const auto& t : templates) {
        if (t.context_name.empty()) throw ConfigError("templates: empty context name");
        if (!seen.insert(t.context_name).second)
            throw ConfigError("templates: duplicate context name '" + t.context_name + "'");
        const std::size_t n = count_placeholders(t.text);
        if (n != 1)
            throw ConfigError("templates: '" + t.text + "' must contain exactly one " +
                              kPlaceholder + " placeholder");
    }
}

void validate_classes(const ClassNameSet& classes) {
    if (classes.names.empty()) throw ConfigError("classes: empty set");
    std::set<std::string> seen;
    for (const auto& name : classes.names) {
        if (name.empty()) throw ConfigError("classes: empty class name");
        if (!seen.insert(name).second)
            throw ConfigError("classes: duplicate class name '" + name + "'");
    }
}

std::string instantiate_template(const PromptTemplate& tmpl, const std::string& class_name) {
    const std::size_t n = count_placeholders(tmpl.text);
    if (n != 1)
        throw ConfigError("template '" + tmpl.text + "' must contain exactly one " +
                          kPlaceholder + " placeholder");
    std::string out = tmpl.text;
    out.replace(out.find(kPlaceholder), std::string(kPlaceholder).size(), class_name);
    return out;
}

std::vector<std::string> build_prompt_set(const std::vector<PromptTemplate>& templates,
                                          const ClassNameSet& classes) {
    validate_templates(templates);
    validate_classes(classes);
    std::vector<std::string> prompts;
    prompts.reserve(templates.size() * classes.size());
    for (const auto& t : templates)
        for (const auto& name : classes.names) prompts.push_back(instantiate_template(t, name));
    return prompts;
}

Matrix class_weights(const PromptWeightTensor& w) {
    Matrix mean(w.dim(), w.n_classes());
    for (std::size_t j = 0; j < w.n_classes(); ++j) {
        for (std::size_t i = 0; i < w.n_templates(); ++i) {
            const double* col = w.column(i, j);
            for (std::size_t d = 0; d < w.dim(); ++d) mean(d, j) += col[d];
        }
        for (std::size_t d = 0; d < w.dim(); ++d)
            mean(d, j) /= static_cast<double>(w.n_templates());
    }
    return l2_normalize_columns(mean);
}

Matrix context_weights(const PromptWeightTensor& w, ContextVariant variant, std::size_t label) {
    Matrix mean(w.dim(), w.n_templates());
    if (variant == ContextVariant::per_class) {
        if (label >= w.n_classes())
            throw ConfigError("context_weights: per-class label out of range");
        for (std::size_t i = 0; i < w.n_templates(); ++i) {
            const double* col = w.column(i, label);
            for (std::size_t d = 0; d < w.dim(); ++d) mean(d, i) = col[d];
        }
    } else {
        for (std::size_t i = 0; i < w.n_templates(); ++i) {
            for (std::size_t j = 0; j < w.n_classes(); ++j) {
                const double* col = w.column(i, j);
                for (std::size_t d = 0; d < w.dim(); ++d) mean(d, i) += col[d];
            }
            for (std::size_t d = 0; d < w.dim(); ++d)
                mean(d, i) /= static_cast<double>(w.n_classes());
        }
    }
    return l2_normalize_columns(mean);
}

std::vector<PromptTemplate> load_templates(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("templates: cannot open " + path);
    std::vector<PromptTemplate> templates;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("templates: " + path + ":" + std::to_string(lineno) +
                            ": expected 'context_name<TAB>template'");
        templates.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
    validate_templates(templates);
    return templates;
}

ClassNameSet load_classes(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("classes: cannot open " + path);
    ClassNameSet classes;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        classes.names.push_back(line);
    }
    validate_classes(classes);
    return classes;
}

void save_templates(const std::vector<PromptTemplate>& templates, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("templates: cannot write " + path);
    for (const auto& t : templates) out << t.context_name << '\t' << t.text << '\n';
}

void save_classes(const ClassNameSet& classes, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("classes: cannot write " + path);
    for (const auto& name : classes.names) out << name << '\n';
}

}  // namespace carft
