#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "carft/matrix.hpp"

namespace carft {

// One prompt template, e.g. "a photo of [CLASS]." tagged with the context it
// describes. Exactly one [CLASS] placeholder per template.
struct PromptTemplate {
    std::string context_name;
    std::string text;
};

struct ClassNameSet {
    std::vector<std::string> names;

    std::size_t size() const { return names.size(); }
};

// Encoded prompt weights W, dims D x |P| x |C|, stored as |P|*|C| unit-norm
// columns in template-major order: column(i, j) = i * |C| + j.
class PromptWeightTensor {
public:
    PromptWeightTensor(std::size_t dim, std::size_t n_templates, std::size_t n_classes);

    std::size_t dim() const { return dim_; }
    std::size_t n_templates() const { return n_templates_; }
    std::size_t n_classes() const { return n_classes_; }

    std::size_t column_index(std::size_t template_i, std::size_t class_j) const {
        return template_i * n_classes_ + class_j;
    }

    // Mutable access used while encoding; columns must end up unit-norm.
    double* column(std::size_t template_i, std::size_t class_j) {
        return columns_.row(column_index(template_i, class_j));
    }
    const double* column(std::size_t template_i, std::size_t class_j) const {
        return columns_.row(column_index(template_i, class_j));
    }

    // Throws if any column is not unit L2 norm within 1e-9.
    void validate() const;

private:
    std::size_t dim_;
    std::size_t n_templates_;
    std::size_t n_classes_;
    Matrix columns_;  // (|P|*|C|) x D, one encoded prompt per row
};

enum class ContextVariant { averaged, per_class };

// Cross product T = P x C as prompt strings, template-major then class.
std::vector<std::string> build_prompt_set(const std::vector<PromptTemplate>& templates,
                                          const ClassNameSet& classes);

// Substitute one class name into a template. Throws ConfigError when the
// [CLASS] placeholder is missing or duplicated.
std::string instantiate_template(const PromptTemplate& tmpl, const std::string& class_name);

// W_cls: column k = normalize(mean over templates of W[:, :, k]); D x K.
Matrix class_weights(const PromptWeightTensor& w);

// W_ctx: averaged -- column i = normalize(mean over classes of W[:, i, :]);
// per_class(y) -- column i = normalize(W[:, i, y]); D x |P|.
Matrix context_weights(const PromptWeightTensor& w, ContextVariant variant,
                       std::size_t label = 0);

// File formats: templates are "context_name<TAB>template text" per line,
// class names one per line. UTF-8, '#' comment lines and blanks skipped.
std::vector<PromptTemplate> load_templates(const std::string& path);
ClassNameSet load_classes(const std::string& path);
void save_templates(const std::vector<PromptTemplate>& templates, const std::string& path);
void save_classes(const ClassNameSet& classes, const std::string& path);

// Validation shared by the loaders and the in-memory constructors.
void validate_templates(const std::vector<PromptTemplate>& templates);
void validate_classes(const ClassNameSet& classes);

}  // namespace carft
