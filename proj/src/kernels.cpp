#include "carft/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

#include "carft/errors.hpp"

namespace carft::kernels {

namespace detail {

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 += a[i] * b[i];
        acc1 += a[i + 1] * b[i + 1];
        acc2 += a[i + 2] * b[i + 2];
        acc3 += a[i + 3] * b[i + 3];
    }
    // Lane reduction order matches the AVX2 128-bit split: (0+2) + (1+3).
    double acc = (acc0 + acc2) + (acc1 + acc3);
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double sum_scalar(const double* x, std::size_t n) {
    double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 += x[i];
        acc1 += x[i + 1];
        acc2 += x[i + 2];
        acc3 += x[i + 3];
    }
    double acc = (acc0 + acc2) + (acc1 + acc3);
    for (; i < n; ++i) acc += x[i];
    return acc;
}

double max_scalar(const double* x, std::size_t n) {
    double best = x[0];
    for (std::size_t i = 1; i < n; ++i) {
        if (x[i] > best) best = x[i];
    }
    return best;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

void scale_scalar(double* x, double a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void adamw_scalar(double* w, const double* g, double* m, double* v, std::size_t n, double lr,
                  double weight_decay, double beta1, double beta2, double eps, double bc1,
                  double bc2) {
    const double decay = 1.0 - lr * weight_decay;
    const double c1 = 1.0 - beta1;
    const double c2 = 1.0 - beta2;
    for (std::size_t i = 0; i < n; ++i) {
        w[i] *= decay;
        m[i] = beta1 * m[i] + c1 * g[i];
        v[i] = beta2 * v[i] + c2 * (g[i] * g[i]);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= lr * (mhat / (std::sqrt(vhat) + eps));
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table = {dot_scalar,  sum_scalar,   max_scalar,
                                      axpy_scalar, scale_scalar, adamw_scalar};
    return table;
}

}  // namespace detail

namespace {

const detail::KernelTable* table_for(Backend b) {
#if defined(__x86_64__) || defined(_M_X64)
    if (b == Backend::avx2) return &detail::avx2_table();
#endif
    return &detail::scalar_table();
}

bool backend_supported(Backend b) {
    if (b == Backend::scalar) return true;
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

Backend initial_backend() {
    if (const char* env = std::getenv("CARFT_KERNELS")) {
        const std::string name(env);
        if (name == "scalar") return Backend::scalar;
        if (name == "avx2") {
            if (!backend_supported(Backend::avx2))
                throw ConfigError("CARFT_KERNELS=avx2 but this CPU has no AVX2");
            return Backend::avx2;
        }
        throw ConfigError("CARFT_KERNELS: unknown backend '" + name + "'");
    }
    return backend_supported(Backend::avx2) ? Backend::avx2 : Backend::scalar;
}

// Lazily resolved so a bad CARFT_KERNELS value surfaces as a catchable error
// on first use rather than aborting during static initialization.
Backend& backend_ref() {
    static Backend backend = initial_backend();
    return backend;
}

const detail::KernelTable*& table_ref() {
    static const detail::KernelTable* table = table_for(backend_ref());
    return table;
}

}  // namespace

Backend detect_backend() {
    return backend_supported(Backend::avx2) ? Backend::avx2 : Backend::scalar;
}

Backend active_backend() { return backend_ref(); }

void force_backend(Backend b) {
    if (!backend_supported(b))
        throw ConfigError(std::string("kernel backend not supported on this CPU: ") +
                          backend_name(b));
    backend_ref() = b;
    table_ref() = table_for(b);
}

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
    }
    return "?";
}

double dot(const double* a, const double* b, std::size_t n) { return table_ref()->dot(a, b, n); }

double sum(const double* x, std::size_t n) { return table_ref()->sum(x, n); }

double max_value(const double* x, std::size_t n) { return table_ref()->max_value(x, n); }

void axpy(double a, const double* x, double* y, std::size_t n) { table_ref()->axpy(a, x, y, n); }

void scale(double* x, double a, std::size_t n) { table_ref()->scale(x, a, n); }

void matvec(const double* a, const double* x, double* out, std::size_t rows, std::size_t cols) {
    const detail::KernelTable* table = table_ref();
    for (std::size_t r = 0; r < rows; ++r) out[r] = table->dot(a + r * cols, x, cols);
}

void matvec_transposed(const double* a, const double* x, double* out, std::size_t rows,
                       std::size_t cols) {
    const detail::KernelTable* table = table_ref();
    for (std::size_t c = 0; c < cols; ++c) out[c] = 0.0;
    for (std::size_t r = 0; r < rows; ++r) table->axpy(x[r], a + r * cols, out, cols);
}

void adamw_update(double* w, const double* g, double* m, double* v, std::size_t n, double lr,
                  double weight_decay, double beta1, double beta2, double eps, double bc1,
                  double bc2) {
    table_ref()->adamw_update(w, g, m, v, n, lr, weight_decay, beta1, beta2, eps, bc1, bc2);
}

}  // namespace carft::kernels
