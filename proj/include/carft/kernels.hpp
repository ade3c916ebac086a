#pragma once

#include <cstddef>
#include <string>

namespace carft::kernels {

// Inner-loop arithmetic used by the numerics/model/trainer layers.
//
// Every kernel has a scalar reference implementation and an AVX2 variant
// selected at runtime. Both are written against the same operation order
// (4-lane blocked accumulation, no FMA) so their outputs are bit-identical;
// the equivalence tests assert exact equality, not a tolerance.

enum class Backend { scalar, avx2 };

// Highest backend this CPU supports.
Backend detect_backend();

// Active backend. Defaults to detect_backend(); the CARFT_KERNELS
// environment variable ("scalar" / "avx2") overrides at startup.
Backend active_backend();

// Force a backend (tests; throws ConfigError if unsupported on this CPU).
void force_backend(Backend b);

const char* backend_name(Backend b);

// acc = sum_i a[i] * b[i], 4-lane blocked accumulation order.
double dot(const double* a, const double* b, std::size_t n);

// sum_i x[i], same blocking as dot.
double sum(const double* x, std::size_t n);

// max_i x[i]. n must be >= 1.
double max_value(const double* x, std::size_t n);

// y[i] += a * x[i]
void axpy(double a, const double* x, double* y, std::size_t n);

// x[i] *= a
void scale(double* x, double a, std::size_t n);

// out[r] = dot(A[r,:], x) for row-major A (rows x cols).
void matvec(const double* a, const double* x, double* out, std::size_t rows, std::size_t cols);

// out[c] = sum_r A[r,c] * x[r]; accumulated row by row.
void matvec_transposed(const double* a, const double* x, double* out, std::size_t rows,
                       std::size_t cols);

// One AdamW step on a flat tensor: decoupled decay first (w *= 1 - lr*wd),
// then the bias-corrected moment update. bc1/bc2 are 1 - beta^t.
void adamw_update(double* w, const double* g, double* m, double* v, std::size_t n, double lr,
                  double weight_decay, double beta1, double beta2, double eps, double bc1,
                  double bc2);

namespace detail {

struct KernelTable {
    double (*dot)(const double*, const double*, std::size_t);
    double (*sum)(const double*, std::size_t);
    double (*max_value)(const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*scale)(double*, double, std::size_t);
    void (*adamw_update)(double*, const double*, double*, double*, std::size_t, double, double,
                         double, double, double, double, double);
};

const KernelTable& scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_table();
#endif

}  // namespace detail

}  // namespace carft::kernels
