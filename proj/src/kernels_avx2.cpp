// AVX2 kernel variants. Compiled with -mavx2; only reached after the runtime
// dispatch confirms CPU support. Each kernel mirrors the scalar reference's
// operation order exactly (4-lane blocks, mul+add instead of FMA, identical
// lane reduction), so outputs are bit-identical to the scalar backend.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "carft/kernels.hpp"

namespace carft::kernels::detail {

namespace {

// (v0+v2) + (v1+v3), matching the scalar lane reduction.
inline double reduce_lanes(__m256d acc) {
    const __m128d lo = _mm256_castpd256_pd128(acc);   // [v0, v1]
    const __m128d hi = _mm256_extractf128_pd(acc, 1); // [v2, v3]
    const __m128d pair = _mm_add_pd(lo, hi);          // [v0+v2, v1+v3]
    return _mm_cvtsd_f64(pair) + _mm_cvtsd_f64(_mm_unpackhi_pd(pair, pair));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d vacc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d va = _mm256_loadu_pd(a + i);
        const __m256d vb = _mm256_loadu_pd(b + i);
        vacc = _mm256_add_pd(vacc, _mm256_mul_pd(va, vb));
    }
    double acc = reduce_lanes(vacc);
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double sum_avx2(const double* x, std::size_t n) {
    __m256d vacc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vacc = _mm256_add_pd(vacc, _mm256_loadu_pd(x + i));
    double acc = reduce_lanes(vacc);
    for (; i < n; ++i) acc += x[i];
    return acc;
}

double max_avx2(const double* x, std::size_t n) {
    if (n < 8) {
        double best = x[0];
        for (std::size_t i = 1; i < n; ++i)
            if (x[i] > best) best = x[i];
        return best;
    }
    __m256d vbest = _mm256_loadu_pd(x);
    std::size_t i = 4;
    for (; i + 4 <= n; i += 4) vbest = _mm256_max_pd(vbest, _mm256_loadu_pd(x + i));
    const __m128d lo = _mm256_castpd256_pd128(vbest);
    const __m128d hi = _mm256_extractf128_pd(vbest, 1);
    const __m128d pair = _mm_max_pd(lo, hi);
    double best = _mm_cvtsd_f64(_mm_max_sd(pair, _mm_unpackhi_pd(pair, pair)));
    for (; i < n; ++i)
        if (x[i] > best) best = x[i];
    return best;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vy = _mm256_loadu_pd(y + i);
        const __m256d vx = _mm256_loadu_pd(x + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(vy, _mm256_mul_pd(va, vx)));
    }
    for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

void scale_avx2(double* x, double a, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), va));
    for (; i < n; ++i) x[i] *= a;
}

void adamw_avx2(double* w, const double* g, double* m, double* v, std::size_t n, double lr,
                double weight_decay, double beta1, double beta2, double eps, double bc1,
                double bc2) {
    const double decay = 1.0 - lr * weight_decay;
    const double c1 = 1.0 - beta1;
    const double c2 = 1.0 - beta2;
    const __m256d vdecay = _mm256_set1_pd(decay);
    const __m256d vb1 = _mm256_set1_pd(beta1);
    const __m256d vb2 = _mm256_set1_pd(beta2);
    const __m256d vc1 = _mm256_set1_pd(c1);
    const __m256d vc2 = _mm256_set1_pd(c2);
    const __m256d vbc1 = _mm256_set1_pd(bc1);
    const __m256d vbc2 = _mm256_set1_pd(bc2);
    const __m256d veps = _mm256_set1_pd(eps);
    const __m256d vlr = _mm256_set1_pd(lr);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vw = _mm256_mul_pd(_mm256_loadu_pd(w + i), vdecay);
        const __m256d vg = _mm256_loadu_pd(g + i);
        const __m256d vm =
            _mm256_add_pd(_mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(vc1, vg));
        const __m256d vv = _mm256_add_pd(_mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)),
                                         _mm256_mul_pd(vc2, _mm256_mul_pd(vg, vg)));
        _mm256_storeu_pd(m + i, vm);
        _mm256_storeu_pd(v + i, vv);
        const __m256d mhat = _mm256_div_pd(vm, vbc1);
        const __m256d vhat = _mm256_div_pd(vv, vbc2);
        const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
        vw = _mm256_sub_pd(vw, _mm256_mul_pd(vlr, _mm256_div_pd(mhat, denom)));
        _mm256_storeu_pd(w + i, vw);
    }
    for (; i < n; ++i) {
        w[i] *= decay;
        m[i] = beta1 * m[i] + c1 * g[i];
        v[i] = beta2 * v[i] + c2 * (g[i] * g[i]);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= lr * (mhat / (std::sqrt(vhat) + eps));
    }
}

}  // namespace

const KernelTable& avx2_table() {
    static const KernelTable table = {dot_avx2,  sum_avx2,   max_avx2,
                                      axpy_avx2, scale_avx2, adamw_avx2};
    return table;
}

}  // namespace carft::kernels::detail

#endif  // x86_64
