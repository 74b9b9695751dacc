#include "kernels.h"

#include <math.h>

void k_gemm(const float *a, size_t a_cols, int trans_a,
            const float *b, size_t b_cols, int trans_b,
            const float *bias, size_t m, size_t n, size_t k, float *out) {
    for (size_t i = 0; i < m; i++) {
        for (size_t j = 0; j < n; j++) {
            float acc = 0.0f;
            for (size_t p = 0; p < k; p++) {
                float av = trans_a ? a[p * a_cols + i] : a[i * a_cols + p];
                float bv = trans_b ? b[p + j * b_cols] : b[p * b_cols + j];
                acc += av * bv;
            }
            if (bias) {
                acc += bias[j];
            }
            out[i * n + j] = acc;
        }
    }
}

void k_gemm_tiled(const float *a, size_t a_cols, int trans_a,
                  const float *b, size_t b_cols, int trans_b,
                  const float *bias, size_t m, size_t n, size_t k,
                  size_t mt, size_t nt, size_t kt, float *out) {
    for (size_t i0 = 0; i0 < m; i0 += mt) {
        size_t i1 = i0 + mt < m ? i0 + mt : m;
        for (size_t j0 = 0; j0 < n; j0 += nt) {
            size_t j1 = j0 + nt < n ? j0 + nt : n;
            for (size_t k0 = 0; k0 < k; k0 += kt) {
                size_t k1 = k0 + kt < k ? k0 + kt : k;
                for (size_t i = i0; i < i1; i++) {
                    for (size_t j = j0; j < j1; j++) {
                        float acc = 0.0f;
                        for (size_t p = k0; p < k1; p++) {
                            float av = trans_a ? a[p * a_cols + i] : a[i * a_cols + p];
                            float bv = trans_b ? b[p + j * b_cols] : b[p * b_cols + j];
                            acc += av * bv;
                        }
                        if (k0 == 0) {
                            out[i * n + j] = acc;
                        } else {
                            out[i * n + j] += acc;
                        }
                    }
                }
            }
        }
    }
    if (bias) {
        for (size_t i = 0; i < m; i++) {
            for (size_t j = 0; j < n; j++) {
                out[i * n + j] += bias[j];
            }
        }
    }
}

void k_im2col(const float *x, size_t n, size_t c, size_t h, size_t w,
              size_t kernel, size_t stride, size_t padding, float *col) {
    size_t ho = (h + 2 * padding - kernel) / stride + 1;
    size_t wo = (w + 2 * padding - kernel) / stride + 1;
    size_t cols = n * ho * wo;
    for (size_t ci = 0; ci < c; ci++) {
        for (size_t ki = 0; ki < kernel; ki++) {
            for (size_t kj = 0; kj < kernel; kj++) {
                size_t row = (ci * kernel + ki) * kernel + kj;
                for (size_t ni = 0; ni < n; ni++) {
                    for (size_t oy = 0; oy < ho; oy++) {
                        for (size_t ox = 0; ox < wo; ox++) {
                            ptrdiff_t iy = (ptrdiff_t)(oy * stride + ki) - (ptrdiff_t)padding;
                            ptrdiff_t ix = (ptrdiff_t)(ox * stride + kj) - (ptrdiff_t)padding;
                            size_t col_idx = row * cols + (ni * ho + oy) * wo + ox;
                            if (iy >= 0 && ix >= 0 && iy < (ptrdiff_t)h && ix < (ptrdiff_t)w) {
                                col[col_idx] =
                                    x[((ni * c + ci) * h + (size_t)iy) * w + (size_t)ix];
                            } else {
                                col[col_idx] = 0.0f;
                            }
                        }
                    }
                }
            }
        }
    }
}

void k_col2im(const float *dcol, size_t n, size_t c, size_t h, size_t w,
              size_t kernel, size_t stride, size_t padding, float *dx) {
    size_t ho = (h + 2 * padding - kernel) / stride + 1;
    size_t wo = (w + 2 * padding - kernel) / stride + 1;
    size_t cols = n * ho * wo;
    for (size_t i = 0; i < n * c * h * w; i++) {
        dx[i] = 0.0f;
    }
    for (size_t ci = 0; ci < c; ci++) {
        for (size_t ki = 0; ki < kernel; ki++) {
            for (size_t kj = 0; kj < kernel; kj++) {
                size_t row = (ci * kernel + ki) * kernel + kj;
                for (size_t ni = 0; ni < n; ni++) {
                    for (size_t oy = 0; oy < ho; oy++) {
                        for (size_t ox = 0; ox < wo; ox++) {
                            ptrdiff_t iy = (ptrdiff_t)(oy * stride + ki) - (ptrdiff_t)padding;
                            ptrdiff_t ix = (ptrdiff_t)(ox * stride + kj) - (ptrdiff_t)padding;
                            if (iy >= 0 && ix >= 0 && iy < (ptrdiff_t)h && ix < (ptrdiff_t)w) {
                                size_t xi = ((ni * c + ci) * h + (size_t)iy) * w + (size_t)ix;
                                dx[xi] += dcol[row * cols + (ni * ho + oy) * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

void k_conv_finish(const float *ymat, const float *bias, size_t n,
                   size_t cout, size_t ho, size_t wo, float *y) {
    size_t hw = ho * wo;
    size_t cols = n * hw;
    for (size_t ni = 0; ni < n; ni++) {
        for (size_t co = 0; co < cout; co++) {
            for (size_t p = 0; p < hw; p++) {
                y[(ni * cout + co) * hw + p] = ymat[co * cols + ni * hw + p] + bias[co];
            }
        }
    }
}

void k_maxpool(const float *x, size_t n, size_t c, size_t h, size_t w,
               size_t kernel, size_t stride, size_t padding, float *out) {
    size_t ho = (h + 2 * padding - kernel) / stride + 1;
    size_t wo = (w + 2 * padding - kernel) / stride + 1;
    for (size_t ni = 0; ni < n; ni++) {
        for (size_t ci = 0; ci < c; ci++) {
            for (size_t oy = 0; oy < ho; oy++) {
                for (size_t ox = 0; ox < wo; ox++) {
                    float best = -INFINITY;
                    for (size_t ki = 0; ki < kernel; ki++) {
                        for (size_t kj = 0; kj < kernel; kj++) {
                            ptrdiff_t iy = (ptrdiff_t)(oy * stride + ki) - (ptrdiff_t)padding;
                            ptrdiff_t ix = (ptrdiff_t)(ox * stride + kj) - (ptrdiff_t)padding;
                            if (iy >= 0 && ix >= 0 && iy < (ptrdiff_t)h && ix < (ptrdiff_t)w) {
                                float v = x[((ni * c + ci) * h + (size_t)iy) * w + (size_t)ix];
                                if (v > best) {
                                    best = v;
                                }
                            }
                        }
                    }
                    out[((ni * c + ci) * ho + oy) * wo + ox] = best;
                }
            }
        }
    }
}

void k_maxpool_backward(const float *x, const float *dy, size_t n, size_t c,
                        size_t h, size_t w, size_t kernel, size_t stride,
                        size_t padding, float *dx) {
    size_t ho = (h + 2 * padding - kernel) / stride + 1;
    size_t wo = (w + 2 * padding - kernel) / stride + 1;
    for (size_t i = 0; i < n * c * h * w; i++) {
        dx[i] = 0.0f;
    }
    for (size_t ni = 0; ni < n; ni++) {
        for (size_t ci = 0; ci < c; ci++) {
            for (size_t oy = 0; oy < ho; oy++) {
                for (size_t ox = 0; ox < wo; ox++) {
                    float best = -INFINITY;
                    size_t best_idx = 0;
                    int found = 0;
                    for (size_t ki = 0; ki < kernel; ki++) {
                        for (size_t kj = 0; kj < kernel; kj++) {
                            ptrdiff_t iy = (ptrdiff_t)(oy * stride + ki) - (ptrdiff_t)padding;
                            ptrdiff_t ix = (ptrdiff_t)(ox * stride + kj) - (ptrdiff_t)padding;
                            if (iy >= 0 && ix >= 0 && iy < (ptrdiff_t)h && ix < (ptrdiff_t)w) {
                                size_t idx = ((ni * c + ci) * h + (size_t)iy) * w + (size_t)ix;
                                if (x[idx] > best) {
                                    best = x[idx];
                                    best_idx = idx;
                                    found = 1;
                                }
                            }
                        }
                    }
                    if (found) {
                        dx[best_idx] += dy[((ni * c + ci) * ho + oy) * wo + ox];
                    }
                }
            }
        }
    }
}

void k_relu(const float *x, size_t len, float *out) {
    for (size_t i = 0; i < len; i++) {
        out[i] = x[i] > 0.0f ? x[i] : 0.0f;
    }
}

void k_relu_backward(const float *x, const float *dy, size_t len, float *dx) {
    for (size_t i = 0; i < len; i++) {
        dx[i] = x[i] > 0.0f ? dy[i] : 0.0f;
    }
}

/* sqrt(2/pi) and the cubic coefficient of the tanh approximation. */
#define GELU_C ((float)0.7978845608028654)
#define GELU_A ((float)0.044715)

void k_gelu(const float *x, size_t len, float *out) {
    for (size_t i = 0; i < len; i++) {
        float v = x[i];
        float u = GELU_C * (v + GELU_A * v * v * v);
        out[i] = 0.5f * v * (1.0f + tanhf(u));
    }
}

void k_gelu_backward(const float *x, const float *dy, size_t len, float *dx) {
    for (size_t i = 0; i < len; i++) {
        float v = x[i];
        float u = GELU_C * (v + GELU_A * v * v * v);
        float t = tanhf(u);
        float sech2 = 1.0f - t * t;
        float du = GELU_C * (1.0f + 3.0f * GELU_A * v * v);
        float g = 0.5f * (1.0f + t) + 0.5f * v * sech2 * du;
        dx[i] = dy[i] * g;
    }
}

void k_softmax(const float *x, size_t outer, size_t len, size_t inner,
               float *out) {
    for (size_t o = 0; o < outer; o++) {
        for (size_t i = 0; i < inner; i++) {
            size_t base = o * len * inner + i;
            float max = -INFINITY;
            for (size_t j = 0; j < len; j++) {
                float v = x[base + j * inner];
                if (v > max) {
                    max = v;
                }
            }
            float sum = 0.0f;
            for (size_t j = 0; j < len; j++) {
                float e = expf(x[base + j * inner] - max);
                out[base + j * inner] = e;
                sum += e;
            }
            for (size_t j = 0; j < len; j++) {
                out[base + j * inner] /= sum;
            }
        }
    }
}

void k_softmax_backward(const float *y, const float *dy, size_t outer,
                        size_t len, size_t inner, float *dx) {
    for (size_t o = 0; o < outer; o++) {
        for (size_t i = 0; i < inner; i++) {
            size_t base = o * len * inner + i;
            float dot = 0.0f;
            for (size_t j = 0; j < len; j++) {
                dot += dy[base + j * inner] * y[base + j * inner];
            }
            for (size_t j = 0; j < len; j++) {
                size_t idx = base + j * inner;
                dx[idx] = (dy[idx] - dot) * y[idx];
            }
        }
    }
}

void k_layernorm(const float *x, size_t rows, size_t d, const float *gamma,
                 const float *beta, float eps, float *out) {
    float dn = (float)d;
    for (size_t r = 0; r < rows; r++) {
        const float *row = x + r * d;
        float mean = 0.0f;
        for (size_t j = 0; j < d; j++) {
            mean += row[j];
        }
        mean /= dn;
        float var = 0.0f;
        for (size_t j = 0; j < d; j++) {
            var += (row[j] - mean) * (row[j] - mean);
        }
        var /= dn;
        float rstd = 1.0f / sqrtf(var + eps);
        for (size_t j = 0; j < d; j++) {
            out[r * d + j] = (row[j] - mean) * rstd * gamma[j] + beta[j];
        }
    }
}

void k_layernorm_backward(const float *x, size_t rows, size_t d,
                          const float *gamma, const float *dy, float eps,
                          float *dx) {
    float dn = (float)d;
    for (size_t r = 0; r < rows; r++) {
        const float *row = x + r * d;
        float mean = 0.0f;
        for (size_t j = 0; j < d; j++) {
            mean += row[j];
        }
        mean /= dn;
        float var = 0.0f;
        for (size_t j = 0; j < d; j++) {
            var += (row[j] - mean) * (row[j] - mean);
        }
        var /= dn;
        float rstd = 1.0f / sqrtf(var + eps);
        float sum_dxhat = 0.0f;
        float sum_dxhat_xhat = 0.0f;
        for (size_t j = 0; j < d; j++) {
            float xhat = (row[j] - mean) * rstd;
            float dxhat = dy[r * d + j] * gamma[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        float m1 = sum_dxhat / dn;
        float m2 = sum_dxhat_xhat / dn;
        for (size_t j = 0; j < d; j++) {
            float xhat = (row[j] - mean) * rstd;
            float dxhat = dy[r * d + j] * gamma[j];
            dx[r * d + j] = (dxhat - m1 - xhat * m2) * rstd;
        }
    }
}

void k_layernorm_param_backward(const float *x, size_t rows, size_t d,
                                const float *dy, float eps, float *dgamma,
                                float *dbeta) {
    float dn = (float)d;
    for (size_t j = 0; j < d; j++) {
        dgamma[j] = 0.0f;
        dbeta[j] = 0.0f;
    }
    for (size_t r = 0; r < rows; r++) {
        const float *row = x + r * d;
        float mean = 0.0f;
        for (size_t j = 0; j < d; j++) {
            mean += row[j];
        }
        mean /= dn;
        float var = 0.0f;
        for (size_t j = 0; j < d; j++) {
            var += (row[j] - mean) * (row[j] - mean);
        }
        var /= dn;
        float rstd = 1.0f / sqrtf(var + eps);
        for (size_t j = 0; j < d; j++) {
            float xhat = (row[j] - mean) * rstd;
            dgamma[j] += dy[r * d + j] * xhat;
            dbeta[j] += dy[r * d + j];
        }
    }
}

float k_cross_entropy(const float *logits, const float *onehot, size_t batch,
                      size_t classes) {
    float loss = 0.0f;
    for (size_t b = 0; b < batch; b++) {
        const float *row = logits + b * classes;
        float max = -INFINITY;
        for (size_t c = 0; c < classes; c++) {
            if (row[c] > max) {
                max = row[c];
            }
        }
        float sum = 0.0f;
        for (size_t c = 0; c < classes; c++) {
            sum += expf(row[c] - max);
        }
        float lse = max + logf(sum);
        for (size_t c = 0; c < classes; c++) {
            float p = onehot[b * classes + c];
            if (p != 0.0f) {
                loss -= p * (row[c] - lse);
            }
        }
    }
    return loss / (float)batch;
}

void k_cross_entropy_backward(const float *logits, const float *onehot,
                              size_t batch, size_t classes, float *dlogits) {
    float bn = (float)batch;
    for (size_t b = 0; b < batch; b++) {
        const float *row = logits + b * classes;
        float max = -INFINITY;
        for (size_t c = 0; c < classes; c++) {
            if (row[c] > max) {
                max = row[c];
            }
        }
        float sum = 0.0f;
        for (size_t c = 0; c < classes; c++) {
            sum += expf(row[c] - max);
        }
        for (size_t c = 0; c < classes; c++) {
            float p = expf(row[c] - max) / sum;
            dlogits[b * classes + c] = (p - onehot[b * classes + c]) / bn;
        }
    }
}

void k_add(const float *a, const float *b, size_t len, float *out) {
    for (size_t i = 0; i < len; i++) {
        out[i] = a[i] + b[i];
    }
}

void k_mul(const float *a, const float *b, size_t len, float *out) {
    for (size_t i = 0; i < len; i++) {
        out[i] = a[i] * b[i];
    }
}

void k_scale(const float *a, float factor, size_t len, float *out) {
    for (size_t i = 0; i < len; i++) {
        out[i] = a[i] * factor;
    }
}

void k_sgd_update(const float *w, const float *g, float lr, size_t len,
                  float *out) {
    for (size_t i = 0; i < len; i++) {
        out[i] = w[i] - lr * g[i];
    }
}

void k_copy(const float *a, size_t len, float *out) {
    for (size_t i = 0; i < len; i++) {
        out[i] = a[i];
    }
}

void k_accumulate_add(const float *a, size_t len, float *out) {
    for (size_t i = 0; i < len; i++) {
        out[i] += a[i];
    }
}

void k_transpose(const float *x, const size_t *shape, const size_t *perm,
                 size_t rank, size_t len, float *out) {
    size_t in_strides[8];
    size_t out_shape[8];
    size_t idx[8];
    for (size_t i = 0; i < rank; i++) {
        in_strides[i] = 1;
        out_shape[i] = shape[perm[i]];
        idx[i] = 0;
    }
    for (size_t i = rank - 1; i > 0; i--) {
        in_strides[i - 1] = in_strides[i] * shape[i];
    }
    for (size_t o = 0; o < len; o++) {
        size_t src = 0;
        for (size_t i = 0; i < rank; i++) {
            src += idx[i] * in_strides[perm[i]];
        }
        out[o] = x[src];
        for (size_t i = rank; i > 0; i--) {
            idx[i - 1] += 1;
            if (idx[i - 1] < out_shape[i - 1]) {
                break;
            }
            idx[i - 1] = 0;
        }
    }
}

void k_slice(const float *x, size_t outer, size_t len, size_t inner,
             size_t start, size_t end, float *out) {
    size_t width = end - start;
    for (size_t o = 0; o < outer; o++) {
        for (size_t j = 0; j < width; j++) {
            const float *src = x + (o * len + start + j) * inner;
            float *dst = out + (o * width + j) * inner;
            for (size_t i = 0; i < inner; i++) {
                dst[i] = src[i];
            }
        }
    }
}

void k_pad(const float *x, size_t outer, size_t len, size_t inner,
           size_t start, size_t size, float *out) {
    for (size_t i = 0; i < outer * size * inner; i++) {
        out[i] = 0.0f;
    }
    for (size_t o = 0; o < outer; o++) {
        for (size_t j = 0; j < len; j++) {
            const float *src = x + (o * len + j) * inner;
            float *dst = out + (o * size + start + j) * inner;
            for (size_t i = 0; i < inner; i++) {
                dst[i] = src[i];
            }
        }
    }
}

void k_bias_backward(const float *dy, size_t outer, size_t len, size_t inner,
                     float *db) {
    for (size_t j = 0; j < len; j++) {
        db[j] = 0.0f;
    }
    for (size_t o = 0; o < outer; o++) {
        for (size_t j = 0; j < len; j++) {
            for (size_t i = 0; i < inner; i++) {
                db[j] += dy[(o * len + j) * inner + i];
            }
        }
    }
}
