/* Reference kernel library for generated training-step programs.
 *
 * Every kernel fixes its iteration order (row-major outputs, ascending
 * reduction index) to match the host interpreter bit for bit on identical
 * inputs. Scalar C99 only: no SIMD, no threads, no FMA contraction (build
 * with -ffp-contract=off).
 */
#ifndef KERNELS_H
#define KERNELS_H

#include <stddef.h>

/* out[M,N] = op(a)op(b) (+ bias); op transposes when the flag is set.
 * a is row-major [a_rows, a_cols]; accumulation over k ascending. */
void k_gemm(const float *a, size_t a_cols, int trans_a,
            const float *b, size_t b_cols, int trans_b,
            const float *bias, size_t m, size_t n, size_t k, float *out);

/* Same contract as k_gemm, computed in (mt x nt x kt) tiles with remainder
 * handling. With kt == k each output element accumulates over the full
 * reduction in one pass, which reproduces k_gemm exactly; split reductions
 * regroup the additions and may differ in the last bits. */
void k_gemm_tiled(const float *a, size_t a_cols, int trans_a,
                  const float *b, size_t b_cols, int trans_b,
                  const float *bias, size_t m, size_t n, size_t k,
                  size_t mt, size_t nt, size_t kt, float *out);

/* Unfold x [N,C,H,W] into the patch matrix col [C*k*k, N*Ho*Wo]. */
void k_im2col(const float *x, size_t n, size_t c, size_t h, size_t w,
              size_t kernel, size_t stride, size_t padding, float *col);

/* Adjoint of k_im2col: scatter-add dcol back into dx [N,C,H,W]. */
void k_col2im(const float *dcol, size_t n, size_t c, size_t h, size_t w,
              size_t kernel, size_t stride, size_t padding, float *dx);

/* y[(ni*cout+co)*ho*wo + p] = ymat[co*cols + ni*ho*wo + p] + bias[co] */
void k_conv_finish(const float *ymat, const float *bias, size_t n,
                   size_t cout, size_t ho, size_t wo, float *y);

void k_maxpool(const float *x, size_t n, size_t c, size_t h, size_t w,
               size_t kernel, size_t stride, size_t padding, float *out);

/* Routes dy to the first maximum of each window (k_maxpool's tie rule). */
void k_maxpool_backward(const float *x, const float *dy, size_t n, size_t c,
                        size_t h, size_t w, size_t kernel, size_t stride,
                        size_t padding, float *dx);

void k_relu(const float *x, size_t len, float *out);
void k_relu_backward(const float *x, const float *dy, size_t len, float *dx);

/* tanh-approximation GELU and its exact analytic derivative. */
void k_gelu(const float *x, size_t len, float *out);
void k_gelu_backward(const float *x, const float *dy, size_t len, float *dx);

/* Stable softmax over the middle extent of an (outer, len, inner) split. */
void k_softmax(const float *x, size_t outer, size_t len, size_t inner,
               float *out);
void k_softmax_backward(const float *y, const float *dy, size_t outer,
                        size_t len, size_t inner, float *dx);

/* LayerNorm over the last axis (d) with affine parameters. */
void k_layernorm(const float *x, size_t rows, size_t d, const float *gamma,
                 const float *beta, float eps, float *out);
void k_layernorm_backward(const float *x, size_t rows, size_t d,
                          const float *gamma, const float *dy, float eps,
                          float *dx);
void k_layernorm_param_backward(const float *x, size_t rows, size_t d,
                                const float *dy, float eps, float *dgamma,
                                float *dbeta);

/* Mean cross-entropy over the batch from raw logits and one-hot labels. */
float k_cross_entropy(const float *logits, const float *onehot, size_t batch,
                      size_t classes);
void k_cross_entropy_backward(const float *logits, const float *onehot,
                              size_t batch, size_t classes, float *dlogits);

void k_add(const float *a, const float *b, size_t len, float *out);
void k_mul(const float *a, const float *b, size_t len, float *out);
void k_scale(const float *a, float factor, size_t len, float *out);
void k_sgd_update(const float *w, const float *g, float lr, size_t len,
                  float *out);
void k_copy(const float *a, size_t len, float *out);
void k_accumulate_add(const float *a, size_t len, float *out);

/* General permutation copy; rank at most 8. */
void k_transpose(const float *x, const size_t *shape, const size_t *perm,
                 size_t rank, size_t len, float *out);

/* out = x[.., start..end, ..] over an (outer, len, inner) split. */
void k_slice(const float *x, size_t outer, size_t len, size_t inner,
             size_t start, size_t end, float *out);

/* Adjoint of k_slice: embed x into zeros of extent `size` at `start`. */
void k_pad(const float *x, size_t outer, size_t len, size_t inner,
           size_t start, size_t size, float *out);

/* db[j] = sum of dy over every axis except the (outer, len, inner) middle. */
void k_bias_backward(const float *dy, size_t outer, size_t len, size_t inner,
                     float *db);

#endif /* KERNELS_H */
