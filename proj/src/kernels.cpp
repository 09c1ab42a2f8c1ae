#include "lcnn/kernels.hpp"

#include <algorithm>
#include <limits>

namespace lcnn {

template <typename T>
void gemm_nn_acc(int m, int n, int k, const T* a, const T* b, T* c) {
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const T aip = a[static_cast<size_t>(i) * k + p];
            if (aip == T(0)) continue;
            const T* brow = b + static_cast<size_t>(p) * n;
            T* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

template <typename T>
void gemm_nt_acc(int m, int n, int k, const T* a, const T* b, T* c) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + static_cast<size_t>(j) * k;
            T sum = 0;
            for (int p = 0; p < k; ++p) sum += arow[p] * brow[p];
            c[static_cast<size_t>(i) * n + j] += sum;
        }
    }
}

template <typename T>
void gemm_tn_acc(int m, int n, int k, const T* a, const T* b, T* c) {
    for (int p = 0; p < k; ++p) {
        const T* arow = a + static_cast<size_t>(p) * m;
        const T* brow = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const T api = arow[i];
            if (api == T(0)) continue;
            T* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

namespace {

// cols is (inC*kH*kW) x (outH*outW)
template <typename T>
void im2col(const T* img, int channels, int height, int width, int kh, int kw,
            int stride, int pad, int out_h, int out_w, T* cols) {
    for (int c = 0; c < channels; ++c) {
        for (int p = 0; p < kh; ++p) {
            for (int q = 0; q < kw; ++q) {
                T* dst = cols;
                cols += static_cast<size_t>(out_h) * out_w;
                for (int oh = 0; oh < out_h; ++oh) {
                    int ih = oh * stride + p - pad;
                    if (ih < 0 || ih >= height) {
                        for (int ow = 0; ow < out_w; ++ow) *dst++ = T(0);
                        continue;
                    }
                    const T* src = img + (static_cast<size_t>(c) * height + ih) * width;
                    for (int ow = 0; ow < out_w; ++ow) {
                        int iw = ow * stride + q - pad;
                        *dst++ = (iw >= 0 && iw < width) ? src[iw] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_acc(const T* cols, int channels, int height, int width, int kh, int kw,
                int stride, int pad, int out_h, int out_w, T* img) {
    for (int c = 0; c < channels; ++c) {
        for (int p = 0; p < kh; ++p) {
            for (int q = 0; q < kw; ++q) {
                const T* src = cols;
                cols += static_cast<size_t>(out_h) * out_w;
                for (int oh = 0; oh < out_h; ++oh) {
                    int ih = oh * stride + p - pad;
                    if (ih < 0 || ih >= height) {
                        src += out_w;
                        continue;
                    }
                    T* dst = img + (static_cast<size_t>(c) * height + ih) * width;
                    for (int ow = 0; ow < out_w; ++ow) {
                        int iw = ow * stride + q - pad;
                        if (iw >= 0 && iw < width) dst[iw] += src[ow];
                    }
                    src += out_w;
                }
            }
        }
    }
}

template <typename T>
void check_conv_args(const TensorT<T>& input, const TensorT<T>& weights,
                     std::span<const T> bias, int stride, int pad) {
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (pad < 0) throw std::invalid_argument("conv2d: pad must be >= 0");
    if (weights.c() != input.c())
        throw std::invalid_argument("conv2d: input channels (" + std::to_string(input.c()) +
                                    ") != weight input channels (" + std::to_string(weights.c()) + ")");
    if (weights.h() > input.h() + 2 * pad)
        throw std::invalid_argument("conv2d: kernel height " + std::to_string(weights.h()) +
                                    " exceeds padded input height " +
                                    std::to_string(input.h() + 2 * pad));
    if (weights.w() > input.w() + 2 * pad)
        throw std::invalid_argument("conv2d: kernel width " + std::to_string(weights.w()) +
                                    " exceeds padded input width " +
                                    std::to_string(input.w() + 2 * pad));
    if (static_cast<int>(bias.size()) != weights.n())
        throw std::invalid_argument("conv2d: bias length (" + std::to_string(bias.size()) +
                                    ") != output channels (" + std::to_string(weights.n()) + ")");
}

}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weights,
                  std::span<const T> bias, int stride, int pad) {
    check_conv_args(input, weights, bias, stride, pad);

    const int out_c = weights.n();
    const int kh = weights.h(), kw = weights.w();
    const int out_h = conv_out_extent(input.h(), kh, stride, pad);
    const int out_w = conv_out_extent(input.w(), kw, stride, pad);
    const int ckk = input.c() * kh * kw;
    const int ohw = out_h * out_w;

    TensorT<T> out(input.n(), out_c, out_h, out_w);
    std::vector<T> cols(static_cast<size_t>(ckk) * ohw);

    for (int n = 0; n < input.n(); ++n) {
        im2col(input.data() + input.index(n, 0, 0, 0), input.c(), input.h(), input.w(),
               kh, kw, stride, pad, out_h, out_w, cols.data());
        T* dst = out.data() + out.index(n, 0, 0, 0);
        for (int o = 0; o < out_c; ++o)
            std::fill(dst + static_cast<size_t>(o) * ohw,
                      dst + static_cast<size_t>(o + 1) * ohw, bias[o]);
        gemm_nn_acc(out_c, ohw, ckk, weights.data(), cols.data(), dst);
    }
    return out;
}

template <typename T>
void conv2d_backward(const TensorT<T>& input, const TensorT<T>& weights,
                     const TensorT<T>& dout, int stride, int pad,
                     TensorT<T>& dinput, TensorT<T>& dweights, std::span<T> dbias) {
    const int out_c = weights.n();
    const int kh = weights.h(), kw = weights.w();
    const int out_h = conv_out_extent(input.h(), kh, stride, pad);
    const int out_w = conv_out_extent(input.w(), kw, stride, pad);
    if (dout.n() != input.n() || dout.c() != out_c || dout.h() != out_h || dout.w() != out_w)
        throw std::invalid_argument("conv2d_backward: upstream shape " + dout.shape_string() +
                                    " does not match forward output");
    const int ckk = input.c() * kh * kw;
    const int ohw = out_h * out_w;

    if (!dinput.same_shape(input)) dinput = TensorT<T>(input.n(), input.c(), input.h(), input.w());
    dinput.fill(T(0));

    std::vector<T> cols(static_cast<size_t>(ckk) * ohw);
    std::vector<T> dcols(cols.size());

    for (int n = 0; n < input.n(); ++n) {
        const T* dy = dout.data() + dout.index(n, 0, 0, 0);
        im2col(input.data() + input.index(n, 0, 0, 0), input.c(), input.h(), input.w(),
               kh, kw, stride, pad, out_h, out_w, cols.data());
        // dW += dY * cols^T
        gemm_nt_acc(out_c, ckk, ohw, dy, cols.data(), dweights.data());
        // dcols = W^T * dY
        std::fill(dcols.begin(), dcols.end(), T(0));
        gemm_tn_acc(ckk, ohw, out_c, weights.data(), dy, dcols.data());
        col2im_acc(dcols.data(), input.c(), input.h(), input.w(), kh, kw, stride, pad,
                   out_h, out_w, dinput.data() + dinput.index(n, 0, 0, 0));
        for (int o = 0; o < out_c; ++o) {
            T sum = 0;
            const T* row = dy + static_cast<size_t>(o) * ohw;
            for (int i = 0; i < ohw; ++i) sum += row[i];
            dbias[o] += sum;
        }
    }
}

template <typename T>
PoolResult<T> max_pool2d(const TensorT<T>& input, int k, int stride) {
    if (k < 1 || stride < 1)
        throw std::invalid_argument("max_pool2d: window and stride must be >= 1");
    if (k > input.h() || k > input.w())
        throw std::invalid_argument("max_pool2d: window " + std::to_string(k) +
                                    " exceeds input " + std::to_string(input.h()) + "x" +
                                    std::to_string(input.w()));

    const int out_h = pool_out_extent(input.h(), k, stride);
    const int out_w = pool_out_extent(input.w(), k, stride);

    PoolResult<T> res{TensorT<T>(input.n(), input.c(), out_h, out_w), {}};
    res.argmax.resize(res.output.size());

    size_t oi = 0;
    for (int n = 0; n < input.n(); ++n) {
        for (int c = 0; c < input.c(); ++c) {
            const T* plane = input.data() + input.index(n, c, 0, 0);
            for (int oh = 0; oh < out_h; ++oh) {
                const int h0 = oh * stride;
                const int h1 = std::min(h0 + k, input.h());
                for (int ow = 0; ow < out_w; ++ow) {
                    const int w0 = ow * stride;
                    const int w1 = std::min(w0 + k, input.w());
                    T best = plane[h0 * input.w() + w0];
                    int best_idx = h0 * input.w() + w0;
                    for (int ih = h0; ih < h1; ++ih) {
                        for (int iw = w0; iw < w1; ++iw) {
                            T v = plane[ih * input.w() + iw];
                            if (v > best) {
                                best = v;
                                best_idx = ih * input.w() + iw;
                            }
                        }
                    }
                    res.output[oi] = best;
                    res.argmax[oi] = best_idx;
                    ++oi;
                }
            }
        }
    }
    return res;
}

template <typename T>
TensorT<T> max_pool2d_backward(const TensorT<T>& dout, const std::vector<int>& argmax,
                               const std::array<int, 4>& input_shape, int k, int stride) {
    const int out_h = pool_out_extent(input_shape[2], k, stride);
    const int out_w = pool_out_extent(input_shape[3], k, stride);
    if (dout.n() != input_shape[0] || dout.c() != input_shape[1] || dout.h() != out_h ||
        dout.w() != out_w || argmax.size() != dout.size())
        throw std::invalid_argument("max_pool2d_backward: upstream shape " +
                                    dout.shape_string() + " does not match forward output");

    TensorT<T> din(input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    size_t oi = 0;
    for (int n = 0; n < dout.n(); ++n)
        for (int c = 0; c < dout.c(); ++c) {
            T* dst = din.data() + din.index(n, c, 0, 0);
            for (int i = 0; i < out_h * out_w; ++i, ++oi) dst[argmax[oi]] += dout[oi];
        }
    return din;
}

template <typename T>
TensorT<T> fully_connected(const TensorT<T>& input, const TensorT<T>& weights,
                           std::span<const T> bias) {
    const int d = input.c() * input.h() * input.w();
    const int m = weights.c();
    if (weights.n() != d)
        throw std::invalid_argument("fully_connected: flattened input length (" +
                                    std::to_string(d) + ") != weight rows (" +
                                    std::to_string(weights.n()) + ")");
    if (static_cast<int>(bias.size()) != m)
        throw std::invalid_argument("fully_connected: bias length (" +
                                    std::to_string(bias.size()) + ") != outputs (" +
                                    std::to_string(m) + ")");

    TensorT<T> out(input.n(), m, 1, 1);
    for (int n = 0; n < input.n(); ++n)
        for (int j = 0; j < m; ++j) out.at(n, j, 0, 0) = bias[j];
    gemm_nn_acc(input.n(), m, d, input.data(), weights.data(), out.data());
    return out;
}

template <typename T>
void fully_connected_backward(const TensorT<T>& input, const TensorT<T>& weights,
                              const TensorT<T>& dout, TensorT<T>& dinput,
                              TensorT<T>& dweights, std::span<T> dbias) {
    const int d = input.c() * input.h() * input.w();
    const int m = weights.c();
    if (dout.n() != input.n() || dout.c() != m || dout.h() != 1 || dout.w() != 1)
        throw std::invalid_argument("fully_connected_backward: upstream shape " +
                                    dout.shape_string() + " does not match forward output");

    if (!dinput.same_shape(input)) dinput = TensorT<T>(input.n(), input.c(), input.h(), input.w());
    dinput.fill(T(0));

    // dX = dY * W^T, dW += X^T * dY
    gemm_nt_acc(input.n(), d, m, dout.data(), weights.data(), dinput.data());
    gemm_tn_acc(d, m, input.n(), input.data(), dout.data(), dweights.data());
    for (int n = 0; n < input.n(); ++n)
        for (int j = 0; j < m; ++j) dbias[j] += dout.at(n, j, 0, 0);
}

template <typename T>
TensorT<T> crop(const TensorT<T>& input, int top, int left, int out_h, int out_w) {
    if (top < 0 || left < 0 || out_h < 1 || out_w < 1 || top + out_h > input.h() ||
        left + out_w > input.w())
        throw std::invalid_argument("crop: window " + std::to_string(out_h) + "x" +
                                    std::to_string(out_w) + " at (" + std::to_string(top) +
                                    "," + std::to_string(left) + ") outside input " +
                                    input.shape_string());

    TensorT<T> out(input.n(), input.c(), out_h, out_w);
    for (int n = 0; n < input.n(); ++n)
        for (int c = 0; c < input.c(); ++c)
            for (int h = 0; h < out_h; ++h) {
                const T* src = input.data() + input.index(n, c, top + h, left);
                T* dst = out.data() + out.index(n, c, h, 0);
                std::copy(src, src + out_w, dst);
            }
    return out;
}

template <typename T>
TensorT<T> mirror(const TensorT<T>& input) {
    TensorT<T> out(input.n(), input.c(), input.h(), input.w());
    for (int n = 0; n < input.n(); ++n)
        for (int c = 0; c < input.c(); ++c)
            for (int h = 0; h < input.h(); ++h) {
                const T* src = input.data() + input.index(n, c, h, 0);
                T* dst = out.data() + out.index(n, c, h, 0);
                for (int w = 0; w < input.w(); ++w) dst[w] = src[input.w() - 1 - w];
            }
    return out;
}

#define LCNN_INSTANTIATE_KERNELS(T)                                                        \
    template TensorT<T> conv2d<T>(const TensorT<T>&, const TensorT<T>&, std::span<const T>, \
                                  int, int);                                               \
    template void conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, \
                                     int, int, TensorT<T>&, TensorT<T>&, std::span<T>);    \
    template PoolResult<T> max_pool2d<T>(const TensorT<T>&, int, int);                      \
    template TensorT<T> max_pool2d_backward<T>(const TensorT<T>&, const std::vector<int>&,  \
                                               const std::array<int, 4>&, int, int);       \
    template TensorT<T> fully_connected<T>(const TensorT<T>&, const TensorT<T>&,            \
                                           std::span<const T>);                            \
    template void fully_connected_backward<T>(const TensorT<T>&, const TensorT<T>&,         \
                                              const TensorT<T>&, TensorT<T>&, TensorT<T>&,  \
                                              std::span<T>);                               \
    template TensorT<T> crop<T>(const TensorT<T>&, int, int, int, int);                     \
    template TensorT<T> mirror<T>(const TensorT<T>&);                                       \
    template void gemm_nn_acc<T>(int, int, int, const T*, const T*, T*);                    \
    template void gemm_nt_acc<T>(int, int, int, const T*, const T*, T*);                    \
    template void gemm_tn_acc<T>(int, int, int, const T*, const T*, T*);

LCNN_INSTANTIATE_KERNELS(float)
LCNN_INSTANTIATE_KERNELS(double)

}  // namespace lcnn
