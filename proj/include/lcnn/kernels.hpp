#pragma once

#include <span>
#include <vector>

#include "lcnn/tensor.hpp"

namespace lcnn {

// Numeric kernels shared by all layers. Convolution is lowered to a patch
// matrix (im2col) and a small GEMM; the contract is elementwise equality
// with a direct nested-loop reference.

inline int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// ceil-mode with border-clipped windows; the trailing window is dropped if
// it would start past the input
inline int pool_out_extent(int in, int k, int stride) {
    int out = (in - k + stride - 1) / stride + 1;
    if ((out - 1) * stride >= in) --out;
    return out;
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weights,
                  std::span<const T> bias, int stride, int pad);

template <typename T>
void conv2d_backward(const TensorT<T>& input, const TensorT<T>& weights,
                     const TensorT<T>& dout, int stride, int pad,
                     TensorT<T>& dinput, TensorT<T>& dweights, std::span<T> dbias);

template <typename T>
struct PoolResult {
    TensorT<T> output;
    std::vector<int> argmax;  // flat (h*W + w) input index per output element
};

template <typename T>
PoolResult<T> max_pool2d(const TensorT<T>& input, int k, int stride);

template <typename T>
TensorT<T> max_pool2d_backward(const TensorT<T>& dout, const std::vector<int>& argmax,
                               const std::array<int, 4>& input_shape, int k, int stride);

// input of any (C,H,W) flattened per batch item to D = C*H*W; weights D x M
template <typename T>
TensorT<T> fully_connected(const TensorT<T>& input, const TensorT<T>& weights,
                           std::span<const T> bias);

template <typename T>
void fully_connected_backward(const TensorT<T>& input, const TensorT<T>& weights,
                              const TensorT<T>& dout, TensorT<T>& dinput,
                              TensorT<T>& dweights, std::span<T> dbias);

template <typename T>
TensorT<T> crop(const TensorT<T>& input, int top, int left, int out_h, int out_w);

template <typename T>
TensorT<T> mirror(const TensorT<T>& input);

// row-major GEMMs, accumulate into C
template <typename T>
void gemm_nn_acc(int m, int n, int k, const T* a, const T* b, T* c);
template <typename T>
void gemm_nt_acc(int m, int n, int k, const T* a, const T* b, T* c);
template <typename T>
void gemm_tn_acc(int m, int n, int k, const T* a, const T* b, T* c);

}  // namespace lcnn
