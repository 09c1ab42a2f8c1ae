#include "lcnn/layers.hpp"

#include <algorithm>
#include <cmath>

namespace lcnn {

namespace {

template <typename T>
ParamBlockT<T> make_block(const std::string& name, const std::string& layer, InitKind init,
                          int fan_in, T lr_mult, T decay_mult, TensorT<T> value) {
    ParamBlockT<T> b;
    b.name = name;
    b.layer = layer;
    b.init = init;
    b.fan_in = fan_in;
    b.lr_mult = lr_mult;
    b.decay_mult = decay_mult;
    b.grad = value;
    b.vel = value;
    b.value = std::move(value);
    return b;
}

}  // namespace

// ---------------------------------------------------------------- ConvPair

template <typename T>
ConvPairT<T>::ConvPairT(const std::string& name, int in_c, int out_c, int kernel, int stride,
                        int pad, T lr_mult, T decay_mult)
    : LayerT<T>(LayerKind::ConvPair, name),
      in_c_(in_c),
      out_c_(out_c),
      kernel_(kernel),
      stride_(stride),
      pad_(pad) {
    const int fan_in = kernel * kernel * in_c;
    w1_ = make_block(name + "_1.weight", name, InitKind::ConvWeight, fan_in, lr_mult,
                     decay_mult, TensorT<T>(out_c, in_c, kernel, kernel));
    b1_ = make_block(name + "_1.bias", name, InitKind::Bias, fan_in, lr_mult, decay_mult,
                     TensorT<T>(out_c, 1, 1, 1));
    w2_ = make_block(name + "_2.weight", name, InitKind::ConvWeight, fan_in, lr_mult,
                     decay_mult, TensorT<T>(out_c, in_c, kernel, kernel));
    b2_ = make_block(name + "_2.bias", name, InitKind::Bias, fan_in, lr_mult, decay_mult,
                     TensorT<T>(out_c, 1, 1, 1));
}

template <typename T>
TensorT<T> ConvPairT<T>::forward(const TensorT<T>& x, bool, Rng*) {
    cached_input_ = x;
    TensorT<T> y1 = conv2d(x, w1_.value, std::span<const T>(b1_.value.data(), out_c_),
                           stride_, pad_);
    TensorT<T> y2 = conv2d(x, w2_.value, std::span<const T>(b2_.value.data(), out_c_),
                           stride_, pad_);
    TensorT<T> out(x.n(), 2 * out_c_, y1.h(), y1.w());
    const size_t plane = static_cast<size_t>(out_c_) * y1.h() * y1.w();
    for (int n = 0; n < x.n(); ++n) {
        std::copy(y1.data() + n * plane, y1.data() + (n + 1) * plane,
                  out.data() + out.index(n, 0, 0, 0));
        std::copy(y2.data() + n * plane, y2.data() + (n + 1) * plane,
                  out.data() + out.index(n, out_c_, 0, 0));
    }
    return out;
}

template <typename T>
TensorT<T> ConvPairT<T>::backward(const TensorT<T>& dy) {
    if (dy.c() != 2 * out_c_)
        throw std::invalid_argument("conv pair backward: expected " +
                                    std::to_string(2 * out_c_) + " upstream channels, got " +
                                    std::to_string(dy.c()));
    TensorT<T> dy1(dy.n(), out_c_, dy.h(), dy.w());
    TensorT<T> dy2(dy.n(), out_c_, dy.h(), dy.w());
    const size_t plane = static_cast<size_t>(out_c_) * dy.h() * dy.w();
    for (int n = 0; n < dy.n(); ++n) {
        std::copy(dy.data() + dy.index(n, 0, 0, 0), dy.data() + dy.index(n, 0, 0, 0) + plane,
                  dy1.data() + n * plane);
        std::copy(dy.data() + dy.index(n, out_c_, 0, 0),
                  dy.data() + dy.index(n, out_c_, 0, 0) + plane, dy2.data() + n * plane);
    }
    TensorT<T> dx1, dx2;
    conv2d_backward(cached_input_, w1_.value, dy1, stride_, pad_, dx1, w1_.grad,
                    std::span<T>(b1_.grad.data(), out_c_));
    conv2d_backward(cached_input_, w2_.value, dy2, stride_, pad_, dx2, w2_.grad,
                    std::span<T>(b2_.grad.data(), out_c_));
    for (size_t i = 0; i < dx1.size(); ++i) dx1[i] += dx2[i];
    return dx1;
}

template <typename T>
std::vector<ParamBlockT<T>*> ConvPairT<T>::param_blocks() {
    return {&w1_, &b1_, &w2_, &b2_};
}

template <typename T>
std::array<int, 3> ConvPairT<T>::infer_shape(const std::array<int, 3>& chw) const {
    if (chw[0] != in_c_)
        throw std::invalid_argument(this->name() + ": expected " + std::to_string(in_c_) +
                                    " input channels, got " + std::to_string(chw[0]));
    return {2 * out_c_, conv_out_extent(chw[1], kernel_, stride_, pad_),
            conv_out_extent(chw[2], kernel_, stride_, pad_)};
}

// -------------------------------------------------------------------- Conv

template <typename T>
ConvT<T>::ConvT(const std::string& name, int in_c, int out_c, int kernel, int stride, int pad,
                T lr_mult, T decay_mult)
    : LayerT<T>(LayerKind::Conv, name),
      in_c_(in_c),
      out_c_(out_c),
      kernel_(kernel),
      stride_(stride),
      pad_(pad) {
    const int fan_in = kernel * kernel * in_c;
    w_ = make_block(name + ".weight", name, InitKind::ConvWeight, fan_in, lr_mult, decay_mult,
                    TensorT<T>(out_c, in_c, kernel, kernel));
    b_ = make_block(name + ".bias", name, InitKind::Bias, fan_in, lr_mult, decay_mult,
                    TensorT<T>(out_c, 1, 1, 1));
}

template <typename T>
TensorT<T> ConvT<T>::forward(const TensorT<T>& x, bool, Rng*) {
    cached_input_ = x;
    return conv2d(x, w_.value, std::span<const T>(b_.value.data(), out_c_), stride_, pad_);
}

template <typename T>
TensorT<T> ConvT<T>::backward(const TensorT<T>& dy) {
    TensorT<T> dx;
    conv2d_backward(cached_input_, w_.value, dy, stride_, pad_, dx, w_.grad,
                    std::span<T>(b_.grad.data(), out_c_));
    return dx;
}

template <typename T>
std::vector<ParamBlockT<T>*> ConvT<T>::param_blocks() {
    return {&w_, &b_};
}

template <typename T>
std::array<int, 3> ConvT<T>::infer_shape(const std::array<int, 3>& chw) const {
    if (chw[0] != in_c_)
        throw std::invalid_argument(this->name() + ": expected " + std::to_string(in_c_) +
                                    " input channels, got " + std::to_string(chw[0]));
    return {out_c_, conv_out_extent(chw[1], kernel_, stride_, pad_),
            conv_out_extent(chw[2], kernel_, stride_, pad_)};
}

// --------------------------------------------------------------------- MFM

template <typename T>
TensorT<T> MfmT<T>::forward(const TensorT<T>& x, bool, Rng*) {
    if (x.c() % 2 != 0)
        throw std::invalid_argument("mfm: channel count " + std::to_string(x.c()) +
                                    " is odd");
    cached_input_ = x;
    const int half = x.c() / 2;
    TensorT<T> out(x.n(), half, x.h(), x.w());
    const size_t plane = static_cast<size_t>(x.h()) * x.w();
    for (int n = 0; n < x.n(); ++n)
        for (int k = 0; k < half; ++k) {
            const T* a = x.data() + x.index(n, k, 0, 0);
            const T* b = x.data() + x.index(n, k + half, 0, 0);
            T* o = out.data() + out.index(n, k, 0, 0);
            for (size_t i = 0; i < plane; ++i) o[i] = std::max(a[i], b[i]);
        }
    return out;
}

// Upstream routes to the first half on ties (a >= b), so exactly one of the
// two candidates is nonzero per output position.
template <typename T>
TensorT<T> MfmT<T>::backward(const TensorT<T>& dy) {
    const TensorT<T>& x = cached_input_;
    const int half = x.c() / 2;
    if (dy.n() != x.n() || dy.c() != half || dy.h() != x.h() || dy.w() != x.w())
        throw std::invalid_argument("mfm backward: upstream shape " + dy.shape_string() +
                                    " does not match forward output");
    TensorT<T> dx(x.n(), x.c(), x.h(), x.w());
    const size_t plane = static_cast<size_t>(x.h()) * x.w();
    for (int n = 0; n < x.n(); ++n)
        for (int k = 0; k < half; ++k) {
            const T* a = x.data() + x.index(n, k, 0, 0);
            const T* b = x.data() + x.index(n, k + half, 0, 0);
            const T* g = dy.data() + dy.index(n, k, 0, 0);
            T* da = dx.data() + dx.index(n, k, 0, 0);
            T* db = dx.data() + dx.index(n, k + half, 0, 0);
            for (size_t i = 0; i < plane; ++i) {
                if (a[i] >= b[i])
                    da[i] = g[i];
                else
                    db[i] = g[i];
            }
        }
    return dx;
}

template <typename T>
std::array<int, 3> MfmT<T>::infer_shape(const std::array<int, 3>& chw) const {
    if (chw[0] % 2 != 0)
        throw std::invalid_argument("mfm: channel count " + std::to_string(chw[0]) +
                                    " is odd");
    return {chw[0] / 2, chw[1], chw[2]};
}

// -------------------------------------------------------------------- ReLU

template <typename T>
TensorT<T> ReluT<T>::forward(const TensorT<T>& x, bool, Rng*) {
    cached_input_ = x;
    TensorT<T> out(x.n(), x.c(), x.h(), x.w());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    return out;
}

template <typename T>
TensorT<T> ReluT<T>::backward(const TensorT<T>& dy) {
    if (!dy.same_shape(cached_input_))
        throw std::invalid_argument("relu backward: upstream shape " + dy.shape_string() +
                                    " does not match forward input");
    TensorT<T> dx(dy.n(), dy.c(), dy.h(), dy.w());
    for (size_t i = 0; i < dy.size(); ++i) dx[i] = cached_input_[i] > T(0) ? dy[i] : T(0);
    return dx;
}

// ----------------------------------------------------------------- MaxPool

template <typename T>
TensorT<T> MaxPoolT<T>::forward(const TensorT<T>& x, bool, Rng*) {
    cached_shape_ = x.shape();
    auto res = max_pool2d(x, k_, stride_);
    cached_argmax_ = std::move(res.argmax);
    return std::move(res.output);
}

template <typename T>
TensorT<T> MaxPoolT<T>::backward(const TensorT<T>& dy) {
    return max_pool2d_backward(dy, cached_argmax_, cached_shape_, k_, stride_);
}

template <typename T>
std::array<int, 3> MaxPoolT<T>::infer_shape(const std::array<int, 3>& chw) const {
    return {chw[0], pool_out_extent(chw[1], k_, stride_), pool_out_extent(chw[2], k_, stride_)};
}

// ---------------------------------------------------------- FullyConnected

template <typename T>
FullyConnectedT<T>::FullyConnectedT(const std::string& name, int in_d, int out_d, T lr_mult,
                                    T decay_mult)
    : LayerT<T>(LayerKind::FullyConnected, name), in_d_(in_d), out_d_(out_d) {
    w_ = make_block(name + ".weight", name, InitKind::FcWeight, in_d, lr_mult, decay_mult,
                    TensorT<T>(in_d, out_d, 1, 1));
    b_ = make_block(name + ".bias", name, InitKind::Bias, in_d, lr_mult, decay_mult,
                    TensorT<T>(out_d, 1, 1, 1));
}

template <typename T>
TensorT<T> FullyConnectedT<T>::forward(const TensorT<T>& x, bool, Rng*) {
    cached_input_ = x;
    return fully_connected(x, w_.value, std::span<const T>(b_.value.data(), out_d_));
}

template <typename T>
TensorT<T> FullyConnectedT<T>::backward(const TensorT<T>& dy) {
    TensorT<T> dx;
    fully_connected_backward(cached_input_, w_.value, dy, dx, w_.grad,
                             std::span<T>(b_.grad.data(), out_d_));
    return dx;
}

template <typename T>
std::vector<ParamBlockT<T>*> FullyConnectedT<T>::param_blocks() {
    return {&w_, &b_};
}

template <typename T>
std::array<int, 3> FullyConnectedT<T>::infer_shape(const std::array<int, 3>& chw) const {
    const int d = chw[0] * chw[1] * chw[2];
    if (d != in_d_)
        throw std::invalid_argument(this->name() + ": flattened input length " +
                                    std::to_string(d) + " != expected " +
                                    std::to_string(in_d_));
    return {out_d_, 1, 1};
}

// ----------------------------------------------------------------- Dropout

template <typename T>
DropoutT<T>::DropoutT(const std::string& name, T ratio)
    : LayerT<T>(LayerKind::Dropout, name) {
    set_ratio(ratio);
}

template <typename T>
void DropoutT<T>::set_ratio(T ratio) {
    if (ratio < T(0) || ratio >= T(1))
        throw std::invalid_argument("dropout: ratio must be in [0,1), got " +
                                    std::to_string(ratio));
    ratio_ = ratio;
}

template <typename T>
TensorT<T> DropoutT<T>::forward(const TensorT<T>& x, bool train, Rng* rng) {
    last_train_ = train && ratio_ > T(0);
    if (!last_train_) return x;

    if (!fixed_mask_.empty()) {
        if (fixed_mask_.size() != x.size())
            throw std::invalid_argument("dropout: fixed mask size does not match input");
        mask_ = fixed_mask_;
    } else {
        if (!rng)
            throw std::invalid_argument("dropout: train-mode forward needs an rng");
        mask_.resize(x.size());
        for (size_t i = 0; i < x.size(); ++i)
            mask_[i] = rng->bernoulli(static_cast<double>(ratio_)) ? 0 : 1;
    }

    const T scale = T(1) / (T(1) - ratio_);
    TensorT<T> out(x.n(), x.c(), x.h(), x.w());
    for (size_t i = 0; i < x.size(); ++i) out[i] = mask_[i] ? x[i] * scale : T(0);
    return out;
}

template <typename T>
TensorT<T> DropoutT<T>::backward(const TensorT<T>& dy) {
    if (!last_train_) return dy;
    if (mask_.size() != dy.size())
        throw std::invalid_argument("dropout backward: upstream size does not match mask");
    const T scale = T(1) / (T(1) - ratio_);
    TensorT<T> dx(dy.n(), dy.c(), dy.h(), dy.w());
    for (size_t i = 0; i < dy.size(); ++i) dx[i] = mask_[i] ? dy[i] * scale : T(0);
    return dx;
}

// ---------------------------------------------------------- softmax + loss

template <typename T>
std::pair<T, std::vector<T>> softmax_cross_entropy(std::span<const T> logits, int label) {
    const int k = static_cast<int>(logits.size());
    if (label < 0 || label >= k)
        throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                    " out of range [0," + std::to_string(k) + ")");
    T mx = logits[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
    T sum = 0;
    std::vector<T> grad(k);
    for (int i = 0; i < k; ++i) {
        grad[i] = std::exp(logits[i] - mx);
        sum += grad[i];
    }
    const T loss = std::log(sum) - (logits[label] - mx);
    for (int i = 0; i < k; ++i) grad[i] /= sum;
    grad[label] -= T(1);
    return {loss, std::move(grad)};
}

template <typename T>
std::pair<T, TensorT<T>> softmax_cross_entropy_batch(const TensorT<T>& logits,
                                                     std::span<const int> labels) {
    if (static_cast<int>(labels.size()) != logits.n())
        throw std::invalid_argument("softmax_cross_entropy_batch: " +
                                    std::to_string(labels.size()) + " labels for batch of " +
                                    std::to_string(logits.n()));
    const int k = logits.c() * logits.h() * logits.w();
    TensorT<T> dlogits(logits.n(), logits.c(), logits.h(), logits.w());
    T total = 0;
    const T inv_n = T(1) / static_cast<T>(logits.n());
    for (int n = 0; n < logits.n(); ++n) {
        auto [loss, grad] = softmax_cross_entropy(
            std::span<const T>(logits.data() + static_cast<size_t>(n) * k, k), labels[n]);
        total += loss;
        T* dst = dlogits.data() + static_cast<size_t>(n) * k;
        for (int i = 0; i < k; ++i) dst[i] = grad[i] * inv_n;
    }
    return {total * inv_n, std::move(dlogits)};
}

#define LCNN_INSTANTIATE_LAYERS(T)                                                  \
    template class ConvPairT<T>;                                                    \
    template class ConvT<T>;                                                        \
    template class MfmT<T>;                                                         \
    template class ReluT<T>;                                                        \
    template class MaxPoolT<T>;                                                     \
    template class FullyConnectedT<T>;                                              \
    template class DropoutT<T>;                                                     \
    template std::pair<T, std::vector<T>> softmax_cross_entropy<T>(std::span<const T>, \
                                                                   int);            \
    template std::pair<T, TensorT<T>> softmax_cross_entropy_batch<T>(               \
        const TensorT<T>&, std::span<const int>);

LCNN_INSTANTIATE_LAYERS(float)
LCNN_INSTANTIATE_LAYERS(double)

}  // namespace lcnn
