#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lcnn/kernels.hpp"
#include "lcnn/tensor.hpp"

namespace lcnn {

enum class LayerKind { ConvPair, Conv, Mfm, Relu, MaxPool, FullyConnected, Dropout };

enum class InitKind { ConvWeight, FcWeight, Bias };

template <typename T>
struct ParamBlockT {
    std::string name;   // e.g. "conv1_1.weight"
    std::string layer;  // owning layer, e.g. "conv1"
    InitKind init = InitKind::Bias;
    int fan_in = 0;
    T lr_mult = 1;
    T decay_mult = 1;
    bool fc2_decay = false;  // block decays at the fc2 rate instead of the base rate
    TensorT<T> value;
    TensorT<T> grad;  // accumulated; zeroed via zero_grad()
    TensorT<T> vel;   // momentum buffer, same shape as value

    void zero_grad() { grad.fill(T(0)); }
};

// Forward/backward pair shares per-invocation caches, so one layer instance
// must not run both concurrently; distinct instances are independent.
template <typename T>
class LayerT {
public:
    LayerT(LayerKind kind, std::string name) : kind_(kind), name_(std::move(name)) {}
    virtual ~LayerT() = default;

    LayerKind kind() const { return kind_; }
    const std::string& name() const { return name_; }

    virtual TensorT<T> forward(const TensorT<T>& x, bool train, Rng* rng) = 0;
    virtual TensorT<T> backward(const TensorT<T>& dy) = 0;
    virtual std::vector<ParamBlockT<T>*> param_blocks() { return {}; }
    virtual std::array<int, 3> infer_shape(const std::array<int, 3>& chw) const = 0;

private:
    LayerKind kind_;
    std::string name_;
};

// Two independent convolutions with identical geometry; outputs concatenated
// along channels to feed MFM. Sub-layer parameters are named <name>_1 / <name>_2.
template <typename T>
class ConvPairT : public LayerT<T> {
public:
    ConvPairT(const std::string& name, int in_c, int out_c, int kernel, int stride, int pad,
              T lr_mult = 1, T decay_mult = 1);

    TensorT<T> forward(const TensorT<T>& x, bool train, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& dy) override;
    std::vector<ParamBlockT<T>*> param_blocks() override;
    std::array<int, 3> infer_shape(const std::array<int, 3>& chw) const override;

    int out_channels() const { return out_c_; }

private:
    int in_c_, out_c_, kernel_, stride_, pad_;
    ParamBlockT<T> w1_, b1_, w2_, b2_;
    TensorT<T> cached_input_;
};

// Single convolution (the 1x1 NIN rows of network B)
template <typename T>
class ConvT : public LayerT<T> {
public:
    ConvT(const std::string& name, int in_c, int out_c, int kernel, int stride, int pad,
          T lr_mult = 1, T decay_mult = 1);

    TensorT<T> forward(const TensorT<T>& x, bool train, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& dy) override;
    std::vector<ParamBlockT<T>*> param_blocks() override;
    std::array<int, 3> infer_shape(const std::array<int, 3>& chw) const override;

private:
    int in_c_, out_c_, kernel_, stride_, pad_;
    ParamBlockT<T> w_, b_;
    TensorT<T> cached_input_;
};

template <typename T>
class MfmT : public LayerT<T> {
public:
    explicit MfmT(const std::string& name) : LayerT<T>(LayerKind::Mfm, name) {}

    TensorT<T> forward(const TensorT<T>& x, bool train, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& dy) override;
    std::array<int, 3> infer_shape(const std::array<int, 3>& chw) const override;

private:
    TensorT<T> cached_input_;
};

template <typename T>
class ReluT : public LayerT<T> {
public:
    explicit ReluT(const std::string& name) : LayerT<T>(LayerKind::Relu, name) {}

    TensorT<T> forward(const TensorT<T>& x, bool train, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& dy) override;
    std::array<int, 3> infer_shape(const std::array<int, 3>& chw) const override { return chw; }

private:
    TensorT<T> cached_input_;
};

template <typename T>
class MaxPoolT : public LayerT<T> {
public:
    MaxPoolT(const std::string& name, int k, int stride)
        : LayerT<T>(LayerKind::MaxPool, name), k_(k), stride_(stride) {}

    TensorT<T> forward(const TensorT<T>& x, bool train, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& dy) override;
    std::array<int, 3> infer_shape(const std::array<int, 3>& chw) const override;

private:
    int k_, stride_;
    std::array<int, 4> cached_shape_{};
    std::vector<int> cached_argmax_;
};

template <typename T>
class FullyConnectedT : public LayerT<T> {
public:
    FullyConnectedT(const std::string& name, int in_d, int out_d, T lr_mult = 1,
                    T decay_mult = 1);

    TensorT<T> forward(const TensorT<T>& x, bool train, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& dy) override;
    std::vector<ParamBlockT<T>*> param_blocks() override;
    std::array<int, 3> infer_shape(const std::array<int, 3>& chw) const override;

private:
    int in_d_, out_d_;
    ParamBlockT<T> w_, b_;
    TensorT<T> cached_input_;
};

// Inverted dropout: train mode zeroes with probability `ratio` and scales
// survivors by 1/(1-ratio); test mode is the identity.
template <typename T>
class DropoutT : public LayerT<T> {
public:
    DropoutT(const std::string& name, T ratio);

    TensorT<T> forward(const TensorT<T>& x, bool train, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& dy) override;
    std::array<int, 3> infer_shape(const std::array<int, 3>& chw) const override { return chw; }

    void set_ratio(T ratio);
    T ratio() const { return ratio_; }

    // pins the mask for gradient checks; empty clears
    void set_fixed_mask(std::vector<uint8_t> keep) { fixed_mask_ = std::move(keep); }

private:
    T ratio_;
    bool last_train_ = false;
    std::vector<uint8_t> mask_;
    std::vector<uint8_t> fixed_mask_;
};

template <typename T>
std::pair<T, std::vector<T>> softmax_cross_entropy(std::span<const T> logits, int label);

// mean loss over the batch; gradient scaled by 1/N to match
template <typename T>
std::pair<T, TensorT<T>> softmax_cross_entropy_batch(const TensorT<T>& logits,
                                                     std::span<const int> labels);

using Layer = LayerT<float>;
using ParamBlock = ParamBlockT<float>;

}  // namespace lcnn
