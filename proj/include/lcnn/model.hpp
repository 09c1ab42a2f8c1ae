#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lcnn/layers.hpp"
#include "lcnn/tensor.hpp"

namespace lcnn {

enum class Activation { Mfm, Relu };

struct ArchOptions {
    std::string arch = "A";  // "A" or "B"
    int num_classes = 10575;
    float width_mult = 1.0f;
    Activation activation = Activation::Mfm;
    bool nin_mfm = false;  // experimental MFM after the 1x1 NIN layers
    float dropout_ratio = 0.7f;
};

struct LayerDesc {
    LayerKind kind;
    std::string name;
    int kernel = 0;
    int stride = 1;
    int pad = 0;
    int in_channels = 0;  // convs: input channels; fc: flattened input length
    int out_channels = 0; // convs: channels per half for pairs; fc: outputs
    float lr_mult = 1.0f;
    float decay_mult = 1.0f;
    float dropout_ratio = 0.0f;
    bool use_fc2_decay = false;
};

struct NamedShape {
    std::string name;
    int c, h, w;
};

// Ordered layer plan plus the input geometry (1 x 128 x 128 grayscale).
struct ArchSpec {
    ArchOptions options;
    std::vector<LayerDesc> layers;
    int input_channels = 1;
    int input_size = 128;

    // one row per parameterized/pooling/activation step, matching the
    // per-half convention for paired convolutions
    std::vector<NamedShape> shape_trace() const;
};

ArchSpec make_arch_spec(const ArchOptions& options);

class NetworkModel {
public:
    explicit NetworkModel(const ArchOptions& options);

    const ArchSpec& arch() const { return spec_; }
    const ArchOptions& options() const { return spec_.options; }
    int num_classes() const { return spec_.options.num_classes; }
    int input_size() const { return spec_.input_size; }
    int embedding_dim() const;

    Tensor forward(const Tensor& x, bool train = false, Rng* rng = nullptr);
    Tensor backward(const Tensor& dlogits);

    // test-mode forward stopping after fc1; the 256-d face representation
    Tensor extract_features(const Tensor& x);

    void zero_grads();
    std::vector<ParamBlock*> param_blocks();
    std::vector<const ParamBlock*> param_blocks() const;
    const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }
    std::vector<std::unique_ptr<Layer>>& layers() { return layers_; }

    void set_dropout_ratio(float ratio);

private:
    void check_input(const Tensor& x) const;

    ArchSpec spec_;
    std::vector<std::unique_ptr<Layer>> layers_;
    int embedding_layer_ = -1;  // index of fc1
};

NetworkModel build_network(const ArchOptions& options);
NetworkModel build_network_a();
NetworkModel build_network_b();

// fresh model with the same options and copied parameter values
NetworkModel clone_network(const NetworkModel& model);

// conv ~ Uniform(-sqrt(3/fan_in), +sqrt(3/fan_in)), fc ~ Gaussian(0, 0.01),
// biases zero
void init_weights(NetworkModel& model, Rng& rng);

enum class CountConvention { Paper, True };

struct ParamCountRow {
    std::string name;
    long long count;
};

struct ParamCounts {
    std::vector<ParamCountRow> rows;
    long long total = 0;
};

ParamCounts count_parameters(const NetworkModel& model, CountConvention convention);

// "#param" display string: count/1000 truncated to `decimals` digits,
// thousands-separated integer part
std::string format_kparam(long long count, int decimals);

}  // namespace lcnn
