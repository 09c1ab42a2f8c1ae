#include "lcnn/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lcnn {

namespace {

int scaled(int channels, float mult) {
    return std::max(1, static_cast<int>(std::lround(channels * mult)));
}

struct SpecBuilder {
    ArchSpec spec;
    int c, h, w;

    explicit SpecBuilder(const ArchOptions& options) {
        spec.options = options;
        c = spec.input_channels;
        h = w = spec.input_size;
    }

    // a conv-activation row of Table 1: a paired convolution + MFM by
    // default, a single convolution + ReLU in the comparison configuration
    void conv_block(const std::string& name, int kernel, int pad, int out_c) {
        if (spec.options.activation == Activation::Mfm) {
            spec.layers.push_back({LayerKind::ConvPair, name, kernel, 1, pad, c, out_c,
                                   1.0f, 1.0f, 0.0f});
            spec.layers.push_back({LayerKind::Mfm, mfm_name(name), 0, 1, 0, 2 * out_c,
                                   out_c, 1.0f, 1.0f, 0.0f});
        } else {
            spec.layers.push_back({LayerKind::Conv, name, kernel, 1, pad, c, out_c, 1.0f,
                                   1.0f, 0.0f});
            spec.layers.push_back({LayerKind::Relu, "relu" + name.substr(4), 0, 1, 0,
                                   out_c, out_c, 1.0f, 1.0f, 0.0f});
        }
        h = conv_out_extent(h, kernel, 1, pad);
        w = conv_out_extent(w, kernel, 1, pad);
        c = out_c;
    }

    // 1x1 NIN row; channel-preserving, no activation unless nin_mfm is set
    void nin(const std::string& name) {
        if (spec.options.nin_mfm) {
            spec.layers.push_back({LayerKind::ConvPair, name, 1, 1, 0, c, c, 1.0f, 1.0f,
                                   0.0f});
            spec.layers.push_back({LayerKind::Mfm, name + "_mfm", 0, 1, 0, 2 * c, c, 1.0f,
                                   1.0f, 0.0f});
        } else {
            spec.layers.push_back({LayerKind::Conv, name, 1, 1, 0, c, c, 1.0f, 1.0f, 0.0f});
        }
    }

    void pool(const std::string& name) {
        spec.layers.push_back({LayerKind::MaxPool, name, 2, 2, 0, c, c, 1.0f, 1.0f, 0.0f});
        h = pool_out_extent(h, 2, 2);
        w = pool_out_extent(w, 2, 2);
    }

    void fc(const std::string& name, int out_d, bool fc2_decay = false) {
        spec.layers.push_back({LayerKind::FullyConnected, name, 0, 1, 0, c * h * w, out_d,
                               1.0f, 1.0f, 0.0f, fc2_decay});
        c = out_d;
        h = w = 1;
    }

    void dropout(const std::string& name, float ratio) {
        spec.layers.push_back({LayerKind::Dropout, name, 0, 1, 0, c, c, 1.0f, 1.0f, ratio});
    }

    static std::string mfm_name(const std::string& conv_name) {
        // conv1 -> mfm1, conv5 -> mfm5
        return "mfm" + conv_name.substr(4);
    }
};

}  // namespace

ArchSpec make_arch_spec(const ArchOptions& options) {
    if (options.arch != "A" && options.arch != "B")
        throw std::invalid_argument("unknown architecture '" + options.arch +
                                    "' (expected A or B)");
    if (options.num_classes < 2)
        throw std::invalid_argument("num_classes must be >= 2");

    SpecBuilder b(options);
    const float m = options.width_mult;

    if (options.arch == "A") {
        b.conv_block("conv1", 9, 0, scaled(48, m));
        b.pool("pool1");
        b.conv_block("conv2", 5, 0, scaled(96, m));
        b.pool("pool2");
        b.conv_block("conv3", 5, 0, scaled(128, m));
        b.pool("pool3");
        b.conv_block("conv4", 4, 0, scaled(192, m));
        b.pool("pool4");
    } else {
        b.conv_block("conv1", 5, 2, scaled(48, m));
        b.pool("pool1");
        b.nin("conv2_a");
        b.conv_block("conv2", 3, 1, scaled(96, m));
        b.pool("pool2");
        b.nin("conv3_a");
        b.conv_block("conv3", 3, 1, scaled(192, m));
        b.pool("pool3");
        b.nin("conv4_a");
        b.conv_block("conv4", 3, 1, scaled(128, m));
        b.pool("pool4");
        b.nin("conv5_a");
        b.conv_block("conv5", 3, 1, scaled(128, m));
        b.pool("pool5");
    }
    b.fc("fc1", 256);
    b.dropout("drop1", options.dropout_ratio);
    b.fc("fc2", options.num_classes, /*fc2_decay=*/true);
    return std::move(b.spec);
}

std::vector<NamedShape> ArchSpec::shape_trace() const {
    std::vector<NamedShape> rows;
    int c = input_channels, h = input_size, w = input_size;
    for (const auto& d : layers) {
        switch (d.kind) {
            case LayerKind::ConvPair: {
                int oh = conv_out_extent(h, d.kernel, d.stride, d.pad);
                int ow = conv_out_extent(w, d.kernel, d.stride, d.pad);
                rows.push_back({d.name + "_1", d.out_channels, oh, ow});
                rows.push_back({d.name + "_2", d.out_channels, oh, ow});
                c = 2 * d.out_channels;
                h = oh;
                w = ow;
                break;
            }
            case LayerKind::Conv: {
                h = conv_out_extent(h, d.kernel, d.stride, d.pad);
                w = conv_out_extent(w, d.kernel, d.stride, d.pad);
                c = d.out_channels;
                rows.push_back({d.name, c, h, w});
                break;
            }
            case LayerKind::Mfm:
                c /= 2;
                rows.push_back({d.name, c, h, w});
                break;
            case LayerKind::Relu:
                break;
            case LayerKind::MaxPool:
                h = pool_out_extent(h, d.kernel, d.stride);
                w = pool_out_extent(w, d.kernel, d.stride);
                rows.push_back({d.name, c, h, w});
                break;
            case LayerKind::FullyConnected:
                c = d.out_channels;
                h = w = 1;
                rows.push_back({d.name, c, 1, 1});
                break;
            case LayerKind::Dropout:
                break;
        }
    }
    return rows;
}

NetworkModel::NetworkModel(const ArchOptions& options) : spec_(make_arch_spec(options)) {
    std::array<int, 3> chw{spec_.input_channels, spec_.input_size, spec_.input_size};
    for (const auto& d : spec_.layers) {
        std::unique_ptr<Layer> layer;
        switch (d.kind) {
            case LayerKind::ConvPair:
                layer = std::make_unique<ConvPairT<float>>(d.name, d.in_channels,
                                                           d.out_channels, d.kernel,
                                                           d.stride, d.pad, d.lr_mult,
                                                           d.decay_mult);
                break;
            case LayerKind::Conv:
                layer = std::make_unique<ConvT<float>>(d.name, d.in_channels,
                                                       d.out_channels, d.kernel, d.stride,
                                                       d.pad, d.lr_mult, d.decay_mult);
                break;
            case LayerKind::Mfm:
                layer = std::make_unique<MfmT<float>>(d.name);
                break;
            case LayerKind::Relu:
                layer = std::make_unique<ReluT<float>>(d.name);
                break;
            case LayerKind::MaxPool:
                layer = std::make_unique<MaxPoolT<float>>(d.name, d.kernel, d.stride);
                break;
            case LayerKind::FullyConnected:
                layer = std::make_unique<FullyConnectedT<float>>(d.name, d.in_channels,
                                                                 d.out_channels, d.lr_mult,
                                                                 d.decay_mult);
                if (d.name == "fc1") embedding_layer_ = static_cast<int>(layers_.size());
                break;
            case LayerKind::Dropout:
                layer = std::make_unique<DropoutT<float>>(d.name, d.dropout_ratio);
                break;
        }
        chw = layer->infer_shape(chw);  // validates chaining as a side effect
        if (d.use_fc2_decay)
            for (auto* block : layer->param_blocks()) block->fc2_decay = true;
        layers_.push_back(std::move(layer));
    }
    if (embedding_layer_ < 0) throw std::logic_error("architecture has no fc1 layer");
}

int NetworkModel::embedding_dim() const {
    for (const auto& d : spec_.layers)
        if (d.kind == LayerKind::FullyConnected && d.name == "fc1") return d.out_channels;
    return 0;
}

void NetworkModel::check_input(const Tensor& x) const {
    if (x.c() != spec_.input_channels || x.h() != spec_.input_size ||
        x.w() != spec_.input_size)
        throw std::invalid_argument("model input must be Nx" +
                                    std::to_string(spec_.input_channels) + "x" +
                                    std::to_string(spec_.input_size) + "x" +
                                    std::to_string(spec_.input_size) + ", got " +
                                    x.shape_string());
}

Tensor NetworkModel::forward(const Tensor& x, bool train, Rng* rng) {
    check_input(x);
    Tensor cur = x;
    for (auto& layer : layers_) cur = layer->forward(cur, train, rng);
    return cur;
}

Tensor NetworkModel::backward(const Tensor& dlogits) {
    Tensor cur = dlogits;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
}

Tensor NetworkModel::extract_features(const Tensor& x) {
    check_input(x);
    Tensor cur = x;
    for (int i = 0; i <= embedding_layer_; ++i) cur = layers_[i]->forward(cur, false, nullptr);
    return cur;
}

void NetworkModel::zero_grads() {
    for (auto* b : param_blocks()) b->zero_grad();
}

std::vector<ParamBlock*> NetworkModel::param_blocks() {
    std::vector<ParamBlock*> blocks;
    for (auto& layer : layers_)
        for (auto* b : layer->param_blocks()) blocks.push_back(b);
    return blocks;
}

std::vector<const ParamBlock*> NetworkModel::param_blocks() const {
    auto blocks = const_cast<NetworkModel*>(this)->param_blocks();
    return {blocks.begin(), blocks.end()};
}

void NetworkModel::set_dropout_ratio(float ratio) {
    for (auto& layer : layers_)
        if (auto* d = dynamic_cast<DropoutT<float>*>(layer.get())) d->set_ratio(ratio);
}

NetworkModel build_network(const ArchOptions& options) { return NetworkModel(options); }

NetworkModel build_network_a() { return NetworkModel(ArchOptions{}); }

NetworkModel build_network_b() {
    ArchOptions options;
    options.arch = "B";
    return NetworkModel(options);
}

NetworkModel clone_network(const NetworkModel& model) {
    NetworkModel copy(model.options());
    auto src = model.param_blocks();
    auto dst = copy.param_blocks();
    for (size_t i = 0; i < src.size(); ++i) {
        dst[i]->value = src[i]->value;
        dst[i]->vel = src[i]->vel;
    }
    return copy;
}

void init_weights(NetworkModel& model, Rng& rng) {
    for (auto* block : model.param_blocks()) {
        switch (block->init) {
            case InitKind::ConvWeight: {
                const float a = std::sqrt(3.0f / static_cast<float>(block->fan_in));
                for (size_t i = 0; i < block->value.size(); ++i)
                    block->value[i] = static_cast<float>(rng.uniform(-a, a));
                break;
            }
            case InitKind::FcWeight:
                for (size_t i = 0; i < block->value.size(); ++i)
                    block->value[i] = static_cast<float>(rng.normal(0.0, 0.01));
                break;
            case InitKind::Bias:
                block->value.fill(0.0f);
                break;
        }
        block->grad.fill(0.0f);
        block->vel.fill(0.0f);
    }
}

ParamCounts count_parameters(const NetworkModel& model, CountConvention convention) {
    ParamCounts counts;
    for (const auto& d : model.arch().layers) {
        switch (d.kind) {
            case LayerKind::ConvPair: {
                long long per_half =
                    convention == CountConvention::Paper
                        ? static_cast<long long>(d.kernel) * d.kernel * d.out_channels
                        : static_cast<long long>(d.kernel) * d.kernel * d.in_channels *
                                  d.out_channels +
                              d.out_channels;
                counts.rows.push_back({d.name + "_1", per_half});
                counts.rows.push_back({d.name + "_2", per_half});
                counts.total += 2 * per_half;
                break;
            }
            case LayerKind::Conv: {
                long long n =
                    convention == CountConvention::Paper
                        ? static_cast<long long>(d.kernel) * d.kernel * d.out_channels
                        : static_cast<long long>(d.kernel) * d.kernel * d.in_channels *
                                  d.out_channels +
                              d.out_channels;
                counts.rows.push_back({d.name, n});
                counts.total += n;
                break;
            }
            case LayerKind::FullyConnected: {
                long long n = static_cast<long long>(d.in_channels) * d.out_channels;
                if (convention == CountConvention::True) n += d.out_channels;
                counts.rows.push_back({d.name, n});
                counts.total += n;
                break;
            }
            default:
                break;
        }
    }
    return counts;
}

std::string format_kparam(long long count, int decimals) {
    long long scale = 1;
    for (int i = 0; i < decimals; ++i) scale *= 10;
    long long units = count * scale / 1000;  // truncation
    long long ipart = units / scale;
    long long fpart = units % scale;

    std::string istr = std::to_string(ipart);
    for (int pos = static_cast<int>(istr.size()) - 3; pos > 0; pos -= 3)
        istr.insert(pos, ",");

    std::string out = istr;
    if (decimals > 0) {
        std::string fstr = std::to_string(fpart);
        out += "." + std::string(decimals - fstr.size(), '0') + fstr;
    }
    return out + "K";
}

}  // namespace lcnn
