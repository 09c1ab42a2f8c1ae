#include "lcnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace lcnn {

void SolverConfig::validate() const {
    if (momentum < 0.0f || momentum >= 1.0f)
        throw std::invalid_argument("solver: momentum must be in [0,1)");
    if (base_lr <= 0.0f) throw std::invalid_argument("solver: base_lr must be > 0");
    if (final_lr > base_lr)
        throw std::invalid_argument("solver: final_lr must be <= base_lr");
    if (weight_decay < 0.0f || fc2_weight_decay < 0.0f)
        throw std::invalid_argument("solver: weight decays must be >= 0");
    if (dropout_ratio < 0.0f || dropout_ratio >= 1.0f)
        throw std::invalid_argument("solver: dropout_ratio must be in [0,1)");
    if (gamma <= 0.0f || gamma > 1.0f)
        throw std::invalid_argument("solver: gamma must be in (0,1]");
    if (batch_size < 1) throw std::invalid_argument("solver: batch_size must be >= 1");
    if (max_iters < 1) throw std::invalid_argument("solver: max_iters must be >= 1");
}

int SolverConfig::effective_step_iters() const {
    if (step_iters > 0) return step_iters;
    return std::max(1, max_iters / 10);
}

SolverConfig parse_solver_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);

    SolverConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        if (trim(line).empty()) continue;

        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));

        auto as_float = [&] { return std::stof(value); };
        auto as_int = [&] { return std::stoi(value); };
        auto as_bool = [&] {
            if (value == "1" || value == "true") return true;
            if (value == "0" || value == "false") return false;
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": bad boolean '" + value + "'");
        };

        try {
            if (key == "momentum") cfg.momentum = as_float();
            else if (key == "base_lr") cfg.base_lr = as_float();
            else if (key == "final_lr") cfg.final_lr = as_float();
            else if (key == "gamma") cfg.gamma = as_float();
            else if (key == "step_iters") cfg.step_iters = as_int();
            else if (key == "weight_decay") cfg.weight_decay = as_float();
            else if (key == "fc2_weight_decay") cfg.fc2_weight_decay = as_float();
            else if (key == "dropout_ratio") cfg.dropout_ratio = as_float();
            else if (key == "batch_size") cfg.batch_size = as_int();
            else if (key == "max_iters") cfg.max_iters = as_int();
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "val_interval") cfg.val_interval = as_int();
            else if (key == "checkpoint_interval") cfg.checkpoint_interval = as_int();
            else if (key == "augment") cfg.augment = as_bool();
            else if (key == "stop_loss") cfg.stop_loss = as_float();
            else
                throw std::runtime_error("config line " + std::to_string(lineno) +
                                         ": unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": bad value '" + value + "' for " + key);
        }
    }
    cfg.validate();
    return cfg;
}

float learning_rate(const SolverConfig& config, long long iter) {
    const long long k = iter / config.effective_step_iters();
    double lr = config.base_lr;
    for (long long i = 0; i < k; ++i) lr *= config.gamma;
    return static_cast<float>(std::max(lr, static_cast<double>(config.final_lr)));
}

TrainValSplit split_train_val(const std::vector<TrainSample>& data, uint64_t seed) {
    if (data.empty()) throw std::invalid_argument("split: dataset is empty");

    std::map<int, std::vector<int>> by_identity;
    for (int i = 0; i < static_cast<int>(data.size()); ++i)
        by_identity[data[i].label].push_back(i);

    Rng rng(mix_seed(seed, 1ull << 62));  // stream id out of iteration range
    TrainValSplit split;
    std::vector<char> in_val(data.size(), 0);
    for (auto& [label, indices] : by_identity) {
        int pick = indices[rng.uniform_int(0, static_cast<int>(indices.size()) - 1)];
        split.val.push_back(pick);
        in_val[pick] = 1;
        if (indices.size() == 1) ++split.singleton_identities;
    }
    for (int i = 0; i < static_cast<int>(data.size()); ++i)
        if (!in_val[i]) split.train.push_back(i);
    return split;
}

namespace {

void fill_input(Tensor& batch, int row, const Image& img, int top, int left, bool flip) {
    constexpr float kScale = 1.0f / 255.0f;
    const int size = batch.h();
    float* dst = batch.data() + batch.index(row, 0, 0, 0);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            *dst++ = img.at(top + y, left + (flip ? size - 1 - x : x)) * kScale;
}

void check_train_size(const Image& img) {
    if (img.height != 144 || img.width != 144)
        throw std::invalid_argument("augment: expected a 144x144 image, got " +
                                    std::to_string(img.height) + "x" +
                                    std::to_string(img.width));
}

}  // namespace

Tensor augment(const Image& image, Rng& rng) {
    check_train_size(image);
    Tensor out(1, 1, 128, 128);
    const int top = rng.uniform_int(0, 16);
    const int left = rng.uniform_int(0, 16);
    const bool flip = rng.bernoulli(0.5);
    fill_input(out, 0, image, top, left, flip);
    return out;
}

Tensor eval_input(const Image& image) {
    Tensor out(1, 1, 128, 128);
    if (image.height == 144 && image.width == 144)
        fill_input(out, 0, image, 8, 8, false);
    else if (image.height == 128 && image.width == 128)
        fill_input(out, 0, image, 0, 0, false);
    else
        throw std::invalid_argument("eval_input: expected 144x144 or 128x128, got " +
                                    std::to_string(image.height) + "x" +
                                    std::to_string(image.width));
    return out;
}

void sgd_step(NetworkModel& model, const SolverConfig& config, long long iter) {
    const float lr = learning_rate(config, iter);
    for (ParamBlock* block : model.param_blocks()) {
        const float eff_lr = lr * block->lr_mult;
        const float decay =
            (block->fc2_decay ? config.fc2_weight_decay : config.weight_decay) *
            block->decay_mult;
        float* w = block->value.data();
        float* g = block->grad.data();
        float* v = block->vel.data();
        const size_t n = block->value.size();
        for (size_t i = 0; i < n; ++i) {
            v[i] = config.momentum * v[i] - eff_lr * (g[i] + decay * w[i]);
            w[i] += v[i];
        }
    }
}

float validation_accuracy(NetworkModel& model, const std::vector<TrainSample>& data,
                          const std::vector<int>& val_indices, int batch_size) {
    if (val_indices.empty()) return 0.0f;
    const int k = model.num_classes();
    int correct = 0;
    for (size_t start = 0; start < val_indices.size(); start += batch_size) {
        const int n = static_cast<int>(
            std::min<size_t>(batch_size, val_indices.size() - start));
        Tensor batch(n, 1, 128, 128);
        for (int i = 0; i < n; ++i) {
            Tensor one = eval_input(data[val_indices[start + i]].image);
            std::copy(one.data(), one.data() + one.size(),
                      batch.data() + batch.index(i, 0, 0, 0));
        }
        Tensor logits = model.forward(batch, false, nullptr);
        for (int i = 0; i < n; ++i) {
            const float* row = logits.data() + static_cast<size_t>(i) * k;
            int best = 0;
            for (int j = 1; j < k; ++j)
                if (row[j] > row[best]) best = j;
            if (best == data[val_indices[start + i]].label) ++correct;
        }
    }
    return static_cast<float>(correct) / static_cast<float>(val_indices.size());
}

TrainResult train_loop(NetworkModel& model, const std::vector<TrainSample>& data,
                       const SolverConfig& config, long long start_iter,
                       const TrainCallbacks& callbacks) {
    config.validate();
    if (data.empty()) throw std::invalid_argument("train: dataset is empty");
    for (const auto& s : data)
        if (s.label < 0 || s.label >= model.num_classes())
            throw std::invalid_argument("train: label " + std::to_string(s.label) +
                                        " outside [0," +
                                        std::to_string(model.num_classes()) + ")");

    TrainValSplit split = split_train_val(data, config.seed);
    if (split.train.empty())
        throw std::invalid_argument(
            "train: training split is empty (every identity has a single image)");

    model.set_dropout_ratio(config.dropout_ratio);

    TrainResult result;
    const int b = config.batch_size;
    for (long long iter = start_iter; iter < config.max_iters; ++iter) {
        Rng it_rng(mix_seed(config.seed, static_cast<uint64_t>(iter)));

        Tensor batch(b, 1, 128, 128);
        std::vector<int> labels(b);
        for (int i = 0; i < b; ++i) {
            const int idx =
                split.train[it_rng.uniform_int(0, static_cast<int>(split.train.size()) - 1)];
            const Image& img = data[idx].image;
            labels[i] = data[idx].label;
            if (config.augment) {
                check_train_size(img);
                const int top = it_rng.uniform_int(0, 16);
                const int left = it_rng.uniform_int(0, 16);
                const bool flip = it_rng.bernoulli(0.5);
                fill_input(batch, i, img, top, left, flip);
            } else {
                Tensor one = eval_input(img);
                std::copy(one.data(), one.data() + one.size(),
                          batch.data() + batch.index(i, 0, 0, 0));
            }
        }

        Tensor logits = model.forward(batch, true, &it_rng);
        auto [loss, dlogits] = softmax_cross_entropy_batch(
            logits, std::span<const int>(labels.data(), labels.size()));
        if (!std::isfinite(loss))
            throw std::runtime_error("train: non-finite loss " + std::to_string(loss) +
                                     " at iteration " + std::to_string(iter));

        model.zero_grads();
        model.backward(dlogits);
        sgd_step(model, config, iter);

        TrainLogRow row{iter, learning_rate(config, iter), loss, std::nullopt};
        if (config.val_interval > 0 && (iter + 1) % config.val_interval == 0)
            row.val_accuracy = validation_accuracy(model, data, split.val, b);
        result.log.push_back(row);
        if (callbacks.on_row) callbacks.on_row(row);

        if (callbacks.on_checkpoint && config.checkpoint_interval > 0 &&
            (iter + 1) % config.checkpoint_interval == 0)
            callbacks.on_checkpoint(model, iter + 1);

        result.final_iter = iter + 1;
        if (config.stop_loss > 0.0f && loss < config.stop_loss) {
            result.stopped_early = true;
            break;
        }
    }
    return result;
}

void write_train_log_csv(const std::string& path, const std::vector<TrainLogRow>& log) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write training log: " + path);
    out << "iter,lr,loss,val_accuracy\n";
    char buf[160];
    for (const auto& row : log) {
        if (row.val_accuracy)
            std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g\n", row.iter,
                          static_cast<double>(row.lr), static_cast<double>(row.loss),
                          static_cast<double>(*row.val_accuracy));
        else
            std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,\n", row.iter,
                          static_cast<double>(row.lr), static_cast<double>(row.loss));
        out << buf;
    }
    if (!out) throw std::runtime_error("failed writing training log: " + path);
}

}  // namespace lcnn
