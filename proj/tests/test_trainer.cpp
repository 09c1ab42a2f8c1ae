#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "lcnn/layers.hpp"
#include "lcnn/trainer.hpp"
#include "oracles.hpp"

using namespace lcnn;

namespace {

Image random_image(Rng& rng, int size) {
    Image img = make_image(size, size);
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform(0, 255));
    return img;
}

std::vector<TrainSample> synthetic_dataset(int identities, int per_identity, int size,
                                           uint64_t seed) {
    Rng rng(seed);
    std::vector<TrainSample> data;
    for (int id = 0; id < identities; ++id)
        for (int j = 0; j < per_identity; ++j)
            data.push_back({random_image(rng, size), id});
    return data;
}

}  // namespace

TEST_CASE("split_train_val takes exactly one image per identity") {
    auto data = synthetic_dataset(3, 4, 16, 1);
    TrainValSplit split = split_train_val(data, 7);
    CHECK(split.val.size() == 3);
    CHECK(split.train.size() == 9);

    // disjoint partition of the dataset
    std::set<int> seen(split.train.begin(), split.train.end());
    for (int i : split.val) CHECK(seen.insert(i).second);
    CHECK(seen.size() == data.size());

    std::set<int> val_labels;
    for (int i : split.val) val_labels.insert(data[i].label);
    CHECK(val_labels.size() == 3);
}

TEST_CASE("split_train_val: singleton identity contributes no train images") {
    std::vector<TrainSample> data;
    Rng rng(2);
    data.push_back({random_image(rng, 16), 0});
    data.push_back({random_image(rng, 16), 0});
    data.push_back({random_image(rng, 16), 1});  // single image
    TrainValSplit split = split_train_val(data, 3);
    CHECK(split.singleton_identities == 1);
    CHECK(split.val.size() == 2);
    CHECK(split.train.size() == 1);
    CHECK(data[split.train[0]].label == 0);
}

TEST_CASE("split_train_val determinism and empty rejection") {
    auto data = synthetic_dataset(5, 3, 16, 4);
    TrainValSplit a = split_train_val(data, 99);
    TrainValSplit b = split_train_val(data, 99);
    CHECK(a.val == b.val);
    CHECK(a.train == b.train);
    CHECK_THROWS_AS(split_train_val({}, 1), std::invalid_argument);
}

TEST_CASE("augment: offsets bounded, mirror frequency, pixels in [0,1]") {
    // ramp image lets the crop offset and mirror flag be read back from the
    // first two output pixels
    Image img = make_image(144, 144);
    for (int y = 0; y < 144; ++y)
        for (int x = 0; x < 144; ++x) img.at(y, x) = static_cast<float>(y + x);

    Rng rng(42);
    int mirrored = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        Tensor out = augment(img, rng);
        const float v0 = out[0] * 255.0f;
        const float v1 = out[1] * 255.0f;
        const bool flip = v1 < v0;
        if (flip) ++mirrored;
        // top+left (no flip) or top+left+127 (flip) from the corner pixel
        const int sum = static_cast<int>(std::lround(v0)) - (flip ? 127 : 0);
        CHECK(sum >= 0);
        CHECK(sum <= 32);
        for (size_t i = 0; i < out.size(); i += 997) {
            CHECK(out[i] >= 0.0f);
            CHECK(out[i] <= 1.0f);
        }
    }
    const double freq = mirrored / 10000.0;
    CHECK(freq > 0.48);
    CHECK(freq < 0.52);

    Image wrong = make_image(100, 100);
    CHECK_THROWS_AS(augment(wrong, rng), std::invalid_argument);
}

TEST_CASE("augment covers the full offset range") {
    Image img = make_image(144, 144);
    for (int y = 0; y < 144; ++y)
        for (int x = 0; x < 144; ++x) img.at(y, x) = static_cast<float>(y * 200 + x) / 200.0f;

    Rng rng(7);
    std::set<int> tops, lefts;
    for (int trial = 0; trial < 3000; ++trial) {
        Tensor out = augment(img, rng);
        const float v0 = out[0] * 255.0f * 200.0f;
        const float v1 = out[1] * 255.0f * 200.0f;
        const bool flip = v1 < v0;
        const int corner = static_cast<int>(std::lround(v0));
        const int top = corner / 200;
        const int left = corner % 200 - (flip ? 127 : 0);
        CHECK(top >= 0);
        CHECK(top <= 16);
        CHECK(left >= 0);
        CHECK(left <= 16);
        tops.insert(top);
        lefts.insert(left);
    }
    CHECK(tops.size() == 17);
    CHECK(lefts.size() == 17);
}

TEST_CASE("eval_input center crop matches crop(8,8,128,128)") {
    Rng rng(5);
    Image img = random_image(rng, 144);
    Tensor out = eval_input(img);

    Tensor full(1, 1, 144, 144);
    for (int y = 0; y < 144; ++y)
        for (int x = 0; x < 144; ++x) full.at(0, 0, y, x) = img.at(y, x) / 255.0f;
    Tensor want = crop(full, 8, 8, 128, 128);
    for (size_t i = 0; i < out.size(); ++i) CHECK(out[i] == want[i]);

    Image native = random_image(rng, 128);
    Tensor direct = eval_input(native);
    for (int y = 0; y < 128; ++y)
        for (int x = 0; x < 128; ++x)
            CHECK(direct.at(0, 0, y, x) == native.at(y, x) / 255.0f);

    CHECK_THROWS_AS(eval_input(random_image(rng, 64)), std::invalid_argument);
}

TEST_CASE("learning rate schedule: step decay clamped at the floor") {
    SolverConfig cfg;
    cfg.base_lr = 1e-3f;
    cfg.final_lr = 5e-5f;
    cfg.gamma = 0.457f;
    cfg.step_iters = 50;
    cfg.max_iters = 500;

    CHECK(learning_rate(cfg, 0) == 1e-3f);
    CHECK(learning_rate(cfg, 49) == 1e-3f);
    CHECK(learning_rate(cfg, 50) == doctest::Approx(1e-3 * 0.457).epsilon(1e-6));
    CHECK(learning_rate(cfg, 499) == 5e-5f);

    float prev = learning_rate(cfg, 0);
    for (long long it = 1; it < 500; ++it) {
        float lr = learning_rate(cfg, it);
        CHECK(lr <= prev);
        CHECK(lr >= cfg.final_lr);
        prev = lr;
    }

    // default step is max_iters / 10
    SolverConfig d;
    d.max_iters = 1000;
    CHECK(d.effective_step_iters() == 100);
}

TEST_CASE("solver config invariants") {
    SolverConfig cfg;
    cfg.momentum = 1.0f;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SolverConfig{};
    cfg.final_lr = 1.0f;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SolverConfig{};
    cfg.dropout_ratio = 1.0f;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK_NOTHROW(SolverConfig{}.validate());
}

TEST_CASE("solver config file parsing") {
    const char* path = "test_solver.cfg";
    {
        std::ofstream out(path);
        out << "# smoke config\n";
        out << "base_lr = 0.01\n";
        out << "momentum = 0.8\n";
        out << "batch_size = 16\n";
        out << "max_iters = 500\n";
        out << "augment = false\n";
        out << "seed = 123\n";
    }
    SolverConfig cfg = parse_solver_config(path);
    CHECK(cfg.base_lr == 0.01f);
    CHECK(cfg.momentum == 0.8f);
    CHECK(cfg.batch_size == 16);
    CHECK(cfg.max_iters == 500);
    CHECK(cfg.augment == false);
    CHECK(cfg.seed == 123);
    CHECK(cfg.weight_decay == 5e-4f);  // untouched default

    {
        std::ofstream out(path);
        out << "no_such_key = 3\n";
    }
    CHECK_THROWS(parse_solver_config(path));
    std::remove(path);
}

TEST_CASE("sgd_step: plain gradient descent when momentum and decay are zero") {
    ArchOptions opts;
    opts.width_mult = 0.05f;
    opts.num_classes = 4;
    NetworkModel model(opts);

    SolverConfig cfg;
    cfg.momentum = 0.0f;
    cfg.weight_decay = 0.0f;
    cfg.fc2_weight_decay = 0.0f;
    cfg.base_lr = 0.5f;
    cfg.final_lr = 0.0f;
    cfg.gamma = 1.0f;
    cfg.step_iters = 1;

    auto blocks = model.param_blocks();
    blocks[0]->value.fill(2.0f);
    blocks[0]->grad.fill(3.0f);
    sgd_step(model, cfg, 0);
    for (size_t i = 0; i < blocks[0]->value.size(); ++i)
        CHECK(blocks[0]->value[i] == 2.0f - 0.5f * 3.0f);
}

TEST_CASE("sgd_step: two momentum steps match the hand-unrolled recurrence") {
    ArchOptions opts;
    opts.width_mult = 0.05f;
    opts.num_classes = 4;
    NetworkModel model(opts);

    SolverConfig cfg;
    cfg.momentum = 0.9f;
    cfg.weight_decay = 0.0f;
    cfg.fc2_weight_decay = 0.0f;
    cfg.base_lr = 0.1f;
    cfg.final_lr = 0.1f;
    cfg.gamma = 1.0f;
    cfg.step_iters = 1;

    auto blocks = model.param_blocks();
    ParamBlock* b = blocks[0];
    const float w0 = 1.0f, g = 0.4f, lr = 0.1f;
    b->value.fill(w0);
    b->grad.fill(g);

    sgd_step(model, cfg, 0);
    const float v1 = -lr * g;
    const float w1 = w0 + v1;
    CHECK(b->value[0] == doctest::Approx(w1).epsilon(1e-7));

    b->grad.fill(g);  // same gradient again
    sgd_step(model, cfg, 1);
    const float v2 = 0.9f * v1 - lr * g;
    const float w2 = w1 + v2;
    CHECK(b->value[0] == doctest::Approx(w2).epsilon(1e-7));
}

TEST_CASE("sgd_step: fc2 decays at 5e-3 while conv blocks decay at 5e-4") {
    ArchOptions opts;
    opts.width_mult = 0.05f;
    opts.num_classes = 4;
    NetworkModel model(opts);

    SolverConfig cfg;  // defaults: 5e-4 / 5e-3
    cfg.momentum = 0.0f;
    cfg.base_lr = 1.0f;
    cfg.final_lr = 1.0f;
    cfg.gamma = 1.0f;
    cfg.step_iters = 1;

    for (auto* b : model.param_blocks()) {
        b->value.fill(1.0f);
        b->grad.fill(0.0f);
    }
    sgd_step(model, cfg, 0);
    for (auto* b : model.param_blocks()) {
        const float expected = b->layer == "fc2" ? 1.0f - 5e-3f : 1.0f - 5e-4f;
        CHECK(b->value[0] == doctest::Approx(expected).epsilon(1e-6));
        CHECK(b->fc2_decay == (b->layer == "fc2"));
    }
}

TEST_CASE("analytic gradient step decreases loss on a 2-class linear problem") {
    Rng rng(66);
    const int d = 8, n = 16;
    FullyConnectedT<double> fc("fc", d, 2);
    for (auto* b : fc.param_blocks()) oracle::fill_random(b->value, rng, -0.2, 0.2);

    TensorD x(n, d, 1, 1);
    oracle::fill_random(x, rng);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) labels[i] = i % 2;

    auto loss_of = [&]() {
        TensorD logits = fc.forward(x, true, nullptr);
        return softmax_cross_entropy_batch(logits, std::span<const int>(labels)).first;
    };

    const double before = [&] {
        TensorD logits = fc.forward(x, true, nullptr);
        auto [loss, dlogits] = softmax_cross_entropy_batch(logits,
                                                           std::span<const int>(labels));
        for (auto* b : fc.param_blocks()) b->zero_grad();
        fc.backward(dlogits);
        return loss;
    }();

    const double lr = 1e-4;
    for (auto* b : fc.param_blocks())
        for (size_t i = 0; i < b->value.size(); ++i) b->value[i] -= lr * b->grad[i];
    CHECK(loss_of() < before);
}

TEST_CASE("train_loop: initial loss is about ln(K) and the trajectory is finite") {
    ArchOptions opts;
    opts.width_mult = 0.0625f;
    opts.num_classes = 16;
    NetworkModel model(opts);
    Rng rng(11);
    init_weights(model, rng);

    auto data = synthetic_dataset(16, 2, 128, 21);
    SolverConfig cfg;
    cfg.batch_size = 8;
    cfg.max_iters = 3;
    cfg.augment = false;
    cfg.dropout_ratio = 0.0f;

    TrainResult result = train_loop(model, data, cfg);
    REQUIRE(result.log.size() == 3);
    CHECK(result.log[0].loss == doctest::Approx(std::log(16.0)).epsilon(0.05));
    for (const auto& row : result.log) CHECK(std::isfinite(row.loss));
}

TEST_CASE("train_loop is bitwise deterministic for a fixed seed") {
    auto data = synthetic_dataset(4, 3, 144, 31);
    SolverConfig cfg;
    cfg.batch_size = 4;
    cfg.max_iters = 5;
    cfg.dropout_ratio = 0.5f;  // exercises the dropout rng path too
    cfg.val_interval = 2;
    cfg.seed = 77;

    auto run = [&]() {
        ArchOptions opts;
        opts.width_mult = 0.0625f;
        opts.num_classes = 4;
        NetworkModel model(opts);
        Rng rng(cfg.seed);
        init_weights(model, rng);
        return train_loop(model, data, cfg);
    };
    TrainResult a = run();
    TrainResult b = run();
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) {
        CHECK(std::bit_cast<uint32_t>(a.log[i].loss) == std::bit_cast<uint32_t>(b.log[i].loss));
        CHECK(a.log[i].val_accuracy.has_value() == b.log[i].val_accuracy.has_value());
        if (a.log[i].val_accuracy)
            CHECK(*a.log[i].val_accuracy == *b.log[i].val_accuracy);
    }
}

TEST_CASE("train_loop rejects out-of-range labels and empty data") {
    ArchOptions opts;
    opts.width_mult = 0.0625f;
    opts.num_classes = 2;
    NetworkModel model(opts);
    SolverConfig cfg;
    CHECK_THROWS_AS(train_loop(model, {}, cfg), std::invalid_argument);

    auto data = synthetic_dataset(4, 2, 144, 5);  // labels up to 3
    CHECK_THROWS_AS(train_loop(model, data, cfg), std::invalid_argument);
}

TEST_CASE("training log csv has a blank cell when validation was not run") {
    std::vector<TrainLogRow> log;
    log.push_back({0, 0.001f, 2.5f, std::nullopt});
    log.push_back({1, 0.001f, 2.0f, 0.25f});
    const char* path = "test_log.csv";
    write_train_log_csv(path, log);

    std::ifstream in(path);
    std::string header, row0, row1;
    std::getline(in, header);
    std::getline(in, row0);
    std::getline(in, row1);
    CHECK(header == "iter,lr,loss,val_accuracy");
    CHECK(row0.back() == ',');
    CHECK(row1.find("0.25") != std::string::npos);
    std::remove(path);
}
