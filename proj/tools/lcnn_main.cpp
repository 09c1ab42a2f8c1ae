// Command-line surface for the lightened-CNN pipeline: alignment, training,
// embedding extraction, protocol evaluation, latency benchmarking, and MFM
// instrumentation.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include "lcnn/align.hpp"
#include "lcnn/eval.hpp"
#include "lcnn/image.hpp"
#include "lcnn/manifest.hpp"
#include "lcnn/model.hpp"
#include "lcnn/model_io.hpp"
#include "lcnn/trainer.hpp"

namespace fs = std::filesystem;
using namespace lcnn;

namespace {

std::string resolve_path(const std::string& manifest_path, const std::string& entry_path) {
    fs::path p(entry_path);
    if (p.is_absolute()) return entry_path;
    return (fs::path(manifest_path).parent_path() / p).string();
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    workers = std::max(1, workers);
    if (workers == 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    std::exception_ptr error;
    std::mutex error_mutex;
    std::atomic<int> next{0};
    for (int w = 0; w < workers; ++w)
        threads.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

Activation parse_activation(const std::string& name) {
    if (name == "mfm") return Activation::Mfm;
    if (name == "relu") return Activation::Relu;
    throw CLI::ValidationError("--activation must be mfm or relu");
}

std::map<std::string, std::vector<float>> embedding_index(const std::string& path) {
    std::map<std::string, std::vector<float>> index;
    for (auto& e : read_embeddings(path)) index[e.id] = std::move(e.values);
    return index;
}

const std::vector<float>& lookup_embedding(
    const std::map<std::string, std::vector<float>>& index, const std::string& id) {
    auto it = index.find(id);
    if (it == index.end())
        throw std::runtime_error("id '" + id + "' not present in the embedding file");
    return it->second;
}

// ------------------------------------------------------------------ align

int run_align(const std::string& manifest_path, const std::string& spec_name,
              const std::string& out_dir, int workers) {
    const NormSpec spec = spec_name == "train" ? NormSpec::training() : NormSpec::testing();
    std::cout << "align: spec=" << spec_name << " size=" << spec.size
              << " ec_mc_y=" << spec.ec_mc_y << " ec_y=" << spec.ec_y
              << " workers=" << workers << "\n";

    auto entries = read_manifest(manifest_path);
    fs::create_directories(out_dir);

    struct Result {
        bool ok = false;
        std::string warning;
        ManifestEntry entry;
        Image image;
    };
    std::vector<Result> results(entries.size());

    parallel_for(static_cast<int>(entries.size()), workers, [&](int i) {
        const ManifestEntry& e = entries[i];
        if (!e.landmarks)
            throw std::runtime_error("manifest entry '" + e.path + "' has no landmarks");
        Image img;
        try {
            img = read_image(resolve_path(manifest_path, e.path));
        } catch (const std::exception& ex) {
            results[i].warning = ex.what();
            return;
        }
        SimilarityTransform t = compute_alignment(*e.landmarks, spec);

        char name[32];
        std::snprintf(name, sizeof(name), "%06d_", i);
        Result r;
        r.ok = true;
        r.image = warp(img, t, spec.size);
        r.entry.path = std::string(name) + fs::path(e.path).stem().string() + ".pgm";
        r.entry.label = e.label;
        r.entry.landmarks = transform_landmarks(*e.landmarks, t);
        results[i] = std::move(r);
    });

    std::vector<ManifestEntry> out_entries;
    int skipped = 0;
    for (auto& r : results) {
        if (!r.ok) {
            ++skipped;
            std::cerr << "warning: skipping unreadable image: " << r.warning << "\n";
            continue;
        }
        write_pgm((fs::path(out_dir) / r.entry.path).string(), r.image);
        out_entries.push_back(std::move(r.entry));
    }
    write_manifest((fs::path(out_dir) / "manifest.txt").string(), out_entries);
    std::cout << "align: wrote " << out_entries.size() << " images to " << out_dir
              << " (" << skipped << " skipped)\n";
    return 0;
}

// ------------------------------------------------------------------ train

std::vector<TrainSample> load_dataset(const std::string& data_dir) {
    const std::string manifest_path = (fs::path(data_dir) / "manifest.txt").string();
    auto entries = read_manifest(manifest_path);
    std::vector<TrainSample> samples;
    samples.reserve(entries.size());
    for (const auto& e : entries) {
        TrainSample s;
        s.image = read_image(resolve_path(manifest_path, e.path));
        s.label = e.label;
        samples.push_back(std::move(s));
    }
    return samples;
}

int run_train(const std::string& arch, const std::string& data_dir,
              const std::string& config_path, const std::string& out_path,
              const std::string& resume_path, std::string log_path, int classes,
              float width, const std::string& activation, uint64_t seed, bool seed_set) {
    SolverConfig cfg;
    if (!config_path.empty()) cfg = parse_solver_config(config_path);
    if (seed_set) cfg.seed = seed;
    if (log_path.empty()) log_path = out_path + ".log.csv";

    ArchOptions opts;
    opts.arch = arch;
    opts.num_classes = classes;
    opts.width_mult = width;
    opts.activation = parse_activation(activation);
    opts.dropout_ratio = cfg.dropout_ratio;

    long long start_iter = 0;
    std::optional<NetworkModel> model;
    if (!resume_path.empty()) {
        Checkpoint ckpt = load_checkpoint(resume_path);
        if (ckpt.model.options().arch != arch)
            throw std::runtime_error("checkpoint architecture " +
                                     ckpt.model.options().arch +
                                     " does not match --arch " + arch);
        start_iter = ckpt.iter;
        model.emplace(std::move(ckpt.model));
        std::cout << "train: resumed from " << resume_path << " at iteration "
                  << start_iter << "\n";
    } else {
        model.emplace(build_network(opts));
        Rng rng(cfg.seed);
        init_weights(*model, rng);
    }

    std::cout << "train: arch=" << model->options().arch
              << " classes=" << model->num_classes()
              << " width=" << model->options().width_mult << " batch=" << cfg.batch_size
              << " max_iters=" << cfg.max_iters << " base_lr=" << cfg.base_lr
              << " momentum=" << cfg.momentum << " weight_decay=" << cfg.weight_decay
              << " fc2_weight_decay=" << cfg.fc2_weight_decay
              << " dropout=" << cfg.dropout_ratio << " augment=" << cfg.augment
              << " seed=" << cfg.seed << "\n";

    auto data = load_dataset(data_dir);
    if (data.empty()) throw std::runtime_error("train: dataset in " + data_dir + " is empty");

    TrainCallbacks callbacks;
    callbacks.on_row = [&](const TrainLogRow& row) {
        if (row.iter % 10 == 0 || row.val_accuracy) {
            std::cout << "iter " << row.iter << " lr " << row.lr << " loss " << row.loss;
            if (row.val_accuracy) std::cout << " val_acc " << *row.val_accuracy;
            std::cout << "\n";
        }
    };
    callbacks.on_checkpoint = [&](NetworkModel& m, long long next_iter) {
        save_checkpoint(m, next_iter, out_path + ".iter" + std::to_string(next_iter));
    };

    TrainResult result;
    try {
        result = train_loop(*model, data, cfg, start_iter, callbacks);
    } catch (const std::exception& ex) {
        const std::string snapshot = out_path + ".diverged.lcnm";
        save_model(*model, snapshot);
        std::cerr << "train: aborted: " << ex.what() << " (diagnostic snapshot: " << snapshot
                  << ")\n";
        return 1;
    }

    save_checkpoint(*model, result.final_iter, out_path);
    write_train_log_csv(log_path, result.log);
    const float final_loss = result.log.empty() ? 0.0f : result.log.back().loss;
    std::cout << "train: finished at iteration " << result.final_iter << " loss "
              << final_loss << (result.stopped_early ? " (stop_loss reached)" : "")
              << "\ntrain: model " << out_path << "\ntrain: log " << log_path << "\n";
    return 0;
}

// ---------------------------------------------------------------- extract

int run_extract(const std::string& model_path, const std::string& manifest_path,
                const std::string& out_path, int workers) {
    NetworkModel master = load_model(model_path);
    std::cout << "extract: model=" << model_path << " arch=" << master.options().arch
              << " dim=" << master.embedding_dim() << " workers=" << workers << "\n";

    auto entries = read_manifest(manifest_path);
    std::vector<Embedding> embeddings(entries.size());

    workers = std::max(1, workers);
    std::vector<NetworkModel> models;
    models.reserve(workers);
    models.push_back(std::move(master));
    for (int w = 1; w < workers; ++w) models.push_back(clone_network(models[0]));

    std::atomic<int> next_slot{0};
    thread_local int slot = -1;
    parallel_for(static_cast<int>(entries.size()), workers, [&](int i) {
        if (slot < 0) slot = next_slot.fetch_add(1) % static_cast<int>(models.size());
        Image img = read_image(resolve_path(manifest_path, entries[i].path));
        Embedding e = extract_embedding(models[slot], eval_input(img));
        e.id = entries[i].path;
        embeddings[i] = std::move(e);
    });

    if (embeddings.empty()) throw std::runtime_error("extract: manifest is empty");
    write_embeddings(out_path, embeddings);
    std::cout << "extract: wrote " << embeddings.size() << " embeddings to " << out_path
              << "\n";
    return 0;
}

// ------------------------------------------------------------------- eval

std::vector<std::vector<ScoredPair>> pair_scores_by_fold(
    const std::vector<PairRecord>& pairs,
    const std::function<float(const PairRecord&)>& score) {
    std::map<int, std::vector<ScoredPair>> by_fold;
    for (const auto& p : pairs) by_fold[p.fold].push_back({score(p), p.same});
    std::vector<std::vector<ScoredPair>> folds;
    for (auto& [fold, v] : by_fold) folds.push_back(std::move(v));
    return folds;
}

void write_fold_csv(const std::string& path, const VerificationResult& result) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write fold csv: " + path);
    out << "fold,threshold,accuracy\n";
    for (size_t i = 0; i < result.fold_accuracies.size(); ++i)
        out << i << "," << result.fold_thresholds[i] << "," << result.fold_accuracies[i]
            << "\n";
}

int run_eval(const std::string& protocol, const std::string& embeddings_path,
             const std::string& pairs_path, const std::string& probes_path, double far,
             bool far_set, int samples, uint64_t seed, const std::string& fold_csv) {
    auto index = embedding_index(embeddings_path);
    std::cout << "eval: protocol=" << protocol << " embeddings=" << embeddings_path
              << " (" << index.size() << " ids) seed=" << seed << "\n";

    if (protocol == "lfw-verify") {
        auto pairs = read_pair_list(pairs_path);
        auto folds = pair_scores_by_fold(pairs, [&](const PairRecord& p) {
            return cosine_similarity(lookup_embedding(index, p.id_a),
                                     lookup_embedding(index, p.id_b));
        });
        VerificationResult result = verification_10fold(folds);
        std::cout << "accuracy=" << result.mean_accuracy << "\n";
        if (far_set) {
            std::vector<ScoredPair> all;
            for (const auto& f : folds) all.insert(all.end(), f.begin(), f.end());
            std::cout << "tpr_at_far=" << tpr_at_far(all, far) << " far=" << far << "\n";
        }
        if (!fold_csv.empty()) write_fold_csv(fold_csv, result);
        return 0;
    }

    if (protocol == "lfw-closed" || protocol == "lfw-open") {
        auto records = read_probe_list(probes_path);
        std::vector<GalleryEntry> gallery, genuine, impostors;
        for (const auto& r : records) {
            GalleryEntry e{r.id, r.identity, lookup_embedding(index, r.id)};
            if (r.role == ProbeRole::Gallery)
                gallery.push_back(std::move(e));
            else if (r.role == ProbeRole::Genuine)
                genuine.push_back(std::move(e));
            else
                impostors.push_back(std::move(e));
        }
        if (protocol == "lfw-closed") {
            if (!impostors.empty())
                std::cout << "note: ignoring " << impostors.size()
                          << " impostor records (closed-set)\n";
            std::cout << "rank1=" << closed_set_rank1(gallery, genuine) << "\n";
        } else {
            const double far_used = far_set ? far : 0.01;
            std::cout << "dir=" << open_set_dir_far(gallery, genuine, impostors, far_used)
                      << " far=" << far_used << "\n";
        }
        return 0;
    }

    if (protocol == "ytf") {
        // video ids map to frame embeddings named "<video>/<frame>"
        std::map<std::string, std::vector<std::vector<float>>> videos;
        for (const auto& [id, values] : index) {
            auto slash = id.rfind('/');
            if (slash == std::string::npos) continue;
            videos[id.substr(0, slash)].push_back(values);
        }
        auto lookup_video =
            [&](const std::string& id) -> const std::vector<std::vector<float>>& {
            auto it = videos.find(id);
            if (it == videos.end())
                throw std::runtime_error("video id '" + id +
                                         "' has no frames in the embedding file");
            return it->second;
        };
        Rng rng(seed);
        auto pairs = read_pair_list(pairs_path);
        auto folds = pair_scores_by_fold(pairs, [&](const PairRecord& p) {
            return static_cast<float>(ytf_video_similarity(
                lookup_video(p.id_a), lookup_video(p.id_b), samples, rng));
        });
        VerificationResult result = verification_10fold(folds);
        std::cout << "accuracy=" << result.mean_accuracy << " samples=" << samples << "\n";
        if (!fold_csv.empty()) write_fold_csv(fold_csv, result);
        return 0;
    }

    throw CLI::ValidationError("unknown protocol '" + protocol + "'");
}

// ------------------------------------------------------------------ bench

int run_bench(const std::string& arch, int iters, int threads, int classes, float width,
              uint64_t seed) {
    if (threads != 1)
        throw CLI::ValidationError("bench runs on exactly one worker thread (--threads 1)");

    ArchOptions opts;
    opts.arch = arch;
    opts.num_classes = classes;
    opts.width_mult = width;
    NetworkModel model = build_network(opts);
    Rng rng(seed);
    init_weights(model, rng);

    Tensor input(1, 1, 128, 128);
    for (size_t i = 0; i < input.size(); ++i)
        input[i] = static_cast<float>(rng.uniform(0.0, 1.0));

    std::cout << "bench: arch=" << arch << " iters=" << iters << " threads=1 seed=" << seed
              << "\n";
    ParamCounts paper = count_parameters(model, CountConvention::Paper);
    ParamCounts true_counts = count_parameters(model, CountConvention::True);
    std::cout << "params_paper=" << paper.total << " (" << format_kparam(paper.total, 0)
              << ")\nparams_true=" << true_counts.total << " ("
              << format_kparam(true_counts.total, 0) << ")\n";

    for (int i = 0; i < 3; ++i) model.extract_features(input);  // warmup

    double total_ms = 0, min_ms = std::numeric_limits<double>::infinity();
    for (int i = 0; i < iters; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        Tensor features = model.extract_features(input);
        auto t1 = std::chrono::steady_clock::now();
        (void)features;
        double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        total_ms += ms;
        min_ms = std::min(min_ms, ms);
    }
    std::cout << "latency_mean_ms=" << total_ms / iters << "\nlatency_min_ms=" << min_ms
              << "\nreference: published single-core i7-4790 timings: A=71ms, B=67ms\n";
    return 0;
}

// -------------------------------------------------------------- mfm-stats

int run_mfm_stats(const std::string& model_path, const std::string& manifest_path,
                  const std::string& out_path) {
    NetworkModel model = load_model(model_path);
    auto entries = read_manifest(manifest_path);
    if (entries.empty()) throw std::runtime_error("mfm-stats: manifest is empty");

    std::vector<Tensor> images;
    std::vector<int> labels;
    for (const auto& e : entries) {
        images.push_back(eval_input(read_image(resolve_path(manifest_path, e.path))));
        labels.push_back(e.label);
    }

    MfmStats stats = mfm_stats(model, images, labels);
    write_mfm_stats_csv(out_path, stats);
    std::cout << "mfm-stats: images=" << images.size()
              << " value_count=" << stats.value_count
              << " gradient_count=" << stats.gradient_count
              << "\ngradient_zero_fraction=" << stats.gradient_zero_fraction()
              << "\nmfm-stats: wrote " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lightened CNN face representation pipeline"};
    app.require_subcommand(1);

    // align
    std::string al_manifest, al_spec, al_out;
    int al_workers = 1;
    auto* align_cmd = app.add_subcommand("align", "normalize faces from 5 landmarks");
    align_cmd->add_option("--manifest", al_manifest, "input manifest")->required();
    align_cmd->add_option("--spec", al_spec, "normalization spec")
        ->required()
        ->check(CLI::IsMember({"train", "test"}));
    align_cmd->add_option("--out", al_out, "output directory")->required();
    align_cmd->add_option("--workers", al_workers, "parallel workers");

    // train
    std::string tr_arch = "A", tr_data, tr_config, tr_out, tr_resume, tr_log,
                tr_activation = "mfm";
    int tr_classes = 10575;
    float tr_width = 1.0f;
    uint64_t tr_seed = 42;
    auto* train_cmd = app.add_subcommand("train", "train a model with SGD");
    train_cmd->add_option("--arch", tr_arch, "architecture")
        ->check(CLI::IsMember({"A", "B"}));
    train_cmd->add_option("--data", tr_data, "dataset directory with manifest.txt")
        ->required();
    train_cmd->add_option("--config", tr_config, "solver config (key = value)");
    train_cmd->add_option("--out", tr_out, "output model path")->required();
    train_cmd->add_option("--resume", tr_resume, "checkpoint to resume from");
    train_cmd->add_option("--log", tr_log, "training log CSV path");
    train_cmd->add_option("--classes", tr_classes, "softmax classes");
    train_cmd->add_option("--width", tr_width, "width multiplier");
    train_cmd->add_option("--activation", tr_activation, "mfm or relu");
    auto* tr_seed_opt = train_cmd->add_option("--seed", tr_seed, "overrides config seed");

    // extract
    std::string ex_model, ex_manifest, ex_out;
    int ex_workers = 1;
    auto* extract_cmd = app.add_subcommand("extract", "extract 256-d embeddings");
    extract_cmd->add_option("--model", ex_model, "model file")->required();
    extract_cmd->add_option("--manifest", ex_manifest, "image manifest")->required();
    extract_cmd->add_option("--out", ex_out, "output embedding file")->required();
    extract_cmd->add_option("--workers", ex_workers, "parallel workers");

    // eval
    std::string ev_protocol, ev_embeddings, ev_pairs, ev_probes, ev_fold_csv;
    double ev_far = 0.01;
    int ev_samples = 100;
    uint64_t ev_seed = 42;
    auto* eval_cmd = app.add_subcommand("eval", "run a verification/identification protocol");
    eval_cmd->add_option("--protocol", ev_protocol, "protocol")
        ->required()
        ->check(CLI::IsMember({"lfw-verify", "lfw-closed", "lfw-open", "ytf"}));
    eval_cmd->add_option("--embeddings", ev_embeddings, "embedding file")->required();
    eval_cmd->add_option("--pairs", ev_pairs, "pair list");
    eval_cmd->add_option("--gallery,--probes", ev_probes, "gallery/probe list");
    auto* ev_far_opt = eval_cmd->add_option("--far", ev_far, "false-accept rate");
    eval_cmd->add_option("--samples", ev_samples, "frames sampled per video (ytf)");
    eval_cmd->add_option("--seed", ev_seed, "sampling seed");
    eval_cmd->add_option("--fold-csv", ev_fold_csv, "per-fold results CSV");

    // bench
    std::string be_arch = "A";
    int be_iters = 100, be_threads = 1, be_classes = 10575;
    float be_width = 1.0f;
    uint64_t be_seed = 42;
    auto* bench_cmd = app.add_subcommand("bench", "single-core latency benchmark");
    bench_cmd->add_option("--arch", be_arch, "architecture")
        ->check(CLI::IsMember({"A", "B"}));
    bench_cmd->add_option("--iters", be_iters, "timed iterations")
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--threads", be_threads, "worker threads (must be 1)");
    bench_cmd->add_option("--classes", be_classes, "softmax classes");
    bench_cmd->add_option("--width", be_width, "width multiplier");
    bench_cmd->add_option("--seed", be_seed, "init seed");

    // mfm-stats
    std::string mf_model, mf_manifest, mf_out;
    auto* mfm_cmd = app.add_subcommand("mfm-stats", "MFM value/gradient histograms");
    mfm_cmd->add_option("--model", mf_model, "model file")->required();
    mfm_cmd->add_option("--manifest", mf_manifest, "image manifest")->required();
    mfm_cmd->add_option("--out", mf_out, "histogram CSV path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (align_cmd->parsed()) return run_align(al_manifest, al_spec, al_out, al_workers);
        if (train_cmd->parsed())
            return run_train(tr_arch, tr_data, tr_config, tr_out, tr_resume, tr_log,
                             tr_classes, tr_width, tr_activation, tr_seed,
                             tr_seed_opt->count() > 0);
        if (extract_cmd->parsed()) return run_extract(ex_model, ex_manifest, ex_out, ex_workers);
        if (eval_cmd->parsed())
            return run_eval(ev_protocol, ev_embeddings, ev_pairs, ev_probes, ev_far,
                            ev_far_opt->count() > 0, ev_samples, ev_seed, ev_fold_csv);
        if (bench_cmd->parsed())
            return run_bench(be_arch, be_iters, be_threads, be_classes, be_width, be_seed);
        if (mfm_cmd->parsed()) return run_mfm_stats(mf_model, mf_manifest, mf_out);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 1;
}
