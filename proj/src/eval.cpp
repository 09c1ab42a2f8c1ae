#include "lcnn/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "lcnn/layers.hpp"

namespace lcnn {

Embedding extract_embedding(NetworkModel& model, const Tensor& image) {
    if (image.n() != 1)
        throw std::invalid_argument("extract_embedding: expected a single image, got batch " +
                                    std::to_string(image.n()));
    Tensor features = model.extract_features(image);
    Embedding emb;
    emb.values.assign(features.data(), features.data() + features.size());
    for (float v : emb.values)
        if (!std::isfinite(v))
            throw std::runtime_error("extract_embedding: non-finite activation");
    return emb;
}

float cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("cosine_similarity: dimension mismatch (" +
                                    std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("cosine_similarity: zero-norm vector");
    return static_cast<float>(dot / (std::sqrt(na) * std::sqrt(nb)));
}

namespace {

// candidates are midpoints of adjacent sorted scores; single-score sets fall
// back to the score itself
std::vector<double> threshold_candidates(std::vector<float> scores) {
    std::sort(scores.begin(), scores.end());
    std::vector<double> cands;
    if (scores.size() == 1) {
        cands.push_back(scores[0]);
        return cands;
    }
    for (size_t i = 0; i + 1 < scores.size(); ++i)
        cands.push_back((static_cast<double>(scores[i]) + scores[i + 1]) / 2.0);
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
    return cands;
}

long long correct_at(const std::vector<ScoredPair>& pairs, double tau) {
    long long correct = 0;
    for (const auto& p : pairs)
        if ((p.score >= tau) == p.same) ++correct;
    return correct;
}

}  // namespace

VerificationResult verification_10fold(const std::vector<std::vector<ScoredPair>>& folds) {
    if (folds.size() < 2)
        throw std::invalid_argument("verification: need at least 2 folds, got " +
                                    std::to_string(folds.size()));
    for (size_t i = 0; i < folds.size(); ++i)
        if (folds[i].empty())
            throw std::invalid_argument("verification: fold " + std::to_string(i) +
                                        " is empty");

    VerificationResult result;
    for (size_t test = 0; test < folds.size(); ++test) {
        std::vector<ScoredPair> train;
        for (size_t j = 0; j < folds.size(); ++j)
            if (j != test) train.insert(train.end(), folds[j].begin(), folds[j].end());

        // sorted training scores with prefix counts of same-pairs
        std::vector<ScoredPair> sorted = train;
        std::sort(sorted.begin(), sorted.end(),
                  [](const ScoredPair& a, const ScoredPair& b) { return a.score < b.score; });
        std::vector<float> scores(sorted.size());
        std::vector<long long> same_prefix(sorted.size() + 1, 0);
        long long total_same = 0;
        for (size_t i = 0; i < sorted.size(); ++i) {
            scores[i] = sorted[i].score;
            same_prefix[i + 1] = same_prefix[i] + (sorted[i].same ? 1 : 0);
            total_same += sorted[i].same ? 1 : 0;
        }

        double best_tau = 0;
        long long best_correct = -1;
        for (double tau : threshold_candidates(scores)) {
            // first index with score >= tau
            size_t idx = std::lower_bound(scores.begin(), scores.end(), tau) -
                         scores.begin();
            long long correct = (total_same - same_prefix[idx]) +
                                (static_cast<long long>(idx) - same_prefix[idx]);
            if (correct > best_correct) {  // ties keep the lowest tau
                best_correct = correct;
                best_tau = tau;
            }
        }

        const double acc = static_cast<double>(correct_at(folds[test], best_tau)) /
                           static_cast<double>(folds[test].size());
        result.fold_thresholds.push_back(best_tau);
        result.fold_accuracies.push_back(acc);
    }
    result.mean_accuracy =
        std::accumulate(result.fold_accuracies.begin(), result.fold_accuracies.end(), 0.0) /
        static_cast<double>(result.fold_accuracies.size());
    return result;
}

double tpr_at_far(const std::vector<ScoredPair>& scores, double far) {
    std::vector<float> pos, neg;
    for (const auto& p : scores) (p.same ? pos : neg).push_back(p.score);
    if (neg.empty())
        throw std::invalid_argument("tpr_at_far: need at least one different-pair");
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());

    std::vector<float> cands;
    cands.reserve(pos.size() + neg.size() + 1);
    cands.insert(cands.end(), pos.begin(), pos.end());
    cands.insert(cands.end(), neg.begin(), neg.end());
    std::sort(cands.begin(), cands.end());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
    // strictest fallback: a threshold just above every score
    cands.push_back(std::nextafter(cands.back(), std::numeric_limits<float>::infinity()));

    for (float tau : cands) {
        const double fa =
            static_cast<double>(neg.end() - std::lower_bound(neg.begin(), neg.end(), tau)) /
            static_cast<double>(neg.size());
        if (fa <= far) {
            if (pos.empty()) return 0.0;
            return static_cast<double>(pos.end() -
                                       std::lower_bound(pos.begin(), pos.end(), tau)) /
                   static_cast<double>(pos.size());
        }
    }
    return 0.0;  // unreachable: the sentinel always has FAR 0
}

namespace {

struct Rank1 {
    float score;
    int identity;
};

Rank1 best_gallery_match(const std::vector<GalleryEntry>& gallery,
                         std::span<const float> probe) {
    Rank1 best{-std::numeric_limits<float>::infinity(), -1};
    for (const auto& g : gallery) {
        // strict > keeps the lowest gallery index on ties
        float s = cosine_similarity(probe, g.embedding);
        if (s > best.score) best = {s, g.identity};
    }
    return best;
}

void check_gallery(const std::vector<GalleryEntry>& gallery) {
    if (gallery.empty()) throw std::invalid_argument("identification: empty gallery");
    std::unordered_set<int> ids;
    for (const auto& g : gallery)
        if (!ids.insert(g.identity).second)
            throw std::invalid_argument("identification: duplicate gallery identity " +
                                        std::to_string(g.identity));
}

}  // namespace

double closed_set_rank1(const std::vector<GalleryEntry>& gallery,
                        const std::vector<GalleryEntry>& probes) {
    check_gallery(gallery);
    if (probes.empty()) throw std::invalid_argument("closed_set_rank1: no probes");
    long long correct = 0;
    for (const auto& p : probes)
        if (best_gallery_match(gallery, p.embedding).identity == p.identity) ++correct;
    return static_cast<double>(correct) / static_cast<double>(probes.size());
}

double open_set_dir_far(const std::vector<GalleryEntry>& gallery,
                        const std::vector<GalleryEntry>& genuine,
                        const std::vector<GalleryEntry>& impostors, double far) {
    check_gallery(gallery);
    if (genuine.empty()) throw std::invalid_argument("open_set_dir_far: no genuine probes");
    if (impostors.empty())
        throw std::invalid_argument(
            "open_set_dir_far: no impostor probes (threshold undefined)");
    {
        std::unordered_set<int> gallery_ids;
        for (const auto& g : gallery) gallery_ids.insert(g.identity);
        for (const auto& im : impostors)
            if (gallery_ids.count(im.identity))
                throw std::invalid_argument("open_set_dir_far: impostor identity " +
                                            std::to_string(im.identity) +
                                            " present in the gallery");
    }

    std::vector<float> imp_scores;
    imp_scores.reserve(impostors.size());
    for (const auto& im : impostors)
        imp_scores.push_back(best_gallery_match(gallery, im.embedding).score);
    std::sort(imp_scores.begin(), imp_scores.end());

    std::vector<float> cands = imp_scores;
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
    cands.push_back(std::nextafter(cands.back(), std::numeric_limits<float>::infinity()));

    double tau = cands.back();
    for (float c : cands) {
        const double fa = static_cast<double>(imp_scores.end() -
                                              std::lower_bound(imp_scores.begin(),
                                                               imp_scores.end(), c)) /
                          static_cast<double>(imp_scores.size());
        if (fa <= far) {
            tau = c;
            break;
        }
    }

    long long hits = 0;
    for (const auto& p : genuine) {
        Rank1 r = best_gallery_match(gallery, p.embedding);
        if (r.identity == p.identity && r.score >= tau) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(genuine.size());
}

double ytf_video_similarity(const std::vector<std::vector<float>>& frames_a,
                            const std::vector<std::vector<float>>& frames_b, int n,
                            Rng& rng) {
    if (frames_a.empty() || frames_b.empty())
        throw std::invalid_argument("ytf_video_similarity: empty frame list");
    if (n < 1) throw std::invalid_argument("ytf_video_similarity: n must be >= 1");

    auto sample = [&rng, n](const std::vector<std::vector<float>>& frames) {
        std::vector<int> idx(frames.size());
        std::iota(idx.begin(), idx.end(), 0);
        const int take = std::min<int>(n, static_cast<int>(frames.size()));
        // partial Fisher-Yates: without replacement
        for (int i = 0; i < take; ++i)
            std::swap(idx[i], idx[rng.uniform_int(i, static_cast<int>(idx.size()) - 1)]);
        idx.resize(take);
        return idx;
    };
    const std::vector<int> ia = sample(frames_a);
    const std::vector<int> ib = sample(frames_b);

    double total = 0;
    for (int a : ia)
        for (int b : ib) total += cosine_similarity(frames_a[a], frames_b[b]);
    return total / (static_cast<double>(ia.size()) * static_cast<double>(ib.size()));
}

// ---------------------------------------------------------------- mfm stats

namespace {

void append_histogram(std::vector<LayerHistogram>& out, const std::string& layer,
                      const std::string& kind, const std::vector<float>& values,
                      int bins) {
    LayerHistogram hist{layer, kind, {}};
    long long zeros = 0;
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (float v : values) {
        if (v == 0.0f) {
            ++zeros;
            continue;
        }
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    hist.bins.push_back({0.0, 0.0, zeros});

    const long long nonzero = static_cast<long long>(values.size()) - zeros;
    if (nonzero > 0) {
        double width = (static_cast<double>(hi) - lo) / bins;
        if (width <= 0.0) {  // all nonzero values identical
            hist.bins.push_back({lo, hi, nonzero});
        } else {
            std::vector<long long> counts(bins, 0);
            for (float v : values) {
                if (v == 0.0f) continue;
                int b = static_cast<int>((v - lo) / width);
                b = std::clamp(b, 0, bins - 1);
                ++counts[b];
            }
            for (int b = 0; b < bins; ++b)
                hist.bins.push_back({lo + b * width, lo + (b + 1) * width, counts[b]});
        }
    }
    out.push_back(std::move(hist));
}

}  // namespace

MfmStats mfm_stats(NetworkModel& model, const std::vector<Tensor>& images,
                   std::span<const int> labels, int bins) {
    if (images.empty()) throw std::invalid_argument("mfm_stats: need at least one image");
    if (labels.size() != images.size())
        throw std::invalid_argument("mfm_stats: label count does not match image count");

    auto& layers = model.layers();
    std::vector<std::string> mfm_names;
    for (const auto& l : layers)
        if (l->kind() == LayerKind::Mfm) mfm_names.push_back(l->name());

    std::vector<std::vector<float>> values(mfm_names.size());
    std::vector<std::vector<float>> grads(mfm_names.size());

    for (size_t i = 0; i < images.size(); ++i) {
        // manual forward so every MFM output can be captured
        Tensor cur = images[i];
        size_t mfm_idx = 0;
        for (auto& layer : layers) {
            cur = layer->forward(cur, false, nullptr);
            if (layer->kind() == LayerKind::Mfm) {
                values[mfm_idx].insert(values[mfm_idx].end(), cur.data(),
                                       cur.data() + cur.size());
                ++mfm_idx;
            }
        }

        auto [loss, dlogits] = softmax_cross_entropy_batch(
            cur, std::span<const int>(&labels[i], 1));
        (void)loss;

        Tensor dcur = dlogits;
        mfm_idx = mfm_names.size();
        for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
            dcur = (*it)->backward(dcur);
            if ((*it)->kind() == LayerKind::Mfm) {
                --mfm_idx;
                grads[mfm_idx].insert(grads[mfm_idx].end(), dcur.data(),
                                      dcur.data() + dcur.size());
            }
        }
    }

    MfmStats stats;
    std::vector<float> all_values, all_grads;
    for (size_t i = 0; i < mfm_names.size(); ++i) {
        append_histogram(stats.histograms, mfm_names[i], "value", values[i], bins);
        append_histogram(stats.histograms, mfm_names[i], "gradient", grads[i], bins);
        all_values.insert(all_values.end(), values[i].begin(), values[i].end());
        all_grads.insert(all_grads.end(), grads[i].begin(), grads[i].end());
    }
    append_histogram(stats.histograms, "all", "value", all_values, bins);
    append_histogram(stats.histograms, "all", "gradient", all_grads, bins);

    stats.value_count = static_cast<long long>(all_values.size());
    stats.gradient_count = static_cast<long long>(all_grads.size());
    for (float g : all_grads)
        if (g == 0.0f) ++stats.gradient_zeros;
    return stats;
}

void write_mfm_stats_csv(const std::string& path, const MfmStats& stats) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write histogram csv: " + path);
    out << "layer,kind,bin_lo,bin_hi,count\n";
    char buf[160];
    for (const auto& hist : stats.histograms)
        for (const auto& bin : hist.bins) {
            std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%.9g,%lld\n", hist.layer.c_str(),
                          hist.kind.c_str(), bin.lo, bin.hi, bin.count);
            out << buf;
        }
    if (!out) throw std::runtime_error("failed writing histogram csv: " + path);
}

// ------------------------------------------------------------ file formats

void write_embeddings(const std::string& path, const std::vector<Embedding>& embeddings) {
    if (embeddings.empty())
        throw std::invalid_argument("write_embeddings: nothing to write");
    const size_t dim = embeddings[0].values.size();
    for (const auto& e : embeddings)
        if (e.values.size() != dim)
            throw std::invalid_argument("write_embeddings: inconsistent dimension for id " +
                                        e.id);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write embedding file: " + path);
    out.write("LCNE", 4);
    auto u32 = [&out](uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>(v >> (8 * i));
        out.write(b, 4);
    };
    u32(1);  // version
    u32(static_cast<uint32_t>(embeddings.size()));
    u32(static_cast<uint32_t>(dim));
    for (const auto& e : embeddings)
        for (float v : e.values) u32(std::bit_cast<uint32_t>(v));
    for (const auto& e : embeddings) out << e.id << '\n';
    if (!out) throw std::runtime_error("failed writing embedding file: " + path);
}

std::vector<Embedding> read_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open embedding file: " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "LCNE")
        throw std::runtime_error(path + ": not an LCNE embedding file");
    auto u32 = [&in, &path]() {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        if (!in) throw std::runtime_error(path + ": truncated embedding file");
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
        return v;
    };
    const uint32_t version = u32();
    if (version != 1)
        throw std::runtime_error(path + ": unknown embedding file version " +
                                 std::to_string(version));
    const uint32_t count = u32();
    const uint32_t dim = u32();
    if (count == 0 || dim == 0)
        throw std::runtime_error(path + ": empty embedding file");

    std::vector<Embedding> embeddings(count);
    for (auto& e : embeddings) {
        e.values.resize(dim);
        for (auto& v : e.values) v = std::bit_cast<float>(u32());
    }
    for (auto& e : embeddings) {
        if (!std::getline(in, e.id))
            throw std::runtime_error(path + ": missing embedding ids");
    }
    return embeddings;
}

namespace {

std::vector<std::vector<std::string>> read_token_lines(const std::string& path,
                                                       size_t expected_fields,
                                                       const char* what) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(std::string("cannot open ") + what + ": " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::vector<std::string> fields;
        std::string tok;
        while (ss >> tok) fields.push_back(tok);
        if (fields.size() != expected_fields)
            throw std::runtime_error(std::string(what) + " line " + std::to_string(lineno) +
                                     ": expected " + std::to_string(expected_fields) +
                                     " fields, got " + std::to_string(fields.size()));
        rows.push_back(std::move(fields));
    }
    return rows;
}

}  // namespace

std::vector<PairRecord> read_pair_list(const std::string& path) {
    std::vector<PairRecord> pairs;
    for (const auto& f : read_token_lines(path, 4, "pair list")) {
        PairRecord p;
        p.id_a = f[0];
        p.id_b = f[1];
        if (f[2] == "1")
            p.same = true;
        else if (f[2] == "0")
            p.same = false;
        else
            throw std::runtime_error("pair list: label must be 1 or 0, got '" + f[2] + "'");
        p.fold = std::stoi(f[3]);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

std::vector<ProbeRecord> read_probe_list(const std::string& path) {
    std::vector<ProbeRecord> records;
    for (const auto& f : read_token_lines(path, 3, "probe list")) {
        ProbeRecord r;
        r.id = f[0];
        r.identity = std::stoi(f[1]);
        if (f[2] == "gallery")
            r.role = ProbeRole::Gallery;
        else if (f[2] == "genuine")
            r.role = ProbeRole::Genuine;
        else if (f[2] == "impostor")
            r.role = ProbeRole::Impostor;
        else
            throw std::runtime_error("probe list: unknown role '" + f[2] + "'");
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace lcnn
