#pragma once

#include <span>
#include <string>
#include <vector>

#include "lcnn/model.hpp"

namespace lcnn {

struct Embedding {
    std::string id;
    std::vector<float> values;
};

// fc1 activations in test mode; input must be 1x1x128x128
Embedding extract_embedding(NetworkModel& model, const Tensor& image);

float cosine_similarity(std::span<const float> a, std::span<const float> b);

struct ScoredPair {
    float score;
    bool same;
};

struct VerificationResult {
    double mean_accuracy = 0;
    std::vector<double> fold_accuracies;
    std::vector<double> fold_thresholds;
};

// Unsupervised protocol: for each test fold, the threshold maximizing
// accuracy on the remaining folds (candidates are midpoints of adjacent
// sorted scores, ties resolved to the lowest threshold), classified by
// score >= threshold => same.
VerificationResult verification_10fold(const std::vector<std::vector<ScoredPair>>& folds);

// step-function ROC, no interpolation: the smallest candidate threshold
// whose false-accept rate is <= far
double tpr_at_far(const std::vector<ScoredPair>& scores, double far);

struct GalleryEntry {
    std::string id;
    int identity = 0;
    std::vector<float> embedding;
};

double closed_set_rank1(const std::vector<GalleryEntry>& gallery,
                        const std::vector<GalleryEntry>& probes);

// DIR at the given FAR: thresholds are calibrated on the impostors' best
// gallery scores; a genuine probe counts if its rank-1 identity is correct
// and its best score clears the threshold
double open_set_dir_far(const std::vector<GalleryEntry>& gallery,
                        const std::vector<GalleryEntry>& genuine,
                        const std::vector<GalleryEntry>& impostors, double far);

// mean cosine similarity over all cross pairs of (up to) n frames sampled
// without replacement from each video
double ytf_video_similarity(const std::vector<std::vector<float>>& frames_a,
                            const std::vector<std::vector<float>>& frames_b, int n,
                            Rng& rng);

// ------------------------------------------------------------ mfm stats

struct HistogramBin {
    double lo, hi;
    long long count;
};

struct LayerHistogram {
    std::string layer;  // "mfm1" ... or "all"
    std::string kind;   // "value" | "gradient"
    std::vector<HistogramBin> bins;
};

struct MfmStats {
    std::vector<LayerHistogram> histograms;
    long long value_count = 0;
    long long gradient_count = 0;
    long long gradient_zeros = 0;

    double gradient_zero_fraction() const {
        return gradient_count ? static_cast<double>(gradient_zeros) / gradient_count : 0.0;
    }
};

// Forwards each image, then backpropagates the softmax loss, histogramming
// all MFM output values and MFM input gradients. Exact zeros get their own
// [0,0] bin; the rest fall into `bins` equal-width bins.
MfmStats mfm_stats(NetworkModel& model, const std::vector<Tensor>& images,
                   std::span<const int> labels, int bins = 40);

void write_mfm_stats_csv(const std::string& path, const MfmStats& stats);

// ------------------------------------------------------ file interfaces

// LCNE: magic, version u32, count u32, dim u32, count*dim little-endian
// f32, then newline-terminated UTF-8 ids
void write_embeddings(const std::string& path, const std::vector<Embedding>& embeddings);
std::vector<Embedding> read_embeddings(const std::string& path);

struct PairRecord {
    std::string id_a, id_b;
    bool same;
    int fold;
};

// one pair per line: idA idB label(1/0) fold-index
std::vector<PairRecord> read_pair_list(const std::string& path);

enum class ProbeRole { Gallery, Genuine, Impostor };

struct ProbeRecord {
    std::string id;
    int identity;
    ProbeRole role;
};

// one record per line: id identity-label role(gallery|genuine|impostor)
std::vector<ProbeRecord> read_probe_list(const std::string& path);

}  // namespace lcnn
