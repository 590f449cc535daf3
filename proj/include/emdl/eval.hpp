#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "emdl/graph.hpp"

namespace emdl {

// Canonical class order; manifests and confusion matrices use these indices.
inline constexpr std::array<const char*, 7> kEmotionLabels = {
    "happiness", "sadness", "surprise", "fear", "anger", "disgust", "neutral"};

int emotion_index(const std::string& label); // -1 when unknown

enum class Subset : uint8_t { None, A, B };

struct ManifestEntry {
    std::string path;
    int label = 0; // canonical class index
    Subset subset = Subset::None;
};

// CSV with header `path,label,subset`; labels are the lowercase canonical
// names, subset is A, B or -. Errors name the offending line.
std::vector<ManifestEntry> load_manifest(std::istream& in);
std::vector<ManifestEntry> load_manifest_file(const std::string& path);

// Square counts matrix, rows = true label, columns = predicted.
struct ConfusionMatrix {
    int classes = 7;
    std::vector<int64_t> counts; // classes * classes, row-major

    explicit ConfusionMatrix(int n = 7) : classes(n), counts(static_cast<size_t>(n) * n, 0) {}

    int64_t& at(int truth, int pred) { return counts[static_cast<size_t>(truth) * classes + pred]; }
    int64_t at(int truth, int pred) const {
        return counts[static_cast<size_t>(truth) * classes + pred];
    }
    int64_t total() const;
    int64_t row_sum(int truth) const;
    int64_t col_sum(int pred) const;
};

// Mean per-class recall over classes with at least one true sample.
double balanced_accuracy(const ConfusionMatrix& cm);

// Unweighted mean over all classes of 2pr/(p+r); empty denominators give 0.
double macro_f1(const ConfusionMatrix& cm);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm);

struct SubsetMetrics {
    std::string subset; // "full", "A" or "B"
    ConfusionMatrix cm{7};
    double balanced_accuracy = 0.0;
    double macro_f1 = 0.0;
    std::vector<ClassMetrics> per_class;
    int64_t entries = 0;
};

struct MetricsReport {
    SubsetMetrics full;
    std::optional<SubsetMetrics> subset_a;
    std::optional<SubsetMetrics> subset_b;

    std::string to_json() const;
};

// Runs every manifest entry through the model (argmax prediction, ties to the
// lowest class index) and fills confusion matrices for the full set plus
// subsets A and B. Relative paths resolve against base_dir.
MetricsReport evaluate(const Model& m, std::span<const ManifestEntry> entries, int threads,
                       const std::string& base_dir = ".");

// 7 header columns of canonical label names, then one row per true class.
void write_confusion_csv(const ConfusionMatrix& cm, std::ostream& out);

} // namespace emdl
