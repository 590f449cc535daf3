#include "emdl/eval.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "emdl/executor.hpp"
#include "emdl/image.hpp"

namespace emdl {

using nlohmann::json;

int emotion_index(const std::string& label) {
    for (size_t i = 0; i < kEmotionLabels.size(); ++i)
        if (label == kEmotionLabels[i]) return static_cast<int>(i);
    return -1;
}

std::vector<ManifestEntry> load_manifest(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error("manifest is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "path,label,subset")
        throw Error("manifest header must be 'path,label,subset', got '" + line + "'");

    std::vector<ManifestEntry> entries;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string path, label, subset;
        if (!std::getline(ss, path, ',') || !std::getline(ss, label, ',') ||
            !std::getline(ss, subset))
            throw Error("malformed manifest row at line " + std::to_string(lineno));

        ManifestEntry e;
        e.path = path;
        e.label = emotion_index(label);
        if (e.label < 0)
            throw Error("unknown label '" + label + "' at line " + std::to_string(lineno));
        if (subset == "A")
            e.subset = Subset::A;
        else if (subset == "B")
            e.subset = Subset::B;
        else if (subset == "-")
            e.subset = Subset::None;
        else
            throw Error("unknown subset '" + subset + "' at line " + std::to_string(lineno));
        entries.push_back(std::move(e));
    }
    return entries;
}

std::vector<ManifestEntry> load_manifest_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return load_manifest(in);
}

int64_t ConfusionMatrix::total() const {
    int64_t t = 0;
    for (int64_t v : counts) t += v;
    return t;
}

int64_t ConfusionMatrix::row_sum(int truth) const {
    int64_t t = 0;
    for (int p = 0; p < classes; ++p) t += at(truth, p);
    return t;
}

int64_t ConfusionMatrix::col_sum(int pred) const {
    int64_t t = 0;
    for (int r = 0; r < classes; ++r) t += at(r, pred);
    return t;
}

double balanced_accuracy(const ConfusionMatrix& cm) {
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < cm.classes; ++c) {
        int64_t row = cm.row_sum(c);
        if (row == 0) continue;
        sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
        ++present;
    }
    if (present == 0) throw Error("confusion matrix has no true samples");
    return sum / present;
}

std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm) {
    std::vector<ClassMetrics> out(static_cast<size_t>(cm.classes));
    for (int c = 0; c < cm.classes; ++c) {
        int64_t row = cm.row_sum(c);
        int64_t col = cm.col_sum(c);
        int64_t diag = cm.at(c, c);
        ClassMetrics& cmx = out[static_cast<size_t>(c)];
        cmx.precision = col > 0 ? static_cast<double>(diag) / static_cast<double>(col) : 0.0;
        cmx.recall = row > 0 ? static_cast<double>(diag) / static_cast<double>(row) : 0.0;
        double denom = cmx.precision + cmx.recall;
        cmx.f1 = denom > 0.0 ? 2.0 * cmx.precision * cmx.recall / denom : 0.0;
    }
    return out;
}

double macro_f1(const ConfusionMatrix& cm) {
    auto per = per_class_metrics(cm);
    double sum = 0.0;
    for (const auto& c : per) sum += c.f1;
    return sum / static_cast<double>(cm.classes);
}

namespace {

SubsetMetrics finish_subset(std::string name, ConfusionMatrix cm) {
    SubsetMetrics s;
    s.subset = std::move(name);
    s.entries = cm.total();
    s.balanced_accuracy = balanced_accuracy(cm);
    s.macro_f1 = macro_f1(cm);
    s.per_class = per_class_metrics(cm);
    s.cm = std::move(cm);
    return s;
}

} // namespace

MetricsReport evaluate(const Model& m, std::span<const ManifestEntry> entries, int threads,
                       const std::string& base_dir) {
    if (entries.empty()) throw Error("manifest has no entries");

    Executor ex(m, threads);
    const int64_t out_n = ex.output_elems();
    if (out_n != 7)
        throw Error("model has " + std::to_string(out_n) + " outputs, expected 7 classes");

    ConfusionMatrix full(7), a(7), b(7);
    for (const ManifestEntry& e : entries) {
        std::string path = e.path;
        if (!path.empty() && path[0] != '/') path = base_dir + "/" + path;
        Tensor input = load_input(path, m.graph.input_shape);
        Tensor probs = ex.infer(input);
        auto p = probs.f32();
        int pred = 0;
        for (int c = 1; c < 7; ++c)
            if (p[static_cast<size_t>(c)] > p[static_cast<size_t>(pred)]) pred = c;
        ++full.at(e.label, pred);
        if (e.subset == Subset::A) ++a.at(e.label, pred);
        if (e.subset == Subset::B) ++b.at(e.label, pred);
    }

    MetricsReport r;
    r.full = finish_subset("full", std::move(full));
    if (a.total() > 0) r.subset_a = finish_subset("A", std::move(a));
    if (b.total() > 0) r.subset_b = finish_subset("B", std::move(b));
    return r;
}

void write_confusion_csv(const ConfusionMatrix& cm, std::ostream& out) {
    if (cm.classes != 7) throw Error("confusion CSV export expects 7 classes");
    for (int c = 0; c < 7; ++c) out << (c ? "," : "") << kEmotionLabels[static_cast<size_t>(c)];
    out << "\n";
    for (int t = 0; t < 7; ++t) {
        for (int p = 0; p < 7; ++p) out << (p ? "," : "") << cm.at(t, p);
        out << "\n";
    }
}

namespace {

json subset_json(const SubsetMetrics& s) {
    json j;
    j["subset"] = s.subset;
    j["entries"] = s.entries;
    j["balanced_accuracy"] = s.balanced_accuracy;
    j["macro_f1"] = s.macro_f1;
    json per = json::array();
    for (size_t c = 0; c < s.per_class.size(); ++c) {
        per.push_back({{"label", kEmotionLabels[c]},
                       {"precision", s.per_class[c].precision},
                       {"recall", s.per_class[c].recall},
                       {"f1", s.per_class[c].f1}});
    }
    j["per_class"] = std::move(per);
    json rows = json::array();
    for (int t = 0; t < s.cm.classes; ++t) {
        json row = json::array();
        for (int p = 0; p < s.cm.classes; ++p) row.push_back(s.cm.at(t, p));
        rows.push_back(std::move(row));
    }
    j["confusion"] = std::move(rows);
    return j;
}

} // namespace

std::string MetricsReport::to_json() const {
    json j;
    json subsets = json::array();
    subsets.push_back(subset_json(full));
    if (subset_a) subsets.push_back(subset_json(*subset_a));
    if (subset_b) subsets.push_back(subset_json(*subset_b));
    j["subsets"] = std::move(subsets);
    j["balanced_accuracy"] = full.balanced_accuracy;
    j["macro_f1"] = full.macro_f1;
    return j.dump(2);
}

} // namespace emdl
