// emdl command line: inspect, compress, bench, eval, plot, convert and
// make-mobilenetv2 over EMDL model files.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "emdl/bench.hpp"
#include "emdl/compress.hpp"
#include "emdl/eval.hpp"
#include "emdl/executor.hpp"
#include "emdl/image.hpp"
#include "emdl/mobilenet.hpp"
#include "emdl/model_io.hpp"
#include "emdl/plot.hpp"

using nlohmann::json;

namespace {

std::string dirname_of(const std::string& path) {
    auto pos = path.find_last_of('/');
    return pos == std::string::npos ? std::string(".") : path.substr(0, pos);
}

// "4", "1,2,4,8" or "1..8"
std::vector<int> parse_thread_spec(const std::string& spec) {
    std::vector<int> out;
    auto dots = spec.find("..");
    if (dots != std::string::npos) {
        int a = std::stoi(spec.substr(0, dots));
        int b = std::stoi(spec.substr(dots + 2));
        if (a < 1 || b < a) throw emdl::Error("invalid thread range '" + spec + "'");
        for (int t = a; t <= b; ++t) out.push_back(t);
        return out;
    }
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        int t = std::stoi(item);
        if (t < 1) throw emdl::Error("invalid thread count '" + item + "'");
        out.push_back(t);
    }
    if (out.empty()) throw emdl::Error("empty thread spec");
    return out;
}

std::vector<std::string> default_labels(int classes) {
    if (classes == 7)
        return {emdl::kEmotionLabels.begin(), emdl::kEmotionLabels.end()};
    std::vector<std::string> labels;
    for (int i = 0; i < classes; ++i) labels.push_back("class_" + std::to_string(i));
    return labels;
}

int cmd_inspect(const std::string& path, bool as_json) {
    emdl::Model m = emdl::load_model_file(path);
    int64_t params = emdl::count_params(m.graph);
    int64_t madds = emdl::count_madds(m.graph);
    emdl::EncodedSize enc = emdl::encoded_size(m);
    int64_t act_peak = emdl::activation_peak_bytes(m);
    auto shapes = emdl::infer_shapes(m.graph);

    if (as_json) {
        json j;
        j["name"] = m.name;
        j["labels"] = m.labels;
        j["params"] = params;
        j["madds"] = madds;
        json bytes;
        bytes["total"] = enc.total;
        bytes["activation_peak"] = act_peak;
        for (const auto& [name, b] : enc.per_encoding) bytes[name] = b;
        j["bytes"] = std::move(bytes);
        json layers = json::array();
        for (const auto& n : m.graph.nodes) {
            json l;
            l["id"] = n.id;
            l["kind"] = emdl::node_kind_name(n.kind);
            l["output_shape"] = shapes.at(n.id).dims;
            if (n.parameterized()) {
                int64_t p = m.graph.weights.at(n.weights).elems();
                if (!n.bias.empty()) p += m.graph.weights.at(n.bias).elems();
                l["params"] = p;
            }
            layers.push_back(std::move(l));
        }
        j["layers"] = std::move(layers);
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    std::printf("name: %s\n", m.name.c_str());
    if (!m.labels.empty()) {
        std::printf("labels:");
        for (const auto& l : m.labels) std::printf(" %s", l.c_str());
        std::printf("\n");
    }
    std::printf("params: %lld\n", static_cast<long long>(params));
    std::printf("madds: %lld\n", static_cast<long long>(madds));
    std::printf("encoded bytes: %lld\n", static_cast<long long>(enc.total));
    for (const auto& [name, b] : enc.per_encoding)
        std::printf("  %-5s %lld\n", name.c_str(), static_cast<long long>(b));
    std::printf("activation peak bytes: %lld\n", static_cast<long long>(act_peak));
    std::printf("%-20s %-16s %-18s %s\n", "layer", "kind", "output", "params");
    for (const auto& n : m.graph.nodes) {
        int64_t p = 0;
        if (n.parameterized()) {
            p = m.graph.weights.at(n.weights).elems();
            if (!n.bias.empty()) p += m.graph.weights.at(n.bias).elems();
        }
        std::printf("%-20s %-16s %-18s %lld\n", n.id.c_str(), emdl::node_kind_name(n.kind),
                    shapes.at(n.id).str().c_str(), static_cast<long long>(p));
    }
    return 0;
}

int cmd_compress(const std::string& in_path, const std::string& out_path, double sparsity,
                 int clusters, bool quantize, const std::string& calib_manifest,
                 int calib_random, uint64_t seed, int threads, bool as_json) {
    emdl::Model m = emdl::load_model_file(in_path);

    emdl::CompressionConfig cfg;
    cfg.sparsity = sparsity;
    if (clusters > 0) cfg.clusters = clusters;
    cfg.quantize = quantize;
    cfg.calib_random = calib_random;
    cfg.seed = seed;
    cfg.threads = threads;
    if (!calib_manifest.empty()) {
        auto entries = emdl::load_manifest_file(calib_manifest);
        std::string base = dirname_of(calib_manifest);
        for (const auto& e : entries) {
            std::string p = e.path;
            if (!p.empty() && p[0] != '/') p = base + "/" + p;
            cfg.calib_inputs.push_back(emdl::load_input(p, m.graph.input_shape));
        }
    }

    auto [optimized, report] = emdl::optimize_pipeline(std::move(m), cfg);
    emdl::save_model_file(optimized, out_path);

    if (as_json) {
        std::cout << report.to_json() << "\n";
    } else {
        std::printf("original bytes: %lld\n", static_cast<long long>(report.original_bytes));
        std::printf("encoded bytes:  %lld\n", static_cast<long long>(report.encoded_bytes));
        std::printf("ratio: %.2f\n", report.ratio);
        std::printf("wrote %s\n", out_path.c_str());
    }
    return 0;
}

int cmd_bench(const std::string& path, const std::string& thread_spec, int warmup, int runs,
              uint64_t seed, const std::string& csv_path, bool as_json) {
    emdl::Model m = emdl::load_model_file(path);
    emdl::BenchConfig cfg;
    cfg.warmup_runs = warmup;
    cfg.measured_runs = runs;
    cfg.seed = seed;
    if (!thread_spec.empty()) cfg.thread_counts = parse_thread_spec(thread_spec);

    emdl::BenchReport report = emdl::thread_sweep(m, cfg);

    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        if (!out) throw emdl::Error("cannot open " + csv_path + " for writing");
        emdl::emit_bench_csv(report, out);
    }
    if (as_json) {
        std::cout << emdl::bench_report_json(report) << "\n";
    } else {
        std::printf("model: %s  params: %lld  madds: %lld\n", report.model_name.c_str(),
                    static_cast<long long>(report.params), static_cast<long long>(report.madds));
        std::printf("memory: %lld encoded bytes + %lld activation peak bytes\n",
                    static_cast<long long>(report.encoded_bytes),
                    static_cast<long long>(report.activation_peak));
        std::printf("%7s %6s %9s %9s %9s %9s %9s\n", "threads", "runs", "mean_ms", "p50_ms",
                    "p90_ms", "p99_ms", "max_ms");
        for (const auto& s : report.stats)
            std::printf("%7d %6d %9.3f %9.3f %9.3f %9.3f %9.3f\n", s.thread_count, s.runs,
                        s.mean_ms, s.p50_ms, s.p90_ms, s.p99_ms, s.max_ms);
        std::printf("best thread count: %d\n", report.best_threads);
    }
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& manifest_path,
             const std::string& subset, const std::string& confusion_path, int threads,
             bool as_json) {
    emdl::Model m = emdl::load_model_file(model_path);
    auto entries = emdl::load_manifest_file(manifest_path);
    emdl::MetricsReport report =
        emdl::evaluate(m, entries, threads, dirname_of(manifest_path));

    const emdl::SubsetMetrics* selected = &report.full;
    if (subset == "A") {
        if (!report.subset_a) throw emdl::Error("subset A empty");
        selected = &*report.subset_a;
    } else if (subset == "B") {
        if (!report.subset_b) throw emdl::Error("subset B empty");
        selected = &*report.subset_b;
    }

    if (!confusion_path.empty()) {
        std::ofstream out(confusion_path);
        if (!out) throw emdl::Error("cannot open " + confusion_path + " for writing");
        emdl::write_confusion_csv(selected->cm, out);
    }

    if (as_json) {
        std::cout << report.to_json() << "\n";
        return 0;
    }
    auto print_line = [](const emdl::SubsetMetrics& s, bool prefix) {
        if (prefix) std::printf("subset %s: ", s.subset.c_str());
        std::printf("balanced_accuracy: %.2f%%  macro_f1: %.2f%%\n",
                    100.0 * s.balanced_accuracy, 100.0 * s.macro_f1);
    };
    if (subset == "all") {
        print_line(report.full, true);
        if (report.subset_a) print_line(*report.subset_a, true);
        if (report.subset_b) print_line(*report.subset_b, true);
    } else {
        print_line(*selected, false);
    }
    return 0;
}

int cmd_plot(const std::string& csv_path, const std::string& out_path) {
    std::ifstream in(csv_path);
    if (!in) throw emdl::Error("cannot open " + csv_path);
    auto rows = emdl::parse_bench_csv(in);
    std::string svg = emdl::render_latency_svg(rows);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw emdl::Error("cannot open " + out_path + " for writing");
    out << svg;
    return 0;
}

int cmd_make_mobilenetv2(int classes, double width, int size, const std::string& init,
                         uint64_t seed, const std::string& out_path) {
    emdl::WeightInit wi = init == "zeros" ? emdl::WeightInit::Zeros : emdl::WeightInit::Random;
    emdl::Model m = emdl::build_mobilenet_v2(width, classes, size, wi, seed);
    m.labels = default_labels(classes);
    emdl::save_model_file(m, out_path);
    std::printf("wrote %s (%lld params, %lld madds)\n", out_path.c_str(),
                static_cast<long long>(emdl::count_params(m.graph)),
                static_cast<long long>(emdl::count_madds(m.graph)));
    return 0;
}

int cmd_convert(const std::string& spec_path, const std::string& weights_dir,
                const std::string& out_path) {
    std::ifstream in(spec_path);
    if (!in) throw emdl::Error("cannot open " + spec_path);
    std::string text(std::istreambuf_iterator<char>(in), {});
    emdl::Model m = emdl::model_from_graph_json(text, weights_dir);
    emdl::save_model_file(m, out_path);
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"edge CNN inference, compression and evaluation toolkit"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand name

    uint64_t seed = 0;
    int threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads < 1) threads = 1;
    bool as_json = false;
    app.add_option("--seed", seed, "seed for random inputs/weights");
    app.add_option("--threads", threads, "executor thread count")
        ->envname("EMDL_THREADS")
        ->check(CLI::PositiveNumber);
    app.add_flag("--json", as_json, "machine-readable JSON output");

    // inspect
    std::string in_path, out_path;
    auto* inspect = app.add_subcommand("inspect", "print model summary");
    inspect->add_option("model", in_path, "EMDL model file")->required();

    // compress
    double sparsity = 0.0;
    int clusters = 0;
    bool quantize = false;
    std::string calib_manifest;
    int calib_random = 100;
    auto* compress = app.add_subcommand("compress", "prune / cluster / quantize a model");
    compress->add_option("model", in_path, "input EMDL model")->required();
    compress->add_option("-o,--output", out_path, "output EMDL model")->required();
    compress->add_option("--sparsity", sparsity, "fraction of weights to prune")
        ->check(CLI::Range(0.0, 1.0));
    compress->add_option("--clusters", clusters, "k-means codebook size")
        ->check(CLI::Range(2, 256));
    compress->add_flag("--quantize", quantize, "post-training int8 quantization");
    compress->add_option("--calib", calib_manifest, "calibration manifest CSV");
    compress->add_option("--calib-random", calib_random, "random calibration input count")
        ->check(CLI::PositiveNumber);

    // bench
    std::string thread_spec, csv_path;
    int warmup = 10, runs = 50;
    auto* bench = app.add_subcommand("bench", "latency thread sweep");
    bench->add_option("model", in_path, "EMDL model file")->required();
    bench->add_option("--threads", thread_spec, "thread counts, e.g. 1..8 or 1,2,4")
        ->check([](const std::string& s) -> std::string {
            try {
                parse_thread_spec(s);
                return {};
            } catch (const std::exception& e) {
                return e.what();
            }
        });
    bench->add_option("--warmup", warmup, "warmup runs")->check(CLI::NonNegativeNumber);
    bench->add_option("--runs", runs, "measured runs")->check(CLI::PositiveNumber);
    bench->add_option("--csv", csv_path, "write per-thread stats CSV");

    // eval
    std::string manifest_path, subset = "all", confusion_path;
    auto* eval = app.add_subcommand("eval", "evaluate against a labeled manifest");
    eval->add_option("model", in_path, "EMDL model file")->required();
    eval->add_option("--manifest", manifest_path, "manifest CSV")->required();
    eval->add_option("--subset", subset, "all, A or B")
        ->check(CLI::IsMember({"all", "A", "B"}));
    eval->add_option("--confusion", confusion_path, "write confusion matrix CSV");

    // plot
    std::string plot_csv;
    auto* plot = app.add_subcommand("plot", "render bench CSV as an SVG chart");
    plot->add_option("csv", plot_csv, "bench CSV file")->required();
    plot->add_option("-o,--output", out_path, "output SVG path")->required();

    // make-mobilenetv2
    int classes = 7, size = 224;
    double width = 1.0;
    std::string init = "random";
    auto* make = app.add_subcommand("make-mobilenetv2", "build the reference model");
    make->add_option("--classes", classes, "class count")->check(CLI::Range(2, 1000));
    make->add_option("--width", width, "width multiplier")
        ->check(CLI::Range(0.05, 4.0));
    make->add_option("--size", size, "square input size, multiple of 32")
        ->check(CLI::PositiveNumber);
    make->add_option("--init", init, "weight init")->check(CLI::IsMember({"random", "zeros"}));
    make->add_option("-o,--output", out_path, "output EMDL model")->required();

    // convert
    std::string spec_path, weights_dir;
    auto* convert = app.add_subcommand("convert", "assemble EMDL from graph JSON + RTEN dir");
    convert->add_option("--spec", spec_path, "graph JSON file")->required();
    convert->add_option("--weights", weights_dir, "directory of <name>.rten files")->required();
    convert->add_option("-o,--output", out_path, "output EMDL model")->required();

    try {
        app.parse(argc, argv);
        if (make->parsed() && size % 32 != 0) {
            std::cerr << "--size must be a multiple of 32\n";
            return 1;
        }
        if (inspect->parsed()) return cmd_inspect(in_path, as_json);
        if (compress->parsed())
            return cmd_compress(in_path, out_path, sparsity, clusters, quantize, calib_manifest,
                                calib_random, seed, threads, as_json);
        if (bench->parsed())
            return cmd_bench(in_path, thread_spec, warmup, runs, seed, csv_path, as_json);
        if (eval->parsed())
            return cmd_eval(in_path, manifest_path, subset, confusion_path, threads, as_json);
        if (plot->parsed()) return cmd_plot(plot_csv, out_path);
        if (make->parsed())
            return cmd_make_mobilenetv2(classes, width, size, init, seed, out_path);
        if (convert->parsed()) return cmd_convert(spec_path, weights_dir, out_path);
        return 1;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1; // --help exits 0, any parse failure is usage
    } catch (const emdl::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
