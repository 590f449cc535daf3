#pragma once

#include <array>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "emdl/graph.hpp"

namespace emdl {

// Fixed-size worker pool. run(fn) executes fn(worker_index) on every worker
// (the calling thread doubles as worker 0) and returns when all are done.
class WorkerPool {
public:
    explicit WorkerPool(int threads);
    ~WorkerPool();
    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    int threads() const { return threads_; }
    void run(const std::function<void(int)>& fn);

private:
    void worker_loop(int index);

    int threads_;
    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_job_;
    std::condition_variable cv_done_;
    const std::function<void(int)>* job_ = nullptr;
    uint64_t generation_ = 0;
    int pending_ = 0;
    bool stop_ = false;
};

// Splits [0, n) into one contiguous chunk per worker. The partition depends
// only on n and the pool size, never on scheduling, so results that assign
// each output element to exactly one worker are reproducible.
void parallel_chunks(WorkerPool& pool, int64_t n,
                     const std::function<void(int64_t, int64_t)>& fn);

struct MinMax {
    float lo = 0.0f;
    float hi = 0.0f;
    bool seen = false;

    void update(float v) {
        if (!seen) {
            lo = hi = v;
            seen = true;
        } else {
            if (v < lo) lo = v;
            if (v > hi) hi = v;
        }
    }
};

using RangeMap = std::map<std::string, MinMax>;

// Runs a model graph with preallocated per-node buffers. One inference at a
// time; the model must outlive the executor. Picks the float or int8 path
// from the model's weight dtypes.
class Executor {
public:
    Executor(const Model& model, int thread_count);
    Executor(const Executor&) = delete;
    Executor& operator=(const Executor&) = delete;

    // Returns float probabilities (or the raw output edge, dequantized on
    // the int8 path). Output is bitwise identical for any thread count.
    Tensor infer(const Tensor& input);

    // Float-path inference that folds every activation edge (input included)
    // into the running ranges. Used by post-training calibration.
    Tensor infer_recording(const Tensor& input, RangeMap& ranges);

    bool quantized() const { return quantized_; }
    int thread_count() const { return pool_.threads(); }
    const Shape& input_shape() const { return model_.graph.input_shape; }
    int64_t output_elems() const { return shapes_.at(model_.graph.output).elems(); }

private:
    Tensor run(const Tensor& input, RangeMap* ranges);
    void run_float(const Tensor& input, RangeMap* ranges);
    void run_int8(const Tensor& input);

    const Model& model_;
    std::map<std::string, Shape> shapes_;
    WorkerPool pool_;
    bool quantized_ = false;

    // Scratch sized at construction; no allocation during inference.
    std::map<std::string, std::vector<float>> fbuf_;
    std::map<std::string, std::vector<int8_t>> qbuf_;
    std::vector<float> softmax_scratch_;
    // int8 path: per-kernel-position weight sums (zero-point correction
    // hoisted out of the dot product), per-node ReLU6 lookup tables,
    // depthwise requant multipliers and per-worker accumulator rows.
    std::map<std::string, std::vector<int32_t>> wsums_;
    std::map<std::string, std::array<int8_t, 256>> relu_lut_;
    std::map<std::string, std::vector<double>> dw_mult_;
    std::vector<std::vector<int32_t>> dw_scratch_;
};

} // namespace emdl
