#pragma once

#include "trajlab/batching.hpp"
#include "trajlab/real.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace trajlab {

struct ModelConfig {
    int64_t n_layers = 2;
    int64_t n_heads = 4;
    int64_t d_model = 128;
    int64_t d_ff = 512;
    int64_t context_len = 128;
    int64_t vocab_size = 258;
    uint64_t seed = 0;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct Tensor {
    std::vector<int64_t> shape;
    std::vector<real> data;

    static Tensor zeros(std::vector<int64_t> shape);
    int64_t size() const { return static_cast<int64_t>(data.size()); }
    real* ptr() { return data.data(); }
    const real* ptr() const { return data.data(); }
};

struct LayerParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w_ff1, b_ff1, w_ff2, b_ff2;
};

// Pre-layer-norm decoder weights. Input embedding and output projection are
// separate tensors (no weight tying).
struct Parameters {
    ModelConfig config;
    Tensor tok_emb; // [vocab, d_model]
    Tensor pos_emb; // [context, d_model]
    std::vector<LayerParams> layers;
    Tensor lnf_g, lnf_b;
    Tensor w_out; // [d_model, vocab]
    Tensor b_out; // [vocab]

    static Parameters zeros(const ModelConfig& cfg);

    // Visits every tensor in the fixed serialization order, paired with a
    // stable diagnostic name.
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;

    bool all_finite() const;
};

// Seeded initialization: weights and embeddings from normal(0, 0.02),
// layer-norm gains 1, all biases 0.
Parameters init_parameters(const ModelConfig& cfg);

// Log-probability rows for one sequence. pad_mask[t] marks left padding;
// pads must form a prefix. Padded positions are excluded from attention and
// their output rows are not meaningful; every other row is a normalized
// log-probability vector over the vocabulary. Output is row-major [T x vocab].
// Throws ValueError if the sequence is longer than context_len or the pad
// mask is not a prefix.
std::vector<real> forward_logprobs(const Parameters& p, std::span<const int32_t> token_ids,
                                   std::span<const uint8_t> pad_mask);

// Batched flavour used by suite evaluation: rows x T token ids with a
// per-row count of leading pads. Writes rows*T*vocab log-probabilities.
void forward_logprobs_batch(const Parameters& p, const int32_t* token_ids,
                            const int32_t* first_real, int64_t rows, int64_t seq_len,
                            std::vector<real>& out);

// Mean next-token negative log-likelihood over non-pad targets, plus exact
// gradients for every parameter. Throws ValueError when shapes disagree with
// the config or every target is pad.
struct LossAndGrads {
    double loss = 0.0;
    Parameters grads;
};
LossAndGrads loss_and_grads(const Parameters& p, const Batch& batch);

struct AdamState {
    Parameters m;
    Parameters v;
    int64_t t = 0;

    static AdamState zeros(const ModelConfig& cfg);
};

struct OptimizerSettings {
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int64_t batch_size = 16;
};

void adam_step(Parameters& params, const Parameters& grads, AdamState& state,
               const OptimizerSettings& opt);

struct TrainSettings {
    OptimizerSettings optimizer;
    int64_t max_steps = 1000;
    int64_t checkpoint_every = 100;
};

struct TrainResult {
    std::vector<int64_t> checkpoint_steps;
    std::filesystem::path log_path;
    double final_loss = 0.0;
};

// Runs (or resumes) a deterministic training loop. Checkpoints are written
// to out_dir as ckpt_<step>.bin at step 0, every checkpoint_every steps and
// at max_steps; per-step losses go to out_dir/train_log.csv. A partial
// out_dir resumes from its newest checkpoint and reproduces the exact bytes
// an uninterrupted run would have written. Throws TrainingError when the
// loss stops being finite.
TrainResult train(const ModelConfig& cfg, const TrainSettings& settings, BatchStream& batches,
                  const std::filesystem::path& out_dir);

} // namespace trajlab
