#pragma once

#include "trajlab/batching.hpp"
#include "trajlab/model.hpp"

#include <filesystem>

namespace trajlab {

// Full training state at one step: reloading yields bit-identical forward
// outputs and bit-identical continued training.
struct CheckpointRecord {
    ModelConfig config;
    int64_t step = 0;
    Parameters params;
    Parameters adam_m;
    Parameters adam_v;
    uint64_t data_seed = 0;
    BatchStream::State data_state;

    bool operator==(const CheckpointRecord& other) const;
};

// Little-endian binary layout:
//   magic "TRJL", format version u32, scalar width u32,
//   config block (n_layers, n_heads, d_model, d_ff, context_len, vocab_size
//   as u64, seed u64), step u64,
//   parameter tensors in Parameters::for_each order (count u32, then per
//   tensor rank u32, dims u64..., raw data),
//   Adam first moments, Adam second moments (same tensor sequence),
//   rng state (data_seed, epoch, cursor as u64).
//
// Distinct failures raise distinct types: FormatError (magic, version,
// scalar width), TruncatedError (short file), ShapeMismatchError (tensor
// dims inconsistent with the config block).
void save_checkpoint(const CheckpointRecord& record, const std::filesystem::path& path);
CheckpointRecord load_checkpoint(const std::filesystem::path& path);

std::string checkpoint_filename(int64_t step);
// Steps of all well-named checkpoint files in a directory, ascending.
std::vector<int64_t> list_checkpoint_steps(const std::filesystem::path& dir);

} // namespace trajlab
