#pragma once

#include "trajlab/tokenizer.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace trajlab {

// One training batch: row-major [batch_size x context_len]. target_ids are
// token_ids shifted left by one inside each row; the final column has no
// successor inside the row and carries pad_id, which the loss ignores.
struct Batch {
    int64_t batch_size = 0;
    int64_t context_len = 0;
    int32_t pad_id = -1; // target value the loss ignores
    std::vector<int32_t> token_ids;
    std::vector<int32_t> target_ids;

    int32_t token(int64_t row, int64_t t) const { return token_ids[row * context_len + t]; }
    int32_t target(int64_t row, int64_t t) const { return target_ids[row * context_len + t]; }
};

// Deterministic epoch-cycling batch supply. Documents (lines) are encoded,
// joined with a separator token after each document, and the resulting
// stream is cut into non-overlapping context_len chunks. Each epoch visits
// every chunk exactly once in an order shuffled from (seed, epoch); the
// stream tail shorter than context_len is dropped and its length reported.
class BatchStream {
  public:
    struct State {
        uint64_t epoch = 0;
        uint64_t cursor = 0; // next chunk position within the epoch order
        bool operator==(const State&) const = default;
    };

    BatchStream(std::vector<int32_t> stream, int32_t pad_id, int64_t context_len,
                int64_t batch_size, uint64_t seed);

    static BatchStream from_text(std::string_view corpus_text, const Vocabulary& vocab,
                                 int64_t context_len, int64_t batch_size, uint64_t seed);

    // Next batch; rolls into the following epoch when the current one is
    // exhausted. The final batch of an epoch may hold fewer rows.
    Batch next();

    int64_t chunks_per_epoch() const { return n_chunks_; }
    int64_t batches_per_epoch() const;
    int64_t dropped_tail_tokens() const { return dropped_tail_; }
    int64_t stream_tokens() const { return static_cast<int64_t>(stream_.size()); }

    State state() const { return state_; }
    void restore(const State& s);
    uint64_t seed() const { return seed_; }

  private:
    void prepare_epoch();

    std::vector<int32_t> stream_;
    int32_t pad_id_;
    int64_t context_len_;
    int64_t batch_size_;
    uint64_t seed_;
    int64_t n_chunks_;
    int64_t dropped_tail_;
    State state_;
    std::vector<int64_t> order_; // chunk visit order of the current epoch
};

} // namespace trajlab
