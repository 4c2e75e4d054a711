#include "trajlab/batching.hpp"

#include "trajlab/errors.hpp"
#include "trajlab/io.hpp"
#include "trajlab/rng.hpp"

#include <numeric>

namespace trajlab {

BatchStream::BatchStream(std::vector<int32_t> stream, int32_t pad_id, int64_t context_len,
                         int64_t batch_size, uint64_t seed)
    : stream_(std::move(stream)),
      pad_id_(pad_id),
      context_len_(context_len),
      batch_size_(batch_size),
      seed_(seed) {
    if (context_len_ < 2) {
        throw ValueError("make_batches: context_len must be at least 2");
    }
    if (batch_size_ < 1) {
        throw ValueError("make_batches: batch_size must be at least 1");
    }
    n_chunks_ = static_cast<int64_t>(stream_.size()) / context_len_;
    dropped_tail_ = static_cast<int64_t>(stream_.size()) - n_chunks_ * context_len_;
    if (n_chunks_ == 0) {
        throw ValueError("make_batches: corpus has " + std::to_string(stream_.size()) +
                         " tokens, shorter than one context window of " +
                         std::to_string(context_len_));
    }
    prepare_epoch();
}

BatchStream BatchStream::from_text(std::string_view corpus_text, const Vocabulary& vocab,
                                   int64_t context_len, int64_t batch_size, uint64_t seed) {
    // Separator between documents: the newline byte token.
    const int32_t separator = static_cast<int32_t>('\n');
    std::vector<int32_t> stream;
    stream.reserve(corpus_text.size() / 2);
    for (const auto& line : split(corpus_text, '\n')) {
        if (trim(line).empty()) {
            continue;
        }
        auto ids = vocab.encode(line);
        stream.insert(stream.end(), ids.begin(), ids.end());
        stream.push_back(separator);
    }
    return BatchStream(std::move(stream), vocab.pad_id(), context_len, batch_size, seed);
}

int64_t BatchStream::batches_per_epoch() const {
    return (n_chunks_ + batch_size_ - 1) / batch_size_;
}

void BatchStream::prepare_epoch() {
    order_.resize(static_cast<size_t>(n_chunks_));
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng = Rng(seed_).split(state_.epoch);
    rng.shuffle(order_);
}

void BatchStream::restore(const State& s) {
    state_ = s;
    prepare_epoch();
}

Batch BatchStream::next() {
    if (static_cast<int64_t>(state_.cursor) >= n_chunks_) {
        ++state_.epoch;
        state_.cursor = 0;
        prepare_epoch();
    }
    const int64_t remaining = n_chunks_ - static_cast<int64_t>(state_.cursor);
    const int64_t rows = std::min(batch_size_, remaining);

    Batch b;
    b.batch_size = rows;
    b.context_len = context_len_;
    b.pad_id = pad_id_;
    b.token_ids.resize(static_cast<size_t>(rows * context_len_));
    b.target_ids.resize(static_cast<size_t>(rows * context_len_));
    for (int64_t r = 0; r < rows; ++r) {
        const int64_t chunk = order_[state_.cursor + static_cast<uint64_t>(r)];
        const int32_t* src = stream_.data() + chunk * context_len_;
        int32_t* tok = b.token_ids.data() + r * context_len_;
        int32_t* tgt = b.target_ids.data() + r * context_len_;
        for (int64_t t = 0; t < context_len_; ++t) {
            tok[t] = src[t];
        }
        for (int64_t t = 0; t + 1 < context_len_; ++t) {
            tgt[t] = src[t + 1];
        }
        tgt[context_len_ - 1] = pad_id_;
    }
    state_.cursor += static_cast<uint64_t>(rows);
    return b;
}

} // namespace trajlab
