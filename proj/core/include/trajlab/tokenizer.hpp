#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace trajlab {

// Byte-level BPE vocabulary. Ids are dense:
//   [0, 256)           single-byte tokens
//   256                padding token (never produced by encode)
//   257                unknown token (reserved)
//   [258, size)        merged tokens, one per merge rule in creation order
//
// Because the base covers every byte, the merge list alone reconstructs the
// whole token table, which keeps the on-disk format self-contained.
class Vocabulary {
  public:
    static constexpr int32_t kPadId = 256;
    static constexpr int32_t kUnkId = 257;
    static constexpr int32_t kBaseSize = 258;
    // Default punctuation character set; Appendix-style scoring excludes
    // positions whose target token is made of these characters only.
    static constexpr std::string_view kDefaultPunctuation = ".,;:!?\"'()-";

    int32_t size() const { return static_cast<int32_t>(258 + merges_.size()); }
    int32_t pad_id() const { return kPadId; }
    int32_t unk_id() const { return kUnkId; }

    const std::vector<std::pair<int32_t, int32_t>>& merges() const { return merges_; }
    const std::vector<int32_t>& punctuation_ids() const { return punctuation_ids_; }
    bool is_punctuation(int32_t id) const;

    const std::string& token_string(int32_t id) const;

    // Greedy lowest-rank-first merge application over the UTF-8 bytes of
    // text. Total over arbitrary input; never emits pad or unk.
    std::vector<int32_t> encode(std::string_view text) const;

    // Inverse of encode on its outputs. Pad and unk decode to nothing.
    // Throws ValueError for ids outside [0, size()).
    std::string decode(const std::vector<int32_t>& ids) const;

    // Versioned text format:
    //   bpevocab v1 <size>
    //   <left_id> <right_id>       one line per merge rule
    //   <id>,<id>,...              punctuation ids, ascending (may be empty)
    std::string serialize() const;
    static Vocabulary deserialize(std::string_view text);
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    // Recomputes punctuation_ids from a character set: a token is registered
    // iff its string is non-empty and consists solely of these characters.
    void build_punctuation_registry(std::string_view punctuation_chars);

  private:
    friend Vocabulary train_bpe(std::string_view, int32_t, std::string_view);
    void rebuild_token_strings();

    std::vector<std::pair<int32_t, int32_t>> merges_;
    std::vector<std::string> token_strings_;
    std::vector<int32_t> punctuation_ids_;
};

// Trains merge rules on a byte corpus until the vocabulary reaches
// target_size or no pair occurs twice. Pair frequency is counted over
// adjacent token occurrences; document boundaries (newlines) never
// participate in a merge. Ties break on the lexicographically smallest
// (left string, right string) pair. Candidates whose concatenation would
// duplicate an existing token string are skipped so token strings stay
// unique.
//
// Throws ValueError for an empty corpus or target_size < 258.
Vocabulary train_bpe(std::string_view corpus, int32_t target_size,
                     std::string_view punctuation_chars = Vocabulary::kDefaultPunctuation);

} // namespace trajlab
