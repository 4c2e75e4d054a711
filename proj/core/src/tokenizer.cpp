#include "trajlab/tokenizer.hpp"

#include "trajlab/errors.hpp"
#include "trajlab/io.hpp"

#include <algorithm>
#include <limits>
#include <unordered_map>
#include <unordered_set>

namespace trajlab {

namespace {

uint64_t pair_key(int32_t a, int32_t b) {
    return (static_cast<uint64_t>(static_cast<uint32_t>(a)) << 32) | static_cast<uint32_t>(b);
}

} // namespace

bool Vocabulary::is_punctuation(int32_t id) const {
    return std::binary_search(punctuation_ids_.begin(), punctuation_ids_.end(), id);
}

const std::string& Vocabulary::token_string(int32_t id) const {
    if (id < 0 || id >= size()) {
        throw ValueError("token id " + std::to_string(id) + " out of range [0, " +
                         std::to_string(size()) + ")");
    }
    return token_strings_[static_cast<size_t>(id)];
}

void Vocabulary::rebuild_token_strings() {
    token_strings_.assign(static_cast<size_t>(size()), {});
    for (int i = 0; i < 256; ++i) {
        token_strings_[static_cast<size_t>(i)] = std::string(1, static_cast<char>(i));
    }
    token_strings_[kPadId] = "<pad>";
    token_strings_[kUnkId] = "<unk>";
    for (size_t m = 0; m < merges_.size(); ++m) {
        auto [a, b] = merges_[m];
        int32_t id = static_cast<int32_t>(kBaseSize + m);
        if (a < 0 || a >= id || b < 0 || b >= id || a == kPadId || a == kUnkId || b == kPadId ||
            b == kUnkId) {
            throw FormatError("merge rule " + std::to_string(m) + " references invalid token ids " +
                              std::to_string(a) + "," + std::to_string(b));
        }
        token_strings_[static_cast<size_t>(id)] =
            token_strings_[static_cast<size_t>(a)] + token_strings_[static_cast<size_t>(b)];
    }
}

std::vector<int32_t> Vocabulary::encode(std::string_view text) const {
    std::vector<int32_t> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) {
        ids.push_back(static_cast<int32_t>(c));
    }
    if (ids.size() < 2 || merges_.empty()) {
        return ids;
    }
    std::unordered_map<uint64_t, int32_t> rank;
    rank.reserve(merges_.size() * 2);
    for (size_t m = 0; m < merges_.size(); ++m) {
        rank.emplace(pair_key(merges_[m].first, merges_[m].second), static_cast<int32_t>(m));
    }
    while (ids.size() >= 2) {
        int32_t best_rank = std::numeric_limits<int32_t>::max();
        for (size_t i = 0; i + 1 < ids.size(); ++i) {
            auto it = rank.find(pair_key(ids[i], ids[i + 1]));
            if (it != rank.end() && it->second < best_rank) {
                best_rank = it->second;
            }
        }
        if (best_rank == std::numeric_limits<int32_t>::max()) {
            break;
        }
        const auto [a, b] = merges_[static_cast<size_t>(best_rank)];
        const int32_t merged = kBaseSize + best_rank;
        size_t w = 0;
        for (size_t i = 0; i < ids.size();) {
            if (i + 1 < ids.size() && ids[i] == a && ids[i + 1] == b) {
                ids[w++] = merged;
                i += 2;
            } else {
                ids[w++] = ids[i++];
            }
        }
        ids.resize(w);
    }
    return ids;
}

std::string Vocabulary::decode(const std::vector<int32_t>& ids) const {
    std::string out;
    for (int32_t id : ids) {
        if (id < 0 || id >= size()) {
            throw ValueError("decode: token id " + std::to_string(id) + " out of range [0, " +
                             std::to_string(size()) + ")");
        }
        if (id == kPadId || id == kUnkId) {
            continue;
        }
        out += token_strings_[static_cast<size_t>(id)];
    }
    return out;
}

std::string Vocabulary::serialize() const {
    std::string out = "bpevocab v1 " + std::to_string(size()) + "\n";
    for (const auto& [a, b] : merges_) {
        out += std::to_string(a) + " " + std::to_string(b) + "\n";
    }
    for (size_t i = 0; i < punctuation_ids_.size(); ++i) {
        if (i > 0) {
            out += ",";
        }
        out += std::to_string(punctuation_ids_[i]);
    }
    out += "\n";
    return out;
}

Vocabulary Vocabulary::deserialize(std::string_view text) {
    auto lines = split(text, '\n');
    if (lines.empty()) {
        throw TruncatedError("vocabulary file is empty");
    }
    auto header = split(std::string(trim(lines[0])), ' ');
    if (header.size() != 3 || header[0] != "bpevocab") {
        throw FormatError("vocabulary header must be 'bpevocab v1 <size>', got '" + lines[0] + "'");
    }
    if (header[1] != "v1") {
        throw FormatError("unsupported vocabulary version '" + header[1] + "'");
    }
    int64_t declared = parse_int(header[2]);
    if (declared < kBaseSize) {
        throw FormatError("vocabulary size " + std::to_string(declared) + " below minimum " +
                          std::to_string(kBaseSize));
    }
    size_t n_merges = static_cast<size_t>(declared - kBaseSize);
    // Header, one line per merge, punctuation line.
    if (lines.size() < n_merges + 2) {
        throw TruncatedError("vocabulary file ends before listing " + std::to_string(n_merges) +
                             " merge rules");
    }
    Vocabulary v;
    v.merges_.reserve(n_merges);
    for (size_t i = 0; i < n_merges; ++i) {
        auto parts = split(std::string(trim(lines[1 + i])), ' ');
        if (parts.size() != 2) {
            throw FormatError("merge line " + std::to_string(i + 2) + " must be '<left> <right>'");
        }
        v.merges_.emplace_back(static_cast<int32_t>(parse_int(parts[0])),
                               static_cast<int32_t>(parse_int(parts[1])));
    }
    v.rebuild_token_strings();
    auto punct_line = trim(lines[1 + n_merges]);
    if (!punct_line.empty()) {
        for (const auto& tok : split(punct_line, ',')) {
            int64_t id = parse_int(tok);
            if (id < 0 || id >= v.size()) {
                throw FormatError("punctuation id " + std::to_string(id) + " outside vocabulary");
            }
            v.punctuation_ids_.push_back(static_cast<int32_t>(id));
        }
        std::sort(v.punctuation_ids_.begin(), v.punctuation_ids_.end());
        v.punctuation_ids_.erase(std::unique(v.punctuation_ids_.begin(), v.punctuation_ids_.end()),
                                 v.punctuation_ids_.end());
    }
    return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    write_text_file(path, serialize());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    try {
        return deserialize(read_text_file(path));
    } catch (const Error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void Vocabulary::build_punctuation_registry(std::string_view punctuation_chars) {
    punctuation_ids_.clear();
    auto is_punct_string = [&](const std::string& s) {
        if (s.empty()) {
            return false;
        }
        for (char c : s) {
            if (punctuation_chars.find(c) == std::string_view::npos) {
                return false;
            }
        }
        return true;
    };
    for (int32_t id = 0; id < size(); ++id) {
        if (id == kPadId || id == kUnkId) {
            continue;
        }
        if (is_punct_string(token_strings_[static_cast<size_t>(id)])) {
            punctuation_ids_.push_back(id);
        }
    }
}

Vocabulary train_bpe(std::string_view corpus, int32_t target_size,
                     std::string_view punctuation_chars) {
    if (corpus.empty()) {
        throw ValueError("train_bpe: corpus is empty");
    }
    if (target_size < Vocabulary::kBaseSize) {
        throw ValueError("train_bpe: target_size " + std::to_string(target_size) +
                         " below minimum " + std::to_string(Vocabulary::kBaseSize) +
                         " (256 bytes + pad + unk)");
    }

    // Working token sequence. -1 marks a document boundary (newline); those
    // slots never join a merge, so tokens cannot straddle documents.
    std::vector<int32_t> seq;
    seq.reserve(corpus.size());
    for (unsigned char c : corpus) {
        seq.push_back(c == '\n' ? -1 : static_cast<int32_t>(c));
    }

    Vocabulary v;
    v.rebuild_token_strings();

    const size_t n_merges_wanted = static_cast<size_t>(target_size - Vocabulary::kBaseSize);
    std::unordered_set<std::string> existing_strings(v.token_strings_.begin(),
                                                     v.token_strings_.end());
    std::unordered_map<uint64_t, int64_t> counts;

    while (v.merges_.size() < n_merges_wanted) {
        counts.clear();
        for (size_t i = 0; i + 1 < seq.size(); ++i) {
            if (seq[i] < 0 || seq[i + 1] < 0) {
                continue;
            }
            ++counts[pair_key(seq[i], seq[i + 1])];
        }
        int64_t best_count = 1; // a pair must occur at least twice to be worth a rule
        int32_t best_a = -1;
        int32_t best_b = -1;
        for (const auto& [key, count] : counts) {
            auto a = static_cast<int32_t>(key >> 32);
            auto b = static_cast<int32_t>(key & 0xFFFFFFFFu);
            const std::string cat =
                v.token_strings_[static_cast<size_t>(a)] + v.token_strings_[static_cast<size_t>(b)];
            if (existing_strings.count(cat)) {
                continue;
            }
            bool better = count > best_count;
            if (count == best_count && best_a >= 0) {
                const auto& sa = v.token_strings_[static_cast<size_t>(a)];
                const auto& sb = v.token_strings_[static_cast<size_t>(b)];
                const auto& ba = v.token_strings_[static_cast<size_t>(best_a)];
                const auto& bb = v.token_strings_[static_cast<size_t>(best_b)];
                better = std::tie(sa, sb) < std::tie(ba, bb);
            }
            if (better) {
                best_count = count;
                best_a = a;
                best_b = b;
            }
        }
        if (best_a < 0) {
            break; // corpus exhausted: no pair occurs twice
        }
        const int32_t merged = v.size();
        v.merges_.emplace_back(best_a, best_b);
        v.token_strings_.push_back(v.token_strings_[static_cast<size_t>(best_a)] +
                                   v.token_strings_[static_cast<size_t>(best_b)]);
        existing_strings.insert(v.token_strings_.back());
        size_t w = 0;
        for (size_t i = 0; i < seq.size();) {
            if (i + 1 < seq.size() && seq[i] == best_a && seq[i + 1] == best_b) {
                seq[w++] = merged;
                i += 2;
            } else {
                seq[w++] = seq[i++];
            }
        }
        seq.resize(w);
    }

    v.build_punctuation_registry(punctuation_chars);
    return v;
}

} // namespace trajlab
