#include "trajlab/checkpoint.hpp"

#include "trajlab/errors.hpp"
#include "trajlab/io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>

namespace trajlab {

namespace {

constexpr char kMagic[4] = {'T', 'R', 'J', 'L'};
constexpr uint32_t kVersion = 1;

struct Writer {
    std::string buf;

    void raw(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u32(uint32_t v) { raw(&v, sizeof(v)); }
    void u64(uint64_t v) { raw(&v, sizeof(v)); }
    void tensor(const Tensor& t) {
        u32(static_cast<uint32_t>(t.shape.size()));
        for (int64_t d : t.shape) {
            u64(static_cast<uint64_t>(d));
        }
        raw(t.data.data(), t.data.size() * sizeof(real));
    }
};

struct Reader {
    const uint8_t* p;
    size_t remaining;
    const char* context;

    void raw(void* out, size_t n) {
        if (n > remaining) {
            throw TruncatedError(std::string(context) + ": file ends early (needed " +
                                 std::to_string(n) + " more bytes)");
        }
        std::memcpy(out, p, n);
        p += n;
        remaining -= n;
    }
    uint32_t u32() {
        uint32_t v;
        raw(&v, sizeof(v));
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, sizeof(v));
        return v;
    }
    void tensor(const std::string& name, Tensor& t) {
        const uint32_t rank = u32();
        if (rank != t.shape.size()) {
            throw ShapeMismatchError("tensor " + name + ": rank " + std::to_string(rank) +
                                     " does not match expected rank " +
                                     std::to_string(t.shape.size()));
        }
        for (size_t i = 0; i < t.shape.size(); ++i) {
            const uint64_t d = u64();
            if (d != static_cast<uint64_t>(t.shape[i])) {
                throw ShapeMismatchError("tensor " + name + ": dim " + std::to_string(i) + " is " +
                                         std::to_string(d) + ", expected " +
                                         std::to_string(t.shape[i]));
            }
        }
        raw(t.data.data(), t.data.size() * sizeof(real));
    }
};

void write_params(Writer& w, const Parameters& params) {
    uint32_t count = 0;
    params.for_each([&](const std::string&, const Tensor&) { ++count; });
    w.u32(count);
    params.for_each([&](const std::string&, const Tensor& t) { w.tensor(t); });
}

void read_params(Reader& r, Parameters& params) {
    const uint32_t count = r.u32();
    uint32_t expected = 0;
    params.for_each([&](const std::string&, Tensor&) { ++expected; });
    if (count != expected) {
        throw ShapeMismatchError("checkpoint lists " + std::to_string(count) + " tensors, config implies " +
                                 std::to_string(expected));
    }
    params.for_each([&](const std::string& name, Tensor& t) { r.tensor(name, t); });
}

} // namespace

bool CheckpointRecord::operator==(const CheckpointRecord& other) const {
    if (!(config == other.config) || step != other.step || data_seed != other.data_seed ||
        !(data_state == other.data_state)) {
        return false;
    }
    auto tensors_equal = [](const Parameters& a, const Parameters& b) {
        bool eq = true;
        auto* bp = const_cast<Parameters*>(&b);
        std::vector<const Tensor*> bt;
        bp->for_each([&](const std::string&, Tensor& t) { bt.push_back(&t); });
        size_t i = 0;
        a.for_each([&](const std::string&, const Tensor& t) {
            if (!eq) {
                return;
            }
            if (t.shape != bt[i]->shape ||
                std::memcmp(t.data.data(), bt[i]->data.data(), t.data.size() * sizeof(real)) != 0) {
                eq = false;
            }
            ++i;
        });
        return eq;
    };
    return tensors_equal(params, other.params) && tensors_equal(adam_m, other.adam_m) &&
           tensors_equal(adam_v, other.adam_v);
}

void save_checkpoint(const CheckpointRecord& record, const std::filesystem::path& path) {
    Writer w;
    w.raw(kMagic, 4);
    w.u32(kVersion);
    w.u32(static_cast<uint32_t>(sizeof(real)));
    w.u64(static_cast<uint64_t>(record.config.n_layers));
    w.u64(static_cast<uint64_t>(record.config.n_heads));
    w.u64(static_cast<uint64_t>(record.config.d_model));
    w.u64(static_cast<uint64_t>(record.config.d_ff));
    w.u64(static_cast<uint64_t>(record.config.context_len));
    w.u64(static_cast<uint64_t>(record.config.vocab_size));
    w.u64(record.config.seed);
    w.u64(static_cast<uint64_t>(record.step));
    write_params(w, record.params);
    write_params(w, record.adam_m);
    write_params(w, record.adam_v);
    w.u64(record.data_seed);
    w.u64(record.data_state.epoch);
    w.u64(record.data_state.cursor);
    write_binary_file(path, w.buf.data(), w.buf.size());
}

CheckpointRecord load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_binary_file(path);
    Reader r{bytes.data(), bytes.size(), "checkpoint"};

    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("checkpoint " + path.string() + ": bad magic, not a TRJL file");
    }
    const uint32_t version = r.u32();
    if (version != kVersion) {
        throw FormatError("checkpoint " + path.string() + ": unsupported format version " +
                          std::to_string(version));
    }
    const uint32_t width = r.u32();
    if (width != sizeof(real)) {
        throw FormatError("checkpoint " + path.string() + ": scalar width " +
                          std::to_string(width) + " does not match this build (" +
                          std::to_string(sizeof(real)) + ")");
    }

    CheckpointRecord rec;
    rec.config.n_layers = static_cast<int64_t>(r.u64());
    rec.config.n_heads = static_cast<int64_t>(r.u64());
    rec.config.d_model = static_cast<int64_t>(r.u64());
    rec.config.d_ff = static_cast<int64_t>(r.u64());
    rec.config.context_len = static_cast<int64_t>(r.u64());
    rec.config.vocab_size = static_cast<int64_t>(r.u64());
    rec.config.seed = r.u64();
    rec.config.validate();
    rec.step = static_cast<int64_t>(r.u64());

    rec.params = Parameters::zeros(rec.config);
    rec.adam_m = Parameters::zeros(rec.config);
    rec.adam_v = Parameters::zeros(rec.config);
    read_params(r, rec.params);
    read_params(r, rec.adam_m);
    read_params(r, rec.adam_v);
    rec.data_seed = r.u64();
    rec.data_state.epoch = r.u64();
    rec.data_state.cursor = r.u64();
    if (r.remaining != 0) {
        throw FormatError("checkpoint " + path.string() + ": " + std::to_string(r.remaining) +
                          " trailing bytes");
    }
    return rec;
}

std::string checkpoint_filename(int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt_%08lld.bin", static_cast<long long>(step));
    return std::string(buf);
}

std::vector<int64_t> list_checkpoint_steps(const std::filesystem::path& dir) {
    std::vector<int64_t> steps;
    if (!std::filesystem::is_directory(dir)) {
        return steps;
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() == 5 + 8 + 4 && name.starts_with("ckpt_") && name.ends_with(".bin")) {
            const std::string digits = name.substr(5, 8);
            if (std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
                steps.push_back(parse_int(digits));
            }
        }
    }
    std::sort(steps.begin(), steps.end());
    return steps;
}

} // namespace trajlab
