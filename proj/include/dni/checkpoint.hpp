#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dni/arch.hpp"
#include "dni/error.hpp"
#include "dni/tensor.hpp"

namespace dni {

/// One model's parameters plus lineage metadata. Entry names and order are
/// fixed by the arch's param_layout.
struct ParamSet {
    ArchSpec arch;
    std::vector<std::pair<std::string, Tensor>> entries;

    // meta
    std::string task_tag;
    std::string parent_checksum;              // empty when trained from scratch
    std::vector<std::string> ancestors;       // parent first, then grandparent, ...
    std::int64_t seed = 0;
    std::string created_iso8601 = "1970-01-01T00:00:00Z";
    std::vector<std::pair<std::string, double>> recipe; // (checksum, alpha) when interpolated

    const std::string& arch_id() const { return arch.arch_id; }

    Tensor* find(const std::string& name) {
        for (auto& [n, t] : entries) {
            if (n == name) return &t;
        }
        return nullptr;
    }
    const Tensor* find(const std::string& name) const {
        return const_cast<ParamSet*>(this)->find(name);
    }
    Tensor& tensor(const std::string& name) {
        if (Tensor* t = find(name)) return *t;
        throw Error("no parameter named '" + name + "' in " + arch_id());
    }
    const Tensor& tensor(const std::string& name) const {
        return const_cast<ParamSet*>(this)->tensor(name);
    }

    void validate() const {
        arch.validate();
        const auto layout = arch.param_layout();
        if (layout.size() != entries.size()) {
            throw Error("param set has " + std::to_string(entries.size()) + " entries, arch '" +
                        arch_id() + "' declares " + std::to_string(layout.size()));
        }
        for (std::size_t i = 0; i < layout.size(); ++i) {
            if (entries[i].first != layout[i].first) {
                throw Error("entry " + std::to_string(i) + " is '" + entries[i].first +
                            "', expected '" + layout[i].first + "'");
            }
            if (entries[i].second.shape() != layout[i].second) {
                throw Error("parameter '" + entries[i].first + "' has shape " +
                            Tensor::shape_str(entries[i].second.shape()) + ", expected " +
                            Tensor::shape_str(layout[i].second));
            }
            if (!entries[i].second.all_finite()) {
                throw Error("parameter '" + entries[i].first + "' contains non-finite values");
            }
        }
    }
};

namespace detail {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;
constexpr std::uint64_t kPayloadAlign = 64;

inline std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n,
                             std::uint64_t h = kFnvOffset) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

inline void append_f32_le(std::vector<std::uint8_t>& buf, const float* src, std::size_t count) {
    const std::size_t off = buf.size();
    buf.resize(off + count * 4);
    std::memcpy(buf.data() + off, src, count * 4);
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < count; ++i) {
            std::swap(buf[off + 4 * i], buf[off + 4 * i + 3]);
            std::swap(buf[off + 4 * i + 1], buf[off + 4 * i + 2]);
        }
    }
}

struct TensorRecord {
    std::string name;
    std::vector<std::int64_t> shape;
    std::uint64_t offset = 0;
    std::uint64_t nbytes = 0;
};

/// Payload region: little-endian f32 tensors, each starting at a 64-byte
/// aligned offset relative to the region start, gaps zero-filled.
inline std::vector<std::uint8_t> build_payload(const ParamSet& p,
                                               std::vector<TensorRecord>& records) {
    std::vector<std::uint8_t> payload;
    records.clear();
    for (const auto& [name, t] : p.entries) {
        TensorRecord rec;
        rec.name = name;
        rec.shape = t.shape();
        rec.offset = align_up(payload.size(), kPayloadAlign);
        rec.nbytes = static_cast<std::uint64_t>(t.numel()) * 4;
        payload.resize(rec.offset, 0);
        append_f32_le(payload, t.data(), static_cast<std::size_t>(t.numel()));
        records.push_back(std::move(rec));
    }
    return payload;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

template <typename T>
void put_le(std::vector<std::uint8_t>& buf, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

inline std::uint64_t get_u64_le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}
inline std::uint32_t get_u32_le(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

inline nlohmann::json meta_to_json(const ParamSet& p) {
    nlohmann::json meta;
    meta["task_tag"] = p.task_tag;
    if (p.parent_checksum.empty()) {
        meta["parent_checksum"] = nullptr;
    } else {
        meta["parent_checksum"] = p.parent_checksum;
    }
    meta["ancestors"] = p.ancestors;
    meta["seed"] = p.seed;
    meta["created_iso8601"] = p.created_iso8601;
    if (!p.recipe.empty()) {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& [ck, alpha] : p.recipe) r.push_back({{"checksum", ck}, {"alpha", alpha}});
        meta["recipe"] = r;
    }
    return meta;
}

inline void meta_from_json(const nlohmann::json& meta, ParamSet& p) {
    p.task_tag = meta.at("task_tag").get<std::string>();
    if (meta.at("parent_checksum").is_null()) {
        p.parent_checksum.clear();
    } else {
        p.parent_checksum = meta.at("parent_checksum").get<std::string>();
    }
    p.ancestors = meta.at("ancestors").get<std::vector<std::string>>();
    p.seed = meta.at("seed").get<std::int64_t>();
    p.created_iso8601 = meta.at("created_iso8601").get<std::string>();
    p.recipe.clear();
    if (meta.contains("recipe")) {
        for (const auto& r : meta.at("recipe")) {
            p.recipe.emplace_back(r.at("checksum").get<std::string>(), r.at("alpha").get<double>());
        }
    }
}

} // namespace detail

/// Content checksum: FNV-1a 64 over the payload region bytes, as hex.
/// Identical to what save() returns, without touching the filesystem.
inline std::string checksum(const ParamSet& p) {
    std::vector<detail::TensorRecord> records;
    const auto payload = detail::build_payload(p, records);
    return detail::hex64(detail::fnv1a64(payload.data(), payload.size()));
}

/// Checkpoint file, all multi-byte values little-endian:
///   "DNIC" | u32 version=1 | u64 header_len | UTF-8 JSON header
///   | zero padding to a 64-byte file offset | payload region
///   | u64 FNV-1a checksum of the payload region.
/// Header JSON: {arch, arch_id, meta, tensors:[{name, shape, offset, nbytes}]}
/// with tensor offsets relative to the payload region start.
inline std::string save(const ParamSet& p, const std::filesystem::path& path) {
    p.validate();

    std::vector<detail::TensorRecord> records;
    const auto payload = detail::build_payload(p, records);
    const std::uint64_t check = detail::fnv1a64(payload.data(), payload.size());

    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& r : records) {
        tensors.push_back(
            {{"name", r.name}, {"shape", r.shape}, {"offset", r.offset}, {"nbytes", r.nbytes}});
    }
    const nlohmann::json header = {{"arch", arch_to_json(p.arch)},
                                   {"arch_id", p.arch_id()},
                                   {"meta", detail::meta_to_json(p)},
                                   {"tensors", tensors}};
    const std::string header_text = header.dump();

    std::vector<std::uint8_t> file;
    file.insert(file.end(), {'D', 'N', 'I', 'C'});
    detail::put_le<std::uint32_t>(file, 1);
    detail::put_le<std::uint64_t>(file, header_text.size());
    file.insert(file.end(), header_text.begin(), header_text.end());
    file.resize(detail::align_up(file.size(), detail::kPayloadAlign), 0);
    file.insert(file.end(), payload.begin(), payload.end());
    detail::put_le<std::uint64_t>(file, check);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
    if (!out) throw Error("write failed for '" + path.string() + "'");
    return detail::hex64(check);
}

inline ParamSet load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    if (file.size() < 16) throw Error("'" + path.string() + "' is too short to be a checkpoint");
    if (std::memcmp(file.data(), "DNIC", 4) != 0) {
        throw Error("'" + path.string() + "' has no DNIC magic");
    }
    const std::uint32_t version = detail::get_u32_le(file.data() + 4);
    if (version != 1) {
        throw Error("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint64_t header_len = detail::get_u64_le(file.data() + 8);
    if (16 + header_len > file.size()) throw Error("truncated checkpoint header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(file.begin() + 16,
                                       file.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("bad checkpoint header json: ") + e.what());
    }

    ParamSet p;
    try {
        p.arch = arch_from_json(header.at("arch"));
        if (header.at("arch_id").get<std::string>() != p.arch.arch_id) {
            throw Error("arch_id mismatch between header fields");
        }
        detail::meta_from_json(header.at("meta"), p);

        const std::uint64_t payload_start = detail::align_up(16 + header_len, detail::kPayloadAlign);
        std::uint64_t payload_len = 0;
        struct Pending {
            std::string name;
            std::vector<std::int64_t> shape;
            std::uint64_t offset, nbytes;
        };
        std::vector<Pending> pending;
        for (const auto& jt : header.at("tensors")) {
            Pending rec;
            rec.name = jt.at("name").get<std::string>();
            rec.shape = jt.at("shape").get<std::vector<std::int64_t>>();
            rec.offset = jt.at("offset").get<std::uint64_t>();
            rec.nbytes = jt.at("nbytes").get<std::uint64_t>();
            std::int64_t numel = 1;
            for (std::int64_t d : rec.shape) numel *= d;
            if (rec.shape.empty() || numel < 1 || static_cast<std::uint64_t>(numel) * 4 != rec.nbytes) {
                throw Error("tensor '" + rec.name + "': shape does not match byte count");
            }
            if (rec.offset % detail::kPayloadAlign != 0) {
                throw Error("tensor '" + rec.name + "' is not 64-byte aligned");
            }
            payload_len = std::max(payload_len, rec.offset + rec.nbytes);
            pending.push_back(std::move(rec));
        }
        if (payload_start + payload_len + 8 != file.size()) {
            throw Error("truncated or oversized payload");
        }

        const std::uint8_t* payload = file.data() + payload_start;
        const std::uint64_t stored = detail::get_u64_le(payload + payload_len);
        const std::uint64_t actual = detail::fnv1a64(payload, payload_len);
        if (stored != actual) throw Error("payload checksum mismatch");

        for (const auto& rec : pending) {
            std::vector<float> vals(rec.nbytes / 4);
            std::memcpy(vals.data(), payload + rec.offset, rec.nbytes);
            if constexpr (std::endian::native == std::endian::big) {
                for (auto& v : vals) {
                    std::uint32_t u;
                    std::memcpy(&u, &v, 4);
                    u = __builtin_bswap32(u);
                    std::memcpy(&v, &u, 4);
                }
            }
            p.entries.emplace_back(rec.name, Tensor(rec.shape, std::move(vals)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("bad checkpoint header json: ") + e.what());
    }
    p.validate();
    return p;
}

struct CompatReport {
    bool same_arch = false;
    bool same_names_shapes = false;
    bool fine_tune_related = false;
};

/// Reports whether two models can be meaningfully interpolated. Fine-tune
/// relation holds when one model's checksum appears in the other's stored
/// ancestor chain (the chain makes the relation transitive).
inline CompatReport lineage_check(const ParamSet& a, const ParamSet& b) {
    CompatReport r;
    r.same_arch = a.arch == b.arch;
    r.same_names_shapes = a.entries.size() == b.entries.size();
    if (r.same_names_shapes) {
        for (std::size_t i = 0; i < a.entries.size(); ++i) {
            if (a.entries[i].first != b.entries[i].first ||
                a.entries[i].second.shape() != b.entries[i].second.shape()) {
                r.same_names_shapes = false;
                break;
            }
        }
    }
    const std::string ck_a = checksum(a);
    const std::string ck_b = checksum(b);
    auto contains = [](const std::vector<std::string>& chain, const std::string& ck) {
        for (const auto& c : chain) {
            if (c == ck) return true;
        }
        return false;
    };
    r.fine_tune_related = contains(b.ancestors, ck_a) || contains(a.ancestors, ck_b);
    return r;
}

} // namespace dni
