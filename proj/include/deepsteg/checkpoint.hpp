#pragma once

// Checkpoint container format (all integers little-endian):
//
//   magic            8 bytes  "DSTEGCKP"
//   format_version   u32
//   metadata_length  u64
//   metadata         UTF-8 JSON: network spec, train config, epoch, loss history,
//                    optimizer step counts
//   block_count      u32
//   block_count x {
//     name_length    u16
//     name           bytes    e.g. "hiding.agg1.conv3x3.weight", "opt.decoder.m.17"
//     rank           u8
//     dims           rank x u64
//     values         prod(dims) x float32
//   }
//   checksum         u64      FNV-1a over every preceding byte
//
// Files are written to a temporary sibling and renamed into place.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "deepsteg/config.hpp"
#include "deepsteg/error.hpp"
#include "deepsteg/loss.hpp"
#include "deepsteg/network.hpp"
#include "deepsteg/optim.hpp"

namespace deepsteg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct OptimizerState {
    std::uint64_t steps = 0;
    std::vector<std::vector<float>> first_moments;
    std::vector<std::vector<float>> second_moments;

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

inline OptimizerState export_state(const Adam<float>& opt) {
    return {opt.steps(), opt.first_moments(), opt.second_moments()};
}

inline void import_state(Adam<float>& opt, const OptimizerState& s) {
    opt.first_moments() = s.first_moments;
    opt.second_moments() = s.second_moments;
    opt.set_steps(s.steps);
}

struct Checkpoint {
    std::uint32_t format_version = kCheckpointVersion;
    ModelParams<float> model;
    TrainConfig config;
    std::size_t epoch = 0; // completed epochs
    std::vector<LossReport> history;
    std::optional<OptimizerState> encoder_optimizer;
    std::optional<OptimizerState> decoder_optimizer;
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class ByteWriter {
public:
    template <typename U>
    void put(U v) {
        static_assert(std::is_integral_v<U>);
        for (std::size_t i = 0; i < sizeof(U); ++i)
            buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
    }
    void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
    void put_bytes(const std::string& s) { buf_ += s; }
    const std::string& str() const noexcept { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}

    template <typename U>
    U get() {
        need(sizeof(U));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return static_cast<U>(v);
    }
    float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
    std::string get_bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const noexcept { return end_ - pos_; }

private:
    void need(std::size_t n) const {
        if (n > end_ - pos_) throw CheckpointError("corrupt checkpoint: truncated data");
    }
    const std::string& buf_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

inline nlohmann::json spec_to_json(const NetworkSpec& s) {
    nlohmann::json branches = nlohmann::json::array();
    for (const auto& b : s.branches) branches.push_back({{"channels", b.channels}, {"kernel", b.kernel}});
    return {{"k", s.k},
            {"branches", branches},
            {"prep_depth", s.prep_depth},
            {"hiding_depth", s.hiding_depth},
            {"reveal_depth", s.reveal_depth},
            {"image_channels", s.image_channels},
            {"projection_kernel", s.projection_kernel}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
    NetworkSpec s;
    s.k = j.at("k").get<std::size_t>();
    s.branches.clear();
    for (const auto& b : j.at("branches"))
        s.branches.push_back({b.at("channels").get<std::size_t>(), b.at("kernel").get<std::size_t>()});
    s.prep_depth = j.at("prep_depth").get<std::size_t>();
    s.hiding_depth = j.at("hiding_depth").get<std::size_t>();
    s.reveal_depth = j.at("reveal_depth").get<std::size_t>();
    s.image_channels = j.at("image_channels").get<std::size_t>();
    s.projection_kernel = j.at("projection_kernel").get<std::size_t>();
    return s;
}

inline nlohmann::json report_to_json(const LossReport& r) {
    return {{"total", r.total}, {"cover_term", r.cover_term}, {"secret_terms", r.secret_terms}};
}

inline LossReport report_from_json(const nlohmann::json& j) {
    LossReport r;
    r.total = j.at("total").get<double>();
    r.cover_term = j.at("cover_term").get<double>();
    r.secret_terms = j.at("secret_terms").get<std::vector<double>>();
    return r;
}

inline void put_block(ByteWriter& w, const std::string& name, const std::vector<std::size_t>& dims,
                      std::span<const float> values) {
    w.put(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
    w.put(static_cast<std::uint8_t>(dims.size()));
    for (auto d : dims) w.put(static_cast<std::uint64_t>(d));
    for (float v : values) w.put_f32(v);
}

struct Block {
    std::vector<std::size_t> dims;
    std::vector<float> values;
};

} // namespace detail

/// Serialises a checkpoint and atomically replaces `path`.
inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    using nlohmann::json;
    json meta;
    meta["spec"] = detail::spec_to_json(ckpt.model.spec);
    meta["config"] = to_key_values(ckpt.config);
    meta["epoch"] = ckpt.epoch;
    json hist = json::array();
    for (const auto& r : ckpt.history) hist.push_back(detail::report_to_json(r));
    meta["history"] = hist;
    if (ckpt.encoder_optimizer) meta["encoder_optimizer_steps"] = ckpt.encoder_optimizer->steps;
    if (ckpt.decoder_optimizer) meta["decoder_optimizer_steps"] = ckpt.decoder_optimizer->steps;
    const std::string meta_text = meta.dump();

    const auto views = param_views(ckpt.model);
    std::uint32_t blocks = static_cast<std::uint32_t>(views.size());
    auto count_opt = [&](const std::optional<OptimizerState>& s) {
        if (s) blocks += static_cast<std::uint32_t>(2 * s->first_moments.size());
    };
    count_opt(ckpt.encoder_optimizer);
    count_opt(ckpt.decoder_optimizer);

    detail::ByteWriter w;
    w.put_bytes("DSTEGCKP");
    w.put(ckpt.format_version);
    w.put(static_cast<std::uint64_t>(meta_text.size()));
    w.put_bytes(meta_text);
    w.put(blocks);
    for (const auto& v : views) detail::put_block(w, v.name, v.dims, v.values);
    auto put_opt = [&](const std::optional<OptimizerState>& s, const std::string& group) {
        if (!s) return;
        for (std::size_t i = 0; i < s->first_moments.size(); ++i)
            detail::put_block(w, "opt." + group + ".m." + std::to_string(i), {s->first_moments[i].size()},
                              s->first_moments[i]);
        for (std::size_t i = 0; i < s->second_moments.size(); ++i)
            detail::put_block(w, "opt." + group + ".v." + std::to_string(i), {s->second_moments[i].size()},
                              s->second_moments[i]);
    };
    put_opt(ckpt.encoder_optimizer, "encoder");
    put_opt(ckpt.decoder_optimizer, "decoder");
    const std::uint64_t checksum = detail::fnv1a(w.str());
    w.put(checksum);

    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint '" + tmp.string() + "'");
        out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
        if (!out) throw IoError("failed writing checkpoint '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

/// Reads a checkpoint. When `expected_k` is given and differs from the stored k, throws.
inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  std::optional<std::size_t> expected_k = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint '" + path.string() + "'");
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 8 + 4 + 8 || buf.compare(0, 8, "DSTEGCKP") != 0)
        throw CheckpointError("'" + path.string() + "' is not a checkpoint file");
    if (buf.size() < 8 + 4 + 8 + 4 + 8) throw CheckpointError("corrupt checkpoint: truncated data");
    const std::size_t body_end = buf.size() - 8;
    {
        const std::string tail_bytes = buf.substr(body_end);
        detail::ByteReader tail(tail_bytes, 8);
        if (tail.get<std::uint64_t>() != detail::fnv1a(buf.substr(0, body_end)))
            throw CheckpointError("corrupt checkpoint '" + path.string() + "': checksum mismatch");
    }

    detail::ByteReader r(buf, body_end);
    r.get_bytes(8);
    Checkpoint ckpt;
    ckpt.format_version = r.get<std::uint32_t>();
    if (ckpt.format_version != kCheckpointVersion)
        throw CheckpointError("checkpoint '" + path.string() + "' has format version " +
                              std::to_string(ckpt.format_version) + ", expected " +
                              std::to_string(kCheckpointVersion));

    nlohmann::json meta;
    try {
        const auto meta_len = r.get<std::uint64_t>();
        if (meta_len > r.remaining()) throw CheckpointError("corrupt checkpoint: truncated data");
        meta = nlohmann::json::parse(r.get_bytes(static_cast<std::size_t>(meta_len)));
        ckpt.model = make_model<float>(detail::spec_from_json(meta.at("spec")));
        KeyValues kv = meta.at("config").get<KeyValues>();
        ckpt.config = apply_key_values(TrainConfig{}, kv);
        ckpt.epoch = meta.at("epoch").get<std::size_t>();
        for (const auto& h : meta.at("history")) ckpt.history.push_back(detail::report_from_json(h));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("corrupt checkpoint metadata in '" + path.string() + "': " + e.what());
    } catch (const ShapeError& e) {
        throw CheckpointError("invalid network spec in '" + path.string() + "': " + e.what());
    }

    if (expected_k && *expected_k != ckpt.model.spec.k)
        throw CheckpointError("checkpoint '" + path.string() + "' was trained for k=" +
                              std::to_string(ckpt.model.spec.k) + ", requested k=" +
                              std::to_string(*expected_k));

    std::map<std::string, detail::Block> blocks;
    const auto n_blocks = r.get<std::uint32_t>();
    for (std::uint32_t b = 0; b < n_blocks; ++b) {
        const auto name = r.get_bytes(r.get<std::uint16_t>());
        detail::Block blk;
        const auto rank = r.get<std::uint8_t>();
        std::size_t count = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            blk.dims.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
            count *= blk.dims.back();
        }
        if (count > r.remaining() / 4) throw CheckpointError("corrupt checkpoint: truncated data");
        blk.values.resize(count);
        for (auto& v : blk.values) v = r.get_f32();
        blocks.emplace(name, std::move(blk));
    }
    if (r.remaining() != 0) throw CheckpointError("corrupt checkpoint: trailing bytes");

    for (auto& v : param_views(ckpt.model)) {
        auto it = blocks.find(v.name);
        if (it == blocks.end()) throw CheckpointError("checkpoint is missing parameter '" + v.name + "'");
        if (it->second.dims != v.dims)
            throw CheckpointError("parameter '" + v.name + "' has the wrong shape");
        std::copy(it->second.values.begin(), it->second.values.end(), v.values.begin());
    }

    auto read_opt = [&](const std::string& group, const char* key) -> std::optional<OptimizerState> {
        if (!meta.contains(key)) return std::nullopt;
        OptimizerState s;
        s.steps = meta.at(key).get<std::uint64_t>();
        for (std::size_t i = 0;; ++i) {
            auto m = blocks.find("opt." + group + ".m." + std::to_string(i));
            auto v = blocks.find("opt." + group + ".v." + std::to_string(i));
            if (m == blocks.end() || v == blocks.end()) break;
            s.first_moments.push_back(std::move(m->second.values));
            s.second_moments.push_back(std::move(v->second.values));
        }
        return s;
    };
    ckpt.encoder_optimizer = read_opt("encoder", "encoder_optimizer_steps");
    ckpt.decoder_optimizer = read_opt("decoder", "decoder_optimizer_steps");
    return ckpt;
}

} // namespace deepsteg
