#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deepsteg/error.hpp"
#include "deepsteg/image_io.hpp"

namespace deepsteg {

/// Bit budget of the classical LSB baseline: the cover keeps its top
/// 8 - k * bits_per_secret bits, each secret contributes its top bits_per_secret bits.
struct LsbPlan {
    std::size_t k = 1;
    std::size_t bits_per_secret = 4;

    std::size_t cover_bits_kept() const noexcept { return 8 - k * bits_per_secret; }

    void validate() const {
        if (k == 0) throw ConfigError("LsbPlan: k must be at least 1");
        if (bits_per_secret == 0) throw ConfigError("LsbPlan: bits_per_secret must be at least 1");
        if (k * bits_per_secret > 7)
            throw ConfigError("LsbPlan: " + std::to_string(k) + " x " + std::to_string(bits_per_secret) +
                              " bits leaves the cover no bit (at most 7 may be used)");
    }

    /// Splits the byte evenly between the cover and the k secrets: 8 / (k + 1) bits each.
    static LsbPlan even_split(std::size_t k) {
        LsbPlan p{k, k + 1 > 0 ? 8 / (k + 1) : 0};
        p.validate();
        return p;
    }

    friend bool operator==(const LsbPlan&, const LsbPlan&) = default;
};

namespace detail {

/// Left shift placing secret i's bits; secret 0 sits directly under the cover bits.
inline unsigned lsb_shift(const LsbPlan& plan, std::size_t i) {
    return static_cast<unsigned>(8 - plan.cover_bits_kept() - (i + 1) * plan.bits_per_secret);
}

} // namespace detail

inline Image8 lsb_embed(const Image8& cover, std::span<const Image8> secrets, const LsbPlan& plan) {
    plan.validate();
    if (secrets.size() != plan.k)
        throw ShapeError("lsb_embed: plan expects " + std::to_string(plan.k) + " secrets, got " +
                         std::to_string(secrets.size()));
    for (const auto& s : secrets)
        if (s.height != cover.height || s.width != cover.width || s.bytes.size() != cover.bytes.size())
            throw ShapeError("lsb_embed: secret and cover dimensions differ");

    const unsigned drop = static_cast<unsigned>(8 - plan.bits_per_secret);
    const auto cover_mask = static_cast<std::uint8_t>(0xffu << (8 - plan.cover_bits_kept()));
    Image8 out = cover;
    for (std::size_t p = 0; p < out.bytes.size(); ++p) {
        unsigned v = cover.bytes[p] & cover_mask;
        for (std::size_t i = 0; i < plan.k; ++i)
            v |= static_cast<unsigned>(secrets[i].bytes[p] >> drop) << detail::lsb_shift(plan, i);
        out.bytes[p] = static_cast<std::uint8_t>(v);
    }
    return out;
}

/// Recovers each secret's top bits; the remaining low bits are zero.
inline std::vector<Image8> lsb_extract(const Image8& container, const LsbPlan& plan) {
    plan.validate();
    const unsigned drop = static_cast<unsigned>(8 - plan.bits_per_secret);
    const unsigned field = (1u << plan.bits_per_secret) - 1u;
    std::vector<Image8> out(plan.k, Image8{container.height, container.width,
                                           std::vector<std::uint8_t>(container.bytes.size())});
    for (std::size_t p = 0; p < container.bytes.size(); ++p)
        for (std::size_t i = 0; i < plan.k; ++i)
            out[i].bytes[p] = static_cast<std::uint8_t>(
                ((container.bytes[p] >> detail::lsb_shift(plan, i)) & field) << drop);
    return out;
}

} // namespace deepsteg
