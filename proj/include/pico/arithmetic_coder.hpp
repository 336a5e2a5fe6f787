#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pico/errors.hpp"

namespace pico::cabac {

// Binary range coder with adaptive contexts.
//
// Probabilities are 16-bit estimates of P(bin = 0), start at 1/2 and adapt as
// an exponential moving average with window 2^5. The coding interval is a
// 32-bit range renormalized bytewise below 2^24, with carry propagation
// through a one-byte cache. Every stream starts with one zero byte and ends
// with a 4-byte flush, so the decoder consumes exactly the bytes written.

inline constexpr int kProbBits = 16;
inline constexpr std::uint32_t kProbOne = 1u << kProbBits;
inline constexpr int kAdaptShift = 5;
inline constexpr std::uint32_t kTopValue = 1u << 24;

struct Context {
    std::uint32_t p0 = kProbOne / 2;

    void update(unsigned bin) noexcept {
        if (bin == 0) p0 += (kProbOne - p0) >> kAdaptShift;
        else p0 -= p0 >> kAdaptShift;
    }
};

class Encoder {
public:
    void encode(unsigned bin, Context& ctx) {
        const std::uint32_t bound = (range_ >> kProbBits) * ctx.p0;
        if (bin == 0) {
            range_ = bound;
        } else {
            low_ += bound;
            range_ -= bound;
        }
        ctx.update(bin);
        normalize();
    }

    /// Equiprobable bin without a context.
    void encode_bypass(unsigned bin) {
        range_ >>= 1;
        if (bin) low_ += range_;
        normalize();
    }

    void encode_bypass_bits(std::uint32_t value, int nbits) {
        for (int i = nbits - 1; i >= 0; --i) encode_bypass((value >> i) & 1u);
    }

    std::vector<std::uint8_t> finish() {
        for (int i = 0; i < 5; ++i) shift_low();
        return std::move(out_);
    }

private:
    void normalize() {
        while (range_ < kTopValue) {
            range_ <<= 8;
            shift_low();
        }
    }

    void shift_low() {
        if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
            const auto carry = static_cast<std::uint8_t>(low_ >> 32);
            std::uint8_t temp = cache_;
            do {
                out_.push_back(static_cast<std::uint8_t>(temp + carry));
                temp = 0xFF;
            } while (--cache_size_ != 0);
            cache_ = static_cast<std::uint8_t>(low_ >> 24);
        }
        ++cache_size_;
        low_ = (low_ & 0x00FFFFFFu) << 8;
    }

    std::uint64_t low_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
    std::uint8_t cache_ = 0;
    std::uint64_t cache_size_ = 1;
    std::vector<std::uint8_t> out_;
};

class Decoder {
public:
    Decoder(std::span<const std::uint8_t> data, std::string section, std::size_t base_offset = 0)
        : data_(data), section_(std::move(section)), base_(base_offset) {
        for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next_byte();
    }

    unsigned decode(Context& ctx) {
        const std::uint32_t bound = (range_ >> kProbBits) * ctx.p0;
        unsigned bin;
        if (code_ < bound) {
            range_ = bound;
            bin = 0;
        } else {
            code_ -= bound;
            range_ -= bound;
            bin = 1;
        }
        ctx.update(bin);
        normalize();
        return bin;
    }

    unsigned decode_bypass() {
        range_ >>= 1;
        unsigned bin = 0;
        if (code_ >= range_) {
            code_ -= range_;
            bin = 1;
        }
        normalize();
        return bin;
    }

    std::uint32_t decode_bypass_bits(int nbits) {
        std::uint32_t v = 0;
        for (int i = 0; i < nbits; ++i) v = (v << 1) | decode_bypass();
        return v;
    }

    std::size_t consumed() const noexcept { return pos_; }

    /// Every coded byte must have been read.
    void finish() const {
        if (pos_ != data_.size()) {
            throw CorruptStreamError(CorruptStreamError::Kind::length_mismatch, section_, base_ + pos_,
                                     std::to_string(data_.size() - pos_) + " unread coded bytes");
        }
    }

    [[noreturn]] void fail(const std::string& why) const {
        throw CorruptStreamError(CorruptStreamError::Kind::malformed, section_, base_ + pos_, why);
    }

private:
    std::uint8_t next_byte() {
        if (pos_ >= data_.size()) {
            throw CorruptStreamError(CorruptStreamError::Kind::truncated, section_, base_ + pos_,
                                     "arithmetic decoder ran past the payload");
        }
        return data_[pos_++];
    }

    void normalize() {
        while (range_ < kTopValue) {
            range_ <<= 8;
            code_ = (code_ << 8) | next_byte();
        }
    }

    std::span<const std::uint8_t> data_;
    std::string section_;
    std::size_t base_ = 0;
    std::size_t pos_ = 0;
    std::uint32_t code_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
};

} // namespace pico::cabac
