#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pico {

// All codec failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error { using Error::Error; };
class RangeError : public Error { using Error::Error; };
class ArgumentError : public Error { using Error::Error; };
class ParameterError : public Error { using Error::Error; };
class DimensionError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class QuantizationError : public Error { using Error::Error; };
class ThresholdError : public Error { using Error::Error; };
class EvaluationError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

class TrainingError : public Error {
public:
    TrainingError(const std::string& what, std::size_t step)
        : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

class CorruptStreamError : public Error {
public:
    enum class Kind {
        bad_magic,
        unsupported_version,
        truncated,
        length_mismatch,
        checksum_mismatch,
        malformed,
    };

    CorruptStreamError(Kind kind, std::string section, std::size_t offset, const std::string& detail)
        : Error(section + " @" + std::to_string(offset) + ": " + detail),
          kind_(kind), section_(std::move(section)), offset_(offset) {}

    Kind kind() const noexcept { return kind_; }
    const std::string& section() const noexcept { return section_; }
    std::size_t offset() const noexcept { return offset_; }

private:
    Kind kind_;
    std::string section_;
    std::size_t offset_;
};

} // namespace pico
