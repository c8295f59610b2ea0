#pragma once

#include <stdexcept>
#include <string>

namespace edof {

enum class Errc {
    malformed_header,
    truncated_payload,
    unsupported_maxval,
    unsupported_format,
    malformed_manifest,
    missing_file,
    unwritable_path,
    dimension_mismatch,
    image_too_small,
    level_overflow,
    shape_mismatch,
    degenerate_histogram,
    bad_weights_magic,
    bad_weights_version,
    truncated_weights,
    invalid_argument,
    empty_input,
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& detail)
        : std::runtime_error(std::string(errc_name(code)) + ": " + detail),
          code_(code) {}

    Errc code() const { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& detail) {
    throw Error(code, detail);
}

} // namespace edof
