// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "poscond/error.hpp"

namespace poscond {

inline std::string to_hex(std::span<const unsigned char> bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (unsigned char b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0x0f]);
    }
    return out;
}

/// Lower-case hex SHA-256 of a byte range.
inline std::string sha256_hex(std::span<const std::byte> data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
        fail(ErrorKind::IoError, "sha256 digest failed");
    }
    return to_hex(std::span<const unsigned char>(md.data(), len));
}

inline std::string sha256_hex(std::string_view text) {
    return sha256_hex(std::as_bytes(std::span<const char>(text.data(), text.size())));
}

}  // namespace poscond
