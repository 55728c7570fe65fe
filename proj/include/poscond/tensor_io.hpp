// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

// On-disk layout:
//   8 bytes   "PCONDT01"
//   4 bytes   header length, little endian
//   header    JSON {L, W, P, word_index_map, manifest, sha256}
//   payload   L*W*P little-endian f64, row-major [L, W, P]

#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "poscond/digest.hpp"
#include "poscond/error.hpp"
#include "poscond/windowing.hpp"

namespace poscond {

inline constexpr char kTensorMagic[] = "PCONDT01";

namespace detail {

inline std::string payload_bytes(const std::vector<double>& data) {
    std::string out(data.size() * 8, '\0');
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(data[i]);
        for (int b = 0; b < 8; ++b) out[i * 8 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    return out;
}

inline std::string payload_digest(const std::string& bytes) {
    return sha256_hex(std::span(reinterpret_cast<const std::byte*>(bytes.data()), bytes.size()));
}

}  // namespace detail

inline std::string serialize_tensor(const ConductanceTensor& t) {
    if (t.data.size() != t.L * t.W * t.P) fail(ErrorKind::ConfigError, "tensor data does not match its shape");
    const std::string payload = detail::payload_bytes(t.data);
    const nlohmann::json header = {{"L", t.L},
                                   {"W", t.W},
                                   {"P", t.P},
                                   {"word_index_map", t.word_index_map},
                                   {"manifest", t.manifest},
                                   {"sha256", detail::payload_digest(payload)}};
    const std::string h = header.dump();
    std::string out(kTensorMagic, 8);
    const auto n = static_cast<std::uint32_t>(h.size());
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((n >> (8 * b)) & 0xff));
    out += h;
    out += payload;
    return out;
}

inline ConductanceTensor deserialize_tensor(const std::string& bytes) {
    if (bytes.size() < 8 || bytes.compare(0, 6, kTensorMagic, 6) != 0) {
        fail(ErrorKind::FormatVersionMismatch, "not a conductance tensor file");
    }
    if (bytes.compare(0, 8, kTensorMagic, 8) != 0) {
        fail(ErrorKind::FormatVersionMismatch, "unsupported tensor format version '" + bytes.substr(6, 2) + "'");
    }
    if (bytes.size() < 12) fail(ErrorKind::ChecksumMismatch, "file truncated inside the header length");
    std::uint32_t n = 0;
    for (int b = 0; b < 4; ++b) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + static_cast<std::size_t>(b)])) << (8 * b);
    if (bytes.size() < 12 + static_cast<std::size_t>(n)) fail(ErrorKind::ChecksumMismatch, "file truncated inside the header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(12, n));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ChecksumMismatch, std::string("corrupt header: ") + e.what());
    }
    ConductanceTensor t;
    try {
        t.L = header.at("L").get<std::size_t>();
        t.W = header.at("W").get<std::size_t>();
        t.P = header.at("P").get<std::size_t>();
        t.word_index_map = header.at("word_index_map").get<std::vector<std::size_t>>();
        t.manifest = header.at("manifest");
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ChecksumMismatch, std::string("corrupt header: ") + e.what());
    }
    const std::string payload = bytes.substr(12 + static_cast<std::size_t>(n));
    if (payload.size() != t.L * t.W * t.P * 8) {
        fail(ErrorKind::ChecksumMismatch, "payload has " + std::to_string(payload.size()) + " bytes, expected " +
                                              std::to_string(t.L * t.W * t.P * 8));
    }
    if (detail::payload_digest(payload) != header.value("sha256", std::string())) {
        fail(ErrorKind::ChecksumMismatch, "payload digest does not match the header");
    }
    if (t.word_index_map.size() != t.W) fail(ErrorKind::ChecksumMismatch, "word index map length differs from W");
    t.data.resize(t.L * t.W * t.P);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[i * 8 + static_cast<std::size_t>(b)])) << (8 * b);
        t.data[i] = std::bit_cast<double>(bits);
    }
    return t;
}

inline void save_tensor(const ConductanceTensor& t, const std::filesystem::path& path) {
    const std::string bytes = serialize_tensor(t);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::IoError, "short write to " + path.string());
}

inline ConductanceTensor load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot read " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_tensor(bytes);
}

}  // namespace poscond
