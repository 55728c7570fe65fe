// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <limits>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "poscond/error.hpp"

namespace poscond {

struct NamedTensor {
    std::vector<std::int64_t> shape;
    std::vector<double> values;  // row-major, widened to double
};

namespace detail {

inline double half_to_double(std::uint16_t h) {
    const std::uint32_t sign = (h >> 15) & 1u;
    const std::uint32_t exp = (h >> 10) & 0x1fu;
    const std::uint32_t frac = h & 0x3ffu;
    double v;
    if (exp == 0) {
        v = std::ldexp(static_cast<double>(frac), -24);
    } else if (exp == 31) {
        v = frac ? std::numeric_limits<double>::quiet_NaN() : std::numeric_limits<double>::infinity();
    } else {
        v = std::ldexp(static_cast<double>(frac | 0x400u), static_cast<int>(exp) - 25);
    }
    return sign ? -v : v;
}

template <typename T>
T read_le(const char* p) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

}  // namespace detail

/// Reads every tensor of a .safetensors file (F64/F32/F16/BF16).
inline std::map<std::string, NamedTensor> load_safetensors(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::BackendFailure, "cannot open weights file " + path);
    char len_buf[8];
    if (!in.read(len_buf, 8)) fail(ErrorKind::BackendFailure, "truncated safetensors header in " + path);
    const auto header_len = detail::read_le<std::uint64_t>(len_buf);
    if (header_len > (1u << 28)) fail(ErrorKind::BackendFailure, "implausible safetensors header length");
    std::string header(header_len, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) {
        fail(ErrorKind::BackendFailure, "truncated safetensors header in " + path);
    }
    const auto meta = nlohmann::json::parse(header);
    const std::streamoff data_start = 8 + static_cast<std::streamoff>(header_len);

    std::map<std::string, NamedTensor> tensors;
    for (auto it = meta.begin(); it != meta.end(); ++it) {
        if (it.key() == "__metadata__") continue;
        const auto& info = it.value();
        const std::string dtype = info.at("dtype");
        const auto begin = info.at("data_offsets").at(0).get<std::uint64_t>();
        const auto end = info.at("data_offsets").at(1).get<std::uint64_t>();
        NamedTensor t;
        t.shape = info.at("shape").get<std::vector<std::int64_t>>();
        std::size_t count = 1;
        for (auto s : t.shape) count *= static_cast<std::size_t>(s);

        std::size_t width = 0;
        if (dtype == "F64") width = 8;
        else if (dtype == "F32") width = 4;
        else if (dtype == "F16" || dtype == "BF16") width = 2;
        else fail(ErrorKind::BackendFailure, "unsupported safetensors dtype " + dtype + " for " + it.key());
        if (end - begin != count * width) fail(ErrorKind::BackendFailure, "size mismatch for tensor " + it.key());

        std::vector<char> raw(end - begin);
        in.seekg(data_start + static_cast<std::streamoff>(begin));
        if (!in.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
            fail(ErrorKind::BackendFailure, "truncated data for tensor " + it.key());
        }
        t.values.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            const char* p = raw.data() + i * width;
            if (dtype == "F64") t.values[i] = detail::read_le<double>(p);
            else if (dtype == "F32") t.values[i] = detail::read_le<float>(p);
            else if (dtype == "F16") t.values[i] = detail::half_to_double(detail::read_le<std::uint16_t>(p));
            else t.values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(detail::read_le<std::uint16_t>(p)) << 16);
        }
        tensors.emplace(it.key(), std::move(t));
    }
    return tensors;
}

}  // namespace poscond
