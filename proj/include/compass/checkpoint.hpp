// Copyright 2026 COMPASS Contributors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: magic "CMPS", version u32 LE, tensor count u32 LE,
// then per tensor: name length u16 + UTF-8 name, rank u8, dims as u32 each,
// payload as little-endian 32-bit floats.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "compass/params.hpp"

namespace compass {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'C', 'M', 'P', 'S'};

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(static_cast<bool>(is), "checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const ParameterStore& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  check(static_cast<bool>(os), cat("cannot open checkpoint for writing: ", path));
  os.write(kCheckpointMagic, 4);
  detail::write_pod<uint32_t>(os, kCheckpointVersion);
  detail::write_pod<uint32_t>(os, static_cast<uint32_t>(params.size()));
  for (const auto& [name, e] : params.entries()) {
    const Tensor& t = e.var.value();
    check(name.size() <= 0xffff, "checkpoint: parameter name too long");
    detail::write_pod<uint16_t>(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<uint8_t>(os, static_cast<uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i)
      detail::write_pod<uint32_t>(os, static_cast<uint32_t>(t.dim(i)));
    std::vector<float> payload(static_cast<size_t>(t.numel()));
    for (int64_t i = 0; i < t.numel(); ++i)
      payload[static_cast<size_t>(i)] = static_cast<float>(t[i]);
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size() * sizeof(float)));
  }
  check(static_cast<bool>(os), cat("checkpoint write failed: ", path));
}

// Loads values into an existing store. Every tensor in the file must match a
// parameter of the same name and shape, and every store entry must be
// covered; unknown container versions are rejected.
inline void load_checkpoint(ParameterStore& params, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(static_cast<bool>(is), cat("cannot open checkpoint: ", path));
  char magic[4];
  is.read(magic, 4);
  check(static_cast<bool>(is) && std::memcmp(magic, kCheckpointMagic, 4) == 0,
        cat("not a checkpoint file: ", path));
  uint32_t version = detail::read_pod<uint32_t>(is);
  check(version == kCheckpointVersion,
        cat("unsupported checkpoint version ", version, " in ", path));
  uint32_t count = detail::read_pod<uint32_t>(is);
  std::vector<std::string> seen;
  for (uint32_t ti = 0; ti < count; ++ti) {
    uint16_t name_len = detail::read_pod<uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    check(static_cast<bool>(is), "checkpoint: truncated name");
    uint8_t rank = detail::read_pod<uint8_t>(is);
    std::vector<int> shape(rank);
    for (uint8_t i = 0; i < rank; ++i)
      shape[i] = static_cast<int>(detail::read_pod<uint32_t>(is));
    int64_t numel = Tensor::checked_numel(shape);
    std::vector<float> payload(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    check(static_cast<bool>(is), cat("checkpoint: truncated payload for '", name, "'"));
    check(params.has(name), cat("checkpoint tensor '", name,
                                "' has no matching parameter in the store"));
    Tensor& dst = params.value(name);
    check(dst.shape() == shape,
          cat("checkpoint shape mismatch for '", name, "': file ", shape_str(shape),
              " vs store ", shape_str(dst)));
    for (int64_t i = 0; i < numel; ++i)
      dst[i] = static_cast<double>(payload[static_cast<size_t>(i)]);
    seen.push_back(name);
  }
  check(seen.size() == params.size(),
        cat("checkpoint covers ", seen.size(), " of ", params.size(),
            " store parameters"));
}

}  // namespace compass
