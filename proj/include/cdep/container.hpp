// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat binary container shared by checkpoints and dataset caches:
//   8-byte magic "CDEPBIN1"
//   u64 little-endian header length
//   JSON header {"meta": ..., "blocks": [{"name", "shape"}, ...]}
//   little-endian f64 payload of each block, in header order

#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cdep/tensor.hpp"
#include "json.hpp"

namespace cdep {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Container {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> blocks;

  // Block by name; throws IoError if missing.
  const Tensor& block(const std::string& name) const;
};

void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

}  // namespace cdep
