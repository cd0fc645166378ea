// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cdep/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace cdep {

static_assert(std::endian::native == std::endian::little,
              "container IO assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'C', 'D', 'E', 'P', 'B', 'I', 'N', '1'};
}  // namespace

const Tensor& Container::block(const std::string& name) const {
  for (const auto& [n, t] : blocks) {
    if (n == name) return t;
  }
  throw IoError("container has no block '" + name + "'");
}

void write_container(const std::string& path, const Container& c) {
  nlohmann::json header;
  header["meta"] = c.meta;
  header["blocks"] = nlohmann::json::array();
  for (const auto& [name, t] : c.blocks) {
    header["blocks"].push_back({{"name", name}, {"shape", t.shape()}});
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : c.blocks) {
    const auto d = t.data();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed for " + path);
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path + ": not a container file (bad magic)");
  }
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1u << 30)) {
    throw IoError(path + ": bad header length");
  }
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
    throw IoError(path + ": truncated header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": malformed header: " + e.what());
  }
  Container c;
  c.meta = header.value("meta", nlohmann::json::object());
  for (const auto& b : header.at("blocks")) {
    Shape shape = b.at("shape").get<Shape>();
    Buffer values(shape_numel(shape));
    if (!in.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)))) {
      throw IoError(path + ": truncated block '" + b.at("name").get<std::string>() + "'");
    }
    c.blocks.emplace_back(b.at("name").get<std::string>(),
                          Tensor::from_buffer(std::move(shape), std::move(values)));
  }
  return c;
}

}  // namespace cdep
