#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deground/params.hpp"

// Checkpoint layout: a JSON manifest listing every tensor (name, shape,
// dtype, byte offset, byte length) plus free-form metadata, and a sidecar
// "<manifest>.bin" holding the float64 payloads little-endian, concatenated
// in manifest order.

namespace deground {

struct Checkpoint {
  ParamStore params;
  nlohmann::json meta;
};

namespace detail {

inline void put_le(std::vector<unsigned char>& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
}

inline double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& manifest_path, const ParamStore& params,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  const auto payload_path = std::filesystem::path(manifest_path.string() + ".bin");
  std::vector<unsigned char> payload;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& name : params.names()) {
    const auto& t = params.value(name);
    tensors.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"dtype", "float64"},
                       {"offset", payload.size()},
                       {"bytes", t.size() * 8}});
    for (double v : t.data()) detail::put_le(payload, v);
  }
  nlohmann::json manifest = {{"format", "deground-checkpoint"},
                             {"version", 1},
                             {"byte_order", "little"},
                             {"payload", payload_path.filename().string()},
                             {"meta", meta},
                             {"tensors", tensors}};
  std::ofstream mf(manifest_path, std::ios::binary);
  if (!mf) throw Error("checkpoint: cannot write " + manifest_path.string());
  mf << manifest.dump(2) << '\n';
  std::ofstream pf(payload_path, std::ios::binary);
  if (!pf) throw Error("checkpoint: cannot write " + payload_path.string());
  pf.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size()));
  if (!mf || !pf) throw Error("checkpoint: write failed for " + manifest_path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw Error("checkpoint: cannot read " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint: malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "deground-checkpoint") {
    throw Error("checkpoint: " + manifest_path.string() + " is not a checkpoint manifest");
  }
  const auto payload_path =
      manifest_path.parent_path() / manifest.at("payload").get<std::string>();
  std::ifstream pf(payload_path, std::ios::binary);
  if (!pf) throw Error("checkpoint: cannot read " + payload_path.string());
  std::vector<unsigned char> payload((std::istreambuf_iterator<char>(pf)),
                                     std::istreambuf_iterator<char>());
  Checkpoint ckpt;
  ckpt.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& t : manifest.at("tensors")) {
    if (t.at("dtype") != "float64") throw Error("checkpoint: unsupported dtype");
    const auto shape = t.at("shape").get<Shape>();
    const auto offset = t.at("offset").get<std::size_t>();
    const auto n = shape_size(shape);
    if (t.at("bytes").get<std::size_t>() != n * 8 || offset + n * 8 > payload.size()) {
      throw Error("checkpoint: payload range invalid for " + t.at("name").get<std::string>());
    }
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = detail::get_le(payload.data() + offset + 8 * i);
    ckpt.params.add(t.at("name").get<std::string>(), Tensor(shape, std::move(data)));
  }
  return ckpt;
}

}  // namespace deground
