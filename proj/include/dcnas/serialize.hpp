#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dcnas/tensor.hpp"

namespace dcnas {

// Flat named-array container: a JSON manifest listing name -> shape -> offset
// plus a raw little-endian f64 payload file next to it. Arrays are stored
// sorted by name so identical contents produce identical bytes.

static_assert(sizeof(double) == 8, "f64 payload assumes 8-byte doubles");

struct NamedArrays {
  std::map<std::string, Tensor> arrays;
  nlohmann::json meta;
};

inline std::string payload_name_for(const std::filesystem::path& manifest_path) {
  std::filesystem::path p = manifest_path;
  p.replace_extension(".bin");
  return p.filename().string();
}

inline void save_named_arrays(const std::filesystem::path& manifest_path,
                              const std::map<std::string, Tensor>& arrays,
                              const nlohmann::json& meta = nlohmann::json::object()) {
  std::filesystem::path payload_path = manifest_path;
  payload_path.replace_extension(".bin");

  nlohmann::json entries = nlohmann::json::array();
  std::ofstream payload(payload_path, std::ios::binary | std::ios::trunc);
  if (!payload) throw DataError("cannot write " + payload_path.string());
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : arrays) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = tensor.shape();
    e["offset"] = offset;
    e["count"] = tensor.numel();
    entries.push_back(e);
    const auto& vals = tensor.values();
    payload.write(reinterpret_cast<const char*>(vals.data()),
                  static_cast<std::streamsize>(vals.size() * sizeof(double)));
    offset += vals.size() * sizeof(double);
  }
  payload.close();

  nlohmann::json manifest;
  manifest["format"] = "dcnas-arrays-v1";
  manifest["payload"] = payload_name_for(manifest_path);
  manifest["arrays"] = entries;
  manifest["meta"] = meta;
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + manifest_path.string());
  out << manifest.dump(2) << "\n";
}

inline NamedArrays load_named_arrays(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot read " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad manifest " + manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "dcnas-arrays-v1") {
    throw DataError("unknown array format in " + manifest_path.string());
  }
  std::filesystem::path payload_path =
      manifest_path.parent_path() / manifest.value("payload", payload_name_for(manifest_path));
  std::ifstream payload(payload_path, std::ios::binary);
  if (!payload) throw DataError("cannot read " + payload_path.string());

  NamedArrays result;
  result.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& e : manifest.at("arrays")) {
    const std::string name = e.at("name").get<std::string>();
    const Shape shape = e.at("shape").get<Shape>();
    const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
    const std::size_t count = e.at("count").get<std::size_t>();
    if (count != shape_numel(shape)) {
      throw DataError("array " + name + ": count does not match shape");
    }
    std::vector<double> vals(count);
    payload.seekg(static_cast<std::streamoff>(offset));
    payload.read(reinterpret_cast<char*>(vals.data()),
                 static_cast<std::streamsize>(count * sizeof(double)));
    if (!payload) throw DataError("array " + name + ": truncated payload");
    result.arrays.emplace(name, Tensor::from_values(shape, std::move(vals)));
  }
  return result;
}

// Copy loaded values into existing parameter tensors, matched by name.
inline void restore_named_arrays(const NamedArrays& stored,
                                 const std::vector<std::pair<std::string, Tensor>>& params) {
  for (const auto& [name, tensor] : params) {
    auto it = stored.arrays.find(name);
    if (it == stored.arrays.end()) throw DataError("checkpoint is missing array " + name);
    if (it->second.shape() != tensor.shape()) {
      throw DataError("checkpoint array " + name + " has shape " + shape_str(it->second.shape()) +
                      ", expected " + shape_str(tensor.shape()));
    }
    Tensor dst = tensor;
    dst.values() = it->second.values();
  }
}

// In-memory byte image of a set of named tensors; used for bitwise
// freeze/isolation contracts.
inline std::string serialize_bytes(const std::vector<std::pair<std::string, Tensor>>& entries) {
  std::string bytes;
  for (const auto& [name, tensor] : entries) {
    bytes += name;
    bytes.push_back('\0');
    const auto& vals = tensor.values();
    const char* raw = reinterpret_cast<const char*>(vals.data());
    bytes.append(raw, raw + vals.size() * sizeof(double));
  }
  return bytes;
}

}  // namespace dcnas
