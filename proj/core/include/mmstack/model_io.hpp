#pragma once

#include <filesystem>
#include <string>

#include "mmstack/learners.hpp"

namespace mmstack {

// Model file: one line of JSON header (kind, shapes, loss, dropout, seed,
// config hash, block list) terminated by '\n', followed by the parameter
// blocks as little-endian float32 in the order the header lists them.
struct ModelFile {
  AnyModel model;
  std::string config_hash;
};

std::string encode_model(const AnyModel& model, const std::string& config_hash = {});
ModelFile decode_model(const std::string& bytes);

void save_model(const AnyModel& model, const std::filesystem::path& path, const std::string& config_hash = {});
ModelFile load_model(const std::filesystem::path& path);

}  // namespace mmstack
