#include "mmstack/model_io.hpp"

#include <bit>
#include <cmath>

#include <nlohmann/json.hpp>

#include "mmstack/errors.hpp"
#include "mmstack/feature_io.hpp"

namespace mmstack {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr const char* kModelFormat = "mmstack-model";
constexpr int kModelVersion = 1;

void append_block(std::string& out, std::span<const double> values) {
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

void read_block(const std::string& bytes, std::size_t& pos, std::span<double> values, const std::string& name) {
  if (bytes.size() - pos < 4 * values.size()) throw CorruptionError("model file truncated in block " + name);
  for (double& v : values) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    v = std::bit_cast<float>(bits);
    if (!std::isfinite(v)) throw ValidationError("model block " + name + " contains non-finite values");
  }
}

ordered_json block_list(std::vector<ParamBlock>& blocks, const std::vector<std::pair<long, long>>& shapes) {
  ordered_json out = ordered_json::array();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    ordered_json e;
    e["name"] = blocks[b].name;
    e["shape"] = {shapes[b].first, shapes[b].second};
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

std::string encode_model(const AnyModel& any, const std::string& config_hash) {
  AnyModel model = any;
  ordered_json header;
  header["format"] = kModelFormat;
  header["version"] = kModelVersion;
  std::vector<ParamBlock> blocks;
  std::vector<std::pair<long, long>> shapes;

  if (auto* lin = std::get_if<LinearModel>(&model)) {
    header["kind"] = "linear";
    header["loss"] = to_string(lin->loss);
    header["input_dim"] = lin->input_dim();
    header["num_tags"] = lin->num_tags();
    header["seed"] = lin->seed;
    blocks = parameter_blocks(*lin);
    shapes = {{lin->weights.rows(), lin->weights.cols()}, {lin->bias.size(), 1}};
  } else {
    auto& mlp = std::get<MlpModel>(model);
    mlp.validate();
    header["kind"] = "mlp";
    header["loss"] = to_string(LossKind::kLogistic);
    header["input_dim"] = mlp.input_dim();
    header["num_tags"] = mlp.num_tags();
    header["hidden"] = mlp.hidden_sizes();
    header["dropout"] = mlp.dropout_rates;
    header["seed"] = mlp.seed;
    blocks = parameter_blocks(mlp);
    for (const DenseLayer& l : mlp.layers) {
      shapes.emplace_back(l.weights.rows(), l.weights.cols());
      shapes.emplace_back(l.bias.size(), 1);
    }
  }
  header["config_hash"] = config_hash;
  header["blocks"] = block_list(blocks, shapes);

  std::string out = header.dump();
  out.push_back('\n');
  for (const ParamBlock& b : blocks) append_block(out, b.values);
  return out;
}

ModelFile decode_model(const std::string& bytes) {
  const auto newline = bytes.find('\n');
  if (newline == std::string::npos) throw FormatError("model file has no header line");
  json header;
  try {
    header = json::parse(bytes.substr(0, newline));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("model header is not valid JSON: ") + e.what());
  }
  ModelFile out;
  try {
    if (header.value("format", std::string()) != kModelFormat) throw FormatError("not a model file");
    if (header.at("version").get<int>() != kModelVersion) throw FormatError("unsupported model file version");
    out.config_hash = header.value("config_hash", std::string());
    const auto kind = header.at("kind").get<std::string>();
    const auto input = header.at("input_dim").get<std::size_t>();
    const auto tags = header.at("num_tags").get<std::size_t>();

    std::vector<ParamBlock> blocks;
    if (kind == "linear") {
      LinearModel m = LinearModel::zeros(input, tags, parse_loss_kind(header.at("loss").get<std::string>()));
      m.seed = header.at("seed").get<std::uint64_t>();
      out.model = std::move(m);
      blocks = parameter_blocks(std::get<LinearModel>(out.model));
    } else if (kind == "mlp") {
      MlpModel m;
      const auto hidden = header.at("hidden").get<std::vector<std::size_t>>();
      std::vector<std::size_t> sizes{input};
      sizes.insert(sizes.end(), hidden.begin(), hidden.end());
      sizes.push_back(tags);
      for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        m.layers.push_back({Matrix::Zero(static_cast<Eigen::Index>(sizes[l + 1]), static_cast<Eigen::Index>(sizes[l])),
                            Vector::Zero(static_cast<Eigen::Index>(sizes[l + 1]))});
      }
      m.dropout_rates = header.at("dropout").get<std::vector<double>>();
      m.seed = header.at("seed").get<std::uint64_t>();
      m.validate();
      out.model = std::move(m);
      blocks = parameter_blocks(std::get<MlpModel>(out.model));
    } else {
      throw FormatError("unknown model kind '" + kind + "'");
    }

    const json& listed = header.at("blocks");
    if (listed.size() != blocks.size()) throw CorruptionError("model header block count does not match its kind");
    std::size_t pos = newline + 1;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const auto shape = listed[b].at("shape").get<std::vector<std::size_t>>();
      if (listed[b].at("name").get<std::string>() != blocks[b].name || shape.size() != 2 ||
          shape[0] * shape[1] != blocks[b].values.size()) {
        throw CorruptionError("model block " + blocks[b].name + " has an unexpected shape");
      }
      read_block(bytes, pos, blocks[b].values, blocks[b].name);
    }
    if (pos != bytes.size()) throw CorruptionError("trailing bytes after last model block");
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model header: ") + e.what());
  }
  return out;
}

void save_model(const AnyModel& model, const std::filesystem::path& path, const std::string& config_hash) {
  write_file_atomic(path, encode_model(model, config_hash));
}

ModelFile load_model(const std::filesystem::path& path) {
  try {
    return decode_model(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace mmstack
