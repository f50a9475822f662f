#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "episteme/errors.hpp"
#include "episteme/mlp.hpp"

namespace episteme {

using Json = nlohmann::json;

inline Json mlp_spec_to_json(const MlpSpec& spec) {
  Json j;
  j["layer_sizes"] = spec.layer_sizes;
  std::vector<std::string> acts;
  acts.reserve(spec.activations.size());
  for (Activation a : spec.activations) acts.emplace_back(activation_name(a));
  j["activations"] = acts;
  j["seed"] = spec.seed;
  return j;
}

inline MlpSpec mlp_spec_from_json(const Json& j) {
  MlpSpec spec;
  spec.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
  for (const auto& name : j.at("activations")) {
    spec.activations.push_back(activation_from_name(name.get<std::string>()));
  }
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.validate();
  return spec;
}

// {spec, layers:[{w:[[...]], b:[...]}]} with full double precision; the
// round trip is value exact.
inline Json mlp_to_json(const MlpParams& params) {
  Json j;
  j["spec"] = mlp_spec_to_json(params.spec);
  Json layers = Json::array();
  for (const auto& layer : params.layers) {
    const std::size_t out = layer.weight.shape[0];
    const std::size_t in = layer.weight.shape[1];
    Json w = Json::array();
    for (std::size_t o = 0; o < out; ++o) {
      w.push_back(std::vector<double>(
          layer.weight.values.begin() + static_cast<std::ptrdiff_t>(o * in),
          layer.weight.values.begin() +
              static_cast<std::ptrdiff_t>((o + 1) * in)));
    }
    Json entry;
    entry["w"] = std::move(w);
    entry["b"] = layer.bias.values;
    layers.push_back(std::move(entry));
  }
  j["layers"] = std::move(layers);
  return j;
}

inline MlpParams mlp_from_json(const Json& j) {
  MlpParams params;
  params.spec = mlp_spec_from_json(j.at("spec"));
  const auto& layers = j.at("layers");
  if (layers.size() != params.spec.layer_count()) {
    throw std::invalid_argument("mlp_from_json: layer count mismatch");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::size_t in = params.spec.layer_sizes[l];
    const std::size_t out = params.spec.layer_sizes[l + 1];
    Tensor w = Tensor::zeros({out, in});
    const auto& rows = layers[l].at("w");
    if (rows.size() != out) {
      throw std::invalid_argument("mlp_from_json: weight row count mismatch");
    }
    for (std::size_t o = 0; o < out; ++o) {
      const auto row = rows[o].get<std::vector<double>>();
      if (row.size() != in) {
        throw std::invalid_argument("mlp_from_json: weight row size mismatch");
      }
      std::copy(row.begin(), row.end(), w.values.begin() + static_cast<std::ptrdiff_t>(o * in));
    }
    Tensor b({out}, layers[l].at("b").get<std::vector<double>>());
    params.layers.push_back({std::move(w), std::move(b)});
  }
  return params;
}

inline void write_text_file(const std::string& path,
                            const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return content;
}

inline Json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("invalid JSON in " + path);
  return j;
}

inline void write_json_file(const std::string& path, const Json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace episteme
