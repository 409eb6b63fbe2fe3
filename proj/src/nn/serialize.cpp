#include "crosswise/nn/serialize.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <type_traits>

#include <json.hpp>

namespace crosswise::nn {

using nlohmann::json;

namespace {

template <class S>
constexpr const char* dtype_name() {
  return std::is_same_v<S, float> ? "f32" : "f64";
}

template <class S, class F>
ModelParams<S> read_tensors(const json& j, const ModelConfig& cfg) {
  ModelParams<S> p = ModelParams<S>::zeros(cfg);
  const json& tensors = j.at("tensors");
  for (auto& t : p.tensors()) {
    if (!tensors.contains(t.name)) throw std::invalid_argument("weight file missing tensor " + t.name);
    const json& e = tensors.at(t.name);
    const auto rows = e.at("shape").at(0).get<Eigen::Index>();
    const auto cols = e.at("shape").at(1).get<Eigen::Index>();
    if (rows != t.rows || cols != t.cols)
      throw std::invalid_argument("shape mismatch for " + t.name);
    const json& data = e.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
      throw std::invalid_argument("data length mismatch for " + t.name);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        t.data[c * rows + r] = static_cast<S>(data[r * cols + c].get<F>());
  }
  return p;
}

}  // namespace

template <class S>
std::string weights_to_json(const ModelParams<S>& params) {
  auto& p = const_cast<ModelParams<S>&>(params);
  const ModelConfig& c = p.config;
  json j;
  j["version"] = ModelParams<S>::kVersion;
  j["layout_hash"] = p.layout_hash;
  j["dtype"] = dtype_name<S>();
  j["config"] = {{"d_in", c.d_in},       {"d_h", c.d_h},         {"n_heads", c.n_heads},
                 {"d_ff", c.d_ff},       {"d_fc", c.d_fc},       {"dropout", c.dropout},
                 {"pooling", to_string(c.pooling)}};
  json tensors = json::object();
  for (const auto& t : p.tensors()) {
    json data = json::array();
    for (Eigen::Index r = 0; r < t.rows; ++r)
      for (Eigen::Index col = 0; col < t.cols; ++col) data.push_back(t.data[col * t.rows + r]);
    tensors[t.name] = {{"shape", {t.rows, t.cols}}, {"data", std::move(data)}};
  }
  j["tensors"] = std::move(tensors);
  return j.dump();
}

template <class S>
ModelParams<S> weights_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("version").get<int>() != ModelParams<S>::kVersion)
      throw std::invalid_argument("unsupported weight file version");
    ModelConfig cfg;
    const json& c = j.at("config");
    cfg.d_in = c.at("d_in").get<int>();
    cfg.d_h = c.at("d_h").get<int>();
    cfg.n_heads = c.at("n_heads").get<int>();
    cfg.d_ff = c.at("d_ff").get<int>();
    cfg.d_fc = c.value("d_fc", cfg.d_fc);
    cfg.dropout = c.value("dropout", cfg.dropout);
    cfg.pooling = pooling_from_string(c.value("pooling", std::string("mean")));
    cfg.validate();
    const std::string dtype = j.value("dtype", std::string("f64"));
    ModelParams<S> p = dtype == "f32" ? read_tensors<S, float>(j, cfg) : read_tensors<S, double>(j, cfg);
    p.layout_hash = j.at("layout_hash").get<std::string>();
    return p;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("weight file: ") + e.what());
  }
}

template <class S>
void save_weights(const ModelParams<S>& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << weights_to_json(p);
}

template <class S>
ModelParams<S> load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weights " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return weights_from_json<S>(ss.str());
}

template std::string weights_to_json(const ModelParams<float>&);
template std::string weights_to_json(const ModelParams<double>&);
template ModelParams<float> weights_from_json(const std::string&);
template ModelParams<double> weights_from_json(const std::string&);
template void save_weights(const ModelParams<float>&, const std::string&);
template void save_weights(const ModelParams<double>&, const std::string&);
template ModelParams<float> load_weights(const std::string&);
template ModelParams<double> load_weights(const std::string&);

}  // namespace crosswise::nn
