#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "enfode/meta_train.hpp"

namespace enfode {

using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'E', 'N', 'F', 'C', 'K', 'P', 'T', '1'};

json enf_to_json(const EnfConfig& c) {
  json j;
  j["geometry"] = geom::geometry_name(c.geometry);
  j["n_latents"] = c.n_latents;
  j["context_dim"] = c.context_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["heads"] = c.heads;
  j["rff_features"] = c.rff_features;
  j["sigma_q"] = c.sigma_q;
  j["sigma_va"] = c.sigma_va;
  j["sigma_vb"] = c.sigma_vb;
  j["sigma_att"] = c.sigma_att;
  j["out_channels"] = c.out_channels;
  j["domain_extent"] = c.domain_extent;
  j["domain_center"] = c.domain_center;
  return j;
}

EnfConfig enf_from_json(const json& j) {
  EnfConfig c;
  c.geometry = geom::geometry_from_name(j.at("geometry").get<std::string>());
  c.n_latents = j.at("n_latents").get<int>();
  c.context_dim = j.at("context_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.rff_features = j.at("rff_features").get<int>();
  c.sigma_q = j.at("sigma_q").get<double>();
  c.sigma_va = j.at("sigma_va").get<double>();
  c.sigma_vb = j.at("sigma_vb").get<double>();
  c.sigma_att = j.at("sigma_att").get<double>();
  c.out_channels = j.at("out_channels").get<int>();
  c.domain_extent = j.at("domain_extent").get<double>();
  c.domain_center = j.value("domain_center", 0.0);
  return c;
}

json ode_to_json(const OdeConfig& c) {
  json j;
  j["layers"] = c.layers;
  j["hidden_dim"] = c.hidden_dim;
  j["method"] = c.method == SolverMethod::LieEuler ? "lie-euler" : "heun";
  j["steps_per_frame"] = c.steps_per_frame;
  j["frame_dt"] = c.frame_dt;
  return j;
}

OdeConfig ode_from_json(const json& j) {
  OdeConfig c;
  c.layers = j.at("layers").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  const std::string m = j.at("method").get<std::string>();
  if (m == "lie-euler")
    c.method = SolverMethod::LieEuler;
  else if (m == "heun")
    c.method = SolverMethod::Heun;
  else
    throw std::runtime_error("unknown solver method: " + m);
  c.steps_per_frame = j.at("steps_per_frame").get<int>();
  c.frame_dt = j.at("frame_dt").get<double>();
  return c;
}

json train_to_json(const TrainConfig& c) {
  json j;
  j["inner_steps"] = c.inner_steps;
  j["inner_rate_pose"] = c.inner_rate_pose;
  j["inner_rate_context"] = c.inner_rate_context;
  j["outer_lr_enf"] = c.outer_lr_enf;
  j["outer_lr_ode"] = c.outer_lr_ode;
  j["outer_lr_rates"] = c.outer_lr_rates;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["t_in"] = c.t_in;
  j["t_out"] = c.t_out;
  j["first_order"] = c.first_order;
  j["seed"] = c.seed;
  j["coord_samples"] = c.coord_samples;
  j["inner_coord_samples"] = c.inner_coord_samples;
  return j;
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  c.inner_steps = j.at("inner_steps").get<int>();
  c.inner_rate_pose = j.at("inner_rate_pose").get<double>();
  c.inner_rate_context = j.at("inner_rate_context").get<double>();
  c.outer_lr_enf = j.at("outer_lr_enf").get<double>();
  c.outer_lr_ode = j.at("outer_lr_ode").get<double>();
  c.outer_lr_rates = j.at("outer_lr_rates").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.t_in = j.at("t_in").get<int>();
  c.t_out = j.at("t_out").get<int>();
  c.first_order = j.at("first_order").get<bool>();
  c.seed = j.at("seed").get<uint64_t>();
  c.coord_samples = j.value("coord_samples", 0);
  c.inner_coord_samples = j.value("inner_coord_samples", 0);
  return c;
}

json config_json(const ModelBundle& mb) {
  json j;
  j["enf"] = enf_to_json(mb.enf);
  j["ode"] = ode_to_json(mb.ode);
  j["train"] = train_to_json(mb.train);
  j["seed"] = mb.train.seed;
  return j;
}

}  // namespace

std::string bundle_config_json(const ModelBundle& mb) { return config_json(mb).dump(2); }

ModelBundle bundle_from_config_json(const std::string& text) {
  const json j = json::parse(text);
  return make_model(enf_from_json(j.at("enf")), ode_from_json(j.at("ode")),
                    train_from_json(j.at("train")));
}

void save_checkpoint(const ModelBundle& mb, const std::string& path) {
  json j = config_json(mb);
  json table = json::array();
  int64_t offset = 0;  // f64 offsets into the blob section, in header order
  for (const auto& e : mb.params.entries()) {
    json p;
    p["name"] = e.name;
    p["shape"] = e.value.shape;
    p["trainable"] = e.trainable;
    p["offset"] = offset;
    offset += e.value.size();
    table.push_back(p);
  }
  j["params"] = table;
  const std::string header = j.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + tmp);
    f.write(kMagic, 8);
    const uint32_t len = static_cast<uint32_t>(header.size());
    f.write(reinterpret_cast<const char*>(&len), 4);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& e : mb.params.entries())
      f.write(reinterpret_cast<const char*>(e.value.data.data()),
              static_cast<std::streamsize>(e.value.data.size() * sizeof(double)));
    if (!f) throw std::runtime_error("save_checkpoint: short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("save_checkpoint: rename to " + path + " failed");
}

ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  uint32_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 4);
  std::string header(len, '\0');
  f.read(header.data(), len);
  if (!f) throw std::runtime_error("load_checkpoint: truncated header in " + path);
  const json j = json::parse(header);

  ModelBundle mb = bundle_from_config_json(header);
  for (const auto& p : j.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    const Shape shape = p.at("shape").get<Shape>();
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!f) throw std::runtime_error("load_checkpoint: truncated blob for " + name);
    if (!mb.params.has(name))
      throw std::runtime_error("load_checkpoint: unexpected parameter " + name);
    Tensor& dst = mb.params.at(name);
    if (dst.shape != t.shape)
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    dst = std::move(t);
  }
  return mb;
}

}  // namespace enfode
