#include "sls/serialize.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <vector>

namespace sls {

namespace {
using nlohmann::json;

constexpr char kMagic[4] = {'S', 'L', 'S', 'M'};
constexpr std::uint32_t kVersion = 1;

std::string family_tag(Family f) {
  switch (f) {
    case Family::kNorm:
      return "norm";
    case Family::kFlowMahalanobis:
      return "flow";
    case Family::kUnionOfFlows:
      return "union";
  }
  throw std::logic_error("family_tag");
}

Family family_from_tag(const std::string& tag) {
  if (tag == "norm") return Family::kNorm;
  if (tag == "flow") return Family::kFlowMahalanobis;
  if (tag == "union") return Family::kUnionOfFlows;
  throw std::runtime_error("model file: unknown frontier family '" + tag + "'");
}

json frontier_config_to_json(const FrontierConfig& c) {
  json j;
  j["family"] = family_tag(c.family);
  j["x_dim"] = c.x_dim;
  j["d"] = c.d;
  j["components"] = c.components;
  j["identity_flow"] = c.identity_flow;
  j["unit_det"] = c.unit_det;
  j["flow_layers"] = c.flow_layers;
  j["flow_hidden"] = c.flow_hidden;
  j["center_hidden"] = c.center_hidden;
  j["shape_hidden"] = c.shape_hidden;
  j["mixture_hidden"] = c.mixture_hidden;
  j["use_layer_norm"] = c.use_layer_norm;
  j["flow_dropout"] = c.flow_dropout;
  j["shape_mode"] = c.shape_mode == ShapeMode::kAuto
                        ? "auto"
                        : (c.shape_mode == ShapeMode::kFullRank ? "full" : "lowrank");
  return j;
}

FrontierConfig frontier_config_from_json(const json& j) {
  FrontierConfig c;
  c.family = family_from_tag(j.at("family").get<std::string>());
  c.x_dim = j.at("x_dim").get<int>();
  c.d = j.at("d").get<int>();
  c.components = j.at("components").get<int>();
  c.identity_flow = j.at("identity_flow").get<bool>();
  c.unit_det = j.at("unit_det").get<bool>();
  c.flow_layers = j.at("flow_layers").get<int>();
  c.flow_hidden = j.at("flow_hidden").get<std::vector<int>>();
  c.center_hidden = j.at("center_hidden").get<std::vector<int>>();
  c.shape_hidden = j.at("shape_hidden").get<std::vector<int>>();
  c.mixture_hidden = j.at("mixture_hidden").get<std::vector<int>>();
  c.use_layer_norm = j.at("use_layer_norm").get<bool>();
  c.flow_dropout = j.at("flow_dropout").get<double>();
  std::string m = j.at("shape_mode").get<std::string>();
  c.shape_mode =
      m == "auto" ? ShapeMode::kAuto : (m == "full" ? ShapeMode::kFullRank : ShapeMode::kLowRankDiag);
  return c;
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

void write_params(std::ofstream& out, const ParamSet& params) {
  for (int i = 0; i < params.count(); ++i) {
    const Tensor& t = params.value(i);
    write_u64(out, t.size());
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
}

void read_params(std::ifstream& in, ParamSet& params, const std::string& what) {
  for (int i = 0; i < params.count(); ++i) {
    Tensor& t = params.value(i);
    std::uint64_t n = read_u64(in);
    if (n != t.size())
      throw std::runtime_error("model file: " + what + " buffer " + std::to_string(i) +
                               " has " + std::to_string(n) + " values, expected " +
                               std::to_string(t.size()));
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw std::runtime_error("model file: truncated " + what + " buffer");
  }
}
}  // namespace

void save_model(const std::string& path, const PredictionRegion& region,
                const std::optional<CalibrationResult>& calibration,
                const ModelMetadata& meta) {
  json header;
  header["artifact_version"] = kVersion;
  header["frontier"] = frontier_config_to_json(region.frontier().config());
  header["tau"] = region.tau();
  header["has_qnet"] = region.qnet().has_value();
  if (region.qnet()) {
    const auto& q = region.qnet()->config();
    header["qnet"] = {{"x_dim", q.x_dim},
                      {"hidden_dims", q.hidden_dims},
                      {"use_layer_norm", q.use_layer_norm},
                      {"dropout_rate", q.dropout_rate}};
  }
  header["has_calibration"] = calibration.has_value();
  if (calibration) {
    header["calibration"] = {{"n_cal", calibration->n_cal},
                             {"achieved_level", calibration->achieved_level},
                             {"infinite_scale", std::isinf(calibration->scale)}};
  }
  header["seed"] = meta.seed;
  header["config_hash"] = meta.config_hash;
  header["softmin_beta"] = region.frontier().softmin_beta();
  header["weights_frozen"] = region.frontier().weights_frozen();
  std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u64(out, hs.size());
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  write_params(out, region.frontier().params());
  if (region.qnet()) write_params(out, region.qnet()->params());
  // scale factors kept binary so +/-inf and exact doubles survive
  double scales[2] = {region.scale(), calibration ? calibration->scale : 1.0};
  out.write(reinterpret_cast<const char*>(scales), sizeof scales);
  if (!out) throw std::runtime_error("write failed: " + path);
}

LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kMagic, 4))
    throw std::runtime_error("not a model file: " + path);
  std::uint32_t version = read_u32(in);
  if (version != kVersion)
    throw std::runtime_error("unsupported model file version " + std::to_string(version));
  std::uint64_t hlen = read_u64(in);
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("model file: truncated header");
  json header = json::parse(hs);

  FrontierConfig fcfg = frontier_config_from_json(header.at("frontier"));
  RngStream init(0, "load");  // parameters are overwritten below
  std::unique_ptr<Frontier> frontier = make_frontier(fcfg, init);
  frontier->set_softmin_beta(header.value("softmin_beta", 0.0));
  frontier->set_weights_frozen(header.value("weights_frozen", false));

  std::optional<QuantileNet> qnet;
  if (header.at("has_qnet").get<bool>()) {
    QuantileNetConfig qcfg;
    const json& jq = header.at("qnet");
    qcfg.x_dim = jq.at("x_dim").get<int>();
    qcfg.hidden_dims = jq.at("hidden_dims").get<std::vector<int>>();
    qcfg.use_layer_norm = jq.at("use_layer_norm").get<bool>();
    qcfg.dropout_rate = jq.at("dropout_rate").get<double>();
    RngStream qinit(0, "load/qnet");
    qnet.emplace(qcfg, qinit);
  }

  read_params(in, frontier->params(), "frontier");
  if (qnet) read_params(in, qnet->params(), "qnet");
  double scales[2] = {1.0, 1.0};
  in.read(reinterpret_cast<char*>(scales), sizeof scales);
  if (!in) throw std::runtime_error("model file: truncated scale section");

  LoadedModel lm;
  lm.region = std::make_unique<PredictionRegion>(std::move(frontier), std::move(qnet),
                                                 header.at("tau").get<double>());
  lm.region->set_scale(scales[0]);
  if (header.at("has_calibration").get<bool>()) {
    CalibrationResult cal;
    const json& jc = header.at("calibration");
    cal.n_cal = jc.at("n_cal").get<int>();
    cal.achieved_level = jc.at("achieved_level").get<double>();
    cal.scale = jc.at("infinite_scale").get<bool>()
                    ? std::numeric_limits<double>::infinity()
                    : scales[1];
    lm.calibration = cal;
  }
  lm.meta.seed = header.at("seed").get<std::uint64_t>();
  lm.meta.config_hash = header.at("config_hash").get<std::string>();
  return lm;
}

}  // namespace sls
