#include "timex/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <map>

#include "timex/common.hpp"
#include "timex/manifest.hpp"

namespace txai {

namespace {

constexpr const char* kMagic = "TIMEX-CKPT v1";

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian float32");

std::string read_line(std::istream& in, const std::string& what) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "checkpoint: missing " + what);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

void save_archive(const Archive& a, const std::filesystem::path& path) {
  nlohmann::json header;
  header["kind"] = a.kind;
  header["config"] = a.config;
  header["extra"] = a.extra;
  header["arrays"] = nlohmann::json::array();
  std::vector<torch::Tensor> flat;
  flat.reserve(a.arrays.size());
  for (const auto& [name, tensor] : a.arrays) {
    require(tensor.defined(), "save_archive: undefined tensor for " + name);
    auto t = tensor.detach().to(torch::kFloat).contiguous();
    std::vector<int64_t> shape(t.sizes().begin(), t.sizes().end());
    header["arrays"].push_back({{"name", name}, {"shape", shape}});
    flat.push_back(t);
  }
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "save_archive: cannot open " + path.string());
  out << kMagic << "\n" << header.dump() << "\n" << "end\n";
  for (const auto& t : flat) {
    out.write(reinterpret_cast<const char*>(t.data_ptr<float>()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  require(out.good(), "save_archive: write failed for " + path.string());
}

Archive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "load_archive: cannot open " + path.string());
  require(read_line(in, "magic line") == kMagic,
          "load_archive: bad magic in " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(read_line(in, "header line"));
  } catch (const nlohmann::json::exception& e) {
    fail("load_archive: invalid header JSON in " + path.string() + ": " + e.what());
  }
  require(read_line(in, "end marker") == "end",
          "load_archive: missing end marker in " + path.string());
  for (const char* key : {"kind", "config", "extra", "arrays"}) {
    require(header.contains(key),
            std::string("load_archive: header missing key '") + key + "'");
  }

  Archive a;
  a.kind = header["kind"].get<std::string>();
  a.config = header["config"];
  a.extra = header["extra"];
  for (const auto& entry : header["arrays"]) {
    require(entry.contains("name") && entry.contains("shape"),
            "load_archive: malformed array table entry");
    auto name = entry["name"].get<std::string>();
    auto shape = entry["shape"].get<std::vector<int64_t>>();
    int64_t numel = 1;
    for (auto s : shape) {
      require(s >= 0, "load_archive: negative dimension for " + name);
      numel *= s;
    }
    auto t = torch::empty(shape, torch::kFloat);
    in.read(reinterpret_cast<char*>(t.data_ptr<float>()),
            static_cast<std::streamsize>(numel * sizeof(float)));
    require(in.gcount() == static_cast<std::streamsize>(numel * sizeof(float)),
            "load_archive: payload size mismatch (truncated array " + name + ")");
    a.arrays.emplace_back(std::move(name), std::move(t));
  }
  require(in.peek() == std::char_traits<char>::eof(),
          "load_archive: payload size mismatch (trailing bytes)");
  return a;
}

nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
  return {{"t", c.t},
          {"d", c.d},
          {"c", c.c},
          {"d_h", c.d_h},
          {"num_layers", c.num_layers},
          {"n_heads", c.n_heads},
          {"dropout", c.dropout},
          {"normalize_embedding", c.normalize_embedding}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  for (const char* key : {"t", "d", "c", "d_h", "num_layers", "n_heads",
                          "dropout", "normalize_embedding"}) {
    require(j.contains(key),
            std::string("encoder config: missing key '") + key + "'");
  }
  c.t = j["t"].get<int64_t>();
  c.d = j["d"].get<int64_t>();
  c.c = j["c"].get<int64_t>();
  c.d_h = j["d_h"].get<int64_t>();
  c.num_layers = j["num_layers"].get<int64_t>();
  c.n_heads = j["n_heads"].get<int64_t>();
  c.dropout = j["dropout"].get<double>();
  c.normalize_embedding = j["normalize_embedding"].get<bool>();
  return c;
}

std::vector<std::pair<std::string, torch::Tensor>> named_tensors(
    const torch::nn::Module& m, const std::string& prefix) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : m.named_parameters(/*recurse=*/true)) {
    out.emplace_back(prefix + item.key(), item.value());
  }
  for (const auto& item : m.named_buffers(/*recurse=*/true)) {
    out.emplace_back(prefix + item.key(), item.value());
  }
  return out;
}

void load_named_tensors(torch::nn::Module& m,
                        const std::vector<std::pair<std::string, torch::Tensor>>& arrays,
                        const std::string& prefix) {
  std::map<std::string, torch::Tensor> targets;
  for (auto& [name, tensor] : named_tensors(m)) targets.emplace(name, tensor);
  size_t used = 0;
  torch::NoGradGuard ng;
  for (const auto& [name, tensor] : arrays) {
    if (name.rfind(prefix, 0) != 0) continue;
    auto local = name.substr(prefix.size());
    auto it = targets.find(local);
    require(it != targets.end(), "checkpoint: unexpected array '" + name + "'");
    require(it->second.sizes() == tensor.sizes(),
            "checkpoint: shape mismatch for '" + name + "'");
    it->second.copy_(tensor);
    targets.erase(it);
    ++used;
  }
  require(targets.empty(),
          "checkpoint: missing arrays for " + std::to_string(targets.size()) +
              " parameter(s), first: " +
              (targets.empty() ? "" : prefix + targets.begin()->first));
  require(used > 0 || arrays.empty(), "checkpoint: no arrays matched prefix '" + prefix + "'");
}

std::string weights_sha256(
    const std::vector<std::pair<std::string, torch::Tensor>>& arrays) {
  auto sorted = arrays;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  Sha256 h;
  for (const auto& [name, tensor] : sorted) {
    h.update(name);
    h.update("\0", 1);
    auto t = tensor.detach().to(torch::kFloat).contiguous();
    for (auto s : t.sizes()) {
      int64_t dim = s;
      h.update(&dim, sizeof(dim));
    }
    h.update(t.data_ptr<float>(), static_cast<size_t>(t.numel()) * sizeof(float));
  }
  return h.hex();
}

std::string weights_sha256(const torch::nn::Module& m) {
  return weights_sha256(named_tensors(m));
}

void save_reference_model(const ReferenceModel& m, const std::filesystem::path& path,
                          const nlohmann::json& extra) {
  Archive a;
  a.kind = "predictor";
  a.config = encoder_config_to_json(m.config);
  a.extra = extra;
  for (auto& nt : named_tensors(*m.g, "g.")) a.arrays.push_back(nt);
  for (auto& nt : named_tensors(*m.f, "f.")) a.arrays.push_back(nt);
  save_archive(a, path);
}

ReferenceModel load_reference_model(const std::filesystem::path& path,
                                    nlohmann::json* extra_out) {
  auto a = load_archive(path);
  require(a.kind == "predictor",
          "load_reference_model: archive kind is '" + a.kind + "', expected 'predictor'");
  auto model = make_reference_model(encoder_config_from_json(a.config));
  load_named_tensors(*model.g, a.arrays, "g.");
  load_named_tensors(*model.f, a.arrays, "f.");
  if (extra_out != nullptr) *extra_out = a.extra;
  model.eval();
  return model;
}

nlohmann::json loss_config_to_json(const LossConfig& c) {
  return {{"r", c.r},
          {"lambda_lc", c.lambda_lc},
          {"lambda_e", c.lambda_e},
          {"lambda_con", c.lambda_con},
          {"tau", c.tau},
          {"distance_normalize", c.distance_normalize},
          {"n_neg", c.n_neg}};
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
  LossConfig c;
  for (const char* key : {"r", "lambda_lc", "lambda_e", "lambda_con", "tau",
                          "distance_normalize", "n_neg"}) {
    require(j.contains(key), std::string("loss config: missing key '") + key + "'");
  }
  c.r = j["r"].get<double>();
  c.lambda_lc = j["lambda_lc"].get<double>();
  c.lambda_e = j["lambda_e"].get<double>();
  c.lambda_con = j["lambda_con"].get<double>();
  c.tau = j["tau"].get<double>();
  c.distance_normalize = j["distance_normalize"].get<bool>();
  c.n_neg = j["n_neg"].get<int64_t>();
  return c;
}

void save_explainer(const ExplainerModel& ex, const LandmarkSet& lm,
                    const std::filesystem::path& path, const nlohmann::json& extra) {
  Archive a;
  a.kind = "explainer";
  a.config = nlohmann::json{{"encoder", encoder_config_to_json(ex.config)},
                            {"loss", loss_config_to_json(ex.loss)},
                            {"mask_mode", to_string(ex.mask_mode)},
                            {"ablation", to_string(ex.ablation)},
                            {"landmark_n_eps", lm.n_eps}};
  a.extra = extra;
  for (auto& nt : named_tensors(*ex.h, "h.")) a.arrays.push_back(nt);
  for (auto& nt : named_tensors(*ex.g_e, "ge.")) a.arrays.push_back(nt);
  for (auto& nt : named_tensors(*ex.f_e, "fe.")) a.arrays.push_back(nt);
  a.arrays.emplace_back("stats.mu", ex.stats.mu);
  a.arrays.emplace_back("stats.sigma", ex.stats.sigma);
  auto l = lm.L.defined() ? lm.L : torch::zeros({0, ex.config.d_h});
  a.arrays.emplace_back("landmarks.L", l);
  auto occ = lm.occupancy.defined() ? lm.occupancy
                                    : torch::zeros({l.size(0)}, torch::kInt64);
  // Counts and ids are stored in the float32 container; exact below 2^24.
  a.arrays.emplace_back("landmarks.occupancy", occ.to(torch::kFloat));
  auto retained = torch::zeros({static_cast<int64_t>(lm.retained.size())});
  for (size_t i = 0; i < lm.retained.size(); ++i)
    retained[static_cast<int64_t>(i)] = static_cast<float>(lm.retained[i]);
  a.arrays.emplace_back("landmarks.retained", retained);
  save_archive(a, path);
}

std::pair<ExplainerModel, LandmarkSet> load_explainer(const std::filesystem::path& path,
                                                      nlohmann::json* extra_out) {
  auto a = load_archive(path);
  require(a.kind == "explainer",
          "load_explainer: archive kind is '" + a.kind + "', expected 'explainer'");
  for (const char* key : {"encoder", "loss", "mask_mode", "ablation", "landmark_n_eps"}) {
    require(a.config.contains(key),
            std::string("load_explainer: config missing key '") + key + "'");
  }
  ExplainerModel ex;
  ex.config = encoder_config_from_json(a.config["encoder"]);
  ex.loss = loss_config_from_json(a.config["loss"]);
  ex.mask_mode = mask_mode_from_string(a.config["mask_mode"].get<std::string>());
  ex.ablation = ablation_from_string(a.config["ablation"].get<std::string>());
  ex.h = MaskGenerator(ex.config);
  ex.g_e = TransformerEncoder(ex.config);
  ex.f_e = PredictorHead(ex.config.d_h, ex.config.c);
  load_named_tensors(*ex.h, a.arrays, "h.");
  load_named_tensors(*ex.g_e, a.arrays, "ge.");
  load_named_tensors(*ex.f_e, a.arrays, "fe.");

  std::map<std::string, torch::Tensor> rest;
  for (const auto& [name, tensor] : a.arrays) {
    if (name.rfind("stats.", 0) == 0 || name.rfind("landmarks.", 0) == 0)
      rest.emplace(name, tensor);
  }
  for (const char* key : {"stats.mu", "stats.sigma", "landmarks.L",
                          "landmarks.occupancy", "landmarks.retained"}) {
    require(rest.count(key) == 1,
            std::string("load_explainer: missing array '") + key + "'");
  }
  ex.stats.mu = rest.at("stats.mu");
  ex.stats.sigma = rest.at("stats.sigma");

  LandmarkSet lm;
  lm.L = rest.at("landmarks.L");
  lm.occupancy = rest.at("landmarks.occupancy").to(torch::kInt64);
  auto ret = rest.at("landmarks.retained");
  lm.retained.resize(static_cast<size_t>(ret.numel()));
  for (int64_t i = 0; i < ret.numel(); ++i)
    lm.retained[static_cast<size_t>(i)] = static_cast<int64_t>(ret[i].item<float>());
  lm.n_eps = a.config["landmark_n_eps"].get<int64_t>();
  require(lm.L.dim() == 2 && lm.L.size(1) == ex.config.d_h,
          "load_explainer: landmark width does not match embedding width");
  require(lm.occupancy.numel() == lm.L.size(0),
          "load_explainer: occupancy length does not match landmark count");
  if (extra_out != nullptr) *extra_out = a.extra;
  ex.eval();
  return {std::move(ex), std::move(lm)};
}

}  // namespace txai
