#include "timex/explain_io.hpp"

#include <bit>
#include <fstream>

#include "timex/common.hpp"

namespace txai {

namespace {

constexpr const char* kMagic = "TIMEX-EXPL v1";

static_assert(std::endian::native == std::endian::little,
              "explanation payloads are little-endian");

std::string read_line(std::istream& in, const std::string& what) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "explanations: missing " + what);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

void write_exact(std::ostream& out, const void* data, size_t len) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(len));
}

void read_exact(std::istream& in, void* data, size_t len, const char* what) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(len));
  require(in.gcount() == static_cast<std::streamsize>(len),
          std::string("explanations: truncated ") + what);
}

}  // namespace

void ExplanationSet::validate() const {
  for (const auto* t : {&ids, &p, &m, &z_e, &y_ref, &y_exp}) {
    require(t->defined(), "explanations: all record tensors must be defined");
  }
  const int64_t n = ids.size(0);
  require(ids.dim() == 1 && y_ref.sizes() == ids.sizes() && y_exp.sizes() == ids.sizes(),
          "explanations: ids and labels must be (N,)");
  require(p.dim() == 3 && p.size(0) == n, "explanations: p must be (N,T,d)");
  require(m.sizes() == p.sizes(), "explanations: m must match p's shape");
  require(z_e.dim() == 2 && z_e.size(0) == n, "explanations: z_e must be (N,d_z)");
  require((p.ge(0) & p.le(1)).all().item<bool>(), "explanations: p entries must lie in [0,1]");
  require(((m == 0) | (m == 1)).all().item<bool>(), "explanations: m entries must be binary");
}

ExplanationSet explain_dataset(const ReferenceModel& ref, const ExplainerModel& ex,
                               const torch::Tensor& x, const torch::Tensor& ids,
                               int64_t batch) {
  require(batch > 0, "explain_dataset: batch must be positive");
  require(x.dim() == 3, "explain_dataset: x must be (N,T,d)");
  require(ids.dim() == 1 && ids.size(0) == x.size(0),
          "explain_dataset: ids must be (N,) aligned with x");

  ref.eval();
  ex.eval();
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> ps, ms, zs, yr, ye;
  for (int64_t i = 0; i < x.size(0); i += batch) {
    auto xc = x.slice(0, i, std::min(i + batch, x.size(0))).to(torch::kFloat32);
    auto e = explain(ex, xc);
    ps.push_back(e.p);
    ms.push_back(e.m);
    zs.push_back(e.z_e);
    ye.push_back(e.logits_e.argmax(1));
    yr.push_back(ref.logits(xc).argmax(1));
  }
  ExplanationSet es;
  es.ids = ids.to(torch::kInt64).contiguous();
  es.p = torch::cat(ps, 0).contiguous();
  es.m = torch::cat(ms, 0).contiguous();
  es.z_e = torch::cat(zs, 0).contiguous();
  es.y_ref = torch::cat(yr, 0).contiguous();
  es.y_exp = torch::cat(ye, 0).contiguous();
  // No-STE explainers attribute with soft masks; the dumped mask is the
  // thresholded view so the record format stays uniformly binary.
  if (!((es.m == 0) | (es.m == 1)).all().item<bool>()) es.m = (es.m >= 0.5).to(torch::kFloat32);
  es.validate();
  return es;
}

std::vector<uint8_t> pack_bits(const torch::Tensor& binary) {
  auto flat = binary.detach().to(torch::kFloat32).contiguous().reshape({-1});
  require(((flat == 0) | (flat == 1)).all().item<bool>(), "pack_bits: entries must be binary");
  const int64_t n = flat.numel();
  std::vector<uint8_t> bytes(static_cast<size_t>((n + 7) / 8), 0);
  const float* src = flat.data_ptr<float>();
  for (int64_t i = 0; i < n; ++i) {
    if (src[i] != 0.0f) bytes[static_cast<size_t>(i / 8)] |= static_cast<uint8_t>(1u << (i % 8));
  }
  return bytes;
}

torch::Tensor unpack_bits(const std::vector<uint8_t>& bytes, torch::IntArrayRef shape) {
  int64_t n = 1;
  for (int64_t s : shape) n *= s;
  require(bytes.size() == static_cast<size_t>((n + 7) / 8),
          "unpack_bits: byte count disagrees with the shape");
  auto out = torch::zeros({n}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (int64_t i = 0; i < n; ++i) {
    if (bytes[static_cast<size_t>(i / 8)] & (1u << (i % 8))) dst[i] = 1.0f;
  }
  // Stray bits past the last cell mean the payload was not produced by
  // pack_bits on this shape.
  for (int64_t i = n; i < static_cast<int64_t>(bytes.size()) * 8; ++i) {
    require(!(bytes[static_cast<size_t>(i / 8)] & (1u << (i % 8))),
            "unpack_bits: nonzero padding bits");
  }
  return out.reshape(shape);
}

void save_explanations(const ExplanationSet& es, const std::filesystem::path& path) {
  es.validate();
  const int64_t n = es.size();
  const int64_t t = es.p.size(1), d = es.p.size(2), d_z = es.z_e.size(1);

  nlohmann::json header{{"meta", es.meta}, {"n", n}, {"t", t}, {"d", d}, {"d_z", d_z}};
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "save_explanations: cannot open " + path.string());
  out << kMagic << "\n" << header.dump() << "\n" << "end\n";

  auto p = es.p.to(torch::kFloat32).contiguous();
  auto z = es.z_e.to(torch::kFloat32).contiguous();
  auto ids = es.ids.to(torch::kInt64).contiguous();
  auto yr = es.y_ref.to(torch::kInt32).contiguous();
  auto ye = es.y_exp.to(torch::kInt32).contiguous();
  for (int64_t i = 0; i < n; ++i) {
    const int64_t id = ids[i].item<int64_t>();
    write_exact(out, &id, sizeof(id));
    write_exact(out, p[i].data_ptr<float>(), static_cast<size_t>(t * d) * sizeof(float));
    auto bits = pack_bits(es.m[i]);
    write_exact(out, bits.data(), bits.size());
    write_exact(out, z[i].data_ptr<float>(), static_cast<size_t>(d_z) * sizeof(float));
    const int32_t a = yr[i].item<int32_t>(), b = ye[i].item<int32_t>();
    write_exact(out, &a, sizeof(a));
    write_exact(out, &b, sizeof(b));
  }
  require(out.good(), "save_explanations: write failed for " + path.string());
}

ExplanationSet load_explanations(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "load_explanations: cannot open " + path.string());
  require(read_line(in, "magic line") == kMagic,
          "load_explanations: bad magic in " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(read_line(in, "header line"));
  } catch (const nlohmann::json::exception& e) {
    fail("load_explanations: invalid header JSON: " + std::string(e.what()));
  }
  require(read_line(in, "end marker") == "end", "load_explanations: missing end marker");
  for (const char* key : {"meta", "n", "t", "d", "d_z"}) {
    require(header.contains(key),
            std::string("load_explanations: header missing key '") + key + "'");
  }
  const int64_t n = header["n"].get<int64_t>();
  const int64_t t = header["t"].get<int64_t>();
  const int64_t d = header["d"].get<int64_t>();
  const int64_t d_z = header["d_z"].get<int64_t>();
  require(n >= 0 && t > 0 && d > 0 && d_z > 0, "load_explanations: invalid header sizes");

  ExplanationSet es;
  es.meta = header["meta"];
  es.ids = torch::empty({n}, torch::kInt64);
  es.p = torch::empty({n, t, d}, torch::kFloat32);
  es.m = torch::empty({n, t, d}, torch::kFloat32);
  es.z_e = torch::empty({n, d_z}, torch::kFloat32);
  es.y_ref = torch::empty({n}, torch::kInt64);
  es.y_exp = torch::empty({n}, torch::kInt64);

  std::vector<uint8_t> bits(static_cast<size_t>((t * d + 7) / 8));
  for (int64_t i = 0; i < n; ++i) {
    int64_t id = 0;
    read_exact(in, &id, sizeof(id), "sample id");
    es.ids[i] = id;
    read_exact(in, es.p[i].data_ptr<float>(), static_cast<size_t>(t * d) * sizeof(float),
               "attribution block");
    read_exact(in, bits.data(), bits.size(), "mask block");
    es.m[i] = unpack_bits(bits, {t, d});
    read_exact(in, es.z_e[i].data_ptr<float>(), static_cast<size_t>(d_z) * sizeof(float),
               "embedding block");
    int32_t a = 0, b = 0;
    read_exact(in, &a, sizeof(a), "reference label");
    read_exact(in, &b, sizeof(b), "surrogate label");
    es.y_ref[i] = a;
    es.y_exp[i] = b;
  }
  require(in.peek() == std::char_traits<char>::eof(),
          "load_explanations: trailing bytes after the last record");
  es.validate();
  return es;
}

nlohmann::json landmark_report(const LandmarkSet& lm, const torch::Tensor& z_e_all,
                               const torch::Tensor& sample_ids, int64_t k) {
  require(k > 0, "landmark_report: k must be positive");
  const int64_t n_l = lm.L.defined() ? lm.L.size(0) : 0;
  require(static_cast<int64_t>(lm.retained.size()) == n_l,
          "landmark_report: retained ids disagree with the landmark count");

  nlohmann::json rep;
  rep["n_landmarks"] = n_l;
  rep["d_z"] = n_l > 0 ? lm.L.size(1) : 0;
  rep["n_eps"] = lm.n_eps;
  rep["rows"] = nlohmann::json::array();
  rep["occupancy"] = nlohmann::json::array();
  rep["retained"] = lm.retained;
  rep["neighbors"] = nlohmann::json::array();
  if (n_l == 0) return rep;

  require(lm.occupancy.defined() && lm.occupancy.size(0) == n_l,
          "landmark_report: occupancy length disagrees with the landmark count");
  require(z_e_all.dim() == 2 && z_e_all.size(1) == lm.L.size(1),
          "landmark_report: embeddings must be (N,d_z) matching the landmarks");
  require(sample_ids.dim() == 1 && sample_ids.size(0) == z_e_all.size(0),
          "landmark_report: sample ids must align with the embeddings");

  auto l_rows = lm.L.detach().to(torch::kFloat32).contiguous();
  auto ids = sample_ids.to(torch::kInt64).contiguous();
  for (int64_t i = 0; i < n_l; ++i) {
    std::vector<float> row(l_rows[i].data_ptr<float>(), l_rows[i].data_ptr<float>() + l_rows.size(1));
    rep["rows"].push_back(row);
    rep["occupancy"].push_back(lm.occupancy[i].item<int64_t>());
    auto q = nearest_samples(z_e_all, l_rows[i], k);
    nlohmann::json nb{{"landmark", lm.retained[static_cast<size_t>(i)]},
                      {"samples", nlohmann::json::array()},
                      {"sims", q.sims}};
    for (int64_t j : q.ids) nb["samples"].push_back(ids[j].item<int64_t>());
    rep["neighbors"].push_back(std::move(nb));
  }
  return rep;
}

void save_landmark_report(const nlohmann::json& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), "save_landmark_report: cannot open " + path.string());
  out << report.dump(2) << "\n";
  require(out.good(), "save_landmark_report: write failed for " + path.string());
}

nlohmann::json load_landmark_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "load_landmark_report: cannot open " + path.string());
  nlohmann::json rep;
  try {
    in >> rep;
  } catch (const nlohmann::json::exception& e) {
    fail("load_landmark_report: invalid JSON in " + path.string() + ": " + e.what());
  }
  for (const char* key : {"n_landmarks", "d_z", "n_eps", "rows", "occupancy", "retained", "neighbors"}) {
    require(rep.contains(key), std::string("load_landmark_report: missing key '") + key + "'");
  }
  return rep;
}

}  // namespace txai
