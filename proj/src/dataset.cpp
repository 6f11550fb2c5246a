#include "timex/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "timex/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

namespace txai {

namespace {

constexpr char kMagic[] = "TIMEX-DATASET v1";

char split_char(Split s) {
  switch (s) {
    case Split::kTrain: return 't';
    case Split::kVal: return 'v';
    case Split::kTest: return 's';
    case Split::kNone: return '-';
  }
  fail("bad split value");
}

Split split_from_char(char c) {
  switch (c) {
    case 't': return Split::kTrain;
    case 'v': return Split::kVal;
    case 's': return Split::kTest;
    case '-': return Split::kNone;
    default: fail(std::string("dataset archive: bad split character '") + c + "'");
  }
}

}  // namespace

std::ostream& operator<<(std::ostream& os, Split s) {
  return os << split_char(s);
}

std::vector<int64_t> LabeledDataset::indices_of(Split s) const {
  std::vector<int64_t> out;
  for (int64_t i = 0; i < static_cast<int64_t>(split.size()); ++i) {
    if (split[i] == s) out.push_back(i);
  }
  return out;
}

torch::Tensor LabeledDataset::index_tensor_of(Split s) const {
  auto idx = indices_of(s);
  return torch::tensor(idx, torch::kInt64);
}

LabeledDataset LabeledDataset::subset(Split s) const {
  auto idx = index_tensor_of(s);
  LabeledDataset out;
  out.meta = meta;
  out.meta.n = idx.numel();
  out.X = X.index_select(0, idx).contiguous();
  out.y = y.index_select(0, idx).contiguous();
  out.has_q = has_q;
  if (has_q) out.Q = Q.index_select(0, idx).contiguous();
  out.split.assign(out.meta.n, Split::kNone);
  return out;
}

void LabeledDataset::validate() const {
  require(X.dim() == 3, "dataset: X must be (N,T,d)");
  require(X.size(0) == meta.n && X.size(1) == meta.t && X.size(2) == meta.d,
          "dataset: X shape disagrees with meta");
  require(X.dtype() == torch::kFloat32, "dataset: X must be float32");
  require(torch::isfinite(X).all().item<bool>(), "dataset: X has non-finite entries");
  require(y.dim() == 1 && y.size(0) == meta.n, "dataset: y must be (N,)");
  require(y.dtype() == torch::kInt64, "dataset: y must be int64");
  if (meta.n > 0) {
    require(y.min().item<int64_t>() >= 0 && y.max().item<int64_t>() < meta.c,
            "dataset: label out of range");
  }
  if (has_q) {
    require(Q.sizes() == X.sizes(), "dataset: Q shape mismatch");
    require(Q.dtype() == torch::kFloat32, "dataset: Q must be float32");
    require(((Q == 0) | (Q == 1)).all().item<bool>(), "dataset: Q must be binary");
  }
  require(static_cast<int64_t>(split.size()) == meta.n,
          "dataset: split assignment size mismatch");
  auto train_idx = indices_of(Split::kTrain);
  if (!train_idx.empty()) {
    std::vector<bool> seen(meta.c, false);
    auto ya = y.accessor<int64_t, 1>();
    for (int64_t i : train_idx) seen[ya[i]] = true;
    for (int64_t c = 0; c < meta.c; ++c) {
      require(seen[c], "dataset: class " + std::to_string(c) + " missing from training split");
    }
  }
}

std::vector<Split> stratified_split(const torch::Tensor& y, const SplitSpec& spec,
                                    Rng& rng) {
  require(spec.train_n >= 0 && spec.val_n >= 0 && spec.test_n >= 0,
          "split: negative count");
  const int64_t n = y.size(0);
  const int64_t want = spec.train_n + spec.val_n + spec.test_n;
  require(want <= n, "split: requested counts exceed dataset size");

  auto ya = y.accessor<int64_t, 1>();
  std::map<int64_t, std::vector<int64_t>> by_class;
  for (int64_t i = 0; i < n; ++i) by_class[ya[i]].push_back(i);
  for (auto& [cls, idx] : by_class) {
    for (int64_t i = static_cast<int64_t>(idx.size()) - 1; i > 0; --i) {
      std::swap(idx[i], idx[rng.uniform_int(0, i)]);
    }
  }

  // Apportion each split size across classes by largest remainder, honoring
  // the capacity left after earlier splits.
  std::map<int64_t, int64_t> capacity;
  for (auto& [cls, idx] : by_class) capacity[cls] = static_cast<int64_t>(idx.size());
  std::map<int64_t, int64_t> cursor;  // next unused position per class

  std::vector<Split> assign(n, Split::kNone);
  const Split order[3] = {Split::kTrain, Split::kVal, Split::kTest};
  const int64_t sizes[3] = {spec.train_n, spec.val_n, spec.test_n};
  for (int s = 0; s < 3; ++s) {
    int64_t remaining_total = 0;
    for (auto& [cls, cap] : capacity) remaining_total += cap;
    require(sizes[s] <= remaining_total, "split: counts exceed remaining capacity");
    if (sizes[s] == 0) continue;

    std::vector<std::pair<int64_t, double>> frac;  // class -> fractional part
    std::map<int64_t, int64_t> take;
    int64_t assigned = 0;
    for (auto& [cls, cap] : capacity) {
      double quota = static_cast<double>(sizes[s]) * static_cast<double>(cap) /
                     static_cast<double>(remaining_total);
      int64_t base = std::min(static_cast<int64_t>(quota), cap);
      take[cls] = base;
      assigned += base;
      frac.emplace_back(cls, quota - static_cast<double>(base));
    }
    std::stable_sort(frac.begin(), frac.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (auto& [cls, f] : frac) {
      if (assigned >= sizes[s]) break;
      if (take[cls] < capacity[cls]) {
        ++take[cls];
        ++assigned;
      }
    }
    // If fractional rounding could not place everything (tight capacities),
    // fill greedily from any class with room.
    for (auto& [cls, cap] : capacity) {
      while (assigned < sizes[s] && take[cls] < cap) {
        ++take[cls];
        ++assigned;
      }
    }
    require(assigned == sizes[s], "split: internal apportionment failure");

    for (auto& [cls, cnt] : take) {
      auto& idx = by_class[cls];
      for (int64_t k = 0; k < cnt; ++k) assign[idx[cursor[cls] + k]] = order[s];
      cursor[cls] += cnt;
      capacity[cls] -= cnt;
    }
  }
  return assign;
}

LabeledDataset split_dataset(const LabeledDataset& ds, const SplitSpec& spec,
                             uint64_t seed) {
  LabeledDataset out = ds;
  Rng rng(mix64(seed ^ 0x5B17A9D2C4E6F801ULL));
  out.split = stratified_split(ds.y, spec, rng);
  out.validate();
  return out;
}

void save_dataset(const LabeledDataset& ds, const std::string& path) {
  ds.validate();
  require(ds.meta.name.find_first_of(" \t\n\r") == std::string::npos,
          "save_dataset: name must not contain whitespace");
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "save_dataset: cannot open " + path);

  std::ostringstream head;
  head << kMagic << "\n";
  head << "name " << ds.meta.name << "\n";
  head << "n " << ds.meta.n << "\n";
  head << "t " << ds.meta.t << "\n";
  head << "d " << ds.meta.d << "\n";
  head << "c " << ds.meta.c << "\n";
  head << "seed " << ds.meta.seed << "\n";
  head << "has_q " << (ds.has_q ? 1 : 0) << "\n";
  head << "split ";
  for (Split s : ds.split) head << split_char(s);
  head << "\nend\n";
  f << head.str();

  auto x = ds.X.contiguous();
  f.write(reinterpret_cast<const char*>(x.data_ptr<float>()),
          static_cast<std::streamsize>(sizeof(float) * x.numel()));
  auto ya = ds.y.accessor<int64_t, 1>();
  std::vector<uint8_t> ybytes(ds.meta.n);
  for (int64_t i = 0; i < ds.meta.n; ++i) ybytes[i] = static_cast<uint8_t>(ya[i]);
  f.write(reinterpret_cast<const char*>(ybytes.data()),
          static_cast<std::streamsize>(ybytes.size()));
  if (ds.has_q) {
    auto q = ds.Q.contiguous();
    const float* qp = q.data_ptr<float>();
    std::vector<uint8_t> qbytes(q.numel());
    for (int64_t i = 0; i < q.numel(); ++i) qbytes[i] = qp[i] != 0.0f ? 1 : 0;
    f.write(reinterpret_cast<const char*>(qbytes.data()),
            static_cast<std::streamsize>(qbytes.size()));
  }
  require(f.good(), "save_dataset: write failed for " + path);
}

LabeledDataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "load_dataset: cannot open " + path);

  std::string line;
  require(static_cast<bool>(std::getline(f, line)) && line == kMagic,
          "load_dataset: bad magic line in " + path);

  LabeledDataset ds;
  std::string split_str;
  bool saw_end = false;
  std::map<std::string, bool> seen;
  while (std::getline(f, line)) {
    if (line == "end") {
      saw_end = true;
      break;
    }
    auto sp = line.find(' ');
    require(sp != std::string::npos, "load_dataset: malformed header line: " + line);
    std::string key = line.substr(0, sp);
    std::string val = line.substr(sp + 1);
    seen[key] = true;
    try {
      if (key == "name") ds.meta.name = val;
      else if (key == "n") ds.meta.n = std::stoll(val);
      else if (key == "t") ds.meta.t = std::stoll(val);
      else if (key == "d") ds.meta.d = std::stoll(val);
      else if (key == "c") ds.meta.c = std::stoll(val);
      else if (key == "seed") ds.meta.seed = std::stoull(val);
      else if (key == "has_q") ds.has_q = val == "1";
      else if (key == "split") split_str = val;
      else fail("load_dataset: unknown header key '" + key + "'");
    } catch (const std::invalid_argument&) {
      fail("load_dataset: unparsable value for key '" + key + "'");
    } catch (const std::out_of_range&) {
      fail("load_dataset: out-of-range value for key '" + key + "'");
    }
  }
  require(saw_end, "load_dataset: truncated header (no 'end' line)");
  for (const char* key : {"name", "n", "t", "d", "c", "seed", "has_q", "split"}) {
    require(seen.count(key) > 0, std::string("load_dataset: missing header key '") + key + "'");
  }
  require(ds.meta.n >= 0 && ds.meta.t > 0 && ds.meta.d > 0 && ds.meta.c > 0,
          "load_dataset: non-positive dimensions in header");
  require(static_cast<int64_t>(split_str.size()) == ds.meta.n,
          "load_dataset: split table length disagrees with n");
  ds.split.reserve(ds.meta.n);
  for (char c : split_str) ds.split.push_back(split_from_char(c));

  const int64_t numel = ds.meta.n * ds.meta.t * ds.meta.d;
  const std::streamsize x_bytes = static_cast<std::streamsize>(sizeof(float)) * numel;
  const std::streamsize expect =
      x_bytes + ds.meta.n + (ds.has_q ? numel : 0);
  auto payload_start = f.tellg();
  f.seekg(0, std::ios::end);
  const std::streamsize have = f.tellg() - payload_start;
  require(have == expect,
          "load_dataset: payload size mismatch (header promises " +
              std::to_string(expect) + " bytes, file has " + std::to_string(have) + ")");
  f.seekg(payload_start);

  ds.X = torch::empty({ds.meta.n, ds.meta.t, ds.meta.d}, torch::kFloat32);
  f.read(reinterpret_cast<char*>(ds.X.data_ptr<float>()), x_bytes);
  std::vector<uint8_t> ybytes(ds.meta.n);
  f.read(reinterpret_cast<char*>(ybytes.data()), ds.meta.n);
  ds.y = torch::empty({ds.meta.n}, torch::kInt64);
  auto ya = ds.y.accessor<int64_t, 1>();
  for (int64_t i = 0; i < ds.meta.n; ++i) ya[i] = ybytes[i];
  if (ds.has_q) {
    std::vector<uint8_t> qbytes(numel);
    f.read(reinterpret_cast<char*>(qbytes.data()), numel);
    ds.Q = torch::empty({ds.meta.n, ds.meta.t, ds.meta.d}, torch::kFloat32);
    float* qp = ds.Q.data_ptr<float>();
    for (int64_t i = 0; i < numel; ++i) {
      require(qbytes[i] <= 1, "load_dataset: Q byte out of {0,1}");
      qp[i] = static_cast<float>(qbytes[i]);
    }
  }
  require(f.good(), "load_dataset: read failed for " + path);
  ds.validate();
  return ds;
}

}  // namespace txai
