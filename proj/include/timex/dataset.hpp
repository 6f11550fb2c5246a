#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "timex/rng.hpp"

namespace txai {

struct DatasetMeta {
  std::string name;
  int64_t n = 0;  // samples
  int64_t t = 0;  // timesteps
  int64_t d = 0;  // sensors
  int64_t c = 0;  // classes
  uint64_t seed = 0;
};

enum class Split : int8_t { kTrain = 0, kVal = 1, kTest = 2, kNone = 3 };

std::ostream& operator<<(std::ostream& os, Split s);

struct SplitSpec {
  int64_t train_n = 5000;
  int64_t val_n = 100;
  int64_t test_n = 1000;
};

// A labeled time-series dataset: signals X (N,T,d) float32, labels y (N,)
// int64 in [0,C), optional binary ground-truth saliency Q (N,T,d) float32
// in {0,1}, and a per-sample split assignment.
struct LabeledDataset {
  DatasetMeta meta;
  torch::Tensor X;
  torch::Tensor y;
  torch::Tensor Q;  // defined iff has_q
  bool has_q = false;
  std::vector<Split> split;  // size N; kNone when unsplit

  // Indices belonging to one split, in dataset order.
  std::vector<int64_t> indices_of(Split s) const;
  torch::Tensor index_tensor_of(Split s) const;

  // Materialized subset holding only the samples of one split.
  LabeledDataset subset(Split s) const;

  void validate() const;  // checks the type invariants, throws TimexError
};

// Class-stratified deterministic split assignment. Throws if the requested
// counts exceed N. Every class present in y appears in the training split
// (guaranteed whenever train_n >= number of classes).
std::vector<Split> stratified_split(const torch::Tensor& y, const SplitSpec& spec,
                                    Rng& rng);

// Applies a fresh stratified split to a copy of the dataset.
LabeledDataset split_dataset(const LabeledDataset& ds, const SplitSpec& spec,
                             uint64_t seed);

// Single-file archive: structured-text header, then raw little-endian
// float32 X in row-major (N,T,d) order, then one byte per label, then one
// byte per Q entry when present. Round-trips bit-identically.
void save_dataset(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_dataset(const std::string& path);

}  // namespace txai
