#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lth/calib.hpp"
#include "lth/matrix.hpp"

namespace lth {

struct Dataset {
  Matrix features;          // N x d, values in [0, 1]
  std::vector<int> labels;  // N, in [0, K)
  std::size_t num_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
};

struct SplitPair {
  Dataset part_a;
  Dataset part_b;
};

// Big-endian IDX files: images magic 0x00000803 (u8, dims N x rows x cols),
// labels magic 0x00000801 (u8, dims N). Pixels scaled to [0,1] by /255,
// images flattened row-major.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

// Unit-variance Gaussian clusters with class means `separation` apart on
// coordinate axes; features min-max rescaled to [0,1] globally.
Dataset synthetic_blobs(std::size_t classes, std::size_t per_class_n,
                        std::size_t dim, double separation,
                        std::uint64_t seed);

// Within each class: seeded shuffle, first half (extra element included)
// to part_a, rest to part_b.
SplitPair split_half_by_class(const Dataset& ds, std::uint64_t seed);

// Per-epoch shuffle keyed by (seed, epoch); final short batch emitted.
std::vector<Batch> batch_iter(const Dataset& ds, std::size_t batch_size,
                              std::uint64_t seed, std::size_t epoch);

}  // namespace lth
