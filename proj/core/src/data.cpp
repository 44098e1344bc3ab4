#include "lth/data.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>

#include "lth/errors.hpp"

namespace lth {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be_u32(std::ifstream& in, const std::string& file) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw IoError("truncated IDX file: " + file);
  return (static_cast<std::uint32_t>(buf[0]) << 24) |
         (static_cast<std::uint32_t>(buf[1]) << 16) |
         (static_cast<std::uint32_t>(buf[2]) << 8) |
         static_cast<std::uint32_t>(buf[3]);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open: " + images_path.string());
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot open: " + labels_path.string());

  if (read_be_u32(img, images_path.string()) != kImagesMagic) {
    throw FormatError("bad IDX images magic: " + images_path.string());
  }
  std::uint32_t n = read_be_u32(img, images_path.string());
  std::uint32_t rows = read_be_u32(img, images_path.string());
  std::uint32_t cols = read_be_u32(img, images_path.string());

  if (read_be_u32(lab, labels_path.string()) != kLabelsMagic) {
    throw FormatError("bad IDX labels magic: " + labels_path.string());
  }
  std::uint32_t n_labels = read_be_u32(lab, labels_path.string());
  if (n != n_labels) {
    throw DataError("IDX image/label count mismatch");
  }
  if (n == 0) throw DataError("IDX file has no samples");

  std::size_t d = static_cast<std::size_t>(rows) * cols;
  Dataset ds;
  ds.features = Matrix(n, d);
  ds.labels.resize(n);
  ds.name = images_path.stem().string();

  std::vector<unsigned char> pixel_buf(d);
  for (std::uint32_t i = 0; i < n; ++i) {
    img.read(reinterpret_cast<char*>(pixel_buf.data()),
             static_cast<std::streamsize>(d));
    if (!img) throw IoError("truncated IDX images: " + images_path.string());
    for (std::size_t j = 0; j < d; ++j) {
      ds.features(i, j) = static_cast<double>(pixel_buf[j]) / 255.0;
    }
  }
  std::vector<unsigned char> label_buf(n);
  lab.read(reinterpret_cast<char*>(label_buf.data()),
           static_cast<std::streamsize>(n));
  if (!lab) throw IoError("truncated IDX labels: " + labels_path.string());

  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<int>(label_buf[i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  if (ds.num_classes < 2) ds.num_classes = 2;
  return ds;
}

Dataset synthetic_blobs(std::size_t classes, std::size_t per_class_n,
                        std::size_t dim, double separation,
                        std::uint64_t seed) {
  if (classes < 2) throw ConfigError("blobs: need at least 2 classes");
  if (per_class_n < 1) throw ConfigError("blobs: per_class_n must be >= 1");
  if (dim < classes) {
    throw ConfigError("blobs: dim must be >= classes for axis placement");
  }
  RandomStream rng(seed, /*stream_id=*/0x0b10b5);
  std::size_t n = classes * per_class_n;
  Dataset ds;
  ds.features = Matrix(n, dim);
  ds.labels.resize(n);
  ds.num_classes = classes;
  ds.name = "blobs";

  std::size_t row = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t s = 0; s < per_class_n; ++s, ++row) {
      ds.labels[row] = static_cast<int>(c);
      for (std::size_t j = 0; j < dim; ++j) {
        double mean = j == c ? separation : 0.0;
        ds.features(row, j) = mean + rng.normal();
      }
    }
  }

  // Global min-max rescale preserves the cluster geometry up to an
  // affine map.
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < ds.features.size(); ++i) {
    lo = std::min(lo, ds.features[i]);
    hi = std::max(hi, ds.features[i]);
  }
  double range = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < ds.features.size(); ++i) {
    ds.features[i] = (ds.features[i] - lo) / range;
  }
  return ds;
}

SplitPair split_half_by_class(const Dataset& ds, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    if (by_class[c].size() < 2) {
      throw DataError("split: class " + std::to_string(c) +
                      " has fewer than 2 samples");
    }
  }

  std::vector<std::size_t> idx_a, idx_b;
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    RandomStream rng(seed, 0x5b117 + c);
    auto order = rng.permutation(by_class[c].size());
    std::size_t half = (by_class[c].size() + 1) / 2;  // extra goes to part_a
    for (std::size_t i = 0; i < order.size(); ++i) {
      (i < half ? idx_a : idx_b).push_back(by_class[c][order[i]]);
    }
  }
  std::sort(idx_a.begin(), idx_a.end());
  std::sort(idx_b.begin(), idx_b.end());

  auto take = [&](const std::vector<std::size_t>& idx, const char* suffix) {
    Dataset part;
    part.features = Matrix(idx.size(), ds.dim());
    part.labels.resize(idx.size());
    part.num_classes = ds.num_classes;
    part.name = ds.name + suffix;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < ds.dim(); ++j) {
        part.features(i, j) = ds.features(idx[i], j);
      }
      part.labels[i] = ds.labels[idx[i]];
    }
    return part;
  };
  return SplitPair{take(idx_a, "_a"), take(idx_b, "_b")};
}

std::vector<Batch> batch_iter(const Dataset& ds, std::size_t batch_size,
                              std::uint64_t seed, std::size_t epoch) {
  if (batch_size < 1) throw ConfigError("batch_iter: batch_size must be >= 1");
  RandomStream rng(seed, 0xba7c4 + epoch);
  auto order = rng.permutation(ds.size());

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    std::size_t count = std::min(batch_size, ds.size() - start);
    Batch b;
    b.num_classes = ds.num_classes;
    b.inputs = Matrix(count, ds.dim());
    b.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t src = order[start + i];
      for (std::size_t j = 0; j < ds.dim(); ++j) {
        b.inputs(i, j) = ds.features(src, j);
      }
      b.labels[i] = ds.labels[src];
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace lth
