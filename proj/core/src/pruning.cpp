#include "lth/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "lth/errors.hpp"

namespace lth {

std::string to_string(PruneMode mode) {
  return mode == PruneMode::Local ? "local" : "global";
}

std::string to_string(ReinitMode mode) {
  return mode == ReinitMode::Rewind ? "rewind" : "random";
}

void PruneConfig::validate() const {
  if (per_iter_ratio <= 0.0 || per_iter_ratio >= 1.0) {
    throw ConfigError("prune: per_iter_ratio must be in (0,1)");
  }
  if (last_layer_ratio <= 0.0 || last_layer_ratio >= 1.0) {
    throw ConfigError("prune: last_layer_ratio must be in (0,1)");
  }
  if (iterations < 1) throw ConfigError("prune: iterations must be >= 1");
}

namespace {

struct Candidate {
  double magnitude;
  std::size_t layer;
  std::size_t pos;  // row-major within layer

  bool operator<(const Candidate& o) const {
    if (magnitude != o.magnitude) return magnitude < o.magnitude;
    if (layer != o.layer) return layer < o.layer;
    return pos < o.pos;
  }
};

void check_mask(const ParamSet& params, const Mask& mask) {
  if (!mask.shape_matches(params.spec())) {
    throw DimensionError("prune: mask shape mismatch");
  }
}

}  // namespace

Mask prune_local(const ParamSet& params, const Mask& mask, double ratio,
                 double last_layer_ratio) {
  if (ratio <= 0.0 || ratio >= 1.0 || last_layer_ratio <= 0.0 ||
      last_layer_ratio >= 1.0) {
    throw ConfigError("prune_local: ratios must be in (0,1)");
  }
  check_mask(params, mask);
  Mask out = mask;
  const std::size_t num_layers = mask.layers.size();
  for (std::size_t l = 0; l < num_layers; ++l) {
    double r = (l + 1 == num_layers) ? last_layer_ratio : ratio;
    const Matrix& w = params.layers()[l].weights;
    std::vector<Candidate> surviving;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (mask.layers[l][i] != 0.0) {
        surviving.push_back({std::abs(w[i]), l, i});
      }
    }
    if (surviving.empty()) {
      throw PruneError("prune_local: layer " + std::to_string(l) +
                       " has no surviving weights");
    }
    std::size_t n_prune = static_cast<std::size_t>(
        std::floor(r * static_cast<double>(surviving.size())));
    std::sort(surviving.begin(), surviving.end());
    for (std::size_t i = 0; i < n_prune; ++i) {
      out.layers[l][surviving[i].pos] = 0.0;
    }
  }
  return out;
}

Mask prune_global(const ParamSet& params, const Mask& mask, double ratio,
                  const std::set<std::size_t>& protected_layers) {
  if (ratio <= 0.0 || ratio >= 1.0) {
    throw ConfigError("prune_global: ratio must be in (0,1)");
  }
  check_mask(params, mask);
  const std::size_t num_layers = mask.layers.size();
  std::vector<Candidate> pool;
  bool any_unprotected = false;
  for (std::size_t l = 0; l < num_layers; ++l) {
    if (protected_layers.contains(l)) continue;
    any_unprotected = true;
    const Matrix& w = params.layers()[l].weights;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (mask.layers[l][i] != 0.0) {
        pool.push_back({std::abs(w[i]), l, i});
      }
    }
  }
  if (!any_unprotected) {
    throw ConfigError("prune_global: all layers protected");
  }
  if (pool.empty()) {
    throw PruneError("prune_global: no surviving weights to prune");
  }
  std::size_t n_prune = static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(pool.size())));
  std::sort(pool.begin(), pool.end());
  Mask out = mask;
  for (std::size_t i = 0; i < n_prune; ++i) {
    out.layers[pool[i].layer][pool[i].pos] = 0.0;
  }
  return out;
}

Mask prune(const ParamSet& params, const Mask& mask, const PruneConfig& cfg) {
  if (cfg.mode == PruneMode::Local) {
    return prune_local(params, mask, cfg.per_iter_ratio, cfg.last_layer_ratio);
  }
  return prune_global(params, mask, cfg.per_iter_ratio, cfg.protected_layers);
}

ParamSet rewind(const ParamSet& params, const Mask& mask) {
  check_mask(params, mask);
  std::vector<LayerParams> layers = params.init_snapshot();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Matrix& m = mask.layers[l];
    Matrix& w = layers[l].weights;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (m[i] == 0.0) w[i] = 0.0;
    }
  }
  return ParamSet(params.spec(), std::move(layers), params.init_snapshot());
}

ParamSet random_reinit(const NetworkSpec& spec, const Mask& mask,
                       std::uint64_t seed) {
  NetworkSpec reseeded = spec;
  reseeded.seed = seed;
  ParamSet fresh = init_network(reseeded);
  if (!mask.shape_matches(spec)) {
    throw DimensionError("random_reinit: mask shape mismatch");
  }
  for (std::size_t l = 0; l < fresh.layers().size(); ++l) {
    const Matrix& m = mask.layers[l];
    Matrix& w = fresh.layers()[l].weights;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (m[i] == 0.0) w[i] = 0.0;
    }
  }
  return fresh;
}

double sparsity(const Mask& mask) {
  std::size_t total = mask.total_weights();
  if (total == 0) throw DataError("sparsity: empty mask");
  return static_cast<double>(mask.surviving_weights()) /
         static_cast<double>(total);
}

namespace {

constexpr char kMaskMagic[4] = {'L', 'T', 'H', 'M'};
constexpr char kParamMagic[4] = {'L', 'T', 'H', 'P'};
constexpr std::uint32_t kFormatVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32(std::ifstream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw IoError("truncated file while reading u32");
  return static_cast<std::uint32_t>(buf[0]) |
         (static_cast<std::uint32_t>(buf[1]) << 8) |
         (static_cast<std::uint32_t>(buf[2]) << 16) |
         (static_cast<std::uint32_t>(buf[3]) << 24);
}

void write_doubles(std::ofstream& out, const double* vals, std::size_t n) {
  // Little-endian host assumed; asserted at build time below.
  static_assert(std::endian::native == std::endian::little);
  out.write(reinterpret_cast<const char*>(vals),
            static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::ifstream& in, double* vals, std::size_t n) {
  in.read(reinterpret_cast<char*>(vals),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw IoError("truncated file while reading doubles");
}

}  // namespace

void save_mask(const Mask& mask, const std::filesystem::path& path) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out.write(kMaskMagic, 4);
    write_u32(out, kFormatVersion);
    write_u32(out, static_cast<std::uint32_t>(mask.layers.size()));
    for (const Matrix& m : mask.layers) {
      write_u32(out, static_cast<std::uint32_t>(m.rows()));
      write_u32(out, static_cast<std::uint32_t>(m.cols()));
    }
    for (const Matrix& m : mask.layers) {
      std::vector<unsigned char> packed((m.size() + 7) / 8, 0);
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] != 0.0) packed[i / 8] |= static_cast<unsigned char>(1u << (i % 8));
      }
      out.write(reinterpret_cast<const char*>(packed.data()),
                static_cast<std::streamsize>(packed.size()));
    }
    if (!out) throw IoError("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Mask load_mask(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMaskMagic, 4) != 0) {
    throw FormatError("bad mask magic: " + path.string());
  }
  std::uint32_t version = read_u32(in);
  if (version != kFormatVersion) {
    throw FormatError("unsupported mask version");
  }
  std::uint32_t num_layers = read_u32(in);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
  for (std::uint32_t l = 0; l < num_layers; ++l) {
    std::uint32_t rows = read_u32(in);
    std::uint32_t cols = read_u32(in);
    shapes.emplace_back(rows, cols);
  }
  Mask mask;
  for (auto [rows, cols] : shapes) {
    Matrix m(rows, cols);
    std::vector<unsigned char> packed((m.size() + 7) / 8);
    in.read(reinterpret_cast<char*>(packed.data()),
            static_cast<std::streamsize>(packed.size()));
    if (!in) throw IoError("truncated mask file: " + path.string());
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = (packed[i / 8] >> (i % 8)) & 1u ? 1.0 : 0.0;
    }
    mask.layers.push_back(std::move(m));
  }
  return mask;
}

void save_params(const ParamSet& params, const std::filesystem::path& path) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out.write(kParamMagic, 4);
    write_u32(out, kFormatVersion);
    const auto& dims = params.spec().layer_dims;
    write_u32(out, static_cast<std::uint32_t>(dims.size()));
    for (std::size_t d : dims) write_u32(out, static_cast<std::uint32_t>(d));
    // dropout rate and seed round-trip so a reloaded net behaves the same
    double rate = params.spec().dropout_rate;
    write_doubles(out, &rate, 1);
    std::uint64_t seed = params.spec().seed;
    write_u32(out, static_cast<std::uint32_t>(seed));
    write_u32(out, static_cast<std::uint32_t>(seed >> 32));
    for (const auto* block : {&params.layers(), &params.init_snapshot()}) {
      for (const LayerParams& lp : *block) {
        write_doubles(out, lp.weights.data(), lp.weights.size());
        write_doubles(out, lp.biases.data(), lp.biases.size());
      }
    }
    if (!out) throw IoError("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

ParamSet load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kParamMagic, 4) != 0) {
    throw FormatError("bad params magic: " + path.string());
  }
  if (read_u32(in) != kFormatVersion) {
    throw FormatError("unsupported params version");
  }
  std::uint32_t ndims = read_u32(in);
  NetworkSpec spec;
  for (std::uint32_t i = 0; i < ndims; ++i) spec.layer_dims.push_back(read_u32(in));
  read_doubles(in, &spec.dropout_rate, 1);
  std::uint32_t lo = read_u32(in), hi = read_u32(in);
  spec.seed = static_cast<std::uint64_t>(lo) | (static_cast<std::uint64_t>(hi) << 32);
  spec.validate();

  auto read_block = [&]() {
    std::vector<LayerParams> block;
    for (std::size_t l = 0; l + 1 < spec.layer_dims.size(); ++l) {
      LayerParams lp;
      lp.weights = Matrix(spec.layer_dims[l + 1], spec.layer_dims[l]);
      read_doubles(in, lp.weights.data(), lp.weights.size());
      lp.biases.assign(spec.layer_dims[l + 1], 0.0);
      read_doubles(in, lp.biases.data(), lp.biases.size());
      block.push_back(std::move(lp));
    }
    return block;
  };
  std::vector<LayerParams> layers = read_block();
  std::vector<LayerParams> snapshot = read_block();
  return ParamSet(spec, std::move(layers), std::move(snapshot));
}

}  // namespace lth
