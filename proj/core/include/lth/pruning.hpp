#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>

#include "lth/network.hpp"

namespace lth {

enum class PruneMode { Local, Global };
enum class ReinitMode { Rewind, Random };

std::string to_string(PruneMode mode);
std::string to_string(ReinitMode mode);

struct PruneConfig {
  PruneMode mode = PruneMode::Local;
  double per_iter_ratio = 0.20;
  double last_layer_ratio = 0.10;            // local mode
  std::set<std::size_t> protected_layers;    // global mode
  std::size_t iterations = 1;
  ReinitMode reinit = ReinitMode::Rewind;

  void validate() const;
};

struct TicketRecord {
  std::size_t iteration = 0;
  Mask mask;
  double remaining_fraction = 1.0;
  std::string source_run;
};

// Per layer, zero the smallest-|w| fraction of surviving weights;
// floor(ratio * surviving) pruned. Ties broken by (layer, row-major
// position), lower first. The final weight layer uses last_layer_ratio.
Mask prune_local(const ParamSet& params, const Mask& mask, double ratio,
                 double last_layer_ratio);

// Pool surviving weights of unprotected layers and prune the smallest-|w|
// fraction of the pool; protected layers are untouched.
Mask prune_global(const ParamSet& params, const Mask& mask, double ratio,
                  const std::set<std::size_t>& protected_layers);

Mask prune(const ParamSet& params, const Mask& mask, const PruneConfig& cfg);

// weights := init_snapshot (.) mask, biases := snapshot; the snapshot
// itself carries over unchanged.
ParamSet rewind(const ParamSet& params, const Mask& mask);

// Fresh init_network draw at the given seed, masked. Control arm.
ParamSet random_reinit(const NetworkSpec& spec, const Mask& mask,
                       std::uint64_t seed);

// Fraction of weights surviving; biases excluded.
double sparsity(const Mask& mask);

// Flat binary format: magic "LTHM", u32 version, u32 layer count,
// per-layer u32 rows / u32 cols, then packed bits per layer (row-major,
// LSB first). Little-endian integers.
void save_mask(const Mask& mask, const std::filesystem::path& path);
Mask load_mask(const std::filesystem::path& path);

// Companion format for parameters ("LTHP"): current values followed by
// the init snapshot, doubles little-endian.
void save_params(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_params(const std::filesystem::path& path);

}  // namespace lth
