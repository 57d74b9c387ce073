#pragma once

#include "ekisde/linalg.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace ekisde {

/// Philox4x32-10 block function (Salmon et al., "Parallel random numbers: as
/// easy as 1, 2, 3", SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Counter values that separate independent uses of one seed.
enum class StreamDomain : std::uint32_t {
  lattice = 0,
  initial_ensemble = 1,
  monte_carlo = 2,
  test = 3,
};

/// Sequential standard-normal stream on top of Philox, keyed by
/// (seed, stream id, domain). Box-Muller keeps the output platform independent.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint32_t stream, StreamDomain domain);

  double operator()();
  void fill(std::span<double> out);

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint32_t stream_;
  std::uint32_t domain_;
  std::uint64_t block_ = 0;
  std::array<double, 4> cache_{};
  int cached_ = 0;
};

/// Converts 4 Philox words into 2 standard normals (Box-Muller on two 53-bit uniforms).
std::array<double, 2> box_muller(const std::array<std::uint32_t, 4>& words);

/// SplitMix64 finalizer, used to derive per-replica seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

inline constexpr int kMaxLatticeLevel = 26;

/// Brownian increments on the finest dyadic grid of [0, T] for J independent
/// K-dimensional Brownian motions. Coarser levels are block sums, so every
/// level sees the same underlying paths. Immutable after construction.
class NoiseLattice {
 public:
  /// Increments for particle j at step n come from Philox with
  /// key = seed, counter = (n, block, j, domain).
  static NoiseLattice build(std::uint64_t seed, double horizon, int levels, int particles, int dim);
  /// Zero increments (deterministic flow), same geometry.
  static NoiseLattice zeros(double horizon, int levels, int particles, int dim);

  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] double horizon() const { return horizon_; }
  [[nodiscard]] int finest_level() const { return levels_; }
  [[nodiscard]] int particles() const { return particles_; }
  [[nodiscard]] int dim() const { return dim_; }
  [[nodiscard]] std::size_t finest_steps() const { return std::size_t{1} << levels_; }
  [[nodiscard]] double finest_step() const { return horizon_ / static_cast<double>(finest_steps()); }
  [[nodiscard]] bool is_zero() const { return zero_; }

  /// Finest increments of one particle: 2^L x K, rows are N(0, h_min I).
  [[nodiscard]] const RowMatrix& finest(int particle) const;
  /// Level-l increments for one particle: 2^l x K block sums of the finest rows.
  [[nodiscard]] RowMatrix increments_at_level(int level, int particle) const;
  /// All particles at level l.
  [[nodiscard]] std::vector<RowMatrix> increments_at_level(int level) const;

  /// W^(j)(k h_min), k = 0..2^L (prefix sums of the finest increments).
  [[nodiscard]] Eigen::Ref<const Eigen::RowVectorXd> path_at_node(int particle, std::size_t node) const;
  /// W^(j)(t); t must be a multiple of h_min.
  [[nodiscard]] Vector path_value(int particle, double t) const;
  /// Node index of a time on the finest grid; throws if t is off-grid or outside [0, T].
  [[nodiscard]] std::size_t node_of(double t) const;

 private:
  NoiseLattice(std::uint64_t seed, double horizon, int levels, int particles, int dim, bool zero);

  std::uint64_t seed_;
  double horizon_;
  int levels_;
  int particles_;
  int dim_;
  bool zero_;
  std::vector<RowMatrix> finest_; // per particle, 2^L x K
  std::vector<RowMatrix> path_;   // per particle, (2^L + 1) x K
};

inline NoiseLattice build_lattice(std::uint64_t seed, double horizon, int levels, int particles,
                                  int dim) {
  return NoiseLattice::build(seed, horizon, levels, particles, dim);
}

} // namespace ekisde
