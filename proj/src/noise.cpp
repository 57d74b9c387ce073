#include "ekisde/noise.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ekisde {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& lo, std::uint32_t& hi) {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  lo = static_cast<std::uint32_t>(product);
  hi = static_cast<std::uint32_t>(product >> 32);
}

inline std::array<std::uint32_t, 2> split_seed(std::uint64_t seed) {
  return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

} // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kPhiloxW0;
      key[1] += kPhiloxW1;
    }
    std::uint32_t lo0, hi0, lo1, hi1;
    mulhilo(kPhiloxM0, ctr[0], lo0, hi0);
    mulhilo(kPhiloxM1, ctr[2], lo1, hi1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

std::array<double, 2> box_muller(const std::array<std::uint32_t, 4>& w) {
  constexpr double kTwoPow53 = 9007199254740992.0;
  const std::uint64_t a = (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
  const std::uint64_t b = (static_cast<std::uint64_t>(w[2]) << 32) | w[3];
  const double u1 = (static_cast<double>(a >> 11) + 1.0) / kTwoPow53; // (0, 1]
  const double u2 = static_cast<double>(b >> 11) / kTwoPow53;         // [0, 1)
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(angle), r * std::sin(angle)};
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

NormalStream::NormalStream(std::uint64_t seed, std::uint32_t stream, StreamDomain domain)
    : key_(split_seed(seed)), stream_(stream), domain_(static_cast<std::uint32_t>(domain)) {}

double NormalStream::operator()() {
  if (cached_ == 0) {
    // Two Philox blocks -> four normals.
    for (int half = 0; half < 2; ++half) {
      const std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(block_),
                                             static_cast<std::uint32_t>(block_ >> 32), stream_,
                                             domain_ | 0x80000000u};
      ++block_;
      const auto z = box_muller(philox4x32(ctr, key_));
      cache_[2 * half] = z[0];
      cache_[2 * half + 1] = z[1];
    }
    cached_ = 4;
  }
  return cache_[4 - cached_--];
}

void NormalStream::fill(std::span<double> out) {
  for (double& v : out) v = (*this)();
}

NoiseLattice::NoiseLattice(std::uint64_t seed, double horizon, int levels, int particles, int dim,
                           bool zero)
    : seed_(seed), horizon_(horizon), levels_(levels), particles_(particles), dim_(dim), zero_(zero) {
  if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
  if (levels < 0 || levels > kMaxLatticeLevel)
    throw std::invalid_argument("lattice level must lie in [0, 26]");
  if (particles < 1 || dim < 1) throw std::invalid_argument("lattice needs particles and dimension");
}

NoiseLattice NoiseLattice::build(std::uint64_t seed, double horizon, int levels, int particles,
                                 int dim) {
  NoiseLattice lat(seed, horizon, levels, particles, dim, false);
  const std::size_t steps = lat.finest_steps();
  const double scale = std::sqrt(lat.finest_step());
  const auto key = split_seed(seed);
  const int blocks = (dim + 1) / 2;
  lat.finest_.reserve(particles);
  lat.path_.reserve(particles);
  for (int j = 0; j < particles; ++j) {
    RowMatrix inc(static_cast<Eigen::Index>(steps), dim);
    for (std::size_t n = 0; n < steps; ++n) {
      for (int b = 0; b < blocks; ++b) {
        const std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(n),
                                               static_cast<std::uint32_t>(b),
                                               static_cast<std::uint32_t>(j),
                                               static_cast<std::uint32_t>(StreamDomain::lattice)};
        const auto z = box_muller(philox4x32(ctr, key));
        inc(static_cast<Eigen::Index>(n), 2 * b) = scale * z[0];
        if (2 * b + 1 < dim) inc(static_cast<Eigen::Index>(n), 2 * b + 1) = scale * z[1];
      }
    }
    RowMatrix path(static_cast<Eigen::Index>(steps) + 1, dim);
    path.row(0).setZero();
    for (std::size_t n = 0; n < steps; ++n) {
      const auto i = static_cast<Eigen::Index>(n);
      path.row(i + 1) = path.row(i) + inc.row(i);
    }
    lat.finest_.push_back(std::move(inc));
    lat.path_.push_back(std::move(path));
  }
  return lat;
}

NoiseLattice NoiseLattice::zeros(double horizon, int levels, int particles, int dim) {
  NoiseLattice lat(0, horizon, levels, particles, dim, true);
  const auto steps = static_cast<Eigen::Index>(lat.finest_steps());
  lat.finest_.assign(particles, RowMatrix::Zero(steps, dim));
  lat.path_.assign(particles, RowMatrix::Zero(steps + 1, dim));
  return lat;
}

const RowMatrix& NoiseLattice::finest(int particle) const {
  if (particle < 0 || particle >= particles_) throw std::out_of_range("particle index");
  return finest_[particle];
}

RowMatrix NoiseLattice::increments_at_level(int level, int particle) const {
  if (level < 0 || level > levels_)
    throw std::invalid_argument("requested level exceeds the lattice's finest level");
  const RowMatrix& fine = finest(particle);
  const Eigen::Index coarse_steps = Eigen::Index{1} << level;
  const Eigen::Index block = Eigen::Index{1} << (levels_ - level);
  if (block == 1) return fine;
  RowMatrix out = RowMatrix::Zero(coarse_steps, dim_);
  for (Eigen::Index n = 0; n < coarse_steps; ++n)
    for (Eigen::Index i = 0; i < block; ++i) out.row(n) += fine.row(n * block + i);
  return out;
}

std::vector<RowMatrix> NoiseLattice::increments_at_level(int level) const {
  std::vector<RowMatrix> out;
  out.reserve(particles_);
  for (int j = 0; j < particles_; ++j) out.push_back(increments_at_level(level, j));
  return out;
}

Eigen::Ref<const Eigen::RowVectorXd> NoiseLattice::path_at_node(int particle, std::size_t node) const {
  if (particle < 0 || particle >= particles_) throw std::out_of_range("particle index");
  if (node > finest_steps()) throw std::out_of_range("node beyond the horizon");
  return path_[particle].row(static_cast<Eigen::Index>(node));
}

std::size_t NoiseLattice::node_of(double t) const {
  const double k = t / finest_step();
  const double rounded = std::round(k);
  if (!(t >= 0.0) || rounded > static_cast<double>(finest_steps()) ||
      std::abs(k - rounded) > 1e-9 * std::max(1.0, rounded))
    throw std::invalid_argument("time is not a node of the finest lattice grid");
  return static_cast<std::size_t>(rounded);
}

Vector NoiseLattice::path_value(int particle, double t) const {
  return path_at_node(particle, node_of(t)).transpose();
}

} // namespace ekisde
