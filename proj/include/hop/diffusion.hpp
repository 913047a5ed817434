#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hop/grid.hpp"

namespace hop {

/// Linear-beta DDPM schedule. Timesteps are 1-based: i in [1, T].
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> beta, alpha, alpha_bar, weight;  // index i-1

  static NoiseSchedule linear(int steps = 1000, double beta_first = 1e-4, double beta_last = 0.02);

  double beta_at(int i) const { return beta[i - 1]; }
  double alpha_at(int i) const { return alpha[i - 1]; }
  /// ᾱ_i; ᾱ_0 = 1.
  double alpha_bar_at(int i) const { return i == 0 ? 1.0 : alpha_bar[i - 1]; }
  double weight_at(int i) const { return weight[i - 1]; }
};

/// Category label index into the bank vocabulary, or unconditional (-1).
struct Condition {
  int label = -1;
  static Condition unconditional() { return {}; }
  static Condition of(int label) { return {label}; }
  bool is_unconditional() const { return label < 0; }
  bool operator==(const Condition&) const = default;
};

/// x_i = sqrt(ᾱ_i) x0 + sqrt(1 - ᾱ_i) eps
VoxelGrid forward_noise(const NoiseSchedule& schedule, const VoxelGrid& x0, int i, const VoxelGrid& eps);

/// Fills a grid shaped like `like` with standard normal draws.
VoxelGrid gaussian_like(const VoxelGrid& like, std::mt19937_64& rng);

/// (x_i, i, c) -> x̂0
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual VoxelGrid predict(const VoxelGrid& x_i, int i, const Condition& c) const = 0;
};

struct Template {
  VoxelGrid grid;
  double weight = 1.0;
  int label = 0;
};

class TemplateBank {
 public:
  std::vector<std::string> labels;
  std::vector<Template> templates;
  double sigma0 = 0.0;

  int label_index(std::string_view name) const;  ///< throws UnknownCondition
  Condition condition(std::string_view name) const { return Condition::of(label_index(name)); }
  /// Templates visible under `c` with their effective mixture weights.
  std::vector<std::pair<std::size_t, double>> components(const Condition& c) const;
  /// Throws InvalidConfig on violated invariants.
  void validate() const;

  const VoxelGrid& read(std::size_t k) const {
    if (observer_) observer_(k);
    return templates[k].grid;
  }
  /// Called with the template index on every read (instrumentation).
  void set_read_observer(std::function<void(std::size_t)> f) { observer_ = std::move(f); }

  /// manifest.json plus one HOPG file per template.
  void save(const std::filesystem::path& dir) const;
  static TemplateBank load(const std::filesystem::path& manifest);

 private:
  std::function<void(std::size_t)> observer_;
};

/// Exact posterior mean of x0 under the template mixture with isotropic
/// component noise sigma0. Unconditional queries mix every label equally.
class MixtureDenoiser final : public Denoiser {
 public:
  MixtureDenoiser(const TemplateBank& bank, const NoiseSchedule& schedule) : bank_(bank), schedule_(schedule) {}
  VoxelGrid predict(const VoxelGrid& x_i, int i, const Condition& c) const override;

 private:
  const TemplateBank& bank_;
  const NoiseSchedule& schedule_;
};

struct LabeledGrid {
  VoxelGrid grid;
  int label = 0;
};

/// k-means (k-means++ seeding) per label. Weights are cluster fractions;
/// sigma0 is the mean over clusters of the per-cluster RMS deviation.
TemplateBank fit_empirical_bank(const std::vector<LabeledGrid>& data, std::vector<std::string> labels,
                                int clusters_per_label, std::uint64_t seed);

/// DDPM reverse chain from pure noise using the x̂0-parameterized posterior.
VoxelGrid ancestral_sample(const Denoiser& denoiser, const NoiseSchedule& schedule, const Condition& c,
                           const GridSpec& spec, int channels, std::uint64_t seed);

struct SdsOptions {
  double u_min = 0.02;
  double u_max = 0.98;
  int samples = 1;
};

struct SdsResult {
  VoxelGrid gradient;   ///< mean of w_i (x - x̂_i)
  double loss = 0.0;    ///< mean of w_i ‖x - x̂_i‖²
};

/// Timestep range [ceil(u_min T), floor(u_max T)] clipped to [1, T].
std::pair<int, int> sds_timestep_range(const NoiseSchedule& schedule, double u_min, double u_max);

SdsResult sds_gradient(const VoxelGrid& x, const Denoiser& denoiser, const NoiseSchedule& schedule,
                       const Condition& c, const SdsOptions& options, std::mt19937_64& rng);
SdsResult sds_gradient(const VoxelGrid& x, const Denoiser& denoiser, const NoiseSchedule& schedule,
                       const Condition& c, const SdsOptions& options, std::uint64_t seed);

struct RankOptions {
  int strata = 20;
  int seeds = 4;
  double u_min = 0.02;
  double u_max = 0.98;
};

/// Timesteps at the stratum midpoints.
std::vector<int> rank_timesteps(const NoiseSchedule& schedule, const RankOptions& options);

/// -mean over seeds of sum over strata of w_i ‖x - x̂_i‖²; higher is more plausible.
double rank_score(const VoxelGrid& x, const Denoiser& denoiser, const NoiseSchedule& schedule, const Condition& c,
                  std::uint64_t seed, const RankOptions& options = {});

struct AdaptiveNoiseConfig {
  double u_max = 0.75;
  double u_min = 0.25;
  double s_min = -0.2;
  double s_max = -0.01;
};

/// Upper noise fraction from the deepest interior SDF value (normalized units):
/// thick objects tolerate more noise.
double adaptive_noise_bound(double min_sdf, const AdaptiveNoiseConfig& config = {});
double adaptive_noise_bound(const VoxelGrid& sdf, const AdaptiveNoiseConfig& config = {});

/// Stream seed derived from a base seed and a stream index (SplitMix64).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace hop
