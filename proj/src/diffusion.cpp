#include "hop/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "hop/error.hpp"
#include "hop/kernels.hpp"

namespace hop {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_first, double beta_last) {
  require(steps >= 1, ErrorCode::InvalidConfig, "schedule needs at least one step");
  require(beta_first > 0 && beta_last < 1 && beta_first <= beta_last, ErrorCode::InvalidConfig,
          "schedule betas must satisfy 0 < beta_1 <= beta_T < 1");
  NoiseSchedule s;
  s.steps = steps;
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double b = steps == 1 ? beta_first : beta_first + (beta_last - beta_first) * i / (steps - 1);
    prod *= 1.0 - b;
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    s.alpha_bar.push_back(prod);
    s.weight.push_back(1.0);
  }
  return s;
}

VoxelGrid forward_noise(const NoiseSchedule& schedule, const VoxelGrid& x0, int i, const VoxelGrid& eps) {
  require(eps.spec() == x0.spec() && eps.channels() == x0.channels(), ErrorCode::ShapeMismatch,
          "forward_noise: noise shape differs from the state");
  require(i >= 1 && i <= schedule.steps, ErrorCode::InvalidArgument, "timestep out of range");
  const double ab = schedule.alpha_bar_at(i);
  VoxelGrid out(x0.spec(), x0.channels());
  kernels::axpby(std::sqrt(ab), x0.values(), std::sqrt(1.0 - ab), eps.values(), out.values());
  return out;
}

VoxelGrid gaussian_like(const VoxelGrid& like, std::mt19937_64& rng) {
  VoxelGrid out(like.spec(), like.channels());
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : out.values()) v = n(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Template bank

int TemplateBank::label_index(std::string_view name) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == name) return static_cast<int>(i);
  fail(ErrorCode::UnknownCondition, "unknown condition '" + std::string(name) + "'");
}

std::vector<std::pair<std::size_t, double>> TemplateBank::components(const Condition& c) const {
  std::vector<std::pair<std::size_t, double>> out;
  if (c.is_unconditional()) {
    const double share = 1.0 / std::max<std::size_t>(labels.size(), 1);
    for (std::size_t k = 0; k < templates.size(); ++k) out.emplace_back(k, templates[k].weight * share);
  } else {
    if (c.label >= static_cast<int>(labels.size()))
      fail(ErrorCode::UnknownCondition, "condition label " + std::to_string(c.label) + " is not registered");
    for (std::size_t k = 0; k < templates.size(); ++k)
      if (templates[k].label == c.label) out.emplace_back(k, templates[k].weight);
  }
  if (out.empty()) fail(ErrorCode::UnknownCondition, "condition has no templates");
  return out;
}

void TemplateBank::validate() const {
  if (labels.empty() || templates.empty()) fail(ErrorCode::InvalidConfig, "template bank is empty");
  if (!(sigma0 >= 0.0) || !std::isfinite(sigma0)) fail(ErrorCode::InvalidConfig, "sigma0 must be finite and >= 0");
  std::vector<double> sums(labels.size(), 0.0);
  for (const auto& t : templates) {
    if (t.label < 0 || t.label >= static_cast<int>(labels.size()))
      fail(ErrorCode::InvalidConfig, "template label out of range");
    if (!(t.weight > 0.0)) fail(ErrorCode::InvalidConfig, "template weights must be positive");
    if (t.grid.spec() != templates[0].grid.spec() || t.grid.channels() != templates[0].grid.channels())
      fail(ErrorCode::InvalidConfig, "templates differ in shape");
    if (!t.grid.all_finite()) fail(ErrorCode::InvalidConfig, "template values must be finite");
    sums[t.label] += t.weight;
  }
  for (std::size_t l = 0; l < labels.size(); ++l)
    if (std::abs(sums[l] - 1.0) > 1e-6)
      fail(ErrorCode::InvalidConfig, "weights of label '" + labels[l] + "' do not sum to 1");
}

void TemplateBank::save(const std::filesystem::path& dir) const {
  validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + dir.string());
  nlohmann::json j;
  j["format"] = "hop-template-bank";
  j["version"] = 1;
  j["labels"] = labels;
  j["sigma0"] = sigma0;
  j["templates"] = nlohmann::json::array();
  for (std::size_t k = 0; k < templates.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "template_%03zu.hopg", k);
    write_hopg(dir / name, templates[k].grid);
    j["templates"].push_back({{"file", name}, {"weight", templates[k].weight}, {"label", labels[templates[k].label]}});
  }
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::IoFailure, "cannot write bank manifest in " + dir.string());
}

TemplateBank TemplateBank::load(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) fail(ErrorCode::IoFailure, "cannot open bank manifest " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("bank manifest: ") + e.what());
  }
  TemplateBank bank;
  try {
    bank.labels = j.at("labels").get<std::vector<std::string>>();
    bank.sigma0 = j.at("sigma0").get<double>();
    for (const auto& t : j.at("templates")) {
      Template tp;
      tp.grid = read_hopg(manifest.parent_path() / t.at("file").get<std::string>());
      tp.weight = t.at("weight").get<double>();
      tp.label = bank.label_index(t.at("label").get<std::string>());
      bank.templates.push_back(std::move(tp));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("bank manifest: ") + e.what());
  }
  bank.validate();
  return bank;
}

// ---------------------------------------------------------------------------
// Denoising

VoxelGrid MixtureDenoiser::predict(const VoxelGrid& x_i, int i, const Condition& c) const {
  const auto comps = bank_.components(c);
  const VoxelGrid& first = bank_.templates[comps.front().first].grid;
  require(x_i.spec() == first.spec() && x_i.channels() == first.channels(), ErrorCode::ShapeMismatch,
          "denoiser input shape differs from the bank templates");
  require(i >= 1 && i <= schedule_.steps, ErrorCode::InvalidArgument, "timestep out of range");
  const double ab = schedule_.alpha_bar_at(i);
  const double s2 = bank_.sigma0 * bank_.sigma0;
  const double var = ab * s2 + (1.0 - ab);
  const double sab = std::sqrt(ab);

  std::vector<double> logits(comps.size());
  for (std::size_t m = 0; m < comps.size(); ++m) {
    const VoxelGrid& mu = bank_.read(comps[m].first);
    logits[m] = std::log(comps[m].second) - kernels::scaled_squared_distance(x_i.values(), sab, mu.values()) / (2.0 * var);
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) z += (l = std::exp(l - top));

  VoxelGrid out(x_i.spec(), x_i.channels());
  for (std::size_t m = 0; m < comps.size(); ++m) {
    const double r = logits[m] / z;
    if (r == 0.0) continue;
    kernels::axpy(r * (1.0 - ab) / var, bank_.read(comps[m].first).values(), out.values());
  }
  if (s2 > 0.0) kernels::axpy(sab * s2 / var, x_i.values(), out.values());
  return out;
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

double sq_dist(const VoxelGrid& a, const VoxelGrid& b) { return kernels::squared_distance(a.values(), b.values()); }

}  // namespace

TemplateBank fit_empirical_bank(const std::vector<LabeledGrid>& data, std::vector<std::string> labels,
                                int clusters_per_label, std::uint64_t seed) {
  require(clusters_per_label >= 1, ErrorCode::InvalidArgument, "need at least one cluster per label");
  if (data.empty()) fail(ErrorCode::EmptyDataset, "dataset is empty");
  for (const auto& d : data) {
    require(d.label >= 0 && d.label < static_cast<int>(labels.size()), ErrorCode::UnknownCondition,
            "dataset label out of range");
    require(d.grid.spec() == data[0].grid.spec() && d.grid.channels() == data[0].grid.channels(),
            ErrorCode::ShapeMismatch, "dataset grids differ in shape");
  }
  TemplateBank bank;
  bank.labels = std::move(labels);
  const double dims = static_cast<double>(data[0].grid.size());
  double rms_sum = 0.0;
  int cluster_count = 0;

  for (int label = 0; label < static_cast<int>(bank.labels.size()); ++label) {
    std::vector<const VoxelGrid*> pts;
    for (const auto& d : data)
      if (d.label == label) pts.push_back(&d.grid);
    if (pts.empty()) fail(ErrorCode::EmptyDataset, "no samples for label '" + bank.labels[label] + "'");
    if (static_cast<int>(pts.size()) < clusters_per_label)
      fail(ErrorCode::EmptyDataset, "fewer samples than clusters for label '" + bank.labels[label] + "'");
    const std::size_t n = pts.size();
    const int k = clusters_per_label;
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(label)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // k-means++ seeding
    std::vector<VoxelGrid> centers;
    centers.push_back(*pts[std::min<std::size_t>(n - 1, static_cast<std::size_t>(unit(rng) * n))]);
    std::vector<double> d2(n);
    while (static_cast<int>(centers.size()) < k) {
      double total = 0.0;
      for (std::size_t p = 0; p < n; ++p) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& c : centers) best = std::min(best, sq_dist(*pts[p], c));
        total += (d2[p] = best);
      }
      std::size_t pick = 0;
      if (total > 0.0) {
        double u = unit(rng) * total;
        for (pick = 0; pick + 1 < n && u >= d2[pick]; ++pick) u -= d2[pick];
        while (d2[pick] == 0.0 && pick + 1 < n) ++pick;
      } else {
        pick = centers.size() % n;
      }
      centers.push_back(*pts[pick]);
    }

    std::vector<int> assign(n, -1);
    for (int iter = 0; iter < 200; ++iter) {
      bool changed = false;
      for (std::size_t p = 0; p < n; ++p) {
        int best_c = 0;
        double best = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
          const double d = sq_dist(*pts[p], centers[c]);
          if (d < best) best = d, best_c = c;
        }
        if (assign[p] != best_c) assign[p] = best_c, changed = true;
      }
      if (!changed && iter > 0) break;
      std::vector<int> counts(k, 0);
      for (int c = 0; c < k; ++c) std::ranges::fill(centers[c].values(), 0.0);
      for (std::size_t p = 0; p < n; ++p) {
        kernels::axpy(1.0, pts[p]->values(), centers[assign[p]].values());
        ++counts[assign[p]];
      }
      for (int c = 0; c < k; ++c) {
        if (counts[c] == 0) {
          // Re-seed an empty cluster at the point farthest from its centroid.
          std::size_t far = 0;
          double worst = -1.0;
          for (std::size_t p = 0; p < n; ++p) {
            const double d = sq_dist(*pts[p], centers[assign[p]]) / std::max(1, counts[assign[p]]);
            if (d > worst) worst = d, far = p;
          }
          centers[c] = *pts[far];
          continue;
        }
        for (double& v : centers[c].values()) v /= counts[c];
      }
    }

    for (int c = 0; c < k; ++c) {
      double ss = 0.0;
      int count = 0;
      for (std::size_t p = 0; p < n; ++p)
        if (assign[p] == c) ss += sq_dist(*pts[p], centers[c]), ++count;
      if (count == 0) continue;
      rms_sum += std::sqrt(ss / (count * dims));
      ++cluster_count;
      bank.templates.push_back({std::move(centers[c]), static_cast<double>(count) / n, label});
    }
  }
  bank.sigma0 = cluster_count > 0 ? rms_sum / cluster_count : 0.0;
  return bank;
}

// ---------------------------------------------------------------------------
// Sampling and guidance

VoxelGrid ancestral_sample(const Denoiser& denoiser, const NoiseSchedule& schedule, const Condition& c,
                           const GridSpec& spec, int channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  VoxelGrid x = gaussian_like(VoxelGrid(spec, channels), rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = schedule.steps; i >= 1; --i) {
    const VoxelGrid x0 = denoiser.predict(x, i, c);
    const double ab = schedule.alpha_bar_at(i), ab_prev = schedule.alpha_bar_at(i - 1);
    const double beta = schedule.beta_at(i);
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    const double ct = std::sqrt(schedule.alpha_at(i)) * (1.0 - ab_prev) / (1.0 - ab);
    kernels::axpby(c0, x0.values(), ct, x.values(), x.values());
    if (i > 1) {
      const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
      for (double& v : x.values()) v += sigma * normal(rng);
    }
  }
  if (!x.all_finite()) fail(ErrorCode::NonFiniteObjective, "ancestral sample is not finite");
  return x;
}

std::pair<int, int> sds_timestep_range(const NoiseSchedule& schedule, double u_min, double u_max) {
  require(u_min > 0.0 && u_min <= u_max && u_max <= 1.0, ErrorCode::InvalidArgument,
          "noise range must satisfy 0 < U_a <= U_b <= 1");
  const int lo = std::clamp(static_cast<int>(std::ceil(u_min * schedule.steps - 1e-9)), 1, schedule.steps);
  const int hi = std::clamp(static_cast<int>(std::floor(u_max * schedule.steps + 1e-9)), lo, schedule.steps);
  return {lo, hi};
}

SdsResult sds_gradient(const VoxelGrid& x, const Denoiser& denoiser, const NoiseSchedule& schedule,
                       const Condition& c, const SdsOptions& options, std::mt19937_64& rng) {
  require(options.samples >= 1, ErrorCode::InvalidArgument, "SDS needs at least one sample");
  const auto [lo, hi] = sds_timestep_range(schedule, options.u_min, options.u_max);
  std::uniform_int_distribution<int> step(lo, hi);
  SdsResult r{VoxelGrid(x.spec(), x.channels()), 0.0};
  for (int s = 0; s < options.samples; ++s) {
    const int i = step(rng);
    const VoxelGrid eps = gaussian_like(x, rng);
    const VoxelGrid x0 = denoiser.predict(forward_noise(schedule, x, i, eps), i, c);
    const double w = schedule.weight_at(i) / options.samples;
    auto g = r.gradient.values();
    const auto xv = x.values(), hv = x0.values();
    for (std::size_t n = 0; n < g.size(); ++n) g[n] += w * (xv[n] - hv[n]);
    r.loss += w * kernels::squared_distance(xv, hv);
  }
  return r;
}

SdsResult sds_gradient(const VoxelGrid& x, const Denoiser& denoiser, const NoiseSchedule& schedule,
                       const Condition& c, const SdsOptions& options, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sds_gradient(x, denoiser, schedule, c, options, rng);
}

std::vector<int> rank_timesteps(const NoiseSchedule& schedule, const RankOptions& options) {
  require(options.strata >= 1 && options.seeds >= 1, ErrorCode::InvalidArgument, "rank options out of range");
  std::vector<int> steps;
  for (int m = 0; m < options.strata; ++m) {
    const double u = options.u_min + (m + 0.5) * (options.u_max - options.u_min) / options.strata;
    steps.push_back(std::clamp(static_cast<int>(std::lround(u * schedule.steps)), 1, schedule.steps));
  }
  return steps;
}

double rank_score(const VoxelGrid& x, const Denoiser& denoiser, const NoiseSchedule& schedule, const Condition& c,
                  std::uint64_t seed, const RankOptions& options) {
  const auto steps = rank_timesteps(schedule, options);
  double total = 0.0;
  for (int s = 0; s < options.seeds; ++s) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(s)));
    for (int i : steps) {
      const VoxelGrid eps = gaussian_like(x, rng);
      const VoxelGrid x0 = denoiser.predict(forward_noise(schedule, x, i, eps), i, c);
      total += schedule.weight_at(i) * kernels::squared_distance(x.values(), x0.values());
    }
  }
  return -total / options.seeds;
}

double adaptive_noise_bound(double min_sdf, const AdaptiveNoiseConfig& k) {
  require(std::isfinite(min_sdf), ErrorCode::InvalidArgument, "SDF minimum is not finite");
  const double s = std::clamp(min_sdf, k.s_min, k.s_max);
  const double f = (s - k.s_min) / (k.s_max - k.s_min);
  return f * k.u_min + (1.0 - f) * k.u_max;
}

double adaptive_noise_bound(const VoxelGrid& sdf, const AdaptiveNoiseConfig& config) {
  require(sdf.channels() >= 1 && !sdf.empty(), ErrorCode::InvalidArgument, "empty SDF grid");
  const auto v = sdf.channel(0);
  return adaptive_noise_bound(*std::min_element(v.begin(), v.end()), config);
}

}  // namespace hop
