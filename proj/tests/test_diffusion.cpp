#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "hop/diffusion.hpp"
#include "hop/error.hpp"
#include "hop/sdf_geometry.hpp"
#include "support.hpp"

using namespace hop;

namespace {

const GridSpec kDebug{{2, 2, 2}, 0.15};

VoxelGrid constant_grid(double v, const GridSpec& s = kDebug) { return VoxelGrid(s, 1, v); }

VoxelGrid random_grid(std::mt19937_64& rng, double lo, double hi, const GridSpec& s = kDebug) {
  VoxelGrid g(s, 1);
  for (double& v : g.values()) v = test::uniform(rng, lo, hi);
  return g;
}

TemplateBank make_bank(std::vector<VoxelGrid> grids, std::vector<double> weights, double sigma0) {
  TemplateBank b;
  b.labels = {"a"};
  for (std::size_t k = 0; k < grids.size(); ++k) b.templates.push_back({std::move(grids[k]), weights[k], 0});
  b.sigma0 = sigma0;
  return b;
}

// Posterior mean from full Gaussian densities: p(x_i | m) = N(sqrt(ab) mu_m, (ab s^2 + 1 - ab) I),
// and per component E[x0 | x_i, m] from the joint-Gaussian conditioning formula.
Eigen::VectorXd posterior_oracle(const TemplateBank& bank, const Eigen::VectorXd& xi, double ab) {
  const int d = static_cast<int>(xi.size());
  const double s2 = bank.sigma0 * bank.sigma0;
  const Eigen::MatrixXd prior = s2 * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd cov_xi = ab * prior + (1 - ab) * Eigen::MatrixXd::Identity(d, d);
  const Eigen::LLT<Eigen::MatrixXd> llt(cov_xi);
  const Eigen::MatrixXd gain = std::sqrt(ab) * prior * llt.solve(Eigen::MatrixXd::Identity(d, d));
  std::vector<double> logw;
  std::vector<Eigen::VectorXd> means;
  for (const auto& t : bank.templates) {
    const Eigen::VectorXd mu = Eigen::Map<const Eigen::VectorXd>(t.grid.values().data(), d);
    const Eigen::VectorXd r = xi - std::sqrt(ab) * mu;
    logw.push_back(std::log(t.weight) - 0.5 * r.dot(llt.solve(r)));
    means.push_back(mu + gain * r);
  }
  const double top = *std::max_element(logw.begin(), logw.end());
  double z = 0.0;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(d);
  for (std::size_t m = 0; m < logw.size(); ++m) {
    const double w = std::exp(logw[m] - top);
    z += w;
    out += w * means[m];
  }
  return out / z;
}

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("linear schedule") {
  const NoiseSchedule s = NoiseSchedule::linear();
  REQUIRE(s.steps == 1000);
  CHECK(s.beta_at(1) == doctest::Approx(1e-4));
  CHECK(s.beta_at(1000) == doctest::Approx(0.02));
  double prod = 1.0;
  for (int i = 1; i <= 1000; ++i) {
    prod *= 1.0 - s.beta_at(i);
    REQUIRE(s.alpha_bar_at(i) == doctest::Approx(prod).epsilon(1e-12));
    REQUIRE(s.weight_at(i) == 1.0);
  }
  CHECK(s.alpha_bar_at(0) == 1.0);
  CHECK(s.alpha_bar_at(1000) < 1e-4);
  CHECK_THROWS_AS(NoiseSchedule::linear(0), Error);
}

TEST_CASE("forward noise") {
  const NoiseSchedule s = NoiseSchedule::linear();
  std::mt19937_64 rng(1);
  const VoxelGrid x0 = random_grid(rng, -1, 1), eps = random_grid(rng, -1, 1);
  const VoxelGrid xi = forward_noise(s, x0, 400, eps);
  const double ab = s.alpha_bar_at(400);
  for (std::size_t v = 0; v < xi.size(); ++v)
    CHECK(xi.values()[v] == doctest::Approx(std::sqrt(ab) * x0.values()[v] + std::sqrt(1 - ab) * eps.values()[v]));
  CHECK_THROWS_AS(forward_noise(s, x0, 0, eps), Error);
}

TEST_CASE("mixture denoiser matches the conjugate posterior") {
  const NoiseSchedule s = NoiseSchedule::linear();
  std::mt19937_64 rng(2);
  for (int c = 0; c < 20; ++c) {
    const int k = 1 + c % 4;
    std::vector<VoxelGrid> grids;
    std::vector<double> w;
    double wsum = 0.0;
    for (int m = 0; m < k; ++m) {
      grids.push_back(random_grid(rng, -1, 1));
      w.push_back(test::uniform(rng, 0.2, 1.0));
      wsum += w.back();
    }
    for (double& x : w) x /= wsum;
    const TemplateBank bank = make_bank(grids, w, c % 5 == 0 ? 0.0 : test::uniform(rng, 0.01, 0.5));
    const MixtureDenoiser den(bank, s);
    const int i = 1 + static_cast<int>(rng() % 1000);
    const VoxelGrid xi = random_grid(rng, -1.5, 1.5);
    const VoxelGrid got = den.predict(xi, i, Condition::of(0));
    const Eigen::VectorXd want =
        posterior_oracle(bank, Eigen::Map<const Eigen::VectorXd>(xi.values().data(), 8), s.alpha_bar_at(i));
    for (int v = 0; v < 8; ++v) CHECK(got.values()[v] == doctest::Approx(want[v]).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("single-template bank without spread denoises to the template") {
  const NoiseSchedule s = NoiseSchedule::linear();
  std::mt19937_64 rng(3);
  const VoxelGrid mu = random_grid(rng, -1, 1);
  const TemplateBank bank = make_bank({mu}, {1.0}, 0.0);
  const MixtureDenoiser den(bank, s);
  for (int i : {1, 10, 500, 1000}) CHECK(den.predict(random_grid(rng, -3, 3), i, Condition::of(0)) == mu);
  CHECK_THROWS_AS(den.predict(VoxelGrid(GridSpec::cube(3), 1), 5, Condition::of(0)), Error);
}

TEST_CASE("conditional queries read only templates of their label") {
  const NoiseSchedule s = NoiseSchedule::linear();
  TemplateBank bank;
  bank.labels = {"a", "b"};
  bank.sigma0 = 0.1;
  for (int k = 0; k < 6; ++k) bank.templates.push_back({constant_grid(0.1 * k), 1.0 / 3, k % 2});
  bank.validate();
  std::set<std::size_t> seen;
  bank.set_read_observer([&](std::size_t k) { seen.insert(k); });
  const MixtureDenoiser den(bank, s);
  den.predict(constant_grid(0.2), 300, bank.condition("b"));
  CHECK(seen == std::set<std::size_t>{1, 3, 5});
  seen.clear();
  den.predict(constant_grid(0.2), 300, Condition::unconditional());
  CHECK(seen.size() == 6);

  const auto comps = bank.components(Condition::unconditional());
  double total = 0.0;
  for (const auto& [_, w] : comps) total += w;
  CHECK(total == doctest::Approx(1.0));
  try {
    bank.condition("c");
    FAIL("expected UnknownCondition");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownCondition);
  }
}

TEST_CASE("bank validation and persistence") {
  std::mt19937_64 rng(4);
  TemplateBank bank = make_bank({random_grid(rng, -1, 1), random_grid(rng, -1, 1)}, {0.25, 0.75}, 0.05);
  CHECK_NOTHROW(bank.validate());
  const auto dir = std::filesystem::temp_directory_path() / "hop_test_bank";
  std::filesystem::remove_all(dir);
  for (auto& t : bank.templates) quantize_to_float(t.grid);
  bank.save(dir);
  const TemplateBank back = TemplateBank::load(dir / "manifest.json");
  CHECK(back.labels == bank.labels);
  CHECK(back.sigma0 == bank.sigma0);
  REQUIRE(back.templates.size() == 2);
  CHECK(back.templates[1].grid == bank.templates[1].grid);
  CHECK(back.templates[1].weight == 0.75);
  std::filesystem::remove_all(dir);

  TemplateBank bad = bank;
  bad.templates[0].weight = 0.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = bank;
  bad.sigma0 = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("k-means bank recovers separated clusters") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 0.02);
  std::vector<LabeledGrid> data;
  const double centers[3] = {-0.6, 0.0, 0.7};
  const int counts[3] = {10, 20, 30};
  for (int c = 0; c < 3; ++c)
    for (int m = 0; m < counts[c]; ++m) {
      VoxelGrid g = constant_grid(centers[c]);
      for (double& v : g.values()) v += n(rng);
      data.push_back({g, 0});
    }
  const TemplateBank bank = fit_empirical_bank(data, {"only"}, 3, 9);
  CHECK_NOTHROW(bank.validate());
  REQUIRE(bank.templates.size() == 3);
  std::vector<std::pair<double, double>> found;
  for (const auto& t : bank.templates) found.emplace_back(t.grid.values()[0], t.weight);
  std::sort(found.begin(), found.end());
  for (int c = 0; c < 3; ++c) {
    CHECK(found[c].first == doctest::Approx(centers[c]).epsilon(0.03).scale(1));
    CHECK(found[c].second == doctest::Approx(counts[c] / 60.0));
  }
  CHECK(bank.sigma0 == doctest::Approx(0.02).epsilon(0.25));

  // sigma0 equals the mean per-cluster RMS deviation, recomputed here.
  double rms = 0.0;
  for (const auto& t : bank.templates) {
    double ss = 0.0;
    int cnt = 0;
    for (const auto& d : data) {
      double best = 1e9;
      const VoxelGrid* nearest = nullptr;
      for (const auto& u : bank.templates) {
        double dd = 0.0;
        for (int v = 0; v < 8; ++v) dd += std::pow(d.grid.values()[v] - u.grid.values()[v], 2);
        if (dd < best) best = dd, nearest = &u.grid;
      }
      if (nearest == &t.grid) ss += best, ++cnt;
    }
    rms += std::sqrt(ss / (cnt * 8.0));
  }
  CHECK(bank.sigma0 == doctest::Approx(rms / 3).epsilon(1e-9));

  CHECK_THROWS_AS(fit_empirical_bank({}, {"x"}, 1, 0), Error);
  CHECK_THROWS_AS(fit_empirical_bank(data, {"only"}, 61, 0), Error);
  CHECK(fit_empirical_bank(data, {"only"}, 3, 9).templates[0].grid == bank.templates[0].grid);
}

TEST_CASE("ancestral sampling from a point mass returns the point") {
  const NoiseSchedule s = NoiseSchedule::linear(200);
  std::mt19937_64 rng(6);
  const VoxelGrid mu = random_grid(rng, -1, 1);
  const TemplateBank bank = make_bank({mu}, {1.0}, 0.0);
  const MixtureDenoiser den(bank, s);
  const VoxelGrid x = ancestral_sample(den, s, Condition::of(0), kDebug, 1, 11);
  for (int v = 0; v < 8; ++v) CHECK(x.values()[v] == doctest::Approx(mu.values()[v]).epsilon(1e-12));
  CHECK(ancestral_sample(den, s, Condition::of(0), kDebug, 1, 11) == x);
}

TEST_CASE("ancestral samples carry the template spread") {
  const NoiseSchedule s = NoiseSchedule::linear(200);
  const TemplateBank bank = make_bank({constant_grid(0.3)}, {1.0}, 0.2);
  const MixtureDenoiser den(bank, s);
  double sum = 0.0, sq = 0.0;
  const int n = 300;
  for (int seed = 0; seed < n; ++seed) {
    const VoxelGrid x = ancestral_sample(den, s, Condition::of(0), kDebug, 1, seed);
    for (double v : x.values()) sum += v, sq += v * v;
  }
  const double mean = sum / (8 * n), var = sq / (8 * n) - mean * mean;
  CHECK(mean == doctest::Approx(0.3).epsilon(0.02 / 0.3));
  CHECK(std::sqrt(var) == doctest::Approx(0.2).epsilon(0.1));
}

TEST_CASE("SDS timestep range") {
  const NoiseSchedule s = NoiseSchedule::linear();
  CHECK(sds_timestep_range(s, 0.02, 0.98) == std::pair{20, 980});
  CHECK(sds_timestep_range(s, 0.0001, 1.0) == std::pair{1, 1000});
  CHECK_THROWS_AS(sds_timestep_range(s, 0.5, 0.4), Error);
  CHECK_THROWS_AS(sds_timestep_range(s, 0.0, 0.4), Error);
}

TEST_CASE("SDS on a point mass is the residual to the template") {
  const NoiseSchedule s = NoiseSchedule::linear();
  std::mt19937_64 rng(7);
  const VoxelGrid mu = random_grid(rng, -1, 1);
  const TemplateBank bank = make_bank({mu}, {1.0}, 0.0);
  const MixtureDenoiser den(bank, s);
  for (int n = 0; n < 20; ++n) {
    const VoxelGrid x = random_grid(rng, -1, 1);
    const SdsResult r = sds_gradient(x, den, s, Condition::of(0), SdsOptions{}, rng);
    double loss = 0.0;
    for (int v = 0; v < 8; ++v) {
      CHECK(r.gradient.values()[v] == x.values()[v] - mu.values()[v]);
      loss += std::pow(x.values()[v] - mu.values()[v], 2);
    }
    CHECK(r.loss == doctest::Approx(loss));
  }
  const VoxelGrid x = random_grid(rng, -1, 1);
  CHECK(sds_gradient(x, den, s, Condition::of(0), SdsOptions{0.02, 0.98, 4}, 99).gradient ==
        sds_gradient(x, den, s, Condition::of(0), SdsOptions{0.02, 0.98, 4}, 99).gradient);
}

TEST_CASE("rank timesteps and scores") {
  const NoiseSchedule s = NoiseSchedule::linear();
  const auto steps = rank_timesteps(s, RankOptions{});
  REQUIRE(steps.size() == 20);
  CHECK(steps.front() == 44);
  CHECK(steps.back() == 956);
  CHECK(std::is_sorted(steps.begin(), steps.end()));

  std::mt19937_64 rng(8);
  const TemplateBank bank = make_bank({constant_grid(0.5), constant_grid(-0.5)}, {0.5, 0.5}, 0.05);
  const MixtureDenoiser den(bank, s);
  const double on = rank_score(constant_grid(0.5), den, s, Condition::of(0), 3);
  const double off = rank_score(constant_grid(2.0), den, s, Condition::of(0), 3);
  CHECK(on > off);
  CHECK(on <= 0.0);
  CHECK(rank_score(constant_grid(0.5), den, s, Condition::of(0), 3) == on);
}

TEST_CASE("adaptive noise bound") {
  CHECK(adaptive_noise_bound(-0.2) == 0.75);
  CHECK(adaptive_noise_bound(-0.01) == 0.25);
  CHECK(adaptive_noise_bound(-0.5) == 0.75);
  CHECK(adaptive_noise_bound(0.3) == 0.25);
  double prev = 1.0;
  for (double m = -0.2; m <= -0.01; m += 0.01) {
    const double u = adaptive_noise_bound(m);
    CHECK(u <= prev + 1e-15);
    prev = u;
  }
  CHECK(adaptive_noise_bound(-0.105) == doctest::Approx(0.5));
  CHECK(adaptive_noise_bound(analytic_sdf(ShapeDescriptor::sphere(0.06), GridSpec::cube(16))) == 0.75);
  CHECK_THROWS_AS(adaptive_noise_bound(std::nan("")), Error);
}

TEST_CASE("seed mixing separates streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 4; ++s)
    for (std::uint64_t k = 0; k < 256; ++k) seen.insert(mix_seed(s, k));
  CHECK(seen.size() == 1024);
  CHECK(mix_seed(5, 7) == mix_seed(5, 7));
}

}  // TEST_SUITE
