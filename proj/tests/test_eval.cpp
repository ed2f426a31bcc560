#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>

#include "transfusion/errors.hpp"
#include "transfusion/eval.hpp"
#include "transfusion/run_config.hpp"

using namespace transfusion;
namespace fs = std::filesystem;

namespace {

std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

void check_same(const MetricsReport& a, const MetricsReport& b) {
  CHECK(a.mae == b.mae);
  CHECK(a.mse == b.mse);
  CHECK(a.mape == b.mape);
  CHECK(a.r2 == b.r2);
  CHECK(a.m == b.m);
  CHECK(a.mape_excluded == b.mape_excluded);
}

void check_close(double a, double b, double rel = 1e-12) { CHECK(std::fabs(a - b) <= rel * std::max(1.0, std::fabs(b))); }

MetricsReport report(double mae, double mse, std::optional<double> mape, std::optional<double> r2) {
  MetricsReport r;
  r.mae = mae;
  r.mse = mse;
  r.mape = mape;
  r.r2 = r2;
  return r;
}

}  // namespace

TEST_CASE("metrics: hand-computed example") {
  const std::vector<double> preds{2, 4}, labels{1, 5};
  const auto r = compute_metrics(preds, labels);
  CHECK(std::fabs(r.mae - 1.0) <= 1e-12);
  CHECK(std::fabs(r.mse - 1.0) <= 1e-12);
  REQUIRE(r.mape);
  CHECK(std::fabs(*r.mape - 0.6) <= 1e-12);
  REQUIRE(r.r2);
  CHECK(std::fabs(*r.r2 - 0.75) <= 1e-12);
  CHECK(r.m == 2);
  CHECK(r.mape_excluded == 0);
}

TEST_CASE("metrics: perfect predictions and degenerate labels") {
  const std::vector<double> y{0, 1, 2, 7};
  const auto perfect = compute_metrics(y, y);
  CHECK(perfect.mae == 0.0);
  CHECK(perfect.mse == 0.0);
  CHECK(*perfect.mape == 0.0);
  CHECK(*perfect.r2 == 1.0);
  CHECK(perfect.mape_excluded == 1);

  const std::vector<double> zeros{0, 0, 0}, p{1, 0, 2};
  const auto all_zero = compute_metrics(p, zeros);
  CHECK_FALSE(all_zero.mape.has_value());
  CHECK(all_zero.mape_excluded == 3);
  CHECK_FALSE(all_zero.r2.has_value());  // zero label variance

  const std::vector<double> one_p{3}, one_y{4};
  const auto single = compute_metrics(one_p, one_y);
  CHECK(single.mae == 1.0);
  CHECK_FALSE(single.r2.has_value());

  // The constant-zero predictor on labels with spread has R2 <= 0.
  const std::vector<double> z(4, 0.0);
  CHECK(*compute_metrics(z, y).r2 <= 0.0);

  const std::vector<double> short_p{1};
  CHECK_THROWS_AS(compute_metrics(short_p, y), ShapeError);
  CHECK_THROWS_AS(compute_metrics(std::vector<double>{}, std::vector<double>{}), ShapeError);
}

TEST_CASE("metrics: ranges on random data") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 2 + trial % 50;
    const auto p = uniform(m, rng, -5, 50), y = uniform(m, rng, 0, 44);
    const auto r = compute_metrics(p, y);
    CHECK(r.mae >= 0.0);
    CHECK(r.mse >= 0.0);
    CHECK(*r.mape >= 0.0);
    CHECK(*r.r2 <= 1.0);
  }
}

TEST_CASE("metrics: exact permutation invariance") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 3 + trial * 7;
    auto p = uniform(m, rng, -3, 40), y = uniform(m, rng, 0, 44);
    y[0] = 0.0;
    const auto base = compute_metrics(p, y);
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pp(m), yy(m);
    for (std::size_t i = 0; i < m; ++i) {
      pp[i] = p[perm[i]];
      yy[i] = y[perm[i]];
    }
    check_same(compute_metrics(pp, yy), base);
  }
}

TEST_CASE("metrics: translation keeps MAE, MSE and R2; duplication keeps everything") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 2 + trial;
    auto p = uniform(m, rng, 0, 20), y = uniform(m, rng, 1, 20);
    const auto base = compute_metrics(p, y);
    const double c = std::uniform_real_distribution<double>(-3, 3)(rng);
    auto pc = p, yc = y;
    for (auto& v : pc) v += c;
    for (auto& v : yc) v += c;
    const auto shifted = compute_metrics(pc, yc);
    check_close(shifted.mae, base.mae, 1e-10);
    check_close(shifted.mse, base.mse, 1e-10);
    check_close(*shifted.r2, *base.r2, 1e-10);

    auto p2 = p, y2 = y;
    p2.insert(p2.end(), p.begin(), p.end());
    y2.insert(y2.end(), y.begin(), y.end());
    const auto dup = compute_metrics(p2, y2);
    check_close(dup.mae, base.mae);
    check_close(dup.mse, base.mse);
    check_close(*dup.mape, *base.mape);
    check_close(*dup.r2, *base.r2);
  }
}

TEST_CASE("pairwise sum") {
  CHECK(pairwise_sum(std::vector<double>{}) == 0.0);
  std::vector<double> v(1000);
  std::iota(v.begin(), v.end(), 1.0);
  CHECK(pairwise_sum(v) == 500500.0);
  // 1 + 1e-16 * 16 is lost by a left-to-right sum but kept in a tree.
  std::vector<double> w(32, 1e-16);
  w[0] = 1.0;
  CHECK(pairwise_sum(w) > 1.0);
}

TEST_CASE("report formatting") {
  const auto r = report(0.2069, 0.3831, 0.0164, 0.9978);
  CHECK(format_metrics(r) == "MAE 0.2069  MSE 0.3831  MAPE 0.0164  R2 0.9978");
  CHECK(format_metrics(report(1.0, 2.5, std::nullopt, std::nullopt)) ==
        "MAE 1.0000  MSE 2.5000  MAPE undef  R2 undef");
  const auto j = to_json(report(1.0, 2.5, std::nullopt, 0.5));
  CHECK(j["mape"].is_null());
  CHECK(j["r2"] == 0.5);
  for (const char* key : {"mae", "mse", "mape", "r2", "m", "mape_excluded", "model_id", "dataset_id", "timestamp"})
    CHECK(j.contains(key));
}

TEST_CASE("ablation report: deltas, table and CSV") {
  AblationReport rep;
  auto row = [](std::string name, std::optional<MetricsReport> m) {
    AblationRow r;
    r.name = std::move(name);
    r.metrics = std::move(m);
    return r;
  };
  rep.rows.push_back(row("full", report(1.0, 2.0, 0.1, 0.9)));
  rep.rows.push_back(row("-vision", report(2.8213, 9.0, 0.3, 0.5)));
  rep.rows.push_back(row("-wifi", report(1.5, 3.0, std::nullopt, 0.95)));
  rep.rows.push_back(row("-multiscale", report(0.75, 1.0, 0.05, 0.99)));
  auto failed = row("-linear_attention", std::nullopt);
  failed.error = "non-finite loss";
  rep.rows.push_back(failed);

  for (const char* k : {"mae", "mse", "mape", "r2"}) CHECK(*rep.delta(rep.rows[0], k) == 0.0);
  CHECK(*rep.delta(rep.rows[1], "mae") == doctest::Approx(1.8213));
  CHECK(*rep.delta(rep.rows[1], "r2") == doctest::Approx(-0.4));
  CHECK(*rep.delta(rep.rows[3], "mae") == -0.25);
  CHECK_FALSE(rep.delta(rep.rows[2], "mape").has_value());
  CHECK_FALSE(rep.delta(rep.rows[4], "mae").has_value());
  CHECK_THROWS_AS(rep.delta(rep.rows[1], "rmse"), ConfigError);

  const auto table = rep.table();
  std::istringstream is(table);
  std::vector<std::string> lines;
  for (std::string l; std::getline(is, l);) lines.push_back(l);
  REQUIRE(lines.size() == 6);
  CHECK(lines[1].find("+0.0000") != std::string::npos);
  CHECK(lines[2].find("+1.8213") != std::string::npos);
  CHECK(lines[4].find("-0.2500") != std::string::npos);
  CHECK(lines[5].find("FAILED: non-finite loss") != std::string::npos);

  const auto csv = rep.csv();
  CHECK(csv.rfind("model,mae,mse,mape,r2,d_mae,d_mse,d_mape,d_r2,best_epoch,parameters,status\n", 0) == 0);
  CHECK(csv.find("-vision,2.8213,9.0000,0.3000,0.5000,+1.8213,+7.0000,+0.2000,-0.4000,") != std::string::npos);
  CHECK(csv.find("-linear_attention,,,,,,,,,0,0,failed") != std::string::npos);
  const auto j = rep.to_json();
  CHECK(j["rows"].size() == 5);
  CHECK(j["rows"][4]["status"] == "failed");
}

TEST_CASE("evaluate is batch-size invariant and checks geometry") {
  auto rc = preset("tiny");
  rc.set_seed(2);
  const auto ds = data::generate(rc.synth);
  const auto prepared = data::prepare(ds);
  const auto model = build(rc.model);
  std::vector<std::size_t> all(ds.samples.size());
  std::iota(all.begin(), all.end(), 0);
  const auto one = evaluate(model, prepared, all, 1);
  for (std::size_t bs : {2, 5, 7, 32}) check_same(evaluate(model, prepared, all, bs), one);

  auto twice = all;
  twice.insert(twice.end(), all.begin(), all.end());
  const auto dup = evaluate(model, prepared, twice, 4);
  check_close(dup.mae, one.mae);
  check_close(dup.mse, one.mse);
  CHECK(dup.m == 2 * one.m);

  const auto preds = predict(model, prepared, all, 3);
  CHECK(preds.size() == all.size());
  CHECK(Tape::current().size() == 0);

  auto other = rc.model;
  other.d_w += 1;
  CHECK_THROWS_AS(evaluate(build(other), prepared, all), ShapeError);
  CHECK_THROWS_AS(evaluate(model, prepared, {}), ShapeError);
}

TEST_CASE("ablation study trains five rows") {
  auto rc = preset("tiny");
  rc.set_seed(4);
  const auto ds = data::generate(rc.synth);
  rc.train.max_epochs = 3;
  const auto dir = fs::temp_directory_path() / "tf_test_eval_ablation";
  fs::remove_all(dir);
  AblationOptions opts;
  opts.out_dir = dir;
  std::size_t calls = 0;
  opts.on_epoch = [&](const std::string&, const EpochRecord&) { ++calls; };
  const auto rep = ablation_study(rc.model, ds, rc.train, opts);
  REQUIRE(rep.rows.size() == 5);
  const std::vector<std::string> names{"full", "-vision", "-wifi", "-multiscale", "-linear_attention"};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(rep.rows[i].name == names[i]);
    CHECK(rep.rows[i].metrics.has_value());
    CHECK(rep.rows[i].best_epoch >= 1);
  }
  CHECK(calls == 15);
  for (const char* k : {"mae", "mse", "r2"}) CHECK(*rep.delta(rep.rows[0], k) == 0.0);
  CHECK(rep.rows[1].parameters < rep.rows[0].parameters);
  CHECK(rep.rows[2].parameters < rep.rows[0].parameters);
  CHECK(rep.rows[3].parameters < rep.rows[0].parameters);
  CHECK(rep.rows[4].parameters == rep.rows[0].parameters);
  CHECK(fs::exists(dir / "full.tfck"));
  CHECK(fs::exists(dir / "ablate_vision_stream_epochs.csv"));

  // The full row equals a plain fit + evaluate with the same seeds.
  const auto prepared = data::prepare(ds);
  const auto res = fit(build(data::with_geometry(rc.model, ds.spec)), prepared, ds.indices(data::Split::train),
                       ds.indices(data::Split::val), rc.train);
  const auto m = evaluate(res.best, prepared, ds.indices(data::Split::test));
  CHECK(m.mae == rep.rows[0].metrics->mae);
  fs::remove_all(dir);
}
