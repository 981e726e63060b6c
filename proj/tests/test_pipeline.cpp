#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "ctiq/binary_io.hpp"
#include "ctiq/config.hpp"
#include "ctiq/error.hpp"
#include "ctiq/manifest.hpp"
#include "ctiq/robust_eval.hpp"
#include "ctiq/sweep.hpp"

using namespace ctiq;

namespace {

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::string field_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<no error>";
}

}  // namespace

TEST(Config, ParsesAndConverts) {
  const auto c = KeyValueConfig::parse("# comment\n\nsigma = 0.18\n  n=2000  \nsigmas = 0.1, 0.2 ,0.3\nname = dms\n");
  EXPECT_EQ(c.get_double("sigma", 0.0), 0.18);
  EXPECT_EQ(c.get_size("n", 0), 2000u);
  EXPECT_EQ(c.get_doubles("sigmas", {}), (std::vector<double>{0.1, 0.2, 0.3}));
  EXPECT_EQ(c.get("name", ""), "dms");
  EXPECT_EQ(c.get("missing", "fallback"), "fallback");
  EXPECT_EQ(c.get_u64("missing", 7), 7u);
}

TEST(Config, LaterAssignmentsWin) {
  auto c = KeyValueConfig::parse("lr = 1\nlr = 2\n");
  EXPECT_EQ(c.get_double("lr", 0), 2.0);
  c.set("lr", "3");
  EXPECT_EQ(c.get_double("lr", 0), 3.0);
}

TEST(Config, ErrorsNameTheField) {
  const auto c = KeyValueConfig::parse("sigma = abc\nn = -3\nlist = ,\nbig = 1e999\n");
  EXPECT_EQ(field_of([&] { c.get_double("sigma", 0); }), "sigma");
  EXPECT_EQ(field_of([&] { c.get_size("n", 0); }), "n");
  EXPECT_EQ(field_of([&] { c.get_doubles("list", {}); }), "list");
  EXPECT_EQ(field_of([&] { c.get_double("big", 0); }), "big");
  EXPECT_EQ(field_of([&] { c.require("out"); }), "out");
  EXPECT_EQ(field_of([&] { c.require_known({"sigma", "n", "list"}); }), "big");
  EXPECT_EQ(field_of([] { KeyValueConfig::parse("just words\n", "run.cfg"); }), "run.cfg:1");
}

TEST(Manifest, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc", 3), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex("", 0), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Manifest, RecordsInputsArtifactsAndSeeds) {
  const auto dir = std::filesystem::temp_directory_path() / "ctiq_manifest_test";
  std::filesystem::create_directories(dir);
  binio::write_file(dir / "in.bin", std::vector<char>{'a', 'b', 'c'});
  binio::write_file(dir / "out.csv", std::vector<char>{'x', '\n'});
  RunManifest m("certify");
  m.set_config({{"sigma", "0.12"}});
  m.add_seed("seed", 42);
  m.add_input(dir / "in.bin");
  m.add_artifact(dir, "out.csv");
  const auto path = m.write(dir);
  EXPECT_EQ(path.filename(), "manifest_certify.json");
  std::ifstream in(path);
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["command"], "certify");
  EXPECT_EQ(j["config"]["sigma"], "0.12");
  EXPECT_EQ(j["seeds"]["seed"], 42);
  EXPECT_EQ(j["inputs"][0]["bytes"], 3);
  EXPECT_EQ(j["inputs"][0]["sha256"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(j["artifacts"][0]["path"], "out.csv");
  EXPECT_TRUE(j.contains("wall_clock_seconds"));
  EXPECT_TRUE(j.contains("started_utc"));
  std::filesystem::remove_all(dir);
}

class SmallPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data = new Dataset(generate({.count = 60, .height = 8, .width = 8, .seed = 71}));
    metric = new QualityModel(train_metric(*data, {.epochs = 4, .lr = 3e-3, .batch_size = 8, .seed = 1}));
    init = new DenoiserModel(DenoiserModel::init(72));
  }
  static void TearDownTestSuite() {
    delete data;
    delete metric;
    delete init;
  }
  static inline Dataset* data = nullptr;
  static inline QualityModel* metric = nullptr;
  static inline DenoiserModel* init = nullptr;
};

TEST_F(SmallPipeline, CompareRowsFollowTheContract) {
  const auto images = data->image_list(Split::test);
  const auto mos = data->mos(Split::test);
  CompareOptions opt{{preset("weak"), preset("strong")}, 100, 3, 1};
  const CompareReport r = compare_methods(*metric, {{"MS", nullptr}, {"DMS", init}}, images, mos, opt);
  ASSERT_EQ(r.rows.size(), 6u);
  for (const auto& row : r.rows) {
    if (row.method == "No-Defence") {
      EXPECT_EQ(row.tau_srocc, 0.0);
      EXPECT_EQ(row.tau_plcc, 0.0);
    } else {
      EXPECT_TRUE(std::isfinite(row.mean_cd_pct));
      EXPECT_GT(row.mean_cd_pct, 0.0);
    }
  }
  EXPECT_EQ(r.images.size(), 2 * 2 * images.size());
  EXPECT_EQ(count_lines(r.csv()), 7u);
  EXPECT_NO_THROW(r.row("DMS", "strong"));
  // Workers do not change anything.
  opt.workers = 3;
  EXPECT_EQ(compare_methods(*metric, {{"MS", nullptr}, {"DMS", init}}, images, mos, opt).json(), r.json());
}

TEST_F(SmallPipeline, SingleCellLossGridMatchesDirectRun) {
  TrainConfig train;
  train.epochs = 1;
  train.batch_size = 6;
  train.sigma = 0.18;
  train.lr = 1e-4;
  const SweepEval eval{preset("strong"), 100, 5, 1};
  const auto rows = sweep_loss(*init, *metric, *data, train, {10.0}, {100.0}, eval);
  ASSERT_EQ(rows.size(), 1u);

  TrainConfig direct = train;
  direct.mode = TrainMode::composite;
  const auto trained = train_denoiser(*init, *metric, *data, direct, {10.0, 100.0});
  const auto report = compare_methods(*metric, {{"DMS-IQA", &trained.model}}, data->image_list(Split::test),
                                      data->mos(Split::test), {{eval.preset}, eval.n, eval.seed, 1});
  const auto& row = report.row("DMS-IQA", "strong");
  EXPECT_EQ(rows[0].tau_srocc, row.tau_srocc);
  EXPECT_EQ(rows[0].mean_cd_pct, row.mean_cd_pct);
  EXPECT_EQ(rows[0].c_r, 10.0);
  EXPECT_EQ(rows[0].c_t, 100.0);
}

TEST_F(SmallPipeline, GridRowCounts) {
  TrainConfig train;
  train.epochs = 0;
  const SweepEval eval{preset("strong"), 50, 5, 1};
  const auto loss = sweep_loss(*init, *metric, *data, train, {1, 10}, {1, 100, 1000}, eval);
  EXPECT_EQ(loss.size(), 6u);
  EXPECT_EQ(count_lines(loss_grid_csv(loss)), 7u);
  for (const auto& r : loss) EXPECT_GE(r.mean_cd_pct, 0.0);
  const auto batch = sweep_batch(*init, *metric, *data, train, {3, 5}, {}, eval);
  EXPECT_EQ(batch.size(), 2u);
  EXPECT_EQ(batch_grid_csv(batch).substr(0, 6), "batch,");
  EXPECT_THROW(sweep_batch(*init, *metric, *data, train, {1}, {}, eval), ConfigError);
}

TEST_F(SmallPipeline, EpsSigmaGridFlagsInfeasibleCells) {
  const auto images = data->image_list(Split::test);
  const auto mos = data->mos(Split::test);
  // max_ratio(100) is about 2.33.
  const auto rows = sweep_eps_sigma(*metric, {{"MS", nullptr}}, images, mos, {0.1, 0.3}, {0.0, 0.2, 0.3}, 100, 9);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_TRUE(rows[0].feasible);
  EXPECT_TRUE(rows[1].feasible);
  EXPECT_FALSE(rows[2].feasible);
  for (std::size_t i = 3; i < 6; ++i) EXPECT_TRUE(rows[i].feasible);
  EXPECT_EQ(rows[0].mean_cd_pct, 0.0);
  const std::string csv = eps_sigma_csv(rows);
  EXPECT_NE(csv.find("MS,0.1,0.3,0,,,,,\n"), std::string::npos) << csv;

  // Each cell agrees with certifying that (sigma, eps) directly.
  const auto direct = compare_methods(*metric, {{"MS", nullptr}}, images, mos, {{{"c", 0.3, 0.2}}, 100, 9, 1});
  EXPECT_DOUBLE_EQ(rows[4].tau_srocc, direct.row("MS", "c").tau_srocc);
  EXPECT_DOUBLE_EQ(rows[4].mean_cd_pct, direct.row("MS", "c").mean_cd_pct);
}
