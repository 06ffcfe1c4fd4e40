// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "xaiens/config.hpp"
#include "xaiens/csvio.hpp"
#include "xaiens/pipeline.hpp"

using namespace xaiens;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("xaiens_pipe_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small but complete pipeline configuration.
std::string tiny_config(const fs::path& out, uint64_t seed) {
  return "seed = " + std::to_string(seed) + "\n" +
         "out = " + out.string() + "\n" +
         "threads = 2\n"
         "[data]\n"
         "source = synthetic\n"
         "n = 16\n"
         "side = 32\n"
         "classes = circle,square\n"
         "[classifier]\n"
         "base_channels = 4\n"
         "epochs = 3\n"
         "batch_size = 8\n"
         "[explain]\n"
         "preset = local3\n"
         "shapley_permutations = 3\n"
         "lime_samples = 30\n"
         "nt_samples = 4\n"
         "grid_cells = 4\n"
         "occlusion_window = 8\n"
         "occlusion_stride = 8\n"
         "[ensembler]\n"
         "fusion = sum\n"
         "width_scale = 0.1\n"
         "[train]\n"
         "max_epochs = 3\n"
         "batch_size = 8\n"
         "[eval]\n"
         "quality_images = 2\n"
         "lipschitz_images = 1\n"
         "randomisation_images = 1\n"
         "lipschitz_samples = 2\n"
         "flip_step = 0.25\n";
}

}  // namespace

TEST_CASE("config parsing: sections, types, lists, comments") {
  const Config cfg = Config::parse(
      "# comment\n"
      "seed = 42\n"
      "name = hello world\n"
      "[data]\n"
      "side = 64   # trailing comment\n"
      "ratio = 0.75\n"
      "classes = a, b , c\n"
      "flag = true\n");
  CHECK(cfg.get_u64("seed", 0) == 42);
  CHECK(cfg.get_string("name", "") == "hello world");
  CHECK(cfg.get_int("data.side", 0) == 64);
  CHECK(cfg.get_double("data.ratio", 0) == 0.75);
  CHECK(cfg.get_list("data.classes") == std::vector<std::string>{"a", "b", "c"});
  CHECK(cfg.get_bool("data.flag", false));
  CHECK(cfg.get_int("missing", 7) == 7);

  CHECK_THROWS_AS(Config::parse("[broken\n"), Error);
  CHECK_THROWS_AS(Config::parse("novalue\n"), Error);
  const Config bad = Config::parse("x = notanumber\n");
  CHECK_THROWS_AS(bad.get_int("x", 0), Error);
}

TEST_CASE("config digest tracks content, not formatting") {
  const Config a = Config::parse("[s]\nx = 1\ny = 2\n");
  const Config b = Config::parse("# different layout\n[s]\ny = 2\nx = 1\n");
  CHECK(a.digest() == b.digest());
  Config c = a;
  c.set("s.x", "3");
  CHECK(c.digest() != a.digest());
}

TEST_CASE("validate_config rejects unknown keys") {
  const fs::path out = temp_dir("validate");
  Config cfg = Config::parse(tiny_config(out, 1));
  CHECK(pipeline::validate_config(cfg).size() == 16);
  cfg.set("data.typo_key", "1");
  CHECK_THROWS_AS(pipeline::validate_config(cfg), Error);
}

TEST_CASE("pipeline stages produce artifacts and verify digests") {
  const fs::path out = temp_dir("stages");
  const Config cfg = Config::parse(tiny_config(out, 5));
  pipeline::RunPaths paths{out};

  // eval before training is a hard error.
  CHECK_THROWS_AS(pipeline::cmd_eval(cfg), Error);

  pipeline::cmd_synth(cfg);
  CHECK(fs::exists(paths.dataset() / "images"));
  CHECK(fs::exists(paths.dataset() / "manifest"));

  pipeline::cmd_train_classifier(cfg);
  CHECK(fs::exists(paths.classifier()));

  pipeline::cmd_explain(cfg);
  // n * p cached arrays.
  size_t files = 0;
  for (auto it = fs::recursive_directory_iterator(paths.cache());
       it != fs::recursive_directory_iterator(); ++it)
    if (it->path().extension() == ".arr") ++files;
  CHECK(files == 16 * 3);

  pipeline::cmd_train_ensembler(cfg);
  CHECK(fs::exists(paths.ensembler()));
  CHECK(fs::exists(paths.history()));

  pipeline::cmd_eval(cfg);
  for (const auto& p : {paths.table1(), paths.derived(), paths.per_image(),
                        paths.baselines(), paths.radar(), paths.curves()})
    CHECK(fs::exists(p));

  const auto table1 = csvio::read_csv(paths.table1());
  CHECK(table1.header ==
        std::vector<std::string>{"train_ens_acc", "train_ens_f1", "train_ens_iou",
                                 "train_loss", "test_ens_acc", "test_ens_f1",
                                 "test_ens_iou", "test_loss"});
  CHECK(table1.rows.size() == 1);
  CHECK(table1.config_digest == cfg.digest());

  // div_iou column equals the diverseness recomputed from the ens columns.
  const auto derived = csvio::read_csv(paths.derived());
  const double train_iou = std::stod(table1.rows[0][2]);
  const double test_iou = std::stod(table1.rows[0][6]);
  // %.9g serialization bounds the round-trip agreement.
  CHECK(std::stod(derived.rows[0][2]) ==
        doctest::Approx(1.0 - train_iou + test_iou).epsilon(1e-7));

  // Radar has 5 axes per method (3 component methods + the ensemble).
  const auto radar = csvio::read_csv(paths.radar());
  CHECK(radar.rows.size() == 5 * 4);
  for (const auto& row : radar.rows) {
    CHECK((row[3] == "higher" || row[3] == "lower"));
  }

  pipeline::cmd_ablate(cfg);
  const auto table2 = csvio::read_csv(paths.table2());
  CHECK(table2.header ==
        std::vector<std::string>{"method", "diff_acc", "diff_f1", "diff_iou",
                                 "quot_acc", "quot_f1", "quot_iou"});
  CHECK(table2.rows.size() == 3);

  pipeline::cmd_report(cfg);
  CHECK(fs::exists(paths.report() / "radar.csv"));
  CHECK(fs::exists(paths.report() / "flipping_curves.csv"));
  CHECK(fs::exists(paths.report() / "class_bars.csv"));
  CHECK(fs::exists(paths.report() / "summary.jsonl"));

  // report stage refuses artifacts from a different configuration.
  Config other = cfg;
  other.set("seed", "999");
  CHECK_THROWS_AS(pipeline::cmd_report(other), Error);
}

TEST_CASE("explain stage is idempotent on a warm cache") {
  const fs::path out = temp_dir("warm");
  const Config cfg = Config::parse(tiny_config(out, 9));
  pipeline::cmd_synth(cfg);
  pipeline::cmd_train_classifier(cfg);
  pipeline::cmd_explain(cfg);

  pipeline::RunPaths paths{out};
  std::map<std::string, fs::file_time_type> mtimes;
  for (auto it = fs::recursive_directory_iterator(paths.cache());
       it != fs::recursive_directory_iterator(); ++it)
    if (it->is_regular_file()) mtimes[it->path().string()] = fs::last_write_time(*it);

  pipeline::cmd_explain(cfg);  // warm: must not rewrite anything
  for (auto it = fs::recursive_directory_iterator(paths.cache());
       it != fs::recursive_directory_iterator(); ++it)
    if (it->is_regular_file())
      CHECK(fs::last_write_time(*it) == mtimes.at(it->path().string()));
}

TEST_CASE("exh column appears when a baseline run is supplied") {
  const fs::path out_base = temp_dir("exh_base");
  Config base_cfg = Config::parse(tiny_config(out_base, 13));
  base_cfg.set("explain.preset", "baseline0");
  pipeline::cmd_synth(base_cfg);
  pipeline::cmd_train_classifier(base_cfg);
  pipeline::cmd_explain(base_cfg);
  pipeline::cmd_train_ensembler(base_cfg);
  pipeline::cmd_eval(base_cfg);

  const fs::path out = temp_dir("exh_main");
  Config cfg = Config::parse(tiny_config(out, 13));
  cfg.set("eval.baseline_metrics",
          (pipeline::RunPaths{out_base}.table1()).string());
  pipeline::cmd_synth(cfg);
  pipeline::cmd_train_classifier(cfg);
  pipeline::cmd_explain(cfg);
  pipeline::cmd_train_ensembler(cfg);
  pipeline::cmd_eval(cfg);

  const auto derived = csvio::read_csv(pipeline::RunPaths{out}.derived());
  const auto table1 = csvio::read_csv(pipeline::RunPaths{out}.table1());
  const auto base_table1 = csvio::read_csv(pipeline::RunPaths{out_base}.table1());
  const double test_iou = std::stod(table1.rows[0][6]);
  const double base_iou = std::stod(base_table1.rows[0][6]);
  REQUIRE(base_iou > 0.0);
  CHECK(std::stod(derived.rows[0][3]) ==
        doctest::Approx(test_iou / base_iou).epsilon(1e-9));
}
