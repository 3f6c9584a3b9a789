#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "fsgcd/config.hpp"
#include "fsgcd/error.hpp"

using namespace fsgcd;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

std::string write_temp(const std::string& name, const std::string& text) {
  const auto dir = fs::temp_directory_path() / "fsgcd_config_test";
  fs::create_directories(dir);
  const auto path = (dir / name).string();
  std::ofstream(path) << text;
  return path;
}

// Known-class count the split would realize for `classes` classes.
std::uint32_t known_count(const std::string& preset, std::uint32_t classes) {
  ExperimentConfig c;
  c.apply_preset(preset);
  SyntheticConfig sc;
  sc.class_count = classes;
  sc.samples_per_class = 1;
  sc.dimension = classes;
  return static_cast<std::uint32_t>(generate_split(make_synthetic(sc), c.c_l, c.p_l, 0).known_classes.size());
}

}  // namespace

TEST(Presets, BenchmarkSplitShapes) {
  // |known| and |all| class counts of the six benchmark settings.
  EXPECT_EQ(known_count("cifar10", 10), 2u);
  EXPECT_EQ(known_count("cifar100", 100), 5u);
  EXPECT_EQ(known_count("imagenet100", 100), 10u);
  EXPECT_EQ(known_count("cub", 200), 10u);
  EXPECT_EQ(known_count("scars", 196), 10u);
  EXPECT_EQ(known_count("herb19", 683), 33u);

  ExperimentConfig c;
  c.apply_preset("cifar100");
  EXPECT_EQ(c.c_l, 0.05);
  EXPECT_EQ(c.p_l, 0.1);
  c.apply_preset("cub");
  EXPECT_EQ(c.p_l, 0.2);
}

TEST(Presets, LabeledCountsMatchBenchmarkSizes) {
  // 2 known CIFAR10 classes of 5000 images at p_l 0.1 give 1000 labeled;
  // 5 CIFAR100 classes of 500 give 250.
  ExperimentConfig c;
  c.apply_preset("cifar10");
  EXPECT_EQ(std::lround(c.p_l * 5000) * 2, 1000);
  c.apply_preset("cifar100");
  EXPECT_EQ(std::lround(c.p_l * 500) * 5, 250);
}

TEST(Presets, EveryPresetValidatesAndUnknownIsRejected) {
  for (const auto& name : preset_names()) {
    ExperimentConfig c;
    c.apply_preset(name);
    EXPECT_EQ(c.preset, name);
    EXPECT_NO_THROW(c.validate()) << name;
  }
  ExperimentConfig c;
  EXPECT_EQ(code_of([&] { c.apply_preset("cifar1000"); }), ErrorCode::InvalidArgument);
}

TEST(Config, BuiltInDefaults) {
  const ExperimentConfig c;
  EXPECT_EQ(c.train.loss.tau_s, 0.07);
  EXPECT_EQ(c.train.loss.tau_u, 1.0);
  EXPECT_EQ(c.train.loss.lambda, 0.35);
  EXPECT_EQ(c.encoder.embed_dim, 256u);
  EXPECT_EQ(c.train.lr, 0.1);
}

TEST(Config, LaterLayersWin) {
  const auto path = write_temp("layers.cfg",
                               "# comment line\n"
                               "preset = synthetic-smoke\n"
                               "train.lr = 0.02   # trailing comment\n"
                               "train.stage2_epochs = 7\n");
  ExperimentConfig c;
  c.apply_preset("synthetic-separable");
  EXPECT_EQ(c.synthetic_cfg.class_count, 20u);
  c.load_file(path);
  EXPECT_EQ(c.preset, "synthetic-smoke");
  EXPECT_EQ(c.synthetic_cfg.class_count, 10u);
  EXPECT_EQ(c.train.lr, 0.02);
  c.set("train.lr", "0.5");
  EXPECT_EQ(c.train.lr, 0.5);
  EXPECT_EQ(c.train.stage2_epochs, 7u);
}

TEST(Config, SeedEnvironmentOverridesDefault) {
  ::setenv("FSGCD_SEED", "42", 1);
  ExperimentConfig c;
  c.apply_env();
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.resolved_train().seed, 42u);
  EXPECT_EQ(c.effective_split_seed(), 42u);
  c.set("seed", "3");
  EXPECT_EQ(c.seed, 3u);
  ::setenv("FSGCD_SEED", "abc", 1);
  ExperimentConfig d;
  EXPECT_EQ(code_of([&] { d.apply_env(); }), ErrorCode::InvalidArgument);
  ::unsetenv("FSGCD_SEED");
  ExperimentConfig e;
  e.apply_env();
  EXPECT_EQ(e.seed, 0u);
}

TEST(Config, FileErrorsNameTheLine) {
  const auto bad = write_temp("bad.cfg", "train.lr = 0.1\nthis line has no separator\n");
  ExperimentConfig c;
  try {
    c.load_file(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Format);
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  const auto unknown = write_temp("unknown.cfg", "train.nonsense = 1\n");
  EXPECT_EQ(code_of([&] { c.load_file(unknown); }), ErrorCode::InvalidArgument);
  const auto typed = write_temp("typed.cfg", "train.lr = fast\n");
  EXPECT_EQ(code_of([&] { c.load_file(typed); }), ErrorCode::InvalidArgument);
  try {
    c.load_file("/nonexistent/dir/x.cfg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Io);
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/x.cfg"), std::string::npos);
  }
}

TEST(Config, JsonEchoHasEveryKeyButWorkers) {
  ExperimentConfig c;
  c.workers = 3;
  const auto j = c.to_json();
  for (const auto& k : config_keys()) EXPECT_EQ(j.contains(k), k != "workers") << k;
  ExperimentConfig d;
  d.workers = 1;
  EXPECT_EQ(j.dump(), d.to_json().dump());
}

TEST(Config, ValuesAreParsedStrictly) {
  ExperimentConfig c;
  EXPECT_EQ(code_of([&] { c.set("train.batch_size", "-3"); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { c.set("loss.asl", "maybe"); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { c.set("encoder.head_init", "zeros"); }), ErrorCode::InvalidArgument);
  c.set("loss.asl", "off");
  EXPECT_FALSE(c.train.loss.components.asl);
  c.set("split.c_l", "1.5");
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::InvalidArgument);
}
