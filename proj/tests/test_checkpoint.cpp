#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "segstack/checkpoint.hpp"
#include "segstack/config.hpp"
#include "testutil.hpp"

using namespace segstack;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("segstack_ckpt_" + std::to_string(::getpid()) + "_" + name))
      .string();
}

}  // namespace

TEST(Checkpoint, RecordRoundTrip) {
  Rng rng(1);
  Tensor a = testutil::random_tensor({2, 3, 4, 5}, rng);
  Tensor b = testutil::random_tensor({1, 7, 1, 1}, rng);
  const std::string path = temp_path("roundtrip.ckpt");
  write_checkpoint(path, {{"block/weight", &a}, {"block/bias", &b}});

  auto records = read_checkpoint(path);
  ASSERT_EQ(records.size(), 2u);
  ASSERT_TRUE(records.count("block/weight"));
  ASSERT_EQ(records.at("block/weight").shape(), a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    ASSERT_EQ(records.at("block/weight").data()[i], a.data()[i]);
  for (std::int64_t i = 0; i < b.numel(); ++i)
    ASSERT_EQ(records.at("block/bias").data()[i], b.data()[i]);
  fs::remove(path);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const std::string path = temp_path("corrupt.ckpt");
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE1234";
  }
  EXPECT_THROW(read_checkpoint(path), RuntimeError);
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(kCheckpointMagic, 4);
    const std::uint32_t v = kCheckpointVersion;
    f.write(reinterpret_cast<const char*>(&v), 4);
    const std::uint32_t len = 10;
    f.write(reinterpret_cast<const char*>(&len), 4);
    f << "abc";  // truncated name
  }
  EXPECT_THROW(read_checkpoint(path), RuntimeError);
  EXPECT_THROW(read_checkpoint(temp_path("missing.ckpt")), InvalidArgument);
  fs::remove(path);
}

TEST(Checkpoint, ModelStateRoundTrip) {
  UNetConfig cfg{2, 4, 3, 2, 16};
  Rng rng(2);
  UNet net(cfg, rng);
  Tensor warmup = testutil::random_tensor({2, 3, 16, 16}, rng, 0.0f, 1.0f);
  net.forward(warmup, Mode::train);  // give running stats non-default values

  const std::string path = temp_path("model.ckpt");
  save_model(path, net);

  Rng rng2(99);  // different init; load must overwrite everything
  UNet restored(cfg, rng2);
  load_model(path, restored);
  EXPECT_TRUE(restored.bn_ready());

  Tensor x = testutil::random_tensor({1, 3, 16, 16}, rng, 0.0f, 1.0f);
  Tensor ya = net.forward(x, Mode::eval);
  Tensor yb = restored.forward(x, Mode::eval);
  for (std::int64_t i = 0; i < ya.numel(); ++i) ASSERT_EQ(ya.data()[i], yb.data()[i]);

  // wrong architecture: shape mismatch is an error
  UNetConfig other{2, 8, 3, 2, 16};
  Rng rng3(1);
  UNet wrong(other, rng3);
  EXPECT_THROW(load_model(path, wrong), InvalidArgument);
  fs::remove(path);
}

TEST(Checkpoint, OptimizerStateRoundTripContinuesExactly) {
  UNetConfig cfg{1, 2, 1, 0, 8};
  Rng rng(3);
  UNet net_a(cfg, rng);
  Rng rng_b(3);
  UNet net_b(cfg, rng_b);

  NadamState opt_a(net_a.parameters());
  Tensor x = testutil::random_tensor({2, 1, 8, 8}, rng, 0.0f, 1.0f);
  Tensor y({2, 1, 8, 8});
  for (std::int64_t i = 0; i < y.numel(); ++i) y.data()[i] = i % 2 ? 1.0f : 0.0f;

  auto one_step = [&](UNet& net, NadamState& opt) {
    zero_grads(net.parameters());
    Tape tape;
    Tensor out = net.forward(x, Mode::train, &tape);
    LossBreakdown lb = joint_loss(y, out, &tape);
    backward(lb.loss, tape);
    opt.step(net.parameters(), 1e-3f);
  };
  for (int i = 0; i < 4; ++i) one_step(net_a, opt_a);

  const std::string mpath = temp_path("opt_model.ckpt"), opath = temp_path("opt_state.ckpt");
  save_model(mpath, net_a);
  save_optimizer(opath, net_a, opt_a, 4);

  load_model(mpath, net_b);
  NadamState opt_b(net_b.parameters());
  const int epochs_done = load_optimizer(opath, net_b, opt_b);
  EXPECT_EQ(epochs_done, 4);
  EXPECT_EQ(opt_b.step_count(), opt_a.step_count());

  one_step(net_a, opt_a);
  one_step(net_b, opt_b);
  const auto& pa = net_a.parameters();
  const auto& pb = net_b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::int64_t j = 0; j < pa[i]->tensor.numel(); ++j)
      ASSERT_EQ(pa[i]->tensor.data()[j], pb[i]->tensor.data()[j]);
  fs::remove(mpath);
  fs::remove(opath);
}

TEST(Config, ProfilesAreValid) {
  RunConfig paper = RunConfig::paper_profile();
  paper.validate();
  EXPECT_EQ(paper.model.input_size, 224);
  EXPECT_EQ(paper.training.batch_size, 128);
  EXPECT_TRUE(paper.pipeline.tta);
  EXPECT_EQ(paper.training.level_schedules[0].total_epochs(), 100);

  RunConfig desk = RunConfig::desk_profile();
  desk.validate();
  EXPECT_EQ(desk.model.depth, 3);
  EXPECT_EQ(desk.model.base_filters, 16);
  EXPECT_EQ(desk.synth.tile, 512);
  EXPECT_EQ(desk.synth.count, 60);

  EXPECT_THROW(RunConfig::from_profile("gpu"), InvalidArgument);
}

TEST(Config, JsonOverridesAndUnknownKeys) {
  RunConfig cfg = RunConfig::desk_profile();
  json j = json::parse(R"({
    "model": {"depth": 2, "base_filters": 8},
    "training": {"seed": 77, "level_schedules": [[[3, 0.001]], [[2, 0.0001]]]},
    "pipeline": {"tta": false},
    "paths": {"dataset_root": "/tmp/x"}
  })");
  cfg.apply_json(j);
  EXPECT_EQ(cfg.model.depth, 2);
  EXPECT_EQ(cfg.model.base_filters, 8);
  EXPECT_EQ(cfg.training.seed, 77u);
  EXPECT_EQ(cfg.training.level_schedules[0].total_epochs(), 3);
  EXPECT_FALSE(cfg.pipeline.tta);
  EXPECT_EQ(cfg.paths.dataset_root, "/tmp/x");

  RunConfig cfg2 = RunConfig::desk_profile();
  EXPECT_THROW(cfg2.apply_json(json::parse(R"({"model": {"depht": 3}})")), InvalidArgument);
  EXPECT_THROW(cfg2.apply_json(json::parse(R"({"training": {"batchsize": 4}})")),
               InvalidArgument);
  EXPECT_THROW(cfg2.apply_json(json::parse(R"({"version": 9})")), InvalidArgument);
  EXPECT_THROW(cfg2.apply_json(json::parse(R"({"profile": "paper"})")), InvalidArgument);
  // invalid values are caught by validation
  EXPECT_THROW(cfg2.apply_json(json::parse(R"({"pipeline": {"scale_den": 3}})")),
               InvalidArgument);
}

TEST(Config, HashTracksContent) {
  RunConfig a = RunConfig::desk_profile();
  RunConfig b = RunConfig::desk_profile();
  EXPECT_EQ(a.hash(), b.hash());
  b.training.seed = 4242;
  EXPECT_NE(a.hash(), b.hash());
}
