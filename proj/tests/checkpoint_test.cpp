#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "recal/checkpoint.hpp"
#include "recal/trainer.hpp"

using namespace recal;

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

}  // namespace

TEST_CASE("checkpoint round-trips a trained model bit-exactly") {
  const auto path = std::filesystem::temp_directory_path() / "recal_test.rclm";

  // Train a couple of steps so parameters and running stats are nontrivial.
  Dataset blobs = normalize_dataset(synth_blobs(20, 2, 2, 10.0, 1.0, 701));
  Model model = build_model("mlp:6", {2}, 2, true, true, 709);
  TrainConfig cfg;
  cfg.k = 2;
  cfg.lr = 1e-3;
  cfg.micro_batch = 8;
  cfg.max_epochs = 2;
  train(model, blobs, cfg);

  save_checkpoint(model, blobs.stats, path.string());
  Checkpoint loaded = load_checkpoint(path.string());

  CHECK(loaded.model.input_shape() == model.input_shape());
  CHECK(loaded.model.feature_boundary() == model.feature_boundary());
  CHECK(loaded.model.output_dim() == model.output_dim());
  auto original_state = model.named_state();
  auto loaded_state = loaded.model.named_state();
  REQUIRE(original_state.size() == loaded_state.size());
  for (std::size_t i = 0; i < original_state.size(); ++i) {
    CHECK(loaded_state[i].name == original_state[i].name);
    CHECK(loaded_state[i].tensor.values() == original_state[i].tensor.values());
  }
  REQUIRE(loaded.stats.has_value());
  CHECK(loaded.stats->mu == blobs.stats->mu);
  CHECK(loaded.stats->sigma == blobs.stats->sigma);

  // Same forward pass after reload.
  model.set_mode(Mode::eval);
  loaded.model.set_mode(Mode::eval);
  Tensor x = blobs.stack({0, 1, 2});
  CHECK(loaded.model.forward(x).values() == model.forward(x).values());

  // Saving the reloaded model reproduces identical bytes.
  const auto path2 = std::filesystem::temp_directory_path() / "recal_test2.rclm";
  save_checkpoint(loaded.model, loaded.stats, path2.string());
  CHECK(slurp(path) == slurp(path2));

  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("conv checkpoints round-trip") {
  const auto path = std::filesystem::temp_directory_path() / "recal_conv.rclm";
  Model model = build_model("conv:4,8", {1, 8, 8}, 3, false, true, 719);
  save_checkpoint(model, std::nullopt, path.string());
  Checkpoint loaded = load_checkpoint(path.string());
  CHECK_FALSE(loaded.stats.has_value());
  CHECK(loaded.model.specs().size() == model.specs().size());
  model.set_mode(Mode::eval);
  loaded.model.set_mode(Mode::eval);
  Tensor x = Tensor::full({2, 1, 8, 8}, 0.25);
  CHECK(loaded.model.forward(x).values() == model.forward(x).values());
  std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto path = std::filesystem::temp_directory_path() / "recal_bad.rclm";
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(path.string()), FormatError);

  {
    std::ofstream out(path, std::ios::binary);
    out.write("RCLM", 4);
    const std::uint32_t version = 42;
    out.write(reinterpret_cast<const char*>(&version), 4);
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path.string()),
                       doctest::Contains("version"), FormatError);
  std::filesystem::remove(path);
}
