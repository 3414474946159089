#include <cmath>
#include <vector>

#include "doctest.h"
#include "recal/trainer.hpp"
#include "support/oracles.hpp"

using namespace recal;

namespace {

ProbMatrix prob_matrix(const testing::Matrix& rows, bool requires_grad = false) {
  std::vector<double> flat;
  for (const auto& row : rows) flat.insert(flat.end(), row.begin(), row.end());
  return ProbMatrix::from_tensor(Tensor::from_values(
      {rows.size(), rows[0].size()}, std::move(flat), requires_grad));
}

Tensor random_batch(std::size_t m, std::size_t d, Rng& rng) {
  std::vector<double> v(m * d);
  for (auto& x : v) x = rng.uniform(-2.0, 2.0);
  return Tensor::from_values({m, d}, std::move(v));
}

TrainConfig basic_config(std::size_t k) {
  TrainConfig cfg;
  cfg.k = k;
  cfg.micro_batch = 8;
  cfg.accum_steps = 1;
  return cfg;
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig cfg = basic_config(3);
  CHECK_NOTHROW(cfg.validate());
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = basic_config(3);
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = basic_config(3);
  cfg.micro_batch = 1;
  cfg.accum_steps = 2;  // macro of 2 < k = 3
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("sgd_step hand recursions") {
  SUBCASE("plain gradient step") {
    Model model({LinearSpec{1, 1}}, 0, {1}, 0);
    model.parameters()[0].tensor.mutable_values() = {1.0};
    SgdState opt = SgdState::for_model(model);
    // Force gradients by hand: d(theta)=2 for the weight, 0 for the bias.
    Tensor loss = sum(mul(model.parameters()[0].tensor, Tensor::scalar(2.0)));
    backward(loss);
    backward(sum(mul(model.parameters()[1].tensor, Tensor::scalar(0.0))));
    sgd_step(model, opt, 0.1, 0.0);
    CHECK(model.parameters()[0].tensor.at(0) == doctest::Approx(0.8));
  }
  SUBCASE("momentum accumulates velocity") {
    Model model({LinearSpec{1, 1}}, 0, {1}, 0);
    model.parameters()[0].tensor.mutable_values() = {0.0};
    model.parameters()[1].tensor.mutable_values() = {0.0};
    SgdState opt = SgdState::for_model(model);
    for (int step = 0; step < 2; ++step) {
      backward(add(sum(model.parameters()[0].tensor),
                   sum(mul(model.parameters()[1].tensor, Tensor::scalar(0.0)))));
      sgd_step(model, opt, 1.0, 0.9);
    }
    // v1 = 1 -> theta -1; v2 = 1.9 -> theta -2.9
    CHECK(model.parameters()[0].tensor.at(0) == doctest::Approx(-2.9));
  }
  SUBCASE("zero gradients leave parameters unchanged from rest") {
    Model model({LinearSpec{2, 2}}, 0, {2}, 7);
    const auto before = model.parameters()[0].tensor.values();
    SgdState opt = SgdState::for_model(model);
    for (auto& p : model.parameters()) {
      backward(sum(mul(p.tensor, Tensor::scalar(0.0))));
    }
    sgd_step(model, opt, 0.5, 0.9);
    CHECK(model.parameters()[0].tensor.values() == before);
  }
  SUBCASE("missing gradient names the parameter") {
    Model model({LinearSpec{1, 1}}, 0, {1}, 0);
    SgdState opt = SgdState::for_model(model);
    CHECK_THROWS_WITH_AS(sgd_step(model, opt, 0.1, 0.0),
                         doctest::Contains("layer0.weight"), ContractError);
  }
}

TEST_CASE("accumulator running state") {
  SUBCASE("one-hot micro-batch") {
    MacroBatchAccumulator acc(2, AccumMode::literal);
    acc.accumulate(prob_matrix({{1, 0}, {0, 1}}));
    CHECK(acc.count() == 2);
    CHECK(std::fabs(acc.h_phi_running()) <= 1e-15);
    CHECK(acc.h_psi_running() == std::vector<double>{1, 1});
  }
  SUBCASE("uniform micro-batch matches the direct scalar evaluation") {
    MacroBatchAccumulator acc(2, AccumMode::literal);
    acc.accumulate(prob_matrix({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}}));
    CHECK(acc.h_phi_running() ==
          doctest::Approx(-4.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(acc.h_psi_running()[0] == doctest::Approx(2.0));
    CHECK(acc.h_psi_running()[1] == doctest::Approx(2.0));
  }
  SUBCASE("accumulation order does not change the state") {
    auto a = prob_matrix({{0.9, 0.1}, {0.3, 0.7}});
    auto b = prob_matrix({{0.2, 0.8}, {0.6, 0.4}});
    MacroBatchAccumulator first(2, AccumMode::literal);
    first.accumulate(a);
    first.accumulate(b);
    MacroBatchAccumulator second(2, AccumMode::literal);
    second.accumulate(b);
    second.accumulate(a);
    CHECK(first.h_phi_running() == doctest::Approx(second.h_phi_running()));
    CHECK(first.h_psi_running()[0] ==
          doctest::Approx(second.h_psi_running()[0]));
    CHECK(first.count() == second.count());
  }
  SUBCASE("structural size: k+1 numeric accumulators plus the count") {
    MacroBatchAccumulator acc(5, AccumMode::literal);
    CHECK(acc.numeric_state_size() == 6);
    CHECK(acc.h_psi_running().size() == 5);
  }
  SUBCASE("column mismatch and empty finalize") {
    MacroBatchAccumulator acc(3, AccumMode::exact);
    CHECK_THROWS_AS(acc.accumulate(prob_matrix({{0.5, 0.5}})), ShapeError);
    CHECK_THROWS_AS(acc.build_loss(1.0), StateError);
  }
}

TEST_CASE("accumulated loss equals the single-batch loss in both modes") {
  Rng rng(401);
  for (AccumMode mode : {AccumMode::literal, AccumMode::exact}) {
    testing::Matrix rows(12, std::vector<double>(3));
    for (auto& row : rows) {
      double total = 0.0;
      for (auto& v : row) {
        v = rng.uniform(0.05, 1.0);
        total += v;
      }
      for (auto& v : row) v /= total;
    }
    auto whole = prob_matrix(rows);
    const double direct = recal_loss(whole, 1.0).total.value();

    ComputationRecord record;
    RecordScope scope(record);
    MacroBatchAccumulator acc(3, mode);
    for (std::size_t chunk = 0; chunk < 3; ++chunk) {
      testing::Matrix part(rows.begin() + chunk * 4, rows.begin() + chunk * 4 + 4);
      acc.accumulate(prob_matrix(part));
    }
    auto breakdown = acc.build_loss(1.0);
    CHECK(breakdown.total.value() == doctest::Approx(direct).epsilon(1e-9));
    record.clear();
  }
}

TEST_CASE("exact mode reproduces big-batch gradients, literal does not") {
  // Batch-norm-free model so micro-batch forwards match the big batch.
  const std::size_t m = 12, d = 4, k = 3, t = 3;
  Rng rng(409);
  Tensor big = random_batch(m, d, rng);

  auto grads_for = [&](AccumMode mode, bool accumulate) {
    // No batch-norm anywhere (the builder's head always has one).
    Model model({LinearSpec{d, 6}, ReluSpec{}, LinearSpec{6, k}}, 2, {d}, 433);
    ComputationRecord record;
    RecordScope scope(record);
    if (!accumulate) {
      backward(recal_loss(softmax_rows(model.forward(big)), 1.0).total);
    } else {
      MacroBatchAccumulator acc(k, mode);
      for (std::size_t chunk = 0; chunk < t; ++chunk) {
        std::vector<double> v;
        const std::size_t rows = m / t;
        for (std::size_t i = 0; i < rows * d; ++i) {
          v.push_back(big.at(chunk * rows * d + i));
        }
        Tensor micro = Tensor::from_values({rows, d}, std::move(v));
        acc.accumulate(softmax_rows(model.forward(micro)));
      }
      backward(acc.build_loss(1.0).total);
    }
    std::vector<std::vector<double>> grads;
    for (auto& p : model.parameters()) {
      grads.push_back(p.tensor.has_grad()
                          ? p.tensor.grad()
                          : std::vector<double>(p.tensor.numel(), 0.0));
    }
    return grads;
  };

  const auto big_grads = grads_for(AccumMode::exact, false);
  const auto exact_grads = grads_for(AccumMode::exact, true);
  const auto literal_grads = grads_for(AccumMode::literal, true);

  double exact_gap = 0.0, literal_gap = 0.0;
  for (std::size_t i = 0; i < big_grads.size(); ++i) {
    for (std::size_t j = 0; j < big_grads[i].size(); ++j) {
      exact_gap = std::max(exact_gap,
                           std::fabs(big_grads[i][j] - exact_grads[i][j]));
      literal_gap = std::max(literal_gap,
                             std::fabs(big_grads[i][j] - literal_grads[i][j]));
    }
  }
  CHECK(exact_gap <= 1e-9);
  CHECK(literal_gap > 1e-6);  // biased by design
}

TEST_CASE("t=1 finalize is bit-identical to the simple training step") {
  for (AccumMode mode : {AccumMode::literal, AccumMode::exact}) {
    Rng rng(419);
    Tensor batch = random_batch(8, 3, rng);
    TrainConfig cfg = basic_config(2);
    cfg.lr = 0.05;
    cfg.accum_mode = mode;

    Model simple = build_model("mlp:5", {3}, 2, true, false, 421);
    SgdState opt_a = SgdState::for_model(simple);
    auto direct = train_step_simple(simple, batch, opt_a, cfg);

    Model accumulated = build_model("mlp:5", {3}, 2, true, false, 421);
    SgdState opt_b = SgdState::for_model(accumulated);
    LossBreakdown via_acc;
    {
      ComputationRecord record;
      RecordScope scope(record);
      MacroBatchAccumulator acc(2, mode);
      acc.accumulate(softmax_rows(accumulated.forward(batch)));
      via_acc = finalize_macrobatch(acc, accumulated, opt_b, cfg);
    }

    CHECK(via_acc.total.value() == direct.total.value());
    for (std::size_t i = 0; i < simple.parameters().size(); ++i) {
      CHECK(simple.parameters()[i].tensor.values() ==
            accumulated.parameters()[i].tensor.values());
    }
  }
}

TEST_CASE("simple step consistency and no-op on zero learning rate") {
  Rng rng(431);
  Tensor batch = random_batch(8, 2, rng);
  TrainConfig cfg = basic_config(2);
  cfg.lr = 1e-9;  // tiny but positive

  Model a = build_model("mlp:4", {2}, 2, true, true, 5);
  Model b = build_model("mlp:4", {2}, 2, true, true, 5);
  SgdState opt_a = SgdState::for_model(a);
  SgdState opt_b = SgdState::for_model(b);
  auto la = train_step_simple(a, batch, opt_a, cfg);
  auto lb = train_step_simple(b, batch, opt_b, cfg);
  CHECK(la.total.value() == lb.total.value());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters()[i].tensor.values() == b.parameters()[i].tensor.values());
  }
}

TEST_CASE("one small-lr step decreases the loss on the same batch") {
  Dataset blobs = synth_blobs(16, 2, 2, 10.0, 1.0, 443);
  Dataset normalized = normalize_dataset(blobs);
  Tensor batch = normalized.stack_all();

  TrainConfig cfg = basic_config(2);
  cfg.lr = 1e-3;
  Model model = build_model("mlp:8", {2}, 2, true, false, 449);

  auto loss_on_batch = [&](Model& m) {
    ComputationRecord record;
    RecordScope scope(record);
    double value = recal_loss(softmax_rows(m.forward(batch)), 1.0).total.value();
    record.clear();
    return value;
  };

  const double before = loss_on_batch(model);
  SgdState opt = SgdState::for_model(model);
  train_step_simple(model, batch, opt, cfg);
  const double after = loss_on_batch(model);
  CHECK(after < before);
}

TEST_CASE("loss reported by the step matches recal_loss on the forward") {
  Rng rng(457);
  Tensor batch = random_batch(6, 2, rng);
  TrainConfig cfg = basic_config(2);
  Model model = build_model("mlp:4", {2}, 2, true, false, 461);
  Model twin = build_model("mlp:4", {2}, 2, true, false, 461);

  SgdState opt = SgdState::for_model(model);
  auto reported = train_step_simple(model, batch, opt, cfg);
  // Same forward on the untouched twin.
  ComputationRecord record;
  RecordScope scope(record);
  auto direct = recal_loss(softmax_rows(twin.forward(batch)), cfg.lambda);
  CHECK(reported.total.value() == direct.total.value());
  record.clear();
}

TEST_CASE("train loop basics") {
  SUBCASE("zero epochs do nothing") {
    Dataset blobs = synth_blobs(10, 2, 2, 8.0, 1.0, 463);
    Model model = build_model("mlp:4", {2}, 2, true, true, 467);
    const auto before = model.parameters()[0].tensor.values();
    TrainConfig cfg = basic_config(2);
    cfg.max_epochs = 0;
    auto result = train(model, blobs, cfg);
    CHECK(result.history.empty());
    CHECK(model.parameters()[0].tensor.values() == before);
  }
  SUBCASE("history stays finite and deterministic per seed") {
    Dataset blobs = normalize_dataset(synth_blobs(20, 2, 2, 10.0, 1.0, 479));
    auto run = [&]() {
      Model model = build_model("mlp:8", {2}, 2, true, true, 487);
      TrainConfig cfg = basic_config(2);
      cfg.lr = 1e-3;
      cfg.max_epochs = 5;
      cfg.micro_batch = 8;
      cfg.accum_steps = 2;
      cfg.seed = 11;
      return train(model, blobs, cfg).history;
    };
    auto h1 = run();
    auto h2 = run();
    REQUIRE(h1.size() == h2.size());
    for (std::size_t i = 0; i < h1.size(); ++i) {
      CHECK(std::isfinite(h1[i].loss));
      CHECK(h1[i].loss == h2[i].loss);
      CHECK(h1[i].h_phi == h2[i].h_phi);
      REQUIRE(h1[i].nmi.has_value());
      CHECK(*h1[i].nmi == *h2[i].nmi);
    }
  }
  SUBCASE("mismatched k is rejected") {
    Dataset blobs = synth_blobs(10, 2, 2, 8.0, 1.0, 491);
    Model model = build_model("mlp:4", {2}, 3, true, true, 499);
    TrainConfig cfg = basic_config(2);
    CHECK_THROWS_AS(train(model, blobs, cfg), ConfigError);
  }
}

TEST_CASE("blob clustering reaches high NMI on a fixed seed") {
  Dataset blobs = normalize_dataset(synth_blobs(200, 3, 2, 12.0, 1.0, 503));
  Model model = build_model("mlp:16", {2}, 3, true, true, 509);
  TrainConfig cfg;
  cfg.k = 3;
  cfg.lambda = 1.0;
  cfg.lr = 1e-3;
  cfg.momentum = 0.9;
  cfg.micro_batch = 120;
  cfg.accum_steps = 5;
  cfg.max_epochs = 120;
  cfg.seed = 1;
  auto result = train(model, blobs, cfg);
  REQUIRE(!result.history.empty());
  REQUIRE(result.history.back().nmi.has_value());
  CHECK(*result.history.back().nmi >= 0.8);
}
