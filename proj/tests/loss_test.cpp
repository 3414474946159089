#include <cmath>
#include <vector>

#include "doctest.h"
#include "recal/loss.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace recal;

namespace {

ProbMatrix prob_matrix(const testing::Matrix& rows, bool requires_grad = false) {
  std::vector<double> flat;
  for (const auto& row : rows) flat.insert(flat.end(), row.begin(), row.end());
  return ProbMatrix::from_tensor(Tensor::from_values(
      {rows.size(), rows[0].size()}, std::move(flat), requires_grad));
}

ProbMatrix random_prob_matrix(std::size_t m, std::size_t k, Rng& rng) {
  std::vector<double> flat(m * k);
  for (std::size_t i = 0; i < m; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      flat[i * k + j] = rng.uniform(1e-6, 1.0);
      row_sum += flat[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) flat[i * k + j] /= row_sum;
  }
  return ProbMatrix::from_tensor(Tensor::from_values({m, k}, std::move(flat)));
}

}  // namespace

TEST_CASE("classification entropy") {
  SUBCASE("one-hot rows give zero") {
    auto p = prob_matrix({{1, 0}, {0, 1}, {1, 0}});
    CHECK(std::fabs(classification_entropy(p).value()) <= 1e-15);
  }
  SUBCASE("uniform rows give ln K") {
    auto p = prob_matrix({{0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}});
    CHECK(classification_entropy(p).value() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("matches the independent scalar oracle") {
    testing::Matrix rows = {{0.9, 0.1}, {0.2, 0.8}};
    auto p = prob_matrix(rows);
    CHECK(classification_entropy(p).value() ==
          doctest::Approx(testing::oracle_h_phi(rows)).epsilon(1e-12));
  }
}

TEST_CASE("class marginal") {
  SUBCASE("symmetric rows give the uniform marginal") {
    auto p = prob_matrix({{1, 0}, {0, 1}});
    CHECK(class_marginal(p).values() == std::vector<double>{0.5, 0.5});
  }
  SUBCASE("fully skewed rows give a one-hot marginal") {
    auto p = prob_matrix({{1, 0, 0}, {1, 0, 0}, {1, 0, 0}});
    CHECK(class_marginal(p).values() == std::vector<double>{1, 0, 0});
  }
  SUBCASE("random matrix matches independent column means") {
    Rng rng(101);
    auto p = random_prob_matrix(5, 3, rng);
    testing::Matrix rows(5, std::vector<double>(3));
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 3; ++j) rows[i][j] = p.tensor().at(i * 3 + j);
    }
    const auto expected = testing::oracle_class_marginal(rows);
    const auto actual = class_marginal(p).values();
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(actual[j] == doctest::Approx(expected[j]).epsilon(1e-12));
    }
  }
  SUBCASE("marginal sums to one") {
    Rng rng(103);
    auto p = random_prob_matrix(9, 4, rng);
    Tensor marginal = class_marginal(p);
    double total = 0.0;
    for (double v : marginal.values()) total += v;
    CHECK(std::fabs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("class entropy") {
  CHECK(std::fabs(class_entropy(Tensor::from_values({3}, {1, 0, 0})).value()) <=
        1e-15);
  CHECK(class_entropy(Tensor::from_values({4}, {0.25, 0.25, 0.25, 0.25})).value() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(class_entropy(Tensor::from_values({3}, {0.5, 0.25, 0.25})).value() ==
        doctest::Approx(1.5 * std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(class_entropy(Tensor::from_values({2}, {0.9, 0.3})),
                  DomainError);
}

TEST_CASE("recal loss endpoints") {
  SUBCASE("confident balanced assignment reaches -ln K") {
    auto p = prob_matrix({{1, 0}, {0, 1}, {1, 0}, {0, 1}});
    auto breakdown = recal_loss(p, 1.0);
    CHECK(breakdown.total.value() ==
          doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("uniform posteriors give (lambda-1) ln K") {
    auto p = prob_matrix({{0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}});
    auto b1 = recal_loss(p, 1.0);
    CHECK(std::fabs(b1.total.value()) <= 1e-12);
    auto b2 = recal_loss(p, 2.0);
    CHECK(b2.total.value() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("degenerate single-cluster one-hot loses to balanced") {
    auto p = prob_matrix({{1, 0}, {1, 0}, {1, 0}, {1, 0}});
    auto breakdown = recal_loss(p, 1.0);
    CHECK(std::fabs(breakdown.total.value()) <= 1e-12);
    CHECK(breakdown.total.value() > -std::log(2.0));
  }
  SUBCASE("lambda must be positive") {
    auto p = prob_matrix({{1, 0}, {0, 1}});
    CHECK_THROWS_AS(recal_loss(p, 0.0), ConfigError);
    CHECK_THROWS_AS(recal_loss(p, -1.0), ConfigError);
  }
}

TEST_CASE("loss breakdown identity and entropy bounds") {
  Rng rng(107);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.below(12);
    const std::size_t k = 2 + rng.below(4);
    auto p = random_prob_matrix(m, k, rng);
    auto breakdown = recal_loss(p, 1.5);
    const double ln_k = std::log(static_cast<double>(k));
    CHECK(breakdown.h_phi.value() >= -1e-12);
    CHECK(breakdown.h_phi.value() <= ln_k + 1e-9);
    CHECK(breakdown.h_psi.value() >= -1e-12);
    CHECK(breakdown.h_psi.value() <= ln_k + 1e-9);
    CHECK(std::fabs(breakdown.total.value() -
                    (1.5 * breakdown.h_phi.value() - breakdown.h_psi.value())) <=
          1e-12);
    // Jensen: the marginal's entropy dominates the mean row entropy.
    CHECK(breakdown.h_psi.value() >= breakdown.h_phi.value() - 1e-9);
  }
}

TEST_CASE("loss is invariant under row and column permutations") {
  Rng rng(109);
  auto p = random_prob_matrix(6, 3, rng);
  auto base = recal_loss(p, 1.0);

  // Swap two columns and two rows.
  std::vector<double> permuted(p.tensor().values());
  for (std::size_t i = 0; i < 6; ++i) std::swap(permuted[i * 3], permuted[i * 3 + 2]);
  for (std::size_t j = 0; j < 3; ++j) std::swap(permuted[0 + j], permuted[4 * 3 + j]);
  auto q = ProbMatrix::from_tensor(Tensor::from_values({6, 3}, permuted));
  auto other = recal_loss(q, 1.0);

  CHECK(base.h_phi.value() == doctest::Approx(other.h_phi.value()).epsilon(1e-12));
  CHECK(base.h_psi.value() == doctest::Approx(other.h_psi.value()).epsilon(1e-12));
  CHECK(base.total.value() == doctest::Approx(other.total.value()).epsilon(1e-12));
}

TEST_CASE("loss gradient w.r.t. logits matches finite differences") {
  Rng rng(113);
  std::vector<double> v(8 * 3);
  for (auto& x : v) x = rng.uniform(-2.0, 2.0);
  Tensor logits = Tensor::from_values({8, 3}, v, true);
  auto result = testing::gradcheck(
      [&]() { return recal_loss(softmax_rows(logits), 1.0).total; }, {logits});
  CHECK_MESSAGE(result.ok, result.detail);
}

TEST_CASE("end-to-end gradient check through a 2-layer model") {
  Rng rng(127);
  Model model = build_model("mlp:6", {4}, 3, true, true, 131);
  std::vector<double> v(8 * 4);
  for (auto& x : v) x = rng.uniform(-2.0, 2.0);
  Tensor batch = Tensor::from_values({8, 4}, v);

  std::vector<Tensor> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);
  auto result = testing::gradcheck(
      [&]() { return recal_loss(softmax_rows(model.forward(batch)), 1.0).total; },
      params);
  CHECK_MESSAGE(result.ok, result.detail);
}

TEST_CASE("loss minimizer structure by brute force (M=4, K=2)") {
  // Enumerate all one-hot assignments; balanced ones must uniquely minimize.
  const std::size_t m = 4, k = 2;
  double best = 1e300;
  std::vector<double> losses;
  std::vector<bool> balanced;
  for (std::size_t code = 0; code < 16; ++code) {
    testing::Matrix rows(m, std::vector<double>(k, 0.0));
    std::vector<std::size_t> counts(k, 0);
    std::size_t rest = code;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t label = rest % k;
      rest /= k;
      rows[i][label] = 1.0;
      ++counts[label];
    }
    auto breakdown = recal_loss(prob_matrix(rows), 1.0);
    losses.push_back(breakdown.total.value());
    balanced.push_back(counts[0] == counts[1]);
    best = std::min(best, breakdown.total.value());
  }
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (balanced[i]) {
      CHECK(losses[i] == doctest::Approx(best).epsilon(1e-12));
    } else {
      CHECK(losses[i] > best + 1e-9);
    }
  }
}
