#include <gtest/gtest.h>

#include <random>

#include "latent_chain/model.hpp"
#include "latent_chain/replication.hpp"
#include "oracles.hpp"

using namespace latent_chain;

namespace {

double triple_sum(const ParameterSet& p, int h, int i, int j, int k) {
  const int A = p.dims.classes;
  double s = 0.0;
  for (int a = 0; a < A; ++a)
    for (int b = 0; b < A; ++b)
      for (int c = 0; c < A; ++c)
        s += p.delta_at(h, a) * p.rho_at(0, h, a, i) * p.tau_at(0, h, a, b) * p.rho_at(1, h, b, j) *
             p.tau_at(1, h, b, c) * p.rho_at(2, h, c, k);
  return s;
}

ParameterSet deterministic(int J, int T) {
  ParameterSet p({1, J, T, J});
  std::fill(p.delta.begin(), p.delta.end(), 0.0);
  p.delta_at(0, 0) = 1.0;
  for (int t = 0; t < T; ++t)
    for (int a = 0; a < J; ++a)
      for (int j = 0; j < J; ++j) p.rho_at(t, 0, a, j) = a == j ? 1.0 : 0.0;
  for (int t = 0; t + 1 < T; ++t)
    for (int a = 0; a < J; ++a)
      for (int b = 0; b < J; ++b) p.tau_at(t, 0, a, b) = a == b ? 1.0 : 0.0;
  return p;
}

}  // namespace

TEST(ModelCore, PublishedEstimatesCell111) {
  const auto p = replication::table3_parameters();
  const int y[] = {0, 0, 0};
  const double v = cell_probability(p, 0, y);
  EXPECT_NEAR(v, 0.092, 0.004);
  EXPECT_NEAR(v, triple_sum(p, 0, 0, 0, 0), 1e-15);
}

TEST(ModelCore, CellProbabilityMatchesTripleSum) {
  std::mt19937_64 gen(1);
  for (int rep = 0; rep < 20; ++rep) {
    const auto p = oracle::random_parameters(gen, {2, 3, 3, 3});
    for (int h = 0; h < 2; ++h)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          for (int k = 0; k < 3; ++k) {
            const int y[] = {i, j, k};
            EXPECT_NEAR(cell_probability(p, h, y), triple_sum(p, h, i, j, k), 1e-15);
          }
  }
}

TEST(ModelCore, DeterministicChain) {
  const auto p = deterministic(3, 4);
  const auto probs = pattern_probabilities(p, 0);
  EXPECT_EQ(probs[0], 1.0);
  for (std::size_t i = 1; i < probs.size(); ++i) EXPECT_EQ(probs[i], 0.0);
}

TEST(ModelCore, PatternProbabilitiesSumToOne) {
  std::mt19937_64 gen(2);
  for (int rep = 0; rep < 50; ++rep) {
    const auto d = oracle::random_dims(gen, 4, 5, 4);
    const auto p = oracle::random_parameters(gen, d, 0.1);
    for (int h = 0; h < d.groups; ++h) {
      const auto probs = pattern_probabilities(p, h);
      EXPECT_NEAR(std::accumulate(probs.begin(), probs.end(), 0.0), 1.0, 1e-10);
    }
  }
}

TEST(ModelCore, ForwardBackwardMatchesEnumeration) {
  std::mt19937_64 gen(3);
  for (int rep = 0; rep < 300; ++rep) {
    const auto d = oracle::random_dims(gen, 4, 5, 4);
    const auto p = oracle::random_parameters(gen, d, rep % 3 == 0 ? 0.2 : 0.0);
    const auto y = oracle::random_pattern(gen, d);
    EXPECT_LE(oracle::forward_backward_error(p, 0, y), 1e-12);
  }
}

TEST(ModelCore, ForwardBackwardLikelihoodEqualsCellProbability) {
  std::mt19937_64 gen(4);
  const auto p = oracle::random_parameters(gen, {2, 3, 3, 3});
  for (std::uint64_t i = 0; i < 27; ++i) {
    const auto y = pattern_from_index(i, 3, 3);
    const auto fb = forward_backward(p, 1, y);
    EXPECT_LE(oracle::rel_diff(fb.likelihood, cell_probability(p, 1, y)), 1e-12);
  }
}

TEST(ModelCore, PosteriorsNormalize) {
  std::mt19937_64 gen(5);
  const auto p = oracle::random_parameters(gen, {1, 3, 4, 3});
  const auto fb = forward_backward(p, 0, std::vector<int>{0, 2, 1, 1});
  ASSERT_EQ(fb.status, PosteriorStatus::ok);
  for (int t = 0; t < 4; ++t) {
    double s = 0.0;
    for (int a = 0; a < 3; ++a) s += fb.state(t, a);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  for (int t = 0; t < 3; ++t) {
    double s = 0.0;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) s += fb.pair(t, a, b);
    EXPECT_NEAR(s, 1.0, 1e-12);
    for (int a = 0; a < 3; ++a) {
      double row = 0.0;
      for (int b = 0; b < 3; ++b) row += fb.pair(t, a, b);
      EXPECT_NEAR(row, fb.state(t, a), 1e-12);
    }
  }
}

TEST(ModelCore, UniformParametersGiveUniformPosteriors) {
  const ParameterSet p({1, 3, 3, 4});
  for (std::uint64_t i = 0; i < 27; ++i) {
    const auto fb = forward_backward(p, 0, pattern_from_index(i, 3, 3));
    for (int t = 0; t < 3; ++t)
      for (int a = 0; a < 4; ++a) EXPECT_NEAR(fb.state(t, a), 0.25, 1e-15);
  }
}

TEST(ModelCore, SingleOccasionBayesRule) {
  std::mt19937_64 gen(6);
  const auto p = oracle::random_parameters(gen, {1, 4, 1, 3});
  for (int y = 0; y < 4; ++y) {
    const auto fb = forward_backward(p, 0, std::vector<int>{y});
    double norm = 0.0;
    for (int a = 0; a < 3; ++a) norm += p.delta_at(0, a) * p.rho_at(0, 0, a, y);
    for (int a = 0; a < 3; ++a) EXPECT_NEAR(fb.state(0, a), p.delta_at(0, a) * p.rho_at(0, 0, a, y) / norm, 1e-15);
    EXPECT_TRUE(fb.pairs.empty());
  }
}

TEST(ModelCore, ZeroLikelihoodSignalled) {
  const auto p = deterministic(3, 3);
  const auto fb = forward_backward(p, 0, std::vector<int>{0, 1, 0});
  EXPECT_EQ(fb.status, PosteriorStatus::zero_likelihood);
  EXPECT_EQ(fb.likelihood, 0.0);
  EXPECT_TRUE(fb.states.empty());
}

TEST(ModelCore, IndexErrors) {
  const ParameterSet p({1, 3, 3, 2});
  EXPECT_THROW(cell_probability(p, 1, std::vector<int>{0, 0, 0}), std::out_of_range);
  EXPECT_THROW(cell_probability(p, 0, std::vector<int>{0, 0}), std::out_of_range);
  EXPECT_THROW(cell_probability(p, 0, std::vector<int>{0, 3, 0}), std::out_of_range);
}

TEST(ModelCore, LongChainScales) {
  std::mt19937_64 gen(7);
  const auto p = oracle::random_parameters(gen, {1, 4, 400, 3});
  std::vector<int> y(400);
  for (auto& v : y) v = std::uniform_int_distribution<int>(0, 3)(gen);
  const auto fb = forward_backward(p, 0, y);
  ASSERT_EQ(fb.status, PosteriorStatus::ok);
  EXPECT_TRUE(std::isfinite(fb.log_likelihood));
  EXPECT_LT(fb.log_likelihood, -300.0);
}

TEST(ModelCore, ExpectedFrequenciesOfPublishedEstimates) {
  const auto table = replication::published_table1();
  const auto e = expected_frequencies(replication::table3_parameters(), table);
  EXPECT_NEAR(e.at(0, 0), 1474.0 * 0.092, 1474.0 * 0.004);
  EXPECT_NEAR(e.total(0), 1474.0, 1e-9);
  EXPECT_NEAR(e.total(1), 480.0, 1e-9);
  for (const auto& group : e.cells)
    for (double v : group) EXPECT_GE(v, 0.0);
}

TEST(ModelCore, ExpectedFrequenciesDimensionMismatch) {
  const auto table = replication::published_table1();
  EXPECT_THROW(expected_frequencies(ParameterSet({2, 3, 2, 3}), table), ModelError);
}

TEST(ModelCore, JointTableMargins) {
  std::mt19937_64 gen(8);
  for (int rep = 0; rep < 20; ++rep) {
    const auto d = oracle::random_dims(gen, 3, 4, 3);
    const auto p = oracle::random_parameters(gen, d, 0.1);
    const auto jt = joint_pattern_table(p, 0);
    double grand = 0.0;
    for (std::uint64_t i = 0; i < jt.num_patterns; ++i) {
      double row = 0.0;
      for (std::uint64_t k = 0; k < jt.num_paths; ++k) row += jt.at(i, k);
      grand += row;
      EXPECT_NEAR(row, cell_probability(p, 0, pattern_from_index(i, d.categories, d.occasions)), 1e-12);
    }
    EXPECT_NEAR(grand, 1.0, 1e-10);
    const auto paths = jt.column_sums();
    for (std::uint64_t k = 0; k < jt.num_paths; ++k) {
      const auto path = pattern_from_index(k, d.classes, d.occasions);
      double w = p.delta_at(0, path[0]);
      for (int t = 1; t < d.occasions; ++t) w *= p.tau_at(t - 1, 0, path[t - 1], path[t]);
      EXPECT_NEAR(paths[k], w, 1e-12);
    }
  }
}

TEST(ModelCore, JointTableOfPublishedEstimatesNormalizes) {
  const auto jt = joint_pattern_table(replication::table3_parameters(), 0);
  double total = 0.0;
  for (double v : jt.mass) total += v;
  EXPECT_NEAR(total, 1.0, 1e-10);
}

TEST(ModelCore, ManifestJointTableIsDiagonal) {
  std::mt19937_64 gen(9);
  auto p = oracle::random_parameters(gen, {1, 3, 3, 3});
  for (int t = 0; t < 3; ++t)
    for (int a = 0; a < 3; ++a)
      for (int j = 0; j < 3; ++j) p.rho_at(t, 0, a, j) = a == j ? 1.0 : 0.0;
  const auto jt = joint_pattern_table(p, 0);
  for (std::uint64_t i = 0; i < jt.num_patterns; ++i)
    for (std::uint64_t k = 0; k < jt.num_paths; ++k)
      if (i != k) {
        EXPECT_EQ(jt.at(i, k), 0.0);
      }
}

TEST(ModelCore, ValidatePublishedEstimates) {
  EXPECT_TRUE(validate(replication::main_spec(), replication::table3_parameters()).ok);
}

TEST(ModelCore, ValidateReportsRowSum) {
  auto p = replication::table3_parameters();
  p.tau_at(1, 0, 0, 0) += 0.02;
  const auto r = validate(replication::main_spec(), p);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.message.find("tau[t2->t3, group 1, from class 1]"), std::string::npos) << r.message;
  EXPECT_NE(r.message.find("1.02"), std::string::npos) << r.message;
}

TEST(ModelCore, ValidateReportsFix) {
  ModelSpec spec = replication::main_spec();
  spec.constraints.fixes.push_back({{RowRef::tau(0, 0, 1), 0}, 0.0});
  auto p = replication::table3_parameters();
  ASSERT_TRUE(validate(spec, p).ok);
  p.tau_at(0, 0, 1, 0) = 0.1;
  p.tau_at(0, 0, 1, 1) -= 0.1;
  const auto r = validate(spec, p);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.message.find("fix violated"), std::string::npos) << r.message;
}

TEST(ModelCore, ValidateReportsTie) {
  auto p = replication::table3_parameters();
  p.rho_at(1, 0, 0, 0) -= 0.01;
  p.rho_at(1, 0, 0, 1) += 0.01;
  const auto r = validate(replication::main_spec(), p);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.message.find("tie violated"), std::string::npos) << r.message;
}

TEST(ModelCore, ConstraintSetRules) {
  ModelSpec spec;
  spec.dims = {1, 3, 3, 3};
  spec.constraints.fixes.push_back({{RowRef::delta(0), 0}, 0.7});
  spec.constraints.fixes.push_back({{RowRef::delta(0), 1}, 0.6});
  EXPECT_THROW(resolve_blocks(spec), ModelError);

  ModelSpec conflict;
  conflict.dims = {1, 3, 3, 3};
  conflict.constraints.ties.push_back({RowRef::tau(0, 0, 0), RowRef::tau(1, 0, 0)});
  conflict.constraints.fixes.push_back({{RowRef::tau(0, 0, 0), 2}, 0.0});
  conflict.constraints.fixes.push_back({{RowRef::tau(1, 0, 0), 2}, 0.1});
  EXPECT_THROW(resolve_blocks(conflict), ModelError);

  ModelSpec mixed;
  mixed.dims = {1, 3, 3, 3};
  mixed.constraints.ties.push_back({RowRef::delta(0), RowRef::tau(0, 0, 0)});
  EXPECT_THROW(resolve_blocks(mixed), ModelError);

  ModelSpec manifest;
  manifest.dims = {1, 3, 3, 2};
  manifest.manifest = true;
  EXPECT_THROW(resolve_blocks(manifest), ModelError);
}

TEST(ModelCore, TiesAreRowGranular) {
  const auto spec = replication::main_spec();
  const auto blocks = resolve_blocks(spec);
  const auto& d = spec.dims;
  // One delta block, three rho blocks, and twelve free tau rows.
  EXPECT_EQ(blocks.size(), 1 + 3 + 12);
  for (int t = 1; t < d.occasions; ++t)
    for (int h = 0; h < d.groups; ++h)
      EXPECT_EQ(blocks.block_of_row[row_id(d, RowRef::rho(t, h, 1))],
                blocks.block_of_row[row_id(d, RowRef::rho(0, 0, 1))]);
}

TEST(ModelCore, DimensionChecks) {
  EXPECT_THROW(ParameterSet({1, 1, 3, 2}), ModelError);
  EXPECT_THROW(ParameterSet({0, 2, 3, 2}), ModelError);
  EXPECT_THROW(ParameterSet({1, 2, 0, 2}), ModelError);
  EXPECT_THROW(ParameterSet({1, 2, 3, 0}), ModelError);
}
