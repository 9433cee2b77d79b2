#include <gtest/gtest.h>

#include <random>

#include "latent_chain/replication.hpp"
#include "latent_chain/serialization.hpp"
#include "oracles.hpp"

using namespace latent_chain;
namespace rep = latent_chain::replication;

TEST(Serialization, ParametersRoundTripBitExact) {
  std::mt19937_64 gen(51);
  for (int r = 0; r < 30; ++r) {
    const auto d = oracle::random_dims(gen, 3, 4, 4);
    const auto p = oracle::random_parameters(gen, d, 0.1);
    const auto text = to_json(p).dump();
    const auto back = parameters_from_json(json::parse(text));
    EXPECT_EQ(back, p);
    EXPECT_EQ(to_json(back).dump(), text);
  }
}

TEST(Serialization, SingleOccasionHasNoTransitions) {
  const ParameterSet p({1, 2, 1, 2});
  const auto j = to_json(p);
  EXPECT_TRUE(j.at("tau").empty());
  EXPECT_EQ(parameters_from_json(j), p);
}

TEST(Serialization, NestingIsOneBasedAndOrdered) {
  const auto p = rep::table3_parameters();
  const auto j = to_json(p);
  EXPECT_EQ(j.at("delta")[0][0].get<double>(), 0.62);
  EXPECT_EQ(j.at("rho")[0][0][0][1].get<double>(), 0.06);
  EXPECT_EQ(j.at("tau")[0][0][0][1].get<double>(), p.tau_at(0, 0, 0, 1));
  EXPECT_EQ(j.at("tau")[1][1][2][0].get<double>(), p.tau_at(1, 1, 2, 0));
}

TEST(Serialization, ModelSpecRoundTrip) {
  auto spec = rep::gender_spec(true);
  spec.constraints.fixes.push_back({{RowRef::tau(1, 0, 2), 1}, 0.25});
  spec.stationary = true;
  const auto back = model_spec_from_json(json::parse(to_json(spec).dump()));
  EXPECT_EQ(to_json(back), to_json(spec));
  EXPECT_EQ(back.dims, spec.dims);
  EXPECT_EQ(back.constraints.ties.size(), spec.constraints.ties.size());
  EXPECT_EQ(resolve_blocks(back).size(), resolve_blocks(spec).size());
}

TEST(Serialization, CellRefsAreOneBased) {
  const CellRef c{RowRef::rho(2, 1, 0), 2};
  const auto j = to_json(c);
  EXPECT_EQ(j.at("param"), "rho");
  EXPECT_EQ(j.at("occasion"), 3);
  EXPECT_EQ(j.at("group"), 2);
  EXPECT_EQ(j.at("class"), 1);
  EXPECT_EQ(j.at("column"), 3);
  EXPECT_EQ(cell_from_json(j), c);
}

TEST(Serialization, ShapeErrors) {
  auto j = to_json(rep::table3_parameters());
  auto bad = j;
  bad["rho"][0].erase(1);
  EXPECT_THROW(parameters_from_json(bad), ModelError);
  bad = j;
  bad["gamma"] = {1.0};
  EXPECT_THROW(parameters_from_json(bad), ModelError);
  bad = j;
  bad.erase("delta");
  EXPECT_THROW(parameters_from_json(bad), ModelError);
  bad = j;
  bad["tau"][0][0][0][0] = "x";
  EXPECT_THROW(parameters_from_json(bad), ModelError);
  EXPECT_THROW(kind_from_name("gamma"), ModelError);
}

TEST(Serialization, NonEstimableErrorsBecomeNull) {
  const auto d = rep::main_spec().dims;
  ParameterErrors e;
  const ParameterSet shape(d);
  e.delta.resize(shape.delta.size());
  e.rho.resize(shape.rho.size());
  e.tau.resize(shape.tau.size());
  e.at(d, {RowRef::delta(0), 1}) = 0.03;
  const auto j = to_json(e, d);
  EXPECT_TRUE(j.at("delta")[0][0].is_null());
  EXPECT_EQ(j.at("delta")[0][1].get<double>(), 0.03);
  EXPECT_TRUE(j.at("tau")[1][1][2][2].is_null());
}

TEST(Serialization, DecompositionFields) {
  const auto j = to_json(stability_decomposition(rep::table3_parameters(), 0));
  EXPECT_EQ(j.at("rule"), "exact_path");
  for (const char* k : {"stability", "true_stability", "error_stability", "change", "true_change", "error_change",
                        "total_error", "reliability", "manifest_stability"})
    EXPECT_TRUE(j.at(k).is_number()) << k;
}

TEST(Serialization, Hex64) {
  EXPECT_EQ(hex64(0), "0000000000000000");
  EXPECT_EQ(hex64(0xdeadbeefULL), "00000000deadbeef");
}
