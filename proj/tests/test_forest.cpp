#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "cpsids/forest.hpp"
#include "split_oracle.hpp"

using namespace cpsids;
using namespace cpsids::forest;
using namespace cpsids::testing;

namespace {

Samples one_feature(const std::vector<double>& xs, const std::vector<int>& ys) {
  Samples s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double x[1] = {xs[i]};
    s.push_back(x, ys[i]);
  }
  return s;
}

std::vector<std::size_t> all_rows(const Samples& s) {
  std::vector<std::size_t> rows(s.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return rows;
}

std::vector<std::size_t> all_features(const Samples& s) {
  std::vector<std::size_t> f(s.n_features);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = i;
  return f;
}

Tree leaf_tree(int label) {
  Tree t;
  Node n;
  n.label = label;
  t.nodes.push_back(n);
  return t;
}

Forest constant_forest(std::size_t zeros, std::size_t ones) {
  Forest f;
  f.n_features = 1;
  f.params.n_trees = zeros + ones;
  for (std::size_t i = 0; i < zeros; ++i) f.trees.push_back(leaf_tree(0));
  for (std::size_t i = 0; i < ones; ++i) f.trees.push_back(leaf_tree(1));
  return f;
}

Samples two_blobs(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  Samples s;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int y = i < per_class ? 0 : 1;
    const double x[3] = {rng.uniform() + y * 0.8, rng.uniform(), rng.uniform() - y * 0.5};
    s.push_back(x, y);
  }
  return s;
}

double training_accuracy(const Tree& t, const Samples& s) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < s.size(); ++i) ok += t.predict(s.row(i)) == s.labels[i];
  return static_cast<double>(ok) / static_cast<double>(s.size());
}

}  // namespace

TEST(Gini, Examples) {
  EXPECT_DOUBLE_EQ(gini(8, 0), 0.0);
  EXPECT_DOUBLE_EQ(gini(5, 5), 0.5);
  EXPECT_DOUBLE_EQ(gini(3, 1), 0.375);
  EXPECT_THROW(gini(0, 0), DomainError);
  const std::size_t three[3] = {1, 1, 1};
  EXPECT_NEAR(gini(three), 2.0 / 3.0, 1e-15);
}

TEST(Gini, BoundsProperty) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.below(4);
    std::vector<std::size_t> counts(k);
    std::size_t total = 0;
    for (auto& c : counts) total += c = rng.below(20);
    if (total == 0) continue;
    const double g = gini(counts);
    EXPECT_GE(g, 0.0);
    EXPECT_LE(g, 1.0 - 1.0 / static_cast<double>(k) + 1e-12);
    const bool pure = std::count(counts.begin(), counts.end(), total) == 1;
    EXPECT_EQ(g == 0.0, pure);
  }
}

TEST(BestSplit, SeparableOneFeature) {
  const auto s = one_feature({0, 0, 0, 1, 1, 1}, {0, 0, 0, 1, 1, 1});
  const auto rows = all_rows(s);
  const auto split = best_split(s, rows, all_features(s));
  ASSERT_TRUE(split);
  EXPECT_EQ(split->feature, 0u);
  EXPECT_DOUBLE_EQ(split->threshold, 0.5);
  EXPECT_DOUBLE_EQ(split->weighted_impurity, 0.0);
}

TEST(BestSplit, ConstantFeaturesGiveNoSplit) {
  const auto s = one_feature({2, 2, 2, 2}, {0, 1, 0, 1});
  const auto rows = all_rows(s);
  EXPECT_FALSE(best_split(s, rows, all_features(s)));
}

TEST(BestSplit, NoStrictImprovementGivesNoSplit) {
  // Both children keep the parent's 50/50 mix.
  const auto s = one_feature({0, 0, 1, 1}, {0, 1, 0, 1});
  const auto rows = all_rows(s);
  EXPECT_FALSE(best_split(s, rows, all_features(s)));
}

TEST(BestSplit, MatchesExhaustiveOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const auto s = random_samples(rng);
    const auto rows = all_rows(s);
    const auto got = best_split(s, rows, all_features(s));
    const auto want = oracle(s);
    ASSERT_EQ(got.has_value(), want.any) << "trial " << trial;
    if (!got) continue;
    EXPECT_EQ(impurity_of(s, got->feature, got->threshold), want.best) << "trial " << trial;
    // The threshold sits strictly between two observed values.
    bool below = false, above = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double v = s.at(i, got->feature);
      below |= v <= got->threshold;
      above |= v > got->threshold;
    }
    EXPECT_TRUE(below && above);
  }
}

TEST(GrowTree, SingleClassIsOneLeaf) {
  const auto s = one_feature({0, 1, 2}, {1, 1, 1});
  const auto rows = all_rows(s);
  Rng rng(1);
  const auto t = grow_tree(s, rows, Hyperparams{1, std::nullopt, 2, 1}, rng);
  ASSERT_EQ(t.nodes.size(), 1u);
  EXPECT_EQ(t.depth(), 0u);
  EXPECT_EQ(t.nodes[0].label, 1);
}

TEST(GrowTree, DepthZeroIsMajorityLeaf) {
  const auto s = one_feature({0, 1, 2, 3, 4}, {0, 0, 0, 1, 1});
  const auto rows = all_rows(s);
  Rng rng(1);
  const auto t = grow_tree(s, rows, Hyperparams{1, 0, 2, 1}, rng);
  ASSERT_EQ(t.nodes.size(), 1u);
  EXPECT_EQ(t.nodes[0].label, 0);
  EXPECT_EQ(t.nodes[0].count0, 3u);
  EXPECT_EQ(t.nodes[0].count1, 2u);
}

TEST(GrowTree, EqualCountsLeafPredictsAnomalous) {
  const auto s = one_feature({0, 0}, {0, 1});
  const auto rows = all_rows(s);
  Rng rng(1);
  const auto t = grow_tree(s, rows, Hyperparams{1, std::nullopt, 2, 1}, rng);
  ASSERT_EQ(t.nodes.size(), 1u);
  EXPECT_EQ(t.nodes[0].label, 1);
}

TEST(GrowTree, FitsSeparableDataExactly) {
  std::vector<double> xs;
  std::vector<int> ys;
  for (int i = 0; i < 20; ++i) {
    xs.push_back(i);
    ys.push_back((i / 3) % 2);
  }
  const auto s = one_feature(xs, ys);
  const auto rows = all_rows(s);
  Rng rng(1);
  const auto t = grow_tree(s, rows, Hyperparams{1, std::nullopt, 2, 1}, rng);
  EXPECT_EQ(training_accuracy(t, s), 1.0);
}

TEST(GrowTree, DeeperNeverFitsWorse) {
  const auto s = two_blobs(60, 8);
  const auto rows = all_rows(s);
  double previous = 0.0;
  for (std::size_t d = 0; d <= 8; ++d) {
    Rng rng(3);
    const auto t = grow_tree(s, rows, Hyperparams{1, d, 2, 3}, rng);
    EXPECT_LE(t.depth(), d);
    const double acc = training_accuracy(t, s);
    EXPECT_GE(acc, previous) << "depth " << d;
    previous = acc;
  }
}

TEST(GrowTree, MinSamplesSplitStopsSmallNodes) {
  const auto s = two_blobs(30, 2);
  const auto rows = all_rows(s);
  Rng rng(4);
  const auto t = grow_tree(s, rows, Hyperparams{1, std::nullopt, 25, 2}, rng);
  for (const auto& n : t.nodes) {
    if (!n.leaf()) {
      EXPECT_GE(n.count0 + n.count1, 25u);
    }
  }
}

TEST(FitForest, SingleTreeAndDeterminism) {
  const auto s = two_blobs(50, 1);
  const auto one = fit_forest(s, Hyperparams{1, std::nullopt, 2, 2}, 7, 1);
  EXPECT_EQ(one.trees.size(), 1u);
  const Hyperparams h{10, 4, 2, 2};
  const auto a = fit_forest(s, h, 7, 1);
  const auto b = fit_forest(s, h, 7, 3);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, fit_forest(s, h, 8, 1));
  EXPECT_NE(bootstrap_indices(s.size(), 7, 0), bootstrap_indices(s.size(), 7, 1));
}

TEST(FitForest, SingleClassRejected) {
  const auto s = one_feature({0, 1, 2}, {0, 0, 0});
  EXPECT_THROW(fit_forest(s, Hyperparams{3, std::nullopt, 2, 1}, 1), DataError);
  EXPECT_THROW(fit_forest(Samples{}, Hyperparams{}, 1), DataError);
  const auto ok = one_feature({0, 1}, {0, 1});
  EXPECT_THROW(fit_forest(ok, Hyperparams{3, std::nullopt, 2, 2}, 1), DataError);
  EXPECT_THROW(fit_forest(ok, Hyperparams{0, std::nullopt, 2, 1}, 1), DataError);
  EXPECT_THROW(fit_forest(ok, Hyperparams{3, std::nullopt, 1, 1}, 1), DataError);
}

TEST(FitForest, LearnsSeparatedBlobs) {
  const auto train = two_blobs(200, 11);
  const auto test = two_blobs(200, 12);
  const auto f = fit_forest(train, Hyperparams{25, std::nullopt, 2, 2}, 3);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < test.size(); ++i) ok += predict(f, test.row(i)) == test.labels[i];
  EXPECT_GT(static_cast<double>(ok) / static_cast<double>(test.size()), 0.85);
}

TEST(Predict, MajorityAndTies) {
  const double x[1] = {0.0};
  EXPECT_EQ(predict(constant_forest(3, 2), x), 0);
  EXPECT_EQ(predict(constant_forest(2, 3), x), 1);
  EXPECT_EQ(predict(constant_forest(2, 2), x), 1);
  const double wrong[2] = {0.0, 0.0};
  EXPECT_THROW(predict(constant_forest(1, 0), wrong), DataError);
}

TEST(Folds, StratifiedAndDisjoint) {
  std::vector<int> labels(1000);
  for (std::size_t i = 500; i < 1000; ++i) labels[i] = 1;
  const auto folds = stratified_folds(labels, 5, 9);
  ASSERT_EQ(folds.size(), 5u);
  std::set<std::size_t> seen;
  for (const auto& f : folds) {
    EXPECT_EQ(f.size(), 200u);
    std::size_t ones = 0;
    for (auto i : f) {
      ones += labels[i];
      EXPECT_TRUE(seen.insert(i).second);
    }
    EXPECT_EQ(ones, 100u);
  }
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_THROW(stratified_folds(labels, 1, 9), DataError);
}

TEST(GridSearch, SingleCellAndEmptyGrid) {
  const auto s = two_blobs(30, 5);
  const auto r = grid_search(s, {Hyperparams{5, 3, 2, 2}}, 3, 1, 1);
  EXPECT_EQ(r.best_index, 0u);
  EXPECT_EQ(r.cells.size(), 1u);
  EXPECT_EQ(r.cells[0].fold_accuracy.size(), 3u);
  EXPECT_THROW(grid_search(s, {}, 3, 1), DataError);
}

TEST(GridSearch, PicksArgmaxThenSimplest) {
  const auto s = two_blobs(60, 6);
  const auto grid = make_grid({1, 5, 15}, {1, 4, std::nullopt}, {2, 10}, 2);
  ASSERT_EQ(grid.size(), 18u);
  const auto r = grid_search(s, grid, 4, 2, 2);
  double best = 0.0;
  for (const auto& c : r.cells) best = std::max(best, c.mean_accuracy);
  EXPECT_EQ(r.cells[r.best_index].mean_accuracy, best);
  for (std::size_t c = 0; c < grid.size(); ++c) {
    if (r.cells[c].mean_accuracy != best) continue;
    EXPECT_GE(grid[c].n_trees, r.best.n_trees);
  }
  const auto again = grid_search(s, grid, 4, 2, 1);
  EXPECT_EQ(again.best_index, r.best_index);
  for (std::size_t c = 0; c < grid.size(); ++c) EXPECT_EQ(again.cells[c].fold_accuracy, r.cells[c].fold_accuracy);
}

TEST(GridSearch, TieGoesToFewerTrees) {
  // Perfectly separable: every cell scores 1.0.
  const auto s = one_feature({0, 1, 2, 3, 4, 5, 100, 101, 102, 103, 104, 105}, {0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1});
  const auto r = grid_search(s, make_grid({10, 3}, {std::nullopt, 2}, {2}, 1), 3, 1);
  EXPECT_EQ(r.best, (Hyperparams{3, 2, 2, 1}));
}

TEST(Serialization, RoundTrip) {
  const auto s = two_blobs(40, 3);
  const auto f = fit_forest(s, Hyperparams{7, std::nullopt, 2, 2}, 99);
  std::stringstream ss;
  write_forest(ss, f);
  const auto back = read_forest(ss);
  EXPECT_EQ(back, f);
  std::stringstream again;
  write_forest(again, back);
  std::stringstream first;
  write_forest(first, f);
  EXPECT_EQ(again.str(), first.str());
}

TEST(Serialization, RejectsDamage) {
  std::istringstream bad_magic("random-forest 1\n");
  EXPECT_THROW(read_forest(bad_magic), DataError);
  const auto s = two_blobs(10, 3);
  std::stringstream ss;
  write_forest(ss, fit_forest(s, Hyperparams{2, 2, 2, 2}, 1));
  const std::string text = ss.str();
  std::istringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_THROW(read_forest(truncated), DataError);
}
