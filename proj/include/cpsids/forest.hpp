#pragma once

// Random Forest for binary labels (0 normal, 1 anomalous).
//
// Trees are grown on bootstrap resamples. At every node a fresh random subset
// of features is searched for the threshold that minimises the size-weighted
// Gini impurity of the two children. Prediction is a majority vote, with an
// exact tie going to the anomalous class.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace cpsids::forest {

// Row-major sample matrix with one label per row.
struct Samples {
  std::size_t n_features = 0;
  std::vector<double> values;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  double at(std::size_t row, std::size_t feature) const { return values[row * n_features + feature]; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * n_features, n_features};
  }
  void push_back(std::span<const double> features, int label) {
    if (n_features == 0 && values.empty()) n_features = features.size();
    if (features.size() != n_features) throw DataError("feature vector has the wrong length");
    values.insert(values.end(), features.begin(), features.end());
    labels.push_back(label);
  }
};

// ---------------------------------------------------------------------------
// Impurity

// 1 - sum(f_i^2) over class frequencies. Equal to the pairwise form
// sum_i sum_{j != i} f_i f_j.
inline double gini(std::span<const std::size_t> class_counts) {
  std::size_t total = 0;
  for (auto c : class_counts) total += c;
  if (total == 0) throw DomainError("gini impurity of an empty node is undefined");
  double sum_sq = 0.0;
  for (auto c : class_counts) {
    const double f = static_cast<double>(c) / static_cast<double>(total);
    sum_sq += f * f;
  }
  return 1.0 - sum_sq;
}

inline double gini(std::size_t zeros, std::size_t ones) {
  const std::size_t counts[2] = {zeros, ones};
  return gini(counts);
}

struct Split {
  std::size_t feature = 0;
  double threshold = 0.0;         // rows with value <= threshold go left
  double weighted_impurity = 0.0; // size-weighted mean of child impurities
};

namespace detail {

using u128 = unsigned __int128;

// For a binary node with class counts (a, b), n*gini = n - (a^2 + b^2)/n.
// Minimising the weighted child impurity is the same as maximising
// (a_l^2 + b_l^2)/n_l + (a_r^2 + b_r^2)/n_r, which we keep as an exact
// fraction so ties and comparisons do not depend on rounding.
struct Purity {
  u128 num = 0;
  u128 den = 1;

  static Purity of(std::size_t l0, std::size_t l1, std::size_t r0, std::size_t r1) {
    const u128 nl = l0 + l1, nr = r0 + r1;
    const u128 sl = u128(l0) * l0 + u128(l1) * l1;
    const u128 sr = u128(r0) * r0 + u128(r1) * r1;
    return {sl * nr + sr * nl, nl * nr};
  }
  static Purity parent(std::size_t c0, std::size_t c1) {
    return {u128(c0) * c0 + u128(c1) * c1, u128(c0) + c1};
  }
  friend bool operator>(const Purity& a, const Purity& b) { return a.num * b.den > b.num * a.den; }
};

inline double midpoint(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2.0;
  return mid < hi ? mid : lo;
}

}  // namespace detail

// Exhaustive search over the given features and every midpoint between
// consecutive distinct values. Returns nothing when no threshold separates
// the rows or none strictly lowers the impurity. Ties keep the first
// candidate in (feature order, ascending threshold).
inline std::optional<Split> best_split(const Samples& data, std::span<const std::size_t> rows,
                                       std::span<const std::size_t> features) {
  if (rows.empty()) return std::nullopt;
  std::size_t c1 = 0;
  for (auto r : rows) c1 += data.labels[r] == 1;
  const std::size_t n = rows.size();
  const std::size_t c0 = n - c1;
  if (c0 == 0 || c1 == 0) return std::nullopt;

  const auto parent = detail::Purity::parent(c0, c1);
  std::optional<detail::Purity> best_score;
  Split best;
  std::size_t best_l0 = 0, best_l1 = 0;

  std::vector<std::pair<double, int>> column(n);
  for (auto f : features) {
    for (std::size_t i = 0; i < n; ++i) column[i] = {data.at(rows[i], f), data.labels[rows[i]]};
    std::sort(column.begin(), column.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::size_t l0 = 0, l1 = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      (column[i].second == 1 ? l1 : l0) += 1;
      if (!(column[i].first < column[i + 1].first)) continue;
      const auto score = detail::Purity::of(l0, l1, c0 - l0, c1 - l1);
      if (!(score > parent)) continue;
      if (!best_score || score > *best_score) {
        best_score = score;
        best.feature = f;
        best.threshold = detail::midpoint(column[i].first, column[i + 1].first);
        best_l0 = l0;
        best_l1 = l1;
      }
    }
  }
  if (!best_score) return std::nullopt;
  const double nl = static_cast<double>(best_l0 + best_l1);
  const double nr = static_cast<double>(n) - nl;
  best.weighted_impurity = (nl * gini(best_l0, best_l1) + nr * gini(c0 - best_l0, c1 - best_l1)) / n;
  return best;
}

// ---------------------------------------------------------------------------
// Trees

struct Hyperparams {
  std::size_t n_trees = 100;
  std::optional<std::size_t> max_depth;  // empty: unlimited
  std::size_t min_samples_split = 2;
  std::size_t features_per_split = 2;

  friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

inline void validate(const Hyperparams& h, std::size_t n_features) {
  if (h.n_trees < 1) throw DataError("n_trees must be at least 1");
  if (h.min_samples_split < 2) throw DataError("min_samples_split must be at least 2");
  if (h.features_per_split < 1 || h.features_per_split > n_features) {
    throw DataError("features_per_split must lie in 1.." + std::to_string(n_features));
  }
}

inline std::string depth_string(const std::optional<std::size_t>& d) {
  return d ? std::to_string(*d) : "none";
}

// Flat node storage; children always come after their parent.
struct Node {
  static constexpr std::uint32_t kLeaf = std::numeric_limits<std::uint32_t>::max();

  std::uint32_t feature = kLeaf;
  double threshold = 0.0;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  int label = 0;
  std::size_t count0 = 0;  // training rows of each class that reached the node
  std::size_t count1 = 0;

  bool leaf() const { return feature == kLeaf; }
  friend bool operator==(const Node&, const Node&) = default;
};

struct Tree {
  std::vector<Node> nodes;

  int predict(std::span<const double> x) const {
    std::uint32_t i = 0;
    while (!nodes[i].leaf()) i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i].label;
  }

  std::size_t depth() const {
    std::vector<std::size_t> d(nodes.size(), 0);
    std::size_t deepest = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      deepest = std::max(deepest, d[i]);
      if (!nodes[i].leaf()) d[nodes[i].left] = d[nodes[i].right] = d[i] + 1;
    }
    return deepest;
  }

  friend bool operator==(const Tree&, const Tree&) = default;
};

inline int majority(std::size_t zeros, std::size_t ones) { return ones >= zeros ? 1 : 0; }

namespace detail {

// Features that still vary among the rows; a constant one cannot split.
inline std::vector<std::size_t> varying_features(const Samples& data, std::span<const std::size_t> rows) {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < data.n_features; ++f) {
    const double first = data.at(rows[0], f);
    for (auto r : rows) {
      if (data.at(r, f) != first) {
        out.push_back(f);
        break;
      }
    }
  }
  return out;
}

// Up to m of the candidates, drawn without replacement, in ascending order.
inline std::vector<std::size_t> pick_features(std::vector<std::size_t> candidates, std::size_t m, Rng& rng) {
  const std::size_t n = candidates.size();
  m = std::min(m, n);
  for (std::size_t i = 0; i < m; ++i) std::swap(candidates[i], candidates[i + rng.below(n - i)]);
  candidates.resize(m);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

inline std::uint32_t grow(Tree& tree, const Samples& data, std::vector<std::size_t>& rows, std::size_t depth,
                          const Hyperparams& params, Rng& rng) {
  std::size_t c1 = 0;
  for (auto r : rows) c1 += data.labels[r] == 1;
  const std::size_t c0 = rows.size() - c1;

  const auto index = static_cast<std::uint32_t>(tree.nodes.size());
  tree.nodes.push_back(Node{});
  tree.nodes[index].count0 = c0;
  tree.nodes[index].count1 = c1;
  tree.nodes[index].label = majority(c0, c1);

  const bool stop = c0 == 0 || c1 == 0 || (params.max_depth && depth >= *params.max_depth) ||
                    rows.size() < params.min_samples_split;
  if (stop) return index;

  auto candidates = varying_features(data, rows);
  if (candidates.empty()) return index;
  const auto features = pick_features(std::move(candidates), params.features_per_split, rng);
  const auto split = best_split(data, rows, features);
  if (!split) return index;

  std::vector<std::size_t> left, right;
  for (auto r : rows) (data.at(r, split->feature) <= split->threshold ? left : right).push_back(r);
  rows.clear();
  rows.shrink_to_fit();

  const auto l = grow(tree, data, left, depth + 1, params, rng);
  const auto r = grow(tree, data, right, depth + 1, params, rng);
  auto& node = tree.nodes[index];
  node.feature = static_cast<std::uint32_t>(split->feature);
  node.threshold = split->threshold;
  node.left = l;
  node.right = r;
  return index;
}

}  // namespace detail

// Grows one tree over the given rows (duplicates allowed, as in a bootstrap).
// Each node searches a fresh random subset of m features, drawn among the
// features that are not constant within the node.
inline Tree grow_tree(const Samples& data, std::span<const std::size_t> bootstrap, const Hyperparams& params,
                      Rng& rng) {
  if (bootstrap.empty()) throw DataError("cannot grow a tree on no samples");
  validate(params, data.n_features);
  Tree tree;
  std::vector<std::size_t> rows(bootstrap.begin(), bootstrap.end());
  detail::grow(tree, data, rows, 0, params, rng);
  return tree;
}

// ---------------------------------------------------------------------------
// Forest

struct Forest {
  std::vector<Tree> trees;
  Hyperparams params;
  std::uint64_t seed = 0;
  std::size_t n_features = 0;

  friend bool operator==(const Forest&, const Forest&) = default;
};

inline Rng tree_rng(std::uint64_t seed, std::size_t tree) { return Rng(derive_seed(seed, tree)); }

// The bootstrap drawn for a tree: n rows with replacement, from the tree's own
// stream. fit_forest grows the tree from the same stream afterwards.
inline std::vector<std::size_t> bootstrap_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> rows(n);
  for (auto& r : rows) r = rng.below(n);
  return rows;
}

inline std::vector<std::size_t> bootstrap_indices(std::size_t n, std::uint64_t seed, std::size_t tree) {
  auto rng = tree_rng(seed, tree);
  return bootstrap_indices(n, rng);
}

inline unsigned default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Runs job(i) for i in [0, n) on up to `threads` workers. Each job writes
// only its own slot, so results do not depend on scheduling.
template <typename Job>
void parallel_for(std::size_t n, unsigned threads, Job&& job) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          job(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

inline Forest fit_forest(const Samples& training, const Hyperparams& params, std::uint64_t seed,
                         unsigned threads = default_threads()) {
  if (training.size() == 0) throw DataError("cannot fit a forest on an empty training set");
  validate(params, training.n_features);
  std::size_t ones = 0;
  for (int y : training.labels) ones += y == 1;
  if (ones == 0 || ones == training.size()) {
    throw DataError("training set must contain both normal and anomalous samples");
  }

  Forest forest;
  forest.params = params;
  forest.seed = seed;
  forest.n_features = training.n_features;
  forest.trees.resize(params.n_trees);
  parallel_for(params.n_trees, threads, [&](std::size_t t) {
    auto rng = tree_rng(seed, t);
    const auto rows = bootstrap_indices(training.size(), rng);
    forest.trees[t] = grow_tree(training, rows, params, rng);
  });
  return forest;
}

struct Votes {
  std::size_t normal = 0;
  std::size_t anomalous = 0;
};

inline Votes votes(const Forest& forest, std::span<const double> features) {
  Votes v;
  for (const auto& t : forest.trees) (t.predict(features) == 1 ? v.anomalous : v.normal) += 1;
  return v;
}

inline int predict(const Forest& forest, std::span<const double> features) {
  if (features.size() != forest.n_features) throw DataError("feature vector has the wrong length");
  const auto v = votes(forest, features);
  return majority(v.normal, v.anomalous);
}

// ---------------------------------------------------------------------------
// Model selection

// Each class is shuffled and dealt round-robin into k folds.
inline std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, std::size_t k,
                                                              std::uint64_t seed) {
  if (k < 2) throw DataError("need at least 2 folds");
  if (labels.size() < k) throw DataError("fewer samples than folds");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i] == 1 ? 1 : 0].push_back(i);
  if (by_class[0].size() < k || by_class[1].size() < k) {
    throw DataError("each class needs at least k samples for stratified folds");
  }
  Rng rng(derive_seed(seed, "folds"));
  std::vector<std::vector<std::size_t>> folds(k);
  for (auto& cls : by_class) {
    rng.shuffle(cls.begin(), cls.end());
    for (std::size_t i = 0; i < cls.size(); ++i) folds[i % k].push_back(cls[i]);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

inline Samples subset(const Samples& data, std::span<const std::size_t> rows) {
  Samples out;
  out.n_features = data.n_features;
  out.values.reserve(rows.size() * data.n_features);
  out.labels.reserve(rows.size());
  for (auto r : rows) out.push_back(data.row(r), data.labels[r]);
  return out;
}

struct GridCell {
  Hyperparams params;
  double mean_accuracy = 0.0;
  std::vector<double> fold_accuracy;
};

struct GridResult {
  Hyperparams best;
  std::size_t best_index = 0;
  std::vector<GridCell> cells;
};

// Cartesian product, in the order n_trees x max_depth x min_samples_split.
inline std::vector<Hyperparams> make_grid(const std::vector<std::size_t>& n_trees,
                                          const std::vector<std::optional<std::size_t>>& max_depth,
                                          const std::vector<std::size_t>& min_samples_split,
                                          std::size_t features_per_split) {
  std::vector<Hyperparams> grid;
  for (auto t : n_trees) {
    for (const auto& d : max_depth) {
      for (auto s : min_samples_split) grid.push_back({t, d, s, features_per_split});
    }
  }
  return grid;
}

namespace detail {

// Is a strictly preferable to b at equal accuracy: fewer trees, then
// shallower (unlimited counts as deepest).
inline bool simpler(const Hyperparams& a, const Hyperparams& b) {
  if (a.n_trees != b.n_trees) return a.n_trees < b.n_trees;
  const auto depth = [](const Hyperparams& h) {
    return h.max_depth ? *h.max_depth : std::numeric_limits<std::size_t>::max();
  };
  return depth(a) < depth(b);
}

}  // namespace detail

// Stratified k-fold cross-validation of every cell. Every cell sees the same
// folds and the same per-fold fitting seeds.
inline GridResult grid_search(const Samples& training, const std::vector<Hyperparams>& grid, std::size_t k,
                              std::uint64_t seed, unsigned threads = default_threads()) {
  if (grid.empty()) throw DataError("hyperparameter grid is empty");
  for (const auto& h : grid) validate(h, training.n_features);
  const auto folds = stratified_folds(training.labels, k, seed);

  std::vector<Samples> train_parts(k), valid_parts(k);
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> rest;
    for (std::size_t g = 0; g < k; ++g) {
      if (g != f) rest.insert(rest.end(), folds[g].begin(), folds[g].end());
    }
    std::sort(rest.begin(), rest.end());
    train_parts[f] = subset(training, rest);
    valid_parts[f] = subset(training, folds[f]);
  }

  GridResult result;
  result.cells.resize(grid.size());
  for (std::size_t c = 0; c < grid.size(); ++c) {
    result.cells[c].params = grid[c];
    result.cells[c].fold_accuracy.assign(k, 0.0);
  }
  parallel_for(grid.size() * k, threads, [&](std::size_t job) {
    const std::size_t c = job / k, f = job % k;
    const auto model = fit_forest(train_parts[f], grid[c], derive_seed(seed, f), 1);
    const auto& valid = valid_parts[f];
    std::size_t correct = 0;
    for (std::size_t i = 0; i < valid.size(); ++i) correct += predict(model, valid.row(i)) == valid.labels[i];
    result.cells[c].fold_accuracy[f] = static_cast<double>(correct) / static_cast<double>(valid.size());
  });

  for (std::size_t c = 0; c < grid.size(); ++c) {
    double sum = 0.0;
    for (double a : result.cells[c].fold_accuracy) sum += a;
    result.cells[c].mean_accuracy = sum / static_cast<double>(k);
    const auto& best = result.cells[result.best_index];
    if (c == 0) continue;
    if (result.cells[c].mean_accuracy > best.mean_accuracy ||
        (result.cells[c].mean_accuracy == best.mean_accuracy && detail::simpler(grid[c], best.params))) {
      result.best_index = c;
    }
  }
  result.best = grid[result.best_index];
  return result;
}

inline void write_grid_csv(std::ostream& os, const GridResult& r) {
  os << "n_trees,max_depth,min_samples_split,features_per_split,mean_accuracy,best\n";
  char acc[32];
  for (std::size_t c = 0; c < r.cells.size(); ++c) {
    const auto& h = r.cells[c].params;
    std::snprintf(acc, sizeof acc, "%.6f", r.cells[c].mean_accuracy);
    os << h.n_trees << ',' << depth_string(h.max_depth) << ',' << h.min_samples_split << ','
       << h.features_per_split << ',' << acc << ',' << (c == r.best_index ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Text serialization
//
//   cpsids-forest 1
//   n_features 5
//   seed 42
//   n_trees 2
//   max_depth none
//   min_samples_split 2
//   features_per_split 2
//   tree 0 3
//   split 2 0.0357 1 2 250 250
//   leaf 0 250 0
//   leaf 1 0 250
//   ...
//   end
//
// "tree <index> <node count>" is followed by one line per node in storage
// order: "split <feature> <threshold> <left> <right> <count0> <count1>" or
// "leaf <label> <count0> <count1>". Thresholds use the shortest decimal form
// that reads back to the same double.

inline constexpr int kForestFormatVersion = 1;

inline void write_forest(std::ostream& os, const Forest& f) {
  os << "cpsids-forest " << kForestFormatVersion << '\n'
     << "n_features " << f.n_features << '\n'
     << "seed " << f.seed << '\n'
     << "n_trees " << f.params.n_trees << '\n'
     << "max_depth " << depth_string(f.params.max_depth) << '\n'
     << "min_samples_split " << f.params.min_samples_split << '\n'
     << "features_per_split " << f.params.features_per_split << '\n';
  char buf[32];
  for (std::size_t t = 0; t < f.trees.size(); ++t) {
    const auto& nodes = f.trees[t].nodes;
    os << "tree " << t << ' ' << nodes.size() << '\n';
    for (const auto& n : nodes) {
      if (n.leaf()) {
        os << "leaf " << n.label << ' ' << n.count0 << ' ' << n.count1 << '\n';
      } else {
        const auto res = std::to_chars(buf, buf + sizeof buf, n.threshold);
        os << "split " << n.feature << ' ' << std::string_view(buf, res.ptr - buf) << ' ' << n.left << ' '
           << n.right << ' ' << n.count0 << ' ' << n.count1 << '\n';
      }
    }
  }
  os << "end\n";
}

inline Forest read_forest(std::istream& is) {
  std::size_t line_no = 0;
  std::string line;
  auto next = [&]() -> std::istringstream {
    if (!std::getline(is, line)) throw DataError("forest file ends early at line " + std::to_string(line_no + 1));
    ++line_no;
    return std::istringstream(line);
  };
  auto fail = [&](const std::string& what) {
    return DataError("forest file line " + std::to_string(line_no) + ": " + what);
  };
  auto field = [&](const char* key) {
    auto ss = next();
    std::string k, v;
    if (!(ss >> k >> v) || k != key) throw fail(std::string("expected '") + key + "'");
    return v;
  };
  auto count = [&](const std::string& v) {
    std::size_t out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) throw fail("bad count '" + v + "'");
    return out;
  };

  {
    auto ss = next();
    std::string magic;
    int version = 0;
    if (!(ss >> magic >> version) || magic != "cpsids-forest") throw fail("not a forest file");
    if (version != kForestFormatVersion) throw fail("unsupported format version " + std::to_string(version));
  }
  Forest f;
  f.n_features = count(field("n_features"));
  f.seed = count(field("seed"));
  f.params.n_trees = count(field("n_trees"));
  const auto depth = field("max_depth");
  if (depth != "none") f.params.max_depth = count(depth);
  f.params.min_samples_split = count(field("min_samples_split"));
  f.params.features_per_split = count(field("features_per_split"));
  validate(f.params, f.n_features);

  for (std::size_t t = 0; t < f.params.n_trees; ++t) {
    auto head = next();
    std::string kw;
    std::size_t index = 0, n_nodes = 0;
    if (!(head >> kw >> index >> n_nodes) || kw != "tree" || index != t || n_nodes == 0) {
      throw fail("expected 'tree " + std::to_string(t) + " <nodes>'");
    }
    Tree tree;
    tree.nodes.resize(n_nodes);
    for (std::size_t i = 0; i < n_nodes; ++i) {
      auto ss = next();
      Node& n = tree.nodes[i];
      std::string kind;
      ss >> kind;
      if (kind == "leaf") {
        if (!(ss >> n.label >> n.count0 >> n.count1) || (n.label != 0 && n.label != 1)) throw fail("bad leaf");
        if (n.count0 + n.count1 == 0) throw fail("leaf without training samples");
      } else if (kind == "split") {
        std::string thr;
        if (!(ss >> n.feature >> thr >> n.left >> n.right >> n.count0 >> n.count1)) throw fail("bad split");
        const auto r = std::from_chars(thr.data(), thr.data() + thr.size(), n.threshold);
        if (r.ec != std::errc{} || r.ptr != thr.data() + thr.size()) throw fail("bad threshold");
        if (n.feature >= f.n_features) throw fail("feature index out of range");
        if (n.left <= i || n.right <= i || n.left >= n_nodes || n.right >= n_nodes) {
          throw fail("child index out of range");
        }
        n.label = majority(n.count0, n.count1);
      } else {
        throw fail("expected 'leaf' or 'split'");
      }
    }
    f.trees.push_back(std::move(tree));
  }
  auto tail = next();
  std::string end;
  if (!(tail >> end) || end != "end") throw fail("expected 'end'");
  return f;
}

}  // namespace cpsids::forest
