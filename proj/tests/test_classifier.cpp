#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "immunity/classifier.hpp"

using namespace immunity;

namespace {

FeatureVector random_vector(std::mt19937_64& rng) {
  FeatureVector v;
  std::uniform_real_distribution<double> u(0, 2000);
  for (auto& x : v) x = std::floor(u(rng) * 4) / 4;
  return v;
}

// Random tree of bounded depth; each branch stops early with probability 1/5.
TreeModel random_model(std::mt19937_64& rng, std::size_t max_depth) {
  std::vector<TreeNode> nodes;
  std::function<std::int32_t(std::size_t)> grow = [&](std::size_t d) -> std::int32_t {
    TreeNode n;
    if (d < max_depth && rng() % 5 != 0) {
      n.leaf = false;
      n.feature = rng() % kFeatureCount;
      n.threshold = static_cast<double>(rng() % 8000) / 4;
      nodes.push_back(n);
      auto self = static_cast<std::int32_t>(nodes.size() - 1);
      auto l = grow(d + 1);
      auto r = grow(d + 1);
      nodes[static_cast<std::size_t>(self)].left = l;
      nodes[static_cast<std::size_t>(self)].right = r;
      return self;
    }
    n.cls = rng() % 2 ? FlowClass::Benign : FlowClass::Unknown;
    n.confidence = 0.5 + static_cast<double>(rng() % 50) / 100;
    nodes.push_back(n);
    return static_cast<std::int32_t>(nodes.size() - 1);
  };
  auto root = grow(0);
  return TreeModel(nodes, static_cast<std::size_t>(root), max_depth);
}

FlowClass recursive_eval(const TreeModel& m, std::size_t i, const FeatureVector& v) {
  const auto& n = m.nodes()[i];
  if (n.leaf) return n.cls;
  if (v[n.feature] <= n.threshold) return recursive_eval(m, static_cast<std::size_t>(n.left), v);
  return recursive_eval(m, static_cast<std::size_t>(n.right), v);
}

FlowEntry handshake_entry() {
  FlowCache c(4);
  FlowKey k{Ipv4(10, 0, 0, 1), Ipv4(172, 16, 0, 1), 40000, 80, 6};
  c.update({k, TcpFlags::parse("S"), 60, 0, Micros{0}});
  c.update({k.reverse(), TcpFlags::parse("SA"), 60, 0, Micros{1500}});
  auto u = c.update({k, TcpFlags::parse("A"), 52, 0, Micros{2000}});
  return u.entry;
}

}  // namespace

TEST(Features, HandshakeFlowMatchesRecomputation) {
  auto v = extract_features(handshake_entry());
  EXPECT_EQ(v[kDstPort], 80);
  EXPECT_DOUBLE_EQ(v[kDuration], 0.002);
  EXPECT_EQ(v[kTotalLenFwd], 112);
  EXPECT_EQ(v[kTotalLenBwd], 60);
  EXPECT_EQ(v[kMinLenFwd], 52);
  EXPECT_DOUBLE_EQ(v[kMinIat], 0.0005);
  EXPECT_EQ(v[kMaxLenAny], 60);
  EXPECT_EQ(v[kRstCount], 0);
  EXPECT_EQ(v[kPshCount], 0);
  EXPECT_EQ(v[kAckCount], 2);
}

TEST(Features, TwoPacketsIsTooFew) {
  FlowCache c(4);
  FlowKey k{Ipv4(10, 0, 0, 1), Ipv4(172, 16, 0, 1), 40000, 80, 6};
  c.update({k, TcpFlags::parse("S"), 60, 0, Micros{0}});
  auto u = c.update({k.reverse(), TcpFlags::parse("SA"), 60, 0, Micros{1}});
  EXPECT_THROW(extract_features(u.entry), TooFewPackets);
}

TEST(Features, SchemaOrderIsFixed) {
  EXPECT_EQ(kFeatureNames[kDstPort], "dst_port");
  EXPECT_EQ(kFeatureNames[kMinIat], "min_iat");
  EXPECT_EQ(kFeatureNames[kAckCount], "ack_count");
}

TEST(TreeModelTest, SingleLeafAndStump) {
  std::mt19937_64 rng(1);
  auto leaf = TreeModel::single_leaf(FlowClass::Benign);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(leaf.classify(random_vector(rng)), FlowClass::Benign);

  auto stump = TreeModel::parse(
      "treemodel v1 depth=1 features=10\nN 0 0 1023 1 2\nL 1 benign 1\nL 2 unknown 1\n");
  FeatureVector v{};
  v[kDstPort] = 80;
  EXPECT_EQ(stump.classify(v), FlowClass::Benign);
  v[kDstPort] = 8080;
  EXPECT_EQ(stump.classify(v), FlowClass::Unknown);
}

TEST(TreeModelTest, LoadRejectsInvalidModels) {
  EXPECT_THROW(TreeModel::parse("treemodel v1 depth=1 features=10\nN 0 0 1 1 7\nL 1 benign 1\n"), ModelInvalid);
  EXPECT_THROW(TreeModel::parse("treemodel v1 depth=1 features=10\nL 0 benign 1\nL 1 benign 1\n"), ModelInvalid);
  EXPECT_THROW(TreeModel::parse("treemodel v1 depth=1 features=10\nN 0 0 1 0 0\n"), ModelInvalid);
  EXPECT_THROW(TreeModel::parse("treemodel v1 depth=1 features=10\nN 0 0 1 1 2\nN 1 0 1 3 4\nL 2 benign 1\n"
                                "L 3 benign 1\nL 4 unknown 1\n"),
               ModelInvalid);  // deeper than declared
  EXPECT_THROW(TreeModel::parse("treemodel v1 depth=8 features=9\nL 0 benign 1\n"), ModelInvalid);
  EXPECT_THROW(TreeModel::parse("treemodel v1 depth=8 features=10\nN 0 12 1 1 2\nL 1 benign 1\nL 2 benign 1\n"),
               ModelInvalid);
  EXPECT_THROW(TreeModel::parse("treemodel v1 depth=8 features=10\nL 0 maybe 1\n"), ModelInvalid);
}

TEST(TreeModelTest, MatchesRecursiveEvaluatorOnRandomModels) {
  std::mt19937_64 rng(2);
  for (int m = 0; m < 20; ++m) {
    auto model = random_model(rng, 8);
    for (int i = 0; i < 10000; ++i) {
      auto v = random_vector(rng);
      auto [cls, visits] = model.classify_counted(v);
      ASSERT_EQ(cls, recursive_eval(model, model.root(), v));
      ASSERT_LE(visits, model.max_depth());
    }
  }
}

TEST(TreeModelTest, SerializationRoundTripPreservesBehaviour) {
  std::mt19937_64 rng(3);
  for (int m = 0; m < 10; ++m) {
    auto model = random_model(rng, 8);
    auto back = TreeModel::parse(model.serialize());
    EXPECT_EQ(back.serialize(), model.serialize());
    for (int i = 0; i < 2000; ++i) {
      auto v = random_vector(rng);
      ASSERT_EQ(back.classify(v), model.classify(v));
    }
  }
}

TEST(TreeModelTest, PerturbationInsideSplitIntervalKeepsClass) {
  std::mt19937_64 rng(4);
  auto model = random_model(rng, 6);
  for (int i = 0; i < 2000; ++i) {
    auto v = random_vector(rng);
    const auto f = static_cast<std::size_t>(rng() % kFeatureCount);
    // v[f] lies in (lo, hi] for the nearest thresholds on f across all splits.
    double lo = -1e300, hi = 1e300;
    for (const auto& n : model.nodes()) {
      if (n.leaf || n.feature != f) continue;
      if (n.threshold < v[f]) lo = std::max(lo, n.threshold);
      else hi = std::min(hi, n.threshold);
    }
    auto w = v;
    std::uniform_real_distribution<double> u(std::max(lo, v[f] - 500), std::min(hi, v[f] + 500));
    w[f] = u(rng);
    if (!(w[f] > lo && w[f] <= hi)) continue;  // same side of every split on f
    ASSERT_EQ(model.classify(w), model.classify(v));
  }
}

TEST(Trainer, EmptyDatasetThrows) { EXPECT_THROW(train_reference({}), EmptyDataset); }

TEST(Trainer, PureDatasetIsSingleLeaf) {
  std::vector<LabeledVector> d(5);
  for (auto& r : d) r.benign = true;
  auto m = train_reference(d);
  EXPECT_EQ(m.nodes().size(), 1u);
  EXPECT_EQ(m.classify(FeatureVector{}), FlowClass::Benign);
}

TEST(Trainer, SeparableDatasetGivesExactStump) {
  std::vector<LabeledVector> d;
  for (int i = 0; i < 20; ++i) {
    LabeledVector r{};
    r.x[kMinIat] = i;
    r.benign = i >= 10;
    d.push_back(r);
  }
  auto m = train_reference(d);
  EXPECT_EQ(m.depth(), 1u);
  EXPECT_EQ(m.nodes()[m.root()].feature, static_cast<std::size_t>(kMinIat));
  EXPECT_DOUBLE_EQ(m.nodes()[m.root()].threshold, 9.5);
  for (const auto& r : d) EXPECT_EQ(m.classify(r.x) == FlowClass::Benign, r.benign);
}

TEST(Trainer, TieBreaksOnLowestFeature) {
  std::vector<LabeledVector> d;
  for (int i = 0; i < 10; ++i) {
    LabeledVector r{};
    r.x[kTotalLenBwd] = i;
    r.x[kMaxLenAny] = i;
    r.benign = i < 5;
    d.push_back(r);
  }
  auto m = train_reference(d);
  EXPECT_EQ(m.nodes()[m.root()].feature, static_cast<std::size_t>(kTotalLenBwd));
}

TEST(Trainer, RespectsDepthAndDeterminism) {
  std::mt19937_64 rng(5);
  std::vector<LabeledVector> d;
  for (int i = 0; i < 3000; ++i) d.push_back({random_vector(rng), rng() % 3 == 0});
  auto a = train_reference(d, {.max_depth = 4, .min_leaf = 5});
  auto b = train_reference(d, {.max_depth = 4, .min_leaf = 5});
  EXPECT_LE(a.depth(), 4u);
  EXPECT_EQ(a.serialize(), b.serialize());
}

TEST(Trainer, TrainingRowParsesDumpSchema) {
  auto e = handshake_entry();
  auto row = flow_dump_row(e) + ",benign";
  auto lv = parse_training_row(row, 1);
  EXPECT_TRUE(lv.benign);
  auto direct = extract_features(e);
  for (std::size_t i = 0; i < kFeatureCount; ++i) EXPECT_DOUBLE_EQ(lv.x[i], direct[i]) << kFeatureNames[i];
  EXPECT_THROW(parse_training_row("1,2,3", 1), FormatError);
}
