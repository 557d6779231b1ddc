#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "immunity/flow_cache.hpp"
#include "immunity/trace_io.hpp"

namespace immunity {

inline constexpr std::size_t kFeatureCount = 10;

enum Feature : std::size_t {
  kDstPort,
  kDuration,
  kTotalLenFwd,
  kTotalLenBwd,
  kMinLenFwd,
  kMinIat,
  kMaxLenAny,
  kRstCount,
  kPshCount,
  kAckCount,
};

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames{
    "dst_port", "duration", "total_len_fwd", "total_len_bwd", "min_len_fwd",
    "min_iat",  "max_len_any", "rst_count", "psh_count", "ack_count"};

using FeatureVector = std::array<double, kFeatureCount>;

class TooFewPackets : public std::runtime_error {
 public:
  explicit TooFewPackets(std::uint32_t n)
      : std::runtime_error("feature extraction needs >= 3 packets, flow has " + std::to_string(n)) {}
};

inline FeatureVector extract_features(const FlowEntry& e) {
  if (e.packets() < 3) throw TooFewPackets(e.packets());
  FeatureVector v{};
  v[kDstPort] = e.forward_key().dst_port;
  v[kDuration] = to_seconds(e.last_ts - e.first_ts);
  v[kTotalLenFwd] = static_cast<double>(e.bytes_fwd);
  v[kTotalLenBwd] = static_cast<double>(e.bytes_bwd);
  v[kMinLenFwd] = e.pkts_fwd ? e.min_len_fwd : 0.0;
  v[kMinIat] = to_seconds(e.min_iat);
  v[kMaxLenAny] = e.max_len_any;
  v[kRstCount] = e.flag_counts[kFlagRst];
  v[kPshCount] = e.flag_counts[kFlagPsh];
  v[kAckCount] = e.flag_counts[kFlagAck];
  return v;
}

enum class FlowClass : std::uint8_t { Benign, Unknown };

inline constexpr std::string_view class_name(FlowClass c) { return c == FlowClass::Benign ? "benign" : "unknown"; }

class ModelInvalid : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyDataset : public std::invalid_argument {
 public:
  EmptyDataset() : std::invalid_argument("training dataset is empty") {}
};

struct TreeNode {
  bool leaf = true;
  std::size_t feature = 0;
  double threshold = 0;
  std::int32_t left = -1;  // indices into TreeModel::nodes
  std::int32_t right = -1;
  FlowClass cls = FlowClass::Unknown;
  double confidence = 1.0;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline double parse_double(std::string_view s, std::uint64_t line) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw ModelInvalid("line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  return v;
}

}  // namespace detail

// Binary decision tree; nodes[root] is the entry point. Immutable once validated.
class TreeModel {
 public:
  static constexpr std::size_t kDefaultDepth = 8;

  TreeModel() : TreeModel(std::vector<TreeNode>{TreeNode{}}, 0, kDefaultDepth) {}

  TreeModel(std::vector<TreeNode> nodes, std::size_t root, std::size_t max_depth)
      : nodes_(std::move(nodes)), root_(root), max_depth_(max_depth) {
    validate();
  }

  static TreeModel single_leaf(FlowClass c, double confidence = 1.0) {
    TreeNode n;
    n.cls = c;
    n.confidence = confidence;
    return TreeModel({n}, 0, kDefaultDepth);
  }

  FlowClass classify(const FeatureVector& v) const { return classify_counted(v).first; }

  // Returns the class and the number of internal-node comparisons made.
  std::pair<FlowClass, std::size_t> classify_counted(const FeatureVector& v) const {
    std::size_t i = root_, visits = 0;
    while (!nodes_[i].leaf) {
      const auto& n = nodes_[i];
      i = static_cast<std::size_t>(v[n.feature] <= n.threshold ? n.left : n.right);
      ++visits;
    }
    return {nodes_[i].cls, visits};
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t root() const { return root_; }
  std::size_t max_depth() const { return max_depth_; }

  std::size_t depth() const { return depth_from(root_); }

  std::string serialize() const {
    std::ostringstream out;
    out << "treemodel v1 depth=" << max_depth_ << " features=" << kFeatureCount << '\n';
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& n = nodes_[i];
      if (n.leaf)
        out << "L " << i << ' ' << class_name(n.cls) << ' ' << detail::format_double(n.confidence) << '\n';
      else
        out << "N " << i << ' ' << n.feature << ' ' << detail::format_double(n.threshold) << ' ' << n.left << ' '
            << n.right << '\n';
    }
    return out.str();
  }

  static TreeModel parse(std::istream& in) {
    std::string line;
    std::uint64_t lineno = 1;
    if (!std::getline(in, line)) throw ModelInvalid("empty model file");
    std::size_t depth = 0, features = 0;
    {
      std::istringstream h(line);
      std::string magic, ver, d, f;
      h >> magic >> ver >> d >> f;
      if (magic != "treemodel" || ver != "v1" || d.rfind("depth=", 0) != 0 || f.rfind("features=", 0) != 0)
        throw ModelInvalid("bad model header '" + line + "'");
      depth = static_cast<std::size_t>(detail::parse_double(d.substr(6), 1));
      features = static_cast<std::size_t>(detail::parse_double(f.substr(9), 1));
      if (features != kFeatureCount) throw ModelInvalid("model expects " + std::to_string(features) + " features");
    }
    struct Raw {
      TreeNode node;
      long left_id = -1, right_id = -1;
    };
    std::map<long, Raw> raw;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string kind;
      long id = 0;
      ls >> kind >> id;
      if (!ls) throw ModelInvalid("line " + std::to_string(lineno) + ": malformed node");
      if (raw.contains(id)) throw ModelInvalid("line " + std::to_string(lineno) + ": duplicate node id");
      Raw r;
      if (kind == "N") {
        std::string thr;
        long feat = -1;
        ls >> feat >> thr >> r.left_id >> r.right_id;
        if (!ls || feat < 0 || static_cast<std::size_t>(feat) >= kFeatureCount)
          throw ModelInvalid("line " + std::to_string(lineno) + ": malformed split");
        r.node.leaf = false;
        r.node.feature = static_cast<std::size_t>(feat);
        r.node.threshold = detail::parse_double(thr, lineno);
      } else if (kind == "L") {
        std::string cls, conf;
        ls >> cls >> conf;
        if (!ls) throw ModelInvalid("line " + std::to_string(lineno) + ": malformed leaf");
        if (cls == "benign") r.node.cls = FlowClass::Benign;
        else if (cls == "unknown") r.node.cls = FlowClass::Unknown;
        else throw ModelInvalid("line " + std::to_string(lineno) + ": unknown class '" + cls + "'");
        r.node.confidence = detail::parse_double(conf, lineno);
      } else {
        throw ModelInvalid("line " + std::to_string(lineno) + ": unknown record '" + kind + "'");
      }
      std::string extra;
      if (ls >> extra) throw ModelInvalid("line " + std::to_string(lineno) + ": trailing fields");
      raw.emplace(id, r);
    }
    if (raw.empty()) throw ModelInvalid("model has no nodes");
    std::map<long, std::int32_t> index;
    for (const auto& [id, r] : raw) index.emplace(id, static_cast<std::int32_t>(index.size()));
    std::vector<TreeNode> nodes;
    std::vector<bool> referenced(raw.size(), false);
    for (const auto& [id, r] : raw) {
      TreeNode n = r.node;
      if (!n.leaf) {
        auto l = index.find(r.left_id), rr = index.find(r.right_id);
        if (l == index.end() || rr == index.end())
          throw ModelInvalid("node " + std::to_string(id) + " has a dangling child");
        n.left = l->second;
        n.right = rr->second;
        referenced[static_cast<std::size_t>(n.left)] = true;
        referenced[static_cast<std::size_t>(n.right)] = true;
      }
      nodes.push_back(n);
    }
    std::vector<std::size_t> roots;
    for (std::size_t i = 0; i < referenced.size(); ++i)
      if (!referenced[i]) roots.push_back(i);
    if (roots.size() != 1) throw ModelInvalid("model must have exactly one root, found " + std::to_string(roots.size()));
    return TreeModel(std::move(nodes), roots[0], depth);
  }

  static TreeModel parse(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static TreeModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open model: " + path);
    return parse(in);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write model: " + path);
    out << serialize();
  }

 private:
  void validate() const {
    if (nodes_.empty()) throw ModelInvalid("model has no nodes");
    if (root_ >= nodes_.size()) throw ModelInvalid("root index out of range");
    std::vector<int> seen(nodes_.size(), 0);
    std::vector<std::pair<std::size_t, std::size_t>> stack{{root_, 0}};
    while (!stack.empty()) {
      auto [i, d] = stack.back();
      stack.pop_back();
      if (seen[i]++) throw ModelInvalid("node " + std::to_string(i) + " reachable twice (cycle or shared child)");
      const auto& n = nodes_[i];
      if (n.leaf) continue;
      if (d + 1 > max_depth_) throw ModelInvalid("tree deeper than declared depth " + std::to_string(max_depth_));
      if (n.feature >= kFeatureCount) throw ModelInvalid("feature index out of range");
      for (auto c : {n.left, n.right}) {
        if (c < 0 || static_cast<std::size_t>(c) >= nodes_.size()) throw ModelInvalid("dangling child index");
        stack.push_back({static_cast<std::size_t>(c), d + 1});
      }
    }
    for (std::size_t i = 0; i < seen.size(); ++i)
      if (!seen[i]) throw ModelInvalid("node " + std::to_string(i) + " unreachable from root");
  }

  std::size_t depth_from(std::size_t i) const {
    const auto& n = nodes_[i];
    if (n.leaf) return 0;
    return 1 + std::max(depth_from(static_cast<std::size_t>(n.left)), depth_from(static_cast<std::size_t>(n.right)));
  }

  std::vector<TreeNode> nodes_;
  std::size_t root_;
  std::size_t max_depth_;
};

struct LabeledVector {
  FeatureVector x;
  bool benign = false;
};

struct TrainParams {
  std::size_t max_depth = TreeModel::kDefaultDepth;
  std::size_t min_leaf = 1;
};

namespace detail {

inline double gini(double benign, double total) {
  if (total <= 0) return 0;
  const double p = benign / total;
  return 2 * p * (1 - p);
}

class CartBuilder {
 public:
  CartBuilder(const std::vector<LabeledVector>& data, TrainParams params) : data_(data), params_(params) {}

  std::size_t build(std::vector<std::size_t>& rows, std::size_t depth) {
    const std::size_t n = rows.size();
    const auto benign = static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [&](auto r) { return data_[r].benign; }));
    auto make_leaf = [&] {
      TreeNode leaf;
      leaf.cls = benign * 2 > n ? FlowClass::Benign : FlowClass::Unknown;
      leaf.confidence = static_cast<double>(std::max(benign, n - benign)) / static_cast<double>(n);
      nodes.push_back(leaf);
      return nodes.size() - 1;
    };
    if (depth >= params_.max_depth || benign == 0 || benign == n || n < 2 * params_.min_leaf) return make_leaf();

    const double parent = gini(static_cast<double>(benign), static_cast<double>(n));
    double best_score = parent;
    std::size_t best_feature = 0;
    double best_thr = 0;
    bool found = false;
    std::vector<std::size_t> sorted = rows;
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      std::stable_sort(sorted.begin(), sorted.end(), [&](auto a, auto b) { return data_[a].x[f] < data_[b].x[f]; });
      std::size_t left_b = 0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left_b += data_[sorted[i]].benign;
        const double lo = data_[sorted[i]].x[f], hi = data_[sorted[i + 1]].x[f];
        if (lo == hi) continue;
        const std::size_t nl = i + 1, nr = n - nl;
        if (nl < params_.min_leaf || nr < params_.min_leaf) continue;
        const double score = (static_cast<double>(nl) * gini(static_cast<double>(left_b), static_cast<double>(nl)) +
                              static_cast<double>(nr) *
                                  gini(static_cast<double>(benign - left_b), static_cast<double>(nr))) /
                             static_cast<double>(n);
        double thr = lo + (hi - lo) / 2;
        if (!(thr >= lo && thr < hi)) thr = lo;
        // Strictly better only: ties keep the earlier (lower feature, lower threshold) split.
        if (score < best_score - 1e-12) {
          best_score = score;
          best_feature = f;
          best_thr = thr;
          found = true;
        }
      }
    }
    if (!found) return make_leaf();

    std::vector<std::size_t> left, right;
    for (auto r : rows) (data_[r].x[best_feature] <= best_thr ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const std::size_t self = nodes.size();
    TreeNode split;
    split.leaf = false;
    split.feature = best_feature;
    split.threshold = best_thr;
    nodes.push_back(split);
    const auto l = build(left, depth + 1);
    const auto r = build(right, depth + 1);
    nodes[self].left = static_cast<std::int32_t>(l);
    nodes[self].right = static_cast<std::int32_t>(r);
    return self;
  }

  std::vector<TreeNode> nodes;

 private:
  const std::vector<LabeledVector>& data_;
  TrainParams params_;
};

}  // namespace detail

// Greedy CART with Gini impurity and midpoint thresholds.
inline TreeModel train_reference(const std::vector<LabeledVector>& data, TrainParams params = {}) {
  if (data.empty()) throw EmptyDataset();
  if (params.min_leaf == 0) params.min_leaf = 1;
  detail::CartBuilder b(data, params);
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const auto root = b.build(rows, 0);
  return TreeModel(std::move(b.nodes), root, params.max_depth);
}

inline constexpr std::string_view kTrainingHeaderSuffix = ",label";

// Training rows reuse the flow dump schema plus a trailing label column.
inline LabeledVector parse_training_row(std::string_view line, std::uint64_t lineno) {
  std::vector<std::string_view> f;
  std::size_t start = 0;
  while (true) {
    auto c = line.find(',', start);
    f.push_back(line.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start));
    if (c == std::string_view::npos) break;
    start = c + 1;
  }
  if (f.size() != 24) throw FormatError(lineno, "training row needs 24 columns, got " + std::to_string(f.size()));
  auto num = [&](std::size_t i) {
    double v = 0;
    auto [p, ec] = std::from_chars(f[i].data(), f[i].data() + f[i].size(), v);
    if (ec != std::errc{} || p != f[i].data() + f[i].size())
      throw FormatError(lineno, "bad numeric column " + std::to_string(i + 1));
    return v;
  };
  LabeledVector lv;
  lv.x[kDstPort] = num(3);
  lv.x[kDuration] = num(6) - num(5);
  lv.x[kTotalLenFwd] = num(9);
  lv.x[kTotalLenBwd] = num(10);
  lv.x[kMinLenFwd] = num(11);
  lv.x[kMinIat] = num(13);
  lv.x[kMaxLenAny] = num(12);
  lv.x[kRstCount] = num(16);
  lv.x[kPshCount] = num(18);
  lv.x[kAckCount] = num(15);
  auto label = parse_label(f[23]);
  if (!label) throw FormatError(lineno, "unknown label '" + std::string(f[23]) + "'");
  lv.benign = *label == Label::Benign;
  return lv;
}

inline std::vector<LabeledVector> load_training_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open training set: " + path);
  std::string line;
  std::uint64_t lineno = 0;
  std::vector<LabeledVector> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("src_ip", 0) == 0) continue;
    out.push_back(parse_training_row(line, lineno));
  }
  return out;
}

}  // namespace immunity
