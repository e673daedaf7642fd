#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "amirl/error.hpp"

namespace amirl::trees {

using Eigen::Index;
using RowRef = Eigen::Ref<const Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

struct TreeControls {
    int max_depth = 10;
    Index min_leaf = 5;
    /// Splits must lower the total risk by complexity * root risk (rpart's cp).
    double complexity = 0.01;
    /// Cost-complexity pruning chosen by the 1-SE rule on an internal holdout.
    bool validation_pruning = true;
    double validation_fraction = 0.2;
};

enum class SplitCriterion { variance, gini };

struct TreeNode {
    Index feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // rows with x[feature] <= threshold go left
    Index left = -1;
    Index right = -1;
    double value = 0.0;  // mean response (regression) or class-1 share (classification)
    Index n = 0;
    double risk = 0.0;
    Index leaf_id = -1;
};

class DecisionTree {
public:
    DecisionTree() = default;

    DecisionTree(std::vector<TreeNode> nodes, SplitCriterion criterion)
        : nodes_(std::move(nodes)), criterion_(criterion)
    {
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].feature < 0) {
                nodes_[i].leaf_id = static_cast<Index>(leaf_nodes_.size());
                leaf_nodes_.push_back(static_cast<Index>(i));
            } else {
                nodes_[i].leaf_id = -1;
            }
        }
    }

    [[nodiscard]] Index node_of(const RowRef& x) const
    {
        Index k = 0;
        while (nodes_[static_cast<std::size_t>(k)].feature >= 0) {
            const auto& nd = nodes_[static_cast<std::size_t>(k)];
            const double v = x(nd.feature);
            if (!std::isfinite(v)) {
                throw InputError("tree routing hit a non-finite attribute");
            }
            k = v <= nd.threshold ? nd.left : nd.right;
        }
        return k;
    }

    [[nodiscard]] Index leaf_of(const RowRef& x) const
    {
        return nodes_[static_cast<std::size_t>(node_of(x))].leaf_id;
    }

    [[nodiscard]] double predict(const RowRef& x) const
    {
        return nodes_[static_cast<std::size_t>(node_of(x))].value;
    }

    [[nodiscard]] Index n_leaves() const { return static_cast<Index>(leaf_nodes_.size()); }
    [[nodiscard]] const std::vector<TreeNode>& nodes() const { return nodes_; }
    [[nodiscard]] SplitCriterion criterion() const { return criterion_; }

    [[nodiscard]] const TreeNode& leaf(Index leaf_id) const
    {
        return nodes_[static_cast<std::size_t>(leaf_nodes_[static_cast<std::size_t>(leaf_id)])];
    }

    void set_leaf_value(Index leaf_id, double value)
    {
        nodes_[static_cast<std::size_t>(leaf_nodes_[static_cast<std::size_t>(leaf_id)])].value = value;
    }

    [[nodiscard]] int depth() const { return depth_from(0); }

private:
    [[nodiscard]] int depth_from(Index k) const
    {
        const auto& nd = nodes_[static_cast<std::size_t>(k)];
        if (nd.feature < 0) {
            return 0;
        }
        return 1 + std::max(depth_from(nd.left), depth_from(nd.right));
    }

    std::vector<TreeNode> nodes_;
    std::vector<Index> leaf_nodes_;
    SplitCriterion criterion_ = SplitCriterion::variance;
};

/// Per-attribute sort orders and holdout assignment for one attribute matrix.
/// Reusable across fits that share X but change the response (RE-EM).
class TreeWorkspace {
public:
    explicit TreeWorkspace(const Eigen::MatrixXd& X, double validation_fraction = 0.2) : X_(&X)
    {
        const Index n = X.rows();
        const Index p = X.cols();
        if (n == 0) {
            throw InputError("tree fit on empty input");
        }
        if (!X.allFinite()) {
            throw InputError("tree attributes must be finite");
        }
        // Content-based canonical rank makes every order below independent of the
        // order in which rows were supplied.
        std::vector<Index> canon(static_cast<std::size_t>(n));
        std::iota(canon.begin(), canon.end(), Index{0});
        std::sort(canon.begin(), canon.end(), [&](Index a, Index b) {
            for (Index v = 0; v < p; ++v) {
                if (X(a, v) != X(b, v)) {
                    return X(a, v) < X(b, v);
                }
            }
            return false;
        });
        rank_.assign(static_cast<std::size_t>(n), 0);
        for (Index i = 0; i < n; ++i) {
            rank_[static_cast<std::size_t>(canon[static_cast<std::size_t>(i)])] = i;
        }
        sorted_.assign(static_cast<std::size_t>(p), {});
        struct Key {
            double x;
            Index rank;
            Index row;
        };
        std::vector<Key> keys(static_cast<std::size_t>(n));
        for (Index v = 0; v < p; ++v) {
            for (Index r = 0; r < n; ++r) {
                keys[static_cast<std::size_t>(r)] = {X(r, v), rank_[static_cast<std::size_t>(r)], r};
            }
            std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
                return a.x < b.x || (a.x == b.x && a.rank < b.rank);
            });
            auto& ord = sorted_[static_cast<std::size_t>(v)];
            ord.resize(static_cast<std::size_t>(n));
            for (Index k = 0; k < n; ++k) {
                ord[static_cast<std::size_t>(k)] = keys[static_cast<std::size_t>(k)].row;
            }
        }
        holdout_.assign(static_cast<std::size_t>(n), 0);
        for (Index r = 0; r < n; ++r) {
            std::uint64_t h = 1469598103934665603ULL;
            for (Index v = 0; v < p; ++v) {
                double x = X(r, v);
                if (x == 0.0) {
                    x = 0.0;  // fold -0.0 onto 0.0
                }
                unsigned char bytes[sizeof(double)];
                std::memcpy(bytes, &x, sizeof(double));
                for (unsigned char b : bytes) {
                    h = (h ^ b) * 1099511628211ULL;
                }
            }
            h ^= h >> 33;
            h *= 0xff51afd7ed558ccdULL;
            h ^= h >> 33;
            holdout_[static_cast<std::size_t>(r)] =
                static_cast<double>(h % 100000ULL) < validation_fraction * 100000.0;
        }
    }

    [[nodiscard]] const Eigen::MatrixXd& X() const { return *X_; }
    [[nodiscard]] const std::vector<std::vector<Index>>& sorted() const { return sorted_; }
    [[nodiscard]] bool is_holdout(Index r) const { return holdout_[static_cast<std::size_t>(r)] != 0; }

private:
    const Eigen::MatrixXd* X_;
    std::vector<Index> rank_;
    std::vector<std::vector<Index>> sorted_;
    std::vector<char> holdout_;
};

namespace detail {

class Grower {
public:
    Grower(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& yc,
           SplitCriterion crit, const TreeControls& c)
        : X_(X), raw_(y), y_(yc), factor_(crit == SplitCriterion::gini ? 2.0 : 1.0), c_(c)
    {
    }

    /// Grows on the rows listed (already sorted per attribute).
    std::vector<TreeNode> grow(std::vector<std::vector<Index>> order)
    {
        order_ = std::move(order);
        nodes_.clear();
        left_.assign(static_cast<std::size_t>(X_.rows()), 0);
        const Index n = static_cast<Index>(order_.empty() ? 0 : order_[0].size());
        if (n == 0) {
            throw InputError("tree fit on empty input");
        }
        min_gain_ = -1.0;
        build(0, n, 0);
        return std::move(nodes_);
    }

private:
    Index build(Index lo, Index hi, int depth)
    {
        const Index n = hi - lo;
        const auto& ord0 = order_[0];
        double sum = 0.0;
        double raw_sum = 0.0;
        for (Index k = lo; k < hi; ++k) {
            sum += y_(ord0[static_cast<std::size_t>(k)]);
            raw_sum += raw_(ord0[static_cast<std::size_t>(k)]);
        }
        const double mean = sum / static_cast<double>(n);
        double sse = 0.0;
        for (Index k = lo; k < hi; ++k) {
            const double d = y_(ord0[static_cast<std::size_t>(k)]) - mean;
            sse += d * d;
        }
        const Index idx = static_cast<Index>(nodes_.size());
        TreeNode node;
        node.n = n;
        node.value = raw_sum / static_cast<double>(n);
        node.risk = factor_ * sse;
        nodes_.push_back(node);
        if (min_gain_ < 0.0) {
            min_gain_ = std::max(c_.complexity * node.risk, 1e-12 * node.risk);
        }
        if (depth >= c_.max_depth || n < 2 * c_.min_leaf || !(sse > 0.0)) {
            return idx;
        }

        Index best_v = -1;
        Index best_nl = 0;
        double best_gain = 0.0;
        double best_thr = 0.0;
        const double base = sum * sum / static_cast<double>(n);
        const Index p = X_.cols();
        for (Index v = 0; v < p; ++v) {
            const auto& ord = order_[static_cast<std::size_t>(v)];
            double sl = 0.0;
            for (Index k = lo; k < hi - 1; ++k) {
                const Index r = ord[static_cast<std::size_t>(k)];
                sl += y_(r);
                const Index nl = k - lo + 1;
                if (nl < c_.min_leaf) {
                    continue;
                }
                const Index nr = n - nl;
                if (nr < c_.min_leaf) {
                    break;
                }
                const double x0 = X_(r, v);
                const double x1 = X_(ord[static_cast<std::size_t>(k + 1)], v);
                if (!(x0 < x1)) {
                    continue;
                }
                const double sr = sum - sl;
                const double gain = factor_ * (sl * sl / static_cast<double>(nl) +
                                               sr * sr / static_cast<double>(nr) - base);
                if (gain > best_gain) {
                    best_gain = gain;
                    best_v = v;
                    best_nl = nl;
                    double mid = x0 + 0.5 * (x1 - x0);
                    if (!(mid < x1)) {
                        mid = x0;
                    }
                    best_thr = mid;
                }
            }
        }
        if (best_v < 0 || best_gain < min_gain_ || !(best_gain > 0.0)) {
            return idx;
        }

        const auto& bord = order_[static_cast<std::size_t>(best_v)];
        for (Index k = lo; k < hi; ++k) {
            left_[static_cast<std::size_t>(bord[static_cast<std::size_t>(k)])] = (k - lo) < best_nl;
        }
        buffer_.resize(static_cast<std::size_t>(n));
        for (auto& ord : order_) {
            Index a = 0;
            Index b = best_nl;
            for (Index k = lo; k < hi; ++k) {
                const Index r = ord[static_cast<std::size_t>(k)];
                if (left_[static_cast<std::size_t>(r)]) {
                    buffer_[static_cast<std::size_t>(a++)] = r;
                } else {
                    buffer_[static_cast<std::size_t>(b++)] = r;
                }
            }
            std::copy(buffer_.begin(), buffer_.begin() + n, ord.begin() + lo);
        }
        nodes_[static_cast<std::size_t>(idx)].feature = best_v;
        nodes_[static_cast<std::size_t>(idx)].threshold = best_thr;
        const Index l = build(lo, lo + best_nl, depth + 1);
        const Index r = build(lo + best_nl, hi, depth + 1);
        nodes_[static_cast<std::size_t>(idx)].left = l;
        nodes_[static_cast<std::size_t>(idx)].right = r;
        return idx;
    }

    const Eigen::MatrixXd& X_;
    const Eigen::VectorXd& raw_;
    const Eigen::VectorXd& y_;
    double factor_;
    const TreeControls& c_;
    double min_gain_ = -1.0;
    std::vector<std::vector<Index>> order_;
    std::vector<char> left_;
    std::vector<Index> buffer_;
    std::vector<TreeNode> nodes_;
};

/// Subtree risk and leaf count for every node (nodes are stored in preorder).
inline void subtree_stats(const std::vector<TreeNode>& nodes, const std::vector<char>& collapsed,
                          std::vector<double>& risk, std::vector<Index>& leaves)
{
    const std::size_t m = nodes.size();
    risk.assign(m, 0.0);
    leaves.assign(m, 0);
    for (std::size_t i = m; i-- > 0;) {
        const auto& nd = nodes[i];
        if (nd.feature < 0 || collapsed[i]) {
            risk[i] = nd.risk;
            leaves[i] = 1;
        } else {
            const auto l = static_cast<std::size_t>(nd.left);
            const auto r = static_cast<std::size_t>(nd.right);
            risk[i] = risk[l] + risk[r];
            leaves[i] = leaves[l] + leaves[r];
        }
    }
}

/// Weakest-link breakpoints 0 = a_0 < a_1 < ... < a_m (a_m collapses the root).
inline std::vector<double> weakest_link_alphas(const std::vector<TreeNode>& nodes)
{
    std::vector<double> alphas{0.0};
    std::vector<char> collapsed(nodes.size(), 0);
    std::vector<double> risk;
    std::vector<Index> leaves;
    while (nodes[0].feature >= 0 && !collapsed[0]) {
        subtree_stats(nodes, collapsed, risk, leaves);
        // reachable internal nodes
        std::vector<char> reach(nodes.size(), 0);
        reach[0] = 1;
        double amin = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (!reach[i] || nodes[i].feature < 0 || collapsed[i]) {
                continue;
            }
            reach[static_cast<std::size_t>(nodes[i].left)] = 1;
            reach[static_cast<std::size_t>(nodes[i].right)] = 1;
            const double g = (nodes[i].risk - risk[i]) / static_cast<double>(leaves[i] - 1);
            amin = std::min(amin, g);
        }
        amin = std::max(amin, 0.0);
        const double tol = 1e-12 * std::max(1.0, std::abs(amin));
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (!reach[i] || nodes[i].feature < 0 || collapsed[i]) {
                continue;
            }
            const double g = (nodes[i].risk - risk[i]) / static_cast<double>(leaves[i] - 1);
            if (g <= amin + tol) {
                collapsed[i] = 1;
            }
        }
        if (amin > alphas.back()) {
            alphas.push_back(amin);
        }
    }
    return alphas;
}

/// Optimal cost-complexity subtree for penalty alpha, re-packed in preorder.
inline std::vector<TreeNode> prune_at(const std::vector<TreeNode>& nodes, double alpha)
{
    const std::size_t m = nodes.size();
    std::vector<double> cost(m, 0.0);
    std::vector<char> collapse(m, 0);
    for (std::size_t i = m; i-- > 0;) {
        const auto& nd = nodes[i];
        const double own = nd.risk + alpha;
        if (nd.feature < 0) {
            cost[i] = own;
            continue;
        }
        const double kids = cost[static_cast<std::size_t>(nd.left)] + cost[static_cast<std::size_t>(nd.right)];
        if (own <= kids + 1e-12 * std::max(1.0, std::abs(kids))) {
            collapse[i] = 1;
            cost[i] = own;
        } else {
            cost[i] = kids;
        }
    }
    std::vector<TreeNode> out;
    out.reserve(m);
    auto copy = [&](auto&& self, Index k) -> Index {
        TreeNode nd = nodes[static_cast<std::size_t>(k)];
        const Index idx = static_cast<Index>(out.size());
        if (nd.feature < 0 || collapse[static_cast<std::size_t>(k)]) {
            nd.feature = -1;
            nd.left = nd.right = -1;
            nd.threshold = 0.0;
            out.push_back(nd);
            return idx;
        }
        out.push_back(nd);
        const Index l = self(self, nd.left);
        const Index r = self(self, nd.right);
        out[static_cast<std::size_t>(idx)].left = l;
        out[static_cast<std::size_t>(idx)].right = r;
        return idx;
    };
    copy(copy, 0);
    return out;
}

inline DecisionTree fit_tree(const TreeWorkspace& ws, const Eigen::VectorXd& y,
                             SplitCriterion crit, const TreeControls& c)
{
    const Eigen::MatrixXd& X = ws.X();
    const Index n = X.rows();
    if (y.size() != n) {
        throw std::invalid_argument("fit_tree: response length != attribute rows");
    }
    if (n == 0) {
        throw InputError("tree fit on empty input");
    }
    if (!y.allFinite()) {
        throw InputError("tree response must be finite");
    }
    if (c.min_leaf < 1 || c.max_depth < 0) {
        throw ConfigError("tree controls: min_leaf >= 1 and max_depth >= 0 required");
    }
    const double offset = y.mean();
    const Eigen::VectorXd yc = y.array() - offset;

    Grower grower(X, y, yc, crit, c);
    std::vector<TreeNode> full = grower.grow(ws.sorted());
    double alpha = c.complexity * full[0].risk;

    if (c.validation_pruning && full.size() > 1) {
        std::vector<std::vector<Index>> train_order(ws.sorted().size());
        for (std::size_t v = 0; v < train_order.size(); ++v) {
            for (Index r : ws.sorted()[v]) {
                if (!ws.is_holdout(r)) {
                    train_order[v].push_back(r);
                }
            }
        }
        const Index n_train = static_cast<Index>(train_order[0].size());
        const Index n_val = n - n_train;
        if (n_val >= 5 && n_train >= 2 * c.min_leaf) {
            const auto alphas = weakest_link_alphas(full);
            Grower tg(X, y, yc, crit, c);
            const std::vector<TreeNode> train_full = tg.grow(std::move(train_order));
            const double scale = full[0].risk > 0.0 ? train_full[0].risk / full[0].risk : 0.0;
            const std::size_t K = alphas.size();
            std::vector<double> err(K, 0.0);
            std::vector<double> se(K, 0.0);
            std::vector<double> sq(static_cast<std::size_t>(n_val));
            for (std::size_t k = 0; k < K; ++k) {
                const double a = k + 1 < K ? std::sqrt(alphas[k] * alphas[k + 1])
                                           : std::numeric_limits<double>::infinity();
                const DecisionTree pruned(prune_at(train_full, std::isinf(a) ? a : a * scale), crit);
                std::size_t j = 0;
                double total = 0.0;
                for (Index r = 0; r < n; ++r) {
                    if (!ws.is_holdout(r)) {
                        continue;
                    }
                    const double d = y(r) - pruned.predict(X.row(r));
                    sq[j++] = d * d;
                    total += d * d;
                }
                const double mean = total / static_cast<double>(n_val);
                double var = 0.0;
                for (double s : sq) {
                    var += (s - mean) * (s - mean);
                }
                var /= static_cast<double>(n_val - 1);
                err[k] = total;
                se[k] = std::sqrt(var * static_cast<double>(n_val));
            }
            const std::size_t kmin =
                static_cast<std::size_t>(std::min_element(err.begin(), err.end()) - err.begin());
            const double limit = err[kmin] + se[kmin];
            std::size_t kchoose = kmin;
            for (std::size_t k = K; k-- > kmin;) {
                if (err[k] <= limit) {
                    kchoose = k;
                    break;
                }
            }
            alpha = std::max(alpha, alphas[kchoose]);
        }
    }
    return DecisionTree(prune_at(full, alpha), crit);
}

} // namespace detail

inline DecisionTree fit_regression_tree(const TreeWorkspace& ws, const Eigen::VectorXd& y,
                                        const TreeControls& controls = {})
{
    return detail::fit_tree(ws, y, SplitCriterion::variance, controls);
}

/// Greedy variance-reduction CART. Ties go to the lowest attribute index, then
/// the lowest threshold; the fitted tree does not depend on row order.
inline DecisionTree fit_regression_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                        const TreeControls& controls = {})
{
    if (X.rows() == 0) {
        throw InputError("tree fit on empty input");
    }
    const TreeWorkspace ws(X, controls.validation_fraction);
    return fit_regression_tree(ws, y, controls);
}

inline DecisionTree fit_classification_tree(const TreeWorkspace& ws, const Eigen::VectorXd& y,
                                            const TreeControls& controls = {})
{
    for (Index i = 0; i < y.size(); ++i) {
        if (y(i) != 0.0 && y(i) != 1.0) {
            throw InputError("classification tree needs a binary {0,1} response");
        }
    }
    return detail::fit_tree(ws, y, SplitCriterion::gini, controls);
}

/// Gini-impurity CART for a {0,1} response; leaves hold the class-1 share.
inline DecisionTree fit_classification_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                            const TreeControls& controls = {})
{
    if (X.rows() == 0) {
        throw InputError("tree fit on empty input");
    }
    const TreeWorkspace ws(X, controls.validation_fraction);
    return fit_classification_tree(ws, y, controls);
}

/// Class-1 probability in [0, 1].
inline double predict_class(const DecisionTree& tree, const RowRef& row)
{
    return tree.predict(row);
}

/// Hard class used for imputation: share >= 0.5 maps to 1.
inline double hard_class(double share) { return share >= 0.5 ? 1.0 : 0.0; }

} // namespace amirl::trees
