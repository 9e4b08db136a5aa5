#pragma once

// Reference implementations written as direct loops, shared by the unit tests and the
// acceptance suite.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "s2p/eval.hpp"
#include "s2p/pseudo.hpp"

namespace s2p::testing {

// Identities selected by exhaustive double loop over raw cosine similarities.
inline std::set<int> brute_force_identities(const Eigen::MatrixXd& fs, const std::vector<int>& ids, const Eigen::MatrixXd& ft) {
    std::set<int> out;
    for (Eigen::Index t = 0; t < ft.rows(); ++t) {
        double best = -2.0;
        int arg = -1;
        for (Eigen::Index s = 0; s < fs.rows(); ++s) {
            const double c = ft.row(t).dot(fs.row(s)) / (ft.row(t).norm() * fs.row(s).norm());
            if (c > best) {
                best = c;
                arg = int(s);
            }
        }
        out.insert(ids[std::size_t(arg)]);
    }
    return out;
}

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

// Core points joined into components; each border point attaches to the component whose
// lowest core index is smallest among its core neighbours; small components are dropped.
inline std::vector<int> reference_dbscan(const Eigen::MatrixXd& x, double eps, int min_pts, int min_size) {
    const int n = int(x.rows());
    Eigen::MatrixXd d(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double c = x.row(i).dot(x.row(j)) / (x.row(i).norm() * x.row(j).norm());
            d(i, j) = std::max(0.0, 1.0 - c);
        }
    std::vector<bool> core(n);
    for (int i = 0; i < n; ++i) {
        int cnt = 0;
        for (int j = 0; j < n; ++j) cnt += d(i, j) <= eps;
        core[i] = cnt >= min_pts;
    }
    UnionFind uf(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (core[i] && core[j] && d(i, j) <= eps) uf.unite(i, j);
    std::vector<int> root(n, -1);
    for (int i = 0; i < n; ++i) {
        if (core[i]) {
            root[i] = uf.find(i);
            continue;
        }
        for (int j = 0; j < n; ++j)
            if (core[j] && d(i, j) <= eps && (root[i] < 0 || uf.find(j) < root[i])) root[i] = uf.find(j);
    }
    std::map<int, int> size;
    for (int r : root)
        if (r >= 0) ++size[r];
    std::vector<int> out(n);
    for (int i = 0; i < n; ++i) out[i] = (root[i] >= 0 && size[root[i]] >= min_size) ? root[i] : kOutlier;
    return out;
}

// Relabels clusters by order of first appearance.
inline std::vector<int> canonical(const std::vector<int>& labels) {
    std::map<int, int> m;
    std::vector<int> out;
    for (int l : labels) {
        if (l == kOutlier) {
            out.push_back(kOutlier);
            continue;
        }
        auto [it, ins] = m.emplace(l, int(m.size()));
        out.push_back(it->second);
    }
    return out;
}

// Selection-order ranking over an explicit cosine table.
inline std::vector<int> oracle_order(const Eigen::MatrixXd& q, int i, const Eigen::MatrixXd& g) {
    std::vector<double> sim;
    for (int j = 0; j < g.rows(); ++j) {
        double dot = 0, nq = 0, ng = 0;
        for (int c = 0; c < g.cols(); ++c) {
            dot += q(i, c) * g(j, c);
            nq += q(i, c) * q(i, c);
            ng += g(j, c) * g(j, c);
        }
        sim.push_back(dot / std::sqrt(nq * ng));
    }
    std::vector<int> order;
    std::vector<bool> used(sim.size(), false);
    for (std::size_t r = 0; r < sim.size(); ++r) {
        int best = -1;
        for (int j = 0; j < int(sim.size()); ++j)
            if (!used[j] && (best < 0 || sim[j] > sim[best])) best = j;
        used[best] = true;
        order.push_back(best);
    }
    return order;
}

struct OracleResult {
    double map = 0;
    std::vector<double> cmc;
    int valid = 0;
};

inline OracleResult oracle_eval(const Eigen::MatrixXd& q, const RetrievalLabels& ql, const Eigen::MatrixXd& g,
                         const RetrievalLabels& gl, bool cross_camera) {
    OracleResult o;
    o.cmc.assign(g.rows(), 0.0);
    for (int i = 0; i < q.rows(); ++i) {
        int pos = 0, hits = 0, total_hits = 0, first = -1;
        double prec_sum = 0;
        for (int j : oracle_order(q, i, g)) {
            const bool same = gl.identities[j] == ql.identities[i];
            if (cross_camera && same && gl.cameras[j] == ql.cameras[i]) continue;
            ++pos;
            if (same) {
                ++hits;
                ++total_hits;
                prec_sum += double(hits) / pos;
                if (first < 0) first = pos;
            }
        }
        if (total_hits == 0) continue;
        ++o.valid;
        o.map += prec_sum / total_hits;
        for (int r = first; r <= int(g.rows()); ++r) o.cmc[r - 1] += 1;
    }
    if (o.valid) {
        o.map /= o.valid;
        for (auto& c : o.cmc) c /= o.valid;
    }
    return o;
}

}  // namespace s2p::testing
