#include <doctest.h>

#include <cmath>

#include "s2p/eval.hpp"
#include "oracles.hpp"
#include "test_common.hpp"

using namespace s2p;
using testing::oracle_eval;
using testing::oracle_order;

TEST_CASE("ranking: self match first, ties to the lower index") {
    Rng rng(1);
    const Eigen::MatrixXd g = gaussian_matrix(6, 3, 1.0, rng);
    CHECK(rank_gallery(g.row(4), g)[0][0] == 4);

    Eigen::MatrixXd q(1, 2), gg(2, 2);
    q << 1, 0;
    gg << 1, 1, 1, -1;
    CHECK(rank_gallery(q, gg)[0] == std::vector<int>{0, 1});
}

TEST_CASE("ranking matches a brute-force similarity sort") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const Eigen::MatrixXd q = gaussian_matrix(5, 4, 1.0, rng), g = gaussian_matrix(20, 4, 1.0, rng);
        const auto r = rank_gallery(q, g);
        for (int i = 0; i < 5; ++i) CHECK(r[i] == oracle_order(q, i, g));
    }
}

TEST_CASE("AP and CMC hand cases") {
    CHECK(average_precision({true, false, false}) == 1.0);
    CHECK(average_precision({false, true}) == 0.5);
    CHECK(average_precision({false, false}) == 0.0);

    Eigen::MatrixXd q(1, 2), g(2, 2);
    q << 1, 0;
    g << 1, 0.1, 0, 1;
    const auto rep = evaluate_features(q, {{1}, {0}}, g, {{2, 1}, {1, 1}}, true);
    CHECK(rep.map_score == 0.5);
    CHECK(rep.cmc == std::vector<double>{0.0, 1.0});

    const auto first = evaluate_features(q, {{2}, {0}}, g, {{2, 1}, {1, 1}}, true);
    CHECK(first.map_score == 1.0);
    CHECK(first.rank(1) == 1.0);
}

TEST_CASE("same identity and camera gallery items are removed") {
    Eigen::MatrixXd q(1, 2), g(3, 2);
    q << 1, 0;
    g << 1, 0, 0.9, 0.5, 0.5, 0.9;
    const RetrievalLabels ql{{5}, {0}}, gl{{6, 5, 5}, {1, 0, 1}};
    CHECK(evaluate_features(q, ql, g, gl, true).map_score == 0.5);
    CHECK(evaluate_features(q, ql, g, gl, false).map_score == doctest::Approx((0.5 + 2.0 / 3.0) / 2));
    const auto none = evaluate_features(q, {{5}, {1}}, g.bottomRows(1), {{5}, {1}}, true);
    CHECK(none.n_excluded == 1);
    CHECK(none.n_queries == 0);
}

TEST_CASE("mAP and CMC match the definitional oracle") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const int nq = 1 + uniform_index(10, rng), ng = 1 + uniform_index(50, rng), ids = 1 + uniform_index(8, rng);
        const Eigen::MatrixXd q = gaussian_matrix(nq, 3, 1.0, rng), g = gaussian_matrix(ng, 3, 1.0, rng);
        RetrievalLabels ql, gl;
        for (int i = 0; i < nq; ++i) {
            ql.identities.push_back(uniform_index(ids, rng));
            ql.cameras.push_back(uniform_index(2, rng));
        }
        for (int i = 0; i < ng; ++i) {
            gl.identities.push_back(uniform_index(ids, rng));
            gl.cameras.push_back(uniform_index(2, rng));
        }
        const bool cross = seed % 2 == 0;
        const auto rep = evaluate_features(q, ql, g, gl, cross);
        const auto o = oracle_eval(q, ql, g, gl, cross);
        CHECK(rep.n_queries == o.valid);
        CHECK(rep.n_queries + rep.n_excluded == nq);
        CHECK(rep.map_score == doctest::Approx(o.map).epsilon(1e-15));
        REQUIRE(rep.cmc.size() == o.cmc.size());
        for (std::size_t k = 0; k < o.cmc.size(); ++k) CHECK(rep.cmc[k] == doctest::Approx(o.cmc[k]).epsilon(1e-15));
        for (std::size_t k = 1; k < rep.cmc.size(); ++k) CHECK(rep.cmc[k] >= rep.cmc[k - 1]);
    }
}

TEST_CASE("forgetting score") {
    CHECK(forgetting_metrics({{0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}}).score == 0.0);
    const auto f = forgetting_metrics({{0.8, 0.1}, {0.6, 0.7}});
    REQUIRE(f.per_slice.size() == 1);
    CHECK(f.per_slice[0] == doctest::Approx(-0.2));
    CHECK(f.score == doctest::Approx(-0.2));
    CHECK_THROWS_AS(forgetting_metrics({{0.5}}), std::invalid_argument);
    CHECK_THROWS_AS(forgetting_metrics({{0.5, 0.5}, {0.5}}), std::invalid_argument);
}

TEST_CASE("evaluate switches the camera filter from the data") {
    Dataset q, g;
    q.samples.push_back({Eigen::Vector2d(1, 0), 1, 0, Domain::Target});
    g.samples.push_back({Eigen::Vector2d(1, 0), 1, 0, Domain::Target});
    g.samples.push_back({Eigen::Vector2d(0.9, 0.1), 1, 1, Domain::Target});
    g.samples.push_back({Eigen::Vector2d(0, 1), 2, 1, Domain::Target});
    Mlp<double> id({2, 2});
    id.mutable_params().tensors[0] = Eigen::MatrixXd::Identity(2, 2);
    CHECK(multi_camera(q, g));
    const auto rep = evaluate(q, g, id);
    CHECK(rep.cmc.size() == 3);
    CHECK(rep.map_score == 1.0);
    CHECK(rep.rank(1) == 1.0);
}
