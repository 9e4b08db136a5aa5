#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "s2p/data.hpp"
#include "test_common.hpp"

using namespace s2p;

TEST_CASE("zero noise makes every sample of an identity identical") {
    SynthConfig cfg;
    cfg.intra_class_std = 0.0;
    cfg.camera_jitter_std = 0.0;
    const auto d = generate_synthetic(cfg);
    std::map<int, Eigen::VectorXd> first;
    for (const auto* ds : {&d.target_train, &d.target_query, &d.target_gallery})
        for (const auto& s : ds->samples) {
            auto [it, inserted] = first.emplace(s.identity, s.descriptor);
            if (!inserted) CHECK(it->second == s.descriptor);
        }
}

TEST_CASE("generator is a pure function of its config") {
    SynthConfig cfg;
    cfg.seed = 17;
    const auto a = generate_synthetic(cfg);
    const auto b = generate_synthetic(cfg);
    CHECK(a.source == b.source);
    CHECK(a.target_train == b.target_train);
    CHECK(a.target_query == b.target_query);
    CHECK(a.target_gallery == b.target_gallery);
    std::ostringstream sa, sb;
    write_feature_stream(sa, a.target_train);
    write_feature_stream(sb, b.target_train);
    CHECK(sa.str() == sb.str());
}

TEST_CASE("target sample bookkeeping: 50 identities x 8 samples") {
    SynthConfig cfg;
    cfg.n_identities_target = 50;
    cfg.samples_per_identity = 8;
    const auto d = generate_synthetic(cfg);
    CHECK(d.target_train.size() + d.target_query.size() + d.target_gallery.size() == 400);
    CHECK(d.source.size() == cfg.n_identities_source * 8);
}

TEST_CASE("query and gallery follow the cross-camera split") {
    SynthConfig cfg;
    cfg.camera_count = 3;
    const auto d = generate_synthetic(cfg);
    std::map<int, std::set<int>> query_cams;
    for (const auto& s : d.target_query.samples) query_cams[s.identity].insert(s.camera);
    std::map<int, int> gallery_count;
    for (const auto& s : d.target_gallery.samples) {
        ++gallery_count[s.identity];
        CHECK(query_cams[s.identity].count(s.camera) == 0);
    }
    for (const auto& [id, cams] : query_cams) CHECK(gallery_count[id] >= 1);
    CHECK(d.target_query.domain == Domain::Target);
    CHECK(d.target_gallery.split == Split::Gallery);
}

TEST_CASE("separation ratio is reported and degenerate configs are rejected") {
    SynthConfig cfg;
    const auto d = generate_synthetic(cfg);
    CHECK(d.separation_ratio > 1.0);
    cfg.intra_class_std = 50.0;
    CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
}

TEST_CASE("random affine shift is well conditioned and magnitude 0 is the identity") {
    const auto s = AffineShift::random(16, 3.0, 5);
    CHECK(s.condition_number() <= 10.0 + 1e-9);
    const auto id = AffineShift::random(16, 0.0, 5);
    CHECK(id.matrix.isApprox(Eigen::MatrixXd::Identity(16, 16)));
    CHECK(id.offset.isZero());
}

TEST_CASE("identity shift gives source and target centroids of the same law") {
    SynthConfig cfg;
    cfg.n_identities_source = 400;
    cfg.n_identities_target = 400;
    cfg.intra_class_std = 0.0;
    cfg.camera_jitter_std = 0.0;
    cfg.dim = 4;
    const auto d = generate_synthetic(cfg, AffineShift::identity(cfg.dim));
    auto moments = [](const Dataset& ds) {
        const Eigen::MatrixXd x = ds.descriptors();
        const Eigen::RowVectorXd mean = x.colwise().mean();
        const double var = (x.rowwise() - mean).squaredNorm() / double(x.size());
        return std::pair{mean, var};
    };
    const auto [ms, vs] = moments(d.source);
    const auto [mt, vt] = moments(d.target_train);
    CHECK(ms.cwiseAbs().maxCoeff() < 0.2);
    CHECK(mt.cwiseAbs().maxCoeff() < 0.2);
    CHECK(vs == doctest::Approx(vt).epsilon(0.15));
}

TEST_CASE("feature file: three records of dimension 4") {
    std::istringstream in("D_IN 4 DOMAIN target SPLIT query\n1\t0\t1,2,3,4\n2\t1\t0,0,0,1\n2\t0\t0.5,-1,2e-3,7\n");
    const auto ds = read_feature_stream(in);
    CHECK(ds.size() == 3);
    CHECK(ds.dim() == 4);
    CHECK(ds.domain == Domain::Target);
    CHECK(ds.split == Split::Query);
    CHECK(ds.samples[2].descriptor(2) == 2e-3);
    CHECK(ds.samples[1].camera == 1);
}

TEST_CASE("feature file errors name the record") {
    SUBCASE("NaN") {
        std::istringstream in("D_IN 2 DOMAIN source SPLIT train\n1\t0\t1,2\n1\t0\tnan,2\n");
        try {
            read_feature_stream(in);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.record() == 1);
            CHECK(std::string(e.what()).find("record 1") != std::string::npos);
        }
    }
    SUBCASE("dimension mismatch") {
        std::istringstream in("D_IN 2 DOMAIN source SPLIT train\n1\t0\t1,2,3\n");
        CHECK_THROWS_AS(read_feature_stream(in), ParseError);
    }
    SUBCASE("malformed header") {
        std::istringstream in("DIM 2\n1\t0\t1,2\n");
        try {
            read_feature_stream(in);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.record() == -1);
        }
    }
}

TEST_CASE("feature file round trip of a generated dataset") {
    const auto d = generate_synthetic(SynthConfig{});
    testing::TempDir dir("roundtrip");
    for (const auto* ds : {&d.source, &d.target_train, &d.target_query, &d.target_gallery}) {
        write_feature_file(dir.path / "f.txt", *ds);
        CHECK(load_feature_file(dir.path / "f.txt") == *ds);
    }
}

TEST_CASE("split_stream: 5 identities into 5 tasks") {
    Dataset ds;
    ds.domain = Domain::Target;
    for (int id = 0; id < 5; ++id)
        for (int k = 0; k < 3; ++k) ds.samples.push_back({Eigen::VectorXd::Constant(2, id), id, k % 2, Domain::Target});
    const auto s = split_stream(ds, 5, 3);
    REQUIRE(s.count() == 5);
    std::set<int> seen;
    for (const auto& t : s.tasks) {
        REQUIRE(t.identities().size() == 1);
        CHECK(t.size() == 3);
        seen.insert(t.identities()[0]);
    }
    CHECK(seen.size() == 5);
    CHECK_THROWS_AS(split_stream(ds, 6, 3), std::invalid_argument);
}

TEST_CASE("split_stream: 751 identities into 5 tasks") {
    Dataset ds;
    ds.domain = Domain::Target;
    for (int id = 0; id < 751; ++id) ds.samples.push_back({Eigen::VectorXd::Zero(1), 1000 + id, 0, Domain::Target});
    const auto s = split_stream(ds, 5, 9);
    int n151 = 0;
    std::set<int> all;
    std::size_t total = 0;
    for (const auto& t : s.tasks) {
        const auto ids = t.identities();
        CHECK((ids.size() == 150 || ids.size() == 151));
        n151 += ids.size() == 151;
        total += ids.size();
        all.insert(ids.begin(), ids.end());
    }
    CHECK(n151 == 1);
    CHECK(total == 751);
    CHECK(all.size() == 751);
    CHECK(s.tasks.front().identities().size() == 151);
}

TEST_CASE("split_stream is deterministic and partitions the identity set") {
    const auto d = generate_synthetic(SynthConfig{});
    for (int n : {1, 2, 3, 7}) {
        const auto a = split_stream(d.target_train, n, 42);
        const auto b = split_stream(d.target_train, n, 42);
        std::multiset<int> ids;
        for (std::size_t t = 0; t < a.count(); ++t) {
            CHECK(a.tasks[t] == b.tasks[t]);
            for (int id : a.tasks[t].identities()) ids.insert(id);
        }
        const auto expected = d.target_train.identities();
        CHECK(std::vector<int>(ids.begin(), ids.end()) == expected);
    }
}
