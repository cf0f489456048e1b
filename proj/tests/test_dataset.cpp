#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>

#include "prunelab/dataset.hpp"
#include "test_util.hpp"

using namespace prunelab;

TEST_CASE("single-mode mixture labels every sample 0", "[dataset]") {
    MixtureSpec spec;
    spec.modes.push_back({Eigen::VectorXd::Zero(1), 1.0, 1.0});
    const Dataset ds = gen_gaussian_mixture(4, spec, 7);
    REQUIRE(ds.n() == 4);
    REQUIRE(ds.dim() == 1);
    REQUIRE(ds.labels.has_value());
    for (Eigen::Index i = 0; i < 4; ++i) CHECK((*ds.labels)(i) == 0);
}

TEST_CASE("ring mixture mode counts stay within the binomial bound", "[dataset]") {
    const int n = 1000, k = 8;
    const Dataset ds = gen_gaussian_mixture(n, ring_mixture(k, 5.0, 0.3), 1);
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < ds.n(); ++i) ++counts[static_cast<size_t>((*ds.labels)(i))];

    // binomial oracle: mean n/k, sigma = sqrt(n p (1-p)), 5 sigma band
    const double p = 1.0 / k;
    const double mean = n * p;
    const double sigma = std::sqrt(n * p * (1.0 - p));
    for (int c = 0; c < k; ++c) CHECK(std::abs(counts[static_cast<size_t>(c)] - mean) <= 5.0 * sigma);
}

TEST_CASE("mixture generation is deterministic per seed", "[dataset]") {
    const auto spec = ring_mixture(3, 2.0, 0.5);
    const Dataset a = gen_gaussian_mixture(64, spec, 1);
    const Dataset b = gen_gaussian_mixture(64, spec, 1);
    const Dataset c = gen_gaussian_mixture(64, spec, 2);
    CHECK(testutil::bits_equal(a.features, b.features));
    CHECK_FALSE(testutil::bits_equal(a.features, c.features));
}

TEST_CASE("mixture argument validation", "[dataset]") {
    MixtureSpec bad;
    bad.modes.push_back({Eigen::VectorXd::Zero(1), -1.0, 1.0});
    CHECK_THROWS_AS(gen_gaussian_mixture(4, bad, 0), std::invalid_argument);
    CHECK_THROWS_AS(gen_gaussian_mixture(0, ring_mixture(2, 1.0, 0.1), 0), std::invalid_argument);
}

TEST_CASE("two moons with zero noise lie on the unit arcs", "[dataset]") {
    const Dataset ds = gen_two_moons(4, 0.0, 0);
    REQUIRE(ds.n() == 4);
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
        const double x = ds.features(i, 0), y = ds.features(i, 1);
        const double r = (*ds.labels)(i) == 0
                             ? std::hypot(x, y)
                             : std::hypot(x - 1.0, y - 0.5);
        CHECK(r == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("two moons label counts and determinism", "[dataset]") {
    const Dataset a = gen_two_moons(200, 0.05, 3);
    const Dataset b = gen_two_moons(200, 0.05, 3);
    int zeros = 0;
    for (Eigen::Index i = 0; i < a.n(); ++i) zeros += (*a.labels)(i) == 0 ? 1 : 0;
    CHECK(zeros == 100);
    CHECK(testutil::bits_equal(a.features, b.features));
    CHECK_THROWS_AS(gen_two_moons(5, 0.0, 0), std::invalid_argument);
}

TEST_CASE("feature CSV loads with and without labels", "[dataset]") {
    testutil::TempDir tmp;
    {
        std::ofstream out(tmp.file("plain.csv"));
        out << "x0,x1\n0,0\n1,2\n";
    }
    const Dataset plain = load_features_csv(tmp.file("plain.csv"), false);
    CHECK(plain.n() == 2);
    CHECK(plain.dim() == 2);
    CHECK_FALSE(plain.labels.has_value());
    CHECK(plain.features(1, 1) == 2.0);

    {
        std::ofstream out(tmp.file("labeled.csv"));
        out << "x0,label\n0.5,1\n";
    }
    const Dataset labeled = load_features_csv(tmp.file("labeled.csv"), true);
    CHECK(labeled.n() == 1);
    CHECK(labeled.dim() == 1);
    CHECK((*labeled.labels)(0) == 1);
}

TEST_CASE("feature CSV parse errors name the line", "[dataset]") {
    testutil::TempDir tmp;
    {
        std::ofstream out(tmp.file("bad.csv"));
        out << "x0,x1\n0.5,abc\n";
    }
    CHECK_THROWS_WITH(load_features_csv(tmp.file("bad.csv"), false),
                      Catch::Matchers::ContainsSubstring("line 2"));

    {
        std::ofstream out(tmp.file("ragged.csv"));
        out << "x0,x1\n1,2\n3\n";
    }
    CHECK_THROWS_WITH(load_features_csv(tmp.file("ragged.csv"), false),
                      Catch::Matchers::ContainsSubstring("line 3"));

    { std::ofstream out(tmp.file("empty.csv")); }
    CHECK_THROWS(load_features_csv(tmp.file("empty.csv"), false));
}

TEST_CASE("attach_embeddings checks the row count", "[dataset]") {
    testutil::TempDir tmp;
    {
        std::ofstream out(tmp.file("feat.csv"));
        out << "x0\n1\n2\n3\n";
    }
    {
        std::ofstream out(tmp.file("emb.csv"));
        out << "e0,e1,e2,e3\n1,0,0,0\n0,1,0,0\n0,0,1,0\n";
    }
    {
        std::ofstream out(tmp.file("short.csv"));
        out << "e0\n1\n2\n";
    }
    Dataset ds = load_features_csv(tmp.file("feat.csv"), false);
    const Dataset with = attach_embeddings(ds, tmp.file("emb.csv"));
    REQUIRE(with.embeddings.has_value());
    CHECK(with.embeddings->rows() == 3);
    CHECK(with.embeddings->cols() == 4);
    CHECK(testutil::bits_equal(with.features, ds.features));
    CHECK_THROWS_WITH(attach_embeddings(ds, tmp.file("short.csv")),
                      Catch::Matchers::ContainsSubstring("do not match"));
}

TEST_CASE("clustering matrix prefers attached embeddings", "[dataset]") {
    Dataset ds;
    ds.features = Eigen::MatrixXd::Ones(2, 2);
    ds.ids = identity_ids(2);
    CHECK(&clustering_matrix(ds) == &ds.features);
    ds.embeddings = Eigen::MatrixXd::Zero(2, 3);
    CHECK(&clustering_matrix(ds) == &*ds.embeddings);
}

TEST_CASE("manifest round-trips byte for byte", "[dataset]") {
    testutil::TempDir tmp;
    SubsetManifest m;
    m.kept_ids = {0, 2, 5};
    m.pruning_ratio = 0.4;
    m.method_tag = "random";
    m.seed = 9;
    save_manifest(m, tmp.file("m.json"));
    const SubsetManifest back = load_manifest(tmp.file("m.json"));
    CHECK(back == m);

    // ids must appear in ascending order in the file itself
    std::ifstream in(tmp.file("m.json"));
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("[\n    0,\n    2,\n    5\n  ]") != std::string::npos);

    save_manifest(m, tmp.file("m2.json"));
    std::ifstream in2(tmp.file("m2.json"));
    std::string text2((std::istreambuf_iterator<char>(in2)), std::istreambuf_iterator<char>());
    CHECK(text == text2);
}

TEST_CASE("malformed manifest JSON is a parse error", "[dataset]") {
    testutil::TempDir tmp;
    {
        std::ofstream out(tmp.file("broken.json"));
        out << "{ not json";
    }
    CHECK_THROWS_WITH(load_manifest(tmp.file("broken.json")),
                      Catch::Matchers::ContainsSubstring("malformed"));
}

TEST_CASE("subset application preserves row identity", "[dataset]") {
    const Dataset ds = gen_gaussian_mixture(50, ring_mixture(4, 3.0, 0.2), 11);
    SubsetManifest m;
    m.kept_ids = {3, 7, 20, 49};
    m.pruning_ratio = 0.92;
    m.method_tag = "test";
    const Dataset pruned = apply_manifest(ds, m);
    REQUIRE(pruned.n() == 4);
    for (Eigen::Index i = 0; i < pruned.n(); ++i) {
        const auto original = pruned.ids[static_cast<size_t>(i)];
        CHECK(testutil::bits_equal(pruned.features.row(i), ds.features.row(original)));
        CHECK((*pruned.labels)(i) == (*ds.labels)(original));
    }
}

TEST_CASE("manifest id past the dataset end is a bounds error", "[dataset]") {
    const Dataset ds = gen_gaussian_mixture(10, ring_mixture(2, 1.0, 0.1), 0);
    SubsetManifest m;
    m.kept_ids = {0, 10};
    m.pruning_ratio = 0.8;
    CHECK_THROWS_AS(apply_manifest(ds, m), std::out_of_range);
}

TEST_CASE("reference split partitions the pool deterministically", "[dataset]") {
    const Dataset pool = gen_gaussian_mixture(100, ring_mixture(2, 2.0, 0.3), 5);
    auto [train1, ref1] = split_reference(pool, 0.2, 5);
    auto [train2, ref2] = split_reference(pool, 0.2, 5);
    CHECK(ref1.n() == 20);
    CHECK(train1.n() == 80);
    CHECK(testutil::bits_equal(train1.features, train2.features));
    CHECK(testutil::bits_equal(ref1.features, ref2.features));
}
