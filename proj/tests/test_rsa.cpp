// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "branchplan/error.hpp"
#include "branchplan/rsa.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace branchplan;
using doctest::Approx;
using fixtures::TempDir;

namespace {

FeatureMatrix matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return {0, 0, rows, cols, std::move(data)};
}

std::vector<std::vector<double>> rows_of(const FeatureMatrix& f) {
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < f.rows; ++i) out.emplace_back(f.row(i).begin(), f.row(i).end());
    return out;
}

FeatureMatrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    std::vector<double> data(rows * cols);
    for (double& v : data) v = normal(rng);
    return matrix(rows, cols, std::move(data));
}

SquareMatrix random_rdm(std::size_t k, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 2.0);
    SquareMatrix m(k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) m(i, j) = m(j, i) = u(rng);
    return m;
}

RdmStack stack_of(std::size_t task, const std::vector<SquareMatrix>& slices) {
    const std::size_t k = slices[0].n;
    RdmStack s{task, slices.size(), k, {}};
    for (const auto& m : slices)
        for (double v : m.data) s.data.push_back(static_cast<float>(v));
    return s;
}

std::vector<RdmStack> random_stacks(std::size_t tasks, std::size_t depths, std::size_t k, std::mt19937_64& rng) {
    std::vector<RdmStack> out;
    for (std::size_t t = 0; t < tasks; ++t) {
        std::vector<SquareMatrix> slices;
        for (std::size_t d = 0; d < depths; ++d) slices.push_back(random_rdm(k, rng));
        out.push_back(stack_of(t, slices));
    }
    return out;
}

SquareMatrix slice_of(const RdmStack& s, std::size_t d) {
    SquareMatrix m(s.images);
    for (std::size_t i = 0; i < s.images; ++i)
        for (std::size_t j = 0; j < s.images; ++j) m(i, j) = s(d, i, j);
    return m;
}

}  // namespace

TEST_SUITE("rsa") {

TEST_CASE("pearson examples") {
    const std::vector<double> a{1, 2, 3}, b{2, 4, 6}, c{3, 2, 1};
    CHECK(pearson(a, b) == Approx(1.0).epsilon(1e-15));
    CHECK(pearson(a, c) == Approx(-1.0).epsilon(1e-15));

    const std::vector<double> x{1, 2, 4}, y{1, 3, 3};
    CHECK(std::abs(pearson(x, y) - oracle::pearson(x, y)) < 1e-12);
}

TEST_CASE("pearson on a constant vector") {
    const std::vector<double> flat{2, 2, 2}, x{1, 2, 3};
    CHECK_THROWS_WITH_AS(pearson(flat, x), doctest::Contains("zero variance"), Error);
    CHECK(pearson(flat, x, true) == 0.0);
    CHECK_THROWS_AS(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), Error);
}

TEST_CASE("average ranks share the mean position across ties") {
    const std::vector<double> v{3.0, 1.0, 3.0, 2.0, 3.0};
    CHECK(average_ranks(v) == std::vector<double>{4.0, 1.0, 4.0, 2.0, 4.0});
    CHECK(average_ranks(v) == oracle::ranks(v));
}

TEST_CASE("compute_rdm of perfectly correlated and anti-correlated rows") {
    const SquareMatrix m = compute_rdm(matrix(3, 3, {1, 2, 3, 3, 2, 1, 1, 2, 3}));
    CHECK(m(0, 1) == Approx(2.0).epsilon(1e-15));
    CHECK(m(0, 2) == Approx(0.0).epsilon(1e-15));
    CHECK(m(1, 2) == Approx(2.0).epsilon(1e-15));
    for (std::size_t i = 0; i < 3; ++i) CHECK(m(i, i) == 0.0);
}

TEST_CASE("compute_rdm is scale invariant per row") {
    const SquareMatrix m = compute_rdm(matrix(2, 3, {1, 2, 3, 2, 4, 6}));
    CHECK(std::abs(m(0, 1)) < 1e-15);
}

TEST_CASE("compute_rdm matches the double-loop reference") {
    std::mt19937_64 rng(5);
    const FeatureMatrix f = random_matrix(5, 8, rng);
    const SquareMatrix m = compute_rdm(f);
    const auto ref = oracle::rdm(rows_of(f));
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(m(i, j) - ref[i][j]) < 1e-10);
}

TEST_CASE("compute_rdm output is a valid RDM") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const FeatureMatrix f = random_matrix(3 + trial % 7, 2 + trial % 5, rng);
        const SquareMatrix m = compute_rdm(f);
        for (std::size_t i = 0; i < m.n; ++i) {
            CHECK(m(i, i) == 0.0);
            for (std::size_t j = 0; j < m.n; ++j) {
                CHECK(m(i, j) == m(j, i));
                CHECK(m(i, j) >= 0.0);
                CHECK(m(i, j) <= 2.0);
            }
        }
    }
}

TEST_CASE("compute_rdm is invariant to positive scaling and shifting of all features") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const FeatureMatrix f = random_matrix(6, 10, rng);
        std::uniform_real_distribution<double> scale(0.01, 100.0), shift(-50.0, 50.0);
        const double a = scale(rng), b = shift(rng);
        FeatureMatrix g = f;
        for (double& v : g.data) v = a * v + b;
        const SquareMatrix m1 = compute_rdm(f), m2 = compute_rdm(g);
        for (std::size_t i = 0; i < m1.data.size(); ++i) CHECK(std::abs(m1.data[i] - m2.data[i]) < 1e-9);
    }
}

TEST_CASE("constant activation row") {
    FeatureMatrix f = matrix(3, 3, {1, 2, 3, 5, 5, 5, 3, 1, 2});
    CHECK_THROWS_WITH_AS(compute_rdm(f, {}, "seg"), doctest::Contains("zero variance"), Error);
    CHECK_THROWS_WITH_AS(compute_rdm(f, {}, "seg"), doctest::Contains("task=seg"), Error);
    CHECK_THROWS_WITH_AS(compute_rdm(f, {}, "seg"), doctest::Contains("image=1"), Error);
    RsaOptions opts;
    opts.coerce_zero_variance = true;
    const SquareMatrix m = compute_rdm(f, opts);
    CHECK(m(0, 1) == 1.0);
    CHECK(m(1, 2) == 1.0);
    CHECK(m(1, 1) == 0.0);
}

TEST_CASE("streaming RDM agrees with the in-memory RDM") {
    TempDir dir;
    const std::vector<std::size_t> dims{7, 13};
    auto features = fixtures::random_features(2, dims, 9, 3);
    for (auto& per_task : features)
        for (auto& block : per_task)
            for (double& v : block) v = 100.0 + 3.0 * v;  // large offset to stress centring
    const Manifest m = fixtures::write_dataset(dir.path(), fixtures::task_names(2), fixtures::locations(dims, {1, 1}),
                                               {0, 0}, 9, features);
    for (std::size_t chunk : {1, 3, 256}) {
        RsaOptions opts;
        opts.stream_columns = chunk;
        for (std::size_t t = 0; t < 2; ++t)
            for (std::size_t d = 0; d < 2; ++d) {
                const SquareMatrix a = compute_rdm(load_features(m, t, d), opts);
                const SquareMatrix b = compute_rdm_streaming(m, t, d, opts);
                for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) < 1e-9);
            }
    }
}

TEST_CASE("feature subsampling is seeded and sorted") {
    const auto a = subsample_columns(50, 10, 7, 0);
    CHECK(a.size() == 10);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
    CHECK(a == subsample_columns(50, 10, 7, 0));
    CHECK(a != subsample_columns(50, 10, 7, 1));
    CHECK(a != subsample_columns(50, 10, 8, 0));
    CHECK(subsample_columns(5, 0, 7, 0).size() == 5);
    CHECK(subsample_columns(5, 9, 7, 0).size() == 5);
}

TEST_CASE("subsampled RDM equals the RDM of the kept columns") {
    std::mt19937_64 rng(4);
    const FeatureMatrix f = random_matrix(6, 20, rng);
    RsaOptions opts;
    opts.feature_subsample = 8;
    opts.seed = 99;
    const auto cols = subsample_columns(20, 8, 99, 0);
    std::vector<double> kept;
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t c : cols) kept.push_back(f(i, c));
    const SquareMatrix a = compute_rdm(f, opts), b = compute_rdm(matrix(6, 8, kept));
    CHECK(a.data == b.data);
}

TEST_CASE("rdm_stack shapes and identical locations") {
    TempDir dir;
    auto features = fixtures::random_features(2, {4, 4, 4, 4}, 6, 8);
    features[0][2] = features[0][1];
    const Manifest m = fixtures::write_dataset(dir.path(), fixtures::task_names(2),
                                               fixtures::locations({4, 4, 4, 4}, {1, 1, 1, 1}), {0, 0}, 6, features);
    const RdmStack s = rdm_stack(m, 0);
    CHECK(s.depths == 4);
    CHECK(s.images == 6);
    CHECK(s.data.size() == 4 * 6 * 6);
    CHECK(std::equal(s.slice(1).begin(), s.slice(1).end(), s.slice(2).begin()));
    validate_rdm_stack(s, "computed");

    const RdmStack mem = rdm_stack_in_memory(m, 0);
    for (std::size_t i = 0; i < s.data.size(); ++i) CHECK(std::abs(s.data[i] - mem.data[i]) <= 1e-6f);
    const auto all = rdm_stacks(m);
    CHECK(all.size() == 2);
    CHECK(all[0].data == s.data);
}

TEST_CASE("spearman_triu examples") {
    std::mt19937_64 rng(1);
    const SquareMatrix m = random_rdm(6, rng);
    CHECK(spearman_triu(m.view(), m.view()) == Approx(1.0).epsilon(1e-15));

    // 3 x 3 matrices whose strict upper triangles are [0.1, 0.2, 0.3] and [0.3, 0.2, 0.1]
    SquareMatrix a(3), b(3);
    a(0, 1) = a(1, 0) = 0.1;
    a(0, 2) = a(2, 0) = 0.2;
    a(1, 2) = a(2, 1) = 0.3;
    b(0, 1) = b(1, 0) = 0.3;
    b(0, 2) = b(2, 0) = 0.2;
    b(1, 2) = b(2, 1) = 0.1;
    CHECK(spearman_triu(a.view(), b.view()) == Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("spearman with ties matches the tie-corrected reference") {
    const std::vector<double> x{1, 1, 2, 3}, y{4, 3, 2, 1};
    CHECK(std::abs(spearman(x, y) - oracle::spearman(x, y)) < 1e-12);
    CHECK(std::abs(spearman(x, y) - (-3.0 / std::sqrt(10.0))) < 1e-12);
}

TEST_CASE("spearman_triu input checks") {
    SquareMatrix flat(4, 1.0);
    for (std::size_t i = 0; i < 4; ++i) flat(i, i) = 0.0;
    std::mt19937_64 rng(2);
    const SquareMatrix m = random_rdm(4, rng);
    CHECK_THROWS_WITH_AS(spearman_triu(flat.view(), m.view()), doctest::Contains("zero variance"), Error);
    CHECK(spearman_triu(flat.view(), m.view(), true) == 0.0);

    SquareMatrix skew = m;
    skew(0, 1) += 0.1;
    CHECK_THROWS_WITH_AS(spearman_triu(skew.view(), m.view()), doctest::Contains("not symmetric"), Error);
    CHECK_THROWS_AS(spearman_triu(random_rdm(2, rng).view(), random_rdm(2, rng).view()), Error);
    CHECK_THROWS_AS(spearman_triu(random_rdm(3, rng).view(), random_rdm(4, rng).view()), Error);
}

TEST_CASE("spearman_triu of a matrix with itself is one") {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> level(0, 3);
    for (int trial = 0; trial < 100; ++trial) {
        SquareMatrix m(3 + trial % 5);
        for (std::size_t i = 0; i < m.n; ++i)
            for (std::size_t j = i + 1; j < m.n; ++j) m(i, j) = m(j, i) = 0.5 * level(rng);
        const auto tri = upper_triangle(m.view());
        if (std::adjacent_find(tri.begin(), tri.end(), std::not_equal_to<>()) == tri.end()) continue;
        CHECK(spearman_triu(m.view(), m.view()) == Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("affinity of identical stacks is one everywhere") {
    std::mt19937_64 rng(3);
    auto stacks = random_stacks(1, 3, 5, rng);
    stacks.push_back(stacks[0]);
    stacks[1].task = 1;
    const AffinityTensor a = affinity_tensor(stacks);
    for (std::size_t d = 0; d < 3; ++d) CHECK(a(d, 0, 1) == Approx(1.0).epsilon(1e-15));
}

TEST_CASE("affinity tensor shape and invariants") {
    std::mt19937_64 rng(4);
    const auto stacks = random_stacks(3, 2, 6, rng);
    const AffinityTensor a = affinity_tensor(stacks);
    CHECK(a.depths() == 2);
    CHECK(a.tasks() == 3);
    for (std::size_t d = 0; d < 2; ++d)
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(a(d, i, i) == 1.0);
            for (std::size_t j = 0; j < 3; ++j) {
                CHECK(a(d, i, j) == a(d, j, i));
                CHECK(a(d, i, j) >= -1.0);
                CHECK(a(d, i, j) <= 1.0);
            }
        }
}

TEST_CASE("affinity tensor equals pairwise spearman_triu calls") {
    std::mt19937_64 rng(5);
    const auto stacks = random_stacks(3, 2, 7, rng);
    const AffinityTensor a = affinity_tensor(stacks);
    for (std::size_t d = 0; d < 2; ++d)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = i + 1; j < 3; ++j) {
                const SquareMatrix mi = slice_of(stacks[i], d), mj = slice_of(stacks[j], d);
                CHECK(std::abs(a(d, i, j) - spearman_triu(mi.view(), mj.view())) < 1e-12);
                CHECK(std::abs(a(d, i, j) - oracle::spearman(upper_triangle(mi.view()), upper_triangle(mj.view()))) <
                      1e-12);
            }
}

TEST_CASE("affinity is invariant to a shared permutation of the images") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t k = 8;
        const auto stacks = random_stacks(3, 2, k, rng);
        std::vector<std::size_t> perm(k);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        auto permuted = stacks;
        for (std::size_t t = 0; t < stacks.size(); ++t)
            for (std::size_t d = 0; d < 2; ++d)
                for (std::size_t i = 0; i < k; ++i)
                    for (std::size_t j = 0; j < k; ++j)
                        permuted[t].data[(d * k + i) * k + j] = stacks[t](d, perm[i], perm[j]);
        const AffinityTensor a = affinity_tensor(stacks), b = affinity_tensor(permuted);
        for (std::size_t i = 0; i < a.values().size(); ++i) CHECK(std::abs(a.values()[i] - b.values()[i]) < 1e-12);
    }
}

TEST_CASE("affinity is equivariant under task permutation") {
    std::mt19937_64 rng(7);
    const auto stacks = random_stacks(4, 2, 6, rng);
    const std::vector<std::size_t> perm{2, 0, 3, 1};  // new position p holds old task perm[p]
    std::vector<RdmStack> reordered;
    for (std::size_t p : perm) reordered.push_back(stacks[p]);
    const AffinityTensor a = affinity_tensor(stacks), b = affinity_tensor(reordered);
    for (std::size_t d = 0; d < 2; ++d)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) CHECK(b(d, i, j) == a(d, perm[i], perm[j]));
}

TEST_CASE("constant RDM triangle") {
    std::mt19937_64 rng(8);
    auto stacks = random_stacks(2, 1, 4, rng);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) stacks[1].data[i * 4 + j] = i == j ? 0.0f : 1.0f;
    CHECK_THROWS_WITH_AS(affinity_tensor(stacks), doctest::Contains("zero variance"), Error);
    RsaOptions opts;
    opts.coerce_zero_variance = true;
    const AffinityTensor a = affinity_tensor(stacks, opts);
    CHECK(a(0, 0, 1) == 0.0);
    CHECK(dissimilarity(a)(0, 0, 1) == 1.0);
}

TEST_CASE("dissimilarity examples") {
    AffinityTensor a(2, 2, 1.0);
    a(1, 0, 1) = a(1, 1, 0) = -1.0;
    const DissimilarityTensor dis = dissimilarity(a);
    CHECK(dis(0, 0, 1) == 0.0);
    CHECK(dis(1, 0, 1) == 2.0);
    CHECK(dis(1, 1, 1) == 0.0);

    std::mt19937_64 rng(9);
    const AffinityTensor r = affinity_tensor(random_stacks(4, 3, 6, rng));
    const DissimilarityTensor rd = dissimilarity(r);
    for (std::size_t d = 0; d < 3; ++d)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                if (i == j) {
                    CHECK(rd(d, i, j) == 0.0);
                } else {
                    CHECK(rd(d, i, j) + r(d, i, j) == Approx(1.0).epsilon(1e-15));
                    CHECK(rd(d, i, j) >= 0.0);
                    CHECK(rd(d, i, j) <= 2.0);
                }
            }
}

TEST_CASE("affinity json round trip is bit exact") {
    TempDir dir;
    const Manifest m = make_manifest(fixtures::task_names(3), fixtures::locations({2, 2}, {1, 1}), {0, 0, 0}, 5);
    std::mt19937_64 rng(10);
    const AffinityTensor a = affinity_tensor(random_stacks(3, 2, 5, rng));
    const DissimilarityTensor dis = dissimilarity(a);
    save_affinity_json(dir / "affinity.json", m, a, dis);
    const AffinityFile back = load_affinity_json(dir / "affinity.json");
    CHECK(back.tasks == std::vector<std::string>{"task0", "task1", "task2"});
    CHECK(back.locations == std::vector<std::string>{"block1", "block2"});
    CHECK(back.affinity == a);
    CHECK(back.dissimilarity == dis);

    save_affinity_csv(dir.path(), m, a);
    CHECK(std::filesystem::exists(dir / "affinity_block1.csv"));
    CHECK(std::filesystem::exists(dir / "affinity_block2.csv"));
}

}  // TEST_SUITE
