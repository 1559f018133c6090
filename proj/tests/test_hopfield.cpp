#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "ait/hopfield.hpp"
#include "ait/ops.hpp"

using namespace ait;

namespace {

// Bank whose attractors are exactly x (identity up-projection).
AttractorBank exact_bank(const Tensor& x, Scalar beta, std::size_t iters = 1, double tol = 0) {
    const std::size_t e = x.dim(1);
    Tensor eye({e, e});
    for (std::size_t i = 0; i < e; ++i) eye[i * e + i] = 1;
    return build_attractors(x, eye, beta, iters, tol);
}

double energy_oracle(const std::vector<double>& xi, const Tensor& x, double beta) {
    const std::size_t m = x.dim(0), e = x.dim(1);
    std::vector<double> z(m);
    double zeta = 0, mx = -1e300, xx = 0;
    for (std::size_t i = 0; i < m; ++i) {
        double n = 0;
        z[i] = 0;
        for (std::size_t c = 0; c < e; ++c) {
            z[i] += x[i * e + c] * xi[c];
            n += static_cast<double>(x[i * e + c]) * x[i * e + c];
        }
        zeta = std::max(zeta, std::sqrt(n));
        mx = std::max(mx, beta * z[i]);
    }
    double s = 0;
    for (double v : z) s += std::exp(beta * v - mx);
    for (double v : xi) xx += v * v;
    return -(mx + std::log(s)) / beta + xx / 2 + std::log(static_cast<double>(m)) / beta + zeta * zeta / 2;
}

}  // namespace

TEST(Attractors, ZetaIsLargestRowNorm) {
    Tensor x({2, 2}, std::vector<Scalar>{3, 4, 1, 0});
    auto bank = exact_bank(x, 1);
    EXPECT_DOUBLE_EQ(bank.zeta, 5);
    EXPECT_EQ(bank.size(), 2u);
    EXPECT_EQ(bank.width(), 2u);
}

TEST(Attractors, ProductWithUpProjection) {
    std::mt19937_64 rng(1);
    Tensor g = Tensor::uniform({3, 2}, rng, -1, 1);
    Tensor up = Tensor::uniform({2, 5}, rng, -1, 1);
    auto bank = build_attractors(g, up, 2);
    Tensor want = matmul(g, up);
    for (std::size_t i = 0; i < want.numel(); ++i) EXPECT_FLOAT_EQ(bank.attractors[i], want[i]);
}

TEST(Energy, StoredSingleAttractorIsZero) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 10; ++t) {
        Tensor x = Tensor::uniform({1, 6}, rng, -2, 2);
        auto bank = exact_bank(x, Scalar(0.5 + t));
        Tensor xi({6});
        for (std::size_t i = 0; i < 6; ++i) xi[i] = x[i];
        EXPECT_NEAR(energy(xi, bank), 0, 1e-5);
    }
}

TEST(Energy, MatchesDoubleOracle) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
        Tensor x = Tensor::uniform({4, 5}, rng, -1, 1);
        Tensor xi = Tensor::uniform({5}, rng, -1, 1);
        const double beta = 0.2 + t * 0.3;
        auto bank = exact_bank(x, Scalar(beta));
        std::vector<double> q(xi.data().begin(), xi.data().end());
        EXPECT_NEAR(energy(xi, bank), energy_oracle(q, x, beta), 1e-5);
    }
}

TEST(Energy, NonNegativeOnRandomStates) {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 50; ++t) {
        auto bank = exact_bank(Tensor::uniform({3, 4}, rng, -1, 1), 1);
        EXPECT_GE(energy(Tensor::uniform({4}, rng, -1, 1), bank), -1e-6);
    }
}

TEST(Retrieve, SingleAttractorOneStep) {
    std::mt19937_64 rng(5);
    Tensor x = Tensor::uniform({1, 4}, rng, -1, 1);
    auto bank = exact_bank(x, 1, 1);
    auto r = retrieve(Tensor::uniform({4}, rng, -1, 1), bank);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.xi_hat[i], x[i], 1e-6);
    EXPECT_EQ(r.report.iterations, 1u);
}

TEST(Retrieve, OrthogonalAttractorsRecovered) {
    Tensor x({2, 4}, std::vector<Scalar>{4, 0, 0, 0, 0, 4, 0, 0});
    auto bank = exact_bank(x, 8, 3);
    Tensor q({4}, std::vector<Scalar>{3.8f, 0.3f, -0.2f, 0.1f});
    auto r = retrieve(q, bank);
    EXPECT_NEAR(r.xi_hat[0], 4, 1e-3);
    EXPECT_NEAR(r.xi_hat[1], 0, 1e-3);
}

TEST(Retrieve, SmallBetaGivesMean) {
    Tensor x({2, 3}, std::vector<Scalar>{4, 0, 1, 0, 4, -1});
    auto bank = exact_bank(x, Scalar(1e-4));
    auto r = retrieve(Tensor({3}, std::vector<Scalar>{1, 0, 0}), bank);
    EXPECT_NEAR(r.xi_hat[0], 2, 1e-3);
    EXPECT_NEAR(r.xi_hat[1], 2, 1e-3);
    EXPECT_NEAR(r.xi_hat[2], 0, 1e-3);
}

TEST(Retrieve, EnergyNeverIncreases) {
    std::mt19937_64 rng(6);
    for (int t = 0; t < 200; ++t) {
        auto bank = exact_bank(Tensor::randn({5, 6}, rng), Scalar(0.1 + (t % 10)), 5);
        auto r = retrieve(Tensor::randn({6}, rng), bank);
        ASSERT_EQ(r.report.energy_trace.front(), r.report.energy_before);
        for (std::size_t s = 1; s < r.report.energy_trace.size(); ++s)
            EXPECT_LE(r.report.energy_trace[s], r.report.energy_trace[s - 1] + 1e-6);
    }
}

TEST(Retrieve, StopsOnTolerance) {
    Tensor x({1, 3}, std::vector<Scalar>{1, 2, 3});
    auto bank = exact_bank(x, 1, 50, 1e-4);
    auto r = retrieve(Tensor({3}, std::vector<Scalar>{0, 0, 0}), bank);
    EXPECT_TRUE(r.report.converged);
    EXPECT_LT(r.report.iterations, 50u);
}

TEST(RetrieveBatch, PermutationEquivariant) {
    std::mt19937_64 rng(7);
    auto bank = exact_bank(Tensor::randn({4, 5}, rng), 2);
    Tensor xi = Tensor::randn({3, 5}, rng);
    Tensor swapped({3, 5});
    const std::size_t perm[3] = {2, 0, 1};
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 5; ++c) swapped[r * 5 + c] = xi[perm[r] * 5 + c];
    Tensor a = retrieve_batch(xi, bank, 2);
    Tensor b = retrieve_batch(swapped, bank, 2);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 5; ++c) EXPECT_FLOAT_EQ(b[r * 5 + c], a[perm[r] * 5 + c]);
}

TEST(RetrieveBatch, MatchesSingleRetrieval) {
    std::mt19937_64 rng(8);
    auto bank = exact_bank(Tensor::randn({4, 5}, rng), 1, 3, 0);
    Tensor xi = Tensor::randn({2, 5}, rng);
    Tensor batch = retrieve_batch(xi, bank, 3);
    for (std::size_t r = 0; r < 2; ++r) {
        Tensor row({5});
        for (std::size_t c = 0; c < 5; ++c) row[c] = xi[r * 5 + c];
        auto single = retrieve(row, bank);
        for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(batch[r * 5 + c], single.xi_hat[c], 1e-5);
    }
}

TEST(BatchEnergies, DropAfterUpdate) {
    std::mt19937_64 rng(9);
    auto bank = exact_bank(Tensor::randn({3, 4}, rng), 1, 1);
    Tensor xi = Tensor::randn({2, 4}, rng);
    auto before = batch_energies(xi, bank);
    auto after = batch_energies(retrieve_batch(xi, bank, 1), bank);
    ASSERT_EQ(before.size(), 2u);
    for (std::size_t r = 0; r < 2; ++r) EXPECT_LE(after[r], before[r] + 1e-6);
}

TEST(Broadcast, AddsSkip) {
    Tensor a({2}, std::vector<Scalar>{1, 2});
    Tensor b({2}, std::vector<Scalar>{3, 4});
    Tensor c = broadcast(a, b);
    EXPECT_EQ(c[0], 4);
    EXPECT_EQ(c[1], 6);
}

TEST(EnergyTrace, CsvLayout) {
    const auto path = std::filesystem::temp_directory_path() / "ait_energy_trace.csv";
    write_energy_trace(path, {{0, 0, 1.5}, {0, 1, 0.25}});
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "patch,step,energy");
    std::getline(in, line);
    EXPECT_EQ(line.rfind("0,0,1.5", 0), 0u);
    std::filesystem::remove(path);
}
