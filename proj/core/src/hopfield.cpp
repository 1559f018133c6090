#include "ait/hopfield.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <string>

#include "ait/error.hpp"
#include "ait/ops.hpp"

namespace ait {

namespace {

double max_row_norm(const Tensor& x) {
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    double best = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = x[r * cols + c];
            acc += v * v;
        }
        best = std::max(best, std::sqrt(acc));
    }
    return best;
}

// One fixed-point update in double precision; returns the new state.
std::vector<double> hopfield_step(const std::vector<double>& xi, const AttractorBank& bank) {
    const std::size_t m = bank.size(), e = bank.width();
    const Scalar* x = bank.attractors.ptr();
    std::vector<double> logits(m);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
        double dot = 0;
        for (std::size_t j = 0; j < e; ++j) dot += static_cast<double>(x[i * e + j]) * xi[j];
        logits[i] = static_cast<double>(bank.beta) * dot;
        mx = std::max(mx, logits[i]);
    }
    double total = 0;
    for (auto& l : logits) {
        l = std::exp(l - mx);
        total += l;
    }
    std::vector<double> next(e, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double w = logits[i] / total;
        for (std::size_t j = 0; j < e; ++j) next[j] += w * static_cast<double>(x[i * e + j]);
    }
    return next;
}

double energy_of(const std::vector<double>& xi, const AttractorBank& bank) {
    const std::size_t m = bank.size(), e = bank.width();
    const Scalar* x = bank.attractors.ptr();
    const double beta = bank.beta;
    std::vector<double> z(m);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
        double dot = 0;
        for (std::size_t j = 0; j < e; ++j) dot += static_cast<double>(x[i * e + j]) * xi[j];
        z[i] = dot;
        mx = std::max(mx, dot);
    }
    double acc = 0;
    for (auto v : z) acc += std::exp(beta * (v - mx));
    const double lse_term = mx + std::log(acc) / beta;
    double quad = 0;
    for (auto v : xi) quad += v * v;
    return -lse_term + 0.5 * quad + std::log(static_cast<double>(m)) / beta + 0.5 * bank.zeta * bank.zeta;
}

}  // namespace

AttractorBank build_attractors(const Tensor& gamma, const Tensor& up_projection, Scalar beta, std::size_t max_iters,
                               double tol) {
    if (!(beta > 0)) throw ParameterError("inverse temperature beta must be positive, got " + std::to_string(beta));
    if (max_iters == 0) throw ParameterError("Hopfield retrieval needs max_iters >= 1");
    AttractorBank bank;
    bank.attractors = matmul(gamma, up_projection);
    bank.beta = beta;
    bank.zeta = max_row_norm(bank.attractors);
    bank.max_iters = max_iters;
    bank.tol = tol;
    return bank;
}

AttractorBank build_attractors(const ExplicitMemory& memory, const Tensor& up_projection, Scalar beta,
                               std::size_t max_iters, double tol) {
    return build_attractors(memory.gamma, up_projection, beta, max_iters, tol);
}

double energy(std::span<const Scalar> xi, const AttractorBank& bank) {
    if (xi.size() != bank.width()) {
        throw ShapeError("state of width " + std::to_string(xi.size()) + " vs attractors of width " +
                         std::to_string(bank.width()));
    }
    return energy_of(std::vector<double>(xi.begin(), xi.end()), bank);
}

double energy(const Tensor& xi, const AttractorBank& bank) { return energy(xi.data(), bank); }

Retrieval retrieve(const Tensor& xi, const AttractorBank& bank) {
    if (xi.numel() != bank.width()) {
        throw ShapeError("state " + shape_str(xi.shape()) + " vs attractors " + shape_str(bank.attractors.shape()));
    }
    std::vector<double> state(xi.data().begin(), xi.data().end());
    Retrieval out;
    out.report.energy_before = energy_of(state, bank);
    out.report.energy_trace.push_back(out.report.energy_before);
    for (std::size_t it = 0; it < bank.max_iters; ++it) {
        auto next = hopfield_step(state, bank);
        double step = 0;
        for (std::size_t j = 0; j < next.size(); ++j) {
            if (!std::isfinite(next[j])) throw NumericError("non-finite Hopfield state for patch 0");
            step += (next[j] - state[j]) * (next[j] - state[j]);
        }
        state = std::move(next);
        out.report.iterations = it + 1;
        out.report.energy_trace.push_back(energy_of(state, bank));
        if (std::sqrt(step) < bank.tol) {
            out.report.converged = true;
            break;
        }
    }
    out.report.energy_after = out.report.energy_trace.back();
    std::vector<Scalar> values(state.size());
    for (std::size_t j = 0; j < state.size(); ++j) values[j] = static_cast<Scalar>(state[j]);
    out.xi_hat = Tensor(xi.shape(), std::move(values));
    return out;
}

Tensor retrieve_batch(const Tensor& xi, const AttractorBank& bank, std::size_t iters) {
    if (xi.rank() != 2 || xi.dim(1) != bank.width()) {
        throw ShapeError("retrieve_batch: states " + shape_str(xi.shape()) + " vs attractors " +
                         shape_str(bank.attractors.shape()));
    }
    Tensor keys = transpose(bank.attractors);  // [E x M]
    Tensor state = xi;
    for (std::size_t it = 0; it < iters; ++it) {
        Tensor weights = softmax(scale(matmul(state, keys), bank.beta), 1);  // [P x M]
        state = matmul(weights, bank.attractors);
    }
    return state;
}

std::vector<double> batch_energies(const Tensor& xi, const AttractorBank& bank) {
    const std::size_t rows = xi.dim(0), e = xi.dim(1);
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        std::vector<double> state(xi.data().begin() + static_cast<std::ptrdiff_t>(r * e),
                                  xi.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * e));
        out[r] = energy_of(state, bank);
        if (!std::isfinite(out[r])) throw NumericError("non-finite Hopfield energy for patch " + std::to_string(r));
    }
    return out;
}

Tensor broadcast(const Tensor& xi_hat, const Tensor& xi) {
    if (xi_hat.shape() != xi.shape()) {
        throw ShapeError("broadcast: retrieved " + shape_str(xi_hat.shape()) + " vs input " + shape_str(xi.shape()));
    }
    return add(xi_hat, xi);
}

void write_energy_trace(const std::filesystem::path& path, const std::vector<EnergyTraceRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "patch,step,energy\n" << std::setprecision(10);
    for (const auto& r : rows) out << r.patch << ',' << r.step << ',' << r.energy << '\n';
    if (!out) throw IoError("short write to " + path.string());
}

}  // namespace ait
