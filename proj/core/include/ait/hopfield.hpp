#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "ait/tensor.hpp"
#include "ait/workspace.hpp"

namespace ait {

/// Up-projected priors stored as attractors of a continuous Hopfield network.
struct AttractorBank {
    Tensor attractors;  // [M x E]
    Scalar beta = 1;
    /// Largest Euclidean row norm of `attractors`.
    double zeta = 0;
    std::size_t max_iters = 1;
    double tol = 1e-4;

    std::size_t size() const { return attractors.dim(0); }
    std::size_t width() const { return attractors.dim(1); }
};

/// attractors = gamma * up_projection; differentiable in both operands.
AttractorBank build_attractors(const Tensor& gamma, const Tensor& up_projection, Scalar beta,
                               std::size_t max_iters = 1, double tol = 1e-4);
AttractorBank build_attractors(const ExplicitMemory& memory, const Tensor& up_projection, Scalar beta,
                               std::size_t max_iters = 1, double tol = 1e-4);

/// -lse(beta, X xi) + xi.xi / 2 + log(M) / beta + zeta^2 / 2, in double precision.
double energy(std::span<const Scalar> xi, const AttractorBank& bank);
double energy(const Tensor& xi, const AttractorBank& bank);

struct RetrievalReport {
    double energy_before = 0;
    double energy_after = 0;
    /// energy after each update, energy_trace[0] == energy_before.
    std::vector<double> energy_trace;
    std::size_t iterations = 0;
    bool converged = false;
};

struct Retrieval {
    Tensor xi_hat;
    RetrievalReport report;
};

/// Energy descent by the fixed-point update xi <- X^T softmax(beta X xi), up to
/// bank.max_iters steps or until the step norm drops below bank.tol.
/// Iterates in double precision; not recorded on the tape.
Retrieval retrieve(const Tensor& xi, const AttractorBank& bank);

/// Differentiable batched retrieval: exactly `iters` updates applied to every
/// row of xi[P x E].
Tensor retrieve_batch(const Tensor& xi, const AttractorBank& bank, std::size_t iters);

/// Per-row energies of xi[P x E], for metrics; throws NumericError naming the first non-finite patch.
std::vector<double> batch_energies(const Tensor& xi, const AttractorBank& bank);

/// Skip connection xi_hat + xi.
Tensor broadcast(const Tensor& xi_hat, const Tensor& xi);

struct EnergyTraceRow {
    std::size_t patch = 0;
    std::size_t step = 0;
    double energy = 0;
};

/// CSV with header "patch,step,energy".
void write_energy_trace(const std::filesystem::path& path, const std::vector<EnergyTraceRow>& rows);

}  // namespace ait
