#pragma once

#include "fhn/sparse.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <memory>
#include <span>
#include <stdexcept>
#include <string>

namespace fhn {

enum class SolverMethod {
    Direct,    ///< sparse LU per solve
    Iterative, ///< BiCGSTAB with incomplete LU (ILUT) preconditioning
};

struct LinearSolverOptions {
    SolverMethod method = SolverMethod::Direct;
    double tolerance = 1e-10; ///< relative residual ||Ax - b|| <= tol * ||b||
    int max_iterations = 1000;
};

class LinearSolverError : public std::runtime_error {
public:
    enum class Kind { Singular, NotConverged };

    LinearSolverError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] Kind kind() const { return kind_; }

private:
    Kind kind_;
};

namespace detail {

using EigenCsr = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;
using EigenCsc = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

inline EigenCsr to_eigen(const SparseMatrix& a)
{
    Eigen::Map<const EigenCsr> view(a.rows(), a.cols(), static_cast<Eigen::Index>(a.nonzeros()),
                                    a.offsets().data(), a.columns().data(), a.values().data());
    return EigenCsr(view);
}

inline double relative_residual(const SparseMatrix& a, std::span<const double> x, std::span<const double> b)
{
    Vector r = a * x;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= b[i];
    const double nb = norm2(b);
    return nb > 0.0 ? norm2(r) / nb : norm2(r);
}

} // namespace detail

/// Sparse LU factorization that can be applied repeatedly.
class Factorization {
public:
    explicit Factorization(const SparseMatrix& a)
    {
        if (a.rows() != a.cols()) throw std::invalid_argument("Factorization: matrix must be square");
        lu_ = std::make_unique<Eigen::SparseLU<detail::EigenCsc, Eigen::COLAMDOrdering<int>>>();
        lu_->compute(detail::EigenCsc(detail::to_eigen(a)));
        if (lu_->info() != Eigen::Success)
            throw LinearSolverError(LinearSolverError::Kind::Singular,
                                    "sparse LU failed: " + lu_->lastErrorMessage());
        n_ = a.rows();
    }

    [[nodiscard]] int size() const { return n_; }

    [[nodiscard]] Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return lu_->solve(b); }

    [[nodiscard]] Vector solve(std::span<const double> b) const
    {
        Eigen::Map<const Eigen::VectorXd> rhs(b.data(), static_cast<Eigen::Index>(b.size()));
        Eigen::VectorXd x = lu_->solve(rhs);
        return Vector(x.data(), x.data() + x.size());
    }

private:
    std::unique_ptr<Eigen::SparseLU<detail::EigenCsc, Eigen::COLAMDOrdering<int>>> lu_;
    int n_ = 0;
};

namespace detail {

/// Eigen preconditioner adaptor applying an existing factorization of a
/// nearby matrix.
class FactorizationPreconditioner {
public:
    FactorizationPreconditioner() = default;
    explicit FactorizationPreconditioner(std::shared_ptr<const Factorization> f) : f_(std::move(f)) {}

    template <typename M> FactorizationPreconditioner& analyzePattern(const M&) { return *this; }
    template <typename M> FactorizationPreconditioner& factorize(const M&) { return *this; }
    template <typename M> FactorizationPreconditioner& compute(const M&) { return *this; }

    [[nodiscard]] Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return f_->solve(b); }
    [[nodiscard]] Eigen::ComputationInfo info() const { return Eigen::Success; }

private:
    std::shared_ptr<const Factorization> f_;
};

} // namespace detail

struct SolveReport {
    int iterations = 0;
    double relative_residual = 0.0;
};

/// Solves A x = b. Guarantees ||Ax - b|| <= tol * ||b|| or throws.
inline Vector solve(const SparseMatrix& a, std::span<const double> b, const LinearSolverOptions& opts = {},
                    SolveReport* report = nullptr)
{
    if (a.rows() != a.cols() || static_cast<int>(b.size()) != a.rows())
        throw std::invalid_argument("solve: dimension mismatch");
    Vector x;
    int iterations = 0;
    if (opts.method == SolverMethod::Direct) {
        const Factorization lu(a);
        x = lu.solve(b);
        // a couple of refinement sweeps for ill-conditioned systems
        for (int k = 0; k < 2 && detail::relative_residual(a, x, b) > opts.tolerance; ++k) {
            Vector r = a * x;
            for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] - r[i];
            axpy(1.0, lu.solve(r), x);
        }
        iterations = 1;
    } else {
        const detail::EigenCsr m = detail::to_eigen(a);
        Eigen::BiCGSTAB<detail::EigenCsr, Eigen::IncompleteLUT<double>> it;
        it.setTolerance(opts.tolerance);
        it.setMaxIterations(opts.max_iterations);
        it.compute(m);
        if (it.info() != Eigen::Success)
            throw LinearSolverError(LinearSolverError::Kind::Singular, "ILUT preconditioner failed");
        Eigen::Map<const Eigen::VectorXd> rhs(b.data(), static_cast<Eigen::Index>(b.size()));
        Eigen::VectorXd sol = it.solve(rhs);
        x.assign(sol.data(), sol.data() + sol.size());
        iterations = static_cast<int>(it.iterations());
    }
    const double res = detail::relative_residual(a, x, b);
    if (!(res <= opts.tolerance)) {
        throw LinearSolverError(opts.method == SolverMethod::Direct ? LinearSolverError::Kind::Singular
                                                                    : LinearSolverError::Kind::NotConverged,
                                "linear solve residual " + std::to_string(res) + " exceeds tolerance");
    }
    if (report) *report = {iterations, res};
    return x;
}

/// BiCGSTAB on A preconditioned by the factorization of a nearby matrix.
/// Falls back to a fresh LU of A when the iteration does not converge.
inline Vector solve_with_reference(const SparseMatrix& a, std::span<const double> b,
                                   const std::shared_ptr<const Factorization>& reference,
                                   const LinearSolverOptions& opts = {}, SolveReport* report = nullptr)
{
    if (a.rows() != a.cols() || static_cast<int>(b.size()) != a.rows() || reference->size() != a.rows())
        throw std::invalid_argument("solve_with_reference: dimension mismatch");
    const detail::EigenCsr m = detail::to_eigen(a);
    Eigen::BiCGSTAB<detail::EigenCsr, detail::FactorizationPreconditioner> it;
    it.preconditioner() = detail::FactorizationPreconditioner(reference);
    it.setTolerance(0.1 * opts.tolerance);
    it.setMaxIterations(std::min(opts.max_iterations, 200));
    it.compute(m);
    Eigen::Map<const Eigen::VectorXd> rhs(b.data(), static_cast<Eigen::Index>(b.size()));
    Eigen::VectorXd sol = it.solve(rhs);
    Vector x(sol.data(), sol.data() + sol.size());
    const double res = detail::relative_residual(a, x, b);
    if (res <= opts.tolerance) {
        if (report) *report = {static_cast<int>(it.iterations()), res};
        return x;
    }
    LinearSolverOptions direct = opts;
    direct.method = SolverMethod::Direct;
    return solve(a, b, direct, report);
}

} // namespace fhn
