#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <random>

namespace activeris {

using cd = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

/// Hermitian square root with negative eigenvalues clamped to zero.
/// Throws std::domain_error when the input is not PSD within `tol` (relative to its norm).
CMat hermitian_sqrt(const CMat& a, double tol = 1e-10);
RMat symmetric_sqrt(const RMat& a, double tol = 1e-10);

bool is_hermitian(const CMat& a, double tol);
double min_eigenvalue(const CMat& a);
double max_eigenvalue(const CMat& a);

/// splitmix64 finalizer; used to derive independent per-trial seeds.
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t index);

using Rng = std::mt19937_64;

/// Standard circularly-symmetric complex Gaussian, E|x|^2 = 1.
cd complex_normal(Rng& rng);
CMat complex_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols);

double db_to_linear(double db);
double dbm_to_watts(double dbm);
double watts_to_dbm(double watts);

/// Binary matrix dump: two little-endian u64 (rows, cols), then row-major f64 (re, im) pairs.
void write_matrix(std::ostream& os, const CMat& m);
CMat read_matrix(std::istream& is);

}  // namespace activeris
