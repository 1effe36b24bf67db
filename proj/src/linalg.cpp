#include "activeris/linalg.hpp"

#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace activeris {

namespace {

template <typename Mat>
Mat clamped_sqrt(const Mat& a, double tol) {
    if (a.rows() != a.cols()) throw std::invalid_argument("matrix square root: matrix is not square");
    if (a.rows() == 0) return a;
    Eigen::SelfAdjointEigenSolver<Mat> eig(a);
    if (eig.info() != Eigen::Success) throw std::runtime_error("matrix square root: eigen-decomposition failed");
    RVec ev = eig.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    if (ev.minCoeff() < -tol * scale) throw std::domain_error("matrix square root: matrix is not positive semidefinite");
    ev = ev.cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().adjoint();
}

void put_u64(std::ostream& os, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    os.write(buf, 8);
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw std::runtime_error("read_matrix: truncated input");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{buf[i]} << (8 * i);
    return v;
}

}  // namespace

CMat hermitian_sqrt(const CMat& a, double tol) { return clamped_sqrt(a, tol); }

RMat symmetric_sqrt(const RMat& a, double tol) { return clamped_sqrt(a, tol); }

bool is_hermitian(const CMat& a, double tol) {
    if (a.rows() != a.cols()) return false;
    return (a - a.adjoint()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, a.cwiseAbs().maxCoeff());
}

double min_eigenvalue(const CMat& a) {
    Eigen::SelfAdjointEigenSolver<CMat> eig(a, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().minCoeff();
}

double max_eigenvalue(const CMat& a) {
    Eigen::SelfAdjointEigenSolver<CMat> eig(a, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().maxCoeff();
}

std::uint64_t mix_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

cd complex_normal(Rng& rng) {
    std::normal_distribution<double> n(0.0, std::sqrt(0.5));
    const double re = n(rng);
    const double im = n(rng);
    return {re, im};
}

CMat complex_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    CMat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = complex_normal(rng);
    return m;
}

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

double watts_to_dbm(double watts) { return 10.0 * std::log10(watts) + 30.0; }

void write_matrix(std::ostream& os, const CMat& m) {
    put_u64(os, static_cast<std::uint64_t>(m.rows()));
    put_u64(os, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            put_u64(os, std::bit_cast<std::uint64_t>(m(i, j).real()));
            put_u64(os, std::bit_cast<std::uint64_t>(m(i, j).imag()));
        }
}

CMat read_matrix(std::istream& is) {
    const auto rows = get_u64(is);
    const auto cols = get_u64(is);
    if (rows > (1u << 20) || cols > (1u << 20)) throw std::runtime_error("read_matrix: implausible dimensions");
    CMat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double re = std::bit_cast<double>(get_u64(is));
            const double im = std::bit_cast<double>(get_u64(is));
            m(i, j) = {re, im};
        }
    return m;
}

}  // namespace activeris
