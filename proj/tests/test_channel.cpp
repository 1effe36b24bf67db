#include "test_support.hpp"

#include <doctest.h>

#include <cstring>
#include <numbers>
#include <sstream>

using namespace activeris;
using namespace testing_support;

TEST_CASE("pathloss follows the log-distance law") {
    CHECK(pathloss_db(1.0, 3.5, 40.0) == doctest::Approx(-40.0));
    CHECK(pathloss_db(100.0, 2.0, 40.0) == doctest::Approx(-80.0));
    CHECK(pathloss_db(10.0, 3.5, 40.0) == doctest::Approx(-75.0));
    CHECK_THROWS_AS(pathloss_db(0.0, 2.0, 40.0), std::domain_error);
    CHECK_THROWS_AS(pathloss_db(-1.0, 2.0, 40.0), std::domain_error);
}

TEST_CASE("pathloss is strictly decreasing in distance and exponent") {
    for (double d = 1.5; d < 500.0; d *= 1.7) {
        CHECK(pathloss_db(d * 1.01, 2.0, 40.0) < pathloss_db(d, 2.0, 40.0));
        CHECK(pathloss_db(d, 3.5, 40.0) < pathloss_db(d, 2.0, 40.0));
    }
}

TEST_CASE("LoS components") {
    SUBCASE("single elements give unit channels") {
        const auto los = build_los_components(small_geometry(1, 1, 2));
        CHECK(std::abs(los.bs_ris(0, 0) - cd(1.0)) < 1e-15);
        for (const auto& h : los.ris_user) CHECK(std::abs(h(0) - cd(1.0)) < 1e-15);
    }
    SUBCASE("broadside user sees an all-ones RIS steering vector") {
        Geometry g = small_geometry(2, 6, 1);
        g.user_positions = {{g.ris_position.x, -20.0}};
        const auto los = build_los_components(g);
        for (Eigen::Index m = 0; m < 6; ++m) CHECK(std::abs(los.ris_user[0](m) - cd(1.0)) < 1e-14);
    }
    SUBCASE("user at 30 degrees from a two-element half-wavelength panel") {
        Geometry g = small_geometry(1, 2, 1);
        const double r = 20.0;
        g.user_positions = {{g.ris_position.x + r * std::sin(std::numbers::pi / 6), g.ris_position.y - r * std::cos(std::numbers::pi / 6)}};
        const auto los = build_los_components(g);
        CHECK(std::abs(los.ris_user[0](0) - cd(1.0, 0.0)) < 1e-12);
        CHECK(std::abs(los.ris_user[0](1) - cd(0.0, 1.0)) < 1e-12);
    }
    SUBCASE("entries are unit modulus and the BS-RIS part is an outer product") {
        Geometry g = small_geometry(4, 8, 3);
        g.ris_array.columns = 4;
        g.ris_array.rows = 2;
        const auto los = build_los_components(g);
        CHECK((los.bs_ris.cwiseAbs().array() - 1.0).abs().maxCoeff() < 1e-14);
        Eigen::JacobiSVD<CMat> svd(los.bs_ris);
        CHECK(svd.singularValues()(1) < 1e-10 * svd.singularValues()(0));
        for (const auto& h : los.ris_user) CHECK((h.cwiseAbs().array() - 1.0).abs().maxCoeff() < 1e-14);
        // Rows of the planar panel repeat the horizontal phase profile.
        CHECK((los.ris_user[0].head(4) - los.ris_user[0].tail(4)).norm() < 1e-14);
    }
}

TEST_CASE("exponential correlation") {
    CHECK((exponential_correlation(3, 0.0) - CMat::Identity(3, 3)).norm() == 0.0);
    const CMat c = exponential_correlation(2, 0.5);
    CHECK(std::abs(c(0, 1) - cd(0.5)) == 0.0);
    CHECK(std::abs(c(1, 0) - cd(0.5)) == 0.0);
    CHECK(std::abs(c(0, 0) - cd(1.0)) == 0.0);
    // Closed-form spectrum of the Kac-Murdock-Szego matrix is positive; check directly.
    Eigen::SelfAdjointEigenSolver<CMat> eig(exponential_correlation(4, 0.9));
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
    CHECK_THROWS_AS(exponential_correlation(3, 1.0), std::domain_error);
    CHECK_THROWS_AS(exponential_correlation(3, -0.1), std::domain_error);
}

TEST_CASE("statistics from geometry satisfy their invariants") {
    ChannelModelParams p;
    p.bs_correlation = 0.3;
    p.ris_correlation = 0.6;
    const auto s = build_statistics(small_geometry(4, 8, 3), p);
    CHECK_NOTHROW(s.validate());
    CHECK(s.beta.size() == 4);
    CHECK(s.beta_direct.size() == 3);
    CHECK(s.beta[0] == doctest::Approx(db_to_linear(pathloss_db(std::hypot(80.0, 10.0), 2.0, 40.0))));
}

TEST_CASE("invalid statistics are rejected") {
    Rng rng(3);
    auto s = random_statistics(rng, 2, 3, 1, 1.0);
    s.ris_correlation(0, 1) += 0.3;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    auto t = random_statistics(rng, 2, 3, 1, 1.0);
    t.bs_correlation = CMat::Identity(2, 2);
    t.bs_correlation(0, 1) = t.bs_correlation(1, 0) = 2.0;
    CHECK_THROWS_AS(ChannelSampler{t}, std::invalid_argument);
}

TEST_CASE("realizations") {
    Rng rng(11);
    auto s = random_statistics(rng, 3, 4, 2, 2.0, 0.7, 0.4);

    SUBCASE("cascaded channel is the row-scaled BS-RIS channel") {
        const auto r = sample_realization(s, 42);
        for (std::size_t k = 0; k < 2; ++k) {
            const CMat expect = r.ris_user[k].conjugate().asDiagonal() * r.bs_ris;
            CHECK((r.cascaded[k] - expect).norm() <= 1e-12 * expect.norm());
        }
    }
    SUBCASE("same seed gives bit-identical draws") {
        const auto a = sample_realization(s, 7);
        const auto b = sample_realization(s, 7);
        CHECK(a.bs_ris == b.bs_ris);
        for (std::size_t k = 0; k < 2; ++k) {
            CHECK(a.direct[k] == b.direct[k]);
            CHECK(a.ris_user[k] == b.ris_user[k]);
            CHECK(a.cascaded[k] == b.cascaded[k]);
        }
        const auto c = sample_realization(s, 8);
        CHECK(a.bs_ris != c.bs_ris);
    }
    SUBCASE("huge Rician factor collapses to the LoS channel") {
        s.delta[0] = 1e12;
        const auto r = sample_realization(s, 5);
        const CMat los = std::sqrt(s.beta[0]) * s.bs_ris_los;
        CHECK((r.bs_ris - los).norm() <= 1e-5 * los.norm());
    }
    SUBCASE("zero pathloss gain gives a zero channel") {
        s.beta[1] = 0.0;
        const auto r = sample_realization(s, 5);
        CHECK(r.ris_user[0].norm() == 0.0);
        CHECK(r.cascaded[0].norm() == 0.0);
    }
}

TEST_CASE("BS-RIS channel mean matches the LoS component within sampling error") {
    Rng rng(12);
    const auto s = random_statistics(rng, 2, 2, 1, 3.0, 0.5, 1.0);
    const ChannelSampler sampler(s);
    const int draws = 100000;
    Rng draw_rng(99);
    CMat sum = CMat::Zero(2, 2);
    RMat sum_sq_re = RMat::Zero(2, 2), sum_sq_im = RMat::Zero(2, 2);
    for (int i = 0; i < draws; ++i) {
        const CMat h = sampler.sample_bs_ris(draw_rng);
        sum += h;
        sum_sq_re += h.real().cwiseAbs2();
        sum_sq_im += h.imag().cwiseAbs2();
    }
    const CMat mean = sum / static_cast<double>(draws);
    const CMat expect = std::sqrt(s.beta[0] * s.delta[0] / (s.delta[0] + 1.0)) * s.bs_ris_los;
    for (Eigen::Index i = 0; i < 2; ++i)
        for (Eigen::Index j = 0; j < 2; ++j) {
            const double var_re = sum_sq_re(i, j) / draws - std::pow(mean(i, j).real(), 2);
            const double var_im = sum_sq_im(i, j) / draws - std::pow(mean(i, j).imag(), 2);
            CHECK(std::abs(mean(i, j).real() - expect(i, j).real()) <= 3.0 * std::sqrt(var_re / draws));
            CHECK(std::abs(mean(i, j).imag() - expect(i, j).imag()) <= 3.0 * std::sqrt(var_im / draws));
        }
}

TEST_CASE("NLoS covariance has Kronecker structure") {
    Rng rng(13);
    const auto s = random_statistics(rng, 2, 2, 1, 1.5, 2.0, 1.0);
    const ChannelSampler sampler(s);
    const CMat mean = std::sqrt(s.beta[0] * s.delta[0] / (s.delta[0] + 1.0)) * s.bs_ris_los;
    const double scale = s.beta[0] / (s.delta[0] + 1.0);
    const int draws = 20000;
    Rng draw_rng(100);
    std::vector<CVec> samples;
    for (int i = 0; i < draws; ++i) {
        const CMat nlos = sampler.sample_bs_ris(draw_rng) - mean;
        CVec v(4);
        v << nlos(0, 0), nlos(0, 1), nlos(1, 0), nlos(1, 1);
        samples.push_back(v);
    }
    // Oracle: E[H_ij conj(H_kl)] = scale * Sigma_R(i,k) * Sigma_B(l,j).
    const int idx[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
            const cd expect = scale * s.ris_correlation(idx[a][0], idx[b][0]) * s.bs_correlation(idx[b][1], idx[a][1]);
            cd mean_prod = 0.0;
            double sq_re = 0.0, sq_im = 0.0;
            for (const auto& v : samples) {
                const cd p = v(a) * std::conj(v(b));
                mean_prod += p;
                sq_re += p.real() * p.real();
                sq_im += p.imag() * p.imag();
            }
            mean_prod /= static_cast<double>(draws);
            const double se_re = std::sqrt((sq_re / draws - std::pow(mean_prod.real(), 2)) / draws);
            const double se_im = std::sqrt((sq_im / draws - std::pow(mean_prod.imag(), 2)) / draws);
            CHECK(std::abs(mean_prod.real() - expect.real()) <= 5.0 * se_re + 1e-15);
            CHECK(std::abs(mean_prod.imag() - expect.imag()) <= 5.0 * se_im + 1e-15);
        }
}

TEST_CASE("binary matrix dump round-trips and has the documented layout") {
    CMat m(2, 3);
    m << cd(1, 2), cd(3, 4), cd(5, 6), cd(-1, 0.5), cd(0, 0), cd(1e-300, -7);
    std::stringstream ss;
    write_matrix(ss, m);
    const std::string bytes = ss.str();
    REQUIRE(bytes.size() == 16 + 2 * 3 * 16);
    CHECK(static_cast<unsigned char>(bytes[0]) == 2);
    CHECK(static_cast<unsigned char>(bytes[8]) == 3);
    double first_im = 0.0;
    std::memcpy(&first_im, bytes.data() + 24, 8);
    CHECK(first_im == 2.0);
    CHECK(read_matrix(ss) == m);
}

TEST_CASE("seed mixing is deterministic and spreads indices") {
    CHECK(mix_seed(1, 0) == mix_seed(1, 0));
    CHECK(mix_seed(1, 0) != mix_seed(1, 1));
    CHECK(mix_seed(1, 0) != mix_seed(2, 0));
}
