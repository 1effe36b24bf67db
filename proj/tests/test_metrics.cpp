#include "test_support.hpp"

#include <doctest.h>

using namespace activeris;
using namespace testing_support;

namespace {

// Straight-line evaluation of the received SINR from raw channel entries.
std::vector<double> scalar_rates(const CMat& f, const CVec& w, const ChannelRealization& r, const NoiseModel& nm) {
    const auto n = f.rows(), k_users = f.cols(), m = r.bs_ris.rows();
    std::vector<double> out;
    for (Eigen::Index k = 0; k < k_users; ++k) {
        double power[8] = {};
        for (Eigen::Index i = 0; i < k_users; ++i) {
            cd y = 0.0;
            for (Eigen::Index a = 0; a < n; ++a) {
                cd through_ris = 0.0;
                for (Eigen::Index b = 0; b < m; ++b)
                    through_ris += std::conj(r.ris_user[k](b)) * std::conj(w(b)) * r.bs_ris(b, a);
                y += (std::conj(r.direct[k](a)) + through_ris) * f(a, i);
            }
            power[i] = std::norm(y);
        }
        double noise = nm.user_noise[k];
        for (Eigen::Index b = 0; b < m; ++b) noise += nm.ris_noise * std::norm(r.ris_user[k](b)) * std::norm(w(b));
        double interference = 0.0;
        for (Eigen::Index i = 0; i < k_users; ++i)
            if (i != k) interference += power[i];
        out.push_back(std::log2(1.0 + power[k] / (interference + noise)));
    }
    return out;
}

struct Instance {
    ChannelStatistics stats;
    ChannelRealization real;
    NoiseModel noise;
    Beamformers bf;
};

Instance random_instance(std::uint64_t seed, std::size_t n, std::size_t m, std::size_t k, double delta = 2.0) {
    Rng rng(seed);
    Instance in;
    in.stats = random_statistics(rng, n, m, k, delta, 0.8, 0.6);
    in.real = sample_realization(in.stats, seed + 1);
    in.noise = unit_noise(k, 0.3, 0.5);
    in.bf.precoder = random_cmat(rng, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    in.bf.reflection = 2.0 * random_cvec(rng, static_cast<Eigen::Index>(m));
    return in;
}

std::vector<CMat> all_psi(const ChannelStatistics& s, const NoiseModel& nm) {
    std::vector<CMat> psi;
    for (std::size_t k = 0; k < s.num_users(); ++k) psi.push_back(psi_matrix(s, k, nm));
    return psi;
}

}  // namespace

TEST_CASE("instantaneous rate") {
    SUBCASE("RIS switched off reduces to the direct link") {
        auto in = random_instance(1, 3, 4, 1);
        in.bf.reflection.setZero();
        const double expect = std::log2(1.0 + std::norm(in.real.direct[0].dot(in.bf.precoder.col(0))) / in.noise.user_noise[0]);
        CHECK(instantaneous_rate(in.bf, in.real, in.noise)[0] == doctest::Approx(expect).epsilon(1e-14));
        in.bf.reflection.resize(0);
        CHECK(instantaneous_rate(in.bf, in.real, in.noise)[0] == doctest::Approx(expect).epsilon(1e-14));
    }
    SUBCASE("zero precoder gives zero rate") {
        auto in = random_instance(2, 3, 4, 3);
        in.bf.precoder.setZero();
        for (double r : instantaneous_rate(in.bf, in.real, in.noise)) CHECK(r == 0.0);
    }
    SUBCASE("matches a scalar re-derivation and the stacked form") {
        for (std::uint64_t seed = 10; seed < 30; ++seed) {
            const auto in = random_instance(seed, 2, 2, 2);
            const auto direct = instantaneous_rate(in.bf, in.real, in.noise);
            const auto oracle = scalar_rates(in.bf.precoder, in.bf.reflection, in.real, in.noise);
            std::vector<double> extra;
            for (std::size_t k = 0; k < 2; ++k)
                extra.push_back(ris_noise_power(in.bf.reflection, in.real.ris_user[k], in.noise.ris_noise));
            const auto stacked = stacked_rate(in.bf, effective_channels(in.real), extra, in.noise);
            for (std::size_t k = 0; k < 2; ++k) {
                CHECK(std::abs(direct[k] - oracle[k]) < 1e-12);
                CHECK(std::abs(direct[k] - stacked[k]) < 1e-12);
            }
        }
    }
    SUBCASE("stacked reflection times stacked channel equals the physical row") {
        const auto in = random_instance(3, 3, 5, 2);
        const auto h = effective_channels(in.real);
        for (std::size_t k = 0; k < 2; ++k) {
            const Eigen::RowVectorXcd lhs = stacked_reflection(in.bf.reflection).adjoint() * h[k];
            const Eigen::RowVectorXcd rhs = in.real.direct[k].adjoint() +
                in.real.ris_user[k].adjoint() * in.bf.reflection.conjugate().asDiagonal() * in.real.bs_ris;
            CHECK((lhs - rhs).norm() < 1e-12 * rhs.norm());
        }
    }
}

TEST_CASE("psi matrix") {
    Rng rng(4);
    auto s = random_statistics(rng, 2, 5, 2, 0.0, 1.0, 0.25);
    const auto nm = unit_noise(2, 0.4);
    const CMat expect = 0.25 * 0.4 * CMat::Identity(5, 5);
    CHECK((psi_matrix(s, 0, nm) - expect).norm() < 1e-15);
    s.delta[1] = 7.0;
    CHECK((psi_matrix(s, 0, nm) - expect).norm() < 1e-15);
    s.ris_user_los[0] = 0.5 * s.ris_user_los[0];
    const CMat p = psi_matrix(s, 0, nm);
    CHECK((p - CMat(p.diagonal().asDiagonal())).norm() == 0.0);
    CHECK(p.diagonal().real().minCoeff() >= 0.0);
    s.beta[1] = 0.0;
    CHECK(psi_matrix(s, 0, nm).norm() == 0.0);
}

TEST_CASE("average rate lower bound") {
    SUBCASE("no RIS noise makes the bound the instantaneous rate") {
        auto in = random_instance(5, 3, 4, 3);
        in.noise.ris_noise = 0.0;
        const auto lb = average_rate_lb(in.bf, effective_channels(in.real), all_psi(in.stats, in.noise), in.noise);
        const auto inst = instantaneous_rate(in.bf, in.real, in.noise);
        for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(lb[k] - inst[k]) < 1e-12);
    }
    SUBCASE("scaled-identity psi adds c ||w||^2 to the denominator") {
        const auto in = random_instance(6, 3, 4, 1);
        const double c = 0.37;
        const auto h = effective_channels(in.real);
        const auto lb = average_rate_lb(in.bf, h, {c * CMat::Identity(4, 4)}, in.noise);
        const double signal = std::norm((stacked_reflection(in.bf.reflection).adjoint() * h[0] * in.bf.precoder.col(0))(0));
        const double expect = std::log2(1.0 + signal / (c * in.bf.reflection.squaredNorm() + in.noise.user_noise[0]));
        CHECK(lb[0] == doctest::Approx(expect).epsilon(1e-13));
    }
    SUBCASE("bound decreases in every diagonal entry of psi") {
        const auto in = random_instance(7, 3, 4, 2);
        const auto h = effective_channels(in.real);
        auto psi = all_psi(in.stats, in.noise);
        double prev = average_rate_lb(in.bf, h, psi, in.noise)[1];
        for (Eigen::Index m = 0; m < 4; ++m) {
            psi[1](m, m) += 0.1;
            const double next = average_rate_lb(in.bf, h, psi, in.noise)[1];
            CHECK(next < prev);
            prev = next;
        }
    }
}

TEST_CASE("Jensen dominance of the average rate over RIS-noise draws") {
    // Signal terms stay at the realization's values; only the RIS-user channel inside the noise term is redrawn.
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const auto in = random_instance(seed, 3, 4, 2, 1.0);
        const ChannelSampler sampler(in.stats);
        const auto h = effective_channels(in.real);
        const auto lb = average_rate_lb(in.bf, h, all_psi(in.stats, in.noise), in.noise);
        Rng rng(seed * 7);
        const int draws = 10000;
        for (std::size_t k = 0; k < 2; ++k) {
            double sum = 0.0, sum_sq = 0.0;
            for (int d = 0; d < draws; ++d) {
                const CVec fresh = sampler.sample_ris_user(k, rng);
                std::vector<double> extra(2, 0.0);
                extra[k] = ris_noise_power(in.bf.reflection, fresh, in.noise.ris_noise);
                const double r = stacked_rate(in.bf, h, extra, in.noise)[k];
                sum += r;
                sum_sq += r * r;
            }
            const double mean = sum / draws;
            const double se = std::sqrt((sum_sq / draws - mean * mean) / draws);
            CHECK(mean >= lb[k] - 3.0 * se);
        }
    }
}

TEST_CASE("expectation of a Gaussian matrix quadratic form") {
    SUBCASE("isotropic zero-mean case") {
        const CMat e = lemma1_expectation(CMat::Zero(3, 2), CMat::Identity(3, 3), CMat::Identity(2, 2), CMat::Identity(2, 2));
        CHECK((e - 2.0 * CMat::Identity(3, 3)).norm() < 1e-15);
    }
    SUBCASE("identity transmit correlation") {
        Rng rng(8);
        const CMat mean = random_cmat(rng, 3, 2);
        const CMat rx = random_correlation(rng, 3);
        const CMat e = lemma1_expectation(mean, rx, CMat::Identity(2, 2), CMat::Identity(2, 2));
        CHECK((e - (mean * mean.adjoint() + 2.0 * rx)).norm() < 1e-13);
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(lemma1_expectation(CMat::Zero(3, 2), CMat::Identity(3, 3), CMat::Identity(3, 3), CMat::Identity(2, 2)),
                        std::invalid_argument);
    }
    SUBCASE("Monte Carlo oracle on a random 3x2 case") {
        Rng rng(9);
        const CMat mean = random_cmat(rng, 3, 2);
        const CMat rx = random_psd(rng, 3);
        const CMat tx = random_psd(rng, 2);
        const CMat x = random_cmat(rng, 2, 2);
        const CMat rx_half = hermitian_sqrt(rx), tx_half = hermitian_sqrt(tx);
        const int draws = 200000;
        CMat sum = CMat::Zero(3, 3);
        RMat sq_re = RMat::Zero(3, 3), sq_im = RMat::Zero(3, 3);
        Rng draw_rng(10);
        for (int d = 0; d < draws; ++d) {
            const CMat hm = mean + rx_half * complex_normal(draw_rng, 3, 2) * tx_half;
            const CMat q = hm * x * hm.adjoint();
            sum += q;
            sq_re += q.real().cwiseAbs2();
            sq_im += q.imag().cwiseAbs2();
        }
        const CMat avg = sum / static_cast<double>(draws);
        const CMat expect = lemma1_expectation(mean, rx, tx, x);
        for (Eigen::Index i = 0; i < 3; ++i)
            for (Eigen::Index j = 0; j < 3; ++j) {
                const double se_re = std::sqrt((sq_re(i, j) / draws - std::pow(avg(i, j).real(), 2)) / draws);
                const double se_im = std::sqrt((sq_im(i, j) / draws - std::pow(avg(i, j).imag(), 2)) / draws);
                CHECK(std::abs(avg(i, j).real() - expect(i, j).real()) <= 5.0 * se_re);
                CHECK(std::abs(avg(i, j).imag() - expect(i, j).imag()) <= 5.0 * se_im);
            }
    }
}

TEST_CASE("average RIS power") {
    SUBCASE("simple cases") {
        auto in = random_instance(20, 3, 4, 2);
        Beamformers off = in.bf;
        off.reflection.setZero();
        CHECK(average_ris_power(off, in.stats, in.noise) == 0.0);
        Beamformers silent = in.bf;
        silent.precoder.setZero();
        CHECK(average_ris_power(silent, in.stats, in.noise) ==
              doctest::Approx(in.bf.reflection.squaredNorm() * in.noise.ris_noise).epsilon(1e-14));
    }
    SUBCASE("quadratic forms in each block agree with the trace form") {
        for (std::uint64_t seed = 30; seed < 50; ++seed) {
            const auto in = random_instance(seed, 3, 5, 2);
            const double p = average_ris_power(in.bf, in.stats, in.noise);
            const auto model = statistical_ris_power(in.stats, in.noise);
            const RVec d_w = model.reflection_form(in.bf.precoder);
            const double via_w = d_w.dot(in.bf.reflection.cwiseAbs2());
            const CMat d_f = model.precoder_form(in.bf.reflection);
            const double via_f = (in.bf.precoder.adjoint() * d_f * in.bf.precoder).trace().real() +
                                 model.precoder_offset(in.bf.reflection);
            CHECK(std::abs(via_w - p) <= 1e-10 * p);
            CHECK(std::abs(via_f - p) <= 1e-10 * p);
            CHECK(std::abs(model.evaluate(in.bf.precoder, in.bf.reflection) - p) <= 1e-10 * p);
            CHECK(min_eigenvalue(d_f) >= -1e-10 * d_f.norm());
        }
    }
    SUBCASE("Monte Carlo oracle over BS-RIS draws") {
        for (std::uint64_t seed = 60; seed < 70; ++seed) {
            const auto in = random_instance(seed, 3, 4, 2, 1.5);
            const ChannelSampler sampler(in.stats);
            Rng rng(seed);
            const int draws = 200000;
            double sum = 0.0;
            for (int d = 0; d < draws; ++d) {
                const CMat h = sampler.sample_bs_ris(rng);
                sum += (in.bf.reflection.conjugate().asDiagonal() * h * in.bf.precoder).squaredNorm();
            }
            const double mc = sum / draws + in.bf.reflection.squaredNorm() * in.noise.ris_noise;
            CHECK(std::abs(mc - average_ris_power(in.bf, in.stats, in.noise)) <= 0.02 * mc);
        }
    }
    SUBCASE("exact model equals the realized power") {
        const auto in = random_instance(71, 3, 4, 2);
        const auto model = exact_ris_power(in.real.bs_ris, in.noise);
        const double expect = (in.bf.reflection.conjugate().asDiagonal() * in.real.bs_ris * in.bf.precoder).squaredNorm() +
                              in.bf.reflection.squaredNorm() * in.noise.ris_noise;
        CHECK(model.evaluate(in.bf.precoder, in.bf.reflection) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("total power consumption") {
    Rng rng(21);
    auto s = random_statistics(rng, 8, 32, 1, 1.0);
    PowerModel pm;
    pm.rf_chain = 0.2;
    pm.element_circuit = 1e-4;
    pm.element_dc = 3e-4;
    const auto nm = unit_noise(1, 0.1);
    Beamformers bf;
    bf.precoder = CMat::Zero(8, 1);
    bf.precoder(0, 0) = 1.0;
    bf.reflection = CVec::Ones(32);
    CHECK(total_power_consumption(bf, s, nm, pm, RisMode::none) == doctest::Approx(2.6));
    CHECK(total_power_consumption(bf, s, nm, pm, RisMode::passive) - total_power_consumption(bf, s, nm, pm, RisMode::none) ==
          doctest::Approx(3.2e-3));
    Beamformers idle{CMat::Zero(8, 1), CVec::Zero(32)};
    CHECK(total_power_consumption(idle, s, nm, pm, RisMode::active) == doctest::Approx(32 * 4e-4 + 8 * 0.2));
    const double active = total_power_consumption(bf, s, nm, pm, RisMode::active);
    CHECK(active == doctest::Approx(1.0 + average_ris_power(bf, s, nm) + 32 * 4e-4 + 1.6));
    CHECK(parse_ris_mode("passive") == RisMode::passive);
    CHECK_THROWS_AS(parse_ris_mode("hybrid"), std::invalid_argument);
}
