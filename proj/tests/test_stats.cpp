#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include "pdro/classifier.hpp"
#include "pdro/errors.hpp"
#include "pdro/stats.hpp"
#include "test_support.hpp"

using namespace pdro;
using pdro::testing::TempDir;

namespace {

// Dense weighted least squares and F statistic: the oracle for gls_fit.
struct WlsOracle {
    double intercept, beta, f0;
};

WlsOracle wls_oracle(const std::vector<double>& g, const std::vector<double>& p,
                     const std::vector<double>& w) {
    const auto m = static_cast<Eigen::Index>(g.size());
    Eigen::MatrixXd X(m, 2);
    Eigen::VectorXd y(m);
    Eigen::VectorXd W(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        X(i, 0) = 1;
        X(i, 1) = g[i];
        y(i) = p[i];
        W(i) = w[i];
    }
    const Eigen::MatrixXd XtW = X.transpose() * W.asDiagonal();
    const Eigen::Vector2d b = (XtW * X).colPivHouseholderQr().solve(XtW * y);
    const Eigen::VectorXd r_full = y - X * b;
    const double mean = (W.array() * y.array()).sum() / W.sum();
    const Eigen::VectorXd r_restricted = (y.array() - mean).matrix();
    const double rss_full = (W.array() * r_full.array().square()).sum();
    const double rss_r = (W.array() * r_restricted.array().square()).sum();
    return {b(0), b(1), (rss_r - rss_full) / (rss_full / static_cast<double>(m - 2))};
}

double welch_oracle_t(const std::vector<double>& a, const std::vector<double>& b, double& df) {
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto var = [&](const std::vector<double>& v) {
        const double mu = mean(v);
        double s = 0;
        for (double x : v) s += (x - mu) * (x - mu);
        return s / static_cast<double>(v.size() - 1);
    };
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double sa = var(a) / na, sb = var(b) / nb;
    df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1) + sb * sb / (nb - 1));
    return (mean(b) - mean(a)) / std::sqrt(sa + sb);
}

} // namespace

TEST(SpecialFunctions, PublishedFTestConstant) {
    const auto t0 = std::chrono::steady_clock::now();
    const double p = f_survival(5.392, 1, 39);
    const auto elapsed = std::chrono::steady_clock::now() - t0;
    EXPECT_NEAR(p, 0.02554, 0.0005);
    EXPECT_LT(std::chrono::duration<double>(elapsed).count(), 1e-3);
}

TEST(SpecialFunctions, LogGammaReference) {
    // scipy.special.gammaln
    const std::pair<double, double> cases[] = {
        {0.1, 2.252712651734206},  {0.5, 0.5723649429247},  {1.0, 0.0},
        {2.5, 0.2846828704729192}, {10, 12.801827480081469}, {100.5, 361.43554046777757}};
    for (auto [x, want] : cases) EXPECT_NEAR(log_gamma(x), want, 1e-12 * std::max(1.0, want)) << x;
    EXPECT_THROW(log_gamma(0), ParameterError);
}

TEST(SpecialFunctions, IncompleteBetaReference) {
    // scipy.special.betainc
    struct Case {
        double a, b, x, want;
    };
    const Case cases[] = {{0.5, 0.5, 0.3, 0.36901011956554536}, {2, 3, 0.4, 0.5248},
                          {10, 20, 0.35, 0.5923866636639051},   {0.1, 5, 0.01, 0.7690889207843462},
                          {50, 50, 0.52, 0.6551127621245635},   {19.5, 0.5, 0.97, 0.2788231805838087}};
    for (const auto& c : cases)
        EXPECT_NEAR(regularized_incomplete_beta(c.a, c.b, c.x), c.want, 1e-10) << c.a << ' ' << c.b;
    EXPECT_EQ(regularized_incomplete_beta(2, 3, 0), 0);
    EXPECT_EQ(regularized_incomplete_beta(2, 3, 1), 1);
    EXPECT_THROW(regularized_incomplete_beta(0, 1, 0.5), ParameterError);
    EXPECT_THROW(regularized_incomplete_beta(1, 1, 1.5), ParameterError);
}

TEST(SpecialFunctions, SurvivalReference) {
    // scipy.stats.t.sf / scipy.stats.f.sf
    EXPECT_NEAR(t_survival(2.0, 5), 0.05096973941492914, 1e-10);
    EXPECT_NEAR(t_survival(0.7, 12.3), 0.24847706352915216, 1e-10);
    EXPECT_NEAR(t_survival(3.852, 98), 0.00010457563636179828, 1e-10);
    EXPECT_NEAR(t_survival(-1.5, 3), 0.8847080673775886, 1e-10);
    EXPECT_NEAR(f_survival(2.5, 3, 17), 0.09428280507894803, 1e-10);
    EXPECT_NEAR(f_survival(0.4, 5, 8), 0.8361409386088154, 1e-10);
    EXPECT_NEAR(f_survival(10, 1, 10), 0.010119559735433718, 1e-10);
}

TEST(SpecialFunctions, TSurvivalClosedForms) {
    for (double df : {0.5, 1.0, 3.0, 40.0, 1e4}) EXPECT_DOUBLE_EQ(t_survival(0, df), 0.5);
    // Cauchy: 1/2 - atan(t)/pi
    EXPECT_NEAR(t_survival(1, 1), 0.25, 1e-12);
    EXPECT_NEAR(t_survival(3, 1), 0.5 - std::atan(3.0) / std::numbers::pi, 1e-12);
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const double t = rng.uniform(-8, 8), df = rng.uniform(0.2, 200);
        EXPECT_NEAR(t_survival(t, df) + t_survival(-t, df), 1.0, 1e-12);
    }
    EXPECT_THROW(t_survival(1, 0), ParameterError);
    EXPECT_THROW(t_survival(1, -2), ParameterError);
}

TEST(SpecialFunctions, FSurvivalEdgesAndIdentity) {
    EXPECT_EQ(f_survival(0, 1, 5), 1.0);
    EXPECT_EQ(f_survival(0, 7, 2), 1.0);
    EXPECT_THROW(f_survival(1, 0, 5), ParameterError);
    EXPECT_THROW(f_survival(1, 3, 0.5), ParameterError);
    EXPECT_THROW(f_survival(-1, 3, 5), ParameterError);
    Rng rng(11);
    for (int i = 0; i < 300; ++i) {
        const double f = rng.uniform(0.001, 40);
        const double nu2 = 1 + static_cast<double>(rng.below(120));
        // F(1, nu) is T(nu)^2
        EXPECT_NEAR(f_survival(f, 1, nu2), 2 * t_survival(std::sqrt(f), nu2), 1e-9);
    }
}

TEST(SpecialFunctions, MonotoneInStatistic) {
    for (double nu2 : {2.0, 10.0, 39.0}) {
        double prev_f = 1.0, prev_t = 1.0;
        for (double s = 0.05; s < 30; s += 0.05) {
            const double pf = f_survival(s, 1, nu2), pt = t_survival(s, nu2);
            EXPECT_LE(pf, prev_f);
            EXPECT_LE(pt, prev_t);
            prev_f = pf;
            prev_t = pt;
        }
    }
}

TEST(KsTest, DetectsUniformAndNonUniform) {
    std::vector<double> grid;
    for (int i = 0; i < 500; ++i) grid.push_back((i + 0.5) / 500);
    EXPECT_GT(ks_uniform_test(grid).p_value, 0.99);
    std::vector<double> squashed;
    for (double u : grid) squashed.push_back(u * u);
    EXPECT_LT(ks_uniform_test(squashed).p_value, 1e-6);
    Rng rng(3);
    std::vector<double> random(2000);
    for (double& u : random) u = rng.uniform();
    const auto r = ks_uniform_test(random);
    EXPECT_GT(r.p_value, 0.01);
    EXPECT_LT(r.statistic, 0.05);
    EXPECT_THROW(ks_uniform_test({}), ParameterError);
}

TEST(Gls, EqualSizesMatchOls) {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 3 + rng.below(40);
        std::vector<GroupRecord> recs;
        std::vector<double> g, p, ones;
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t n = 50;
            const std::size_t c = rng.below(n + 1);
            recs.push_back({static_cast<int>(i), rng.uniform(6, 11), n, c});
            g.push_back(recs.back().g);
            p.push_back(recs.back().p());
            ones.push_back(1);
        }
        const auto fit = gls_fit(recs);
        const auto o = wls_oracle(g, p, ones);
        EXPECT_NEAR(fit.beta, o.beta, 1e-10);
        EXPECT_NEAR(fit.intercept, o.intercept, 1e-10);
        EXPECT_NEAR(fit.f0, o.f0, 1e-8 * std::max(1.0, o.f0));
        EXPECT_EQ(fit.nu1, 1);
        EXPECT_EQ(fit.nu2, static_cast<int>(m) - 2);
        EXPECT_NEAR(fit.p_value, f_survival(fit.f0, 1, fit.nu2), 1e-15);
    }
}

TEST(Gls, UnequalSizesMatchWeightedOracle) {
    Rng rng(22);
    for (auto weighting : {GlsWeighting::inverse_sqrt_n, GlsWeighting::inverse_n}) {
        for (int trial = 0; trial < 30; ++trial) {
            const std::size_t m = 3 + rng.below(30);
            std::vector<GroupRecord> recs;
            std::vector<double> g, p, w;
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t n = 1 + rng.below(300);
                recs.push_back({static_cast<int>(i), rng.uniform(6, 11), n, rng.below(n + 1)});
                g.push_back(recs.back().g);
                p.push_back(recs.back().p());
                const double nd = static_cast<double>(n);
                w.push_back(weighting == GlsWeighting::inverse_sqrt_n ? std::sqrt(nd) : nd);
            }
            const auto fit = gls_fit(recs, {weighting, false});
            const auto o = wls_oracle(g, p, w);
            EXPECT_NEAR(fit.beta, o.beta, 1e-10);
            EXPECT_NEAR(fit.intercept, o.intercept, 1e-9);
            EXPECT_NEAR(fit.f0, o.f0, 1e-8 * std::max(1.0, o.f0));
        }
    }
}

TEST(Gls, FortyOneGroupsGiveThirtyNineDof) {
    std::vector<GroupRecord> recs;
    for (int i = 0; i < 41; ++i) recs.push_back({i, 7 + 0.1 * i, 20, static_cast<std::size_t>(10 + i % 7)});
    EXPECT_EQ(gls_fit(recs).nu2, 39);
}

TEST(Gls, TwoGroupsInterpolateExactly) {
    const std::vector<GroupRecord> recs = {{0, 7, 10, 5}, {1, 9, 20, 18}};
    EXPECT_THROW(gls_fit(recs), ParameterError);
    const auto fit = gls_fit(recs, {GlsWeighting::inverse_sqrt_n, true});
    EXPECT_TRUE(fit.perfect_fit);
    EXPECT_EQ(fit.p_value, 0.0);
    EXPECT_TRUE(std::isinf(fit.f0));
    EXPECT_NEAR(fit.beta, (0.9 - 0.5) / 2, 1e-12);
}

TEST(Gls, CollinearPointsArePerfectFit) {
    const std::vector<double> g = {1, 2, 3, 4}, p = {0.1, 0.3, 0.5, 0.7}, w = {1, 2, 3, 4};
    const auto fit = gls_fit_weighted(g, p, w);
    EXPECT_TRUE(fit.perfect_fit);
    EXPECT_EQ(fit.p_value, 0.0);
    EXPECT_NEAR(fit.beta, 0.2, 1e-12);
}

TEST(Gls, ConstantAccuracyHasNoRelationship) {
    std::vector<GroupRecord> recs;
    for (int i = 0; i < 5; ++i) recs.push_back({i, 7.0 + i, static_cast<std::size_t>(3 + i), static_cast<std::size_t>(3 + i)});
    const auto fit = gls_fit(recs);
    EXPECT_TRUE(fit.constant_response);
    EXPECT_FALSE(fit.perfect_fit);
    EXPECT_EQ(fit.beta, 0.0);
    EXPECT_EQ(fit.p_value, 1.0);
}

TEST(Gls, RejectsDegenerateInput) {
    const std::vector<GroupRecord> same_g = {{0, 8, 10, 5}, {1, 8, 10, 6}, {2, 8, 10, 7}};
    EXPECT_THROW(gls_fit(same_g), RankError);
    const std::vector<GroupRecord> bad = {{0, 7, 10, 11}, {1, 8, 10, 6}, {2, 9, 10, 7}};
    EXPECT_THROW(gls_fit(bad), ParameterError);
    const std::vector<double> g = {1, 2, 3}, p = {0.1, 0.2, 0.4}, w = {1, 0, 1};
    EXPECT_THROW(gls_fit_weighted(g, p, w), ParameterError);
}

TEST(Gls, AffineEquivariance) {
    Rng rng(23);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t m = 4 + rng.below(20);
        std::vector<double> g, p, w, g2;
        const double a = rng.uniform(-5, 5) + 0.1, b = rng.uniform(-10, 10);
        for (std::size_t i = 0; i < m; ++i) {
            g.push_back(rng.uniform(6, 11));
            p.push_back(rng.uniform());
            w.push_back(rng.uniform(1, 20));
            g2.push_back(a * g.back() + b);
        }
        const auto f1 = gls_fit_weighted(g, p, w), f2 = gls_fit_weighted(g2, p, w);
        EXPECT_NEAR(f2.beta, f1.beta / a, 1e-9 * std::max(1.0, std::abs(f1.beta / a)));
        EXPECT_NEAR(f2.f0, f1.f0, 1e-9 * std::max(1.0, f1.f0));
        EXPECT_NEAR(f2.p_value, f1.p_value, 1e-9);
    }
}

TEST(Gls, NullPValuesAreUniform) {
    Rng rng(24);
    std::vector<double> pvals;
    for (int sim = 0; sim < 1000; ++sim) {
        const std::size_t m = 12;
        std::vector<double> g, p, w;
        for (std::size_t i = 0; i < m; ++i) {
            const double n = 1 + static_cast<double>(rng.below(400));
            g.push_back(7 + 0.2 * static_cast<double>(i));
            w.push_back(std::sqrt(n));
            // residual variance 1 / sqrt(n)
            p.push_back(0.6 + std::sqrt(1 / std::sqrt(n)) * 0.1 * rng.normal());
        }
        pvals.push_back(gls_fit_weighted(g, p, w).p_value);
    }
    EXPECT_GT(ks_uniform_test(pvals).p_value, 0.01);
}

TEST(TTest, IdenticalSamples) {
    const std::vector<double> a = {0.1, 0.4, 0.2, 0.35};
    const auto r = two_sample_t_test(a, a);
    EXPECT_EQ(r.t, 0.0);
    EXPECT_NEAR(r.p_value, 0.5, 1e-15);
}

TEST(TTest, LocationShift) {
    const std::vector<double> a = {0.1, 0.4, 0.2, 0.35, 0.05};
    std::vector<double> b;
    for (double v : a) b.push_back(v + 0.3);
    const auto r = two_sample_t_test(a, b);
    EXPECT_GT(r.t, 0);
    EXPECT_LT(r.p_value, 0.5);
}

TEST(TTest, MatchesFormulaOracle) {
    Rng rng(31);
    std::vector<double> a(50), b(50);
    for (double& v : a) v = 0.02 + 0.01 * rng.normal();
    for (double& v : b) v = 0.025 + 0.02 * rng.normal();
    double df = 0;
    const double t = welch_oracle_t(a, b, df);
    const auto r = two_sample_t_test(a, b);
    EXPECT_NEAR(r.t, t, 1e-9);
    EXPECT_NEAR(r.df, df, 1e-9);
    EXPECT_NEAR(r.p_value, t_survival(t, df), 1e-9);
}

TEST(TTest, Antisymmetric) {
    Rng rng(32);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a(5 + rng.below(20)), b(5 + rng.below(20));
        for (double& v : a) v = rng.normal();
        for (double& v : b) v = 0.3 + 2 * rng.normal();
        const auto r1 = two_sample_t_test(a, b, Alternative::a_less_than_b);
        const auto r2 = two_sample_t_test(b, a, Alternative::a_greater_than_b);
        EXPECT_DOUBLE_EQ(r1.t, r2.t);
        EXPECT_DOUBLE_EQ(r1.p_value, r2.p_value);
    }
}

TEST(TTest, DegenerateSamples) {
    const std::vector<double> c = {1, 1, 1}, d = {2, 2, 2};
    EXPECT_THROW(two_sample_t_test(c, c), UndefinedStatisticError);
    const auto r = two_sample_t_test(c, d);
    EXPECT_TRUE(std::isinf(r.t));
    EXPECT_GT(r.t, 0);
    EXPECT_EQ(r.p_value, 0.0);
    const std::vector<double> one = {1};
    EXPECT_THROW(two_sample_t_test(one, d), ParameterError);
}

TEST(BetaSummary, TypeSevenQuartiles) {
    const auto s = summarize_betas({3, 1, 4, 1, 5, 9, 2, 6});
    EXPECT_EQ(s.count, 8u);
    EXPECT_DOUBLE_EQ(s.mean, 31.0 / 8);
    EXPECT_DOUBLE_EQ(s.min, 1);
    EXPECT_DOUBLE_EQ(s.q1, 1.75);
    EXPECT_DOUBLE_EQ(s.median, 3.5);
    EXPECT_DOUBLE_EQ(s.q3, 5.25);
    EXPECT_DOUBLE_EQ(s.max, 9);
    EXPECT_THROW(summarize_betas({}), ParameterError);
}

namespace {

Dataset grouped_fixture(std::vector<int> ids) {
    Dataset d = pdro::testing::blob_dataset(ids.size(), 3, 8, 41);
    d.group_ids = std::move(ids);
    return d;
}

} // namespace

TEST(GroupAccuracy, MatchesLoopOracle) {
    Dataset d = grouped_fixture({0, 1, 2, 0, 1, 2, 2, 2, 0, 1, 1, 0});
    Rng rng(2);
    const Model m = Model::random(Architecture::mlp, 8, 8, 3, rng);
    const GroupMeta meta = {{0, 7.0}, {1, 8.0}, {2, 9.0}, {3, 10.0}};
    const auto ga = group_accuracy(m, d, meta);
    ASSERT_EQ(ga.records.size(), 3u);
    EXPECT_EQ(ga.omitted_empty, 1u);
    for (const auto& r : ga.records) {
        std::size_t n = 0, correct = 0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (d.group_ids[i] != r.group_id) continue;
            ++n;
            correct += predict(m, d.examples[i].image) == d.examples[i].label;
        }
        EXPECT_EQ(r.n, n);
        EXPECT_EQ(r.correct, correct);
        EXPECT_EQ(r.g, meta.at(r.group_id));
    }
}

TEST(GroupAccuracy, SingleGroupEqualsAccuracy) {
    Dataset d = grouped_fixture(std::vector<int>(30, 4));
    Rng rng(3);
    const Model m = Model::random(Architecture::mlp, 8, 8, 3, rng);
    const auto ga = group_accuracy(m, d, {{4, 7.5}});
    ASSERT_EQ(ga.records.size(), 1u);
    EXPECT_DOUBLE_EQ(ga.records[0].p(), accuracy(m, d));
}

TEST(GroupAccuracy, UnknownGroupRejected) {
    Dataset d = grouped_fixture({0, 1, 5});
    Rng rng(4);
    const Model m = Model::random(Architecture::mlp, 8, 8, 3, rng);
    EXPECT_THROW(group_accuracy(m, d, {{0, 7.0}, {1, 8.0}}), ParameterError);
    d.group_ids.clear();
    EXPECT_THROW(group_accuracy(m, d, {{0, 7.0}}), ParameterError);
}

TEST(GroupedDataset, PartitionAndNoise) {
    const Dataset base = pdro::testing::blob_dataset(300, 3, 8, 42);
    GroupedDatasetSpec spec;
    spec.groups = 10;
    spec.seed = 9;
    const auto gd = make_grouped_dataset(base, spec);
    ASSERT_EQ(gd.data.size(), base.size());
    ASSERT_EQ(gd.meta.size(), 10u);
    for (int j = 0; j < 10; ++j) EXPECT_NEAR(gd.meta.at(j), 7 + 0.1 * j, 1e-12);
    std::vector<std::size_t> sizes(10, 0);
    for (int id : gd.data.group_ids) ++sizes.at(static_cast<std::size_t>(id));
    for (std::size_t s : sizes) EXPECT_GE(s, 1u);
    EXPECT_GT(*std::max_element(sizes.begin(), sizes.end()), 3 * *std::min_element(sizes.begin(), sizes.end()));
    for (std::size_t i = 0; i < base.size(); ++i) {
        EXPECT_EQ(gd.data.examples[i].label, base.examples[i].label);
        EXPECT_TRUE(gd.data.examples[i].image.in_range());
        // the richest group is left clean, the others are perturbed
        if (gd.data.group_ids[i] == 9)
            EXPECT_EQ(gd.data.examples[i].image, base.examples[i].image);
        else
            EXPECT_NE(gd.data.examples[i].image, base.examples[i].image);
    }
    const auto again = make_grouped_dataset(base, spec);
    EXPECT_EQ(again.data.group_ids, gd.data.group_ids);
    for (std::size_t i = 0; i < base.size(); ++i)
        EXPECT_EQ(again.data.examples[i].image, gd.data.examples[i].image);
}

TEST(GroupedDataset, ZeroNoiseLeavesImages) {
    const Dataset base = pdro::testing::blob_dataset(60, 3, 8, 43);
    GroupedDatasetSpec spec;
    spec.groups = 5;
    spec.noise_scale = 0;
    const auto gd = make_grouped_dataset(base, spec);
    for (std::size_t i = 0; i < base.size(); ++i)
        EXPECT_EQ(gd.data.examples[i].image, base.examples[i].image);
}

TEST(GroupedDataset, RejectsBadSpecs) {
    const Dataset base = pdro::testing::blob_dataset(10, 3, 8, 44);
    GroupedDatasetSpec spec;
    spec.groups = 11;
    EXPECT_THROW(make_grouped_dataset(base, spec), ParameterError);
    spec.groups = 2;
    EXPECT_THROW(make_grouped_dataset(base, spec), ParameterError);
    spec.groups = 5;
    spec.slope = 0;
    EXPECT_THROW(make_grouped_dataset(base, spec), ParameterError);
}

TEST(Audit, DuplicatedModelGivesIdenticalSlopes) {
    const Dataset base = pdro::testing::blob_dataset(200, 3, 8, 45);
    GroupedDatasetSpec spec;
    spec.groups = 6;
    spec.noise_scale = 0.5;
    const auto gd = make_grouped_dataset(base, spec);
    Rng rng(6);
    const Model m = Model::random(Architecture::mlp, 8, 8, 3, rng);
    const std::vector<Model> models(4, m);
    const auto audit = audit_population(models, gd.data, gd.meta, {}, 3);
    ASSERT_EQ(audit.fits.size(), 4u);
    for (const auto& f : audit.fits) EXPECT_EQ(f.beta, audit.fits[0].beta);
    EXPECT_EQ(audit.summary.min, audit.summary.max);
}

TEST(StatsCsv, GroupRecordsRoundTrip) {
    TempDir dir;
    const std::vector<GroupRecord> recs = {{0, 7.25, 10, 4}, {3, 8.125, 7, 7}};
    write_group_records_csv(recs, dir / "g.csv");
    const auto back = read_group_records_csv(dir / "g.csv");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].group_id, 3);
    EXPECT_EQ(back[1].g, 8.125);
    EXPECT_EQ(back[0].correct, 4u);
    pdro::testing::spit(dir / "bad.csv", "id,g\n1,2\n");
    EXPECT_THROW(read_group_records_csv(dir / "bad.csv"), FormatError);
    pdro::testing::spit(dir / "bad2.csv", "group_id,g,n,correct\n1,7,3,4\n");
    EXPECT_THROW(read_group_records_csv(dir / "bad2.csv"), FormatError);
}

TEST(StatsCsv, MembershipRoundTrip) {
    TempDir dir;
    const Dataset base = pdro::testing::blob_dataset(30, 3, 8, 46);
    GroupedDatasetSpec spec;
    spec.groups = 4;
    const auto gd = make_grouped_dataset(base, spec);
    write_group_membership_csv(gd, dir / "m.csv");
    Dataset copy = base;
    const auto meta = read_group_membership_csv(dir / "m.csv", copy);
    EXPECT_EQ(copy.group_ids, gd.data.group_ids);
    EXPECT_EQ(meta, gd.meta);
}
